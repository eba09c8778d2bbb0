//! Fixed-point solver for the periodic cell problem on a pixel grid.
//!
//! The fluctuation field is updated as `u ← u + Γ₀ r`, where `r` is the nodal
//! out-of-balance force of the heterogeneous medium and `Γ₀` is the inverse of
//! the homogeneous reference-medium stiffness. On a periodic grid that
//! stiffness is block-circulant, so `Γ₀` is a 2×2 block per Fourier mode and
//! each iteration costs a handful of FFTs. The discrete operator is the one
//! of the bilinear finite-element discretization, so the fixed point is the
//! periodic FEM solution on the pixel mesh.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::element::{Grid, PhaseElement, NODE_OFFSETS};
use super::material::StiffnessTensor2D;
use super::CellSolution;
use crate::error::{Error, Result};

type C64 = Complex<f64>;

pub(crate) struct SpectralSolver {
    grid: Grid,
    phases: [PhaseElement; 2],
    /// Inverse reference symbol per mode, row-major 2×2; zero at the mean mode.
    green: Vec<[C64; 4]>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SpectralSolver {
    pub fn new(n: usize, phases: [StiffnessTensor2D; 2], reference: StiffnessTensor2D) -> Self {
        let reference = PhaseElement::new(reference);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut green = vec![[C64::new(0.0, 0.0); 4]; n * n];
        // Elements touching node (0,0), with the node's local index in each.
        let owners = [((0isize, 0isize), 0usize), ((0, -1), 1), ((-1, -1), 2), ((-1, 0), 3)];
        for kr in 0..n {
            for kc in 0..n {
                if kr == 0 && kc == 0 {
                    continue;
                }
                let (tr, tc) = (2.0 * PI * kr as f64 / n as f64, 2.0 * PI * kc as f64 / n as f64);
                let mut sym = [C64::new(0.0, 0.0); 4];
                for &((r0, c0), a) in &owners {
                    for (b, &(dr, dc)) in NODE_OFFSETS.iter().enumerate() {
                        let (pr, pc) = ((r0 + dr as isize) as f64, (c0 + dc as isize) as f64);
                        let phase = C64::from_polar(1.0, tr * pr + tc * pc);
                        for i in 0..2 {
                            for j in 0..2 {
                                sym[2 * i + j] += phase * reference.stiffness[2 * a + i][2 * b + j];
                            }
                        }
                    }
                }
                let det = sym[0] * sym[3] - sym[1] * sym[2];
                green[kr * n + kc] = [sym[3] / det, -sym[1] / det, -sym[2] / det, sym[0] / det];
            }
        }
        Self {
            grid: Grid { n },
            phases: phases.map(PhaseElement::new),
            green,
            forward,
            inverse,
        }
    }

    fn fft2(&self, buf: &mut [C64], fft: &Arc<dyn Fft<f64>>, scratch: &mut Vec<C64>) {
        let n = self.grid.n;
        fft.process(buf);
        for r in 0..n {
            for c in 0..n {
                scratch[c * n + r] = buf[r * n + c];
            }
        }
        fft.process(scratch);
        for r in 0..n {
            for c in 0..n {
                buf[r * n + c] = scratch[c * n + r];
            }
        }
    }

    /// Nodal out-of-balance forces `-Σₑ (Kₑ uₑ + loadₑ ε̄)` and the mean stress.
    fn residual(&self, phase_of: &[u8], u: &[f64], strain: &[f64; 3], r: &mut [f64]) -> [f64; 3] {
        let n = self.grid.n;
        r.iter_mut().for_each(|x| *x = 0.0);
        let mut stress = [0.0; 3];
        for er in 0..n {
            for ec in 0..n {
                let el = &self.phases[phase_of[er * n + ec] as usize];
                let nodes = self.grid.element_nodes(er, ec);
                let ue = self.grid.gather(u, &nodes);
                let f = el.forces(&ue, strain);
                for (a, &nd) in nodes.iter().enumerate() {
                    r[2 * nd] -= f[2 * a];
                    r[2 * nd + 1] -= f[2 * a + 1];
                }
                let s = el.mean_stress(&ue, strain);
                for k in 0..3 {
                    stress[k] += s[k];
                }
            }
        }
        let cells = (n * n) as f64;
        stress.map(|s| s / cells)
    }

    pub fn solve(&self, phase_of: &[u8], strain: [f64; 3], tol: f64, max_iter: usize) -> Result<CellSolution> {
        let n = self.grid.n;
        let nn = n * n;
        let mut u = vec![0.0; 2 * nn];
        let mut r = vec![0.0; 2 * nn];
        let mut rx = vec![C64::new(0.0, 0.0); nn];
        let mut ry = vec![C64::new(0.0, 0.0); nn];
        let mut scratch = vec![C64::new(0.0, 0.0); nn];
        let mut iterations = 0;
        loop {
            let stress = self.residual(phase_of, &u, &strain, &mut r);
            for i in 0..nn {
                rx[i] = C64::new(r[2 * i], 0.0);
                ry[i] = C64::new(r[2 * i + 1], 0.0);
            }
            self.fft2(&mut rx, &self.forward, &mut scratch);
            self.fft2(&mut ry, &self.forward, &mut scratch);
            let energy: f64 = rx.iter().chain(ry.iter()).map(|z| z.norm_sqr()).sum();
            let scale = stress.iter().map(|s| s * s).sum::<f64>().sqrt();
            // Parseval: rms nodal force = sqrt(Σ|r̂|²) / N²
            let residual = if scale > 0.0 { energy.sqrt() / nn as f64 / scale } else { 0.0 };
            if residual < tol || energy == 0.0 {
                return Ok(CellSolution {
                    mean_stress: stress,
                    iterations,
                    residual,
                });
            }
            if iterations >= max_iter {
                return Err(Error::NoConvergence { iterations, residual });
            }
            for (k, g) in self.green.iter().enumerate() {
                let (a, b) = (rx[k], ry[k]);
                rx[k] = g[0] * a + g[1] * b;
                ry[k] = g[2] * a + g[3] * b;
            }
            self.fft2(&mut rx, &self.inverse, &mut scratch);
            self.fft2(&mut ry, &self.inverse, &mut scratch);
            for i in 0..nn {
                u[2 * i] += rx[i].re / nn as f64;
                u[2 * i + 1] += ry[i].re / nn as f64;
            }
            iterations += 1;
        }
    }
}
