//! Bilinear quadrilateral on a unit pixel with 2×2 Gauss quadrature.
//!
//! Local node order (row offset, column offset): (0,0), (0,1), (1,1), (1,0);
//! the column direction is x₁ and the row direction is x₂.

use super::material::StiffnessTensor2D;

pub(crate) type Matrix8 = [[f64; 8]; 8];
pub(crate) type BMatrix = [[f64; 8]; 3];

pub(crate) const NODE_OFFSETS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 1), (1, 0)];
const NODE_XI: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
/// Jacobian determinant of the unit pixel mapped from [-1, 1]².
const DET_J: f64 = 0.25;

fn gauss_points() -> [(f64, f64); 4] {
    let g = 1.0 / 3f64.sqrt();
    [(-g, -g), (g, -g), (g, g), (-g, g)]
}

/// Strain-displacement matrix (ε₁₁, ε₂₂, γ₁₂) at `(ξ, η)`.
pub(crate) fn b_matrix(xi: f64, eta: f64) -> BMatrix {
    let mut b = [[0.0; 8]; 3];
    for (a, &(xa, ya)) in NODE_XI.iter().enumerate() {
        // d/dx = 2 d/dξ on a unit pixel
        let dx = 0.5 * xa * (1.0 + ya * eta);
        let dy = 0.5 * ya * (1.0 + xa * xi);
        b[0][2 * a] = dx;
        b[1][2 * a + 1] = dy;
        b[2][2 * a] = dy;
        b[2][2 * a + 1] = dx;
    }
    b
}

/// Element operators for one phase.
#[derive(Debug, Clone)]
pub(crate) struct PhaseElement {
    pub stiffness: Matrix8,
    pub c: StiffnessTensor2D,
    /// Gauss-averaged strain-displacement matrix.
    pub b_mean: BMatrix,
    /// ∫ Bᵀ C dA, so that the load for macroscopic strain ε̄ is `load · ε̄`.
    pub load: [[f64; 3]; 8],
}

impl PhaseElement {
    pub fn new(c: StiffnessTensor2D) -> Self {
        let mut stiffness = [[0.0; 8]; 8];
        let mut load = [[0.0; 3]; 8];
        let mut b_mean = [[0.0; 8]; 3];
        for (xi, eta) in gauss_points() {
            let b = b_matrix(xi, eta);
            // cb = C · B
            let mut cb = [[0.0; 8]; 3];
            for i in 0..3 {
                for j in 0..8 {
                    cb[i][j] = (0..3).map(|k| c.0[i][k] * b[k][j]).sum();
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    stiffness[i][j] += DET_J * (0..3).map(|k| b[k][i] * cb[k][j]).sum::<f64>();
                }
                for j in 0..3 {
                    load[i][j] += DET_J * (0..3).map(|k| b[k][i] * c.0[k][j]).sum::<f64>();
                }
            }
            for i in 0..3 {
                for j in 0..8 {
                    b_mean[i][j] += 0.25 * b[i][j];
                }
            }
        }
        Self {
            stiffness,
            c,
            b_mean,
            load,
        }
    }

    /// Internal nodal forces `Ke u + load · ε̄` of one element.
    pub fn forces(&self, u: &[f64; 8], strain: &[f64; 3]) -> [f64; 8] {
        let mut f = [0.0; 8];
        for i in 0..8 {
            let mut s = 0.0;
            for j in 0..8 {
                s += self.stiffness[i][j] * u[j];
            }
            for j in 0..3 {
                s += self.load[i][j] * strain[j];
            }
            f[i] = s;
        }
        f
    }

    /// Mean stress over the element for total strain `ε̄ + B u`.
    pub fn mean_stress(&self, u: &[f64; 8], strain: &[f64; 3]) -> [f64; 3] {
        let mut eps = *strain;
        for i in 0..3 {
            for j in 0..8 {
                eps[i] += self.b_mean[i][j] * u[j];
            }
        }
        self.c.apply(eps)
    }
}

/// Periodic pixel grid bookkeeping.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Grid {
    pub n: usize,
}

impl Grid {
    /// Global node indices of element `(r, c)` in local order.
    pub fn element_nodes(&self, r: usize, c: usize) -> [usize; 4] {
        NODE_OFFSETS.map(|(dr, dc)| ((r + dr) % self.n) * self.n + (c + dc) % self.n)
    }

    pub fn gather(&self, u: &[f64], nodes: &[usize; 4]) -> [f64; 8] {
        let mut ue = [0.0; 8];
        for (a, &nd) in nodes.iter().enumerate() {
            ue[2 * a] = u[2 * nd];
            ue[2 * a + 1] = u[2 * nd + 1];
        }
        ue
    }
}
