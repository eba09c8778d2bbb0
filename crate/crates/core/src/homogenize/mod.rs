//! Effective plane stiffness of two-phase pixel RVEs under periodic boundary
//! conditions.

mod dense;
mod element;
mod label;
mod material;
mod spectral;

pub use dense::DENSE_MAX_GRID;
pub use label::{label_dataset, LabelMeta, LabelOutput, LABEL_META_SUFFIX};
pub use material::{mixture_bounds, phase_stiffness, Material, StiffnessTensor2D};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microgen::RasterImage;

/// Per-pixel phase ids: 0 = matrix, 1 = inclusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseMap {
    pub height: usize,
    pub width: usize,
    pub phases: Vec<u8>,
}

impl PhaseMap {
    /// Thresholds the image at 128.
    pub fn from_image(img: &RasterImage) -> Self {
        Self {
            height: img.height,
            width: img.width,
            phases: img.pixels.iter().map(|&p| u8::from(p >= 128)).collect(),
        }
    }

    pub fn uniform(n: usize, phase: u8) -> Self {
        Self {
            height: n,
            width: n,
            phases: vec![phase; n * n],
        }
    }

    pub fn inclusion_fraction(&self) -> f64 {
        self.phases.iter().filter(|&&p| p == 1).count() as f64 / self.phases.len() as f64
    }

    /// Nearest-neighbour resampling to `n × n`.
    pub fn resampled(&self, n: usize) -> Self {
        if n == self.height && n == self.width {
            return self.clone();
        }
        let mut phases = Vec::with_capacity(n * n);
        for r in 0..n {
            let sr = ((r as f64 + 0.5) * self.height as f64 / n as f64) as usize;
            for c in 0..n {
                let sc = ((c as f64 + 0.5) * self.width as f64 / n as f64) as usize;
                phases.push(self.phases[sr.min(self.height - 1) * self.width + sc.min(self.width - 1)]);
            }
        }
        Self {
            height: n,
            width: n,
            phases,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// FFT-preconditioned fixed point on the periodic pixel FEM.
    Spectral,
    /// Direct dense factorization, grids up to [`DENSE_MAX_GRID`].
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub scheme: Scheme,
    /// Bound on the normalized equilibrium residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub plane_strain: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Spectral,
            tolerance: 1e-8,
            max_iterations: 10_000,
            plane_strain: true,
        }
    }
}

/// Converged fluctuation problem for one macroscopic strain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSolution {
    pub mean_stress: [f64; 3],
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Homogenized {
    /// Symmetrized effective stiffness.
    pub stiffness: StiffnessTensor2D,
    /// Column j is the mean stress under unit Voigt strain j, before symmetrization.
    pub raw: StiffnessTensor2D,
    pub iterations: [usize; 3],
    pub inclusion_fraction: f64,
}

const UNIT_STRAINS: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Allowed relative excursion outside the Reuss/Voigt interval.
const BOUND_SLACK: f64 = 1e-3;

/// Solves the three unit-strain cell problems and checks the result.
pub fn homogenize(
    pm: &PhaseMap,
    matrix: &Material,
    inclusion: &Material,
    cfg: &SolverConfig,
) -> Result<Homogenized> {
    if pm.height != pm.width || pm.height < 16 {
        return Err(Error::invalid(format!(
            "phase map must be square and at least 16×16, got {}×{}",
            pm.height, pm.width
        )));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    let n = pm.height;
    let cm = phase_stiffness(matrix, cfg.plane_strain)?;
    let ci = phase_stiffness(inclusion, cfg.plane_strain)?;
    let (columns, iterations) = match cfg.scheme {
        Scheme::Spectral => {
            let reference = cm.plus(&ci).scaled(0.5);
            let solver = spectral::SpectralSolver::new(n, [cm, ci], reference);
            let mut cols = [[0.0; 3]; 3];
            let mut its = [0; 3];
            for (j, strain) in UNIT_STRAINS.iter().enumerate() {
                let sol = solver.solve(&pm.phases, *strain, cfg.tolerance, cfg.max_iterations)?;
                cols[j] = sol.mean_stress;
                its[j] = sol.iterations;
            }
            (cols, its)
        }
        Scheme::Dense => {
            let sols = dense::solve_dense(n, &pm.phases, [cm, ci], &UNIT_STRAINS)?;
            ([sols[0], sols[1], sols[2]], [0; 3])
        }
    };
    let mut raw = [[0.0; 3]; 3];
    for (j, col) in columns.iter().enumerate() {
        for i in 0..3 {
            raw[i][j] = col[i];
        }
    }
    let raw = StiffnessTensor2D(raw);
    let stiffness = raw.symmetrized();
    let vf = pm.inclusion_fraction();
    let (reuss, voigt) = mixture_bounds(vf, matrix, inclusion, cfg.plane_strain)?;
    for k in 0..3 {
        let (lo, hi, c) = (reuss.0[k][k], voigt.0[k][k], stiffness.0[k][k]);
        if c < lo * (1.0 - BOUND_SLACK) || c > hi * (1.0 + BOUND_SLACK) {
            return Err(Error::Consistency(format!(
                "component {k}{k} = {c} outside Reuss/Voigt [{lo}, {hi}] at v_f = {vf}"
            )));
        }
    }
    Ok(Homogenized {
        stiffness,
        raw,
        iterations,
        inclusion_fraction: vf,
    })
}

/// Homogenized stiffness of the phase map.
pub fn effective_stiffness(
    pm: &PhaseMap,
    matrix: &Material,
    inclusion: &Material,
    cfg: &SolverConfig,
) -> Result<StiffnessTensor2D> {
    homogenize(pm, matrix, inclusion, cfg).map(|h| h.stiffness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microgen::{rasterize, rsa_place, DescriptorPoint};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn fibre_map(seed: u64, res: usize, vf: f64) -> PhaseMap {
        let d = DescriptorPoint { n_particles: 20, aspect_ratio: 3.0, volume_fraction: vf };
        PhaseMap::from_image(&rasterize(&rsa_place(&d, seed, 100_000).unwrap(), res).unwrap())
    }

    #[test]
    fn uniform_phases_are_exact() {
        for scheme in [Scheme::Spectral, Scheme::Dense] {
            let cfg = SolverConfig { scheme, ..Default::default() };
            for (phase, mat) in [(0, Material::MATRIX), (1, Material::INCLUSION)] {
                let c = effective_stiffness(&PhaseMap::uniform(16, phase), &Material::MATRIX, &Material::INCLUSION, &cfg).unwrap();
                let want = phase_stiffness(&mat, true).unwrap();
                for i in 0..3 {
                    for j in 0..3 {
                        let (a, b) = (c.0[i][j], want.0[i][j]);
                        assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{scheme:?} {i}{j}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn spectral_matches_dense_on_small_grid() {
        let pm = fibre_map(3, 24, 0.3);
        let s = homogenize(&pm, &Material::MATRIX, &Material::INCLUSION, &SolverConfig::default()).unwrap();
        let d = homogenize(
            &pm,
            &Material::MATRIX,
            &Material::INCLUSION,
            &SolverConfig { scheme: Scheme::Dense, ..Default::default() },
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = (s.stiffness.0[i][j], d.stiffness.0[i][j]);
                assert!((a - b).abs() <= 1e-6 * d.stiffness.c1111(), "{i}{j}: {a} vs {b}");
            }
        }
        assert!(s.raw.asymmetry() < 1e-4);
        assert!(s.stiffness.is_positive_definite());
        assert!(s.iterations.iter().all(|&k| k > 0 && k < 200), "{:?}", s.iterations);
    }

    #[test]
    fn stiffer_with_more_inclusion() {
        let lo = effective_stiffness(&fibre_map(1, 64, 0.1), &Material::MATRIX, &Material::INCLUSION, &SolverConfig::default()).unwrap();
        let hi = effective_stiffness(&fibre_map(1, 64, 0.4), &Material::MATRIX, &Material::INCLUSION, &SolverConfig::default()).unwrap();
        for k in 0..3 {
            assert!(hi.0[k][k] > lo.0[k][k]);
        }
        assert!(lo.c1212() < lo.c1111());
    }

    #[test]
    fn mesh_refinement_is_stable() {
        let d = DescriptorPoint { n_particles: 20, aspect_ratio: 2.0, volume_fraction: 0.3 };
        let rve = rsa_place(&d, 8, 100_000).unwrap();
        let cfg = SolverConfig::default();
        let c = |res| {
            let pm = PhaseMap::from_image(&rasterize(&rve, res).unwrap());
            effective_stiffness(&pm, &Material::MATRIX, &Material::INCLUSION, &cfg).unwrap().c1111()
        };
        assert!(rel(c(128), c(256)) < 0.005);
    }

    #[test]
    fn small_grid_and_bad_tolerance_rejected() {
        let cfg = SolverConfig::default();
        assert!(effective_stiffness(&PhaseMap::uniform(8, 0), &Material::MATRIX, &Material::INCLUSION, &cfg).is_err());
        let bad = SolverConfig { tolerance: 0.0, ..cfg };
        assert!(effective_stiffness(&PhaseMap::uniform(16, 0), &Material::MATRIX, &Material::INCLUSION, &bad).is_err());
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let cfg = SolverConfig { max_iterations: 2, ..Default::default() };
        match effective_stiffness(&fibre_map(2, 32, 0.3), &Material::MATRIX, &Material::INCLUSION, &cfg) {
            Err(Error::NoConvergence { iterations: 2, residual }) => assert!(residual > 1e-8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resample_preserves_fraction_on_upsampling() {
        let pm = fibre_map(5, 32, 0.25);
        let up = pm.resampled(128);
        assert_eq!(up.inclusion_fraction(), pm.inclusion_fraction());
    }
}
