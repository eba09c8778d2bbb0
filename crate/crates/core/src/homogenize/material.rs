use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Isotropic linear-elastic phase, moduli in GPa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
}

impl Material {
    pub const MATRIX: Material = Material {
        young_modulus: 100.0,
        poisson_ratio: 0.30,
    };
    pub const INCLUSION: Material = Material {
        young_modulus: 500.0,
        poisson_ratio: 0.19,
    };

    pub fn new(young_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        let m = Self {
            young_modulus,
            poisson_ratio,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young_modulus > 0.0) || !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return Err(Error::invalid(format!("invalid material {self:?}")));
        }
        Ok(())
    }
}

/// 2-D stiffness in Voigt order (11, 22, 12) with engineering shear strain,
/// entries in GPa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessTensor2D(pub [[f64; 3]; 3]);

impl StiffnessTensor2D {
    pub fn c1111(&self) -> f64 {
        self.0[0][0]
    }
    pub fn c2222(&self) -> f64 {
        self.0[1][1]
    }
    pub fn c1212(&self) -> f64 {
        self.0[2][2]
    }
    pub fn c1122(&self) -> f64 {
        self.0[0][1]
    }

    /// The three labeled components `(C1111, C2222, C1212)`.
    pub fn label(&self) -> [f64; 3] {
        [self.c1111(), self.c2222(), self.c1212()]
    }

    pub fn apply(&self, strain: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [0, 1, 2].map(|i| m[i][0] * strain[0] + m[i][1] * strain[1] + m[i][2] * strain[2])
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.map(|r| r.map(|v| v * s)))
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut out = self.0;
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] += other.0[i][j];
            }
        }
        Self(out)
    }

    pub fn symmetrized(&self) -> Self {
        let m = &self.0;
        let mut out = *m;
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = 0.5 * (m[i][j] + m[j][i]);
            }
        }
        Self(out)
    }

    /// Largest `|C_ij - C_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let m = &self.0;
        let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in i + 1..3 {
                worst = worst.max((m[i][j] - m[j][i]).abs());
            }
        }
        if scale == 0.0 { 0.0 } else { worst / scale }
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = &self.0;
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Consistency("singular stiffness matrix".into()));
        }
        let cof = |a: usize, b: usize, c: usize, d: usize| m[a][b] * m[c][d] - m[a][d] * m[c][b];
        let inv = [
            [cof(1, 1, 2, 2), -cof(0, 1, 2, 2), cof(0, 1, 1, 2)],
            [-cof(1, 0, 2, 2), cof(0, 0, 2, 2), -cof(0, 0, 1, 2)],
            [cof(1, 0, 2, 1), -cof(0, 0, 2, 1), cof(0, 0, 1, 1)],
        ];
        Ok(Self(inv.map(|r| r.map(|v| v / det))))
    }

    /// Positive definiteness of the symmetric part, via Cholesky.
    pub fn is_positive_definite(&self) -> bool {
        let m = self.symmetrized().0;
        let mut l = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let mut s = m[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return false;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        true
    }
}

/// Isotropic stiffness of one phase: plane strain (`λ+2μ, λ, μ`) or plane stress.
pub fn phase_stiffness(m: &Material, plane_strain: bool) -> Result<StiffnessTensor2D> {
    m.validate()?;
    let (e, nu) = (m.young_modulus, m.poisson_ratio);
    let mu = e / (2.0 * (1.0 + nu));
    let (c11, c12) = if plane_strain {
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        (lambda + 2.0 * mu, lambda)
    } else {
        (e / (1.0 - nu * nu), nu * e / (1.0 - nu * nu))
    };
    Ok(StiffnessTensor2D([[c11, c12, 0.0], [c12, c11, 0.0], [0.0, 0.0, mu]]))
}

/// Reuss (compliance-average) and Voigt (stiffness-average) mixtures at
/// inclusion fraction `v_f`.
pub fn mixture_bounds(
    v_f: f64,
    matrix: &Material,
    inclusion: &Material,
    plane_strain: bool,
) -> Result<(StiffnessTensor2D, StiffnessTensor2D)> {
    if !(0.0..=1.0).contains(&v_f) {
        return Err(Error::invalid(format!("volume fraction {v_f} outside [0, 1]")));
    }
    let cm = phase_stiffness(matrix, plane_strain)?;
    let ci = phase_stiffness(inclusion, plane_strain)?;
    let voigt = cm.scaled(1.0 - v_f).plus(&ci.scaled(v_f));
    let reuss = cm
        .inverse()?
        .scaled(1.0 - v_f)
        .plus(&ci.inverse()?.scaled(v_f))
        .inverse()?;
    Ok((reuss, voigt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matrix_plane_strain_closed_form() {
        let c = phase_stiffness(&Material::MATRIX, true).unwrap();
        assert!(close(c.c1111(), 134.6154, 5e-5));
        assert!(close(c.c1122(), 57.6923, 5e-5));
        assert!(close(c.c1212(), 38.4615, 5e-5));
        assert_eq!(c.c1111(), c.c2222());
    }

    #[test]
    fn inclusion_plane_strain_closed_form() {
        let c = phase_stiffness(&Material::INCLUSION, true).unwrap();
        assert!(close(c.c1111(), 548.9292, 5e-5), "{}", c.c1111());
        assert!(close(c.c1212(), 210.0840, 5e-5), "{}", c.c1212());
    }

    #[test]
    fn zero_poisson_decouples() {
        let c = phase_stiffness(&Material::new(70.0, 0.0).unwrap(), true).unwrap();
        assert_eq!(c.c1111(), 70.0);
        assert_eq!(c.c1122(), 0.0);
    }

    #[test]
    fn invalid_poisson_rejected() {
        assert!(Material::new(1.0, 0.5).is_err());
        assert!(Material::new(-1.0, 0.2).is_err());
    }

    #[test]
    fn bounds_at_pure_phases() {
        let (m, i) = (Material::MATRIX, Material::INCLUSION);
        let cm = phase_stiffness(&m, true).unwrap();
        let ci = phase_stiffness(&i, true).unwrap();
        for (vf, want) in [(0.0, cm), (1.0, ci)] {
            let (r, v) = mixture_bounds(vf, &m, &i, true).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    assert!(close(r.0[a][b], want.0[a][b], 1e-9));
                    assert!(close(v.0[a][b], want.0[a][b], 1e-9));
                }
            }
        }
    }

    #[test]
    fn voigt_quarter_fraction() {
        let (_, v) = mixture_bounds(0.25, &Material::MATRIX, &Material::INCLUSION, true).unwrap();
        assert!((v.c1111() - 238.1938).abs() < 1e-4, "{}", v.c1111());
    }

    #[test]
    fn reuss_below_voigt() {
        let (r, v) = mixture_bounds(0.3, &Material::MATRIX, &Material::INCLUSION, true).unwrap();
        for k in 0..3 {
            assert!(r.0[k][k] < v.0[k][k]);
        }
        assert!(r.is_positive_definite() && v.is_positive_definite());
    }
}
