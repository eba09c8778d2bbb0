//! Dense periodic finite-element homogenization on a pixel grid.
//!
//! Bilinear pixel elements, 3×3 Gauss quadrature, one pinned node and a
//! Cholesky solve. Columns are x₁, rows are x₂; strains are (ε₁₁, ε₂₂, γ₁₂).

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix};

type B = SMatrix<f64, 3, 8>;

/// Plane-strain stiffness in Voigt form with engineering shear.
pub fn plane_strain(e: f64, nu: f64) -> Matrix3<f64> {
    let l = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    Matrix3::new(l + 2.0 * mu, l, 0.0, l, l + 2.0 * mu, 0.0, 0.0, 0.0, mu)
}

const XI: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
const ETA: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

fn gauss() -> Vec<(f64, f64, f64)> {
    let p = (0.6f64).sqrt();
    let pts = [(-p, 5.0 / 9.0), (0.0, 8.0 / 9.0), (p, 5.0 / 9.0)];
    let mut out = Vec::new();
    for &(x, wx) in &pts {
        for &(y, wy) in &pts {
            out.push((x, y, wx * wy));
        }
    }
    out
}

/// Unit pixel: dN/dx = 2 dN/dξ, |J| = 1/4.
fn b_at(xi: f64, eta: f64) -> B {
    let mut b = B::zeros();
    for a in 0..4 {
        let dx = 2.0 * 0.25 * XI[a] * (1.0 + eta * ETA[a]);
        let dy = 2.0 * 0.25 * ETA[a] * (1.0 + xi * XI[a]);
        b[(0, 2 * a)] = dx;
        b[(1, 2 * a + 1)] = dy;
        b[(2, 2 * a)] = dy;
        b[(2, 2 * a + 1)] = dx;
    }
    b
}

/// Effective stiffness column by column; entry `(i, j)` is the mean stress
/// `i` under unit strain `j`.
pub fn effective(n: usize, phases: &[u8], c: [Matrix3<f64>; 2]) -> Matrix3<f64> {
    let det = 0.25;
    let gp: Vec<(B, f64)> = gauss().into_iter().map(|(x, y, w)| (b_at(x, y), w * det)).collect();
    let ke: Vec<SMatrix<f64, 8, 8>> = c.iter().map(|c| gp.iter().map(|(b, w)| b.transpose() * c * b * *w).sum()).collect();
    let fe: Vec<SMatrix<f64, 8, 3>> = c.iter().map(|c| gp.iter().map(|(b, w)| b.transpose() * c * *w).sum()).collect();
    // local node a sits at (row, col) offset (ETA>0, XI>0)
    let nodes = |r: usize, col: usize| -> [usize; 4] {
        std::array::from_fn(|a| {
            let rr = (r + usize::from(ETA[a] > 0.0)) % n;
            let cc = (col + usize::from(XI[a] > 0.0)) % n;
            rr * n + cc
        })
    };
    let dofs = 2 * n * n;
    let mut k = DMatrix::<f64>::zeros(dofs, dofs);
    let mut f = DMatrix::<f64>::zeros(dofs, 3);
    for r in 0..n {
        for col in 0..n {
            let p = phases[r * n + col] as usize;
            let nd = nodes(r, col);
            for a in 0..8 {
                let ga = 2 * nd[a / 2] + a % 2;
                for bb in 0..8 {
                    k[(ga, 2 * nd[bb / 2] + bb % 2)] += ke[p][(a, bb)];
                }
                for j in 0..3 {
                    f[(ga, j)] -= fe[p][(a, j)];
                }
            }
        }
    }
    let kr = k.view((2, 2), (dofs - 2, dofs - 2)).into_owned();
    let chol = kr.cholesky().expect("reduced stiffness must be positive definite");
    let mut out = Matrix3::zeros();
    for j in 0..3 {
        let rhs: DVector<f64> = f.view((2, j), (dofs - 2, 1)).column(0).into_owned();
        let sol = chol.solve(&rhs);
        let mut u = vec![0.0; dofs];
        u[2..].copy_from_slice(sol.as_slice());
        let mut strain = nalgebra::Vector3::zeros();
        strain[j] = 1.0;
        let mut mean = nalgebra::Vector3::zeros();
        for r in 0..n {
            for col in 0..n {
                let p = phases[r * n + col] as usize;
                let nd = nodes(r, col);
                let ue = SMatrix::<f64, 8, 1>::from_fn(|a, _| u[2 * nd[a / 2] + a % 2]);
                for (b, w) in &gp {
                    mean += c[p] * (strain + b * ue) * *w;
                }
            }
        }
        out.set_column(j, &(mean / (n * n) as f64));
    }
    out
}
