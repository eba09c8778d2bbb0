//! Direct periodic FEM on small grids: dense assembly and Cholesky.

use super::element::{Grid, PhaseElement};
use super::material::StiffnessTensor2D;
use crate::error::{Error, Result};

/// Largest grid edge accepted by the dense path (the matrix is `(2N²)²`).
pub const DENSE_MAX_GRID: usize = 32;

/// Mean stress for each macroscopic strain, solved by one factorization.
pub(crate) fn solve_dense(
    n: usize,
    phase_of: &[u8],
    phases: [StiffnessTensor2D; 2],
    strains: &[[f64; 3]],
) -> Result<Vec<[f64; 3]>> {
    if n > DENSE_MAX_GRID {
        return Err(Error::invalid(format!(
            "dense solver limited to {DENSE_MAX_GRID}² grids, got {n}²"
        )));
    }
    let grid = Grid { n };
    let els = phases.map(PhaseElement::new);
    // node 0 is pinned; dof d maps to row d - 2
    let dofs = 2 * n * n - 2;
    let mut k = vec![0.0; dofs * dofs];
    let mut rhs = vec![vec![0.0; dofs]; strains.len()];
    for er in 0..n {
        for ec in 0..n {
            let el = &els[phase_of[er * n + ec] as usize];
            let nodes = grid.element_nodes(er, ec);
            let global: Vec<Option<usize>> = nodes
                .iter()
                .flat_map(|&nd| [2 * nd, 2 * nd + 1])
                .map(|d| d.checked_sub(2))
                .collect();
            for i in 0..8 {
                let Some(gi) = global[i] else { continue };
                for j in 0..8 {
                    if let Some(gj) = global[j] {
                        k[gi * dofs + gj] += el.stiffness[i][j];
                    }
                }
                for (s, strain) in strains.iter().enumerate() {
                    rhs[s][gi] -= (0..3).map(|c| el.load[i][c] * strain[c]).sum::<f64>();
                }
            }
        }
    }
    cholesky_in_place(&mut k, dofs)?;
    let mut out = Vec::with_capacity(strains.len());
    for (s, strain) in strains.iter().enumerate() {
        let x = cholesky_solve(&k, dofs, &rhs[s]);
        let mut u = vec![0.0; 2 * n * n];
        u[2..].copy_from_slice(&x);
        let mut stress = [0.0; 3];
        for er in 0..n {
            for ec in 0..n {
                let el = &els[phase_of[er * n + ec] as usize];
                let ue = grid.gather(&u, &grid.element_nodes(er, ec));
                let sv = el.mean_stress(&ue, strain);
                for c in 0..3 {
                    stress[c] += sv[c] / (n * n) as f64;
                }
            }
        }
        out.push(stress);
    }
    Ok(out)
}

/// Lower Cholesky factor stored in the lower triangle of `a`.
fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= a[j * n + p] * a[j * n + p];
        }
        if !(d > 0.0) {
            return Err(Error::Consistency(format!("stiffness not positive definite at dof {j}")));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let (ri, rj) = (i * n, j * n);
            let mut s = a[ri + j];
            for p in 0..j {
                s -= a[ri + p] * a[rj + p];
            }
            a[ri + j] = s / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for p in 0..i {
            s -= l[i * n + p] * y[p];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in i + 1..n {
            s -= l[p * n + i] * y[p];
        }
        y[i] = s / l[i * n + i];
    }
    y
}
