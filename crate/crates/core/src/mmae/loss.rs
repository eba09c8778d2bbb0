use super::patch::MaskPlan;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const TARGET_NORM_EPS: f64 = 1e-6;

/// Per-patch standardized copy of a token matrix.
pub fn normalize_patches(tokens: &Tensor) -> Tensor {
    let c = tokens.cols();
    let mut out = tokens.clone();
    for row in out.data_mut().chunks_mut(c) {
        let (mean, std) = row_stats(row);
        row.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
    out
}

/// Mean and regularized standard deviation used by [`normalize_patches`].
pub(crate) fn row_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, (var + TARGET_NORM_EPS).sqrt())
}

/// Mean squared error over the masked patches of every image in the batch.
///
/// `recon` is `[batch * n_patches, p²]`; visible rows are never read, so
/// they receive exactly zero gradient.
pub fn masked_mse(tape: &mut Tape, recon: Var, targets: &[&Tensor], plans: &[MaskPlan]) -> Result<Var> {
    if targets.len() != plans.len() || plans.is_empty() {
        return Err(Error::shape("masked_mse", format!("{} targets, {} plans", targets.len(), plans.len())));
    }
    let n = plans[0].n_patches;
    let c = tape.value(recon).cols();
    if tape.value(recon).rows() != plans.len() * n {
        return Err(Error::shape(
            "masked_mse",
            format!("{} reconstruction rows for {} images of {n} patches", tape.value(recon).rows(), plans.len()),
        ));
    }
    let mut rows = Vec::new();
    let mut want = Vec::new();
    for (b, (t, plan)) in targets.iter().zip(plans).enumerate() {
        if t.shape() != [n, c] || plan.n_patches != n {
            return Err(Error::shape("masked_mse", format!("target {:?} vs [{n}, {c}]", t.shape())));
        }
        for &m in &plan.masked {
            rows.push(b * n + m);
            want.extend_from_slice(t.row(m));
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid("masked_mse: no masked patches"));
    }
    let got = tape.gather_rows(recon, &rows)?;
    let want = tape.constant(Tensor::new(vec![rows.len(), c], want)?)?;
    let d = tape.sub(got, want)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

/// Masked-only MSE between one reconstruction and its original tokens.
pub fn masked_mse_value(recon: &Tensor, original: &Tensor, plan: &MaskPlan) -> Result<f64> {
    if recon.shape() != original.shape() || recon.rows() != plan.n_patches {
        return Err(Error::shape(
            "masked_mse",
            format!("{:?} vs {:?} for {} patches", recon.shape(), original.shape(), plan.n_patches),
        ));
    }
    if plan.masked.is_empty() {
        return Err(Error::invalid("masked_mse: no masked patches"));
    }
    let mut s = 0.0;
    for &m in &plan.masked {
        s += recon.row(m).iter().zip(original.row(m)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(s / (plan.masked.len() * recon.cols()) as f64)
}
