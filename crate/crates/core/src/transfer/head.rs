use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::TargetScaler;
use crate::autodiff::{trunc_normal, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mmae::{linear, Linear, INIT_STD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// One affine map from the embedding to the three targets.
    Linear,
    /// One hidden GELU layer.
    Feedforward,
}

/// Regression head over the `[cls]` embedding, predicting standardized
/// targets; `scaler` maps them back to GPa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub hidden: usize,
    pub scaler: TargetScaler,
}

fn lin(store: &ParamStore, name: &str) -> Result<Linear> {
    let find = |s: String| store.find(&s).ok_or_else(|| Error::Checkpoint(format!("missing head parameter `{s}`")));
    Ok(Linear { w: find(format!("{name}.weight"))?, b: find(format!("{name}.bias"))? })
}

impl HeadSpec {
    fn shapes(&self, dim: usize) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        let mut add = |name: &str, i: usize, o: usize| {
            v.push((format!("head.{name}.weight"), vec![i, o]));
            v.push((format!("head.{name}.bias"), vec![o]));
        };
        match self.kind {
            HeadKind::Linear => add("out", dim, 3),
            HeadKind::Feedforward => {
                add("fc1", dim, self.hidden);
                add("out", self.hidden, 3);
            }
        }
        v
    }

    /// Freshly initialized head parameters for embeddings of width `dim`.
    pub fn init(&self, dim: usize, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in self.shapes(dim) {
            let t = if shape.len() == 2 { trunc_normal(&mut rng, &shape, INIT_STD) } else { Tensor::zeros(&shape) };
            store.insert(name, t);
        }
        store
    }

    /// Checks names and shapes of loaded head parameters.
    pub fn check_params(&self, store: &ParamStore, dim: usize) -> Result<()> {
        let want = self.shapes(dim);
        if want.len() != store.len() {
            return Err(Error::Checkpoint(format!("head expects {} tensors, found {}", want.len(), store.len())));
        }
        for (name, shape) in want {
            let id = store.find(&name).ok_or_else(|| Error::Checkpoint(format!("missing head parameter `{name}`")))?;
            if store.value(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!("head parameter `{name}` has the wrong shape")));
            }
        }
        Ok(())
    }

    /// Standardized predictions `[rows, 3]` for embeddings `[rows, dim]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        match self.kind {
            HeadKind::Linear => linear(tape, store, x, lin(store, "head.out")?),
            HeadKind::Feedforward => {
                let h = linear(tape, store, x, lin(store, "head.fc1")?)?;
                let h = tape.gelu(h)?;
                linear(tape, store, h, lin(store, "head.out")?)
            }
        }
    }

    /// Predictions in GPa for embeddings without recording gradients.
    pub fn predict(&self, store: &ParamStore, features: &[Vec<f64>]) -> Result<Vec<[f64; 3]>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(features)?)?;
        let y = self.forward(&mut tape, store, x)?;
        let y = tape.value(y);
        Ok((0..y.rows()).map(|r| self.scaler.inverse(&[y.row(r)[0], y.row(r)[1], y.row(r)[2]])).collect())
    }
}
