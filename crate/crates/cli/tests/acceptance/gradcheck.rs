//! Central finite differences against reverse-mode gradients.

use microforge_core::autodiff::{Tape, Tensor, Var};
use microforge_core::mmae::{masked_mse, sample_mask, Mmae, MmaeConfig};
use microforge_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    inputs: Vec<Tensor>,
    build: Build,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.5..1.5))
}

fn case(name: &'static str, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase { name, inputs, build: Box::new(build) }
}

pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |s: &[usize]| rand_tensor(&mut rng, s);
    vec![
        case("add", vec![r(&[3, 4]), r(&[3, 4])], |t, v| t.add(v[0], v[1])),
        case("sub", vec![r(&[3, 4]), r(&[3, 4])], |t, v| t.sub(v[0], v[1])),
        case("mul", vec![r(&[3, 4]), r(&[3, 4])], |t, v| t.mul(v[0], v[1])),
        case("scale", vec![r(&[5])], |t, v| t.scale(v[0], -0.7)),
        case("add_row", vec![r(&[4, 3]), r(&[3])], |t, v| t.add_row(v[0], v[1])),
        case("matmul", vec![r(&[3, 5]), r(&[5, 2])], |t, v| t.matmul(v[0], v[1])),
        case("transpose", vec![r(&[3, 5])], |t, v| t.transpose(v[0])),
        case("reshape", vec![r(&[2, 6])], |t, v| t.reshape(v[0], &[3, 4])),
        case("gather_rows", vec![r(&[4, 3])], |t, v| t.gather_rows(v[0], &[2, 0, 2, 3])),
        case("slice_rows", vec![r(&[5, 2])], |t, v| t.slice_rows(v[0], 1, 4)),
        case("gather_elems", vec![r(&[12])], |t, v| t.gather_elems(v[0], &[11, 0, 5, 5, 7, 2], &[2, 3])),
        case("concat_rows", vec![r(&[2, 3]), r(&[1, 3])], |t, v| t.concat_rows(&[v[0], v[1], v[0]])),
        case("sum", vec![r(&[3, 3])], |t, v| {
            let s = t.sum(v[0])?;
            t.mul(s, s)
        }),
        case("mean", vec![r(&[3, 3])], |t, v| {
            let s = t.mean(v[0])?;
            t.mul(s, s)
        }),
        case("softmax", vec![r(&[3, 5])], |t, v| t.softmax(v[0])),
        case("layer_norm", vec![r(&[4, 6]), r(&[6]), r(&[6])], |t, v| t.layer_norm(v[0], v[1], v[2])),
        case("gelu", vec![r(&[10])], |t, v| t.gelu(v[0])),
        case("attention", vec![r(&[6, 4]), r(&[6, 4]), r(&[6, 4])], |t, v| t.attention(v[0], v[1], v[2], 2, 3, 2)),
    ]
}

/// `Σ out ⊙ w` with fixed weights so every output element matters.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(Tensor::from_fn(&shape, |_| rng.random_range(0.5..1.5)))?;
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn eval(c: &OpCase, inputs: &[Tensor], seed: u64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = inputs.iter().map(|x| tape.leaf(x.clone(), false)).collect::<Result<Vec<_>>>()?;
    let out = (c.build)(&mut tape, &vars)?;
    let l = project(&mut tape, out, seed)?;
    Ok(tape.value(l).item())
}

pub struct Probe {
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn err(&self) -> f64 {
        rel_err(self.analytic, self.numeric)
    }
}

/// Every element of every input of the op.
pub fn check_op(c: &OpCase, seed: u64) -> Result<Vec<Probe>> {
    let mut tape = Tape::new();
    let vars = c.inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect::<Result<Vec<_>>>()?;
    let out = (c.build)(&mut tape, &vars)?;
    let l = project(&mut tape, out, seed)?;
    let grads = tape.backward(l)?;
    let mut probes = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        let g = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; c.inputs[i].len()]);
        for e in 0..c.inputs[i].len() {
            let mut plus = c.inputs.clone();
            plus[i].data_mut()[e] += H;
            let mut minus = c.inputs.clone();
            minus[i].data_mut()[e] -= H;
            let numeric = (eval(c, &plus, seed)? - eval(c, &minus, seed)?) / (2.0 * H);
            probes.push(Probe { label: format!("{}[{i}][{e}]", c.name), analytic: g[e], numeric });
        }
    }
    Ok(probes)
}

pub fn tiny_config() -> MmaeConfig {
    MmaeConfig {
        image_size: 16,
        patch_size: 4,
        embed_dim: 16,
        encoder_depth: 2,
        encoder_heads: 2,
        decoder_dim: 8,
        decoder_depth: 1,
        decoder_heads: 2,
        mlp_ratio: 2,
        mask_ratio: 0.75,
        normalize_targets: false,
    }
}

fn model_loss(model: &Mmae, tokens: &[Tensor], plans: &[microforge_core::mmae::MaskPlan]) -> Result<f64> {
    let mut tape = Tape::new();
    let refs: Vec<&Tensor> = tokens.iter().collect();
    let r = model.reconstruct_batch(&mut tape, &refs, plans)?;
    let l = masked_mse(&mut tape, r, &refs, plans)?;
    Ok(tape.value(l).item())
}

/// Masked reconstruction loss of a small model against random parameter
/// elements.
pub fn check_model(n_probes: usize, seed: u64) -> Result<Vec<Probe>> {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Mmae::new(cfg, seed)?;
    // Perturb away from the small-init regime so every path carries signal.
    for id in model.params.ids().collect::<Vec<_>>() {
        for x in model.params.get_mut(id).value.data_mut() {
            *x += rng.random_range(-0.2..0.2);
        }
    }
    let tokens: Vec<Tensor> = (0..2).map(|_| Tensor::from_fn(&[cfg.n_patches(), cfg.patch_dim()], |_| rng.random())).collect();
    let plans = (0..2).map(|i| sample_mask(cfg.n_patches(), cfg.mask_ratio, seed + i)).collect::<Result<Vec<_>>>()?;

    let mut tape = Tape::new();
    let refs: Vec<&Tensor> = tokens.iter().collect();
    let r = model.reconstruct_batch(&mut tape, &refs, &plans)?;
    let l = masked_mse(&mut tape, r, &refs, &plans)?;
    let grads = tape.backward(l)?;
    let analytic: std::collections::HashMap<usize, Vec<f64>> =
        grads.params().map(|(id, g)| (id.index(), g.to_vec())).collect();

    let ids: Vec<_> = model.params.ids().collect();
    let mut probes = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let id = ids[rng.random_range(0..ids.len())];
        let len = model.params.value(id).len();
        let e = rng.random_range(0..len);
        let a = analytic.get(&id.index()).map_or(0.0, |g| g[e]);
        let orig = model.params.value(id).data()[e];
        model.params.get_mut(id).value.data_mut()[e] = orig + H;
        let lp = model_loss(&model, &tokens, &plans)?;
        model.params.get_mut(id).value.data_mut()[e] = orig - H;
        let lm = model_loss(&model, &tokens, &plans)?;
        model.params.get_mut(id).value.data_mut()[e] = orig;
        probes.push(Probe {
            label: format!("{}[{e}]", model.params.get(id).name),
            analytic: a,
            numeric: (lp - lm) / (2.0 * H),
        });
    }
    Ok(probes)
}
