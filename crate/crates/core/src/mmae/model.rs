use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::MmaeConfig;
use super::patch::{sincos_pos_embed, MaskPlan};
use crate::autodiff::{trunc_normal, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Standard deviation of the truncated-normal weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Description of the initialization scheme, echoed into checkpoints.
pub const INIT_SCHEME: &str = "trunc_normal(std=0.02, ±2σ) weights and tokens; zero biases; unit layer-norm scales";

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    ln2: Norm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    patch_embed: Linear,
    cls: ParamId,
    enc_blocks: Vec<Block>,
    enc_norm: Norm,
    dec_embed: Linear,
    mask_token: ParamId,
    dec_blocks: Vec<Block>,
    dec_norm: Option<Norm>,
    head: Linear,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn weight(&mut self, name: String, shape: &[usize]) -> ParamId {
        let t = trunc_normal(&mut self.rng, shape, INIT_STD);
        self.store.insert(name, t)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.weight(format!("{name}.weight"), &[fan_in, fan_out]),
            b: self.store.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            g: self.store.insert(format!("{name}.weight"), Tensor::ones(&[dim])),
            b: self.store.insert(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    fn block(&mut self, name: &str, dim: usize, mlp_ratio: usize) -> Block {
        Block {
            ln1: self.norm(&format!("{name}.norm1"), dim),
            q: self.linear(&format!("{name}.attn.q"), dim, dim),
            k: self.linear(&format!("{name}.attn.k"), dim, dim),
            v: self.linear(&format!("{name}.attn.v"), dim, dim),
            proj: self.linear(&format!("{name}.attn.proj"), dim, dim),
            ln2: self.norm(&format!("{name}.norm2"), dim),
            fc1: self.linear(&format!("{name}.mlp.fc1"), dim, dim * mlp_ratio),
            fc2: self.linear(&format!("{name}.mlp.fc2"), dim * mlp_ratio, dim),
        }
    }
}

fn build(cfg: &MmaeConfig, store: &mut ParamStore, seed: u64) -> Layout {
    let mut init = Init {
        store,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let (d, dd) = (cfg.embed_dim, cfg.decoder_dim);
    let patch_embed = init.linear("encoder.patch_embed", cfg.patch_dim(), d);
    let cls = init.weight("encoder.cls_token".into(), &[1, d]);
    let enc_blocks = (0..cfg.encoder_depth)
        .map(|i| init.block(&format!("encoder.blocks.{i}"), d, cfg.mlp_ratio))
        .collect();
    let enc_norm = init.norm("encoder.norm", d);
    let dec_embed = init.linear("decoder.embed", d, dd);
    let mask_token = init.weight("decoder.mask_token".into(), &[1, dd]);
    let dec_blocks = (0..cfg.decoder_depth)
        .map(|i| init.block(&format!("decoder.blocks.{i}"), dd, cfg.mlp_ratio))
        .collect();
    let dec_norm = (cfg.decoder_depth > 0).then(|| init.norm("decoder.norm", dd));
    let head = init.linear("decoder.head", dd, cfg.patch_dim());
    Layout {
        patch_embed,
        cls,
        enc_blocks,
        enc_norm,
        dec_embed,
        mask_token,
        dec_blocks,
        dec_norm,
        head,
    }
}

/// Name prefix of encoder block `i`.
pub fn encoder_block_prefix(i: usize) -> String {
    format!("encoder.blocks.{i}.")
}

/// Masked autoencoder: ViT encoder with a `[cls]` token and a light decoder.
#[derive(Debug, Clone)]
pub struct Mmae {
    config: MmaeConfig,
    pub params: ParamStore,
    layout: Layout,
    enc_pos: Tensor,
    dec_pos: Tensor,
}

pub(crate) fn linear(tape: &mut Tape, store: &ParamStore, x: Var, l: Linear) -> Result<Var> {
    let w = store.bind(tape, l.w)?;
    let b = store.bind(tape, l.b)?;
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

pub(crate) fn norm(tape: &mut Tape, store: &ParamStore, x: Var, n: Norm) -> Result<Var> {
    let g = store.bind(tape, n.g)?;
    let b = store.bind(tape, n.b)?;
    tape.layer_norm(x, g, b)
}

/// Pre-norm transformer block over `batch` independent sequences.
fn block(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    blk: &Block,
    batch: usize,
    seq: usize,
    heads: usize,
) -> Result<Var> {
    let h = norm(tape, store, x, blk.ln1)?;
    let q = linear(tape, store, h, blk.q)?;
    let k = linear(tape, store, h, blk.k)?;
    let v = linear(tape, store, h, blk.v)?;
    let a = tape.attention(q, k, v, batch, seq, heads)?;
    let a = linear(tape, store, a, blk.proj)?;
    let x = tape.add(x, a)?;
    let h = norm(tape, store, x, blk.ln2)?;
    let h = linear(tape, store, h, blk.fc1)?;
    let h = tape.gelu(h)?;
    let h = linear(tape, store, h, blk.fc2)?;
    tape.add(x, h)
}

impl Mmae {
    /// Freshly initialized model; the same seed gives identical parameters.
    pub fn new(config: MmaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = build(&config, &mut params, seed);
        Ok(Self {
            enc_pos: sincos_pos_embed(config.grid(), config.embed_dim),
            dec_pos: sincos_pos_embed(config.grid(), config.decoder_dim),
            config,
            params,
            layout,
        })
    }

    /// Model with values taken from `params`, which must hold exactly the
    /// expected names and shapes.
    pub fn from_params(config: MmaeConfig, params: &ParamStore) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        if params.len() != m.params.len() {
            let extra: Vec<&str> = params
                .iter()
                .filter(|(_, p)| m.params.find(&p.name).is_none())
                .map(|(_, p)| p.name.as_str())
                .collect();
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {} (unexpected: {extra:?})",
                m.params.len(),
                params.len()
            )));
        }
        m.params.replace_values(params)?;
        Ok(m)
    }

    pub fn config(&self) -> &MmaeConfig {
        &self.config
    }

    /// Fixed positional tables `(encoder, decoder)`, one row per patch.
    pub fn pos_embed(&self) -> (&Tensor, &Tensor) {
        (&self.enc_pos, &self.dec_pos)
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Encodes `batch` sequences of equally many tokens.
    ///
    /// `tokens` is `[batch * v, p²]` and `positions[r]` is the original patch
    /// index of token row `r`. Returns `[batch * (1 + v), embed_dim]`, row 0
    /// of each sequence being the `[cls]` latent.
    pub fn encode_tokens(&self, tape: &mut Tape, tokens: Var, positions: &[usize], batch: usize) -> Result<Var> {
        let x = self.embed_tokens(tape, tokens, positions, batch)?;
        let seq = positions.len() / batch + 1;
        self.encode_from(tape, x, 0, batch, seq)
    }

    /// Patch projection, positional embedding and `[cls]` insertion.
    pub fn embed_tokens(&self, tape: &mut Tape, tokens: Var, positions: &[usize], batch: usize) -> Result<Var> {
        let rows = tape.value(tokens).rows();
        if batch == 0 || rows != positions.len() || rows % batch != 0 {
            return Err(Error::shape(
                "encode",
                format!("{rows} token rows, {} positions, batch {batch}", positions.len()),
            ));
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= self.config.n_patches()) {
            return Err(Error::shape("encode", format!("patch index {p} out of {}", self.config.n_patches())));
        }
        let v = rows / batch;
        let l = &self.layout;
        let x = linear(tape, &self.params, tokens, l.patch_embed)?;
        let d = self.config.embed_dim;
        let mut pos = Vec::with_capacity(rows * d);
        for &p in positions {
            pos.extend_from_slice(self.enc_pos.row(p));
        }
        let pos = tape.constant(Tensor::new(vec![rows, d], pos)?)?;
        let x = tape.add(x, pos)?;
        let cls = self.params.bind(tape, l.cls)?;
        let x = tape.concat_rows(&[cls, x])?;
        let mut order = Vec::with_capacity(batch * (v + 1));
        for b in 0..batch {
            order.push(0);
            order.extend((0..v).map(|j| 1 + b * v + j));
        }
        tape.gather_rows(x, &order)
    }

    /// Runs encoder blocks `start..depth` and the final norm on embedded
    /// sequences of length `seq`.
    pub fn encode_from(&self, tape: &mut Tape, mut x: Var, start: usize, batch: usize, seq: usize) -> Result<Var> {
        for blk in &self.layout.enc_blocks[start.min(self.config.encoder_depth)..] {
            x = block(tape, &self.params, x, blk, batch, seq, self.config.encoder_heads)?;
        }
        norm(tape, &self.params, x, self.layout.enc_norm)
    }

    /// Embedded sequences after the first `blocks` encoder blocks, without the final norm.
    pub fn encode_prefix(&self, tape: &mut Tape, tokens: Var, positions: &[usize], batch: usize, blocks: usize) -> Result<Var> {
        let mut x = self.embed_tokens(tape, tokens, positions, batch)?;
        let seq = positions.len() / batch + 1;
        for blk in &self.layout.enc_blocks[..blocks.min(self.config.encoder_depth)] {
            x = block(tape, &self.params, x, blk, batch, seq, self.config.encoder_heads)?;
        }
        Ok(x)
    }

    /// Encodes the visible patches of each image under its plan.
    ///
    /// `patches[b]` is image `b`'s full `[n_patches, p²]` token matrix; all
    /// plans must expose the same number of patches.
    pub fn encode(&self, tape: &mut Tape, patches: &[&Tensor], plans: &[MaskPlan]) -> Result<Var> {
        let (tokens, positions) = self.gather_visible(patches, plans)?;
        let tokens = tape.constant(tokens)?;
        self.encode_tokens(tape, tokens, &positions, patches.len())
    }

    fn gather_visible(&self, patches: &[&Tensor], plans: &[MaskPlan]) -> Result<(Tensor, Vec<usize>)> {
        let (n, pd) = (self.config.n_patches(), self.config.patch_dim());
        if patches.is_empty() || patches.len() != plans.len() {
            return Err(Error::shape("encode", format!("{} images, {} plans", patches.len(), plans.len())));
        }
        let v = plans[0].visible.len();
        let mut data = Vec::with_capacity(patches.len() * v * pd);
        let mut positions = Vec::with_capacity(patches.len() * v);
        for (t, plan) in patches.iter().zip(plans) {
            if t.shape() != [n, pd] || plan.n_patches != n || plan.visible.len() != v {
                return Err(Error::shape(
                    "encode",
                    format!("tokens {:?} with plan over {} patches ({} visible)", t.shape(), plan.n_patches, plan.visible.len()),
                ));
            }
            for &i in &plan.visible {
                data.extend_from_slice(t.row(i));
            }
            positions.extend_from_slice(&plan.visible);
        }
        Ok((Tensor::new(vec![patches.len() * v, pd], data)?, positions))
    }

    /// Reconstructs every patch from encoder latents: `[batch * n_patches, p²]`.
    pub fn decode(&self, tape: &mut Tape, latents: Var, plans: &[MaskPlan]) -> Result<Var> {
        let batch = plans.len();
        let n = self.config.n_patches();
        let rows = tape.value(latents).rows();
        let v = plans.first().map_or(0, |p| p.visible.len());
        if batch == 0 || rows != batch * (v + 1) || plans.iter().any(|p| p.n_patches != n || p.visible.len() != v) {
            return Err(Error::shape(
                "decode",
                format!("{rows} latent rows for {batch} plans with {v} visible of {n}"),
            ));
        }
        let l = &self.layout;
        let y = linear(tape, &self.params, latents, l.dec_embed)?;
        let mask = self.params.bind(tape, l.mask_token)?;
        let y = tape.concat_rows(&[y, mask])?;
        let mask_row = rows;
        let mut order = Vec::with_capacity(batch * (n + 1));
        for (b, plan) in plans.iter().enumerate() {
            let base = b * (v + 1);
            order.push(base);
            let mut slot = vec![mask_row; n];
            for (j, &p) in plan.visible.iter().enumerate() {
                slot[p] = base + 1 + j;
            }
            order.extend(slot);
        }
        let x = tape.gather_rows(y, &order)?;
        let dd = self.config.decoder_dim;
        let mut pos = Vec::with_capacity(batch * (n + 1) * dd);
        for _ in 0..batch {
            pos.extend(std::iter::repeat_n(0.0, dd));
            pos.extend_from_slice(self.dec_pos.data());
        }
        let pos = tape.constant(Tensor::new(vec![batch * (n + 1), dd], pos)?)?;
        let mut x = tape.add(x, pos)?;
        for blk in &l.dec_blocks {
            x = block(tape, &self.params, x, blk, batch, n + 1, self.config.decoder_heads)?;
        }
        if let Some(dn) = l.dec_norm {
            x = norm(tape, &self.params, x, dn)?;
        }
        let out = linear(tape, &self.params, x, l.head)?;
        let keep: Vec<usize> = (0..batch)
            .flat_map(|b| (1..=n).map(move |i| b * (n + 1) + i))
            .collect();
        tape.gather_rows(out, &keep)
    }

    /// Encoder then decoder for a batch of images.
    pub fn reconstruct_batch(&self, tape: &mut Tape, patches: &[&Tensor], plans: &[MaskPlan]) -> Result<Var> {
        let z = self.encode(tape, patches, plans)?;
        self.decode(tape, z, plans)
    }

    /// `[cls]` latent with every patch visible.
    pub fn cls_embedding(&self, patches: &Tensor) -> Result<Vec<f64>> {
        Ok(self.cls_embeddings(&[patches])?.remove(0))
    }

    /// `[cls]` latents for a batch of token matrices, all patches visible.
    pub fn cls_embeddings(&self, patches: &[&Tensor]) -> Result<Vec<Vec<f64>>> {
        let plans = vec![MaskPlan::all_visible(self.config.n_patches()); patches.len()];
        let mut tape = Tape::new();
        let z = self.encode(&mut tape, patches, &plans)?;
        let zv = tape.value(z);
        let seq = self.config.n_patches() + 1;
        Ok((0..patches.len()).map(|b| zv.row(b * seq).to_vec()).collect())
    }
}
