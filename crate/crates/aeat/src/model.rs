//! Environment-conditioned transformer autoencoder with per-layer activation
//! masking.
//!
//! Both stacks share one layer structure: multi-head self-attention over the
//! signal tokens, cross-attention whose keys and values come from a single
//! environment token, and a position-wise feed-forward block, each wrapped in
//! a residual connection and layer normalization. A [`LayerMask`] selects
//! which layers execute; unselected layers pass their input through unchanged.

use crate::channel::ChannelDraw;
use crate::channel::LinkBudget;
use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;
use crate::numerics::store::{HostTensor, ParamStore};
use crate::numerics::tape::{Tape, Var};
use serde::{Deserialize, Serialize};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Sequence length (tokens per block).
    pub t: usize,
    /// Embedding dimension.
    pub d: usize,
    /// Attention heads.
    pub n_h: usize,
    /// Transformer layers per stack.
    pub l: usize,
    /// Bits per token.
    pub d_in: usize,
    /// Environment vector dimension.
    pub env_dim: usize,
    /// Add the learned positional table to encoder and decoder inputs.
    pub use_positional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t: 16,
            d: 32,
            n_h: 4,
            l: 4,
            d_in: 8,
            env_dim: 5,
            use_positional: true,
        }
    }
}

impl ModelConfig {
    /// Block length in bits.
    pub fn n_bits(&self) -> usize {
        self.t * self.d_in
    }

    /// Channel symbols per block (rate-1 framing).
    pub fn k_symbols(&self) -> usize {
        self.t * self.d_in
    }

    pub fn d_k(&self) -> usize {
        self.d / self.n_h
    }

    pub fn ffn_hidden(&self) -> usize {
        4 * self.d
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.d == 0 || self.n_h == 0 || self.l == 0 || self.d_in == 0 {
            return Err(Error::Config("model dims must be positive".into()));
        }
        if self.d % self.n_h != 0 {
            return Err(Error::Config(format!(
                "model.d ({}) must be divisible by model.n_h ({})",
                self.d, self.n_h
            )));
        }
        if self.env_dim != 5 {
            return Err(Error::Config(format!(
                "model.env_dim must be 5, got {}",
                self.env_dim
            )));
        }
        if self.l > 8 {
            return Err(Error::Config(format!(
                "model.l must be <= 8 (mask width), got {}",
                self.l
            )));
        }
        Ok(())
    }
}

/// Which transformer layers run, one bit per layer and stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerMask {
    pub enc: u8,
    pub dec: u8,
}

impl LayerMask {
    /// All layers of both stacks active.
    pub fn full(l: usize) -> Self {
        let m = ((1u16 << l) - 1) as u8;
        Self { enc: m, dec: m }
    }

    pub fn active(&self, stack_mask: u8, layer: usize) -> bool {
        stack_mask >> layer & 1 == 1
    }

    /// Total number of active layers L_a.
    pub fn active_layers(&self) -> u32 {
        self.enc.count_ones() + self.dec.count_ones()
    }

    pub fn validate(&self, l: usize, min_per_stack: u32) -> Result<()> {
        let top = ((1u16 << l) - 1) as u8;
        if self.enc & !top != 0 || self.dec & !top != 0 {
            return Err(Error::Usage(format!(
                "mask bits beyond {l} layers: enc={:#06b} dec={:#06b}",
                self.enc, self.dec
            )));
        }
        if self.enc.count_ones() < min_per_stack || self.dec.count_ones() < min_per_stack {
            return Err(Error::Usage(format!(
                "each stack needs >= {min_per_stack} active layers: enc={:#06b} dec={:#06b}",
                self.enc, self.dec
            )));
        }
        Ok(())
    }
}

/// How the environment token is fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvMode {
    /// Embed the normalized environment vector (the full design).
    Conditioned,
    /// Replace the environment token with zeros (ablation).
    Zeroed,
}

struct LayerIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    wqc: usize,
    wkc: usize,
    wvc: usize,
    woc: usize,
    ffn_w1: usize,
    ffn_b1: usize,
    ffn_w2: usize,
    ffn_b2: usize,
    ln1_g: usize,
    ln1_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    ln3_g: usize,
    ln3_b: usize,
}

struct Layout {
    w_sig: usize,
    b_sig: usize,
    pos: usize,
    env_w1: usize,
    env_b1: usize,
    env_w2: usize,
    env_b2: usize,
    enc_out_w: usize,
    enc_out_b: usize,
    dec_in_w: usize,
    dec_in_b: usize,
    dec_out_w: usize,
    dec_out_b: usize,
    enc: Vec<LayerIdx>,
    dec: Vec<LayerIdx>,
}

/// The autoencoder: configuration, named parameters, and forward passes.
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

fn xavier(rng: &mut RngStream, rows: usize, cols: usize) -> HostTensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.range(-limit, limit)).collect();
    HostTensor {
        rows,
        cols,
        data,
    }
}

fn declare_layer(
    store: &mut ParamStore,
    rng: Option<&mut RngStream>,
    prefix: &str,
    cfg: &ModelConfig,
) -> Result<LayerIdx> {
    let d = cfg.d;
    let h = cfg.ffn_hidden();
    let mut local = RngStream::new(0);
    let rng = match rng {
        Some(r) => r,
        None => &mut local,
    };
    let mut mat = |store: &mut ParamStore, name: String, r: usize, c: usize| -> Result<usize> {
        store.insert(&name, xavier(rng, r, c))
    };
    let wq = mat(store, format!("{prefix}.attn.wq"), d, d)?;
    let wk = mat(store, format!("{prefix}.attn.wk"), d, d)?;
    let wv = mat(store, format!("{prefix}.attn.wv"), d, d)?;
    let wo = mat(store, format!("{prefix}.attn.wo"), d, d)?;
    let wqc = mat(store, format!("{prefix}.cross.wq"), d, d)?;
    let wkc = mat(store, format!("{prefix}.cross.wk"), d, d)?;
    let wvc = mat(store, format!("{prefix}.cross.wv"), d, d)?;
    let woc = mat(store, format!("{prefix}.cross.wo"), d, d)?;
    let ffn_w1 = mat(store, format!("{prefix}.ffn.w1"), d, h)?;
    let ffn_b1 = store.insert(&format!("{prefix}.ffn.b1"), HostTensor::zeros(1, h))?;
    let ffn_w2 = mat(store, format!("{prefix}.ffn.w2"), h, d)?;
    let ffn_b2 = store.insert(&format!("{prefix}.ffn.b2"), HostTensor::zeros(1, d))?;
    let ones = |_: &mut ParamStore| HostTensor::from_vec(1, d, vec![1.0; d]).unwrap();
    let ln1_g = store.insert(&format!("{prefix}.ln1.g"), ones(store))?;
    let ln1_b = store.insert(&format!("{prefix}.ln1.b"), HostTensor::zeros(1, d))?;
    let ln2_g = store.insert(&format!("{prefix}.ln2.g"), ones(store))?;
    let ln2_b = store.insert(&format!("{prefix}.ln2.b"), HostTensor::zeros(1, d))?;
    let ln3_g = store.insert(&format!("{prefix}.ln3.g"), ones(store))?;
    let ln3_b = store.insert(&format!("{prefix}.ln3.b"), HostTensor::zeros(1, d))?;
    Ok(LayerIdx {
        wq,
        wk,
        wv,
        wo,
        wqc,
        wkc,
        wvc,
        woc,
        ffn_w1,
        ffn_b1,
        ffn_w2,
        ffn_b2,
        ln1_g,
        ln1_b,
        ln2_g,
        ln2_b,
        ln3_g,
        ln3_b,
    })
}

impl Model {
    /// Fresh parameters from a seeded stream (Xavier matrices, zero biases,
    /// unit layer-norm gains, small positional table).
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = RngStream::derive(seed, 0x1A17);
        let mut store = ParamStore::new();
        let d = cfg.d;
        let w_sig = store.insert("embed.w_sig", xavier(&mut rng, cfg.d_in, d))?;
        let b_sig = store.insert("embed.b_sig", HostTensor::zeros(1, d))?;
        let pos_data: Vec<f64> = (0..cfg.t * d).map(|_| rng.range(-0.02, 0.02)).collect();
        let pos = store.insert(
            "embed.pos",
            HostTensor::from_vec(cfg.t, d, pos_data)?,
        )?;
        let env_w1 = store.insert("env.w1", xavier(&mut rng, cfg.env_dim, d))?;
        let env_b1 = store.insert("env.b1", HostTensor::zeros(1, d))?;
        let env_w2 = store.insert("env.w2", xavier(&mut rng, d, d))?;
        let env_b2 = store.insert("env.b2", HostTensor::zeros(1, d))?;
        let mut enc = Vec::with_capacity(cfg.l);
        for i in 0..cfg.l {
            enc.push(declare_layer(
                &mut store,
                Some(&mut rng),
                &format!("enc.{i}"),
                &cfg,
            )?);
        }
        let enc_out_w = store.insert("enc.out.w", xavier(&mut rng, d, cfg.d_in))?;
        let enc_out_b = store.insert("enc.out.b", HostTensor::zeros(1, cfg.d_in))?;
        let dec_in_w = store.insert("dec.in.w", xavier(&mut rng, cfg.d_in, d))?;
        let dec_in_b = store.insert("dec.in.b", HostTensor::zeros(1, d))?;
        let mut dec = Vec::with_capacity(cfg.l);
        for i in 0..cfg.l {
            dec.push(declare_layer(
                &mut store,
                Some(&mut rng),
                &format!("dec.{i}"),
                &cfg,
            )?);
        }
        let dec_out_w = store.insert("dec.out.w", xavier(&mut rng, d, cfg.d_in))?;
        let dec_out_b = store.insert("dec.out.b", HostTensor::zeros(1, cfg.d_in))?;
        let layout = Layout {
            w_sig,
            b_sig,
            pos,
            env_w1,
            env_b1,
            env_w2,
            env_b2,
            enc_out_w,
            enc_out_b,
            dec_in_w,
            dec_in_b,
            dec_out_w,
            dec_out_b,
            enc,
            dec,
        };
        Ok(Self {
            cfg,
            params: store,
            layout,
        })
    }

    /// Bind an existing parameter store (e.g. a loaded checkpoint) to the
    /// layout; every expected name must resolve with the right shape.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let template = Self::init(cfg, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: expected {}, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for (name, t) in template.params.iter() {
            let idx = params.idx(name).map_err(|_| {
                Error::Checkpoint(format!("missing parameter {name} in checkpoint"))
            })?;
            let got = params.get(idx);
            if got.rows != t.rows || got.cols != t.cols {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {}x{} does not match model {}x{}",
                    got.rows, got.cols, t.rows, t.cols
                )));
            }
        }
        // Re-resolve indices against the provided store's ordering.
        let mut rebuilt = template;
        let remap = |i: usize, tpl: &ParamStore| params.idx(tpl.name(i)).unwrap();
        let tpl = rebuilt.params.clone();
        rebuilt.layout = Layout {
            w_sig: remap(rebuilt.layout.w_sig, &tpl),
            b_sig: remap(rebuilt.layout.b_sig, &tpl),
            pos: remap(rebuilt.layout.pos, &tpl),
            env_w1: remap(rebuilt.layout.env_w1, &tpl),
            env_b1: remap(rebuilt.layout.env_b1, &tpl),
            env_w2: remap(rebuilt.layout.env_w2, &tpl),
            env_b2: remap(rebuilt.layout.env_b2, &tpl),
            enc_out_w: remap(rebuilt.layout.enc_out_w, &tpl),
            enc_out_b: remap(rebuilt.layout.enc_out_b, &tpl),
            dec_in_w: remap(rebuilt.layout.dec_in_w, &tpl),
            dec_in_b: remap(rebuilt.layout.dec_in_b, &tpl),
            dec_out_w: remap(rebuilt.layout.dec_out_w, &tpl),
            dec_out_b: remap(rebuilt.layout.dec_out_b, &tpl),
            enc: rebuilt
                .layout
                .enc
                .iter()
                .map(|l| remap_layer(l, &tpl, &params))
                .collect(),
            dec: rebuilt
                .layout
                .dec
                .iter()
                .map(|l| remap_layer(l, &tpl, &params))
                .collect(),
        };
        rebuilt.params = params;
        Ok(rebuilt)
    }

    /// A standalone model containing only the mask's active layers (used to
    /// verify that identity-masked layers are exact no-ops).
    pub fn compacted(&self, mask: LayerMask) -> Result<Model> {
        mask.validate(self.cfg.l, 1)?;
        let mut cfg = self.cfg;
        let n_enc = mask.enc.count_ones() as usize;
        let n_dec = mask.dec.count_ones() as usize;
        if n_enc != n_dec {
            // stacks may differ in depth; keep the max and pad the mask below
            cfg.l = n_enc.max(n_dec);
        } else {
            cfg.l = n_enc;
        }
        let mut sub = Model::init(cfg, 0)?;
        // copy shared tensors
        for (name_idx, src_idx) in [
            (sub.layout.w_sig, self.layout.w_sig),
            (sub.layout.b_sig, self.layout.b_sig),
            (sub.layout.pos, self.layout.pos),
            (sub.layout.env_w1, self.layout.env_w1),
            (sub.layout.env_b1, self.layout.env_b1),
            (sub.layout.env_w2, self.layout.env_w2),
            (sub.layout.env_b2, self.layout.env_b2),
            (sub.layout.enc_out_w, self.layout.enc_out_w),
            (sub.layout.enc_out_b, self.layout.enc_out_b),
            (sub.layout.dec_in_w, self.layout.dec_in_w),
            (sub.layout.dec_in_b, self.layout.dec_in_b),
            (sub.layout.dec_out_w, self.layout.dec_out_w),
            (sub.layout.dec_out_b, self.layout.dec_out_b),
        ] {
            *sub.params.get_mut(name_idx) = self.params.get(src_idx).clone();
        }
        let copy_stack = |sub: &mut Model, dst: bool, src_mask: u8| {
            let mut di = 0usize;
            for l in 0..self.cfg.l {
                if src_mask >> l & 1 == 0 {
                    continue;
                }
                let (dst_layer, src_layer) = if dst {
                    (&sub.layout.dec[di], &self.layout.dec[l])
                } else {
                    (&sub.layout.enc[di], &self.layout.enc[l])
                };
                for (d_idx, s_idx) in [
                    (dst_layer.wq, src_layer.wq),
                    (dst_layer.wk, src_layer.wk),
                    (dst_layer.wv, src_layer.wv),
                    (dst_layer.wo, src_layer.wo),
                    (dst_layer.wqc, src_layer.wqc),
                    (dst_layer.wkc, src_layer.wkc),
                    (dst_layer.wvc, src_layer.wvc),
                    (dst_layer.woc, src_layer.woc),
                    (dst_layer.ffn_w1, src_layer.ffn_w1),
                    (dst_layer.ffn_b1, src_layer.ffn_b1),
                    (dst_layer.ffn_w2, src_layer.ffn_w2),
                    (dst_layer.ffn_b2, src_layer.ffn_b2),
                    (dst_layer.ln1_g, src_layer.ln1_g),
                    (dst_layer.ln1_b, src_layer.ln1_b),
                    (dst_layer.ln2_g, src_layer.ln2_g),
                    (dst_layer.ln2_b, src_layer.ln2_b),
                    (dst_layer.ln3_g, src_layer.ln3_g),
                    (dst_layer.ln3_b, src_layer.ln3_b),
                ] {
                    let src_tensor = self.params.get(s_idx).clone();
                    *sub.params.get_mut(d_idx) = src_tensor;
                }
                di += 1;
            }
            di
        };
        let n_enc_copied = copy_stack(&mut sub, false, mask.enc);
        let n_dec_copied = copy_stack(&mut sub, true, mask.dec);
        // submodel runs its copied layers and identity-skips any padding
        let sub_mask = LayerMask {
            enc: ((1u16 << n_enc_copied) - 1) as u8,
            dec: ((1u16 << n_dec_copied) - 1) as u8,
        };
        let _ = sub_mask;
        Ok(sub)
    }

    /// Mask selecting exactly the first `n_enc`/`n_dec` layers.
    pub fn prefix_mask(n_enc: usize, n_dec: usize) -> LayerMask {
        LayerMask {
            enc: ((1u16 << n_enc) - 1) as u8,
            dec: ((1u16 << n_dec) - 1) as u8,
        }
    }

    /// Embed a block of bits: reshape to T x d_in, project, add the
    /// positional table.
    pub fn embed_signal<'p>(&self, tape: &mut Tape<'p>, bits: &[u8]) -> Result<Var>
    where
        'p: 'p,
    {
        if bits.len() != self.cfg.n_bits() {
            return Err(Error::Shape(format!(
                "expected {} bits, got {}",
                self.cfg.n_bits(),
                bits.len()
            )));
        }
        if bits.iter().any(|b| *b > 1) {
            return Err(Error::Domain("bits must be 0/1".into()));
        }
        let x0_data: Vec<f64> = bits.iter().map(|b| *b as f64).collect();
        let x0 = tape.leaf(self.cfg.t, self.cfg.d_in, x0_data)?;
        let w = tape.param(self.layout.w_sig);
        let b = tape.param(self.layout.b_sig);
        let proj = tape.matmul(x0, w)?;
        let mut x = tape.add_row(proj, b)?;
        if self.cfg.use_positional {
            let pos = tape.param(self.layout.pos);
            x = tape.add(x, pos)?;
        }
        Ok(x)
    }

    /// Two-layer environment embedding producing the single env token.
    pub fn embed_env<'p>(
        &self,
        tape: &mut Tape<'p>,
        state: &[f64],
        mode: EnvMode,
    ) -> Result<Var> {
        if state.len() != self.cfg.env_dim {
            return Err(Error::Shape(format!(
                "env state must have {} components, got {}",
                self.cfg.env_dim,
                state.len()
            )));
        }
        if mode == EnvMode::Zeroed {
            return tape.leaf(1, self.cfg.d, vec![0.0; self.cfg.d]);
        }
        if state.iter().any(|v| !(-0.1..=1.1).contains(v)) {
            return Err(Error::Usage(format!(
                "env state must be normalized to [0,1]: {state:?}"
            )));
        }
        let e = tape.leaf(1, self.cfg.env_dim, state.to_vec())?;
        let w1 = tape.param(self.layout.env_w1);
        let b1 = tape.param(self.layout.env_b1);
        let w2 = tape.param(self.layout.env_w2);
        let b2 = tape.param(self.layout.env_b2);
        let h0 = tape.matmul(e, w1)?;
        let h1 = tape.add_row(h0, b1)?;
        let h = tape.relu(h1);
        let o0 = tape.matmul(h, w2)?;
        tape.add_row(o0, b2)
    }

    fn attention<'p>(
        &self,
        tape: &mut Tape<'p>,
        queries_from: Var,
        keys_from: Var,
        wq: usize,
        wk: usize,
        wv: usize,
        wo: usize,
    ) -> Result<Var> {
        let d_k = self.cfg.d_k();
        let scale = 1.0 / (d_k as f64).sqrt();
        let wq = tape.param(wq);
        let wk = tape.param(wk);
        let wv = tape.param(wv);
        let wo = tape.param(wo);
        let q_all = tape.matmul(queries_from, wq)?;
        let k_all = tape.matmul(keys_from, wk)?;
        let v_all = tape.matmul(keys_from, wv)?;
        let mut heads = Vec::with_capacity(self.cfg.n_h);
        for i in 0..self.cfg.n_h {
            let q = tape.slice_cols(q_all, i * d_k, d_k)?;
            let k = tape.slice_cols(k_all, i * d_k, d_k)?;
            let v = tape.slice_cols(v_all, i * d_k, d_k)?;
            let scores = tape.matmul_nt(q, k)?;
            let attn = tape.row_softmax(scores, scale);
            heads.push(tape.matmul(attn, v)?);
        }
        let cat = tape.concat_cols(&heads)?;
        tape.matmul(cat, wo)
    }

    fn transformer_layer<'p>(
        &self,
        tape: &mut Tape<'p>,
        input: Var,
        env_token: Var,
        lp: &LayerIdx,
    ) -> Result<Var> {
        let o_self = self.attention(tape, input, input, lp.wq, lp.wk, lp.wv, lp.wo)?;
        let sum1 = tape.add(input, o_self)?;
        let g1 = tape.param(lp.ln1_g);
        let b1 = tape.param(lp.ln1_b);
        let n_self = tape.layer_norm(sum1, g1, b1, LN_EPS)?;

        let o_cross =
            self.attention(tape, n_self, env_token, lp.wqc, lp.wkc, lp.wvc, lp.woc)?;
        let sum2 = tape.add(n_self, o_cross)?;
        let g2 = tape.param(lp.ln2_g);
        let b2 = tape.param(lp.ln2_b);
        let n_cross = tape.layer_norm(sum2, g2, b2, LN_EPS)?;

        let w1 = tape.param(lp.ffn_w1);
        let fb1 = tape.param(lp.ffn_b1);
        let w2 = tape.param(lp.ffn_w2);
        let fb2 = tape.param(lp.ffn_b2);
        let f0 = tape.matmul(n_cross, w1)?;
        let f1 = tape.add_row(f0, fb1)?;
        let fr = tape.relu(f1);
        let f2 = tape.matmul(fr, w2)?;
        let ffn = tape.add_row(f2, fb2)?;
        let sum3 = tape.add(n_cross, ffn)?;
        let g3 = tape.param(lp.ln3_g);
        let b3 = tape.param(lp.ln3_b);
        tape.layer_norm(sum3, g3, b3, LN_EPS)
    }

    /// Encoder: bits -> K channel intensities in (0,1), flattened row-major.
    pub fn encode_on_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        bits: &[u8],
        env_token: Var,
        mask: LayerMask,
    ) -> Result<Var> {
        mask.validate(self.cfg.l, 1)?;
        let mut x = self.embed_signal(tape, bits)?;
        for l in 0..self.cfg.l {
            if mask.active(mask.enc, l) {
                x = self.transformer_layer(tape, x, env_token, &self.layout.enc[l])?;
            }
        }
        let w = tape.param(self.layout.enc_out_w);
        let b = tape.param(self.layout.enc_out_b);
        let proj = tape.matmul(x, w)?;
        let logits = tape.add_row(proj, b)?;
        let intens = tape.sigmoid(logits);
        tape.reshape(intens, 1, self.cfg.k_symbols())
    }

    /// Decoder: received vector (as a tape node) -> N bit probabilities.
    /// `decode_scale` is the harness-supplied 1/(amplitude * E[h]).
    pub fn decode_on_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        received: Var,
        env_token: Var,
        mask: LayerMask,
        decode_scale: f64,
    ) -> Result<Var> {
        mask.validate(self.cfg.l, 1)?;
        if received.len() != self.cfg.k_symbols() {
            return Err(Error::Shape(format!(
                "received vector must have {} entries, got {}",
                self.cfg.k_symbols(),
                received.len()
            )));
        }
        let scaled = tape.scale(received, decode_scale);
        let tokens = tape.reshape(scaled, self.cfg.t, self.cfg.d_in)?;
        let w_in = tape.param(self.layout.dec_in_w);
        let b_in = tape.param(self.layout.dec_in_b);
        let proj = tape.matmul(tokens, w_in)?;
        let mut r = tape.add_row(proj, b_in)?;
        if self.cfg.use_positional {
            let pos = tape.param(self.layout.pos);
            r = tape.add(r, pos)?;
        }
        for l in 0..self.cfg.l {
            if mask.active(mask.dec, l) {
                r = self.transformer_layer(tape, r, env_token, &self.layout.dec[l])?;
            }
        }
        let w = tape.param(self.layout.dec_out_w);
        let b = tape.param(self.layout.dec_out_b);
        let proj = tape.matmul(r, w)?;
        let logits = tape.add_row(proj, b)?;
        let probs = tape.sigmoid(logits);
        tape.reshape(probs, 1, self.cfg.n_bits())
    }

    /// Full differentiable pass: encode, channel, decode; returns the
    /// probability node plus BCE and MSE loss nodes against the sent bits.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_on_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        bits: &[u8],
        env_state: &[f64],
        env_mode: EnvMode,
        mask: LayerMask,
        draw: &ChannelDraw,
        budget: &LinkBudget,
        rng: &mut RngStream,
        hard_transmit: bool,
    ) -> Result<ForwardVars> {
        let env_token = self.embed_env(tape, env_state, env_mode)?;
        let mut x = self.encode_on_tape(tape, bits, env_token, mask)?;
        if hard_transmit {
            // evaluation-only OOK hardening; detaches the encoder gradient
            let hard: Vec<f64> = tape
                .value(x)
                .iter()
                .map(|v| if *v > 0.5 { 1.0 } else { 0.0 })
                .collect();
            x = tape.leaf(1, self.cfg.k_symbols(), hard)?;
        }
        let k = self.cfg.k_symbols();
        let noise: Vec<f64> = (0..k).map(|_| budget.sigma_w * rng.normal()).collect();
        let w = tape.leaf(1, k, noise)?;
        let faded = tape.scale(x, budget.amplitude * draw.h);
        let received = tape.add(faded, w)?;
        let probs = self.decode_on_tape(tape, received, env_token, mask, budget.decode_scale())?;
        let target_data: Vec<f64> = bits.iter().map(|b| *b as f64).collect();
        let target = tape.leaf(1, self.cfg.n_bits(), target_data)?;
        let bce = tape.bce_mean(probs, target)?;
        let mse = tape.mse_mean(probs, target)?;
        Ok(ForwardVars {
            transmitted: x,
            probs,
            bce,
            mse,
        })
    }

    /// Non-training convenience wrapper: runs a forward pass on a local tape
    /// and extracts concrete values.
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        &self,
        bits: &[u8],
        env_state: &[f64],
        env_mode: EnvMode,
        mask: LayerMask,
        draw: &ChannelDraw,
        budget: &LinkBudget,
        rng: &mut RngStream,
        hard_transmit: bool,
    ) -> Result<RunOutput> {
        let mut tape = Tape::new(&self.params);
        let vars = self.forward_on_tape(
            &mut tape,
            bits,
            env_state,
            env_mode,
            mask,
            draw,
            budget,
            rng,
            hard_transmit,
        )?;
        Ok(RunOutput {
            probs: tape.value(vars.probs).to_vec(),
            bce: tape.scalar(vars.bce),
            mse: tape.scalar(vars.mse),
        })
    }

    /// Encoder-only pass with concrete outputs.
    pub fn encode(
        &self,
        bits: &[u8],
        env_state: &[f64],
        env_mode: EnvMode,
        mask: LayerMask,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let env_token = self.embed_env(&mut tape, env_state, env_mode)?;
        let x = self.encode_on_tape(&mut tape, bits, env_token, mask)?;
        Ok(tape.value(x).to_vec())
    }

    /// Decoder-only pass with concrete outputs.
    pub fn decode(
        &self,
        received: &[f64],
        env_state: &[f64],
        env_mode: EnvMode,
        mask: LayerMask,
        decode_scale: f64,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let env_token = self.embed_env(&mut tape, env_state, env_mode)?;
        let y = tape.leaf(1, received.len(), received.to_vec())?;
        let probs = self.decode_on_tape(&mut tape, y, env_token, mask, decode_scale)?;
        Ok(tape.value(probs).to_vec())
    }
}

fn remap_layer(l: &LayerIdx, tpl: &ParamStore, params: &ParamStore) -> LayerIdx {
    let m = |i: usize| params.idx(tpl.name(i)).unwrap();
    LayerIdx {
        wq: m(l.wq),
        wk: m(l.wk),
        wv: m(l.wv),
        wo: m(l.wo),
        wqc: m(l.wqc),
        wkc: m(l.wkc),
        wvc: m(l.wvc),
        woc: m(l.woc),
        ffn_w1: m(l.ffn_w1),
        ffn_b1: m(l.ffn_b1),
        ffn_w2: m(l.ffn_w2),
        ffn_b2: m(l.ffn_b2),
        ln1_g: m(l.ln1_g),
        ln1_b: m(l.ln1_b),
        ln2_g: m(l.ln2_g),
        ln2_b: m(l.ln2_b),
        ln3_g: m(l.ln3_g),
        ln3_b: m(l.ln3_b),
    }
}

/// Tape nodes produced by a full forward pass.
pub struct ForwardVars {
    pub transmitted: Var,
    pub probs: Var,
    pub bce: Var,
    pub mse: Var,
}

/// Concrete outputs of a non-training forward pass.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub probs: Vec<f64>,
    pub bce: f64,
    pub mse: f64,
}

/// Hard decisions at 0.5.
pub fn hard_decide(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|p| if *p > 0.5 { 1 } else { 0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::store::GradStore;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            t: 4,
            d: 8,
            n_h: 2,
            l: 1,
            d_in: 8,
            env_dim: 5,
            use_positional: true,
        }
    }

    fn ident_draw() -> ChannelDraw {
        ChannelDraw {
            h_l: 1.0,
            h_a: 1.0,
            h_p: 1.0,
            h_aoa: 1.0,
            h: 1.0,
        }
    }

    fn unit_budget() -> LinkBudget {
        LinkBudget {
            amplitude: 1.0,
            sigma_w: 0.0,
            mean_h: 1.0,
            snr_db: f64::INFINITY,
        }
    }

    fn random_bits(rng: &mut RngStream, n: usize) -> Vec<u8> {
        (0..n).map(|_| rng.bit()).collect()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            d: 30,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mask_counting_and_validation() {
        let m = LayerMask::full(4);
        assert_eq!(m.active_layers(), 8);
        assert!(m.validate(4, 1).is_ok());
        let empty = LayerMask { enc: 0, dec: 0b1111 };
        assert!(empty.validate(4, 1).is_err());
        let over = LayerMask { enc: 0b10000, dec: 1 };
        assert!(over.validate(4, 1).is_err());
    }

    #[test]
    fn default_dims_flow_through() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.n_bits(), 128);
        assert_eq!(cfg.k_symbols(), 128);
        let model = Model::init(cfg, 3).unwrap();
        let mut rng = RngStream::new(1);
        let bits = random_bits(&mut rng, 128);
        let state = [0.5, 0.2, 0.9, 0.1, 0.4];
        let x = model
            .encode(&bits, &state, EnvMode::Conditioned, LayerMask::full(4))
            .unwrap();
        assert_eq!(x.len(), 128);
        assert!(x.iter().all(|v| *v > 0.0 && *v < 1.0));
        let probs = model
            .decode(&x, &state, EnvMode::Conditioned, LayerMask::full(4), 1.0)
            .unwrap();
        assert_eq!(probs.len(), 128);
        assert!(probs.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn embed_env_checks_normalization() {
        let model = Model::init(tiny_cfg(), 1).unwrap();
        let mut tape = Tape::new(&model.params);
        assert!(model
            .embed_env(&mut tape, &[0.5, 3.0, 0.1, 0.1, 0.1], EnvMode::Conditioned)
            .is_err());
        let token = model
            .embed_env(&mut tape, &[0.0, 0.25, 0.5, 0.75, 1.0], EnvMode::Conditioned)
            .unwrap();
        assert_eq!(token.rows, 1);
        assert_eq!(token.cols as usize, tiny_cfg().d);
    }

    #[test]
    fn zeroed_env_token_is_zero_and_isolated() {
        let model = Model::init(tiny_cfg(), 5).unwrap();
        let mut tape = Tape::new(&model.params);
        let token = model
            .embed_env(&mut tape, &[0.5; 5], EnvMode::Zeroed)
            .unwrap();
        assert!(tape.value(token).iter().all(|v| *v == 0.0));

        // changing env changes the output under Conditioned, not under Zeroed
        let mut rng = RngStream::new(2);
        let bits = random_bits(&mut rng, 32);
        let mask = LayerMask::full(1);
        let a = model
            .encode(&bits, &[0.1; 5], EnvMode::Conditioned, mask)
            .unwrap();
        let b = model
            .encode(&bits, &[0.9; 5], EnvMode::Conditioned, mask)
            .unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
        let za = model.encode(&bits, &[0.1; 5], EnvMode::Zeroed, mask).unwrap();
        let zb = model.encode(&bits, &[0.9; 5], EnvMode::Zeroed, mask).unwrap();
        assert_eq!(za, zb);
    }

    #[test]
    fn bit_locality_of_signal_embedding() {
        // with the positional table fixed, flipping bits in token t changes
        // only row t of the embedding
        let model = Model::init(tiny_cfg(), 7).unwrap();
        let cfg = tiny_cfg();
        let mut bits_a = vec![0u8; cfg.n_bits()];
        let mut bits_b = bits_a.clone();
        bits_b[2 * cfg.d_in] = 1; // first bit of token 2
        let _ = &mut bits_a;
        let mut tape = Tape::new(&model.params);
        let xa = model.embed_signal(&mut tape, &bits_a).unwrap();
        let xb = model.embed_signal(&mut tape, &bits_b).unwrap();
        let (va, vb) = (tape.value(xa).to_vec(), tape.value(xb).to_vec());
        for t in 0..cfg.t {
            let row_a = &va[t * cfg.d..(t + 1) * cfg.d];
            let row_b = &vb[t * cfg.d..(t + 1) * cfg.d];
            if t == 2 {
                assert!(row_a.iter().zip(row_b).any(|(x, y)| x != y));
            } else {
                assert_eq!(row_a, row_b);
            }
        }
    }

    #[test]
    fn masked_layers_are_exact_identities() {
        let cfg = ModelConfig {
            l: 3,
            ..tiny_cfg()
        };
        let model = Model::init(cfg, 11).unwrap();
        let mut rng = RngStream::new(4);
        let bits = random_bits(&mut rng, cfg.n_bits());
        let state = [0.3, 0.6, 0.2, 0.8, 0.5];
        // mask {layer 0} vs a compacted model holding only layer 0
        let mask = Model::prefix_mask(1, 1);
        let full_out = model.encode(&bits, &state, EnvMode::Conditioned, mask).unwrap();
        let sub = model.compacted(mask).unwrap();
        let sub_out = sub
            .encode(&bits, &state, EnvMode::Conditioned, LayerMask::full(1))
            .unwrap();
        assert_eq!(full_out.len(), sub_out.len());
        for (a, b) in full_out.iter().zip(&sub_out) {
            assert_eq!(a.to_bits(), b.to_bits(), "masked skip must be bit-exact");
        }
    }

    #[test]
    fn permutation_equivariance_without_positions() {
        let cfg = ModelConfig {
            use_positional: false,
            ..tiny_cfg()
        };
        let model = Model::init(cfg, 13).unwrap();
        let mut rng = RngStream::new(6);
        let bits = random_bits(&mut rng, cfg.n_bits());
        let state = [0.4, 0.1, 0.7, 0.3, 0.9];
        let mask = LayerMask::full(cfg.l);
        let base = model.encode(&bits, &state, EnvMode::Conditioned, mask).unwrap();

        // all 24 permutations of the 4 tokens
        let perms = permutations(cfg.t);
        for perm in perms {
            let mut pbits = vec![0u8; bits.len()];
            for (dst, src) in perm.iter().enumerate() {
                pbits[dst * cfg.d_in..(dst + 1) * cfg.d_in]
                    .copy_from_slice(&bits[src * cfg.d_in..(src + 1) * cfg.d_in]);
            }
            let out = model.encode(&pbits, &state, EnvMode::Conditioned, mask).unwrap();
            for (dst, src) in perm.iter().enumerate() {
                let got = &out[dst * cfg.d_in..(dst + 1) * cfg.d_in];
                let want = &base[src * cfg.d_in..(src + 1) * cfg.d_in];
                for (g, w) in got.iter().zip(want) {
                    assert!(
                        (g - w).abs() < 1e-12,
                        "token rows must permute with the input"
                    );
                }
            }
        }
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for rest in permutations(n - 1) {
            for pos in 0..n {
                let mut p: Vec<usize> = rest.iter().map(|v| v + 1).collect();
                p.insert(pos, 0);
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn forward_end_to_end_smoke_and_determinism() {
        let model = Model::init(tiny_cfg(), 17).unwrap();
        let mut rng = RngStream::new(8);
        let bits = random_bits(&mut rng, 32);
        let state = [0.2; 5];
        let run = |seed: u64| {
            let mut r = RngStream::new(seed);
            model
                .run(
                    &bits,
                    &state,
                    EnvMode::Conditioned,
                    LayerMask::full(1),
                    &ident_draw(),
                    &unit_budget(),
                    &mut r,
                    false,
                )
                .unwrap()
        };
        let a = run(99);
        let b = run(99);
        assert!(a.bce.is_finite() && a.mse.is_finite());
        assert_eq!(a.probs, b.probs);
        assert_eq!(a.bce.to_bits(), b.bce.to_bits());
    }

    #[test]
    fn cross_attention_weights_are_exactly_one() {
        // with a single environment token the softmax over keys is a
        // singleton: verify via the identity that replacing softmax by a
        // direct broadcast changes nothing. We check a weaker observable
        // consequence: scaling the env token scales O_cross linearly.
        let cfg = tiny_cfg();
        let model = Model::init(cfg, 23).unwrap();
        let mut tape = Tape::new(&model.params);
        let tok1 = tape.leaf(1, cfg.d, vec![0.5; cfg.d]).unwrap();
        let tok2 = tape.leaf(1, cfg.d, vec![1.0; cfg.d]).unwrap();
        let q_src = tape.leaf(cfg.t, cfg.d, vec![0.3; cfg.t * cfg.d]).unwrap();
        let lp = &model.layout.enc[0];
        let o1 = model
            .attention(&mut tape, q_src, tok1, lp.wqc, lp.wkc, lp.wvc, lp.woc)
            .unwrap();
        let o2 = model
            .attention(&mut tape, q_src, tok2, lp.wqc, lp.wkc, lp.wvc, lp.woc)
            .unwrap();
        let v1 = tape.value(o1).to_vec();
        let v2 = tape.value(o2).to_vec();
        for (a, b) in v1.iter().zip(&v2) {
            assert!((2.0 * a - b).abs() < 1e-12, "attention must be linear in V");
        }
    }

    #[test]
    fn full_model_gradient_matches_finite_differences() {
        let cfg = ModelConfig {
            t: 3,
            d: 8,
            n_h: 2,
            l: 1,
            d_in: 4,
            env_dim: 5,
            use_positional: true,
        };
        let mut model = Model::init(cfg, 31).unwrap();
        let mut rng = RngStream::new(12);
        let bits = random_bits(&mut rng, cfg.n_bits());
        let state = [0.3, 0.8, 0.1, 0.6, 0.4];
        let draw = ident_draw();
        let budget = unit_budget();
        let mask = LayerMask::full(1);

        let loss_of = |m: &Model| -> f64 {
            let mut r = RngStream::new(55);
            let mut tape = Tape::new(&m.params);
            let vars = m
                .forward_on_tape(
                    &mut tape,
                    &bits,
                    &state,
                    EnvMode::Conditioned,
                    mask,
                    &draw,
                    &budget,
                    &mut r,
                    false,
                )
                .unwrap();
            tape.scalar(vars.bce)
        };

        let mut analytic = model.params.zeros_like();
        {
            let mut r = RngStream::new(55);
            let mut tape = Tape::new(&model.params);
            let vars = model
                .forward_on_tape(
                    &mut tape,
                    &bits,
                    &state,
                    EnvMode::Conditioned,
                    mask,
                    &draw,
                    &budget,
                    &mut r,
                    false,
                )
                .unwrap();
            tape.backward(vars.bce, &mut analytic).unwrap();
        }

        let mut worst: f64 = 0.0;
        let n_params = model.params.len();
        for pi in 0..n_params {
            for j in 0..model.params.get(pi).data.len() {
                let orig = model.params.get(pi).data[j];
                let h = 1e-5 * (1.0 + orig.abs());
                model.params.get_mut(pi).data[j] = orig + h;
                let fp = loss_of(&model);
                model.params.get_mut(pi).data[j] = orig - h;
                let fm = loss_of(&model);
                model.params.get_mut(pi).data[j] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let an = analytic.grads[pi][j];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(((fd - an) / denom).abs());
            }
        }
        assert!(worst < 1e-4, "max relative gradient error {worst}");
        let _: GradStore = analytic;
    }

    #[test]
    fn env_gradient_flows() {
        let model = Model::init(tiny_cfg(), 37).unwrap();
        let mut rng = RngStream::new(3);
        let bits = random_bits(&mut rng, 32);
        let mut tape = Tape::new(&model.params);
        let mut r = RngStream::new(10);
        let vars = model
            .forward_on_tape(
                &mut tape,
                &bits,
                &[0.4, 0.6, 0.2, 0.9, 0.1],
                EnvMode::Conditioned,
                LayerMask::full(1),
                &ident_draw(),
                &unit_budget(),
                &mut r,
                false,
            )
            .unwrap();
        let mut grads = model.params.zeros_like();
        tape.backward(vars.bce, &mut grads).unwrap();
        let w_env = model.params.idx("env.w1").unwrap();
        assert!(
            grads.grads[w_env].iter().any(|g| g.abs() > 0.0),
            "environment embedding must receive gradient"
        );
    }
}
