use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tape::{attend_row, gelu, normalize_row, AttendMask, CausalPadMask, Tape, Var};
use super::tensor::{axpy, dot, Tensor};
use crate::error::{LremError, Result};
use crate::textcodec::TokenSeq;

pub const INIT_STD: f64 = 0.02;

/// Architecture of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    /// Only 64 is supported for computation; 32 is accepted in config files for compatibility.
    pub float_width: u32,
    pub tie_embeddings: bool,
}

impl ModelConfig {
    /// Reference desk configuration.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            max_seq_len: 64,
            vocab_size,
            float_width: 64,
            tie_embeddings: false,
        }
    }

    /// Smallest config used for finite-difference checks.
    pub fn micro(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            max_seq_len: 24,
            vocab_size,
            float_width: 64,
            tie_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LremError::Config(m.to_string()));
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.d_ff == 0 || self.max_seq_len == 0 || self.vocab_size < 6 {
            return bad("d_ff, max_seq_len must be positive and vocab_size >= 6");
        }
        if self.float_width != 32 && self.float_width != 64 {
            return bad("float_width must be 32 or 64");
        }
        Ok(())
    }

    fn layer_base(&self, layer: usize) -> usize {
        2 + PER_LAYER * layer
    }

    fn final_base(&self) -> usize {
        2 + PER_LAYER * self.n_layers
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_specs(&self) -> Vec<(String, (usize, usize))> {
        let (d, f, v) = (self.d_model, self.d_ff, self.vocab_size);
        let mut specs = vec![
            ("tok_emb".to_string(), (v, d)),
            ("pos_emb".to_string(), (self.max_seq_len, d)),
        ];
        for l in 0..self.n_layers {
            let p = |n: &str| format!("layer{l}.{n}");
            specs.extend([
                (p("ln1.scale"), (1, d)),
                (p("ln1.offset"), (1, d)),
                (p("attn.wq"), (d, d)),
                (p("attn.wk"), (d, d)),
                (p("attn.wv"), (d, d)),
                (p("attn.wo"), (d, d)),
                (p("ln2.scale"), (1, d)),
                (p("ln2.offset"), (1, d)),
                (p("mlp.w1"), (d, f)),
                (p("mlp.b1"), (1, f)),
                (p("mlp.w2"), (f, d)),
                (p("mlp.b2"), (1, d)),
            ]);
        }
        specs.push(("final_ln.scale".to_string(), (1, d)));
        specs.push(("final_ln.offset".to_string(), (1, d)));
        if !self.tie_embeddings {
            specs.push(("lm_head".to_string(), (d, v)));
        }
        specs
    }
}

const PER_LAYER: usize = 12;
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const WK: usize = 3;
const WV: usize = 4;
const WO: usize = 5;
const LN2_G: usize = 6;
const LN2_B: usize = 7;
const W1: usize = 8;
const B1: usize = 9;
const W2: usize = 10;
const B2: usize = 11;

/// Model weights. Tensors are stored in [`ModelConfig::param_specs`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

/// Per-position final hidden states and vocabulary logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub final_hidden: Tensor,
    pub logits: Tensor,
}

/// Parameters registered as leaves on a tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
}

impl ModelParams {
    /// Normal(0, 0.02) weights, unit norm scales, zero biases and offsets.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, (r, c)) in config.param_specs() {
            let t = if name.ends_with(".scale") {
                Tensor::filled(r, c, 1.0)
            } else if name.ends_with(".offset") || name.ends_with(".b1") || name.ends_with(".b2") {
                Tensor::zeros(r, c)
            } else {
                Tensor::from_vec(r, c, (0..r * c).map(|_| normal.sample(&mut rng)).collect())
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParams { config, names, tensors })
    }

    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != tensors.len() {
            return Err(LremError::Shape(format!("expected {} tensors, got {}", specs.len(), tensors.len())));
        }
        for ((name, shape), t) in specs.iter().zip(&tensors) {
            if t.shape() != *shape {
                return Err(LremError::Shape(format!("{name}: expected {shape:?}, got {:?}", t.shape())));
            }
            if !t.all_finite() {
                return Err(LremError::NonFinite(name.clone()));
            }
        }
        Ok(ModelParams {
            config,
            names: specs.into_iter().map(|(n, _)| n).collect(),
            tensors,
        })
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Content hash of every named tensor.
    pub fn fingerprint(&self) -> [u8; 32] {
        super::container::fingerprint(self.names.iter().map(String::as_str).zip(&self.tensors))
    }

    fn layer(&self, l: usize, which: usize) -> &Tensor {
        &self.tensors[self.config.layer_base(l) + which]
    }

    fn final_ln(&self) -> (&Tensor, &Tensor) {
        let b = self.config.final_base();
        (&self.tensors[b], &self.tensors[b + 1])
    }

    fn lm_head(&self) -> Option<&Tensor> {
        if self.config.tie_embeddings {
            None
        } else {
            Some(&self.tensors[self.config.final_base() + 2])
        }
    }

    /// Registers every tensor as a labelled leaf.
    pub fn register(&self, tape: &mut Tape) -> Result<ParamVars> {
        let vars = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| tape.leaf(t.clone(), n.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamVars { vars })
    }

    /// `self -= lr * grads`.
    pub fn apply_update(&mut self, grads: &[Tensor], lr: f64) {
        for (t, g) in self.tensors.iter_mut().zip(grads) {
            t.scaled_add_assign(g, -lr);
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_seq_len {
            Err(LremError::SequenceTooLong { len, max: self.config.max_seq_len })
        } else {
            Ok(())
        }
    }

    /// Differentiable forward pass. Returns `(final_hidden, logits)` vars.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        tokens: &TokenSeq,
        pad_mask: Option<&[bool]>,
    ) -> Result<(Var, Var)> {
        let hidden = self.hidden_tape(tape, pv, tokens, pad_mask)?;
        let logits = self.logits_tape(tape, pv, hidden)?;
        Ok((hidden, logits))
    }

    /// Differentiable forward pass without the LM head.
    pub fn hidden_tape(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        tokens: &TokenSeq,
        pad_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let t = tokens.len();
        self.check_len(t)?;
        if t == 0 {
            return Err(LremError::InvalidArgument("empty input".into()));
        }
        if let Some(p) = pad_mask {
            if p.len() != t {
                return Err(LremError::Shape("pad mask length".into()));
            }
        }
        let mask = CausalPadMask { pad: pad_mask };
        let positions: Vec<u32> = (0..t as u32).collect();
        let tok = tape.gather(pv.vars[0], tokens.ids())?;
        let pos = tape.gather(pv.vars[1], &positions)?;
        let mut x = tape.add(tok, pos)?;
        for l in 0..cfg.n_layers {
            let p = |w: usize| pv.vars[cfg.layer_base(l) + w];
            let h = tape.layer_norm(x, p(LN1_G), p(LN1_B))?;
            let q = tape.matmul(h, p(WQ))?;
            let k = tape.matmul(h, p(WK))?;
            let v = tape.matmul(h, p(WV))?;
            let a = tape.attention(q, k, v, cfg.n_heads, &mask)?;
            let o = tape.matmul(a, p(WO))?;
            x = tape.add(x, o)?;
            let h = tape.layer_norm(x, p(LN2_G), p(LN2_B))?;
            let u = tape.matmul(h, p(W1))?;
            let u = tape.add_bias(u, p(B1))?;
            let u = tape.gelu(u)?;
            let m = tape.matmul(u, p(W2))?;
            let m = tape.add_bias(m, p(B2))?;
            x = tape.add(x, m)?;
        }
        let fb = cfg.final_base();
        tape.layer_norm(x, pv.vars[fb], pv.vars[fb + 1])
    }

    pub fn logits_tape(&self, tape: &mut Tape, pv: &ParamVars, hidden: Var) -> Result<Var> {
        if self.config.tie_embeddings {
            tape.matmul_bt(hidden, pv.vars[0])
        } else {
            tape.matmul(hidden, pv.vars[self.config.final_base() + 2])
        }
    }

    /// Inference forward pass over a whole sequence.
    pub fn forward(&self, tokens: &TokenSeq, pad_mask: Option<&[bool]>) -> Result<ForwardTrace> {
        self.check_len(tokens.len())?;
        if let Some(p) = pad_mask {
            if p.len() != tokens.len() {
                return Err(LremError::Shape("pad mask length".into()));
            }
        }
        let mut state = Decoder::new(self);
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let mut hidden = Vec::with_capacity(tokens.len() * d);
        let mut logits = Vec::with_capacity(tokens.len() * v);
        for (i, &id) in tokens.ids().iter().enumerate() {
            let is_pad = pad_mask.is_some_and(|p| p[i]);
            let (h, lg) = state.step(id, is_pad, true)?;
            hidden.extend_from_slice(&h);
            logits.extend_from_slice(&lg);
        }
        Ok(ForwardTrace {
            final_hidden: Tensor::from_vec(tokens.len(), d, hidden),
            logits: Tensor::from_vec(tokens.len(), v, logits),
        })
    }

    /// Final hidden state at the last position, skipping the LM head.
    pub fn last_hidden(&self, tokens: &TokenSeq) -> Result<Vec<f64>> {
        self.check_len(tokens.len())?;
        let mut state = Decoder::new(self);
        let mut last = Vec::new();
        for &id in tokens.ids() {
            last = state.step(id, false, false)?.0;
        }
        Ok(last)
    }
}

/// Incremental decoder with a per-layer key/value cache. Feeding a sequence
/// one token at a time yields the same per-position results as a full
/// causal pass.
pub struct Decoder<'a> {
    params: &'a ModelParams,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
    pad: Vec<bool>,
}

impl<'a> Decoder<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        let n = params.config.n_layers;
        Decoder {
            params,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            pad: Vec::new(),
        }
    }

    pub fn position(&self) -> usize {
        self.pad.len()
    }

    /// Feeds one token; returns `(final_hidden, logits)` at its position.
    /// Logits are empty when `with_logits` is false.
    pub fn step(&mut self, token: u32, is_pad: bool, with_logits: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.params;
        let cfg = &p.config;
        let pos = self.pad.len();
        if pos >= cfg.max_seq_len {
            return Err(LremError::SequenceTooLong { len: pos + 1, max: cfg.max_seq_len });
        }
        if token as usize >= cfg.vocab_size {
            return Err(LremError::Shape(format!("token {token} >= vocab {}", cfg.vocab_size)));
        }
        self.pad.push(is_pad);
        let d = cfg.d_model;
        let heads = cfg.n_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x: Vec<f64> = p.tensors[0]
            .row(token as usize)
            .iter()
            .zip(p.tensors[1].row(pos))
            .map(|(a, b)| a + b)
            .collect();
        let mask = CausalPadMask { pad: Some(&self.pad) };
        for l in 0..cfg.n_layers {
            let h = layer_norm_vec(&x, p.layer(l, LN1_G), p.layer(l, LN1_B));
            let q = vec_mat(&h, p.layer(l, WQ));
            self.keys[l].push(vec_mat(&h, p.layer(l, WK)));
            self.values[l].push(vec_mat(&h, p.layer(l, WV)));
            let keys = &self.keys[l];
            let vals = &self.values[l];
            let mut a = vec![0.0; d];
            for hd in 0..heads {
                let off = hd * dh;
                let probs = attend_row(&q[off..off + dh], pos, |j| &keys[j][off..off + dh], scale, &mask as &dyn AttendMask);
                for (j, &pj) in probs.iter().enumerate() {
                    if pj != 0.0 {
                        axpy(pj, &vals[j][off..off + dh], &mut a[off..off + dh]);
                    }
                }
            }
            let o = vec_mat(&a, p.layer(l, WO));
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += oi;
            }
            let h = layer_norm_vec(&x, p.layer(l, LN2_G), p.layer(l, LN2_B));
            let mut u = vec_mat(&h, p.layer(l, W1));
            for (ui, bi) in u.iter_mut().zip(&p.layer(l, B1).data) {
                *ui = gelu(*ui + bi);
            }
            let m = vec_mat(&u, p.layer(l, W2));
            for ((xi, mi), bi) in x.iter_mut().zip(&m).zip(&p.layer(l, B2).data) {
                *xi += mi + bi;
            }
        }
        let (g, b) = p.final_ln();
        let hidden = layer_norm_vec(&x, g, b);
        let logits = if !with_logits {
            Vec::new()
        } else {
            match p.lm_head() {
                Some(w) => vec_mat(&hidden, w),
                None => (0..cfg.vocab_size).map(|v| dot(&hidden, p.tensors[0].row(v))).collect(),
            }
        };
        if hidden.iter().chain(&logits).any(|v| !v.is_finite()) {
            return Err(LremError::NonFinite(format!("forward at position {pos}")));
        }
        Ok((hidden, logits))
    }
}

fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; w.cols];
    for (k, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            axpy(xv, w.row(k), &mut out);
        }
    }
    out
}

fn layer_norm_vec(x: &[f64], g: &Tensor, b: &Tensor) -> Vec<f64> {
    let (h, _) = normalize_row(x);
    h.iter()
        .zip(&g.data)
        .zip(&b.data)
        .map(|((h, g), b)| h * g + b)
        .collect()
}
