//! Tiny decoder-only causal transformer.
//!
//! Two execution paths share one set of weights: [`ModelParams::forward_tape`]
//! records onto a [`Tape`] for training, and [`Decoder`] runs token by token
//! with a key/value cache for inference and sampling. Both compute each
//! position with the same arithmetic, so their outputs agree.

pub mod container;
pub mod model;
pub mod tape;
pub mod tensor;

use rand::Rng;

pub use model::{Decoder, ForwardTrace, ModelConfig, ModelParams, ParamVars};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use crate::error::{LremError, Result};
use crate::textcodec::{SpecialIds, TokenSeq};
use tensor::log_softmax;

/// Why generation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EmbEmitted,
    LengthCap,
}

/// A generated continuation of a `<think>` prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCot {
    pub new_tokens: TokenSeq,
    pub token_logprobs: Vec<f64>,
    pub stop_reason: StopReason,
}

/// Generation length cap for a CoT length threshold `l`: room for `2l` CoT
/// tokens plus the two terminators, so over-long CoTs are observable.
pub fn hard_cap(length_threshold: usize) -> usize {
    2 * length_threshold + 2
}

/// Final hidden state at `emb_position`; the token there must be `<emb>`.
pub fn embed_at(trace: &ForwardTrace, tokens: &TokenSeq, emb_position: usize, special: SpecialIds) -> Result<Vec<f64>> {
    match tokens.ids().get(emb_position) {
        Some(&id) if id == special.emb && emb_position < trace.final_hidden.rows => {
            Ok(trace.final_hidden.row(emb_position).to_vec())
        }
        _ => Err(LremError::NotEmbPosition(emb_position)),
    }
}

/// Embedding of a rendered input whose last token is `<emb>`.
pub fn embed_last(params: &ModelParams, tokens: &TokenSeq, special: SpecialIds) -> Result<Vec<f64>> {
    if tokens.last() != Some(special.emb) {
        return Err(LremError::NotEmbPosition(tokens.len().saturating_sub(1)));
    }
    params.last_hidden(tokens)
}

#[derive(Debug, Clone, Copy)]
enum Pick {
    Sample(f64),
    Greedy,
}

fn generate<R: Rng + ?Sized>(
    params: &ModelParams,
    prompt: &TokenSeq,
    special: SpecialIds,
    hard_cap: usize,
    pick: Pick,
    rng: &mut R,
) -> Result<SampledCot> {
    if prompt.last() != Some(special.think_open) {
        return Err(LremError::InvalidArgument("prompt must end with <think>".into()));
    }
    let mut dec = Decoder::new(params);
    let mut logits = Vec::new();
    for (i, &id) in prompt.ids().iter().enumerate() {
        let last = i + 1 == prompt.len();
        logits = dec.step(id, false, last)?.1;
    }
    let room = params.config.max_seq_len - prompt.len();
    let cap = hard_cap.min(room);
    let mut new_tokens = Vec::new();
    let mut token_logprobs = Vec::new();
    let mut stop_reason = StopReason::LengthCap;
    while new_tokens.len() < cap {
        let (tok, lp) = match pick {
            Pick::Sample(temp) => {
                let scaled: Vec<f64> = logits.iter().map(|v| v / temp).collect();
                let lps = log_softmax(&scaled);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = lps.len() - 1;
                for (i, lp) in lps.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        chosen = i;
                        break;
                    }
                }
                (chosen, lps[chosen])
            }
            Pick::Greedy => {
                let lps = log_softmax(&logits);
                let mut best = 0;
                for (i, &v) in logits.iter().enumerate() {
                    if v > logits[best] {
                        best = i;
                    }
                }
                (best, lps[best])
            }
        };
        new_tokens.push(tok as u32);
        token_logprobs.push(lp);
        if tok as u32 == special.emb {
            stop_reason = StopReason::EmbEmitted;
            break;
        }
        if new_tokens.len() < cap {
            logits = dec.step(tok as u32, false, true)?.1;
        }
    }
    Ok(SampledCot {
        new_tokens: TokenSeq(new_tokens),
        token_logprobs,
        stop_reason,
    })
}

/// Autoregressive sampling from `softmax(logits / temperature)` until `<emb>`
/// or `hard_cap` new tokens.
pub fn sample_cot<R: Rng + ?Sized>(
    params: &ModelParams,
    prompt: &TokenSeq,
    special: SpecialIds,
    temperature: f64,
    rng: &mut R,
    hard_cap: usize,
) -> Result<SampledCot> {
    if !(temperature > 0.0) {
        return Err(LremError::InvalidArgument(format!("temperature {temperature} must be > 0")));
    }
    generate(params, prompt, special, hard_cap, Pick::Sample(temperature), rng)
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy_cot(params: &ModelParams, prompt: &TokenSeq, special: SpecialIds, hard_cap: usize) -> Result<SampledCot> {
    // the rng is never drawn from in greedy mode
    let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    generate(params, prompt, special, hard_cap, Pick::Greedy, &mut unused)
}

/// Teacher-forced per-token log-probabilities of `generated` after `prompt`.
pub fn log_prob_of(params: &ModelParams, prompt: &TokenSeq, generated: &TokenSeq, special: SpecialIds) -> Result<Vec<f64>> {
    check_continuation(prompt, generated, special)?;
    let full = concat(prompt, generated);
    let trace = params.forward(&full, None)?;
    Ok(generated
        .ids()
        .iter()
        .enumerate()
        .map(|(i, &tok)| log_softmax(trace.logits.row(prompt.len() - 1 + i))[tok as usize])
        .collect())
}

fn check_continuation(prompt: &TokenSeq, generated: &TokenSeq, special: SpecialIds) -> Result<()> {
    if prompt.is_empty() {
        return Err(LremError::InvalidArgument("empty prompt".into()));
    }
    if let Some(p) = generated.ids().iter().position(|&t| t == special.emb) {
        if p + 1 != generated.len() {
            return Err(LremError::InvalidArgument("continuation runs past <emb>".into()));
        }
    }
    Ok(())
}

pub fn concat(a: &TokenSeq, b: &TokenSeq) -> TokenSeq {
    let mut ids = a.ids().to_vec();
    ids.extend_from_slice(b.ids());
    TokenSeq(ids)
}

/// Value and exact gradients of a scalar loss built on a fresh tape.
/// Gradients come back in parameter storage order; parameters that do not
/// influence the loss get zeros.
pub fn grad<F>(params: &ModelParams, loss: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Tape, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let pv = params.register(&mut tape)?;
    let out = loss(&mut tape, &pv)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(LremError::Shape("loss must be scalar".into()));
    }
    let value = value.item();
    let mut grads = tape.backward(out)?;
    let tensors = pv
        .vars
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.rows, t.cols)))
        .collect();
    Ok((value, tensors))
}

/// Central finite-difference gradient of `loss` over every parameter scalar.
/// Slow; meant for micro configs.
pub fn finite_difference<F>(params: &ModelParams, h: f64, mut loss: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&ModelParams) -> Result<f64>,
{
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.tensors.len());
    for ti in 0..params.tensors.len() {
        let mut g = Tensor::zeros(params.tensors[ti].rows, params.tensors[ti].cols);
        for e in 0..g.len() {
            let orig = work.tensors[ti].data[e];
            work.tensors[ti].data[e] = orig + h;
            let plus = loss(&work)?;
            work.tensors[ti].data[e] = orig - h;
            let minus = loss(&work)?;
            work.tensors[ti].data[e] = orig;
            g.data[e] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Denominator floor for gradient checks. Central differences with
/// `h = 1e-5` carry roughly `1e-11` of round-off, so entries smaller than
/// this are compared on an absolute `1e-9` scale instead.
pub const GRADCHECK_FLOOR: f64 = 1e-4;

/// Largest `|a - n| / max(|a|, |n|, floor)` over all entries.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data.iter().zip(&n.data))
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
