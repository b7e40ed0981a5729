//! Group rollouts, group-normalized advantages and the clipped policy
//! objective for the reinforcement-learning stage.
//!
//! Importance ratios are per token, `exp(new - old)`, each clipped to
//! `[1-ε, 1+ε]` and multiplied by the rollout's shared advantage. The loss is
//! the negated mean over every generated token in the batch. There is no KL
//! term and no value critic.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{LremError, Result};
use crate::net::tape::surrogate_term;
use crate::net::{self, hard_cap, ModelParams, ParamVars, SampledCot, Tape, Tensor, Var};
use crate::objectives::{cosine_sim, info_nce_tape, LossWeights};
use crate::optim::Optimizer;
use crate::reward::{is_well_formed, rank_of, score_rollout, RewardBreakdown, RewardConfig};
use crate::textcodec::{SpecialIds, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub std_floor: f64,
    pub inner_epochs: usize,
    pub temperature: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_eps: 0.2,
            std_floor: 1e-6,
            inner_epochs: 1,
            temperature: 1.0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(LremError::Config("group size must be >= 2".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(LremError::Config("clip epsilon must be in (0, 1)".into()));
        }
        if self.inner_epochs == 0 || !(self.temperature > 0.0) || !(self.std_floor >= 0.0) {
            return Err(LremError::Config("inner_epochs >= 1, temperature > 0, std_floor >= 0".into()));
        }
        Ok(())
    }
}

/// `(r - mean) / std` with population std; all zeros when std < `std_floor`.
pub fn advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(LremError::InvalidArgument(format!("group of {} rewards, need >= 2", rewards.len())));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    if std < std_floor || std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Plain evaluation of the clipped objective over per-rollout token log-probs.
pub fn grpo_loss(new_logps: &[Vec<f64>], old_logps: &[Vec<f64>], advantages: &[f64], eps: f64) -> Result<f64> {
    if new_logps.len() != old_logps.len() || new_logps.len() != advantages.len() {
        return Err(LremError::Shape("rollout counts differ".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((new, old), &a) in new_logps.iter().zip(old_logps).zip(advantages) {
        if new.len() != old.len() {
            return Err(LremError::Shape("token counts differ within a rollout".into()));
        }
        for (&n, &o) in new.iter().zip(old) {
            total += surrogate_term(n, o, a, eps).0;
            count += 1;
        }
    }
    if count == 0 {
        return Err(LremError::InvalidArgument("no tokens".into()));
    }
    Ok(-total / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub cot: SampledCot,
    pub reward: RewardBreakdown,
    pub advantage: f64,
    /// Final hidden state at `<emb>`; absent for malformed rollouts.
    pub embedding: Option<Vec<f64>>,
    pub rank: Option<usize>,
}

impl Rollout {
    pub fn old_logps(&self) -> &[f64] {
        &self.cot.token_logprobs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    /// Position of the query (and its positive item) in the batch.
    pub query: usize,
    pub rollouts: Vec<Rollout>,
}

/// One RL batch: query `i` pairs with item `i`.
#[derive(Debug, Clone)]
pub struct RlBatch {
    /// Generation prompts, each ending in `<think>`.
    pub prompts: Vec<TokenSeq>,
    /// Rendered item inputs, each ending in `<emb>`.
    pub items: Vec<TokenSeq>,
}

impl RlBatch {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RlSettings {
    pub grpo: GrpoConfig,
    pub reward: RewardConfig,
    pub weights: LossWeights,
    pub special: SpecialIds,
}

/// Samples `G` CoTs for one query under frozen `params`, embeds every
/// well-formed rollout, ranks its positive among the batch items and fills in
/// rewards and advantages.
pub fn collect_group<R: Rng + ?Sized>(
    params: &ModelParams,
    query: usize,
    prompt: &TokenSeq,
    item_embeddings: &[Vec<f64>],
    settings: &RlSettings,
    rng: &mut R,
) -> Result<RolloutGroup> {
    let cfg = &settings.grpo;
    let sp = settings.special;
    let cap = hard_cap(settings.reward.length_threshold);
    let mut cache: HashMap<Vec<u32>, (Vec<f64>, usize)> = HashMap::new();
    let mut rollouts = Vec::with_capacity(cfg.group_size);
    for _ in 0..cfg.group_size {
        let cot = net::sample_cot(params, prompt, sp, cfg.temperature, rng, cap)?;
        let (embedding, rank) = if is_well_formed(&cot.new_tokens, sp) {
            let key = cot.new_tokens.ids().to_vec();
            if !cache.contains_key(&key) {
                let full = net::concat(prompt, &cot.new_tokens);
                let emb = params.last_hidden(&full)?;
                let sims = item_embeddings
                    .iter()
                    .map(|d| cosine_sim(&emb, d))
                    .collect::<Result<Vec<_>>>()?;
                let rank = rank_of(&sims, query)?;
                cache.insert(key.clone(), (emb, rank));
            }
            let (e, r) = &cache[&key];
            (Some(e.clone()), Some(*r))
        } else {
            (None, None)
        };
        let reward = score_rollout(&cot.new_tokens, rank, item_embeddings.len(), &settings.reward, sp)?;
        rollouts.push(Rollout { cot, reward, advantage: 0.0, embedding, rank });
    }
    let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward.total).collect();
    for (r, a) in rollouts.iter_mut().zip(advantages(&rewards, cfg.std_floor)?) {
        r.advantage = a;
    }
    Ok(RolloutGroup { query, rollouts })
}

/// A rollout with a fixed continuation, as if sampled from a policy whose
/// log-probs were the current ones shifted by `old_shift`. Used to exercise
/// the loss on chosen advantages and importance ratios.
pub fn fixed_rollout(
    params: &ModelParams,
    prompt: &TokenSeq,
    generated: &TokenSeq,
    advantage: f64,
    old_shift: f64,
    special: SpecialIds,
) -> Result<Rollout> {
    let lp = net::log_prob_of(params, prompt, generated, special)?;
    let embedding = if is_well_formed(generated, special) {
        Some(params.last_hidden(&net::concat(prompt, generated))?)
    } else {
        None
    };
    Ok(Rollout {
        cot: SampledCot {
            new_tokens: generated.clone(),
            token_logprobs: lp.iter().map(|v| v + old_shift).collect(),
            stop_reason: net::StopReason::EmbEmitted,
        },
        reward: RewardBreakdown { format: 0.0, length: 0.0, accuracy: 0.0, total: 0.0 },
        advantage,
        embedding,
        rank: None,
    })
}

/// Loss components of one RL update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RlLoss {
    pub total: f64,
    pub grpo: f64,
    pub nce: f64,
}

/// Builds `γ1·L_GRPO + γ2·L_InfoNCE` on the tape.
///
/// Rollouts with zero advantage contribute exactly zero to the clipped term
/// and are only counted in its token denominator. Malformed rollouts never
/// enter the contrastive term.
pub fn rl_loss_tape(
    params: &ModelParams,
    tape: &mut Tape,
    pv: &ParamVars,
    batch: &RlBatch,
    groups: &[RolloutGroup],
    settings: &RlSettings,
) -> Result<(Var, Var, Option<Var>)> {
    let w = &settings.weights;
    let eps = settings.grpo.clip_eps;
    let mut lp_parts = Vec::new();
    let mut old = Vec::new();
    let mut adv = Vec::new();
    let mut total_tokens = 0usize;
    let mut query_rows = Vec::new();
    let mut positives = Vec::new();
    for group in groups {
        let prompt = &batch.prompts[group.query];
        // identical rollouts share one forward pass
        let mut seen: HashMap<&[u32], (Var, Option<Var>)> = HashMap::new();
        for r in &group.rollouts {
            let gen = &r.cot.new_tokens;
            total_tokens += gen.len();
            let wants_pg = r.advantage != 0.0 && !gen.is_empty();
            let wants_emb = r.embedding.is_some();
            if !wants_pg && !wants_emb {
                continue;
            }
            let key = gen.ids();
            let (logits_or_h, emb) = match seen.get(key) {
                Some(&v) => v,
                None => {
                    let full = net::concat(prompt, gen);
                    let (h, logits) = params.forward_tape(tape, pv, &full, None)?;
                    let emb = if is_well_formed(gen, settings.special) {
                        Some(tape.select_rows(h, &[full.len() - 1])?)
                    } else {
                        None
                    };
                    seen.insert(key, (logits, emb));
                    (logits, emb)
                }
            };
            if wants_pg {
                let targets: Vec<(usize, usize)> = gen
                    .ids()
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| (prompt.len() - 1 + i, t as usize))
                    .collect();
                lp_parts.push(tape.log_prob_gather(logits_or_h, &targets)?);
                old.extend_from_slice(r.old_logps());
                adv.extend(std::iter::repeat_n(r.advantage, gen.len()));
            }
            if wants_emb {
                query_rows.push(emb.expect("well-formed rollout has an <emb> row"));
                positives.push(group.query);
            }
        }
    }
    let grpo = if lp_parts.is_empty() {
        tape.constant(Tensor::scalar(0.0))?
    } else {
        let lps = tape.concat_rows(&lp_parts)?;
        let mean_over_included = tape.clipped_surrogate(lps, &old, &adv, eps)?;
        tape.scale(mean_over_included, old.len() as f64 / total_tokens as f64)?
    };
    let nce = if query_rows.is_empty() {
        None
    } else {
        let mut item_rows = Vec::with_capacity(batch.items.len());
        for item in &batch.items {
            let h = params.hidden_tape(tape, pv, item, None)?;
            item_rows.push(tape.select_rows(h, &[item.len() - 1])?);
        }
        let q = tape.concat_rows(&query_rows)?;
        let d = tape.concat_rows(&item_rows)?;
        Some(info_nce_tape(tape, q, d, &positives, w.tau)?)
    };
    let total = match nce {
        Some(n) => tape.weighted_sum(&[(grpo, w.gamma_grpo), (n, w.gamma_nce)])?,
        None => tape.scale(grpo, w.gamma_grpo)?,
    };
    Ok((total, grpo, nce))
}

/// Value and gradients of the RL objective for fixed rollouts.
pub fn rl_gradients(
    params: &ModelParams,
    batch: &RlBatch,
    groups: &[RolloutGroup],
    settings: &RlSettings,
) -> Result<(RlLoss, Vec<Tensor>)> {
    let mut parts = RlLoss::default();
    let (total, grads) = net::grad(params, |tape, pv| {
        let (total, grpo, nce) = rl_loss_tape(params, tape, pv, batch, groups, settings)?;
        parts.grpo = tape.value(grpo).item();
        parts.nce = nce.map_or(0.0, |n| tape.value(n).item());
        Ok(total)
    })?;
    parts.total = total;
    Ok((parts, grads))
}

/// Monitoring numbers for one RL step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RlMetrics {
    pub mean_reward: f64,
    pub format_rate: f64,
    /// Mean in-batch rank over well-formed rollouts; NaN when there are none.
    pub mean_rank: f64,
    pub loss: RlLoss,
    /// Largest |ratio - 1| seen at the first inner update.
    pub max_ratio_dev: f64,
}

pub fn group_metrics(groups: &[RolloutGroup]) -> (f64, f64, f64) {
    let all: Vec<&Rollout> = groups.iter().flat_map(|g| &g.rollouts).collect();
    let n = all.len().max(1) as f64;
    let mean_reward = all.iter().map(|r| r.reward.total).sum::<f64>() / n;
    let format_rate = all.iter().map(|r| r.reward.format).sum::<f64>() / n;
    let ranks: Vec<f64> = all.iter().filter_map(|r| r.rank.map(|k| k as f64)).collect();
    let mean_rank = if ranks.is_empty() {
        f64::NAN
    } else {
        ranks.iter().sum::<f64>() / ranks.len() as f64
    };
    (mean_reward, format_rate, mean_rank)
}

/// Embeds rendered item inputs (each ending in `<emb>`).
pub fn embed_items(params: &ModelParams, items: &[TokenSeq], special: SpecialIds) -> Result<Vec<Vec<f64>>> {
    items.iter().map(|it| net::embed_last(params, it, special)).collect()
}

/// Samples groups for every query of the batch under the current parameters.
pub fn collect_batch<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &RlBatch,
    settings: &RlSettings,
    rng: &mut R,
) -> Result<Vec<RolloutGroup>> {
    let items = embed_items(params, &batch.items, settings.special)?;
    (0..batch.len())
        .map(|i| collect_group(params, i, &batch.prompts[i], &items, settings, rng))
        .collect()
}

/// Sample rollouts with the current (old) policy, then run `inner_epochs`
/// optimizer steps on the RL objective.
pub fn rl_step<R: Rng + ?Sized>(
    params: &mut ModelParams,
    batch: &RlBatch,
    settings: &RlSettings,
    optimizer: &mut Optimizer,
    lr: f64,
    rng: &mut R,
) -> Result<RlMetrics> {
    if batch.len() < 2 {
        return Err(LremError::InvalidArgument("RL batch needs >= 2 query-item pairs".into()));
    }
    let groups = collect_batch(params, batch, settings, rng)?;
    let (mean_reward, format_rate, mean_rank) = group_metrics(&groups);
    let mut metrics = RlMetrics { mean_reward, format_rate, mean_rank, ..Default::default() };
    for epoch in 0..settings.grpo.inner_epochs {
        if epoch == 0 {
            metrics.max_ratio_dev = max_ratio_deviation(params, batch, &groups, settings.special)?;
        }
        let (loss, grads) = rl_gradients(params, batch, &groups, settings)?;
        if !loss.total.is_finite() {
            return Err(LremError::NonFinite("rl loss".into()));
        }
        if epoch == 0 {
            metrics.loss = loss;
        }
        optimizer.step(params, &grads, lr)?;
    }
    Ok(metrics)
}

/// Largest `|exp(new - old) - 1|` over every rollout token.
pub fn max_ratio_deviation(
    params: &ModelParams,
    batch: &RlBatch,
    groups: &[RolloutGroup],
    special: SpecialIds,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for g in groups {
        for r in &g.rollouts {
            if r.cot.new_tokens.is_empty() {
                continue;
            }
            let lp = net::log_prob_of(params, &batch.prompts[g.query], &r.cot.new_tokens, special)?;
            for (n, o) in lp.iter().zip(r.old_logps()) {
                worst = worst.max(((n - o).exp() - 1.0).abs());
            }
        }
    }
    Ok(worst)
}
