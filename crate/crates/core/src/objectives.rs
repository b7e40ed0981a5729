//! Training objectives: next-token SFT, in-batch InfoNCE and the weighted
//! stage totals.
//!
//! Each loss exists twice: a plain `f64` evaluation over vectors, and a
//! tape builder used during training. Tests pin one against the other.

use crate::error::{LremError, Result};
use crate::net::tensor::{dot, log_softmax, Tensor};
use crate::net::{Tape, Var};

/// Loss coefficients and the contrastive temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_sft: f64,
    pub lambda_nce: f64,
    pub gamma_grpo: f64,
    pub gamma_nce: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_sft: 0.1,
            lambda_nce: 1.0,
            gamma_grpo: 1.0,
            gamma_nce: 0.1,
            tau: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(LremError::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        let w = [self.lambda_sft, self.lambda_nce, self.gamma_grpo, self.gamma_nce];
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(LremError::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Query vectors, item vectors and the index of each query's positive item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub queries: Vec<Vec<f64>>,
    pub items: Vec<Vec<f64>>,
    pub positive: Vec<usize>,
}

impl EmbeddingBatch {
    /// Standard in-batch pairing: query `i` belongs with item `i`.
    pub fn paired(queries: Vec<Vec<f64>>, items: Vec<Vec<f64>>) -> Result<Self> {
        if queries.len() != items.len() {
            return Err(LremError::Shape(format!("{} queries vs {} items", queries.len(), items.len())));
        }
        let positive = (0..queries.len()).collect();
        Ok(EmbeddingBatch { queries, items, positive })
    }
}

pub fn cosine_sim(q: &[f64], d: &[f64]) -> Result<f64> {
    if q.len() != d.len() {
        return Err(LremError::Shape(format!("cosine of {} vs {} dims", q.len(), d.len())));
    }
    let nq = dot(q, q).sqrt();
    let nd = dot(d, d).sqrt();
    if nq == 0.0 || nd == 0.0 {
        return Err(LremError::ZeroNorm);
    }
    Ok((dot(q, d) / (nq * nd)).clamp(-1.0, 1.0))
}

/// Mean next-token NLL over the positions selected by `loss_mask`.
/// `logits[t]` predicts `targets[t]`.
pub fn sft_loss(logits: &Tensor, targets: &[u32], loss_mask: &[bool]) -> Result<f64> {
    if targets.len() != logits.rows || loss_mask.len() != logits.rows {
        return Err(LremError::Shape("sft targets/mask must match logit rows".into()));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (t, (&tgt, &m)) in targets.iter().zip(loss_mask).enumerate() {
        if m {
            total -= log_softmax(logits.row(t))[tgt as usize];
            n += 1;
        }
    }
    if n == 0 {
        return Err(LremError::InvalidArgument("sft loss mask selects nothing".into()));
    }
    Ok(total / n as f64)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 {
        Ok(())
    } else {
        Err(LremError::InvalidArgument(format!("temperature {tau} must be > 0")))
    }
}

/// `-(1/N) Σᵢ log softmax_j(s(qᵢ, d_j)/τ)[pos(i)]` with in-batch items only.
pub fn info_nce(batch: &EmbeddingBatch, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if batch.queries.is_empty() || batch.positive.len() != batch.queries.len() {
        return Err(LremError::Shape("info_nce needs >= 1 query with a positive".into()));
    }
    let mut total = 0.0;
    for (q, &p) in batch.queries.iter().zip(&batch.positive) {
        if p >= batch.items.len() {
            return Err(LremError::Shape(format!("positive {p} out of {}", batch.items.len())));
        }
        let logits = batch
            .items
            .iter()
            .map(|d| cosine_sim(q, d).map(|s| s / tau))
            .collect::<Result<Vec<_>>>()?;
        total -= log_softmax(&logits)[p];
    }
    Ok(total / batch.queries.len() as f64)
}

/// Grouped InfoNCE: every vector in `groups[i]` pairs with `items[i]`.
/// Mean over all query vectors; empty groups contribute nothing.
pub fn rl_info_nce(groups: &[Vec<Vec<f64>>], items: &[Vec<f64>], tau: f64) -> Result<f64> {
    if groups.len() != items.len() {
        return Err(LremError::Shape("one group per item".into()));
    }
    let mut queries = Vec::new();
    let mut positive = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        for q in g {
            queries.push(q.clone());
            positive.push(i);
        }
    }
    info_nce(&EmbeddingBatch { queries, items: items.to_vec(), positive }, tau)
}

pub fn cold_total(sft: f64, nce: f64, w: &LossWeights) -> f64 {
    w.lambda_sft * sft + w.lambda_nce * nce
}

pub fn rl_total(grpo: f64, nce: f64, w: &LossWeights) -> f64 {
    w.gamma_grpo * grpo + w.gamma_nce * nce
}

/// Tape version of [`info_nce`] over raw (unnormalized) embedding rows.
pub fn info_nce_tape(tape: &mut Tape, queries: Var, items: Var, positive: &[usize], tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let qn = tape.l2_normalize_rows(queries)?;
    let dn = tape.l2_normalize_rows(items)?;
    let sims = tape.matmul_bt(qn, dn)?;
    let scaled = tape.scale(sims, 1.0 / tau)?;
    let targets: Vec<(usize, usize)> = positive.iter().copied().enumerate().collect();
    tape.cross_entropy(scaled, &targets)
}
