//! Self-check suites behind `lrem verify`: gradients against finite
//! differences, reward and advantage arithmetic, exact retrieval, and
//! closed-form loss values.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LremError, Result};
use crate::grpo::{advantages, fixed_rollout, rl_gradients, GrpoConfig, RlBatch, RlSettings, RolloutGroup};
use crate::net::tensor::dot;
use crate::net::{finite_difference, max_relative_error, ModelConfig, ModelParams, Tensor, GRADCHECK_FLOOR};
use crate::objectives::{info_nce, sft_loss, EmbeddingBatch, LossWeights};
use crate::retrieval::{topk, unit, EmbIndex};
use crate::reward::{accuracy_reward, format_reward, length_reward, total_reward, RewardConfig};
use crate::textcodec::{render_item_input, render_query_input, SpecialIds, TokenSeq, Vocab};
use crate::trainer::{cold_gradients, cold_loss_value, ColdExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Rewards,
    Retrieval,
    Losses,
    All,
}

impl std::str::FromStr for Suite {
    type Err = LremError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcheck" => Ok(Suite::Gradcheck),
            "rewards" => Ok(Suite::Rewards),
            "retrieval" => Ok(Suite::Retrieval),
            "losses" => Ok(Suite::Losses),
            "all" => Ok(Suite::All),
            other => Err(LremError::InvalidArgument(format!(
                "unknown suite `{other}` (gradcheck, rewards, retrieval, losses, all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{mark}] {}/{}: {}", self.suite, self.name, self.detail)
    }
}

struct Recorder {
    suite: &'static str,
    checks: Vec<Check>,
}

impl Recorder {
    fn new(suite: &'static str) -> Self {
        Recorder { suite, checks: Vec::new() }
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            suite: self.suite,
            name: name.to_string(),
            passed,
            detail,
        });
    }

    fn close(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        self.check(name, (got - want).abs() <= tol, format!("{got} vs {want} (tol {tol:e})"));
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<Check>> {
    match suite {
        Suite::Gradcheck => gradcheck(),
        Suite::Rewards => rewards(),
        Suite::Retrieval => retrieval(),
        Suite::Losses => losses(),
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Gradcheck, Suite::Rewards, Suite::Retrieval, Suite::Losses] {
                all.extend(run_suite(s)?);
            }
            Ok(all)
        }
    }
}

/// The 16-token vocabulary of the micro config: five specials and `a`..`k`.
pub fn micro_vocab() -> Vocab {
    Vocab::from_surface(["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k"]).expect("fixed vocabulary is valid")
}

/// Two query-CoT-item triplets over [`micro_vocab`].
pub fn micro_cold_batch(v: &Vocab) -> Result<Vec<ColdExample>> {
    let mk = |q: &str, cot: &str, item: &str| -> Result<ColdExample> {
        let q = v.encode(q)?;
        Ok(ColdExample {
            prompt_len: q.len() + 2,
            query: render_query_input(v, &q, Some(&v.encode(cot)?), 24)?,
            item: render_item_input(v, &v.encode(item)?, 24)?,
        })
    };
    Ok(vec![mk("a b", "c d", "c e f")?, mk("g", "h i j", "k h")?])
}

/// Two prompts with two fixed rollouts each: one well-formed and one either
/// malformed or empty, with advantages of both signs. `old_shift` moves the
/// sampling-time log-probs so that some ratios fall outside the clip range.
pub fn micro_rl_groups(params: &ModelParams, v: &Vocab, old_shift: f64) -> Result<(RlBatch, Vec<RolloutGroup>)> {
    let sp = v.special();
    let enc = |s: &str| v.encode(s);
    let batch = RlBatch {
        prompts: vec![
            render_query_input(v, &enc("a b")?, None, 24)?,
            render_query_input(v, &enc("g")?, None, 24)?,
        ],
        items: vec![
            render_item_input(v, &enc("c e f")?, 24)?,
            render_item_input(v, &enc("k h")?, 24)?,
        ],
    };
    let with_end = |s: &str| -> Result<TokenSeq> {
        let mut ids = enc(s)?.0;
        ids.extend([sp.think_close, sp.emb]);
        Ok(TokenSeq(ids))
    };
    let plan = [
        (0, with_end("c d")?, 1.0, old_shift),
        (0, TokenSeq(vec![enc("c")?.0[0], enc("c")?.0[0], enc("e")?.0[0]]), -1.0, old_shift),
        (1, with_end("")?, -1.0, -old_shift),
        (1, with_end("h")?, 1.0, -old_shift),
    ];
    let mut groups = vec![
        RolloutGroup { query: 0, rollouts: Vec::new() },
        RolloutGroup { query: 1, rollouts: Vec::new() },
    ];
    for (q, gen, adv, shift) in plan {
        groups[q].rollouts.push(fixed_rollout(params, &batch.prompts[q], &gen, adv, shift, sp)?);
    }
    Ok((batch, groups))
}

pub fn micro_rl_settings(special: SpecialIds) -> RlSettings {
    RlSettings {
        grpo: GrpoConfig { group_size: 2, ..GrpoConfig::default() },
        reward: RewardConfig { length_threshold: 3, ..RewardConfig::default() },
        weights: LossWeights::default(),
        special,
    }
}

const GRAD_TOL: f64 = 1e-5;

fn gradcheck() -> Result<Vec<Check>> {
    let mut r = Recorder::new("gradcheck");
    let start = Instant::now();
    let v = micro_vocab();
    let params = ModelParams::init(ModelConfig::micro(v.len()), 8)?;

    let ex = micro_cold_batch(&v)?;
    let batch: Vec<&ColdExample> = ex.iter().collect();
    let w = LossWeights::default();
    let (_, analytic) = cold_gradients(&params, &batch, &w)?;
    let numeric = finite_difference(&params, 1e-5, |p| Ok(cold_loss_value(p, &batch, &w)?.total))?;
    let err = max_relative_error(&analytic, &numeric, GRADCHECK_FLOOR);
    r.check("cold_total", err <= GRAD_TOL, format!("max relative error {err:.3e}"));

    let settings = micro_rl_settings(v.special());
    for shift in [0.0, 0.5] {
        let (rb, groups) = micro_rl_groups(&params, &v, shift)?;
        let (_, analytic) = rl_gradients(&params, &rb, &groups, &settings)?;
        let numeric = finite_difference(&params, 1e-5, |p| Ok(rl_gradients(p, &rb, &groups, &settings)?.0.total))?;
        let err = max_relative_error(&analytic, &numeric, GRADCHECK_FLOOR);
        r.check(
            &format!("rl_total (old-logp shift {shift})"),
            err <= GRAD_TOL,
            format!("max relative error {err:.3e}"),
        );
    }
    let secs = start.elapsed().as_secs_f64();
    r.check("runtime", secs < 60.0, format!("{secs:.2} s"));
    Ok(r.checks)
}

fn rewards() -> Result<Vec<Check>> {
    let mut r = Recorder::new("rewards");
    let cfg = RewardConfig::default();
    r.close("r_acc(1, 256)", accuracy_reward(1, 256)?, 1.0, 1e-12);
    r.close("r_acc(256, 256)", accuracy_reward(256, 256)?, 0.0, 1e-12);
    r.close("r_acc(16, 256)", accuracy_reward(16, 256)?, 0.5, 1e-12);
    r.close("total(1, 1, 1)", total_reward(1.0, 1.0, 1.0, &cfg).total, 1.7, 1e-12);
    r.close("total(1, 1, 0.5)", total_reward(1.0, 1.0, 0.5, &cfg).total, 1.2, 1e-12);

    let sp = SpecialIds::standard();
    let t = |ids: &[u32]| TokenSeq(ids.to_vec());
    let (close, emb, open) = (sp.think_close, sp.emb, sp.think_open);
    let cases = [
        ("cot </think> <emb>", t(&[7, 8, close, emb]), 1.0),
        ("empty cot", t(&[close, emb]), 1.0),
        ("missing <emb>", t(&[7, 8, close]), 0.0),
        ("missing </think>", t(&[7, 8, emb]), 0.0),
        ("terminators swapped", t(&[7, emb, close]), 0.0),
        ("special inside cot", t(&[7, open, close, emb]), 0.0),
        ("trailing token", t(&[7, close, emb, 8]), 0.0),
        ("nothing generated", t(&[]), 0.0),
    ];
    for (name, seq, want) in cases {
        r.close(&format!("format: {name}"), format_reward(&seq, sp), want, 0.0);
    }
    let of_len = |n: usize| {
        let mut ids = vec![7u32; n];
        ids.extend([close, emb]);
        TokenSeq(ids)
    };
    r.close("length: l tokens", length_reward(&of_len(16), 16, sp), 1.0, 0.0);
    r.close("length: l + 1 tokens", length_reward(&of_len(17), 16, sp), 0.0, 0.0);

    // group normalisation over random reward groups of size 8
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut worst_mean, mut worst_std, mut degenerate_ok) = (0.0f64, 0.0f64, true);
    for g in 0..1000 {
        let rewards: Vec<f64> = if g % 10 == 0 {
            vec![rng.random_range(0.0..1.7); 8]
        } else {
            (0..8).map(|_| rng.random_range(0.0..1.7)).collect()
        };
        let a = advantages(&rewards, 1e-6)?;
        let m = rewards.iter().sum::<f64>() / 8.0;
        let sd = (rewards.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 8.0).sqrt();
        if sd >= 1e-6 {
            let am = a.iter().sum::<f64>() / 8.0;
            let asd = (a.iter().map(|x| (x - am).powi(2)).sum::<f64>() / 8.0).sqrt();
            worst_mean = worst_mean.max(am.abs());
            worst_std = worst_std.max((asd - 1.0).abs());
        } else {
            degenerate_ok &= a.iter().all(|&x| x == 0.0);
        }
    }
    r.check("advantage mean", worst_mean <= 1e-9, format!("max |mean A| {worst_mean:.2e}"));
    r.check("advantage std", worst_std <= 1e-9, format!("max |std A - 1| {worst_std:.2e}"));
    r.check("degenerate groups", degenerate_ok, "all-zero advantages".into());
    Ok(r.checks)
}

/// Full sort of every item by (score desc, id asc).
fn full_sort(index: &EmbIndex, query: &[f64], k: usize) -> Result<Vec<(u64, f64)>> {
    let q = unit(query)?;
    let mut all: Vec<(u64, f64)> = (0..index.len()).map(|i| (index.ids[i], dot(&q, index.vector(i)))).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(&b.0)));
    all.truncate(k);
    Ok(all)
}

/// `n` unit vectors of width `dim`; every fifth repeats an earlier one so
/// that equal scores occur.
pub fn random_index(n: usize, dim: usize, seed: u64) -> Result<EmbIndex> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Vec::with_capacity(n * dim);
    for i in 0..n {
        let v: Vec<f64> = if i % 5 == 4 {
            let j = rng.random_range(0..i);
            vectors[j * dim..(j + 1) * dim].to_vec()
        } else {
            unit(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>())?
        };
        vectors.extend(v);
    }
    Ok(EmbIndex {
        ids: (0..n as u64).map(|i| i * 3 + 1).collect(),
        dim,
        vectors,
        fingerprint: [0; 32],
    })
}

fn retrieval() -> Result<Vec<Check>> {
    let mut r = Recorder::new("retrieval");
    let index = random_index(2000, 16, 5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for i in 0..1000 {
        let q: Vec<f64> = if i % 4 == 0 {
            // an indexed vector, so its duplicates tie at the top
            index.vector(rng.random_range(0..index.len())).to_vec()
        } else {
            (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let k = [1, 10, 50, 2000, 2500][i % 5];
        if topk(&index, &q, k)? != full_sort(&index, &q, k)? {
            mismatches += 1;
        }
    }
    r.check("topk vs full sort", mismatches == 0, format!("{mismatches} of 1000 queries differ"));
    Ok(r.checks)
}

fn losses() -> Result<Vec<Check>> {
    let mut r = Recorder::new("losses");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in [2usize, 4, 8] {
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = EmbeddingBatch::paired(vec![v.clone(); n], vec![v.clone(); n])?;
        r.close(&format!("info_nce equal sims N={n}"), info_nce(&batch, 0.05)?, (n as f64).ln(), 1e-9);
    }
    let one = EmbeddingBatch::paired(vec![vec![0.3, -1.0, 2.0]], vec![vec![1.0, 0.5, 0.0]])?;
    r.close("info_nce N=1", info_nce(&one, 0.05)?, 0.0, 0.0);
    let vocab = 170;
    let logits = Tensor::filled(7, vocab, 0.25);
    let targets: Vec<u32> = (0..7).map(|_| rng.random_range(0..vocab as u32)).collect();
    let mask = [true, true, false, true, true, true, false];
    r.close("sft uniform logits", sft_loss(&logits, &targets, &mask)?, (vocab as f64).ln(), 1e-9);
    Ok(r.checks)
}
