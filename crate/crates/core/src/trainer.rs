//! Cold-start and RL training loops, learning-rate schedule and checkpoints.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LremError, Result};
use crate::grpo::{collect_batch, group_metrics, rl_step, GrpoConfig, RlBatch, RlSettings};
use crate::net::container::{hex, Container};
use crate::net::{self, ModelConfig, ModelParams, ParamVars, Tape, Tensor, Var};
use crate::objectives::{info_nce_tape, LossWeights};
use crate::optim::{Optimizer, OptimizerKind};
use crate::pipeline::{CorpusRecord, EvalQueryRecord, RlPairRecord, TripletRecord};
use crate::reward::RewardConfig;
use crate::textcodec::{render_item_input, render_query_input, TokenSeq, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_sft: f64,
    pub lambda_nce: f64,
    pub gamma_grpo: f64,
    pub gamma_nce: f64,
    pub tau: f64,
    pub cot_max: usize,
    pub group_size: usize,
    pub clip_eps: f64,
    pub std_floor: f64,
    pub inner_epochs: usize,
    pub temperature: f64,
    pub beta_format: f64,
    pub beta_length: f64,
    pub beta_accuracy: f64,
    pub batch_cold: usize,
    pub batch_rl: usize,
    pub lr_cold: f64,
    pub lr_rl: f64,
    pub warmup_ratio: f64,
    pub epochs_cold: usize,
    pub epochs_rl: usize,
    pub optimizer_cold: OptimizerKind,
    pub optimizer_rl: OptimizerKind,
    pub seed_model: u64,
    pub seed_cold: u64,
    pub seed_rl: u64,
    pub float_width: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let g = GrpoConfig::default();
        let r = RewardConfig::default();
        TrainConfig {
            lambda_sft: w.lambda_sft,
            lambda_nce: w.lambda_nce,
            gamma_grpo: w.gamma_grpo,
            gamma_nce: w.gamma_nce,
            tau: w.tau,
            cot_max: r.length_threshold,
            group_size: g.group_size,
            clip_eps: g.clip_eps,
            std_floor: g.std_floor,
            inner_epochs: g.inner_epochs,
            temperature: g.temperature,
            beta_format: r.beta_format,
            beta_length: r.beta_length,
            beta_accuracy: r.beta_accuracy,
            batch_cold: 32,
            batch_rl: 32,
            lr_cold: 3e-3,
            lr_rl: 3e-4,
            warmup_ratio: 0.03,
            epochs_cold: 1,
            epochs_rl: 1,
            optimizer_cold: OptimizerKind::Sgd,
            optimizer_rl: OptimizerKind::Sgd,
            seed_model: 1,
            seed_cold: 2,
            seed_rl: 3,
            float_width: 64,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_sft: self.lambda_sft,
            lambda_nce: self.lambda_nce,
            gamma_grpo: self.gamma_grpo,
            gamma_nce: self.gamma_nce,
            tau: self.tau,
        }
    }

    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            group_size: self.group_size,
            clip_eps: self.clip_eps,
            std_floor: self.std_floor,
            inner_epochs: self.inner_epochs,
            temperature: self.temperature,
        }
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig {
            beta_format: self.beta_format,
            beta_length: self.beta_length,
            beta_accuracy: self.beta_accuracy,
            length_threshold: self.cot_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        self.grpo().validate()?;
        self.reward().validate()?;
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(LremError::Config("warmup_ratio must lie in [0, 1)".into()));
        }
        if self.batch_cold < 2 || self.batch_rl < 2 {
            return Err(LremError::Config("batch sizes must be >= 2".into()));
        }
        if !(self.lr_cold >= 0.0) || !(self.lr_rl >= 0.0) {
            return Err(LremError::Config("learning rates must be >= 0".into()));
        }
        if self.float_width != 32 && self.float_width != 64 {
            return Err(LremError::Config("float_width must be 32 or 64".into()));
        }
        Ok(())
    }
}

/// Linear warmup over `ceil(warmup_ratio * total)` steps, then cosine decay
/// to zero at `total`.
pub fn lr_schedule(step: usize, total_steps: usize, peak_lr: f64, warmup_ratio: f64) -> f64 {
    let step = step.min(total_steps);
    let warm = (warmup_ratio * total_steps as f64).ceil() as usize;
    if step < warm {
        return peak_lr * step as f64 / warm as f64;
    }
    if total_steps == warm {
        return peak_lr;
    }
    let progress = (step - warm) as f64 / (total_steps - warm) as f64;
    peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// One curve record; absent fields are omitted from the JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub stage: String,
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_sft: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_grpo: Option<f64>,
    pub loss_nce: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_rank: Option<f64>,
}

pub fn write_curve(path: &Path, records: &[CurveRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| LremError::io(path, e))
}

/// A cold-start example: the generation prompt, the full query input with
/// the teacher CoT, and the rendered item.
#[derive(Debug, Clone, PartialEq)]
pub struct ColdExample {
    pub prompt_len: usize,
    pub query: TokenSeq,
    pub item: TokenSeq,
}

fn title_map(corpus: &[CorpusRecord]) -> HashMap<u64, &str> {
    corpus.iter().map(|r| (r.id, r.title.as_str())).collect()
}

fn item_input(vocab: &Vocab, titles: &HashMap<u64, &str>, id: u64, max_len: usize) -> Result<TokenSeq> {
    let title = titles
        .get(&id)
        .ok_or_else(|| LremError::InvalidArgument(format!("item {id} missing from corpus")))?;
    render_item_input(vocab, &vocab.encode(title)?, max_len)
}

/// Encodes triplets; CoTs longer than `cot_max` are truncated.
pub fn cold_examples(
    vocab: &Vocab,
    corpus: &[CorpusRecord],
    triplets: &[TripletRecord],
    cot_max: usize,
    max_len: usize,
) -> Result<Vec<ColdExample>> {
    let titles = title_map(corpus);
    triplets
        .iter()
        .map(|t| {
            let q = vocab.encode(&t.query)?;
            let mut cot = vocab.encode(&t.cot)?;
            cot.0.truncate(cot_max);
            Ok(ColdExample {
                prompt_len: q.len() + 2,
                query: render_query_input(vocab, &q, Some(&cot), max_len)?,
                item: item_input(vocab, &titles, t.item_id, max_len)?,
            })
        })
        .collect()
}

/// Builds `λ1·L_SFT + λ2·L_InfoNCE` for a batch. SFT is the mean over every
/// CoT, `</think>` and `<emb>` target in the batch; InfoNCE uses in-batch
/// negatives with example `i`'s item as its positive.
pub fn cold_loss_tape(
    params: &ModelParams,
    tape: &mut Tape,
    pv: &ParamVars,
    batch: &[&ColdExample],
    w: &LossWeights,
) -> Result<(Var, Var, Var)> {
    let total_targets: usize = batch.iter().map(|e| e.query.len() - e.prompt_len).sum();
    let mut sft_terms = Vec::with_capacity(batch.len());
    let mut q_rows = Vec::with_capacity(batch.len());
    let mut d_rows = Vec::with_capacity(batch.len());
    for e in batch {
        let n = e.query.len();
        let hidden = params.hidden_tape(tape, pv, &e.query, None)?;
        let positions: Vec<usize> = (e.prompt_len - 1..n - 1).collect();
        let rows = tape.select_rows(hidden, &positions)?;
        let logits = params.logits_tape(tape, pv, rows)?;
        let targets: Vec<(usize, usize)> = positions
            .iter()
            .enumerate()
            .map(|(r, &p)| (r, e.query.ids()[p + 1] as usize))
            .collect();
        let ce = tape.cross_entropy(logits, &targets)?;
        sft_terms.push((ce, targets.len() as f64 / total_targets as f64));
        q_rows.push(tape.select_rows(hidden, &[n - 1])?);
        let ih = params.hidden_tape(tape, pv, &e.item, None)?;
        d_rows.push(tape.select_rows(ih, &[e.item.len() - 1])?);
    }
    let sft = tape.weighted_sum(&sft_terms)?;
    let q = tape.concat_rows(&q_rows)?;
    let d = tape.concat_rows(&d_rows)?;
    let positive: Vec<usize> = (0..batch.len()).collect();
    let nce = info_nce_tape(tape, q, d, &positive, w.tau)?;
    let total = tape.weighted_sum(&[(sft, w.lambda_sft), (nce, w.lambda_nce)])?;
    Ok((total, sft, nce))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ColdLoss {
    pub total: f64,
    pub sft: f64,
    pub nce: f64,
}

pub fn cold_gradients(params: &ModelParams, batch: &[&ColdExample], w: &LossWeights) -> Result<(ColdLoss, Vec<Tensor>)> {
    let mut parts = ColdLoss::default();
    let (total, grads) = net::grad(params, |tape, pv| {
        let (total, sft, nce) = cold_loss_tape(params, tape, pv, batch, w)?;
        parts.sft = tape.value(sft).item();
        parts.nce = tape.value(nce).item();
        Ok(total)
    })?;
    parts.total = total;
    Ok((parts, grads))
}

pub fn cold_loss_value(params: &ModelParams, batch: &[&ColdExample], w: &LossWeights) -> Result<ColdLoss> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape)?;
    let (t, s, n) = cold_loss_tape(params, &mut tape, &pv, batch, w)?;
    Ok(ColdLoss {
        total: tape.value(t).item(),
        sft: tape.value(s).item(),
        nce: tape.value(n).item(),
    })
}

/// Generator state saved with a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub stage: String,
    pub step: usize,
    pub train: Option<TrainConfig>,
    pub rng: Option<RngState>,
}

fn model_meta(c: &ModelConfig) -> Vec<(String, String)> {
    [
        ("n_layers", c.n_layers.to_string()),
        ("d_model", c.d_model.to_string()),
        ("n_heads", c.n_heads.to_string()),
        ("d_ff", c.d_ff.to_string()),
        ("max_seq_len", c.max_seq_len.to_string()),
        ("vocab_size", c.vocab_size.to_string()),
        ("float_width", c.float_width.to_string()),
        ("tie_embeddings", c.tie_embeddings.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn parse_meta<T: std::str::FromStr>(c: &Container, key: &str) -> std::result::Result<T, String> {
    c.meta(key)
        .ok_or_else(|| format!("missing meta `{key}`"))?
        .parse()
        .map_err(|_| format!("bad meta `{key}`"))
}

impl Checkpoint {
    pub fn new(params: ModelParams, stage: &str, step: usize) -> Self {
        Checkpoint {
            params,
            stage: stage.to_string(),
            step,
            train: None,
            rng: None,
        }
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.params.fingerprint()
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut meta = model_meta(&self.params.config);
        meta.push(("stage".into(), self.stage.clone()));
        meta.push(("step".into(), self.step.to_string()));
        if let Some(t) = &self.train {
            meta.push(("train_config".into(), serde_json::to_string(t)?));
        }
        if let Some(r) = &self.rng {
            meta.push(("rng_seed".into(), hex(&r.seed)));
            meta.push(("rng_stream".into(), r.stream.to_string()));
            meta.push(("rng_word_pos".into(), r.word_pos.to_string()));
        }
        meta.push(("fingerprint".into(), hex(&self.fingerprint())));
        Ok(Container {
            meta,
            tensors: self
                .params
                .names
                .iter()
                .cloned()
                .zip(self.params.tensors.iter().cloned())
                .collect(),
        })
    }

    pub fn from_container(c: Container) -> std::result::Result<Self, String> {
        let config = ModelConfig {
            n_layers: parse_meta(&c, "n_layers")?,
            d_model: parse_meta(&c, "d_model")?,
            n_heads: parse_meta(&c, "n_heads")?,
            d_ff: parse_meta(&c, "d_ff")?,
            max_seq_len: parse_meta(&c, "max_seq_len")?,
            vocab_size: parse_meta(&c, "vocab_size")?,
            float_width: parse_meta(&c, "float_width")?,
            tie_embeddings: parse_meta(&c, "tie_embeddings")?,
        };
        let specs = config.param_specs();
        if specs.len() != c.tensors.len() {
            return Err(format!("expected {} tensors, found {}", specs.len(), c.tensors.len()));
        }
        for ((name, shape), (got, t)) in specs.iter().zip(&c.tensors) {
            if name != got || *shape != t.shape() {
                return Err(format!("tensor `{got}` {:?} does not match `{name}` {shape:?}", t.shape()));
            }
        }
        let train = match c.meta("train_config") {
            Some(s) => Some(serde_json::from_str(s).map_err(|e| format!("train_config: {e}"))?),
            None => None,
        };
        let rng = match c.meta("rng_seed") {
            Some(s) => {
                if s.len() != 64 {
                    return Err("bad rng_seed".into());
                }
                let mut seed = [0u8; 32];
                for (i, b) in seed.iter_mut().enumerate() {
                    *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| "bad rng_seed")?;
                }
                Some(RngState {
                    seed,
                    stream: parse_meta(&c, "rng_stream")?,
                    word_pos: parse_meta(&c, "rng_word_pos")?,
                })
            }
            None => None,
        };
        let stage = c.meta("stage").unwrap_or("").to_string();
        let step = parse_meta(&c, "step")?;
        let expected = c.meta("fingerprint").map(str::to_string);
        let tensors = c.tensors.into_iter().map(|(_, t)| t).collect();
        let params = ModelParams::from_tensors(config, tensors).map_err(|e| e.to_string())?;
        let ck = Checkpoint {
            params,
            stage,
            step,
            train,
            rng,
        };
        if let Some(fp) = expected {
            if fp != hex(&ck.fingerprint()) {
                return Err("fingerprint does not match tensor contents".into());
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?).map_err(|reason| LremError::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}

pub struct ColdRun {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurveRecord>,
}

fn batches_per_epoch(n: usize, batch: usize) -> usize {
    // a trailing partial batch is kept when it still has in-batch negatives
    n / batch + usize::from(n % batch >= 2)
}

/// Stage-one training: shuffled batches of `batch_cold` triplets, one
/// optimizer step per batch with the warmup-cosine schedule.
pub fn cold_start_run(cfg: &TrainConfig, examples: &[ColdExample], params: ModelParams) -> Result<ColdRun> {
    cfg.validate()?;
    if examples.len() < 2 {
        return Err(LremError::InvalidArgument("cold start needs at least 2 triplets".into()));
    }
    let w = cfg.weights();
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed_cold);
    let mut opt = Optimizer::new(cfg.optimizer_cold, &params);
    let per_epoch = batches_per_epoch(examples.len(), cfg.batch_cold);
    let total = per_epoch * cfg.epochs_cold;
    let mut curve = Vec::with_capacity(total);
    let mut step = 0;
    for _ in 0..cfg.epochs_cold {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_cold).take(per_epoch) {
            let batch: Vec<&ColdExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let lr = lr_schedule(step + 1, total, cfg.lr_cold, cfg.warmup_ratio);
            let (loss, grads) = cold_gradients(&params, &batch, &w)?;
            if !loss.total.is_finite() {
                return Err(LremError::NonFinite(format!("cold-start loss at step {step}")));
            }
            opt.step(&mut params, &grads, lr)?;
            curve.push(CurveRecord {
                stage: "cold".into(),
                step,
                lr,
                loss_total: loss.total,
                loss_sft: Some(loss.sft),
                loss_grpo: None,
                loss_nce: loss.nce,
                mean_reward: None,
                format_rate: None,
                mean_rank: None,
            });
            step += 1;
        }
    }
    let mut checkpoint = Checkpoint::new(params, "cold", step);
    checkpoint.train = Some(*cfg);
    checkpoint.rng = Some(RngState::of(&rng));
    Ok(ColdRun { checkpoint, curve })
}

/// A query-item pair for the RL stage. There is no CoT: the policy writes its own.
#[derive(Debug, Clone, PartialEq)]
pub struct RlExample {
    pub query_id: u64,
    pub prompt: TokenSeq,
    pub item: TokenSeq,
}

pub fn rl_examples(vocab: &Vocab, corpus: &[CorpusRecord], pairs: &[RlPairRecord], max_len: usize) -> Result<Vec<RlExample>> {
    let titles = title_map(corpus);
    pairs
        .iter()
        .map(|p| {
            Ok(RlExample {
                query_id: p.query_id,
                prompt: render_query_input(vocab, &vocab.encode(&p.query)?, None, max_len)?,
                item: item_input(vocab, &titles, p.item_id, max_len)?,
            })
        })
        .collect()
}

/// Fixed probe: up to `n` eval queries spread over the file, each paired with
/// its lowest-id ground-truth item.
pub fn probe_examples(
    vocab: &Vocab,
    corpus: &[CorpusRecord],
    eval: &[EvalQueryRecord],
    n: usize,
    max_len: usize,
) -> Result<Vec<RlExample>> {
    let titles = title_map(corpus);
    let stride = (eval.len() / n.max(1)).max(1);
    eval.iter()
        .step_by(stride)
        .take(n)
        .map(|q| {
            let gt = *q
                .gt_ids
                .iter()
                .min()
                .ok_or_else(|| LremError::InvalidArgument(format!("eval query {} has no ground truth", q.query_id)))?;
            Ok(RlExample {
                query_id: q.query_id,
                prompt: render_query_input(vocab, &vocab.encode(&q.query)?, None, max_len)?,
                item: item_input(vocab, &titles, gt, max_len)?,
            })
        })
        .collect()
}

/// Packs pairs into batches of distinct queries, so no in-batch negative is
/// another positive of the same query. Each batch draws from the queries with
/// the most pairs left, which keeps batches full until the pool runs dry.
pub fn rl_batches(examples: &[RlExample], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut by_query: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        by_query.entry(e.query_id).or_default().push(i);
    }
    let mut pools: Vec<Vec<usize>> = by_query.into_values().collect();
    for p in &mut pools {
        p.shuffle(rng);
    }
    pools.shuffle(rng);
    let mut out = Vec::new();
    loop {
        // stable sort keeps the shuffled order among equal counts
        pools.sort_by_key(|p| std::cmp::Reverse(p.len()));
        let taken: Vec<usize> = pools.iter_mut().take(batch).filter_map(|p| p.pop()).collect();
        if taken.len() < 2 {
            break;
        }
        out.push(taken);
    }
    out.shuffle(rng);
    out
}

fn to_batch(examples: &[RlExample], idx: &[usize]) -> RlBatch {
    RlBatch {
        prompts: idx.iter().map(|&i| examples[i].prompt.clone()).collect(),
        items: idx.iter().map(|&i| examples[i].item.clone()).collect(),
    }
}

pub fn rl_settings(cfg: &TrainConfig, vocab: &Vocab) -> RlSettings {
    RlSettings {
        grpo: cfg.grpo(),
        reward: cfg.reward(),
        weights: cfg.weights(),
        special: vocab.special(),
    }
}

/// Mean total reward of `G` sampled rollouts per probe query, drawn with a
/// fixed seed so that two parameter sets are compared on common randomness.
pub fn probe_reward(params: &ModelParams, probe: &[RlExample], settings: &RlSettings, seed: u64) -> Result<ProbeStats> {
    if probe.len() < 2 {
        return Err(LremError::InvalidArgument("probe needs at least 2 queries".into()));
    }
    let idx: Vec<usize> = (0..probe.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = collect_batch(params, &to_batch(probe, &idx), settings, &mut rng)?;
    let (mean_reward, format_rate, mean_rank) = group_metrics(&groups);
    Ok(ProbeStats {
        mean_reward,
        format_rate,
        mean_rank,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub mean_reward: f64,
    pub format_rate: f64,
    pub mean_rank: f64,
}

pub struct RlRun {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurveRecord>,
    pub probe_start: Option<ProbeStats>,
    pub probe_end: Option<ProbeStats>,
}

/// Stage-two training: batches of distinct-query pairs, `G` rollouts per
/// query under a frozen snapshot, one GRPO + InfoNCE update per batch.
pub fn rl_run(
    cfg: &TrainConfig,
    vocab: &Vocab,
    examples: &[RlExample],
    start: Checkpoint,
    probe: Option<&[RlExample]>,
) -> Result<RlRun> {
    cfg.validate()?;
    let settings = rl_settings(cfg, vocab);
    let mut params = start.params;
    let probe_seed = cfg.seed_rl ^ 0x9e37_79b9_7f4a_7c15;
    let probe_start = probe.map(|p| probe_reward(&params, p, &settings, probe_seed)).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed_rl);
    let mut opt = Optimizer::new(cfg.optimizer_rl, &params);
    let mut plan = Vec::new();
    for _ in 0..cfg.epochs_rl {
        plan.extend(rl_batches(examples, cfg.batch_rl, &mut rng));
    }
    let total = plan.len();
    let mut curve = Vec::with_capacity(total);
    for (step, idx) in plan.iter().enumerate() {
        let lr = lr_schedule(step + 1, total, cfg.lr_rl, cfg.warmup_ratio);
        let m = rl_step(&mut params, &to_batch(examples, idx), &settings, &mut opt, lr, &mut rng)?;
        curve.push(CurveRecord {
            stage: "rl".into(),
            step,
            lr,
            loss_total: m.loss.total,
            loss_sft: None,
            loss_grpo: Some(m.loss.grpo),
            loss_nce: m.loss.nce,
            mean_reward: Some(m.mean_reward),
            format_rate: Some(m.format_rate),
            mean_rank: Some(m.mean_rank).filter(|r| r.is_finite()),
        });
    }
    let probe_end = probe.map(|p| probe_reward(&params, p, &settings, probe_seed)).transpose()?;
    let mut checkpoint = Checkpoint::new(params, "rl", start.step + total);
    checkpoint.train = Some(*cfg);
    checkpoint.rng = Some(RngState::of(&rng));
    Ok(RlRun {
        checkpoint,
        curve,
        probe_start,
        probe_end,
    })
}

/// Per-stage wall-clock and headline numbers of a run, written next to checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub entries: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| LremError::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| LremError::io(path, e))
    }
}

#[cfg(test)]
mod tests;
