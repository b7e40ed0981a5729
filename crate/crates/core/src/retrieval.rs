//! Item-embedding index, exact cosine top-K search and evaluation metrics.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LremError, Result};
use crate::net::{self, tensor::dot, ModelParams, StopReason};
use crate::pipeline::{CorpusRecord, EvalQueryRecord, QueryCategory};
use crate::textcodec::{render_item_input, render_query_input, TokenSeq, Vocab};

pub const INDEX_MAGIC: &[u8] = b"LREMIDX1\n";

/// Unit-normalised item embeddings, sorted by item id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbIndex {
    pub ids: Vec<u64>,
    pub dim: usize,
    pub vectors: Vec<f64>,
    pub fingerprint: [u8; 32],
}

/// L2-normalised copy of `v`.
pub fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = dot(v, v).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(LremError::ZeroNorm);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Embeds `<bos> title <emb>` for every item. Titles that do not fit the
/// model's context are skipped; the second value counts them.
pub fn build_index(params: &ModelParams, vocab: &Vocab, corpus: &[CorpusRecord]) -> Result<(EmbIndex, usize)> {
    let mut rows: Vec<&CorpusRecord> = corpus.iter().collect();
    rows.sort_by_key(|r| r.id);
    if rows.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(LremError::InvalidArgument("duplicate item id in corpus".into()));
    }
    let dim = params.config.d_model;
    let mut ids = Vec::with_capacity(rows.len());
    let mut vectors = Vec::with_capacity(rows.len() * dim);
    let mut skipped = 0;
    for r in rows {
        let title = vocab.encode(&r.title)?;
        let input = match render_item_input(vocab, &title, params.config.max_seq_len) {
            Ok(x) => x,
            Err(LremError::SequenceTooLong { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let h = net::embed_last(params, &input, vocab.special())?;
        ids.push(r.id);
        vectors.extend(unit(&h)?);
    }
    Ok((
        EmbIndex {
            ids,
            dim,
            vectors,
            fingerprint: params.fingerprint(),
        },
        skipped,
    ))
}

impl EmbIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(INDEX_MAGIC.len() + 16 + self.ids.len() * 8 + self.vectors.len() * 8 + 32);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.fingerprint);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let body = bytes.strip_prefix(INDEX_MAGIC).ok_or("bad magic")?;
        let word = |i: usize| -> std::result::Result<u64, String> {
            body.get(i * 8..i * 8 + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .ok_or_else(|| "truncated header".to_string())
        };
        let n = word(0)? as usize;
        let dim = word(1)? as usize;
        let need = n
            .checked_mul(dim)
            .and_then(|nd| nd.checked_add(n))
            .and_then(|w| w.checked_add(2))
            .and_then(|w| w.checked_mul(8))
            .and_then(|b| b.checked_add(32))
            .ok_or("size overflow")?;
        if body.len() != need {
            return Err(format!("expected {need} bytes after magic, found {}", body.len()));
        }
        let ids: Vec<u64> = (0..n).map(|i| word(2 + i)).collect::<std::result::Result<_, _>>()?;
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err("ids are not strictly increasing".into());
        }
        let vectors: Vec<f64> = (0..n * dim).map(|i| word(2 + n + i).map(f64::from_bits)).collect::<std::result::Result<_, _>>()?;
        let mut fingerprint = [0u8; 32];
        fingerprint.copy_from_slice(&body[body.len() - 32..]);
        Ok(EmbIndex {
            ids,
            dim,
            vectors,
            fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| LremError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| LremError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| LremError::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}

/// Exact top-`k` by cosine, ties broken by ascending id. `k > n` returns all `n`.
pub fn topk(index: &EmbIndex, query: &[f64], k: usize) -> Result<Vec<(u64, f64)>> {
    if k == 0 {
        return Err(LremError::InvalidArgument("k must be >= 1".into()));
    }
    if query.len() != index.dim {
        return Err(LremError::Shape(format!("query dim {} vs index dim {}", query.len(), index.dim)));
    }
    let q = unit(query)?;
    let mut scored: Vec<(u64, f64)> = (0..index.len())
        .map(|i| (index.ids[i], dot(&q, index.vector(i))))
        .collect();
    let k = k.min(scored.len());
    let by_score = |a: &(u64, f64), b: &(u64, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, by_score);
        scored.truncate(k);
    }
    scored.sort_by(by_score);
    Ok(scored)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Lrem,
    EmptyCot,
    RandomCot,
    QueryCot,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [EvalMode::Lrem, EvalMode::EmptyCot, EvalMode::RandomCot, EvalMode::QueryCot];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Lrem => "lrem",
            EvalMode::EmptyCot => "empty_cot",
            EvalMode::RandomCot => "random_cot",
            EvalMode::QueryCot => "query_cot",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = LremError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lrem" => Ok(EvalMode::Lrem),
            "empty_cot" | "empty" => Ok(EvalMode::EmptyCot),
            "random_cot" | "random" => Ok(EvalMode::RandomCot),
            "query_cot" | "query" => Ok(EvalMode::QueryCot),
            other => Err(LremError::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    pub vector: Vec<f64>,
    /// The CoT placed inside the think span.
    pub cot: TokenSeq,
    /// In lrem mode: the greedy continuation, including terminators.
    pub generated: Option<TokenSeq>,
    /// Lrem generation hit the length cap and the empty-CoT rendering was used.
    pub fallback: bool,
}

/// Renders the query per `mode`, runs the model and returns the unit `<emb>` state.
pub fn embed_query<R: Rng + ?Sized>(
    params: &ModelParams,
    vocab: &Vocab,
    query: &TokenSeq,
    mode: EvalMode,
    cot_len: usize,
    rng: &mut R,
) -> Result<QueryEmbedding> {
    let sp = vocab.special();
    let max = params.config.max_seq_len;
    let fixed = |cot: TokenSeq, generated: Option<TokenSeq>, fallback: bool| -> Result<QueryEmbedding> {
        let input = render_query_input(vocab, query, Some(&cot), max)?;
        let h = net::embed_last(params, &input, sp)?;
        Ok(QueryEmbedding {
            vector: unit(&h)?,
            cot,
            generated,
            fallback,
        })
    };
    match mode {
        EvalMode::EmptyCot => fixed(TokenSeq::empty(), None, false),
        EvalMode::QueryCot => fixed(TokenSeq(query.ids().iter().copied().take(cot_len).collect()), None, false),
        EvalMode::RandomCot => {
            let surface: Vec<u32> = vocab.surface_ids().collect();
            if surface.is_empty() {
                return Err(LremError::InvalidArgument("vocabulary has no surface tokens".into()));
            }
            let cot = (0..cot_len).map(|_| surface[rng.random_range(0..surface.len())]).collect();
            fixed(TokenSeq(cot), None, false)
        }
        EvalMode::Lrem => {
            let prompt = render_query_input(vocab, query, None, max)?;
            let out = net::greedy_cot(params, &prompt, sp, net::hard_cap(cot_len))?;
            if out.stop_reason == StopReason::LengthCap {
                return fixed(TokenSeq::empty(), Some(out.new_tokens), true);
            }
            let full = net::concat(&prompt, &out.new_tokens);
            let h = net::embed_last(params, &full, sp)?;
            let ids = out.new_tokens.ids();
            let cot_end = ids.iter().position(|&t| t == sp.think_close).unwrap_or(ids.len() - 1);
            Ok(QueryEmbedding {
                vector: unit(&h)?,
                cot: TokenSeq(ids[..cot_end].to_vec()),
                generated: Some(out.new_tokens),
                fallback: false,
            })
        }
    }
}

/// `|retrieved ∩ gt| / |gt|`.
pub fn hitrate_at_k(retrieved: &[u64], ground_truth: &[u64]) -> Result<f64> {
    if ground_truth.is_empty() {
        return Err(LremError::InvalidArgument("empty ground truth".into()));
    }
    let gt: HashSet<u64> = ground_truth.iter().copied().collect();
    let hits = retrieved.iter().collect::<HashSet<_>>().into_iter().filter(|id| gt.contains(id)).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Judged-relevant share of the first `kp` results, over `kp`.
pub fn precision_at_k(retrieved: &[u64], kp: usize, mut judge: impl FnMut(u64) -> bool) -> Result<f64> {
    if kp == 0 {
        return Err(LremError::InvalidArgument("kp must be >= 1".into()));
    }
    let relevant = retrieved.iter().take(kp).filter(|&&id| judge(id)).count();
    Ok(relevant as f64 / kp as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub queries: usize,
    pub hitrate: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub k: usize,
    pub kp: usize,
    pub overall: SliceMetrics,
    pub per_category: BTreeMap<String, SliceMetrics>,
    /// Lrem mode only: greedy generations that were well-formed.
    pub well_formed: usize,
    /// Lrem mode only: generations that hit the length cap.
    pub fallbacks: usize,
}

impl EvalReport {
    /// Query-weighted HitRate over the given categories.
    pub fn slice_hitrate(&self, cats: &[QueryCategory]) -> f64 {
        let (mut n, mut s) = (0usize, 0.0);
        for c in cats {
            if let Some(m) = self.per_category.get(c.as_str()) {
                n += m.queries;
                s += m.hitrate * m.queries as f64;
            }
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }

    pub fn format_rate(&self) -> f64 {
        if self.overall.queries == 0 {
            0.0
        } else {
            self.well_formed as f64 / self.overall.queries as f64
        }
    }

    /// Per-category grid, one row per category plus the overall row.
    pub fn table(&self) -> String {
        let mut s = format!(
            "mode {}\n{:<12} {:>7} {:>10} {:>12}\n",
            self.mode,
            "category",
            "queries",
            format!("HR@{}", self.k),
            format!("P@{}", self.kp)
        );
        for (name, m) in self.per_category.iter().chain(std::iter::once((&"overall".to_string(), &self.overall))) {
            s.push_str(&format!(
                "{:<12} {:>7} {:>10.4} {:>12.4}\n",
                name, m.queries, m.hitrate, m.precision
            ));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| LremError::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub mode: EvalMode,
    pub k: usize,
    pub kp: usize,
    pub cot_len: usize,
    pub seed: u64,
}

/// Evaluates every query and micro-averages per category and overall.
/// Relevance for precision is ground-truth membership, which is what the
/// world's judge computes.
pub fn eval_run(
    params: &ModelParams,
    vocab: &Vocab,
    index: &EmbIndex,
    queries: &[EvalQueryRecord],
    settings: &EvalSettings,
) -> Result<EvalReport> {
    if index.fingerprint != params.fingerprint() {
        return Err(LremError::FingerprintMismatch);
    }
    if settings.k == 0 || settings.kp == 0 {
        return Err(LremError::InvalidArgument("k and kp must be >= 1".into()));
    }
    let sp = vocab.special();
    let mut per: BTreeMap<String, SliceMetrics> = BTreeMap::new();
    let mut overall = SliceMetrics::default();
    let (mut well_formed, mut fallbacks) = (0, 0);
    for q in queries {
        let tokens = vocab.encode(&q.query)?;
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(q.query_id);
        let e = embed_query(params, vocab, &tokens, settings.mode, settings.cot_len, &mut rng)?;
        if let Some(g) = &e.generated {
            if crate::reward::is_well_formed(g, sp) {
                well_formed += 1;
            }
        }
        fallbacks += e.fallback as usize;
        let ranked: Vec<u64> = topk(index, &e.vector, settings.k.max(settings.kp))?
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        let hr = hitrate_at_k(&ranked[..settings.k.min(ranked.len())], &q.gt_ids)?;
        let gt: HashSet<u64> = q.gt_ids.iter().copied().collect();
        let p = precision_at_k(&ranked, settings.kp, |id| gt.contains(&id))?;
        for m in [per.entry(q.category.to_string()).or_default(), &mut overall] {
            m.queries += 1;
            m.hitrate += hr;
            m.precision += p;
        }
    }
    for m in per.values_mut().chain(std::iter::once(&mut overall)) {
        if m.queries > 0 {
            m.hitrate /= m.queries as f64;
            m.precision /= m.queries as f64;
        }
    }
    Ok(EvalReport {
        mode: settings.mode,
        k: settings.k,
        kp: settings.kp,
        overall,
        per_category: per,
        well_formed,
        fallbacks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub id: u64,
    pub score: f64,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub cot: String,
    pub fallback: bool,
    pub hits: Vec<SearchHit>,
}

/// One interactive query: the CoT that was used and the top-`k` rows.
pub fn search(
    params: &ModelParams,
    vocab: &Vocab,
    index: &EmbIndex,
    corpus: &[CorpusRecord],
    query: &str,
    mode: EvalMode,
    k: usize,
    cot_len: usize,
    seed: u64,
) -> Result<SearchResult> {
    if index.fingerprint != params.fingerprint() {
        return Err(LremError::FingerprintMismatch);
    }
    let tokens = vocab.encode(query)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = embed_query(params, vocab, &tokens, mode, cot_len, &mut rng)?;
    let titles: BTreeMap<u64, &str> = corpus.iter().map(|r| (r.id, r.title.as_str())).collect();
    let hits = topk(index, &e.vector, k)?
        .into_iter()
        .map(|(id, score)| SearchHit {
            id,
            score,
            title: titles.get(&id).copied().unwrap_or("").to_string(),
        })
        .collect();
    Ok(SearchResult {
        cot: vocab.decode(&e.cot),
        fallback: e.fallback,
        hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_index(n: usize, dim: usize, seed: u64) -> EmbIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Vec::new();
        for _ in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            vectors.extend(unit(&v).unwrap());
        }
        EmbIndex {
            ids: (0..n as u64).map(|i| 3 * i + 1).collect(),
            dim,
            vectors,
            fingerprint: [7; 32],
        }
    }

    fn brute_force(index: &EmbIndex, q: &[f64], k: usize) -> Vec<(u64, f64)> {
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let q: Vec<f64> = q.iter().map(|x| x / norm).collect();
        let mut all: Vec<(u64, f64)> = (0..index.len())
            .map(|i| (index.ids[i], q.iter().zip(index.vector(i)).map(|(a, b)| a * b).sum()))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn topk_matches_brute_force_with_ties() {
        let mut idx = random_index(300, 6, 1);
        // duplicate a block of rows to force exact ties
        for i in 0..20 {
            let v = idx.vector(i).to_vec();
            idx.vectors[(100 + i) * 6..(101 + i) * 6].copy_from_slice(&v);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in 0..50 {
            let q: Vec<f64> = if t % 2 == 0 {
                idx.vector(t).to_vec()
            } else {
                (0..6).map(|_| StandardNormal.sample(&mut rng)).collect()
            };
            for k in [1, 7, 300, 500] {
                assert_eq!(topk(&idx, &q, k).unwrap(), brute_force(&idx, &q, k));
            }
        }
    }

    #[test]
    fn topk_examples() {
        let idx = random_index(50, 4, 3);
        let all = topk(&idx, idx.vector(9), 50).unwrap();
        assert_eq!(all.len(), 50);
        assert_eq!(all[0].0, idx.ids[9]);
        assert!((all[0].1 - 1.0).abs() < 1e-12);
        assert!(all.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(topk(&idx, idx.vector(0), 0).is_err());
        assert!(topk(&idx, &[1.0, 0.0], 3).is_err());
        assert!(matches!(topk(&idx, &[0.0; 4], 3), Err(LremError::ZeroNorm)));
    }

    #[test]
    fn index_bytes_round_trip() {
        let idx = random_index(10, 3, 4);
        let bytes = idx.to_bytes();
        assert!(bytes.starts_with(INDEX_MAGIC));
        assert_eq!(EmbIndex::from_bytes(&bytes).unwrap(), idx);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EmbIndex::from_bytes(&bad).is_err());
        assert!(EmbIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn metric_examples() {
        assert_eq!(hitrate_at_k(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap(), 1.0);
        assert_eq!(hitrate_at_k(&[9, 8], &[1, 2]).unwrap(), 0.0);
        assert_eq!(hitrate_at_k(&[1, 9, 3], &[1, 2, 3, 4]).unwrap(), 0.5);
        assert!(hitrate_at_k(&[1], &[]).is_err());
        assert_eq!(precision_at_k(&[1, 2, 3], 3, |_| true).unwrap(), 1.0);
        assert_eq!(precision_at_k(&[1, 2, 3], 3, |_| false).unwrap(), 0.0);
        let ten: Vec<u64> = (0..10).collect();
        assert_eq!(precision_at_k(&ten, 10, |i| i % 2 == 0).unwrap(), 0.5);
        assert!(precision_at_k(&ten, 0, |_| true).is_err());
    }

    fn tiny_vocab() -> Vocab {
        Vocab::from_surface(["red", "blue", "shoe", "hat", "alt", "to", "big", "old", "new", "x", "y"]).unwrap()
    }

    #[test]
    fn modes_render_as_described() {
        let v = tiny_vocab();
        let p = ModelParams::init(ModelConfig::micro(v.len()), 5).unwrap();
        let q = v.encode("alt to red shoe").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = embed_query(&p, &v, &q, EvalMode::EmptyCot, 4, &mut rng).unwrap();
        assert!(empty.cot.is_empty());
        let input = render_query_input(&v, &q, Some(&TokenSeq::empty()), 64).unwrap();
        assert_eq!(v.decode(&input), "<bos> alt to red shoe <think> </think> <emb>");
        let qc = embed_query(&p, &v, &q, EvalMode::QueryCot, 16, &mut rng).unwrap();
        assert_eq!(qc.cot, q);
        let rc = embed_query(&p, &v, &q, EvalMode::RandomCot, 4, &mut rng).unwrap();
        assert_eq!(rc.cot.len(), 4);
        assert!(rc.cot.ids().iter().all(|&t| !v.is_special(t)));
        let a = embed_query(&p, &v, &q, EvalMode::Lrem, 4, &mut rng).unwrap();
        let b = embed_query(&p, &v, &q, EvalMode::Lrem, 4, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
        // a capped generation falls back to the empty rendering
        assert_eq!(a.fallback, a.vector == empty.vector);
        let vs = [&empty.vector, &qc.vector, &rc.vector];
        for i in 0..3 {
            assert!((vs[i].iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert_ne!(vs[i], vs[j]);
            }
        }
    }

    #[test]
    fn built_index_is_normalised_and_deterministic() {
        let v = tiny_vocab();
        let p = ModelParams::init(ModelConfig::micro(v.len()), 6).unwrap();
        let corpus: Vec<CorpusRecord> = [(5, "red shoe"), (2, "blue hat big"), (9, "red shoe"), (4, "x y x y x y x y x y x y x y x y x y x y x y x")]
            .iter()
            .map(|&(id, t)| CorpusRecord { id, title: t.to_string() })
            .collect();
        let (idx, skipped) = build_index(&p, &v, &corpus).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(idx.ids, vec![2, 5, 9]);
        assert_eq!(idx.vector(1), idx.vector(2));
        for i in 0..idx.len() {
            assert!((idx.vector(i).iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(build_index(&p, &v, &corpus).unwrap().0.to_bytes(), idx.to_bytes());

        let queries = vec![EvalQueryRecord {
            query_id: 0,
            query: "alt to red shoe".into(),
            category: QueryCategory::Alternative,
            gt_ids: vec![2],
        }];
        let s = EvalSettings { mode: EvalMode::Lrem, k: 2, kp: 1, cot_len: 4, seed: 0 };
        let r = eval_run(&p, &v, &idx, &queries, &s).unwrap();
        assert_eq!(r, eval_run(&p, &v, &idx, &queries, &s).unwrap());
        assert_eq!(r.overall.queries, 1);
        let other = ModelParams::init(ModelConfig::micro(v.len()), 7).unwrap();
        assert!(matches!(eval_run(&other, &v, &idx, &queries, &s), Err(LremError::FingerprintMismatch)));
        let hits = search(&p, &v, &idx, &corpus, "red hat", EvalMode::EmptyCot, 10, 4, 0).unwrap();
        assert_eq!(hits.hits.len(), 3);
        assert!(hits.hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ordering_invariant_under_positive_scaling(seed in 0u64..1000, scale in 1e-3f64..1e3) {
            let idx = random_index(80, 5, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let q: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut rng)).collect();
            let scaled: Vec<f64> = q.iter().map(|x| x * scale).collect();
            let a: Vec<u64> = topk(&idx, &q, 80).unwrap().into_iter().map(|r| r.0).collect();
            let b: Vec<u64> = topk(&idx, &scaled, 80).unwrap().into_iter().map(|r| r.0).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn hitrate_monotone_in_k(seed in 0u64..1000, m in 1usize..20) {
            let idx = random_index(60, 4, seed);
            let gt: Vec<u64> = idx.ids.iter().copied().step_by(60 / m).take(m).collect();
            let ranked: Vec<u64> = topk(&idx, idx.vector(0), 60).unwrap().into_iter().map(|r| r.0).collect();
            let mut prev = 0.0;
            for k in 1..=60 {
                let h = hitrate_at_k(&ranked[..k], &gt).unwrap();
                prop_assert!(h >= prev && (0.0..=1.0).contains(&h));
                prev = h;
            }
        }
    }
}
