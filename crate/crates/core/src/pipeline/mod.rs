//! Synthetic shopping world and Query-CoT-Item data construction.
//!
//! The teacher model and the relevance model are exact rule oracles over the
//! world; a lexical token-count retriever stands in for the first-generation
//! retriever that produces the bare-query and CoT-augmented result sets.

mod world;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LremError, Result};
use crate::textcodec::Vocab;

pub use world::{
    gen_world, Activity, Category, Produce, World, WorldSizes, ACCESSORY_DESCRIPTORS, PRODUCE_PACK, PRODUCE_QUALITY,
    PROHIBITED, SEASON_LENGTH,
};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const TRIPLETS_FILE: &str = "triplets.jsonl";
pub const RL_PAIRS_FILE: &str = "rl_pairs.jsonl";
pub const EVAL_FILE: &str = "queries_eval.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryCategory {
    Qa,
    Alternative,
    Negative,
    Knowledge,
}

impl QueryCategory {
    pub const ALL: [QueryCategory; 4] = [
        QueryCategory::Qa,
        QueryCategory::Alternative,
        QueryCategory::Negative,
        QueryCategory::Knowledge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryCategory::Qa => "qa",
            QueryCategory::Alternative => "alternative",
            QueryCategory::Negative => "negative",
            QueryCategory::Knowledge => "knowledge",
        }
    }
}

impl std::str::FromStr for QueryCategory {
    type Err = LremError;

    fn from_str(s: &str) -> Result<Self> {
        QueryCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| LremError::InvalidArgument(format!("unknown query category `{s}`")))
    }
}

impl std::fmt::Display for QueryCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Surface templates per category, indexed like `QueryCategory::ALL`.
pub const TEMPLATES: [[&str; 3]; 4] = [
    ["what to bring for {act}", "gear for {act}", "{act} essentials"],
    ["alternative to {b} {c}", "cheaper {c} like {b}", "{b} {c} dupe"],
    ["{c} without {a}", "no {a} {c}", "{c} not {a}"],
    ["seasonal fruit {m}", "what is fresh in {m}", "{m} produce"],
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ItemLatent {
    Goods {
        brand: usize,
        category: usize,
        attributes: Vec<usize>,
    },
    Accessory {
        brand: usize,
        activity: usize,
        accessory: usize,
        descriptors: Vec<usize>,
    },
    Produce {
        produce: usize,
        quality: usize,
        pack: usize,
    },
}

impl ItemLatent {
    /// Month tags; only produce carries any.
    pub fn months<'w>(&self, world: &'w World) -> &'w [usize] {
        match self {
            ItemLatent::Produce { produce, .. } => &world.produce[*produce].months,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemDoc {
    pub id: u64,
    pub title: Vec<String>,
    pub latent: ItemLatent,
}

pub fn title_of(world: &World, latent: &ItemLatent) -> Vec<String> {
    match latent {
        ItemLatent::Goods { brand, category, attributes } => {
            let c = &world.categories[*category];
            let mut t = vec![world.brands[*brand].clone(), c.name.clone()];
            t.extend(attributes.iter().map(|&a| c.attributes[a].clone()));
            t
        }
        ItemLatent::Accessory { brand, activity, accessory, descriptors } => {
            let mut t = vec![
                world.brands[*brand].clone(),
                world.activities[*activity].accessories[*accessory].clone(),
            ];
            t.extend(descriptors.iter().map(|&d| ACCESSORY_DESCRIPTORS[d].to_string()));
            t
        }
        ItemLatent::Produce { produce, quality, pack } => vec![
            PRODUCE_QUALITY[*quality].to_string(),
            world.produce[*produce].name.clone(),
            PRODUCE_PACK[*pack].to_string(),
        ],
    }
}

fn sample_sorted<R: Rng + ?Sized>(rng: &mut R, pool: usize, lo: usize, hi: usize) -> Vec<usize> {
    let count = rng.random_range(lo..=hi.min(pool)).max(1).min(pool);
    let mut picked = rand::seq::index::sample(rng, pool, count).into_vec();
    picked.sort_unstable();
    picked
}

/// 60% branded goods, 20% activity accessories, 20% produce. Every
/// (brand, category) pair, accessory type and produce type is realised
/// round-robin before repeats, so small corpora still cover the relations.
pub fn gen_corpus(world: &World, n: usize) -> Result<Vec<ItemDoc>> {
    if n == 0 {
        return Err(LremError::InvalidArgument("corpus size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(world.seed);
    rng.set_stream(1);
    let n_goods = n * 6 / 10;
    let n_acc = n * 2 / 10;
    let n_produce = n - n_goods - n_acc;
    let nb = world.brands.len();
    let nc = world.categories.len();
    let acc_types = world.accessory_types();

    let mut latents = Vec::with_capacity(n);
    for j in 0..n_goods {
        let pair = j % (nb * nc);
        let category = pair / nb;
        let attrs = world.categories[category].attributes.len();
        latents.push(ItemLatent::Goods {
            brand: pair % nb,
            category,
            attributes: sample_sorted(&mut rng, attrs, 1, world.max_item_attributes),
        });
    }
    for j in 0..n_acc {
        let (activity, accessory) = acc_types[j % acc_types.len()];
        latents.push(ItemLatent::Accessory {
            brand: rng.random_range(0..nb),
            activity,
            accessory,
            descriptors: sample_sorted(&mut rng, ACCESSORY_DESCRIPTORS.len(), 1, 2),
        });
    }
    for j in 0..n_produce {
        latents.push(ItemLatent::Produce {
            produce: j % world.produce.len(),
            quality: rng.random_range(0..PRODUCE_QUALITY.len()),
            pack: rng.random_range(0..PRODUCE_PACK.len()),
        });
    }
    latents.shuffle(&mut rng);
    Ok(latents
        .into_iter()
        .enumerate()
        .map(|(i, latent)| ItemDoc {
            id: i as u64,
            title: title_of(world, &latent),
            latent,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Relation {
    Qa { activity: usize },
    Alternative { brand: usize, category: usize },
    Negative { category: usize, attribute: usize },
    Knowledge { month: usize },
}

impl Relation {
    pub fn category(&self) -> QueryCategory {
        match self {
            Relation::Qa { .. } => QueryCategory::Qa,
            Relation::Alternative { .. } => QueryCategory::Alternative,
            Relation::Negative { .. } => QueryCategory::Negative,
            Relation::Knowledge { .. } => QueryCategory::Knowledge,
        }
    }

    /// Ground-truth relation between a query and an item.
    pub fn holds(&self, world: &World, item: &ItemLatent) -> bool {
        match (*self, item) {
            (Relation::Qa { activity }, ItemLatent::Accessory { activity: a, .. }) => activity == *a,
            (Relation::Alternative { brand, category }, ItemLatent::Goods { brand: b, category: c, .. }) => {
                *c == category && *b != brand && world.peers_of(brand).contains(b)
            }
            (Relation::Negative { category, attribute }, ItemLatent::Goods { category: c, attributes, .. }) => {
                *c == category && !attributes.contains(&attribute)
            }
            (Relation::Knowledge { month }, ItemLatent::Produce { .. }) => item.months(world).contains(&month),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySpec {
    pub id: u64,
    pub tokens: Vec<String>,
    pub category: QueryCategory,
    pub relation: Relation,
    pub ground_truth: Vec<u64>,
}

impl QuerySpec {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

fn fill_template(template: &str, world: &World, rel: &Relation) -> Vec<String> {
    template
        .split_whitespace()
        .map(|w| match (w, rel) {
            ("{act}", Relation::Qa { activity }) => world.activities[*activity].name.clone(),
            ("{b}", Relation::Alternative { brand, .. }) => world.brands[*brand].clone(),
            ("{c}", Relation::Alternative { category, .. }) | ("{c}", Relation::Negative { category, .. }) => {
                world.categories[*category].name.clone()
            }
            ("{a}", Relation::Negative { category, attribute }) => {
                world.categories[*category].attributes[*attribute].clone()
            }
            ("{m}", Relation::Knowledge { month }) => world.months[*month].clone(),
            _ => w.to_string(),
        })
        .collect()
}

fn sample_relation<R: Rng + ?Sized>(world: &World, cat: QueryCategory, rng: &mut R) -> Relation {
    match cat {
        QueryCategory::Qa => Relation::Qa {
            activity: rng.random_range(0..world.activities.len()),
        },
        QueryCategory::Alternative => Relation::Alternative {
            brand: rng.random_range(0..world.brands.len()),
            category: rng.random_range(0..world.categories.len()),
        },
        QueryCategory::Negative => {
            let category = rng.random_range(0..world.categories.len());
            Relation::Negative {
                category,
                attribute: rng.random_range(0..world.categories[category].attributes.len()),
            }
        }
        QueryCategory::Knowledge => Relation::Knowledge {
            month: rng.random_range(0..world.months.len()),
        },
    }
}

/// Samples `n_per_category` queries per category with ids starting at
/// `first_id`. A relation with empty ground truth is resampled; 100
/// consecutive failures is an error.
pub fn gen_queries<R: Rng + ?Sized>(
    world: &World,
    corpus: &[ItemDoc],
    n_per_category: usize,
    first_id: u64,
    rng: &mut R,
) -> Result<Vec<QuerySpec>> {
    let mut out = Vec::with_capacity(4 * n_per_category);
    for (ci, cat) in QueryCategory::ALL.into_iter().enumerate() {
        for _ in 0..n_per_category {
            let mut failures = 0;
            loop {
                let relation = sample_relation(world, cat, rng);
                let template = TEMPLATES[ci].choose(rng).expect("templates are non-empty");
                let ground_truth: Vec<u64> = corpus
                    .iter()
                    .filter(|d| relation.holds(world, &d.latent))
                    .map(|d| d.id)
                    .collect();
                if !ground_truth.is_empty() {
                    out.push(QuerySpec {
                        id: first_id + out.len() as u64,
                        tokens: fill_template(template, world, &relation),
                        category: cat,
                        relation,
                        ground_truth,
                    });
                    break;
                }
                failures += 1;
                if failures >= 100 {
                    return Err(LremError::InvalidArgument(format!(
                        "could not sample a {cat} query with non-empty ground truth"
                    )));
                }
            }
        }
    }
    Ok(out)
}

/// The keywords that connect a query to its targets, before post-processing.
pub fn bridging_keywords(world: &World, relation: &Relation) -> Vec<String> {
    match *relation {
        Relation::Qa { activity } => world.activities[activity].accessories.clone(),
        Relation::Alternative { brand, .. } => world
            .peers_of(brand)
            .iter()
            .filter(|&&b| b != brand)
            .map(|&b| world.brands[b].clone())
            .collect(),
        Relation::Negative { category, attribute } => {
            let c = &world.categories[category];
            std::iter::once(c.name.clone())
                .chain(
                    c.attributes
                        .iter()
                        .enumerate()
                        .filter(|&(a, _)| a != attribute)
                        .map(|(_, s)| s.clone()),
                )
                .collect()
        }
        Relation::Knowledge { month } => world
            .in_season(month)
            .into_iter()
            .map(|p| world.produce[p].name.clone())
            .collect(),
    }
}

/// Drops duplicates (first occurrence wins), words present in the query and prohibited words.
pub fn postprocess(keywords: Vec<String>, query: &[String], prohibited: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    keywords
        .into_iter()
        .filter(|k| !query.contains(k) && !prohibited.contains(k))
        .filter(|k| seen.insert(k.clone()))
        .collect()
}

/// Teacher CoT: bridging keywords, each followed with probability `noise` by
/// a random non-bridging word, then post-processed and truncated to `max_len`.
pub fn cot_oracle<R: Rng + ?Sized>(
    world: &World,
    query: &QuerySpec,
    noise: f64,
    max_len: usize,
    rng: &mut R,
) -> Vec<String> {
    let bridging = bridging_keywords(world, &query.relation);
    let mut raw = Vec::with_capacity(2 * bridging.len());
    if noise > 0.0 {
        let pool: Vec<String> = world
            .surface_tokens()
            .into_iter()
            .filter(|t| !bridging.contains(t))
            .collect();
        for k in bridging {
            raw.push(k);
            if rng.random::<f64>() < noise {
                raw.push(pool.choose(rng).expect("pool is non-empty").clone());
            }
        }
    } else {
        raw = bridging;
    }
    let mut cot = postprocess(raw, &query.tokens, &world.prohibited);
    cot.truncate(max_len);
    cot
}

/// Token-count cosine retriever over item titles.
pub struct LexicalIndex {
    vocab: HashMap<String, usize>,
    items: Vec<(u64, Vec<(usize, f64)>, f64)>,
}

fn counts(tokens: &[String], vocab: &mut HashMap<String, usize>) -> Vec<(usize, f64)> {
    let mut m: BTreeMap<usize, f64> = BTreeMap::new();
    for t in tokens {
        let next = vocab.len();
        let id = *vocab.entry(t.clone()).or_insert(next);
        *m.entry(id).or_insert(0.0) += 1.0;
    }
    m.into_iter().collect()
}

fn norm(v: &[(usize, f64)]) -> f64 {
    v.iter().map(|(_, c)| c * c).sum::<f64>().sqrt()
}

impl LexicalIndex {
    pub fn new(corpus: &[ItemDoc]) -> Self {
        let mut vocab = HashMap::new();
        let items = corpus
            .iter()
            .map(|d| {
                let v = counts(&d.title, &mut vocab);
                let n = norm(&v);
                (d.id, v, n)
            })
            .collect();
        LexicalIndex { vocab, items }
    }

    pub fn scores(&self, tokens: &[String]) -> Vec<(u64, f64)> {
        // words unseen in titles still count towards the query norm
        let mut vocab = self.vocab.clone();
        let q = counts(tokens, &mut vocab);
        let qn = norm(&q);
        let qmap: HashMap<usize, f64> = q.into_iter().collect();
        self.items
            .iter()
            .map(|(id, v, n)| {
                let dot: f64 = v.iter().map(|(t, c)| c * qmap.get(t).copied().unwrap_or(0.0)).sum();
                let s = if qn > 0.0 && *n > 0.0 { dot / (qn * n) } else { 0.0 };
                (*id, s)
            })
            .collect()
    }

    /// Top-`k` ids by cosine, ties broken by ascending id.
    pub fn retrieve(&self, tokens: &[String], k: usize) -> Vec<u64> {
        let mut s = self.scores(tokens);
        s.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        s.into_iter().take(k).map(|(id, _)| id).collect()
    }
}

pub fn lexical_retrieve(corpus: &[ItemDoc], tokens: &[String], k: usize) -> Result<Vec<u64>> {
    if k == 0 {
        return Err(LremError::InvalidArgument("k must be >= 1".into()));
    }
    Ok(LexicalIndex::new(corpus).retrieve(tokens, k))
}

pub fn relevance_judge(world: &World, query: &QuerySpec, item: &ItemDoc) -> bool {
    query.relation.holds(world, &item.latent)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k: usize,
    pub noise: f64,
    pub cot_max: usize,
    pub rl_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 20,
            noise: 0.0,
            cot_max: 16,
            rl_fraction: 0.1,
            seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(LremError::Config("pipeline k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(LremError::Config("noise must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.rl_fraction) {
            return Err(LremError::Config("rl fraction must lie in [0, 1)".into()));
        }
        if self.cot_max == 0 {
            return Err(LremError::Config("cot length must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryFate {
    Kept,
    EmptyDifference,
    NothingRelevant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query_id: u64,
    pub cot: Vec<String>,
    pub difference: Vec<u64>,
    pub kept: Vec<u64>,
    pub fate: QueryFate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: u64,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub query_id: u64,
    pub query: String,
    pub cot: String,
    pub item_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RlPairRecord {
    pub query_id: u64,
    pub query: String,
    pub item_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQueryRecord {
    pub query_id: u64,
    pub query: String,
    pub category: QueryCategory,
    pub gt_ids: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub queries: usize,
    pub emitted: usize,
    pub discarded: usize,
    pub triplets: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub discarded: usize,
    pub emitted: usize,
    pub discarded_empty_difference: usize,
    pub discarded_nothing_relevant: usize,
    pub cold_queries: usize,
    pub rl_queries: usize,
    pub triplets: usize,
    pub rl_pairs: usize,
    pub per_category: BTreeMap<String, CategoryStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub triplets: Vec<TripletRecord>,
    pub rl_pairs: Vec<RlPairRecord>,
    pub outcomes: Vec<QueryOutcome>,
    pub stats: Stats,
}

pub fn build_triplets(
    world: &World,
    corpus: &[ItemDoc],
    queries: &[QuerySpec],
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let index = LexicalIndex::new(corpus);
    let by_id: HashMap<u64, &ItemDoc> = corpus.iter().map(|d| (d.id, d)).collect();
    let mut stats = Stats::default();
    let mut outcomes = Vec::with_capacity(queries.len());

    for q in queries {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(q.id);
        let cot = cot_oracle(world, q, cfg.noise, cfg.cot_max, &mut rng);
        let first: HashSet<u64> = index.retrieve(&q.tokens, cfg.k).into_iter().collect();
        let augmented: Vec<String> = q.tokens.iter().chain(&cot).cloned().collect();
        let difference: Vec<u64> = index
            .retrieve(&augmented, cfg.k)
            .into_iter()
            .filter(|id| !first.contains(id))
            .collect();
        let kept: Vec<u64> = difference
            .iter()
            .copied()
            .filter(|id| relevance_judge(world, q, by_id[id]))
            .collect();
        let fate = if difference.is_empty() {
            QueryFate::EmptyDifference
        } else if kept.is_empty() {
            QueryFate::NothingRelevant
        } else {
            QueryFate::Kept
        };
        let cs = stats.per_category.entry(q.category.to_string()).or_default();
        cs.queries += 1;
        match fate {
            QueryFate::Kept => {
                cs.emitted += 1;
                cs.triplets += kept.len();
                stats.emitted += 1;
            }
            QueryFate::EmptyDifference => {
                cs.discarded += 1;
                stats.discarded += 1;
                stats.discarded_empty_difference += 1;
            }
            QueryFate::NothingRelevant => {
                cs.discarded += 1;
                stats.discarded += 1;
                stats.discarded_nothing_relevant += 1;
            }
        }
        outcomes.push(QueryOutcome {
            query_id: q.id,
            cot,
            difference,
            kept,
            fate,
        });
    }

    let mut emitted: Vec<u64> = outcomes
        .iter()
        .filter(|o| o.fate == QueryFate::Kept)
        .map(|o| o.query_id)
        .collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    split_rng.set_stream(u64::MAX);
    emitted.shuffle(&mut split_rng);
    let n_rl = ((emitted.len() as f64) * cfg.rl_fraction).round() as usize;
    let rl_ids: HashSet<u64> = emitted[..n_rl].iter().copied().collect();

    let mut triplets = Vec::new();
    let mut rl_pairs = Vec::new();
    for (q, o) in queries.iter().zip(&outcomes) {
        let text = q.text();
        if rl_ids.contains(&q.id) {
            for &item_id in &o.kept {
                rl_pairs.push(RlPairRecord {
                    query_id: q.id,
                    query: text.clone(),
                    item_id,
                });
            }
        } else {
            let cot = o.cot.join(" ");
            for &item_id in &o.kept {
                triplets.push(TripletRecord {
                    query_id: q.id,
                    query: text.clone(),
                    cot: cot.clone(),
                    item_id,
                });
            }
        }
    }
    stats.rl_queries = n_rl;
    stats.cold_queries = emitted.len() - n_rl;
    stats.triplets = triplets.len();
    stats.rl_pairs = rl_pairs.len();
    Ok(PipelineOutput {
        triplets,
        rl_pairs,
        outcomes,
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub seed: u64,
    pub items: usize,
    pub queries_per_category: usize,
    pub eval_per_category: usize,
    pub sizes: WorldSizes,
    pub pipeline: PipelineConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: 7,
            items: 2000,
            queries_per_category: 150,
            eval_per_category: 25,
            sizes: WorldSizes::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.items == 0 || self.queries_per_category == 0 || self.eval_per_category == 0 {
            return Err(LremError::Config("item and query counts must be positive".into()));
        }
        self.sizes.validate()?;
        self.pipeline.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub world: World,
    pub corpus: Vec<ItemDoc>,
    pub train_queries: Vec<QuerySpec>,
    pub eval_queries: Vec<QuerySpec>,
    pub output: PipelineOutput,
    pub vocab: Vocab,
}

pub fn generate(cfg: &DataConfig) -> Result<Dataset> {
    cfg.validate()?;
    let world = gen_world(cfg.seed, &cfg.sizes)?;
    let corpus = gen_corpus(&world, cfg.items)?;
    let mut qrng = ChaCha8Rng::seed_from_u64(cfg.seed);
    qrng.set_stream(2);
    let train_queries = gen_queries(&world, &corpus, cfg.queries_per_category, 0, &mut qrng)?;
    let mut erng = ChaCha8Rng::seed_from_u64(cfg.seed);
    erng.set_stream(3);
    let eval_queries = gen_queries(
        &world,
        &corpus,
        cfg.eval_per_category,
        train_queries.len() as u64,
        &mut erng,
    )?;
    let pipeline = PipelineConfig {
        seed: cfg.seed,
        ..cfg.pipeline
    };
    let output = build_triplets(&world, &corpus, &train_queries, &pipeline)?;
    let vocab = Vocab::from_surface(world.surface_tokens())?;
    Ok(Dataset {
        world,
        corpus,
        train_queries,
        eval_queries,
        output,
        vocab,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| LremError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| LremError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LremError::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

impl Dataset {
    pub fn corpus_records(&self) -> Vec<CorpusRecord> {
        self.corpus
            .iter()
            .map(|d| CorpusRecord {
                id: d.id,
                title: d.title.join(" "),
            })
            .collect()
    }

    pub fn eval_records(&self) -> Vec<EvalQueryRecord> {
        self.eval_queries
            .iter()
            .map(|q| EvalQueryRecord {
                query_id: q.id,
                query: q.text(),
                category: q.category,
                gt_ids: q.ground_truth.clone(),
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| LremError::io(dir, e))?;
        write_jsonl(&dir.join(CORPUS_FILE), &self.corpus_records())?;
        write_jsonl(&dir.join(TRIPLETS_FILE), &self.output.triplets)?;
        write_jsonl(&dir.join(RL_PAIRS_FILE), &self.output.rl_pairs)?;
        write_jsonl(&dir.join(EVAL_FILE), &self.eval_records())?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        let stats_path = dir.join(STATS_FILE);
        let mut f = fs::File::create(&stats_path).map_err(|e| LremError::io(&stats_path, e))?;
        serde_json::to_writer_pretty(&mut f, &self.output.stats)?;
        f.write_all(b"\n").map_err(|e| LremError::io(&stats_path, e))
    }
}

/// The generated files, as read back by the trainer, indexer and evaluator.
#[derive(Debug, Clone)]
pub struct DataFiles {
    pub vocab: Vocab,
    pub corpus: Vec<CorpusRecord>,
    pub triplets: Vec<TripletRecord>,
    pub rl_pairs: Vec<RlPairRecord>,
    pub eval: Vec<EvalQueryRecord>,
}

impl DataFiles {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(DataFiles {
            vocab: Vocab::load(&dir.join(VOCAB_FILE))?,
            corpus: read_jsonl(&dir.join(CORPUS_FILE))?,
            triplets: read_jsonl(&dir.join(TRIPLETS_FILE))?,
            rl_pairs: read_jsonl(&dir.join(RL_PAIRS_FILE))?,
            eval: read_jsonl(&dir.join(EVAL_FILE))?,
        })
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        DataFiles {
            vocab: ds.vocab.clone(),
            corpus: ds.corpus_records(),
            triplets: ds.output.triplets.clone(),
            rl_pairs: ds.output.rl_pairs.clone(),
            eval: ds.eval_records(),
        }
    }
}
