//! Word-level tokenizer and input rendering.
//!
//! Every model input is one of two shapes:
//!
//! ```text
//! query side:  <bos> query... <think> cot... </think> <emb>
//! item side:   <bos> title... <emb>
//! ```
//!
//! A generation prompt is the query side cut right after `<think>`.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{LremError, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const EMB: &str = "<emb>";

/// Special token strings in id order.
pub const SPECIALS: [&str; 5] = [PAD, BOS, THINK_OPEN, THINK_CLOSE, EMB];

pub type TokenId = u32;

/// Ids of the special tokens. Fixed by construction: specials occupy ids 0..5.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: TokenId,
    pub bos: TokenId,
    pub think_open: TokenId,
    pub think_close: TokenId,
    pub emb: TokenId,
}

impl SpecialIds {
    pub const fn standard() -> Self {
        SpecialIds {
            pad: 0,
            bos: 1,
            think_open: 2,
            think_close: 3,
            emb: 4,
        }
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id == self.pad
            || id == self.bos
            || id == self.think_open
            || id == self.think_close
            || id == self.emb
    }
}

/// A sequence of vocabulary ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSeq(ids)
    }

    pub fn empty() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn last(&self) -> Option<TokenId> {
        self.0.last().copied()
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(ids: Vec<TokenId>) -> Self {
        TokenSeq(ids)
    }
}

impl AsRef<[TokenId]> for TokenSeq {
    fn as_ref(&self) -> &[TokenId] {
        &self.0
    }
}

/// Closed word-level vocabulary. Specials first, then surface tokens in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    special: SpecialIds,
}

impl Vocab {
    /// Builds a vocabulary from surface tokens. Order of the input does not
    /// matter; the resulting id assignment is sorted.
    pub fn from_surface<I, S>(surface: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words: Vec<String> = Vec::new();
        for w in surface {
            let w = w.as_ref();
            if SPECIALS.contains(&w) {
                return Err(LremError::SpecialCollision(w.to_string()));
            }
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(LremError::InvalidArgument(format!(
                    "surface token `{w}` is empty or contains whitespace"
                )));
            }
            words.push(w.to_string());
        }
        words.sort();
        if let Some(pair) = words.windows(2).find(|p| p[0] == p[1]) {
            return Err(LremError::DuplicateToken(pair[0].clone()));
        }
        let tokens: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Self::from_ordered(tokens)
    }

    fn from_ordered(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(LremError::DuplicateToken(t.clone()));
            }
        }
        Ok(Vocab {
            tokens,
            index,
            special: SpecialIds::standard(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids of all non-special tokens.
    pub fn surface_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        SPECIALS.len() as TokenId..self.tokens.len() as TokenId
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.contains(id)
    }

    /// Splits on whitespace and maps each word to its id.
    pub fn encode(&self, text: &str) -> Result<TokenSeq> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| LremError::OutOfVocabulary(w.to_string()))
            })
            .collect::<Result<Vec<_>>>()
            .map(TokenSeq)
    }

    /// Inverse of `encode` up to whitespace normalization. Unknown ids render as `<unk:N>`.
    pub fn decode(&self, seq: &TokenSeq) -> String {
        seq.ids()
            .iter()
            .map(|&id| match self.token(id) {
                Some(t) => t.to_string(),
                None => format!("<unk:{id}>"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| LremError::io(path, e))?;
        for t in &self.tokens {
            writeln!(f, "{t}").map_err(|e| LremError::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LremError::io(path, e))?;
        Self::parse(&text).map_err(|reason| LremError::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len()
            || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s)
        {
            return Err("vocabulary must start with the five special tokens".into());
        }
        if let Some(t) = tokens[SPECIALS.len()..]
            .iter()
            .find(|t| t.is_empty() || SPECIALS.contains(&t.as_str()))
        {
            return Err(format!("bad surface token `{t}`"));
        }
        Self::from_ordered(tokens).map_err(|e| e.to_string())
    }
}

impl fmt::Display for Vocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vocab({} tokens)", self.tokens.len())
    }
}

fn check_len(len: usize, max_len: usize) -> Result<()> {
    if len > max_len {
        Err(LremError::SequenceTooLong { len, max: max_len })
    } else {
        Ok(())
    }
}

/// Query-side input. With `cot = None` this is the generation prompt ending in `<think>`.
pub fn render_query_input(
    vocab: &Vocab,
    query: &TokenSeq,
    cot: Option<&TokenSeq>,
    max_len: usize,
) -> Result<TokenSeq> {
    let sp = vocab.special();
    let len = 2 + query.len() + cot.map_or(0, |c| c.len() + 2);
    check_len(len, max_len)?;
    let mut ids = Vec::with_capacity(len);
    ids.push(sp.bos);
    ids.extend_from_slice(query.ids());
    ids.push(sp.think_open);
    if let Some(cot) = cot {
        ids.extend_from_slice(cot.ids());
        ids.push(sp.think_close);
        ids.push(sp.emb);
    }
    Ok(TokenSeq(ids))
}

/// Item-side input: `<bos> title <emb>`.
pub fn render_item_input(vocab: &Vocab, title: &TokenSeq, max_len: usize) -> Result<TokenSeq> {
    let sp = vocab.special();
    check_len(title.len() + 2, max_len)?;
    let mut ids = Vec::with_capacity(title.len() + 2);
    ids.push(sp.bos);
    ids.extend_from_slice(title.ids());
    ids.push(sp.emb);
    Ok(TokenSeq(ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> Vocab {
        Vocab::from_surface(["tea", "apple"]).unwrap()
    }

    #[test]
    fn build_counts_and_orders() {
        let v = small();
        assert_eq!(v.len(), 7);
        assert_eq!(v.token(5), Some("apple"));
        assert_eq!(v.token(6), Some("tea"));
        assert_eq!(v.id("<emb>"), Some(4));
        assert_eq!(v, small());
    }

    #[test]
    fn special_collision_rejected() {
        assert!(matches!(
            Vocab::from_surface(["apple", "<emb>"]),
            Err(LremError::SpecialCollision(_))
        ));
        assert!(matches!(
            Vocab::from_surface(["apple", "apple"]),
            Err(LremError::DuplicateToken(_))
        ));
    }

    #[test]
    fn encode_examples() {
        let v = small();
        assert!(v.encode("").unwrap().is_empty());
        assert_eq!(v.encode("apple tea").unwrap().ids(), &[5, 6]);
        match v.encode("apple zzz") {
            Err(LremError::OutOfVocabulary(w)) => assert_eq!(w, "zzz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn render_examples() {
        let v = small();
        let q = TokenSeq::new(vec![5]);
        let empty = render_query_input(&v, &q, Some(&TokenSeq::empty()), 64).unwrap();
        assert_eq!(empty.ids(), &[1, 5, 2, 3, 4]);
        let cot = TokenSeq::new(vec![6, 5]);
        let full = render_query_input(&v, &q, Some(&cot), 64).unwrap();
        assert_eq!(full.ids(), &[1, 5, 2, 6, 5, 3, 4]);
        let prompt = render_query_input(&v, &q, None, 64).unwrap();
        assert_eq!(prompt.ids(), &[1, 5, 2]);
        assert!(render_query_input(&v, &q, Some(&cot), 6).is_err());
    }

    #[test]
    fn render_item_examples() {
        let v = small();
        assert_eq!(
            render_item_input(&v, &TokenSeq::empty(), 8).unwrap().ids(),
            &[1, 4]
        );
        assert_eq!(
            render_item_input(&v, &TokenSeq::new(vec![5, 6]), 8)
                .unwrap()
                .ids(),
            &[1, 5, 6, 4]
        );
        assert!(render_item_input(&v, &TokenSeq::new(vec![5; 7]), 8).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("<pad>\n<bos>\n<think>\n</think>\n<emb>\n"));
        assert_eq!(Vocab::load(&p).unwrap(), v);
        assert!(Vocab::parse("apple\n").is_err());
    }

    proptest! {
        #[test]
        fn decode_encode_round_trip(words in proptest::collection::vec(0usize..4, 0..12), sep in "[ \t]{1,3}") {
            let v = Vocab::from_surface(["a", "bb", "ccc", "dd"]).unwrap();
            let pool = ["a", "bb", "ccc", "dd"];
            let text = words.iter().map(|&i| pool[i]).collect::<Vec<_>>().join(&sep);
            let enc = v.encode(&text).unwrap();
            prop_assert_eq!(v.decode(&enc), text.split_whitespace().collect::<Vec<_>>().join(" "));
        }

        #[test]
        fn prompt_is_strict_prefix(q in proptest::collection::vec(5u32..9, 0..6), c in proptest::collection::vec(5u32..9, 0..6)) {
            let v = Vocab::from_surface(["a", "bb", "ccc", "dd"]).unwrap();
            let q = TokenSeq(q);
            let c = TokenSeq(c);
            let prompt = render_query_input(&v, &q, None, 64).unwrap();
            let full = render_query_input(&v, &q, Some(&c), 64).unwrap();
            prop_assert!(prompt.len() < full.len());
            prop_assert_eq!(&full.ids()[..prompt.len()], prompt.ids());
            prop_assert_eq!(&full.ids()[full.len() - 2..], &[3u32, 4][..]);
        }
    }
}
