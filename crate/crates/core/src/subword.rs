//! Byte-pair-encoding subword segmentation and vocabularies.
//!
//! Words are split into characters followed by a separate end-of-word symbol
//! `</w>`; learning repeatedly merges the most frequent adjacent symbol pair,
//! breaking ties by the lexicographically smallest pair. Segmented output
//! marks every non-final piece of a word with a trailing `@@`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const CONTINUATION: &str = "@@";

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: BTreeMap<(String, String), usize>,
}

fn word_symbols(word: &str) -> Vec<String> {
    let mut s: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    s.push(END_OF_WORD.to_string());
    s
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) -> bool {
    let mut changed = false;
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let r = symbols.remove(i + 1);
            symbols[i].push_str(&r);
            changed = true;
        }
        i += 1;
    }
    changed
}

/// Learns `num_merges` merge rules from whitespace-tokenised sentences.
/// Stops early once every word is a single symbol.
pub fn learn_bpe<S: AsRef<str>>(sentences: &[S], num_merges: usize) -> Result<BpeModel> {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for s in sentences {
        for w in s.as_ref().split_whitespace() {
            *freq.entry(w).or_insert(0) += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::Empty("BPE training corpus"));
    }
    let mut words: Vec<(Vec<String>, usize)> =
        freq.into_iter().map(|(w, n)| (word_symbols(w), n)).collect();
    let mut model = BpeModel::default();
    for _ in 0..num_merges {
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (syms, n) in &words {
            for p in syms.windows(2) {
                *counts.entry((p[0].as_str(), p[1].as_str())).or_insert(0) += n;
            }
        }
        // BTreeMap iterates pairs in lexicographic order, so the first
        // maximum found is the tie-break winner.
        let mut best: Option<((&str, &str), usize)> = None;
        for (pair, n) in counts {
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((pair, n));
            }
        }
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.to_string(), r.to_string());
        for (syms, _) in words.iter_mut() {
            merge_pair(syms, &l, &r);
        }
        model.push_merge(l, r);
    }
    Ok(model)
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self> {
        let mut m = BpeModel::default();
        for (l, r) in merges {
            if m.ranks.contains_key(&(l.clone(), r.clone())) {
                return Err(Error::InvalidArgument(format!("duplicate merge {l} {r}")));
            }
            m.push_merge(l, r);
        }
        Ok(m)
    }

    fn push_merge(&mut self, l: String, r: String) {
        self.ranks.insert((l.clone(), r.clone()), self.merges.len());
        self.merges.push((l, r));
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    /// Subword pieces of one word, without continuation markers; the last
    /// piece keeps no end-of-word suffix.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms = word_symbols(word);
        loop {
            let mut best: Option<(usize, usize)> = None;
            for (i, p) in syms.windows(2).enumerate() {
                if let Some(&rank) = self.ranks.get(&(p[0].clone(), p[1].clone())) {
                    if best.is_none_or(|(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let (l, r) = &self.merges[rank];
            let (l, r) = (l.clone(), r.clone());
            merge_pair(&mut syms, &l, &r);
        }
        let mut pieces: Vec<String> = Vec::with_capacity(syms.len());
        for s in syms {
            if s == END_OF_WORD {
                continue;
            }
            match s.strip_suffix(END_OF_WORD) {
                Some(stem) => pieces.push(stem.to_string()),
                None => pieces.push(s),
            }
        }
        pieces
    }

    /// Segments a whitespace-tokenised sentence into subword tokens.
    pub fn apply(&self, sentence: &str) -> Vec<String> {
        let mut out = Vec::new();
        for w in sentence.split_whitespace() {
            let pieces = self.segment_word(w);
            let last = pieces.len().saturating_sub(1);
            for (i, p) in pieces.into_iter().enumerate() {
                if i < last {
                    out.push(p + CONTINUATION);
                } else {
                    out.push(p);
                }
            }
        }
        out
    }

    /// [`apply`](Self::apply) joined with single spaces.
    pub fn apply_line(&self, sentence: &str) -> String {
        self.apply(sentence).join(" ")
    }
}

/// Removes `@@ ` joints, restoring the pre-segmentation words.
pub fn desegment<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for t in tokens {
        let t = t.as_ref();
        match t.strip_suffix(CONTINUATION) {
            Some(stem) => cur.push_str(stem),
            None => {
                cur.push_str(t);
                words.push(core::mem::take(&mut cur));
            }
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// Token/id mapping with reserved ids PAD=0, BOS=1, EOS=2, UNK=3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new()).unwrap()
    }
}

impl Vocabulary {
    /// Builds a vocabulary from segmented sentences: observed tokens ordered
    /// by descending frequency, then lexicographically.
    pub fn build<S: AsRef<str>>(sentences: &[S]) -> Self {
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for s in sentences {
            for t in s.as_ref().split_whitespace() {
                if !RESERVED.contains(&t) {
                    *freq.entry(t).or_insert(0) += 1;
                }
            }
        }
        let mut by_freq: Vec<(&str, usize)> = freq.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_tokens(by_freq.into_iter().map(|(t, _)| t.to_string())).unwrap()
    }

    /// Vocabulary whose non-reserved tokens get ids 4, 5, ... in order.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut v = Vocabulary {
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
            ids: BTreeMap::new(),
        };
        for (i, t) in RESERVED.iter().enumerate() {
            v.ids.insert(t.to_string(), i as u32);
        }
        for t in tokens {
            if v.ids.contains_key(&t) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {t}")));
            }
            v.ids.insert(t.clone(), v.tokens.len() as u32);
            v.tokens.push(t);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(RESERVED[UNK as usize])
    }

    /// Non-reserved tokens in id order.
    pub fn user_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn encode_line(&self, line: &str) -> Vec<u32> {
        line.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}
