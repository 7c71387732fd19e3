//! Corpus-level BLEU-4 (single reference, no smoothing).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Additive n-gram statistics of one or more sentence pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl core::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn ngram_counts<S: AsRef<str>>(toks: &[S], n: usize) -> BTreeMap<Vec<&str>, usize> {
    let mut m = BTreeMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches of a hypothesis against its reference.
pub fn sentence_stats<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> BleuStats {
    let mut s = BleuStats {
        hyp_len: hyp.len(),
        ref_len: reference.len(),
        ..BleuStats::default()
    };
    for n in 1..=MAX_ORDER {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        s.matches[n - 1] = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bleu {
    /// 0..=100.
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    /// `BP · exp(mean log p_n)` with `BP = min(1, exp(1 - r/c))`; zero if any
    /// n-gram precision is zero. An order with no hypothesis n-grams at all
    /// (every sentence shorter than `n`) has precision 1.
    pub fn bleu(&self) -> Bleu {
        let mut precisions = [1.0; MAX_ORDER];
        for n in 0..MAX_ORDER {
            if self.totals[n] > 0 {
                precisions[n] = self.matches[n] as f64 / self.totals[n] as f64;
            }
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if self.hyp_len == 0 {
            0.0
        } else if c > r {
            1.0
        } else {
            Float::exp(1.0 - r / c)
        };
        let score = if precisions.contains(&0.0) {
            0.0
        } else {
            let log_mean = precisions.iter().map(|&p| Float::ln(p)).sum::<f64>() / MAX_ORDER as f64;
            100.0 * bp * Float::exp(log_mean)
        };
        Bleu {
            score,
            precisions,
            brevity_penalty: bp,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

/// Per-sentence statistics of aligned hypothesis and reference lists.
pub fn corpus_stats<S: AsRef<str>, T: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<T>]) -> Result<Vec<BleuStats>> {
    if hyps.len() != refs.len() {
        return Err(Error::Shape(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(hyps.iter().zip(refs).map(|(h, r)| sentence_stats(h, r)).collect())
}

pub fn sum_stats<'a, I: IntoIterator<Item = &'a BleuStats>>(stats: I) -> BleuStats {
    let mut total = BleuStats::default();
    for s in stats {
        total += *s;
    }
    total
}

pub fn corpus_bleu<S: AsRef<str>, T: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<T>]) -> Result<Bleu> {
    Ok(sum_stats(&corpus_stats(hyps, refs)?).bleu())
}
