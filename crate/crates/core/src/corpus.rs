//! Parallel documents, filtering and document-wise batching.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::subword::{Vocabulary, PAD};

pub const DEFAULT_MAX_LEN: usize = 100;
pub const DEFAULT_MAX_DOCS: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair<T> {
    pub source: Vec<T>,
    pub target: Vec<T>,
}

/// An ordered sequence of sentence pairs; the unit of context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document<T = String> {
    pub id: String,
    pub pairs: Vec<SentencePair<T>>,
}

impl<T> Document<T> {
    pub fn new(id: String, pairs: Vec<SentencePair<T>>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("document"));
        }
        Ok(Document { id, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Vec<T>> {
        self.pairs.iter().map(|p| &p.source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Vec<T>> {
        self.pairs.iter().map(|p| &p.target)
    }
}

impl Document<String> {
    /// Maps both sides to vocabulary ids.
    pub fn encode(&self, src: &Vocabulary, trg: &Vocabulary) -> Document<u32> {
        Document {
            id: self.id.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|p| SentencePair {
                    source: src.encode(&p.source),
                    target: trg.encode(&p.target),
                })
                .collect(),
        }
    }
}

/// Drops every document containing a sentence longer than `max_len` tokens
/// on either side. Documents are never split.
pub fn filter_documents<T: Clone>(docs: &[Document<T>], max_len: usize) -> Vec<Document<T>> {
    docs.iter()
        .filter(|d| {
            d.pairs
                .iter()
                .all(|p| p.source.len() <= max_len && p.target.len() <= max_len)
        })
        .cloned()
        .collect()
}

/// A group of up to `max_docs` documents trained together. Sentence position
/// `i` of every document is processed before position `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentBatch {
    /// Indices into the corpus the batch was built from.
    pub documents: Vec<usize>,
}

/// Sentence position `index` across the documents of a batch. Rows of
/// documents with fewer sentences are empty and fully masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionBatch {
    pub index: usize,
    pub documents: Vec<usize>,
    pub active: Vec<bool>,
    pub source: Vec<Vec<u32>>,
    pub target: Vec<Vec<u32>>,
}

impl PositionBatch {
    pub fn rows(&self) -> usize {
        self.documents.len()
    }

    pub fn active_rows(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Only the rows whose document has a sentence at this position.
    pub fn compact(&self) -> PositionBatch {
        let keep: Vec<usize> = (0..self.rows()).filter(|&r| self.active[r]).collect();
        PositionBatch {
            index: self.index,
            documents: keep.iter().map(|&r| self.documents[r]).collect(),
            active: vec![true; keep.len()],
            source: keep.iter().map(|&r| self.source[r].clone()).collect(),
            target: keep.iter().map(|&r| self.target[r].clone()).collect(),
        }
    }

    pub fn padded_source(&self) -> (Vec<u32>, Vec<u8>, usize) {
        pad(&self.source)
    }

    pub fn padded_target(&self) -> (Vec<u32>, Vec<u8>, usize) {
        pad(&self.target)
    }
}

/// Right-pads rows with PAD; returns ids, mask (1 on real tokens) and width.
pub fn pad(rows: &[Vec<u32>]) -> (Vec<u32>, Vec<u8>, usize) {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut ids = vec![PAD; rows.len() * width];
    let mut mask = vec![0u8; rows.len() * width];
    for (r, row) in rows.iter().enumerate() {
        for (t, &id) in row.iter().enumerate() {
            ids[r * width + t] = id;
            mask[r * width + t] = 1;
        }
    }
    (ids, mask, width)
}

impl DocumentBatch {
    pub fn max_len<T>(&self, docs: &[Document<T>]) -> usize {
        self.documents.iter().map(|&d| docs[d].len()).max().unwrap_or(0)
    }

    pub fn position(&self, docs: &[Document<u32>], index: usize) -> PositionBatch {
        let mut out = PositionBatch {
            index,
            documents: self.documents.clone(),
            active: Vec::with_capacity(self.documents.len()),
            source: Vec::with_capacity(self.documents.len()),
            target: Vec::with_capacity(self.documents.len()),
        };
        for &d in &self.documents {
            match docs[d].pairs.get(index) {
                Some(p) => {
                    out.active.push(true);
                    out.source.push(p.source.clone());
                    out.target.push(p.target.clone());
                }
                None => {
                    out.active.push(false);
                    out.source.push(Vec::new());
                    out.target.push(Vec::new());
                }
            }
        }
        out
    }

    pub fn positions(&self, docs: &[Document<u32>]) -> Vec<PositionBatch> {
        (0..self.max_len(docs)).map(|i| self.position(docs, i)).collect()
    }
}

/// Shuffles document order with `rng` and cuts it into batches of at most
/// `max_docs` documents.
pub fn make_batches<T, R: Rng + ?Sized>(
    docs: &[Document<T>],
    max_docs: usize,
    rng: &mut R,
) -> Vec<DocumentBatch> {
    let max_docs = max_docs.max(1);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(rng);
    order
        .chunks(max_docs)
        .map(|c| DocumentBatch {
            documents: c.to_vec(),
        })
        .collect()
}
