//! Plain-text file formats.
//!
//! * Corpora: `name.src` / `name.trg`, one sentence per line, documents
//!   separated by blank lines.
//! * Synthetic labels: `name.meta`, one document per line:
//!   `id<TAB>choice<TAB>slot,slot,...` with `-` for sentences without a slot.
//! * BPE model: one merge `left right` per line, in learning order.
//! * Vocabulary: one token per line; line `k` (from 0) holds id `k + 4`.
//! * Hypotheses: like a corpus side, but a sentence may be empty, so the file
//!   is read against the document shape of its reference.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ctxnmt_core::corpus::{Document, SentencePair};
use ctxnmt_core::subword::{BpeModel, Vocabulary};
use ctxnmt_core::synth::DocMeta;

use crate::error::{io_err, Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// `dir/name.ext`
pub fn side_path(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Groups non-blank lines into blocks separated by one or more blank lines.
pub fn parse_blocks(text: &str) -> Vec<Vec<&str>> {
    let mut blocks = Vec::new();
    let mut cur = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                blocks.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(line.trim_end_matches('\r'));
        }
    }
    if !cur.is_empty() {
        blocks.push(cur);
    }
    blocks
}

fn tokens(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

pub fn parse_documents(src_text: &str, trg_text: &str, src: &Path, trg: &Path) -> Result<Vec<Document>> {
    let (sb, tb) = (parse_blocks(src_text), parse_blocks(trg_text));
    if sb.len() != tb.len() {
        let doc = sb.len().min(tb.len());
        return Err(Error::Misaligned {
            src: src.into(),
            trg: trg.into(),
            doc,
            src_len: sb.get(doc).map_or(0, Vec::len),
            trg_len: tb.get(doc).map_or(0, Vec::len),
        });
    }
    let mut docs = Vec::with_capacity(sb.len());
    for (d, (s, t)) in sb.iter().zip(&tb).enumerate() {
        if s.len() != t.len() {
            return Err(Error::Misaligned {
                src: src.into(),
                trg: trg.into(),
                doc: d,
                src_len: s.len(),
                trg_len: t.len(),
            });
        }
        let pairs = s
            .iter()
            .zip(t)
            .map(|(a, b)| SentencePair {
                source: tokens(a),
                target: tokens(b),
            })
            .collect();
        docs.push(Document::new(d.to_string(), pairs)?);
    }
    Ok(docs)
}

/// Reads `prefix.src` and `prefix.trg`.
pub fn load_documents(prefix: &Path) -> Result<Vec<Document>> {
    let (src, trg) = (side_path(prefix, "src"), side_path(prefix, "trg"));
    parse_documents(&read_text(&src)?, &read_text(&trg)?, &src, &trg)
}

pub fn format_side<'a, I, S>(docs: I) -> String
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<[String]> + 'a,
{
    let mut out = String::new();
    for (d, doc) in docs.into_iter().enumerate() {
        if d > 0 {
            out.push('\n');
        }
        for sent in doc {
            out.push_str(&sent.as_ref().join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn save_documents(prefix: &Path, docs: &[Document]) -> Result<()> {
    let src: Vec<Vec<Vec<String>>> = docs.iter().map(|d| d.sources().cloned().collect()).collect();
    let trg: Vec<Vec<Vec<String>>> = docs.iter().map(|d| d.targets().cloned().collect()).collect();
    write_text(&side_path(prefix, "src"), &format_side(src.iter().map(Vec::as_slice)))?;
    write_text(&side_path(prefix, "trg"), &format_side(trg.iter().map(Vec::as_slice)))
}

pub fn format_meta(meta: &[DocMeta]) -> String {
    let mut out = String::new();
    for m in meta {
        let slots: Vec<&str> = m.slots.iter().map(|s| s.as_deref().unwrap_or("-")).collect();
        let _ = writeln!(out, "{}\t{}\t{}", m.id, m.choice, slots.join(","));
    }
    out
}

pub fn parse_meta(text: &str, path: &Path) -> Result<Vec<DocMeta>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", f.len()),
            });
        }
        out.push(DocMeta {
            id: f[0].to_string(),
            choice: f[1].to_string(),
            slots: f[2]
                .split(',')
                .map(|s| if s == "-" { None } else { Some(s.to_string()) })
                .collect(),
        });
    }
    Ok(out)
}

pub fn load_meta(path: &Path) -> Result<Vec<DocMeta>> {
    parse_meta(&read_text(path)?, path)
}

pub fn format_bpe(model: &BpeModel) -> String {
    model.merges().iter().map(|(l, r)| format!("{l} {r}\n")).collect()
}

pub fn parse_bpe(text: &str, path: &Path) -> Result<BpeModel> {
    let mut merges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 2 || f.iter().any(|s| s.is_empty()) {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: "expected `left right`".into(),
            });
        }
        merges.push((f[0].to_string(), f[1].to_string()));
    }
    Ok(BpeModel::from_merges(merges)?)
}

pub fn format_vocab(v: &Vocabulary) -> String {
    v.user_tokens().iter().map(|t| format!("{t}\n")).collect()
}

pub fn parse_vocab(text: &str) -> Result<Vocabulary> {
    Ok(Vocabulary::from_tokens(text.lines().map(str::to_string))?)
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    parse_vocab(&read_text(path)?)
}

/// Reads a hypothesis file whose documents have `shape[d]` sentences each.
pub fn parse_hypotheses(text: &str, shape: &[usize], path: &Path) -> Result<Vec<Vec<Vec<String>>>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut pos = 0;
    let mut out = Vec::with_capacity(shape.len());
    for (d, &n) in shape.iter().enumerate() {
        if d > 0 {
            match lines.get(pos) {
                Some(l) if l.trim().is_empty() => pos += 1,
                _ => {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: pos + 1,
                        msg: format!("expected a blank line before document {d}"),
                    })
                }
            }
        }
        if pos + n > lines.len() {
            return Err(Error::Parse {
                path: path.into(),
                line: lines.len(),
                msg: format!("document {d} needs {n} sentences"),
            });
        }
        out.push(lines[pos..pos + n].iter().map(|l| tokens(l)).collect());
        pos += n;
    }
    if lines[pos..].iter().any(|l| !l.trim().is_empty()) {
        return Err(Error::Parse {
            path: path.into(),
            line: pos + 1,
            msg: "more sentences than the reference".into(),
        });
    }
    Ok(out)
}

pub fn format_hypotheses(docs: &[Vec<Vec<String>>]) -> String {
    format_side(docs.iter().map(Vec::as_slice))
}
