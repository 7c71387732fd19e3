//! Run configuration: a flat `key = value` file. The `profile` key is applied
//! first wherever it appears, then the remaining keys in file order, then
//! command-line overrides.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ctxnmt_core::corpus::DEFAULT_MAX_LEN;
use ctxnmt_core::decode::DecodeConfig;
use ctxnmt_core::synth::{SynthConfig, SynthMode};
use ctxnmt_core::train::TrainConfig;
use ctxnmt_core::{ModelConfig, Variant};

use crate::error::{Error, Result};
use crate::formats::read_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// E = H = 32, 200 merges, batches of up to 16 documents.
    Desk,
    /// E = H = 512, 32000 merges, batches of up to 128 documents.
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile `{s}`"))),
        }
    }
}

pub const DESK_LEARNING_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub emb: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub merges: usize,
    pub max_len: usize,
    pub max_docs: usize,
    pub epochs: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub freeze_context: bool,
    pub beam: usize,
    pub max_ratio: usize,
    pub forced_prefix: usize,
    pub seed: u64,
    pub samples: usize,
    pub runs: usize,
    pub mode: SynthMode,
    pub docs: usize,
    pub dev_docs: usize,
    pub test_docs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Vocabulary sizes used by `params` when no corpus is at hand.
    pub src_vocab: usize,
    pub trg_vocab: usize,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let desk = RunConfig {
            profile,
            emb: 32,
            hidden: 32,
            layers: 2,
            dropout: 0.2,
            merges: 200,
            max_len: DEFAULT_MAX_LEN,
            max_docs: 16,
            epochs: 30,
            lr: DESK_LEARNING_RATE,
            clip_norm: 5.0,
            freeze_context: false,
            beam: 1,
            max_ratio: 2,
            forced_prefix: 0,
            seed: 1,
            samples: 1000,
            runs: 1,
            mode: SynthMode::TrgInformative,
            docs: 2000,
            dev_docs: 200,
            test_docs: 300,
            min_sentences: 2,
            max_sentences: 4,
            src_vocab: 40,
            trg_vocab: 80,
        };
        match profile {
            Profile::Desk => desk,
            Profile::Paper => RunConfig {
                emb: 512,
                hidden: 512,
                merges: 32000,
                max_docs: 128,
                lr: 0.01,
                src_vocab: 32000,
                trg_vocab: 32000,
                ..desk
            },
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
        }
        match key {
            "profile" => *self = RunConfig::profile(value.parse()?),
            "emb" => self.emb = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "merges" => self.merges = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "max_docs" => self.max_docs = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "freeze_context" => self.freeze_context = num(key, value)?,
            "beam" => self.beam = num(key, value)?,
            "max_ratio" => self.max_ratio = num(key, value)?,
            "forced_prefix" => self.forced_prefix = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "samples" => self.samples = num(key, value)?,
            "runs" => self.runs = num(key, value)?,
            "mode" => self.mode = SynthMode::parse(value)?,
            "docs" => self.docs = num(key, value)?,
            "dev_docs" => self.dev_docs = num(key, value)?,
            "test_docs" => self.test_docs = num(key, value)?,
            "min_sentences" => self.min_sentences = num(key, value)?,
            "max_sentences" => self.max_sentences = num(key, value)?,
            "src_vocab" => self.src_vocab = num(key, value)?,
            "trg_vocab" => self.trg_vocab = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` text on top of `self`.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        let pairs = parse_pairs(text, path)?;
        self.apply_pairs(&pairs, None)
    }

    /// Resets to the last `profile` among `pairs` (or `profile` if given,
    /// which wins), then sets the remaining keys in order.
    fn apply_pairs(&mut self, pairs: &[(String, String)], profile: Option<Profile>) -> Result<()> {
        let named = pairs.iter().rev().find(|(k, _)| k == "profile");
        match (profile, named) {
            (Some(p), _) => *self = RunConfig::profile(p),
            (None, Some((_, p))) => *self = RunConfig::profile(p.parse()?),
            (None, None) => {}
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "profile") {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Desk profile, then the file at `path` if given, then `overrides`. A
    /// profile named in `overrides` replaces the file's profile.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let profile = match overrides.iter().rev().find(|(k, _)| k == "profile") {
            Some((_, p)) => Some(p.parse()?),
            None => None,
        };
        let mut cfg = RunConfig::profile(profile.unwrap_or(Profile::Desk));
        if let Some(p) = path {
            cfg.apply_pairs(&parse_pairs(&read_text(p)?, p)?, profile)?;
        }
        for (k, v) in overrides.iter().filter(|(k, _)| k != "profile") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Every key in a fixed order, as `key = value` lines.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("profile", self.profile.name().to_string()),
            ("emb", self.emb.to_string()),
            ("hidden", self.hidden.to_string()),
            ("layers", self.layers.to_string()),
            ("dropout", self.dropout.to_string()),
            ("merges", self.merges.to_string()),
            ("max_len", self.max_len.to_string()),
            ("max_docs", self.max_docs.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("freeze_context", self.freeze_context.to_string()),
            ("beam", self.beam.to_string()),
            ("max_ratio", self.max_ratio.to_string()),
            ("forced_prefix", self.forced_prefix.to_string()),
            ("seed", self.seed.to_string()),
            ("samples", self.samples.to_string()),
            ("runs", self.runs.to_string()),
            ("mode", self.mode.name().to_string()),
            ("docs", self.docs.to_string()),
            ("dev_docs", self.dev_docs.to_string()),
            ("test_docs", self.test_docs.to_string()),
            ("min_sentences", self.min_sentences.to_string()),
            ("max_sentences", self.max_sentences.to_string()),
            ("src_vocab", self.src_vocab.to_string()),
            ("trg_vocab", self.trg_vocab.to_string()),
        ]
    }

    pub fn model_config(&self, variant: Variant, src_vocab: usize, trg_vocab: usize) -> ModelConfig {
        ModelConfig {
            variant,
            emb: self.emb,
            hidden: self.hidden,
            src_vocab,
            trg_vocab,
            layers: self.layers,
            dropout: self.dropout,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            clip_norm: self.clip_norm,
            max_docs: self.max_docs,
            seed,
            freeze_context: self.freeze_context,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam_size: self.beam,
            max_ratio: self.max_ratio,
            forced_prefix: self.forced_prefix,
        }
    }

    pub fn synth_config(&self, num_documents: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            mode: self.mode,
            num_documents,
            min_sentences: self.min_sentences,
            max_sentences: self.max_sentences,
            seed,
            ..SynthConfig::default()
        }
    }

    /// Seeds of the `runs` repetitions, starting at `seed`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs.max(1) as u64).map(|r| self.seed + r).collect()
    }
}

fn parse_pairs(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: "expected `key = value`".into(),
            });
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::profile(Profile::Desk)
    }
}
