//! The experiment lifecycle: synthetic data, preprocessing, baseline
//! pretraining, context fine-tuning, translation, evaluation and comparison.
//!
//! Directory layout under an output directory `O`:
//!
//! * `synth`: `O/<name>.{train,dev,test}.{src,trg,meta}`
//! * `preprocess`: `O/data/{train,dev,test}.{src,trg}` (segmented),
//!   `O/data/bpe.{src,trg}`, `O/data/vocab.{src,trg}`
//! * `train-baseline`: `O/baseline.{manifest,bin,log}`
//! * `finetune`: `O/<variant>.{manifest,bin,log}`
//! * `translate`: `O/<model>.<split>.hyp`
//! * `evaluate`: `O/<hyp>.report`
//!
//! Each of them also writes a `.run` manifest into `O`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ctxnmt_core::bleu::{corpus_bleu, corpus_stats};
use ctxnmt_core::bootstrap::{paired_bootstrap, BootstrapResult};
use ctxnmt_core::corpus::{filter_documents, Document};
use ctxnmt_core::decode::DecodeConfig;
use ctxnmt_core::subword::{desegment, learn_bpe, BpeModel, Vocabulary};
use ctxnmt_core::synth::{generate_synthetic, slot_accuracy, slot_consistency, DocMeta};
use ctxnmt_core::train::fit;
use ctxnmt_core::{Model, Variant};

use crate::checkpoint::{blob_path, checkpoint_prefix, load_checkpoint, manifest_path, save_checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{
    format_bpe, format_hypotheses, format_meta, format_vocab, load_documents, load_vocab, parse_blocks,
    parse_hypotheses, read_text, save_documents, side_path, write_text,
};
use crate::manifest::RunManifest;
use crate::report::{EvalReport, LogRecord, TrainLog};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

const DEV_STREAM: u64 = 0xde5e_ed00;
const TEST_STREAM: u64 = 0x7e57_5eed;
const INIT_STREAM: u64 = 0x1417_5eed;

/// Words of each sentence of each document.
pub type Hypotheses = Vec<Vec<Vec<String>>>;

fn split_seed(seed: u64, split: &str) -> u64 {
    match split {
        "dev" => seed ^ DEV_STREAM,
        "test" => seed ^ TEST_STREAM,
        _ => seed,
    }
}

/// Writes train, dev and test splits of a synthetic corpus with their
/// hidden labels.
pub fn synth(cfg: &RunConfig, out_dir: &Path, name: &str) -> Result<RunManifest> {
    let mut run = RunManifest::new("synth", cfg.seed, cfg);
    for (split, n) in SPLITS.iter().zip([cfg.docs, cfg.dev_docs, cfg.test_docs]) {
        let corpus = generate_synthetic(&cfg.synth_config(n, split_seed(cfg.seed, split)))?;
        let prefix = out_dir.join(format!("{name}.{split}"));
        save_documents(&prefix, &corpus.documents)?;
        let meta = side_path(&prefix, "meta");
        write_text(&meta, &format_meta(&corpus.meta))?;
        for ext in ["src", "trg", "meta"] {
            run.output(&side_path(&prefix, ext), out_dir);
        }
    }
    run.write(out_dir, "synth")?;
    Ok(run)
}

fn sentences<'a>(docs: &'a [Document], side: impl Fn(&'a Document) -> Vec<&'a Vec<String>>) -> Vec<String> {
    docs.iter().flat_map(side).map(|s| s.join(" ")).collect()
}

fn segment(docs: &[Document], src: &BpeModel, trg: &BpeModel) -> Result<Vec<Document>> {
    docs.iter()
        .map(|d| {
            let pairs = d
                .pairs
                .iter()
                .map(|p| ctxnmt_core::corpus::SentencePair {
                    source: src.apply(&p.source.join(" ")),
                    target: trg.apply(&p.target.join(" ")),
                })
                .collect();
            Ok(Document::new(d.id.clone(), pairs)?)
        })
        .collect()
}

/// Filters the training split, learns one BPE model per side on it, and
/// writes segmented splits and vocabularies to `O/data`.
pub fn preprocess(cfg: &RunConfig, corpus: &Path, out_dir: &Path) -> Result<RunManifest> {
    let mut run = RunManifest::new("preprocess", cfg.seed, cfg);
    let data = out_dir.join("data");
    let mut splits = Vec::new();
    for split in SPLITS {
        let prefix = side_path(corpus, split);
        if split != "train" && !side_path(&prefix, "src").exists() {
            continue;
        }
        let docs = load_documents(&prefix)?;
        run.input(&side_path(&prefix, "src"), out_dir)?;
        run.input(&side_path(&prefix, "trg"), out_dir)?;
        splits.push((split, docs));
    }
    let train = filter_documents(&splits[0].1, cfg.max_len);
    if train.is_empty() {
        return Err(Error::Config("no training document survives length filtering".into()));
    }
    splits[0].1 = train;
    let src_bpe = learn_bpe(&sentences(&splits[0].1, |d| d.sources().collect()), cfg.merges)?;
    let trg_bpe = learn_bpe(&sentences(&splits[0].1, |d| d.targets().collect()), cfg.merges)?;
    let mut vocabs = None;
    for (split, docs) in &splits {
        let seg = segment(docs, &src_bpe, &trg_bpe)?;
        if vocabs.is_none() {
            vocabs = Some((
                Vocabulary::build(&sentences(&seg, |d| d.sources().collect())),
                Vocabulary::build(&sentences(&seg, |d| d.targets().collect())),
            ));
        }
        let prefix = data.join(split);
        save_documents(&prefix, &seg)?;
        run.output(&side_path(&prefix, "src"), out_dir);
        run.output(&side_path(&prefix, "trg"), out_dir);
    }
    let (sv, tv) = vocabs.expect("training split is always present");
    for (file, text) in [
        ("bpe.src", format_bpe(&src_bpe)),
        ("bpe.trg", format_bpe(&trg_bpe)),
        ("vocab.src", format_vocab(&sv)),
        ("vocab.trg", format_vocab(&tv)),
    ] {
        let p = data.join(file);
        write_text(&p, &text)?;
        run.output(&p, out_dir);
    }
    run.write(out_dir, "preprocess")?;
    Ok(run)
}

/// A preprocessed data directory.
#[derive(Debug, Clone)]
pub struct Data {
    pub dir: PathBuf,
    pub src_vocab: Vocabulary,
    pub trg_vocab: Vocabulary,
}

/// One split encoded to ids.
#[derive(Debug, Clone)]
pub struct Split {
    pub documents: Vec<Document<u32>>,
    /// Target references in words.
    pub references: Hypotheses,
}

impl Split {
    pub fn sources(&self) -> Vec<Vec<Vec<u32>>> {
        self.documents.iter().map(|d| d.sources().cloned().collect()).collect()
    }

    pub fn targets(&self) -> Vec<Vec<Vec<u32>>> {
        self.documents.iter().map(|d| d.targets().cloned().collect()).collect()
    }
}

impl Data {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Data {
            dir: dir.to_path_buf(),
            src_vocab: load_vocab(&dir.join("vocab.src"))?,
            trg_vocab: load_vocab(&dir.join("vocab.trg"))?,
        })
    }

    pub fn split_prefix(&self, split: &str) -> PathBuf {
        self.dir.join(split)
    }

    pub fn split(&self, split: &str) -> Result<Split> {
        let docs = load_documents(&self.split_prefix(split))?;
        let references = docs
            .iter()
            .map(|d| d.targets().map(|t| desegment(t)).collect())
            .collect();
        Ok(Split {
            documents: docs.iter().map(|d| d.encode(&self.src_vocab, &self.trg_vocab)).collect(),
            references,
        })
    }

    fn inputs(&self, splits: &[&str], run: &mut RunManifest, out_dir: &Path) -> Result<()> {
        run.input(&self.dir.join("vocab.src"), out_dir)?;
        run.input(&self.dir.join("vocab.trg"), out_dir)?;
        for s in splits {
            run.input(&side_path(&self.split_prefix(s), "src"), out_dir)?;
            run.input(&side_path(&self.split_prefix(s), "trg"), out_dir)?;
        }
        Ok(())
    }
}

/// Translates a split into words. With a forced prefix, the references of
/// the split supply the leading sentences.
pub fn translate_split(model: &Model<f32>, data: &Data, split: &Split, cfg: &DecodeConfig) -> Result<Hypotheses> {
    let targets = split.targets();
    let refs = (cfg.forced_prefix > 0).then_some(targets.as_slice());
    let out = model.translate_documents(&split.sources(), refs, cfg)?;
    Ok(out
        .iter()
        .map(|t| {
            t.hypotheses
                .iter()
                .map(|h| desegment(&data.trg_vocab.decode(h)))
                .collect()
        })
        .collect())
}

/// Sentences of each document from index `skip` on, flattened.
pub fn scored_sentences(docs: &[Vec<Vec<String>>], skip: usize) -> Vec<Vec<String>> {
    docs.iter().flat_map(|d| d.iter().skip(skip).cloned()).collect()
}

/// Corpus BLEU over all sentences after the first `skip` of each document.
pub fn bleu_after(hyps: &[Vec<Vec<String>>], refs: &[Vec<Vec<String>>], skip: usize) -> Result<f64> {
    Ok(corpus_bleu(&scored_sentences(hyps, skip), &scored_sentences(refs, skip))?.score)
}

fn dev_score(model: &Model<f32>, data: &Data, dev: &Split, cfg: &RunConfig) -> Result<f64> {
    let hyps = translate_split(model, data, dev, &cfg.decode_config())?;
    bleu_after(&hyps, &dev.references, cfg.forced_prefix)
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model<f32>,
    pub log: TrainLog,
    pub checkpoint: PathBuf,
}

fn train(
    cfg: &RunConfig,
    seed: u64,
    model: Model<f32>,
    data: &Data,
    quiet: bool,
) -> Result<(Model<f32>, TrainLog)> {
    let train = data.split("train")?;
    let dev = data.split("dev")?;
    let mut log = TrainLog::default();
    let mut last = Instant::now();
    let label = model.variant().name();
    let result = fit(
        model,
        &train.documents,
        &cfg.train_config(seed),
        |m| dev_score(m, data, &dev, cfg).map_err(|e| match e {
            Error::Core(c) => c,
            other => ctxnmt_core::Error::InvalidArgument(other.to_string()),
        }),
        |rec| {
            let r = LogRecord {
                epoch: rec.epoch,
                loss: rec.train_loss,
                dev_bleu: rec.dev_score,
                seconds: last.elapsed().as_secs_f64(),
            };
            last = Instant::now();
            if !quiet {
                eprintln!("{label} seed {seed} {}", r.line());
            }
            log.records.push(r);
        },
    )?;
    log.best_epoch = result.best_epoch;
    Ok((result.best, log))
}

fn save_trained(
    run: &mut RunManifest,
    out_dir: &Path,
    stem: &str,
    model: &Model<f32>,
    log: &TrainLog,
) -> Result<PathBuf> {
    let prefix = out_dir.join(stem);
    save_checkpoint(&prefix, model)?;
    let log_path = side_path(&prefix, "log");
    write_text(&log_path, &log.render())?;
    run.output(&manifest_path(&prefix), out_dir);
    run.output(&blob_path(&prefix), out_dir);
    run.output(&log_path, out_dir);
    Ok(prefix)
}

/// Trains the context-free baseline and keeps the best epoch on dev BLEU.
pub fn train_baseline(cfg: &RunConfig, data_dir: &Path, out_dir: &Path, seed: u64, quiet: bool) -> Result<Trained> {
    let data = Data::open(data_dir)?;
    let mut run = RunManifest::new("train-baseline", seed, cfg);
    data.inputs(&["train", "dev"], &mut run, out_dir)?;
    let mcfg = cfg.model_config(Variant::Baseline, data.src_vocab.len(), data.trg_vocab.len());
    let model = Model::new(mcfg, &mut ChaCha8Rng::seed_from_u64(seed ^ INIT_STREAM))?;
    let (model, log) = train(cfg, seed, model, &data, quiet)?;
    let checkpoint = save_trained(&mut run, out_dir, "baseline", &model, &log)?;
    run.write(out_dir, "train-baseline")?;
    Ok(Trained { model, log, checkpoint })
}

fn same_file(a: &Path, b: &Path) -> bool {
    let canon = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    canon(a) == canon(b)
}

/// Fine-tunes a `variant` model started from a baseline checkpoint. The
/// baseline files are only read.
pub fn finetune(
    cfg: &RunConfig,
    variant: Variant,
    baseline: &Path,
    data_dir: &Path,
    out_dir: &Path,
    seed: u64,
    quiet: bool,
) -> Result<Trained> {
    let base_prefix = checkpoint_prefix(baseline);
    let stem = variant.name();
    let out_prefix = out_dir.join(stem);
    if same_file(&manifest_path(&base_prefix), &manifest_path(&out_prefix)) {
        return Err(Error::Config(format!(
            "fine-tuning would overwrite the baseline checkpoint {}",
            base_prefix.display()
        )));
    }
    let data = Data::open(data_dir)?;
    let base = load_checkpoint(&base_prefix)?;
    if (base.config.src_vocab, base.config.trg_vocab) != (data.src_vocab.len(), data.trg_vocab.len()) {
        return Err(Error::Checkpoint {
            path: manifest_path(&base_prefix),
            msg: format!(
                "vocabulary sizes {}/{} differ from the data's {}/{}",
                base.config.src_vocab,
                base.config.trg_vocab,
                data.src_vocab.len(),
                data.trg_vocab.len()
            ),
        });
    }
    let mut run = RunManifest::new("finetune", seed, cfg);
    run.input(&manifest_path(&base_prefix), out_dir)?;
    run.input(&blob_path(&base_prefix), out_dir)?;
    data.inputs(&["train", "dev"], &mut run, out_dir)?;
    let model = Model::from_pretrained(&base, variant, &mut ChaCha8Rng::seed_from_u64(seed ^ INIT_STREAM))?;
    let (model, log) = train(cfg, seed, model, &data, quiet)?;
    let checkpoint = save_trained(&mut run, out_dir, stem, &model, &log)?;
    run.write(out_dir, &format!("finetune-{stem}"))?;
    Ok(Trained { model, log, checkpoint })
}

/// Translates `split` of the data directory and writes
/// `O/<model>.<split>.hyp` (or `output`).
pub fn translate(
    cfg: &RunConfig,
    model_path: &Path,
    data_dir: &Path,
    split: &str,
    output: Option<&Path>,
    out_dir: &Path,
) -> Result<PathBuf> {
    let prefix = checkpoint_prefix(model_path);
    let model = load_checkpoint(&prefix)?;
    let data = Data::open(data_dir)?;
    let docs = data.split(split)?;
    let stem = prefix.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut run = RunManifest::new("translate", cfg.seed, cfg);
    run.input(&manifest_path(&prefix), out_dir)?;
    run.input(&blob_path(&prefix), out_dir)?;
    data.inputs(&[split], &mut run, out_dir)?;
    let hyps = translate_split(&model, &data, &docs, &cfg.decode_config())?;
    let path = output.map_or_else(|| out_dir.join(format!("{stem}.{split}.hyp")), Path::to_path_buf);
    write_text(&path, &format_hypotheses(&hyps))?;
    run.output(&path, out_dir);
    run.write(out_dir, &format!("translate-{stem}.{split}"))?;
    Ok(path)
}

/// Reference documents in words, read from a plain corpus side.
pub fn load_references(path: &Path) -> Result<Hypotheses> {
    Ok(parse_blocks(&read_text(path)?)
        .into_iter()
        .map(|b| b.iter().map(|l| l.split_whitespace().map(str::to_string).collect()).collect())
        .collect())
}

pub fn load_hypotheses(path: &Path, refs: &[Vec<Vec<String>>]) -> Result<Hypotheses> {
    let shape: Vec<usize> = refs.iter().map(Vec::len).collect();
    parse_hypotheses(&read_text(path)?, &shape, path)
}

/// Scores hypotheses against references; with labels, also the pronoun
/// slots. BLEU leaves out the first `skip` sentences of each document.
pub fn score(
    hyps: &[Vec<Vec<String>>],
    refs: &[Vec<Vec<String>>],
    meta: Option<&[DocMeta]>,
    skip: usize,
) -> Result<EvalReport> {
    let h = scored_sentences(hyps, skip);
    let r = scored_sentences(refs, skip);
    let bleu = corpus_bleu(&h, &r)?;
    Ok(EvalReport {
        bleu,
        sentences: h.len(),
        skipped: skip,
        slot_accuracy: meta.map(|m| slot_accuracy(hyps, m)),
        consistency: meta.map(|_| slot_consistency(hyps)),
    })
}

/// Scores a hypothesis file and writes `O/<hyp>.report`.
pub fn evaluate(
    cfg: &RunConfig,
    hyp: &Path,
    reference: &Path,
    meta: Option<&Path>,
    out_dir: &Path,
) -> Result<(EvalReport, PathBuf)> {
    let refs = load_references(reference)?;
    let hyps = load_hypotheses(hyp, &refs)?;
    let labels = meta.map(crate::formats::load_meta).transpose()?;
    let report = score(&hyps, &refs, labels.as_deref(), cfg.forced_prefix)?;
    let mut run = RunManifest::new("evaluate", cfg.seed, cfg);
    run.input(hyp, out_dir)?;
    run.input(reference, out_dir)?;
    if let Some(m) = meta {
        run.input(m, out_dir)?;
    }
    let stem = hyp.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let path = out_dir.join(format!("{stem}.report"));
    write_text(&path, &report.render_records())?;
    run.output(&path, out_dir);
    run.write(out_dir, &format!("evaluate-{stem}"))?;
    Ok((report, path))
}

/// Paired bootstrap test of `b` against `a` on BLEU.
pub fn compare_hypotheses(
    a: &[Vec<Vec<String>>],
    b: &[Vec<Vec<String>>],
    refs: &[Vec<Vec<String>>],
    skip: usize,
    samples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    let r = scored_sentences(refs, skip);
    let sa = corpus_stats(&scored_sentences(a, skip), &r)?;
    let sb = corpus_stats(&scored_sentences(b, skip), &r)?;
    Ok(paired_bootstrap(&sa, &sb, samples, &mut ChaCha8Rng::seed_from_u64(seed))?)
}

pub fn compare(cfg: &RunConfig, a: &Path, b: &Path, reference: &Path) -> Result<BootstrapResult> {
    let refs = load_references(reference)?;
    let ha = load_hypotheses(a, &refs)?;
    let hb = load_hypotheses(b, &refs)?;
    compare_hypotheses(&ha, &hb, &refs, cfg.forced_prefix, cfg.samples, cfg.seed)
}

/// Parameter counts of all six variants.
pub fn param_table(cfg: &RunConfig, src_vocab: usize, trg_vocab: usize) -> Vec<(Variant, usize)> {
    Variant::ALL
        .iter()
        .map(|&v| (v, ctxnmt_core::model::param_count(&cfg.model_config(v, src_vocab, trg_vocab))))
        .collect()
}
