//! Command-line interface. Exit codes: 0 on success, 2 on usage errors,
//! 1 on runtime failures.
//!
//! With `--runs N` (N > 1), training, translation, evaluation and comparison
//! repeat for seeds `seed, seed + 1, ...`; outputs go to `O/seed<s>/`, and
//! `{seed}` in a path argument is replaced by the run's seed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::builder::PossibleValuesParser;
use clap::{Parser, Subcommand};

use ctxnmt_core::Variant;

use crate::config::RunConfig;
use crate::error::Result;
use crate::pipeline;
use crate::report::mean_stdev;

#[derive(Debug, Parser)]
#[command(name = "ctxnmt", version, about = "Document-level context-aware NMT experiments")]
pub struct Cli {
    /// Random seed (first seed with --runs).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Number of seeds to repeat the command over.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Extra configuration override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// No per-epoch progress on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic document corpus with train, dev and test splits.
    Synth {
        /// Which side of the previous sentence resolves the pronoun slot.
        #[arg(long, value_parser = PossibleValuesParser::new(["trg-informative", "src-informative"]))]
        mode: Option<String>,
        /// Training documents.
        #[arg(long)]
        docs: Option<usize>,
        /// File name prefix inside the output directory.
        #[arg(long, default_value = "synth")]
        name: String,
    },
    /// Filter, learn and apply BPE, and build vocabularies.
    Preprocess {
        /// Corpus prefix; reads `<prefix>.{train,dev,test}.{src,trg}`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// BPE merge operations per side.
        #[arg(long)]
        merges: Option<usize>,
        /// Drop training documents with a longer sentence.
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Pretrain the context-free baseline.
    TrainBaseline {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Fine-tune a context-aware variant from a baseline checkpoint.
    Finetune {
        #[arg(long, value_parser = PossibleValuesParser::new(
            ["separated-source", "separated-target", "shared-source", "shared-target", "shared-mix"]))]
        variant: String,
        /// Baseline checkpoint prefix (default `O/baseline`).
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Keep the context-only parameters at their initial values.
        #[arg(long)]
        freeze_context: bool,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Translate a split of a preprocessed data directory.
    Translate {
        /// Checkpoint prefix.
        #[arg(long)]
        model: PathBuf,
        /// Preprocessed data directory (default `O/data`).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Hypothesis file (default `O/<model>.<split>.hyp`).
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Score a hypothesis file.
    Evaluate {
        /// Hypothesis file in words.
        #[arg(long)]
        hyp: PathBuf,
        /// Reference target file in words.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Synthetic labels for slot accuracy.
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Leading sentences per document left out of BLEU.
        #[arg(long)]
        forced_prefix: Option<usize>,
    },
    /// Paired bootstrap test of B against A.
    Compare {
        /// Hypotheses of system A.
        a: PathBuf,
        /// Hypotheses of system B.
        b: PathBuf,
        /// Reference target file in words.
        reference: PathBuf,
        /// Bootstrap samples.
        #[arg(long)]
        n: Option<usize>,
        /// Leading sentences per document left out of BLEU.
        #[arg(long)]
        forced_prefix: Option<usize>,
    },
    /// Parameter counts of all variants.
    Params {
        /// Take vocabulary sizes from a preprocessed data directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    /// Preprocessed data directory (default `O/data`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// AdaGrad learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Debug, clap::Args)]
struct DecodeArgs {
    /// Beam size; 1 is greedy.
    #[arg(long)]
    beam: Option<usize>,
    /// Leading sentences per document forced to their references.
    #[arg(long)]
    forced_prefix: Option<usize>,
}

fn push<T: ToString>(out: &mut Vec<(String, String)>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), v.to_string()));
    }
}

impl DecodeArgs {
    fn overrides(&self, out: &mut Vec<(String, String)>) {
        push(out, "beam", &self.beam);
        push(out, "forced_prefix", &self.forced_prefix);
    }
}

impl TrainArgs {
    fn overrides(&self, out: &mut Vec<(String, String)>) {
        push(out, "epochs", &self.epochs);
        push(out, "lr", &self.lr);
        self.decode.overrides(out);
    }
}

impl Cli {
    fn overrides(&self) -> std::result::Result<Vec<(String, String)>, String> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        push(&mut out, "seed", &self.seed);
        push(&mut out, "runs", &self.runs);
        match &self.command {
            Command::Synth { mode, docs, .. } => {
                push(&mut out, "mode", mode);
                push(&mut out, "docs", docs);
            }
            Command::Preprocess { merges, max_len, .. } => {
                push(&mut out, "merges", merges);
                push(&mut out, "max_len", max_len);
            }
            Command::TrainBaseline { train } => train.overrides(&mut out),
            Command::Finetune { train, freeze_context, .. } => {
                train.overrides(&mut out);
                if *freeze_context {
                    out.push(("freeze_context".into(), "true".into()));
                }
            }
            Command::Translate { decode, .. } => decode.overrides(&mut out),
            Command::Evaluate { forced_prefix, .. } => push(&mut out, "forced_prefix", forced_prefix),
            Command::Compare { n, forced_prefix, .. } => {
                push(&mut out, "samples", n);
                push(&mut out, "forced_prefix", forced_prefix);
            }
            Command::Params { .. } => {}
        }
        Ok(out)
    }
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let overrides = match cli.overrides() {
        Ok(o) => o,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let cfg = match RunConfig::load(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match execute(&cli, &cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// `{seed}` in `path` replaced by `seed`.
fn seeded(path: &Path, seed: u64) -> PathBuf {
    PathBuf::from(path.to_string_lossy().replace("{seed}", &seed.to_string()))
}

struct Seeds {
    root: PathBuf,
    seeds: Vec<u64>,
}

impl Seeds {
    fn new(cfg: &RunConfig, root: &Path) -> Self {
        Seeds {
            root: root.to_path_buf(),
            seeds: cfg.seeds(),
        }
    }

    fn out_dir(&self, seed: u64) -> PathBuf {
        if self.seeds.len() > 1 {
            self.root.join(format!("seed{seed}"))
        } else {
            self.root.clone()
        }
    }
}

fn run_config(cfg: &RunConfig, seed: u64) -> RunConfig {
    RunConfig { seed, ..cfg.clone() }
}

fn execute(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let out = cli.out_dir.as_path();
    let seeds = Seeds::new(cfg, out);
    let data_dir = |d: &Option<PathBuf>, seed: u64| d.as_ref().map_or_else(|| out.join("data"), |p| seeded(p, seed));
    match &cli.command {
        Command::Synth { name, .. } => {
            pipeline::synth(cfg, out, name)?;
            println!(
                "wrote {} {} documents ({} dev, {} test) to {}",
                cfg.docs,
                cfg.mode.name(),
                cfg.dev_docs,
                cfg.test_docs,
                out.join(name).display()
            );
        }
        Command::Preprocess { corpus, .. } => {
            let corpus = corpus.clone().unwrap_or_else(|| out.join("synth"));
            let run = pipeline::preprocess(cfg, &corpus, out)?;
            println!("wrote {} files to {}", run.outputs.len(), out.join("data").display());
        }
        Command::TrainBaseline { train } => {
            for &s in &seeds.seeds {
                let t = pipeline::train_baseline(&run_config(cfg, s), &data_dir(&train.data, s), &seeds.out_dir(s), s, cli.quiet)?;
                println!(
                    "seed {s}: best epoch {} -> {}",
                    t.log.best_epoch,
                    t.checkpoint.display()
                );
            }
        }
        Command::Finetune { variant, baseline, train, .. } => {
            let variant = Variant::parse(variant)?;
            for &s in &seeds.seeds {
                let dir = seeds.out_dir(s);
                let base = baseline.as_ref().map_or_else(|| dir.join("baseline"), |p| seeded(p, s));
                let t = pipeline::finetune(&run_config(cfg, s), variant, &base, &data_dir(&train.data, s), &dir, s, cli.quiet)?;
                println!(
                    "seed {s}: best epoch {} -> {}",
                    t.log.best_epoch,
                    t.checkpoint.display()
                );
            }
        }
        Command::Translate { model, data, split, output, .. } => {
            for &s in &seeds.seeds {
                let output = output.as_ref().map(|p| seeded(p, s));
                let path = pipeline::translate(
                    &run_config(cfg, s),
                    &seeded(model, s),
                    &data_dir(data, s),
                    split,
                    output.as_deref(),
                    &seeds.out_dir(s),
                )?;
                println!("{}", path.display());
            }
        }
        Command::Evaluate { hyp, reference, meta, .. } => {
            let (mut bleus, mut accs) = (Vec::new(), Vec::new());
            for &s in &seeds.seeds {
                let meta = meta.as_ref().map(|p| seeded(p, s));
                let (report, _) = pipeline::evaluate(
                    &run_config(cfg, s),
                    &seeded(hyp, s),
                    &seeded(reference, s),
                    meta.as_deref(),
                    &seeds.out_dir(s),
                )?;
                if seeds.seeds.len() > 1 {
                    println!("seed {s}:");
                }
                print!("{}", report.render_text());
                bleus.push(report.bleu.score);
                accs.extend(report.slot_accuracy.map(|a| a.accuracy()));
            }
            if seeds.seeds.len() > 1 {
                let (m, sd) = mean_stdev(&bleus);
                println!("mean BLEU = {m:.2} ± {sd:.2} over {} runs", bleus.len());
                if !accs.is_empty() {
                    let (m, sd) = mean_stdev(&accs);
                    println!("mean slot accuracy = {m:.4} ± {sd:.4}");
                }
            }
        }
        Command::Compare { a, b, reference, .. } => {
            let mut significant = 0;
            for &s in &seeds.seeds {
                let r = pipeline::compare(&run_config(cfg, s), &seeded(a, s), &seeded(b, s), &seeded(reference, s))?;
                if r.p_value < 0.05 {
                    significant += 1;
                }
                println!(
                    "seed {s}: BLEU A = {:.2}, BLEU B = {:.2}, B better in {}/{} resamples, p = {:.4}",
                    r.bleu_a, r.bleu_b, r.wins_b, r.samples, r.p_value
                );
            }
            if seeds.seeds.len() > 1 {
                println!("p < 0.05 in {significant} of {} runs", seeds.seeds.len());
            }
        }
        Command::Params { data } => {
            let (sv, tv) = match data {
                Some(d) => {
                    let data = pipeline::Data::open(d)?;
                    (data.src_vocab.len(), data.trg_vocab.len())
                }
                None => (cfg.src_vocab, cfg.trg_vocab),
            };
            let table = pipeline::param_table(cfg, sv, tv);
            let base = table[0].1;
            println!("E = {}, H = {}, V_src = {sv}, V_trg = {tv}", cfg.emb, cfg.hidden);
            println!("{:<18} {:>12} {:>12}", "variant", "params", "+baseline");
            for (v, n) in table {
                println!("{:<18} {:>12} {:>12}", v.name(), n, n - base);
            }
        }
    }
    Ok(())
}
