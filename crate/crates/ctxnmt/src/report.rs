//! Training logs and evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use ctxnmt_core::bleu::{Bleu, MAX_ORDER};
use ctxnmt_core::synth::SlotScore;

use crate::error::{Error, Result};

/// One completed epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dev_bleu: f64,
    pub seconds: f64,
}

/// Per-epoch records followed by a `#best_epoch` line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub best_epoch: usize,
}

impl LogRecord {
    pub fn line(&self) -> String {
        format!("{}\t{:.6}\t{:.4}\t{:.3}", self.epoch, self.loss, self.dev_bleu, self.seconds)
    }
}

impl TrainLog {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.line());
            out.push('\n');
        }
        let _ = writeln!(out, "#best_epoch\t{}", self.best_epoch);
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut log = TrainLog::default();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: &str| Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: msg.into(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f[0] == "#best_epoch" {
                log.best_epoch = f.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| err("bad best epoch"))?;
                continue;
            }
            if f.len() != 4 {
                return Err(err("expected epoch, loss, dev_bleu and seconds"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
            log.records.push(LogRecord {
                epoch: f[0].parse().map_err(|_| err("bad epoch"))?,
                loss: num(f[1])?,
                dev_bleu: num(f[2])?,
                seconds: num(f[3])?,
            });
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bleu: Bleu,
    /// Sentences scored by BLEU.
    pub sentences: usize,
    /// Leading sentences of each document left out of BLEU.
    pub skipped: usize,
    pub slot_accuracy: Option<SlotScore>,
    pub consistency: Option<SlotScore>,
}

impl EvalReport {
    pub fn render_text(&self) -> String {
        let b = &self.bleu;
        let p: Vec<String> = b.precisions.iter().map(|p| format!("{:.1}", 100.0 * p)).collect();
        let mut out = format!(
            "BLEU = {:.2}, {} (BP = {:.3}, hyp_len = {}, ref_len = {}, sentences = {})\n",
            b.score,
            p.join("/"),
            b.brevity_penalty,
            b.hyp_len,
            b.ref_len,
            self.sentences
        );
        if let Some(s) = self.slot_accuracy {
            let _ = writeln!(out, "slot accuracy = {:.4} ({}/{})", s.accuracy(), s.correct, s.total);
        }
        if let Some(s) = self.consistency {
            let _ = writeln!(out, "slot consistency = {:.4} ({}/{})", s.accuracy(), s.correct, s.total);
        }
        out
    }

    /// `key=value` lines.
    pub fn render_records(&self) -> String {
        let b = &self.bleu;
        let mut out = String::new();
        let _ = writeln!(out, "bleu={:.2}", b.score);
        for n in 0..MAX_ORDER {
            let _ = writeln!(out, "p{}={:.6}", n + 1, b.precisions[n]);
        }
        let _ = writeln!(out, "bp={:.6}", b.brevity_penalty);
        let _ = writeln!(out, "hyp_len={}", b.hyp_len);
        let _ = writeln!(out, "ref_len={}", b.ref_len);
        let _ = writeln!(out, "sentences={}", self.sentences);
        let _ = writeln!(out, "skipped={}", self.skipped);
        for (key, s) in [("slot_accuracy", self.slot_accuracy), ("slot_consistency", self.consistency)] {
            if let Some(s) = s {
                let _ = writeln!(out, "{key}={:.6}", s.accuracy());
                let _ = writeln!(out, "{key}_correct={}", s.correct);
                let _ = writeln!(out, "{key}_total={}", s.total);
            }
        }
        out
    }
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_round_trip() {
        let log = TrainLog {
            records: vec![
                LogRecord { epoch: 1, loss: 2.5, dev_bleu: 10.0, seconds: 1.25 },
                LogRecord { epoch: 2, loss: 1.5, dev_bleu: 12.5, seconds: 1.5 },
            ],
            best_epoch: 2,
        };
        assert_eq!(TrainLog::parse(&log.render(), Path::new("l")).unwrap(), log);
    }

    #[test]
    fn stdev_of_three() {
        let (m, s) = mean_stdev(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
