//! Paired bootstrap resampling over sentence-level BLEU statistics.

use alloc::format;

use rand::Rng;

use crate::bleu::{sum_stats, BleuStats};
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapResult {
    pub bleu_a: f64,
    pub bleu_b: f64,
    pub samples: usize,
    /// Resamples in which system B scored strictly higher than A.
    pub wins_b: usize,
    /// Fraction of resamples with `BLEU(B) <= BLEU(A)`.
    pub p_value: f64,
}

/// Resamples the test set with replacement `samples` times, drawing the same
/// sentence indices for both systems, and counts how often B fails to beat A.
pub fn paired_bootstrap<R: Rng + ?Sized>(
    a: &[BleuStats],
    b: &[BleuStats],
    samples: usize,
    rng: &mut R,
) -> Result<BootstrapResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} sentences", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("test set"));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one sample".into()));
    }
    let n = a.len();
    let mut wins_b = 0;
    for _ in 0..samples {
        let (mut sa, mut sb) = (BleuStats::default(), BleuStats::default());
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            sa += a[i];
            sb += b[i];
        }
        if sb.bleu().score > sa.bleu().score {
            wins_b += 1;
        }
    }
    Ok(BootstrapResult {
        bleu_a: sum_stats(a).bleu().score,
        bleu_b: sum_stats(b).bleu().score,
        samples,
        wins_b,
        p_value: (samples - wins_b) as f64 / samples as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bleu::sentence_stats;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats(pairs: &[(&str, &str)]) -> Vec<BleuStats> {
        pairs
            .iter()
            .map(|(h, r)| {
                let h: Vec<&str> = h.split_whitespace().collect();
                let r: Vec<&str> = r.split_whitespace().collect();
                sentence_stats(&h, &r)
            })
            .collect()
    }

    #[test]
    fn identical_systems_never_win() {
        let a = stats(&[("a b c d e", "a b c d e"), ("x y z w v", "x y q w v")]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = paired_bootstrap(&a, &a, 200, &mut rng).unwrap();
        assert_eq!(r.wins_b, 0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn clearly_better_system_has_small_p() {
        let refs = ["a b c d e f", "g h i j k l", "m n o p q r", "s t u v w x"];
        let good: Vec<(&str, &str)> = refs.iter().map(|r| (*r, *r)).collect();
        let bad: Vec<(&str, &str)> = refs.iter().map(|r| ("a b z z z z", *r)).collect();
        let (sa, sb) = (stats(&bad), stats(&good));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = paired_bootstrap(&sa, &sb, DEFAULT_SAMPLES, &mut rng).unwrap();
        assert!(r.p_value < 0.05);
        assert_eq!(r.bleu_b, 100.0);
    }

    #[test]
    fn seeded_runs_repeat() {
        let a = stats(&[("a b c d e", "a b c d x"), ("x y z w v", "x y z w v")]);
        let b = stats(&[("a b c d x", "a b c d x"), ("x y z w q", "x y z w v")]);
        let run = |s| paired_bootstrap(&a, &b, 100, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let a = stats(&[("a", "a")]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(paired_bootstrap(&a, &[], 10, &mut rng).is_err());
    }
}
