use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::Decision;

/// How the realized decision is picked among the `N` samples of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Uniform over the samples, which are already draws from the model.
    #[default]
    Uniform,
    /// Proportional to each sample's sequence probability.
    Weighted,
}

pub fn choose_index<R: Rng + ?Sized>(samples: &[Decision], selection: Selection, rng: &mut R) -> usize {
    debug_assert!(!samples.is_empty());
    match selection {
        Selection::Uniform => rng.random_range(0..samples.len()),
        Selection::Weighted => {
            let max = samples
                .iter()
                .map(|s| s.seq_logprob)
                .fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = samples.iter().map(|s| (s.seq_logprob - max).exp()).collect();
            match WeightedIndex::new(&weights) {
                Ok(w) => w.sample(rng),
                Err(_) => rng.random_range(0..samples.len()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weighted_follows_sequence_probability() {
        let samples = vec![
            Decision::new("a", "a", vec![0.75f64.ln()]),
            Decision::new("b", "b", vec![0.25f64.ln()]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = 20_000;
        let mut first = [0usize; 2];
        for _ in 0..draws {
            first[0] += usize::from(choose_index(&samples, Selection::Uniform, &mut rng) == 0);
            first[1] += usize::from(choose_index(&samples, Selection::Weighted, &mut rng) == 0);
        }
        let f = |c: usize| c as f64 / draws as f64;
        assert!((f(first[0]) - 0.5).abs() < 0.015);
        assert!((f(first[1]) - 0.75).abs() < 0.015);
    }
}
