use rand::distributions::{Distribution, WeightedIndex};

use crate::data::HybridLabel;
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Sampling with replacement where each sample is weighted by the inverse size of its
/// hybrid-status group, so hybrids and non-hybrids are drawn equally often.
#[derive(Clone, Debug)]
pub struct WeightedSampler {
    weights: Vec<f64>,
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(labels: &[HybridLabel]) -> Result<Self> {
        let mut counts = [0usize; 2];
        for l in labels {
            let h = l
                .is_hybrid()
                .ok_or_else(|| Error::invalid("weighted sampler needs labeled samples"))?;
            counts[usize::from(h)] += 1;
        }
        if counts[0] == 0 || counts[1] == 0 {
            return Err(Error::invalid(format!(
                "weighted sampler needs both groups, got {} non-hybrid and {} hybrid",
                counts[0], counts[1]
            )));
        }
        let weights: Vec<f64> = labels
            .iter()
            .map(|l| 1.0 / counts[usize::from(l.is_hybrid() == Some(true))] as f64)
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(WeightedSampler { weights, dist })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn draw(&self, rng: &mut Rng) -> usize {
        self.dist.sample(rng)
    }
}

pub fn weighted_sampler(labels: &[HybridLabel], n_draws: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let s = WeightedSampler::new(labels)?;
    Ok((0..n_draws).map(|_| s.draw(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn labels(n_h: usize, n_n: usize) -> Vec<HybridLabel> {
        std::iter::repeat_n(HybridLabel::Hybrid(0, 1), n_h)
            .chain(std::iter::repeat_n(HybridLabel::NonHybrid(0), n_n))
            .collect()
    }

    #[test]
    fn inverse_group_weights() {
        let s = WeightedSampler::new(&labels(91, 2001)).unwrap();
        assert_eq!(s.weights()[0], 1.0 / 91.0);
        assert_eq!(s.weights()[91], 1.0 / 2001.0);
        let total_h: f64 = s.weights()[..91].iter().sum();
        let total_n: f64 = s.weights()[91..].iter().sum();
        assert!((total_h - total_n).abs() < 1e-12);
    }

    #[test]
    fn equal_groups_are_uniform() {
        let s = WeightedSampler::new(&labels(5, 5)).unwrap();
        assert!(s.weights().iter().all(|&w| w == 0.2));
    }

    #[test]
    fn one_group_is_rejected() {
        assert!(WeightedSampler::new(&labels(0, 5)).is_err());
        assert!(WeightedSampler::new(&labels(3, 0)).is_err());
        assert!(WeightedSampler::new(&[HybridLabel::Unlabeled, HybridLabel::NonHybrid(0)]).is_err());
    }

    #[test]
    fn draws_are_seeded() {
        let l = labels(10, 30);
        let a = weighted_sampler(&l, 50, &mut Rng::seed_from_u64(1)).unwrap();
        let b = weighted_sampler(&l, 50, &mut Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&i| i < 40));
    }
}
