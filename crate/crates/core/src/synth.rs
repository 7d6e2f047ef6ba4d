//! Synthetic mimic-species generator.
//!
//! Species A has `k_classes` subspecies whose means sit on a hypersphere; hybrids are
//! drawn around the midpoint of their two parents' means. Species B reuses the same
//! class structure with every mean displaced by a random vector of norm `mimic_shift`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ClassInfo, HybridLabel, SampleRecord, Source, Taxonomy};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::seed::{rng_for, Rng};

pub const SPECIES_A: &str = "A";
pub const SPECIES_B: &str = "B";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub k_classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub n_hybrid: usize,
    pub noise_sigma: f64,
    pub mimic_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            k_classes: 4,
            dim: 32,
            n_per_class: 200,
            n_hybrid: 40,
            noise_sigma: 1.0,
            mimic_shift: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_classes < 2 {
            return Err(Error::invalid(format!("k_classes must be >= 2, got {}", self.k_classes)));
        }
        if self.dim < 2 {
            return Err(Error::invalid(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.n_per_class == 0 || self.n_hybrid == 0 {
            return Err(Error::invalid("n_per_class and n_hybrid must be positive"));
        }
        for (name, v) in [("noise_sigma", self.noise_sigma), ("mimic_shift", self.mimic_shift)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Radius of the class-mean hypersphere.
    pub fn mean_radius(&self) -> f64 {
        if self.noise_sigma > 0.0 {
            8.0 * self.noise_sigma
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub taxonomy: Taxonomy,
    pub records: Vec<SampleRecord>,
    pub embeddings: EmbeddingMatrix,
    /// Class means indexed like the taxonomy (species A classes, then species B).
    pub means: Vec<Vec<f64>>,
}

impl SynthDataset {
    /// Records of one species group with their embedding rows, re-indexed from zero.
    pub fn species(&self, group: &str) -> Result<(Vec<SampleRecord>, EmbeddingMatrix)> {
        let mut rows = Vec::new();
        let mut records = Vec::new();
        for r in self.records.iter().filter(|r| r.species_group == group) {
            let Source::Row(i) = r.source else { unreachable!("synthetic records are row-backed") };
            records.push(SampleRecord {
                source: Source::Row(rows.len()),
                ..r.clone()
            });
            rows.push(i);
        }
        if rows.is_empty() {
            return Err(Error::invalid(format!("no records for species `{group}`")));
        }
        Ok((records, self.embeddings.select(&rows)?))
    }
}

fn gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn scaled_to(mut v: Vec<f64>, norm: f64) -> Vec<f64> {
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x *= norm / len;
    }
    v
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let k = cfg.k_classes;
    let mut rng = rng_for(cfg.seed, "synth");

    let means_a: Vec<Vec<f64>> = (0..k)
        .map(|_| scaled_to(gaussian(&mut rng, cfg.dim), cfg.mean_radius()))
        .collect();
    let means_b: Vec<Vec<f64>> = means_a
        .iter()
        .map(|mu| {
            let delta = scaled_to(gaussian(&mut rng, cfg.dim), cfg.mimic_shift);
            if cfg.mimic_shift == 0.0 {
                mu.clone()
            } else {
                mu.iter().zip(&delta).map(|(m, d)| m + d).collect()
            }
        })
        .collect();

    let classes = [SPECIES_A, SPECIES_B]
        .iter()
        .flat_map(|&sp| {
            (0..k).map(move |c| ClassInfo {
                name: format!("{sp}{c}"),
                species: sp.to_string(),
            })
        })
        .collect();
    let taxonomy = Taxonomy::new(classes)?;

    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
    let mut records = Vec::new();
    let mut data: Vec<f32> = Vec::new();
    for (offset, group, means) in [(0, SPECIES_A, &means_a), (k, SPECIES_B, &means_b)] {
        let mut emit = |center: Vec<f64>, label: HybridLabel, rng: &mut Rng| {
            let row = records.len();
            for c in center {
                let eps = if cfg.noise_sigma > 0.0 {
                    cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                data.push((c + eps) as f32);
            }
            records.push(SampleRecord {
                id: format!("{group}{row:05}"),
                label,
                source: Source::Row(row),
                species_group: group.to_string(),
            });
        };
        for (c, mu) in means.iter().enumerate() {
            for _ in 0..cfg.n_per_class {
                emit(mu.clone(), HybridLabel::NonHybrid(offset + c), &mut rng);
            }
        }
        for j in 0..cfg.n_hybrid {
            let (a, b) = pairs[j % pairs.len()];
            let mid = means[a].iter().zip(&means[b]).map(|(x, y)| (x + y) / 2.0).collect();
            emit(mid, HybridLabel::hybrid(offset + a, offset + b)?, &mut rng);
        }
    }
    let n = records.len();
    let embeddings = EmbeddingMatrix::new(n, cfg.dim, data)?;
    let means = means_a.into_iter().chain(means_b).collect();
    Ok(SynthDataset {
        taxonomy,
        records,
        embeddings,
        means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_hybrid_is_midpoint() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let ds = synth_dataset(&cfg).unwrap();
        for (i, r) in ds.records.iter().enumerate() {
            let expected: Vec<f32> = match r.label {
                HybridLabel::Hybrid(a, b) => ds.means[a].iter().zip(&ds.means[b]).map(|(x, y)| ((x + y) / 2.0) as f32).collect(),
                HybridLabel::NonHybrid(c) => ds.means[c].iter().map(|&x| x as f32).collect(),
                HybridLabel::Unlabeled => unreachable!(),
            };
            assert_eq!(ds.embeddings.row(i), expected.as_slice());
        }
        let norm: f64 = ds.means[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_shift_copies_means() {
        let cfg = SynthConfig {
            mimic_shift: 0.0,
            ..SynthConfig::default()
        };
        let ds = synth_dataset(&cfg).unwrap();
        let k = cfg.k_classes;
        for c in 0..k {
            assert_eq!(ds.means[c], ds.means[k + c]);
        }
    }

    #[test]
    fn shift_has_requested_norm() {
        let cfg = SynthConfig::default();
        let ds = synth_dataset(&cfg).unwrap();
        let k = cfg.k_classes;
        for c in 0..k {
            let d: f64 = ds.means[c].iter().zip(&ds.means[k + c]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((d - 0.5).abs() < 1e-12);
            let r: f64 = ds.means[c].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((r - 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_counted() {
        let cfg = SynthConfig::default();
        let a = synth_dataset(&cfg).unwrap();
        let b = synth_dataset(&cfg).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.records, b.records);
        let per_species = cfg.k_classes * cfg.n_per_class + cfg.n_hybrid;
        assert_eq!(a.records.len(), 2 * per_species);
        let (recs_b, emb_b) = a.species(SPECIES_B).unwrap();
        assert_eq!(recs_b.len(), per_species);
        assert_eq!(emb_b.row(0), a.embeddings.row(per_species));
        assert_eq!(recs_b[0].source, Source::Row(0));
        let other = synth_dataset(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(other.embeddings, a.embeddings);
    }

    #[test]
    fn class_means_are_recovered() {
        let cfg = SynthConfig {
            k_classes: 2,
            dim: 4,
            n_per_class: 10_000,
            n_hybrid: 1,
            noise_sigma: 1.5,
            ..SynthConfig::default()
        };
        let ds = synth_dataset(&cfg).unwrap();
        let n = cfg.n_per_class as f64;
        for c in 0..cfg.k_classes {
            let mut sum = vec![0.0f64; cfg.dim];
            for (i, r) in ds.records.iter().enumerate() {
                if r.label == HybridLabel::NonHybrid(c) {
                    for (s, &v) in sum.iter_mut().zip(ds.embeddings.row(i)) {
                        *s += f64::from(v);
                    }
                }
            }
            for (s, mu) in sum.iter().zip(&ds.means[c]) {
                assert!((s / n - mu).abs() < 3.0 * cfg.noise_sigma / n.sqrt(), "class {c}");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { k_classes: 1, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { noise_sigma: f64::NAN, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { n_hybrid: 0, ..Default::default() }.validate().is_err());
    }
}
