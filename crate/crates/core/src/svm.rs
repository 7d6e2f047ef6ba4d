//! Linear SVM baseline (hybrid vs. non-hybrid) trained with Pegasos.
//!
//! The bias is handled as an extra constant feature and is regularized along with the
//! weights. Margins map to `[0, 1]` through a logistic whose temperature is fit so the
//! 5% / 95% training-margin quantiles land near 0.05 / 0.95.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            epochs: 50,
            lambda: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weight: Vec<f64>,
    pub bias: f64,
    /// Logistic temperature, always `> 0`.
    pub scale: f64,
}

impl SvmModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.bias + self.weight.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Refits `scale` so that the larger of `|q05|`, `|q95|` of `margins` maps to 0.05 / 0.95.
    pub fn calibrate(&mut self, margins: &[f64]) {
        if margins.is_empty() {
            return;
        }
        let mut m = margins.to_vec();
        m.sort_by(f64::total_cmp);
        let q = |p: f64| m[((m.len() - 1) as f64 * p).floor() as usize];
        let spread = q(0.05).abs().max(q(0.95).abs());
        let scale = spread / 19f64.ln();
        self.scale = if scale.is_finite() && scale > 1e-12 { scale } else { 1.0 };
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn svm_score(model: &SvmModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.weight.len() {
        return Err(Error::DimensionMismatch {
            expected: model.weight.len(),
            got: x.len(),
        });
    }
    Ok(logistic(model.margin(x) / model.scale))
}

pub fn svm_train(xs: &[Vec<f64>], is_hybrid: &[bool], cfg: &SvmConfig) -> Result<SvmModel> {
    if xs.len() != is_hybrid.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: is_hybrid.len(),
        });
    }
    if !is_hybrid.iter().any(|&h| h) || is_hybrid.iter().all(|&h| h) {
        return Err(Error::invalid("SVM needs both hybrid and non-hybrid samples"));
    }
    if !(cfg.lambda.is_finite() && cfg.lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {}", cfg.lambda)));
    }
    let d = xs[0].len();
    if let Some(x) = xs.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }

    let mut rng = rng_for(cfg.seed, "svm");
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let radius = 1.0 / cfg.lambda.sqrt();
    let steps = cfg.epochs * xs.len();
    for t in 1..=steps {
        let i = rng.gen_range(0..xs.len());
        let y = if is_hybrid[i] { 1.0 } else { -1.0 };
        let eta = 1.0 / (cfg.lambda * t as f64);
        let margin = y * (b + w.iter().zip(&xs[i]).map(|(w, v)| w * v).sum::<f64>());
        let shrink = 1.0 - eta * cfg.lambda;
        for wj in &mut w {
            *wj *= shrink;
        }
        b *= shrink;
        if margin < 1.0 {
            for (wj, v) in w.iter_mut().zip(&xs[i]) {
                *wj += eta * y * v;
            }
            b += eta * y;
        }
        let norm = (w.iter().map(|v| v * v).sum::<f64>() + b * b).sqrt();
        if norm > radius {
            let s = radius / norm;
            for wj in &mut w {
                *wj *= s;
            }
            b *= s;
        }
    }
    let mut model = SvmModel {
        weight: w,
        bias: b,
        scale: 1.0,
    };
    let margins: Vec<f64> = xs.iter().map(|x| model.margin(x)).collect();
    model.calibrate(&margins);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Rng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn clusters(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let h = i % 3 == 0;
            let c = if h { 3.0 } else { -3.0 };
            xs.push(vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng), noise.sample(&mut rng)]);
            ys.push(h);
        }
        (xs, ys)
    }

    #[test]
    fn separable_clusters_are_separated() {
        let (xs, ys) = clusters(120, 1);
        let m = svm_train(&xs, &ys, &SvmConfig::default()).unwrap();
        let correct = xs.iter().zip(&ys).filter(|(x, &y)| (m.margin(x) > 0.0) == y).count();
        assert_eq!(correct, xs.len());
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        let (xs, ys) = clusters(60, 2);
        let m = svm_train(&xs, &ys, &SvmConfig { lambda: 1e6, ..Default::default() }).unwrap();
        assert!(m.weight.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-2);
    }

    #[test]
    fn seeded() {
        let (xs, ys) = clusters(60, 3);
        let cfg = SvmConfig { seed: 5, ..Default::default() };
        assert_eq!(svm_train(&xs, &ys, &cfg).unwrap(), svm_train(&xs, &ys, &cfg).unwrap());
    }

    #[test]
    fn single_class_rejected() {
        let (xs, _) = clusters(10, 4);
        assert!(svm_train(&xs, &[false; 10], &SvmConfig::default()).is_err());
    }

    #[test]
    fn logistic_mapping() {
        let m = SvmModel { weight: vec![1.0, 0.0], bias: 0.0, scale: 1.0 };
        assert_eq!(svm_score(&m, &[0.0, 5.0]).unwrap(), 0.5);
        assert!(svm_score(&m, &[1e6, 0.0]).unwrap() > 1.0 - 1e-12);
        assert!(svm_score(&m, &[-1e6, 0.0]).unwrap() < 1e-12);
        assert!(svm_score(&m, &[1.0]).is_err());
    }

    #[test]
    fn calibration_hits_quantiles() {
        let mut m = SvmModel { weight: vec![1.0], bias: 0.0, scale: 1.0 };
        let margins: Vec<f64> = (0..=100).map(|i| (i as f64 - 50.0) / 10.0).collect();
        m.calibrate(&margins);
        assert!((svm_score(&m, &[5.0 - 0.5]).unwrap() - 0.95).abs() < 1e-9);
    }
}
