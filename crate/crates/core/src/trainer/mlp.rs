//! Three-layer classifier head with an optional identity-initialized linear adapter.
//!
//! `x -> [adapter] -> layer1 -> ReLU -> layer2 -> ReLU -> layer3 -> softmax`

use rand::Rng as _;

use crate::data::SoftTarget;
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Guards the logarithm in [`soft_ce_loss`].
pub const LOG_EPS: f64 = 1e-12;

/// Fully connected layer, weights stored row-major as `out_dim x in_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut d = Dense::zeros(dim, dim);
        for i in 0..dim {
            d.weight[i * dim + i] = 1.0;
        }
        d
    }

    /// He-style uniform init, bound `sqrt(6 / fan_in)`; biases start at zero.
    pub fn he_uniform(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let mut d = Dense::zeros(in_dim, out_dim);
        for w in &mut d.weight {
            *w = rng.gen_range(-bound..bound);
        }
        d
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weight.chunks_exact(self.in_dim).zip(&self.bias).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    /// Accumulates `dW += dz ⊗ x`, `db += dz`, and returns `dx = Wᵀ dz` when requested.
    fn backward_accumulate(&self, x: &[f64], dz: &[f64], grad: &mut Dense, dx: Option<&mut Vec<f64>>) {
        for ((g_row, &d), gb) in grad.weight.chunks_exact_mut(self.in_dim).zip(dz).zip(&mut grad.bias) {
            *gb += d;
            if d != 0.0 {
                for (g, v) in g_row.iter_mut().zip(x) {
                    *g += d * v;
                }
            }
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(self.in_dim, 0.0);
            for (row, &d) in self.weight.chunks_exact(self.in_dim).zip(dz) {
                if d != 0.0 {
                    for (o, w) in dx.iter_mut().zip(row) {
                        *o += d * w;
                    }
                }
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Parameter group; each group has its own learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Adapter,
    Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub adapter: Option<Dense>,
    pub layer1: Dense,
    pub layer2: Dense,
    pub layer3: Dense,
}

impl MlpParams {
    pub fn init(input_dim: usize, h1: usize, h2: usize, k: usize, with_adapter: bool, rng: &mut Rng) -> Self {
        MlpParams {
            adapter: with_adapter.then(|| Dense::identity(input_dim)),
            layer1: Dense::he_uniform(input_dim, h1, rng),
            layer2: Dense::he_uniform(h1, h2, rng),
            layer3: Dense::he_uniform(h2, k, rng),
        }
    }

    pub fn zeros(input_dim: usize, h1: usize, h2: usize, k: usize, with_adapter: bool) -> Self {
        MlpParams {
            adapter: with_adapter.then(|| Dense::zeros(input_dim, input_dim)),
            layer1: Dense::zeros(input_dim, h1),
            layer2: Dense::zeros(h1, h2),
            layer3: Dense::zeros(h2, k),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.input_dim(),
            self.layer1.out_dim,
            self.layer2.out_dim,
            self.num_classes(),
            self.adapter.is_some(),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.layer1.in_dim
    }

    pub fn hidden(&self) -> (usize, usize) {
        (self.layer1.out_dim, self.layer2.out_dim)
    }

    pub fn num_classes(&self) -> usize {
        self.layer3.out_dim
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        let chain = self.adapter.as_ref().is_none_or(|a| a.in_dim == d && a.out_dim == d)
            && self.layer2.in_dim == self.layer1.out_dim
            && self.layer3.in_dim == self.layer2.out_dim;
        let sized = self.layers().all(|(_, l)| l.weight.len() == l.in_dim * l.out_dim && l.bias.len() == l.out_dim);
        if !chain || !sized {
            return Err(Error::invalid("MLP layer dimensions are not chain-consistent"));
        }
        if self.num_classes() < 2 {
            return Err(Error::invalid("MLP needs at least 2 output classes"));
        }
        if !self.layers().all(|(_, l)| l.is_finite()) {
            return Err(Error::Numeric("MLP parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// Layers in forward order with their names.
    pub fn layers(&self) -> impl Iterator<Item = (&'static str, &Dense)> {
        self.adapter
            .as_ref()
            .map(|a| ("adapter", a))
            .into_iter()
            .chain([("layer1", &self.layer1), ("layer2", &self.layer2), ("layer3", &self.layer3)])
    }

    /// Every parameter tensor as `(name, group, values)` in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Group, &[f64])> {
        self.layers()
            .flat_map(|(name, l)| {
                let group = if name == "adapter" { Group::Adapter } else { Group::Head };
                [
                    (format!("{name}.weight"), group, l.weight.as_slice()),
                    (format!("{name}.bias"), group, l.bias.as_slice()),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(Group, &mut [f64])> {
        let mut out: Vec<(Group, &mut [f64])> = Vec::with_capacity(8);
        if let Some(a) = self.adapter.as_mut() {
            out.push((Group::Adapter, &mut a.weight));
            out.push((Group::Adapter, &mut a.bias));
        }
        for l in [&mut self.layer1, &mut self.layer2, &mut self.layer3] {
            out.push((Group::Head, &mut l.weight));
            out.push((Group::Head, &mut l.bias));
        }
        out
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Intermediate activations of one forward pass, kept for backprop.
#[derive(Clone, Debug, Default)]
pub struct Activations {
    adapted: Vec<f64>,
    pre1: Vec<f64>,
    hidden1: Vec<f64>,
    pre2: Vec<f64>,
    hidden2: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn relu_into(pre: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(pre.iter().map(|&v| v.max(0.0)));
}

fn forward_cached(params: &MlpParams, x: &[f64], act: &mut Activations) {
    let input: &[f64] = match &params.adapter {
        Some(a) => {
            a.forward_into(x, &mut act.adapted);
            &act.adapted
        }
        None => x,
    };
    params.layer1.forward_into(input, &mut act.pre1);
    relu_into(&act.pre1, &mut act.hidden1);
    params.layer2.forward_into(&act.hidden1, &mut act.pre2);
    relu_into(&act.pre2, &mut act.hidden2);
    params.layer3.forward_into(&act.hidden2, &mut act.logits);
    act.probs = softmax(&act.logits);
}

fn check_input(params: &MlpParams, x: &[f64]) -> Result<()> {
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input to forward".into()));
    }
    Ok(())
}

/// Returns `(logits, probs)` for one input vector.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_input(params, x)?;
    let mut act = Activations::default();
    forward_cached(params, x, &mut act);
    Ok((act.logits, act.probs))
}

pub fn soft_ce_loss(probs: &[f64], target: &SoftTarget) -> f64 {
    -probs
        .iter()
        .zip(target.probs())
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| t * (p + LOG_EPS).ln())
        .sum::<f64>()
}

/// Gradients of the mean soft cross-entropy over a batch, plus that mean loss.
///
/// The logit gradient is `probs - target`, the exact derivative of the cross-entropy;
/// the `LOG_EPS` guard only affects the reported loss value.
pub fn backward(params: &MlpParams, batch: &[&[f64]], targets: &[&SoftTarget]) -> Result<(MlpParams, f64)> {
    if batch.is_empty() {
        return Err(Error::invalid("backward needs a non-empty batch"));
    }
    if batch.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            got: targets.len(),
        });
    }
    let k = params.num_classes();
    let mut grad = params.zeros_like();
    let mut act = Activations::default();
    let mut dz = Vec::with_capacity(k);
    let mut dh = Vec::new();
    let mut loss = 0.0;
    for (&x, &target) in batch.iter().zip(targets) {
        check_input(params, x)?;
        if target.probs().len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: target.probs().len(),
            });
        }
        forward_cached(params, x, &mut act);
        loss += soft_ce_loss(&act.probs, target);

        dz.clear();
        dz.extend(act.probs.iter().zip(target.probs()).map(|(p, t)| p - t));
        params.layer3.backward_accumulate(&act.hidden2, &dz, &mut grad.layer3, Some(&mut dh));
        mask_relu(&mut dh, &act.pre2);
        params.layer2.backward_accumulate(&act.hidden1, &dh, &mut grad.layer2, Some(&mut dz));
        mask_relu(&mut dz, &act.pre1);
        match (&params.adapter, &mut grad.adapter) {
            (Some(a), Some(ga)) => {
                params.layer1.backward_accumulate(&act.adapted, &dz, &mut grad.layer1, Some(&mut dh));
                a.backward_accumulate(x, &dh, ga, None);
            }
            _ => params.layer1.backward_accumulate(x, &dz, &mut grad.layer1, None),
        }
    }
    let n = batch.len() as f64;
    for (_, g) in grad.tensors_mut() {
        for v in g.iter_mut() {
            *v /= n;
        }
    }
    Ok((grad, loss / n))
}

fn mask_relu(grad: &mut [f64], pre: &[f64]) {
    for (g, &z) in grad.iter_mut().zip(pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_soft_target, ClassInfo, HybridLabel, Taxonomy};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use crate::seed::Rng;

    fn taxonomy(k: usize) -> Taxonomy {
        Taxonomy::new(
            (0..k)
                .map(|i| ClassInfo {
                    name: format!("c{i}"),
                    species: "A".into(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn target(probs: &[f64]) -> SoftTarget {
        // Build through the public constructor for one-hot / pair targets.
        let k = probs.len();
        let nz: Vec<usize> = (0..k).filter(|&i| probs[i] > 0.0).collect();
        let label = if nz.len() == 1 { HybridLabel::NonHybrid(nz[0]) } else { HybridLabel::hybrid(nz[0], nz[1]).unwrap() };
        build_soft_target(&label, &taxonomy(k)).unwrap()
    }

    #[test]
    fn zero_net_is_uniform() {
        let p = MlpParams::zeros(5, 4, 3, 4, false);
        let (_, probs) = forward(&p, &[1.0, -2.0, 3.0, 0.5, 0.0]).unwrap();
        assert!(probs.iter().all(|&q| q == 0.25));
    }

    #[test]
    fn identity_adapter_is_transparent() {
        let mut rng = Rng::seed_from_u64(3);
        let with = MlpParams::init(6, 8, 8, 3, true, &mut rng);
        let without = MlpParams {
            adapter: None,
            ..with.clone()
        };
        let x = [0.3, -1.0, 2.0, 0.0, 0.7, -0.2];
        assert_eq!(forward(&with, &x).unwrap(), forward(&without, &x).unwrap());
        let zero_head = MlpParams::zeros(6, 8, 8, 3, true);
        let mut zero_with_id = zero_head.clone();
        zero_with_id.adapter = Some(Dense::identity(6));
        assert_eq!(
            forward(&zero_with_id, &x).unwrap().1,
            forward(&MlpParams { adapter: None, ..zero_head }, &x).unwrap().1
        );
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 0.0]);
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
        let p = softmax(&[-1e6, 1e6, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dimension_mismatch() {
        let p = MlpParams::zeros(3, 2, 2, 2, false);
        assert!(matches!(forward(&p, &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn loss_examples() {
        assert!(soft_ce_loss(&[0.0, 1.0, 0.0], &target(&[0.0, 1.0, 0.0])) <= 1e-11);
        let l = soft_ce_loss(&[0.5, 0.5], &target(&[0.5, 0.5]));
        assert!((l - std::f64::consts::LN_2).abs() < 1e-11);
        let l = soft_ce_loss(&[0.5, 0.5, 0.0, 0.0], &target(&[0.5, 0.0, 0.0, 0.5]));
        let expect = -0.5 * (0.5f64 + LOG_EPS).ln() - 0.5 * LOG_EPS.ln();
        assert!((l - expect).abs() < 1e-12);
        assert!(l.is_finite() && l > 13.0);
    }

    #[test]
    fn output_bias_gradient_is_probs_minus_target() {
        let p = MlpParams::zeros(3, 4, 4, 2, false);
        let x = [1.0, 2.0, 3.0];
        let t = target(&[1.0, 0.0]);
        let (g, _) = backward(&p, &[&x], &[&t]).unwrap();
        assert_eq!(g.layer3.bias, vec![-0.5, 0.5]);
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let mut rng = Rng::seed_from_u64(5);
        let p = MlpParams::init(4, 6, 5, 3, true, &mut rng);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ts = [target(&[1.0, 0.0, 0.0]), target(&[0.0, 0.5, 0.5]), target(&[0.0, 0.0, 1.0])];
        let batch: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let tref: Vec<&SoftTarget> = ts.iter().collect();
        let (g1, l1) = backward(&p, &batch, &tref).unwrap();
        let batch2: Vec<&[f64]> = batch.iter().chain(&batch).copied().collect();
        let tref2: Vec<&SoftTarget> = tref.iter().chain(&tref).copied().collect();
        let (g2, l2) = backward(&p, &batch2, &tref2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for ((_, _, a), (_, _, b)) in g1.tensors().iter().zip(g2.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_is_distribution(logits in proptest::collection::vec(-1e6f64..1e6, 2..12)) {
            let p = softmax(&logits);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn loss_is_permutation_equivariant(raw in proptest::collection::vec(0.01f64..1.0, 4), a in 0usize..4, b in 0usize..4, rot in 0usize..4) {
            let sum: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let mut t = vec![0.0; 4];
            if a == b { t[a] = 1.0 } else { t[a] = 0.5; t[b] = 0.5 }
            let perm = |v: &[f64]| -> Vec<f64> { (0..4).map(|i| v[(i + rot) % 4]).collect() };
            let l1 = soft_ce_loss(&probs, &target(&t));
            let l2 = soft_ce_loss(&perm(&probs), &target(&perm(&t)));
            prop_assert!((l1 - l2).abs() <= 1e-12);
        }
    }
}
