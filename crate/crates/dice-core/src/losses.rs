//! Bottleneck classification losses.
//!
//! Both losses share one shape: a compression term weighted 1/beta — the
//! closed-form KL from the encoder's diagonal Gaussian to a unit-scale
//! target Gaussian — plus the sampled-feature cross-entropy. The
//! class-conditional loss pulls features toward their class-means row; the
//! class-agnostic one pulls every feature toward a single shared row, which
//! is the only difference between the two.
//!
//! The KL is implemented in its exact form
//! `sum_k 0.5 * (s^2 - ln s^2 - 1 + (m - c)^2)`, which is zero at identity.

use crate::model::{Binder, EnsembleModel, GaussianFeatures};
use crate::tape::{Tape, Var};
use crate::tensor::log_softmax;

/// Closed-form KL( N(mean, diag scale^2) || N(class_mean, I) ).
pub fn kl_diag_gaussian_to_unit_class(
    g: &GaussianFeatures,
    class_mean: &[f64],
) -> Result<f64, String> {
    if g.scale.iter().any(|&s| s <= 0.0) {
        return Err("scale must be strictly positive".into());
    }
    assert_eq!(g.mean.len(), class_mean.len(), "dimension mismatch");
    let mut total = 0.0;
    for ((&m, &s), &c) in g.mean.iter().zip(&g.scale).zip(class_mean) {
        let s2 = s * s;
        total += 0.5 * (s2 - s2.ln() - 1.0 + (m - c) * (m - c));
    }
    Ok(total)
}

/// `-log softmax(logits)[y]`.
pub fn cross_entropy(logits: &[f64], y: usize) -> Result<f64, String> {
    if y >= logits.len() {
        return Err(format!("class index {y} out of range {}", logits.len()));
    }
    Ok(-log_softmax(logits)[y])
}

/// Tape expression for the per-row KL to a unit-scale Gaussian target:
/// `[B, d] x [B, d] x [B, d] -> [B]`.
pub fn kl_rows(tape: &Tape, mean: Var, scale: Var, target_mean: Var) -> Var {
    let s2 = tape.mul(scale, scale);
    let var_part = tape.add_scalar(tape.sub(s2, tape.ln(s2)), -1.0);
    let diff = tape.sub(mean, target_mean);
    let mean_part = tape.mul(diff, diff);
    tape.mul_scalar(tape.row_sum(tape.add(var_part, mean_part)), 0.5)
}

/// Tape expression for the mean cross-entropy of `[B, K]` logits against labels.
pub fn cross_entropy_mean(tape: &Tape, logits: Var, ys: &[usize]) -> Var {
    let lse = tape.row_logsumexp(logits);
    let picked = tape.gather_col(logits, ys);
    tape.mean(tape.sub(lse, picked))
}

/// The pieces of one member's bottleneck loss on a batch.
pub struct BottleneckLoss {
    /// (1/beta) * mean KL + mean CE — the term that is optimized.
    pub total: Var,
    /// Mean KL over the batch, unweighted (reporting).
    pub kl: Var,
    /// Mean sampled cross-entropy over the batch (reporting).
    pub ce: Var,
    /// Sampled features, `[B, d]`.
    pub z: Var,
}

fn bottleneck_loss(
    model: &EnsembleModel,
    tape: &Tape,
    binder: &Binder,
    member: usize,
    x: Var,
    ys: &[usize],
    beta: f64,
    noise: Var,
) -> BottleneckLoss {
    assert!(!ys.is_empty(), "empty batch");
    assert!(beta > 0.0, "beta must be positive");
    let (mean, scale) = model.encode_batch(tape, binder, member, x);
    // sample once via reparameterization, predicted scale
    let z = tape.add(mean, tape.mul(noise, scale));
    let logits = model.classify_batch(tape, binder, member, z);
    let target = model.class_means_batch(tape, binder, member, ys);
    let kl = tape.mean(kl_rows(tape, mean, scale, target));
    let ce = cross_entropy_mean(tape, logits, ys);
    let total = tape.add(tape.mul_scalar(kl, 1.0 / beta), ce);
    BottleneckLoss { total, kl, ce, z }
}

/// Class-conditional bottleneck loss: mean over the batch of
/// `(1/beta) KL(e(z|x) || b(z|y)) - log c(y|z)` with z sampled once.
/// Requires a per-class backward table.
pub fn vceb_loss(
    model: &EnsembleModel,
    tape: &Tape,
    binder: &Binder,
    member: usize,
    x: Var,
    ys: &[usize],
    beta: f64,
    noise: Var,
) -> BottleneckLoss {
    assert_eq!(
        model.config.class_rows, model.config.classes,
        "class-conditional loss needs one backward row per class"
    );
    bottleneck_loss(model, tape, binder, member, x, ys, beta, noise)
}

/// Class-agnostic bottleneck loss: identical to [`vceb_loss`] except the KL
/// target is the single learned Gaussian shared by all classes. Requires a
/// one-row backward table.
pub fn vib_loss(
    model: &EnsembleModel,
    tape: &Tape,
    binder: &Binder,
    member: usize,
    x: Var,
    ys: &[usize],
    beta: f64,
    noise: Var,
) -> BottleneckLoss {
    assert_eq!(model.config.class_rows, 1, "class-agnostic loss needs a single backward row");
    bottleneck_loss(model, tape, binder, member, x, ys, beta, noise)
}

/// Plain deterministic cross-entropy on mean features (no sampling, no KL).
pub fn deterministic_ce_loss(
    model: &EnsembleModel,
    tape: &Tape,
    binder: &Binder,
    member: usize,
    x: Var,
    ys: &[usize],
) -> BottleneckLoss {
    assert!(!ys.is_empty(), "empty batch");
    let (mean, _scale) = model.encode_batch(tape, binder, member, x);
    let logits = model.classify_batch(tape, binder, member, mean);
    let ce = cross_entropy_mean(tape, logits, ys);
    let zero = tape.detach(tape.leaf(crate::tensor::Tensor::scalar(0.0)));
    BottleneckLoss { total: ce, kl: zero, ce, z: mean }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Averaging, DiscConfig, ModelConfig, Structure};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kl_zero_at_identity() {
        let g = GaussianFeatures { mean: vec![0.3, -1.0], scale: vec![1.0, 1.0] };
        let kl = kl_diag_gaussian_to_unit_class(&g, &[0.3, -1.0]).unwrap();
        assert_eq!(kl, 0.0);
    }

    #[test]
    fn kl_known_values() {
        // d=1, scale=1, mean offset 1 -> 0.5
        let g = GaussianFeatures { mean: vec![1.0], scale: vec![1.0] };
        assert!((kl_diag_gaussian_to_unit_class(&g, &[0.0]).unwrap() - 0.5).abs() < 1e-12);
        // d=1, scale=2, no offset -> (4 - ln 4 - 1) / 2 = 0.80685...
        // (cross-checked against the Monte-Carlo estimate in the oracle suite)
        let g = GaussianFeatures { mean: vec![0.0], scale: vec![2.0] };
        let expect = 0.5 * (4.0 - 4.0f64.ln() - 1.0);
        assert!((kl_diag_gaussian_to_unit_class(&g, &[0.0]).unwrap() - expect).abs() < 1e-12);
        let (mc, se) = crate::oracle::mc_kl_estimate(&[0.0], &[2.0], &[0.0], 400_000, 11);
        assert!((expect - mc).abs() < 3.0 * se, "closed form {expect} vs mc {mc} (se {se})");
    }

    #[test]
    fn kl_rejects_nonpositive_scale() {
        let g = GaussianFeatures { mean: vec![0.0], scale: vec![0.0] };
        assert!(kl_diag_gaussian_to_unit_class(&g, &[0.0]).is_err());
    }

    #[test]
    fn kl_nonnegative_with_equality_only_at_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        use rand::Rng;
        for _ in 0..200 {
            let d = rng.gen_range(1..5);
            let g = GaussianFeatures {
                mean: (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                scale: (0..d).map(|_| rng.gen_range(0.05..3.0)).collect(),
            };
            let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let kl = kl_diag_gaussian_to_unit_class(&g, &c).unwrap();
            assert!(kl >= 0.0);
            let identical = g.mean == c && g.scale.iter().all(|&s| s == 1.0);
            if kl == 0.0 {
                assert!(identical);
            }
        }
    }

    #[test]
    fn cross_entropy_known_values() {
        // uniform logits, K=4 -> ln 4
        let ce = cross_entropy(&[0.0; 4], 2).unwrap();
        assert!((ce - 4.0f64.ln()).abs() < 1e-12);
        // logits [1, 0], y=0 -> ln(1 + e^-1)
        let ce = cross_entropy(&[1.0, 0.0], 0).unwrap();
        assert!((ce - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((ce - 0.3133).abs() < 1e-4);
        // dominant true-class logit -> ~0
        let ce = cross_entropy(&[60.0, 0.0], 0).unwrap();
        assert!(ce < 1e-12);
        assert!(cross_entropy(&[0.0, 0.0], 5).is_err());
    }

    fn model_with_rows(class_rows: usize) -> EnsembleModel {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        EnsembleModel::new(
            ModelConfig {
                members: 1,
                input_dim: 3,
                trunk_hidden: 4,
                feature_dim: 2,
                classes: if class_rows == 1 { 1 } else { 3 },
                structure: Structure::Independent,
                class_rows,
                disc: DiscConfig { hidden: vec![4, 4, 4], embed_width: 2, conditional: true },
                averaging: Averaging::Probabilities,
            },
            &mut rng,
        )
    }

    #[test]
    fn vceb_composes_kl_and_cross_entropy() {
        let model = model_with_rows(3);
        let tape = Tape::new();
        let binder = Binder::bind(&tape, &model.params, |_| true);
        let x = tape.leaf(Tensor::matrix(2, 3, vec![0.1, -0.5, 0.3, 0.9, 0.2, -0.4]));
        let ys = [2usize, 0];
        let noise_t = Tensor::matrix(2, 2, vec![0.3, -1.2, 0.8, 0.1]);
        let noise = tape.detach(tape.leaf(noise_t.clone()));
        let beta = 1.7;
        let loss = vceb_loss(&model, &tape, &binder, 0, x, &ys, beta, noise);

        // hand composition from the value-level pieces
        let xv = tape.value(x);
        let mut expect = 0.0;
        for (n, &y) in ys.iter().enumerate() {
            let xin: Vec<f64> = xv.row(n).to_vec();
            let g = model.encode(0, &xin);
            let cm: Vec<f64> = model.params.get("m0.class_means").row(y).to_vec();
            let kl = kl_diag_gaussian_to_unit_class(&g, &cm).unwrap();
            let z: Vec<f64> = g
                .mean
                .iter()
                .zip(&g.scale)
                .zip(noise_t.row(n))
                .map(|((&m, &s), &e)| m + e * s)
                .collect();
            let ce = cross_entropy(&model.classify(0, &z), y).unwrap();
            expect += kl / beta + ce;
        }
        expect /= ys.len() as f64;
        assert!((tape.item(loss.total) - expect).abs() < 1e-12);
    }

    #[test]
    fn huge_beta_reduces_to_sampled_cross_entropy() {
        let model = model_with_rows(3);
        let tape = Tape::new();
        let binder = Binder::bind(&tape, &model.params, |_| true);
        let x = tape.leaf(Tensor::matrix(1, 3, vec![0.4, 0.0, -0.2]));
        let noise = tape.detach(tape.leaf(Tensor::matrix(1, 2, vec![0.5, -0.5])));
        let loss = vceb_loss(&model, &tape, &binder, 0, x, &[1], 1e18, noise);
        assert!((tape.item(loss.total) - tape.item(loss.ce)).abs() < 1e-12);
    }

    #[test]
    fn single_class_vib_equals_vceb() {
        // one class: the class-conditional table degenerates to the shared row
        let model = model_with_rows(1);
        let run = |use_vib: bool| {
            let tape = Tape::new();
            let binder = Binder::bind(&tape, &model.params, |_| true);
            let x = tape.leaf(Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.1, 0.0, 0.4]));
            let noise = tape.detach(tape.leaf(Tensor::matrix(2, 2, vec![1.0, -1.0, 0.2, 0.7])));
            let l = if use_vib {
                vib_loss(&model, &tape, &binder, 0, x, &[0, 0], 2.0, noise)
            } else {
                vceb_loss(&model, &tape, &binder, 0, x, &[0, 0], 2.0, noise)
            };
            tape.item(l.total)
        };
        assert_eq!(run(true), run(false));
    }

    #[test]
    fn perfect_fit_drives_loss_to_zero() {
        // single example, mean = class mean, scale = 1, classifier certain of
        // the true class: both terms vanish (cross-entropy in the limit).
        let mut model = model_with_rows(3);
        for name in model.member_param_names() {
            let shape = model.params.get(&name).shape().to_vec();
            if name.ends_with(".w") {
                *model.params.get_mut(&name) = Tensor::zeros(&shape);
            }
        }
        *model.params.get_mut("m0.mean.b") = Tensor::vector(vec![0.7, -0.4]);
        // softplus(bias) = 1  =>  bias = ln(e - 1)
        let b = (std::f64::consts::E - 1.0f64).ln();
        *model.params.get_mut("m0.scale.b") = Tensor::vector(vec![b, b]);
        let mut table = Tensor::zeros(&[3, 2]);
        table.values_mut()[2] = 0.7; // row 1 = [0.7, -0.4]
        table.values_mut()[3] = -0.4;
        *model.params.get_mut("m0.class_means") = table;
        // classifier certain of class 1 regardless of z
        *model.params.get_mut("m0.cls.b") = Tensor::vector(vec![-100.0, 100.0, -100.0]);

        let tape = Tape::new();
        let binder = Binder::bind(&tape, &model.params, |_| true);
        let x = tape.leaf(Tensor::matrix(1, 3, vec![0.0, 0.0, 0.0]));
        let noise = tape.detach(tape.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0])));
        let loss = vceb_loss(&model, &tape, &binder, 0, x, &[1], 1.0, noise);
        assert!(tape.item(loss.total).abs() < 1e-12);
    }
}
