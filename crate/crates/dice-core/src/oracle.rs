//! Independent reference computations.
//!
//! Everything here deliberately avoids the implementation paths it is used
//! to check: gradients come from central finite differences instead of the
//! tape, the Gaussian KL from Monte-Carlo sampling instead of the closed
//! form, conditional mutual information from exhaustive enumeration, OOD
//! metrics from naive threshold sweeps, and the synthetic-task label
//! independence from a plug-in histogram estimate. Used by the test suites
//! and by the `oracle` CLI subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::optim::ParamSet;
use crate::tensor::Tensor;

/// Central finite-difference gradient of `eval` w.r.t. every scalar of the
/// parameter `name`. `eval` must be deterministic in the parameters (fix any
/// noise draws before calling).
pub fn finite_difference_gradient(
    params: &ParamSet,
    name: &str,
    h: f64,
    mut eval: impl FnMut(&ParamSet) -> f64,
) -> Tensor {
    let shape = params.get(name).shape().to_vec();
    let n = params.get(name).len();
    let mut grad = vec![0.0; n];
    let mut work = params.clone();
    for i in 0..n {
        let orig = params.get(name).values()[i];
        work.get_mut(name).values_mut()[i] = orig + h;
        let up = eval(&work);
        work.get_mut(name).values_mut()[i] = orig - h;
        let down = eval(&work);
        work.get_mut(name).values_mut()[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    Tensor::new(shape, grad)
}

/// Worst relative disagreement between two gradient vectors, with an
/// absolute floor so near-zero entries do not blow up the ratio.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let denom = x.abs().max(y.abs());
            let diff = (x - y).abs();
            if diff < 1e-7 {
                0.0
            } else {
                diff / denom.max(1e-7)
            }
        })
        .fold(0.0, f64::max)
}

/// Monte-Carlo estimate of KL( N(mean, diag scale^2) || N(class_mean, I) ):
/// the mean of per-sample log density ratios, with its standard error.
pub fn mc_kl_estimate(
    mean: &[f64],
    scale: &[f64],
    class_mean: &[f64],
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = mean.len();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let mut v = 0.0;
        for k in 0..d {
            let eps: f64 = rng.sample(StandardNormal);
            let z = mean[k] + scale[k] * eps;
            // ln N(z; mean, scale) - ln N(z; class_mean, 1)
            v += -scale[k].ln() - (z - mean[k]).powi(2) / (2.0 * scale[k] * scale[k])
                + (z - class_mean[k]).powi(2) / 2.0;
        }
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let est = sum / n;
    let var = (sum_sq / n - est * est).max(0.0);
    (est, (var / n).sqrt())
}

/// A fully enumerable binary (Z1, Z2, Y) distribution with rational
/// probabilities. Returns probability-weighted DV "batches" carrying the
/// exact log likelihood ratios, plus the enumerated conditional mutual
/// information: one joint entry per 1/16 of joint mass, one product entry
/// per 1/8 of product mass.
pub fn binary_cmi_case() -> (Vec<f64>, Vec<f64>, f64) {
    // p(y) = 1/2 each; p(z1,z2|y) in multiples of 1/8 with uniform marginals
    let joint_given_y = [
        [[3.0 / 8.0, 1.0 / 8.0], [1.0 / 8.0, 3.0 / 8.0]], // y = 0: correlated
        [[1.0 / 8.0, 3.0 / 8.0], [3.0 / 8.0, 1.0 / 8.0]], // y = 1: anti-correlated
    ];
    let mut cmi = 0.0;
    let mut joint_lnf = Vec::new();
    let mut prod_lnf = Vec::new();
    for y in 0..2 {
        for z1 in 0..2 {
            for z2 in 0..2 {
                let p12 = joint_given_y[y][z1][z2];
                let p1: f64 = joint_given_y[y][z1].iter().sum();
                let p2: f64 = joint_given_y[y][0][z2] + joint_given_y[y][1][z2];
                let lnf = (p12 / (p1 * p2)).ln();
                cmi += 0.5 * p12 * lnf;
                // joint batch: p(z1,z2,y) = p12/2 = (copies)/16
                let copies = (p12 * 16.0 / 2.0).round() as usize;
                for _ in 0..copies {
                    joint_lnf.push(lnf);
                }
                // product batch: p(z1|y)p(z2|y)p(y) = 1/8 -> one copy each
                prod_lnf.push(lnf);
            }
        }
    }
    assert_eq!(joint_lnf.len(), 16);
    assert_eq!(prod_lnf.len(), 8);
    (joint_lnf, prod_lnf, cmi)
}

/// Analytic conditional mutual information of jointly Gaussian features with
/// conditional correlation rho given the class.
pub fn gaussian_cmi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

// ── Brute-force OOD metric sweeps ───────────────────────────────────────

fn thresholds(in_scores: &[f64], out_scores: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = in_scores.iter().chain(out_scores).cloned().collect();
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    t.dedup();
    t
}

fn rates_at(in_scores: &[f64], out_scores: &[f64], t: f64) -> (f64, f64) {
    // rule: score >= t classified in-distribution (positive)
    let tpr = in_scores.iter().filter(|&&s| s >= t).count() as f64 / in_scores.len() as f64;
    let fpr = out_scores.iter().filter(|&&s| s >= t).count() as f64 / out_scores.len() as f64;
    (tpr, fpr)
}

/// AUROC by exhaustive ROC-point integration (trapezoid over all thresholds).
pub fn auroc_bruteforce(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    let mut pts = vec![(0.0, 0.0)];
    let mut ts = thresholds(in_scores, out_scores);
    ts.reverse(); // descending: (fpr, tpr) sweeps from (0,0) to (1,1)
    for t in ts {
        let (tpr, fpr) = rates_at(in_scores, out_scores, t);
        pts.push((fpr, tpr));
    }
    pts.push((1.0, 1.0));
    let mut auc = 0.0;
    for w in pts.windows(2) {
        auc += (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0;
    }
    auc
}

/// Average precision by recomputing precision/recall from scratch at every
/// threshold. `positives` are scored by `pos`, higher = more positive.
pub fn aupr_bruteforce(pos: &[f64], neg: &[f64]) -> f64 {
    let mut ts = thresholds(pos, neg);
    ts.reverse(); // descending recall order
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in ts {
        let tp = pos.iter().filter(|&&s| s >= t).count() as f64;
        let fp = neg.iter().filter(|&&s| s >= t).count() as f64;
        if tp + fp == 0.0 {
            continue;
        }
        let precision = tp / (tp + fp);
        let recall = tp / pos.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// FPR at the largest threshold whose TPR reaches 0.95, by sweep.
pub fn fpr_at_95_tpr_bruteforce(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    let mut ts = thresholds(in_scores, out_scores);
    ts.reverse();
    for t in ts {
        let (tpr, fpr) = rates_at(in_scores, out_scores, t);
        if tpr >= 0.95 {
            return fpr;
        }
    }
    1.0
}

/// Minimum over thresholds of (1-TPR)/2 + FPR/2, by sweep.
pub fn detection_error_bruteforce(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    let mut best: f64 = 0.5; // threshold above everything: TPR = FPR = 0
    for t in thresholds(in_scores, out_scores) {
        let (tpr, fpr) = rates_at(in_scores, out_scores, t);
        best = best.min(0.5 * (1.0 - tpr) + 0.5 * fpr);
    }
    best
}

// ── Datagen oracles ─────────────────────────────────────────────────────

/// Plug-in mutual information between a scalar feature and labels, nats.
/// Equal-width bins over the observed range.
pub fn histogram_mi(xs: &[f64], labels: &[usize], classes: usize, bins: usize) -> f64 {
    assert_eq!(xs.len(), labels.len());
    let n = xs.len() as f64;
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut joint = vec![0.0; bins * classes];
    for (&x, &y) in xs.iter().zip(labels) {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        joint[b * classes + y] += 1.0 / n;
    }
    let mut pb = vec![0.0; bins];
    let mut py = vec![0.0; classes];
    for b in 0..bins {
        for y in 0..classes {
            pb[b] += joint[b * classes + y];
            py[y] += joint[b * classes + y];
        }
    }
    let mut mi = 0.0;
    for b in 0..bins {
        for y in 0..classes {
            let p = joint[b * classes + y];
            if p > 0.0 {
                mi += p * (p / (pb[b] * py[y])).ln();
            }
        }
    }
    mi
}

/// Bayes-optimal accuracy of a uniform mixture of isotropic Gaussians on a
/// 2-d core, by midpoint quadrature: the integral of `max_y p(x, y)`.
pub fn bayes_accuracy_2d(class_means: &[[f64; 2]], sigma: f64, grid: usize) -> f64 {
    let k = class_means.len() as f64;
    let lo_x = class_means.iter().map(|m| m[0]).fold(f64::INFINITY, f64::min) - 6.0 * sigma;
    let hi_x = class_means.iter().map(|m| m[0]).fold(f64::NEG_INFINITY, f64::max) + 6.0 * sigma;
    let lo_y = class_means.iter().map(|m| m[1]).fold(f64::INFINITY, f64::min) - 6.0 * sigma;
    let hi_y = class_means.iter().map(|m| m[1]).fold(f64::NEG_INFINITY, f64::max) + 6.0 * sigma;
    let (dx, dy) = ((hi_x - lo_x) / grid as f64, (hi_y - lo_y) / grid as f64);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let mut acc = 0.0;
    for ix in 0..grid {
        let x = lo_x + (ix as f64 + 0.5) * dx;
        for iy in 0..grid {
            let y = lo_y + (iy as f64 + 0.5) * dy;
            let best = class_means
                .iter()
                .map(|m| {
                    let d2 = (x - m[0]).powi(2) + (y - m[1]).powi(2);
                    norm * (-d2 / (2.0 * sigma * sigma)).exp()
                })
                .fold(0.0, f64::max);
            acc += best * dx * dy;
        }
    }
    acc / k
}
