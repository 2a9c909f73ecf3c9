//! Evaluation quantities: diversity measures over member predictions,
//! proper scoring rules, calibration with two-fold temperature scaling,
//! out-of-distribution scoring (including the discriminator-scaled
//! confidence), and the bias-variance-covariance diagnostic.

use serde::{Deserialize, Serialize};

use crate::model::{combine_predictions, Averaging, EnsembleModel};
use crate::tensor::{log_softmax, softmax, Tensor};

/// Per-member predictions over an evaluation set, plus the combined
/// ensemble distribution.
#[derive(Clone, Debug)]
pub struct PredictionMatrix {
    /// Per-member probability rows, `M x [N, K]`.
    pub member_probs: Vec<Tensor>,
    /// Per-member argmax classes, `M x N`.
    pub member_preds: Vec<Vec<usize>>,
    /// Combined ensemble probabilities `[N, K]`.
    pub ensemble_probs: Tensor,
    pub labels: Vec<usize>,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl PredictionMatrix {
    pub fn from_member_logits(
        member_logits: &[Tensor],
        labels: &[usize],
        averaging: Averaging,
    ) -> Self {
        let (n, k) = member_logits[0].dims2();
        assert_eq!(n, labels.len(), "label count mismatch");
        let mut member_probs = Vec::with_capacity(member_logits.len());
        let mut member_preds = Vec::with_capacity(member_logits.len());
        for l in member_logits {
            let mut probs = Vec::with_capacity(n * k);
            let mut preds = Vec::with_capacity(n);
            for i in 0..n {
                let p = softmax(l.row(i));
                preds.push(argmax(&p));
                probs.extend(p);
            }
            member_probs.push(Tensor::matrix(n, k, probs));
            member_preds.push(preds);
        }
        let mut ens = Vec::with_capacity(n * k);
        for i in 0..n {
            ens.extend(combine_predictions(member_logits, i, averaging));
        }
        PredictionMatrix {
            member_probs,
            member_preds,
            ensemble_probs: Tensor::matrix(n, k, ens),
            labels: labels.to_vec(),
        }
    }

    pub fn members(&self) -> usize {
        self.member_probs.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-member correctness indicators, `M x N`.
    pub fn correctness(&self) -> Vec<Vec<bool>> {
        self.member_preds
            .iter()
            .map(|preds| preds.iter().zip(&self.labels).map(|(&p, &y)| p == y).collect())
            .collect()
    }

    pub fn ensemble_preds(&self) -> Vec<usize> {
        (0..self.len()).map(|i| argmax(self.ensemble_probs.row(i))).collect()
    }

    pub fn ensemble_accuracy(&self) -> f64 {
        let correct = self
            .ensemble_preds()
            .iter()
            .zip(&self.labels)
            .filter(|(&p, &y)| p == y)
            .count();
        correct as f64 / self.len() as f64
    }

    pub fn mean_individual_accuracy(&self) -> f64 {
        let c = self.correctness();
        let per: Vec<f64> = c
            .iter()
            .map(|row| row.iter().filter(|&&b| b).count() as f64 / self.len() as f64)
            .collect();
        per.iter().sum::<f64>() / per.len() as f64
    }

    /// Natural log of the ensemble probabilities, usable as logits for
    /// temperature scaling (softmax of them at T=1 recovers the ensemble
    /// distribution exactly).
    pub fn ensemble_log_scores(&self) -> Tensor {
        self.ensemble_probs.map(|p| p.max(1e-300).ln())
    }
}

fn pairs(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            out.push((i, j));
        }
    }
    out
}

/// Mean over member pairs of N_single / N_shared, where N_single counts
/// inputs exactly one of the two gets wrong and N_shared counts inputs both
/// get wrong. A pair with single errors but no shared ones contributes the
/// +inf sentinel; a pair with neither contributes 0.
pub fn ratio_error(pm: &PredictionMatrix) -> f64 {
    assert!(pm.members() >= 2, "ratio error needs at least two members");
    let c = pm.correctness();
    let mut total = 0.0;
    let ps = pairs(pm.members());
    for &(i, j) in &ps {
        let mut single = 0usize;
        let mut shared = 0usize;
        for n in 0..pm.len() {
            match (c[i][n], c[j][n]) {
                (false, false) => shared += 1,
                (true, false) | (false, true) => single += 1,
                _ => {}
            }
        }
        total += if shared > 0 {
            single as f64 / shared as f64
        } else if single > 0 {
            f64::INFINITY
        } else {
            0.0
        };
    }
    total / ps.len() as f64
}

/// Mean pairwise Q-statistic over correctness indicators:
/// `(N11 N00 - N01 N10) / (N11 N00 + N01 N10)`, 0 when the denominator is 0.
pub fn q_statistic(pm: &PredictionMatrix) -> f64 {
    assert!(pm.members() >= 2, "q statistic needs at least two members");
    let c = pm.correctness();
    let ps = pairs(pm.members());
    let mut total = 0.0;
    for &(i, j) in &ps {
        let (mut n11, mut n00, mut n10, mut n01) = (0.0, 0.0, 0.0, 0.0);
        for n in 0..pm.len() {
            match (c[i][n], c[j][n]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
        let denom = n11 * n00 + n01 * n10;
        total += if denom == 0.0 { 0.0 } else { (n11 * n00 - n01 * n10) / denom };
    }
    total / ps.len() as f64
}

/// Mean pairwise agreement: the frequency with which two members predict the
/// same class (regardless of correctness).
pub fn agreement(pm: &PredictionMatrix) -> f64 {
    assert!(pm.members() >= 2, "agreement needs at least two members");
    let ps = pairs(pm.members());
    let mut total = 0.0;
    for &(i, j) in &ps {
        let same = (0..pm.len())
            .filter(|&n| pm.member_preds[i][n] == pm.member_preds[j][n])
            .count();
        total += same as f64 / pm.len() as f64;
    }
    total / ps.len() as f64
}

/// Kohavi-Wolpert variance: `(1/N) sum_n c_n (M - c_n) / M^2` with `c_n` the
/// number of members correct on input n.
pub fn kohavi_wolpert_variance(pm: &PredictionMatrix) -> f64 {
    let c = pm.correctness();
    let m = pm.members() as f64;
    let mut total = 0.0;
    for n in 0..pm.len() {
        let correct = c.iter().filter(|row| row[n]).count() as f64;
        total += correct * (m - correct) / (m * m);
    }
    total / pm.len() as f64
}

/// Entropy diversity: `(1/N) sum_n min(c_n, M - c_n) / (M - ceil(M/2))`.
pub fn entropy_diversity(pm: &PredictionMatrix) -> f64 {
    let m = pm.members();
    assert!(m >= 2, "entropy diversity needs at least two members");
    let c = pm.correctness();
    let denom = (m - m.div_ceil(2)) as f64;
    let mut total = 0.0;
    for n in 0..pm.len() {
        let correct = c.iter().filter(|row| row[n]).count();
        total += correct.min(m - correct) as f64 / denom;
    }
    total / pm.len() as f64
}

/// Mean negative log-likelihood of the ensemble distribution.
pub fn nll(probs: &Tensor, labels: &[usize]) -> f64 {
    let (n, _k) = probs.dims2();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total -= probs.row(i)[y].max(1e-300).ln();
    }
    total / n as f64
}

/// Brier score: mean squared error against the one-hot target, averaged over
/// inputs and divided by the class count.
pub fn brier(probs: &Tensor, labels: &[usize]) -> f64 {
    let (n, k) = probs.dims2();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        for (j, &p) in probs.row(i).iter().enumerate() {
            let t = if j == y { 1.0 } else { 0.0 };
            total += (p - t) * (p - t);
        }
    }
    total / (n as f64 * k as f64)
}

/// Expected calibration error over equal-width confidence bins of the
/// max-probability prediction.
pub fn ece(probs: &Tensor, labels: &[usize], bins: usize) -> f64 {
    assert!(bins >= 1);
    let (n, _) = probs.dims2();
    assert!(n > 0, "empty evaluation set");
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut acc_sum = vec![0.0; bins];
    for (i, &y) in labels.iter().enumerate() {
        let row = probs.row(i);
        let pred = argmax(row);
        let conf = row[pred];
        let b = ((conf * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += conf;
        acc_sum[b] += if pred == y { 1.0 } else { 0.0 };
    }
    let mut e = 0.0;
    for b in 0..bins {
        if count[b] > 0 {
            let w = count[b] as f64 / n as f64;
            e += w * (acc_sum[b] / count[b] as f64 - conf_sum[b] / count[b] as f64).abs();
        }
    }
    e
}

/// Thresholded adaptive calibration error: per class, all probabilities
/// above the threshold are sorted into equal-mass bins; the statistic is the
/// mean |accuracy - confidence| over nonempty (class, bin) cells. Zero when
/// nothing passes the threshold.
pub fn tace(probs: &Tensor, labels: &[usize], bins: usize, threshold: f64) -> f64 {
    assert!(bins >= 1);
    let (_, k) = probs.dims2();
    assert!(!labels.is_empty(), "empty evaluation set");
    let mut cell_errors = Vec::new();
    for class in 0..k {
        let mut entries: Vec<(f64, f64)> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| (probs.row(i)[class], if y == class { 1.0 } else { 0.0 }))
            .filter(|(p, _)| *p >= threshold)
            .collect();
        if entries.is_empty() {
            continue;
        }
        entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let n = entries.len();
        let base = n / bins;
        let extra = n % bins;
        let mut start = 0;
        for b in 0..bins {
            let size = base + usize::from(b < extra);
            if size == 0 {
                continue;
            }
            let chunk = &entries[start..start + size];
            start += size;
            let conf = chunk.iter().map(|(p, _)| p).sum::<f64>() / size as f64;
            let acc = chunk.iter().map(|(_, c)| c).sum::<f64>() / size as f64;
            cell_errors.push((acc - conf).abs());
        }
    }
    if cell_errors.is_empty() {
        0.0
    } else {
        cell_errors.iter().sum::<f64>() / cell_errors.len() as f64
    }
}

/// NLL of logits scaled by 1/T.
fn nll_at_temperature(logits: &Tensor, labels: &[usize], t: f64) -> f64 {
    let (n, _) = logits.dims2();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let scaled: Vec<f64> = logits.row(i).iter().map(|&x| x / t).collect();
        total -= log_softmax(&scaled)[y];
    }
    total / n as f64
}

/// Fit the temperature minimizing NLL of `softmax(logits/T)` by
/// golden-section search over ln T in [-3, 3].
pub fn fit_temperature(logits: &Tensor, labels: &[usize]) -> Result<f64, String> {
    if labels.is_empty() {
        return Err("empty split".into());
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err("degenerate single-class split".into());
    }
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (-3.0f64, 3.0f64);
    let f = |ln_t: f64| nll_at_temperature(logits, labels, ln_t.exp());
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    Ok(((lo + hi) / 2.0).exp())
}

/// Scoring-rule and calibration numbers for one probability matrix.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct UncertaintyScores {
    pub nll: f64,
    pub brier: f64,
    pub ece: f64,
    pub tace: f64,
}

pub fn uncertainty_scores(probs: &Tensor, labels: &[usize], bins: usize) -> UncertaintyScores {
    UncertaintyScores {
        nll: nll(probs, labels),
        brier: brier(probs, labels),
        ece: ece(probs, labels, bins),
        tace: tace(probs, labels, bins, TACE_THRESHOLD),
    }
}

pub const TACE_THRESHOLD: f64 = 1e-3;
pub const CALIBRATION_BINS: usize = 15;

/// Two-fold temperature-scaling protocol: the evaluation set is split into
/// halves; each half is scored with the temperature fitted on the other, and
/// the two halves' metrics are averaged.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub temperature: f64,
    pub before: UncertaintyScores,
    pub after: UncertaintyScores,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
}

fn probs_at_temperature(logits: &Tensor, t: f64) -> Tensor {
    let (n, k) = logits.dims2();
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let scaled: Vec<f64> = logits.row(i).iter().map(|&x| x / t).collect();
        out.extend(softmax(&scaled));
    }
    Tensor::matrix(n, k, out)
}

fn accuracy_of(probs: &Tensor, labels: &[usize]) -> f64 {
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax(probs.row(*i)) == y)
        .count();
    correct as f64 / labels.len() as f64
}

pub fn two_fold_temperature_scaling(
    logits: &Tensor,
    labels: &[usize],
    seed: u64,
) -> Result<CalibrationReport, String> {
    use rand::SeedableRng;
    let (n, k) = logits.dims2();
    if n < 4 {
        return Err("need at least 4 evaluation points".into());
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let idx = crate::rng::shuffled_indices(&mut rng, n);
    let (ia, ib) = idx.split_at(n / 2);

    let take = |ids: &[usize]| -> (Tensor, Vec<usize>) {
        let mut vals = Vec::with_capacity(ids.len() * k);
        let mut ys = Vec::with_capacity(ids.len());
        for &i in ids {
            vals.extend_from_slice(logits.row(i));
            ys.push(labels[i]);
        }
        (Tensor::matrix(ids.len(), k, vals), ys)
    };
    let (la, ya) = take(ia);
    let (lb, yb) = take(ib);
    let ta = fit_temperature(&la, &ya)?;
    let tb = fit_temperature(&lb, &yb)?;

    let mut report = CalibrationReport {
        temperature: (ta + tb) / 2.0,
        before: UncertaintyScores::default(),
        after: UncertaintyScores::default(),
        accuracy_before: 0.0,
        accuracy_after: 0.0,
    };
    // each half evaluated with the other half's temperature
    for ((l, y), t) in [(&la, &ya), (&lb, &yb)].iter().zip([tb, ta]) {
        let raw = probs_at_temperature(l, 1.0);
        let scaled = probs_at_temperature(l, t);
        let b = uncertainty_scores(&raw, y, CALIBRATION_BINS);
        let a = uncertainty_scores(&scaled, y, CALIBRATION_BINS);
        report.before.nll += b.nll / 2.0;
        report.before.brier += b.brier / 2.0;
        report.before.ece += b.ece / 2.0;
        report.before.tace += b.tace / 2.0;
        report.after.nll += a.nll / 2.0;
        report.after.brier += a.brier / 2.0;
        report.after.ece += a.ece / 2.0;
        report.after.tace += a.tace / 2.0;
        report.accuracy_before += accuracy_of(&raw, y) / 2.0;
        report.accuracy_after += accuracy_of(&scaled, y) / 2.0;
    }
    Ok(report)
}

// ── Out-of-distribution scoring ─────────────────────────────────────────

/// The standard OOD detection table. Higher score = more in-distribution.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OodScores {
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub fpr_at_95_tpr: f64,
    pub detection_error: f64,
}

/// AUROC via the rank statistic with half credit for ties.
pub fn auroc(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    assert!(!in_scores.is_empty() && !out_scores.is_empty(), "empty score list");
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(out_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // average ranks over tie groups; U statistic from the in-distribution rank sum
    let mut rank_sum_in = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // 1-based average rank of the tie group
        for item in &all[i..j] {
            if item.1 {
                rank_sum_in += avg_rank;
            }
        }
        i = j;
    }
    let n1 = in_scores.len() as f64;
    let n0 = out_scores.len() as f64;
    (rank_sum_in - n1 * (n1 + 1.0) / 2.0) / (n1 * n0)
}

/// Average precision by single-pass step integration over descending scores.
/// `pos` are the positives; ties are handled by processing whole tie groups.
pub fn aupr(pos: &[f64], neg: &[f64]) -> f64 {
    assert!(!pos.is_empty() && !neg.is_empty(), "empty score list");
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let npos = pos.len() as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        for item in &all[i..j] {
            if item.1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        let recall = tp / npos;
        let precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    ap
}

/// FPR at the largest threshold whose TPR reaches 0.95 (single sorted pass).
pub fn fpr_at_95_tpr(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    assert!(!in_scores.is_empty() && !out_scores.is_empty(), "empty score list");
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(out_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let (n1, n0) = (in_scores.len() as f64, out_scores.len() as f64);
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        for item in &all[i..j] {
            if item.1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        if tp / n1 >= 0.95 {
            return fp / n0;
        }
        i = j;
    }
    1.0
}

/// Minimum over thresholds of (1-TPR)/2 + FPR/2 assuming equal priors.
pub fn detection_error(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    assert!(!in_scores.is_empty() && !out_scores.is_empty(), "empty score list");
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(out_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let (n1, n0) = (in_scores.len() as f64, out_scores.len() as f64);
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut best = 0.5; // threshold above all scores
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        for item in &all[i..j] {
            if item.1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        best = f64::min(best, 0.5 * (1.0 - tp / n1) + 0.5 * fp / n0);
        i = j;
    }
    best
}

/// Full OOD score table. AUPR-out treats OOD as the positive class by
/// negating scores.
pub fn ood_scores(in_scores: &[f64], out_scores: &[f64]) -> OodScores {
    let neg_in: Vec<f64> = in_scores.iter().map(|&s| -s).collect();
    let neg_out: Vec<f64> = out_scores.iter().map(|&s| -s).collect();
    OodScores {
        auroc: auroc(in_scores, out_scores),
        aupr_in: aupr(in_scores, out_scores),
        aupr_out: aupr(&neg_out, &neg_in),
        fpr_at_95_tpr: fpr_at_95_tpr(in_scores, out_scores),
        detection_error: detection_error(in_scores, out_scores),
    }
}

// ── Discriminator-scaled confidence ─────────────────────────────────────

/// Max-softmax confidences of the ensemble, one per input row.
pub fn max_softmax_confidences(model: &EnsembleModel, inputs: &Tensor) -> Vec<f64> {
    let logits = model.member_logits(inputs);
    let n = inputs.dims2().0;
    (0..n)
        .map(|i| {
            let p = combine_predictions(&logits, i, model.config.averaging);
            p[argmax(&p)]
        })
        .collect()
}

/// Confidence rescaled by the discriminator's pairing belief: logits are
/// multiplied by the mean over ordered member pairs of `1 - w(z_i, z_j, y_hat)`
/// (mean features, predicted class), then max-softmaxed.
pub fn dice_times_w_confidences(
    model: &EnsembleModel,
    inputs: &Tensor,
) -> Result<Vec<f64>, String> {
    let m = model.config.members;
    if m < 2 {
        return Err("discriminator-scaled confidence needs at least two members".into());
    }
    let logits = model.member_logits(inputs);
    let n = inputs.dims2().0;
    let dim = model.config.input_dim;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x: Vec<f64> = inputs.row(i).to_vec();
        assert_eq!(x.len(), dim);
        let means: Vec<Vec<f64>> = (0..m).map(|mm| model.encode(mm, &x).mean).collect();
        let avg = combine_predictions(&logits, i, Averaging::Logits);
        // combine_predictions(..., Logits) softmaxes; recompute the raw mean
        let k = logits[0].dims2().1;
        let mut mean_logits = vec![0.0; k];
        for l in &logits {
            for (a, &v) in mean_logits.iter_mut().zip(l.row(i)) {
                *a += v;
            }
        }
        mean_logits.iter_mut().for_each(|v| *v /= m as f64);
        let y_hat = argmax(&avg);
        let mut scale = 0.0;
        let mut count = 0.0;
        for a in 0..m {
            for b in 0..m {
                if a == b {
                    continue;
                }
                let w = model.discriminate((a, b), &means[a], &means[b], y_hat)?;
                scale += 1.0 - w;
                count += 1.0;
            }
        }
        scale /= count;
        let scaled: Vec<f64> = mean_logits.iter().map(|&v| v * scale).collect();
        let p = softmax(&scaled);
        out.push(p[argmax(&p)]);
    }
    Ok(out)
}

// ── Bias-variance-covariance decomposition ──────────────────────────────

/// Empirical decomposition of the ensemble's squared error into average
/// bias, variance and covariance, treating the M members as one unit.
/// `outputs[r][i]` is member i's regression output on resample r; `target`
/// is the fixed target. Both sides of the identity
/// `E[(mean_f - t)^2] = bias^2 + var/M + (1 - 1/M) covar` are returned.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BvcDecomposition {
    pub bias: f64,
    pub variance: f64,
    pub covariance: f64,
    pub lhs: f64,
    pub rhs: f64,
}

pub fn bvc_decomposition(outputs: &[Vec<f64>], target: f64) -> BvcDecomposition {
    let r = outputs.len();
    assert!(r >= 2, "need at least two resamples");
    let m = outputs[0].len();
    assert!(m >= 1);
    let rf = r as f64;
    let mf = m as f64;

    let expct: Vec<f64> =
        (0..m).map(|i| outputs.iter().map(|row| row[i]).sum::<f64>() / rf).collect();
    let bias = expct.iter().map(|&e| e - target).sum::<f64>() / mf;
    let variance = (0..m)
        .map(|i| outputs.iter().map(|row| (row[i] - expct[i]).powi(2)).sum::<f64>() / rf)
        .sum::<f64>()
        / mf;
    let covariance = if m < 2 {
        0.0
    } else {
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                total += outputs
                    .iter()
                    .map(|row| (row[i] - expct[i]) * (row[j] - expct[j]))
                    .sum::<f64>()
                    / rf;
            }
        }
        total / (mf * (mf - 1.0))
    };
    let lhs = outputs
        .iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / mf;
            (mean - target).powi(2)
        })
        .sum::<f64>()
        / rf;
    let rhs = bias * bias + variance / mf + (1.0 - 1.0 / mf) * covariance;
    BvcDecomposition { bias, variance, covariance, lhs, rhs }
}

// ── Aggregate report ────────────────────────────────────────────────────

fn serialize_maybe_inf<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

fn deserialize_maybe_inf<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum V {
        F(f64),
        S(#[allow(dead_code)] String),
    }
    Ok(match V::deserialize(d)? {
        V::F(x) => x,
        V::S(_) => f64::INFINITY,
    })
}

/// One evaluation record: accuracy, the diversity measures and the
/// uncertainty scores, with the optional calibration / OOD / BVC blocks
/// attached when those protocols were run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ensemble_accuracy: f64,
    pub mean_individual_accuracy: f64,
    #[serde(serialize_with = "serialize_maybe_inf", deserialize_with = "deserialize_maybe_inf")]
    pub ratio_error: f64,
    pub q_statistic: f64,
    pub agreement: f64,
    pub kohavi_wolpert: f64,
    pub entropy_diversity: f64,
    pub uncertainty: UncertaintyScores,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub calibration: Option<CalibrationReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ood_max_softmax: Option<OodScores>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ood_dice_w: Option<OodScores>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bvc: Option<BvcDecomposition>,
}

/// Diversity + uncertainty summary of one prediction matrix. Pairwise
/// diversity measures need M >= 2 and are reported as 0 for a single member.
pub fn metrics_report(pm: &PredictionMatrix) -> MetricsReport {
    let multi = pm.members() >= 2;
    MetricsReport {
        ensemble_accuracy: pm.ensemble_accuracy(),
        mean_individual_accuracy: pm.mean_individual_accuracy(),
        ratio_error: if multi { ratio_error(pm) } else { 0.0 },
        q_statistic: if multi { q_statistic(pm) } else { 0.0 },
        agreement: if multi { agreement(pm) } else { 1.0 },
        kohavi_wolpert: kohavi_wolpert_variance(pm),
        entropy_diversity: if multi { entropy_diversity(pm) } else { 0.0 },
        uncertainty: uncertainty_scores(&pm.ensemble_probs, &pm.labels, CALIBRATION_BINS),
        calibration: None,
        ood_max_softmax: None,
        ood_dice_w: None,
        bvc: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Build a prediction matrix straight from correctness patterns: class 0
    /// is "correct" (label 0 everywhere), class 1 is "wrong".
    fn pm_from_correctness(patterns: &[&[bool]]) -> PredictionMatrix {
        let n = patterns[0].len();
        let logits: Vec<Tensor> = patterns
            .iter()
            .map(|row| {
                let mut vals = Vec::with_capacity(n * 2);
                for &correct in row.iter() {
                    if correct {
                        vals.extend([5.0, 0.0]);
                    } else {
                        vals.extend([0.0, 5.0]);
                    }
                }
                Tensor::matrix(n, 2, vals)
            })
            .collect();
        PredictionMatrix::from_member_logits(&logits, &vec![0; n], Averaging::Probabilities)
    }

    #[test]
    fn ratio_error_enumerated_case() {
        // A errs on {1,2}, B errs on {2,3} of 4 inputs: single 2, shared 1
        let a = [true, false, false, true];
        let b = [true, true, false, false];
        let pm = pm_from_correctness(&[&a, &b]);
        assert_eq!(ratio_error(&pm), 2.0);
    }

    #[test]
    fn ratio_error_sentinels() {
        // identical members with shared errors -> 0
        let a = [true, false, true];
        let pm = pm_from_correctness(&[&a, &a]);
        assert_eq!(ratio_error(&pm), 0.0);
        // disjoint error sets -> +inf
        let a = [false, true, true, true];
        let b = [true, false, true, true];
        let pm = pm_from_correctness(&[&a, &b]);
        assert!(ratio_error(&pm).is_infinite());
    }

    #[test]
    fn q_statistic_enumerated_cases() {
        // patterns A=[1,1,0,0], B=[1,0,1,0]: every cell count 1 -> Q=0
        let a = [true, true, false, false];
        let b = [true, false, true, false];
        let pm = pm_from_correctness(&[&a, &b]);
        assert_eq!(q_statistic(&pm), 0.0);
        // identical members with both outcomes -> Q=1; agreement always 1
        let a = [true, false, true];
        let pm = pm_from_correctness(&[&a, &a]);
        assert_eq!(q_statistic(&pm), 1.0);
        assert_eq!(agreement(&pm), 1.0);
        // complementary correctness -> Q=-1
        let a = [true, false];
        let b = [false, true];
        let pm = pm_from_correctness(&[&a, &b]);
        assert_eq!(q_statistic(&pm), -1.0);
    }

    #[test]
    fn kw_and_entropy_enumerated_cases() {
        // all members agree on everything -> both 0
        let a = [true, true, false];
        let pm = pm_from_correctness(&[&a, &a]);
        assert_eq!(kohavi_wolpert_variance(&pm), 0.0);
        assert_eq!(entropy_diversity(&pm), 0.0);
        // M=2, half the inputs split one-correct/one-wrong -> KW 0.125, entropy 0.5
        let a = [true, true, true, false];
        let b = [true, true, false, true];
        let pm = pm_from_correctness(&[&a, &b]);
        assert!((kohavi_wolpert_variance(&pm) - 0.125).abs() < 1e-12);
        assert!((entropy_diversity(&pm) - 0.5).abs() < 1e-12);
        // M=3, one input with exactly one correct member -> per-input term 1
        let pm = pm_from_correctness(&[&[true], &[false], &[false]]);
        assert_eq!(entropy_diversity(&pm), 1.0);
    }

    #[test]
    fn nll_brier_known_values() {
        // perfect one-hot prediction -> both 0
        let probs = Tensor::matrix(1, 3, vec![1.0, 0.0, 0.0]);
        assert!(nll(&probs, &[0]) < 1e-12);
        assert_eq!(brier(&probs, &[0]), 0.0);
        // uniform over K=4 -> NLL = ln 4
        let probs = Tensor::matrix(1, 4, vec![0.25; 4]);
        assert!((nll(&probs, &[2]) - 4.0f64.ln()).abs() < 1e-12);
        // brier brute-force on a random-ish instance
        let probs = Tensor::matrix(2, 2, vec![0.7, 0.3, 0.2, 0.8]);
        let hand = ((0.7f64 - 1.0).powi(2)
            + 0.3f64.powi(2)
            + 0.2f64.powi(2)
            + (0.8f64 - 1.0).powi(2))
            / 4.0;
        assert!((brier(&probs, &[0, 1]) - hand).abs() < 1e-12);
    }

    #[test]
    fn ece_known_values() {
        // always confident and always right -> 0
        let n = 10;
        let vals: Vec<f64> = (0..n).flat_map(|_| [1.0, 0.0]).collect();
        let probs = Tensor::matrix(n, 2, vals);
        assert_eq!(ece(&probs, &vec![0; n], 15), 0.0);

        // 10 inputs at conf 0.9 with 6 correct, 10 at conf 0.6 with 6 correct
        let mut vals = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            vals.extend([0.9, 0.1]);
            labels.push(if i < 6 { 0 } else { 1 });
        }
        for i in 0..10 {
            vals.extend([0.6, 0.4]);
            labels.push(if i < 6 { 0 } else { 1 });
        }
        let probs = Tensor::matrix(20, 2, vals);
        let e = ece(&probs, &labels, 15);
        assert!((e - 0.15).abs() < 1e-12, "got {e}");
    }

    #[test]
    fn tace_threshold_above_everything_is_zero() {
        let probs = Tensor::matrix(2, 2, vec![0.6, 0.4, 0.3, 0.7]);
        assert_eq!(tace(&probs, &[0, 1], 15, 0.95), 0.0);
    }

    #[test]
    fn temperature_fixed_point_and_recovery() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        // labels drawn from the softmax of the logits themselves: T=1 is
        // NLL-optimal in expectation; with many samples the fit is ~1
        let n = 6000;
        let k = 3;
        let mut vals = Vec::with_capacity(n * k);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p = softmax(&row);
            let u: f64 = rng.gen();
            let mut cum = 0.0;
            let mut y = k - 1;
            for (c, &pc) in p.iter().enumerate() {
                cum += pc;
                if u < cum {
                    y = c;
                    break;
                }
            }
            labels.push(y);
            vals.extend(row);
        }
        let logits = Tensor::matrix(n, k, vals);
        let t = fit_temperature(&logits, &labels).unwrap();
        assert!((t - 1.0).abs() < 0.05, "t = {t}");

        // doubling the logits must be undone by T ~ 2
        let doubled = logits.map(|x| 2.0 * x);
        let t2 = fit_temperature(&doubled, &labels).unwrap();
        assert!((t2 - 2.0 * t).abs() < 0.1, "t2 = {t2}");

        // scaling never changes the argmax
        let p1 = probs_at_temperature(&logits, 1.0);
        let p2 = probs_at_temperature(&logits, t2.max(0.1));
        for i in 0..n {
            assert_eq!(argmax(p1.row(i)), argmax(p2.row(i)));
        }
    }

    #[test]
    fn degenerate_single_class_split_is_rejected() {
        let logits = Tensor::matrix(3, 2, vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        assert!(fit_temperature(&logits, &[0, 0, 0]).is_err());
    }

    #[test]
    fn ood_trivial_cases() {
        let inside = [0.9, 0.8, 0.85];
        let outside = [0.1, 0.2];
        let s = ood_scores(&inside, &outside);
        assert_eq!(s.auroc, 1.0);
        assert_eq!(s.fpr_at_95_tpr, 0.0);
        assert!(s.detection_error < 1e-12);
        assert!((s.aupr_in - 1.0).abs() < 1e-12);
        assert!((s.aupr_out - 1.0).abs() < 1e-12);
        // identical distributions
        let s = auroc(&[0.5, 0.6], &[0.5, 0.6]);
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ood_mains_match_bruteforce_oracles() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for case in 0..50 {
            let n1 = rng.gen_range(3..40);
            let n0 = rng.gen_range(3..40);
            // quantized scores force plenty of ties
            let q: f64 = if case % 2 == 0 { 4.0 } else { 64.0 };
            let inside: Vec<f64> =
                (0..n1).map(|_| (rng.gen_range(0.0f64..1.0) * q).round() / q + 0.1).collect();
            let outside: Vec<f64> =
                (0..n0).map(|_| (rng.gen_range(0.0f64..1.0) * q).round() / q).collect();
            let a = auroc(&inside, &outside);
            let b = crate::oracle::auroc_bruteforce(&inside, &outside);
            assert!((a - b).abs() < 1e-9, "auroc {a} vs {b}");
            let a = aupr(&inside, &outside);
            let b = crate::oracle::aupr_bruteforce(&inside, &outside);
            assert!((a - b).abs() < 1e-9, "aupr {a} vs {b}");
            let a = fpr_at_95_tpr(&inside, &outside);
            let b = crate::oracle::fpr_at_95_tpr_bruteforce(&inside, &outside);
            assert!((a - b).abs() < 1e-9, "fpr {a} vs {b}");
            let a = detection_error(&inside, &outside);
            let b = crate::oracle::detection_error_bruteforce(&inside, &outside);
            assert!((a - b).abs() < 1e-9, "det {a} vs {b}");
        }
    }

    #[test]
    fn bvc_identity_on_random_ensembles() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let m = rng.gen_range(1..6);
            let r = rng.gen_range(2..30);
            let target = rng.gen_range(-2.0..2.0);
            let outputs: Vec<Vec<f64>> = (0..r)
                .map(|_| (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect();
            let d = bvc_decomposition(&outputs, target);
            let scale = d.lhs.abs().max(d.rhs.abs()).max(1.0);
            assert!((d.lhs - d.rhs).abs() / scale < 1e-9, "lhs {} rhs {}", d.lhs, d.rhs);
        }
    }

    #[test]
    fn bvc_edge_cases() {
        // M=1: covariance reported 0, identity reduces to bias^2 + var
        let outputs = vec![vec![1.0], vec![3.0], vec![2.0]];
        let d = bvc_decomposition(&outputs, 1.5);
        assert_eq!(d.covariance, 0.0);
        assert!((d.rhs - (d.bias * d.bias + d.variance)).abs() < 1e-12);
        // identical members: var == covar
        let outputs = vec![vec![1.0, 1.0], vec![2.5, 2.5], vec![0.5, 0.5]];
        let d = bvc_decomposition(&outputs, 0.0);
        assert!((d.variance - d.covariance).abs() < 1e-12);
    }

    #[test]
    fn report_serializes_infinite_ratio_error() {
        let a = [false, true, true, true];
        let b = [true, false, true, true];
        let pm = pm_from_correctness(&[&a, &b]);
        let report = metrics_report(&pm);
        assert!(report.ratio_error.is_infinite());
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"ratio_error\":\"inf\""));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert!(back.ratio_error.is_infinite());
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let logits =
            vec![Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.0, 0.0])];
        let pm = PredictionMatrix::from_member_logits(&logits, &[1, 2], Averaging::Probabilities);
        for i in 0..2 {
            let s: f64 = pm.ensemble_probs.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
