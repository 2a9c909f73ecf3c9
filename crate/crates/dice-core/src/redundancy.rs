//! Neural conditional-redundancy estimation.
//!
//! The discriminator separates two distributions over feature pairs: the
//! joint one (both features sampled from the same input) and the product one
//! (partner feature sampled from a different input of the same class, via a
//! small per-class memory of recent features). Its density ratio
//! `f = w / (1 - w)` plugs into a Donsker-Varadhan estimate of the
//! conditional mutual information between members' features, and its log is
//! the adversarial signal the members minimize. The unconditional variants
//! use the same machinery with partners drawn from any class and a
//! class-blind discriminator.
//!
//! All log-ratios pass through the bounded transform
//! `tau * tanh(ln f / tau)` which caps |ln f| below tau and keeps the
//! estimate stable under a confident discriminator.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Binder, EnsembleModel, GaussianFeatures, SampleMode};
use crate::rng::normal_vec;
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::Tensor;

/// Knobs of the redundancy estimation loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrConfig {
    /// Log-ratio clipping threshold.
    pub tau: f64,
    /// Feature samples drawn per input.
    pub num_s: usize,
    /// Product (negative) triples per joint (positive) triple.
    pub neg_per_pos: usize,
    /// Discriminator update steps per member step.
    pub nstep_d: usize,
    /// Keep the log-mean-exp term of the estimate in the member loss.
    pub include_rhs: bool,
}

impl Default for CrConfig {
    fn default() -> Self {
        CrConfig { tau: 10.0, num_s: 4, neg_per_pos: 4, nstep_d: 4, include_rhs: false }
    }
}

impl CrConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.tau <= 0.0 {
            return Err("tau must be positive".into());
        }
        if self.num_s < 1 || self.neg_per_pos < 1 || self.nstep_d < 1 {
            return Err("num_s, neg_per_pos and nstep_d must be >= 1".into());
        }
        Ok(())
    }
}

/// Bounded density ratio `exp(tau * tanh(ln(w/(1-w)) / tau))`.
/// Monotone in `w_out`, with range `(e^-tau, e^tau)`.
pub fn clipped_ratio(w_out: f64, tau: f64) -> Result<f64, String> {
    if !(w_out > 0.0 && w_out < 1.0) {
        return Err(format!("discriminator output {w_out} outside (0,1)"));
    }
    let log_ratio = (w_out / (1.0 - w_out)).ln();
    Ok((tau * (log_ratio / tau).tanh()).exp())
}

/// Clipped log-ratio straight from the pre-sigmoid discriminator output
/// (`ln(w/(1-w))` equals the pre-sigmoid value exactly).
pub fn clipped_log_ratio(presig: f64, tau: f64) -> f64 {
    tau * (presig / tau).tanh()
}

/// One sample from the joint distribution: both features extracted from the
/// same input.
#[derive(Clone, Debug)]
pub struct JointTriple {
    pub pair: (usize, usize),
    pub input_id: usize,
    pub z_i: Vec<f64>,
    pub z_j: Vec<f64>,
    pub y: usize,
}

/// One sample from the product distribution: the partner feature comes from
/// a different input (same class in the conditional setting).
#[derive(Clone, Debug)]
pub struct ProductTriple {
    pub pair: (usize, usize),
    pub input_id: usize,
    pub partner_id: usize,
    pub z_i: Vec<f64>,
    pub z_j: Vec<f64>,
    pub y: usize,
}

/// Per-(member, class) ring buffers of recently sampled features, used to
/// draw product-distribution partners across batches. Entries remember which
/// input they came from so a feature is never paired with itself.
#[derive(Clone, Debug)]
pub struct ClassMemoryBank {
    members: usize,
    classes: usize,
    capacity: usize,
    slots: Vec<VecDeque<(usize, Vec<f64>)>>,
}

pub const BANK_CAPACITY: usize = 4;

impl ClassMemoryBank {
    pub fn new(members: usize, classes: usize, capacity: usize) -> Self {
        ClassMemoryBank {
            members,
            classes,
            capacity,
            slots: vec![VecDeque::new(); members * classes],
        }
    }

    fn slot(&self, member: usize, class: usize) -> usize {
        assert!(member < self.members && class < self.classes);
        member * self.classes + class
    }

    /// Ring-buffer push at the end of a completed training step.
    pub fn push(&mut self, member: usize, class: usize, input_id: usize, z: Vec<f64>) {
        let s = self.slot(member, class);
        let q = &mut self.slots[s];
        if q.len() == self.capacity {
            q.pop_front();
        }
        q.push_back((input_id, z));
    }

    pub fn stored(&self, member: usize, class: usize) -> usize {
        self.slots[self.slot(member, class)].len()
    }

    pub fn total_stored(&self) -> usize {
        self.slots.iter().map(|q| q.len()).sum()
    }

    /// Uniform draw of a partner feature for `member`, excluding entries from
    /// `exclude_input`. `class` restricts to one class; `None` draws from the
    /// member's whole memory (unconditional redundancy).
    pub fn sample_partner(
        &self,
        member: usize,
        class: Option<usize>,
        exclude_input: usize,
        rng: &mut impl Rng,
    ) -> Option<(usize, Vec<f64>)> {
        let candidates: Vec<&(usize, Vec<f64>)> = match class {
            Some(c) => self.slots[self.slot(member, c)]
                .iter()
                .filter(|(id, _)| *id != exclude_input)
                .collect(),
            None => (0..self.classes)
                .flat_map(|c| self.slots[self.slot(member, c)].iter())
                .filter(|(id, _)| *id != exclude_input)
                .collect(),
        };
        if candidates.is_empty() {
            return None;
        }
        let pick = candidates[rng.gen_range(0..candidates.len())];
        Some(pick.clone())
    }
}

/// Draw `num_s` feature samples per (member, input): `out[m][n][k]`.
pub fn draw_samples(
    features: &[Vec<GaussianFeatures>],
    num_s: usize,
    mode: SampleMode,
    rng: &mut impl Rng,
) -> Vec<Vec<Vec<Vec<f64>>>> {
    features
        .iter()
        .map(|per_input| {
            per_input
                .iter()
                .map(|g| {
                    (0..num_s)
                        .map(|_| {
                            let noise = normal_vec(rng, g.mean.len());
                            crate::model::sample_features(g, &noise, mode)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Joint batch: for every unordered member pair (i < j), every input and
/// every draw index, one triple pairing the matched-k samples of both
/// members. Triple count is `C(M,2) * B * num_s`.
pub fn sample_joint_batch(
    samples: &[Vec<Vec<Vec<f64>>>],
    labels: &[usize],
    input_ids: &[usize],
) -> Vec<JointTriple> {
    let members = samples.len();
    assert!(members >= 2, "joint sampling needs at least two members");
    let mut out = Vec::new();
    for i in 0..members {
        for j in (i + 1)..members {
            for (n, &y) in labels.iter().enumerate() {
                let num_s = samples[i][n].len();
                for k in 0..num_s {
                    out.push(JointTriple {
                        pair: (i, j),
                        input_id: input_ids[n],
                        z_i: samples[i][n][k].clone(),
                        z_j: samples[j][n][k].clone(),
                        y,
                    });
                }
            }
        }
    }
    out
}

/// Counters for product triples that could not be formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SkipStats {
    pub skipped: usize,
}

/// Product batch: `neg_per_pos` partner draws from the bank per joint triple.
/// Partners come from a different input of the same class (or any class when
/// `conditional` is false). Triples whose bank slot holds no eligible entry
/// are skipped and counted.
pub fn sample_product_batch(
    bank: &ClassMemoryBank,
    joint: &[JointTriple],
    neg_per_pos: usize,
    conditional: bool,
    rng: &mut impl Rng,
) -> (Vec<ProductTriple>, SkipStats) {
    let mut out = Vec::new();
    let mut stats = SkipStats::default();
    for t in joint {
        let class = if conditional { Some(t.y) } else { None };
        for _ in 0..neg_per_pos {
            match bank.sample_partner(t.pair.1, class, t.input_id, rng) {
                Some((partner_id, z)) => {
                    debug_assert_ne!(partner_id, t.input_id);
                    out.push(ProductTriple {
                        pair: t.pair,
                        input_id: t.input_id,
                        partner_id,
                        z_i: t.z_i.clone(),
                        z_j: z,
                        y: t.y,
                    });
                }
                None => stats.skipped += 1,
            }
        }
    }
    (out, stats)
}

/// Stack triples of one slot layout into a `[N, M*d]` matrix plus labels.
fn stack_slots(
    members: usize,
    d: usize,
    rows: impl Iterator<Item = ((usize, usize), Vec<f64>, Vec<f64>, usize)>,
) -> (Tensor, Vec<usize>) {
    let mut values = Vec::new();
    let mut ys = Vec::new();
    let mut count = 0;
    for ((i, j), z_i, z_j, y) in rows {
        let mut row = vec![0.0; members * d];
        row[i * d..(i + 1) * d].copy_from_slice(&z_i);
        row[j * d..(j + 1) * d].copy_from_slice(&z_j);
        values.extend_from_slice(&row);
        ys.push(y);
        count += 1;
    }
    (Tensor::matrix(count, members * d, values), ys)
}

/// Pre-sigmoid discriminator outputs for a set of triples (no gradients).
fn presigs_for<'a, I>(model: &EnsembleModel, rows: I) -> Vec<f64>
where
    I: Iterator<Item = ((usize, usize), Vec<f64>, Vec<f64>, usize)>,
{
    let (slots, ys) = stack_slots(model.config.members, model.config.feature_dim, rows);
    if ys.is_empty() {
        return Vec::new();
    }
    let tape = Tape::new();
    let binder = Binder::bind(&tape, &model.params, |_| false);
    let s = tape.leaf(slots);
    let pre = model.discriminate_batch(&tape, &binder, s, &ys);
    tape.value(pre).values().to_vec()
}

pub fn joint_presigs(model: &EnsembleModel, joint: &[JointTriple]) -> Vec<f64> {
    presigs_for(model, joint.iter().map(|t| (t.pair, t.z_i.clone(), t.z_j.clone(), t.y)))
}

pub fn product_presigs(model: &EnsembleModel, product: &[ProductTriple]) -> Vec<f64> {
    presigs_for(model, product.iter().map(|t| (t.pair, t.z_i.clone(), t.z_j.clone(), t.y)))
}

/// Binary cross-entropy of the discriminator over the union of both batches,
/// joint labeled 1 and product labeled 0, from sigmoid outputs.
pub fn discriminator_loss_from_probs(
    joint_probs: &[f64],
    product_probs: &[f64],
) -> Result<f64, String> {
    if joint_probs.is_empty() || product_probs.is_empty() {
        return Err("empty batch".into());
    }
    let total = (joint_probs.len() + product_probs.len()) as f64;
    let mut s = 0.0;
    for &w in joint_probs {
        s -= w.ln();
    }
    for &w in product_probs {
        s -= (1.0 - w).ln();
    }
    Ok(s / total)
}

/// Discriminator loss on sampled triples under the current model.
pub fn discriminator_loss(
    model: &EnsembleModel,
    joint: &[JointTriple],
    product: &[ProductTriple],
) -> Result<f64, String> {
    let jp: Vec<f64> = joint_presigs(model, joint).iter().map(|&o| sigmoid(o)).collect();
    let pp: Vec<f64> = product_presigs(model, product).iter().map(|&o| sigmoid(o)).collect();
    discriminator_loss_from_probs(&jp, &pp)
}

/// Donsker-Varadhan estimate from raw log-ratios, clipping applied inside:
/// `mean(clip(lnf_joint)) - ln(mean(exp(clip(lnf_product))))`.
pub fn dv_estimate(
    joint_log_ratios: &[f64],
    product_log_ratios: &[f64],
    tau: f64,
) -> Result<f64, String> {
    if joint_log_ratios.is_empty() || product_log_ratios.is_empty() {
        return Err("empty batch".into());
    }
    let lhs = joint_log_ratios.iter().map(|&o| clipped_log_ratio(o, tau)).sum::<f64>()
        / joint_log_ratios.len() as f64;
    let mean_f = product_log_ratios
        .iter()
        .map(|&o| clipped_log_ratio(o, tau).exp())
        .sum::<f64>()
        / product_log_ratios.len() as f64;
    Ok(lhs - mean_f.ln())
}

/// Conditional-redundancy estimate on sampled triples under the current model.
pub fn cr_estimate(
    model: &EnsembleModel,
    joint: &[JointTriple],
    product: &[ProductTriple],
    tau: f64,
) -> Result<f64, String> {
    dv_estimate(&joint_presigs(model, joint), &product_presigs(model, product), tau)
}

/// Unconditional-redundancy estimate; same computation against a class-blind
/// discriminator, named separately to mirror the conditional surface.
pub fn r_estimate(
    model: &EnsembleModel,
    joint: &[JointTriple],
    product: &[ProductTriple],
    tau: f64,
) -> Result<f64, String> {
    assert!(!model.config.disc.conditional, "r_estimate expects an unconditional discriminator");
    cr_estimate(model, joint, product, tau)
}

/// On-tape member losses for the redundancy term of one training step.
pub struct MemberRedundancyLoss {
    /// Sum over pairs of per-pair mean clipped log-ratios (plus the
    /// log-mean-exp term when enabled). Weight it by delta/(M-1) outside.
    pub total: Var,
    /// Per-pair values for reporting, in (i, j) order.
    pub per_pair: Vec<((usize, usize), f64)>,
}

/// Tape samples for the redundancy path: `z[m][k]` is a `[B, d]` var sampled
/// with the covariance-ramped scale, scale path detached so the covariance
/// head receives no gradient from this loss.
pub struct TapeSamples {
    pub z: Vec<Vec<Var>>,
    pub labels: Vec<usize>,
    pub input_ids: Vec<usize>,
}

/// Draw the on-tape redundancy samples for every member under the given
/// sampling rule. The scale path is detached so the covariance head receives
/// no gradient from the redundancy loss.
#[allow(clippy::too_many_arguments)]
pub fn tape_samples(
    model: &EnsembleModel,
    tape: &Tape,
    binder: &Binder,
    x: Var,
    labels: &[usize],
    input_ids: &[usize],
    num_s: usize,
    mode: SampleMode,
    rng: &mut impl Rng,
) -> TapeSamples {
    let d = model.config.feature_dim;
    let b = labels.len();
    let mut z = Vec::with_capacity(model.config.members);
    for m in 0..model.config.members {
        let (mean, scale) = model.encode_batch(tape, binder, m, x);
        let ramp = match mode {
            SampleMode::MeanOnly => None,
            SampleMode::UnitVariance => Some(0.0),
            SampleMode::Predicted => Some(1.0),
            SampleMode::Ramped(c) => Some(c),
        };
        let scale_used = ramp.map(|c| {
            tape.detach(tape.add_scalar(tape.mul_scalar(scale, c), 1.0 - c))
        });
        let mut per_k = Vec::with_capacity(num_s);
        for _ in 0..num_s {
            match scale_used {
                Some(s) => {
                    let noise = crate::model::noise_constant(tape, rng, b, d);
                    per_k.push(tape.add(mean, tape.mul(noise, s)));
                }
                None => per_k.push(mean),
            }
        }
        z.push(per_k);
    }
    TapeSamples { z, labels: labels.to_vec(), input_ids: input_ids.to_vec() }
}

/// Adversarial member loss over all pairs: for each unordered pair, the mean
/// of clipped log-ratios over its joint triples; when `include_rhs` is set,
/// minus the log of the mean clipped ratio over its product triples. The
/// discriminator parameters must be bound non-trainable by the caller.
pub fn redundancy_member_loss(
    model: &EnsembleModel,
    tape: &Tape,
    binder: &Binder,
    samples: &TapeSamples,
    bank: &ClassMemoryBank,
    cfg: &CrConfig,
    rng: &mut impl Rng,
) -> Result<MemberRedundancyLoss, String> {
    let members = model.config.members;
    assert!(members >= 2, "redundancy loss needs at least two members");
    let num_s = samples.z[0].len();
    if samples.labels.is_empty() {
        return Err("empty batch".into());
    }
    let conditional = model.config.disc.conditional;
    let inv_tau = 1.0 / cfg.tau;

    let mut pair_losses: Vec<Var> = Vec::new();
    let mut per_pair = Vec::new();
    for i in 0..members {
        for j in (i + 1)..members {
            // joint term: mean over k of the per-k batch mean (equal counts)
            let mut k_means = Vec::with_capacity(num_s);
            let mut rhs_sum: Option<Var> = None;
            let mut rhs_count = 0usize;
            for k in 0..num_s {
                let slots = model.pair_slots(tape, (i, j), samples.z[i][k], samples.z[j][k]);
                let pre = model.discriminate_batch(tape, binder, slots, &samples.labels);
                let clipped =
                    tape.mul_scalar(tape.tanh(tape.mul_scalar(pre, inv_tau)), cfg.tau);
                k_means.push(tape.mean(clipped));

                if cfg.include_rhs {
                    // product triples for this (pair, k): bank partners per row
                    for _ in 0..cfg.neg_per_pos {
                        let mut kept_rows = Vec::new();
                        let mut partner_vals = Vec::new();
                        for (n, &y) in samples.labels.iter().enumerate() {
                            let class = if conditional { Some(y) } else { None };
                            if let Some((_, zp)) =
                                bank.sample_partner(j, class, samples.input_ids[n], rng)
                            {
                                kept_rows.push(n);
                                partner_vals.extend_from_slice(&zp);
                            }
                        }
                        if kept_rows.is_empty() {
                            continue;
                        }
                        let zi = tape.gather_rows(samples.z[i][k], &kept_rows);
                        let d = model.config.feature_dim;
                        let zp = tape.detach(tape.leaf(Tensor::matrix(
                            kept_rows.len(),
                            d,
                            partner_vals,
                        )));
                        let slots = model.pair_slots(tape, (i, j), zi, zp);
                        let ys: Vec<usize> =
                            kept_rows.iter().map(|&n| samples.labels[n]).collect();
                        let pre = model.discriminate_batch(tape, binder, slots, &ys);
                        let f = tape.exp(tape.mul_scalar(
                            tape.tanh(tape.mul_scalar(pre, inv_tau)),
                            cfg.tau,
                        ));
                        let s = tape.sum(f);
                        rhs_sum = Some(match rhs_sum {
                            Some(acc) => tape.add(acc, s),
                            None => s,
                        });
                        rhs_count += kept_rows.len();
                    }
                }
            }
            let mut pair_loss = k_means
                .into_iter()
                .reduce(|a, b| tape.add(a, b))
                .map(|s| tape.mul_scalar(s, 1.0 / num_s as f64))
                .expect("num_s >= 1");
            if cfg.include_rhs {
                if let Some(s) = rhs_sum {
                    let mean_f = tape.mul_scalar(s, 1.0 / rhs_count as f64);
                    pair_loss = tape.sub(pair_loss, tape.ln(mean_f));
                }
            }
            per_pair.push(((i, j), tape.item(pair_loss)));
            pair_losses.push(pair_loss);
        }
    }
    let total = pair_losses.into_iter().reduce(|a, b| tape.add(a, b)).expect("pairs >= 1");
    Ok(MemberRedundancyLoss { total, per_pair })
}
