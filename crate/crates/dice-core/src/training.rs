//! The full training procedure and its ablation variants.
//!
//! One step has three phases. Phase 1 builds each member's bottleneck loss
//! for the active variant (plain cross-entropy, class-agnostic, or
//! class-conditional) at the scheduled beta. Phase 2, for redundancy
//! variants with a nonzero scheduled delta, adds the adversarial member loss
//! summed over pairs and weighted `delta / (M-1)`; one optimizer step covers
//! all member parameters. Phase 3 re-encodes the batch with the updated
//! members and takes `nstep_d` discriminator steps on freshly sampled joint
//! and product batches, then pushes fresh features into the class memory.
//!
//! When the scheduled delta is exactly zero the redundancy term is skipped
//! entirely, so variants with delta pinned at zero replay the corresponding
//! bottleneck-only run bit for bit (member-path randomness lives on streams
//! the discriminator never touches).

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::losses;
use crate::metrics::{metrics_report, MetricsReport, PredictionMatrix};
use crate::model::{
    Averaging, Binder, DiscConfig, EnsembleModel, GaussianFeatures, ModelConfig, SampleMode,
    Structure,
};
use crate::redundancy::{
    dv_estimate, redundancy_member_loss, sample_joint_batch, sample_product_batch, tape_samples,
    ClassMemoryBank, CrConfig, BANK_CAPACITY,
};
use crate::rng::{normal_vec, shuffled_indices, RunRng};
use crate::schedule::{Axis, Interp, Schedule};
use crate::tape::{Tape, TapeError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Independent deterministic members, cross-entropy only.
    Ind,
    /// Class-agnostic bottleneck.
    Ib,
    /// Class-conditional bottleneck.
    Ceb,
    /// Class-agnostic bottleneck + unconditional redundancy penalty.
    Ibr,
    /// Class-conditional bottleneck + unconditional redundancy penalty.
    Cebr,
    /// Class-conditional bottleneck + conditional redundancy penalty.
    Dice,
}

impl Variant {
    pub fn has_redundancy(self) -> bool {
        matches!(self, Variant::Ibr | Variant::Cebr | Variant::Dice)
    }

    /// Conditional (class-aware) redundancy vs the unconditional penalty.
    pub fn conditional_redundancy(self) -> bool {
        matches!(self, Variant::Dice)
    }

    /// Class-agnostic backward encoder (single shared row).
    pub fn class_agnostic_bottleneck(self) -> bool {
        matches!(self, Variant::Ib | Variant::Ibr)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ind => "ind",
            Variant::Ib => "ib",
            Variant::Ceb => "ceb",
            Variant::Ibr => "ibr",
            Variant::Cebr => "cebr",
            Variant::Dice => "dice",
        }
    }
}

/// Sampling-variance rule for the redundancy path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrSampling {
    /// Feed the discriminator raw means (no sampling).
    None,
    /// Reparameterize with variance 1.
    Unit,
    /// Reparameterize with the predicted covariance.
    Predicted,
    /// Follow the covariance ramp schedule from 1 to the prediction.
    Ramped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub members: usize,
    pub input_dim: usize,
    pub trunk_hidden: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub structure: Structure,
    pub averaging: Averaging,
    pub disc_hidden: Vec<usize>,
    pub disc_embed_width: usize,
    /// Anchors hold ln(beta_ceb); the class-agnostic variants use
    /// `exp(value) + 1` per the beta equivalence.
    pub log_beta: Schedule,
    /// Redundancy coefficient ramp; required exactly for redundancy variants.
    pub delta: Option<Schedule>,
    /// Covariance ramp progress in [0,1] for `CrSampling::Ramped`.
    pub cov_ramp: Schedule,
    pub cr_sampling: CrSampling,
    pub cr: CrConfig,
    pub lr: Schedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub disc_lr: f64,
    pub disc_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.log_beta.validate()?;
        self.cov_ramp.validate()?;
        self.lr.validate()?;
        self.cr.validate()?;
        match (&self.delta, self.variant.has_redundancy()) {
            (None, true) => {
                return Err(format!(
                    "variant {} needs a delta schedule",
                    self.variant.name()
                ))
            }
            (Some(_), false) => {
                return Err(format!(
                    "variant {} takes no delta coefficient",
                    self.variant.name()
                ))
            }
            (Some(s), true) => s.validate()?,
            (None, false) => {}
        }
        if self.variant.has_redundancy() && self.members < 2 {
            return Err("redundancy variants need at least 2 members".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            members: self.members,
            input_dim: self.input_dim,
            trunk_hidden: self.trunk_hidden,
            feature_dim: self.feature_dim,
            classes: self.classes,
            structure: self.structure,
            class_rows: if self.variant.class_agnostic_bottleneck() {
                1
            } else {
                self.classes
            },
            disc: DiscConfig {
                hidden: self.disc_hidden.clone(),
                embed_width: self.disc_embed_width,
                conditional: self.variant.conditional_redundancy(),
            },
            averaging: self.averaging,
        }
    }

    /// Effective bottleneck beta at a step.
    pub fn beta_at(&self, step: usize, steps_per_epoch: usize) -> f64 {
        let b = self.log_beta.at_step(step, steps_per_epoch).exp();
        if self.variant.class_agnostic_bottleneck() {
            b + 1.0
        } else {
            b
        }
    }

    pub fn delta_at(&self, step: usize, steps_per_epoch: usize) -> f64 {
        match &self.delta {
            Some(s) => s.at_step(step, steps_per_epoch),
            None => 0.0,
        }
    }

    pub fn cov_at(&self, step: usize, steps_per_epoch: usize) -> f64 {
        self.cov_ramp.at_step(step, steps_per_epoch).clamp(0.0, 1.0)
    }

    fn redundancy_sample_mode(&self, cov: f64) -> SampleMode {
        match self.cr_sampling {
            CrSampling::None => SampleMode::MeanOnly,
            CrSampling::Unit => SampleMode::UnitVariance,
            CrSampling::Predicted => SampleMode::Predicted,
            CrSampling::Ramped => SampleMode::Ramped(cov),
        }
    }
}

/// Desk-scale defaults: a configuration that trains in seconds on one core
/// while keeping every mechanism of the full procedure active.
pub fn desk_config(variant: Variant) -> TrainConfig {
    let delta_target = match variant {
        Variant::Dice => 0.2,
        Variant::Ibr | Variant::Cebr => 0.1,
        _ => 0.0,
    };
    TrainConfig {
        variant,
        members: 4,
        input_dim: 6,
        trunk_hidden: 32,
        feature_dim: 16,
        classes: 4,
        structure: Structure::Independent,
        averaging: Averaging::Probabilities,
        disc_hidden: vec![32, 32, 16],
        disc_embed_width: 16,
        log_beta: Schedule::new(
            vec![(0.0, 100.0), (50.0, 10.0), (250.0, 2.0)],
            Interp::StepHold,
            Axis::Steps,
        ),
        delta: if variant.has_redundancy() {
            Some(Schedule::new(
                vec![(0.0, 0.0), (80.0, delta_target)],
                Interp::LinearRamp,
                Axis::Steps,
            ))
        } else {
            None
        },
        cov_ramp: Schedule::new(
            vec![(100.0, 0.0), (250.0, 1.0)],
            Interp::LinearRamp,
            Axis::Steps,
        ),
        cr_sampling: CrSampling::Ramped,
        cr: CrConfig { tau: 10.0, num_s: 2, neg_per_pos: 2, nstep_d: 2, include_rhs: false },
        lr: Schedule::new(
            vec![(0.0, 0.1), (400.0, 0.01)],
            Interp::StepHold,
            Axis::Steps,
        ),
        momentum: 0.9,
        weight_decay: 5e-4,
        disc_lr: 0.003,
        disc_decay: 0.9,
        epochs: 20,
        batch_size: 32,
        seed: 1,
    }
}

/// Full-scale defaults mirroring the published recipe (300 epochs, batch
/// 128, the wide discriminator, four discriminator steps, epoch-anchored
/// schedules). Expressible, not something the acceptance runs execute.
pub fn paper_config(variant: Variant, classes: usize) -> TrainConfig {
    let delta_target = if variant == Variant::Dice { 0.2 } else { 0.1 };
    let log_beta = if classes >= 100 {
        Schedule::new(
            vec![(0.0, 100.0), (8.0, 10.0), (175.0, 2.0), (250.0, 1.5), (300.0, 1.0)],
            Interp::StepHold,
            Axis::Epochs,
        )
    } else {
        Schedule::new(vec![(0.0, 100.0), (5.0, 10.0), (100.0, 2.0)], Interp::StepHold, Axis::Epochs)
    };
    TrainConfig {
        variant,
        members: 4,
        input_dim: 6,
        trunk_hidden: 64,
        feature_dim: 64,
        classes,
        structure: Structure::SharedTrunk,
        averaging: Averaging::Probabilities,
        disc_hidden: vec![256, 256, 100],
        disc_embed_width: 64,
        log_beta,
        delta: if variant.has_redundancy() {
            Some(Schedule::new(
                vec![(0.0, 0.0), (80.0, delta_target)],
                Interp::LinearRamp,
                Axis::Epochs,
            ))
        } else {
            None
        },
        cov_ramp: Schedule::new(
            vec![(100.0, 0.0), (250.0, 1.0)],
            Interp::LinearRamp,
            Axis::Epochs,
        ),
        cr_sampling: CrSampling::Ramped,
        cr: CrConfig::default(),
        lr: Schedule::new(
            vec![(0.0, 0.1), (150.0, 0.001), (225.0, 0.0001)],
            Interp::StepHold,
            Axis::Epochs,
        ),
        momentum: 0.9,
        weight_decay: 5e-4,
        disc_lr: if classes >= 100 { 0.005 } else { 0.003 },
        disc_decay: 0.9,
        epochs: 300,
        batch_size: 128,
        seed: 1,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step}: {source} | snapshot {snapshot}")]
    NonFinite {
        step: usize,
        source: TapeError,
        snapshot: String,
    },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// One minibatch view of a dataset.
pub struct Batch {
    pub x: Tensor,
    pub ys: Vec<usize>,
    pub ids: Vec<usize>,
}

fn gather_batch(data: &Dataset, idx: &[usize]) -> Batch {
    let dim = data.input_dim();
    let mut values = Vec::with_capacity(idx.len() * dim);
    let mut ys = Vec::with_capacity(idx.len());
    for &i in idx {
        values.extend_from_slice(data.input_row(i));
        ys.push(data.labels[i]);
    }
    Batch { x: Tensor::matrix(idx.len(), dim, values), ys, ids: idx.to_vec() }
}

/// Per-step record: every loss term plus the schedule values in force.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub epoch: usize,
    pub variant: String,
    pub beta: f64,
    pub delta: f64,
    pub cov: f64,
    pub lr: f64,
    pub total: f64,
    pub bottleneck: Vec<f64>,
    pub kl: Vec<f64>,
    pub ce: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub redundancy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub disc_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cr_estimate: Option<f64>,
    pub disc_steps_skipped: usize,
}

/// Mean and scale values for the whole batch under the current parameters.
fn member_features(model: &EnsembleModel, batch: &Batch) -> Vec<Vec<GaussianFeatures>> {
    let tape = Tape::new();
    let binder = Binder::bind(&tape, &model.params, |_| false);
    let x = tape.leaf(batch.x.clone());
    (0..model.config.members)
        .map(|m| {
            let (mean, scale) = model.encode_batch(&tape, &binder, m, x);
            let (mv, sv) = (tape.value(mean), tape.value(scale));
            (0..batch.ys.len())
                .map(|n| GaussianFeatures {
                    mean: mv.row(n).to_vec(),
                    scale: sv.row(n).to_vec(),
                })
                .collect()
        })
        .collect()
}

/// One full training step (member phase, discriminator phase, bank update).
pub fn train_step(
    model: &mut EnsembleModel,
    batch: &Batch,
    cfg: &TrainConfig,
    step: usize,
    steps_per_epoch: usize,
    bank: &mut ClassMemoryBank,
    rng: &mut RunRng,
) -> Result<StepReport, TrainError> {
    let beta = cfg.beta_at(step, steps_per_epoch);
    let delta = cfg.delta_at(step, steps_per_epoch);
    let cov = cfg.cov_at(step, steps_per_epoch);
    let lr = cfg.lr.at_step(step, steps_per_epoch);
    let b = batch.ys.len();
    let d = cfg.feature_dim;

    let mut report = StepReport {
        step,
        epoch: step / steps_per_epoch.max(1),
        variant: cfg.variant.name().to_string(),
        beta,
        delta,
        cov,
        lr,
        total: 0.0,
        bottleneck: Vec::new(),
        kl: Vec::new(),
        ce: Vec::new(),
        redundancy: None,
        disc_loss: None,
        cr_estimate: None,
        disc_steps_skipped: 0,
    };
    let snapshot = |r: &StepReport| {
        format!(
            "variant={} beta={:.6e} delta={:.4} bottleneck={:?}",
            r.variant, r.beta, r.delta, r.bottleneck
        )
    };

    // ── Phase 1 + 2: member losses, one optimizer step ──────────────────
    {
        let tape = Tape::new();
        let binder = Binder::bind(&tape, &model.params, |n| !n.starts_with("disc."));
        let x = tape.leaf(batch.x.clone());
        let mut total = None;
        for m in 0..cfg.members {
            let part = match cfg.variant {
                Variant::Ind => losses::deterministic_ce_loss(model, &tape, &binder, m, x, &batch.ys),
                Variant::Ib | Variant::Ibr => {
                    let noise = crate::model::noise_constant(&tape, &mut rng.class_noise, b, d);
                    losses::vib_loss(model, &tape, &binder, m, x, &batch.ys, beta, noise)
                }
                Variant::Ceb | Variant::Cebr | Variant::Dice => {
                    let noise = crate::model::noise_constant(&tape, &mut rng.class_noise, b, d);
                    losses::vceb_loss(model, &tape, &binder, m, x, &batch.ys, beta, noise)
                }
            };
            report.bottleneck.push(tape.item(part.total));
            report.kl.push(tape.item(part.kl));
            report.ce.push(tape.item(part.ce));
            total = Some(match total {
                Some(t) => tape.add(t, part.total),
                None => part.total,
            });
        }
        let mut total = total.expect("at least one member");

        if cfg.variant.has_redundancy() && delta != 0.0 {
            let samples = tape_samples(
                model,
                &tape,
                &binder,
                x,
                &batch.ys,
                &batch.ids,
                cfg.cr.num_s,
                cfg.redundancy_sample_mode(cov),
                &mut rng.redundancy,
            );
            let red = redundancy_member_loss(
                model,
                &tape,
                &binder,
                &samples,
                bank,
                &cfg.cr,
                &mut rng.redundancy,
            )
            .map_err(TrainError::BadConfig)?;
            report.redundancy = Some(tape.item(red.total));
            let weighted = tape.mul_scalar(red.total, delta / (cfg.members as f64 - 1.0));
            total = tape.add(total, weighted);
        }

        report.total = tape.item(total);
        let grads = tape.backward(total).map_err(|source| TrainError::NonFinite {
            step,
            source,
            snapshot: snapshot(&report),
        })?;
        let grad_map = binder.gradients(&tape, &grads);
        model.params.sgd_nesterov_step(&grad_map, lr, cfg.momentum, cfg.weight_decay);
    }

    // ── Phase 3: discriminator steps + memory update ────────────────────
    if cfg.variant.has_redundancy() {
        let feats = member_features(model, batch);
        let mode = cfg.redundancy_sample_mode(cov);
        let conditional = cfg.variant.conditional_redundancy();
        for t in 0..cfg.cr.nstep_d {
            let samples = crate::redundancy::draw_samples(&feats, cfg.cr.num_s, mode, &mut rng.disc);
            let joint = sample_joint_batch(&samples, &batch.ys, &batch.ids);
            let (product, skips) =
                sample_product_batch(bank, &joint, cfg.cr.neg_per_pos, conditional, &mut rng.disc);
            if product.is_empty() {
                report.disc_steps_skipped += 1;
                continue;
            }
            let _ = skips;

            let tape = Tape::new();
            let binder = Binder::bind(&tape, &model.params, |n| n.starts_with("disc."));
            let stack = |triples: &[(
                (usize, usize),
                Vec<f64>,
                Vec<f64>,
                usize,
            )]| {
                let md = cfg.members * d;
                let mut vals = Vec::with_capacity(triples.len() * md);
                let mut ys = Vec::with_capacity(triples.len());
                for ((i, j), zi, zj, y) in triples {
                    let mut row = vec![0.0; md];
                    row[i * d..(i + 1) * d].copy_from_slice(zi);
                    row[j * d..(j + 1) * d].copy_from_slice(zj);
                    vals.extend_from_slice(&row);
                    ys.push(*y);
                }
                (Tensor::matrix(triples.len(), md, vals), ys)
            };
            let jrows: Vec<_> =
                joint.iter().map(|t| (t.pair, t.z_i.clone(), t.z_j.clone(), t.y)).collect();
            let prows: Vec<_> =
                product.iter().map(|t| (t.pair, t.z_i.clone(), t.z_j.clone(), t.y)).collect();
            let (jslots, jys) = stack(&jrows);
            let (pslots, pys) = stack(&prows);
            let jvar = tape.detach(tape.leaf(jslots));
            let pvar = tape.detach(tape.leaf(pslots));
            let jpre = model.discriminate_batch(&tape, &binder, jvar, &jys);
            let ppre = model.discriminate_batch(&tape, &binder, pvar, &pys);
            // Eq: -(sum ln w_joint + sum ln (1-w_prod)) / (Nj+Np), in stable form
            let loss_sum = tape.add(
                tape.sum(tape.softplus(tape.neg(jpre))),
                tape.sum(tape.softplus(ppre)),
            );
            let loss = tape.mul_scalar(loss_sum, 1.0 / (jys.len() + pys.len()) as f64);
            let grads = tape.backward(loss).map_err(|source| TrainError::NonFinite {
                step,
                source,
                snapshot: snapshot(&report),
            })?;
            let grad_map = binder.gradients(&tape, &grads);
            model.params.rmsprop_step(&grad_map, cfg.disc_lr, cfg.disc_decay);

            if t == cfg.cr.nstep_d - 1 {
                report.disc_loss = Some(tape.item(loss));
                report.cr_estimate = dv_estimate(
                    tape.value(jpre).values(),
                    tape.value(ppre).values(),
                    cfg.cr.tau,
                )
                .ok();
            }
        }

        // memory update from the end-of-step parameters
        let feats = member_features(model, batch);
        for m in 0..cfg.members {
            for (n, g) in feats[m].iter().enumerate() {
                let noise = normal_vec(&mut rng.redundancy, d);
                let z = crate::model::sample_features(g, &noise, mode);
                bank.push(m, batch.ys[n], batch.ids[n], z);
            }
        }
    }

    Ok(report)
}

/// Per-epoch validation record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub step: usize,
    pub val: MetricsReport,
}

/// Everything a finished run produces.
pub struct RunResult {
    pub model: EnsembleModel,
    pub steps: Vec<StepReport>,
    pub epochs: Vec<EpochReport>,
}

pub fn evaluate(model: &EnsembleModel, data: &Dataset) -> PredictionMatrix {
    let logits = model.member_logits(&data.inputs);
    PredictionMatrix::from_member_logits(&logits, &data.labels, model.config.averaging)
}

/// Deterministic full run: build the model from the seed, iterate shuffled
/// minibatches, evaluate on the validation split after every epoch.
pub fn train_run(
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<RunResult, TrainError> {
    cfg.validate().map_err(TrainError::BadConfig)?;
    assert_eq!(train.input_dim(), cfg.input_dim, "dataset/input_dim mismatch");
    let mut rng = RunRng::new(cfg.seed);
    let mut model = EnsembleModel::new(cfg.model_config(), &mut rng.init);
    let mut bank = ClassMemoryBank::new(cfg.members, cfg.classes, BANK_CAPACITY);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size).max(1);

    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(&mut rng.data, train.len());
        for chunk in order.chunks(cfg.batch_size) {
            let batch = gather_batch(train, chunk);
            let report =
                train_step(&mut model, &batch, cfg, step, steps_per_epoch, &mut bank, &mut rng)?;
            steps.push(report);
            step += 1;
        }
        if !val.is_empty() {
            let pm = evaluate(&model, val);
            epochs.push(EpochReport { epoch, step, val: metrics_report(&pm) });
        }
    }
    Ok(RunResult { model, steps, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_spurious_clusters, split_train_val, SpuriousTaskConfig};

    fn tiny_task(seed: u64) -> (Dataset, Dataset) {
        let (data, _) = make_spurious_clusters(&SpuriousTaskConfig {
            classes: 3,
            core_dim: 2,
            nuisance_dim: 2,
            nuisance_rho: 0.9,
            core_separation: 2.5,
            core_noise: 0.8,
            nuisance_scale: 2.0,
            label_noise: 0.0,
            count: 96,
            seed,
        });
        split_train_val(&data, 0.75, seed)
    }

    fn tiny_config(variant: Variant) -> TrainConfig {
        let mut cfg = desk_config(variant);
        cfg.members = 2;
        cfg.input_dim = 4;
        cfg.trunk_hidden = 8;
        cfg.feature_dim = 4;
        cfg.classes = 3;
        cfg.disc_hidden = vec![8, 8, 6];
        cfg.disc_embed_width = 4;
        cfg.epochs = 2;
        cfg.batch_size = 24;
        cfg.cr = CrConfig { num_s: 2, neg_per_pos: 2, nstep_d: 2, ..CrConfig::default() };
        cfg
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (train, val) = tiny_task(1);
        let mut cfg = tiny_config(Variant::Ceb);
        cfg.epochs = 0;
        let run = train_run(&cfg, &train, &val).unwrap();
        let mut rng = RunRng::new(cfg.seed);
        let fresh = EnsembleModel::new(cfg.model_config(), &mut rng.init);
        for name in fresh.params.names() {
            assert_eq!(fresh.params.get(name), run.model.params.get(name));
        }
        assert!(run.steps.is_empty());
    }

    #[test]
    fn same_seed_reproduces_identical_runs() {
        let (train, val) = tiny_task(2);
        let cfg = tiny_config(Variant::Dice);
        let a = train_run(&cfg, &train, &val).unwrap();
        let b = train_run(&cfg, &train, &val).unwrap();
        for name in a.model.params.names() {
            assert_eq!(a.model.params.get(name), b.model.params.get(name), "{name}");
        }
        assert_eq!(
            serde_json::to_string(&a.epochs.last().unwrap().val).unwrap(),
            serde_json::to_string(&b.epochs.last().unwrap().val).unwrap()
        );
    }

    #[test]
    fn ind_variant_skips_redundancy_machinery() {
        let (train, val) = tiny_task(3);
        let cfg = tiny_config(Variant::Ind);
        let run = train_run(&cfg, &train, &val).unwrap();
        for s in &run.steps {
            assert!(s.redundancy.is_none());
            assert!(s.disc_loss.is_none());
        }
    }

    #[test]
    fn delta_zero_matches_bottleneck_variant_bit_for_bit() {
        // Member trajectories only: the redundancy variant still warm-trains
        // its discriminator during the ramp, which the bottleneck-only
        // variant does not have.
        let (train, val) = tiny_task(4);
        let mut dice = tiny_config(Variant::Dice);
        dice.delta = Some(Schedule::constant(0.0));
        let ceb = TrainConfig { variant: Variant::Ceb, delta: None, ..dice.clone() };
        let a = train_run(&dice, &train, &val).unwrap();
        let b = train_run(&ceb, &train, &val).unwrap();
        for name in b.model.member_param_names() {
            assert_eq!(a.model.params.get(&name), b.model.params.get(&name), "{name}");
        }
        // IBR with delta 0 vs IB
        let mut ibr = tiny_config(Variant::Ibr);
        ibr.delta = Some(Schedule::constant(0.0));
        let ib = TrainConfig { variant: Variant::Ib, delta: None, ..ibr.clone() };
        let a = train_run(&ibr, &train, &val).unwrap();
        let b = train_run(&ib, &train, &val).unwrap();
        for name in b.model.member_param_names() {
            assert_eq!(a.model.params.get(&name), b.model.params.get(&name), "{name}");
        }
    }

    #[test]
    fn member_and_disc_updates_are_isolated() {
        let (train, _) = tiny_task(5);
        let cfg = tiny_config(Variant::Dice);
        let mut rng = RunRng::new(9);
        let mut model = EnsembleModel::new(cfg.model_config(), &mut rng.init);
        let mut bank = ClassMemoryBank::new(cfg.members, cfg.classes, BANK_CAPACITY);
        let batch = gather_batch(&train, &(0..24).collect::<Vec<_>>());

        // run one full step to warm the bank, then snapshot
        train_step(&mut model, &batch, &cfg, 0, 10, &mut bank, &mut rng).unwrap();
        let before: Vec<(String, Tensor)> = model
            .params
            .iter()
            .map(|(n, e)| (n.to_string(), e.value.clone()))
            .collect();
        train_step(&mut model, &batch, &cfg, 1, 10, &mut bank, &mut rng).unwrap();
        let mut member_changed = false;
        let mut disc_changed = false;
        for (name, old) in &before {
            let changed = model.params.get(name) != old;
            if name.starts_with("disc.") {
                disc_changed |= changed;
            } else {
                member_changed |= changed;
            }
        }
        assert!(member_changed && disc_changed);
    }

    #[test]
    fn shared_trunk_receives_gradients_and_independent_members_stay_disjoint() {
        let (train, _) = tiny_task(6);
        let batch = gather_batch(&train, &(0..24).collect::<Vec<_>>());

        let mut shared = tiny_config(Variant::Ceb);
        shared.structure = Structure::SharedTrunk;
        let mut rng = RunRng::new(3);
        let mut model = EnsembleModel::new(shared.model_config(), &mut rng.init);
        let trunk_before = model.params.get("trunk.fc1.w").clone();
        let mut bank = ClassMemoryBank::new(2, 3, BANK_CAPACITY);
        train_step(&mut model, &batch, &shared, 0, 10, &mut bank, &mut rng).unwrap();
        assert_ne!(model.params.get("trunk.fc1.w"), &trunk_before);

        // independent structure: zero out member 1's presence by training on
        // a loss that only involves member 0
        let ind = tiny_config(Variant::Ceb);
        let mut rng = RunRng::new(3);
        let mut model = EnsembleModel::new(ind.model_config(), &mut rng.init);
        let m1_before = model.params.get("m1.trunk.fc1.w").clone();
        let tape = Tape::new();
        let binder = Binder::bind(&tape, &model.params, |n| !n.starts_with("disc."));
        let x = tape.leaf(batch.x.clone());
        let noise = crate::model::noise_constant(&tape, &mut rng.class_noise, 24, 4);
        let loss = losses::vceb_loss(&model, &tape, &binder, 0, x, &batch.ys, 2.0, noise);
        let grads = tape.backward(loss.total).unwrap();
        let gm = binder.gradients(&tape, &grads);
        model.params.sgd_nesterov_step(&gm, 0.1, 0.9, 0.0);
        assert_eq!(model.params.get("m1.trunk.fc1.w"), &m1_before);
    }

    #[test]
    fn member_step_descends_the_redundancy_loss_under_frozen_discriminator() {
        let (train, _) = tiny_task(7);
        let cfg = tiny_config(Variant::Dice);
        let mut rng = RunRng::new(11);
        let mut model = EnsembleModel::new(cfg.model_config(), &mut rng.init);
        let batch = gather_batch(&train, &(0..24).collect::<Vec<_>>());
        let mut bank = ClassMemoryBank::new(cfg.members, cfg.classes, BANK_CAPACITY);
        // a few steps so the discriminator is informative
        for s in 0..5 {
            train_step(&mut model, &batch, &cfg, s, 10, &mut bank, &mut rng).unwrap();
        }

        let loss_at = |model: &EnsembleModel, noise_seed: u64| {
            let tape = Tape::new();
            let binder = Binder::bind(&tape, &model.params, |n| !n.starts_with("disc."));
            let x = tape.leaf(batch.x.clone());
            let mut nrng = RunRng::new(noise_seed);
            let samples = tape_samples(
                &model, &tape, &binder, x, &batch.ys, &batch.ids, 2, SampleMode::Ramped(0.0), &mut nrng.redundancy,
            );
            let red = redundancy_member_loss(
                &model, &tape, &binder, &samples, &bank, &cfg.cr, &mut nrng.redundancy,
            )
            .unwrap();
            (tape, binder, red.total)
        };

        let (tape, binder, loss) = loss_at(&model, 99);
        let before = tape.item(loss);
        let grads = tape.backward(loss).unwrap();
        let gm = binder.gradients(&tape, &grads);
        // line search: shrink until the fixed-noise loss decreases
        let mut lr = 1e-2;
        let mut decreased = false;
        for _ in 0..8 {
            let mut trial = model.clone();
            trial.params.sgd_nesterov_step(&gm, lr, 0.0, 0.0);
            let (t2, _, l2) = loss_at(&trial, 99);
            if t2.item(l2) < before {
                decreased = true;
                break;
            }
            lr /= 4.0;
        }
        assert!(decreased, "no descent direction found");
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let (train, _) = tiny_task(8);
        let cfg = tiny_config(Variant::Ceb);
        let mut rng = RunRng::new(2);
        let mut model = EnsembleModel::new(cfg.model_config(), &mut rng.init);
        // poison one weight
        model.params.get_mut("m0.mean.w").values_mut()[0] = f64::NAN;
        let mut bank = ClassMemoryBank::new(2, 3, BANK_CAPACITY);
        let batch = gather_batch(&train, &(0..8).collect::<Vec<_>>());
        let err = train_step(&mut model, &batch, &cfg, 0, 10, &mut bank, &mut rng).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("non-finite"), "{msg}");
    }

    #[test]
    fn dice_per_step_losses_match_hand_composed_total() {
        // total = sum of member bottlenecks + delta/(M-1) * redundancy
        let (train, _) = tiny_task(9);
        let mut cfg = tiny_config(Variant::Dice);
        cfg.delta = Some(Schedule::constant(0.3));
        let mut rng = RunRng::new(21);
        let mut model = EnsembleModel::new(cfg.model_config(), &mut rng.init);
        let mut bank = ClassMemoryBank::new(cfg.members, cfg.classes, BANK_CAPACITY);
        let batch = gather_batch(&train, &(0..24).collect::<Vec<_>>());
        let r0 = train_step(&mut model, &batch, &cfg, 0, 10, &mut bank, &mut rng).unwrap();
        let hand = r0.bottleneck.iter().sum::<f64>()
            + r0.delta / (cfg.members as f64 - 1.0) * r0.redundancy.unwrap();
        assert!((r0.total - hand).abs() < 1e-12);
    }
}
