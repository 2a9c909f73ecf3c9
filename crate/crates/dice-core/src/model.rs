//! Ensemble members and the shared pairwise discriminator.
//!
//! A member is a stochastic encoder (dense trunk, mean head, softplus scale
//! head), a backward class-embedding table of per-class feature means, and a
//! dense classifier. Members either own their trunks or share one. One
//! discriminator serves every member pair: its input is a member-slot layout
//! of width `M*d` where only the two populated slots are nonzero, optionally
//! concatenated with a class embedding at the first and second layers.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::optim::{GradMap, ParamSet};
use crate::rng::normal_vec;
use crate::tape::{Tape, Var};
use crate::tensor::{softmax, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    /// Every member owns its full network.
    Independent,
    /// Members share the trunk; heads stay member-specific.
    SharedTrunk,
}

/// How member predictions are combined at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Average the per-member softmax outputs (default).
    Probabilities,
    /// Average the logits, then apply one softmax.
    Logits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscConfig {
    /// Hidden layer widths; the output layer is added on top.
    pub hidden: Vec<usize>,
    /// Width of the class embedding concatenated at layers 1 and 2.
    pub embed_width: usize,
    /// Class-conditional discriminator (K outputs, select index y) when true;
    /// plain unconditional discriminator (single output) when false.
    pub conditional: bool,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig { hidden: vec![256, 256, 100], embed_width: 64, conditional: true }
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

/// Additive floor on the predicted scale. Softplus alone can underflow to
/// exactly zero in f64 while the compression weight is annealed near zero,
/// which would put ln(scale^2) at -inf; the floor keeps the invariant
/// "scale strictly positive" true in floating point. Gradients are
/// unaffected (constant shift).
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub members: usize,
    pub input_dim: usize,
    /// Width of the two hidden trunk layers.
    pub trunk_hidden: usize,
    /// Feature dimension d.
    pub feature_dim: usize,
    pub classes: usize,
    pub structure: Structure,
    /// Rows of the backward class-means table: `classes` for the
    /// class-conditional bottleneck, 1 for the class-agnostic one.
    pub class_rows: usize,
    pub disc: DiscConfig,
    pub averaging: Averaging,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.members == 0 {
            return Err("members must be >= 1".into());
        }
        if self.class_rows != 1 && self.class_rows != self.classes {
            return Err(format!(
                "class_rows must be 1 or classes ({}), got {}",
                self.classes, self.class_rows
            ));
        }
        if self.disc.hidden.len() != 3 {
            return Err("discriminator takes exactly 3 hidden layers".into());
        }
        Ok(())
    }
}

/// Diagonal-Gaussian feature distribution emitted by a member encoder for one
/// input: a mean vector and a strictly positive per-dimension scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFeatures {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Sampling rule for drawing features from a [`GaussianFeatures`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleMode {
    /// No sampling: z = mean.
    MeanOnly,
    /// Unit variance: z = mean + noise.
    UnitVariance,
    /// Predicted variance: z = mean + noise * scale.
    Predicted,
    /// Covariance ramp at progress c in [0,1]: z = mean + noise * ((1-c) + c*scale).
    /// c = 0 matches `UnitVariance`, c = 1 matches `Predicted`.
    Ramped(f64),
}

/// Draw one feature sample. The noise slice is one standard-normal draw per
/// dimension, taken from the run's seeded generator by the caller.
pub fn sample_features(g: &GaussianFeatures, noise: &[f64], mode: SampleMode) -> Vec<f64> {
    assert_eq!(g.mean.len(), g.scale.len());
    assert_eq!(noise.len(), g.mean.len(), "noise length mismatch");
    match mode {
        SampleMode::MeanOnly => g.mean.clone(),
        SampleMode::UnitVariance => g.mean.iter().zip(noise).map(|(&m, &e)| m + e).collect(),
        SampleMode::Predicted => g
            .mean
            .iter()
            .zip(&g.scale)
            .zip(noise)
            .map(|((&m, &s), &e)| m + e * s)
            .collect(),
        SampleMode::Ramped(c) => g
            .mean
            .iter()
            .zip(&g.scale)
            .zip(noise)
            .map(|((&m, &s), &e)| m + e * ((1.0 - c) + c * s))
            .collect(),
    }
}

/// Leaf variables for one tape, bound from a `ParamSet`. Parameters failing
/// the trainable predicate are wrapped in a detach so they receive no
/// gradient at all on this tape.
pub struct Binder {
    vars: BTreeMap<String, Var>,
    trainable: Vec<String>,
}

impl Binder {
    pub fn bind(tape: &Tape, params: &ParamSet, trainable: impl Fn(&str) -> bool) -> Binder {
        let mut vars = BTreeMap::new();
        let mut names = Vec::new();
        for (name, entry) in params.iter() {
            let leaf = tape.leaf(entry.value.clone());
            if trainable(name) {
                vars.insert(name.to_string(), leaf);
                names.push(name.to_string());
            } else {
                vars.insert(name.to_string(), tape.detach(leaf));
            }
        }
        Binder { vars, trainable: names }
    }

    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn trainable_names(&self) -> &[String] {
        &self.trainable
    }

    /// Collect gradients for every trainable parameter (zeros when unused).
    pub fn gradients(&self, tape: &Tape, grads: &crate::tape::Gradients) -> GradMap {
        let mut out = GradMap::new();
        for name in &self.trainable {
            let v = self.var(name);
            let shape = tape.shape(v);
            out.insert(name.clone(), grads.get(v, &shape));
        }
        out
    }
}

/// M members plus the shared discriminator, all parameters in one flat store.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl EnsembleModel {
    /// Build with fan-in-scaled uniform initialization for dense layers and
    /// zero-initialized class-means tables. Members draw before the
    /// discriminator so member initializations agree across variants that
    /// differ only in discriminator kind.
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Self {
        config.validate().expect("invalid model config");
        let mut params = ParamSet::new();
        let (ind, h, d, k) =
            (config.input_dim, config.trunk_hidden, config.feature_dim, config.classes);

        fn dense(
            params: &mut ParamSet,
            rng: &mut impl Rng,
            prefix: &str,
            fan_in: usize,
            out: usize,
        ) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * out).map(|_| rng.gen_range(-bound..bound)).collect();
            let b: Vec<f64> = (0..out).map(|_| rng.gen_range(-bound..bound)).collect();
            params.insert(&format!("{prefix}.w"), Tensor::matrix(fan_in, out, w));
            params.insert(&format!("{prefix}.b"), Tensor::vector(b));
        }

        if config.structure == Structure::SharedTrunk {
            dense(&mut params, rng, "trunk.fc1", ind, h);
            dense(&mut params, rng, "trunk.fc2", h, h);
        }
        for m in 0..config.members {
            if config.structure == Structure::Independent {
                dense(&mut params, rng, &format!("m{m}.trunk.fc1"), ind, h);
                dense(&mut params, rng, &format!("m{m}.trunk.fc2"), h, h);
            }
            dense(&mut params, rng, &format!("m{m}.mean"), h, d);
            dense(&mut params, rng, &format!("m{m}.scale"), d, d);
            params.insert(&format!("m{m}.class_means"), Tensor::zeros(&[config.class_rows, d]));
            dense(&mut params, rng, &format!("m{m}.cls"), d, k);
        }

        let slots = config.members * d;
        let e = if config.disc.conditional { config.disc.embed_width } else { 0 };
        let (h1, h2, h3) = (config.disc.hidden[0], config.disc.hidden[1], config.disc.hidden[2]);
        if config.disc.conditional {
            let bound = 1.0 / (config.disc.embed_width as f64).sqrt();
            let table: Vec<f64> =
                (0..k * config.disc.embed_width).map(|_| rng.gen_range(-bound..bound)).collect();
            params.insert("disc.embed", Tensor::matrix(k, config.disc.embed_width, table));
        }
        dense(&mut params, rng, "disc.fc1", slots + e, h1);
        dense(&mut params, rng, "disc.fc2", h1 + e, h2);
        dense(&mut params, rng, "disc.fc3", h2, h3);
        let out_width = if config.disc.conditional { k } else { 1 };
        dense(&mut params, rng, "disc.out", h3, out_width);

        EnsembleModel { config, params }
    }

    pub fn member_param_names(&self) -> Vec<String> {
        self.params.names().filter(|n| !n.starts_with("disc.")).map(String::from).collect()
    }

    pub fn disc_param_names(&self) -> Vec<String> {
        self.params.names_with_prefix("disc.")
    }

    fn trunk_prefix(&self, member: usize) -> String {
        match self.config.structure {
            Structure::SharedTrunk => "trunk".to_string(),
            Structure::Independent => format!("m{member}.trunk"),
        }
    }

    fn dense_fwd(tape: &Tape, b: &Binder, prefix: &str, x: Var) -> Var {
        tape.add_row(tape.matmul(x, b.var(&format!("{prefix}.w"))), b.var(&format!("{prefix}.b")))
    }

    /// Encoder forward for a batch: trunk, mean head, softplus scale head.
    /// Returns (mean, scale), both `[B, d]` with scale strictly positive.
    pub fn encode_batch(&self, tape: &Tape, b: &Binder, member: usize, x: Var) -> (Var, Var) {
        let t = self.trunk_prefix(member);
        let h1 = tape.relu(Self::dense_fwd(tape, b, &format!("{t}.fc1"), x));
        let h2 = tape.relu(Self::dense_fwd(tape, b, &format!("{t}.fc2"), h1));
        let mean = Self::dense_fwd(tape, b, &format!("m{member}.mean"), h2);
        let scale = tape.add_scalar(
            tape.softplus(Self::dense_fwd(tape, b, &format!("m{member}.scale"), mean)),
            SCALE_FLOOR,
        );
        (mean, scale)
    }

    /// Dense classifier head: `[B, d] -> [B, K]` logits.
    pub fn classify_batch(&self, tape: &Tape, b: &Binder, member: usize, z: Var) -> Var {
        Self::dense_fwd(tape, b, &format!("m{member}.cls"), z)
    }

    /// Backward-encoder class means for a batch of labels: `[B, d]`.
    /// With a single-row table every label maps to the shared row.
    pub fn class_means_batch(&self, tape: &Tape, b: &Binder, member: usize, ys: &[usize]) -> Var {
        let table = b.var(&format!("m{member}.class_means"));
        let rows: Vec<usize> =
            if self.config.class_rows == 1 { vec![0; ys.len()] } else { ys.to_vec() };
        tape.gather_rows(table, &rows)
    }

    /// Assemble the discriminator's member-slot input from one populated pair:
    /// slots for members other than (i, j) are zero-filled.
    pub fn pair_slots(&self, tape: &Tape, pair: (usize, usize), z_i: Var, z_j: Var) -> Var {
        let d = self.config.feature_dim;
        let rows = tape.shape(z_i)[0];
        let mut parts = Vec::with_capacity(self.config.members);
        for m in 0..self.config.members {
            if m == pair.0 {
                parts.push(z_i);
            } else if m == pair.1 {
                parts.push(z_j);
            } else {
                parts.push(tape.detach(tape.leaf(Tensor::zeros(&[rows, d]))));
            }
        }
        tape.concat_cols(&parts)
    }

    /// Discriminator forward on slot-layout inputs. Returns the pre-sigmoid
    /// output selected per row: entry `ys[n]` of the K-wide output for the
    /// conditional discriminator, the single output otherwise.
    pub fn discriminate_batch(&self, tape: &Tape, b: &Binder, slots: Var, ys: &[usize]) -> Var {
        assert_eq!(tape.shape(slots)[0], ys.len(), "label count mismatch");
        if self.config.disc.conditional {
            for &y in ys {
                assert!(y < self.config.classes, "class index {y} out of range");
            }
            let emb = tape.gather_rows(b.var("disc.embed"), ys);
            let in1 = tape.concat_cols(&[slots, emb]);
            let h1 = tape.leaky_relu(Self::dense_fwd(tape, b, "disc.fc1", in1), LEAKY_SLOPE);
            let in2 = tape.concat_cols(&[h1, emb]);
            let h2 = tape.leaky_relu(Self::dense_fwd(tape, b, "disc.fc2", in2), LEAKY_SLOPE);
            let h3 = tape.leaky_relu(Self::dense_fwd(tape, b, "disc.fc3", h2), LEAKY_SLOPE);
            let out = Self::dense_fwd(tape, b, "disc.out", h3);
            tape.gather_col(out, ys)
        } else {
            let h1 = tape.leaky_relu(Self::dense_fwd(tape, b, "disc.fc1", slots), LEAKY_SLOPE);
            let h2 = tape.leaky_relu(Self::dense_fwd(tape, b, "disc.fc2", h1), LEAKY_SLOPE);
            let h3 = tape.leaky_relu(Self::dense_fwd(tape, b, "disc.fc3", h2), LEAKY_SLOPE);
            let out = Self::dense_fwd(tape, b, "disc.out", h3);
            tape.gather_col(out, &vec![0; ys.len()])
        }
    }

    // ── Value-level surface (single inputs, no gradients) ──────────────

    /// Encode one input into its feature distribution.
    pub fn encode(&self, member: usize, x: &[f64]) -> GaussianFeatures {
        assert_eq!(x.len(), self.config.input_dim, "input dimension mismatch");
        let tape = Tape::new();
        let b = Binder::bind(&tape, &self.params, |_| false);
        let xv = tape.leaf(Tensor::matrix(1, x.len(), x.to_vec()));
        let (mean, scale) = self.encode_batch(&tape, &b, member, xv);
        GaussianFeatures {
            mean: tape.value(mean).values().to_vec(),
            scale: tape.value(scale).values().to_vec(),
        }
    }

    /// Classifier logits for one feature vector.
    pub fn classify(&self, member: usize, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.config.feature_dim, "feature dimension mismatch");
        let tape = Tape::new();
        let b = Binder::bind(&tape, &self.params, |_| false);
        let zv = tape.leaf(Tensor::matrix(1, z.len(), z.to_vec()));
        tape.value(self.classify_batch(&tape, &b, member, zv)).values().to_vec()
    }

    /// Discriminator probability (after sigmoid) for a feature pair placed in
    /// member slots `(i, j)` under class `y`.
    pub fn discriminate(
        &self,
        pair: (usize, usize),
        z_i: &[f64],
        z_j: &[f64],
        y: usize,
    ) -> Result<f64, String> {
        if self.config.disc.conditional && y >= self.config.classes {
            return Err(format!("class index {y} out of range {}", self.config.classes));
        }
        let tape = Tape::new();
        let b = Binder::bind(&tape, &self.params, |_| false);
        let zi = tape.leaf(Tensor::matrix(1, z_i.len(), z_i.to_vec()));
        let zj = tape.leaf(Tensor::matrix(1, z_j.len(), z_j.to_vec()));
        let slots = self.pair_slots(&tape, pair, zi, zj);
        let pre = self.discriminate_batch(&tape, &b, slots, &[y]);
        Ok(crate::tape::sigmoid(tape.value(pre).values()[0]))
    }

    /// Per-member logits over a whole evaluation set, predicting from the
    /// distribution means (no sampling at inference). Returns one `[N, K]`
    /// tensor per member.
    pub fn member_logits(&self, inputs: &Tensor) -> Vec<Tensor> {
        let tape = Tape::new();
        let b = Binder::bind(&tape, &self.params, |_| false);
        let x = tape.leaf(inputs.clone());
        (0..self.config.members)
            .map(|m| {
                let (mean, _scale) = self.encode_batch(&tape, &b, m, x);
                tape.value(self.classify_batch(&tape, &b, m, mean))
            })
            .collect()
    }

    /// Ensemble probability vector for one input: per-member softmax over the
    /// mean-feature logits, combined per the configured averaging rule.
    pub fn ensemble_predict(&self, x: &[f64]) -> Vec<f64> {
        let inputs = Tensor::matrix(1, x.len(), x.to_vec());
        let logits = self.member_logits(&inputs);
        combine_predictions(&logits, 0, self.config.averaging)
    }
}

/// Combine per-member logits for row `n` into one probability vector.
pub fn combine_predictions(member_logits: &[Tensor], n: usize, avg: Averaging) -> Vec<f64> {
    let k = member_logits[0].dims2().1;
    let m = member_logits.len() as f64;
    match avg {
        Averaging::Probabilities => {
            let mut acc = vec![0.0; k];
            for l in member_logits {
                for (a, p) in acc.iter_mut().zip(softmax(l.row(n))) {
                    *a += p;
                }
            }
            acc.iter_mut().for_each(|a| *a /= m);
            acc
        }
        Averaging::Logits => {
            let mut acc = vec![0.0; k];
            for l in member_logits {
                for (a, &x) in acc.iter_mut().zip(l.row(n)) {
                    *a += x;
                }
            }
            acc.iter_mut().for_each(|a| *a /= m);
            softmax(&acc)
        }
    }
}

/// Standard-normal noise matrix `[rows, d]` as a detached tape constant.
pub fn noise_constant(tape: &Tape, rng: &mut impl Rng, rows: usize, d: usize) -> Var {
    tape.detach(tape.leaf(Tensor::matrix(rows, d, normal_vec(rng, rows * d))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config(members: usize, conditional: bool) -> ModelConfig {
        ModelConfig {
            members,
            input_dim: 3,
            trunk_hidden: 5,
            feature_dim: 4,
            classes: 3,
            structure: Structure::Independent,
            class_rows: 3,
            disc: DiscConfig { hidden: vec![8, 8, 6], embed_width: 4, conditional },
            averaging: Averaging::Probabilities,
        }
    }

    fn tiny_model(members: usize) -> EnsembleModel {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        EnsembleModel::new(tiny_config(members, true), &mut rng)
    }

    #[test]
    fn zero_weight_encoder_outputs_biases() {
        let mut model = tiny_model(1);
        for name in model.member_param_names() {
            if name.ends_with(".w") {
                let shape = model.params.get(&name).shape().to_vec();
                *model.params.get_mut(&name) = Tensor::zeros(&shape);
            }
        }
        let g = model.encode(0, &[0.3, -0.1, 0.7]);
        let bias = model.params.get("m0.mean.b").values().to_vec();
        let sbias = model.params.get("m0.scale.b").values().to_vec();
        assert_eq!(g.mean, bias);
        for (s, b) in g.scale.iter().zip(&sbias) {
            assert!((s - b.exp().ln_1p()).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_is_strictly_positive() {
        let model = tiny_model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let g = model.encode(1, &x);
            assert!(g.scale.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let model = tiny_model(1);
        let x = [0.5, -0.2, 1.1];
        assert_eq!(model.encode(0, &x), model.encode(0, &x));
    }

    #[test]
    fn sample_feature_modes() {
        let g = GaussianFeatures { mean: vec![1.0, 2.0], scale: vec![0.5, 3.0] };
        assert_eq!(sample_features(&g, &[0.0, 0.0], SampleMode::Predicted), vec![1.0, 2.0]);
        assert_eq!(sample_features(&g, &[1.0, 0.0], SampleMode::UnitVariance), vec![2.0, 2.0]);
        // ramp start equals unit variance, ramp end equals predicted
        assert_eq!(
            sample_features(&g, &[0.3, -0.4], SampleMode::Ramped(0.0)),
            sample_features(&g, &[0.3, -0.4], SampleMode::UnitVariance)
        );
        assert_eq!(
            sample_features(&g, &[0.3, -0.4], SampleMode::Ramped(1.0)),
            sample_features(&g, &[0.3, -0.4], SampleMode::Predicted)
        );
        assert_eq!(sample_features(&g, &[9.0, 9.0], SampleMode::MeanOnly), vec![1.0, 2.0]);
    }

    #[test]
    fn classify_matches_hand_matrix_product() {
        let model = tiny_model(1);
        let z = [0.2, -1.0, 0.5, 0.8];
        let w = model.params.get("m0.cls.w");
        let b = model.params.get("m0.cls.b");
        let mut expect = b.values().to_vec();
        for (i, &zi) in z.iter().enumerate() {
            for j in 0..3 {
                expect[j] += zi * w.values()[i * 3 + j];
            }
        }
        let got = model.classify(0, &z);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_discriminator_outputs_half() {
        let mut model = tiny_model(2);
        for name in model.disc_param_names() {
            let shape = model.params.get(&name).shape().to_vec();
            *model.params.get_mut(&name) = Tensor::zeros(&shape);
        }
        let z = vec![0.4; 4];
        let p = model.discriminate((0, 1), &z, &z, 1).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn discriminator_output_in_unit_interval_and_slot_sensitive() {
        let model = tiny_model(3);
        let zi = vec![0.9, -0.3, 0.2, 1.4];
        let zj = vec![-0.5, 0.8, 0.1, -1.2];
        let p01 = model.discriminate((0, 1), &zi, &zj, 2).unwrap();
        let p12 = model.discriminate((1, 2), &zi, &zj, 2).unwrap();
        assert!(p01 > 0.0 && p01 < 1.0);
        // moving the populated pair to different slots changes the input layout
        assert_ne!(p01, p12);
    }

    #[test]
    fn out_of_range_class_is_rejected() {
        let model = tiny_model(2);
        let z = vec![0.0; 4];
        assert!(model.discriminate((0, 1), &z, &z, 99).is_err());
    }

    #[test]
    fn ensemble_predict_is_a_distribution() {
        let model = tiny_model(3);
        let p = model.ensemble_predict(&[0.1, 0.2, 0.3]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn single_member_prediction_is_its_softmax() {
        let model = tiny_model(1);
        let x = [0.1, -0.4, 0.9];
        let g = model.encode(0, &x);
        let expect = softmax(&model.classify(0, &g.mean));
        let got = model.ensemble_predict(&x);
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_member_prediction_is_elementwise_mean() {
        let model = tiny_model(2);
        let x = [0.1, -0.4, 0.9];
        let p = model.ensemble_predict(&x);
        let p0 = softmax(&model.classify(0, &model.encode(0, &x).mean));
        let p1 = softmax(&model.classify(1, &model.encode(1, &x).mean));
        for i in 0..3 {
            assert!((p[i] - 0.5 * (p0[i] + p1[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_members_predict_like_one() {
        let mut model = tiny_model(2);
        let suffixes = [
            "trunk.fc1.w",
            "trunk.fc1.b",
            "trunk.fc2.w",
            "trunk.fc2.b",
            "mean.w",
            "mean.b",
            "scale.w",
            "scale.b",
            "cls.w",
            "cls.b",
        ];
        for suffix in suffixes {
            let src = model.params.get(&format!("m0.{suffix}")).clone();
            *model.params.get_mut(&format!("m1.{suffix}")) = src;
        }
        let x = [0.7, 0.0, -0.3];
        let p = model.ensemble_predict(&x);
        let p0 = softmax(&model.classify(0, &model.encode(0, &x).mean));
        for (a, b) in p.iter().zip(&p0) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
