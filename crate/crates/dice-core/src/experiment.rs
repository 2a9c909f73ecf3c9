//! Reproducible experiment runs: versioned spec files, run directories,
//! sweeps and report emission.
//!
//! A run directory holds everything needed for exact replay — the fully
//! resolved spec (every default materialized, one seed), the metric
//! JSON-lines stream, the final summary and the checkpoint. Replaying the
//! resolved spec on the same platform reproduces the metrics byte for byte;
//! nothing time- or host-dependent is written to the compared files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{make_ood_shift, make_spurious_clusters, split_train_val, SpuriousTaskConfig};
use crate::metrics::{
    dice_times_w_confidences, max_softmax_confidences, metrics_report, ood_scores,
    two_fold_temperature_scaling, MetricsReport,
};
use crate::schedule::{Axis, Interp, Schedule};
use crate::training::{desk_config, paper_config, train_run, TrainConfig, TrainError, Variant};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("malformed spec: {0}")]
    BadSpec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("training aborted: {0}")]
    Train(#[from] TrainError),
}

pub const SPEC_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Small, fast defaults; the default preset.
    Desk,
    /// Published full-scale recipe for the 10-class setting.
    Paper10,
    /// Published full-scale recipe for the 100-class setting.
    Paper100,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Only "spurious-clusters" is defined.
    pub kind: String,
    pub classes: usize,
    pub core_dim: usize,
    pub nuisance_dim: usize,
    pub nuisance_rho: f64,
    pub core_separation: f64,
    pub core_noise: f64,
    pub nuisance_scale: f64,
    pub label_noise: f64,
    pub count: usize,
    pub train_frac: f64,
    /// Fixed dataset seed; when absent each run draws its dataset from the
    /// run seed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

impl DatasetSpec {
    pub fn task_config(&self, run_seed: u64) -> SpuriousTaskConfig {
        SpuriousTaskConfig {
            classes: self.classes,
            core_dim: self.core_dim,
            nuisance_dim: self.nuisance_dim,
            nuisance_rho: self.nuisance_rho,
            core_separation: self.core_separation,
            core_noise: self.core_noise,
            nuisance_scale: self.nuisance_scale,
            label_noise: self.label_noise,
            count: self.count,
            seed: self.seed.unwrap_or(run_seed),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kind != "spurious-clusters" {
            return Err(format!("unknown dataset kind `{}`", self.kind));
        }
        if !(0.0..=1.0).contains(&self.train_frac) {
            return Err("train_frac must be in [0,1]".into());
        }
        self.task_config(0).validate()
    }
}

/// Partial training overrides on top of the preset. Every field is optional;
/// unknown keys in the file are rejected.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub variant: Option<Variant>,
    pub members: Option<usize>,
    pub trunk_hidden: Option<usize>,
    pub feature_dim: Option<usize>,
    pub structure: Option<crate::model::Structure>,
    pub averaging: Option<crate::model::Averaging>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub disc_lr: Option<f64>,
    pub disc_decay: Option<f64>,
    pub disc_hidden: Option<Vec<usize>>,
    pub disc_embed_width: Option<usize>,
    /// Target redundancy coefficient; replaces the end value of the preset's
    /// ramp (use `delta_schedule` for full control).
    pub delta: Option<f64>,
    pub delta_schedule: Option<Schedule>,
    pub log_beta: Option<Schedule>,
    pub lr: Option<Schedule>,
    pub cov_ramp: Option<Schedule>,
    pub cr_sampling: Option<crate::training::CrSampling>,
    pub tau: Option<f64>,
    pub num_s: Option<usize>,
    pub neg_per_pos: Option<usize>,
    pub nstep_d: Option<usize>,
    pub include_rhs: Option<bool>,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSpec {
    pub shift: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    /// Score the OOD task with the discriminator-scaled confidence too.
    #[serde(default)]
    pub dice_w_scoring: bool,
}

/// The experiment spec as written by a human: preset plus overrides.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub version: u32,
    pub name: String,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ood: Option<OodSpec>,
    #[serde(default)]
    pub report: ReportSpec,
}

fn default_preset() -> Preset {
    Preset::Desk
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| ExperimentError::BadSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.version != SPEC_VERSION {
            return Err(ExperimentError::BadSpec(format!(
                "unsupported spec version {} (expected {})",
                self.version, SPEC_VERSION
            )));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_alphanumeric() || c == '-' || c == '_') {
            return Err(ExperimentError::BadSpec(
                "name must be nonempty alphanumeric/dash/underscore".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::BadSpec("need at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(ExperimentError::BadSpec("seeds must be distinct".into()));
        }
        self.dataset.validate().map_err(ExperimentError::BadSpec)?;
        // full train-config validation happens after resolution
        self.resolve_train(self.seeds[0]).map_err(ExperimentError::BadSpec)?;
        Ok(())
    }

    /// Materialize the preset + overrides into a complete training config.
    pub fn resolve_train(&self, seed: u64) -> Result<TrainConfig, String> {
        let o = &self.train;
        let variant = o.variant.unwrap_or(Variant::Dice);
        let mut cfg = match self.preset {
            Preset::Desk => desk_config(variant),
            Preset::Paper10 => paper_config(variant, 10),
            Preset::Paper100 => paper_config(variant, 100),
        };
        cfg.seed = seed;
        cfg.classes = self.dataset.classes;
        cfg.input_dim = self.dataset.core_dim + self.dataset.nuisance_dim;
        if let Some(v) = o.members {
            cfg.members = v;
        }
        if let Some(v) = o.trunk_hidden {
            cfg.trunk_hidden = v;
        }
        if let Some(v) = o.feature_dim {
            cfg.feature_dim = v;
        }
        if let Some(v) = o.structure {
            cfg.structure = v;
        }
        if let Some(v) = o.averaging {
            cfg.averaging = v;
        }
        if let Some(v) = o.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = o.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = o.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = o.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = o.disc_lr {
            cfg.disc_lr = v;
        }
        if let Some(v) = o.disc_decay {
            cfg.disc_decay = v;
        }
        if let Some(v) = &o.disc_hidden {
            cfg.disc_hidden = v.clone();
        }
        if let Some(v) = o.disc_embed_width {
            cfg.disc_embed_width = v;
        }
        if let Some(v) = &o.log_beta {
            cfg.log_beta = v.clone();
        }
        if let Some(v) = &o.lr {
            cfg.lr = v.clone();
        }
        if let Some(v) = &o.cov_ramp {
            cfg.cov_ramp = v.clone();
        }
        if let Some(v) = o.cr_sampling {
            cfg.cr_sampling = v;
        }
        if let Some(v) = o.tau {
            cfg.cr.tau = v;
        }
        if let Some(v) = o.num_s {
            cfg.cr.num_s = v;
        }
        if let Some(v) = o.neg_per_pos {
            cfg.cr.neg_per_pos = v;
        }
        if let Some(v) = o.nstep_d {
            cfg.cr.nstep_d = v;
        }
        if let Some(v) = o.include_rhs {
            cfg.cr.include_rhs = v;
        }
        if let Some(s) = &o.delta_schedule {
            cfg.delta = Some(s.clone());
        } else if let Some(target) = o.delta {
            // keep the preset ramp shape, swap its end value
            let ramp_end = cfg
                .delta
                .as_ref()
                .and_then(|s| s.anchors.last().map(|a| a.0))
                .unwrap_or(80.0);
            cfg.delta = Some(Schedule::new(
                vec![(0.0, 0.0), (ramp_end, target)],
                Interp::LinearRamp,
                Axis::Steps,
            ));
        }
        if !variant.has_redundancy() {
            cfg.delta = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The spec with exactly one seed and every default materialized.
    pub fn resolved_for_seed(&self, seed: u64) -> Result<ResolvedSpec, String> {
        Ok(ResolvedSpec {
            version: self.version,
            name: self.name.clone(),
            seed,
            dataset: self.dataset.clone(),
            train: self.resolve_train(seed)?,
            ood: self.ood,
            report: self.report,
        })
    }
}

/// Fully materialized single-run spec, as written into the run directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedSpec {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ood: Option<OodSpec>,
    #[serde(default)]
    pub report: ReportSpec,
}

impl ResolvedSpec {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| ExperimentError::BadSpec(e.to_string()))
    }
}

/// Run-directory file names.
pub const SPEC_FILE: &str = "spec.resolved.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const DATASET_FILE: &str = "dataset.bin";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub variant: String,
    /// Final-value redundancy coefficient (0 for bottleneck-only variants).
    pub delta: f64,
    pub final_val: MetricsReport,
}

/// Execute one resolved spec into `dir`.
pub fn execute_run(resolved: &ResolvedSpec, dir: &Path) -> Result<RunSummary, ExperimentError> {
    fs::create_dir_all(dir)?;
    let task = resolved.dataset.task_config(resolved.seed);
    let (data, record) = make_spurious_clusters(&task);
    let (train, val) = split_train_val(&data, resolved.dataset.train_frac, resolved.seed);
    crate::datagen::write_dataset(&dir.join(DATASET_FILE), &data, &record)?;

    let result = train_run(&resolved.train, &train, &val)?;

    // metrics.jsonl: step records then epoch records, in execution order
    let mut jsonl = std::io::BufWriter::new(fs::File::create(dir.join(METRICS_FILE))?);
    let mut epoch_iter = result.epochs.iter().peekable();
    for step in &result.steps {
        writeln!(
            jsonl,
            "{}",
            serde_json::json!({"kind": "step", "record": step})
        )?;
        while let Some(e) = epoch_iter.peek() {
            if e.step == step.step + 1 {
                writeln!(jsonl, "{}", serde_json::json!({"kind": "epoch", "record": e}))?;
                epoch_iter.next();
            } else {
                break;
            }
        }
    }
    for e in epoch_iter {
        writeln!(jsonl, "{}", serde_json::json!({"kind": "epoch", "record": e}))?;
    }
    drop(jsonl);

    // final summary: last-epoch metrics + calibration + optional OOD blocks
    let pm = crate::training::evaluate(&result.model, &val);
    let mut summary = metrics_report(&pm);
    if val.len() >= 8 {
        if let Ok(cal) = two_fold_temperature_scaling(
            &pm.ensemble_log_scores(),
            &val.labels,
            resolved.seed,
        ) {
            summary.calibration = Some(cal);
        }
    }
    if let Some(ood) = resolved.ood {
        let ood_data = make_ood_shift(&record, ood.shift, ood.count);
        let in_scores = max_softmax_confidences(&result.model, &val.inputs);
        let out_scores = max_softmax_confidences(&result.model, &ood_data.inputs);
        summary.ood_max_softmax = Some(ood_scores(&in_scores, &out_scores));
        if resolved.report.dice_w_scoring && resolved.train.variant == Variant::Dice {
            let in_w = dice_times_w_confidences(&result.model, &val.inputs)
                .map_err(ExperimentError::BadSpec)?;
            let out_w = dice_times_w_confidences(&result.model, &ood_data.inputs)
                .map_err(ExperimentError::BadSpec)?;
            summary.ood_dice_w = Some(ood_scores(&in_w, &out_w));
        }
    }
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(dir.join(SUMMARY_FILE), summary_json)?;

    crate::checkpoint::save(&dir.join(CHECKPOINT_FILE), &result.model)?;
    let spec_toml = toml::to_string_pretty(resolved)
        .map_err(|e| ExperimentError::BadSpec(e.to_string()))?;
    fs::write(dir.join(SPEC_FILE), spec_toml)?;

    let delta = resolved
        .train
        .delta
        .as_ref()
        .and_then(|s| s.anchors.last().map(|a| a.1))
        .unwrap_or(0.0);
    Ok(RunSummary {
        name: resolved.name.clone(),
        seed: resolved.seed,
        variant: resolved.train.variant.name().to_string(),
        delta,
        final_val: summary,
    })
}

/// Run a spec across its seed list (parallel across runs, each run
/// single-threaded). Returns one summary per seed, in seed order.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out_root: &Path,
) -> Result<Vec<RunSummary>, ExperimentError> {
    spec.validate()?;
    let jobs: Vec<(ResolvedSpec, PathBuf)> = spec
        .seeds
        .iter()
        .map(|&seed| {
            let resolved = spec.resolved_for_seed(seed).map_err(ExperimentError::BadSpec)?;
            let dir = out_root.join(format!("{}-s{}", spec.name, seed));
            Ok((resolved, dir))
        })
        .collect::<Result<_, ExperimentError>>()?;
    let results: Vec<Result<RunSummary, String>> = crate::parallel::map_vec(jobs, |(r, dir)| {
        execute_run(&r, &dir).map_err(|e| e.to_string())
    });
    results
        .into_iter()
        .collect::<Result<Vec<_>, String>>()
        .map_err(ExperimentError::BadSpec)
}

/// Replay a run directory next to itself and compare the replayable outputs
/// byte for byte. Returns the list of differing files (empty = exact).
pub fn replay_check(run_dir: &Path) -> Result<Vec<String>, ExperimentError> {
    let resolved = ResolvedSpec::load(&run_dir.join(SPEC_FILE))?;
    let tmp = tempdir_in(run_dir.parent().unwrap_or(Path::new(".")))?;
    execute_run(&resolved, &tmp)?;
    let mut diffs = Vec::new();
    for file in [SPEC_FILE, METRICS_FILE, SUMMARY_FILE, CHECKPOINT_FILE, DATASET_FILE] {
        let a = fs::read(run_dir.join(file))?;
        let b = fs::read(tmp.join(file))?;
        if a != b {
            diffs.push(file.to_string());
        }
    }
    fs::remove_dir_all(&tmp)?;
    Ok(diffs)
}

fn tempdir_in(parent: &Path) -> std::io::Result<PathBuf> {
    for i in 0..10_000 {
        let candidate = parent.join(format!(".replay-{i}"));
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    Err(std::io::Error::other("could not create replay directory"))
}

// ── Grid sweeps ─────────────────────────────────────────────────────────

/// One `path=v1,v2,...` axis of a sweep grid.
#[derive(Clone, Debug)]
pub struct GridAxis {
    pub path: String,
    pub values: Vec<String>,
}

pub fn parse_grid_axis(text: &str) -> Result<GridAxis, String> {
    let (path, values) = text
        .split_once('=')
        .ok_or_else(|| format!("grid axis `{text}` is not path=v1,v2,..."))?;
    let values: Vec<String> = values.split(',').map(|s| s.trim().to_string()).collect();
    if values.is_empty() || values.iter().any(|v| v.is_empty()) {
        return Err(format!("grid axis `{text}` has empty values"));
    }
    Ok(GridAxis { path: path.trim().to_string(), values })
}

/// Apply one override addressed by a dotted path. Unknown paths are rejected.
pub fn apply_override(spec: &mut ExperimentSpec, path: &str, value: &str) -> Result<(), String> {
    let bad_num = |e: std::num::ParseFloatError| format!("`{value}` for {path}: {e}");
    let bad_int = |e: std::num::ParseIntError| format!("`{value}` for {path}: {e}");
    match path {
        "train.variant" => {
            spec.train.variant = Some(match value {
                "ind" => Variant::Ind,
                "ib" => Variant::Ib,
                "ceb" => Variant::Ceb,
                "ibr" => Variant::Ibr,
                "cebr" => Variant::Cebr,
                "dice" => Variant::Dice,
                other => return Err(format!("unknown variant `{other}`")),
            })
        }
        "train.delta" => spec.train.delta = Some(value.parse().map_err(bad_num)?),
        "train.members" => spec.train.members = Some(value.parse().map_err(bad_int)?),
        "train.epochs" => spec.train.epochs = Some(value.parse().map_err(bad_int)?),
        "train.batch_size" => spec.train.batch_size = Some(value.parse().map_err(bad_int)?),
        "train.feature_dim" => spec.train.feature_dim = Some(value.parse().map_err(bad_int)?),
        "train.num_s" => spec.train.num_s = Some(value.parse().map_err(bad_int)?),
        "train.nstep_d" => spec.train.nstep_d = Some(value.parse().map_err(bad_int)?),
        "dataset.nuisance_rho" => spec.dataset.nuisance_rho = value.parse().map_err(bad_num)?,
        "dataset.count" => spec.dataset.count = value.parse().map_err(bad_int)?,
        "dataset.label_noise" => spec.dataset.label_noise = value.parse().map_err(bad_num)?,
        other => return Err(format!("unknown override path `{other}`")),
    }
    Ok(())
}

/// Expand a grid into named spec instances: the cross product of all axes,
/// in axis-major order.
pub fn expand_grid(
    base: &ExperimentSpec,
    axes: &[GridAxis],
) -> Result<Vec<ExperimentSpec>, String> {
    let mut specs = vec![base.clone()];
    for axis in axes {
        let mut next = Vec::with_capacity(specs.len() * axis.values.len());
        for spec in &specs {
            for value in &axis.values {
                let mut s = spec.clone();
                apply_override(&mut s, &axis.path, value)?;
                let tag = format!(
                    "{}-{}",
                    axis.path.rsplit('.').next().unwrap_or(&axis.path),
                    value.replace(['.', '-'], "_")
                );
                s.name = format!("{}-{}", s.name, tag);
                next.push(s);
            }
        }
        specs = next;
    }
    Ok(specs)
}

// ── Report emission ─────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub spec: ResolvedSpec,
    pub summary: MetricsReport,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun, ExperimentError> {
    let spec = ResolvedSpec::load(&dir.join(SPEC_FILE))?;
    let text = fs::read_to_string(dir.join(SUMMARY_FILE))?;
    let summary =
        serde_json::from_str(&text).map_err(|e| ExperimentError::BadSpec(e.to_string()))?;
    Ok(LoadedRun { dir: dir.to_path_buf(), spec, summary })
}

fn fmt_cell(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    // infinities sort fine; NaN entries are dropped upstream
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else if xs[n / 2 - 1].is_infinite() && xs[n / 2].is_infinite() {
        f64::INFINITY
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Group runs by (variant, delta), median over seeds. Emits:
///   report.csv   — metric rows x group columns (scoring-rule table layout)
///   tradeoff.csv — one diversity/accuracy point per group
///   dynamics.csv — per-run per-epoch validation series
pub fn write_reports(runs: &[LoadedRun], out: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(out)?;
    let mut groups: BTreeMap<String, Vec<&LoadedRun>> = BTreeMap::new();
    for run in runs {
        let delta = run
            .spec
            .train
            .delta
            .as_ref()
            .and_then(|s| s.anchors.last().map(|a| a.1))
            .unwrap_or(0.0);
        groups
            .entry(format!("{}@{:+.3}", run.spec.train.variant.name(), delta))
            .or_default()
            .push(run);
    }

    let metric_rows: Vec<(&str, Box<dyn Fn(&MetricsReport) -> Option<f64>>)> = vec![
        ("accuracy", Box::new(|m: &MetricsReport| Some(m.ensemble_accuracy))),
        ("mean_individual_accuracy", Box::new(|m| Some(m.mean_individual_accuracy))),
        ("ratio_error", Box::new(|m| Some(m.ratio_error))),
        ("q_statistic", Box::new(|m| Some(m.q_statistic))),
        ("agreement", Box::new(|m| Some(m.agreement))),
        ("kohavi_wolpert", Box::new(|m| Some(m.kohavi_wolpert))),
        ("entropy_diversity", Box::new(|m| Some(m.entropy_diversity))),
        ("nll", Box::new(|m| Some(m.uncertainty.nll))),
        ("brier", Box::new(|m| Some(m.uncertainty.brier))),
        ("ece", Box::new(|m| Some(m.uncertainty.ece))),
        ("tace", Box::new(|m| Some(m.uncertainty.tace))),
        ("temperature", Box::new(|m| m.calibration.map(|c| c.temperature))),
        ("nll_after_ts", Box::new(|m| m.calibration.map(|c| c.after.nll))),
        ("ece_after_ts", Box::new(|m| m.calibration.map(|c| c.after.ece))),
        ("auroc_max_softmax", Box::new(|m| m.ood_max_softmax.map(|o| o.auroc))),
        ("auroc_dice_w", Box::new(|m| m.ood_dice_w.map(|o| o.auroc))),
    ];

    let mut report = String::from("metric");
    for g in groups.keys() {
        report.push(',');
        report.push_str(g);
    }
    report.push('\n');
    for (label, get) in &metric_rows {
        report.push_str(label);
        for members in groups.values() {
            let vals: Vec<f64> =
                members.iter().filter_map(|r| get(&r.summary)).collect();
            report.push(',');
            if vals.is_empty() {
                // missing metric: empty cell, never fabricated
            } else {
                report.push_str(&fmt_cell(median(vals)));
            }
        }
        report.push('\n');
    }
    fs::write(out.join("report.csv"), report)?;

    let mut tradeoff = String::from("group,variant,delta,mean_individual_accuracy,ratio_error\n");
    for (g, members) in &groups {
        let ind = median(members.iter().map(|r| r.summary.mean_individual_accuracy).collect());
        let re = median(members.iter().map(|r| r.summary.ratio_error).collect());
        let variant = members[0].spec.train.variant.name();
        let delta = members[0]
            .spec
            .train
            .delta
            .as_ref()
            .and_then(|s| s.anchors.last().map(|a| a.1))
            .unwrap_or(0.0);
        tradeoff.push_str(&format!(
            "{g},{variant},{delta},{},{}\n",
            fmt_cell(ind),
            fmt_cell(re)
        ));
    }
    fs::write(out.join("tradeoff.csv"), tradeoff)?;

    let mut dynamics =
        String::from("run,seed,epoch,step,accuracy,ratio_error,nll,ece\n");
    for run in runs {
        let text = fs::read_to_string(run.dir.join(METRICS_FILE))?;
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| ExperimentError::BadSpec(e.to_string()))?;
            if v["kind"] == "epoch" {
                let rec: crate::training::EpochReport =
                    serde_json::from_value(v["record"].clone())
                        .map_err(|e| ExperimentError::BadSpec(e.to_string()))?;
                dynamics.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    run.spec.name,
                    run.spec.seed,
                    rec.epoch,
                    rec.step,
                    fmt_cell(rec.val.ensemble_accuracy),
                    fmt_cell(rec.val.ratio_error),
                    fmt_cell(rec.val.uncertainty.nll),
                    fmt_cell(rec.val.uncertainty.ece),
                ));
            }
        }
    }
    fs::write(out.join("dynamics.csv"), dynamics)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec {
            version: 1,
            name: "tiny".into(),
            preset: Preset::Desk,
            seeds: vec![1],
            dataset: DatasetSpec {
                kind: "spurious-clusters".into(),
                classes: 3,
                core_dim: 2,
                nuisance_dim: 2,
                nuisance_rho: 0.9,
                core_separation: 2.5,
                core_noise: 0.8,
                nuisance_scale: 2.0,
                label_noise: 0.0,
                count: 120,
                train_frac: 0.8,
                seed: None,
            },
            train: TrainOverrides {
                variant: Some(Variant::Dice),
                members: Some(2),
                trunk_hidden: Some(8),
                feature_dim: Some(4),
                epochs: Some(2),
                batch_size: Some(24),
                disc_hidden: Some(vec![8, 8, 6]),
                disc_embed_width: Some(4),
                ..TrainOverrides::default()
            },
            ood: Some(OodSpec { shift: 8.0, count: 60 }),
            report: ReportSpec { dice_w_scoring: true },
        }
    }

    #[test]
    fn spec_toml_roundtrip_and_unknown_key_rejection() {
        let spec = tiny_spec();
        let text = toml::to_string_pretty(&spec).unwrap();
        let back = ExperimentSpec::from_toml(&text).unwrap();
        assert_eq!(back.name, "tiny");
        // unknown keys fail fast
        let poisoned = format!("{text}\n[train2]\ndelta_cr = 0.2\n");
        assert!(ExperimentSpec::from_toml(&poisoned).is_err());
        let typo = text.replace("nuisance_rho", "nuisance_rh0");
        assert!(ExperimentSpec::from_toml(&typo).is_err());
    }

    #[test]
    fn version_and_seed_validation() {
        let mut spec = tiny_spec();
        spec.version = 9;
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec();
        spec.seeds = vec![3, 3];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn run_directory_contains_replayable_artifacts() {
        let spec = tiny_spec();
        let dir = tempfile::tempdir().unwrap();
        let summaries = run_experiment(&spec, dir.path()).unwrap();
        assert_eq!(summaries.len(), 1);
        let run_dir = dir.path().join("tiny-s1");
        for file in [SPEC_FILE, METRICS_FILE, SUMMARY_FILE, CHECKPOINT_FILE, DATASET_FILE] {
            assert!(run_dir.join(file).exists(), "{file} missing");
        }
        // replay is byte-identical
        let diffs = replay_check(&run_dir).unwrap();
        assert!(diffs.is_empty(), "replay differs: {diffs:?}");
        // summary has the OOD blocks the spec requested
        let loaded = load_run(&run_dir).unwrap();
        assert!(loaded.summary.ood_max_softmax.is_some());
        assert!(loaded.summary.ood_dice_w.is_some());
    }

    #[test]
    fn grid_expansion_counts_and_names() {
        let spec = tiny_spec();
        let axes = vec![
            parse_grid_axis("train.delta=0.0,0.1,0.2").unwrap(),
            parse_grid_axis("dataset.count=120,160").unwrap(),
        ];
        let specs = expand_grid(&spec, &axes).unwrap();
        assert_eq!(specs.len(), 6);
        let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        assert!(names.contains(&"tiny-delta-0_1-count-160"));
        // 1x1 grid stays a single spec
        let one = expand_grid(&spec, &[parse_grid_axis("train.delta=0.2").unwrap()]).unwrap();
        assert_eq!(one.len(), 1);
        // unknown path rejected
        assert!(expand_grid(&spec, &[parse_grid_axis("train.delta_cr=0.2").unwrap()]).is_err());
    }

    #[test]
    fn report_files_have_stable_schemas() {
        let mut spec = tiny_spec();
        spec.seeds = vec![1, 2];
        spec.report.dice_w_scoring = false;
        spec.ood = None;
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&spec, dir.path()).unwrap();
        let runs: Vec<LoadedRun> = [1u64, 2]
            .iter()
            .map(|s| load_run(&dir.path().join(format!("tiny-s{s}"))).unwrap())
            .collect();
        let out = dir.path().join("report");
        write_reports(&runs, &out).unwrap();
        let report = fs::read_to_string(out.join("report.csv")).unwrap();
        assert!(report.starts_with("metric,dice@+0.200\n"));
        assert!(report.contains("\nratio_error,"));
        // missing OOD metrics stay empty, never fabricated
        let auroc_line =
            report.lines().find(|l| l.starts_with("auroc_max_softmax")).unwrap();
        assert_eq!(auroc_line, "auroc_max_softmax,");
        let tradeoff = fs::read_to_string(out.join("tradeoff.csv")).unwrap();
        assert_eq!(tradeoff.lines().count(), 2); // header + one group
        let dynamics = fs::read_to_string(out.join("dynamics.csv")).unwrap();
        assert_eq!(dynamics.lines().count(), 1 + 2 * 2); // 2 runs x 2 epochs
    }

    #[test]
    fn median_handles_infinities() {
        assert_eq!(median(vec![1.0, f64::INFINITY, 2.0]), 2.0);
        assert!(median(vec![f64::INFINITY, f64::INFINITY, 1.0]).is_infinite());
    }
}
