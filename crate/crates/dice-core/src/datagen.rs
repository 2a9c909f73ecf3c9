//! Synthetic classification tasks with controllable spurious correlations.
//!
//! Inputs are `[core || nuisance]`: the core block is a Gaussian cluster
//! around a class mean, the nuisance block is a class-independent channel
//! whose coordinates are correlated with strength `nuisance_rho` through a
//! shared factor. Every member sees the identical nuisance coordinates,
//! which is what lets independently trained members latch onto the same
//! class-useless channel and err on the same inputs.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpuriousTaskConfig {
    pub classes: usize,
    pub core_dim: usize,
    pub nuisance_dim: usize,
    /// Correlation of the nuisance coordinates through the shared factor.
    pub nuisance_rho: f64,
    /// Distance of class means from the origin in the core block.
    pub core_separation: f64,
    /// Core cluster standard deviation.
    pub core_noise: f64,
    /// Nuisance channel standard deviation.
    pub nuisance_scale: f64,
    /// Probability of replacing a label with a uniformly different one.
    pub label_noise: f64,
    pub count: usize,
    pub seed: u64,
}

impl SpuriousTaskConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.classes < 2 || self.core_dim < 1 || self.count == 0 {
            return Err("need classes >= 2, core_dim >= 1, count > 0".into());
        }
        if !(0.0..=1.0).contains(&self.nuisance_rho) {
            return Err("nuisance_rho must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err("label_noise must be in [0, 1]".into());
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.core_dim + self.nuisance_dim
    }
}

/// What generated a dataset: enough to recompute class geometry, the
/// Bayes-optimal ceiling, and which coordinates are nuisance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerativeRecord {
    pub config: SpuriousTaskConfig,
    /// K rows of `core_dim` class-mean coordinates.
    pub class_means: Vec<Vec<f64>>,
    /// True per coordinate of the full input that holds nuisance.
    pub nuisance_mask: Vec<bool>,
}

impl GenerativeRecord {
    /// Bayes-optimal accuracy by quadrature; only defined for 2-d cores.
    pub fn bayes_accuracy(&self, grid: usize) -> Option<f64> {
        if self.config.core_dim != 2 {
            return None;
        }
        let means: Vec<[f64; 2]> =
            self.class_means.iter().map(|m| [m[0], m[1]]).collect();
        Some(crate::oracle::bayes_accuracy_2d(&means, self.config.core_noise, grid))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, core_dim + nuisance_dim]` inputs.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.dims2().1
    }

    pub fn input_row(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }
}

/// Class means sit on a circle (line for 1-d cores) of radius
/// `core_separation`, rotated by a seeded phase.
fn class_means(cfg: &SpuriousTaskConfig, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let k = cfg.classes;
    if cfg.core_dim == 1 {
        return (0..k)
            .map(|y| vec![cfg.core_separation * (y as f64 - (k - 1) as f64 / 2.0)])
            .collect();
    }
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (0..k)
        .map(|y| {
            let theta = phase + std::f64::consts::TAU * y as f64 / k as f64;
            let mut m = vec![0.0; cfg.core_dim];
            m[0] = cfg.core_separation * theta.cos();
            m[1] = cfg.core_separation * theta.sin();
            m
        })
        .collect()
}

fn generate_with_means(
    cfg: &SpuriousTaskConfig,
    means: &[Vec<f64>],
    rng: &mut impl Rng,
) -> Dataset {
    let dim = cfg.input_dim();
    let mut values = Vec::with_capacity(cfg.count * dim);
    let mut labels = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let y = rng.gen_range(0..cfg.classes);
        for c in 0..cfg.core_dim {
            let eps: f64 = rng.sample(StandardNormal);
            values.push(means[y][c] + cfg.core_noise * eps);
        }
        let shared: f64 = rng.sample(StandardNormal);
        let (a, b) = (cfg.nuisance_rho.sqrt(), (1.0 - cfg.nuisance_rho).sqrt());
        for _ in 0..cfg.nuisance_dim {
            let own: f64 = rng.sample(StandardNormal);
            values.push(cfg.nuisance_scale * (a * shared + b * own));
        }
        let observed = if cfg.label_noise > 0.0 && rng.gen::<f64>() < cfg.label_noise {
            let mut other = rng.gen_range(0..cfg.classes - 1);
            if other >= y {
                other += 1;
            }
            other
        } else {
            y
        };
        labels.push(observed);
    }
    Dataset { inputs: Tensor::matrix(cfg.count, dim, values), labels, classes: cfg.classes }
}

/// Generate the task and its generative record.
pub fn make_spurious_clusters(cfg: &SpuriousTaskConfig) -> (Dataset, GenerativeRecord) {
    cfg.validate().expect("invalid task config");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = class_means(cfg, &mut rng);
    let data = generate_with_means(cfg, &means, &mut rng);
    let mut mask = vec![false; cfg.input_dim()];
    for m in mask.iter_mut().skip(cfg.core_dim) {
        *m = true;
    }
    (data, GenerativeRecord { config: cfg.clone(), class_means: means, nuisance_mask: mask })
}

/// Same dimensionality and nuisance process with every class mean translated
/// by `shift` along a seeded fixed direction. `shift = 0` reproduces the
/// in-distribution generator (fresh draws from a shifted-task stream).
pub fn make_ood_shift(record: &GenerativeRecord, shift: f64, count: usize) -> Dataset {
    let cfg = &record.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00d5_1ee7);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut dir = vec![0.0; cfg.core_dim];
    if cfg.core_dim == 1 {
        dir[0] = 1.0;
    } else {
        dir[0] = theta.cos();
        dir[1] = theta.sin();
    }
    let means: Vec<Vec<f64>> = record
        .class_means
        .iter()
        .map(|m| m.iter().zip(&dir).map(|(a, d)| a + shift * d).collect())
        .collect();
    let shifted = SpuriousTaskConfig { count, ..cfg.clone() };
    generate_with_means(&shifted, &means, &mut rng)
}

/// Disjoint, exhaustive, seed-deterministic split with `frac` of the rows in
/// the first part.
pub fn split_train_val(data: &Dataset, frac: f64, seed: u64) -> (Dataset, Dataset) {
    assert!((0.0..=1.0).contains(&frac), "frac in [0,1]");
    let n = data.len();
    let dim = data.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = crate::rng::shuffled_indices(&mut rng, n);
    let cut = (frac * n as f64).round() as usize;
    let take = |ids: &[usize]| {
        let mut values = Vec::with_capacity(ids.len() * dim);
        let mut labels = Vec::with_capacity(ids.len());
        for &i in ids {
            values.extend_from_slice(data.input_row(i));
            labels.push(data.labels[i]);
        }
        Dataset {
            inputs: Tensor::matrix(ids.len(), dim, values),
            labels,
            classes: data.classes,
        }
    };
    (take(&idx[..cut]), take(&idx[cut..]))
}

// ── Fixed-precision dataset files ───────────────────────────────────────

const MAGIC: &[u8; 8] = b"ENSDATA1";

/// Write header (dims, classes, count, seed, nuisance mask) plus the
/// little-endian f64 matrix and labels.
pub fn write_dataset(
    path: &Path,
    data: &Dataset,
    record: &GenerativeRecord,
) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(data.input_dim() as u32).to_le_bytes())?;
    f.write_all(&(data.classes as u32).to_le_bytes())?;
    f.write_all(&(data.len() as u64).to_le_bytes())?;
    f.write_all(&record.config.seed.to_le_bytes())?;
    let mask: Vec<u8> = record.nuisance_mask.iter().map(|&b| b as u8).collect();
    f.write_all(&mask)?;
    for v in data.inputs.values() {
        f.write_all(&v.to_le_bytes())?;
    }
    for &y in &data.labels {
        f.write_all(&(y as u32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> std::io::Result<(Dataset, Vec<bool>, u64)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a dataset file"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    f.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    f.read_exact(&mut b4)?;
    let classes = u32::from_le_bytes(b4) as usize;
    f.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    f.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    let mut mask_bytes = vec![0u8; dim];
    f.read_exact(&mut mask_bytes)?;
    let mask = mask_bytes.iter().map(|&b| b != 0).collect();
    let mut values = vec![0.0f64; n * dim];
    for v in values.iter_mut() {
        f.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    let mut labels = vec![0usize; n];
    for y in labels.iter_mut() {
        f.read_exact(&mut b4)?;
        *y = u32::from_le_bytes(b4) as usize;
    }
    Ok((Dataset { inputs: Tensor::matrix(n, dim, values), labels, classes }, mask, seed))
}
