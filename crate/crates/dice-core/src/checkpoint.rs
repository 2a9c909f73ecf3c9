//! Model checkpoints: a flat named-parameter archive with a versioned
//! header. Layout: magic+version, a JSON model-config blob, then for each
//! parameter (sorted by name) the name, the shape, and the raw
//! little-endian f64 values.

use std::io::{Read, Write};
use std::path::Path;

use crate::model::{EnsembleModel, ModelConfig};
use crate::optim::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ENSCKPT1";

pub fn save(path: &Path, model: &EnsembleModel) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    let config = serde_json::to_vec(&model.config).expect("config serializes");
    f.write_all(&(config.len() as u32).to_le_bytes())?;
    f.write_all(&config)?;
    f.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for (name, entry) in model.params.iter() {
        let bytes = name.as_bytes();
        f.write_all(&(bytes.len() as u32).to_le_bytes())?;
        f.write_all(bytes)?;
        let shape = entry.value.shape();
        f.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &dim in shape {
            f.write_all(&(dim as u64).to_le_bytes())?;
        }
        for v in entry.value.values() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> std::io::Result<EnsembleModel> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    f.read_exact(&mut b4)?;
    let config_len = u32::from_le_bytes(b4) as usize;
    let mut config_bytes = vec![0u8; config_len];
    f.read_exact(&mut config_bytes)?;
    let config: ModelConfig =
        serde_json::from_slice(&config_bytes).map_err(|e| bad(&format!("bad config: {e}")))?;
    f.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        f.read_exact(&mut b4)?;
        let name_len = u32::from_le_bytes(b4) as usize;
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("bad parameter name"))?;
        f.read_exact(&mut b4)?;
        let rank = u32::from_le_bytes(b4) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            f.read_exact(&mut b8)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = vec![0.0f64; numel];
        for v in values.iter_mut() {
            f.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        params.insert(&name, Tensor::new(shape, values));
    }
    Ok(EnsembleModel { config, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Averaging, DiscConfig, Structure};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_preserves_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = EnsembleModel::new(
            ModelConfig {
                members: 2,
                input_dim: 3,
                trunk_hidden: 4,
                feature_dim: 2,
                classes: 3,
                structure: Structure::SharedTrunk,
                class_rows: 3,
                disc: DiscConfig { hidden: vec![4, 4, 4], embed_width: 2, conditional: true },
                averaging: Averaging::Probabilities,
            },
            &mut rng,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &model).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.config, model.config);
        for name in model.params.names() {
            assert_eq!(back.params.get(name), model.params.get(name), "{name}");
        }
        // byte-determinism of the archive itself
        let path2 = dir.path().join("model2.ckpt");
        save(&path2, &model).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load(&path).is_err());
    }
}
