//! Versioned binary checkpoints.
//!
//! Layout: an 8-byte magic, a little-endian u32 format version, a
//! length-prefixed JSON header (training config echo plus a tensor
//! manifest), then the raw little-endian f64 data of every tensor in
//! manifest order. Loads reject unknown magics and versions outright.

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelParams, TrainConfig};
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SMNDCKPT";
const VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    config: TrainConfig,
    tensors: Vec<(String, Vec<usize>)>,
}

pub fn save_checkpoint(params: &ModelParams, config: &TrainConfig, path: &Path) -> Result<()> {
    let named = params.named_tensors();
    let header = Header {
        config: config.clone(),
        tensors: named
            .iter()
            .map(|(name, t)| (name.clone(), t.shape().to_vec()))
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())?;
    file.write_all(&header_json)?;
    for (_, tensor) in &named {
        for v in tensor.data() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

/// Loads a checkpoint, returning the parameters and the training config
/// they were produced with.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, TrainConfig)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "not a checkpoint file (magic {:?})",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut version_bytes = [0u8; 4];
    file.read_exact(&mut version_bytes)?;
    let version = u32::from_le_bytes(version_bytes);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for (name, shape) in &header.tensors {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            file.read_exact(&mut buf)
                .map_err(|e| Error::Checkpoint(format!("truncated data for tensor {name}: {e}")))?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push(
            Tensor::from_vec(shape.clone(), data)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?,
        );
    }

    let mut params = ModelParams::init(&header.config.architecture(), 0)
        .map_err(|e| Error::Checkpoint(format!("architecture: {e}")))?;
    params
        .assign(&tensors)
        .map_err(|e| Error::Checkpoint(format!("tensor layout: {e}")))?;
    Ok((params, header.config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let config = TrainConfig::default();
        let params = ModelParams::init(&config.architecture(), 42).unwrap();
        save_checkpoint(&params, &config, &path).unwrap();
        let (loaded, loaded_config) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(loaded_config, config);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.bin");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("not a checkpoint"));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let config = TrainConfig::default();
        let params = ModelParams::init(&config.architecture(), 1).unwrap();
        save_checkpoint(&params, &config, &path).unwrap();
        // Bump the version field in place.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let config = TrainConfig::default();
        let params = ModelParams::init(&config.architecture(), 1).unwrap();
        save_checkpoint(&params, &config, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn gate_variant_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gate.bin");
        let config = TrainConfig {
            two_filter_glu: true,
            ..TrainConfig::default()
        };
        let params = ModelParams::init(&config.architecture(), 9).unwrap();
        save_checkpoint(&params, &config, &path).unwrap();
        let (loaded, _) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
    }
}
