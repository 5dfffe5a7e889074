//! Versioned JSON checkpoints: config header + named parameter arrays,
//! floats at 17 significant digits for a bit-exact round trip.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::param_specs;
use super::{PredictorConfig, PredictorModel};
use crate::error::{Error, Result};
use crate::jsonio::to_writer_g17;
use crate::tensor::Tensor;

const FORMAT: &str = "trajshap-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: PredictorConfig,
    params: BTreeMap<String, Tensor>,
}

pub fn save_checkpoint(model: &PredictorModel, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        version: VERSION,
        config: model.config().clone(),
        params: model.params().clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    to_writer_g17(&mut w, &file)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PredictorModel> {
    let reader = BufReader::new(File::open(path)?);
    let file: CheckpointFile = serde_json::from_reader(reader).map_err(|e| {
        Error::Checkpoint(format!(
            "{}: malformed checkpoint at line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    if file.format != FORMAT {
        return Err(Error::Checkpoint(format!("unexpected format marker {:?}", file.format)));
    }
    if file.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {VERSION})",
            file.version
        )));
    }
    file.config.validate().map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;

    // No partial loads: the parameter set must match the config exactly.
    let specs = param_specs(&file.config);
    if file.params.len() != specs.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count {} does not match config ({} expected)",
            file.params.len(),
            specs.len()
        )));
    }
    for (name, shape) in &specs {
        let tensor = file
            .params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if tensor.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, config wants {shape:?}",
                tensor.shape()
            )));
        }
        if !tensor.is_finite() {
            return Err(Error::Checkpoint(format!("parameter {name} contains non-finite values")));
        }
    }
    Ok(PredictorModel::from_parts(file.config, file.params))
}

/// Load and additionally require the stored config to equal `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &PredictorConfig) -> Result<PredictorModel> {
    let model = load_checkpoint(path)?;
    if model.config() != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint config mismatch: stored {:?}, expected {:?}",
            model.config(),
            expected
        )));
    }
    Ok(model)
}
