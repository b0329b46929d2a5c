use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, Normalization, OptimizerState};
use crate::energy::Parameters;
use crate::numerics::Scalar;
use crate::topology::NetworkTopology;
use crate::{Error, Result};

const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume training after `epoch` completed epochs.
///
/// Values are stored in 64-bit form whatever the run precision; widening `f32` is
/// exact, so both precisions round-trip bit for bit. The random state is the pair
/// `(seed, epoch)` that keys the next epoch's stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub precision: String,
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    pub topology: NetworkTopology,
    pub params: Parameters<f64>,
    pub optimizer: OptimizerState<f64>,
    pub normalization: Option<Normalization>,
}

/// Hex SHA-256 of a configuration document.
pub fn hash_config(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        model: &Model<T>,
        optimizer: &OptimizerState<T>,
        epoch: usize,
        seed: u64,
        config_hash: String,
        normalization: Option<Normalization>,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            precision: T::NAME.to_string(),
            epoch,
            seed,
            config_hash,
            topology: model.topology.clone(),
            params: model.params.cast(),
            optimizer: optimizer.cast(),
            normalization,
        }
    }

    /// Model and optimizer in precision `T`, which must match the saved precision.
    pub fn restore<T: Scalar>(&self) -> Result<(Model<T>, OptimizerState<T>)> {
        if self.precision != T::NAME {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written in {} but this run uses {}",
                self.precision,
                T::NAME
            )));
        }
        let model = Model::new(self.topology.clone(), self.params.cast())?;
        Ok((model, self.optimizer.cast()))
    }

    /// Fails unless the checkpoint was made for `topology`.
    pub fn check_topology(&self, topology: &NetworkTopology) -> Result<()> {
        if &self.topology != topology {
            let (a, b) = (self.topology.num_classes(), topology.num_classes());
            let detail = if a != b {
                format!("output has {a} classes in the checkpoint, {b} in the config")
            } else {
                "states or edges differ".to_string()
            };
            return Err(Error::Checkpoint(format!(
                "checkpoint topology does not match the configured one: {detail}"
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serializing: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        let ck: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format version {}",
                path.display(),
                ck.format_version
            )));
        }
        Ok(ck)
    }
}
