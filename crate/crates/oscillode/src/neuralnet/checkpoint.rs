//! Versioned JSON checkpoints: model parameters plus enough optimizer and
//! bookkeeping state to resume training.

use crate::error::{Error, Result};
use crate::neuralnet::mlp::Mlp;
use crate::neuralnet::optim::OptimizerState;
use crate::neuralnet::structured::{NetMode, StructuredNetSet};
use crate::problems::OscillatoryProblem;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "oscillode-ckpt-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub problem: String,
    pub mode: String,
    /// Layer widths of each net, in model order.
    pub widths: Vec<Vec<usize>>,
    /// Flat parameters of each net (row-major weights then biases, layer by
    /// layer), in model order.
    pub params: Vec<Vec<f64>>,
    pub epoch: usize,
    pub loss_train: f64,
    pub loss_test: f64,
    pub optimizer: Option<OptimizerState>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_model(
        model: &StructuredNetSet,
        epoch: usize,
        loss_train: f64,
        loss_test: f64,
        optimizer: Option<OptimizerState>,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            problem: model.problem.name().to_string(),
            mode: model.mode.name().to_string(),
            widths: model.nets().iter().map(|n| n.widths.clone()).collect(),
            params: model.nets().iter().map(Mlp::to_flat).collect(),
            epoch,
            loss_train,
            loss_test,
            optimizer,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_model(&self) -> Result<StructuredNetSet> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::FormatVersion {
                found: self.format.clone(),
                expected: CHECKPOINT_FORMAT.to_string(),
            });
        }
        if self.widths.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} width lists but {} parameter blocks",
                self.widths.len(),
                self.params.len()
            )));
        }
        let problem = OscillatoryProblem::by_name(&self.problem)?;
        let mode = NetMode::by_name(&self.mode)?;
        let nets = self
            .widths
            .iter()
            .zip(&self.params)
            .map(|(w, p)| Mlp::from_flat(w, p))
            .collect::<Result<Vec<_>>>()?;
        StructuredNetSet::from_nets(problem, mode, nets)
    }
}

/// Serialize to `path` via a temporary sibling file and rename, so readers
/// never observe a half-written checkpoint.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(checkpoint)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, json)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let json = fs::read_to_string(path)?;
    let checkpoint: Checkpoint = serde_json::from_str(&json)?;
    if checkpoint.format != CHECKPOINT_FORMAT {
        return Err(Error::FormatVersion {
            found: checkpoint.format,
            expected: CHECKPOINT_FORMAT.to_string(),
        });
    }
    Ok(checkpoint)
}
