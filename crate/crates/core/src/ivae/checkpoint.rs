use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{IvaeModel, TrainConfig};
use crate::compositional::{ilr_matrix, ilr_to_clr_matrix};
use crate::error::{Error, Result};
use crate::segmentation::SegmentEncoding;

/// Transform applied to raw observations before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preprocessing {
    None,
    /// Compositions mapped to ilr coordinates; `parts` names the raw columns.
    Ilr { parts: Vec<String> },
}

impl Preprocessing {
    /// Raw `n x D` data into model space.
    pub fn forward(&self, raw: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            Preprocessing::None => Ok(raw.clone()),
            Preprocessing::Ilr { parts } => {
                if raw.ncols() != parts.len() {
                    return Err(Error::Shape(format!(
                        "expected {} composition parts, got {}",
                        parts.len(),
                        raw.ncols()
                    )));
                }
                ilr_matrix(raw)
            }
        }
    }

    /// Model-space outputs into the space used for reporting (clr for
    /// compositions).
    pub fn report_space(&self, y: &Array2<f64>) -> Array2<f64> {
        match self {
            Preprocessing::None => y.clone(),
            Preprocessing::Ilr { .. } => ilr_to_clr_matrix(y),
        }
    }

    pub fn output_names(&self, d: usize) -> Vec<String> {
        match self {
            Preprocessing::None => (1..=d).map(|j| format!("x{j}")).collect(),
            Preprocessing::Ilr { parts } => parts.clone(),
        }
    }
}

/// Everything needed to rerun inference on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: IvaeModel,
    /// Grid geometry and kept cells; per-observation segments are not stored.
    pub segmentation: SegmentEncoding,
    pub config: TrainConfig,
    pub preprocessing: Preprocessing,
}

impl Checkpoint {
    pub fn new(model: IvaeModel, segmentation: &SegmentEncoding, config: TrainConfig, preprocessing: Preprocessing) -> Self {
        let mut segmentation = segmentation.clone();
        segmentation.segments.clear();
        Checkpoint {
            model,
            segmentation,
            config,
            preprocessing,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.segmentation.m() != ck.model.m {
            return Err(Error::Shape(format!(
                "checkpoint grid keeps {} cells but the model expects m = {}",
                ck.segmentation.m(),
                ck.model.m
            )));
        }
        Ok(ck)
    }
}

/// Write `epoch,elbo` rows, epochs counted from 1.
pub fn write_trace_csv(trace: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "elbo"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
