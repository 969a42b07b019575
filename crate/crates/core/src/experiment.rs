//! Batch experiments tying the modules together; the CLI is a thin layer
//! over these functions.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Domain2D, SpatialDataset};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{mcc_of, write_mcc_csv, MccRow};
use crate::ivae::{train, Checkpoint, Preprocessing, TrainConfig, TrainedModel};
use crate::mixing::{apply_mixing, generate_mixing, MixingSpec};
use crate::random_fields::{generate_setting, SETTING_DIM};
use crate::rng::derive_seed;
use crate::segmentation::{encode_segments, GridSpec};
use crate::shap::{scaled_mashap, select_background, ExplainTarget, FnModel, ShapReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub setting: u8,
    pub n: usize,
    /// Mixing layers `L`.
    pub layers: usize,
    pub grid: GridSpec,
    pub train: TrainConfig,
    pub replications: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            setting: 1,
            n: 5000,
            layers: 1,
            grid: GridSpec::Cells { nx: 20, ny: 20 },
            train: TrainConfig::default(),
            replications: 10,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        crate::random_fields::Setting::from_id(self.setting)?;
        if self.n == 0 || self.layers == 0 || self.replications == 0 {
            return Err(invalid("n, layers and replications must be positive"));
        }
        self.grid.validate()?;
        self.train.validate()
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn domain() -> Domain2D {
        Domain2D::square(100.0).expect("valid square")
    }
}

/// Pretty JSON next to the outputs it describes.
pub fn write_config_echo<T: Serialize>(dir: &Path, value: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Latents, mixing and observations for one simulated data set.
pub fn simulate(setting: u8, n: usize, layers: usize, seed: u64) -> Result<(SpatialDataset, MixingSpec)> {
    let mut data = generate_setting(setting, n, derive_seed(seed, 1))?;
    let spec = generate_mixing(layers, SETTING_DIM, derive_seed(seed, 2))?;
    data.x = Some(apply_mixing(&spec, data.latents()?)?);
    Ok((data, spec))
}

/// Simulate, train and score one replication.
pub fn run_replication(cfg: &ExperimentConfig, seed: u64) -> Result<MccRow> {
    let (data, _) = simulate(cfg.setting, cfg.n, cfg.layers, seed)?;
    let x = data.observed()?;
    let enc = encode_segments(&data.locations, &ExperimentConfig::domain(), cfg.grid)?;
    let tcfg = TrainConfig {
        seed: derive_seed(seed, 3),
        ..cfg.train.clone()
    };
    let fitted = train(x, &enc.segments, enc.m(), &tcfg)?;
    let z_hat = fitted.model.extract_latents(x, &enc.segments)?;
    Ok(MccRow {
        setting: cfg.setting,
        layers: cfg.layers,
        seed,
        method: "iVAE".into(),
        mcc: mcc_of(&z_hat, data.latents()?)?,
    })
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    /// Sorted by seed.
    pub rows: Vec<MccRow>,
    /// Seeds whose replication failed, with the error text.
    pub failures: Vec<(u64, String)>,
}

/// Replication `r` uses seed `derive_seed(cfg.seed, r)`.
pub fn replication_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.replications as u64).map(|r| derive_seed(cfg.seed, r)).collect()
}

pub fn run_simulation_study(cfg: &ExperimentConfig) -> Result<StudyOutcome> {
    cfg.validate()?;
    let results: Vec<(u64, Result<MccRow>)> = replication_seeds(cfg)
        .into_par_iter()
        .map(|s| (s, run_replication(cfg, s)))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::error!("replication with seed {seed} failed: {e}");
                failures.push((seed, e.to_string()));
            }
        }
    }
    rows.sort_by_key(|a| (a.setting, a.layers, a.seed));
    Ok(StudyOutcome { rows, failures })
}

/// Runs the study and writes `mcc.csv` and `config.json` into `cfg.out`.
pub fn write_study(cfg: &ExperimentConfig) -> Result<StudyOutcome> {
    let outcome = run_simulation_study(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    write_mcc_csv(&outcome.rows, fs::File::create(cfg.out.join("mcc.csv"))?)?;
    write_config_echo(&cfg.out, cfg)?;
    Ok(outcome)
}

/// Observations prepared for the model plus their locations.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub locations: Array2<f64>,
    /// Model-space observations.
    pub x: Array2<f64>,
    pub preprocessing: Preprocessing,
}

impl PreparedData {
    pub fn from_dataset(data: &SpatialDataset) -> Result<Self> {
        Ok(PreparedData {
            locations: data.locations.clone(),
            x: data.observed()?.clone(),
            preprocessing: Preprocessing::None,
        })
    }

    pub fn from_compositions(table: &crate::compositional::CompositionTable) -> Result<Self> {
        let locations = table
            .locations
            .clone()
            .ok_or_else(|| invalid("composition table needs `sx` and `sy` columns"))?;
        let preprocessing = Preprocessing::Ilr {
            parts: table.parts.clone(),
        };
        Ok(PreparedData {
            locations,
            x: preprocessing.forward(&table.values)?,
            preprocessing,
        })
    }
}

/// Segments the data and trains one model.
pub fn train_checkpoint(
    data: &PreparedData,
    domain: &Domain2D,
    grid: GridSpec,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainedModel)> {
    let enc = encode_segments(&data.locations, domain, grid)?;
    let fitted = train(&data.x, &enc.segments, enc.m(), cfg)?;
    let ck = Checkpoint::new(fitted.model.clone(), &enc, cfg.clone(), data.preprocessing.clone());
    Ok((ck, fitted))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Latents as inputs, decoded observations as outputs.
    Mixing,
    /// Observations and segment as inputs, latents as outputs.
    Unmixing,
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub report: ShapReport,
    pub outputs: Vec<String>,
    pub inputs: Vec<String>,
    /// Inputs by decreasing average scaled MASHAP.
    pub order: Vec<usize>,
}

impl Explanation {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.report
            .write_csv(fs::File::create(path)?, &self.outputs, &self.inputs, &self.order)
    }
}

/// Scaled MASHAP of a trained model in either direction. The background is
/// the farthest-point selection of `background` rows.
pub fn run_explain(
    ck: &Checkpoint,
    data: &PreparedData,
    direction: Direction,
    budget: usize,
    background: usize,
    seed: u64,
) -> Result<Explanation> {
    let model = &ck.model;
    let d = model.d;
    if data.x.ncols() != d {
        return Err(Error::Shape(format!("data has {} columns, model expects {d}", data.x.ncols())));
    }
    if budget < 2 {
        return Err(invalid("budget too small"));
    }
    let segments = ck.segmentation.assign(&data.locations)?;
    let latent_names: Vec<String> = (1..=d).map(|j| format!("z{j}")).collect();
    match direction {
        Direction::Mixing => {
            let z = model.extract_latents(&data.x, &segments)?;
            let outputs = ck.preprocessing.output_names(d);
            let h = outputs.len();
            let pre = ck.preprocessing.clone();
            let game = FnModel {
                inputs: d,
                outputs: h,
                f: move |zz: &Array2<f64>| pre.report_space(&model.decode(zz).expect("latent width checked")),
            };
            let bg = select_background(&data.locations, &z, background)?;
            let target = ExplainTarget::new(&game, bg)?;
            let report = scaled_mashap(&target, &z, budget, seed)?;
            let order = report.input_order();
            Ok(Explanation {
                report,
                outputs,
                inputs: latent_names,
                order,
            })
        }
        Direction::Unmixing => {
            // the segment is a single player carried as its column index
            let seg_col = Array2::from_shape_fn((segments.len(), 1), |(i, _)| segments[i] as f64);
            let inputs_mat = concatenate(Axis(1), &[data.x.view(), seg_col.view()]).map_err(|e| Error::Shape(e.to_string()))?;
            let game = FnModel {
                inputs: d + 1,
                outputs: d,
                f: move |rows: &Array2<f64>| {
                    let segs: Vec<usize> = rows.column(d).iter().map(|&s| s as usize).collect();
                    let x = rows.slice(ndarray::s![.., ..d]).to_owned();
                    model.extract_latents(&x, &segs).expect("segments come from the checkpoint grid")
                },
            };
            let bg = select_background(&data.locations, &inputs_mat, background)?;
            let target = ExplainTarget::new(&game, bg)?;
            let report = scaled_mashap(&target, &inputs_mat, budget, seed)?;
            let mut inputs: Vec<String> = match &ck.preprocessing {
                Preprocessing::None => (1..=d).map(|j| format!("x{j}")).collect(),
                Preprocessing::Ilr { .. } => (1..=d).map(|j| format!("ilr{j}")).collect(),
            };
            inputs.push("segment".into());
            let order = report.input_order();
            Ok(Explanation {
                report,
                outputs: latent_names,
                inputs,
                order,
            })
        }
    }
}
