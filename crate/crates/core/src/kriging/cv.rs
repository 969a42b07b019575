use std::io::Write;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::krige::{krige, KrigingKind, DEFAULT_NEIGHBORS};
use super::variogram::{empirical_variogram, fit_variogram, DEFAULT_BINS};
use crate::compositional::{clr_matrix, ilr_matrix, ilr_to_clr_matrix};
use crate::dataset::Domain2D;
use crate::error::{invalid, Error, Result};
use crate::ivae::{train, TrainConfig};
use crate::rng::{derive_seed, rng_from_seed};
use crate::segmentation::{encode_segments, GridSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub grid: GridSpec,
    pub train: TrainConfig,
    pub kind: KrigingKind,
    pub neighbors: usize,
    pub n_bins: usize,
    /// Defaults to half the domain diagonal.
    pub max_dist: Option<f64>,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            grid: GridSpec::Cells { nx: 20, ny: 20 },
            train: TrainConfig::default(),
            kind: KrigingKind::Ordinary,
            neighbors: DEFAULT_NEIGHBORS,
            n_bins: DEFAULT_BINS,
            max_dist: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
}

impl Metrics {
    pub fn new(mse: f64, mae: f64) -> Self {
        Metrics { mse, mae, rmse: mse.sqrt() }
    }

    fn mean(items: &[Metrics]) -> Metrics {
        let n = items.len() as f64;
        Metrics::new(
            items.iter().map(|m| m.mse).sum::<f64>() / n,
            items.iter().map(|m| m.mae).sum::<f64>() / n,
        )
    }
}

/// Overall and per-column errors of `pred` against `truth`.
pub fn score(truth: &Array2<f64>, pred: &Array2<f64>) -> Result<(Metrics, Vec<Metrics>)> {
    if truth.dim() != pred.dim() || truth.is_empty() {
        return Err(Error::Shape("predictions and truth must have the same nonempty shape".into()));
    }
    let err = truth - pred;
    let per: Vec<Metrics> = err
        .columns()
        .into_iter()
        .map(|c| Metrics::new(c.mapv(|e| e * e).mean().expect("rows"), c.mapv(f64::abs).mean().expect("rows")))
        .collect();
    let all = Metrics::new(err.mapv(|e| e * e).mean().expect("cells"), err.mapv(f64::abs).mean().expect("cells"));
    Ok((all, per))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub method: String,
    pub variables: Vec<String>,
    /// Fold means of the per-variable errors in clr space.
    pub per_variable: Vec<Metrics>,
    /// Fold means of MSE and MAE; RMSE is the root of the mean MSE.
    pub aggregate: Metrics,
    pub per_fold: Vec<Metrics>,
    /// Fold index of every observation.
    pub folds: Vec<usize>,
}

impl PredictionReport {
    fn from_folds(method: String, variables: Vec<String>, folds: Vec<usize>, scores: Vec<(Metrics, Vec<Metrics>)>) -> Self {
        let per_fold: Vec<Metrics> = scores.iter().map(|s| s.0).collect();
        let per_variable = (0..variables.len())
            .map(|j| Metrics::mean(&scores.iter().map(|s| s.1[j]).collect::<Vec<_>>()))
            .collect();
        PredictionReport {
            method,
            variables,
            per_variable,
            aggregate: Metrics::mean(&per_fold),
            per_fold,
            folds,
        }
    }
}

/// Random partition into `folds` groups whose sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 || n < folds {
        return Err(invalid(format!("need 2 <= folds <= n, got {folds} folds for {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    Ok(fold)
}

fn split(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&i| folds[i] != f)
}

fn default_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

/// Predicts every held-out composition by the clr mean of its training
/// fold.
pub fn clr_mean_baseline(compositions: &Array2<f64>, folds: &[usize], names: Option<Vec<String>>) -> Result<PredictionReport> {
    let clr = clr_matrix(compositions)?;
    let k = folds.iter().max().map_or(0, |m| m + 1);
    let scores = (0..k)
        .map(|f| {
            let (tr, te) = split(folds, f);
            let mean = clr.select(Axis(0), &tr).mean_axis(Axis(0)).expect("training rows");
            let truth = clr.select(Axis(0), &te);
            let pred = Array2::from_shape_fn(truth.dim(), |(_, j)| mean[j]);
            score(&truth, &pred)
        })
        .collect::<Result<Vec<_>>>()?;
    let names = names.unwrap_or_else(|| default_names(compositions.ncols()));
    Ok(PredictionReport::from_folds("clr mean".into(), names, folds.to_vec(), scores))
}

fn run_fold(
    locations: &Array2<f64>,
    ilr: &Array2<f64>,
    clr: &Array2<f64>,
    domain: &Domain2D,
    folds: &[usize],
    f: usize,
    cfg: &CvConfig,
) -> Result<(Metrics, Vec<Metrics>)> {
    let (tr, te) = split(folds, f);
    let loc_tr = locations.select(Axis(0), &tr);
    let loc_te = locations.select(Axis(0), &te);
    let x_tr = ilr.select(Axis(0), &tr);
    let enc = encode_segments(&loc_tr, domain, cfg.grid)?;
    let tcfg = TrainConfig {
        seed: derive_seed(cfg.seed, 1000 + f as u64),
        ..cfg.train.clone()
    };
    let fitted = train(&x_tr, &enc.segments, enc.m(), &tcfg)?;
    let z_tr = fitted.model.extract_latents(&x_tr, &enc.segments)?;
    let max_dist = cfg.max_dist.unwrap_or(0.5 * domain.diagonal());
    let mut z_te = Array2::zeros((te.len(), z_tr.ncols()));
    for j in 0..z_tr.ncols() {
        let values: Array1<f64> = z_tr.column(j).to_owned();
        let bins = empirical_variogram(&loc_tr, &values, cfg.n_bins, max_dist)?;
        let fit = fit_variogram(&bins)?;
        let pred = krige(&loc_tr, &values, &loc_te, &fit.model, cfg.kind, cfg.neighbors)?;
        z_te.column_mut(j).assign(&pred);
    }
    let ilr_hat = fitted.model.decode(&z_te)?;
    let clr_hat = ilr_to_clr_matrix(&ilr_hat);
    score(&clr.select(Axis(0), &te), &clr_hat)
}

/// K-fold cross-validation of iVAE + kriging on compositional data. Each
/// fold trains on the ilr coordinates of its training split, kriges every
/// latent to the held-out locations, decodes and scores in clr space.
pub fn bss_krige_crossvalidate(
    locations: &Array2<f64>,
    compositions: &Array2<f64>,
    domain: &Domain2D,
    names: Option<Vec<String>>,
    cfg: &CvConfig,
) -> Result<PredictionReport> {
    let n = compositions.nrows();
    if locations.nrows() != n || locations.ncols() != 2 {
        return Err(Error::Shape("need n x 2 locations matching the compositions".into()));
    }
    let folds = fold_assignment(n, cfg.folds, derive_seed(cfg.seed, 999))?;
    let ilr = ilr_matrix(compositions)?;
    let clr = clr_matrix(compositions)?;
    let scores = (0..cfg.folds)
        .into_par_iter()
        .map(|f| run_fold(locations, &ilr, &clr, domain, &folds, f, cfg))
        .collect::<Result<Vec<_>>>()?;
    let names = names.unwrap_or_else(|| default_names(compositions.ncols()));
    let method = format!("iVAE + {} kriging", cfg.kind.label());
    Ok(PredictionReport::from_folds(method, names, folds, scores))
}

/// `Method,MSE,MAE,RMSE`, one row per report.
pub fn write_report_csv<W: Write>(reports: &[PredictionReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["Method", "MSE", "MAE", "RMSE"])?;
    for r in reports {
        let a = r.aggregate;
        w.write_record([r.method.clone(), a.mse.to_string(), a.mae.to_string(), a.rmse.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
