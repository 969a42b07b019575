//! Variogram fitting, kriging of latent components and the cross-validated
//! prediction pipeline for compositional data.

mod cv;
mod krige;
mod variogram;

pub use cv::{
    bss_krige_crossvalidate, clr_mean_baseline, fold_assignment, score, write_report_csv, CvConfig, Metrics,
    PredictionReport,
};
pub use krige::{
    krige, kriging_weights, nearest_neighbors, ordinary_kriging, universal_kriging, KrigingKind, DEFAULT_NEIGHBORS,
};
pub use variogram::{
    empirical_variogram, fit_family, fit_variogram, Family, VariogramBin, VariogramFit, VariogramModel,
    DEFAULT_BINS, MATERN_NU_GRID,
};
