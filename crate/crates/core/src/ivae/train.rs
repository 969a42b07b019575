use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{IvaeGrads, IvaeModel, DEFAULT_BETA};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Affine map applied to the observations before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InputTransform {
    None,
    /// Center and scale every column to unit variance.
    Standardize,
    /// Center and multiply by the inverse symmetric square root of the
    /// sample covariance (ZCA).
    #[default]
    Whiten,
}

/// `(shift, map, unmap)` of `transform` fitted on `x`.
pub fn fit_input_transform(x: &Array2<f64>, transform: InputTransform) -> Result<(Array1<f64>, Array2<f64>, Array2<f64>)> {
    let (n, d) = x.dim();
    if n == 0 {
        return Err(invalid("cannot fit an input transform on no rows"));
    }
    if transform == InputTransform::None {
        return Ok((Array1::zeros(d), Array2::eye(d), Array2::eye(d)));
    }
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let xc = x - &mean;
    if transform == InputTransform::Standardize {
        let sd = xc.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        return Ok((mean, Array2::from_diag(&sd.mapv(f64::recip)), Array2::from_diag(&sd)));
    }
    let cov = xc.t().dot(&xc) / n as f64;
    let eig = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]).symmetric_eigen();
    let top = eig.eigenvalues.max();
    if !(eig.eigenvalues.min() > 1e-12 * top) {
        return Err(Error::Singular(
            "observations are (nearly) collinear, cannot whiten; use `standardize` or `none`".into(),
        ));
    }
    let v = &eig.eigenvectors;
    let half = |f: fn(f64) -> f64| {
        let m = v * DMatrix::from_diagonal(&eig.eigenvalues.map(f)) * v.transpose();
        Array2::from_shape_fn((d, d), |(i, j)| m[(i, j)])
    };
    Ok((mean, half(|l| 1.0 / l.sqrt()), half(f64::sqrt)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub decay_steps: usize,
    pub decay_power: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    /// Observation noise variance of the decoder.
    pub beta: f64,
    pub input: InputTransform,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            lr_start: 0.01,
            lr_end: 0.0001,
            decay_steps: 10_000,
            decay_power: 2.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            hidden: vec![128, 128, 128],
            leaky_slope: 0.2,
            beta: DEFAULT_BETA,
            input: InputTransform::Whiten,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.lr_start,
            self.lr_end,
            self.decay_power,
            self.adam_eps,
            self.leaky_slope,
            self.beta,
        ];
        if self.epochs == 0 || self.batch_size == 0 || self.decay_steps == 0 {
            return Err(invalid("epochs, batch size and decay steps must be positive"));
        }
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("learning rates, decay power, Adam eps, slope and beta must be positive"));
        }
        if self.lr_end > self.lr_start {
            return Err(invalid("lr_end must not exceed lr_start"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

/// Polynomial decay from `lr_start` to `lr_end` over `decay_steps`, held at
/// `lr_end` afterwards.
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    let t = step.min(cfg.decay_steps) as f64 / cfg.decay_steps as f64;
    cfg.lr_end + (cfg.lr_start - cfg.lr_end) * (1.0 - t).powf(cfg.decay_power)
}

/// Adam moments for a flat list of parameter slices.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
}

impl Adam {
    pub fn new(shapes: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            beta1,
            beta2,
            eps,
            t: 0,
        }
    }

    /// Gradient-ascent step: parameters move along `grads`.
    pub fn ascend(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let step = lr * bc2.sqrt() / bc1;
        let eps_hat = self.eps * bc2.sqrt();
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] += step * m[i] / (v[i].sqrt() + eps_hat);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: IvaeModel,
    /// Mean ELBO per epoch.
    pub trace: Vec<f64>,
}

/// Fit an iVAE by Adam over shuffled mini-batches.
pub fn train(x: &Array2<f64>, segments: &[usize], m: usize, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(invalid("training data is empty"));
    }
    if segments.len() != n {
        return Err(Error::Shape("one segment index per observation required".into()));
    }
    if m == 0 {
        return Err(invalid("segmentation has no columns"));
    }
    let mut init_rng = rng_from_seed(derive_seed(cfg.seed, 0));
    let mut shuffle_rng = rng_from_seed(derive_seed(cfg.seed, 1));
    let mut noise_rng = rng_from_seed(derive_seed(cfg.seed, 2));

    let mut model = IvaeModel::new(d, m, &cfg.hidden, cfg.leaky_slope, cfg.beta, &mut init_rng)?;
    (model.x_shift, model.x_map, model.x_unmap) = fit_input_transform(x, cfg.input)?;

    let shapes: Vec<usize> = model.param_slices_mut().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(&shapes, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xb = x.select(Axis(0), idx);
            let sb: Vec<usize> = idx.iter().map(|&i| segments[i]).collect();
            let eps = Array2::from_shape_simple_fn((idx.len(), d), || StandardNormal.sample(&mut noise_rng));
            let (value, grads): (f64, IvaeGrads) = model.elbo_with_grad(&xb.view(), &sb, &eps.view())?;
            if !value.is_finite() {
                trace.push(f64::NAN);
                return Err(Error::NonFiniteLoss { epoch, batch, trace });
            }
            total += value * idx.len() as f64;
            let lr = learning_rate(cfg, step);
            adam.ascend(model.param_slices_mut(), grads.slices(), lr);
            step += 1;
        }
        let mean = total / n as f64;
        log::debug!("epoch {epoch}: elbo {mean:.6}");
        trace.push(mean);
    }
    if !model.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs,
            batch: 0,
            trace,
        });
    }
    Ok(TrainedModel { model, trace })
}
