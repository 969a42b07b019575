//! Identifiable VAE with a segment-indicator auxiliary variable.
//!
//! * encoder `g(x, u)` gives the mean and log-variance of `q(z | x, u)`,
//! * decoder `h(z)` gives the mean of `p(x | z) = N(h(z), beta I)`,
//! * auxiliary network `w(u)` gives the mean and log-variance of `p(z | u)`.
//!
//! Training maximizes the single-sample reparameterized ELBO
//! `log p(x | z') + log p(z' | u) - log q(z' | x, u)`.

mod checkpoint;
pub mod net;
mod train;

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

pub use checkpoint::{write_trace_csv, Checkpoint, Preprocessing};
pub use net::{leaky_relu, leaky_relu_grad, DenseLayer, DenseNet, NetCache, NetGrads, NetInput};
pub use train::{fit_input_transform, learning_rate, train, Adam, InputTransform, TrainConfig, TrainedModel};

pub const DEFAULT_BETA: f64 = 0.01;

/// `sum_i -0.5 log(2 pi var_i) - 0.5 (x_i - mu_i)^2 / var_i`.
pub fn gaussian_log_density(x: &[f64], mu: &[f64], var: &[f64]) -> Result<f64> {
    if x.len() != mu.len() || x.len() != var.len() {
        return Err(Error::Shape("x, mu and var must have equal length".into()));
    }
    let mut acc = 0.0;
    for ((&xi, &mi), &vi) in x.iter().zip(mu).zip(var) {
        if !(vi > 0.0) {
            return Err(invalid(format!("variance must be positive, got {vi}")));
        }
        acc += -0.5 * (2.0 * PI * vi).ln() - 0.5 * (xi - mi).powi(2) / vi;
    }
    Ok(acc)
}

/// Partial derivatives of [`gaussian_log_density`] w.r.t. `(x, mu, var)`.
pub fn gaussian_log_density_grad(x: &[f64], mu: &[f64], var: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = Vec::with_capacity(x.len());
    let mut gm = Vec::with_capacity(x.len());
    let mut gv = Vec::with_capacity(x.len());
    for ((&xi, &mi), &vi) in x.iter().zip(mu).zip(var) {
        let r = (xi - mi) / vi;
        gx.push(-r);
        gm.push(r);
        gv.push(-0.5 / vi + 0.5 * r * r);
    }
    (gx, gm, gv)
}

/// `z' = mu + sigma * eps`, elementwise.
pub fn reparameterize(mu: &[f64], sigma: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(sigma)
        .zip(eps)
        .map(|((&m, &s), &e)| m + s * e)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvaeModel {
    /// Input `[x, u]`, output `[mu, logvar]` of `q(z | x, u)`.
    pub encoder: DenseNet,
    /// Input `z`, output the mean of `p(x | z)`.
    pub decoder: DenseNet,
    /// Input `u`, output `[mu, logvar]` of `p(z | u)`.
    pub aux: DenseNet,
    pub beta: f64,
    pub d: usize,
    pub m: usize,
    /// Affine input map `(x - x_shift) x_map`, fitted on the training data.
    /// The model works in the mapped coordinates; `decode` applies
    /// `x_unmap`, the inverse of `x_map`. Identity by default.
    pub x_shift: Array1<f64>,
    pub x_map: Array2<f64>,
    pub x_unmap: Array2<f64>,
}

/// Gradients for every parameter group of [`IvaeModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct IvaeGrads {
    pub encoder: NetGrads,
    pub decoder: NetGrads,
    pub aux: NetGrads,
}

impl IvaeGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.encoder.slices();
        v.extend(self.decoder.slices());
        v.extend(self.aux.slices());
        v
    }
}

impl IvaeModel {
    pub fn new(d: usize, m: usize, hidden: &[usize], slope: f64, beta: f64, rng: &mut Rng) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(invalid("model needs d >= 1 and m >= 1"));
        }
        if !(beta > 0.0) {
            return Err(invalid(format!("beta must be positive, got {beta}")));
        }
        Ok(IvaeModel {
            encoder: DenseNet::new(d, m, hidden, 2 * d, slope, rng),
            decoder: DenseNet::new(d, 0, hidden, d, slope, rng),
            aux: DenseNet::new(0, m, hidden, 2 * d, slope, rng),
            beta,
            d,
            m,
            x_shift: Array1::zeros(d),
            x_map: Array2::eye(d),
            x_unmap: Array2::eye(d),
        })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count() + self.aux.param_count()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.param_slices_mut();
        v.extend(self.decoder.param_slices_mut());
        v.extend(self.aux.param_slices_mut());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.decoder.is_finite() && self.aux.is_finite()
    }

    pub fn zero_grads(&self) -> IvaeGrads {
        IvaeGrads {
            encoder: NetGrads::zeros_like(&self.encoder),
            decoder: NetGrads::zeros_like(&self.decoder),
            aux: NetGrads::zeros_like(&self.aux),
        }
    }

    fn check_batch(&self, x: &ArrayView2<f64>, segments: &[usize]) -> Result<()> {
        if x.ncols() != self.d {
            return Err(Error::Shape(format!("model expects {} observed columns, got {}", self.d, x.ncols())));
        }
        if x.nrows() != segments.len() {
            return Err(Error::Shape("observation and segment counts differ".into()));
        }
        if let Some(bad) = segments.iter().find(|&&s| s >= self.m) {
            return Err(Error::Shape(format!(
                "segment {bad} out of range: model was trained with m = {}",
                self.m
            )));
        }
        Ok(())
    }

    pub fn map_input(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        (x - &self.x_shift).dot(&self.x_map)
    }

    /// Encoder mean head `mu_{z|x,u}` for every row.
    pub fn extract_latents(&self, x: &Array2<f64>, segments: &[usize]) -> Result<Array2<f64>> {
        self.check_batch(&x.view(), segments)?;
        let xs = self.map_input(&x.view());
        let out = self.encoder.forward(&NetInput::new(xs.view(), Some(segments)));
        Ok(out.slice(s![.., ..self.d]).to_owned())
    }

    /// Decoder forward pass, mapped back to the observed scale.
    pub fn decode(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.d {
            return Err(Error::Shape(format!("latents have {} columns, model has d = {}", z.ncols(), self.d)));
        }
        let out = self.decoder.forward(&NetInput::new(z.view(), None));
        Ok(out.dot(&self.x_unmap) + &self.x_shift)
    }

    /// Batch-mean ELBO for fixed noise `eps` (`batch x d`), with `p(x | z)`
    /// evaluated in the mapped input coordinates.
    pub fn elbo(&self, x: &ArrayView2<f64>, segments: &[usize], eps: &ArrayView2<f64>) -> Result<f64> {
        Ok(self.elbo_impl(x, segments, eps, false)?.0)
    }

    /// Batch-mean ELBO and its gradient w.r.t. every parameter.
    pub fn elbo_with_grad(
        &self,
        x: &ArrayView2<f64>,
        segments: &[usize],
        eps: &ArrayView2<f64>,
    ) -> Result<(f64, IvaeGrads)> {
        let (v, g) = self.elbo_impl(x, segments, eps, true)?;
        Ok((v, g.expect("gradients requested")))
    }

    fn elbo_impl(
        &self,
        x: &ArrayView2<f64>,
        segments: &[usize],
        eps: &ArrayView2<f64>,
        with_grad: bool,
    ) -> Result<(f64, Option<IvaeGrads>)> {
        self.check_batch(x, segments)?;
        let (b, d) = (x.nrows(), self.d);
        if eps.dim() != (b, d) {
            return Err(Error::Shape(format!("noise must be {b} x {d}, got {:?}", eps.dim())));
        }
        if b == 0 {
            return Err(invalid("empty batch"));
        }
        let xs = self.map_input(x);
        let empty = Array2::<f64>::zeros((b, 0));

        let enc_in = NetInput::new(xs.view(), Some(segments));
        let (enc_out, enc_cache) = self.encoder.forward_cached(&enc_in);
        let mu_q = enc_out.slice(s![.., ..d]);
        let lv_q = enc_out.slice(s![.., d..]);
        let sd_q = lv_q.mapv(|v| (0.5 * v).exp());
        let z = &mu_q + &(&sd_q * eps);

        let dec_in = NetInput::new(z.view(), None);
        let (xhat, dec_cache) = self.decoder.forward_cached(&dec_in);

        let aux_in = NetInput::new(empty.view(), Some(segments));
        let (aux_out, aux_cache) = self.aux.forward_cached(&aux_in);
        let mu_p = aux_out.slice(s![.., ..d]);
        let lv_p = aux_out.slice(s![.., d..]);
        let prec_p = lv_p.mapv(|v| (-v).exp());

        let ln2pi = (2.0 * PI).ln();
        let resid_x = &xs - &xhat;
        let log_px = -0.5 * (b * d) as f64 * (ln2pi + self.beta.ln())
            - 0.5 * resid_x.iter().map(|r| r * r).sum::<f64>() / self.beta;
        let resid_z = &z - &mu_p;
        let mut log_pz = 0.0;
        Zip::from(&resid_z).and(&lv_p).and(&prec_p).for_each(|&r, &lv, &pr| {
            log_pz += -0.5 * (ln2pi + lv) - 0.5 * r * r * pr;
        });
        let mut log_qz = 0.0;
        Zip::from(&lv_q).and(eps).for_each(|&lv, &e| {
            log_qz += -0.5 * (ln2pi + lv) - 0.5 * e * e;
        });
        let value = (log_px + log_pz - log_qz) / b as f64;

        if !with_grad {
            return Ok((value, None));
        }
        let scale = 1.0 / b as f64;
        let mut grads = self.zero_grads();

        let g_xhat = resid_x.mapv(|r| r * scale / self.beta);
        let g_z_dec = self
            .decoder
            .backward(&dec_in, &dec_cache, g_xhat, &mut grads.decoder, true)
            .expect("decoder has dense input");

        let mut g_aux = Array2::zeros((b, 2 * d));
        let mut g_enc = Array2::zeros((b, 2 * d));
        for i in 0..b {
            for j in 0..d {
                let r = resid_z[[i, j]];
                let pr = prec_p[[i, j]];
                g_aux[[i, j]] = scale * r * pr;
                g_aux[[i, d + j]] = scale * (-0.5 + 0.5 * r * r * pr);
                let g_z = g_z_dec[[i, j]] - scale * r * pr;
                g_enc[[i, j]] = g_z;
                g_enc[[i, d + j]] = scale * 0.5 + g_z * eps[[i, j]] * 0.5 * sd_q[[i, j]];
            }
        }
        self.aux.backward(&aux_in, &aux_cache, g_aux, &mut grads.aux, false);
        self.encoder.backward(&enc_in, &enc_cache, g_enc, &mut grads.encoder, false);
        Ok((value, Some(grads)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::array;

    #[test]
    fn log_density_closed_forms() {
        let v = gaussian_log_density(&[0.3], &[0.3], &[1.0]).unwrap();
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-12);
        let v = gaussian_log_density(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - (-1.837_877_066_409_345_5)).abs() < 1e-12);
        let a = gaussian_log_density(&[1.0, 2.0], &[1.0, 2.0], &[0.5, 3.0]).unwrap();
        let b = gaussian_log_density(&[1.0, 2.0], &[1.0, 2.0], &[2.0, 12.0]).unwrap();
        assert!((a - b - 2.0 * 0.5 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_density_rejects_nonpositive_variance() {
        assert!(gaussian_log_density(&[0.0], &[0.0], &[0.0]).is_err());
        assert!(gaussian_log_density(&[0.0], &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn reparameterize_degenerate_cases() {
        assert_eq!(reparameterize(&[1.0, 2.0], &[3.0, 4.0], &[0.0, 0.0]), vec![1.0, 2.0]);
        assert_eq!(reparameterize(&[1.0, 2.0], &[0.0, 0.0], &[5.0, -7.0]), vec![1.0, 2.0]);
    }

    fn tiny_model(seed: u64) -> IvaeModel {
        IvaeModel::new(1, 2, &[3], 0.2, 0.5, &mut rng_from_seed(seed)).unwrap()
    }

    #[test]
    fn elbo_matches_scalar_reference() {
        let model = tiny_model(8);
        let x = array![[0.7]];
        let seg = [1usize];
        let eps = array![[-0.4]];
        let got = model.elbo(&x.view(), &seg, &eps.view()).unwrap();

        let enc = model.encoder.forward(&NetInput::new(x.view(), Some(&seg)));
        let (mu_q, lv_q) = (enc[[0, 0]], enc[[0, 1]]);
        let z = mu_q + (0.5 * lv_q).exp() * -0.4;
        let xhat = model.decoder.forward(&NetInput::new(array![[z]].view(), None))[[0, 0]];
        let empty = Array2::<f64>::zeros((1, 0));
        let aux = model.aux.forward(&NetInput::new(empty.view(), Some(&seg)));
        let want = gaussian_log_density(&[0.7], &[xhat], &[0.5]).unwrap()
            + gaussian_log_density(&[z], &[aux[[0, 0]]], &[aux[[0, 1]].exp()]).unwrap()
            - gaussian_log_density(&[z], &[mu_q], &[lv_q.exp()]).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn segment_out_of_range_rejected() {
        let model = tiny_model(1);
        let x = array![[0.1]];
        assert!(model.extract_latents(&x, &[2]).is_err());
        assert!(model.extract_latents(&array![[0.1, 0.2]], &[0]).is_err());
    }

    #[test]
    fn extraction_is_pure_and_batch_consistent() {
        let model = IvaeModel::new(3, 4, &[8, 8], 0.2, 0.01, &mut rng_from_seed(2)).unwrap();
        let x = array![[0.1, -2.0, 3.0], [1.0, 1.0, 1.0], [-0.5, 0.0, 2.2]];
        let seg = [0usize, 3, 1];
        let a = model.extract_latents(&x, &seg).unwrap();
        assert_eq!(a, model.extract_latents(&x, &seg).unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
        let one = model.extract_latents(&x.slice(s![1..2, ..]).to_owned(), &seg[1..2]).unwrap();
        for j in 0..3 {
            assert!((one[[0, j]] - a[[1, j]]).abs() < 1e-14);
        }
        let dec = model.decode(&a).unwrap();
        let dec1 = model.decode(&a.slice(s![2..3, ..]).to_owned()).unwrap();
        for j in 0..3 {
            assert!((dec1[[0, j]] - dec[[2, j]]).abs() < 1e-14);
        }
        assert!(dec.iter().all(|v| v.is_finite()));
    }
}
