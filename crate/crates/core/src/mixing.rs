//! Invertible MLP mixing `f_L(z) = w_L(B_L f_{L-1}(z))` with row/column
//! normalized square matrices, ELU on every layer but the last.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::to_dmatrix;
use crate::rng::{derive_seed, rng_from_seed};

pub const NORM_TOL: f64 = 1e-8;
pub const MAX_SWEEPS: usize = 500;
pub const MIN_ABS_DET: f64 = 1e-12;
pub const MAX_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu(x),
            Activation::Linear => x,
        }
    }
}

pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MixingSpecJson", try_from = "MixingSpecJson")]
pub struct MixingSpec {
    pub layers: Vec<Array2<f64>>,
    pub activations: Vec<Activation>,
    /// Normalization sweeps spent on each layer.
    pub sweeps: Vec<usize>,
}

/// JSON layout: matrices as nested row arrays.
#[derive(Serialize, Deserialize)]
struct MixingSpecJson {
    layers: Vec<Vec<Vec<f64>>>,
    activations: Vec<Activation>,
    #[serde(default)]
    sweeps: Vec<usize>,
}

impl From<MixingSpec> for MixingSpecJson {
    fn from(s: MixingSpec) -> Self {
        MixingSpecJson {
            layers: s
                .layers
                .iter()
                .map(|b| b.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            activations: s.activations,
            sweeps: s.sweeps,
        }
    }
}

impl TryFrom<MixingSpecJson> for MixingSpec {
    type Error = Error;

    fn try_from(j: MixingSpecJson) -> Result<Self> {
        let mut layers = Vec::with_capacity(j.layers.len());
        for rows in j.layers {
            let d = rows.len();
            if rows.iter().any(|r| r.len() != d) {
                return Err(Error::Shape("mixing layers must be square".into()));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            layers.push(Array2::from_shape_vec((d, d), flat).map_err(|e| Error::Shape(e.to_string()))?);
        }
        let sweeps = if j.sweeps.is_empty() {
            vec![0; layers.len()]
        } else {
            j.sweeps
        };
        let spec = MixingSpec {
            layers,
            activations: j.activations,
            sweeps,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl MixingSpec {
    pub fn dim(&self) -> usize {
        self.layers.first().map_or(0, |b| b.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.len() != self.activations.len() {
            return Err(invalid("mixing needs one activation per layer and at least one layer"));
        }
        let d = self.dim();
        if self.layers.iter().any(|b| b.dim() != (d, d)) {
            return Err(Error::Shape(format!("every mixing layer must be {d} x {d}")));
        }
        if self.activations.last() != Some(&Activation::Linear) {
            return Err(invalid("last mixing layer must be linear"));
        }
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

fn max_norm_deviation(b: &Array2<f64>) -> f64 {
    let rows = b.rows().into_iter().map(|r| (r.dot(&r).sqrt() - 1.0).abs());
    let cols = b.columns().into_iter().map(|c| (c.dot(&c).sqrt() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Alternately rescale rows and columns to unit Euclidean norm until both
/// hold to [`NORM_TOL`]. Returns the matrix and the sweep count.
pub fn normalize_rows_cols(b: &Array2<f64>) -> Result<(Array2<f64>, usize)> {
    if b.nrows() != b.ncols() || b.is_empty() {
        return Err(Error::Shape(format!("expected a nonempty square matrix, got {:?}", b.dim())));
    }
    let mut m = b.to_owned();
    let mut dev = max_norm_deviation(&m);
    if dev < NORM_TOL {
        return Ok((m, 0));
    }
    for sweep in 1..=MAX_SWEEPS {
        for mut r in m.rows_mut() {
            let n = r.dot(&r).sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(invalid("matrix has a zero row; not invertible"));
            }
            r /= n;
        }
        for mut c in m.columns_mut() {
            let n = c.dot(&c).sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(invalid("matrix has a zero column; not invertible"));
            }
            c /= n;
        }
        dev = max_norm_deviation(&m);
        if dev < NORM_TOL {
            return Ok((m, sweep));
        }
    }
    Err(Error::NormalizationDiverged {
        sweeps: MAX_SWEEPS,
        deviation: dev,
    })
}

pub fn determinant(b: &Array2<f64>) -> f64 {
    to_dmatrix(b).determinant()
}

/// Random `L`-layer mixing: standard normal matrices, normalized, redrawn
/// when singular or when normalization stalls.
pub fn generate_mixing(layers: usize, d: usize, seed: u64) -> Result<MixingSpec> {
    if layers == 0 || d == 0 {
        return Err(invalid("mixing needs at least one layer and one dimension"));
    }
    let mut mats = Vec::with_capacity(layers);
    let mut sweeps = Vec::with_capacity(layers);
    for l in 0..layers {
        let mut rng = rng_from_seed(derive_seed(seed, l as u64));
        let mut accepted = None;
        for _ in 0..MAX_DRAWS {
            let raw = Array2::from_shape_simple_fn((d, d), || StandardNormal.sample(&mut rng));
            if let Ok((b, s)) = normalize_rows_cols(&raw) {
                if determinant(&b).abs() > MIN_ABS_DET {
                    accepted = Some((b, s));
                    break;
                }
            }
        }
        let (b, s) = accepted.ok_or(Error::SingularMixing(MAX_DRAWS))?;
        mats.push(b);
        sweeps.push(s);
    }
    let mut activations = vec![Activation::Elu; layers];
    activations[layers - 1] = Activation::Linear;
    Ok(MixingSpec {
        layers: mats,
        activations,
        sweeps,
    })
}

/// Apply `f_L` to every row of `z`.
pub fn apply_mixing(spec: &MixingSpec, z: &Array2<f64>) -> Result<Array2<f64>> {
    spec.validate()?;
    if z.ncols() != spec.dim() {
        return Err(Error::Shape(format!(
            "latents have {} columns, mixing expects {}",
            z.ncols(),
            spec.dim()
        )));
    }
    let mut h = z.to_owned();
    for (b, act) in spec.layers.iter().zip(&spec.activations) {
        h = h.dot(&b.t());
        if *act != Activation::Linear {
            h.mapv_inplace(|v| act.apply(v));
        }
    }
    Ok(h)
}

/// Central-difference Jacobian of `f_L` at one point.
pub fn numerical_jacobian(spec: &MixingSpec, z: &[f64], step: f64) -> Result<Array2<f64>> {
    let d = spec.dim();
    let mut jac = Array2::zeros((d, d));
    for j in 0..d {
        let mut plus = Array2::from_shape_vec((1, d), z.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
        let mut minus = plus.clone();
        plus[[0, j]] += step;
        minus[[0, j]] -= step;
        let diff = apply_mixing(spec, &plus)? - apply_mixing(spec, &minus)?;
        jac.column_mut(j).assign(&(diff.index_axis(Axis(0), 0).to_owned() / (2.0 * step)));
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn norms_ok(b: &Array2<f64>) -> bool {
        max_norm_deviation(b) < 1e-6
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(1.0), 1.0);
        assert!((elu(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
        // slope 1 from both sides at 0
        let h = 1e-7;
        assert!(((elu(h) - elu(-h)) / (2.0 * h) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identity_is_fixed_point() {
        let (b, sweeps) = normalize_rows_cols(&Array2::eye(3)).unwrap();
        assert_eq!(b, Array2::<f64>::eye(3));
        assert_eq!(sweeps, 0);
    }

    #[test]
    fn diagonal_normalizes_to_identity() {
        let (b, _) = normalize_rows_cols(&array![[2.0, 0.0], [0.0, 0.5]]).unwrap();
        assert!((&b - &Array2::<f64>::eye(2)).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn random_draw_satisfies_norms_and_idempotence() {
        let mut rng = rng_from_seed(17);
        for _ in 0..20 {
            let raw = Array2::from_shape_simple_fn((3, 3), || StandardNormal.sample(&mut rng));
            let (b, _) = normalize_rows_cols(&raw).unwrap();
            assert!(norms_ok(&b));
            let (b2, _) = normalize_rows_cols(&b).unwrap();
            assert!((&b2 - &b).iter().all(|v| v.abs() < 1e-8));
        }
    }

    #[test]
    fn zero_row_rejected() {
        assert!(normalize_rows_cols(&array![[0.0, 0.0], [1.0, 1.0]]).is_err());
    }

    #[test]
    fn generated_spec_invariants() {
        for layers in 1..=3 {
            let spec = generate_mixing(layers, 3, 5).unwrap();
            assert_eq!(spec.layers.len(), layers);
            assert_eq!(*spec.activations.last().unwrap(), Activation::Linear);
            assert!(spec.activations[..layers - 1].iter().all(|a| *a == Activation::Elu));
            for b in &spec.layers {
                assert!(norms_ok(b));
                assert!(determinant(b).abs() > MIN_ABS_DET);
            }
        }
        assert_eq!(generate_mixing(2, 4, 8).unwrap(), generate_mixing(2, 4, 8).unwrap());
    }

    #[test]
    fn one_layer_is_matrix_product() {
        let spec = generate_mixing(1, 3, 2).unwrap();
        let z = array![[0.3, -1.0, 2.0], [5.0, 0.0, -0.5]];
        let x = apply_mixing(&spec, &z).unwrap();
        let want = z.dot(&spec.layers[0].t());
        assert!((&x - &want).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn identity_mixing_is_identity() {
        let spec = MixingSpec {
            layers: vec![Array2::eye(2)],
            activations: vec![Activation::Linear],
            sweeps: vec![0],
        };
        let z = array![[1.5, -2.0]];
        assert_eq!(apply_mixing(&spec, &z).unwrap(), z);
    }

    #[test]
    fn two_layers_match_scalar_reference() {
        let spec = generate_mixing(2, 3, 9).unwrap();
        let z = [0.7, -1.3, 0.2];
        let mut h = z.to_vec();
        for (b, act) in spec.layers.iter().zip(&spec.activations) {
            let mut next = vec![0.0; 3];
            for i in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += b[[i, k]] * h[k];
                }
                next[i] = match act {
                    Activation::Elu => {
                        if s >= 0.0 {
                            s
                        } else {
                            s.exp() - 1.0
                        }
                    }
                    Activation::Linear => s,
                };
            }
            h = next;
        }
        let x = apply_mixing(&spec, &Array2::from_shape_vec((1, 3), z.to_vec()).unwrap()).unwrap();
        for i in 0..3 {
            assert!((x[[0, i]] - h[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn three_layers_injective_on_random_pairs() {
        let spec = generate_mixing(3, 3, 21).unwrap();
        let mut rng = rng_from_seed(22);
        let a = Array2::from_shape_simple_fn((1000, 3), || StandardNormal.sample(&mut rng));
        let b = Array2::from_shape_simple_fn((1000, 3), || StandardNormal.sample(&mut rng));
        let fa = apply_mixing(&spec, &a).unwrap();
        let fb = apply_mixing(&spec, &b).unwrap();
        for i in 0..1000 {
            let din: f64 = (&a.row(i) - &b.row(i)).iter().map(|v| v.abs()).sum();
            let dout: f64 = (&fa.row(i) - &fb.row(i)).iter().map(|v| v.abs()).sum();
            assert!(din == 0.0 || dout > 0.0);
        }
    }

    #[test]
    fn jacobian_nonsingular_at_random_points() {
        let spec = generate_mixing(3, 3, 31).unwrap();
        let mut rng = rng_from_seed(32);
        for _ in 0..100 {
            let z: Vec<f64> = (0..3).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
            let j = numerical_jacobian(&spec, &z, 1e-6).unwrap();
            assert!(determinant(&j).abs() > 1e-8);
        }
    }

    #[test]
    fn single_layer_is_linear() {
        let spec = generate_mixing(1, 3, 41).unwrap();
        let z = array![[1.0, 2.0, -3.0]];
        let w = array![[-0.5, 4.0, 0.25]];
        let (a, b) = (1.7, -0.3);
        let lhs = apply_mixing(&spec, &(&z * a + &w * b)).unwrap();
        let rhs = apply_mixing(&spec, &z).unwrap() * a + apply_mixing(&spec, &w).unwrap() * b;
        assert!((&lhs - &rhs).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn json_uses_nested_arrays_and_round_trips() {
        let spec = generate_mixing(2, 3, 3).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"layers\":[[["));
        assert!(text.contains("\"elu\""));
        let back: MixingSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let spec = generate_mixing(1, 3, 1).unwrap();
        assert!(apply_mixing(&spec, &Array2::zeros((2, 2))).is_err());
    }
}
