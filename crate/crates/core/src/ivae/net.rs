//! Fully connected networks with leaky-ReLU hidden layers and hand-written
//! backpropagation.
//!
//! The first layer accepts a dense block plus an optional one-hot block given
//! as column indices, so a segment indicator costs one row gather instead of
//! a product with a mostly-zero matrix.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand_distr::Uniform;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `fan_in x fan_out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        DenseLayer {
            w: Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng)),
            b: Array1::zeros(fan_out),
        }
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// Network input: a dense `batch x dense_in` block and, when the network has
/// a one-hot block, the active column of each row.
#[derive(Debug, Clone, Copy)]
pub struct NetInput<'a> {
    pub dense: ArrayView2<'a, f64>,
    pub segments: Option<&'a [usize]>,
}

impl<'a> NetInput<'a> {
    pub fn new(dense: ArrayView2<'a, f64>, segments: Option<&'a [usize]>) -> Self {
        NetInput { dense, segments }
    }

    pub fn rows(&self) -> usize {
        match self.segments {
            Some(s) if self.dense.ncols() == 0 => s.len(),
            _ => self.dense.nrows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<DenseLayer>,
    pub dense_in: usize,
    pub onehot_in: usize,
    pub slope: f64,
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone)]
pub struct NetCache {
    /// Pre-activations of every hidden layer.
    pre: Vec<Array2<f64>>,
    /// Post-activations of every hidden layer (input of the next layer).
    post: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<DenseLayer>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| DenseLayer {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice().expect("standard layout"), l.b.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.w *= k;
            l.b *= k;
        }
    }
}

impl DenseNet {
    /// `hidden` lists the widths of the hidden layers; the output layer is linear.
    pub fn new(dense_in: usize, onehot_in: usize, hidden: &[usize], out: usize, slope: f64, rng: &mut Rng) -> Self {
        let mut widths = vec![dense_in + onehot_in];
        widths.extend_from_slice(hidden);
        widths.push(out);
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], rng))
            .collect();
        DenseNet {
            layers,
            dense_in,
            onehot_in,
            slope,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.ncols())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("standard layout"),
                    l.b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    pub fn check_input(&self, input: &NetInput) -> Result<()> {
        if input.dense.ncols() != self.dense_in {
            return Err(Error::Shape(format!(
                "network expects {} dense inputs, got {}",
                self.dense_in,
                input.dense.ncols()
            )));
        }
        match (self.onehot_in, input.segments) {
            (0, None) => Ok(()),
            (0, Some(_)) => Err(Error::Shape("network has no one-hot input".into())),
            (_, None) => Err(Error::Shape("network needs segment indices".into())),
            (m, Some(seg)) => {
                if self.dense_in > 0 && seg.len() != input.dense.nrows() {
                    return Err(Error::Shape("segment and dense row counts differ".into()));
                }
                match seg.iter().find(|&&s| s >= m) {
                    Some(bad) => Err(Error::Shape(format!(
                        "segment index {bad} out of range for {m} one-hot columns"
                    ))),
                    None => Ok(()),
                }
            }
        }
    }

    fn first_layer(&self, input: &NetInput) -> Array2<f64> {
        let l0 = &self.layers[0];
        let rows = input.rows();
        let mut a = if self.dense_in > 0 {
            input.dense.dot(&l0.w.slice(s![..self.dense_in, ..]))
        } else {
            Array2::zeros((rows, l0.w.ncols()))
        };
        if let Some(seg) = input.segments {
            for (mut row, &sidx) in a.rows_mut().into_iter().zip(seg) {
                row += &l0.w.row(self.dense_in + sidx);
            }
        }
        a += &l0.b;
        a
    }

    pub fn forward(&self, input: &NetInput) -> Array2<f64> {
        self.forward_cached(input).0
    }

    pub fn forward_cached(&self, input: &NetInput) -> (Array2<f64>, NetCache) {
        let n_layers = self.layers.len();
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut post = Vec::with_capacity(n_layers - 1);
        let mut a = self.first_layer(input);
        for l in 1..n_layers {
            let h = a.mapv(|v| leaky_relu(v, self.slope));
            let layer = &self.layers[l];
            let next = h.dot(&layer.w) + &layer.b;
            pre.push(a);
            post.push(h);
            a = next;
        }
        (a, NetCache { pre, post })
    }

    /// Gradients of a scalar objective given its gradient `d_out` w.r.t. the
    /// network output. Accumulates into `grads` and returns the gradient
    /// w.r.t. the dense input when `want_input` is set.
    pub fn backward(
        &self,
        input: &NetInput,
        cache: &NetCache,
        d_out: Array2<f64>,
        grads: &mut NetGrads,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let mut delta = d_out;
        for l in (1..self.layers.len()).rev() {
            let g = &mut grads.layers[l];
            g.w += &cache.post[l - 1].t().dot(&delta);
            g.b += &delta.sum_axis(Axis(0));
            let mut back = delta.dot(&self.layers[l].w.t());
            let slope = self.slope;
            Zip::from(&mut back)
                .and(&cache.pre[l - 1])
                .for_each(|d, &p| *d *= leaky_relu_grad(p, slope));
            delta = back;
        }
        let g0 = &mut grads.layers[0];
        if self.dense_in > 0 {
            let gw = input.dense.t().dot(&delta);
            g0.w.slice_mut(s![..self.dense_in, ..]).zip_mut_with(&gw, |a, b| *a += b);
        }
        if let Some(seg) = input.segments {
            for (row, &sidx) in delta.rows().into_iter().zip(seg) {
                let mut target = g0.w.row_mut(self.dense_in + sidx);
                target += &row;
            }
        }
        g0.b += &delta.sum_axis(Axis(0));
        if want_input && self.dense_in > 0 {
            Some(delta.dot(&self.layers[0].w.slice(s![..self.dense_in, ..]).t()))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::array;

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut rng = rng_from_seed(1);
        let l = DenseLayer::init(10, 6, &mut rng);
        let lim = (6.0f64 / 16.0).sqrt();
        assert!(l.w.iter().all(|v| v.abs() <= lim));
        assert!(l.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn onehot_block_equals_dense_product() {
        let mut rng = rng_from_seed(2);
        let net = DenseNet::new(2, 3, &[4], 2, 0.2, &mut rng);
        let x = array![[0.5, -1.0], [2.0, 0.1]];
        let seg = [2usize, 0];
        let sparse = net.forward(&NetInput::new(x.view(), Some(&seg)));

        let mut dense_net = net.clone();
        dense_net.onehot_in = 0;
        dense_net.dense_in = 5;
        let full = array![[0.5, -1.0, 0.0, 0.0, 1.0], [2.0, 0.1, 1.0, 0.0, 0.0]];
        let dense = dense_net.forward(&NetInput::new(full.view(), None));
        assert!((&sparse - &dense).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn onehot_only_network() {
        let mut rng = rng_from_seed(3);
        let net = DenseNet::new(0, 4, &[3], 2, 0.2, &mut rng);
        let empty = Array2::<f64>::zeros((2, 0));
        let seg = [1usize, 3];
        let input = NetInput::new(empty.view(), Some(&seg));
        assert_eq!(input.rows(), 2);
        net.check_input(&input).unwrap();
        assert_eq!(net.forward(&input).dim(), (2, 2));
    }

    #[test]
    fn out_of_range_segment_rejected() {
        let mut rng = rng_from_seed(4);
        let net = DenseNet::new(1, 2, &[3], 1, 0.2, &mut rng);
        let x = array![[0.0]];
        assert!(net.check_input(&NetInput::new(x.view(), Some(&[2]))).is_err());
        assert!(net.check_input(&NetInput::new(x.view(), None)).is_err());
    }
}
