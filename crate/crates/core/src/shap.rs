//! Shapley attributions for black-box vector-valued models.
//!
//! The value of a coalition `S` at a point `x` is the interventional
//! expectation `E_b[f(x_S, b_{~S})]` over the rows `b` of a background
//! matrix. Attributions are computed for all outputs at once.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Player count up to which [`exact_shapley`] enumerates coalitions.
pub const EXACT_MAX_PLAYERS: usize = 20;
pub const DEFAULT_BUDGET: usize = 2048;
/// Rows per model call when evaluating coalitions.
const EVAL_ROWS: usize = 1 << 15;

/// A model `R^K -> R^H` evaluated row-wise.
pub trait Model: Sync {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    /// `rows x K` in, `rows x H` out.
    fn predict(&self, x: &Array2<f64>) -> Array2<f64>;
}

/// Wraps a closure as a [`Model`].
pub struct FnModel<F> {
    pub inputs: usize,
    pub outputs: usize,
    pub f: F,
}

impl<F> Model for FnModel<F>
where
    F: Fn(&Array2<f64>) -> Array2<f64> + Sync,
{
    fn n_inputs(&self) -> usize {
        self.inputs
    }
    fn n_outputs(&self) -> usize {
        self.outputs
    }
    fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        (self.f)(x)
    }
}

pub struct ExplainTarget<'a> {
    pub model: &'a dyn Model,
    /// `B x K` rows standing in for absent features.
    pub background: Array2<f64>,
}

/// Attributions at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapValues {
    /// `H x K`
    pub phi: Array2<f64>,
    /// Background-mean prediction per output.
    pub base: Array1<f64>,
    /// Model output at the explained point.
    pub fx: Array1<f64>,
}

impl<'a> ExplainTarget<'a> {
    pub fn new(model: &'a dyn Model, background: Array2<f64>) -> Result<Self> {
        if background.nrows() == 0 {
            return Err(invalid("background needs at least one row"));
        }
        if background.ncols() != model.n_inputs() {
            return Err(Error::Shape(format!(
                "background has {} columns, model takes {} inputs",
                background.ncols(),
                model.n_inputs()
            )));
        }
        Ok(ExplainTarget { model, background })
    }

    pub fn k(&self) -> usize {
        self.background.ncols()
    }

    pub fn h(&self) -> usize {
        self.model.n_outputs()
    }

    fn check_point(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.k() {
            return Err(Error::Shape(format!("point has {} entries, expected {}", x.len(), self.k())));
        }
        Ok(())
    }

    /// Coalition values, one row per mask (bit `i` set = feature `i` fixed).
    pub fn coalition_values(&self, x: ArrayView1<f64>, masks: &[u64]) -> Array2<f64> {
        let (b, k, h) = (self.background.nrows(), self.k(), self.h());
        let mut out = Array2::zeros((masks.len(), h));
        let per_chunk = (EVAL_ROWS / b).max(1);
        for (c, chunk) in masks.chunks(per_chunk).enumerate() {
            let mut rows = Array2::zeros((chunk.len() * b, k));
            for (m, &mask) in chunk.iter().enumerate() {
                let mut block = rows.slice_mut(ndarray::s![m * b..(m + 1) * b, ..]);
                block.assign(&self.background);
                for i in (0..k).filter(|i| mask >> i & 1 == 1) {
                    block.column_mut(i).fill(x[i]);
                }
            }
            let pred = self.model.predict(&rows);
            for m in 0..chunk.len() {
                let mean = pred
                    .slice(ndarray::s![m * b..(m + 1) * b, ..])
                    .mean_axis(Axis(0))
                    .expect("background rows");
                out.row_mut(c * per_chunk + m).assign(&mean);
            }
        }
        out
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(K - 1) / (C(K, a) a (K - a))` for `1 <= a <= K - 1`.
pub fn shapley_kernel_weight(k: usize, a: usize) -> Result<f64> {
    if a == 0 || a >= k {
        return Err(invalid(format!("coalition size {a} outside 1..={}", k.saturating_sub(1))));
    }
    Ok((k - 1) as f64 / (binomial(k, a) * a as f64 * (k - a) as f64))
}

/// Shapley values by enumerating all `2^K` coalitions.
pub fn exact_shapley(target: &ExplainTarget, x: ArrayView1<f64>) -> Result<ShapValues> {
    target.check_point(x)?;
    let k = target.k();
    if k > EXACT_MAX_PLAYERS {
        return Err(invalid(format!(
            "exact enumeration is limited to {EXACT_MAX_PLAYERS} inputs, got {k}; use kernel_shap"
        )));
    }
    let masks: Vec<u64> = (0..1u64 << k).collect();
    let v = target.coalition_values(x, &masks);
    // weight of a coalition of size s not containing i: s!(K-s-1)!/K!
    let weights: Vec<f64> = (0..k).map(|s| 1.0 / (k as f64 * binomial(k - 1, s))).collect();
    let mut phi = Array2::zeros((target.h(), k));
    for i in 0..k {
        let bit = 1u64 << i;
        for &mask in masks.iter().filter(|&&m| m & bit == 0) {
            let w = weights[mask.count_ones() as usize];
            let diff = &v.row((mask | bit) as usize) - &v.row(mask as usize);
            phi.column_mut(i).scaled_add(w, &diff);
        }
    }
    Ok(ShapValues {
        phi,
        base: v.row(0).to_owned(),
        fx: v.row(masks.len() - 1).to_owned(),
    })
}

/// Groups of coalition sizes sampled together, ordered from the extremes
/// inward. A paired group holds `s` and `K - s`.
fn size_groups(k: usize, paired: bool) -> Vec<Vec<usize>> {
    let mut groups = Vec::new();
    let (mut lo, mut hi) = (1, k - 1);
    while lo <= hi {
        if lo == hi {
            groups.push(vec![lo]);
        } else if paired {
            groups.push(vec![lo, hi]);
        } else {
            groups.push(vec![lo]);
            groups.push(vec![hi]);
        }
        lo += 1;
        hi -= 1;
    }
    groups
}

fn subsets_of_size(k: usize, s: usize) -> Vec<u64> {
    fn rec(k: usize, s: usize, start: usize, acc: u64, out: &mut Vec<u64>) {
        if s == 0 {
            out.push(acc);
            return;
        }
        for i in start..=k - s {
            rec(k, s - 1, i + 1, acc | 1 << i, out);
        }
    }
    let mut out = Vec::new();
    rec(k, s, 0, 0, &mut out);
    out
}

/// Coalitions and their regression weights for a budget.
///
/// Small budgets (under `2K`) sample single coalitions; larger ones pair
/// each draw with its complement. Whole size groups are enumerated while
/// the budget covers their expected share.
fn kernel_design(k: usize, budget: usize, rng: &mut Rng) -> Result<(Vec<u64>, Vec<f64>)> {
    let full = if k >= 63 { usize::MAX } else { (1usize << k) - 2 };
    if budget >= full {
        let mut masks = Vec::with_capacity(full);
        let mut weights = Vec::with_capacity(full);
        for s in 1..k {
            let w = shapley_kernel_weight(k, s)?;
            for m in subsets_of_size(k, s) {
                masks.push(m);
                weights.push(w);
            }
        }
        return Ok((masks, weights));
    }
    if budget < k + 2 {
        return Err(invalid(format!("kernel SHAP budget must be at least K + 2 = {}, got {budget}", k + 2)));
    }
    let groups = size_groups(k, budget >= 2 * k);
    let mass: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|&s| (k - 1) as f64 / (s * (k - s)) as f64).sum())
        .collect();
    let total: f64 = mass.iter().sum();
    let counts: Vec<f64> = groups.iter().map(|g| g.iter().map(|&s| binomial(k, s)).sum()).collect();

    let mut masks = Vec::new();
    let mut weights = Vec::new();
    let mut left = budget;
    let mut mass_left = total;
    let mut next = 0;
    while next < groups.len() {
        let share = mass[next] / mass_left;
        if counts[next] > left as f64 || (left as f64) * share / counts[next] < 1.0 - 1e-8 {
            break;
        }
        for &s in &groups[next] {
            let w = shapley_kernel_weight(k, s)? / total;
            for m in subsets_of_size(k, s) {
                masks.push(m);
                weights.push(w);
            }
        }
        left -= counts[next] as usize;
        mass_left -= mass[next];
        next += 1;
    }
    if left == 0 || next == groups.len() {
        return Ok((masks, weights));
    }

    let rest = &groups[next..];
    let rest_mass = &mass[next..];
    let rest_total: f64 = rest_mass.iter().sum();
    let mut counts_by_mask: HashMap<u64, f64> = HashMap::new();
    let mut order: Vec<u64> = Vec::new();
    let all = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
    let mut draws = 0usize;
    while order.len() < left && draws < 1000 * budget {
        draws += 1;
        let mut r = rng.random::<f64>() * rest_total;
        let mut g = 0;
        while g + 1 < rest.len() && r >= rest_mass[g] {
            r -= rest_mass[g];
            g += 1;
        }
        let s = rest[g][0];
        let mask = sample_indices(rng, k, s).iter().fold(0u64, |acc, i| acc | 1 << i);
        let mut add = vec![mask];
        if rest[g].len() == 2 {
            add.push(all & !mask);
        }
        for m in add {
            if let Some(c) = counts_by_mask.get_mut(&m) {
                *c += 1.0;
            } else if order.len() < left {
                counts_by_mask.insert(m, 1.0);
                order.push(m);
            }
        }
    }
    let sampled: f64 = order.iter().map(|m| counts_by_mask[m]).sum();
    let scale = (mass_left / total) / sampled;
    for m in order {
        masks.push(m);
        weights.push(counts_by_mask[&m] * scale);
    }
    Ok((masks, weights))
}

/// Kernel SHAP: Shapley-kernel weighted least squares over a coalition
/// sample with efficiency imposed exactly. A budget of `2^K - 2` or more
/// enumerates every coalition and reproduces [`exact_shapley`].
pub fn kernel_shap(target: &ExplainTarget, x: ArrayView1<f64>, budget: usize, seed: u64) -> Result<ShapValues> {
    target.check_point(x)?;
    let (k, h) = (target.k(), target.h());
    let ends = target.coalition_values(x, &[0, if k >= 64 { u64::MAX } else { (1u64 << k) - 1 }]);
    let (base, fx) = (ends.row(0).to_owned(), ends.row(1).to_owned());
    let gap = &fx - &base;
    if k == 1 {
        return Ok(ShapValues {
            phi: gap.clone().insert_axis(Axis(1)),
            base,
            fx,
        });
    }
    let mut rng = rng_from_seed(seed);
    let (masks, weights) = kernel_design(k, budget, &mut rng)?;
    let values = target.coalition_values(x, &masks);

    // eliminate the last player through the efficiency constraint
    let p = k - 1;
    let last = 1u64 << p;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DMatrix::<f64>::zeros(p, h);
    let mut z = vec![0.0; p];
    for ((&mask, &w), v) in masks.iter().zip(&weights).zip(values.rows()) {
        let zl = if mask & last != 0 { 1.0 } else { 0.0 };
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = (mask >> i & 1) as f64 - zl;
        }
        for i in 0..p {
            if z[i] == 0.0 {
                continue;
            }
            for j in 0..p {
                a[(i, j)] += w * z[i] * z[j];
            }
            for o in 0..h {
                let y = v[o] - base[o] - zl * gap[o];
                rhs[(i, o)] += w * z[i] * y;
            }
        }
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::Singular(format!(
            "kernel SHAP design over {} coalitions for {k} inputs is rank deficient; raise the budget",
            masks.len()
        )));
    }
    let beta = svd.solve(&rhs, 0.0).map_err(|e| Error::Singular(e.to_string()))?;
    let mut phi = Array2::zeros((h, k));
    for o in 0..h {
        let mut acc = 0.0;
        for i in 0..p {
            phi[[o, i]] = beta[(i, o)];
            acc += beta[(i, o)];
        }
        phi[[o, p]] = gap[o] - acc;
    }
    Ok(ShapValues { phi, base, fx })
}

/// Exact enumeration when the budget covers every coalition and `K` is
/// small enough, kernel SHAP otherwise.
pub fn explain_point(target: &ExplainTarget, x: ArrayView1<f64>, budget: usize, seed: u64) -> Result<ShapValues> {
    let k = target.k();
    if k <= EXACT_MAX_PLAYERS && budget >= (1usize << k) - 2 {
        exact_shapley(target, x)
    } else {
        kernel_shap(target, x, budget, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapReport {
    /// `H x n x K`
    pub shap: Array3<f64>,
    /// `H x K` mean absolute SHAP value per output and input.
    pub mashap: Array2<f64>,
    /// Rows of `mashap` scaled to unit sum; zero rows stay zero.
    pub v: Array2<f64>,
    /// Column means of `v` over its nonzero rows.
    pub v_star: Array1<f64>,
    /// Outputs whose MASHAP row is identically zero.
    pub zero_rows: Vec<usize>,
}

impl ShapReport {
    pub fn from_shap(shap: Array3<f64>) -> Self {
        let (h, _, k) = shap.dim();
        let mashap = shap.mapv(f64::abs).mean_axis(Axis(1)).expect("observations");
        let mut v = mashap.clone();
        let mut zero_rows = Vec::new();
        let mut v_star = Array1::zeros(k);
        for (i, mut row) in v.rows_mut().into_iter().enumerate() {
            let total = row.sum();
            if total > 0.0 {
                row /= total;
                v_star += &row;
            } else {
                row.fill(0.0);
                zero_rows.push(i);
            }
        }
        let kept = h - zero_rows.len();
        if kept > 0 {
            v_star /= kept as f64;
        } else {
            log::warn!("every MASHAP row is zero");
        }
        ShapReport {
            shap,
            mashap,
            v,
            v_star,
            zero_rows,
        }
    }

    /// Inputs by decreasing `v_star`, ties by index.
    pub fn input_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.v_star.len()).collect();
        idx.sort_by(|&a, &b| self.v_star[b].total_cmp(&self.v_star[a]).then(a.cmp(&b)));
        idx
    }

    /// Scaled MASHAP table: one row per output plus an `Average` row.
    /// Columns follow `order`.
    pub fn write_csv<W: Write>(&self, writer: W, outputs: &[String], inputs: &[String], order: &[usize]) -> Result<()> {
        if outputs.len() != self.v.nrows() || inputs.len() != self.v.ncols() {
            return Err(Error::Shape("label counts do not match the report".into()));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["output".to_string()];
        header.extend(order.iter().map(|&j| inputs[j].clone()));
        w.write_record(&header)?;
        for (name, row) in outputs.iter().zip(self.v.rows()) {
            let mut rec = vec![name.clone()];
            rec.extend(order.iter().map(|&j| row[j].to_string()));
            w.write_record(&rec)?;
        }
        let mut rec = vec!["Average".to_string()];
        rec.extend(order.iter().map(|&j| self.v_star[j].to_string()));
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }
}

/// SHAP values for every row of `x` and every output, then MASHAP, the
/// scaled matrix `V` and its column means `v*`.
pub fn scaled_mashap(target: &ExplainTarget, x: &Array2<f64>, budget: usize, seed: u64) -> Result<ShapReport> {
    if x.nrows() == 0 {
        return Err(invalid("nothing to explain"));
    }
    if x.ncols() != target.k() {
        return Err(Error::Shape(format!("rows have {} entries, expected {}", x.ncols(), target.k())));
    }
    let per_row: Vec<ShapValues> = (0..x.nrows())
        .into_par_iter()
        .map(|j| explain_point(target, x.row(j), budget, derive_seed(seed, j as u64)))
        .collect::<Result<_>>()?;
    let (h, n, k) = (target.h(), x.nrows(), target.k());
    let mut shap = Array3::zeros((h, n, k));
    for (j, sv) in per_row.iter().enumerate() {
        shap.slice_mut(ndarray::s![.., j, ..]).assign(&sv.phi);
    }
    Ok(ShapReport::from_shap(shap))
}

/// Greedy farthest-point selection of `count` rows, starting at the
/// location nearest the center of the bounding box. Returns the chosen row
/// indices in selection order.
pub fn select_background_indices(locations: &Array2<f64>, count: usize) -> Result<Vec<usize>> {
    let n = locations.nrows();
    if locations.ncols() != 2 {
        return Err(Error::Shape("locations must be n x 2".into()));
    }
    if count == 0 || count > n {
        return Err(invalid(format!("background size must be in 1..={n}, got {count}")));
    }
    let col_range = |c: usize| {
        locations
            .column(c)
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    };
    let ((x0, x1), (y0, y1)) = (col_range(0), col_range(1));
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let dist2 = |i: usize, x: f64, y: f64| (locations[[i, 0]] - x).powi(2) + (locations[[i, 1]] - y).powi(2);

    let mut first = 0;
    for i in 1..n {
        if dist2(i, cx, cy) < dist2(first, cx, cy) {
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    let mut min_d: Vec<f64> = (0..n).map(|i| dist2(i, locations[[first, 0]], locations[[first, 1]])).collect();
    while chosen.len() < count {
        let mut best = usize::MAX;
        for i in (0..n).filter(|&i| !taken[i]) {
            if best == usize::MAX || min_d[i] > min_d[best] {
                best = i;
            }
        }
        taken[best] = true;
        chosen.push(best);
        let (bx, by) = (locations[[best, 0]], locations[[best, 1]]);
        for (i, d) in min_d.iter_mut().enumerate() {
            *d = d.min(dist2(i, bx, by));
        }
    }
    Ok(chosen)
}

/// Rows of `x` picked by [`select_background_indices`].
pub fn select_background(locations: &Array2<f64>, x: &Array2<f64>, count: usize) -> Result<Array2<f64>> {
    if locations.nrows() != x.nrows() {
        return Err(Error::Shape("locations and data row counts differ".into()));
    }
    let idx = select_background_indices(locations, count)?;
    Ok(x.select(Axis(0), &idx))
}
