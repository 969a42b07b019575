use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::variogram::VariogramModel;
use crate::error::{invalid, Error, Result};
use crate::linalg::{lu_solve, JITTER_LADDER};

pub const DEFAULT_NEIGHBORS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KrigingKind {
    /// Unknown constant mean.
    Ordinary,
    /// Mean linear in the coordinates.
    Universal,
}

impl KrigingKind {
    fn drift_terms(self) -> usize {
        match self {
            KrigingKind::Ordinary => 1,
            KrigingKind::Universal => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            KrigingKind::Ordinary => "ordinary",
            KrigingKind::Universal => "universal",
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn point(m: &Array2<f64>, i: usize) -> [f64; 2] {
    [m[[i, 0]], m[[i, 1]]]
}

/// Indices of the `k` training points nearest to `target`, nearest first.
pub fn nearest_neighbors(train: &Array2<f64>, target: [f64; 2], k: usize) -> Vec<usize> {
    let d: Vec<f64> = (0..train.nrows()).map(|i| dist(point(train, i), target)).collect();
    let mut idx: Vec<usize> = (0..train.nrows()).collect();
    let k = k.min(idx.len());
    let cmp = |a: &usize, b: &usize| d[*a].total_cmp(&d[*b]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// Kriging weights of `sites` for predicting at `target`.
///
/// Drift columns are `1` and, for universal kriging, the coordinates
/// relative to the target. The covariance block gets the jitter ladder
/// (relative to `sill + nugget`) if the plain system cannot be solved.
pub fn kriging_weights(sites: &Array2<f64>, target: [f64; 2], vgm: &VariogramModel, kind: KrigingKind) -> Result<Array1<f64>> {
    let k = sites.nrows();
    let p = kind.drift_terms();
    if k < p {
        return Err(invalid(format!("{} kriging needs at least {p} points, got {k}", kind.label())));
    }
    let size = k + p;
    let mut a = DMatrix::<f64>::zeros(size, size);
    let mut b = DVector::<f64>::zeros(size);
    for i in 0..k {
        let si = point(sites, i);
        for j in 0..=i {
            let c = vgm.covariance(dist(si, point(sites, j)));
            a[(i, j)] = c;
            a[(j, i)] = c;
        }
        b[i] = vgm.covariance(dist(si, target));
        let drift = [1.0, si[0] - target[0], si[1] - target[1]];
        for t in 0..p {
            a[(i, k + t)] = drift[t];
            a[(k + t, i)] = drift[t];
        }
    }
    // drift of the target itself: 1 and zero offsets
    b[k] = 1.0;
    if let Some(x) = lu_solve(&a, &b) {
        return Ok(Array1::from_iter(x.iter().take(k).copied()));
    }
    let scale = vgm.sill + vgm.nugget;
    for &mult in JITTER_LADDER.iter() {
        let mut aj = a.clone();
        for i in 0..k {
            aj[(i, i)] += mult * scale;
        }
        if let Some(x) = lu_solve(&aj, &b) {
            log::debug!("kriging system needed jitter {:e}", mult * scale);
            return Ok(Array1::from_iter(x.iter().take(k).copied()));
        }
    }
    Err(Error::Singular(format!(
        "{} kriging system on {k} points stays singular after jitter up to {:e}",
        kind.label(),
        JITTER_LADDER[JITTER_LADDER.len() - 1] * scale
    )))
}

/// Kriging predictions at every target from its `neighbors` nearest
/// training points.
pub fn krige(
    train_locations: &Array2<f64>,
    train_values: &Array1<f64>,
    targets: &Array2<f64>,
    vgm: &VariogramModel,
    kind: KrigingKind,
    neighbors: usize,
) -> Result<Array1<f64>> {
    vgm.validate()?;
    if train_locations.ncols() != 2 || targets.ncols() != 2 {
        return Err(Error::Shape("locations must be n x 2".into()));
    }
    if train_locations.nrows() != train_values.len() {
        return Err(Error::Shape("one training value per location required".into()));
    }
    if neighbors == 0 || train_values.is_empty() {
        return Err(invalid("kriging needs training data and at least one neighbor"));
    }
    let mut out = Array1::zeros(targets.nrows());
    for t in 0..targets.nrows() {
        let target = point(targets, t);
        let idx = nearest_neighbors(train_locations, target, neighbors);
        let sites = train_locations.select(ndarray::Axis(0), &idx);
        let w = kriging_weights(&sites, target, vgm, kind)?;
        out[t] = idx.iter().zip(w.iter()).map(|(&i, wi)| wi * train_values[i]).sum();
    }
    Ok(out)
}

pub fn ordinary_kriging(
    train_locations: &Array2<f64>,
    train_values: &Array1<f64>,
    targets: &Array2<f64>,
    vgm: &VariogramModel,
    neighbors: usize,
) -> Result<Array1<f64>> {
    krige(train_locations, train_values, targets, vgm, KrigingKind::Ordinary, neighbors)
}

pub fn universal_kriging(
    train_locations: &Array2<f64>,
    train_values: &Array1<f64>,
    targets: &Array2<f64>,
    vgm: &VariogramModel,
    neighbors: usize,
) -> Result<Array1<f64>> {
    krige(train_locations, train_values, targets, vgm, KrigingKind::Universal, neighbors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kriging::variogram::Family;
    use ndarray::array;

    fn vgm() -> VariogramModel {
        VariogramModel::new(Family::Exponential, 1.0, 5.0, 0.0, None).unwrap()
    }

    fn sites() -> Array2<f64> {
        array![[0.0, 0.0], [3.0, 1.0], [1.0, 4.0], [5.0, 5.0], [2.0, 2.5], [4.5, 0.5]]
    }

    #[test]
    fn neighbors_sorted_by_distance() {
        let idx = nearest_neighbors(&sites(), [5.0, 4.0], 3);
        assert_eq!(idx, vec![3, 4, 5]);
    }

    #[test]
    fn ordinary_weights_sum_to_one_and_universal_reproduce_drift() {
        let s = sites();
        let target = [2.2, 1.7];
        let w = kriging_weights(&s, target, &vgm(), KrigingKind::Ordinary).unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-10);
        let w = kriging_weights(&s, target, &vgm(), KrigingKind::Universal).unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-10);
        assert!((w.dot(&s.column(0)) - target[0]).abs() < 1e-10);
        assert!((w.dot(&s.column(1)) - target[1]).abs() < 1e-10);
    }

    #[test]
    fn constant_data_gives_constant_prediction() {
        let s = sites();
        let v = Array1::from_elem(6, 3.25);
        let t = array![[1.0, 1.0], [9.0, 9.0]];
        for p in ordinary_kriging(&s, &v, &t, &vgm(), 50).unwrap() {
            assert!((p - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn planar_data_reproduced_by_universal() {
        let s = sites();
        let v = s.column(0).mapv(|x| 2.0 * x) - s.column(1) + 7.0;
        let tiny = VariogramModel::new(Family::Exponential, 1e-6, 5.0, 0.0, None).unwrap();
        let t = array![[1.5, 3.0], [4.0, 4.0], [8.0, -2.0]];
        let p = universal_kriging(&s, &v, &t, &tiny, 50).unwrap();
        for (i, r) in t.rows().into_iter().enumerate() {
            assert!((p[i] - (2.0 * r[0] - r[1] + 7.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_points_for_universal() {
        let s = array![[0.0, 0.0], [1.0, 1.0]];
        assert!(kriging_weights(&s, [0.5, 0.5], &vgm(), KrigingKind::Universal).is_err());
    }
}
