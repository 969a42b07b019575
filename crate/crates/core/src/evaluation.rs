//! Mean correlation coefficient between estimated and true latents.

use std::io::Write;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Pearson correlation of every column of `z_hat` with every column of `z`.
pub fn correlation_matrix(z_hat: &Array2<f64>, z: &Array2<f64>) -> Result<Array2<f64>> {
    let n = z_hat.nrows();
    if n != z.nrows() {
        return Err(Error::Shape("z_hat and z need the same number of rows".into()));
    }
    if n < 2 {
        return Err(invalid("correlation needs at least two rows"));
    }
    let center = |a: &Array2<f64>, offset: usize| -> Result<Array2<f64>> {
        let mean = a.mean_axis(Axis(0)).expect("rows");
        let mut c = a - &mean;
        for (j, mut col) in c.columns_mut().into_iter().enumerate() {
            let ss = col.dot(&col);
            if !(ss > 0.0) {
                return Err(Error::ZeroVariance(offset + j));
            }
            col /= ss.sqrt();
        }
        Ok(c)
    };
    let a = center(z_hat, 0)?;
    let b = center(z, z_hat.ncols())?;
    Ok(a.t().dot(&b).mapv(|v| v.clamp(-1.0, 1.0)))
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian
/// method with potentials). Returns `col[row]`.
pub fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "square cost matrix");
    // 1-based potentials; p[j] is the row matched to column j
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        col[p[j] - 1] = j - 1;
    }
    col
}

/// Mean over rows of `|K|` along the best permutation.
pub fn mcc(k: &Array2<f64>) -> Result<f64> {
    let d = k.nrows();
    if d == 0 || d != k.ncols() {
        return Err(Error::Shape("mcc needs a nonempty square matrix".into()));
    }
    let abs = k.mapv(f64::abs);
    let assignment = hungarian(&abs.mapv(|v| 1.0 - v));
    // summing in sorted order makes the result exactly invariant to row order
    let mut picked: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| abs[[i, j]]).collect();
    picked.sort_by(f64::total_cmp);
    Ok(picked.iter().sum::<f64>() / d as f64)
}

/// Exhaustive search over all `d!` permutations.
pub fn mcc_brute_force(k: &Array2<f64>) -> f64 {
    fn search(abs: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let d = abs.nrows();
        if row == d {
            *best = best.max(acc);
            return;
        }
        for j in 0..d {
            if !used[j] {
                used[j] = true;
                search(abs, row + 1, used, acc + abs[[row, j]], best);
                used[j] = false;
            }
        }
    }
    let abs = k.mapv(f64::abs);
    let mut best = f64::NEG_INFINITY;
    search(&abs, 0, &mut vec![false; k.nrows()], 0.0, &mut best);
    best / k.nrows() as f64
}

pub fn mcc_of(z_hat: &Array2<f64>, z: &Array2<f64>) -> Result<f64> {
    mcc(&correlation_matrix(z_hat, z)?)
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MccRow {
    pub setting: u8,
    pub layers: usize,
    pub seed: u64,
    pub method: String,
    pub mcc: f64,
}

/// `setting,layers,seed,method,mcc`, in the given order.
pub fn write_mcc_csv<W: Write>(rows: &[MccRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["setting", "layers", "seed", "method", "mcc"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_averages_middle_pair() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
    use crate::rng::rng_from_seed;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
    }

    #[test]
    fn self_and_negated_correlation() {
        let z = random(40, 3, 1);
        let k = correlation_matrix(&z, &z).unwrap();
        for i in 0..3 {
            assert!((k[[i, i]] - 1.0).abs() < 1e-12);
        }
        let k = correlation_matrix(&(-&z), &z).unwrap();
        for i in 0..3 {
            assert!((k[[i, i]] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_matches_textbook_formula() {
        let a = random(50, 3, 2);
        let b = random(50, 3, 3);
        let k = correlation_matrix(&a, &b).unwrap();
        let n = 50.0;
        for i in 0..3 {
            for j in 0..3 {
                let (x, y) = (a.column(i), b.column(j));
                let (mx, my) = (x.sum() / n, y.sum() / n);
                let cov: f64 = x.iter().zip(y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / (n - 1.0);
                let sx = (x.iter().map(|p| (p - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                let sy = (y.iter().map(|q| (q - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                assert!((k[[i, j]] - cov / (sx * sy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_variance_column_named() {
        let mut a = random(10, 2, 4);
        a.column_mut(1).fill(3.0);
        match correlation_matrix(&a, &random(10, 2, 5)) {
            Err(Error::ZeroVariance(c)) => assert_eq!(c, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mcc_identity_and_antidiagonal() {
        assert_eq!(mcc(&Array2::eye(3)).unwrap(), 1.0);
        let k = array![[0.0, 0.0, -1.0], [0.0, -1.0, 0.0], [-1.0, 0.0, 0.0]];
        assert_eq!(mcc(&k).unwrap(), 1.0);
    }

    #[test]
    fn hungarian_matches_brute_force_5x5() {
        let mut rng = rng_from_seed(6);
        for _ in 0..200 {
            let k = Array2::from_shape_simple_fn((5, 5), || rng.random_range(-1.0..1.0));
            assert!((mcc(&k).unwrap() - mcc_brute_force(&k)).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_is_well_separated() {
        let z = random(5000, 3, 7);
        let noise = random(5000, 3, 8);
        assert!(mcc_of(&noise, &z).unwrap() < 0.1);
    }

    #[test]
    fn csv_rows() {
        let rows = vec![MccRow {
            setting: 1,
            layers: 2,
            seed: 3,
            method: "ivae".into(),
            mcc: 0.5,
        }];
        let mut buf = Vec::new();
        write_mcc_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "setting,layers,seed,method,mcc\n1,2,3,ivae,0.5\n");
    }
}
