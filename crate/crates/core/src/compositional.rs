//! Log-ratio coordinates for strictly positive compositions.
//!
//! The ilr basis is the Helmert one: column `j` (0-based, `j < D - 1`) has
//! `1/sqrt((j+1)(j+2))` in its first `j + 1` entries, `-(j+1)/sqrt((j+1)(j+2))`
//! in entry `j + 1`, and zeros below. Its columns are orthonormal and
//! orthogonal to the ones vector, so `ilr = V^T clr` and `clr = V ilr`.

use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{invalid, Error, Result};

fn check_parts(x: ArrayView1<f64>, row: usize) -> Result<()> {
    match x.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        Some(col) => Err(Error::NonPositivePart { row, col }),
        None if x.len() < 2 => Err(invalid("a composition needs at least two parts")),
        None => Ok(()),
    }
}

/// `D x (D - 1)` Helmert basis of the clr hyperplane.
pub fn helmert_basis(parts: usize) -> Array2<f64> {
    let mut v = Array2::zeros((parts, parts.saturating_sub(1)));
    for j in 0..parts.saturating_sub(1) {
        let k = (j + 1) as f64;
        let norm = (k * (k + 1.0)).sqrt();
        for i in 0..=j {
            v[[i, j]] = 1.0 / norm;
        }
        v[[j + 1, j]] = -k / norm;
    }
    v
}

pub fn clr(x: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_parts(x, 0)?;
    let logs = x.mapv(f64::ln);
    let mean = logs.mean().expect("nonempty");
    Ok(logs - mean)
}

pub fn ilr(x: ArrayView1<f64>) -> Result<Array1<f64>> {
    let c = clr(x)?;
    Ok(helmert_basis(x.len()).t().dot(&c))
}

pub fn ilr_to_clr(y: ArrayView1<f64>) -> Array1<f64> {
    helmert_basis(y.len() + 1).dot(&y)
}

/// Composition closed to unit sum.
pub fn ilr_inverse(y: ArrayView1<f64>) -> Array1<f64> {
    let c = ilr_to_clr(y);
    let shift = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = c.mapv(|v| (v - shift).exp());
    let total = e.sum();
    e / total
}

/// Closure to unit row sums.
pub fn closure(x: &Array2<f64>) -> Array2<f64> {
    let sums = x.sum_axis(Axis(1)).insert_axis(Axis(1));
    x / &sums
}

/// Row-wise clr; errors name the first nonpositive entry.
pub fn clr_matrix(x: &Array2<f64>) -> Result<Array2<f64>> {
    for (row, r) in x.rows().into_iter().enumerate() {
        check_parts(r, row)?;
    }
    let logs = x.mapv(f64::ln);
    let means = logs.mean_axis(Axis(1)).expect("parts").insert_axis(Axis(1));
    Ok(logs - &means)
}

pub fn ilr_matrix(x: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(clr_matrix(x)?.dot(&helmert_basis(x.ncols())))
}

pub fn ilr_to_clr_matrix(y: &Array2<f64>) -> Array2<f64> {
    y.dot(&helmert_basis(y.ncols() + 1).t())
}

pub fn ilr_inverse_matrix(y: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((y.nrows(), y.ncols() + 1));
    for (mut o, r) in out.rows_mut().into_iter().zip(y.rows()) {
        o.assign(&ilr_inverse(r));
    }
    out
}

/// Raw concentrations with optional coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionTable {
    pub parts: Vec<String>,
    /// From columns named `sx` and `sy` when present.
    pub locations: Option<Array2<f64>>,
    pub values: Array2<f64>,
}

/// Reads a CSV whose header names the parts. Columns `sx` and `sy` are taken
/// as coordinates; every other column is a part and must be positive.
pub fn read_composition_csv<R: Read>(reader: R) -> Result<CompositionTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let sx = header.iter().position(|h| h == "sx");
    let sy = header.iter().position(|h| h == "sy");
    if sx.is_some() != sy.is_some() {
        return Err(invalid("coordinates need both `sx` and `sy` columns"));
    }
    let part_cols: Vec<usize> = (0..header.len()).filter(|&c| Some(c) != sx && Some(c) != sy).collect();
    if part_cols.len() < 2 {
        return Err(invalid("a composition needs at least two parts"));
    }
    let mut locs = Vec::new();
    let mut vals = Vec::new();
    let mut n = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| -> Result<f64> {
            rec.get(c)
                .ok_or_else(|| invalid(format!("row {row} is short")))?
                .parse::<f64>()
                .map_err(|_| invalid(format!("row {row}, column `{}` is not a number", header[c])))
        };
        if let (Some(a), Some(b)) = (sx, sy) {
            locs.push(field(a)?);
            locs.push(field(b)?);
        }
        for (col, &c) in part_cols.iter().enumerate() {
            let v = field(c)?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NonPositivePart { row, col });
            }
            vals.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(invalid("composition table has no rows"));
    }
    let values = Array2::from_shape_vec((n, part_cols.len()), vals).map_err(|e| Error::Shape(e.to_string()))?;
    let locations = match sx {
        Some(_) => Some(Array2::from_shape_vec((n, 2), locs).map_err(|e| Error::Shape(e.to_string()))?),
        None => None,
    };
    Ok(CompositionTable {
        parts: part_cols.iter().map(|&c| header[c].clone()).collect(),
        locations,
        values,
    })
}

pub fn load_composition_csv(path: impl AsRef<Path>) -> Result<CompositionTable> {
    read_composition_csv(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn clr_examples() {
        assert_eq!(clr(array![1.0, 1.0, 1.0].view()).unwrap(), array![0.0, 0.0, 0.0]);
        let c = clr(array![std::f64::consts::E, 1.0, 1.0].view()).unwrap();
        let want = [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0];
        for (a, b) in c.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(clr(array![1.0, 0.0].view()).is_err());
    }

    #[test]
    fn helmert_columns() {
        let v = helmert_basis(3);
        let s2 = 2f64.sqrt();
        let s6 = 6f64.sqrt();
        let want = array![[1.0 / s2, 1.0 / s6], [-1.0 / s2, 1.0 / s6], [0.0, -2.0 / s6]];
        assert!((&v - &want).iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn basis_orthonormal_and_centered() {
        for d in 2..12 {
            let v = helmert_basis(d);
            let g = v.t().dot(&v);
            for i in 0..d - 1 {
                for j in 0..d - 1 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((g[[i, j]] - want).abs() < 1e-12);
                }
            }
            assert!(v.sum_axis(Axis(0)).iter().all(|s| s.abs() < 1e-12));
        }
    }

    #[test]
    fn uniform_composition_has_zero_ilr() {
        assert!(ilr(array![3.0, 3.0, 3.0, 3.0].view()).unwrap().iter().all(|v| v.abs() < 1e-15));
        assert_eq!(ilr_to_clr(array![0.0, 0.0].view()), array![0.0, 0.0, 0.0]);
    }

    #[test]
    fn table_reader_reports_bad_entry() {
        let ok = "sx,sy,Al,Ca,Fe\n1,2,10,20,30\n3,4,1,1,2\n";
        let t = read_composition_csv(ok.as_bytes()).unwrap();
        assert_eq!(t.parts, vec!["Al", "Ca", "Fe"]);
        assert_eq!(t.locations.unwrap(), array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(t.values[[0, 2]], 30.0);

        let bad = "Al,Ca,Fe\n1,2,3\n4,0,6\n";
        match read_composition_csv(bad.as_bytes()) {
            Err(Error::NonPositivePart { row, col }) => assert_eq!((row, col), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
        let neg = "Al,Ca\n1,-2\n";
        assert!(read_composition_csv(neg.as_bytes()).is_err());
    }

    #[test]
    fn matrix_forms_agree_with_rows() {
        let x = array![[1.0, 2.0, 3.0, 4.0], [0.5, 0.1, 9.0, 2.0]];
        let y = ilr_matrix(&x).unwrap();
        for (i, r) in x.rows().into_iter().enumerate() {
            let yi = ilr(r).unwrap();
            assert!((&yi - &y.row(i)).iter().all(|v| v.abs() < 1e-13));
            let ci = clr(r).unwrap();
            assert!((&ci - &ilr_to_clr_matrix(&y).row(i)).iter().all(|v| v.abs() < 1e-13));
        }
        let back = ilr_inverse_matrix(&y);
        assert!((&back - &closure(&x)).iter().all(|v| v.abs() < 1e-13));
    }
}
