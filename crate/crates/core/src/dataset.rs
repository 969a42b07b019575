//! Spatial datasets and their CSV layout `sx,sy,z1..zd[,x1..xd][,cluster]`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Domain2D {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let d = Domain2D {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        d.validate()?;
        Ok(d)
    }

    /// The `[0, side] x [0, side]` square.
    pub fn square(side: f64) -> Result<Self> {
        Self::new(0.0, side, 0.0, side)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(invalid(format!(
                "domain needs x_min < x_max and y_min < y_max with finite bounds, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        ]
    }

    /// Smallest domain containing every row of an `n x 2` location matrix.
    /// Degenerate extents are widened by one unit so the result stays valid.
    pub fn bounding(locations: &Array2<f64>) -> Result<Self> {
        if locations.nrows() == 0 || locations.ncols() != 2 {
            return Err(Error::Shape("locations must be a nonempty n x 2 matrix".into()));
        }
        let col = |j: usize| {
            locations.column(j).iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
        };
        let (mut x0, mut x1) = col(0);
        let (mut y0, mut y1) = col(1);
        if x0 == x1 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y0 == y1 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        Self::new(x0, x1, y0, y1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialDataset {
    /// `n x 2` coordinates.
    pub locations: Array2<f64>,
    /// Observed `n x d` matrix, absent for latent-only simulations.
    pub x: Option<Array2<f64>>,
    /// Ground-truth `n x d` latents when known.
    pub z: Option<Array2<f64>>,
    /// Cluster index per location, `1..=k`.
    pub cluster_labels: Option<Vec<usize>>,
}

impl SpatialDataset {
    pub fn new(
        locations: Array2<f64>,
        x: Option<Array2<f64>>,
        z: Option<Array2<f64>>,
        cluster_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let ds = SpatialDataset {
            locations,
            x,
            z,
            cluster_labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.locations.nrows();
        if n == 0 || self.locations.ncols() != 2 {
            return Err(Error::Shape(format!(
                "locations must be n x 2 with n >= 1, got {:?}",
                self.locations.dim()
            )));
        }
        for (name, m) in [("x", &self.x), ("z", &self.z)] {
            if let Some(m) = m {
                if m.nrows() != n || m.ncols() == 0 {
                    return Err(Error::Shape(format!(
                        "{name} has shape {:?}, expected {n} rows and at least one column",
                        m.dim()
                    )));
                }
            }
        }
        if let Some(l) = &self.cluster_labels {
            if l.len() != n {
                return Err(Error::Shape(format!(
                    "cluster labels have length {}, expected {n}",
                    l.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.locations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn observed(&self) -> Result<&Array2<f64>> {
        self.x
            .as_ref()
            .ok_or_else(|| invalid("dataset has no observed columns"))
    }

    pub fn latents(&self) -> Result<&Array2<f64>> {
        self.z
            .as_ref()
            .ok_or_else(|| invalid("dataset has no ground-truth latent columns"))
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> SpatialDataset {
        let take = |m: &Array2<f64>| m.select(ndarray::Axis(0), rows);
        SpatialDataset {
            locations: take(&self.locations),
            x: self.x.as_ref().map(take),
            z: self.z.as_ref().map(take),
            cluster_labels: self
                .cluster_labels
                .as_ref()
                .map(|l| rows.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.validate()?;
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["sx".to_string(), "sy".to_string()];
        if let Some(z) = &self.z {
            header.extend((1..=z.ncols()).map(|j| format!("z{j}")));
        }
        if let Some(x) = &self.x {
            header.extend((1..=x.ncols()).map(|j| format!("x{j}")));
        }
        if self.cluster_labels.is_some() {
            header.push("cluster".into());
        }
        w.write_record(&header)?;
        let push_row = |rec: &mut Vec<String>, row: ArrayView1<f64>| {
            rec.extend(row.iter().map(|v| format!("{v}")));
        };
        for i in 0..self.len() {
            let mut rec = Vec::with_capacity(header.len());
            push_row(&mut rec, self.locations.row(i));
            if let Some(z) = &self.z {
                push_row(&mut rec, z.row(i));
            }
            if let Some(x) = &self.x {
                push_row(&mut rec, x.row(i));
            }
            if let Some(l) = &self.cluster_labels {
                rec.push(l[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let find = |name: &str| header.iter().position(|h| h == name);
        let sx = find("sx").ok_or_else(|| invalid("csv header lacks `sx`"))?;
        let sy = find("sy").ok_or_else(|| invalid("csv header lacks `sy`"))?;
        let numbered = |prefix: char| -> Vec<usize> {
            let mut cols = Vec::new();
            for j in 1.. {
                match find(&format!("{prefix}{j}")) {
                    Some(c) => cols.push(c),
                    None => break,
                }
            }
            cols
        };
        let zc = numbered('z');
        let xc = numbered('x');
        let cc = find("cluster");

        let mut loc = Vec::new();
        let mut zv = Vec::new();
        let mut xv = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let get = |c: usize| -> Result<f64> {
                let s = rec.get(c).unwrap_or("").trim();
                s.parse::<f64>().map_err(|_| {
                    invalid(format!("row {row}, column `{}`: cannot parse `{s}`", header[c]))
                })
            };
            loc.push(get(sx)?);
            loc.push(get(sy)?);
            for &c in &zc {
                zv.push(get(c)?);
            }
            for &c in &xc {
                xv.push(get(c)?);
            }
            if let Some(c) = cc {
                let s = rec.get(c).unwrap_or("").trim();
                labels.push(s.parse::<usize>().map_err(|_| {
                    invalid(format!("row {row}: cannot parse cluster label `{s}`"))
                })?);
            }
        }
        let n = loc.len() / 2;
        let mat = |v: Vec<f64>, d: usize| -> Result<Option<Array2<f64>>> {
            if d == 0 {
                return Ok(None);
            }
            Array2::from_shape_vec((n, d), v)
                .map(Some)
                .map_err(|e| Error::Shape(e.to_string()))
        };
        SpatialDataset::new(
            Array2::from_shape_vec((n, 2), loc).map_err(|e| Error::Shape(e.to_string()))?,
            mat(xv, xc.len())?,
            mat(zv, zc.len())?,
            cc.map(|_| labels),
        )
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_inverted_domain() {
        assert!(Domain2D::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(Domain2D::new(0.0, 1.0, 2.0, 2.0).is_err());
        assert!(Domain2D::new(0.0, f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = SpatialDataset::new(
            array![[0.1, 99.9], [1.0 / 3.0, 2.0]],
            Some(array![[1e-300, -2.5], [3.0, 4.0]]),
            Some(array![[0.5, 0.25], [-1.0, std::f64::consts::PI]]),
            Some(vec![1, 2]),
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sx,sy,z1,z2,x1,x2,cluster\n"));
        let back = SpatialDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn row_count_mismatch_rejected() {
        let r = SpatialDataset::new(array![[0.0, 0.0]], Some(array![[1.0], [2.0]]), None, None);
        assert!(r.is_err());
    }

    #[test]
    fn unparsable_cell_reports_column() {
        let text = "sx,sy,x1\n0,0,abc\n";
        let err = SpatialDataset::read_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("x1"));
    }
}
