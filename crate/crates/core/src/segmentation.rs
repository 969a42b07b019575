//! Rectangular-grid segmentation used as the auxiliary variable `u(s)`.
//!
//! Cells are half-open `[a, b)` except along the upper edges of the domain,
//! which are closed so every in-domain point lands in exactly one cell. Cells
//! without observations are dropped and the remaining ones re-indexed in
//! cell-id order (`id = iy * nx + ix`).

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Domain2D;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    /// Fixed number of cells along x and y.
    Cells { nx: usize, ny: usize },
    /// Square cells of the given side, anchored at `(x_min, y_min)`.
    CellSize(f64),
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSpec::Cells { nx, ny } => write!(f, "{nx}x{ny}"),
            GridSpec::CellSize(s) => write!(f, "cell-size {s}"),
        }
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    /// Parses `20x20`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| invalid(format!("grid must look like `20x20`, got `{s}`")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| invalid(format!("bad grid count `{t}`")))
        };
        let g = GridSpec::Cells {
            nx: parse(a)?,
            ny: parse(b)?,
        };
        g.validate()?;
        Ok(g)
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GridSpec::Cells { nx, ny } if nx == 0 || ny == 0 => {
                Err(invalid("grid cell counts must be positive"))
            }
            GridSpec::CellSize(s) if !(s > 0.0 && s.is_finite()) => {
                Err(invalid(format!("cell size must be positive, got {s}")))
            }
            _ => Ok(()),
        }
    }
}

/// Grid geometry plus the kept (nonempty) cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEncoding {
    pub domain: Domain2D,
    pub nx: usize,
    pub ny: usize,
    pub cell_w: f64,
    pub cell_h: f64,
    /// Cell ids with at least one training observation, ascending.
    pub kept_cells: Vec<usize>,
    /// Column of `u` for each encoded observation.
    pub segments: Vec<usize>,
}

impl SegmentEncoding {
    /// Number of one-hot columns `m`.
    pub fn m(&self) -> usize {
        self.kept_cells.len()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Dense `n x m` one-hot matrix.
    pub fn u(&self) -> Array2<f64> {
        let mut u = Array2::zeros((self.len(), self.m()));
        for (i, &s) in self.segments.iter().enumerate() {
            u[[i, s]] = 1.0;
        }
        u
    }

    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let ix = (((x - self.domain.x_min) / self.cell_w).floor() as usize).min(self.nx - 1);
        let iy = (((y - self.domain.y_min) / self.cell_h).floor() as usize).min(self.ny - 1);
        (ix, iy)
    }

    fn cell_center(&self, id: usize) -> (f64, f64) {
        let (ix, iy) = (id % self.nx, id / self.nx);
        (
            self.domain.x_min + (ix as f64 + 0.5) * self.cell_w,
            self.domain.y_min + (iy as f64 + 0.5) * self.cell_h,
        )
    }

    /// Cell id (`iy * nx + ix`) of every row.
    pub fn cell_ids(&self, locations: &Array2<f64>) -> Result<Vec<usize>> {
        if locations.ncols() != 2 {
            return Err(Error::Shape("locations must be n x 2".into()));
        }
        locations
            .rows()
            .into_iter()
            .enumerate()
            .map(|(row, p)| {
                if !self.domain.contains(p[0], p[1]) {
                    return Err(Error::OutsideDomain { row });
                }
                let (ix, iy) = self.cell_of(p[0], p[1]);
                Ok(iy * self.nx + ix)
            })
            .collect()
    }

    /// Segment columns for new locations against the kept cells. A location
    /// whose cell was dropped maps to the kept cell with the nearest center
    /// (lowest id on ties).
    pub fn assign(&self, locations: &Array2<f64>) -> Result<Vec<usize>> {
        let ids = self.cell_ids(locations)?;
        Ok(ids
            .into_iter()
            .map(|id| match self.kept_cells.binary_search(&id) {
                Ok(col) => col,
                Err(_) => {
                    let (cx, cy) = self.cell_center(id);
                    let mut best = 0;
                    let mut best_d = f64::INFINITY;
                    for (col, &k) in self.kept_cells.iter().enumerate() {
                        let (kx, ky) = self.cell_center(k);
                        let d = (kx - cx).powi(2) + (ky - cy).powi(2);
                        if d < best_d {
                            best_d = d;
                            best = col;
                        }
                    }
                    best
                }
            })
            .collect())
    }
}

pub fn encode_segments(locations: &Array2<f64>, domain: &Domain2D, grid: GridSpec) -> Result<SegmentEncoding> {
    domain.validate()?;
    grid.validate()?;
    if locations.nrows() == 0 {
        return Err(invalid("no locations to segment"));
    }
    let (nx, ny, cell_w, cell_h) = match grid {
        GridSpec::Cells { nx, ny } => (nx, ny, domain.width() / nx as f64, domain.height() / ny as f64),
        GridSpec::CellSize(s) => (
            ((domain.width() / s).ceil() as usize).max(1),
            ((domain.height() / s).ceil() as usize).max(1),
            s,
            s,
        ),
    };
    let mut enc = SegmentEncoding {
        domain: *domain,
        nx,
        ny,
        cell_w,
        cell_h,
        kept_cells: Vec::new(),
        segments: Vec::new(),
    };
    let ids = enc.cell_ids(locations)?;
    let mut kept = ids.clone();
    kept.sort_unstable();
    kept.dedup();
    enc.segments = ids
        .iter()
        .map(|id| kept.binary_search(id).expect("id present"))
        .collect();
    enc.kept_cells = kept;
    Ok(enc)
}
