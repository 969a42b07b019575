use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::random_fields::{matern_correlation, MaternParams};

/// Shape grid searched when fitting Matern variograms.
pub const MATERN_NU_GRID: [f64; 6] = [0.3, 0.5, 1.0, 1.5, 2.0, 3.0];
pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Spherical,
    Matern,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Exponential, Family::Spherical, Family::Matern];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub family: Family,
    /// Partial sill.
    pub sill: f64,
    pub range: f64,
    pub nugget: f64,
    /// Matern shape; unused by the other families.
    pub nu: Option<f64>,
}

impl VariogramModel {
    pub fn new(family: Family, sill: f64, range: f64, nugget: f64, nu: Option<f64>) -> Result<Self> {
        let m = VariogramModel {
            family,
            sill,
            range,
            nugget,
            nu,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sill > 0.0 && self.sill.is_finite()) || !(self.range > 0.0 && self.range.is_finite()) {
            return Err(invalid("variogram sill and range must be positive"));
        }
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(invalid("variogram nugget must be nonnegative"));
        }
        if self.family == Family::Matern && !matches!(self.nu, Some(v) if v > 0.0) {
            return Err(invalid("Matern variogram needs a positive shape"));
        }
        Ok(())
    }

    /// Correlation of the structured part at lag `h`.
    pub fn correlation(&self, h: f64) -> f64 {
        correlation(self.family, self.nu.unwrap_or(0.5), self.range, h)
    }

    /// `nugget + sill (1 - rho(h))` for `h > 0`, zero at the origin.
    pub fn gamma(&self, h: f64) -> f64 {
        if h == 0.0 {
            0.0
        } else {
            self.nugget + self.sill * (1.0 - self.correlation(h))
        }
    }

    /// `sill + nugget - gamma(h)`.
    pub fn covariance(&self, h: f64) -> f64 {
        self.sill + self.nugget - self.gamma(h)
    }
}

fn correlation(family: Family, nu: f64, range: f64, h: f64) -> f64 {
    match family {
        Family::Exponential => (-h / range).exp(),
        Family::Spherical => {
            let r = h / range;
            if r >= 1.0 {
                0.0
            } else {
                1.0 - 1.5 * r + 0.5 * r * r * r
            }
        }
        Family::Matern => matern_correlation(h, &MaternParams { nu, phi: range }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    /// Mean pair distance in the bin.
    pub lag: f64,
    pub gamma: f64,
    pub count: usize,
}

/// Matheron estimator on `n_bins` equal-width bins over `[0, max_dist]`.
/// Empty bins are omitted.
pub fn empirical_variogram(
    locations: &ndarray::Array2<f64>,
    values: &ndarray::Array1<f64>,
    n_bins: usize,
    max_dist: f64,
) -> Result<Vec<VariogramBin>> {
    let n = locations.nrows();
    if locations.ncols() != 2 || values.len() != n {
        return Err(Error::Shape("need n x 2 locations and n values".into()));
    }
    if n < 2 {
        return Err(invalid("variogram needs at least two points"));
    }
    if n_bins == 0 || !(max_dist > 0.0) {
        return Err(invalid("bin count and maximum distance must be positive"));
    }
    let width = max_dist / n_bins as f64;
    let mut sum_lag = vec![0.0; n_bins];
    let mut sum_sq = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for i in 0..n {
        for j in i + 1..n {
            let h = ((locations[[i, 0]] - locations[[j, 0]]).powi(2) + (locations[[i, 1]] - locations[[j, 1]]).powi(2)).sqrt();
            if h > max_dist {
                continue;
            }
            let b = ((h / width) as usize).min(n_bins - 1);
            sum_lag[b] += h;
            sum_sq[b] += (values[i] - values[j]).powi(2);
            count[b] += 1;
        }
    }
    let bins: Vec<VariogramBin> = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| VariogramBin {
            lag: sum_lag[b] / count[b] as f64,
            gamma: sum_sq[b] / (2.0 * count[b] as f64),
            count: count[b],
        })
        .collect();
    if bins.is_empty() {
        return Err(invalid(format!("no pairs within distance {max_dist}")));
    }
    Ok(bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramFit {
    pub model: VariogramModel,
    /// Unweighted sum of squared residuals over the bins.
    pub sse: f64,
    /// Set when the best range sits on the edge of the search interval.
    pub warning: bool,
}

/// Nonnegative least squares for `gamma ~ nugget + sill * a` with
/// `sill > 0`, `nugget >= 0`.
fn fit_linear(a: &[f64], g: &[f64]) -> Option<(f64, f64, f64)> {
    let n = a.len() as f64;
    let (sa, sg) = (a.iter().sum::<f64>(), g.iter().sum::<f64>());
    let saa: f64 = a.iter().map(|v| v * v).sum();
    let sag: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
    let sse = |sill: f64, nug: f64| a.iter().zip(g).map(|(x, y)| (nug + sill * x - y).powi(2)).sum::<f64>();
    let det = n * saa - sa * sa;
    let mut best: Option<(f64, f64, f64)> = None;
    let mut consider = |sill: f64, nug: f64| {
        if sill > 0.0 && nug >= 0.0 && sill.is_finite() {
            let e = sse(sill, nug);
            if best.is_none_or(|b| e < b.2) {
                best = Some((sill, nug, e));
            }
        }
    };
    if det.abs() > 1e-14 * (n * saa).max(1e-300) {
        let sill = (n * sag - sa * sg) / det;
        let nug = (sg - sill * sa) / n;
        consider(sill, nug);
    }
    if saa > 0.0 {
        consider(sag / saa, 0.0);
    }
    best
}

fn fit_at_range(family: Family, nu: f64, range: f64, bins: &[VariogramBin]) -> Option<(f64, f64, f64)> {
    let a: Vec<f64> = bins.iter().map(|b| 1.0 - correlation(family, nu, range, b.lag)).collect();
    let g: Vec<f64> = bins.iter().map(|b| b.gamma).collect();
    fit_linear(&a, &g)
}

/// OLS fit of one family. Sill and nugget are solved in closed form for
/// each candidate range; the range is searched on a log grid and refined by
/// golden section.
pub fn fit_family(bins: &[VariogramBin], family: Family) -> Result<VariogramFit> {
    if bins.len() < 3 {
        return Err(invalid(format!("variogram fitting needs at least 3 bins, got {}", bins.len())));
    }
    let max_lag = bins.iter().map(|b| b.lag).fold(0.0, f64::max);
    if !(max_lag > 0.0) {
        return Err(invalid("all lags are zero"));
    }
    let nus: &[f64] = if family == Family::Matern { &MATERN_NU_GRID } else { &[0.5] };
    let (lo, hi) = ((max_lag * 1e-3).ln(), (max_lag * 10.0).ln());
    const GRID: usize = 60;
    let mut best: Option<VariogramFit> = None;
    for &nu in nus {
        let eval = |log_r: f64| fit_at_range(family, nu, log_r.exp(), bins).map(|f| f.2).unwrap_or(f64::INFINITY);
        let grid: Vec<f64> = (0..GRID).map(|i| lo + (hi - lo) * i as f64 / (GRID - 1) as f64).collect();
        let errs: Vec<f64> = grid.iter().map(|&r| eval(r)).collect();
        let (ib, _) = errs
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &e)| if e < acc.1 { (i, e) } else { acc });
        let (mut a, mut b) = (grid[ib.saturating_sub(1)], grid[(ib + 1).min(GRID - 1)]);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let (mut c, mut d) = (b - phi * (b - a), a + phi * (b - a));
        let (mut fc, mut fd) = (eval(c), eval(d));
        for _ in 0..80 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = eval(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = eval(d);
            }
        }
        let candidates = [grid[ib], c, d];
        let log_r = candidates
            .into_iter()
            .min_by(|x, y| eval(*x).total_cmp(&eval(*y)))
            .expect("candidates");
        let range = log_r.exp();
        if let Some((sill, nugget, sse)) = fit_at_range(family, nu, range, bins) {
            let fit = VariogramFit {
                model: VariogramModel {
                    family,
                    sill,
                    range,
                    nugget,
                    nu: (family == Family::Matern).then_some(nu),
                },
                sse,
                warning: ib == 0 || ib == GRID - 1,
            };
            if best.is_none_or(|b| fit.sse < b.sse) {
                best = Some(fit);
            }
        }
    }
    best.ok_or_else(|| invalid(format!("no admissible {family:?} variogram for these bins")))
}

/// Fits every family and keeps the smallest OLS objective. Near-ties go to
/// the family listed first in [`Family::ALL`].
pub fn fit_variogram(bins: &[VariogramBin]) -> Result<VariogramFit> {
    let mut best: Option<VariogramFit> = None;
    let mut last_err = None;
    for family in Family::ALL {
        match fit_family(bins, family) {
            Ok(fit) => {
                let better = best.is_none_or(|b| fit.sse < b.sse - 1e-9 * b.sse.max(1e-12));
                if better {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some(b), _) => {
            if b.warning {
                log::warn!("variogram range search ended on the grid boundary ({:?})", b.model.family);
            }
            Ok(b)
        }
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("families are tried"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};

    fn synthetic(model: &VariogramModel) -> Vec<VariogramBin> {
        (1..=15)
            .map(|i| {
                let lag = 3.0 * i as f64;
                VariogramBin {
                    lag,
                    gamma: model.gamma(lag),
                    count: 100,
                }
            })
            .collect()
    }

    #[test]
    fn two_points_single_bin() {
        let locs = array![[0.0, 0.0], [3.0, 4.0]];
        let bins = empirical_variogram(&locs, &array![0.0, 2.0], 15, 50.0).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].gamma, 2.0);
        assert_eq!(bins[0].lag, 5.0);
    }

    #[test]
    fn constant_field_is_flat_zero() {
        let locs = Array2::from_shape_fn((30, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let bins = empirical_variogram(&locs, &Array1::from_elem(30, 4.2), 10, 20.0).unwrap();
        assert!(bins.iter().all(|b| b.gamma == 0.0));
    }

    #[test]
    fn far_pairs_only_is_an_error() {
        let locs = array![[0.0, 0.0], [100.0, 0.0]];
        assert!(empirical_variogram(&locs, &array![1.0, 2.0], 5, 10.0).is_err());
    }

    #[test]
    fn covariance_identity() {
        let m = VariogramModel::new(Family::Spherical, 2.0, 10.0, 0.5, None).unwrap();
        assert_eq!(m.gamma(0.0), 0.0);
        assert_eq!(m.covariance(0.0), 2.5);
        assert!((m.covariance(4.0) - 2.0 * m.correlation(4.0)).abs() < 1e-15);
        assert_eq!(m.covariance(20.0), 0.0);
    }

    #[test]
    fn recovers_exponential_parameters() {
        let truth = VariogramModel::new(Family::Exponential, 1.0, 10.0, 0.0, None).unwrap();
        let fit = fit_family(&synthetic(&truth), Family::Exponential).unwrap();
        assert!((fit.model.sill - 1.0).abs() < 0.1);
        assert!((fit.model.range - 10.0).abs() < 1.0);
        assert!(fit.model.nugget <= 0.05 * fit.model.sill);
        assert!(!fit.warning);
    }

    #[test]
    fn selects_spherical_for_spherical_data() {
        let truth = VariogramModel::new(Family::Spherical, 2.0, 25.0, 0.3, None).unwrap();
        let fit = fit_variogram(&synthetic(&truth)).unwrap();
        assert_eq!(fit.model.family, Family::Spherical);
        assert!((fit.model.range - 25.0).abs() < 0.5);
        assert!((fit.model.nugget - 0.3).abs() < 0.05);
    }

    #[test]
    fn smooth_matern_has_small_nugget() {
        let truth = VariogramModel::new(Family::Matern, 1.5, 8.0, 0.0, Some(1.5)).unwrap();
        let fit = fit_family(&synthetic(&truth), Family::Matern).unwrap();
        assert_eq!(fit.model.nu, Some(1.5));
        assert!(fit.model.nugget <= 0.05 * fit.model.sill);
    }
}
