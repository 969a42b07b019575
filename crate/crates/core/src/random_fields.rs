//! Locations, cluster structures and latent Gaussian fields for the six
//! simulation settings.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky_with_jitter, JitteredCholesky};
use crate::rng::{derive_seed, rng_from_seed};
use crate::special::{bessel_k, gamma};

pub use crate::dataset::{Domain2D, SpatialDataset};

/// Stationary Matern shape `nu` and range `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub nu: f64,
    pub phi: f64,
}

impl MaternParams {
    pub fn new(nu: f64, phi: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) || !(phi > 0.0 && phi.is_finite()) {
            return Err(invalid(format!(
                "Matern parameters must be positive, got nu={nu}, phi={phi}"
            )));
        }
        Ok(MaternParams { nu, phi })
    }
}

/// `2^(nu-1) * Gamma(nu)`, the limit of `t^nu K_nu(t)` as `t -> 0`.
fn matern_norm(nu: f64) -> f64 {
    2f64.powf(nu - 1.0) * gamma(nu)
}

/// `t^nu K_nu(t) / (2^(nu-1) Gamma(nu))` with the value 1 at `t = 0`.
fn scaled_matern(t: f64, nu: f64, norm: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let k = bessel_k(nu, t);
    if k == 0.0 {
        return 0.0;
    }
    // log form keeps t^nu * K_nu(t) finite for large nu and tiny t
    let v = (nu * t.ln() + k.ln() - norm.ln()).exp();
    v.min(1.0)
}

/// Matern correlation at distance `h >= 0`.
pub fn matern_correlation(h: f64, p: &MaternParams) -> f64 {
    debug_assert!(h >= 0.0, "distance must be nonnegative");
    scaled_matern(h.abs() / p.phi, p.nu, matern_norm(p.nu))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Sigma,
    Nu,
    Phi,
}

/// Spatially varying parameter function of the nonstationary Matern model:
///
/// * `sigma(s) = log(1.1 + s.d / alpha)`
/// * `nu(s)    = (s.d)^(1/5) / alpha + 0.1`
/// * `phi(s)   = s.d / alpha + c`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonstatParamFn {
    pub kind: ParamKind,
    pub d: [f64; 2],
    pub alpha: f64,
    pub c: f64,
}

impl NonstatParamFn {
    pub fn sigma(d: [f64; 2], alpha: f64) -> Self {
        NonstatParamFn {
            kind: ParamKind::Sigma,
            d,
            alpha,
            c: 0.0,
        }
    }

    pub fn nu(d: [f64; 2], alpha: f64) -> Self {
        NonstatParamFn {
            kind: ParamKind::Nu,
            d,
            alpha,
            c: 0.0,
        }
    }

    pub fn phi(d: [f64; 2], alpha: f64, c: f64) -> Self {
        NonstatParamFn {
            kind: ParamKind::Phi,
            d,
            alpha,
            c,
        }
    }

    pub fn eval(&self, s: [f64; 2]) -> f64 {
        let proj = s[0] * self.d[0] + s[1] * self.d[1];
        match self.kind {
            ParamKind::Sigma => (1.1 + proj / self.alpha).ln(),
            // negative bases cannot occur for nonnegative d on the positive quadrant
            ParamKind::Nu => proj.max(0.0).powf(0.2) / self.alpha + 0.1,
            ParamKind::Phi => proj / self.alpha + self.c,
        }
    }

    /// Minimum over an `res x res` grid spanning the domain.
    pub fn min_on_grid(&self, domain: &Domain2D, res: usize) -> f64 {
        let res = res.max(2);
        let mut lo = f64::INFINITY;
        for i in 0..res {
            for j in 0..res {
                let x = domain.x_min + domain.width() * i as f64 / (res - 1) as f64;
                let y = domain.y_min + domain.height() * j as f64 / (res - 1) as f64;
                lo = lo.min(self.eval([x, y]));
            }
        }
        lo
    }

    pub fn check_positive(&self, domain: &Domain2D) -> Result<()> {
        if self.alpha == 0.0 {
            return Err(invalid("parameter function needs alpha != 0"));
        }
        let lo = self.min_on_grid(domain, 201);
        if !(lo > 0.0) {
            return Err(invalid(format!(
                "{:?} parameter function reaches {lo} on the domain",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Anderes-Stein nonstationary Matern covariance built from three parameter
/// functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonstatMatern {
    pub sigma: NonstatParamFn,
    pub nu: NonstatParamFn,
    pub phi: NonstatParamFn,
}

/// Per-location quantities reused across every pair.
#[derive(Debug, Clone, Copy)]
struct LocalParams {
    sigma: f64,
    nu: f64,
    r1: f64,
    /// `phi^2 / (8 nu)`; `r2(s, s')` is the sum of the two halves.
    half_r2: f64,
}

impl NonstatMatern {
    pub fn new(sigma: NonstatParamFn, nu: NonstatParamFn, phi: NonstatParamFn) -> Result<Self> {
        if sigma.kind != ParamKind::Sigma || nu.kind != ParamKind::Nu || phi.kind != ParamKind::Phi {
            return Err(invalid("parameter functions must be given as (sigma, nu, phi)"));
        }
        Ok(NonstatMatern { sigma, nu, phi })
    }

    pub fn check_positive(&self, domain: &Domain2D) -> Result<()> {
        self.sigma.check_positive(domain)?;
        self.nu.check_positive(domain)?;
        self.phi.check_positive(domain)
    }

    fn local(&self, s: [f64; 2]) -> Result<LocalParams> {
        let sigma = self.sigma.eval(s);
        let nu = self.nu.eval(s);
        let phi = self.phi.eval(s);
        if !(sigma > 0.0 && nu > 0.0 && phi > 0.0) {
            return Err(invalid(format!(
                "nonpositive parameter at ({}, {}): sigma={sigma}, nu={nu}, phi={phi}",
                s[0], s[1]
            )));
        }
        let r1 = ((phi * phi / (4.0 * nu)) / matern_norm(nu)).sqrt();
        Ok(LocalParams {
            sigma,
            nu,
            r1,
            half_r2: phi * phi / (8.0 * nu),
        })
    }

    fn pair(a: &LocalParams, b: &LocalParams, h: f64) -> f64 {
        let r2 = a.half_r2 + b.half_r2;
        let nu = 0.5 * (a.nu + b.nu);
        let norm = matern_norm(nu);
        // t^nu K_nu(t) = norm * scaled_matern(t)
        let tk = norm * scaled_matern(h / r2.sqrt(), nu, norm);
        (a.sigma * a.r1) * (b.sigma * b.r1) / r2 * tk
    }

    /// Covariance between two points.
    pub fn covariance(&self, s: [f64; 2], s_prime: [f64; 2]) -> Result<f64> {
        let a = self.local(s)?;
        let b = self.local(s_prime)?;
        let h = (s[0] - s_prime[0]).hypot(s[1] - s_prime[1]);
        Ok(Self::pair(&a, &b, h))
    }

    pub fn covariance_matrix(&self, locations: &Array2<f64>) -> Result<DMatrix<f64>> {
        let pts = points(locations)?;
        let local = pts.iter().map(|&p| self.local(p)).collect::<Result<Vec<_>>>()?;
        Ok(symmetric_matrix(&pts, |i, j, h| Self::pair(&local[i], &local[j], h)))
    }
}

fn points(locations: &Array2<f64>) -> Result<Vec<[f64; 2]>> {
    if locations.ncols() != 2 {
        return Err(Error::Shape(format!(
            "locations must have two columns, got {}",
            locations.ncols()
        )));
    }
    Ok(locations.rows().into_iter().map(|r| [r[0], r[1]]).collect())
}

fn symmetric_matrix(pts: &[[f64; 2]], f: impl Fn(usize, usize, f64) -> f64) -> DMatrix<f64> {
    let n = pts.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let h = (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]);
            let v = f(i, j, h);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Dense covariance matrix of a stationary isotropic model `variance * rho(h)`.
pub fn stationary_covariance_matrix(
    locations: &Array2<f64>,
    p: &MaternParams,
    variance: f64,
) -> Result<DMatrix<f64>> {
    let pts = points(locations)?;
    let norm = matern_norm(p.nu);
    Ok(symmetric_matrix(&pts, |_, _, h| {
        variance * scaled_matern(h / p.phi, p.nu, norm)
    }))
}

/// Covariance matrix from an arbitrary point-pair function. Only the lower
/// triangle is evaluated and mirrored.
pub fn covariance_matrix<F>(locations: &Array2<f64>, cov_fn: F) -> Result<DMatrix<f64>>
where
    F: Fn([f64; 2], [f64; 2]) -> f64,
{
    let pts = points(locations)?;
    Ok(symmetric_matrix(&pts, |i, j, _| cov_fn(pts[i], pts[j])))
}

pub fn sample_uniform_locations(n: usize, domain: &Domain2D, seed: u64) -> Result<Array2<f64>> {
    domain.validate()?;
    if n == 0 {
        return Err(invalid("need at least one location"));
    }
    let mut rng = rng_from_seed(seed);
    let ux = Uniform::new_inclusive(domain.x_min, domain.x_max).map_err(|e| invalid(e.to_string()))?;
    let uy = Uniform::new_inclusive(domain.y_min, domain.y_max).map_err(|e| invalid(e.to_string()))?;
    let mut out = Array2::zeros((n, 2));
    for mut row in out.rows_mut() {
        row[0] = ux.sample(&mut rng);
        row[1] = uy.sample(&mut rng);
    }
    Ok(out)
}

/// Nearest-center labels in `1..=k`; ties go to the lowest index.
pub fn assign_voronoi_clusters(locations: &Array2<f64>, centers: &Array2<f64>) -> Result<Vec<usize>> {
    if centers.nrows() == 0 {
        return Err(invalid("need at least one cluster center"));
    }
    if locations.ncols() != 2 || centers.ncols() != 2 {
        return Err(Error::Shape("locations and centers must be n x 2".into()));
    }
    Ok(locations
        .rows()
        .into_iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, c) in centers.rows().into_iter().enumerate() {
                let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best + 1
        })
        .collect())
}

/// Reusable sampler holding the factor of one covariance matrix.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    factor: JitteredCholesky,
}

impl GrfSampler {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let asym = (cov - cov.transpose()).amax();
        if asym > 1e-12 * cov.amax().max(1.0) {
            return Err(invalid(format!("covariance matrix is not symmetric (max gap {asym:e})")));
        }
        Ok(GrfSampler {
            factor: cholesky_with_jitter(cov)?,
        })
    }

    pub fn len(&self) -> usize {
        self.factor.lower.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// `L * eps` with `eps` standard normal.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> Array1<f64> {
        let n = self.len();
        let eps = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
        let v = &self.factor.lower * eps;
        Array1::from_iter(v.iter().copied())
    }
}

/// One realization of a zero-mean Gaussian field with the given covariance function.
pub fn sample_grf<F>(locations: &Array2<f64>, cov_fn: F, seed: u64) -> Result<Array1<f64>>
where
    F: Fn([f64; 2], [f64; 2]) -> f64,
{
    let cov = covariance_matrix(locations, cov_fn)?;
    let sampler = GrfSampler::new(&cov)?;
    Ok(sampler.sample(&mut rng_from_seed(seed)))
}

/// Per-cluster latent parameters for the clustered settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// `k x 2` Voronoi centers.
    pub centers: Array2<f64>,
    /// `k x d` means.
    pub means: Array2<f64>,
    /// `k x d` diagonal variances.
    pub variances: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    /// Cluster-wise iid Gaussian, zero mean.
    ClusterVariance,
    /// Cluster-wise iid Gaussian with cluster means.
    ClusterMeanVariance,
    /// Cluster-wise Matern fields.
    ClusterMatern,
    /// Stationary Matern with long ranges.
    StationaryStrong,
    /// Stationary Matern with short ranges.
    StationaryWeak,
    /// Nonstationary Matern.
    Nonstationary,
}

impl Setting {
    pub fn from_id(id: u8) -> Result<Self> {
        Ok(match id {
            1 => Setting::ClusterVariance,
            2 => Setting::ClusterMeanVariance,
            3 => Setting::ClusterMatern,
            4 => Setting::StationaryStrong,
            5 => Setting::StationaryWeak,
            6 => Setting::Nonstationary,
            _ => return Err(invalid(format!("unknown setting {id}, expected 1..=6"))),
        })
    }

    pub fn id(self) -> u8 {
        match self {
            Setting::ClusterVariance => 1,
            Setting::ClusterMeanVariance => 2,
            Setting::ClusterMatern => 3,
            Setting::StationaryStrong => 4,
            Setting::StationaryWeak => 5,
            Setting::Nonstationary => 6,
        }
    }

    /// Matern parameters of the three components for the stationary settings.
    pub fn stationary_params(self) -> Option<[MaternParams; 3]> {
        let p = |nu, phi| MaternParams { nu, phi };
        match self {
            Setting::StationaryStrong => Some([p(0.5, 15.0), p(2.0, 20.0), p(0.2, 10.0)]),
            Setting::StationaryWeak => Some([p(1.0, 5.0), p(2.0, 3.0), p(6.0, 2.0)]),
            _ => None,
        }
    }

    /// Parameter functions of the three nonstationary components.
    pub fn nonstationary_params() -> [NonstatMatern; 3] {
        use NonstatParamFn as F;
        [
            NonstatMatern {
                sigma: F::sigma([1.0, 1.0], 2.0),
                nu: F::nu([0.0, 1.0], 5.0),
                phi: F::phi([1.0, 1.0], 5.0, 10.0),
            },
            NonstatMatern {
                sigma: F::sigma([0.0, 1.0], 1.5),
                nu: F::nu([1.0, 0.0], 4.0),
                phi: F::phi([1.0, 1.0], -8.0, 40.0),
            },
            NonstatMatern {
                sigma: F::sigma([1.0, 0.0], 2.0),
                nu: F::nu([1.0, 1.0], 3.0),
                phi: F::phi([0.0, 1.0], 4.0, 10.0),
            },
        ]
    }
}

pub const SETTING_CLUSTERS: usize = 10;
pub const SETTING_DIM: usize = 3;

/// Stream tags for the master seed.
const TAG_LOCATIONS: u64 = 1;
const TAG_CENTERS: u64 = 2;
const TAG_CLUSTER_PARAMS: u64 = 3;
const TAG_COMPONENT: u64 = 100;

/// Latent-only dataset for one of the six settings on `[0, 100]^2` with `d = 3`.
pub fn generate_setting(id: u8, n: usize, seed: u64) -> Result<SpatialDataset> {
    let setting = Setting::from_id(id)?;
    generate_latents(setting, n, SETTING_DIM, &Domain2D::square(100.0)?, seed)
}

/// Latent generator with a free dimension for the clustered settings (1-3).
/// The stationary and nonstationary settings are defined for `d = 3` only.
pub fn generate_latents(
    setting: Setting,
    n: usize,
    d: usize,
    domain: &Domain2D,
    seed: u64,
) -> Result<SpatialDataset> {
    if d == 0 {
        return Err(invalid("latent dimension must be at least 1"));
    }
    let locations = sample_uniform_locations(n, domain, derive_seed(seed, TAG_LOCATIONS))?;
    match setting {
        Setting::ClusterVariance | Setting::ClusterMeanVariance | Setting::ClusterMatern => {
            let model = draw_cluster_model(setting, d, domain, seed)?;
            let labels = assign_voronoi_clusters(&locations, &model.centers)?;
            let z = match setting {
                Setting::ClusterMatern => cluster_matern_latents(&locations, &labels, d, seed)?,
                _ => cluster_iid_latents(&model, &labels, d, seed),
            };
            SpatialDataset::new(locations, None, Some(z), Some(labels))
        }
        Setting::StationaryStrong | Setting::StationaryWeak => {
            require_dim(setting, d)?;
            let params = setting.stationary_params().expect("stationary setting");
            let mut z = Array2::zeros((n, d));
            for (j, p) in params.iter().enumerate() {
                let cov = stationary_covariance_matrix(&locations, p, 1.0)?;
                let field = GrfSampler::new(&cov)?
                    .sample(&mut rng_from_seed(derive_seed(seed, TAG_COMPONENT + j as u64)));
                z.column_mut(j).assign(&field);
            }
            SpatialDataset::new(locations, None, Some(z), None)
        }
        Setting::Nonstationary => {
            require_dim(setting, d)?;
            let mut z = Array2::zeros((n, d));
            for (j, model) in Setting::nonstationary_params().iter().enumerate() {
                model.check_positive(domain)?;
                let cov = model.covariance_matrix(&locations)?;
                let field = GrfSampler::new(&cov)?
                    .sample(&mut rng_from_seed(derive_seed(seed, TAG_COMPONENT + j as u64)));
                z.column_mut(j).assign(&field);
            }
            SpatialDataset::new(locations, None, Some(z), None)
        }
    }
}

fn require_dim(setting: Setting, d: usize) -> Result<()> {
    if d != SETTING_DIM {
        return Err(invalid(format!(
            "setting {} is defined for d = {SETTING_DIM}, got d = {d}",
            setting.id()
        )));
    }
    Ok(())
}

/// Cluster centers plus mean/variance tables. Matern clusters carry zero means
/// and unit variances.
pub fn draw_cluster_model(setting: Setting, d: usize, domain: &Domain2D, seed: u64) -> Result<ClusterModel> {
    let k = SETTING_CLUSTERS;
    let centers = sample_uniform_locations(k, domain, derive_seed(seed, TAG_CENTERS))?;
    let mut rng = rng_from_seed(derive_seed(seed, TAG_CLUSTER_PARAMS));
    let mut means = Array2::zeros((k, d));
    let mut variances = Array2::ones((k, d));
    match setting {
        Setting::ClusterVariance | Setting::ClusterMeanVariance => {
            for v in variances.iter_mut() {
                *v = rng.random_range(0.1..5.0);
            }
            if setting == Setting::ClusterMeanVariance {
                for m in means.iter_mut() {
                    *m = rng.random_range(-5.0..5.0);
                }
            }
        }
        Setting::ClusterMatern => {}
        _ => return Err(invalid("cluster model only exists for settings 1-3")),
    }
    Ok(ClusterModel {
        k,
        centers,
        means,
        variances,
    })
}

fn cluster_iid_latents(model: &ClusterModel, labels: &[usize], d: usize, seed: u64) -> Array2<f64> {
    let n = labels.len();
    let mut z = Array2::zeros((n, d));
    for j in 0..d {
        let mut rng = rng_from_seed(derive_seed(seed, TAG_COMPONENT + j as u64));
        for (i, &lab) in labels.iter().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            z[[i, j]] = model.means[[lab - 1, j]] + model.variances[[lab - 1, j]].sqrt() * e;
        }
    }
    z
}

/// Per-cluster Matern parameters `nu ~ U(0.1, 5)`, `phi ~ U(0.5, 8)`, one
/// independent field per cluster and component.
pub fn cluster_matern_params(seed: u64, d: usize) -> Vec<Vec<MaternParams>> {
    let mut rng = rng_from_seed(derive_seed(seed, TAG_CLUSTER_PARAMS));
    (0..SETTING_CLUSTERS)
        .map(|_| {
            (0..d)
                .map(|_| MaternParams {
                    nu: rng.random_range(0.1..5.0),
                    phi: rng.random_range(0.5..8.0),
                })
                .collect()
        })
        .collect()
}

fn cluster_matern_latents(
    locations: &Array2<f64>,
    labels: &[usize],
    d: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let params = cluster_matern_params(seed, d);
    let mut z = Array2::zeros((labels.len(), d));
    for (c, cparams) in params.iter().enumerate() {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c + 1).collect();
        if members.is_empty() {
            continue;
        }
        let locs = locations.select(ndarray::Axis(0), &members);
        for (j, p) in cparams.iter().enumerate() {
            let cov = stationary_covariance_matrix(&locs, p, 1.0)?;
            let tag = TAG_COMPONENT + (j * SETTING_CLUSTERS + c) as u64;
            let field = GrfSampler::new(&cov)?.sample(&mut rng_from_seed(derive_seed(seed, tag)));
            for (row, &i) in members.iter().enumerate() {
                z[[i, j]] = field[row];
            }
        }
    }
    Ok(z)
}
