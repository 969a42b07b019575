use ndarray::{array, Array2};
use rand_distr::{Distribution, StandardNormal};

use spatial_ivae::evaluation::mcc_of;
use spatial_ivae::experiment::{simulate, ExperimentConfig};
use spatial_ivae::ivae::{train, IvaeModel, NetInput, TrainConfig};
use spatial_ivae::rng::{derive_seed, rng_from_seed};
use spatial_ivae::segmentation::{encode_segments, GridSpec};

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log p(x | u)` of a one-dimensional latent by quadrature over `z`.
fn log_marginal(model: &IvaeModel, x: &[f64], seg: usize) -> f64 {
    let empty = Array2::<f64>::zeros((1, 0));
    let prior = model.aux.forward(&NetInput::new(empty.view(), Some(&[seg])));
    let (mu, var) = (prior[[0, 0]], prior[[0, 1]].exp());
    let sd = var.sqrt();
    let n = 40_001;
    let (lo, hi) = (mu - 14.0 * sd, mu + 14.0 * sd);
    let h = (hi - lo) / (n - 1) as f64;
    let z = Array2::from_shape_fn((n, 1), |(i, _)| lo + h * i as f64);
    let xhat = model.decoder.forward(&NetInput::new(z.view(), None));
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let terms: Vec<f64> = (0..n)
        .map(|i| {
            let zi = z[[i, 0]];
            let lp = -0.5 * (ln2pi + var.ln()) - 0.5 * (zi - mu).powi(2) / var;
            let lx: f64 = x
                .iter()
                .enumerate()
                .map(|(j, &xj)| -0.5 * (ln2pi + model.beta.ln()) - 0.5 * (xj - xhat[[i, j]]).powi(2) / model.beta)
                .sum();
            lp + lx + h.ln()
        })
        .collect();
    log_sum_exp(&terms)
}

#[test]
fn elbo_is_below_marginal_likelihood() {
    let model = IvaeModel::new(1, 2, &[6, 6], 0.2, 0.3, &mut rng_from_seed(5)).unwrap();
    let mut rng = rng_from_seed(6);
    for (xv, seg) in [(0.4, 0usize), (-1.2, 1), (2.0, 1)] {
        let x = array![[xv]];
        let reps = 4000;
        let mut total = 0.0;
        let mut sq = 0.0;
        for _ in 0..reps {
            let e: f64 = StandardNormal.sample(&mut rng);
            let v = model.elbo(&x.view(), &[seg], &array![[e]].view()).unwrap();
            total += v;
            sq += v * v;
        }
        let mean = total / reps as f64;
        let se = ((sq / reps as f64 - mean * mean) / reps as f64).sqrt();
        let lp = log_marginal(&model, &[xv], seg);
        assert!(mean <= lp + 4.0 * se, "elbo {mean} > log p {lp} (se {se})");
    }
}

#[test]
fn noise_scores_well_below_half() {
    let (data, _) = simulate(1, 5000, 1, 3).unwrap();
    let mut rng = rng_from_seed(4);
    let noise = Array2::from_shape_simple_fn((5000, 3), || StandardNormal.sample(&mut rng));
    let m = mcc_of(&noise, data.latents().unwrap()).unwrap();
    assert!(m < 0.1, "{m}");
}

/// Two independently seeded fits agree with each other far better than
/// either agrees with an unrelated field.
#[test]
fn independent_fits_agree() {
    let (data, _) = simulate(1, 5000, 1, 17).unwrap();
    let x = data.observed().unwrap();
    let enc = encode_segments(&data.locations, &ExperimentConfig::domain(), GridSpec::Cells { nx: 20, ny: 20 }).unwrap();
    let fit = |s: u64| {
        let cfg = TrainConfig {
            seed: derive_seed(17, s),
            ..TrainConfig::default()
        };
        let t = train(x, &enc.segments, enc.m(), &cfg).unwrap();
        t.model.extract_latents(x, &enc.segments).unwrap()
    };
    let (a, b) = (fit(1), fit(2));
    let (other, _) = simulate(1, 5000, 1, 99).unwrap();
    let unrelated = other.latents().unwrap();
    let between = mcc_of(&a, &b).unwrap();
    let baseline = mcc_of(&a, unrelated).unwrap().max(mcc_of(&b, unrelated).unwrap());
    assert!(between >= baseline + 0.3, "between {between}, unrelated {baseline}");
}
