use spatial_ivae::random_fields::{
    generate_setting, sample_uniform_locations, stationary_covariance_matrix, GrfSampler, MaternParams, Setting,
};
use spatial_ivae::Domain2D;

#[test]
fn setting_six_factorizes_with_small_jitter_at_full_size() {
    let domain = Domain2D::square(100.0).unwrap();
    let locs = sample_uniform_locations(5000, &domain, 8).unwrap();
    for model in Setting::nonstationary_params() {
        let cov = model.covariance_matrix(&locs).unwrap();
        assert!((&cov - cov.transpose()).amax() <= 1e-12);
        let scale = cov.trace() / 5000.0;
        let sampler = GrfSampler::new(&cov).unwrap();
        assert!(sampler.jitter() <= 1e-6 * scale * (1.0 + 1e-12), "jitter {}", sampler.jitter());
    }
}

#[test]
fn stationary_matrices_symmetric_and_factorizable() {
    let domain = Domain2D::square(100.0).unwrap();
    let locs = sample_uniform_locations(800, &domain, 9).unwrap();
    for id in [4u8, 5] {
        for p in Setting::from_id(id).unwrap().stationary_params().unwrap() {
            let cov = stationary_covariance_matrix(&locs, &p, 1.0).unwrap();
            assert!((&cov - cov.transpose()).amax() <= 1e-12);
            GrfSampler::new(&cov).unwrap();
        }
    }
    let cov = stationary_covariance_matrix(&locs, &MaternParams::new(0.5, 10.0).unwrap(), 2.0).unwrap();
    assert!((0..800).all(|i| cov[(i, i)] == 2.0));
}

#[test]
fn every_setting_is_reproducible() {
    for id in 1..=6u8 {
        let a = generate_setting(id, 150, 42).unwrap();
        let b = generate_setting(id, 150, 42).unwrap();
        assert_eq!(a, b, "setting {id}");
        assert_ne!(a, generate_setting(id, 150, 43).unwrap());
    }
}
