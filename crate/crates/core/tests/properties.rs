use faer::Mat;
use num_complex::Complex64;
use proptest::prelude::*;

use wshrink::estimator::{eigh, weighted_sample_cov};
use wshrink::shrinkage::intensity_table;
use wshrink::simulate::{esd_report, sample_noise, true_cov_from_h, ExperimentConfig, NoiseSpec};
use wshrink::{
    bai_silverstein_h, empirical_theta_g, finite_weights, five_dirac_weight_law, support_bounds,
    theta_g, DiracMixture, FixedPointSolver, ModelConfig, SolverOptions, WeightLaw,
};

fn model(d: WeightLaw, c: f64) -> ModelConfig {
    ModelConfig::new(bai_silverstein_h(), d, c).unwrap()
}

/// Number of maximal runs of grid points with density above `floor`.
fn bulks(f: &[f64], floor: f64) -> usize {
    let mut count = 0;
    let mut inside = false;
    for &v in f {
        if v > floor && !inside {
            count += 1;
        }
        inside = v > floor;
    }
    count
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn theta_is_linear_in_g(a in -3.0f64..3.0, b in -3.0f64..3.0, re in -2.0f64..30.0, im in 0.01f64..3.0) {
        let m = model(WeightLaw::ewma(1.0).unwrap(), 0.25);
        let z = Complex64::new(re, im);
        let sol = FixedPointSolver::new(&m, &SolverOptions::default()).unwrap().solve(z, None).unwrap();
        let g1 = |t: f64| t.sqrt();
        let g2 = |t: f64| 1.0 / (1.0 + t);
        let combined = theta_g(z, sol.x, |t| a * g1(t) + b * g2(t), &m.h).unwrap();
        let separate = a * theta_g(z, sol.x, g1, &m.h).unwrap() + b * theta_g(z, sol.x, g2, &m.h).unwrap();
        prop_assert!((combined - separate).norm() < 1e-13);
    }
}

fn empirical_gap(n: usize) -> f64 {
    let m = model(WeightLaw::ewma(1.0).unwrap(), 0.5);
    let big_n = 2 * n;
    let tau = true_cov_from_h(&m.h, n);
    let z = sample_noise(&NoiseSpec::gaussian(17), n, big_n).unwrap();
    let y = Mat::from_fn(n, big_n, |i, j| tau[i].sqrt() * z[(i, j)]);
    let b = weighted_sample_cov(y.as_ref(), &finite_weights(&m.d, big_n).unwrap()).unwrap();
    let e = eigh(&b).unwrap();
    let point = Complex64::new(4.0, 1.0);
    let eye = Mat::<f64>::identity(n, n);
    let emp = empirical_theta_g(&e.values, e.vectors.as_ref(), &tau, eye.as_ref(), |t| t, point).unwrap();
    let sol = FixedPointSolver::new(&m, &SolverOptions::default()).unwrap().solve(point, None).unwrap();
    let lim = theta_g(point, sol.x, |t| t, &m.h).unwrap();
    (emp - lim).norm() / lim.norm()
}

#[test]
fn empirical_theta_approaches_limit() {
    let small = empirical_gap(200);
    let large = empirical_gap(2000);
    assert!(large < small, "{large} vs {small}");
    assert!(large < 5e-3, "{large}");
}

fn esd_config(noise: NoiseSpec, d: WeightLaw, c: f64, n: usize) -> ExperimentConfig {
    ExperimentConfig {
        model: model(d, c),
        n,
        noise,
        n_mc: 1,
        lambda_grid_size: 2000,
    }
}

#[test]
fn esd_converges_for_gaussian_and_t12() {
    let opts = SolverOptions::default();
    for noise in [NoiseSpec::gaussian(1), NoiseSpec::student_t(12.0, 1).unwrap()] {
        let r = esd_report(&esd_config(noise, WeightLaw::ewma(1.0).unwrap(), 0.25, 2000), &opts).unwrap();
        assert!(r.ks_distance < 0.02, "{noise:?}: {}", r.ks_distance);
    }
}

#[test]
fn five_dirac_weights_split_the_spectrum() {
    let opts = SolverOptions::default();
    let r = esd_report(&esd_config(NoiseSpec::gaussian(2), five_dirac_weight_law(), 0.1, 500), &opts).unwrap();
    let f: Vec<f64> = r.grid.iter().map(|p| p.f_density).collect();
    assert!(bulks(&f, 1e-6) >= 2, "{} bulks", bulks(&f, 1e-6));
    // sample eigenvalues sit where the limiting density lives
    let m = r.config.finite_model().unwrap();
    let solver = FixedPointSolver::new(&m, &opts).unwrap();
    let outside = r
        .eigenvalues
        .iter()
        .filter(|&&l| solver.boundary(l).unwrap().density() <= 1e-8)
        .count();
    assert!((outside as f64) < 0.02 * r.eigenvalues.len() as f64, "{outside} eigenvalues outside");
}

#[test]
fn intensity_shapes_for_several_decays() {
    let opts = SolverOptions::default();
    for d in [WeightLaw::Standard, WeightLaw::ewma(2.0).unwrap(), WeightLaw::ewma(5.0).unwrap()] {
        let m = model(d, 0.2);
        let (lo, hi) = support_bounds(&m);
        let lambdas: Vec<f64> = (0..1024).map(|i| 0.5 * lo + (1.1 * hi - 0.5 * lo) * i as f64 / 1023.0).collect();
        let t = intensity_table(&m, &lambdas, &opts).unwrap();
        for i in 0..t.len() {
            let ratio = t.lambdas[i] / t.h_vals[i];
            assert!(ratio.is_finite() && ratio > 0.0 && t.h_vals[i] >= 1.0 - 1e-12 && t.h_vals[i] <= 10.0 + 1e-12);
        }
        if matches!(m.d, WeightLaw::Standard) {
            assert_eq!(bulks(&t.f_density, 1e-6), 3);
        } else {
            assert!(bulks(&t.f_density, 1e-6) >= 1);
        }
    }
}

#[test]
fn marcenko_pastur_samples_stay_near_edges() {
    let r = esd_report(
        &ExperimentConfig {
            model: ModelConfig::new(DiracMixture::point(1.0).unwrap(), WeightLaw::Standard, 0.25).unwrap(),
            n: 1000,
            noise: NoiseSpec::gaussian(4),
            n_mc: 1,
            lambda_grid_size: 256,
        },
        &SolverOptions::default(),
    )
    .unwrap();
    assert!(r.eigenvalues[0] > 0.25 - 0.05);
    assert!(*r.eigenvalues.last().unwrap() < 2.25 + 0.05);
}
