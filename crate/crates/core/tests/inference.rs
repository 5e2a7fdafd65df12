use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sigrisk_core::inference::{
    evaluate, fit_bayes, fit_mle, gradient, loglik, r_hat, Design, FitOptions, McmcSettings, MleSettings,
};
use sigrisk_core::simgen::synthetic::clogit_rows;

fn names(k: usize) -> Vec<String> {
    (0..k).map(|u| format!("x{u}")).collect()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, m: usize, k: usize) -> Vec<Vec<Vec<f64>>> {
    (0..n)
        .map(|_| {
            (0..=m)
                .map(|_| (0..k).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect())
                .collect()
        })
        .collect()
}

proptest! {
    #[test]
    fn zero_beta_gives_minus_n_log_group(seed in any::<u64>(), n in 1usize..300, m in 1usize..8, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Design::from_rows(names(k), &random_rows(&mut rng, n, m, k)).unwrap();
        prop_assert_eq!(loglik(&d, &vec![0.0; k]), -(n as f64) * ((m + 1) as f64).ln());
    }

    #[test]
    fn shifting_a_covariate_leaves_loglik_unchanged(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, 20, 4, 3);
        let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shifted: Vec<Vec<Vec<f64>>> = rows
            .iter()
            .map(|s| s.iter().map(|r| vec![r[0], r[1] + shift, r[2]]).collect())
            .collect();
        let a = loglik(&Design::from_rows(names(3), &rows).unwrap(), &beta);
        let b = loglik(&Design::from_rows(names(3), &shifted).unwrap(), &beta);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn doubling_the_dataset_doubles_loglik_and_gradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, 15, 4, 2);
        let beta: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let twice: Vec<Vec<Vec<f64>>> = rows.iter().chain(rows.iter()).cloned().collect();
        let one = Design::from_rows(names(2), &rows).unwrap();
        let two = Design::from_rows(names(2), &twice).unwrap();
        prop_assert!((loglik(&two, &beta) - 2.0 * loglik(&one, &beta)).abs() < 1e-10);
        let (g1, g2) = (gradient(&one, &beta), gradient(&two, &beta));
        for u in 0..2 {
            prop_assert!((g2[u] - 2.0 * g1[u]).abs() < 1e-10);
        }
    }
}

/// Max relative error between the analytic gradient and central differences.
fn fd_error(d: &Design, beta: &[f64]) -> f64 {
    let g = gradient(d, beta);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for u in 0..beta.len() {
        let mut up = beta.to_vec();
        let mut down = beta.to_vec();
        up[u] += h;
        down[u] -= h;
        let fd = (loglik(d, &up) - loglik(d, &down)) / (2.0 * h);
        worst = worst.max((g[u] - fd).abs() / fd.abs().max(1.0));
    }
    worst
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let k = rng.random_range(1..=10);
        let n = rng.random_range(1..=50);
        let m = rng.random_range(1..=6);
        let d = Design::from_rows(names(k), &random_rows(&mut rng, n, m, k)).unwrap();
        let beta: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
        let err = fd_error(&d, &beta);
        assert!(err < 1e-6, "relative error {err}");
    }
}

#[test]
fn hessian_matches_finite_differences_of_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = Design::from_rows(names(3), &random_rows(&mut rng, 30, 4, 3)).unwrap();
    let beta = [0.2, -0.3, 0.1];
    let (_, _, h) = evaluate(&d, &beta);
    let eps = 1e-6;
    for v in 0..3 {
        let mut up = beta.to_vec();
        let mut down = beta.to_vec();
        up[v] += eps;
        down[v] -= eps;
        let (gu, gd) = (gradient(&d, &up), gradient(&d, &down));
        for u in 0..3 {
            let fd = (gu[u] - gd[u]) / (2.0 * eps);
            assert!((h[u * 3 + v] - fd).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }
}

#[test]
fn mle_under_the_null_is_within_three_standard_errors() {
    let mut inside = 0;
    let reps = 100;
    for seed in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let rows = clogit_rows(150, 4, &[0.0, 0.0], &mut rng);
        let d = Design::from_rows(names(2), &rows).unwrap();
        let fit = fit_mle(&d, &MleSettings::default()).unwrap();
        let g = gradient(&d, &fit.beta);
        assert!(g.iter().all(|v| v.abs() < 1e-8));
        let se = fit.std_errors();
        if (0..2).all(|u| fit.beta[u].abs() < 3.0 * se[u]) {
            inside += 1;
        }
    }
    assert!(inside as f64 >= 0.95 * reps as f64, "{inside} of {reps}");
}

fn quick_settings(seed: u64) -> McmcSettings {
    McmcSettings {
        iterations: 6000,
        burn_in: 2000,
        seed,
        ..McmcSettings::default()
    }
}

#[test]
fn identical_chain_seeds_give_r_hat_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = Design::from_rows(names(2), &clogit_rows(60, 4, &[0.5, -0.5], &mut rng)).unwrap();
    let settings = McmcSettings {
        identical_chain_seeds: true,
        ..quick_settings(5)
    };
    let (model, _) = fit_bayes("t", &d, &settings, &FitOptions::default()).unwrap();
    for c in &model.coefficients {
        assert_eq!(c.r_hat, Some(1.0));
    }
}

#[test]
fn sampler_is_deterministic_and_thread_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = Design::from_rows(names(2), &clogit_rows(60, 4, &[0.5, -0.5], &mut rng)).unwrap();
    let settings = quick_settings(9);
    let a = fit_bayes("t", &d, &settings, &FitOptions::default()).unwrap().0;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| fit_bayes("t", &d, &settings, &FitOptions::default()).unwrap().0);
    assert_eq!(a, b);
}

#[test]
fn posterior_means_move_towards_mle_as_prior_widens() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let d = Design::from_rows(names(2), &clogit_rows(25, 4, &[1.0, -0.8], &mut rng)).unwrap();
    let mle = fit_mle(&d, &MleSettings::default()).unwrap();
    let mut last = f64::INFINITY;
    for v in [0.01, 0.1, 1.0, 10.0] {
        let settings = McmcSettings {
            prior_variance: v,
            ..quick_settings(21)
        };
        let (model, _) = fit_bayes("t", &d, &settings, &FitOptions::default()).unwrap();
        let dist: f64 = model
            .coefficients
            .iter()
            .zip(&mle.beta)
            .map(|(c, b)| (c.mean - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist < last, "prior variance {v}: distance {dist} after {last}");
        last = dist;
    }
}

#[test]
fn standardized_fit_recovers_raw_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let rows: Vec<Vec<Vec<f64>>> = clogit_rows(200, 4, &[0.8, -0.4], &mut rng)
        .into_iter()
        .map(|s| s.into_iter().map(|r| vec![r[0] * 10.0 + 100.0, r[1] * 0.1]).collect())
        .collect();
    let d = Design::from_rows(names(2), &rows).unwrap();
    let mle = fit_mle(&d, &MleSettings::default()).unwrap();
    let options = FitOptions {
        standardize: true,
        ..FitOptions::default()
    };
    let (model, _) = fit_bayes("t", &d, &quick_settings(3), &options).unwrap();
    let raw = model.raw_beta();
    for u in 0..2 {
        let se = mle.std_errors()[u];
        assert!((raw[u] - mle.beta[u]).abs() < 0.5 * se, "{u}: {} vs {}", raw[u], mle.beta[u]);
    }
}

#[test]
fn r_hat_of_same_distribution_chains_is_near_one() {
    let mut below = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chains: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..7500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        if r_hat(&refs) < 1.01 {
            below += 1;
        }
    }
    assert!(below >= 99, "{below}");
}
