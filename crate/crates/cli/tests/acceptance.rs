//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use chrono::{Datelike, Duration};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sigrisk_core::domain::{EventRole, Stratum};
use sigrisk_core::features::{compute_afr, compute_oafr, BoundaryMode, MeanMode, OafrSettings, StreamIndex};
use sigrisk_core::inference::{
    clogit_grad, clogit_loglik, fit_bayes, fit_mle, loglik, r_hat, Coefficients, Design, FitOptions, McmcSettings,
    MleSettings,
};
use sigrisk_core::matching::{build_dataset, filter_crashes, CrashLog, MatchingSettings, StudyPeriod};
use sigrisk_core::risk::paper::PRINTED_MODELS;
use sigrisk_core::risk::{adjust_scores, roc_auc};
use sigrisk_core::screening::{grid_bound, mic};
use sigrisk_core::simgen::synthetic::{clogit_rows, clogit_strata};
use sigrisk_core::simgen::{
    generate_streams, inject_crashes, recovery_experiment, RecoverySettings, ScenarioConfig,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn names(k: usize) -> Vec<String> {
    (0..k).map(|u| format!("x{u}")).collect()
}

// 1 --------------------------------------------------------------------------

fn table_self_consistency() -> Outcome {
    let (mut rows, mut worst_mean, mut worst_end) = (0, 0.0f64, 0.0f64);
    let mut bad = Vec::new();
    for m in &PRINTED_MODELS {
        for r in m.rows {
            rows += 1;
            let d_mean = (r.mean.exp() - r.odds_ratio).abs();
            let d_end = (r.interval.0.exp() - r.odds_ratio_interval.0)
                .abs()
                .max((r.interval.1.exp() - r.odds_ratio_interval.1).abs());
            worst_mean = worst_mean.max(d_mean);
            worst_end = worst_end.max(d_end);
            if d_mean >= 0.002 || d_end >= 0.005 {
                bad.push(format!("{}:{}", m.name, r.variable));
            }
        }
    }
    check(
        bad.is_empty() && rows >= 55,
        format!(
            "{rows} rows; max |exp(mean)-OR| {worst_mean:.5} (< 0.002), max endpoint gap {worst_end:.5} (< 0.005){}",
            if bad.is_empty() { String::new() } else { format!("; failing {}", bad.join(", ")) }
        ),
    )
}

// 2 --------------------------------------------------------------------------

fn likelihood_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exact = 0;
    let trials = 200;
    for _ in 0..trials {
        let n = rng.random_range(1..=400);
        let m = rng.random_range(1..=8);
        let k = rng.random_range(1..=6);
        let beta: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let strata = clogit_strata(&names(k), n, m, &beta, &mut rng);
        let ll = clogit_loglik(&Coefficients::zeros(names(k)), &strata).map_err(|e| e.to_string())?;
        if ll == -(n as f64) * ((m + 1) as f64).ln() {
            exact += 1;
        }
    }
    let n = 250usize;
    let strata = clogit_strata(&names(3), n, 4, &[0.3, -0.2, 0.1], &mut rng);
    let ll4 = clogit_loglik(&Coefficients::zeros(names(3)), &strata).map_err(|e| e.to_string())?;
    let m4_ok = ll4 == -(n as f64) * 1.6094379124341003;

    // Two-observation strata: ℓ = −ln(1 + exp(βᵀ(x₁ − x₀))) per stratum.
    let hand: Vec<(Vec<Vec<Vec<f64>>>, Vec<f64>, f64)> = vec![
        (vec![vec![vec![1.0], vec![0.0]]], vec![0.5], -(1.0 + (-0.5f64).exp()).ln()),
        (vec![vec![vec![0.0], vec![2.0]]], vec![1.0], -(1.0 + 2f64.exp()).ln()),
        (vec![vec![vec![3.0], vec![3.0]]], vec![-7.0], -(2f64.ln())),
        (
            vec![vec![vec![1.0, 2.0], vec![0.5, -1.0]]],
            vec![0.4, -0.3],
            -(1.0 + (0.4f64 * -0.5 + -0.3 * -3.0).exp()).ln(),
        ),
        (
            vec![vec![vec![1.0], vec![0.0]], vec![vec![-1.0], vec![1.0]]],
            vec![0.8],
            -(1.0 + (-0.8f64).exp()).ln() - (1.0 + 1.6f64.exp()).ln(),
        ),
    ];
    let mut worst = 0.0f64;
    for (rows, beta, expected) in &hand {
        let d = Design::from_rows(names(beta.len()), rows).map_err(|e| e.to_string())?;
        worst = worst.max((loglik(&d, beta) - expected).abs());
    }
    check(
        exact == trials && m4_ok && worst <= 1e-12,
        format!(
            "beta=0 exact on {exact}/{trials} random datasets; m=4 gives -N*1.609438 exactly: {m4_ok}; hand cases max error {worst:.1e} (<= 1e-12)"
        ),
    )
}

// 3 --------------------------------------------------------------------------

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(1..=10);
        let n = rng.random_range(1..=50);
        let m = rng.random_range(1..=6);
        let truth: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let strata = clogit_strata(&names(k), n, m, &truth, &mut rng);
        let beta: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
        let coef = Coefficients::new(names(k), beta.clone()).map_err(|e| e.to_string())?;
        let g = clogit_grad(&coef, &strata).map_err(|e| e.to_string())?;
        let h = 1e-5;
        for u in 0..k {
            let (mut up, mut down) = (beta.clone(), beta.clone());
            up[u] += h;
            down[u] -= h;
            let f = |b: Vec<f64>| clogit_loglik(&Coefficients::new(names(k), b).unwrap(), &strata).unwrap();
            let fd = (f(up) - f(down)) / (2.0 * h);
            worst = worst.max((g[u] - fd).abs() / fd.abs().max(1.0));
        }
    }
    check(
        worst < 1e-6,
        format!("100 instances (k <= 10, N <= 50); max relative error {worst:.2e} (< 1e-6)"),
    )
}

// 4 --------------------------------------------------------------------------

fn estimator_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = [0.5, -0.4, 0.2];
    let rows = clogit_rows(200, 4, &truth, &mut rng);
    let d = Design::from_rows(names(3), &rows).map_err(|e| e.to_string())?;
    let mle = fit_mle(&d, &MleSettings::default()).map_err(|e| e.to_string())?;
    let settings = McmcSettings {
        seed: 44,
        ..McmcSettings::default()
    };
    let (model, _) = fit_bayes("agreement", &d, &settings, &FitOptions::default()).map_err(|e| e.to_string())?;
    let gaps: Vec<f64> = model.coefficients.iter().zip(&mle.beta).map(|(c, b)| (c.mean - b).abs()).collect();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let max_r = model.coefficients.iter().filter_map(|c| c.r_hat).fold(0.0, f64::max);
    check(
        max_gap < 0.05 && max_r < 1.1 && model.coefficients.iter().all(|c| c.r_hat.is_some()),
        format!(
            "200 strata, 3 chains x {} (burn-in {}); max |mean-MLE| {max_gap:.4} (< 0.05); max R-hat {max_r:.4} (< 1.1)",
            settings.iterations, settings.burn_in
        ),
    )
}

// 5 --------------------------------------------------------------------------

fn parameter_recovery() -> Outcome {
    let path = repo_root().join("scenarios/example.json");
    let config: ScenarioConfig =
        serde_json::from_slice(&fs::read(&path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let settings = RecoverySettings::default();
    let report = recovery_experiment(&config, &settings).map_err(|e| e.to_string())?;
    let mut ok = report.used() >= 1;
    let mut parts = vec![format!("{} of {} replications used", report.used(), settings.replications)];
    for c in &report.coefficients {
        let sign_needed = c.true_beta.abs() >= 0.3;
        ok &= c.coverage >= 0.85 && (!sign_needed || c.sign_agreement >= 0.9);
        parts.push(format!(
            "{} beta={} coverage {:.2} sign {:.2} bias {:+.3}",
            c.name, c.true_beta, c.coverage, c.sign_agreement, c.bias
        ));
    }
    let held: Vec<(f64, f64)> = report
        .replications
        .iter()
        .filter_map(|r| Some((r.auc_held_out?, r.null_auc_sd?)))
        .collect();
    if !held.is_empty() {
        let n = held.len() as f64;
        let auc = held.iter().map(|h| h.0).sum::<f64>() / n;
        let sd = held.iter().map(|h| h.1).sum::<f64>() / n;
        parts.push(format!("mean held-out AUC {auc:.3} vs null 0.5 + 3sd = {:.3}", 0.5 + 3.0 * sd));
    }
    check(ok, parts.join("; "))
}

// 6 --------------------------------------------------------------------------

fn bgr() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows = clogit_rows(100, 4, &[0.5, -0.5], &mut rng);
    let d = Design::from_rows(names(2), &rows).map_err(|e| e.to_string())?;
    let settings = McmcSettings {
        iterations: 4000,
        burn_in: 1000,
        seed: 66,
        identical_chain_seeds: true,
        ..McmcSettings::default()
    };
    let (model, _) = fit_bayes("bgr", &d, &settings, &FitOptions::default()).map_err(|e| e.to_string())?;
    let identical = model.coefficients.iter().all(|c| c.r_hat == Some(1.0));
    let mut below = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let chains: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..7500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        if r_hat(&refs) < 1.01 {
            below += 1;
        }
    }
    check(
        identical && below >= 99,
        format!("identical chains give R-hat exactly 1.0: {identical}; same-distribution chains below 1.01 in {below}/100 (>= 99)"),
    )
}

// 7 --------------------------------------------------------------------------

fn oafr() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let arith = OafrSettings::default();
    let geo = OafrSettings {
        mean_mode: MeanMode::Geometric,
        ..arith
    };
    let mut exact = 0;
    for _ in 0..1000 {
        let v = [rng.random_range(0.01..2000.0), rng.random_range(0.01..2000.0)];
        if compute_oafr(&v, &geo).map_err(|e| e.to_string())? == 0.5 {
            exact += 1;
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let lanes = rng.random_range(2..=5);
        let v: Vec<f64> = (0..lanes).map(|_| rng.random_range(1.0..600.0)).collect();
        for mean_mode in [MeanMode::Arithmetic, MeanMode::Geometric] {
            for boundary_mode in [BoundaryMode::EqualSplit, BoundaryMode::ForcedDestination] {
                let s = OafrSettings {
                    mean_mode,
                    boundary_mode,
                    ..arith
                };
                let base = compute_oafr(&v, &s).map_err(|e| e.to_string())?;
                for k in [0.1, 1.0, 10.0] {
                    let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
                    let got = compute_oafr(&scaled, &s).map_err(|e| e.to_string())?;
                    worst = worst.max((got - base).abs());
                }
            }
        }
    }
    let forced = OafrSettings {
        boundary_mode: BoundaryMode::ForcedDestination,
        ..arith
    };
    let hand = [
        compute_oafr(&[100.0, 100.0], &arith).unwrap() - 0.5,
        compute_oafr(&[50.0, 150.0], &arith).unwrap() - (1.5 + 1.0 / 6.0) / 2.0,
        compute_afr(&[50.0, 150.0], 0, &arith).unwrap() - 1.5,
        compute_afr(&[100.0; 3], 1, &arith).unwrap() - 1.0,
        compute_afr(&[100.0; 3], 1, &forced).unwrap() - 2.0,
        compute_afr(&[100.0; 4], 1, &forced).unwrap() - 1.5,
    ];
    let hand_err = hand.iter().map(|d| d.abs()).fold(0.0, f64::max);
    check(
        exact == 1000 && worst <= 1e-12 && hand_err <= 1e-12,
        format!(
            "geometric 2-lane OAFR exactly 0.5 on {exact}/1000 pairs; scale k in {{0.1,1,10}} max change {worst:.1e} (<= 1e-12); hand cases max error {hand_err:.1e}"
        ),
    )
}

// 8 --------------------------------------------------------------------------

fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst, mut worst_adj, mut worst_log) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..100 {
        let n = rng.random_range(10..400);
        // Every other set draws from a handful of values: heavy ties.
        let levels = if t % 2 == 0 { rng.random_range(2..6) } else { 1_000_000 };
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let shift = if l { 1 } else { 0 };
                (rng.random_range(0..levels) + shift) as f64 * 0.25 + 0.01
            })
            .collect();
        let auc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?.auc;
        worst = worst.max((auc - mann_whitney(&scores, &labels)).abs());
        let adj = roc_auc(&adjust_scores(&scores), &labels).map_err(|e| e.to_string())?.auc;
        worst_adj = worst_adj.max((adj - auc).abs());
        let logs: Vec<f64> = scores.iter().map(|s| s.ln()).collect();
        worst_log = worst_log.max((roc_auc(&logs, &labels).map_err(|e| e.to_string())?.auc - auc).abs());
    }
    check(
        worst <= 1e-12 && worst_adj <= 1e-12 && worst_log <= 1e-12,
        format!(
            "100 sets (half heavily tied); max |AUC-MannWhitney| {worst:.1e}; adjusted-score change {worst_adj:.1e}; log-score change {worst_log:.1e} (all <= 1e-12)"
        ),
    )
}

// 9 --------------------------------------------------------------------------

/// Every grid within the size bound, cutting only between distinct values.
fn brute_force_mic(x: &[f64], y: &[f64]) -> f64 {
    fn cut_sets(sorted: &[f64], k: usize) -> Vec<Vec<usize>> {
        let n = sorted.len();
        let allowed: Vec<usize> = (1..n).filter(|&i| sorted[i] != sorted[i - 1]).collect();
        let mut out = Vec::new();
        fn rec(allowed: &[usize], start: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, n: usize) {
            if left == 0 {
                let mut c = cur.clone();
                c.push(n);
                out.push(c);
                return;
            }
            for i in start..allowed.len() {
                if allowed.len() - i < left {
                    break;
                }
                cur.push(allowed[i]);
                rec(allowed, i + 1, left - 1, cur, out, n);
                cur.pop();
            }
        }
        rec(&allowed, 0, k - 1, &mut Vec::new(), &mut out, n);
        out
    }
    fn entropy(counts: &[usize], n: f64) -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }
    let n = x.len();
    let bound = grid_bound(n, 0.6);
    let mut ox: Vec<usize> = (0..n).collect();
    ox.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut oy: Vec<usize> = (0..n).collect();
    oy.sort_by(|&i, &j| y[i].total_cmp(&y[j]));
    let xs: Vec<f64> = ox.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = oy.iter().map(|&i| y[i]).collect();
    let mut best = 0.0f64;
    for a in 2..=n {
        for b in 2..=n {
            if (a * b) as f64 > bound {
                continue;
            }
            let xcuts = cut_sets(&xs, a);
            for yc in cut_sets(&ys, b) {
                let mut row = vec![0usize; n];
                let mut start = 0;
                for (r, &end) in yc.iter().enumerate() {
                    for &i in &oy[start..end] {
                        row[i] = r;
                    }
                    start = end;
                }
                let mut cum = vec![vec![0usize; b]; n + 1];
                for (pos, &i) in ox.iter().enumerate() {
                    cum[pos + 1] = cum[pos].clone();
                    cum[pos + 1][row[i]] += 1;
                }
                let h_rows = entropy(&cum[n], n as f64);
                for xc in &xcuts {
                    let (mut h_cond, mut s) = (0.0, 0);
                    for &e in xc {
                        let counts: Vec<usize> = (0..b).map(|r| cum[e][r] - cum[s][r]).collect();
                        h_cond += (e - s) as f64 / n as f64 * entropy(&counts, (e - s) as f64);
                        s = e;
                    }
                    best = best.max((h_rows - h_cond) / (a.min(b) as f64).ln());
                }
            }
        }
    }
    best.min(1.0)
}

fn mic_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..10.0)).collect();
    let monotone = [
        mic(&x, &x.iter().map(|v| v.powi(3)).collect::<Vec<_>>()),
        mic(&x, &x.iter().map(|v| (-v).exp()).collect::<Vec<_>>()),
        mic(&x, &x.iter().map(|v| v.ln()).collect::<Vec<_>>()),
    ];
    let min_monotone = monotone
        .into_iter()
        .map(|r| r.map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(1.0, f64::min);

    let mut below = 0;
    let mut symmetric = true;
    for _ in 0..100 {
        let a: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        let mut b = a.iter().map(|v| v * v + 0.1 * v).collect::<Vec<f64>>();
        b.shuffle(&mut rng);
        let ab = mic(&a, &b).map_err(|e| e.to_string())?;
        if ab < 0.35 {
            below += 1;
        }
        symmetric &= ab == mic(&b, &a).map_err(|e| e.to_string())?;
    }

    let x50: Vec<f64> = (0..50).map(|i| i as f64 + rng.random::<f64>() * 0.5).collect();
    let cases: Vec<Vec<f64>> = vec![
        x50.iter().map(|v| v.powi(3)).collect(),
        x50.iter().map(|v| (-v / 10.0).exp()).collect(),
        x50.iter().map(|v| (v - 25.0).powi(2)).collect(),
        x50.iter().map(|v| (v / 4.0).sin()).collect(),
    ];
    let mut worst = 0.0f64;
    for y in &cases {
        worst = worst.max((mic(&x50, y).map_err(|e| e.to_string())? - brute_force_mic(&x50, y)).abs());
    }
    check(
        min_monotone >= 0.99 && below >= 95 && symmetric && worst <= 0.02,
        format!(
            "noiseless monotone n=200 min MIC {min_monotone:.4} (>= 0.99); permutation null < 0.35 in {below}/100 (>= 95); symmetric: {symmetric}; exhaustive n=50 max gap {worst:.4} (<= 0.02)"
        ),
    )
}

// 10 -------------------------------------------------------------------------

fn matching_integrity() -> Outcome {
    let config = ScenarioConfig {
        n_intersections: 3,
        days: 365,
        ..ScenarioConfig::new(0.0002, 1010)
    };
    let streams = generate_streams(&config).map_err(|e| e.to_string())?;
    let injection = inject_crashes(&streams, &config).map_err(|e| e.to_string())?;
    let (kept, _) = filter_crashes(&injection.crashes, &streams.intersections);
    let period = StudyPeriod::from_streams(&streams).ok_or("empty volume feed")?;
    let index = StreamIndex::new(&streams).map_err(|e| e.to_string())?;
    let settings = MatchingSettings {
        rng_seed: 10,
        ..MatchingSettings::default()
    };
    let build = build_dataset(
        &kept,
        &CrashLog::new(&injection.crashes),
        &index,
        &period,
        &settings,
        &config.oafr,
    )
    .map_err(|e| e.to_string())?;
    let strata: Vec<&Stratum> = build.datasets.iter().flat_map(|d| &d.strata).collect();

    // Independent post-hoc audit against the full crash log.
    let window = Duration::hours(3);
    let (mut cases, mut controls, mut ratio, mut factor, mut exclusion) = (0, 0, 0, 0, 0);
    for s in &strata {
        cases += 1;
        controls += s.controls.len();
        if s.controls.len() != 4 || s.keys.len() != 5 {
            ratio += 1;
            continue;
        }
        let crash = &s.keys[0];
        if crash.role != EventRole::Crash {
            factor += 1;
        }
        for k in &s.keys[1..] {
            if k.role != EventRole::Control
                || k.intersection != crash.intersection
                || k.location_class != crash.location_class
                || k.instant.weekday() != crash.instant.weekday()
                || k.instant.time() != crash.instant.time()
                || k.instant == crash.instant
            {
                factor += 1;
            }
            if injection
                .crashes
                .iter()
                .any(|c| c.intersection == k.intersection && (c.occurred_at - k.instant).abs() <= window)
            {
                exclusion += 1;
            }
        }
    }
    check(
        cases > 0 && controls == 4 * cases && ratio == 0 && factor == 0 && exclusion == 0,
        format!(
            "{} days x {} intersections: {cases} strata, {controls} controls (ratio {:.2}); ratio violations {ratio}, factor violations {factor}, 3-hour exclusion violations {exclusion}",
            config.days,
            config.n_intersections,
            controls as f64 / cases.max(1) as f64
        ),
    )
}

// 11 -------------------------------------------------------------------------

fn sigrisk(threads: usize, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sigrisk"))
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Run the whole pipeline under `root` and return every output file except
/// the manifests, keyed by path relative to `root`.
fn pipeline(root: &Path, scenario: &Path, threads: usize) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let p = |s: &str| root.join(s).display().to_string();
    let sc = scenario.display().to_string();
    sigrisk(threads, &["simulate", "--scenario", &sc, "--out", &p("sim")])?;
    sigrisk(threads, &["prepare", "--streams", &p("sim"), "--out", &p("prep")])?;
    sigrisk(
        threads,
        &["match", "--streams", &p("sim"), "--crashes", &p("prep/prepared_crashes.csv"), "--m", "4", "--seed", "11", "--out", &p("match")],
    )?;
    sigrisk(threads, &["screen", "--data", &p("match/within.csv"), "--slice", "1", "--out", &p("screen/report.csv")])?;
    sigrisk(
        threads,
        &[
            "fit", "--data", &p("match/within.csv"), "--vars", "Avg_speed,A_OAFR,B_TH_GreenRatio", "--slice", "1",
            "--chains", "3", "--iters", "3000", "--burn", "1000", "--seed", "12", "--out", &p("fit/model.json"),
        ],
    )?;
    sigrisk(threads, &["score", "--model", &p("fit/model.json"), "--data", &p("match/within.csv"), "--out", &p("score/scores.csv")])?;
    sigrisk(
        threads,
        &["score", "--paper-model", "within_full", "--data", &p("match/within.csv"), "--out", &p("paper/scores.csv")],
    )?;
    sigrisk(threads, &["evaluate", "--scores", &p("score/scores.csv"), "--out", &p("score/roc.csv")])?;
    sigrisk(threads, &["report", "--data", &p("match/within.csv"), "--out", &p("report/stats.csv")])?;
    sigrisk(
        threads,
        &["recover", "--scenario", &sc, "--reps", "2", "--iters", "2000", "--burn", "500", "--out", &p("recover")],
    )?;
    let mut files = BTreeMap::new();
    let (mut dirs, mut manifests) = (0, 0);
    for dir in fs::read_dir(root).map_err(|e| e.to_string())? {
        let dir = dir.map_err(|e| e.to_string())?.path();
        if !dir.is_dir() {
            continue;
        }
        dirs += 1;
        for f in fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let f = f.map_err(|e| e.to_string())?.path();
            let rel = f.strip_prefix(root).unwrap().display().to_string();
            if f.file_name().is_some_and(|n| n == "manifest.json") {
                manifests += 1;
                continue;
            }
            files.insert(rel, fs::read(&f).map_err(|e| e.to_string())?);
        }
    }
    if manifests != dirs {
        return Err(format!("{dirs} output directories but {manifests} manifests"));
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scenario = tmp.path().join("scenario.json");
    fs::write(
        &scenario,
        r#"{"n_intersections": 2, "days": 70, "base_rate": 0.0005, "seed": 31,
            "true_beta": {"Avg_speed_0_5": -0.5, "A_OAFR_0_5": 0.4, "B_TH_GreenRatio_0_5": -0.3}}"#,
    )
    .map_err(|e| e.to_string())?;
    let a = pipeline(&tmp.path().join("t1"), &scenario, 1)?;
    let b = pipeline(&tmp.path().join("t4"), &scenario, 4)?;
    let c = pipeline(&tmp.path().join("t4-again"), &scenario, 4)?;
    let differing: Vec<&String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k) || b.get(*k) != c.get(*k))
        .collect();
    let bytes: usize = a.values().map(Vec::len).sum();
    check(
        differing.is_empty() && a.len() > 20,
        format!(
            "9 subcommands, {} output files ({bytes} bytes) identical across --threads 1, 4 and a rerun{}",
            a.len(),
            if differing.is_empty() { String::new() } else { format!("; differing: {differing:?}") }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("table self-consistency", table_self_consistency),
        ("likelihood correctness", likelihood_correctness),
        ("gradient oracle", gradient_oracle),
        ("estimator agreement", estimator_agreement),
        ("parameter recovery", parameter_recovery),
        ("BGR diagnostic", bgr),
        ("OAFR", oafr),
        ("AUC oracle", auc_oracle),
        ("MIC", mic_checks),
        ("matching integrity", matching_integrity),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args().filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !only.is_empty() && !only.contains(&number) {
            continue;
        }
        let clock = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = clock.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {number:>2} PASS {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {number:>2} FAIL {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
