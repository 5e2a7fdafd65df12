//! Convergence and summary statistics for MCMC draws.

/// Potential scale reduction factor over equal-length chains:
/// `max(1, √((n−1)/n + B/(nW)))`.
///
/// Zero within-chain variance gives +∞ when the chain means differ and 1
/// when they agree.
pub fn r_hat(chains: &[&[f64]]) -> f64 {
    assert!(chains.len() >= 2, "R-hat needs at least two chains");
    let n = chains[0].len();
    assert!(n >= 2 && chains.iter().all(|c| c.len() == n), "chains must share a length of at least 2");
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    ((nf - 1.0) / nf + b / (nf * w)).sqrt().max(1.0)
}

/// Effective sample size across chains, truncating the averaged
/// autocorrelations at the first non-positive pair sum and enforcing a
/// monotone sequence of pair sums.
pub fn effective_sample_size(chains: &[&[f64]]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return (m * n) as f64;
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / nf).collect();
    let vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .collect();
    let w = vars.iter().sum::<f64>() / m as f64;
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = if m > 1 {
        nf / (m as f64 - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>()
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    if var_plus <= 0.0 {
        return (m * n) as f64;
    }
    let autocov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| {
                (0..n - lag)
                    .map(|t| (c[t] - mu) * (c[t + lag] - mu))
                    .sum::<f64>()
                    / nf
            })
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| 1.0 - (w - autocov(lag)) / var_plus;
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    let total = (m * n) as f64;
    // Antithetic chains can push tau below 1; cap the gain as usual.
    total / tau.max(1.0 / total.log10())
}

/// Sample quantile with linear interpolation between order statistics
/// (the default definition in R and NumPy). `sorted` must be ascending.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_chains_give_exactly_one() {
        let c: Vec<f64> = (0..100).map(|i| ((i * 31) % 17) as f64).collect();
        assert_eq!(r_hat(&[&c, &c, &c]), 1.0);
    }

    #[test]
    fn degenerate_chains() {
        assert_eq!(r_hat(&[&[1.0; 10], &[2.0; 10]]), f64::INFINITY);
        assert_eq!(r_hat(&[&[3.0; 10], &[3.0; 10]]), 1.0);
    }

    #[test]
    fn separated_chains_have_large_r_hat() {
        let a: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        assert!(r_hat(&[&a, &b]) > 2.0);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn ess_of_independent_draws_is_near_n() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let ess = effective_sample_size(&[&a, &b]);
        assert!(ess > 6000.0 && ess < 10000.0, "{ess}");
        // A sticky chain has far fewer effective draws.
        let sticky: Vec<f64> = (0..4000).map(|i| a[i / 50]).collect();
        let sticky2: Vec<f64> = (0..4000).map(|i| b[i / 50]).collect();
        assert!(effective_sample_size(&[&sticky, &sticky2]) < 400.0);
    }
}
