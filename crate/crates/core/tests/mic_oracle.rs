//! MIC against an exhaustive search over every grid within the size bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigrisk_core::screening::{grid_bound, mic};

/// All ways to cut `n` sorted positions into `k` contiguous non-empty groups,
/// cutting only between distinct values. Each item lists group end indices.
fn cut_sets(sorted: &[f64], k: usize) -> Vec<Vec<usize>> {
    let n = sorted.len();
    let allowed: Vec<usize> = (1..n).filter(|&i| sorted[i] != sorted[i - 1]).collect();
    let mut out = Vec::new();
    let mut cur = Vec::new();
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
    rec(&allowed, 0, k - 1, &mut cur, &mut out, n);
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

fn brute_force_mic(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let b = grid_bound(n, 0.6);
    let mut ox: Vec<usize> = (0..n).collect();
    ox.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut oy: Vec<usize> = (0..n).collect();
    oy.sort_by(|&i, &j| y[i].total_cmp(&y[j]));
    let xs: Vec<f64> = ox.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = oy.iter().map(|&i| y[i]).collect();
    let mut best = 0.0f64;
    for a in 2..=n {
        for bb in 2..=n {
            if (a * bb) as f64 > b {
                continue;
            }
            let xcuts = cut_sets(&xs, a);
            let ycuts = cut_sets(&ys, bb);
            for yc in &ycuts {
                let mut row = vec![0usize; n];
                let mut start = 0;
                for (r, &end) in yc.iter().enumerate() {
                    for &i in &oy[start..end] {
                        row[i] = r;
                    }
                    start = end;
                }
                // cum[pos][r]: points among the first `pos` in x order in row r.
                let mut cum = vec![vec![0usize; bb]; n + 1];
                for (pos, &i) in ox.iter().enumerate() {
                    cum[pos + 1] = cum[pos].clone();
                    cum[pos + 1][row[i]] += 1;
                }
                let h_rows = entropy(&cum[n], n as f64);
                for xc in &xcuts {
                    let mut h_cond = 0.0;
                    let mut s = 0;
                    for &e in xc {
                        let counts: Vec<usize> = (0..bb).map(|r| cum[e][r] - cum[s][r]).collect();
                        let m = (e - s) as f64;
                        h_cond += m / n as f64 * entropy(&counts, m);
                        s = e;
                    }
                    let score = (h_rows - h_cond) / (a.min(bb) as f64).ln();
                    best = best.max(score);
                }
            }
        }
    }
    best.min(1.0)
}

fn sample_x(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..50).map(|i| i as f64 + rng.random::<f64>() * 0.5).collect()
}

#[test]
fn noiseless_relationships_match_exhaustive_search_at_n50() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let x = sample_x(&mut rng);
    let cases: Vec<(&str, Vec<f64>)> = vec![
        ("cubic", x.iter().map(|v| v.powi(3)).collect()),
        ("decreasing", x.iter().map(|v| (-v / 10.0).exp()).collect()),
        ("parabola", x.iter().map(|v| (v - 25.0).powi(2)).collect()),
        ("sine", x.iter().map(|v| (v / 4.0).sin()).collect()),
        ("step", x.iter().map(|v| if *v < 20.0 { 0.0 } else { 1.0 }).collect()),
    ];
    for (label, y) in cases {
        let approx = mic(&x, &y).unwrap();
        let exact = brute_force_mic(&x, &y);
        println!("{label}: approx {approx:.4} exhaustive {exact:.4}");
        assert!((approx - exact).abs() <= 0.02, "{label}: {approx} vs {exact}");
    }
}

#[test]
fn approximation_never_exceeds_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let x = sample_x(&mut rng);
    let cases: Vec<(&str, Vec<f64>)> = vec![
        ("noisy linear", x.iter().map(|v| v + rng.random::<f64>() * 15.0).collect()),
        ("independent", (0..50).map(|_| rng.random::<f64>()).collect()),
    ];
    for (label, y) in cases {
        let approx = mic(&x, &y).unwrap();
        let exact = brute_force_mic(&x, &y);
        println!("{label}: approx {approx:.4} exhaustive {exact:.4}");
        assert!(approx <= exact + 1e-9, "{label}: {approx} > {exact}");
    }
}
