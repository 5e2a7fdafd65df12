//! Maximal information coefficient via the approximate characteristic-matrix
//! search: equipartition one axis, clump the other, then optimise the
//! clumped axis by dynamic programming.

use super::ScreeningError;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MicParams {
    /// Grid-size exponent: cells ≤ n^alpha.
    pub alpha: f64,
    /// Clump factor: at most `c` superclumps per permitted column.
    pub c: f64,
}

impl Default for MicParams {
    fn default() -> Self {
        MicParams { alpha: 0.6, c: 15.0 }
    }
}

pub const MIN_OBSERVATIONS: usize = 10;

/// Grid-size bound B(n) = max(n^alpha, 4).
pub fn grid_bound(n: usize, alpha: f64) -> f64 {
    (n as f64).powf(alpha).max(4.0)
}

pub fn mic(x: &[f64], y: &[f64]) -> Result<f64, ScreeningError> {
    mic_with(x, y, &MicParams::default())
}

pub fn mic_with(x: &[f64], y: &[f64], params: &MicParams) -> Result<f64, ScreeningError> {
    if x.len() != y.len() {
        return Err(ScreeningError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < MIN_OBSERVATIONS {
        return Err(ScreeningError::TooFewObservations {
            n: x.len(),
            min: MIN_OBSERVATIONS,
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(ScreeningError::NonFinite);
    }
    if !(params.alpha > 0.0 && params.alpha <= 1.0 && params.c > 0.0) {
        return Err(ScreeningError::InvalidParameter(format!(
            "alpha = {}, c = {}",
            params.alpha, params.c
        )));
    }
    if is_constant(x) || is_constant(y) {
        return Ok(0.0);
    }
    let xlx = XLogX::new(x.len());
    let a = best_score(x, y, params, &xlx);
    let b = best_score(y, x, params, &xlx);
    Ok(a.max(b).clamp(0.0, 1.0))
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&a| a == v[0])
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

/// Table of k·ln k for integer counts.
struct XLogX(Vec<f64>);

impl XLogX {
    fn new(n: usize) -> Self {
        XLogX(
            (0..=n)
                .map(|k| if k == 0 { 0.0 } else { k as f64 * (k as f64).ln() })
                .collect(),
        )
    }

    fn at(&self, k: usize) -> f64 {
        self.0[k]
    }
}

/// Split sorted values into `bins` rows of near-equal size, never separating
/// tied values. Returns per-position labels and the number of rows made.
pub(crate) fn equipartition(sorted: &[f64], bins: usize) -> (Vec<usize>, usize) {
    let n = sorted.len();
    let mut labels = vec![0; n];
    let mut i = 0;
    let mut h = 0usize;
    let mut curr = 0usize;
    let mut rowsize = n as f64 / bins as f64;
    while i < n {
        let mut s = 1;
        while i + s < n && sorted[i + s] == sorted[i] {
            s += 1;
        }
        if h != 0 && ((h + s) as f64 - rowsize).abs() >= (h as f64 - rowsize).abs() {
            curr += 1;
            h = 0;
            rowsize = (n - i) as f64 / (bins - curr) as f64;
        }
        for l in &mut labels[i..i + s] {
            *l = curr;
        }
        i += s;
        h += s;
    }
    (labels, curr + 1)
}

/// Maximal runs of equal row label along the sorted column axis. A group of
/// tied column values that spans several rows becomes a clump of its own.
pub(crate) fn clumps(sorted: &[f64], rows: &[usize]) -> (Vec<usize>, usize) {
    let n = sorted.len();
    let mut tilde: Vec<i64> = rows.iter().map(|&r| r as i64).collect();
    let mut next_mixed = -1i64;
    let mut i = 0;
    while i < n {
        let mut s = 1;
        let mut mixed = false;
        while i + s < n && sorted[i + s] == sorted[i] {
            if rows[i + s] != rows[i] {
                mixed = true;
            }
            s += 1;
        }
        if mixed {
            for t in &mut tilde[i..i + s] {
                *t = next_mixed;
            }
            next_mixed -= 1;
        }
        i += s;
    }
    let mut labels = vec![0; n];
    let mut p = 0;
    for j in 1..n {
        if tilde[j] != tilde[j - 1] {
            p += 1;
        }
        labels[j] = p;
    }
    (labels, p + 1)
}

/// Clumps merged into at most `k_hat` superclumps of near-equal size.
pub(crate) fn superclumps(sorted: &[f64], rows: &[usize], k_hat: usize) -> (Vec<usize>, usize) {
    let (labels, p) = clumps(sorted, rows);
    if p <= k_hat {
        return (labels, p);
    }
    let as_values: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    equipartition(&as_values, k_hat)
}

/// Best normalised score with rows equipartitioned on `ys` and columns
/// optimised over clumps of `xs`.
fn best_score(xs: &[f64], ys: &[f64], params: &MicParams, xlx: &XLogX) -> f64 {
    let n = xs.len();
    let b = grid_bound(n, params.alpha);
    let order_y = argsort(ys);
    let order_x = argsort(xs);
    let ys_sorted: Vec<f64> = order_y.iter().map(|&i| ys[i]).collect();
    let xs_sorted: Vec<f64> = order_x.iter().map(|&i| xs[i]).collect();
    let mut rank_y = vec![0; n];
    for (pos, &i) in order_y.iter().enumerate() {
        rank_y[i] = pos;
    }
    let max_rows = ((b / 2.0).floor() as usize).max(2);
    let mut best = 0.0f64;
    for rows in 2..=max_rows {
        let max_cols = (b / rows as f64).floor() as usize;
        if max_cols < 2 {
            continue;
        }
        let (row_by_y, q) = equipartition(&ys_sorted, rows);
        if q < 2 {
            continue;
        }
        let row_by_x: Vec<usize> = order_x.iter().map(|&i| row_by_y[rank_y[i]]).collect();
        let k_hat = ((params.c * max_cols as f64) as usize).max(1);
        let (col_by_x, p) = superclumps(&xs_sorted, &row_by_x, k_hat);
        let info = optimize_columns(&row_by_x, q, &col_by_x, p, max_cols, xlx);
        for (l, i) in info.iter().enumerate() {
            let cols = l + 2;
            let score = i / (cols.min(q) as f64).ln();
            best = best.max(score);
        }
    }
    best
}

/// Mutual information (nats) of the best partition of the `p` clumps into at
/// most l contiguous columns, for l = 2..=max_cols.
fn optimize_columns(
    rows: &[usize],
    q: usize,
    clump_of: &[usize],
    p: usize,
    max_cols: usize,
    xlx: &XLogX,
) -> Vec<f64> {
    let n = rows.len();
    let mut out = vec![0.0; max_cols - 1];
    if p < 2 {
        return out;
    }
    // cum[t * q + r]: points in the first t clumps that fall in row r.
    let mut cum = vec![0usize; (p + 1) * q];
    for (j, &r) in rows.iter().enumerate() {
        cum[(clump_of[j] + 1) * q + r] += 1;
    }
    for t in 1..=p {
        for r in 0..q {
            cum[t * q + r] += cum[(t - 1) * q + r];
        }
    }
    let row_totals = &cum[p * q..];
    let h_q = (xlx.at(n) - row_totals.iter().map(|&c| xlx.at(c)).sum::<f64>()) / n as f64;
    // n_col · H(rows | column) for the column made of clumps s+1..=t.
    let cost = |s: usize, t: usize| -> f64 {
        let mut total = 0;
        let mut acc = 0.0;
        for r in 0..q {
            let h = cum[t * q + r] - cum[s * q + r];
            total += h;
            acc += xlx.at(h);
        }
        xlx.at(total) - acc
    };
    let mut costs = vec![0.0; (p + 1) * (p + 1)];
    for s in 0..p {
        for t in s + 1..=p {
            costs[s * (p + 1) + t] = cost(s, t);
        }
    }
    let l_max = max_cols.min(p);
    let mut prev: Vec<f64> = (0..=p).map(|t| if t == 0 { 0.0 } else { costs[t] }).collect();
    let mut best = prev[p];
    for l in 2..=max_cols {
        if l <= l_max {
            let mut cur = vec![f64::INFINITY; p + 1];
            for t in l..=p {
                let mut m = f64::INFINITY;
                for s in l - 1..t {
                    let v = prev[s] + costs[s * (p + 1) + t];
                    if v < m {
                        m = v;
                    }
                }
                cur[t] = m;
            }
            best = best.min(cur[p]);
            prev = cur;
        }
        out[l - 2] = h_q - best / n as f64;
    }
    out
}
