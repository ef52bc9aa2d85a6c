//! Maximal information coefficient.
//!
//! Over all grids of `k` x-bins by `l` y-bins with `k*l <= B(n)`, `B(n) =
//! n^0.6`, MIC is the maximum of `I(grid) / ln(min(k, l))`. One axis is
//! equipartitioned and the other optimized: the shipped implementation uses
//! exact dynamic programming over the allowed cut positions (between distinct
//! values), and both orientations are evaluated so the statistic is symmetric
//! in its arguments. `mic_exhaustive` replaces the DP with brute-force cut
//! enumeration and is kept as the reference for small n.
//!
//! Constant input is defined as 0. The grid budget is clamped to at least 4
//! so the 2x2 grid always fits (bare `n^0.6` would exclude it at n = 10).

use crate::error::{Error, Result};

fn validate(xs: &[f64], ys: &[f64]) -> Result<usize> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "mic lengths {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "mic needs at least 10 samples, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("mic input contains non-finite values".into()));
    }
    Ok(xs.len())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

fn budget(n: usize) -> usize {
    ((n as f64).powf(0.6).floor() as usize).max(4)
}

/// Assign each point a row in [0, l) by equipartitioning on `ys`. Ties share
/// a row; boundaries are re-targeted greedily as rows fill.
fn equipartition_rows(ys: &[f64], l: usize) -> Vec<usize> {
    let n = ys.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ys[a].partial_cmp(&ys[b]).expect("finite"));

    let mut rows = vec![0usize; n];
    let mut row = 0usize;
    let mut row_size = 0usize;
    let mut assigned = 0usize;
    let mut i = 0usize;
    while i < n {
        // Run of tied y values.
        let mut j = i;
        while j < n && ys[order[j]] == ys[order[i]] {
            j += 1;
        }
        let run = j - i;
        let desired = (n - assigned) as f64 / (l - row) as f64;
        let overshoot = (row_size as f64 + run as f64 - desired).abs();
        let stop_short = (row_size as f64 - desired).abs();
        if row_size > 0 && overshoot >= stop_short && row + 1 < l {
            row += 1;
            row_size = 0;
        }
        for &idx in &order[i..j] {
            rows[idx] = row;
        }
        row_size += run;
        assigned += run;
        i = j;
    }
    rows
}

/// Group points by ascending x into runs of equal x. Returns, per run, the
/// count of points in each row: `run_rows[run][row]`.
fn x_runs(xs: &[f64], rows: &[usize], l: usize) -> Vec<Vec<usize>> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite"));
    let mut runs = Vec::new();
    let mut i = 0usize;
    while i < n {
        let mut j = i;
        let mut counts = vec![0usize; l];
        while j < n && xs[order[j]] == xs[order[i]] {
            counts[rows[order[j]]] += 1;
            j += 1;
        }
        runs.push(counts);
        i = j;
    }
    runs
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Clump factor of the cited approximation: the x-axis DP considers at most
/// `CLUMP_FACTOR * kmax` candidate cut groups.
const CLUMP_FACTOR: usize = 15;
/// Never coarsen below this many positions, so small inputs (the exhaustive
/// oracle regime, n <= 50) are always searched exactly.
const MIN_EXACT_POSITIONS: usize = 60;

/// Merge adjacent x-runs into at most `target` superclumps of roughly equal
/// point counts. Runs are atomic (tied x values can never be split).
fn coarsen_runs(runs: Vec<Vec<usize>>, target: usize) -> Vec<Vec<usize>> {
    if runs.len() <= target {
        return runs;
    }
    let l = runs[0].len();
    let total: usize = runs.iter().map(|r| r.iter().sum::<usize>()).sum();
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(target);
    let mut current = vec![0usize; l];
    let mut current_count = 0usize;
    let mut assigned = 0usize;
    for (idx, run) in runs.iter().enumerate() {
        let run_count: usize = run.iter().sum();
        let groups_left = target - out.len();
        let desired = (total - assigned) as f64 / groups_left as f64;
        let overshoot = (current_count as f64 + run_count as f64 - desired).abs();
        let stop_short = (current_count as f64 - desired).abs();
        let runs_left = runs.len() - idx;
        if current_count > 0 && overshoot >= stop_short && groups_left > 1 && runs_left >= groups_left
        {
            out.push(std::mem::replace(&mut current, vec![0usize; l]));
            current_count = 0;
        }
        for (c, &v) in current.iter_mut().zip(run) {
            *c += v;
        }
        current_count += run_count;
        assigned += run_count;
    }
    if current_count > 0 {
        out.push(current);
    }
    out
}

/// Entropy of the row marginal distribution.
fn row_entropy(rows: &[usize], l: usize) -> f64 {
    let n = rows.len() as f64;
    let mut counts = vec![0usize; l];
    for &r in rows {
        counts[r] += 1;
    }
    -counts.iter().map(|&c| xlogx(c as f64 / n)).sum::<f64>()
}

/// Best value over x-partitions of `sum_r p_cr ln p_cr - p_c ln p_c` summed
/// over columns, for every column count `t` in 2..=kmax. Exact DP: columns
/// are unions of consecutive x-runs, every column nonempty.
fn optimize_x_dp(runs: &[Vec<usize>], l: usize, kmax: usize, n: usize) -> Vec<f64> {
    let m = runs.len();
    // prefix[j][r] = count of row r in the first j runs.
    let mut prefix = vec![vec![0usize; l]; m + 1];
    for j in 0..m {
        for r in 0..l {
            prefix[j + 1][r] = prefix[j][r] + runs[j][r];
        }
    }
    let nf = n as f64;
    let col_score = |a: usize, b: usize| -> f64 {
        let mut s = 0.0;
        let mut total = 0usize;
        for r in 0..l {
            let c = prefix[b][r] - prefix[a][r];
            total += c;
            s += xlogx(c as f64 / nf);
        }
        s - xlogx(total as f64 / nf)
    };

    let kmax = kmax.min(m);
    // f[t][j]: best over partitions of the first j runs into exactly t columns.
    let mut f = vec![vec![f64::NEG_INFINITY; m + 1]; kmax + 1];
    for j in 1..=m {
        f[1][j] = col_score(0, j);
    }
    for t in 2..=kmax {
        for j in t..=m {
            let mut best = f64::NEG_INFINITY;
            for i in t - 1..j {
                let v = f[t - 1][i] + col_score(i, j);
                if v > best {
                    best = v;
                }
            }
            f[t][j] = best;
        }
    }

    // best_for[t] = best over exactly 2..=t columns of the full data.
    let mut best_for = vec![f64::NEG_INFINITY; kmax + 1];
    let mut running = f64::NEG_INFINITY;
    for t in 2..=kmax {
        running = running.max(f[t][m]);
        best_for[t] = running;
    }
    best_for
}

/// Optimizer over x-partitions: (runs, rows, kmax, n) -> best G per column
/// budget.
type XAxisOptimizer = dyn Fn(&[Vec<usize>], usize, usize, usize) -> Vec<f64>;

/// Max over grids (k x-bins, l y-bins, k*l <= b) of I / ln(min(k, l)), with
/// the y axis equipartitioned and the x axis optimized by `optimize`.
fn char_max(xs: &[f64], ys: &[f64], b: usize, optimize: &XAxisOptimizer) -> f64 {
    let n = xs.len();
    let mut best: f64 = 0.0;
    let mut l = 2;
    while 2 * l <= b {
        let kmax = b / l;
        let rows = equipartition_rows(ys, l);
        let distinct_rows = {
            let mut seen = vec![false; l];
            for &r in &rows {
                seen[r] = true;
            }
            seen.iter().filter(|&&s| s).count()
        };
        if distinct_rows >= 2 {
            let hq = row_entropy(&rows, l);
            let runs = x_runs(xs, &rows, l);
            let target = (CLUMP_FACTOR * kmax).max(MIN_EXACT_POSITIONS);
            let runs = coarsen_runs(runs, target);
            let g = optimize(&runs, l, kmax, n);
            for k in 2..=kmax.min(g.len().saturating_sub(1)) {
                if g[k] == f64::NEG_INFINITY {
                    continue;
                }
                let mi = g[k] + hq;
                let norm = mi / (k.min(l) as f64).ln();
                if norm > best {
                    best = norm;
                }
            }
        }
        l += 1;
    }
    best
}

/// Maximal information coefficient in [0, 1].
pub fn mic(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = validate(xs, ys)?;
    if is_constant(xs) || is_constant(ys) {
        return Ok(0.0);
    }
    let b = budget(n);
    let forward = char_max(xs, ys, b, &optimize_x_dp);
    let backward = char_max(ys, xs, b, &optimize_x_dp);
    Ok(forward.max(backward).min(1.0))
}

/// Reference MIC for small n: identical grid conventions, but the x-axis
/// partition is found by brute-force enumeration of cut positions and the
/// mutual information of each candidate grid is computed directly from joint
/// counts. Quadratic-to-combinatorial cost; intended for n <= 50.
pub fn mic_exhaustive(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = validate(xs, ys)?;
    if is_constant(xs) || is_constant(ys) {
        return Ok(0.0);
    }
    let b = budget(n);
    let forward = char_max(xs, ys, b, &optimize_x_brute);
    let backward = char_max(ys, xs, b, &optimize_x_brute);
    Ok(forward.max(backward).min(1.0))
}

/// Brute-force counterpart of `optimize_x_dp`: enumerate every way to place
/// t-1 cuts between x-runs, compute I directly, and convert back to the G
/// convention (G = I - H(Q)) so both optimizers are comparable.
fn optimize_x_brute(runs: &[Vec<usize>], l: usize, kmax: usize, n: usize) -> Vec<f64> {
    let m = runs.len();
    let kmax = kmax.min(m);
    let nf = n as f64;

    // Row marginal entropy.
    let mut row_tot = vec![0usize; l];
    for run in runs {
        for (r, &c) in run.iter().enumerate() {
            row_tot[r] += c;
        }
    }
    let hq: f64 = -row_tot.iter().map(|&c| xlogx(c as f64 / nf)).sum::<f64>();

    let grid_mi = |cuts: &[usize]| -> f64 {
        // cuts: interior boundaries (run indices), defining cuts.len()+1 columns.
        let mut mi = 0.0;
        let mut start = 0usize;
        let bounds: Vec<usize> = cuts.iter().copied().chain(std::iter::once(m)).collect();
        for &end in &bounds {
            let mut col = vec![0usize; l];
            for run in &runs[start..end] {
                for (r, &c) in run.iter().enumerate() {
                    col[r] += c;
                }
            }
            let col_total: usize = col.iter().sum();
            for (r, &c) in col.iter().enumerate() {
                if c > 0 {
                    let p_joint = c as f64 / nf;
                    let p_col = col_total as f64 / nf;
                    let p_row = row_tot[r] as f64 / nf;
                    mi += p_joint * (p_joint / (p_col * p_row)).ln();
                }
            }
            start = end;
        }
        mi
    };

    // Advance strictly increasing cut values in 1..=max_val; false when done.
    fn next_combination(cuts: &mut [usize], max_val: usize) -> bool {
        let k = cuts.len();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if cuts[i] < max_val - (k - 1 - i) {
                cuts[i] += 1;
                for j in i + 1..k {
                    cuts[j] = cuts[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }

    let mut best_for = vec![f64::NEG_INFINITY; kmax + 1];
    for t in 2..=kmax {
        let picks = t - 1;
        if picks > m - 1 {
            continue;
        }
        let mut cuts: Vec<usize> = (1..=picks).collect();
        let mut best_t = f64::NEG_INFINITY;
        loop {
            let mi = grid_mi(&cuts);
            if mi > best_t {
                best_t = mi;
            }
            if !next_combination(&mut cuts, m - 1) {
                break;
            }
        }
        best_for[t] = best_t - hq; // back to the G convention
    }
    // Make best_for[t] cumulative over <= t columns like the DP.
    let mut running = f64::NEG_INFINITY;
    for t in 2..=kmax {
        running = running.max(best_for[t]);
        best_for[t] = running;
    }
    best_for
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn constant_axis_is_zero() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys = vec![3.5; 20];
        assert_eq!(mic(&xs, &ys).unwrap(), 0.0);
        assert_eq!(mic(&ys, &xs).unwrap(), 0.0);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let v: Vec<f64> = (0..9).map(|i| i as f64).collect();
        assert!(mic(&v, &v).is_err());
    }

    #[test]
    fn noiseless_linear_approaches_one() {
        let mut rng = Rng::new(42);
        let xs: Vec<f64> = (0..200).map(|_| rng.uniform(0.0, 1.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 2.0 * x - 0.3).collect();
        let m = mic(&xs, &ys).unwrap();
        assert!(m >= 0.99, "noiseless linear MIC {m}");
    }

    #[test]
    fn noiseless_nonlinear_approaches_one() {
        let mut rng = Rng::new(43);
        let xs: Vec<f64> = (0..200).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (3.0 * x).sin()).collect();
        let m = mic(&xs, &ys).unwrap();
        assert!(m > 0.6, "noiseless sine MIC {m}");
    }

    #[test]
    fn independent_uniforms_stay_low() {
        let mut rng = Rng::new(44);
        let xs: Vec<f64> = (0..200).map(|_| rng.uniform(0.0, 1.0)).collect();
        let ys: Vec<f64> = (0..200).map(|_| rng.uniform(0.0, 1.0)).collect();
        let m = mic(&xs, &ys).unwrap();
        assert!(m <= 0.30, "independent MIC {m}");

        // Permutation-null check: the observed value should not exceed the
        // 95th percentile of MIC under label shuffling.
        let mut shuffler = Rng::new(45);
        let mut nulls: Vec<f64> = (0..100)
            .map(|_| {
                let mut ys2 = ys.clone();
                shuffler.shuffle(&mut ys2);
                mic(&xs, &ys2).unwrap()
            })
            .collect();
        nulls.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p95 = nulls[94];
        assert!(
            m <= p95 + 1e-12,
            "independent MIC {m} above permutation null 95th percentile {p95}"
        );
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = Rng::new(46);
        for _ in 0..5 {
            let xs: Vec<f64> = (0..60).map(|_| rng.uniform(0.0, 1.0)).collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|&x| x * x + 0.1 * rng.normal())
                .collect();
            let a = mic(&xs, &ys).unwrap();
            let b = mic(&ys, &xs).unwrap();
            assert!((a - b).abs() < 1e-9, "asymmetry {a} vs {b}");
        }
    }

    #[test]
    fn invariant_under_monotone_transforms() {
        let mut rng = Rng::new(47);
        let xs: Vec<f64> = (0..80).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| x.abs() + 0.05 * rng.normal()).collect();
        let base = mic(&xs, &ys).unwrap();
        let tx: Vec<f64> = xs.iter().map(|&x| (2.0 * x).exp()).collect();
        let ty: Vec<f64> = ys.iter().map(|&y| y.powi(3) + 5.0 * y).collect();
        assert!((mic(&tx, &ys).unwrap() - base).abs() < 1e-9);
        assert!((mic(&xs, &ty).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn dp_matches_exhaustive_oracle_small_n() {
        let mut rng = Rng::new(48);
        for case in 0..30 {
            let n = 10 + rng.next_below(41); // 10..=50
            let xs: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let ys: Vec<f64> = match case % 3 {
                0 => xs.iter().map(|&x| x + 0.2 * rng.normal()).collect(),
                1 => (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                _ => xs.iter().map(|&x| x * x).collect(),
            };
            let fast = mic(&xs, &ys).unwrap();
            let slow = mic_exhaustive(&xs, &ys).unwrap();
            assert!(
                (fast - slow).abs() < 1e-9,
                "case {case} n={n}: dp {fast} vs exhaustive {slow}"
            );
        }
    }

    #[test]
    fn ties_are_handled() {
        // Heavy ties on both axes.
        let xs: Vec<f64> = (0..40).map(|i| (i % 4) as f64).collect();
        let ys: Vec<f64> = (0..40).map(|i| ((i % 4) * 2) as f64).collect();
        let m = mic(&xs, &ys).unwrap();
        assert!(m > 0.9, "deterministic tied mapping should score high: {m}");
        let bounded = mic(&xs, &ys).unwrap();
        assert!((0.0..=1.0).contains(&bounded));
    }
}

#[cfg(test)]
mod clump_tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn coarsening_preserves_counts_and_caps_groups() {
        let mut rng = Rng::new(60);
        let runs: Vec<Vec<usize>> = (0..500)
            .map(|_| vec![rng.next_below(3), rng.next_below(3)])
            .collect();
        let total: usize = runs.iter().map(|r| r.iter().sum::<usize>()).sum();
        let out = coarsen_runs(runs, 60);
        assert!(out.len() <= 60);
        let out_total: usize = out.iter().map(|r| r.iter().sum::<usize>()).sum();
        assert_eq!(out_total, total);
    }

    #[test]
    fn large_n_linear_still_saturates() {
        let mut rng = Rng::new(61);
        let xs: Vec<f64> = (0..2000).map(|_| rng.uniform(0.0, 1.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 0.5 * x + 0.1).collect();
        let m = mic(&xs, &ys).unwrap();
        assert!(m >= 0.99, "large-n noiseless linear MIC {m}");
    }

    #[test]
    fn large_n_runs_quickly() {
        let mut rng = Rng::new(62);
        let xs: Vec<f64> = (0..2500).map(|_| rng.uniform(0.0, 1.0)).collect();
        let ys: Vec<f64> = (0..2500).map(|_| rng.uniform(0.0, 1.0)).collect();
        let start = std::time::Instant::now();
        let m = mic(&xs, &ys).unwrap();
        assert!(m < 0.25, "independent large-n MIC {m}");
        assert!(
            start.elapsed().as_secs_f64() < 10.0,
            "mic at n=2500 took {:?}",
            start.elapsed()
        );
    }
}
