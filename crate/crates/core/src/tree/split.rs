//! Score-based split statistics: a linear rank statistic with permutation
//! moments for variable selection, and a maximally selected two-sample
//! statistic for the cutpoint.

use serde::{Deserialize, Serialize};

use crate::math::{chi2_log_sf, midranks, Sym2};
use crate::models::ScoreMatrix;

/// Outcome of the variable-selection test for one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableTest {
    pub var: usize,
    pub statistic: f64,
    pub df: usize,
    /// Natural log of the unadjusted asymptotic p-value.
    pub log_p: f64,
}

impl VariableTest {
    pub fn p_value(&self) -> f64 {
        self.log_p.exp()
    }
}

/// Chosen split variable with its Bonferroni-adjusted p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableChoice {
    pub var: usize,
    pub p_value: f64,
    pub adjusted_p: f64,
}

/// Empirical covariance `(1/n) sum (h - hbar)(h - hbar)'` and the mean score.
fn score_moments(scores: &ScoreMatrix) -> (Sym2, [f64; 2]) {
    let n = scores.len() as f64;
    let [s0, s1] = scores.column_sums();
    let mean = [s0 / n, s1 / n];
    let mut v = Sym2 { a: 0.0, b: 0.0, c: 0.0 };
    for r in &scores.rows {
        let d0 = r[0] - mean[0];
        let d1 = r[1] - mean[1];
        v.a += d0 * d0;
        v.b += d0 * d1;
        v.c += d1 * d1;
    }
    (v.scale(1.0 / n), mean)
}

/// Quadratic-form test of independence between the scores and the midranks
/// of `x`. Returns `None` for constant `x` or constant scores.
pub fn variable_test(scores: &ScoreMatrix, x: &[f64], var: usize) -> Option<VariableTest> {
    let n = scores.len();
    assert_eq!(n, x.len(), "scores and covariate lengths differ");
    if n < 2 {
        return None;
    }
    let g = midranks(x);
    let nf = n as f64;
    let sum_g: f64 = g.iter().sum();
    let sum_g2: f64 = g.iter().map(|v| v * v).sum();
    let spread = (nf * sum_g2 - sum_g * sum_g) / (nf - 1.0);
    if !(spread > 1e-12 * sum_g2) {
        return None;
    }
    let (vh, mean) = score_moments(scores);
    let mut t = [0.0; 2];
    for (gi, r) in g.iter().zip(&scores.rows) {
        t[0] += gi * r[0];
        t[1] += gi * r[1];
    }
    let centered = [t[0] - sum_g * mean[0], t[1] - sum_g * mean[1]];
    let (statistic, df) = vh.scale(spread).pinv_quadratic(centered);
    if df == 0 {
        return None;
    }
    Some(VariableTest {
        var,
        statistic,
        df,
        log_p: chi2_log_sf(statistic, df),
    })
}

/// Tests every candidate and returns them ordered from most to least
/// significant (ties broken by variable index).
pub fn rank_split_variables(scores: &ScoreMatrix, columns: &[&[f64]], candidates: &[usize]) -> Vec<VariableTest> {
    let mut tests: Vec<VariableTest> = candidates
        .iter()
        .filter_map(|&j| variable_test(scores, columns[j], j))
        .collect();
    tests.sort_by(|a, b| a.log_p.total_cmp(&b.log_p).then(a.var.cmp(&b.var)));
    tests
}

/// Variable with the smallest p-value among `candidates`, or `None` when no
/// candidate is testable or the Bonferroni-adjusted minimum exceeds `alpha`.
///
/// `columns[j]` holds covariate `j` for the node's observations, aligned with
/// the score rows.
pub fn select_split_variable(
    scores: &ScoreMatrix,
    columns: &[&[f64]],
    candidates: &[usize],
    alpha: f64,
) -> Option<VariableChoice> {
    let tests = rank_split_variables(scores, columns, candidates);
    let best = tests.first()?;
    let p = best.p_value();
    let adjusted = (p * tests.len() as f64).min(1.0);
    if adjusted > alpha {
        return None;
    }
    Some(VariableChoice {
        var: best.var,
        p_value: p,
        adjusted_p: adjusted,
    })
}

/// Cutpoint `c` maximizing the standardized statistic of the left-hand score
/// sum over `{x <= c}`, with at least `min_node_size` observations on each
/// side. The returned value is an observed `x`, so the split is `x <= c`.
pub fn select_cutpoint(scores: &ScoreMatrix, x: &[f64], min_node_size: usize) -> Option<f64> {
    let n = scores.len();
    assert_eq!(n, x.len(), "scores and covariate lengths differ");
    let min = min_node_size.max(1);
    if n < 2 * min {
        return None;
    }
    let (vh, mean) = score_moments(scores);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let nf = n as f64;
    let mut left = [0.0; 2];
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n - 1 {
        let r = scores.rows[order[k]];
        left[0] += r[0];
        left[1] += r[1];
        let n_left = k + 1;
        if x[order[k]] == x[order[k + 1]] || n_left < min || n - n_left < min {
            continue;
        }
        let nl = n_left as f64;
        let dev = [left[0] - nl * mean[0], left[1] - nl * mean[1]];
        let (q, rank) = vh.pinv_quadratic(dev);
        if rank == 0 {
            return None;
        }
        let stat = q * (nf - 1.0) / (nl * (nf - nl));
        if best.is_none_or(|(s, _)| stat > s) {
            best = Some((stat, x[order[k]]));
        }
    }
    best.map(|(_, c)| c)
}
