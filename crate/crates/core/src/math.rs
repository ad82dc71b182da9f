//! Small numerical helpers shared by the likelihoods, split tests and
//! nuisance learners.

use statrs::function::erf::erfc;

/// Logistic function, evaluated without overflow for large |x|.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(x))`.
pub fn log1pexp(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse-link distributions used by the transformation models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkDist {
    /// Standard logistic, `F = expit`.
    Logistic,
    /// Minimum extreme value, `F(z) = 1 - exp(-exp(z))` (inverse complementary log-log).
    MinExtreme,
}

impl LinkDist {
    pub fn cdf(self, z: f64) -> f64 {
        if z == f64::INFINITY {
            return 1.0;
        }
        if z == f64::NEG_INFINITY {
            return 0.0;
        }
        match self {
            LinkDist::Logistic => expit(z),
            LinkDist::MinExtreme => -(-z.exp()).exp_m1(),
        }
    }

    /// Upper tail `1 - F(z)`, accurate when `F(z)` is close to one.
    pub fn sf(self, z: f64) -> f64 {
        if z == f64::INFINITY {
            return 0.0;
        }
        if z == f64::NEG_INFINITY {
            return 1.0;
        }
        match self {
            LinkDist::Logistic => expit(-z),
            LinkDist::MinExtreme => (-z.exp()).exp(),
        }
    }

    /// Density and its derivative, `(f(z), f'(z))`.
    pub fn pdf_d1(self, z: f64) -> (f64, f64) {
        if !z.is_finite() {
            return (0.0, 0.0);
        }
        match self {
            LinkDist::Logistic => {
                let e = (-z.abs()).exp();
                let f = e / ((1.0 + e) * (1.0 + e));
                let big_f = expit(z);
                (f, f * (1.0 - 2.0 * big_f))
            }
            LinkDist::MinExtreme => {
                if z > 40.0 {
                    return (0.0, 0.0);
                }
                let ez = z.exp();
                let f = (z - ez).exp();
                (f, f * (1.0 - ez))
            }
        }
    }

    /// Probability mass `F(upper) - F(lower)` without catastrophic cancellation.
    pub fn mass(self, upper: f64, lower: f64) -> f64 {
        if lower > 0.0 {
            self.sf(lower) - self.sf(upper)
        } else {
            self.cdf(upper) - self.cdf(lower)
        }
    }
}

/// Value and derivatives of `g(A, B) = -log(F(A) - F(B))`.
#[derive(Debug, Clone, Copy)]
pub struct IntervalTerm {
    pub value: f64,
    pub d_upper: f64,
    pub d_lower: f64,
    pub d_uu: f64,
    pub d_ul: f64,
    pub d_ll: f64,
}

/// Returns `None` when the interval carries no probability mass.
pub fn interval_term(dist: LinkDist, upper: f64, lower: f64) -> Option<IntervalTerm> {
    let p = dist.mass(upper, lower);
    if !(p > 0.0) || !p.is_finite() {
        return None;
    }
    let (fu, dfu) = dist.pdf_d1(upper);
    let (fl, dfl) = dist.pdf_d1(lower);
    let p2 = p * p;
    Some(IntervalTerm {
        value: -p.ln(),
        d_upper: -fu / p,
        d_lower: fl / p,
        d_uu: -dfu / p + fu * fu / p2,
        d_ul: -fu * fl / p2,
        d_ll: dfl / p + fl * fl / p2,
    })
}

/// Average ranks (ties share the mean of their positions), 1-based.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Symmetric 2x2 matrix `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    pub fn scale(self, s: f64) -> Sym2 {
        Sym2 {
            a: self.a * s,
            b: self.b * s,
            c: self.c * s,
        }
    }

    /// Eigen-decomposition as `[(lambda, (v0, v1)); 2]`, largest eigenvalue first.
    pub fn eigen(self) -> [(f64, [f64; 2]); 2] {
        let theta = 0.5 * (2.0 * self.b).atan2(self.a - self.c);
        let (s, c) = theta.sin_cos();
        let l1 = self.a * c * c + 2.0 * self.b * s * c + self.c * s * s;
        let l2 = self.a * s * s - 2.0 * self.b * s * c + self.c * c * c;
        let e1 = (l1, [c, s]);
        let e2 = (l2, [-s, c]);
        if l1 >= l2 {
            [e1, e2]
        } else {
            [e2, e1]
        }
    }

    /// Quadratic form `x' V⁺ x` with the Moore–Penrose inverse, and the
    /// numerical rank of `V`. Eigenvalues below `sqrt(eps)` times the
    /// largest one are treated as zero.
    pub fn pinv_quadratic(self, x: [f64; 2]) -> (f64, usize) {
        let eig = self.eigen();
        let top = eig[0].0;
        if !(top > f64::MIN_POSITIVE) {
            return (0.0, 0);
        }
        let tol = top * f64::EPSILON.sqrt();
        let mut q = 0.0;
        let mut rank = 0;
        for (lambda, v) in eig {
            if lambda > tol {
                let proj = v[0] * x[0] + v[1] * x[1];
                q += proj * proj / lambda;
                rank += 1;
            }
        }
        (q, rank)
    }
}

/// Natural log of the chi-squared upper tail probability for 1 or 2 degrees of freedom.
pub fn chi2_log_sf(stat: f64, df: usize) -> f64 {
    let stat = stat.max(0.0);
    match df {
        0 => 0.0,
        1 => {
            let x = (stat / 2.0).sqrt();
            let p = erfc(x);
            if p > 1e-300 {
                p.ln()
            } else {
                // erfc(x) ~ exp(-x^2) / (x sqrt(pi)) * (1 - 1/(2x^2))
                -x * x - (x * std::f64::consts::PI.sqrt()).ln() + (1.0 - 0.5 / (x * x)).ln()
            }
        }
        2 => -stat / 2.0,
        _ => {
            use statrs::distribution::{ChiSquared, ContinuousCDF};
            let d = ChiSquared::new(df as f64).expect("positive degrees of freedom");
            d.sf(stat).ln()
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a sequence of integers into one seed; stable across platforms and releases.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C909u64, |acc, &p| mix64(acc ^ mix64(p)))
}

/// FNV-1a hash of a string, used to turn labels into seed components.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_is_symmetric_and_stable() {
        assert_eq!(expit(0.0), 0.5);
        assert!((expit(3.0) + expit(-3.0) - 1.0).abs() < 1e-15);
        assert!(expit(-800.0) >= 0.0);
        assert_eq!(expit(800.0), 1.0);
    }

    #[test]
    fn log1pexp_matches_naive_in_safe_range() {
        for &x in &[-20.0, -1.0, 0.0, 2.5, 25.0] {
            let naive = (1.0f64 + f64::exp(x)).ln();
            assert!((log1pexp(x) - naive).abs() < 1e-12);
        }
        assert!((log1pexp(100.0) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn pinv_handles_rank_one() {
        // v = (1,1)(1,1)' has eigenvalue 2 on (1,1)/sqrt2
        let v = Sym2 { a: 1.0, b: 1.0, c: 1.0 };
        let (q, rank) = v.pinv_quadratic([1.0, 1.0]);
        assert_eq!(rank, 1);
        assert!((q - 1.0).abs() < 1e-12);
        let (q0, _) = v.pinv_quadratic([1.0, -1.0]);
        assert!(q0.abs() < 1e-12);
    }

    #[test]
    fn pinv_full_rank_matches_inverse() {
        let v = Sym2 { a: 2.0, b: 0.5, c: 1.0 };
        let det = 2.0 - 0.25;
        let x = [0.3, -1.2];
        let expected = (1.0 * x[0] * x[0] - 2.0 * 0.5 * x[0] * x[1] + 2.0 * x[1] * x[1]) / det;
        let (q, rank) = v.pinv_quadratic(x);
        assert_eq!(rank, 2);
        assert!((q - expected).abs() < 1e-12);
    }

    #[test]
    fn chi2_tails() {
        // P(chi2_1 > 3.841459) = 0.05
        assert!((chi2_log_sf(3.841_458_820_694_124, 1).exp() - 0.05).abs() < 1e-9);
        assert!((chi2_log_sf(5.991_464_547_107_979, 2).exp() - 0.05).abs() < 1e-12);
        // far tail stays finite and ordered
        assert!(chi2_log_sf(4000.0, 1) < chi2_log_sf(3000.0, 1));
        assert!(chi2_log_sf(4000.0, 1).is_finite());
    }

    #[test]
    fn interval_mass_is_accurate_in_both_tails() {
        let d = LinkDist::MinExtreme;
        let m = d.mass(-30.0, -31.0);
        assert!(m > 0.0 && (m - ((-30.0f64).exp() - (-31.0f64).exp())).abs() < 1e-25);
        let l = LinkDist::Logistic;
        assert!(l.mass(40.0, 39.0) > 0.0);
    }
}
