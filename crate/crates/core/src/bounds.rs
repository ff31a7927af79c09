//! Closed-form DD-risk machinery for the zero-one loss.
//!
//! For a classifier with error set `E` of volume fraction `r`, the
//! maximum-entropy test density placing mass `ε` on `E` is piecewise uniform
//! (`ε/vol(E)` inside, `(1−ε)/vol(X∖E)` outside) and its entropy deficit from
//! uniform is `KL(Bern(ε) ‖ Bern(r))`. The DD risk at entropy gap `γ` is the
//! largest `ε` whose deficit stays within `γ`:
//!
//! ```text
//! r_dd(r, γ) = max { ε ∈ [r, 1] : KL(Bern(ε) ‖ Bern(r)) ≤ γ }
//! ```
//!
//! and equals 1 once `r ≥ e^{−γ}`. Two upper bounds on it are provided: the
//! additive (Pinsker) bound `r + √(γ/2)`, and the tangent-line bound obtained
//! by linearising the KL at a free point `α ∈ (r, 1)`.

use crate::domain::{BinGrid, Point2};
use crate::error::{Error, Result};

/// Absolute tolerance on `ε` for the exact DD-risk bisection.
pub const BISECTION_TOL: f64 = 1e-10;
/// Number of grid points in the α search before golden-section refinement.
pub const ALPHA_GRID: usize = 1024;

/// `KL(Bern(p) ‖ Bern(q))` in nats, using `0 log 0 = 0`.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

fn check_open_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{v} is not in (0, 1)")))
    }
}

fn check_closed_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{v} is not in [0, 1]")))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma >= 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("gamma", format!("{gamma} must be finite and non-negative")))
    }
}

/// Entropy deficit `H(u) − H(q*_ε)` of the piecewise-uniform worst case with
/// error mass `epsilon` on an error set of volume fraction `error_fraction`.
/// Both arguments must lie strictly inside (0, 1).
pub fn q_star_entropy_gap(epsilon: f64, error_fraction: f64) -> Result<f64> {
    check_open_unit("epsilon", epsilon)?;
    check_open_unit("error_fraction", error_fraction)?;
    Ok(bernoulli_kl(epsilon, error_fraction))
}

/// Differential entropy of `q*_ε` written directly from the volumes:
/// `ε(log vol(E) − log ε) + (1−ε)(log vol(X∖E) − log(1−ε))`.
pub fn q_star_entropy(epsilon: f64, error_volume: f64, domain_volume: f64) -> Result<f64> {
    check_open_unit("epsilon", epsilon)?;
    if !(error_volume > 0.0 && error_volume < domain_volume) {
        return Err(Error::invalid("error_volume", "must lie strictly between 0 and the domain volume"));
    }
    let rest = domain_volume - error_volume;
    Ok(epsilon * (error_volume.ln() - epsilon.ln()) + (1.0 - epsilon) * (rest.ln() - (1.0 - epsilon).ln()))
}

/// Exact DD risk under the zero-one loss for uniform risk `r` and gap `gamma`.
///
/// Returns 1 when `r ≥ e^{−γ}`; otherwise bisects `KL(Bern(ε)‖Bern(r)) = γ`
/// on `[r, 1)` and returns the feasible end of the final bracket. `r = 0`
/// gives 0 (no error set, nothing to up-weight).
pub fn dd_risk_exact(r: f64, gamma: f64) -> Result<f64> {
    check_closed_unit("r", r)?;
    check_gamma(gamma)?;
    if r == 0.0 || gamma == 0.0 {
        return Ok(r);
    }
    if r >= (-gamma).exp() {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (r, 1.0);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if bernoulli_kl(mid, r) <= gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Tangent-line bound at `α`, parameterised by `s = (α − r)/(1 − r)` and
/// `1 − s` (passed separately so values of `α` near 1 keep full precision).
///
/// With `α = r + (1−r)s` the general expression
/// `(γ − log((1−α)/(1−r))) / (log(α/(1−α)) + log(1/r − 1))` simplifies to
/// `(γ − log(1−s)) / (log(α/r) − log(1−s))`.
fn alpha_branch_s(r: f64, gamma: f64, s: f64, one_minus_s: f64) -> f64 {
    let l1s = if s < 0.5 { (-s).ln_1p() } else { one_minus_s.ln() };
    let log_alpha_over_r = ((1.0 - r) * s / r).ln_1p();
    (gamma - l1s) / (log_alpha_over_r - l1s)
}

/// Tangent-line (α) branch of the DD-risk bound for a given `α ∈ (r, 1)`.
pub fn alpha_branch(r: f64, gamma: f64, alpha: f64) -> Result<f64> {
    check_open_unit("r", r)?;
    check_gamma(gamma)?;
    if !(alpha > r && alpha < 1.0) {
        return Err(Error::invalid("alpha", format!("{alpha} is not in (r, 1) = ({r}, 1)")));
    }
    Ok(alpha_branch_s(r, gamma, (alpha - r) / (1.0 - r), (1.0 - alpha) / (1.0 - r)))
}

/// Additive (Pinsker) branch `r + √(γ/2)`.
pub fn additive_branch(r: f64, gamma: f64) -> f64 {
    r + (gamma / 2.0).sqrt()
}

/// The α = 1/2 simplification `min{(γ + log 2)/(−log r), r + √(γ/2)}`.
pub fn simplified_bound(r: f64, gamma: f64) -> Result<f64> {
    check_open_unit("r", r)?;
    check_gamma(gamma)?;
    Ok(((gamma + std::f64::consts::LN_2) / -r.ln()).min(additive_branch(r, gamma)))
}

/// Both branches of the DD-risk upper bound and the α that achieved the
/// tangent-line value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundBreakdown {
    pub additive: f64,
    /// `None` when the α interval is empty (`r = 1`) or `r = 0`.
    pub alpha_branch: Option<f64>,
    pub alpha: Option<f64>,
    pub value: f64,
}

impl BoundBreakdown {
    /// The bound says nothing once it exceeds 1.
    pub fn vacuous(&self) -> bool {
        self.value > 1.0
    }
}

/// DD-risk upper bound with both branches and α optimised numerically.
///
/// α is searched on [`ALPHA_GRID`] points spaced uniformly in
/// `logit((α − r)/(1 − r))`, then refined by golden-section search on the
/// bracket around the best grid point. Values above 1 are returned as is.
pub fn dd_risk_bound_detail(r: f64, gamma: f64) -> Result<BoundBreakdown> {
    check_closed_unit("r", r)?;
    check_gamma(gamma)?;
    let additive = additive_branch(r, gamma);
    if r == 0.0 {
        // The α branch tends to 0 as r → 0 for every fixed α.
        return Ok(BoundBreakdown {
            additive,
            alpha_branch: Some(0.0),
            alpha: None,
            value: 0.0,
        });
    }
    if r == 1.0 {
        return Ok(BoundBreakdown {
            additive,
            alpha_branch: None,
            alpha: None,
            value: additive,
        });
    }

    // logit(s) from logit(1e-9) to logit(1 - 1e-12)
    let t_lo = (1e-9f64 / (1.0 - 1e-9)).ln();
    let t_hi = ((1.0 - 1e-12f64) / 1e-12).ln();
    let at = |t: f64| -> f64 {
        let s = 1.0 / (1.0 + (-t).exp());
        let one_minus_s = 1.0 / (1.0 + t.exp());
        let v = alpha_branch_s(r, gamma, s, one_minus_s);
        if v.is_finite() && v >= 0.0 {
            v
        } else {
            f64::INFINITY
        }
    };
    let step = (t_hi - t_lo) / (ALPHA_GRID - 1) as f64;
    let grid_t = |i: usize| t_lo + step * i as f64;
    let (best_i, _) = (0..ALPHA_GRID)
        .map(|i| (i, at(grid_t(i))))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });

    let mut a = grid_t(best_i.saturating_sub(1));
    let mut b = grid_t((best_i + 1).min(ALPHA_GRID - 1));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (at(c), at(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = at(d);
        }
    }
    let candidates = [grid_t(best_i), c, d];
    let (best_t, best_v) = candidates
        .iter()
        .map(|&t| (t, at(t)))
        .fold((f64::NAN, f64::INFINITY), |acc, (t, v)| if v < acc.1 { (t, v) } else { acc });

    let (alpha_branch, alpha) = if best_v.is_finite() {
        let s = 1.0 / (1.0 + (-best_t).exp());
        (Some(best_v), Some(r + (1.0 - r) * s))
    } else {
        (None, None)
    };
    Ok(BoundBreakdown {
        additive,
        alpha_branch,
        alpha,
        value: alpha_branch.map_or(additive, |v| v.min(additive)),
    })
}

/// Upper bound on the DD risk: minimum of the additive branch and the
/// α-optimised tangent-line branch.
pub fn dd_risk_bound(r: f64, gamma: f64) -> Result<f64> {
    dd_risk_bound_detail(r, gamma).map(|b| b.value)
}

/// ℓ1 distance between the normalised weight-mass histogram of `points` and
/// the uniform distribution over the grid's bins; lies in [0, 2].
pub fn l1_to_uniform(points: &[Point2], weights: &[f64], grid: BinGrid) -> Result<f64> {
    if points.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "weights",
            got: weights.len(),
            expected: points.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights", "must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("weights", "all weights are zero"));
    }
    let mut mass = vec![0.0; grid.total_bins()];
    for (p, w) in points.iter().zip(weights) {
        mass[grid.bin_index(*p)] += w;
    }
    let u = grid.cell_area();
    Ok(mass.iter().map(|m| (u - m / total).abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    /// Largest ε on a uniform 2·10⁶-point grid over [r, 1] with KL ≤ γ.
    fn scan_oracle(r: f64, gamma: f64) -> f64 {
        let n = 2_000_000;
        let mut best = r;
        for i in 0..=n {
            let e = r + (1.0 - r) * i as f64 / n as f64;
            if bernoulli_kl(e, r) <= gamma {
                best = e;
            }
        }
        best
    }

    #[test]
    fn q_star_gap_examples() {
        assert_eq!(q_star_entropy_gap(0.3, 0.3).unwrap(), 0.0);
        // 0.5 ln 5 + 0.5 ln(5/9)
        assert_abs_diff_eq!(q_star_entropy_gap(0.5, 0.1).unwrap(), 0.5108256237659907, epsilon = 1e-12);
        assert_abs_diff_eq!(q_star_entropy_gap(1.0 - 1e-12, 0.1).unwrap(), 10f64.ln(), epsilon = 1e-9);
        assert!(q_star_entropy_gap(0.0, 0.1).is_err());
        assert!(q_star_entropy_gap(1.0, 0.1).is_err());
        assert!(q_star_entropy_gap(0.5, 0.0).is_err());
    }

    #[test]
    fn q_star_gap_matches_volume_form() {
        for &v in &[0.01, 0.1, 0.37, 0.8] {
            for &e in &[0.001, 0.2, 0.5, 0.93] {
                let direct = -q_star_entropy(e, v, 1.0).unwrap();
                assert_abs_diff_eq!(q_star_entropy_gap(e, v).unwrap(), direct, epsilon = 1e-12);
                // Scaling the domain shifts H(u) and H(q*) by the same log volume.
                let scaled = 3f64.ln() - q_star_entropy(e, 3.0 * v, 3.0).unwrap();
                assert_abs_diff_eq!(direct, scaled, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn exact_examples() {
        assert_eq!(dd_risk_exact(0.2, 0.0).unwrap(), 0.2);
        assert_eq!(dd_risk_exact(0.3_f64, -(0.3_f64.ln())).unwrap(), 1.0);
        let g = 0.5 * 5f64.ln() + 0.5 * (5.0f64 / 9.0).ln();
        let e = dd_risk_exact(0.1, g).unwrap();
        assert_abs_diff_eq!(e, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(e, scan_oracle(0.1, g), epsilon = 1e-6);
        assert_eq!(dd_risk_exact(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(dd_risk_exact(1.0, 0.0).unwrap(), 1.0);
        assert!(dd_risk_exact(-0.1, 1.0).is_err());
        assert!(dd_risk_exact(0.1, -1.0).is_err());
        assert!(dd_risk_exact(0.1, f64::NAN).is_err());
    }

    #[test]
    fn exact_matches_scan_oracle() {
        for &(r, g) in &[(0.02, 0.1), (0.05, 0.5), (0.2, 1.0), (0.01, 3.0), (0.3, 0.05)] {
            assert_abs_diff_eq!(dd_risk_exact(r, g).unwrap(), scan_oracle(r, g), epsilon = 1e-6);
        }
    }

    #[test]
    fn alpha_half_and_simplified_examples() {
        // (0.5 + ln 1.8) / ln 9
        assert_abs_diff_eq!(alpha_branch(0.1, 0.5, 0.5).unwrap(), 0.4950731, epsilon = 1e-6);
        // (0.5 + ln 2) / ln 10 = 1.1931472 / 2.3025851, below the additive 0.6
        assert_abs_diff_eq!(simplified_bound(0.1, 0.5).unwrap(), 0.5181772, epsilon = 1e-6);
        assert!(alpha_branch(0.1, 0.5, 0.1).is_err());
        assert!(alpha_branch(0.1, 0.5, 1.0).is_err());
    }

    #[test]
    fn gamma_zero_collapses_to_r() {
        for r in [0.01, 0.1, 0.4] {
            assert!(dd_risk_bound(r, 0.0).unwrap() <= r + 1e-12);
        }
    }

    #[test]
    fn optimised_alpha_beats_alpha_half() {
        for r in [0.01, 0.05, 0.1, 0.3] {
            for g in [0.1, 0.5, 1.0, 2.0] {
                if r >= 0.5 {
                    continue;
                }
                let d = dd_risk_bound_detail(r, g).unwrap();
                assert!(d.alpha_branch.unwrap() <= alpha_branch(r, g, 0.5).unwrap() + 1e-15);
            }
        }
    }

    #[test]
    fn bound_dominates_exact_on_grid() {
        for i in 0..40 {
            let r = 0.01 + (0.4 - 0.01) * i as f64 / 39.0;
            for j in 0..31 {
                let g = 3.0 * j as f64 / 30.0;
                let exact = dd_risk_exact(r, g).unwrap();
                let bound = dd_risk_bound(r, g).unwrap();
                assert!(bound >= exact, "r={r} g={g} bound={bound} exact={exact}");
            }
        }
    }

    #[test]
    fn optimised_bound_is_tight_when_non_vacuous() {
        // Tangent at α = ε* passes through (ε*, γ), so the optimum recovers ε*.
        for &(r, g) in &[(0.05, 0.3), (0.1, 0.5), (0.2, 0.9)] {
            let exact = dd_risk_exact(r, g).unwrap();
            let d = dd_risk_bound_detail(r, g).unwrap();
            assert_abs_diff_eq!(d.alpha_branch.unwrap(), exact, epsilon = 1e-6);
            assert_abs_diff_eq!(d.alpha.unwrap(), exact, epsilon = 1e-3);
        }
    }

    #[test]
    fn vacuous_flag() {
        let d = dd_risk_bound_detail(0.6, 2.0).unwrap();
        assert!(d.vacuous());
        assert!(d.value >= 1.0);
        assert!(!dd_risk_bound_detail(0.01, 0.1).unwrap().vacuous());
    }

    #[test]
    fn kl_strictly_increasing_above_r() {
        for r in [0.01, 0.2, 0.6] {
            let mut prev = 0.0;
            for i in 1..1000 {
                let e = r + (1.0 - r) * i as f64 / 1000.0;
                let k = bernoulli_kl(e, r);
                assert!(k > prev);
                prev = k;
            }
        }
    }

    #[test]
    fn l1_examples() {
        let g = BinGrid::new(100).unwrap();
        let pts: Vec<Point2> = (0..g.total_bins()).map(|b| g.bin_center(b)).collect();
        assert_abs_diff_eq!(l1_to_uniform(&pts, &vec![1.0; pts.len()], g).unwrap(), 0.0, epsilon = 1e-12);
        let one = vec![Point2::CENTER; 10];
        assert_abs_diff_eq!(l1_to_uniform(&one, &[0.5; 10], g).unwrap(), 2.0 * (1.0 - 1e-4), epsilon = 1e-12);
        assert!(l1_to_uniform(&one, &[0.0; 10], g).is_err());
        assert!(l1_to_uniform(&one, &[1.0; 9], g).is_err());
        assert!(l1_to_uniform(&one[..1], &[-1.0], g).is_err());
    }

    #[test]
    fn l1_of_uniform_sample_is_small() {
        // E|c/m − 1/K| summed over K=100 bins with m=10⁵: ≈ K·√(2/π)·√(1/(Km)) ≈ 0.025.
        let g = BinGrid::new(10).unwrap();
        let mut rng = rng_for(3, 0);
        let pts: Vec<Point2> = (0..100_000).map(|_| Point2::clamped(rng.gen(), rng.gen())).collect();
        let d = l1_to_uniform(&pts, &vec![1.0; pts.len()], g).unwrap();
        assert!(d < 0.1, "{d}");
    }

    proptest! {
        #[test]
        fn exact_is_monotone(r in 0.001f64..0.9, dr in 0.0f64..0.09, g in 0.0f64..4.0, dg in 0.0f64..1.0) {
            let base = dd_risk_exact(r, g).unwrap();
            prop_assert!(dd_risk_exact(r + dr, g).unwrap() >= base - BISECTION_TOL);
            prop_assert!(dd_risk_exact(r, g + dg).unwrap() >= base - BISECTION_TOL);
            prop_assert!((r..=1.0).contains(&base));
        }

        #[test]
        fn bound_is_sound(r in 0.001f64..0.999, g in 0.0f64..5.0) {
            let exact = dd_risk_exact(r, g).unwrap();
            let bound = dd_risk_bound(r, g).unwrap();
            prop_assert!(bound >= exact, "r={} g={} bound={} exact={}", r, g, bound, exact);
            prop_assert!(bound >= 0.0);
        }
    }
}
