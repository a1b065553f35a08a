//! Small numeric helpers shared across modules.

/// Neumaier-compensated sum. Probability masses and regime frequencies are
/// accumulated with this so that mixture weights stay accurate to a few ulps
/// even over 1e5-term sums.
pub(crate) fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0_f64;
    let mut c = 0.0_f64;
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

pub(crate) fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    sum(values.iter().zip(weights).map(|(v, w)| v * w))
}

/// Indices 0..n sorted by key, ties broken by index so results are stable.
pub(crate) fn argsort_by_key(n: usize, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    idx
}

/// Tolerance used when comparing cumulative weights against a quantile level.
/// Weights carry at least ~1/N granularity, so an absolute slack of 1e-9 can
/// only flip comparisons that are ties up to rounding.
pub(crate) const QUANTILE_SLACK: f64 = 1e-9;

/// Pathwise comparison slack for order relations (comonotonicity, IR,
/// convex-order prefix sums).
pub(crate) const CMP_SLACK: f64 = 1e-9;

/// Additive tolerance on budget identities.
pub(crate) const BUDGET_TOL: f64 = 1e-9;

/// Tolerance on probability vectors summing to one.
pub(crate) const WEIGHT_TOL: f64 = 1e-12;
