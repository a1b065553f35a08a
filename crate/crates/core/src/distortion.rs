//! Distortion functions on [0,1], their algebra (mixtures, crossings), and
//! Choquet integration against empirical distributions.
//!
//! Distortions are kept in a canonical piecewise-linear form: ordered
//! breakpoints with collinear interior points removed. All algebra
//! (mixtures, crossing detection) happens on breakpoints, so results are
//! exact up to f64 rounding of the inputs.

use crate::error::{Error, Result};
use crate::scenario::EmpiricalDist;
use crate::util;

/// Nondecreasing piecewise-linear map k on [0,1] with k(0)=0 and k(1)=1.
/// Concave distortions produce coherent Choquet risk measures.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionFn {
    /// Strictly increasing in u; first point (0,0), last point (1,1).
    points: Vec<(f64, f64)>,
    concave: bool,
}

const DISTORTION_TOL: f64 = 1e-12;

impl DistortionFn {
    pub fn from_breakpoints(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Parameter("need at least two breakpoints".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.iter().any(|(u, k)| !u.is_finite() || !k.is_finite()) {
            return Err(Error::Parameter("non-finite breakpoint".into()));
        }
        let first = points.first().unwrap();
        let last = points.last().unwrap();
        if first.0.abs() > DISTORTION_TOL || first.1.abs() > DISTORTION_TOL {
            return Err(Error::Parameter(format!("k(0) must be 0, got k({}) = {}", first.0, first.1)));
        }
        if (last.0 - 1.0).abs() > DISTORTION_TOL || (last.1 - 1.0).abs() > DISTORTION_TOL {
            return Err(Error::Parameter(format!("k(1) must be 1, got k({}) = {}", last.0, last.1)));
        }
        points[0] = (0.0, 0.0);
        let n = points.len();
        points[n - 1] = (1.0, 1.0);
        for w in points.windows(2) {
            if w[1].0 - w[0].0 <= 0.0 {
                return Err(Error::Parameter(format!("duplicate breakpoint abscissa u = {}", w[0].0)));
            }
            if w[1].1 < w[0].1 - DISTORTION_TOL {
                return Err(Error::Parameter("distortion must be nondecreasing".into()));
            }
        }
        let mut canon: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        for p in points {
            while canon.len() >= 2 {
                let a = canon[canon.len() - 2];
                let b = canon[canon.len() - 1];
                let s1 = (b.1 - a.1) / (b.0 - a.0);
                let s2 = (p.1 - b.1) / (p.0 - b.0);
                if (s1 - s2).abs() <= DISTORTION_TOL {
                    canon.pop();
                } else {
                    break;
                }
            }
            canon.push(p);
        }
        let concave = canon.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect::<Vec<_>>()
            .windows(2)
            .all(|s| s[1] <= s[0] + DISTORTION_TOL);
        Ok(Self { points: canon, concave })
    }

    pub fn identity() -> Self {
        Self { points: vec![(0.0, 0.0), (1.0, 1.0)], concave: true }
    }

    /// Distortion of the upper-tail average at level `alpha`:
    /// k(u) = min(u / (1 - alpha), 1).
    pub fn es(alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Parameter(format!("tail level must be in [0,1), got {alpha}")));
        }
        if alpha == 0.0 {
            return Ok(Self::identity());
        }
        Self::from_breakpoints(vec![(0.0, 0.0), (1.0 - alpha, 1.0), (1.0, 1.0)])
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn is_concave(&self) -> bool {
        self.concave
    }

    pub fn is_identity(&self) -> bool {
        self.points.len() == 2
    }

    pub fn eval(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let pts = &self.points;
        let j = pts.partition_point(|p| p.0 <= u);
        if j == 0 {
            return pts[0].1;
        }
        if j == pts.len() {
            return pts[pts.len() - 1].1;
        }
        let (u0, k0) = pts[j - 1];
        if u == u0 {
            return k0;
        }
        let (u1, k1) = pts[j];
        k0 + (u - u0) / (u1 - u0) * (k1 - k0)
    }

    /// Slope of the first segment (tail behaviour as u -> 0+).
    pub fn slope_at_zero(&self) -> f64 {
        let (u1, k1) = self.points[1];
        k1 / u1
    }

    /// Slope of the last segment (behaviour as u -> 1-).
    pub fn slope_at_one(&self) -> f64 {
        let n = self.points.len();
        let (u0, k0) = self.points[n - 2];
        (1.0 - k0) / (1.0 - u0)
    }
}

/// Pointwise convex combination of distortions. Weights must be nonnegative
/// and sum to one; concavity is preserved when every part is concave.
pub fn mix(parts: &[(f64, DistortionFn)]) -> Result<DistortionFn> {
    if parts.is_empty() {
        return Err(Error::Parameter("empty mixture".into()));
    }
    if parts.iter().any(|(w, _)| *w < -DISTORTION_TOL || !w.is_finite()) {
        return Err(Error::Parameter("mixture weights must be nonnegative".into()));
    }
    let total = util::sum(parts.iter().map(|(w, _)| *w));
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("mixture weights sum to {total}, not 1")));
    }
    let mut grid: Vec<f64> = parts
        .iter()
        .flat_map(|(_, d)| d.breakpoints().iter().map(|p| p.0))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let points = grid
        .into_iter()
        .map(|u| (u, util::sum(parts.iter().map(|(w, d)| w * d.eval(u)))))
        .collect();
    DistortionFn::from_breakpoints(points)
}

/// All u in the open interval (0,1) where the sign of k1 - k2 changes,
/// located exactly by segment intersection on the merged breakpoint grid.
/// Where the two functions coincide along a whole segment, the right edge
/// of the coincidence run is reported.
pub fn intersect(k1: &DistortionFn, k2: &DistortionFn) -> Vec<f64> {
    const ZERO: f64 = 1e-14;
    let mut grid: Vec<f64> = k1
        .breakpoints()
        .iter()
        .chain(k2.breakpoints())
        .map(|p| p.0)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let diff: Vec<f64> = grid.iter().map(|&u| k1.eval(u) - k2.eval(u)).collect();
    let sign = |d: f64| -> i8 {
        if d > ZERO {
            1
        } else if d < -ZERO {
            -1
        } else {
            0
        }
    };
    let mut crossings = Vec::new();
    let mut last_sign: i8 = sign(diff[0]);
    for j in 1..grid.len() {
        let s_prev = sign(diff[j - 1]);
        let s_here = sign(diff[j]);
        if s_prev != 0 && s_here != 0 && s_prev != s_here {
            // Transversal crossing inside the segment: both functions are
            // linear here, so solve the linear equation exactly.
            let (ua, ub) = (grid[j - 1], grid[j]);
            let (da, db) = (diff[j - 1], diff[j]);
            let u = ua + (ub - ua) * (-da) / (db - da);
            if u > ZERO && u < 1.0 - ZERO {
                crossings.push(u);
            }
            last_sign = s_here;
        } else if s_here != 0 {
            if last_sign != 0 && s_here != last_sign {
                // Sign change through a touch point or a coincidence run;
                // the change completes at this grid point's segment start.
                let u = grid[j - 1];
                if u > ZERO && u < 1.0 - ZERO {
                    crossings.push(u);
                }
            }
            last_sign = s_here;
        }
    }
    crossings.dedup_by(|a, b| (*a - *b).abs() <= ZERO);
    crossings
}

/// Choquet integral of an empirical law against a distortion: tied sample
/// values are grouped so atoms integrate correctly, and the step survival
/// function makes the integral an exact finite sum.
pub fn choquet(k: &DistortionFn, dist: &EmpiricalDist) -> f64 {
    let n = dist.len();
    let order = util::argsort_by_key(n, |i| dist.values()[i]);
    // Distinct values ascending with grouped weights.
    let mut values: Vec<f64> = Vec::with_capacity(n);
    let mut weights: Vec<f64> = Vec::with_capacity(n);
    for &i in &order {
        let v = dist.values()[i];
        let w = dist.weights()[i];
        if values.last() == Some(&v) {
            *weights.last_mut().unwrap() += w;
        } else {
            values.push(v);
            weights.push(w);
        }
    }
    // Suffix masses q_j = P(X >= v_j), accumulated from the top.
    let m = values.len();
    let mut q = vec![0.0_f64; m];
    let mut acc = 0.0_f64;
    let mut comp = 0.0_f64;
    for j in (0..m).rev() {
        let w = weights[j];
        let t = acc + w;
        if acc.abs() >= w.abs() {
            comp += (acc - t) + w;
        } else {
            comp += (w - t) + acc;
        }
        acc = t;
        q[j] = (acc + comp).clamp(0.0, 1.0);
    }
    let mut total = values[0];
    for j in 1..m {
        total += (values[j] - values[j - 1]) * k.eval(q[j]);
    }
    total
}

/// Which variable a regime rule thresholds on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsSelector {
    /// The path set's designated observable at the evaluation time (defaults
    /// to the contemporaneous aggregate).
    Contemporaneous,
    /// The aggregate endowment at a fixed earlier-or-equal period.
    Aggregate(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegimeRule {
    /// obs <= empirical quantile of the observable at the given level.
    LeqQuantile(f64),
    /// obs <= fixed threshold.
    Leq(f64),
    /// Catch-all; must come last.
    Else,
}

#[derive(Debug, Clone)]
pub struct Regime {
    pub rule: RegimeRule,
    pub distortion: DistortionFn,
}

/// State-dependent distortion: an ordered list of left-closed threshold
/// rules on an observable, one distortion per regime. Rules are evaluated
/// in order; the first match wins.
#[derive(Debug, Clone)]
pub struct RegimeDistortion {
    observable: ObsSelector,
    regimes: Vec<Regime>,
}

impl RegimeDistortion {
    pub fn new(observable: ObsSelector, regimes: Vec<Regime>) -> Result<Self> {
        if regimes.is_empty() {
            return Err(Error::Config("regime list is empty".into()));
        }
        for (i, r) in regimes.iter().enumerate() {
            if matches!(r.rule, RegimeRule::Else) && i + 1 != regimes.len() {
                return Err(Error::Config("catch-all regime must come last".into()));
            }
        }
        let mut last_q: Option<f64> = None;
        let mut last_x: Option<f64> = None;
        for r in &regimes {
            match r.rule {
                RegimeRule::LeqQuantile(q) => {
                    if !(0.0..=1.0).contains(&q) {
                        return Err(Error::Config(format!("quantile level {q} outside [0,1]")));
                    }
                    if last_q.is_some_and(|p| q <= p) {
                        return Err(Error::Config("quantile thresholds must increase".into()));
                    }
                    last_q = Some(q);
                }
                RegimeRule::Leq(x) => {
                    if last_x.is_some_and(|p| x <= p) {
                        return Err(Error::Config("thresholds must increase".into()));
                    }
                    last_x = Some(x);
                }
                RegimeRule::Else => {}
            }
        }
        Ok(Self { observable, regimes })
    }

    /// A single unconditional regime.
    pub fn single(distortion: DistortionFn) -> Self {
        Self {
            observable: ObsSelector::Contemporaneous,
            regimes: vec![Regime { rule: RegimeRule::Else, distortion }],
        }
    }

    pub fn observable(&self) -> ObsSelector {
        self.observable
    }

    pub fn regimes(&self) -> &[Regime] {
        &self.regimes
    }

    pub fn is_single(&self) -> bool {
        self.regimes.len() == 1
    }

    pub fn all_concave(&self) -> bool {
        self.regimes.iter().all(|r| r.distortion.is_concave())
    }

    /// Turns quantile rules into absolute thresholds against the law of the
    /// observable; the catch-all becomes +inf.
    pub fn resolve_thresholds(&self, obs_dist: &EmpiricalDist) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.regimes.len());
        for r in &self.regimes {
            out.push(match &r.rule {
                RegimeRule::LeqQuantile(q) => obs_dist.quantile(*q)?,
                RegimeRule::Leq(x) => *x,
                RegimeRule::Else => f64::INFINITY,
            });
        }
        Ok(out)
    }

    /// Index of the first regime whose threshold covers `obs`.
    pub fn select(&self, thresholds: &[f64], obs: f64) -> Result<usize> {
        thresholds
            .iter()
            .position(|&t| obs <= t)
            .ok_or_else(|| Error::Config(format!("no regime covers observable value {obs}")))
    }
}
