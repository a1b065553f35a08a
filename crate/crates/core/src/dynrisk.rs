//! One-step conditional risk evaluation, the dynamic recursion over the
//! risk-to-go process, and a randomized axiom harness.
//!
//! Two evaluation modes exist per period. `Marginal` applies the
//! regime-selected distortion to the marginal empirical law of the argument
//! (the convention that turns an expectation of a regime-dependent
//! distortion into a single mixture distortion). `Tree` conditions on the
//! exact path prefix, which is the honest conditional law on finite trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::allocation::AllocationProcess;
use crate::distortion::{choquet, DistortionFn, ObsSelector, RegimeDistortion};
use crate::error::{Error, Result};
use crate::scenario::SamplePathSet;
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Marginal,
    Tree,
}

/// One-step conditional risk measure for a single period.
#[derive(Debug, Clone)]
pub struct PeriodSpec {
    pub mode: EvalMode,
    pub regimes: RegimeDistortion,
}

/// A dynamic risk measure as its family of one-step conditional measures:
/// entry `t` evaluates payoffs revealed at period `t + 1`.
#[derive(Debug, Clone)]
pub struct RiskSpec {
    periods: Vec<PeriodSpec>,
}

impl RiskSpec {
    pub fn new(periods: Vec<PeriodSpec>) -> Result<Self> {
        if periods.is_empty() {
            return Err(Error::Config("risk spec needs at least one period".into()));
        }
        Ok(Self { periods })
    }

    /// All-expectation spec over `horizon` periods.
    pub fn expectation(horizon: usize) -> Self {
        Self {
            periods: (0..horizon)
                .map(|_| PeriodSpec {
                    mode: EvalMode::Marginal,
                    regimes: RegimeDistortion::single(DistortionFn::identity()),
                })
                .collect(),
        }
    }

    /// Single-regime marginal spec with the same distortion every period.
    pub fn uniform_distortion(horizon: usize, k: DistortionFn) -> Self {
        Self {
            periods: (0..horizon)
                .map(|_| PeriodSpec {
                    mode: EvalMode::Marginal,
                    regimes: RegimeDistortion::single(k.clone()),
                })
                .collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.periods.len()
    }

    pub fn period(&self, t: usize) -> Result<&PeriodSpec> {
        self.periods
            .get(t)
            .ok_or_else(|| Error::Shape(format!("no one-step measure at time {t}")))
    }

    pub fn periods(&self) -> &[PeriodSpec] {
        &self.periods
    }

    pub fn all_marginal(&self) -> bool {
        self.periods.iter().all(|p| p.mode == EvalMode::Marginal)
    }

    pub fn all_concave(&self) -> bool {
        self.periods.iter().all(|p| p.regimes.all_concave())
    }
}

/// Observable values and their law for threshold resolution at time `t`.
fn observable_column(
    pathset: &SamplePathSet,
    selector: ObsSelector,
    t: usize,
) -> Result<Vec<f64>> {
    let period = match selector {
        ObsSelector::Contemporaneous => t,
        ObsSelector::Aggregate(k) => {
            if k == 0 || k > t {
                return Err(Error::Config(format!(
                    "regime observable refers to period {k}, not measurable at time {t}"
                )));
            }
            k
        }
    };
    if period == 0 || period > pathset.horizon() {
        return Err(Error::Config(format!(
            "no observable available at time {t}: regimes must be unconditional"
        )));
    }
    Ok(match selector {
        ObsSelector::Contemporaneous => (0..pathset.n_paths())
            .map(|p| pathset.observable(p, period))
            .collect(),
        ObsSelector::Aggregate(_) => (0..pathset.n_paths())
            .map(|p| pathset.aggregate(p, period))
            .collect(),
    })
}

/// Per-path regime index at time `t`, or an error when a rule set does not
/// cover some observable value (or references one that is not yet known).
pub(crate) fn regime_indices(
    regimes: &RegimeDistortion,
    pathset: &SamplePathSet,
    t: usize,
) -> Result<Vec<usize>> {
    if regimes.is_single() {
        return Ok(vec![0; pathset.n_paths()]);
    }
    let obs = observable_column(pathset, regimes.observable(), t)?;
    let law = pathset.dist_of(&obs)?;
    let thresholds = regimes.resolve_thresholds(&law)?;
    obs.iter().map(|&o| regimes.select(&thresholds, o)).collect()
}

/// One-step conditional risk of `next_values` (the payoff revealed at
/// period `t + 1`) as seen at time `t`, one output per path.
pub fn eval_one_step(
    spec: &RiskSpec,
    t: usize,
    next_values: &[f64],
    pathset: &SamplePathSet,
) -> Result<Vec<f64>> {
    if next_values.len() != pathset.n_paths() {
        return Err(Error::Shape(format!(
            "{} values for {} paths",
            next_values.len(),
            pathset.n_paths()
        )));
    }
    let period = spec.period(t)?;
    match period.mode {
        EvalMode::Marginal => {
            let regime_of = regime_indices(&period.regimes, pathset, t)?;
            let law = pathset.dist_of(next_values)?;
            let n_regimes = period.regimes.regimes().len();
            let mut cache: Vec<Option<f64>> = vec![None; n_regimes];
            let mut out = Vec::with_capacity(pathset.n_paths());
            for &r in &regime_of {
                let v = *cache[r].get_or_insert_with(|| {
                    choquet(&period.regimes.regimes()[r].distortion, &law)
                });
                out.push(v);
            }
            Ok(out)
        }
        EvalMode::Tree => {
            let regime_of = regime_indices(&period.regimes, pathset, t)?;
            let mut out = vec![0.0; pathset.n_paths()];
            for state in pathset.states_at(t) {
                let total = util::sum(state.iter().map(|&p| pathset.weight(p)));
                let (values, weights): (Vec<f64>, Vec<f64>) = if total > 0.0 {
                    state
                        .iter()
                        .map(|&p| (next_values[p], pathset.weight(p) / total))
                        .unzip()
                } else {
                    let w = 1.0 / state.len() as f64;
                    state.iter().map(|&p| (next_values[p], w)).unzip()
                };
                let mut weights = weights;
                let wsum = util::sum(weights.iter().copied());
                if let Some(last) = weights.last_mut() {
                    *last += 1.0 - wsum;
                }
                let law = crate::scenario::EmpiricalDist::new(values, weights)?;
                let r = regime_of[state[0]];
                let v = choquet(&period.regimes.regimes()[r].distortion, &law);
                for &p in &state {
                    out[p] = v;
                }
            }
            Ok(out)
        }
    }
}

/// The risk-to-go matrix of one agent: column `t` holds R_t per path, with
/// the terminal column identically zero.
#[derive(Debug, Clone)]
pub struct RiskToGoProcess {
    n_paths: usize,
    horizon: usize,
    values: Vec<f64>,
}

impl RiskToGoProcess {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn value(&self, p: usize, t: usize) -> f64 {
        debug_assert!(t <= self.horizon);
        self.values[p * (self.horizon + 1) + t]
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.value(p, t)).collect()
    }
}

/// Backward recursion R_T = 0, R_t = rho_t(Y_{t+1} + R_{t+1}) for one agent.
pub fn risk_to_go(
    spec: &RiskSpec,
    alloc: &AllocationProcess,
    agent: usize,
) -> Result<RiskToGoProcess> {
    let pathset = alloc.pathset();
    let horizon = pathset.horizon();
    if spec.horizon() != horizon {
        return Err(Error::Shape(format!(
            "spec covers {} periods, path set has {horizon}",
            spec.horizon()
        )));
    }
    if agent >= alloc.n_agents() {
        return Err(Error::Shape(format!("agent {agent} out of range")));
    }
    let n = pathset.n_paths();
    let mut values = vec![0.0; n * (horizon + 1)];
    let mut next_r = vec![0.0; n];
    for t in (0..horizon).rev() {
        let arg: Vec<f64> = (0..n)
            .map(|p| alloc.value(p, t + 1, agent) + next_r[p])
            .collect();
        let r = eval_one_step(spec, t, &arg, pathset)?;
        for p in 0..n {
            values[p * (horizon + 1) + t] = r[p];
        }
        next_r = r;
    }
    Ok(RiskToGoProcess { n_paths: n, horizon, values })
}

/// rho_{t,T}(Y_{t+1:T}) per path; by the recursion this is column `t` of
/// the risk-to-go process.
pub fn eval_dynamic(
    spec: &RiskSpec,
    alloc: &AllocationProcess,
    agent: usize,
    t: usize,
) -> Result<Vec<f64>> {
    if t >= alloc.pathset().horizon() {
        return Err(Error::Shape(format!("t = {t} must be before the horizon")));
    }
    Ok(risk_to_go(spec, alloc, agent)?.column(t))
}

#[derive(Debug, Clone)]
pub struct AxiomCheck {
    pub name: &'static str,
    pub max_violation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct AxiomReport {
    pub tolerance: f64,
    pub checks: Vec<AxiomCheck>,
}

impl AxiomReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&AxiomCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Randomized property report for the one-step measures of `spec`:
/// monotonicity, translation invariance, positive homogeneity,
/// subadditivity, normalization, and equidistribution-preservation
/// (permuting equal-weight sample labels leaves values unchanged).
/// Failures are report entries, not errors.
pub fn check_axioms(
    spec: &RiskSpec,
    pathset: &SamplePathSet,
    trials: usize,
    seed: u64,
) -> Result<AxiomReport> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be >= 1".into()));
    }
    let tolerance = 1e-9;
    let n = pathset.n_paths();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst = [0.0_f64; 6];
    let names = [
        "monotonicity",
        "translation_invariance",
        "positive_homogeneity",
        "subadditivity",
        "normalization",
        "equidistribution",
    ];

    // Group paths by exact weight so label permutations stay law-preserving.
    let order = util::argsort_by_key(n, |p| pathset.weight(p));
    let mut weight_groups: Vec<Vec<usize>> = Vec::new();
    for &p in &order {
        if weight_groups
            .last()
            .is_some_and(|g| pathset.weight(g[0]) == pathset.weight(p))
        {
            weight_groups.last_mut().unwrap().push(p);
        } else {
            weight_groups.push(vec![p]);
        }
    }

    for _ in 0..trials {
        let t = rng.random_range(0..spec.horizon());
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let vx = eval_one_step(spec, t, &x, pathset)?;

        // Monotonicity against a pathwise-dominating perturbation.
        let bump: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b.abs()).collect();
        let vbump = eval_one_step(spec, t, &bump, pathset)?;
        for p in 0..n {
            worst[0] = worst[0].max(vx[p] - vbump[p]);
        }

        let m = rng.random_range(-3.0..3.0);
        let shifted: Vec<f64> = x.iter().map(|a| a + m).collect();
        let vshift = eval_one_step(spec, t, &shifted, pathset)?;
        for p in 0..n {
            worst[1] = worst[1].max((vshift[p] - (vx[p] + m)).abs());
        }

        let c = rng.random_range(0.0..2.5);
        let scaled: Vec<f64> = x.iter().map(|a| a * c).collect();
        let vscaled = eval_one_step(spec, t, &scaled, pathset)?;
        for p in 0..n {
            worst[2] = worst[2].max((vscaled[p] - c * vx[p]).abs());
        }

        let vy = eval_one_step(spec, t, &y, pathset)?;
        let sums: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let vsum = eval_one_step(spec, t, &sums, pathset)?;
        for p in 0..n {
            worst[3] = worst[3].max(vsum[p] - (vx[p] + vy[p]));
        }

        let vzero = eval_one_step(spec, t, &vec![0.0; n], pathset)?;
        for p in 0..n {
            worst[4] = worst[4].max(vzero[p].abs());
        }

        // Permute argument labels within equal-weight groups; in marginal
        // mode values must be unchanged path by path.
        let period = spec.period(t)?;
        if period.mode == EvalMode::Marginal {
            let mut permuted = x.clone();
            for g in &weight_groups {
                let mut shuffled = g.clone();
                for i in (1..shuffled.len()).rev() {
                    let j = rng.random_range(0..=i);
                    shuffled.swap(i, j);
                }
                for (src, dst) in g.iter().zip(&shuffled) {
                    permuted[*dst] = x[*src];
                }
            }
            let vperm = eval_one_step(spec, t, &permuted, pathset)?;
            for p in 0..n {
                worst[5] = worst[5].max((vperm[p] - vx[p]).abs());
            }
        }
    }

    let checks = names
        .iter()
        .zip(worst)
        .map(|(name, max_violation)| AxiomCheck {
            name,
            max_violation,
            pass: max_violation <= tolerance,
        })
        .collect();
    Ok(AxiomReport { tolerance, checks })
}
