//! Stochastic model of the aggregate endowment: weighted sample paths,
//! finite scenario trees, and empirical distribution utilities.
//!
//! Continuous laws are represented only by finite weighted samples; the
//! essential infimum of a sample is its smallest positive-weight support
//! point. All types are immutable after construction.

use std::io::Read;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::util::{self, QUANTILE_SLACK, WEIGHT_TOL};

/// A finite weighted sample of a real-valued law.
#[derive(Debug, Clone)]
pub struct EmpiricalDist {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalDist {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} values vs {} weights",
                values.len(),
                weights.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::Domain("empty sample".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite sample value".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("negative or non-finite weight".into()));
        }
        let total = util::sum(weights.iter().copied());
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Domain(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { values, weights })
    }

    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Domain("empty sample".into()));
        }
        let w = 1.0 / n as f64;
        let mut weights = vec![w; n];
        // Absorb the rounding of n * (1/n) in the last atom so the vector
        // sums to 1 within tolerance even for awkward n.
        let total = util::sum(weights.iter().copied());
        weights[n - 1] += 1.0 - total;
        Self::new(values, weights)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        util::weighted_mean(&self.values, &self.weights)
    }

    /// Smallest support point carrying positive weight.
    pub fn essinf(&self) -> Result<f64> {
        self.values
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(v, _)| *v)
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.min(v)))
            })
            .ok_or_else(|| Error::Domain("no positive-weight support".into()))
    }

    /// P(X > x), a right-continuous nonincreasing step function of `x`.
    /// The inequality is strict: tail events are of the form [X > x].
    pub fn survival(&self, x: f64) -> f64 {
        let s = util::sum(
            self.values
                .iter()
                .zip(&self.weights)
                .filter(|(v, _)| **v > x)
                .map(|(_, w)| *w),
        );
        s.clamp(0.0, 1.0)
    }

    /// Left-continuous quantile: inf { x | F(x) >= alpha }. Cumulative
    /// weights are compared with a small slack so that uniform samples hit
    /// the intended order statistic despite rounding of alpha * N.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Parameter(format!("quantile level {alpha}")));
        }
        let order = util::argsort_by_key(self.values.len(), |i| self.values[i]);
        let mut cum = 0.0_f64;
        let mut comp = 0.0_f64;
        for &i in &order {
            let w = self.weights[i];
            let t = cum + w;
            if cum.abs() >= w.abs() {
                comp += (cum - t) + w;
            } else {
                comp += (w - t) + cum;
            }
            cum = t;
            if cum + comp >= alpha - QUANTILE_SLACK {
                return Ok(self.values[i]);
            }
        }
        // Weights sum to 1 so this is only reachable for alpha ~ 1 plus
        // rounding; return the maximum support point.
        Ok(self.values[*order.last().expect("nonempty")])
    }
}

/// Smallest positive-weight support point of `dist`.
pub fn essinf(dist: &EmpiricalDist) -> Result<f64> {
    dist.essinf()
}

/// P(X > x) under `dist`.
pub fn empirical_survival(dist: &EmpiricalDist, x: f64) -> f64 {
    dist.survival(x)
}

/// Per-agent endowment panel attached to a path set.
#[derive(Debug, Clone)]
struct Endowments {
    n_agents: usize,
    /// Row-major [path][period][agent].
    values: Vec<f64>,
}

/// N weighted paths of the aggregate endowment over T periods, with
/// optional per-agent endowments and per-period observables driving
/// regime rules (the observable defaults to the aggregate itself).
#[derive(Debug, Clone)]
pub struct SamplePathSet {
    horizon: usize,
    n_paths: usize,
    /// Row-major [path][period], periods 1..=T stored at offsets 0..T.
    aggregate: Vec<f64>,
    weights: Vec<f64>,
    observables: Vec<f64>,
    endowments: Option<Endowments>,
}

impl SamplePathSet {
    /// Build a path set from flat row-major data, validating every invariant.
    pub fn from_parts(
        horizon: usize,
        aggregate: Vec<f64>,
        weights: Option<Vec<f64>>,
        endowments: Option<(usize, Vec<f64>)>,
        observables: Option<Vec<f64>>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Parameter("horizon must be >= 1".into()));
        }
        if aggregate.is_empty() || aggregate.len() % horizon != 0 {
            return Err(Error::Shape(format!(
                "aggregate length {} not a positive multiple of horizon {horizon}",
                aggregate.len()
            )));
        }
        let n_paths = aggregate.len() / horizon;
        if aggregate.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite aggregate value".into()));
        }
        let weights = match weights {
            Some(w) => {
                if w.len() != n_paths {
                    return Err(Error::Shape(format!(
                        "{} weights for {n_paths} paths",
                        w.len()
                    )));
                }
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(Error::Domain("negative or non-finite weight".into()));
                }
                let total = util::sum(w.iter().copied());
                if (total - 1.0).abs() > WEIGHT_TOL {
                    return Err(Error::Ingestion(format!(
                        "path weights sum to {total}, not 1"
                    )));
                }
                w
            }
            None => {
                let mut w = vec![1.0 / n_paths as f64; n_paths];
                let total = util::sum(w.iter().copied());
                w[n_paths - 1] += 1.0 - total;
                w
            }
        };
        let observables = match observables {
            Some(o) => {
                if o.len() != aggregate.len() {
                    return Err(Error::Shape("observables shape mismatch".into()));
                }
                o
            }
            None => aggregate.clone(),
        };
        let endowments = match endowments {
            Some((n_agents, values)) => {
                if n_agents == 0 {
                    return Err(Error::Parameter("agent count must be >= 1".into()));
                }
                if values.len() != n_paths * horizon * n_agents {
                    return Err(Error::Shape("endowment tensor shape mismatch".into()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain("non-finite endowment value".into()));
                }
                for p in 0..n_paths {
                    for t in 0..horizon {
                        let base = (p * horizon + t) * n_agents;
                        let total = util::sum(values[base..base + n_agents].iter().copied());
                        let s = aggregate[p * horizon + t];
                        if (total - s).abs() > crate::util::BUDGET_TOL {
                            return Err(Error::Ingestion(format!(
                                "endowments sum to {total} but aggregate is {s} (path {p}, period {})",
                                t + 1
                            )));
                        }
                    }
                }
                Some(Endowments { n_agents, values })
            }
            None => None,
        };
        Ok(Self {
            horizon,
            n_paths,
            aggregate,
            weights,
            observables,
            endowments,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Aggregate endowment on path `p` at period `t` (1-based).
    pub fn aggregate(&self, p: usize, t: usize) -> f64 {
        debug_assert!((1..=self.horizon).contains(&t));
        self.aggregate[p * self.horizon + (t - 1)]
    }

    pub fn weight(&self, p: usize) -> f64 {
        self.weights[p]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Regime observable on path `p` at period `t` (1-based).
    pub fn observable(&self, p: usize, t: usize) -> f64 {
        debug_assert!((1..=self.horizon).contains(&t));
        self.observables[p * self.horizon + (t - 1)]
    }

    pub fn n_agents(&self) -> Option<usize> {
        self.endowments.as_ref().map(|e| e.n_agents)
    }

    /// Agent `i`'s endowment on path `p` at period `t` (1-based).
    pub fn endowment(&self, p: usize, t: usize, i: usize) -> Option<f64> {
        let e = self.endowments.as_ref()?;
        debug_assert!((1..=self.horizon).contains(&t));
        Some(e.values[(p * self.horizon + (t - 1)) * e.n_agents + i])
    }

    /// Law of the aggregate at period `t`.
    pub fn aggregate_dist(&self, t: usize) -> EmpiricalDist {
        let values = (0..self.n_paths).map(|p| self.aggregate(p, t)).collect();
        EmpiricalDist::new(values, self.weights.clone()).expect("validated at construction")
    }

    /// Law of the observable at period `t`.
    pub fn observable_dist(&self, t: usize) -> EmpiricalDist {
        let values = (0..self.n_paths).map(|p| self.observable(p, t)).collect();
        EmpiricalDist::new(values, self.weights.clone()).expect("validated at construction")
    }

    /// Law of arbitrary per-path values under the path weights.
    pub fn dist_of(&self, values: &[f64]) -> Result<EmpiricalDist> {
        EmpiricalDist::new(values.to_vec(), self.weights.clone())
    }

    /// Groups path indices by exact equality of the (aggregate, observable)
    /// history through period `t`. For `t = 0` there is a single group. Used
    /// for tree-mode conditioning and for identifying decision states on
    /// finite trees flattened to paths.
    pub fn states_at(&self, t: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n_paths).collect();
        let key = |p: usize| -> &[f64] { &self.aggregate[p * self.horizon..p * self.horizon + t] };
        let okey =
            |p: usize| -> &[f64] { &self.observables[p * self.horizon..p * self.horizon + t] };
        order.sort_by(|&a, &b| {
            let c = key(a)
                .iter()
                .zip(key(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|c| c.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal);
            c.then_with(|| {
                okey(a)
                    .iter()
                    .zip(okey(b))
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|c| c.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then(a.cmp(&b))
        });
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for &p in &order {
            let same = groups.last().is_some_and(|g| {
                let q = g[0];
                key(p) == key(q) && okey(p) == okey(q)
            });
            if same {
                groups.last_mut().unwrap().push(p);
            } else {
                groups.push(vec![p]);
            }
        }
        groups
    }
}

/// Seeded two-period Monte Carlo chain: S_1 ~ Exp(mean `mean0`) and
/// S_2 | S_1 ~ Exp(mean S_1), with uniform path weights.
///
/// Each path draws from its own ChaCha12 stream (stream id = path index),
/// so the sample is reproducible for a fixed seed regardless of generation
/// order.
pub fn generate_exponential_chain(n_paths: usize, mean0: f64, seed: u64) -> Result<SamplePathSet> {
    if n_paths == 0 {
        return Err(Error::Parameter("n_paths must be >= 1".into()));
    }
    if !(mean0 > 0.0) || !mean0.is_finite() {
        return Err(Error::Parameter(format!("mean0 must be positive, got {mean0}")));
    }
    let horizon = 2;
    let mut aggregate = vec![0.0; n_paths * horizon];
    let master = ChaCha12Rng::seed_from_u64(seed);
    for p in 0..n_paths {
        let mut rng = master.clone();
        rng.set_stream(p as u64);
        let u1: f64 = rng.random();
        let s1 = -mean0 * (1.0 - u1).ln();
        let u2: f64 = rng.random();
        let s2 = -s1 * (1.0 - u2).ln();
        aggregate[p * horizon] = s1;
        aggregate[p * horizon + 1] = s2;
    }
    SamplePathSet::from_parts(horizon, aggregate, None, None, None)
}

/// Loads a path table from CSV with header
/// `path_id,period,weight,S[,X1..Xn]` (`weight` and the `X` columns are
/// optional). Periods must form 1..T for every path.
pub fn load_paths<R: Read>(reader: R) -> Result<SamplePathSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Ingestion(format!("csv header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let c_path = col("path_id").ok_or_else(|| Error::Ingestion("missing column path_id".into()))?;
    let c_period = col("period").ok_or_else(|| Error::Ingestion("missing column period".into()))?;
    let c_s = col("S").ok_or_else(|| Error::Ingestion("missing column S".into()))?;
    let c_weight = col("weight");
    let mut x_cols = Vec::new();
    for i in 1.. {
        match col(&format!("X{i}")) {
            Some(c) => x_cols.push(c),
            None => break,
        }
    }

    struct Row {
        path: String,
        period: usize,
        weight: Option<f64>,
        s: f64,
        x: Vec<f64>,
        line: usize,
    }
    let mut rows: Vec<Row> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2; // 1-based, after header
        let rec = rec.map_err(|e| Error::Ingestion(format!("row {line}: {e}")))?;
        let parse = |c: usize, what: &str| -> Result<f64> {
            rec.get(c)
                .ok_or_else(|| Error::Ingestion(format!("row {line}: missing {what}")))?
                .parse::<f64>()
                .map_err(|_| Error::Ingestion(format!("row {line}: bad {what}")))
        };
        let period = parse(c_period, "period")? as usize;
        let weight = match c_weight {
            Some(c) => Some(parse(c, "weight")?),
            None => None,
        };
        let s = parse(c_s, "S")?;
        let mut x = Vec::with_capacity(x_cols.len());
        for (i, &c) in x_cols.iter().enumerate() {
            x.push(parse(c, &format!("X{}", i + 1))?);
        }
        rows.push(Row {
            path: rec.get(c_path).unwrap_or("").to_string(),
            period,
            weight,
            s,
            x,
            line,
        });
    }
    if rows.is_empty() {
        return Err(Error::Ingestion("empty path table".into()));
    }

    // Group by path id in first-appearance order.
    let mut path_ids: Vec<String> = Vec::new();
    for r in &rows {
        if !path_ids.contains(&r.path) {
            path_ids.push(r.path.clone());
        }
    }
    let horizon = rows.iter().map(|r| r.period).max().unwrap();
    if horizon == 0 {
        return Err(Error::Ingestion("periods must start at 1".into()));
    }
    let n_paths = path_ids.len();
    let n_agents = x_cols.len();
    let mut aggregate = vec![f64::NAN; n_paths * horizon];
    let mut endow = vec![f64::NAN; n_paths * horizon * n_agents];
    let mut weights: Vec<Option<f64>> = vec![None; n_paths];
    for r in &rows {
        let p = path_ids.iter().position(|id| *id == r.path).unwrap();
        if r.period == 0 || r.period > horizon {
            return Err(Error::Ingestion(format!(
                "row {}: period {} outside 1..{horizon}",
                r.line, r.period
            )));
        }
        let slot = p * horizon + (r.period - 1);
        if !aggregate[slot].is_nan() {
            return Err(Error::Ingestion(format!(
                "row {}: duplicate period {} for path {}",
                r.line, r.period, r.path
            )));
        }
        aggregate[slot] = r.s;
        for (i, &xv) in r.x.iter().enumerate() {
            endow[slot * n_agents + i] = xv;
        }
        if let Some(w) = r.weight {
            match weights[p] {
                None => weights[p] = Some(w),
                Some(prev) if (prev - w).abs() <= WEIGHT_TOL => {}
                Some(prev) => {
                    return Err(Error::Ingestion(format!(
                        "row {}: weight {w} disagrees with {prev} for path {}",
                        r.line, r.path
                    )));
                }
            }
        }
    }
    for (p, id) in path_ids.iter().enumerate() {
        for t in 0..horizon {
            if aggregate[p * horizon + t].is_nan() {
                return Err(Error::Ingestion(format!(
                    "path {id}: missing period {} (ragged table)",
                    t + 1
                )));
            }
        }
    }
    let weights = if weights.iter().all(|w| w.is_none()) {
        None
    } else if weights.iter().all(|w| w.is_some()) {
        Some(weights.into_iter().map(|w| w.unwrap()).collect())
    } else {
        return Err(Error::Ingestion("weight column present for only some paths".into()));
    };
    let endowments = if n_agents > 0 { Some((n_agents, endow)) } else { None };
    SamplePathSet::from_parts(horizon, aggregate, weights, endowments, None)
}

/// A node of a finite scenario tree. The root sits at period 0 with trivial
/// information; children carry conditional probabilities.
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub value: f64,
    pub children: Vec<(f64, TreeNode)>,
}

/// Finite scenario tree over T periods. Leaves must all sit at period T;
/// conditional child probabilities sum to one at every interior node.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    root: TreeNode,
    horizon: usize,
}

impl ScenarioTree {
    pub fn new(root: TreeNode) -> Result<Self> {
        fn depth_check(node: &TreeNode, period: usize, horizon: &mut Option<usize>) -> Result<()> {
            if !node.value.is_finite() {
                return Err(Error::Domain("non-finite node value".into()));
            }
            if node.children.is_empty() {
                match *horizon {
                    None => *horizon = Some(period),
                    Some(h) if h == period => {}
                    Some(h) => {
                        return Err(Error::Shape(format!(
                            "leaf at period {period}, expected {h}"
                        )));
                    }
                }
                return Ok(());
            }
            let total = util::sum(node.children.iter().map(|(p, _)| *p));
            if (total - 1.0).abs() > WEIGHT_TOL {
                return Err(Error::Domain(format!(
                    "child probabilities sum to {total} at period {period}"
                )));
            }
            if node.children.iter().any(|(p, _)| *p < 0.0) {
                return Err(Error::Domain("negative child probability".into()));
            }
            for (_, child) in &node.children {
                depth_check(child, period + 1, horizon)?;
            }
            Ok(())
        }
        let mut horizon = None;
        depth_check(&root, 0, &mut horizon)?;
        let horizon = horizon.ok_or_else(|| Error::Shape("empty tree".into()))?;
        if horizon == 0 {
            return Err(Error::Shape("root must have children".into()));
        }
        Ok(Self { root, horizon })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Flattens the tree into a path set: one path per leaf, weighted by the
    /// product of conditional probabilities along the way.
    pub fn to_paths(&self) -> Result<SamplePathSet> {
        let mut aggregate = Vec::new();
        let mut weights = Vec::new();
        let mut prefix = Vec::new();
        fn walk(
            node: &TreeNode,
            prob: f64,
            prefix: &mut Vec<f64>,
            aggregate: &mut Vec<f64>,
            weights: &mut Vec<f64>,
        ) {
            if node.children.is_empty() {
                aggregate.extend_from_slice(prefix);
                weights.push(prob);
                return;
            }
            for (p, child) in &node.children {
                prefix.push(child.value);
                walk(child, prob * p, prefix, aggregate, weights);
                prefix.pop();
            }
        }
        walk(&self.root, 1.0, &mut prefix, &mut aggregate, &mut weights);
        let total = util::sum(weights.iter().copied());
        if let Some(last) = weights.last_mut() {
            *last += 1.0 - total;
        }
        SamplePathSet::from_parts(self.horizon, aggregate, Some(weights), None, None)
    }
}

/// Convenience alias used throughout: path sets are shared immutably.
pub type PathSet = Arc<SamplePathSet>;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn essinf_minimum() {
        let d = EmpiricalDist::uniform(vec![3.0, 5.0, 7.0]).unwrap();
        assert_eq!(d.essinf().unwrap(), 3.0);
    }

    #[test]
    fn essinf_skips_zero_weight_atoms() {
        let d = EmpiricalDist::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(d.essinf().unwrap(), 1.0);
    }

    #[test]
    fn survival_counts_strictly_greater() {
        let d = EmpiricalDist::uniform(vec![1.0, 2.0, 3.0]).unwrap();
        assert!((d.survival(2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.survival(0.5), 1.0);
        assert_eq!(d.survival(3.0), 0.0);
    }

    #[test]
    fn quantile_left_continuous() {
        let d = EmpiricalDist::uniform(vec![10.0, 20.0, 30.0, 40.0, 50.0]).unwrap();
        assert_eq!(d.quantile(0.2).unwrap(), 10.0);
        assert_eq!(d.quantile(0.2000001).unwrap(), 20.0);
        assert_eq!(d.quantile(1.0).unwrap(), 50.0);
    }

    #[test]
    fn quantile_rank_is_exact_on_large_uniform_samples() {
        // 0.2 * 1e5 rounds just above 20000; the slack must keep the
        // 20000th order statistic, not the 20001st.
        let n = 100_000;
        let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let d = EmpiricalDist::uniform(values).unwrap();
        assert_eq!(d.quantile(0.2).unwrap(), 19_999.0);
    }

    #[test]
    fn generate_chain_is_reproducible_and_degenerate_size_works() {
        let a = generate_exponential_chain(100, 200.0, 7).unwrap();
        let b = generate_exponential_chain(100, 200.0, 7).unwrap();
        for p in 0..100 {
            assert_eq!(a.aggregate(p, 1), b.aggregate(p, 1));
            assert_eq!(a.aggregate(p, 2), b.aggregate(p, 2));
        }
        let one = generate_exponential_chain(1, 200.0, 3).unwrap();
        assert_eq!(one.n_paths(), 1);
        assert!(one.aggregate(0, 1).is_finite() && one.aggregate(0, 2).is_finite());
        assert!((one.weight(0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn generate_chain_prefix_stability() {
        // Stream-split draws: the first paths do not depend on n_paths.
        let small = generate_exponential_chain(10, 200.0, 42).unwrap();
        let large = generate_exponential_chain(1000, 200.0, 42).unwrap();
        for p in 0..10 {
            assert_eq!(small.aggregate(p, 1), large.aggregate(p, 1));
            assert_eq!(small.aggregate(p, 2), large.aggregate(p, 2));
        }
    }

    #[test]
    fn generate_chain_moments() {
        let ps = generate_exponential_chain(100_000, 200.0, 1).unwrap();
        let m1 = ps.aggregate_dist(1).mean();
        let m2 = ps.aggregate_dist(2).mean();
        assert!((m1 - 200.0).abs() < 4.0, "E[S1] = {m1}");
        assert!((m2 - 200.0).abs() < 8.0, "E[S2] = {m2}");
        let s2 = ps.aggregate_dist(2);
        assert!(s2.essinf().unwrap() >= 0.0);
    }

    #[test]
    fn generate_chain_rejects_bad_parameters() {
        assert!(matches!(
            generate_exponential_chain(0, 200.0, 1),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            generate_exponential_chain(10, 0.0, 1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn load_paths_roundtrip_and_errors() {
        let csv = "path_id,period,S\n1,1,10\n1,2,20\n2,1,11\n2,2,21\n";
        let ps = load_paths(csv.as_bytes()).unwrap();
        assert_eq!(ps.n_paths(), 2);
        assert_eq!(ps.horizon(), 2);
        assert_eq!(ps.aggregate(0, 2), 20.0);
        assert!((ps.weight(0) - 0.5).abs() < 1e-15);

        let ragged = "path_id,period,S\n1,1,10\n1,2,20\n2,1,11\n";
        let err = load_paths(ragged.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Ingestion(ref m) if m.contains("ragged")), "{err}");

        let bad_budget = "path_id,period,S,X1,X2\n1,1,10,4,5\n";
        let err = load_paths(bad_budget.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Ingestion(_)), "{err}");

        let weighted = "path_id,period,weight,S\n1,1,0.25,10\n1,2,0.25,20\n2,1,0.75,11\n2,2,0.75,21\n";
        let ps = load_paths(weighted.as_bytes()).unwrap();
        assert_eq!(ps.weight(0), 0.25);
        assert_eq!(ps.weight(1), 0.75);
    }

    #[test]
    fn tree_flattens_to_weighted_paths() {
        let tree = ScenarioTree::new(TreeNode {
            value: 0.0,
            children: vec![
                (
                    0.5,
                    TreeNode {
                        value: 1.0,
                        children: vec![
                            (0.25, TreeNode { value: 2.0, children: vec![] }),
                            (0.75, TreeNode { value: 3.0, children: vec![] }),
                        ],
                    },
                ),
                (
                    0.5,
                    TreeNode {
                        value: 4.0,
                        children: vec![(1.0, TreeNode { value: 5.0, children: vec![] })],
                    },
                ),
            ],
        })
        .unwrap();
        let ps = tree.to_paths().unwrap();
        assert_eq!(ps.n_paths(), 3);
        assert_eq!(ps.horizon(), 2);
        assert!((ps.weight(0) - 0.125).abs() < 1e-15);
        assert!((ps.weight(1) - 0.375).abs() < 1e-15);
        assert_eq!(ps.states_at(1).len(), 2);
        assert_eq!(ps.states_at(0).len(), 1);
    }

    #[test]
    fn tree_rejects_uneven_leaves_and_bad_probabilities() {
        let uneven = ScenarioTree::new(TreeNode {
            value: 0.0,
            children: vec![
                (0.5, TreeNode { value: 1.0, children: vec![] }),
                (
                    0.5,
                    TreeNode {
                        value: 2.0,
                        children: vec![(1.0, TreeNode { value: 3.0, children: vec![] })],
                    },
                ),
            ],
        });
        assert!(uneven.is_err());
        let bad_p = ScenarioTree::new(TreeNode {
            value: 0.0,
            children: vec![(0.7, TreeNode { value: 1.0, children: vec![] })],
        });
        assert!(bad_p.is_err());
    }

    proptest! {
        #[test]
        fn survival_is_nonincreasing_in_x(mut values in proptest::collection::vec(-100.0..100.0f64, 1..40), x1 in -120.0..120.0f64, dx in 0.0..50.0f64) {
            values.iter_mut().for_each(|v| *v = (*v * 16.0).round() / 16.0);
            let d = EmpiricalDist::uniform(values).unwrap();
            let a = d.survival(x1);
            let b = d.survival(x1 + dx);
            prop_assert!(b <= a + 1e-15);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn essinf_lower_bounds_support(values in proptest::collection::vec(-100.0..100.0f64, 1..40)) {
            let d = EmpiricalDist::uniform(values.clone()).unwrap();
            let e = d.essinf().unwrap();
            for v in values {
                prop_assert!(e <= v);
            }
        }
    }
}
