//! Allocation processes, the comonotone retention representation,
//! convex-order testing, comonotone improvement, and IR checks.

use std::io::{Read, Write};

use crate::dynrisk::{eval_one_step, risk_to_go, RiskSpec};
use crate::error::{Error, Result};
use crate::scenario::{EmpiricalDist, PathSet};
use crate::util::{self, BUDGET_TOL, CMP_SLACK};

/// Per-agent, per-period, per-path allocation values summing pathwise to
/// the aggregate endowment each period.
#[derive(Debug, Clone)]
pub struct AllocationProcess {
    pathset: PathSet,
    n_agents: usize,
    /// Row-major [path][period][agent].
    values: Vec<f64>,
}

impl AllocationProcess {
    pub fn new(pathset: PathSet, n_agents: usize, values: Vec<f64>) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::Parameter("need at least one agent".into()));
        }
        let horizon = pathset.horizon();
        let n = pathset.n_paths();
        if values.len() != n * horizon * n_agents {
            return Err(Error::Shape(format!(
                "allocation tensor has {} entries, expected {}",
                values.len(),
                n * horizon * n_agents
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite allocation value".into()));
        }
        for p in 0..n {
            for t in 1..=horizon {
                let base = (p * horizon + (t - 1)) * n_agents;
                let total = util::sum(values[base..base + n_agents].iter().copied());
                let s = pathset.aggregate(p, t);
                let scale = 1.0 + s.abs();
                if (total - s).abs() > BUDGET_TOL * scale {
                    return Err(Error::Shape(format!(
                        "allocation sums to {total} but aggregate is {s} (path {p}, period {t})"
                    )));
                }
            }
        }
        Ok(Self { pathset, n_agents, values })
    }

    /// The whole aggregate assigned to a single agent.
    pub fn single_agent(pathset: PathSet) -> Self {
        let values = (0..pathset.n_paths())
            .flat_map(|p| (1..=pathset.horizon()).map(move |t| (p, t)))
            .map(|(p, t)| pathset.aggregate(p, t))
            .collect();
        Self { pathset, n_agents: 1, values }
    }

    /// The initial endowments viewed as an allocation.
    pub fn from_endowments(pathset: PathSet) -> Result<Self> {
        let n_agents = pathset
            .n_agents()
            .ok_or_else(|| Error::Config("path set carries no agent endowments".into()))?;
        let mut values = Vec::with_capacity(pathset.n_paths() * pathset.horizon() * n_agents);
        for p in 0..pathset.n_paths() {
            for t in 1..=pathset.horizon() {
                for i in 0..n_agents {
                    values.push(pathset.endowment(p, t, i).unwrap());
                }
            }
        }
        Self::new(pathset, n_agents, values)
    }

    pub fn pathset(&self) -> &PathSet {
        &self.pathset
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn horizon(&self) -> usize {
        self.pathset.horizon()
    }

    /// Value for path `p`, period `t` (1-based), agent `i`.
    pub fn value(&self, p: usize, t: usize, i: usize) -> f64 {
        debug_assert!((1..=self.horizon()).contains(&t));
        self.values[(p * self.horizon() + (t - 1)) * self.n_agents + i]
    }

    pub fn component(&self, t: usize, i: usize) -> Vec<f64> {
        (0..self.pathset.n_paths()).map(|p| self.value(p, t, i)).collect()
    }

    pub fn component_dist(&self, t: usize, i: usize) -> EmpiricalDist {
        self.pathset
            .dist_of(&self.component(t, i))
            .expect("weights validated at construction")
    }

    /// New process with period `t` replaced by `per_agent` (indexed
    /// [agent][path]).
    pub fn replace_period(&self, t: usize, per_agent: &[Vec<f64>]) -> Result<Self> {
        if per_agent.len() != self.n_agents {
            return Err(Error::Shape("agent count mismatch".into()));
        }
        let mut values = self.values.clone();
        for p in 0..self.pathset.n_paths() {
            for i in 0..self.n_agents {
                values[(p * self.horizon() + (t - 1)) * self.n_agents + i] = per_agent[i][p];
            }
        }
        Self::new(self.pathset.clone(), self.n_agents, values)
    }

    /// Writes `path_id,period,agent,Y` rows (1-based ids).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path_id", "period", "agent", "Y"])
            .map_err(|e| Error::Ingestion(e.to_string()))?;
        for p in 0..self.pathset.n_paths() {
            for t in 1..=self.horizon() {
                for i in 0..self.n_agents {
                    w.write_record([
                        (p + 1).to_string(),
                        t.to_string(),
                        (i + 1).to_string(),
                        format!("{:.17e}", self.value(p, t, i)),
                    ])
                    .map_err(|e| Error::Ingestion(e.to_string()))?;
                }
            }
        }
        w.flush().map_err(|e| Error::Ingestion(e.to_string()))?;
        Ok(())
    }

    /// Reads an allocation CSV against a known path set.
    pub fn read_csv<R: Read>(reader: R, pathset: PathSet) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Ingestion(e.to_string()))?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Ingestion(format!("missing column {name}")))
        };
        let (cp, ct, ca, cy) = (col("path_id")?, col("period")?, col("agent")?, col("Y")?);
        let horizon = pathset.horizon();
        let n = pathset.n_paths();
        let mut cells: Vec<Option<f64>> = Vec::new();
        let mut n_agents = 0usize;
        let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let line = idx + 2;
            let rec = rec.map_err(|e| Error::Ingestion(format!("row {line}: {e}")))?;
            let get = |c: usize| -> Result<f64> {
                rec.get(c)
                    .ok_or_else(|| Error::Ingestion(format!("row {line}: short record")))?
                    .parse::<f64>()
                    .map_err(|_| Error::Ingestion(format!("row {line}: bad number")))
            };
            let p = get(cp)? as usize;
            let t = get(ct)? as usize;
            let a = get(ca)? as usize;
            let y = get(cy)?;
            if p == 0 || p > n || t == 0 || t > horizon || a == 0 {
                return Err(Error::Ingestion(format!("row {line}: index out of range")));
            }
            n_agents = n_agents.max(a);
            rows.push((p - 1, t, a - 1, y));
        }
        cells.resize(n * horizon * n_agents, None);
        for (p, t, a, y) in rows {
            cells[(p * horizon + (t - 1)) * n_agents + a] = Some(y);
        }
        let values: Option<Vec<f64>> = cells.into_iter().collect();
        let values = values.ok_or_else(|| Error::Ingestion("allocation table has holes".into()))?;
        Self::new(pathset, n_agents, values)
    }
}

/// Nondecreasing piecewise-linear retention function on [0, inf) with
/// g(0) = 0 and slopes in [0, 1]. Stored as knots plus per-interval slopes
/// (the last slope extends beyond the final knot), so an all-ones slope
/// profile evaluates to the identity exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionFn {
    /// Strictly increasing, starting at 0.
    knots: Vec<f64>,
    /// slopes[i] applies on [knots[i], knots[i+1]); the last entry extends
    /// to infinity. len == knots.len().
    slopes: Vec<f64>,
    /// Function values at the knots (values[0] == 0).
    values: Vec<f64>,
}

impl RetentionFn {
    pub fn new(knots: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != slopes.len() {
            return Err(Error::Shape("knots/slopes length mismatch".into()));
        }
        if knots[0] != 0.0 {
            return Err(Error::Parameter("retention knots must start at 0".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("retention knots must increase".into()));
        }
        if slopes.iter().any(|s| !(-1e-9..=1.0 + 1e-9).contains(s)) {
            return Err(Error::Parameter("retention slopes must lie in [0,1]".into()));
        }
        let slopes: Vec<f64> = slopes.iter().map(|s| s.clamp(0.0, 1.0)).collect();
        // Merge consecutive intervals with identical slope so degenerate
        // profiles (all-zero, all-one) collapse to a single exact segment.
        let mut ck = vec![knots[0]];
        let mut cs = vec![slopes[0]];
        for i in 1..knots.len() {
            if slopes[i] == *cs.last().unwrap() {
                continue;
            }
            ck.push(knots[i]);
            cs.push(slopes[i]);
        }
        let mut values = vec![0.0; ck.len()];
        for i in 1..ck.len() {
            values[i] = values[i - 1] + cs[i - 1] * (ck[i] - ck[i - 1]);
        }
        Ok(Self { knots: ck, slopes: cs, values })
    }

    pub fn identity() -> Self {
        Self::new(vec![0.0], vec![1.0]).unwrap()
    }

    pub fn zero() -> Self {
        Self::new(vec![0.0], vec![0.0]).unwrap()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn is_identity(&self) -> bool {
        self.knots.len() == 1 && self.slopes[0] == 1.0
    }

    pub fn is_zero(&self) -> bool {
        self.knots.len() == 1 && self.slopes[0] == 0.0
    }

    pub fn eval(&self, x: f64) -> f64 {
        let j = self.knots.partition_point(|k| *k <= x);
        if j == 0 {
            // Below zero only by rounding noise; extend the first segment.
            return self.slopes[0] * x;
        }
        let i = j - 1;
        self.values[i] + self.slopes[i] * (x - self.knots[i])
    }

    /// Abscissae where the slope changes (the retention thresholds).
    pub fn kinks(&self) -> &[f64] {
        &self.knots[1..]
    }
}

/// Retention entry for one period: n retention functions in the simplex
/// (summing pointwise to the identity), premia constants summing to the
/// recorded base offsets.
#[derive(Debug, Clone)]
pub struct RetentionPeriod {
    pub g: Vec<RetentionFn>,
    pub c: Vec<f64>,
    pub s_floor: f64,
    pub r_floor: f64,
}

impl RetentionPeriod {
    pub fn validate(&self) -> Result<()> {
        if self.g.is_empty() || self.g.len() != self.c.len() {
            return Err(Error::Shape("retention entry shape mismatch".into()));
        }
        let mut grid: Vec<f64> = self.g.iter().flat_map(|g| g.knots().iter().copied()).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid.push(grid.last().unwrap() + 1.0);
        for w in grid.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let total: f64 = self.g.iter().map(|g| g.eval(w[1]) - g.eval(w[0])).sum();
            let want = w[1] - w[0];
            if (total - want).abs() > BUDGET_TOL * (1.0 + mid.abs()) {
                return Err(Error::Shape(format!(
                    "retention slopes sum to {} over [{}, {}], want {}",
                    total / want,
                    w[0],
                    w[1],
                    1.0
                )));
            }
        }
        let base = self.s_floor + self.r_floor;
        let csum = util::sum(self.c.iter().copied());
        if (csum - base).abs() > BUDGET_TOL * (1.0 + base.abs()) {
            return Err(Error::Shape(format!(
                "premia sum to {csum}, want s_floor + r_floor = {base}"
            )));
        }
        Ok(())
    }
}

/// Per-period retention functions plus premia: the comonotone solution
/// representation. Entry `t - 1` covers period `t`.
#[derive(Debug, Clone)]
pub struct RetentionSchedule {
    periods: Vec<RetentionPeriod>,
}

impl RetentionSchedule {
    pub fn new(periods: Vec<RetentionPeriod>) -> Result<Self> {
        if periods.is_empty() {
            return Err(Error::Shape("empty schedule".into()));
        }
        let n = periods[0].g.len();
        for p in &periods {
            if p.g.len() != n {
                return Err(Error::Shape("inconsistent agent count across periods".into()));
            }
            p.validate()?;
        }
        Ok(Self { periods })
    }

    pub fn horizon(&self) -> usize {
        self.periods.len()
    }

    pub fn n_agents(&self) -> usize {
        self.periods[0].g.len()
    }

    /// Entry for period `t` (1-based).
    pub fn period(&self, t: usize) -> &RetentionPeriod {
        &self.periods[t - 1]
    }

    pub fn periods(&self) -> &[RetentionPeriod] {
        &self.periods
    }
}

/// Applies one retention entry at period `t` given each agent's risk-to-go
/// at `t` (indexed [agent][path]); returns Y_t indexed the same way.
pub(crate) fn apply_retention_period(
    entry: &RetentionPeriod,
    risk: &[Vec<f64>],
    pathset: &crate::scenario::SamplePathSet,
    t: usize,
) -> Vec<Vec<f64>> {
    let n = pathset.n_paths();
    let n_agents = entry.g.len();
    let mut out = vec![vec![0.0; n]; n_agents];
    for p in 0..n {
        let rbar = util::sum(risk.iter().map(|r| r[p]));
        // Grouped so the floor-attaining path lands on exactly zero.
        let z = (pathset.aggregate(p, t) - entry.s_floor) + (rbar - entry.r_floor);
        for i in 0..n_agents {
            out[i][p] = entry.g[i].eval(z) - risk[i][p] + entry.c[i];
        }
    }
    out
}

/// Backward pass turning a retention schedule into the allocation process
/// Y_t = g_t(S_t + Rbar_t - r_t - s_t) - R_t + c_t. The recorded floors are
/// used for the shift; risk-to-go is recomputed pathwise on `pathset`.
pub fn retention_to_allocation(
    sched: &RetentionSchedule,
    specs: &[RiskSpec],
    pathset: PathSet,
) -> Result<AllocationProcess> {
    let horizon = pathset.horizon();
    let n_agents = sched.n_agents();
    if sched.horizon() != horizon {
        return Err(Error::Shape(format!(
            "schedule covers {} periods, path set has {horizon}",
            sched.horizon()
        )));
    }
    if specs.len() != n_agents {
        return Err(Error::Shape("one risk spec per agent required".into()));
    }
    for s in specs {
        if s.horizon() != horizon {
            return Err(Error::Shape("risk spec horizon mismatch".into()));
        }
    }
    let n = pathset.n_paths();
    let mut risk: Vec<Vec<f64>> = vec![vec![0.0; n]; n_agents];
    let mut values = vec![0.0; n * horizon * n_agents];
    for t in (1..=horizon).rev() {
        let y_t = apply_retention_period(sched.period(t), &risk, &pathset, t);
        for p in 0..n {
            for i in 0..n_agents {
                values[(p * horizon + (t - 1)) * n_agents + i] = y_t[i][p];
            }
        }
        if t > 1 {
            for i in 0..n_agents {
                let arg: Vec<f64> = (0..n).map(|p| y_t[i][p] + risk[i][p]).collect();
                risk[i] = eval_one_step(&specs[i], t - 1, &arg, &pathset)?;
            }
        }
    }
    AllocationProcess::new(pathset, n_agents, values)
}

/// Recovers the retention representation of a comonotone process: per
/// period, piecewise-linear retention functions through the sorted sample
/// of S_t + Rbar_t and premia read off at the floor-attaining path.
pub fn extract_retention(
    alloc: &AllocationProcess,
    specs: &[RiskSpec],
) -> Result<RetentionSchedule> {
    let pathset = alloc.pathset();
    let n = pathset.n_paths();
    let n_agents = alloc.n_agents();
    let risk: Vec<_> = (0..n_agents)
        .map(|i| risk_to_go(&specs[i], alloc, i))
        .collect::<Result<Vec<_>>>()?;
    let mut periods = Vec::with_capacity(pathset.horizon());
    for t in 1..=pathset.horizon() {
        let rbar: Vec<f64> = (0..n)
            .map(|p| util::sum(risk.iter().map(|r| r.value(p, t))))
            .collect();
        let s_floor = (0..n)
            .map(|p| pathset.aggregate(p, t))
            .fold(f64::INFINITY, f64::min);
        let r_floor = rbar.iter().copied().fold(f64::INFINITY, f64::min);
        let z: Vec<f64> = (0..n)
            .map(|p| (pathset.aggregate(p, t) - s_floor) + (rbar[p] - r_floor))
            .collect();
        let order = util::argsort_by_key(n, |p| z[p]);
        // Distinct z knots with the comonotone object V = Y + R per agent.
        let mut knots: Vec<f64> = vec![0.0];
        let mut vals: Vec<Vec<f64>> = vec![Vec::new(); n_agents];
        let mut c = vec![0.0; n_agents];
        let first = order[0];
        for i in 0..n_agents {
            c[i] = alloc.value(first, t, i) + risk[i].value(first, t) - 0.0;
            vals[i].push(alloc.value(first, t, i) + risk[i].value(first, t));
        }
        // Anchor so g(0) = 0: shift by the value at the smallest z.
        let z0 = z[first];
        if z0 > 1e-9 {
            // The floor is not attained jointly; extend the first segment
            // flat down to zero.
            knots[0] = 0.0;
            knots.push(z0);
            for i in 0..n_agents {
                let v = vals[i][0];
                vals[i] = vec![v, v];
            }
        } else {
            knots[0] = 0.0;
        }
        for &p in order.iter().skip(1) {
            if z[p] - *knots.last().unwrap() <= 1e-12 {
                continue;
            }
            knots.push(z[p]);
            for (i, v) in vals.iter_mut().enumerate() {
                v.push(alloc.value(p, t, i) + risk[i].value(p, t));
            }
        }
        let mut g = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let mut slopes = Vec::with_capacity(knots.len());
            for k in 0..knots.len() - 1 {
                let s = (vals[i][k + 1] - vals[i][k]) / (knots[k + 1] - knots[k]);
                slopes.push(s.clamp(0.0, 1.0));
            }
            slopes.push(*slopes.last().unwrap_or(&(1.0 / n_agents as f64)));
            g.push(RetentionFn::new(knots.clone(), slopes)?);
        }
        periods.push(RetentionPeriod { g, c, s_floor, r_floor });
    }
    RetentionSchedule::new(periods)
}

/// Per-period classical comonotonicity of (Y_t + R_t) across paths, with
/// the given slack: along the order of the summed vector, each component
/// may fall below its running maximum by at most `tol`.
pub fn is_comonotone_process_with_tol(
    alloc: &AllocationProcess,
    specs: &[RiskSpec],
    tol: f64,
) -> Result<Vec<bool>> {
    let pathset = alloc.pathset();
    let n = pathset.n_paths();
    let n_agents = alloc.n_agents();
    if specs.len() != n_agents {
        return Err(Error::Shape("one risk spec per agent required".into()));
    }
    let risk: Vec<_> = (0..n_agents)
        .map(|i| risk_to_go(&specs[i], alloc, i))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(pathset.horizon());
    for t in 1..=pathset.horizon() {
        let v: Vec<Vec<f64>> = (0..n_agents)
            .map(|i| {
                (0..n)
                    .map(|p| alloc.value(p, t, i) + risk[i].value(p, t))
                    .collect()
            })
            .collect();
        let order = util::argsort_by_key(n, |p| v.iter().map(|c| c[p]).sum::<f64>());
        let mut ok = true;
        'agents: for comp in &v {
            let mut running = f64::NEG_INFINITY;
            for &p in &order {
                if comp[p] < running - tol {
                    ok = false;
                    break 'agents;
                }
                running = running.max(comp[p]);
            }
        }
        out.push(ok);
    }
    Ok(out)
}

/// Comonotonicity at the default slack.
pub fn is_comonotone_process(alloc: &AllocationProcess, specs: &[RiskSpec]) -> Result<Vec<bool>> {
    is_comonotone_process_with_tol(alloc, specs, CMP_SLACK)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvexOrder {
    /// Y precedes Z in the convex order (equal means, every upper partial
    /// sum of Y bounded by Z's).
    Dominated,
    /// Dominated with a strict gap at some partial sum.
    StrictlyDominated,
    Incomparable,
}

const STRICT_GAP: f64 = 1e-6;

fn equal_weight_values(d: &EmpiricalDist, m: usize) -> Vec<f64> {
    let uniform = d.weights().windows(2).all(|w| w[0] == w[1]);
    if uniform && d.len() == m {
        let mut v = d.values().to_vec();
        v.sort_by(f64::total_cmp);
        return v;
    }
    // Inverse-CDF resample at midpoints of an equal-weight grid.
    (0..m)
        .map(|j| d.quantile((j as f64 + 0.5) / m as f64).expect("level in (0,1)"))
        .collect()
}

/// Tests Y <=_cx Z on empirical laws. Unequal-weight or unequal-size
/// samples are first resampled onto a common equal-weight grid.
pub fn convex_order_leq(y: &EmpiricalDist, z: &EmpiricalDist) -> ConvexOrder {
    let m = y.len().max(z.len());
    let mut yv = equal_weight_values(y, m);
    let mut zv = equal_weight_values(z, m);
    let my = yv.iter().sum::<f64>() / m as f64;
    let mz = zv.iter().sum::<f64>() / m as f64;
    let scale = 1.0 + my.abs().max(mz.abs());
    if (my - mz).abs() > CMP_SLACK * scale {
        return ConvexOrder::Incomparable;
    }
    yv.sort_by(|a, b| b.total_cmp(a));
    zv.sort_by(|a, b| b.total_cmp(a));
    let mut py = 0.0;
    let mut pz = 0.0;
    let mut strict = false;
    for k in 0..m {
        py += yv[k];
        pz += zv[k];
        if py > pz + CMP_SLACK * scale {
            return ConvexOrder::Incomparable;
        }
        if pz - py > STRICT_GAP {
            strict = true;
        }
    }
    if strict {
        ConvexOrder::StrictlyDominated
    } else {
        ConvexOrder::Dominated
    }
}

/// Pool-adjacent-violators: in-place isotonic averaging of `v` along
/// `order`. Equally weighted atoms only. Returns whether anything changed.
fn pav_inplace(v: &mut [f64], order: &[usize]) -> bool {
    #[derive(Clone, Copy)]
    struct Block {
        start: usize, // index into `order`
        len: usize,
        sum: f64,
    }
    let mut blocks: Vec<Block> = Vec::with_capacity(order.len());
    for (k, &p) in order.iter().enumerate() {
        let mut b = Block { start: k, len: 1, sum: v[p] };
        while let Some(last) = blocks.last() {
            if last.sum / last.len as f64 > b.sum / b.len as f64 {
                b = Block {
                    start: last.start,
                    len: last.len + b.len,
                    sum: last.sum + b.sum,
                };
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push(b);
    }
    let mut changed = false;
    for b in blocks {
        if b.len == 1 {
            continue;
        }
        let mean = b.sum / b.len as f64;
        for k in b.start..b.start + b.len {
            if v[order[k]] != mean {
                changed = true;
            }
            v[order[k]] = mean;
        }
    }
    changed
}

/// Static comonotone improvement of a two-component allocation of W:
/// alternate isotonic averaging of each component along the order of W
/// until both are nondecreasing. Every averaging step is a mean-preserving
/// contraction of both components, so the result precedes the input in the
/// convex order component by component.
fn improve_pair(v1: &mut [f64], v2: &mut [f64]) {
    let n = v1.len();
    let w: Vec<f64> = (0..n).map(|p| v1[p] + v2[p]).collect();
    let order = util::argsort_by_key(n, |p| w[p]);
    for _ in 0..200 {
        let c1 = pav_inplace(v1, &order);
        for p in 0..n {
            v2[p] = w[p] - v1[p];
        }
        let c2 = pav_inplace(v2, &order);
        for p in 0..n {
            v1[p] = w[p] - v2[p];
        }
        if !c1 && !c2 {
            break;
        }
    }
}

fn comonotone_defect(v: &[Vec<f64>]) -> f64 {
    let n = v[0].len();
    let order = util::argsort_by_key(n, |p| v.iter().map(|c| c[p]).sum::<f64>());
    let mut defect = 0.0_f64;
    for comp in v {
        let mut running = f64::NEG_INFINITY;
        for &p in &order {
            defect = defect.max(running - comp[p]);
            running = running.max(comp[p]);
        }
    }
    defect.max(0.0)
}

/// Static comonotone improvement for n components (indexed [agent][path]).
fn improve_static(v: &mut [Vec<f64>]) {
    let n_agents = v.len();
    if n_agents < 2 {
        return;
    }
    if n_agents == 2 {
        let (a, b) = v.split_at_mut(1);
        improve_pair(&mut a[0], &mut b[0]);
        return;
    }
    // Pairwise sweeps; each pair improvement contracts both components.
    let max_sweeps = 100 * n_agents;
    for _ in 0..max_sweeps {
        let before = comonotone_defect(v);
        if before <= 1e-10 {
            return;
        }
        for i in 0..n_agents {
            for j in i + 1..n_agents {
                let (left, right) = v.split_at_mut(j);
                improve_pair(&mut left[i], &mut right[0]);
            }
        }
        let after = comonotone_defect(v);
        if after <= 1e-10 || after >= before - 1e-14 {
            break;
        }
    }
    if comonotone_defect(v) > CMP_SLACK {
        // Projection fallback: rearrange each component monotonically along
        // the aggregate and split the budget residual equally, then sweep
        // once more. Heuristic; covered by randomized tests.
        let n = v[0].len();
        let w: Vec<f64> = (0..n).map(|p| v.iter().map(|c| c[p]).sum::<f64>()).collect();
        let order = util::argsort_by_key(n, |p| w[p]);
        for comp in v.iter_mut() {
            let mut sorted = comp.clone();
            sorted.sort_by(f64::total_cmp);
            for (k, &p) in order.iter().enumerate() {
                comp[p] = sorted[k];
            }
        }
        for (k, &p) in order.iter().enumerate() {
            let total: f64 = v.iter().map(|c| c[p]).sum();
            let residual = (w[p] - total) / n_agents as f64;
            for comp in v.iter_mut() {
                comp[p] += residual;
            }
            let _ = k;
        }
        for i in 0..n_agents {
            for j in i + 1..n_agents {
                let (left, right) = v.split_at_mut(j);
                improve_pair(&mut left[i], &mut right[0]);
            }
        }
    }
}

/// Dynamic comonotone improvement: backward over periods, improve the
/// vector (Y_t + R_t(improved tail)) as a static allocation of S_t + Rbar_t
/// and subtract the risk-to-go again. Requires equal path weights.
pub fn comonotone_improve(
    alloc: &AllocationProcess,
    specs: &[RiskSpec],
) -> Result<AllocationProcess> {
    let pathset = alloc.pathset();
    let n = pathset.n_paths();
    let n_agents = alloc.n_agents();
    if specs.len() != n_agents {
        return Err(Error::Shape("one risk spec per agent required".into()));
    }
    let w0 = pathset.weight(0);
    if (0..n).any(|p| (pathset.weight(p) - w0).abs() > 1e-12) {
        return Err(Error::UnsupportedInput(
            "comonotone improvement requires equal path weights".into(),
        ));
    }
    let horizon = pathset.horizon();
    let mut values = vec![0.0; n * horizon * n_agents];
    let mut risk: Vec<Vec<f64>> = vec![vec![0.0; n]; n_agents];
    for t in (1..=horizon).rev() {
        let mut v: Vec<Vec<f64>> = (0..n_agents)
            .map(|i| (0..n).map(|p| alloc.value(p, t, i) + risk[i][p]).collect())
            .collect();
        improve_static(&mut v);
        for p in 0..n {
            for i in 0..n_agents {
                values[(p * horizon + (t - 1)) * n_agents + i] = v[i][p] - risk[i][p];
            }
        }
        if t > 1 {
            for i in 0..n_agents {
                risk[i] = eval_one_step(&specs[i], t - 1, &v[i], pathset)?;
            }
        }
    }
    AllocationProcess::new(pathset.clone(), n_agents, values)
}

/// IR at time `t`: each agent's risk-to-go under the allocation must not
/// exceed the risk-to-go of retaining their own endowment tail.
pub fn check_ir_t(
    specs: &[RiskSpec],
    alloc: &AllocationProcess,
    t: usize,
) -> Result<Vec<bool>> {
    let pathset = alloc.pathset();
    let endow = AllocationProcess::from_endowments(pathset.clone())?;
    if endow.n_agents() != alloc.n_agents() || specs.len() != alloc.n_agents() {
        return Err(Error::Shape("agent count mismatch".into()));
    }
    let mut out = Vec::with_capacity(alloc.n_agents());
    for i in 0..alloc.n_agents() {
        let ry = risk_to_go(&specs[i], alloc, i)?;
        let rx = risk_to_go(&specs[i], &endow, i)?;
        let ok = (0..pathset.n_paths()).all(|p| {
            let scale = 1.0 + rx.value(p, t).abs();
            ry.value(p, t) <= rx.value(p, t) + CMP_SLACK * scale
        });
        out.push(ok);
    }
    Ok(out)
}

/// Dynamic IR: the conjunction of `check_ir_t` over every time point.
pub fn check_dynamic_ir(specs: &[RiskSpec], alloc: &AllocationProcess) -> Result<Vec<bool>> {
    let mut out = vec![true; alloc.n_agents()];
    for t in 0..alloc.horizon() {
        for (i, ok) in check_ir_t(specs, alloc, t)?.iter().enumerate() {
            out[i] = out[i] && *ok;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortion::DistortionFn;
    use crate::scenario::SamplePathSet;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::sync::Arc;

    fn ps(horizon: usize, aggregate: Vec<f64>) -> PathSet {
        Arc::new(SamplePathSet::from_parts(horizon, aggregate, None, None, None).unwrap())
    }

    fn udist(values: Vec<f64>) -> EmpiricalDist {
        EmpiricalDist::uniform(values).unwrap()
    }

    #[test]
    fn budget_identity_enforced() {
        let pathset = ps(1, vec![10.0, 20.0]);
        assert!(AllocationProcess::new(pathset.clone(), 2, vec![4.0, 6.0, 15.0, 5.0]).is_ok());
        assert!(AllocationProcess::new(pathset, 2, vec![4.0, 7.0, 15.0, 5.0]).is_err());
    }

    #[test]
    fn retention_eval_and_canonical_form() {
        let g = RetentionFn::new(vec![0.0, 5.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(g.eval(3.0), 0.0);
        assert_eq!(g.eval(8.0), 3.0);
        let id = RetentionFn::new(vec![0.0, 2.0, 7.0], vec![1.0, 1.0, 1.0]).unwrap();
        assert!(id.is_identity());
        assert_eq!(id.eval(123.456), 123.456);
        assert!(RetentionFn::new(vec![0.0], vec![1.5]).is_err());
        assert!(RetentionFn::new(vec![1.0], vec![0.5]).is_err());
    }

    #[test]
    fn single_agent_identity_schedule_reproduces_the_aggregate() {
        let pathset = ps(2, vec![3.0, 10.0, 5.0, 2.0, 4.0, 8.0]);
        let specs = vec![RiskSpec::expectation(2)];
        // r_floor at t=1 is E over the single agent's period-2 risk; with a
        // single agent the budget forces Y = S whatever the floors are, as
        // long as c = s_floor + r_floor.
        let s2 = pathset.aggregate_dist(2);
        let r1 = crate::distortion::choquet(&DistortionFn::identity(), &s2);
        let sched = RetentionSchedule::new(vec![
            RetentionPeriod {
                g: vec![RetentionFn::identity()],
                c: vec![pathset.aggregate_dist(1).essinf().unwrap() + r1],
                s_floor: pathset.aggregate_dist(1).essinf().unwrap(),
                r_floor: r1,
            },
            RetentionPeriod {
                g: vec![RetentionFn::identity()],
                c: vec![s2.essinf().unwrap()],
                s_floor: s2.essinf().unwrap(),
                r_floor: 0.0,
            },
        ])
        .unwrap();
        let alloc = retention_to_allocation(&sched, &specs, pathset.clone()).unwrap();
        for p in 0..3 {
            for t in 1..=2 {
                assert!((alloc.value(p, t, 0) - pathset.aggregate(p, t)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn layered_retention_splits_as_expected() {
        // Two agents at a single period: excess layer above 5 vs capped.
        let pathset = ps(1, vec![3.0, 10.0]);
        let specs = vec![RiskSpec::expectation(1), RiskSpec::expectation(1)];
        let sched = RetentionSchedule::new(vec![RetentionPeriod {
            g: vec![
                RetentionFn::new(vec![0.0, 5.0], vec![0.0, 1.0]).unwrap(),
                RetentionFn::new(vec![0.0, 5.0], vec![1.0, 0.0]).unwrap(),
            ],
            c: vec![1.0, 2.0],
            s_floor: 3.0,
            r_floor: 0.0,
        }])
        .unwrap();
        let alloc = retention_to_allocation(&sched, &specs, pathset).unwrap();
        // z = {0, 7}; agent 1 takes max(z-5, 0) + 1; agent 2 min(z, 5) + 2.
        assert!((alloc.value(0, 1, 0) - 1.0).abs() < 1e-12);
        assert!((alloc.value(0, 1, 1) - 2.0).abs() < 1e-12);
        assert!((alloc.value(1, 1, 0) - 3.0).abs() < 1e-12);
        assert!((alloc.value(1, 1, 1) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_validation_rejects_bad_simplexes() {
        let bad = RetentionSchedule::new(vec![RetentionPeriod {
            g: vec![RetentionFn::identity(), RetentionFn::identity()],
            c: vec![0.0, 0.0],
            s_floor: 0.0,
            r_floor: 0.0,
        }]);
        assert!(bad.is_err());
        let bad_premia = RetentionSchedule::new(vec![RetentionPeriod {
            g: vec![RetentionFn::identity(), RetentionFn::zero()],
            c: vec![1.0, 0.0],
            s_floor: 0.0,
            r_floor: 0.0,
        }]);
        assert!(bad_premia.is_err());
    }

    #[test]
    fn comonotonicity_detects_anti_ordered_pairs() {
        let pathset = ps(1, vec![1.0, 1.0]);
        let specs = vec![RiskSpec::expectation(1), RiskSpec::expectation(1)];
        let swapped =
            AllocationProcess::new(pathset.clone(), 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(is_comonotone_process(&swapped, &specs).unwrap(), vec![false]);
        let flat = AllocationProcess::new(pathset.clone(), 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(is_comonotone_process(&flat, &specs).unwrap(), vec![true]);
        let single = AllocationProcess::single_agent(pathset);
        assert_eq!(
            is_comonotone_process(&single, &specs[..1]).unwrap(),
            vec![true]
        );
    }

    #[test]
    fn retention_output_is_comonotone() {
        let pathset = ps(1, vec![3.0, 10.0, 6.0, 1.0]);
        let specs = vec![RiskSpec::expectation(1), RiskSpec::expectation(1)];
        let sched = RetentionSchedule::new(vec![RetentionPeriod {
            g: vec![
                RetentionFn::new(vec![0.0, 4.0], vec![0.2, 1.0]).unwrap(),
                RetentionFn::new(vec![0.0, 4.0], vec![0.8, 0.0]).unwrap(),
            ],
            c: vec![0.5, 0.5],
            s_floor: 1.0,
            r_floor: 0.0,
        }])
        .unwrap();
        let alloc = retention_to_allocation(&sched, &specs, pathset).unwrap();
        assert_eq!(is_comonotone_process(&alloc, &specs).unwrap(), vec![true]);
    }

    #[test]
    fn extraction_round_trips_comonotone_allocations() {
        let pathset = ps(2, vec![3.0, 10.0, 5.0, 2.0, 4.0, 8.0, 1.0, 6.0]);
        let specs = vec![
            RiskSpec::uniform_distortion(2, DistortionFn::es(0.5).unwrap()),
            RiskSpec::expectation(2),
        ];
        let sched = RetentionSchedule::new(vec![
            RetentionPeriod {
                g: vec![
                    RetentionFn::new(vec![0.0, 3.0], vec![0.0, 1.0]).unwrap(),
                    RetentionFn::new(vec![0.0, 3.0], vec![1.0, 0.0]).unwrap(),
                ],
                c: vec![4.0, 3.0],
                s_floor: 1.0,
                r_floor: 6.0,
            },
            RetentionPeriod {
                g: vec![
                    RetentionFn::new(vec![0.0, 2.0], vec![0.5, 1.0]).unwrap(),
                    RetentionFn::new(vec![0.0, 2.0], vec![0.5, 0.0]).unwrap(),
                ],
                c: vec![1.0, 1.0],
                s_floor: 2.0,
                r_floor: 0.0,
            },
        ]);
        let sched = sched.unwrap();
        let alloc = retention_to_allocation(&sched, &specs, pathset.clone()).unwrap();
        let extracted = extract_retention(&alloc, &specs).unwrap();
        let rebuilt = retention_to_allocation(&extracted, &specs, pathset.clone()).unwrap();
        for p in 0..pathset.n_paths() {
            for t in 1..=2 {
                for i in 0..2 {
                    assert!(
                        (rebuilt.value(p, t, i) - alloc.value(p, t, i)).abs() < 1e-9,
                        "p={p} t={t} i={i}"
                    );
                }
            }
        }
    }

    #[test]
    fn convex_order_examples() {
        assert_eq!(
            convex_order_leq(&udist(vec![2.0, 2.0]), &udist(vec![1.0, 3.0])),
            ConvexOrder::StrictlyDominated
        );
        assert_eq!(
            convex_order_leq(&udist(vec![1.0, 2.0]), &udist(vec![1.0, 3.0])),
            ConvexOrder::Incomparable
        );
        assert_eq!(
            convex_order_leq(&udist(vec![1.0, 3.0]), &udist(vec![3.0, 1.0])),
            ConvexOrder::Dominated
        );
        // Brute-force check with convex test functions x^2 and |x - 2|.
        let phi2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        let phi_abs = |v: &[f64]| v.iter().map(|x| (x - 2.0).abs()).sum::<f64>() / v.len() as f64;
        assert!(phi2(&[2.0, 2.0]) < phi2(&[1.0, 3.0]));
        assert!(phi_abs(&[2.0, 2.0]) <= phi_abs(&[1.0, 3.0]));
    }

    #[test]
    fn convex_order_resamples_unequal_weights() {
        let y = EmpiricalDist::new(vec![2.0], vec![1.0]).unwrap();
        let z = udist(vec![1.0, 3.0]);
        assert_eq!(convex_order_leq(&y, &z), ConvexOrder::StrictlyDominated);
    }

    #[test]
    fn pairwise_improvement_hand_example() {
        // Two equally likely states, S = (1, 1), anti-comonotone split.
        let pathset = ps(1, vec![1.0, 1.0]);
        let specs = vec![RiskSpec::expectation(1), RiskSpec::expectation(1)];
        let alloc = AllocationProcess::new(pathset, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let improved = comonotone_improve(&alloc, &specs).unwrap();
        for p in 0..2 {
            for i in 0..2 {
                assert!((improved.value(p, 1, i) - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn improvement_is_a_fixed_point_on_comonotone_input() {
        let pathset = ps(1, vec![2.0, 5.0, 9.0]);
        let specs = vec![RiskSpec::expectation(1), RiskSpec::expectation(1)];
        let alloc = AllocationProcess::new(
            pathset,
            2,
            vec![1.0, 1.0, 2.5, 2.5, 4.5, 4.5],
        )
        .unwrap();
        let improved = comonotone_improve(&alloc, &specs).unwrap();
        for p in 0..3 {
            for i in 0..2 {
                assert!((improved.value(p, 1, i) - alloc.value(p, 1, i)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn improvement_rejects_unequal_weights() {
        let pathset = Arc::new(
            SamplePathSet::from_parts(1, vec![1.0, 2.0], Some(vec![0.3, 0.7]), None, None)
                .unwrap(),
        );
        let specs = vec![RiskSpec::expectation(1)];
        let alloc = AllocationProcess::single_agent(pathset);
        assert!(matches!(
            comonotone_improve(&alloc, &specs),
            Err(Error::UnsupportedInput(_))
        ));
    }

    #[test]
    fn improvement_comonotone_and_convex_dominated_on_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for trial in 0..20 {
            let n = 6;
            let horizon = 2;
            let mut agg = Vec::new();
            for _ in 0..n * horizon {
                agg.push(rng.random_range(0.0..10.0));
            }
            let pathset = ps(horizon, agg);
            let specs = vec![
                RiskSpec::uniform_distortion(horizon, DistortionFn::es(0.5).unwrap()),
                RiskSpec::expectation(horizon),
            ];
            let mut values = Vec::new();
            for p in 0..n {
                for t in 1..=horizon {
                    let share = rng.random_range(-2.0..3.0);
                    values.push(share);
                    values.push(pathset.aggregate(p, t) - share);
                }
            }
            let alloc = AllocationProcess::new(pathset.clone(), 2, values).unwrap();
            let improved = comonotone_improve(&alloc, &specs).unwrap();
            let flags = is_comonotone_process(&improved, &specs).unwrap();
            assert!(flags.iter().all(|f| *f), "trial {trial}: {flags:?}");
            // Componentwise convex-order improvement of Y + R at every t.
            let risk_orig: Vec<_> = (0..2)
                .map(|i| risk_to_go(&specs[i], &alloc, i).unwrap())
                .collect();
            let risk_new: Vec<_> = (0..2)
                .map(|i| risk_to_go(&specs[i], &improved, i).unwrap())
                .collect();
            for t in 1..=horizon {
                for i in 0..2 {
                    let orig: Vec<f64> = (0..n)
                        .map(|p| alloc.value(p, t, i) + risk_new[i].value(p, t))
                        .collect();
                    let new: Vec<f64> = (0..n)
                        .map(|p| improved.value(p, t, i) + risk_new[i].value(p, t))
                        .collect();
                    let v = convex_order_leq(&udist(new), &udist(orig));
                    assert_ne!(v, ConvexOrder::Incomparable, "trial {trial} t={t} i={i}");
                }
            }
            let _ = risk_orig;
        }
    }

    #[test]
    fn ir_holds_for_endowments_and_fails_for_dumping() {
        let pathset = Arc::new(
            SamplePathSet::from_parts(
                1,
                vec![4.0, 10.0],
                None,
                Some((2, vec![2.0, 2.0, 5.0, 5.0])),
                None,
            )
            .unwrap(),
        );
        let specs = vec![
            RiskSpec::uniform_distortion(1, DistortionFn::es(0.5).unwrap()),
            RiskSpec::expectation(1),
        ];
        let endow = AllocationProcess::from_endowments(pathset.clone()).unwrap();
        assert_eq!(check_ir_t(&specs, &endow, 0).unwrap(), vec![true, true]);
        // Dump the whole aggregate on agent 1 with no compensation.
        let dumped =
            AllocationProcess::new(pathset.clone(), 2, vec![4.0, 0.0, 10.0, 0.0]).unwrap();
        let flags = check_ir_t(&specs, &dumped, 0).unwrap();
        assert!(!flags[0]);
        // A single agent is always IR: budget forces Y = X.
        let solo = Arc::new(
            SamplePathSet::from_parts(1, vec![4.0, 10.0], None, Some((1, vec![4.0, 10.0])), None)
                .unwrap(),
        );
        let alloc = AllocationProcess::single_agent(solo);
        assert_eq!(
            check_ir_t(&[RiskSpec::expectation(1)], &alloc, 0).unwrap(),
            vec![true]
        );
    }

    #[test]
    fn allocation_csv_roundtrip() {
        let pathset = ps(2, vec![3.0, 10.0, 5.0, 2.0]);
        let alloc = AllocationProcess::new(
            pathset.clone(),
            2,
            vec![1.0, 2.0, 4.0, 6.0, 2.0, 3.0, 1.5, 0.5],
        )
        .unwrap();
        let mut buf = Vec::new();
        alloc.write_csv(&mut buf).unwrap();
        let back = AllocationProcess::read_csv(&buf[..], pathset).unwrap();
        for p in 0..2 {
            for t in 1..=2 {
                for i in 0..2 {
                    assert_eq!(back.value(p, t, i), alloc.value(p, t, i));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn pav_output_is_isotonic_and_mean_preserving(
            values in proptest::collection::vec(-10.0..10.0f64, 1..25)
        ) {
            let mut v = values.clone();
            let order: Vec<usize> = (0..v.len()).collect();
            pav_inplace(&mut v, &order);
            for w in v.windows(2) {
                prop_assert!(w[0] <= w[1] + 1e-12);
            }
            let before: f64 = values.iter().sum();
            let after: f64 = v.iter().sum();
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn improve_pair_yields_comonotone_contractions(
            pairs in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 2..20)
        ) {
            let mut v1: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let mut v2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let orig1 = v1.clone();
            let orig2 = v2.clone();
            improve_pair(&mut v1, &mut v2);
            let v = vec![v1.clone(), v2.clone()];
            prop_assert!(comonotone_defect(&v) <= 1e-9);
            for p in 0..orig1.len() {
                prop_assert!(((v1[p] + v2[p]) - (orig1[p] + orig2[p])).abs() < 1e-9);
            }
            let d1 = convex_order_leq(&udist(v1), &udist(orig1));
            let d2 = convex_order_leq(&udist(v2), &udist(orig2));
            prop_assert_ne!(d1, ConvexOrder::Incomparable);
            prop_assert_ne!(d2, ConvexOrder::Incomparable);
        }
    }
}
