//! Built-in configurations used by the CLI and the test suites.

use std::sync::Arc;

use crate::distortion::{DistortionFn, ObsSelector, Regime, RegimeDistortion, RegimeRule};
use crate::dynrisk::{EvalMode, PeriodSpec, RiskSpec};
use crate::scenario::{generate_exponential_chain, PathSet};

/// The two-agent, two-period preference pair on the exponential chain:
/// agent 1 uses the upper-decile tail average at time 0 and switches
/// between the expectation (below the 0.2 quantile of S_1) and the
/// upper-decile average at time 1; agent 2 uses the expectation at time 0
/// and switches between the expectation (below the 0.6 quantile) and the
/// upper-percentile average at time 1.
pub fn exponential_two_agent_specs() -> Vec<RiskSpec> {
    let agent1 = RiskSpec::new(vec![
        PeriodSpec {
            mode: EvalMode::Marginal,
            regimes: RegimeDistortion::single(DistortionFn::es(0.9).unwrap()),
        },
        PeriodSpec {
            mode: EvalMode::Marginal,
            regimes: RegimeDistortion::new(
                ObsSelector::Contemporaneous,
                vec![
                    Regime {
                        rule: RegimeRule::LeqQuantile(0.2),
                        distortion: DistortionFn::identity(),
                    },
                    Regime { rule: RegimeRule::Else, distortion: DistortionFn::es(0.9).unwrap() },
                ],
            )
            .unwrap(),
        },
    ])
    .unwrap();
    let agent2 = RiskSpec::new(vec![
        PeriodSpec {
            mode: EvalMode::Marginal,
            regimes: RegimeDistortion::single(DistortionFn::identity()),
        },
        PeriodSpec {
            mode: EvalMode::Marginal,
            regimes: RegimeDistortion::new(
                ObsSelector::Contemporaneous,
                vec![
                    Regime {
                        rule: RegimeRule::LeqQuantile(0.6),
                        distortion: DistortionFn::identity(),
                    },
                    Regime { rule: RegimeRule::Else, distortion: DistortionFn::es(0.99).unwrap() },
                ],
            )
            .unwrap(),
        },
    ])
    .unwrap();
    vec![agent1, agent2]
}

/// Scenario plus specs for the built-in replication run.
pub fn exponential_two_agent(n_paths: usize, seed: u64) -> crate::error::Result<(PathSet, Vec<RiskSpec>)> {
    let ps = generate_exponential_chain(n_paths, 200.0, seed)?;
    Ok((Arc::new(ps), exponential_two_agent_specs()))
}
