//! Runs the production pipeline and the oracle side by side on one dataset.

use std::collections::BTreeMap;

use dao_align_core::dynamics::{dataset_features, DynamicsFeatures};
use dao_align_core::eval::EvalError;
use dao_align_core::market::{dataset_windows, MarketWindow};
use dao_align_core::model::AbstainLabels;
use dao_align_core::policy::{
    build_decision_context, Baseline, BaselinePolicy, ContextOptions, CutoffMode, Policy,
    PolicyDecision, PolicyError,
};
use dao_align_core::report::{build_report, DecisionSet, ReportBundle, ReportOptions};
use dao_align_core::Dataset;

use crate::compare::{compare_dynamics, compare_market, compare_report, Diff};
use crate::oracle::{oracle_metrics, OracleDecisions, OracleOptions};

pub fn decide_all(
    dataset: &Dataset,
    policy: &dyn Policy,
    mode: CutoffMode,
) -> Result<Vec<PolicyDecision>, PolicyError> {
    let opts = ContextOptions::default();
    dataset
        .proposals()
        .iter()
        .map(|p| {
            policy.decide(&build_decision_context(
                dataset,
                &p.proposal_id,
                mode,
                &opts,
            )?)
        })
        .collect()
}

/// Token, headcount and seeded-random baselines at both cutoffs.
pub fn baseline_sets(dataset: &Dataset, seed: u64) -> Result<Vec<DecisionSet>, PolicyError> {
    let mut sets = Vec::new();
    for baseline in [
        Baseline::TokenMajority,
        Baseline::HeadcountMajority,
        Baseline::SeededRandom,
    ] {
        let policy = BaselinePolicy::new(baseline).with_seed(seed);
        for cutoff in [CutoffMode::ExAnte, CutoffMode::ExPost] {
            sets.push(DecisionSet {
                policy_id: policy.id(),
                cutoff,
                decisions: decide_all(dataset, &policy, cutoff)?,
            });
        }
    }
    Ok(sets)
}

#[derive(Debug, Clone)]
pub struct ProductionRun {
    pub bundle: ReportBundle,
    pub features: Vec<DynamicsFeatures>,
    pub windows: BTreeMap<String, MarketWindow>,
}

pub fn production_run(
    dataset: &Dataset,
    sets: &[DecisionSet],
    options: &ReportOptions,
) -> Result<ProductionRun, EvalError> {
    let windows = dataset_windows(dataset, options.window_days);
    let bundle = build_report(dataset, sets, &windows, options, &AbstainLabels::default())?;
    let features = dataset_features(dataset)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| EvalError::Mismatch {
            proposal: e.to_string(),
            decision: String::new(),
        })?;
    Ok(ProductionRun {
        bundle,
        features,
        windows,
    })
}

pub fn oracle_options(options: &ReportOptions) -> OracleOptions {
    OracleOptions {
        contested_threshold: options.contested_threshold,
        min_participation: options.min_participation,
        window_days: options.window_days,
        exclude_ties: options.exclude_ties,
    }
}

pub fn oracle_sets(sets: &[DecisionSet]) -> Vec<OracleDecisions> {
    sets.iter()
        .map(|s| OracleDecisions {
            policy_id: s.policy_id.clone(),
            cutoff: s.cutoff,
            decisions: s.decisions.clone(),
        })
        .collect()
}

/// Every production quantity against the oracle.
pub fn diff_against_oracle(
    dataset: &Dataset,
    sets: &[DecisionSet],
    run: &ProductionRun,
    options: &ReportOptions,
) -> Diff {
    let oracle = oracle_metrics(dataset, &oracle_sets(sets), &oracle_options(options));
    let mut diff = Diff::default();
    compare_report(&mut diff, &run.bundle, &oracle);
    for f in &run.features {
        match oracle.dynamics.get(&f.proposal_id) {
            Some(want) => compare_dynamics(&mut diff, f, want),
            None => diff
                .mismatches
                .push(format!("{}: no oracle dynamics", f.proposal_id)),
        }
    }
    for (id, w) in &run.windows {
        match oracle.market.get(id) {
            Some(want) => compare_market(&mut diff, w, want),
            None => diff
                .mismatches
                .push(format!("{id}: no oracle market window")),
        }
    }
    if run.features.len() != oracle.dynamics.len() {
        diff.mismatches.push("dynamics coverage differs".into());
    }
    diff
}
