//! One function per subcommand. Every artifact is written atomically and only
//! when its bytes change.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dao_align_core::dynamics::{dataset_features, write_csv};
use dao_align_core::eval::{compute_outcomes, EvalError};
use dao_align_core::ingest::{run_ingest, IngestError};
use dao_align_core::market::dataset_windows;
use dao_align_core::policy::llm::{AuditLog, HttpChatTransport, LlmPolicy};
use dao_align_core::policy::{
    build_decision_context, Baseline, BaselinePolicy, CutoffMode, Policy, PolicyDecision,
    PolicyError,
};
use dao_align_core::report::{
    build_report, proposals_csv, render_markdown, table_csvs, voters_csv, AlignmentReport,
    DecisionSet,
};
use dao_align_core::store::{read_jsonl, to_jsonl, write_atomic, DatasetStore, SourceEntry};
use dao_align_core::Dataset;
use dao_align_synth::{generate_dataset, ScenarioSpec};
use rayon::prelude::*;

use crate::{Failure, RunConfig};

pub fn features_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("features")
}

pub fn decisions_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("decisions")
}

pub fn reports_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("reports")
}

pub fn audit_path(cfg: &RunConfig, policy_id: &str) -> PathBuf {
    cfg.output_dir
        .join("audit")
        .join(format!("{policy_id}.jsonl"))
}

pub fn decisions_file(cfg: &RunConfig, policy_id: &str, mode: CutoffMode) -> PathBuf {
    decisions_dir(cfg).join(format!("{policy_id}_{}.jsonl", mode.as_str()))
}

/// Returns whether the file changed.
fn write_artifact(path: &Path, bytes: &[u8]) -> Result<bool> {
    if std::fs::read(path).ok().as_deref() == Some(bytes) {
        return Ok(false);
    }
    write_atomic(path, bytes)?;
    Ok(true)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let store = DatasetStore::new(&cfg.dataset_root);
    if !store.exists() {
        return Err(Failure::Config(format!(
            "no dataset store at {}; run ingest or generate first",
            cfg.dataset_root.display()
        ))
        .into());
    }
    store
        .load()
        .with_context(|| format!("loading {}", cfg.dataset_root.display()))
}

fn ingest_failure(e: IngestError) -> anyhow::Error {
    match e {
        IngestError::InvalidArgument(m) | IngestError::Input(m) => Failure::Config(m).into(),
        other => Failure::Upstream(other.to_string()).into(),
    }
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let config = cfg.ingest_config();
    if config.spaces.is_empty() {
        return Err(Failure::Config("no spaces listed under [ingest]".into()).into());
    }
    let out = run_ingest(&config).map_err(ingest_failure)?;
    let s = out.stats;
    let manifest = DatasetStore::new(&cfg.dataset_root).write(&out.dataset, &out.sources)?;
    tracing::info!(
        proposals = out.dataset.proposals().len(),
        votes = out.dataset.n_votes(),
        files = manifest.files.len(),
        records_skipped = s.records_skipped,
        duplicates_dropped = s.duplicates_dropped,
        out_of_window = s.out_of_window,
        market_missing = s.market_missing,
        labels_unmatched = s.labels_unmatched,
        "ingest finished"
    );
    Ok(())
}

pub fn features(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let mut ok = Vec::new();
    let mut skipped = 0;
    for (p, r) in ds.proposals().iter().zip(dataset_features(&ds)) {
        match r {
            Ok(f) => ok.push(f),
            Err(e) => {
                skipped += 1;
                tracing::warn!(proposal = p.proposal_id.as_str(), error = %e, "dynamics skipped");
            }
        }
    }
    let mut csv = Vec::new();
    write_csv(&mut csv, &ok)?;
    let dir = features_dir(cfg);
    write_artifact(&dir.join("dynamics.csv"), &csv)?;

    let windows: Vec<_> = dataset_windows(&ds, cfg.thresholds.window_days)
        .into_values()
        .collect();
    let missing = |f: fn(&dao_align_core::market::MarketWindow) -> bool| {
        windows.iter().filter(|w| f(w)).count()
    };
    write_artifact(&dir.join("market.jsonl"), &to_jsonl(&windows))?;
    tracing::info!(
        proposals = ds.proposals().len(),
        dynamics = ok.len(),
        dynamics_skipped = skipped,
        market_windows = windows.len(),
        price_missing = missing(|w| w.price_pct_change.is_none()),
        adj_return_missing = missing(|w| w.adj_return.is_none()),
        tvl_missing = missing(|w| w.tvl_abnormal.is_none()),
        treasury_missing = missing(|w| w.treasury_abnormal.is_none()),
        "features written"
    );
    Ok(())
}

fn build_policy(cfg: &RunConfig, id: &str) -> Result<Box<dyn Policy>> {
    if id == cfg.llm.id {
        let audit_file = audit_path(cfg, id);
        if audit_file.exists() {
            std::fs::remove_file(&audit_file)?;
        }
        let audit = AuditLog::open(&audit_file)
            .with_context(|| format!("opening {}", audit_file.display()))?;
        let transport = HttpChatTransport::new(&cfg.llm_config());
        return Ok(Box::new(
            LlmPolicy::new(id, Box::new(transport)).with_audit(audit),
        ));
    }
    let baseline: Baseline = id.parse().map_err(Failure::Config)?;
    Ok(Box::new(
        BaselinePolicy::new(baseline)
            .with_seed(cfg.seed)
            .with_abstain(cfg.abstain()),
    ))
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let options = cfg.context_options();
    for id in &cfg.policy.policies {
        let policy = build_policy(cfg, id)?;
        let external = *id == cfg.llm.id;
        for &mode in &cfg.policy.cutoffs {
            let results: Vec<Option<PolicyDecision>> = ds
                .proposals()
                .par_iter()
                .map(|p| {
                    let ctx = build_decision_context(&ds, &p.proposal_id, mode, &options)?;
                    match policy.decide(&ctx) {
                        Ok(d) => Ok(Some(d)),
                        Err(e @ PolicyError::PolicyInapplicable { .. }) => {
                            tracing::warn!(error = %e, "proposal skipped");
                            Ok(None)
                        }
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_, PolicyError>>()
                .map_err(|e| match e {
                    PolicyError::SourceUnavailable(_) => Failure::Upstream(e.to_string()).into(),
                    PolicyError::PolicyFailure { .. } if external => {
                        Failure::Upstream(e.to_string()).into()
                    }
                    other => anyhow::Error::from(other),
                })?;
            let inapplicable = results.iter().filter(|r| r.is_none()).count();
            let decisions: Vec<PolicyDecision> = results.into_iter().flatten().collect();
            write_artifact(&decisions_file(cfg, id, mode), &to_jsonl(&decisions))?;
            tracing::info!(
                policy = id.as_str(),
                cutoff = mode.as_str(),
                decisions = decisions.len(),
                inapplicable,
                fallback = decisions.iter().filter(|d| d.fallback).count(),
                "decisions written"
            );
        }
    }
    Ok(())
}

/// Every decision file, grouped by policy and cutoff.
pub fn read_decision_sets(dir: &Path) -> Result<Vec<DecisionSet>> {
    let mut files: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e).with_context(|| format!("reading {}", dir.display())),
    };
    files.sort();
    let mut grouped: BTreeMap<(String, CutoffMode), Vec<PolicyDecision>> = BTreeMap::new();
    for f in files {
        for d in read_jsonl::<PolicyDecision>(&f)? {
            grouped
                .entry((d.policy_id.clone(), d.cutoff.mode))
                .or_default()
                .push(d);
        }
    }
    Ok(grouped
        .into_iter()
        .map(|((policy_id, cutoff), decisions)| DecisionSet {
            policy_id,
            cutoff,
            decisions,
        })
        .collect())
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let options = cfg.report_options();
    let dir = decisions_dir(cfg);
    let sets = read_decision_sets(&dir)?;

    let (mut outcomes, _) = compute_outcomes(&ds);
    if options.exclude_ties {
        outcomes.retain(|_, o| !o.tie);
    }
    if sets.is_empty() {
        return Err(Failure::Coverage {
            what: format!("no decisions under {}", dir.display()),
            missing: outcomes.into_keys().collect(),
        }
        .into());
    }
    let mut gaps = Vec::new();
    let mut missing = BTreeSet::new();
    for set in &sets {
        let have: BTreeSet<&str> = set
            .decisions
            .iter()
            .map(|d| d.proposal_id.as_str())
            .collect();
        let lacking: Vec<&String> = outcomes
            .keys()
            .filter(|id| !have.contains(id.as_str()))
            .collect();
        if !lacking.is_empty() {
            gaps.push(format!("{} {}", set.policy_id, set.cutoff.as_str()));
            missing.extend(lacking.into_iter().cloned());
        }
    }
    if !gaps.is_empty() {
        return Err(Failure::Coverage {
            what: format!("decision sets {}", gaps.join(", ")),
            missing: missing.into_iter().collect(),
        }
        .into());
    }

    let windows = dataset_windows(&ds, options.window_days);
    let bundle =
        build_report(&ds, &sets, &windows, &options, &cfg.abstain()).map_err(|e| match e {
            EvalError::Coverage { missing } => Failure::Coverage {
                what: "decisions".into(),
                missing,
            }
            .into(),
            EvalError::EmptyEvaluation => Failure::Coverage {
                what: "no proposal has positive voting power".into(),
                missing: Vec::new(),
            }
            .into(),
            other => anyhow::Error::from(other),
        })?;

    let out = reports_dir(cfg);
    write_artifact(&out.join("report.json"), &bundle.report.to_json())?;
    for d in &bundle.details {
        let name = format!("proposals_{}_{}.csv", d.policy_id, d.cutoff.as_str());
        write_artifact(&out.join(name), &proposals_csv(&d.per_proposal)?)?;
    }
    write_artifact(&out.join("voters.csv"), &voters_csv(&bundle.voters)?)?;
    let r = &bundle.report;
    tracing::info!(
        proposals = r.n_proposals,
        evaluated = r.n_evaluated,
        degenerate = r.degenerate.len(),
        ties = r.n_ties,
        policies = r.policies.len(),
        fallback = r.policies.iter().map(|p| p.n_fallback).sum::<usize>(),
        eligible_voters = r.human_benchmark.n_eligible,
        "report written"
    );
    Ok(())
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let dir = reports_dir(cfg);
    let path = dir.join("report.json");
    let bytes = std::fs::read(&path)
        .with_context(|| format!("reading {}; run evaluate first", path.display()))?;
    let report: AlignmentReport =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    write_artifact(&dir.join("report.md"), render_markdown(&report).as_bytes())?;
    let tables = table_csvs(&report)?;
    for (name, bytes) in &tables {
        write_artifact(&dir.join(name), bytes)?;
    }
    tracing::info!(tables = tables.len(), "report rendered");
    Ok(())
}

pub fn generate(cfg: &RunConfig, scenario: &Path, truth: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(scenario)
        .map_err(|e| Failure::Config(format!("{}: {e}", scenario.display())))?;
    let spec = ScenarioSpec::from_toml(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", scenario.display())))?;
    let syn = generate_dataset(&spec).map_err(|e| Failure::Config(e.to_string()))?;
    let source = SourceEntry {
        name: "synthetic".into(),
        endpoint: format!("seed {}", spec.seed),
        fetched_at: String::new(),
    };
    DatasetStore::new(&cfg.dataset_root).write(&syn.dataset, &[source])?;
    let truth_path = truth
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("ground_truth.json"));
    let mut bytes = serde_json::to_vec_pretty(&syn.truth)?;
    bytes.push(b'\n');
    write_artifact(&truth_path, &bytes)?;
    tracing::info!(
        proposals = syn.dataset.proposals().len(),
        votes = syn.dataset.n_votes(),
        seed = spec.seed,
        "synthetic dataset written"
    );
    Ok(())
}
