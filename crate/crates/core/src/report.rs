//! Alignment report assembly and rendering.
//!
//! The JSON document is versioned by [`REPORT_SCHEMA_VERSION`]; its field
//! order is fixed by the struct definitions so identical inputs serialize to
//! identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::eval::{
    aggregate_alignment, align_decisions, bucket_agreement, compute_outcomes, contested_subset,
    expost_validity, temporal_comparison, AggregateAlignment, BucketRow, ContestedReport,
    EvalError, ProbabilityCell, ProposalAlignment, SubsetStats, TemporalComparison, ValidityRow,
    VoterBenchmark, CONTESTED_THRESHOLD, MIN_PARTICIPATION,
};
use crate::market::{MarketWindow, DEFAULT_WINDOW_DAYS};
use crate::model::AbstainLabels;
use crate::policy::{CutoffMode, PolicyDecision};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    pub contested_threshold: f64,
    pub min_participation: usize,
    pub window_days: u32,
    /// Drop proposals whose tally ended in a tie.
    pub exclude_ties: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            contested_threshold: CONTESTED_THRESHOLD,
            min_participation: MIN_PARTICIPATION,
            window_days: DEFAULT_WINDOW_DAYS,
            exclude_ties: false,
        }
    }
}

/// One policy's decisions at one cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSet {
    pub policy_id: String,
    pub cutoff: CutoffMode,
    pub decisions: Vec<PolicyDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanBenchmark {
    pub n_voters: usize,
    pub n_eligible: usize,
    pub min_participation: usize,
    pub mean_tilde_a: Option<f64>,
    pub median_tilde_a: Option<f64>,
    pub mean_hat_a: Option<f64>,
    pub median_hat_a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy_id: String,
    pub cutoff: CutoffMode,
    pub n_decisions: usize,
    pub n_fallback: usize,
    pub aggregate: AggregateAlignment,
    pub buckets: Vec<BucketRow>,
    pub expost_validity: Vec<ValidityRow>,
    pub contested: ContestedReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalRow {
    pub policy_id: String,
    pub comparison: TemporalComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub schema_version: u32,
    pub options: ReportOptions,
    pub n_proposals: usize,
    pub n_evaluated: usize,
    /// Proposals without positive voting power, excluded everywhere.
    pub degenerate: Vec<String>,
    pub n_ties: usize,
    pub human_benchmark: HumanBenchmark,
    pub policies: Vec<PolicyReport>,
    pub temporal: Vec<TemporalRow>,
}

/// Per-proposal rows behind one policy report, kept out of the JSON document.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDetail {
    pub policy_id: String,
    pub cutoff: CutoffMode,
    pub per_proposal: Vec<ProposalAlignment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub report: AlignmentReport,
    pub details: Vec<PolicyDetail>,
    pub voters: Vec<VoterBenchmark>,
}

/// Scores every decision set against the dataset. Each set must cover every
/// non-degenerate proposal.
pub fn build_report(
    dataset: &Dataset,
    sets: &[DecisionSet],
    windows: &BTreeMap<String, MarketWindow>,
    options: &ReportOptions,
    abstain: &AbstainLabels,
) -> Result<ReportBundle, EvalError> {
    let (mut outcomes, degenerate) = compute_outcomes(dataset);
    let n_ties = outcomes.values().filter(|o| o.tie).count();
    if options.exclude_ties {
        outcomes.retain(|_, o| !o.tie);
    }
    if outcomes.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let voters = crate::eval::voter_benchmarks(dataset, &outcomes, options.min_participation)?;

    let mut ordered: Vec<&DecisionSet> = sets.iter().collect();
    ordered.sort_by(|a, b| (&a.policy_id, a.cutoff).cmp(&(&b.policy_id, b.cutoff)));

    let mut policies = Vec::new();
    let mut details = Vec::new();
    for set in ordered {
        let relevant: Vec<PolicyDecision> = set
            .decisions
            .iter()
            .filter(|d| outcomes.contains_key(&d.proposal_id))
            .cloned()
            .collect();
        let run = align_decisions(dataset, &outcomes, &relevant, abstain)?;
        let aggregate = aggregate_alignment(&run.per_proposal, &voters, options.min_participation)?;
        policies.push(PolicyReport {
            policy_id: set.policy_id.clone(),
            cutoff: set.cutoff,
            n_decisions: relevant.len(),
            n_fallback: relevant.iter().filter(|d| d.fallback).count(),
            aggregate,
            buckets: bucket_agreement(&run.per_proposal),
            expost_validity: expost_validity(&run.per_proposal, windows),
            contested: contested_subset(&run.per_proposal, options.contested_threshold),
        });
        details.push(PolicyDetail {
            policy_id: set.policy_id.clone(),
            cutoff: set.cutoff,
            per_proposal: run.per_proposal,
        });
    }

    let mut temporal = Vec::new();
    for ante in details.iter().filter(|d| d.cutoff == CutoffMode::ExAnte) {
        if let Some(post) = details
            .iter()
            .find(|d| d.cutoff == CutoffMode::ExPost && d.policy_id == ante.policy_id)
        {
            temporal.push(TemporalRow {
                policy_id: ante.policy_id.clone(),
                comparison: temporal_comparison(&ante.per_proposal, &post.per_proposal)?,
            });
        }
    }

    let eligible: Vec<&VoterBenchmark> = voters.iter().filter(|v| v.eligible).collect();
    let tilde: Vec<f64> = eligible.iter().filter_map(|v| v.tilde_a).collect();
    let hat: Vec<f64> = eligible.iter().map(|v| v.hat_a).collect();
    let human_benchmark = HumanBenchmark {
        n_voters: voters.len(),
        n_eligible: eligible.len(),
        min_participation: options.min_participation,
        mean_tilde_a: crate::eval::mean(&tilde),
        median_tilde_a: crate::eval::median(&tilde),
        mean_hat_a: crate::eval::mean(&hat),
        median_hat_a: crate::eval::median(&hat),
    };

    Ok(ReportBundle {
        report: AlignmentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            options: options.clone(),
            n_proposals: dataset.proposals().len(),
            n_evaluated: outcomes.len(),
            degenerate,
            n_ties,
            human_benchmark,
            policies,
            temporal,
        },
        details,
        voters,
    })
}

impl AlignmentReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes =
            serde_json::to_vec_pretty(self).expect("report serialization is infallible");
        bytes.push(b'\n');
        bytes
    }
}

fn f4(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn cell(c: &ProbabilityCell) -> String {
    match c.probability {
        Some(p) => format!("{p:.3} ({}/{})", c.positive, c.n),
        None => "n/a (0)".into(),
    }
}

fn subset_row(out: &mut String, label: &str, s: &SubsetStats) {
    let _ = writeln!(
        out,
        "| {label} | {} | {} | {} | {} | {} |",
        s.n,
        f4(s.p_ai_final),
        f4(s.mean_a),
        f4(s.mean_h),
        f4(s.mean_s)
    );
}

pub fn render_markdown(report: &AlignmentReport) -> String {
    let mut md = String::from("# Alignment report\n\n");
    let _ = writeln!(
        md,
        "Proposals: {} total, {} evaluated, {} without voting power, {} ties{}.\n",
        report.n_proposals,
        report.n_evaluated,
        report.degenerate.len(),
        report.n_ties,
        if report.options.exclude_ties {
            " (excluded)"
        } else {
            ""
        }
    );
    let h = &report.human_benchmark;
    let _ = writeln!(
        md,
        "Human benchmark over {} of {} voters with at least {} proposals: mean weighted agreement {}, median {}; mean unweighted agreement {}, median {}.",
        h.n_eligible,
        h.n_voters,
        h.min_participation,
        f4(h.mean_tilde_a),
        f4(h.median_tilde_a),
        f4(h.mean_hat_a),
        f4(h.median_hat_a)
    );

    for p in &report.policies {
        let a = &p.aggregate;
        let _ = writeln!(md, "\n## {} ({})\n", p.policy_id, p.cutoff.as_str());
        let _ = writeln!(
            md,
            "Decisions: {} ({} fallback). P(AI = final) = {:.4}. Mean A = {:.4}, mean H = {:.4}, mean S = {:.4}.\n",
            p.n_decisions, p.n_fallback, a.p_ai_final, a.mean_a, a.mean_h, a.mean_s
        );
        let _ = writeln!(
            md,
            "Mean A above median voter weighted agreement: {}. Mean H above median voter unweighted agreement: {}.\n",
            a.ai_above_token_benchmark.map_or("n/a".into(), |b| b.to_string()),
            a.ai_above_headcount_benchmark.map_or("n/a".into(), |b| b.to_string())
        );
        md.push_str("### Aggregate statistics\n\n| Metric | Mean | Median | Std | Q25 | Q75 | Max |\n|---|---|---|---|---|---|---|\n");
        for row in &a.distribution {
            let s = &row.summary;
            let _ = writeln!(
                md,
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                row.metric, s.mean, s.median, s.std, s.q25, s.q75, s.max
            );
        }
        md.push_str("\n### Agreement with final decision by type\n\n| Bucket | N | Humans | AI | Difference (pp) |\n|---|---|---|---|---|\n");
        for b in &p.buckets {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                b.bucket.label(),
                b.n,
                f4(b.human),
                f4(b.ai),
                b.difference_pp.map_or("n/a".into(), |d| format!("{d:+.2}"))
            );
        }
        md.push_str("\n### Positive ex-post responses\n\n| Proposal type | P(dP>0 given AI) | P(dP>0 given Final) | P(dTVL>0 given AI) | P(dTVL>0 given Final) |\n|---|---|---|---|---|\n");
        for v in &p.expost_validity {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                v.bucket.map_or("All", |b| b.label()),
                cell(&v.price_ai),
                cell(&v.price_final),
                cell(&v.tvl_ai),
                cell(&v.tvl_final)
            );
        }
        let _ = writeln!(
            md,
            "\n### Contested proposals (S <= {:.2})\n\n| Subset | N | P(AI = final) | Mean A | Mean H | Mean S |\n|---|---|---|---|---|---|",
            p.contested.threshold
        );
        subset_row(&mut md, "All", &p.contested.all);
        subset_row(&mut md, "Binary", &p.contested.binary);
        subset_row(&mut md, "Multi-option", &p.contested.multi);
    }

    if !report.temporal.is_empty() {
        md.push_str("\n## Ex-ante versus ex-post\n\n| Policy | Metric | Ex-ante | Ex-post |\n|---|---|---|---|\n");
        for t in &report.temporal {
            let c = &t.comparison;
            let rows = [
                ("P(AI = final)", c.ex_ante.p_ai_final, c.ex_post.p_ai_final),
                ("Mean A", c.ex_ante.mean_a, c.ex_post.mean_a),
                ("Mean H", c.ex_ante.mean_h, c.ex_post.mean_h),
                ("Mean S", c.ex_ante.mean_s, c.ex_post.mean_s),
            ];
            for (name, ante, post) in rows {
                let _ = writeln!(
                    md,
                    "| {} | {name} | {} | {} |",
                    t.policy_id,
                    f4(ante),
                    f4(post)
                );
            }
            let _ = writeln!(
                md,
                "| {} | Divergent selections | {:.4} ({} of {}) | |",
                t.policy_id, c.divergence, c.n_divergent, c.n
            );
        }
    }
    md
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-proposal alignment rows as CSV.
pub fn proposals_csv(rows: &[ProposalAlignment]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "proposal_id",
        "s_p",
        "a_p",
        "h_p",
        "ai_equals_final",
        "ai_option",
        "final_option",
        "kind",
        "calls_for_change",
        "tie",
        "n_voters",
        "total_vp",
    ])?;
    for r in rows {
        w.write_record([
            r.proposal_id.clone(),
            r.s_p.to_string(),
            r.a_p.to_string(),
            r.h_p.to_string(),
            r.ai_equals_final.to_string(),
            (r.ai_index + 1).to_string(),
            (r.final_index + 1).to_string(),
            r.kind.as_str().to_string(),
            r.calls_for_change
                .map(|b| b.to_string())
                .unwrap_or_default(),
            r.tie.to_string(),
            r.n_voters.to_string(),
            r.total_vp.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn voters_csv(rows: &[VoterBenchmark]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["voter", "n_proposals", "tilde_a", "hat_a", "eligible"])?;
    for r in rows {
        w.write_record([
            r.voter.clone(),
            r.n_proposals.to_string(),
            opt_str(r.tilde_a),
            r.hat_a.to_string(),
            r.eligible.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// One CSV per report table, keyed by file name.
pub fn table_csvs(report: &AlignmentReport) -> Result<BTreeMap<String, Vec<u8>>, csv::Error> {
    let mut out = BTreeMap::new();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "policy", "cutoff", "metric", "n", "mean", "median", "std", "q25", "q75", "max",
    ])?;
    for p in &report.policies {
        for row in &p.aggregate.distribution {
            let s = &row.summary;
            w.write_record([
                p.policy_id.clone(),
                p.cutoff.as_str().into(),
                row.metric.clone(),
                s.n.to_string(),
                s.mean.to_string(),
                s.median.to_string(),
                s.std.to_string(),
                s.q25.to_string(),
                s.q75.to_string(),
                s.max.to_string(),
            ])?;
        }
    }
    out.insert(
        "aggregate.csv".to_string(),
        w.into_inner().map_err(|e| e.into_error())?,
    );

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "policy",
        "cutoff",
        "bucket",
        "n",
        "human",
        "ai",
        "difference_pp",
    ])?;
    for p in &report.policies {
        for b in &p.buckets {
            w.write_record([
                p.policy_id.clone(),
                p.cutoff.as_str().into(),
                b.bucket.as_str().into(),
                b.n.to_string(),
                opt_str(b.human),
                opt_str(b.ai),
                opt_str(b.difference_pp),
            ])?;
        }
    }
    out.insert(
        "buckets.csv".to_string(),
        w.into_inner().map_err(|e| e.into_error())?,
    );

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "policy",
        "cutoff",
        "bucket",
        "metric",
        "given",
        "n",
        "positive",
        "probability",
    ])?;
    for p in &report.policies {
        for v in &p.expost_validity {
            let bucket = v.bucket.map_or("all", |b| b.as_str());
            for (metric, given, c) in [
                ("price", "ai", &v.price_ai),
                ("price", "final", &v.price_final),
                ("tvl", "ai", &v.tvl_ai),
                ("tvl", "final", &v.tvl_final),
            ] {
                w.write_record([
                    p.policy_id.clone(),
                    p.cutoff.as_str().into(),
                    bucket.into(),
                    metric.into(),
                    given.into(),
                    c.n.to_string(),
                    c.positive.to_string(),
                    opt_str(c.probability),
                ])?;
            }
        }
    }
    out.insert(
        "expost_validity.csv".to_string(),
        w.into_inner().map_err(|e| e.into_error())?,
    );

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "policy",
        "cutoff",
        "threshold",
        "subset",
        "n",
        "p_ai_final",
        "mean_a",
        "mean_h",
        "mean_s",
    ])?;
    for p in &report.policies {
        let c = &p.contested;
        for (name, s) in [("all", &c.all), ("binary", &c.binary), ("multi", &c.multi)] {
            w.write_record([
                p.policy_id.clone(),
                p.cutoff.as_str().into(),
                c.threshold.to_string(),
                name.into(),
                s.n.to_string(),
                opt_str(s.p_ai_final),
                opt_str(s.mean_a),
                opt_str(s.mean_h),
                opt_str(s.mean_s),
            ])?;
        }
    }
    out.insert(
        "contested.csv".to_string(),
        w.into_inner().map_err(|e| e.into_error())?,
    );

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["policy", "metric", "ex_ante", "ex_post"])?;
    for t in &report.temporal {
        let c = &t.comparison;
        for (name, ante, post) in [
            ("p_ai_final", c.ex_ante.p_ai_final, c.ex_post.p_ai_final),
            ("mean_a", c.ex_ante.mean_a, c.ex_post.mean_a),
            ("mean_h", c.ex_ante.mean_h, c.ex_post.mean_h),
            ("mean_s", c.ex_ante.mean_s, c.ex_post.mean_s),
        ] {
            w.write_record([
                t.policy_id.clone(),
                name.into(),
                opt_str(ante),
                opt_str(post),
            ])?;
        }
        w.write_record([
            t.policy_id.clone(),
            "divergence".into(),
            c.divergence.to_string(),
            c.n_divergent.to_string(),
        ])?;
    }
    out.insert(
        "temporal.csv".to_string(),
        w.into_inner().map_err(|e| e.into_error())?,
    );
    Ok(out)
}
