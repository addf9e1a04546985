//! Field-by-field comparison of production outputs with the oracle.
//! Every function returns a list of human-readable mismatches.

use dao_align_core::dynamics::DynamicsFeatures;
use dao_align_core::eval::{ProbabilityCell, SubsetStats, Summary, VoterBenchmark};
use dao_align_core::market::{MarketWindow, SegmentCoverage};
use dao_align_core::report::{AlignmentReport, PolicyDetail, ReportBundle};

use crate::oracle::{
    OracleBundle, OracleCell, OracleDynamics, OracleMarket, OracleSubset, OracleSummary,
};

/// Relative tolerance for every floating-point comparison.
pub const REL_TOL: f64 = 1e-9;
/// Absolute floor for values that are zero in exact arithmetic.
pub const ABS_FLOOR: f64 = 1e-12;

pub fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= (REL_TOL * a.abs().max(b.abs())).max(ABS_FLOOR)
}

#[derive(Debug, Default)]
pub struct Diff {
    pub mismatches: Vec<String>,
    /// Scalar comparisons made.
    pub checked: usize,
}

impl Diff {
    fn num(&mut self, what: impl std::fmt::Display, got: f64, want: f64) {
        self.checked += 1;
        if !close(got, want) {
            self.mismatches
                .push(format!("{what}: got {got}, oracle {want}"));
        }
    }

    fn opt(&mut self, what: impl std::fmt::Display, got: Option<f64>, want: Option<f64>) {
        match (got, want) {
            (Some(g), Some(w)) => self.num(what, g, w),
            (None, None) => self.checked += 1,
            _ => self
                .mismatches
                .push(format!("{what}: got {got:?}, oracle {want:?}")),
        }
    }

    fn eq<T: PartialEq + std::fmt::Debug>(
        &mut self,
        what: impl std::fmt::Display,
        got: T,
        want: T,
    ) {
        self.checked += 1;
        if got != want {
            self.mismatches
                .push(format!("{what}: got {got:?}, oracle {want:?}"));
        }
    }

    fn summary(&mut self, what: &str, got: &Summary, want: &OracleSummary) {
        self.eq(format!("{what}.n"), got.n, want.n);
        self.num(format!("{what}.mean"), got.mean, want.mean);
        self.num(format!("{what}.median"), got.median, want.median);
        self.num(format!("{what}.std"), got.std, want.std);
        self.num(format!("{what}.q25"), got.q25, want.q25);
        self.num(format!("{what}.q75"), got.q75, want.q75);
        self.num(format!("{what}.max"), got.max, want.max);
    }

    fn subset(&mut self, what: &str, got: &SubsetStats, want: &OracleSubset) {
        self.eq(format!("{what}.n"), got.n, want.n);
        self.opt(
            format!("{what}.p_ai_final"),
            got.p_ai_final,
            want.p_ai_final,
        );
        self.opt(format!("{what}.mean_a"), got.mean_a, want.mean_a);
        self.opt(format!("{what}.mean_h"), got.mean_h, want.mean_h);
        self.opt(format!("{what}.mean_s"), got.mean_s, want.mean_s);
    }

    fn cell(&mut self, what: &str, got: &ProbabilityCell, want: &OracleCell) {
        self.eq(format!("{what}.n"), got.n, want.0);
        self.eq(format!("{what}.positive"), got.positive, want.1);
        self.opt(format!("{what}.probability"), got.probability, want.2);
    }

    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Aggregate tables as they appear in the report document.
pub fn compare_alignment_report(diff: &mut Diff, report: &AlignmentReport, oracle: &OracleBundle) {
    diff.eq("n_evaluated", report.n_evaluated, oracle.outcomes.len());
    diff.eq("degenerate", &report.degenerate, &oracle.degenerate);
    diff.eq("n_ties", report.n_ties, oracle.n_ties);
    let hb = &report.human_benchmark;
    diff.eq("human.n_voters", hb.n_voters, oracle.voters.len());
    diff.eq("human.n_eligible", hb.n_eligible, oracle.n_eligible);
    diff.opt("human.mean_tilde_a", hb.mean_tilde_a, oracle.mean_tilde);
    diff.opt(
        "human.median_tilde_a",
        hb.median_tilde_a,
        oracle.median_tilde,
    );
    diff.opt("human.mean_hat_a", hb.mean_hat_a, oracle.mean_hat);
    diff.opt("human.median_hat_a", hb.median_hat_a, oracle.median_hat);

    diff.eq("policy count", report.policies.len(), oracle.policies.len());
    for (got, want) in report.policies.iter().zip(&oracle.policies) {
        let tag = format!("{}@{}", want.policy_id, want.cutoff.as_str());
        diff.eq(
            format!("{tag} id"),
            (&got.policy_id, got.cutoff),
            (&want.policy_id, want.cutoff),
        );
        let agg = &got.aggregate;
        diff.eq(
            format!("{tag} n_proposals"),
            agg.n_proposals,
            want.rows.len(),
        );
        diff.num(format!("{tag} p_ai_final"), agg.p_ai_final, want.p_ai_final);
        diff.num(format!("{tag} mean_a"), agg.mean_a, want.mean_a);
        diff.num(format!("{tag} mean_h"), agg.mean_h, want.mean_h);
        diff.num(format!("{tag} mean_s"), agg.mean_s, want.mean_s);
        diff.opt(
            format!("{tag} median_tilde_a"),
            agg.median_tilde_a,
            oracle.median_tilde,
        );
        diff.opt(
            format!("{tag} median_hat_a"),
            agg.median_hat_a,
            oracle.median_hat,
        );
        diff.eq(
            format!("{tag} ai_above_token_benchmark"),
            agg.ai_above_token_benchmark,
            oracle.median_tilde.map(|m| want.mean_a > m),
        );
        diff.eq(
            format!("{tag} ai_above_headcount_benchmark"),
            agg.ai_above_headcount_benchmark,
            oracle.median_hat.map(|m| want.mean_h > m),
        );
        for (row, (name, summary)) in agg.distribution.iter().zip(
            ["a_p", "h_p", "s_p", "n_voters"]
                .iter()
                .zip(&want.distribution),
        ) {
            diff.eq(
                format!("{tag} distribution name"),
                row.metric.as_str(),
                *name,
            );
            diff.summary(&format!("{tag} {name}"), &row.summary, summary);
        }
        diff.eq(
            format!("{tag} bucket count"),
            got.buckets.len(),
            want.buckets.len(),
        );
        for (b, w) in got.buckets.iter().zip(&want.buckets) {
            diff.eq(format!("{tag} bucket"), b.bucket.as_str(), w.name);
            diff.eq(format!("{tag} {} n", w.name), b.n, w.n);
            diff.opt(format!("{tag} {} human", w.name), b.human, w.human);
            diff.opt(format!("{tag} {} ai", w.name), b.ai, w.ai);
            diff.opt(
                format!("{tag} {} difference", w.name),
                b.difference_pp,
                w.difference_pp,
            );
        }
        diff.eq(
            format!("{tag} validity rows"),
            got.expost_validity.len(),
            want.validity.len(),
        );
        for (v, w) in got.expost_validity.iter().zip(&want.validity) {
            let name = w.bucket.unwrap_or("all");
            diff.eq(
                format!("{tag} validity bucket"),
                v.bucket.map(|b| b.as_str()),
                w.bucket,
            );
            diff.cell(&format!("{tag} {name} price_ai"), &v.price_ai, &w.price_ai);
            diff.cell(
                &format!("{tag} {name} price_final"),
                &v.price_final,
                &w.price_final,
            );
            diff.cell(&format!("{tag} {name} tvl_ai"), &v.tvl_ai, &w.tvl_ai);
            diff.cell(
                &format!("{tag} {name} tvl_final"),
                &v.tvl_final,
                &w.tvl_final,
            );
        }
        diff.subset(
            &format!("{tag} contested"),
            &got.contested.all,
            &want.contested_all,
        );
        diff.subset(
            &format!("{tag} contested binary"),
            &got.contested.binary,
            &want.contested_binary,
        );
        diff.subset(
            &format!("{tag} contested multi"),
            &got.contested.multi,
            &want.contested_multi,
        );
    }

    diff.eq(
        "temporal count",
        report.temporal.len(),
        oracle.temporal.len(),
    );
    for (got, want) in report.temporal.iter().zip(&oracle.temporal) {
        let tag = format!("temporal {}", want.policy_id);
        diff.eq(format!("{tag} id"), &got.policy_id, &want.policy_id);
        let c = &got.comparison;
        diff.eq(format!("{tag} n"), c.n, want.n);
        diff.eq(
            format!("{tag} n_divergent"),
            c.n_divergent,
            want.n_divergent,
        );
        diff.num(format!("{tag} divergence"), c.divergence, want.divergence);
        diff.subset(&format!("{tag} ex_ante"), &c.ex_ante, &want.ex_ante);
        diff.subset(&format!("{tag} ex_post"), &c.ex_post, &want.ex_post);
    }
}

/// Per-proposal alignment rows.
pub fn compare_details(diff: &mut Diff, details: &[PolicyDetail], oracle: &OracleBundle) {
    diff.eq("detail count", details.len(), oracle.policies.len());
    for (d, want) in details.iter().zip(&oracle.policies) {
        diff.eq("detail rows", d.per_proposal.len(), want.rows.len());
        for (got, w) in d.per_proposal.iter().zip(&want.rows) {
            let tag = format!(
                "{}@{} {}",
                want.policy_id,
                want.cutoff.as_str(),
                w.proposal_id
            );
            diff.eq(format!("{tag} id"), &got.proposal_id, &w.proposal_id);
            diff.num(format!("{tag} s_p"), got.s_p, w.s);
            diff.num(format!("{tag} a_p"), got.a_p, w.a);
            diff.num(format!("{tag} h_p"), got.h_p, w.h);
            diff.eq(format!("{tag} ai=final"), got.ai_equals_final, w.hit);
            diff.eq(format!("{tag} n_voters"), got.n_voters, w.n_voters);
            diff.num(
                format!("{tag} final_ballot_mass"),
                got.final_ballot_mass,
                w.final_mass,
            );
            let o = &oracle.outcomes[&w.proposal_id];
            diff.eq(format!("{tag} final_index"), got.final_index, o.final_index);
            diff.eq(format!("{tag} tie"), got.tie, o.tie);
            diff.num(format!("{tag} total_vp"), got.total_vp, o.total);
        }
    }
}

pub fn compare_voters(diff: &mut Diff, voters: &[VoterBenchmark], oracle: &OracleBundle) {
    diff.eq("voter count", voters.len(), oracle.voters.len());
    for (got, want) in voters.iter().zip(&oracle.voters) {
        diff.eq("voter", &got.voter, &want.voter);
        diff.eq(format!("{} n", want.voter), got.n_proposals, want.n);
        diff.opt(format!("{} tilde_a", want.voter), got.tilde_a, want.tilde);
        diff.num(format!("{} hat_a", want.voter), got.hat_a, want.hat);
        diff.eq(
            format!("{} eligible", want.voter),
            got.eligible,
            want.eligible,
        );
    }
}

pub fn compare_report(diff: &mut Diff, bundle: &ReportBundle, oracle: &OracleBundle) {
    compare_alignment_report(diff, &bundle.report, oracle);
    compare_details(diff, &bundle.details, oracle);
    compare_voters(diff, &bundle.voters, oracle);
}

pub fn compare_dynamics(diff: &mut Diff, got: &DynamicsFeatures, want: &OracleDynamics) {
    let tag = &got.proposal_id;
    let m = &got.meta;
    diff.eq(
        format!("{tag} unique_voters"),
        m.unique_voters,
        want.unique_voters,
    );
    diff.eq(
        format!("{tag} total_votes"),
        m.total_votes,
        want.total_votes,
    );
    diff.eq(format!("{tag} first_ts"), m.first_ts, want.first_ts);
    diff.eq(format!("{tag} last_ts"), m.last_ts, want.last_ts);
    diff.eq(
        format!("{tag} quartile votes"),
        m.per_quartile_votes,
        want.quartile_votes,
    );
    for q in 0..4 {
        diff.num(
            format!("{tag} quartile {q} vp"),
            m.per_quartile_vp_sums[q],
            want.quartile_vp[q],
        );
    }
    let lead = &got.lead;
    for (q, (row, wrow)) in lead
        .lead_ratio_by_quartile
        .iter()
        .zip(&want.lead_by_quartile)
        .enumerate()
    {
        diff.eq(format!("{tag} lead row {q} width"), row.len(), wrow.len());
        for (i, (g, w)) in row.iter().zip(wrow).enumerate() {
            diff.num(format!("{tag} lead[{q}][{i}]"), *g, *w);
        }
    }
    diff.eq(
        format!("{tag} lead_total width"),
        lead.lead_ratio_total.len(),
        want.lead_total.len(),
    );
    for (i, (g, w)) in lead
        .lead_ratio_total
        .iter()
        .zip(&want.lead_total)
        .enumerate()
    {
        diff.num(format!("{tag} lead_total[{i}]"), *g, *w);
    }
    for (i, (g, w)) in lead.early_ratio.iter().zip(&want.early).enumerate() {
        diff.num(format!("{tag} early[{i}]"), *g, *w);
    }
    match (&got.spike, &want.spike) {
        (Some(g), Some(w)) => {
            diff.num(format!("{tag} spike_index"), g.spike_index, w.spike_index);
            diff.eq(format!("{tag} overflow"), g.overflow, w.overflow);
            diff.eq(format!("{tag} spike_event"), g.spike_event, w.spike_event);
            diff.num(
                format!("{tag} follow_support_ratio"),
                g.follow_support_ratio,
                w.follow_support_ratio,
            );
            diff.eq(format!("{tag} empty_tail"), g.empty_tail, w.empty_tail);
        }
        (None, None) => diff.checked += 1,
        (g, w) => diff
            .mismatches
            .push(format!("{tag} spike: got {g:?}, oracle {w:?}")),
    }
    diff.opt(
        format!("{tag} stairwise_ratio"),
        got.stairwise_ratio,
        want.stairwise,
    );
    diff.num(
        format!("{tag} half_slope_diff"),
        got.half_slope_diff,
        want.half_slope,
    );
}

pub fn compare_market(diff: &mut Diff, got: &MarketWindow, want: &OracleMarket) {
    let tag = &got.proposal_id;
    diff.eq(format!("{tag} event_day"), got.event_day, want.event_day);
    diff.opt(
        format!("{tag} price_pct_change"),
        got.price_pct_change,
        want.price_pct_change,
    );
    diff.opt(format!("{tag} adj_return"), got.adj_return, want.adj_return);
    diff.opt(
        format!("{tag} tvl_abnormal"),
        got.tvl_abnormal,
        want.tvl_abnormal,
    );
    diff.opt(
        format!("{tag} treasury_abnormal"),
        got.treasury_abnormal,
        want.treasury_abnormal,
    );
    let c = &got.data_coverage;
    let seg = |s: &SegmentCoverage| (s.pre, s.post);
    diff.eq(
        format!("{tag} coverage"),
        [seg(&c.price), seg(&c.index), seg(&c.tvl), seg(&c.treasury)],
        want.coverage,
    );
}
