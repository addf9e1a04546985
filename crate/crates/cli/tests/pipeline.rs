use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dao_align_cli::commands::read_decision_sets;
use dao_align_core::eval::compute_outcomes;
use dao_align_core::policy::PolicyDecision;
use dao_align_core::report::{AlignmentReport, ReportOptions};
use dao_align_core::store::{read_jsonl, DatasetStore};
use dao_align_mock::{first_choice_responder, Fixtures, MockServer};
use dao_align_synth::compare::{compare_alignment_report, Diff};
use dao_align_synth::harness::{oracle_options, oracle_sets};
use dao_align_synth::oracle::oracle_metrics;
use dao_align_synth::{generate_dataset, ScenarioSpec};

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

struct Workspace {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new(config: &Path) -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
            config: config.to_path_buf(),
        }
    }

    fn golden() -> Self {
        Self::new(&golden("run.toml"))
    }

    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_dao-align"))
            .arg("--config")
            .arg(&self.config)
            .arg("--dataset")
            .arg(self.data())
            .arg("--out")
            .arg(self.out())
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    fn generate(&self) {
        let scenario = golden("scenario.toml");
        self.ok(&["generate", "--scenario", scenario.to_str().unwrap()]);
    }

    fn report_bytes(&self) -> Vec<u8> {
        std::fs::read(self.out().join("reports/report.json")).unwrap()
    }
}

fn pipeline(workers: &str) -> Workspace {
    let ws = Workspace::golden();
    ws.generate();
    for cmd in ["features", "simulate", "evaluate", "report"] {
        ws.ok(&["--workers", workers, cmd]);
    }
    ws
}

#[test]
fn golden_report_is_reproduced_at_any_worker_count() {
    let one = pipeline("1");
    let first = one.report_bytes();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(golden("report.json"), &first).unwrap();
    }
    let expected = std::fs::read(golden("report.json")).unwrap();
    assert!(first == expected, "report differs from the golden file");

    one.ok(&["--workers", "1", "evaluate"]);
    assert_eq!(one.report_bytes(), expected, "second run differs");

    let eight = pipeline("8");
    assert_eq!(eight.report_bytes(), expected, "8 workers differ");
    let md = std::fs::read_to_string(eight.out().join("reports/report.md")).unwrap();
    assert!(md.contains("# Alignment report"));
    for table in [
        "aggregate.csv",
        "buckets.csv",
        "expost_validity.csv",
        "contested.csv",
        "temporal.csv",
    ] {
        assert!(eight.out().join("reports").join(table).is_file(), "{table}");
    }
}

#[test]
fn golden_report_matches_the_oracle() {
    let ws = pipeline("4");
    let report: AlignmentReport =
        serde_json::from_slice(&std::fs::read(golden("report.json")).unwrap()).unwrap();
    let dataset = DatasetStore::new(ws.data()).load().unwrap();
    let spec = ScenarioSpec::from_toml(&std::fs::read_to_string(golden("scenario.toml")).unwrap())
        .unwrap();
    assert_eq!(dataset, generate_dataset(&spec).unwrap().dataset);

    let sets = read_decision_sets(&ws.out().join("decisions")).unwrap();
    assert_eq!(sets.len(), 8);
    let oracle = oracle_metrics(
        &dataset,
        &oracle_sets(&sets),
        &oracle_options(&ReportOptions::default()),
    );
    let mut diff = Diff::default();
    compare_alignment_report(&mut diff, &report, &oracle);
    assert!(diff.checked > 100);
    assert!(
        diff.is_clean(),
        "{:?}",
        &diff.mismatches[..diff.mismatches.len().min(5)]
    );
}

#[test]
fn token_majority_ex_post_reproduces_outcomes() {
    let ws = Workspace::golden();
    ws.generate();
    ws.ok(&[
        "simulate",
        "--policy",
        "token_majority",
        "--cutoff",
        "ex-post",
    ]);
    let decisions: Vec<PolicyDecision> =
        read_jsonl(&ws.out().join("decisions/token_majority_ex_post.jsonl")).unwrap();
    let dataset = DatasetStore::new(ws.data()).load().unwrap();
    let (outcomes, _) = compute_outcomes(&dataset);
    assert_eq!(decisions.len(), dataset.proposals().len());
    for d in &decisions {
        let o = &outcomes[&d.proposal_id];
        if !o.tie {
            assert_eq!(d.index(), o.final_index, "{}", d.proposal_id);
        }
    }
    assert!(!ws
        .out()
        .join("decisions/token_majority_ex_ante.jsonl")
        .exists());
}

#[test]
fn evaluate_without_decisions_exits_4() {
    let ws = Workspace::golden();
    ws.generate();
    let out = ws.run(&["evaluate"]);
    assert_eq!(out.status.code(), Some(4));
    let dataset = DatasetStore::new(ws.data()).load().unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains(&dataset.proposals()[0].proposal_id),
        "{stderr}"
    );
}

#[test]
fn partial_decisions_exit_4_naming_the_gap() {
    let ws = Workspace::golden();
    ws.generate();
    ws.ok(&[
        "simulate",
        "--policy",
        "headcount_majority",
        "--cutoff",
        "both",
    ]);
    let file = ws.out().join("decisions/headcount_majority_ex_ante.jsonl");
    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let dropped: PolicyDecision = serde_json::from_str(lines.pop().unwrap()).unwrap();
    std::fs::write(&file, lines.join("\n") + "\n").unwrap();
    let out = ws.run(&["evaluate"]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&dropped.proposal_id), "{stderr}");
    assert!(stderr.contains("headcount_majority ex_ante"), "{stderr}");
}

#[test]
fn config_errors_exit_2() {
    let ws = Workspace::golden();
    assert_eq!(
        ws.run(&["--contested-threshold", "1.5", "report"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        ws.run(&["simulate", "--policy", "psychic"]).status.code(),
        Some(2)
    );
    assert_eq!(
        ws.run(&["features"]).status.code(),
        Some(2),
        "missing store"
    );
    assert_eq!(ws.run(&["ingest"]).status.code(), Some(2), "no spaces");

    let bad = ws.dir.path().join("bad.toml");
    std::fs::write(&bad, "[thresholds]\ncontested = \"high\"\n").unwrap();
    assert_eq!(Workspace::new(&bad).run(&["report"]).status.code(), Some(2));
}

fn mock_config(dir: &Path, server: &MockServer, llm: bool) -> PathBuf {
    let url = server.url();
    let policies = if llm {
        r#"["token_majority", "llm"]"#
    } else {
        r#"["token_majority"]"#
    };
    let text = format!(
        r#"seed = 3

[ingest]
snapshot_url = "{url}/graphql"
spaces = [{{ space = "synth.eth", protocol = "synth", symbol = "synth" }}]

[ingest.market]
defillama_url = "{url}"
cmc_url = "{url}"

[ingest.http]
requests_per_second = 10000
max_attempts = 2
initial_backoff_ms = 1
timeout_secs = 10

[policy]
policies = {policies}

[llm]
base_url = "{url}"
model = "mock-model"
api_key_env = "DAO_ALIGN_TEST_UNSET_KEY"

[llm.http]
requests_per_second = 10000
max_attempts = 2
initial_backoff_ms = 1
timeout_secs = 10
"#
    );
    let path = dir.join("mock.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn full_pipeline_against_mock_endpoints() {
    let spec = ScenarioSpec {
        n_proposals: 8,
        ..ScenarioSpec::small(17)
    };
    let syn = generate_dataset(&spec).unwrap();
    let server =
        MockServer::start(Fixtures::from_dataset(&syn.dataset).with_llm(first_choice_responder()))
            .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(&mock_config(dir.path(), &server, true));
    for cmd in ["ingest", "features", "simulate", "evaluate", "report"] {
        ws.ok(&[cmd]);
    }
    let dataset = DatasetStore::new(ws.data()).load().unwrap();
    assert_eq!(dataset.proposals().len(), 8);
    assert_eq!(dataset.n_votes(), syn.dataset.n_votes());

    let n = dataset.proposals().len();
    assert_eq!(server.chat_requests().len(), 2 * n);
    let audit = std::fs::read_to_string(ws.out().join("audit/llm.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 2 * n);
    let decisions: Vec<PolicyDecision> =
        read_jsonl(&ws.out().join("decisions/llm_ex_ante.jsonl")).unwrap();
    assert!(decisions.iter().all(|d| d.selected_option == 1));
    let md = std::fs::read_to_string(ws.out().join("reports/report.md")).unwrap();
    assert!(md.contains("## llm (ex_post)"));

    // A second ingest over unchanged upstream data leaves the store untouched.
    let manifest = std::fs::read(ws.data().join("manifest.json")).unwrap();
    ws.ok(&["ingest"]);
    assert_eq!(
        std::fs::read(ws.data().join("manifest.json")).unwrap(),
        manifest
    );
}

#[test]
fn upstream_failure_exits_3() {
    let syn = generate_dataset(&ScenarioSpec::small(5)).unwrap();
    let mut fixtures = Fixtures::from_dataset(&syn.dataset);
    fixtures.failing_routes.insert("graphql".into());
    let server = MockServer::start(fixtures).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(&mock_config(dir.path(), &server, false));
    assert_eq!(ws.run(&["ingest"]).status.code(), Some(3));
    assert!(!ws.data().join("manifest.json").exists());
}

#[test]
fn unreachable_llm_exits_3() {
    let syn = generate_dataset(&ScenarioSpec::small(6)).unwrap();
    let mut fixtures = Fixtures::from_dataset(&syn.dataset).with_llm(first_choice_responder());
    fixtures.failing_routes.insert("chat".into());
    let server = MockServer::start(fixtures).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(&mock_config(dir.path(), &server, true));
    ws.ok(&["ingest"]);
    assert_eq!(
        ws.run(&["simulate", "--policy", "llm"]).status.code(),
        Some(3)
    );
}
