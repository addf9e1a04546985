//! Run configuration: one TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use dao_align_core::http::HttpConfig;
use dao_align_core::ingest::{IngestConfig, MarketEndpoints, SpaceSource};
use dao_align_core::model::AbstainLabels;
use dao_align_core::policy::llm::LlmConfig;
use dao_align_core::policy::{Baseline, ContextOptions, CutoffMode};
use dao_align_core::report::ReportOptions;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub contested: f64,
    pub min_participation: usize,
    pub window_days: u32,
    pub exclude_ties: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        let r = ReportOptions::default();
        Thresholds {
            contested: r.contested_threshold,
            min_participation: r.min_participation,
            window_days: r.window_days,
            exclude_ties: r.exclude_ties,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub snapshot_url: String,
    pub market: MarketEndpoints,
    pub spaces: Vec<SpaceSource>,
    pub forum_file: Option<PathBuf>,
    pub labels_file: Option<PathBuf>,
    pub fetch_index: bool,
    pub http: HttpConfig,
}

impl Default for IngestSection {
    fn default() -> Self {
        let d = IngestConfig::default();
        IngestSection {
            snapshot_url: d.snapshot_url,
            market: d.market,
            spaces: d.spaces,
            forum_file: None,
            labels_file: None,
            fetch_index: d.fetch_index,
            http: d.http,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    /// Baseline names, or the `[llm]` id.
    pub policies: Vec<String>,
    pub cutoffs: Vec<CutoffMode>,
    pub similar_k: usize,
    pub abstain_labels: Vec<String>,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            policies: Baseline::ALL
                .iter()
                .map(|b| b.as_str().to_string())
                .collect(),
            cutoffs: vec![CutoffMode::ExAnte, CutoffMode::ExPost],
            similar_k: ContextOptions::default().similar_k,
            abstain_labels: AbstainLabels::default().0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub id: String,
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub http: HttpConfig,
}

impl Default for LlmSection {
    fn default() -> Self {
        let d = LlmConfig::default();
        LlmSection {
            id: "llm".into(),
            base_url: d.base_url,
            model: d.model,
            api_key_env: d.api_key_env,
            http: d.http,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub thresholds: Thresholds,
    pub ingest: IngestSection,
    pub policy: PolicySection,
    pub llm: LlmSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_root: "data".into(),
            output_dir: "out".into(),
            seed: 0,
            workers: 0,
            thresholds: Thresholds::default(),
            ingest: IngestSection::default(),
            policy: PolicySection::default(),
            llm: LlmSection::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads `path`; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        rebase(base, &mut cfg.dataset_root);
        rebase(base, &mut cfg.output_dir);
        for p in [&mut cfg.ingest.forum_file, &mut cfg.ingest.labels_file]
            .into_iter()
            .flatten()
        {
            rebase(base, p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let t = &self.thresholds;
        let bad = |m: String| Err(Failure::Config(m));
        if !(t.contested > 0.0 && t.contested <= 1.0) {
            return bad(format!(
                "contested threshold {} is outside (0, 1]",
                t.contested
            ));
        }
        if t.min_participation == 0 {
            return bad("min participation must be positive".into());
        }
        if t.window_days == 0 {
            return bad("window must be at least one day".into());
        }
        if self.policy.cutoffs.is_empty() {
            return bad("no cutoff selected".into());
        }
        for id in &self.policy.policies {
            if *id != self.llm.id && id.parse::<Baseline>().is_err() {
                return bad(format!(
                    "unknown policy {id:?}; expected a baseline or {:?}",
                    self.llm.id
                ));
            }
        }
        for p in [&self.ingest.forum_file, &self.ingest.labels_file]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn report_options(&self) -> ReportOptions {
        let t = &self.thresholds;
        ReportOptions {
            contested_threshold: t.contested,
            min_participation: t.min_participation,
            window_days: t.window_days,
            exclude_ties: t.exclude_ties,
        }
    }

    pub fn context_options(&self) -> ContextOptions {
        ContextOptions {
            similar_k: self.policy.similar_k,
            window_days: self.thresholds.window_days,
        }
    }

    pub fn abstain(&self) -> AbstainLabels {
        AbstainLabels(self.policy.abstain_labels.clone())
    }

    pub fn ingest_config(&self) -> IngestConfig {
        let s = &self.ingest;
        IngestConfig {
            snapshot_url: s.snapshot_url.clone(),
            market: s.market.clone(),
            spaces: s.spaces.clone(),
            forum_file: s.forum_file.clone(),
            labels_file: s.labels_file.clone(),
            window_days: self.thresholds.window_days,
            fetch_index: s.fetch_index,
            http: s.http.clone(),
        }
    }

    pub fn llm_config(&self) -> LlmConfig {
        LlmConfig {
            base_url: self.llm.base_url.clone(),
            model: self.llm.model.clone(),
            api_key_env: self.llm.api_key_env.clone(),
            http: self.llm.http.clone(),
        }
    }
}
