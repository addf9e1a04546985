//! JSON-lines dataset store.
//!
//! Layout under the root:
//!
//! ```text
//! manifest.json
//! spaces/<space>/proposals.jsonl
//! spaces/<space>/votes.jsonl
//! spaces/<space>/forum.jsonl
//! spaces/<space>/market.jsonl
//! ```
//!
//! One object per line, UTF-8, fields in declaration order. Rewriting an
//! unchanged dataset leaves every file, including the manifest, byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::model::{ForumSignal, MarketSeries, Proposal, VoteRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}:{line}: {message}")]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub name: String,
    pub endpoint: String,
    pub fetched_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub files: Vec<FileEntry>,
    pub sources: Vec<SourceEntry>,
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serialization is infallible");
        out.push(b'\n');
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| StoreError::Load {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Directory name for a space id; anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn space_dir_name(space_id: &str) -> String {
    let name: String = space_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if name.chars().all(|c| c == '.') {
        format!("_{name}")
    } else {
        name
    }
}

#[derive(Debug, Clone)]
pub struct DatasetStore {
    root: PathBuf,
}

impl DatasetStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn exists(&self) -> bool {
        self.root.join(MANIFEST_FILE).is_file()
    }

    pub fn read_manifest(&self) -> Result<Manifest, StoreError> {
        let path = self.root.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Manifest(e.to_string()))
    }

    /// Persists `dataset`, replacing whatever the store held. Source entries
    /// keep their previous fetch time when the data files come out unchanged.
    pub fn write(
        &self,
        dataset: &Dataset,
        sources: &[SourceEntry],
    ) -> Result<Manifest, StoreError> {
        let mut files: BTreeMap<String, (usize, Vec<u8>)> = BTreeMap::new();
        for space in dataset.spaces() {
            let dir = format!("spaces/{}", space_dir_name(space));
            let proposals: Vec<&Proposal> = dataset.proposals_in(space).collect();
            let votes: Vec<&VoteRecord> = proposals
                .iter()
                .flat_map(|p| dataset.votes_for(&p.proposal_id))
                .collect();
            let forum: Vec<&ForumSignal> = proposals
                .iter()
                .flat_map(|p| dataset.forum_for(&p.proposal_id))
                .collect();
            let market: &[MarketSeries] = dataset.market_for(space);
            files.insert(
                format!("{dir}/proposals.jsonl"),
                (proposals.len(), to_jsonl(&proposals)),
            );
            files.insert(
                format!("{dir}/votes.jsonl"),
                (votes.len(), to_jsonl(&votes)),
            );
            files.insert(
                format!("{dir}/forum.jsonl"),
                (forum.len(), to_jsonl(&forum)),
            );
            files.insert(
                format!("{dir}/market.jsonl"),
                (market.len(), to_jsonl(market)),
            );
        }

        let entries: Vec<FileEntry> = files
            .iter()
            .map(|(path, (records, bytes))| FileEntry {
                path: path.clone(),
                records: *records,
                sha256: sha256_hex(bytes),
            })
            .collect();

        let previous = if self.exists() {
            self.read_manifest().ok()
        } else {
            None
        };
        let sources = match &previous {
            Some(prev) if prev.files == entries => sources
                .iter()
                .map(|s| {
                    prev.sources
                        .iter()
                        .find(|p| p.name == s.name && p.endpoint == s.endpoint)
                        .cloned()
                        .unwrap_or_else(|| s.clone())
                })
                .collect(),
            _ => sources.to_vec(),
        };
        let manifest = Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            files: entries,
            sources,
        };

        for (path, (_, bytes)) in &files {
            let full = self.root.join(path);
            if fs::read(&full).ok().as_deref() != Some(bytes.as_slice()) {
                write_atomic(&full, bytes)?;
            }
        }
        if let Some(prev) = &previous {
            for stale in prev.files.iter().filter(|f| !files.contains_key(&f.path)) {
                let full = self.root.join(&stale.path);
                if full.is_file() {
                    fs::remove_file(&full).map_err(io_err(&full))?;
                }
            }
        }
        let mut bytes =
            serde_json::to_vec_pretty(&manifest).expect("manifest serialization is infallible");
        bytes.push(b'\n');
        let manifest_path = self.root.join(MANIFEST_FILE);
        if fs::read(&manifest_path).ok().as_deref() != Some(bytes.as_slice()) {
            write_atomic(&manifest_path, &bytes)?;
        }
        Ok(manifest)
    }

    /// Loads and validates every record listed in the manifest.
    pub fn load(&self) -> Result<Dataset, StoreError> {
        let manifest = self.read_manifest()?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(StoreError::Manifest(format!(
                "unsupported schema version {}",
                manifest.schema_version
            )));
        }
        let mut proposals: Vec<Proposal> = Vec::new();
        let mut votes: Vec<(PathBuf, usize, VoteRecord)> = Vec::new();
        let mut forum: Vec<(PathBuf, usize, ForumSignal)> = Vec::new();
        let mut market: BTreeMap<String, Vec<MarketSeries>> = BTreeMap::new();
        let mut proposal_lines: Vec<(PathBuf, usize)> = Vec::new();

        for entry in &manifest.files {
            let path = self.root.join(&entry.path);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(StoreError::Manifest(format!(
                    "{} does not match its recorded hash",
                    entry.path
                )));
            }
            let file_name = Path::new(&entry.path)
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            match file_name {
                "proposals.jsonl" => {
                    for (i, p) in read_jsonl::<Proposal>(&path)?.into_iter().enumerate() {
                        proposal_lines.push((path.clone(), i + 1));
                        proposals.push(p);
                    }
                }
                "votes.jsonl" => votes.extend(
                    read_jsonl::<VoteRecord>(&path)?
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| (path.clone(), i + 1, v)),
                ),
                "forum.jsonl" => forum.extend(
                    read_jsonl::<ForumSignal>(&path)?
                        .into_iter()
                        .enumerate()
                        .map(|(i, f)| (path.clone(), i + 1, f)),
                ),
                "market.jsonl" => {
                    let space_dir = Path::new(&entry.path)
                        .parent()
                        .and_then(|p| p.file_name())
                        .and_then(|s| s.to_str())
                        .unwrap_or_default()
                        .to_string();
                    let series = read_jsonl::<MarketSeries>(&path)?;
                    for (i, s) in series.iter().enumerate() {
                        s.validate().map_err(|e| StoreError::Load {
                            path: path.clone(),
                            line: i + 1,
                            message: e.to_string(),
                        })?;
                    }
                    if !series.is_empty() {
                        market.insert(space_dir, series);
                    }
                }
                other => return Err(StoreError::Manifest(format!("unexpected file {other}"))),
            }
        }

        let mut by_id: BTreeMap<&str, &Proposal> = BTreeMap::new();
        for (p, (path, line)) in proposals.iter().zip(&proposal_lines) {
            let fail = |message: String| StoreError::Load {
                path: path.clone(),
                line: *line,
                message,
            };
            p.validate().map_err(|e| fail(e.to_string()))?;
            if by_id.insert(&p.proposal_id, p).is_some() {
                return Err(fail(format!("duplicate proposal {}", p.proposal_id)));
            }
        }
        // Market series are filed by directory name; map them back to space ids.
        let mut dir_to_space: BTreeMap<String, String> = BTreeMap::new();
        for p in &proposals {
            dir_to_space.insert(space_dir_name(&p.space_id), p.space_id.clone());
        }
        let market = market
            .into_iter()
            .map(|(dir, s)| (dir_to_space.get(&dir).cloned().unwrap_or(dir), s))
            .collect();

        let mut seen = std::collections::BTreeSet::new();
        for (path, line, v) in &votes {
            let fail = |message: String| StoreError::Load {
                path: path.clone(),
                line: *line,
                message,
            };
            let p = by_id.get(v.proposal_id.as_str()).ok_or_else(|| {
                fail(format!(
                    "vote references unknown proposal {}",
                    v.proposal_id
                ))
            })?;
            v.validate(p).map_err(|e| fail(e.to_string()))?;
            if !seen.insert((v.proposal_id.as_str(), v.voter.as_str())) {
                return Err(fail(format!(
                    "duplicate ballot by {} on {}",
                    v.voter, v.proposal_id
                )));
            }
        }
        for (path, line, f) in &forum {
            f.validate().map_err(|e| StoreError::Load {
                path: path.clone(),
                line: *line,
                message: e.to_string(),
            })?;
        }

        Ok(Dataset::new(
            proposals,
            votes.into_iter().map(|(_, _, v)| v),
            forum.into_iter().map(|(_, _, f)| f),
            market,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChoiceExpr, DailySample, MarketMetric};

    fn sample() -> Dataset {
        let p = Proposal {
            proposal_id: "0xabc".into(),
            space_id: "aave.eth".into(),
            title: "Raise LTV".into(),
            body: Some("body".into()),
            choices: vec!["For".into(), "Against".into()],
            created_at: 100,
            start: 200,
            end: 500,
            calls_for_change: Some(true),
            category: None,
        };
        let votes = vec![
            VoteRecord {
                proposal_id: "0xabc".into(),
                voter: "0x1".into(),
                choice: ChoiceExpr::Single(1),
                vp: 12.5,
                timestamp: 300,
            },
            VoteRecord {
                proposal_id: "0xabc".into(),
                voter: "0x2".into(),
                choice: ChoiceExpr::Weighted([(1, 1.0), (2, 3.0)].into()),
                vp: 0.1 + 0.2,
                timestamp: 250,
            },
        ];
        let market = BTreeMap::from([(
            "aave.eth".to_string(),
            vec![MarketSeries {
                protocol: "aave".into(),
                metric: MarketMetric::Tvl,
                samples: vec![
                    DailySample { day: 1, value: 2.5 },
                    DailySample {
                        day: 3,
                        value: 1e12,
                    },
                ],
            }],
        )]);
        Dataset::new(vec![p], votes, vec![], market)
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let store = DatasetStore::new(dir.path());
        let ds = sample();
        store.write(&ds, &[]).unwrap();
        assert_eq!(store.load().unwrap(), ds);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let store = DatasetStore::new(dir.path());
        let src = |t: &str| SourceEntry {
            name: "snapshot".into(),
            endpoint: "http://hub".into(),
            fetched_at: t.into(),
        };
        store.write(&sample(), &[src("t1")]).unwrap();
        let before = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        store.write(&sample(), &[src("t2")]).unwrap();
        assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), before);
    }

    #[test]
    fn manifest_lists_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let store = DatasetStore::new(dir.path());
        let manifest = store.write(&sample(), &[]).unwrap();
        let mut on_disk: Vec<String> = walk(dir.path())
            .into_iter()
            .filter(|p| p != MANIFEST_FILE)
            .collect();
        on_disk.sort();
        let listed: Vec<String> = manifest.files.iter().map(|f| f.path.clone()).collect();
        assert_eq!(on_disk, listed);
    }

    fn walk(root: &Path) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for e in fs::read_dir(dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push(
                        p.strip_prefix(root)
                            .unwrap()
                            .to_string_lossy()
                            .replace('\\', "/"),
                    );
                }
            }
        }
        out
    }

    #[test]
    fn truncated_line_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let store = DatasetStore::new(dir.path());
        store.write(&sample(), &[]).unwrap();
        let votes = dir.path().join("spaces/aave.eth/votes.jsonl");
        let text = fs::read_to_string(&votes).unwrap();
        let truncated = &text[..text.len() - 10];
        fs::write(&votes, truncated).unwrap();
        // Re-hash so the manifest check passes and parsing is what fails.
        let mut m = store.read_manifest().unwrap();
        for f in &mut m.files {
            if f.path.ends_with("votes.jsonl") {
                f.sha256 = sha256_hex(truncated.as_bytes());
            }
        }
        fs::write(
            dir.path().join(MANIFEST_FILE),
            serde_json::to_vec(&m).unwrap(),
        )
        .unwrap();
        match store.load() {
            Err(StoreError::Load { path, line, .. }) => {
                assert!(path.ends_with("votes.jsonl"));
                assert_eq!(line, 2);
            }
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_vote_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let store = DatasetStore::new(dir.path());
        store.write(&sample(), &[]).unwrap();
        let votes = dir.path().join("spaces/aave.eth/votes.jsonl");
        let text = fs::read_to_string(&votes)
            .unwrap()
            .replace("\"timestamp\":300", "\"timestamp\":900");
        fs::write(&votes, &text).unwrap();
        let mut m = store.read_manifest().unwrap();
        for f in &mut m.files {
            if f.path.ends_with("votes.jsonl") {
                f.sha256 = sha256_hex(text.as_bytes());
            }
        }
        fs::write(
            dir.path().join(MANIFEST_FILE),
            serde_json::to_vec(&m).unwrap(),
        )
        .unwrap();
        assert!(matches!(store.load(), Err(StoreError::Load { .. })));
    }

    #[test]
    fn space_names_are_sanitized() {
        assert_eq!(space_dir_name("balancer.eth"), "balancer.eth");
        assert_eq!(space_dir_name("../evil/x"), ".._evil_x");
        assert_eq!(space_dir_name(".."), "_..");
    }
}
