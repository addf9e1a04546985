//! Chat-completion backed policy with reply parsing and an audit trail.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::{reask_message, render_prompt};
use super::{DecisionContext, Policy, PolicyDecision, PolicyError};
use crate::http::{HttpClient, HttpConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, PolicyError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub http: HttpConfig,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            http: HttpConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct HttpChatTransport {
    client: HttpClient,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpChatTransport {
    pub fn new(config: &LlmConfig) -> Self {
        HttpChatTransport {
            client: HttpClient::new(config.http.clone()),
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            api_key: config
                .api_key_env
                .as_deref()
                .and_then(|k| std::env::var(k).ok())
                .filter(|k| !k.is_empty()),
        }
    }
}

impl ChatTransport for HttpChatTransport {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, PolicyError> {
        let body = json!({ "model": self.model, "messages": messages });
        let auth = self.api_key.as_ref().map(|k| format!("Bearer {k}"));
        let headers: Vec<(&str, &str)> =
            auth.iter().map(|a| ("Authorization", a.as_str())).collect();
        let reply = self
            .client
            .post_json(&self.url, &body, &headers)
            .map_err(|e| PolicyError::SourceUnavailable(e.to_string()))?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                PolicyError::SourceUnavailable(format!(
                    "{}: reply has no message content",
                    self.url
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub proposal_id: String,
    pub policy_id: String,
    pub prompt: String,
    pub raw_reply: String,
    /// One-based option parsed from the reply, if any.
    pub parsed_option: Option<usize>,
    pub timestamp: String,
}

/// Append-only JSON-lines audit file with a single writer.
#[derive(Debug)]
pub struct AuditLog {
    file: Mutex<File>,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog {
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, record: &AuditRecord) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(std::io::Error::other)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(&line)?;
        file.flush()
    }
}

/// Resolves a reply fragment to a zero-based choice: exact label, then
/// case-insensitive, then a case-insensitive prefix of exactly one label.
pub fn match_label(candidate: &str, choices: &[String]) -> Option<usize> {
    let c = candidate
        .trim()
        .trim_matches(|ch: char| ch == '"' || ch == '\'' || ch == '`' || ch == '*');
    let c = c.trim().trim_end_matches('.').trim();
    if c.is_empty() {
        return None;
    }
    if let Some(i) = choices.iter().position(|l| l.trim() == c) {
        return Some(i);
    }
    let lower = c.to_lowercase();
    if let Some(i) = choices
        .iter()
        .position(|l| l.trim().to_lowercase() == lower)
    {
        return Some(i);
    }
    let mut prefixed = choices
        .iter()
        .enumerate()
        .filter(|(_, l)| l.trim().to_lowercase().starts_with(&lower));
    match (prefixed.next(), prefixed.next()) {
        (Some((i, _)), None) => Some(i),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReply {
    pub index: usize,
    pub justification: String,
}

fn json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end <= start {
        return None;
    }
    match serde_json::from_str::<Value>(&text[start..=end]).ok()? {
        Value::Object(map) => Some(map),
        _ => None,
    }
}

fn from_json(text: &str, choices: &[String]) -> Option<ParsedReply> {
    let map = json_object(text)?;
    let index = match map.get("selected_option")? {
        Value::String(s) => match_label(s, choices),
        Value::Number(n) => n
            .as_u64()
            .map(|k| k as usize)
            .filter(|k| (1..=choices.len()).contains(k))
            .map(|k| k - 1),
        _ => None,
    }?;
    let justification = map
        .get("justification")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .trim()
        .to_string();
    Some(ParsedReply {
        index,
        justification,
    })
}

fn from_lines(text: &str, choices: &[String]) -> Option<ParsedReply> {
    let mut index = None;
    let mut justification = String::new();
    for line in text.lines() {
        let cleaned = line.trim().trim_start_matches(['-', '*', '#', ' ']);
        let Some((key, value)) = cleaned.split_once(':') else {
            continue;
        };
        let key = key
            .trim()
            .trim_matches('*')
            .trim()
            .to_lowercase()
            .replace(' ', "_");
        match key.as_str() {
            "selected_option" if index.is_none() => index = match_label(value, choices),
            "justification" => justification = value.trim().to_string(),
            _ => {}
        }
    }
    index.map(|index| ParsedReply {
        index,
        justification,
    })
}

/// Extracts the chosen option from a model reply. A missing justification is
/// replaced by the raw reply so decisions always carry text.
pub fn parse_reply(text: &str, choices: &[String]) -> Option<ParsedReply> {
    let mut parsed = from_json(text, choices)
        .or_else(|| from_lines(text, choices))
        .or_else(|| {
            match_label(text, choices).map(|index| ParsedReply {
                index,
                justification: String::new(),
            })
        })?;
    if parsed.justification.is_empty() {
        parsed.justification = format!("Model reply: {}", text.trim());
    }
    Some(parsed)
}

pub struct LlmPolicy {
    id: String,
    transport: Box<dyn ChatTransport>,
    audit: Option<AuditLog>,
}

impl LlmPolicy {
    pub fn new(id: impl Into<String>, transport: Box<dyn ChatTransport>) -> Self {
        LlmPolicy {
            id: id.into(),
            transport,
            audit: None,
        }
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    fn record(
        &self,
        ctx: &DecisionContext,
        prompt: String,
        raw: &str,
        parsed: Option<usize>,
    ) -> Result<(), PolicyError> {
        if let Some(log) = &self.audit {
            log.append(&AuditRecord {
                proposal_id: ctx.proposal.proposal_id.clone(),
                policy_id: self.id.clone(),
                prompt,
                raw_reply: raw.to_string(),
                parsed_option: parsed.map(|i| i + 1),
                timestamp: chrono::Utc::now().to_rfc3339(),
            })?;
        }
        Ok(())
    }
}

impl Policy for LlmPolicy {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn decide(&self, ctx: &DecisionContext) -> Result<PolicyDecision, PolicyError> {
        let choices = &ctx.proposal.choices;
        let prompt = render_prompt(ctx);
        let mut messages = vec![
            ChatMessage::new("system", prompt.system.clone()),
            ChatMessage::new("user", prompt.user.clone()),
        ];
        let first = self.transport.complete(&messages)?;
        let parsed = parse_reply(&first, choices);
        self.record(
            ctx,
            prompt.combined(),
            &first,
            parsed.as_ref().map(|p| p.index),
        )?;
        let parsed = match parsed {
            Some(p) => p,
            None => {
                let reask = reask_message(choices);
                messages.push(ChatMessage::new("assistant", first.clone()));
                messages.push(ChatMessage::new("user", reask.clone()));
                let second = self.transport.complete(&messages)?;
                let parsed = parse_reply(&second, choices);
                self.record(ctx, reask, &second, parsed.as_ref().map(|p| p.index))?;
                parsed.ok_or_else(|| PolicyError::PolicyFailure {
                    policy: self.id.clone(),
                    proposal_id: ctx.proposal.proposal_id.clone(),
                    reason: format!("no choice label in reply after re-ask: {:?}", second.trim()),
                })?
            }
        };
        Ok(PolicyDecision::new(
            ctx,
            &self.id,
            parsed.index,
            parsed.justification,
            false,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::model::Proposal;
    use crate::policy::{build_decision_context, ContextOptions, CutoffMode};
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn label_matching_order() {
        let c = labels(&["For", "Against", "Abstain"]);
        assert_eq!(match_label("Against", &c), Some(1));
        assert_eq!(match_label("against.", &c), Some(1));
        assert_eq!(match_label("\"FOR\"", &c), Some(0));
        assert_eq!(match_label("Ag", &c), Some(1));
        assert_eq!(match_label("A", &c), None);
        assert_eq!(match_label("maybe", &c), None);
        assert_eq!(match_label("", &c), None);
        let c = labels(&["yes", "Yes"]);
        assert_eq!(match_label("Yes", &c), Some(1));
    }

    #[test]
    fn reply_shapes() {
        let c = labels(&["For", "Against"]);
        let fenced =
            "```json\n{\"selected_option\": \"Against\", \"justification\": \"risky\"}\n```";
        assert_eq!(
            parse_reply(fenced, &c),
            Some(ParsedReply {
                index: 1,
                justification: "risky".into()
            })
        );
        let lines = "**Selected option**: For\nJustification: growth";
        assert_eq!(parse_reply(lines, &c).unwrap().index, 0);
        assert_eq!(parse_reply(lines, &c).unwrap().justification, "growth");
        let bare = parse_reply("Against", &c).unwrap();
        assert_eq!(bare.index, 1);
        assert_eq!(bare.justification, "Model reply: Against");
        assert_eq!(
            parse_reply("{\"selected_option\": 2}", &c).unwrap().index,
            1
        );
        assert_eq!(parse_reply("I cannot decide", &c), None);
    }

    struct Scripted {
        replies: Vec<&'static str>,
        calls: AtomicUsize,
    }

    impl ChatTransport for Scripted {
        fn complete(&self, messages: &[ChatMessage]) -> Result<String, PolicyError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n > 0 {
                assert!(messages
                    .last()
                    .unwrap()
                    .content
                    .starts_with("Reply with one choice label verbatim"));
            }
            Ok(self.replies[n.min(self.replies.len() - 1)].to_string())
        }
    }

    fn context() -> DecisionContext {
        let p = Proposal {
            proposal_id: "p".into(),
            space_id: "s".into(),
            title: "t".into(),
            body: None,
            choices: labels(&["For", "Against"]),
            created_at: 0,
            start: 10,
            end: 100,
            calls_for_change: None,
            category: None,
        };
        let ds = Dataset::new(vec![p], vec![], vec![], BTreeMap::new());
        build_decision_context(&ds, "p", CutoffMode::ExAnte, &ContextOptions::default()).unwrap()
    }

    #[test]
    fn reask_then_fail_and_audit() {
        let dir = tempfile::tempdir().unwrap();
        let audit_path = dir.path().join("audit.jsonl");
        let policy = LlmPolicy::new(
            "llm",
            Box::new(Scripted {
                replies: vec!["gibberish", "still gibberish"],
                calls: AtomicUsize::new(0),
            }),
        )
        .with_audit(AuditLog::open(&audit_path).unwrap());
        assert!(matches!(
            policy.decide(&context()),
            Err(PolicyError::PolicyFailure { .. })
        ));
        let log = std::fs::read_to_string(&audit_path).unwrap();
        assert_eq!(log.lines().count(), 2);

        let policy = LlmPolicy::new(
            "llm",
            Box::new(Scripted {
                replies: vec!["hmm", "Against"],
                calls: AtomicUsize::new(0),
            }),
        );
        let d = policy.decide(&context()).unwrap();
        assert_eq!(d.selected_option, 2);
        assert!(!d.justification.is_empty());
    }
}
