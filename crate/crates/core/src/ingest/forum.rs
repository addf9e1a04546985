//! Forum signals from a user-supplied file, plus a small lexicon scorer used
//! to turn raw comment text into scores for fixtures.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::model::{CommentCounts, ForumComment, ForumSignal, Polarity, Timestamp};
use crate::store::read_jsonl;

const POSITIVE: &[&str] = &[
    "agree",
    "approve",
    "benefit",
    "excellent",
    "good",
    "great",
    "improve",
    "like",
    "positive",
    "strong",
    "support",
    "useful",
    "yes",
];

const NEGATIVE: &[&str] = &[
    "against", "bad", "concern", "disagree", "harm", "negative", "no", "oppose", "poor", "reject",
    "risk", "weak", "worse",
];

/// `(positive - negative) / (positive + negative)` word hits, or 0 without hits.
pub fn lexicon_score(text: &str) -> f64 {
    let (mut pos, mut neg) = (0usize, 0usize);
    for word in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        let w = word.to_lowercase();
        if POSITIVE.contains(&w.as_str()) {
            pos += 1;
        } else if NEGATIVE.contains(&w.as_str()) {
            neg += 1;
        }
    }
    if pos + neg == 0 {
        0.0
    } else {
        (pos as f64 - neg as f64) / (pos + neg) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawComment {
    pub timestamp: Timestamp,
    pub text: String,
}

/// Unscored thread as it may appear in a forum file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawThread {
    pub proposal_id: String,
    pub url: String,
    pub comments: Vec<RawComment>,
}

/// Scores each comment with the lexicon. Sentiment is the mean comment score
/// and stance the share-weighted balance of positive over negative comments.
pub fn score_thread(thread: &RawThread) -> ForumSignal {
    let mut counts = CommentCounts::default();
    let mut comments = Vec::with_capacity(thread.comments.len());
    let mut total = 0.0;
    for c in &thread.comments {
        let score = lexicon_score(&c.text);
        total += score;
        let polarity = Polarity::from_score(score);
        counts.add(polarity);
        comments.push(ForumComment {
            timestamp: c.timestamp,
            polarity,
        });
    }
    let n = thread.comments.len();
    let (sentiment, stance) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            total / n as f64,
            (counts.positive as f64 - counts.negative as f64) / n as f64,
        )
    };
    ForumSignal {
        proposal_id: thread.proposal_id.clone(),
        url: thread.url.clone(),
        stance_score: stance,
        sentiment,
        comment_counts: counts,
        comments,
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ForumLine {
    Scored(ForumSignal),
    Raw(RawThread),
}

/// Reads a JSON-lines forum file whose lines are either scored signals or
/// raw threads; raw threads are scored with the lexicon.
pub fn load_forum_file(path: &Path) -> Result<Vec<ForumSignal>, IngestError> {
    let lines: Vec<ForumLine> = read_jsonl(path).map_err(|e| IngestError::Input(e.to_string()))?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, line)| {
            let signal = match line {
                ForumLine::Scored(s) => s,
                ForumLine::Raw(r) => score_thread(&r),
            };
            signal
                .validate()
                .map(|_| signal)
                .map_err(|e| IngestError::Input(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_examples() {
        assert_eq!(lexicon_score("I strongly support this, great work"), 1.0);
        assert_eq!(lexicon_score("Too much risk, I oppose"), -1.0);
        assert_eq!(lexicon_score("support it despite the risk"), 0.0);
        assert_eq!(lexicon_score("neutral words only"), 0.0);
    }

    #[test]
    fn scored_thread_validates() {
        let t = RawThread {
            proposal_id: "p".into(),
            url: "u".into(),
            comments: vec![
                RawComment {
                    timestamp: 1,
                    text: "great".into(),
                },
                RawComment {
                    timestamp: 2,
                    text: "bad bad".into(),
                },
                RawComment {
                    timestamp: 3,
                    text: "hello".into(),
                },
            ],
        };
        let s = score_thread(&t);
        s.validate().unwrap();
        assert_eq!(
            s.comment_counts,
            CommentCounts {
                positive: 1,
                negative: 1,
                neutral: 1
            }
        );
        assert_eq!(s.sentiment, 0.0);
        assert_eq!(s.stance_score, 0.0);
    }

    #[test]
    fn mixed_forum_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forum.jsonl");
        let scored = r#"{"proposal_id":"a","url":"u1","stance_score":0.5,"sentiment":0.2,"comment_counts":{"positive":3,"negative":1,"neutral":0}}"#;
        let raw = r#"{"proposal_id":"b","url":"u2","comments":[{"timestamp":5,"text":"good"}]}"#;
        std::fs::write(&path, format!("{scored}\n{raw}\n")).unwrap();
        let signals = load_forum_file(&path).unwrap();
        assert_eq!(signals.len(), 2);
        assert_eq!(signals[1].sentiment, 1.0);
    }
}
