//! Sentence-level feedback oracle: prompt templates, a deterministic mock
//! judge for offline runs, and a JSON-over-HTTP remote judge client.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::ObjectId;
use crate::error::{Error, Result};
use crate::feedback::extract_objects;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub candidate: String,
    pub reference: String,
    pub template_id: String,
    /// (candidate, reference, score) exemplar triples for few-shot context
    pub exemplars: Vec<(String, String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub score: f64,
    pub raw: String,
    pub latency_ms: u64,
    /// the backend returned an out-of-range value that was clamped
    pub clamped: bool,
}

/// Instruction template with `{exemplars}`, `{candidate}`, `{reference}`
/// slots (each present exactly once).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub instruction: String,
}

impl PromptTemplate {
    pub fn validate(&self, slots: &[&str]) -> Result<()> {
        for slot in slots {
            let marker = format!("{{{slot}}}");
            if self.instruction.matches(&marker).count() != 1 {
                return Err(Error::InvalidArgument(format!(
                    "template {} must contain slot {marker} exactly once",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn render(&self, fills: &[(&str, String)]) -> String {
        let mut out = self.instruction.clone();
        for (slot, value) in fills {
            out = out.replace(&format!("{{{slot}}}"), value);
        }
        out
    }
}

/// Few-shot scoring template for sentence-level hallucination feedback.
pub fn feedback_template() -> PromptTemplate {
    PromptTemplate {
        id: "sentence-feedback".into(),
        instruction: "You compare a candidate image caption against a reference caption and rate \
how semantically consistent the candidate is with the reference, paying particular attention to \
objects that the candidate mentions but the reference does not support. Reply with a single score \
between 0 and 1, where 1 means fully consistent and 0 means contradictory or fabricated content.\n\n\
Examples:\n{exemplars}\n\nReference: {reference}\nCandidate: {candidate}\nScore:"
            .into(),
    }
}

/// Template for merging several short captions into one longer caption.
pub fn synthesis_template() -> PromptTemplate {
    PromptTemplate {
        id: "caption-synthesis".into(),
        instruction: "Combine the following short captions of one image into a single longer \
caption that mentions every object exactly as described, without inventing new objects.\n\n\
Short captions:\n{captions}\n\nLong caption:"
            .into(),
    }
}

/// Placeholder exemplars; callers may substitute their own annotated pairs.
pub fn default_exemplars() -> Vec<(String, String, f64)> {
    vec![
        ("a red cat and a blue dog .".into(), "a red cat and a blue dog .".into(), 1.0),
        ("a red cat and a blue dog .".into(), "a red cat .".into(), 0.5),
        ("a green boat .".into(), "a red cat .".into(), 0.0),
    ]
}

pub trait SentenceJudge: Sync {
    /// Score the candidate in [0, 1]; `truth` is the ground-truth object set
    /// of the underlying scene (used only by the mock backend).
    fn score_sentence(&self, req: &JudgeRequest, truth: &BTreeSet<ObjectId>) -> Result<JudgeResponse>;

    /// Merge short captions into one longer caption.
    fn synthesize_caption(&self, short_captions: &[String]) -> Result<String>;
}

/// Deterministic stand-in for a remote judge:
/// `score = coverage * (1 - 0.5 * hallucination_rate)`, clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct MockJudge {
    pub lexicon: BTreeMap<String, ObjectId>,
}

impl MockJudge {
    pub fn new(lexicon: BTreeMap<String, ObjectId>) -> Self {
        MockJudge { lexicon }
    }

    pub fn mock_score(&self, candidate: &str, truth: &BTreeSet<ObjectId>) -> f64 {
        let mentioned = extract_objects(candidate, &self.lexicon).objects;
        let coverage = if truth.is_empty() {
            1.0
        } else {
            mentioned.intersection(truth).count() as f64 / truth.len() as f64
        };
        let hallucinated = mentioned.difference(truth).count() as f64;
        let rate = hallucinated / (mentioned.len().max(1) as f64);
        (coverage * (1.0 - 0.5 * rate)).clamp(0.0, 1.0)
    }
}

impl SentenceJudge for MockJudge {
    fn score_sentence(&self, req: &JudgeRequest, truth: &BTreeSet<ObjectId>) -> Result<JudgeResponse> {
        let start = Instant::now();
        let score = if req.candidate.trim().is_empty() {
            0.0
        } else if req.candidate == req.reference {
            1.0
        } else {
            self.mock_score(&req.candidate, truth)
        };
        Ok(JudgeResponse {
            score,
            raw: format!("{score}"),
            latency_ms: start.elapsed().as_millis() as u64,
            clamped: false,
        })
    }

    fn synthesize_caption(&self, short_captions: &[String]) -> Result<String> {
        if short_captions.is_empty() {
            return Err(Error::InvalidArgument("no captions to synthesize".into()));
        }
        if short_captions.len() == 1 {
            return Ok(short_captions[0].clone());
        }
        let stripped: Vec<String> = short_captions
            .iter()
            .map(|c| c.trim().trim_end_matches('.').trim().to_string())
            .collect();
        Ok(format!("{} .", stripped.join(" and ")))
    }
}

/// Remote endpoint configuration, normally read from the environment.
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub url: String,
    pub token: Option<String>,
    pub model: String,
    pub attempts: u32,
    pub backoff: Duration,
    /// bounded concurrent in-flight requests during batch scoring
    pub max_in_flight: usize,
}

pub const ENV_URL: &str = "VLMLAB_JUDGE_URL";
pub const ENV_TOKEN: &str = "VLMLAB_JUDGE_TOKEN";
pub const ENV_MODEL: &str = "VLMLAB_JUDGE_MODEL";

impl RemoteConfig {
    pub fn from_env() -> Result<Self> {
        let url = std::env::var(ENV_URL)
            .map_err(|_| Error::InvalidArgument(format!("{ENV_URL} not set")))?;
        Ok(RemoteConfig {
            url,
            token: std::env::var(ENV_TOKEN).ok(),
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4".into()),
            attempts: 3,
            backoff: Duration::from_millis(250),
            max_in_flight: 4,
        })
    }
}

/// Chat-completion-style JSON client with retry/backoff and score clamping.
#[derive(Debug, Clone)]
pub struct RemoteJudge {
    pub config: RemoteConfig,
    template: PromptTemplate,
    exemplars: Vec<(String, String, f64)>,
}

impl RemoteJudge {
    pub fn new(config: RemoteConfig) -> Self {
        RemoteJudge { config, template: feedback_template(), exemplars: default_exemplars() }
    }

    fn post(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut last_err = String::new();
        for attempt in 0..self.config.attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
            }
            let mut req = ureq::post(&self.config.url);
            if let Some(token) = &self.config.token {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
            match req.send_json(body.clone()) {
                Ok(resp) => return resp.into_string().map_err(Error::Io),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::JudgeUnavailable(format!(
            "{} transport failures, last: {last_err}",
            self.config.attempts
        )))
    }

    pub fn remote_score(&self, req: &JudgeRequest) -> Result<JudgeResponse> {
        let start = Instant::now();
        let shots = if req.exemplars.is_empty() { &self.exemplars } else { &req.exemplars };
        let exemplars = shots
            .iter()
            .map(|(c, r, s)| format!("Reference: {r}\nCandidate: {c}\nScore: {s}"))
            .collect::<Vec<_>>()
            .join("\n\n");
        let prompt = self.template.render(&[
            ("exemplars", exemplars),
            ("reference", req.reference.clone()),
            ("candidate", req.candidate.clone()),
        ]);
        let raw = self.post(&prompt)?;
        let content = serde_json::from_str::<serde_json::Value>(&raw)
            .ok()
            .and_then(|v| {
                v.pointer("/choices/0/message/content").and_then(|c| c.as_str()).map(str::to_string)
            })
            .unwrap_or_else(|| raw.clone());
        let parsed = first_decimal(&content)
            .ok_or_else(|| Error::JudgeUnavailable(format!("no numeric score in reply: {content:?}")))?;
        let clamped = !(0.0..=1.0).contains(&parsed);
        Ok(JudgeResponse {
            score: parsed.clamp(0.0, 1.0),
            raw: content,
            latency_ms: start.elapsed().as_millis() as u64,
            clamped,
        })
    }
}

impl SentenceJudge for RemoteJudge {
    fn score_sentence(&self, req: &JudgeRequest, _truth: &BTreeSet<ObjectId>) -> Result<JudgeResponse> {
        self.remote_score(req)
    }

    fn synthesize_caption(&self, short_captions: &[String]) -> Result<String> {
        if short_captions.is_empty() {
            return Err(Error::InvalidArgument("no captions to synthesize".into()));
        }
        let listing =
            short_captions.iter().enumerate().map(|(i, c)| format!("{}. {c}", i + 1)).collect::<Vec<_>>().join("\n");
        let prompt = synthesis_template().render(&[("captions", listing)]);
        let raw = self.post(&prompt)?;
        let content = serde_json::from_str::<serde_json::Value>(&raw)
            .ok()
            .and_then(|v| {
                v.pointer("/choices/0/message/content").and_then(|c| c.as_str()).map(str::to_string)
            })
            .unwrap_or(raw);
        Ok(content.trim().to_string())
    }
}

/// First decimal literal in free-form text.
pub fn first_decimal(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            let mut seen_dot = false;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || (bytes[i] == b'.' && !seen_dot)) {
                if bytes[i] == b'.' {
                    // a trailing period is sentence punctuation, not a decimal point
                    if i + 1 >= bytes.len() || !bytes[i + 1].is_ascii_digit() {
                        break;
                    }
                    seen_dot = true;
                }
                i += 1;
            }
            return text[start..i].parse().ok();
        }
        i += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Vocabulary, DEFAULT_OBJECTS};

    fn mock() -> MockJudge {
        let vocab = Vocabulary::build(&DEFAULT_OBJECTS, &[]);
        MockJudge::new(vocab.lexicon.clone())
    }

    fn truth(ids: &[ObjectId]) -> BTreeSet<ObjectId> {
        ids.iter().copied().collect()
    }

    #[test]
    fn templates_have_all_slots() {
        feedback_template().validate(&["exemplars", "candidate", "reference"]).unwrap();
        synthesis_template().validate(&["captions"]).unwrap();
    }

    #[test]
    fn mock_identical_candidate_scores_one() {
        let judge = mock();
        let req = JudgeRequest {
            candidate: "a red cat .".into(),
            reference: "a red cat .".into(),
            template_id: "sentence-feedback".into(),
            exemplars: vec![],
        };
        assert_eq!(judge.score_sentence(&req, &truth(&[0])).unwrap().score, 1.0);
    }

    #[test]
    fn mock_empty_candidate_scores_zero() {
        let judge = mock();
        let req = JudgeRequest {
            candidate: "".into(),
            reference: "a red cat .".into(),
            template_id: "sentence-feedback".into(),
            exemplars: vec![],
        };
        assert_eq!(judge.score_sentence(&req, &truth(&[0])).unwrap().score, 0.0);
    }

    #[test]
    fn mock_partial_coverage_with_hallucination() {
        // 2 of 3 reference objects mentioned plus 1 hallucinated:
        // coverage 2/3, hallucination rate 1/3 -> 2/3 * (1 - 1/6) = 5/9
        let judge = mock();
        let vocab = Vocabulary::build(&DEFAULT_OBJECTS, &[]);
        let t = truth(&[
            vocab.object_id("cat").unwrap(),
            vocab.object_id("dog").unwrap(),
            vocab.object_id("car").unwrap(),
        ]);
        let score = judge.mock_score("a cat and a dog and a boat", &t);
        assert!((score - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn mock_pure_hallucination_scores_zero() {
        let judge = mock();
        let vocab = Vocabulary::build(&DEFAULT_OBJECTS, &[]);
        let t = truth(&[vocab.object_id("cat").unwrap()]);
        assert_eq!(judge.mock_score("a boat and a train", &t), 0.0);
    }

    #[test]
    fn mock_monotone_in_coverage_and_hallucination() {
        let judge = mock();
        let vocab = Vocabulary::build(&DEFAULT_OBJECTS, &[]);
        let t = truth(&[vocab.object_id("cat").unwrap(), vocab.object_id("dog").unwrap()]);
        let low_cov = judge.mock_score("a cat", &t);
        let high_cov = judge.mock_score("a cat and a dog", &t);
        assert!(high_cov >= low_cov);
        let clean = judge.mock_score("a cat and a dog", &t);
        let noisy = judge.mock_score("a cat and a dog and a boat", &t);
        assert!(noisy <= clean);
    }

    #[test]
    fn synthesize_mock_joins_deterministically() {
        let judge = mock();
        let caps = vec!["a cat .".to_string(), "a dog on grass .".to_string()];
        let a = judge.synthesize_caption(&caps).unwrap();
        let b = judge.synthesize_caption(&caps).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("cat") && a.contains("dog on grass"));
        assert_eq!(judge.synthesize_caption(&caps[..1].to_vec()).unwrap(), "a cat .");
        assert!(judge.synthesize_caption(&[]).is_err());
    }

    #[test]
    fn first_decimal_parsing() {
        assert_eq!(first_decimal("Score: 0.85"), Some(0.85));
        assert_eq!(first_decimal("1.3"), Some(1.3));
        assert_eq!(first_decimal("I rate this 1."), Some(1.0));
        assert_eq!(first_decimal("no score here"), None);
        assert_eq!(first_decimal("0.5 or maybe 0.7"), Some(0.5));
    }
}
