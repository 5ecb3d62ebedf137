//! Rollout-trace ingestion and analytics.
//!
//! Traces are JSONL: one rollout per line with required `sample_id`, `step`,
//! `length`, `correct` (as 0/1) and optional `text`, `run_id`, `stage`.
//! Ingestion is strict — a malformed line fails with its line number and the
//! offending field — except for unknown keys, which are counted and ignored
//! so traces from richer loggers still load.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use crate::curriculum::StageKind;
use crate::error::{Error, Result};

/// One ingested trace line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sample_id: String,
    pub step: u64,
    pub length: u64,
    #[serde(with = "crate::reward::bool_as_int")]
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<StageKind>,
}

/// Result of an ingestion pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingest {
    pub records: Vec<TraceRecord>,
    /// Keys outside the schema encountered (and skipped) across all lines.
    pub unknown_keys: usize,
}

const KNOWN_KEYS: [&str; 7] =
    ["sample_id", "step", "length", "correct", "text", "run_id", "stage"];

fn bad(line: usize, detail: impl Into<String>) -> Error {
    Error::Trace { line, detail: detail.into() }
}

fn get_u64(v: &serde_json::Value, line: usize, field: &str) -> Result<u64> {
    v.as_u64().ok_or_else(|| bad(line, format!("field {field}: expected a non-negative integer")))
}

fn parse_line(raw: &str, line: usize, unknown: &mut usize) -> Result<TraceRecord> {
    let value: serde_json::Value = serde_json::from_str(raw)
        .map_err(|e| bad(line, format!("invalid JSON: {e}")))?;
    let obj = value.as_object().ok_or_else(|| bad(line, "not a JSON object"))?;

    for key in obj.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            *unknown += 1;
        }
    }
    let field = |name: &str| -> Result<&serde_json::Value> {
        obj.get(name).ok_or_else(|| bad(line, format!("missing field {name}")))
    };

    let sample_id = field("sample_id")?
        .as_str()
        .ok_or_else(|| bad(line, "field sample_id: expected a string"))?
        .to_owned();
    if sample_id.is_empty() {
        return Err(bad(line, "field sample_id: must not be empty"));
    }
    let step = get_u64(field("step")?, line, "step")?;
    let length = get_u64(field("length")?, line, "length")?;
    if length == 0 {
        return Err(bad(line, "field length: must be >= 1"));
    }
    let correct = match get_u64(field("correct")?, line, "correct")? {
        0 => false,
        1 => true,
        other => return Err(bad(line, format!("field correct: expected 0 or 1, got {other}"))),
    };
    let text = match obj.get("text") {
        None | Some(serde_json::Value::Null) => None,
        Some(v) => Some(
            v.as_str().ok_or_else(|| bad(line, "field text: expected a string"))?.to_owned(),
        ),
    };
    let run_id = match obj.get("run_id") {
        None | Some(serde_json::Value::Null) => None,
        Some(v) => Some(
            v.as_str().ok_or_else(|| bad(line, "field run_id: expected a string"))?.to_owned(),
        ),
    };
    let stage = match obj.get("stage") {
        None | Some(serde_json::Value::Null) => None,
        Some(v) => match v.as_str() {
            Some("accuracy") => Some(StageKind::Accuracy),
            Some("compression") => Some(StageKind::Compression),
            _ => {
                return Err(bad(line, "field stage: expected \"accuracy\" or \"compression\""));
            }
        },
    };
    Ok(TraceRecord { sample_id, step, length, correct, text, run_id, stage })
}

/// Ingest a JSONL trace from any reader. Line numbers in errors are 1-based.
pub fn ingest_jsonl(reader: impl BufRead) -> Result<Ingest> {
    let mut records = Vec::new();
    let mut unknown_keys = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let raw = line.map_err(|e| bad(line_no, format!("unreadable line: {e}")))?;
        if raw.trim().is_empty() {
            return Err(bad(line_no, "empty line"));
        }
        records.push(parse_line(&raw, line_no, &mut unknown_keys)?);
    }
    Ok(Ingest { records, unknown_keys })
}

/// Ingest a JSONL trace file.
pub fn ingest_jsonl_path(path: impl AsRef<Path>) -> Result<Ingest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_jsonl(std::io::BufReader::new(file))
}

/// Per-step aggregate over a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: u64,
    /// Mean correctness over all rollouts at this step.
    pub accuracy: f64,
    pub mean_length: f64,
    pub min_length: u64,
    pub max_length: u64,
    /// Fraction of samples whose rollouts at this step were all correct.
    pub gated_fraction: f64,
}

/// Collapse records into one summary per step, ascending by step.
pub fn summarize(records: &[TraceRecord]) -> Vec<StepSummary> {
    let mut by_step: BTreeMap<u64, Vec<&TraceRecord>> = BTreeMap::new();
    for r in records {
        by_step.entry(r.step).or_default().push(r);
    }
    by_step
        .into_iter()
        .map(|(step, rows)| {
            let total = rows.len();
            let correct = rows.iter().filter(|r| r.correct).count();
            let length_sum: u128 = rows.iter().map(|r| u128::from(r.length)).sum();
            let min_length = rows.iter().map(|r| r.length).min().unwrap_or(0);
            let max_length = rows.iter().map(|r| r.length).max().unwrap_or(0);
            let mut groups: BTreeMap<&str, bool> = BTreeMap::new();
            for r in &rows {
                let all = groups.entry(r.sample_id.as_str()).or_insert(true);
                *all &= r.correct;
            }
            let gated = groups.values().filter(|g| **g).count();
            StepSummary {
                step,
                accuracy: correct as f64 / total as f64,
                mean_length: length_sum as f64 / total as f64,
                min_length,
                max_length,
                gated_fraction: gated as f64 / groups.len() as f64,
            }
        })
        .collect()
}

/// Change of one summary relative to a baseline summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeChange {
    /// Mean-length change in percent of the baseline (negative = shorter).
    pub delta_length_pct: f64,
    /// Accuracy change in points (accuracy is in [0, 1]; one point = 0.01).
    pub delta_accuracy_points: f64,
}

pub fn relative_change(baseline: &StepSummary, current: &StepSummary) -> Result<RelativeChange> {
    if baseline.mean_length == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok(RelativeChange {
        delta_length_pct: (current.mean_length - baseline.mean_length) / baseline.mean_length
            * 100.0,
        delta_accuracy_points: (current.accuracy - baseline.accuracy) * 100.0,
    })
}

/// Frequency of one token pattern in a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternFrequency {
    pub pattern: String,
    pub count: usize,
    /// `count` over the total number of whitespace tokens in the corpus
    /// (zero on an empty corpus, never NaN).
    pub ratio: f64,
}

fn normalize_token(tok: &str) -> String {
    tok.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Count normalized-token matches for each pattern across a corpus.
///
/// Tokenization is whitespace splitting; tokens and patterns are compared
/// after lowercasing and stripping leading/trailing punctuation, so "But,"
/// matches the pattern "but". Ratios share one denominator: the corpus-wide
/// whitespace-token count.
pub fn token_pattern_frequency(
    texts: &[impl AsRef<str>],
    patterns: &[impl AsRef<str>],
) -> Vec<PatternFrequency> {
    let mut total = 0usize;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let normalized_patterns: Vec<(String, String)> = patterns
        .iter()
        .map(|p| (p.as_ref().to_owned(), normalize_token(p.as_ref())))
        .collect();
    for text in texts {
        for tok in text.as_ref().split_whitespace() {
            total += 1;
            let norm = normalize_token(tok);
            for (_, np) in &normalized_patterns {
                if norm == *np {
                    *counts.entry(np.clone()).or_insert(0) += 1;
                }
            }
        }
    }
    normalized_patterns
        .into_iter()
        .map(|(original, norm)| {
            let count = counts.get(&norm).copied().unwrap_or(0);
            PatternFrequency {
                pattern: original,
                count,
                ratio: if total == 0 { 0.0 } else { count as f64 / total as f64 },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn ingest_str(s: &str) -> Result<Ingest> {
        ingest_jsonl(Cursor::new(s.to_owned()))
    }

    #[test]
    fn well_formed_lines_round_trip() {
        let src = concat!(
            "{\"sample_id\":\"a\",\"step\":0,\"length\":120,\"correct\":1}\n",
            "{\"sample_id\":\"b\",\"step\":0,\"length\":80,\"correct\":0,\"text\":\"so, but then\",\"stage\":\"compression\"}\n",
        );
        let got = ingest_str(src).unwrap();
        assert_eq!(got.records.len(), 2);
        assert_eq!(got.unknown_keys, 0);
        assert_eq!(got.records[1].stage, Some(StageKind::Compression));
        assert_eq!(got.records[1].text.as_deref(), Some("so, but then"));
    }

    #[test]
    fn missing_field_names_line_and_field() {
        let src = concat!(
            "{\"sample_id\":\"a\",\"step\":0,\"length\":120,\"correct\":1}\n",
            "{\"sample_id\":\"a\",\"step\":1,\"correct\":1}\n",
        );
        let err = ingest_str(src).unwrap_err().to_string();
        assert_eq!(err, "line 2: missing field length");
    }

    #[test]
    fn type_and_domain_violations_are_rejected() {
        for (line, expect) in [
            ("{\"sample_id\":7,\"step\":0,\"length\":1,\"correct\":1}", "sample_id"),
            ("{\"sample_id\":\"a\",\"step\":-4,\"length\":1,\"correct\":1}", "step"),
            ("{\"sample_id\":\"a\",\"step\":0,\"length\":0,\"correct\":1}", "length"),
            ("{\"sample_id\":\"a\",\"step\":0,\"length\":1,\"correct\":3}", "correct"),
            ("{\"sample_id\":\"a\",\"step\":0,\"length\":1,\"correct\":1,\"stage\":\"warmup\"}", "stage"),
            ("[1,2,3]", "object"),
            ("not json", "JSON"),
        ] {
            let err = ingest_str(line).unwrap_err().to_string();
            assert!(err.starts_with("line 1:"), "{err}");
            assert!(err.contains(expect), "{err} should mention {expect}");
        }
    }

    #[test]
    fn unknown_keys_are_counted_not_fatal() {
        let src = "{\"sample_id\":\"a\",\"step\":0,\"length\":5,\"correct\":1,\"loss\":0.3,\"kl\":0.1}\n";
        let got = ingest_str(src).unwrap();
        assert_eq!(got.records.len(), 1);
        assert_eq!(got.unknown_keys, 2);
    }

    #[test]
    fn empty_input_is_empty_not_error() {
        let got = ingest_str("").unwrap();
        assert!(got.records.is_empty());
    }

    fn rec(id: &str, step: u64, length: u64, correct: bool) -> TraceRecord {
        TraceRecord {
            sample_id: id.into(),
            step,
            length,
            correct,
            text: None,
            run_id: None,
            stage: None,
        }
    }

    #[test]
    fn summarize_groups_by_step_and_sample() {
        let records = vec![
            rec("a", 0, 100, true),
            rec("a", 0, 200, true),
            rec("b", 0, 300, true),
            rec("b", 0, 400, false),
            rec("a", 5, 80, true),
            rec("a", 5, 120, true),
        ];
        let sums = summarize(&records);
        assert_eq!(sums.len(), 2);
        let s0 = &sums[0];
        assert_eq!(s0.step, 0);
        assert!((s0.accuracy - 0.75).abs() < 1e-12);
        assert!((s0.mean_length - 250.0).abs() < 1e-12);
        assert_eq!((s0.min_length, s0.max_length), (100, 400));
        // Sample a fully correct, sample b not: half the samples gated.
        assert!((s0.gated_fraction - 0.5).abs() < 1e-12);
        assert_eq!(sums[1].step, 5);
        assert!((sums[1].gated_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relative_change_matches_headline_arithmetic() {
        let base = StepSummary {
            step: 0,
            accuracy: 0.80,
            mean_length: 1000.0,
            min_length: 1,
            max_length: 1,
            gated_fraction: 0.0,
        };
        let later = StepSummary { mean_length: 812.0, accuracy: 0.797, step: 170, ..base };
        let rc = relative_change(&base, &later).unwrap();
        assert!((rc.delta_length_pct + 18.8).abs() < 1e-9);
        assert!((rc.delta_accuracy_points + 0.3).abs() < 1e-9);
        let far = StepSummary { mean_length: 625.0, step: 385, ..base };
        assert!((relative_change(&base, &far).unwrap().delta_length_pct + 37.5).abs() < 1e-9);
        // Anti-symmetry of the direction.
        let up = relative_change(&later, &base).unwrap();
        assert!(up.delta_length_pct > 0.0);
        let zero_base = StepSummary { mean_length: 0.0, ..base };
        assert!(matches!(relative_change(&zero_base, &later), Err(Error::ZeroBaseline)));
    }

    #[test]
    fn pattern_frequency_normalizes_case_and_punctuation() {
        let texts = ["but But, however"];
        let got = token_pattern_frequency(&texts, &["but"]);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].count, 2);
        assert!((got[0].ratio - 2.0 / 3.0).abs() < 1e-12);

        let texts = ["However, the answer holds.", "but (however) we verify; BUT still"];
        let got = token_pattern_frequency(&texts, &["but", "however"]);
        assert_eq!(got[0].count, 2);
        assert_eq!(got[1].count, 2);
        // Denominator is every whitespace token in the corpus: 4 + 6.
        assert!((got[0].ratio - 2.0 / 10.0).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_yields_zeroes_not_nan() {
        let texts: [&str; 0] = [];
        let got = token_pattern_frequency(&texts, &["but"]);
        assert_eq!(got[0].count, 0);
        assert_eq!(got[0].ratio, 0.0);
    }
}
