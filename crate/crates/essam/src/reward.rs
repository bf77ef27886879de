//! Rule-based reward for model responses.
//!
//! A response earns an accuracy reward of 1 when the number after its final
//! `####` marker matches the gold answer, and a format reward graded on how
//! faithfully it follows the expected layout: a `<think> ... </think>`
//! section followed by `####` and the final numeric answer. The total reward
//! is `accuracy + 0.1 * format`, so formatting alone provides a small shaped
//! signal while correctness dominates.
//!
//! Corpora are JSONL files with one `{"response": ..., "gold": ...}` object
//! per line; [`score_corpus`] produces a per-line report plus the mean total.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_MARKER: &str = "####";

/// Numeric answers closer than this are considered equal.
pub const EQUIV_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("gold answer {0:?} does not parse as a number")]
    BadGold(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("corpus contains no rows")]
    EmptyCorpus,
}

/// Canonicalizes a numeric string: trims whitespace, removes commas and
/// dollar signs, strips one trailing period, then parses the remainder as a
/// decimal number. Anything left over means the text is not a number.
pub fn canonicalize_number(text: &str) -> Option<f64> {
    let mut s: String = text
        .trim()
        .chars()
        .filter(|c| *c != ',' && *c != '$')
        .collect();
    if s.ends_with('.') {
        s.pop();
    }
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// The predicted answer: the canonicalized text after the last `####`
/// marker, or none if the marker is missing or the tail is not a number.
pub fn extract_answer(text: &str) -> Option<f64> {
    let idx = text.rfind(ANSWER_MARKER)?;
    canonicalize_number(&text[idx + ANSWER_MARKER.len()..])
}

/// Whether two canonical numbers count as the same answer.
pub fn is_equivalent(a: f64, b: f64) -> bool {
    (a - b).abs() <= EQUIV_TOLERANCE
}

/// Grades the response layout:
///
/// * `1.0` - a `<think>` section closed by `</think>`, followed by `####`
///   and a parseable number, in that order
/// * `0.6` - both a `<think>` and a `####` marker, but not in the full
///   well-formed arrangement
/// * `0.1` - only the `<think>` marker
/// * `0.5` - only the `####` marker
/// * `0.0` - neither marker
pub fn format_reward(text: &str) -> f64 {
    let has_think = text.contains(THINK_OPEN);
    let marker = text.rfind(ANSWER_MARKER);
    let full = (|| {
        let open = text.find(THINK_OPEN)?;
        let close_rel = text[open + THINK_OPEN.len()..].find(THINK_CLOSE)?;
        let close_end = open + THINK_OPEN.len() + close_rel + THINK_CLOSE.len();
        if marker? < close_end {
            return None;
        }
        extract_answer(text)?;
        Some(())
    })()
    .is_some();
    match (full, has_think, marker.is_some()) {
        (true, _, _) => 1.0,
        (false, true, true) => 0.6,
        (false, true, false) => 0.1,
        (false, false, true) => 0.5,
        (false, false, false) => 0.0,
    }
}

/// Scores for a single response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    /// 1 when the extracted answer matches the gold answer, else 0.
    pub accuracy: u8,
    /// Format grade in {0.0, 0.1, 0.5, 0.6, 1.0}.
    pub format: f64,
    /// `accuracy + 0.1 * format`.
    pub total: f64,
    /// The canonical extracted answer, if any.
    pub extracted: Option<f64>,
}

/// Scores one response against a gold answer string.
pub fn score(response: &str, gold: &str) -> Result<Scored, RewardError> {
    let gold_value =
        canonicalize_number(gold).ok_or_else(|| RewardError::BadGold(gold.to_string()))?;
    let extracted = extract_answer(response);
    let accuracy = match extracted {
        Some(predicted) if is_equivalent(predicted, gold_value) => 1u8,
        _ => 0u8,
    };
    let format = format_reward(response);
    let total = accuracy as f64 + 0.1 * format;
    Ok(Scored {
        accuracy,
        format,
        total,
        extracted,
    })
}

#[derive(Debug, Deserialize)]
struct CorpusRow {
    response: String,
    gold: String,
}

/// Reads a JSONL corpus of `{"response", "gold"}` rows. Whitespace-only
/// lines are skipped; anything else that fails to parse is an error naming
/// the 1-based line number.
pub fn read_corpus(path: &Path) -> Result<Vec<(String, String)>, RewardError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: CorpusRow =
            serde_json::from_str(&line).map_err(|e| RewardError::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        rows.push((row.response, row.gold));
    }
    Ok(rows)
}

/// One scored corpus line, in report order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub line: usize,
    pub accuracy: u8,
    pub format: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct CorpusReport {
    pub mean_total: f64,
    pub items: Vec<CorpusItem>,
}

/// Scores every row of a corpus file. Fails on an empty corpus, a malformed
/// line, or an unparseable gold answer.
pub fn score_corpus(path: &Path) -> Result<CorpusReport, RewardError> {
    let rows = read_corpus(path)?;
    if rows.is_empty() {
        return Err(RewardError::EmptyCorpus);
    }
    let mut items = Vec::with_capacity(rows.len());
    let mut sum = 0.0;
    for (i, (response, gold)) in rows.iter().enumerate() {
        let scored = score(response, gold)?;
        sum += scored.total;
        items.push(CorpusItem {
            line: i + 1,
            accuracy: scored.accuracy,
            format: scored.format,
            total: scored.total,
        });
    }
    Ok(CorpusReport {
        mean_total: sum / items.len() as f64,
        items,
    })
}

/// Writes the per-line report as JSONL.
pub fn write_report(report: &CorpusReport, out: &mut impl Write) -> std::io::Result<()> {
    for item in &report.items {
        let line = serde_json::to_string(item).expect("report rows serialize");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extraction_rules() {
        assert_eq!(extract_answer("The answer is #### 72"), Some(72.0));
        assert_eq!(extract_answer("#### 1,000."), Some(1000.0));
        assert_eq!(extract_answer("cost #### $5"), Some(5.0));
        assert_eq!(extract_answer("#### 3 junk #### 4"), Some(4.0));
        assert_eq!(extract_answer("#### -2.5"), Some(-2.5));
        assert_eq!(extract_answer("no marker here"), None);
        assert_eq!(extract_answer("#### banana"), None);
        assert_eq!(extract_answer("#### 3 with a trailing story"), None);
        assert_eq!(extract_answer("####"), None);
    }

    #[test]
    fn equivalence_rules() {
        assert!(is_equivalent(72.0, canonicalize_number("72.0").unwrap()));
        assert!(is_equivalent(70000.0, canonicalize_number("70,000").unwrap()));
        assert!(is_equivalent(1.0, 1.0 + 5e-7));
        assert!(!is_equivalent(1.0, 1.0 + 2e-6));
        assert!(!is_equivalent(45.0, 540.0));
    }

    #[test]
    fn format_branches() {
        assert_eq!(format_reward("<think>steps</think> #### 3"), 1.0);
        assert_eq!(format_reward("<think>steps #### 3"), 0.6);
        assert_eq!(format_reward("#### 3 then <think>late"), 0.6);
        assert_eq!(format_reward("<think>steps</think> #### banana"), 0.6);
        assert_eq!(format_reward("<think>alone"), 0.1);
        assert_eq!(format_reward("result #### 5"), 0.5);
        assert_eq!(format_reward("plain text"), 0.0);
    }

    #[test]
    fn score_combines_accuracy_and_format() {
        let full = score("<think>r</think> #### 3", "3").unwrap();
        assert_eq!(full.accuracy, 1);
        assert_eq!(full.format, 1.0);
        assert_eq!(full.total, 1.0 + 0.1 * 1.0);

        let wrong = score("result #### 5", "3").unwrap();
        assert_eq!(wrong.accuracy, 0);
        assert_eq!(wrong.total, 0.1 * 0.5);

        let empty = score("", "3").unwrap();
        assert_eq!(empty.total, 0.0);

        assert!(matches!(score("x", "not-a-number"), Err(RewardError::BadGold(_))));
    }

    #[test]
    fn corpus_scoring_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"response\": \"<think>r</think> #### 3\", \"gold\": \"3\"}\n",
                "{\"response\": \"result #### 5\", \"gold\": \"3\"}\n",
                "{\"response\": \"no markers\", \"gold\": \"3\"}\n",
            ),
        )
        .unwrap();
        let report = score_corpus(&path).unwrap();
        assert_eq!(report.items.len(), 3);
        assert_eq!(report.items[0].total, 1.1);
        assert_eq!(report.items[1].total, 0.05);
        assert_eq!(report.items[2].total, 0.0);
        let expected_mean = (1.1 + 0.05 + 0.0) / 3.0;
        assert!((report.mean_total - expected_mean).abs() <= 1e-12);

        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "\n").unwrap();
        assert!(matches!(score_corpus(&empty), Err(RewardError::EmptyCorpus)));

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "{\"response\": \"x\", \"gold\": \"3\"}\nnot json\n").unwrap();
        match score_corpus(&bad) {
            Err(RewardError::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed-line error, got {other:?}"),
        }
    }

    #[test]
    fn report_rows_serialize_with_expected_fields() {
        let item = CorpusItem {
            line: 2,
            accuracy: 1,
            format: 0.6,
            total: 1.06,
        };
        let json = serde_json::to_string(&item).unwrap();
        assert_eq!(json, "{\"line\":2,\"accuracy\":1,\"format\":0.6,\"total\":1.06}");
    }

    fn response_strategy() -> impl Strategy<Value = String> {
        let token = prop_oneof![
            Just("<think>".to_string()),
            Just("</think>".to_string()),
            Just("####".to_string()),
            Just(" 42".to_string()),
            Just(" 7".to_string()),
            Just(" banana".to_string()),
            Just(" some words ".to_string()),
        ];
        proptest::collection::vec(token, 0..8).prop_map(|tokens| tokens.join(""))
    }

    proptest! {
        #[test]
        fn totals_stay_on_the_reachable_grid(text in response_strategy()) {
            let scored = score(&text, "42").unwrap();
            let acc = scored.accuracy as f64;
            let expected = [0.0, 0.1, 0.5, 0.6, 1.0]
                .iter()
                .map(|f| acc + 0.1 * f)
                .collect::<Vec<f64>>();
            prop_assert!(expected.contains(&scored.total));
            prop_assert!(scored.format == 0.0 || scored.format == 0.1 || scored.format == 0.5
                || scored.format == 0.6 || scored.format == 1.0);
        }

        #[test]
        fn appending_the_gold_answer_never_hurts(text in response_strategy()) {
            let before = score(&text, "42").unwrap().total;
            let appended = format!("{text} #### 42");
            let after = score(&appended, "42").unwrap().total;
            prop_assert!(after >= before, "{before} -> {after} for {text:?}");
        }

        #[test]
        fn scoring_is_idempotent(text in response_strategy()) {
            let a = score(&text, "42").unwrap();
            let b = score(&text, "42").unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
