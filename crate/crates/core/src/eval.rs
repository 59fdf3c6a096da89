//! CommonsenseQA items and lenient multiple-choice scoring.
//!
//! A response is read as a set of mentions: standalone choice letters
//! (`B`, `B.`, `(B)`), full choice texts on token boundaries, and
//! letter-then-text pairs (`B. exercise`). The selected choices decide the
//! verdict:
//!
//! * two or more distinct choices: incorrect, multi-select;
//! * a pair whose letter disagrees with its text: incorrect, wrong-letter;
//! * exactly the key, by letter: correct, letter-match;
//! * exactly the key, by text alone (also `X. exercise`): correct, text-match;
//! * exactly one other choice: incorrect, wrong-choice;
//! * nothing recognizable: incorrect, irrelevant.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    BadRecord { path: PathBuf, line: usize, reason: String },
    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),
    #[error("no verdicts to score")]
    NoVerdicts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: char,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaItem {
    pub id: String,
    pub stem: String,
    pub question_concept: String,
    pub choices: Vec<Choice>,
    pub answer_key: char,
}

#[derive(Deserialize)]
struct RawItem {
    id: String,
    question: RawQuestion,
    #[serde(rename = "answerKey")]
    answer_key: Option<String>,
}

#[derive(Deserialize)]
struct RawQuestion {
    stem: String,
    #[serde(default)]
    question_concept: String,
    choices: Vec<RawChoice>,
}

#[derive(Deserialize)]
struct RawChoice {
    label: String,
    text: String,
}

fn single_label(text: &str) -> Option<char> {
    let mut chars = text.trim().chars();
    let c = chars.next()?;
    (chars.next().is_none() && ('A'..='E').contains(&c)).then_some(c)
}

impl QaItem {
    /// Parse one CommonsenseQA JSON line.
    pub fn from_json(line: &str) -> Result<Self, String> {
        let raw: RawItem = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let mut choices = Vec::with_capacity(raw.question.choices.len());
        for c in raw.question.choices {
            let label = single_label(&c.label).ok_or_else(|| format!("choice label {:?} not in A-E", c.label))?;
            if choices.iter().any(|x: &Choice| x.label == label) {
                return Err(format!("duplicate choice label {label}"));
            }
            choices.push(Choice { label, text: c.text });
        }
        if choices.is_empty() {
            return Err("no choices".into());
        }
        let key = raw.answer_key.ok_or("missing answerKey")?;
        let answer_key = single_label(&key)
            .filter(|k| choices.iter().any(|c| c.label == *k))
            .ok_or_else(|| format!("answerKey {key:?} is not a choice label"))?;
        Ok(Self {
            id: raw.id,
            stem: raw.question.stem,
            question_concept: raw.question.question_concept,
            choices,
            answer_key,
        })
    }

    pub fn answer_text(&self) -> &str {
        &self.choice(self.answer_key).expect("validated key").text
    }

    pub fn choice(&self, label: char) -> Option<&Choice> {
        self.choices.iter().find(|c| c.label == label)
    }

    /// Two choices with the same text (case-insensitive) make text matching
    /// ambiguous; such items are scored by letter only.
    pub fn has_duplicate_choice_texts(&self) -> bool {
        let mut seen = HashSet::new();
        !self.choices.iter().all(|c| seen.insert(c.text.trim().to_lowercase()))
    }
}

/// Load a CommonsenseQA JSON-lines file. Blank lines are ignored.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QaItem>, EvalError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut items = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = QaItem::from_json(&line).map_err(|reason| EvalError::BadRecord {
            path: path.to_path_buf(),
            line: n + 1,
            reason,
        })?;
        if !ids.insert(item.id.clone()) {
            return Err(EvalError::DuplicateItem(item.id));
        }
        items.push(item);
    }
    Ok(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    LetterMatch,
    TextMatch,
    WrongLetter,
    WrongChoice,
    MultiSelect,
    Irrelevant,
    ErrorFlagged,
}

impl Reason {
    pub fn name(self) -> &'static str {
        match self {
            Reason::LetterMatch => "letter-match",
            Reason::TextMatch => "text-match",
            Reason::WrongLetter => "wrong-letter",
            Reason::WrongChoice => "wrong-choice",
            Reason::MultiSelect => "multi-select",
            Reason::Irrelevant => "irrelevant",
            Reason::ErrorFlagged => "error-flagged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub item_id: String,
    pub correct: bool,
    pub reason: Reason,
}

impl Verdict {
    pub fn error_flagged(item_id: &str) -> Self {
        Self {
            item_id: item_id.to_string(),
            correct: false,
            reason: Reason::ErrorFlagged,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Mention {
    Letter { label: char, start: usize, end: usize },
    Text { label: char, start: usize, end: usize },
}

impl Mention {
    fn span(&self) -> (usize, usize) {
        match *self {
            Mention::Letter { start, end, .. } | Mention::Text { start, end, .. } => (start, end),
        }
    }
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn boundary_before(s: &str, at: usize) -> bool {
    s[..at].chars().next_back().is_none_or(|c| !is_word(c))
}

fn boundary_after(s: &str, at: usize) -> bool {
    s[at..].chars().next().is_none_or(|c| !is_word(c))
}

fn text_mentions(response: &str, item: &QaItem) -> Vec<Mention> {
    let lower = response.to_lowercase();
    // Lowercasing can change byte lengths for some scripts; fall back to
    // letter-only scoring rather than slicing at the wrong offsets.
    if lower.len() != response.len() {
        return Vec::new();
    }
    let mut found = Vec::new();
    for choice in &item.choices {
        let needle = choice.text.trim().to_lowercase();
        if needle.is_empty() {
            continue;
        }
        for (start, _) in lower.match_indices(&needle) {
            let end = start + needle.len();
            if boundary_before(&lower, start) && boundary_after(&lower, end) {
                found.push(Mention::Text {
                    label: choice.label,
                    start,
                    end,
                });
            }
        }
    }
    // A match nested inside a longer choice text belongs to the longer one.
    let spans: Vec<(usize, usize)> = found.iter().map(Mention::span).collect();
    found
        .into_iter()
        .filter(|m| {
            let (s, e) = m.span();
            !spans.iter().any(|&(os, oe)| os <= s && e <= oe && (os, oe) != (s, e))
        })
        .collect()
}

fn letter_mentions(response: &str, item: &QaItem, texts: &[Mention]) -> Vec<Mention> {
    let inside_text = |at: usize| {
        texts.iter().any(|m| {
            let (s, e) = m.span();
            s <= at && at < e
        })
    };
    response
        .char_indices()
        .filter(|&(i, c)| {
            item.choice(c).is_some()
                && boundary_before(response, i)
                && boundary_after(response, i + c.len_utf8())
                && !inside_text(i)
        })
        .map(|(i, c)| Mention::Letter {
            label: c,
            start: i,
            end: i + c.len_utf8(),
        })
        .collect()
}

/// A letter whose only separator from the following text is punctuation
/// and whitespace labels that text.
fn labels_text(response: &str, letter_end: usize, text_start: usize) -> bool {
    letter_end <= text_start
        && response[letter_end..text_start]
            .chars()
            .all(|c| c.is_whitespace() || matches!(c, '.' | ',' | ':' | ')' | ']' | '-'))
}

/// Score one raw response. Total: every input gets exactly one reason.
pub fn score_response(response: &str, item: &QaItem) -> Verdict {
    let texts = if item.has_duplicate_choice_texts() {
        Vec::new()
    } else {
        text_mentions(response, item)
    };
    let letters = letter_mentions(response, item, &texts);
    let mut mentions: Vec<Mention> = texts.into_iter().chain(letters).collect();
    mentions.sort_by_key(Mention::span);

    // (selected choice, came with a letter, letter disagreed with text)
    let mut selections: Vec<(char, bool, bool)> = Vec::new();
    let mut i = 0;
    while i < mentions.len() {
        match (mentions[i], mentions.get(i + 1)) {
            (Mention::Letter { label: l, end, .. }, Some(&Mention::Text { label: t, start, .. }))
                if labels_text(response, end, start) =>
            {
                selections.push((t, true, l != t));
                i += 2;
            }
            (Mention::Letter { label, .. }, _) => {
                selections.push((label, true, false));
                i += 1;
            }
            (Mention::Text { label, .. }, _) => {
                selections.push((label, false, false));
                i += 1;
            }
        }
    }

    let distinct: HashSet<char> = selections.iter().map(|s| s.0).collect();
    let (correct, reason) = if distinct.is_empty() {
        (false, Reason::Irrelevant)
    } else if distinct.len() >= 2 {
        (false, Reason::MultiSelect)
    } else if selections.iter().any(|s| s.2) {
        (false, Reason::WrongLetter)
    } else if distinct.contains(&item.answer_key) {
        if selections.iter().any(|s| s.1) {
            (true, Reason::LetterMatch)
        } else {
            (true, Reason::TextMatch)
        }
    } else {
        (false, Reason::WrongChoice)
    };
    Verdict {
        item_id: item.id.clone(),
        correct,
        reason,
    }
}

/// Correct / total; error-flagged verdicts count as incorrect.
pub fn accuracy(verdicts: &[Verdict]) -> Result<f64, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::NoVerdicts);
    }
    let correct = verdicts.iter().filter(|v| v.correct).count();
    Ok(correct as f64 / verdicts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub error_flagged: usize,
    pub reason_histogram: BTreeMap<String, usize>,
    pub config_digest: Option<String>,
}

impl Summary {
    pub fn new(verdicts: &[Verdict], config_digest: Option<String>) -> Result<Self, EvalError> {
        let accuracy = accuracy(verdicts)?;
        let mut reason_histogram = BTreeMap::new();
        for v in verdicts {
            *reason_histogram.entry(v.reason.name().to_string()).or_insert(0) += 1;
        }
        Ok(Self {
            n: verdicts.len(),
            correct: verdicts.iter().filter(|v| v.correct).count(),
            accuracy,
            error_flagged: verdicts.iter().filter(|v| v.reason == Reason::ErrorFlagged).count(),
            reason_histogram,
            config_digest,
        })
    }
}
