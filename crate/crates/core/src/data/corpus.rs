use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::tokenize::tokenize;
use super::vocab::LabelSets;
use crate::error::{Error, Result};

/// Longest dialog accepted unless configured otherwise.
pub const DEFAULT_MAX_TURNS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::System => "system",
        }
    }
}

/// One utterance with its gold annotation. Prediction-only input carries
/// empty `acts` and `tags`.
#[derive(Clone, Debug, PartialEq)]
pub struct Turn {
    pub speaker: Speaker,
    pub tokens: Vec<String>,
    pub acts: Vec<String>,
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dialog {
    pub id: String,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTurn {
    speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    acts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDialog {
    id: String,
    turns: Vec<RawTurn>,
}

/// Splits a BIO tag into its prefix and slot type. `O` yields `None`.
pub fn parse_tag(tag: &str) -> Option<Result<(char, &str)>> {
    if tag == "O" {
        return None;
    }
    let bad = || Error::contract(format!("malformed BIO tag {tag:?}"));
    let outcome = match tag.split_once('-') {
        Some((p @ ("B" | "I"), slot)) if !slot.is_empty() => {
            Ok((p.chars().next().unwrap(), slot))
        }
        _ => Err(bad()),
    };
    Some(outcome)
}

fn parse_error(dialog: &str, turn: Option<usize>, message: impl Into<String>) -> Error {
    Error::Parse {
        dialog: dialog.to_string(),
        turn,
        message: message.into(),
    }
}

fn parse_speaker(s: &str, dialog: &str, turn: usize) -> Result<Speaker> {
    match s {
        "user" => Ok(Speaker::User),
        "system" => Ok(Speaker::System),
        other => Err(parse_error(dialog, Some(turn), format!("unknown speaker {other:?}"))),
    }
}

impl Dialog {
    /// Parses one JSONL line. With `labeled`, every turn must carry tokens,
    /// a non-empty act list and one valid BIO tag per token.
    pub fn from_json(line: &str, labeled: bool, max_turns: usize) -> Result<Dialog> {
        let raw: RawDialog = serde_json::from_str(line)?;
        Self::from_raw(raw, labeled, max_turns)
    }

    fn from_raw(raw: RawDialog, labeled: bool, max_turns: usize) -> Result<Dialog> {
        let id = raw.id;
        if raw.turns.is_empty() || raw.turns.len() > max_turns {
            return Err(parse_error(
                &id,
                None,
                format!("dialog has {} turns, expected 1..={max_turns}", raw.turns.len()),
            ));
        }
        let mut turns = Vec::with_capacity(raw.turns.len());
        for (ti, rt) in raw.turns.into_iter().enumerate() {
            let speaker = parse_speaker(&rt.speaker, &id, ti)?;
            let tokens = match (rt.tokens, rt.text) {
                (Some(tokens), _) => tokens,
                (None, Some(text)) => {
                    if rt.tags.is_some() {
                        return Err(parse_error(&id, Some(ti), "a text turn must not carry tags"));
                    }
                    tokenize(&text)
                }
                (None, None) => return Err(parse_error(&id, Some(ti), "turn has neither tokens nor text")),
            };
            let (acts, tags) = if labeled {
                let acts = rt.acts.unwrap_or_default();
                if acts.is_empty() {
                    return Err(parse_error(&id, Some(ti), "turn has no dialog acts"));
                }
                let tags = rt
                    .tags
                    .ok_or_else(|| parse_error(&id, Some(ti), "turn has no slot tags"))?;
                if tags.len() != tokens.len() {
                    return Err(parse_error(
                        &id,
                        Some(ti),
                        format!("{} tokens but {} tags", tokens.len(), tags.len()),
                    ));
                }
                for tag in &tags {
                    if let Some(Err(e)) = parse_tag(tag) {
                        return Err(parse_error(&id, Some(ti), e.to_string()));
                    }
                }
                (acts, tags)
            } else {
                (Vec::new(), Vec::new())
            };
            turns.push(Turn {
                speaker,
                tokens,
                acts,
                tags,
            });
        }
        Ok(Dialog { id, turns })
    }

    /// Canonical single-line JSON form.
    pub fn to_json(&self) -> String {
        let raw = RawDialog {
            id: self.id.clone(),
            turns: self
                .turns
                .iter()
                .map(|t| RawTurn {
                    speaker: t.speaker.as_str().to_string(),
                    tokens: Some(t.tokens.clone()),
                    text: None,
                    acts: Some(t.acts.clone()),
                    tags: Some(t.tags.clone()),
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("dialog serializes")
    }
}

/// A labeled corpus with label sets collected over every dialog.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub dialogs: Vec<Dialog>,
    pub labels: LabelSets,
}

/// Disjoint train/validation/test partition.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<Dialog>,
    pub valid: Vec<Dialog>,
    pub test: Vec<Dialog>,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push((i, line));
        }
    }
    Ok(lines)
}

/// Loads a labeled JSONL corpus.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    load_corpus_with(path, DEFAULT_MAX_TURNS)
}

pub fn load_corpus_with(path: impl AsRef<Path>, max_turns: usize) -> Result<Corpus> {
    let mut dialogs = Vec::new();
    for (i, line) in read_lines(path.as_ref())? {
        let d = Dialog::from_json(&line, true, max_turns).map_err(|e| match e {
            Error::Json(j) => parse_error(&format!("<line {}>", i + 1), None, j.to_string()),
            other => other,
        })?;
        dialogs.push(d);
    }
    let labels = LabelSets::from_dialogs(&dialogs)?;
    Ok(Corpus { dialogs, labels })
}

/// Dialogs for prediction, each paired with its original JSON object so
/// output can echo the input schema.
pub fn load_unlabeled(path: impl AsRef<Path>, max_turns: usize) -> Result<Vec<(Value, Dialog)>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path.as_ref())? {
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| parse_error(&format!("<line {}>", i + 1), None, e.to_string()))?;
        let raw: RawDialog = serde_json::from_value(value.clone())?;
        out.push((value, Dialog::from_raw(raw, false, max_turns)?));
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, dialogs: &[Dialog]) -> Result<()> {
    let mut file = std::io::BufWriter::new(File::create(path)?);
    write_jsonl(&mut file, dialogs)?;
    file.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(out: &mut W, dialogs: &[Dialog]) -> Result<()> {
    for d in dialogs {
        writeln!(out, "{}", d.to_json())?;
    }
    Ok(())
}

impl Corpus {
    /// Seeded 0.7 / 0.1 / 0.2 partition.
    pub fn split(&self, seed: u64) -> Split {
        split_dialogs(&self.dialogs, seed)
    }
}

pub fn split_dialogs(dialogs: &[Dialog], seed: u64) -> Split {
    let mut order: Vec<usize> = (0..dialogs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = dialogs.len();
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_valid = ((n as f64 * 0.1).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| dialogs[i].clone()).collect();
    Split {
        train: pick(&order[..n_train]),
        valid: pick(&order[n_train..n_train + n_valid]),
        test: pick(&order[n_train + n_valid..]),
    }
}

/// Every act label and slot type seen in `dialogs`.
pub(crate) fn collect_labels(dialogs: &[Dialog]) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    let mut acts = BTreeSet::new();
    let mut slots = BTreeSet::new();
    for d in dialogs {
        for t in &d.turns {
            acts.extend(t.acts.iter().cloned());
            for tag in &t.tags {
                if let Some(parsed) = parse_tag(tag) {
                    slots.insert(parsed?.1.to_string());
                }
            }
        }
    }
    Ok((acts, slots))
}
