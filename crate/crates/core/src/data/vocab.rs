use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::corpus::{collect_labels, Dialog};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;

const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Token-to-index map. Indices 0..4 are reserved for PAD, UNK, CLS and SEP;
/// the remaining tokens follow in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build(dialogs: &[Dialog], min_freq: usize) -> Vocab {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for d in dialogs {
            for t in &d.turns {
                for tok in &t.tokens {
                    *counts.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let words = counts
            .into_iter()
            .filter(|&(w, c)| c >= min_freq.max(1) && !RESERVED.contains(&w))
            .map(|(w, _)| w.to_string());
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string()).chain(words).collect())
            .expect("reserved prefix present")
    }

    /// Rebuilds a vocabulary from its full ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::contract("vocabulary must start with the reserved tokens"));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Ordered act and BIO tag vocabularies.
///
/// Acts are sorted lexicographically. Tags start with `O`, followed by
/// `B-x`, `I-x` for each slot type `x` in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSets {
    pub acts: Vec<String>,
    pub slot_tags: Vec<String>,
}

impl LabelSets {
    pub fn from_dialogs(dialogs: &[Dialog]) -> Result<LabelSets> {
        let (acts, slots) = collect_labels(dialogs)?;
        Ok(Self::new(acts, slots))
    }

    pub fn new(
        acts: impl IntoIterator<Item = String>,
        slot_types: impl IntoIterator<Item = String>,
    ) -> LabelSets {
        let mut acts: Vec<String> = acts.into_iter().collect();
        acts.sort();
        acts.dedup();
        let mut slots: Vec<String> = slot_types.into_iter().collect();
        slots.sort();
        slots.dedup();
        let mut slot_tags = vec!["O".to_string()];
        for s in &slots {
            slot_tags.push(format!("B-{s}"));
            slot_tags.push(format!("I-{s}"));
        }
        LabelSets { acts, slot_tags }
    }

    pub fn n_acts(&self) -> usize {
        self.acts.len()
    }

    pub fn n_tags(&self) -> usize {
        self.slot_tags.len()
    }

    /// Number of distinct slot types.
    pub fn n_slot_types(&self) -> usize {
        (self.slot_tags.len() - 1) / 2
    }

    pub fn act_index(&self, act: &str) -> Result<usize> {
        self.acts
            .binary_search_by(|a| a.as_str().cmp(act))
            .map_err(|_| Error::contract(format!("act {act:?} is not in the label set")))
    }

    pub fn tag_index(&self, tag: &str) -> Result<usize> {
        self.slot_tags
            .iter()
            .position(|t| t == tag)
            .ok_or_else(|| Error::contract(format!("tag {tag:?} is not in the label set")))
    }

    /// Whether every act and tag used by `dialogs` is known.
    pub fn covers(&self, dialogs: &[Dialog]) -> Result<()> {
        for d in dialogs {
            for t in &d.turns {
                for a in &t.acts {
                    self.act_index(a)?;
                }
                for tag in &t.tags {
                    self.tag_index(tag)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::{Speaker, Turn};

    fn dialog(tokens: &[&str]) -> Dialog {
        Dialog {
            id: "d".into(),
            turns: vec![Turn {
                speaker: Speaker::User,
                tokens: tokens.iter().map(|s| s.to_string()).collect(),
                acts: vec!["b".into(), "a".into()],
                tags: tokens.iter().map(|_| "O".to_string()).collect(),
            }],
        }
    }

    #[test]
    fn reserved_indices_and_order() {
        let v = Vocab::build(&[dialog(&["zeta", "alpha", "alpha"])], 1);
        assert_eq!(v.id("[PAD]"), PAD);
        assert_eq!(v.id("[UNK]"), UNK);
        assert_eq!(v.id("[CLS]"), CLS);
        assert_eq!(v.id("[SEP]"), SEP);
        assert_eq!(v.id("alpha"), 4);
        assert_eq!(v.id("zeta"), 5);
        assert_eq!(v.id("never"), UNK);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn min_frequency_threshold() {
        let v = Vocab::build(&[dialog(&["zeta", "alpha", "alpha"])], 2);
        assert_eq!(v.id("alpha"), 4);
        assert_eq!(v.id("zeta"), UNK);
    }

    #[test]
    fn labels_are_sorted() {
        let l = LabelSets::new(
            ["request".into(), "inform".into(), "inform".into()],
            ["name".into(), "city".into()],
        );
        assert_eq!(l.acts, ["inform", "request"]);
        assert_eq!(l.slot_tags, ["O", "B-city", "I-city", "B-name", "I-name"]);
        assert_eq!(l.act_index("request").unwrap(), 1);
        assert!(l.act_index("greet").is_err());
        assert_eq!(l.n_slot_types(), 2);
    }
}
