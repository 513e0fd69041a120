//! Seeded generator of restaurant-booking dialogs whose act labels depend
//! on the dialog history.
//!
//! Each booking episode follows
//!
//! ```text
//! user    i need a place in the <area> .      {Inform, Request}
//! system  what about <name> ?                  {Offer}
//! user    no , something else .                {Request}      (optional, repeats)
//! system  what about <name> ?                  {Offer}
//! user    yes that works for <name> .          {Select}
//! system  what about <name> ?                  {Confirm}
//! user    yes that works for <name> .          {Affirm}
//! system  booked for <time> .                  {Inform}
//! ```
//!
//! The two surface forms `what about <name> ?` and `yes that works for
//! <name> .` are shared by two acts each. In [`Dependency::Deterministic`]
//! mode the act follows from the previous turn's act alone: Offer after a
//! Request, Confirm after a Select, Select after an Offer and Affirm after a
//! Confirm. In [`Dependency::None`] mode the act of an ambiguous surface form
//! is a coin flip. The name in a Select turn always copies the name of the
//! preceding Offer.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Dialog, Speaker, Turn};

pub const ACTS: [&str; 6] = ["Affirm", "Confirm", "Inform", "Offer", "Request", "Select"];
pub const SLOT_TYPES: [&str; 3] = ["area", "name", "time"];

/// Leading tokens of the two ambiguous surface forms.
pub const AMBIGUOUS_OFFER_PREFIX: [&str; 2] = ["what", "about"];
pub const AMBIGUOUS_REPLY_PREFIX: [&str; 4] = ["yes", "that", "works", "for"];

const NAMES: [&str; 8] = [
    "golden dragon",
    "blue door",
    "la tasca",
    "sushi house",
    "the olive tree",
    "red lantern",
    "pasta bar",
    "green leaf",
];
const AREAS: [&str; 5] = ["north", "south", "east", "west", "centre"];
const TIMES: [&str; 4] = ["six pm", "seven pm", "eight pm", "noon"];
const REQUEST_TEMPLATES: [&str; 2] = ["i need a place in the", "find me somewhere in the"];

const REJECT_PROBABILITY: f64 = 0.15;
const SECOND_EPISODE_PROBABILITY: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dependency {
    Deterministic,
    None,
}

impl std::str::FromStr for Dependency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(Dependency::Deterministic),
            "none" => Ok(Dependency::None),
            other => Err(format!("unknown dependency mode {other:?}")),
        }
    }
}

struct Builder {
    tokens: Vec<String>,
    tags: Vec<String>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            tokens: Vec::new(),
            tags: Vec::new(),
        }
    }

    fn words(mut self, text: &str) -> Self {
        for w in text.split_whitespace() {
            self.tokens.push(w.to_string());
            self.tags.push("O".to_string());
        }
        self
    }

    fn slot(mut self, slot: &str, value: &str) -> Self {
        for (i, w) in value.split_whitespace().enumerate() {
            self.tokens.push(w.to_string());
            let prefix = if i == 0 { "B" } else { "I" };
            self.tags.push(format!("{prefix}-{slot}"));
        }
        self
    }

    fn turn(self, speaker: Speaker, acts: &[&str]) -> Turn {
        Turn {
            speaker,
            tokens: self.tokens,
            acts: acts.iter().map(|s| s.to_string()).collect(),
            tags: self.tags,
        }
    }
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().expect("non-empty list")
}

fn resolve<'a, R: Rng>(
    rng: &mut R,
    dependency: Dependency,
    by_history: &'a str,
    alternative: &'a str,
) -> &'a str {
    match dependency {
        Dependency::Deterministic => by_history,
        Dependency::None => {
            if rng.gen_bool(0.5) {
                by_history
            } else {
                alternative
            }
        }
    }
}

fn offer_like(name: &str, act: &str) -> Turn {
    Builder::new()
        .words("what about")
        .slot("name", name)
        .words("?")
        .turn(Speaker::System, &[act])
}

fn reply_like(name: &str, act: &str) -> Turn {
    Builder::new()
        .words("yes that works for")
        .slot("name", name)
        .words(".")
        .turn(Speaker::User, &[act])
}

fn episode<R: Rng>(rng: &mut R, dependency: Dependency, turns: &mut Vec<Turn>) {
    let area = pick(rng, &AREAS);
    turns.push(
        Builder::new()
            .words(pick(rng, &REQUEST_TEMPLATES))
            .slot("area", area)
            .words(".")
            .turn(Speaker::User, &["Inform", "Request"]),
    );
    let mut name = pick(rng, &NAMES);
    turns.push(offer_like(name, resolve(rng, dependency, "Offer", "Confirm")));
    while rng.gen_bool(REJECT_PROBABILITY) {
        turns.push(
            Builder::new()
                .words("no , something else .")
                .turn(Speaker::User, &["Request"]),
        );
        name = pick(rng, &NAMES);
        turns.push(offer_like(name, resolve(rng, dependency, "Offer", "Confirm")));
    }
    turns.push(reply_like(name, resolve(rng, dependency, "Select", "Affirm")));
    turns.push(offer_like(name, resolve(rng, dependency, "Confirm", "Offer")));
    turns.push(reply_like(name, resolve(rng, dependency, "Affirm", "Select")));
    turns.push(
        Builder::new()
            .words("booked for")
            .slot("time", pick(rng, &TIMES))
            .words(".")
            .turn(Speaker::System, &["Inform"]),
    );
}

/// Generates `n_dialogs` dialogs; identical arguments give identical output.
pub fn generate_synthetic(seed: u64, n_dialogs: usize, dependency: Dependency) -> Vec<Dialog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_dialogs)
        .map(|i| {
            let mut turns = Vec::new();
            episode(&mut rng, dependency, &mut turns);
            if rng.gen_bool(SECOND_EPISODE_PROBABILITY) {
                episode(&mut rng, dependency, &mut turns);
            }
            Dialog {
                id: format!("syn-{seed}-{i:05}"),
                turns,
            }
        })
        .collect()
}

/// Whether a turn uses the shared `yes that works for <name> .` wording.
pub fn is_ambiguous_reply(turn: &Turn) -> bool {
    turn.tokens.len() > AMBIGUOUS_REPLY_PREFIX.len()
        && turn.tokens.iter().zip(AMBIGUOUS_REPLY_PREFIX).all(|(a, b)| a == b)
}

/// Whether a turn uses the shared `what about <name> ?` wording.
pub fn is_ambiguous_offer(turn: &Turn) -> bool {
    turn.tokens.len() > AMBIGUOUS_OFFER_PREFIX.len()
        && turn.tokens.iter().zip(AMBIGUOUS_OFFER_PREFIX).all(|(a, b)| a == b)
}
