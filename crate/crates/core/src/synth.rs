//! Seeded synthetic task-oriented dialogue corpus.
//!
//! Utterances are drawn from slot-filled templates in the style of
//! restaurant/hotel/taxi/train booking dialogues. Optional word timings use a
//! per-word duration proportional to its length plus jitter.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TimedUnit, TimedUtterance, UnitKind};
use crate::predict::template_response;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_utterances: usize,
    pub seed: u64,
    pub timed: bool,
    /// Probability that an utterance opens a dialogue (no history).
    pub no_history_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_utterances: 200,
            seed: 0,
            timed: false,
            no_history_prob: 0.1,
        }
    }
}

const TEMPLATES: &[&str] = &[
    "i am looking for a {price} {food} restaurant in the {area}",
    "can you book a table for {num} people at {time} on {day}",
    "i need a taxi from the {place} to the {place} leaving at {time}",
    "what is the address and phone number of the {place}",
    "i would like a {stars} star hotel with free {amenity} in the {area}",
    "is there a train to {city} on {day} that leaves after {time}",
    "please book it for {num} people for {num} nights starting {day}",
    "could you recommend a {food} place that is {price}",
    "i want to find a museum or a park in the {area} of town",
    "does the hotel have free {amenity} and {amenity}",
    "what time does the train from {city} arrive",
    "thank you that is all i need today",
    "yes please book that for me",
    "no thanks",
    "okay",
];

const SLOTS: &[(&str, &[&str])] = &[
    ("{price}", &["cheap", "moderate", "expensive"]),
    ("{food}", &["italian", "chinese", "indian", "british", "thai", "korean"]),
    ("{area}", &["north", "south", "east", "west", "centre"]),
    ("{num}", &["one", "two", "three", "four", "five", "six"]),
    ("{time}", &["noon", "seven", "eight thirty", "nine fifteen", "five pm"]),
    ("{day}", &["monday", "tuesday", "friday", "saturday", "sunday"]),
    ("{place}", &["station", "hotel", "museum", "airport", "college", "cinema"]),
    ("{stars}", &["two", "three", "four", "five"]),
    ("{amenity}", &["parking", "wifi", "breakfast"]),
    ("{city}", &["cambridge", "london", "ely", "norwich", "stevenage"]),
];

const SYSTEM_TURNS: &[&str] = &[
    "how can i help you today",
    "what area would you like",
    "i have several options for you",
    "would you like me to book it",
    "is there anything else i can help with",
    "what price range are you looking for",
];

fn fill(template: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = template.to_owned();
    for (slot, values) in SLOTS {
        while let Some(pos) = out.find(slot) {
            let v = values.choose(rng).expect("non-empty slot values");
            out.replace_range(pos..pos + slot.len(), v);
        }
    }
    out
}

pub fn synthesize(cfg: &SynthConfig) -> Vec<TimedUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_utterances)
        .map(|i| {
            let text = fill(TEMPLATES.choose(&mut rng).expect("templates"), &mut rng);
            let history = if rng.gen_bool(cfg.no_history_prob) {
                Vec::new()
            } else {
                let n = rng.gen_range(1..=4);
                (0..n)
                    .map(|k| {
                        if k % 2 == 0 {
                            SYSTEM_TURNS.choose(&mut rng).expect("turns").to_string()
                        } else {
                            fill(TEMPLATES.choose(&mut rng).expect("templates"), &mut rng)
                        }
                    })
                    .collect()
            };
            let mut clock = rng.gen_range(0..200u64);
            let units = text
                .split_whitespace()
                .map(|w| {
                    if !cfg.timed {
                        return TimedUnit::untimed(w);
                    }
                    let start = clock;
                    let end = start + 120 + 45 * w.len() as u64 + rng.gen_range(0..80);
                    clock = end + rng.gen_range(20..120);
                    TimedUnit::timed(w, start, end)
                })
                .collect();
            let references = vec![
                template_response(&text),
                format!("sure i can help with {text}"),
                format!("let me check {text}"),
                format!("okay {text} noted"),
            ];
            TimedUtterance {
                utterance_id: format!("syn-{i:05}"),
                dialogue_id: format!("dlg-{:04}", i / 6),
                unit_kind: UnitKind::Word,
                units,
                history,
                gold_response: format!("i found a match for {text}"),
                reference_responses: references,
            }
        })
        .collect()
}
