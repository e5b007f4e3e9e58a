//! Synthetic short delivery-request texts.
//!
//! Each category owns a vocabulary: a handful of real item words followed by
//! generated pseudo-words up to `vocab_size`. Vocabularies are disjoint by
//! construction; cross-category tokens only appear through `overlap`. Texts
//! mix category tokens with shared filler words, then get romanized-Hindi
//! substitutions (`code_mix`) and single-character typos (`noise`).

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CategorySet, Dataset, DatasetKind, Example, TRANSACTION_CATEGORIES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub categories: Vec<String>,
    pub vocab_size: usize,
    pub examples_per_category: usize,
    pub code_mix: f64,
    pub noise: f64,
    /// Probability that a content token comes from another category.
    pub overlap: f64,
    /// Probability that a token slot holds a shared filler word.
    pub filler: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            categories: TRANSACTION_CATEGORIES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            vocab_size: 60,
            examples_per_category: 500,
            code_mix: 0.3,
            noise: 0.1,
            overlap: 0.1,
            filler: 0.35,
            min_len: 3,
            max_len: 9,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// No typos, no code-mixing, no cross-category tokens: every text holds
    /// at least one word owned by its category and none owned by another.
    pub fn separable() -> Self {
        Self {
            code_mix: 0.0,
            noise: 0.0,
            overlap: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        CategorySet::new(self.categories.iter().cloned())?;
        for (name, p) in [
            ("code_mix", self.code_mix),
            ("noise", self.noise),
            ("overlap", self.overlap),
            ("filler", self.filler),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in [0, 1], got {p}"
                )));
            }
        }
        if self.filler >= 1.0 {
            return Err(Error::InvalidConfig("filler must be below 1".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidConfig(format!(
                "min_len..max_len must be a nonempty range of positive lengths, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::InvalidConfig("vocab_size must be positive".into()));
        }
        Ok(())
    }
}

const FILLERS: &[&str] = &[
    "get", "bring", "my", "me", "please", "the", "a", "from", "to", "pick", "up", "deliver", "and",
    "of", "send", "need", "urgent", "order", "home", "shop",
];

const HINDI_FILLERS: &[&str] = &[
    "mera", "meri", "do", "lao", "le", "aao", "bhaiya", "jaldi", "wala", "ka", "ki", "se", "hai",
    "lekar", "jana", "dena", "chahiye", "abhi",
];

fn seed_words(category: &str) -> (&'static [&'static str], &'static [&'static str]) {
    match category {
        "Food" => (
            &[
                "paratha", "biryani", "pizza", "burger", "thali", "dosa", "noodles", "momos",
            ],
            &["khana", "roti", "sabzi", "tiffin"],
        ),
        "Grocery" => (
            &[
                "atta",
                "rice",
                "sugar",
                "oil",
                "milk",
                "eggs",
                "vegetables",
                "flour",
            ],
            &["chawal", "dal", "namak", "doodh"],
        ),
        "Package" => (
            &[
                "parcel", "bag", "box", "courier", "luggage", "suitcase", "packet", "carton",
            ],
            &["saman", "thaila", "dabba", "bori"],
        ),
        "Medicines" => (
            &[
                "tablet",
                "syrup",
                "pharmacy",
                "prescription",
                "capsule",
                "ointment",
                "insulin",
                "bandage",
            ],
            &["dawai", "goli", "dawa", "marham"],
        ),
        "Household Items" => (
            &[
                "bucket",
                "mop",
                "detergent",
                "utensils",
                "broom",
                "curtain",
                "pillow",
                "bedsheet",
            ],
            &["bartan", "balti", "jhadu", "chadar"],
        ),
        "Cigarettes" => (
            &[
                "cigarette",
                "gold",
                "flake",
                "lighter",
                "pack",
                "marlboro",
                "classic",
                "matchbox",
            ],
            &["beedi", "sutta", "machis", "tambaku"],
        ),
        "Clothes" => (
            &[
                "shirt", "jeans", "saree", "lehanga", "kurta", "jacket", "dress", "trousers",
            ],
            &["kapde", "kapda", "dupatta", "pajama"],
        ),
        "Electronics" => (
            &[
                "charger",
                "laptop",
                "phone",
                "earphones",
                "cable",
                "mouse",
                "adapter",
                "speaker",
            ],
            &["mobile", "batti", "taar", "chargerwala"],
        ),
        "Keys" => (
            &[
                "keys", "key", "keychain", "spare", "bunch", "locker", "bike", "car",
            ],
            &["chabi", "chaabi", "tala", "gucha"],
        ),
        "Documents/Books" => (
            &[
                "documents",
                "files",
                "book",
                "notebook",
                "passport",
                "certificate",
                "papers",
                "novel",
            ],
            &["kagaz", "kitab", "kagzat", "copy"],
        ),
        _ => (&[], &[]),
    }
}

const ONSETS: &[&str] = &[
    "b", "ch", "d", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "sh", "t", "v", "z", "kr",
    "pl", "st",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "aa", "ee", "oo", "ai"];

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
        w.push_str(NUCLEI[rng.random_range(0..NUCLEI.len())]);
    }
    if rng.random_bool(0.4) {
        w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
    }
    w
}

struct Vocab {
    words: Vec<String>,
    hindi: Vec<String>,
    // Zipf-like cumulative weights over `words`.
    cumulative: Vec<f64>,
}

impl Vocab {
    fn sample<R: Rng>(&self, rng: &mut R) -> &str {
        let total = *self.cumulative.last().expect("nonempty vocabulary");
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        &self.words[i.min(self.words.len() - 1)]
    }
}

fn build_vocabularies(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vocab> {
    let mut taken: HashSet<String> = FILLERS
        .iter()
        .chain(HINDI_FILLERS)
        .map(|s| s.to_string())
        .collect();
    // Reserve every curated word first so generated words never shadow them.
    for name in &config.categories {
        let (en, hi) = seed_words(name);
        taken.extend(en.iter().chain(hi).map(|s| s.to_string()));
    }
    config
        .categories
        .iter()
        .map(|name| {
            let (en, hi) = seed_words(name);
            let mut words: Vec<String> = en
                .iter()
                .take(config.vocab_size)
                .map(|s| s.to_string())
                .collect();
            while words.len() < config.vocab_size {
                let w = pseudo_word(rng);
                if taken.insert(w.clone()) {
                    words.push(w);
                }
            }
            let mut hindi: Vec<String> = hi.iter().map(|s| s.to_string()).collect();
            while hindi.len() < 4 {
                let w = pseudo_word(rng);
                if taken.insert(w.clone()) {
                    hindi.push(w);
                }
            }
            let mut acc = 0.0;
            let cumulative = (0..words.len())
                .map(|r| {
                    acc += 1.0 / (r as f64 + 2.0);
                    acc
                })
                .collect();
            Vocab {
                words,
                hindi,
                cumulative,
            }
        })
        .collect()
}

fn typo<R: Rng>(word: &str, rng: &mut R) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let letter = (b'a' + rng.random_range(0..26u8)) as char;
    let pos = rng.random_range(0..chars.len().max(1));
    match rng.random_range(0..4) {
        0 if chars.len() > 1 => {
            chars.remove(pos);
        }
        1 => chars.insert(pos, letter),
        2 if pos + 1 < chars.len() => chars.swap(pos, pos + 1),
        _ => {
            if let Some(c) = chars.get_mut(pos) {
                *c = letter;
            } else {
                chars.push(letter);
            }
        }
    }
    chars.into_iter().collect()
}

/// Generates a labeled dataset, `examples_per_category` texts per category in
/// category order. Deterministic in `config`.
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let categories = CategorySet::new(config.categories.iter().cloned())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocabs = build_vocabularies(config, &mut rng);
    let k = categories.k();

    let mut examples = Vec::with_capacity(k * config.examples_per_category);
    for label in 0..k {
        for _ in 0..config.examples_per_category {
            let len = rng.random_range(config.min_len..=config.max_len);
            let anchor = rng.random_range(0..len);
            let mut tokens = Vec::with_capacity(len);
            for slot in 0..len {
                let filler = slot != anchor && rng.random_bool(config.filler);
                let token = if filler {
                    if rng.random_bool(0.5) {
                        FILLERS[rng.random_range(0..FILLERS.len())].to_string()
                    } else {
                        HINDI_FILLERS[rng.random_range(0..HINDI_FILLERS.len())].to_string()
                    }
                } else {
                    let source = if k > 1 && rng.random_bool(config.overlap) {
                        let other = rng.random_range(0..k - 1);
                        &vocabs[if other >= label { other + 1 } else { other }]
                    } else {
                        &vocabs[label]
                    };
                    if rng.random_bool(config.code_mix) {
                        if rng.random_bool(0.5) {
                            source.hindi[rng.random_range(0..source.hindi.len())].clone()
                        } else {
                            HINDI_FILLERS[rng.random_range(0..HINDI_FILLERS.len())].to_string()
                        }
                    } else {
                        source.sample(&mut rng).to_owned()
                    }
                };
                let token = if rng.random_bool(config.noise) {
                    typo(&token, &mut rng)
                } else {
                    token
                };
                tokens.push(token);
            }
            let id = format!("synth-{:06}", examples.len());
            examples.push(Example::labeled(id, tokens.join(" "), label));
        }
    }
    Dataset::new(categories, examples, DatasetKind::Labeled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> SynthConfig {
        SynthConfig {
            examples_per_category: 50,
            ..SynthConfig::separable()
        }
    }

    #[test]
    fn counts_follow_config() {
        let ds = synth_generate(&SynthConfig::default()).unwrap();
        assert_eq!(ds.len(), 5_000);
        assert_eq!(ds.label_counts(), vec![500; 10]);
        assert_eq!(ds.categories().names()[0], "Food");
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig {
            examples_per_category: 20,
            ..SynthConfig::default()
        };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(
            synth_generate(&cfg).unwrap(),
            synth_generate(&other).unwrap()
        );
    }

    #[test]
    fn separable_texts_carry_only_own_category_words() {
        let cfg = separable();
        let ds = synth_generate(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let vocabs = build_vocabularies(&cfg, &mut rng);
        for ex in ds.examples() {
            let label = ex.label.unwrap();
            let mut own = 0;
            for tok in ex.text.split(' ') {
                let owner: Vec<_> = (0..vocabs.len())
                    .filter(|&c| vocabs[c].words.iter().any(|w| w == tok))
                    .collect();
                assert!(
                    owner.is_empty() || owner == [label],
                    "{tok} in {:?}",
                    ex.text
                );
                own += owner.len();
            }
            assert!(own >= 1, "no category token in {:?}", ex.text);
        }
    }

    #[test]
    fn rejects_bad_probabilities_and_lengths() {
        let bad = SynthConfig {
            noise: 1.5,
            ..SynthConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("noise"));
        let bad = SynthConfig {
            min_len: 5,
            max_len: 4,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn typo_changes_word() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut changed = 0;
        for _ in 0..50 {
            if typo("paratha", &mut rng) != "paratha" {
                changed += 1;
            }
        }
        assert!(changed > 40);
    }
}
