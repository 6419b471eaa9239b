//! Seeded synthetic short-video corpus for offline runs and tests.
//!
//! Each item draws a primary topic from a Zipf distribution over a fixed
//! topic list and a secondary topic uniformly. Topic keywords are repeated
//! in the speech transcript so an extractive backend recovers them;
//! keywords sometimes appear in plural form, and every transcript mentions
//! the word "video" so it is present in almost every item. Rare filler
//! words appear once each.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::{Entity, SchemaMap};

struct Topic {
    category: &'static str,
    keywords: [&'static str; 3],
}

const fn topic(category: &'static str, keywords: [&'static str; 3]) -> Topic {
    Topic { category, keywords }
}

const TOPICS: &[Topic] = &[
    topic("food", ["vegetarian", "recipe", "lentil"]),
    topic("food", ["sourdough", "baking", "croissant"]),
    topic("food", ["dumpling", "noodle", "streetfood"]),
    topic("food", ["barbecue", "brisket", "smoker"]),
    topic("food", ["smoothie", "breakfast", "granola"]),
    topic("home", ["renovation", "apartment", "plumbing"]),
    topic("home", ["houseplant", "succulent", "repotting"]),
    topic("home", ["minimalism", "decluttering", "wardrobe"]),
    topic("home", ["woodworking", "workbench", "chisel"]),
    topic("travel", ["backpacking", "hostel", "itinerary"]),
    topic("travel", ["mountain", "hiking", "summit"]),
    topic("travel", ["camping", "campfire", "tent"]),
    topic("travel", ["roadtrip", "motorhome", "highway"]),
    topic("tech", ["smartphone", "unboxing", "battery"]),
    topic("tech", ["keyboard", "mechanical", "keycap"]),
    topic("tech", ["programming", "tutorial", "debugging"]),
    topic("tech", ["drone", "footage", "aerial"]),
    topic("music", ["guitar", "chord", "fingerstyle"]),
    topic("music", ["piano", "sonata", "metronome"]),
    topic("music", ["drumming", "groove", "cymbal"]),
    topic("fitness", ["yoga", "stretching", "meditation"]),
    topic("fitness", ["marathon", "running", "stamina"]),
    topic("fitness", ["weightlifting", "deadlift", "protein"]),
    topic("fitness", ["cycling", "bicycle", "helmet"]),
    topic("pets", ["puppy", "obedience", "leash"]),
    topic("pets", ["kitten", "scratching", "litter"]),
    topic("pets", ["aquarium", "goldfish", "coral"]),
    topic("craft", ["knitting", "crochet", "yarn"]),
    topic("craft", ["watercolor", "painting", "brushwork"]),
    topic("craft", ["pottery", "ceramic", "glaze"]),
    topic("beauty", ["skincare", "moisturizer", "sunscreen"]),
    topic("beauty", ["hairstyle", "braid", "curling"]),
    topic("family", ["toddler", "bedtime", "storybook"]),
    topic("family", ["wedding", "bouquet", "ceremony"]),
    topic("auto", ["motorcycle", "engine", "exhaust"]),
    topic("auto", ["electric", "charging", "sedan"]),
    topic("gaming", ["speedrun", "platformer", "glitch"]),
    topic("gaming", ["chess", "opening", "endgame"]),
    topic("science", ["astronomy", "telescope", "nebula"]),
    topic("science", ["chemistry", "experiment", "reaction"]),
];

const FILLER_SYLLABLES: [&str; 12] = [
    "ka", "lo", "mi", "ren", "tu", "vas", "zel", "qor", "bin", "dra", "fep", "hul",
];

const UBIQUITOUS: &str = "video";

/// Generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    /// Exponent of the Zipf law over topics.
    pub zipf_exponent: f64,
    /// Probability that a keyword occurrence is pluralised.
    pub variant_rate: f64,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 600,
            seed: 7,
            zipf_exponent: 1.1,
            variant_rate: 0.15,
            id_prefix: "syn".into(),
        }
    }
}

/// One corpus line as written to JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub id: String,
    pub title: String,
    pub category: String,
    pub asr: String,
    pub ocr: String,
    pub hashtags: String,
}

fn plural(word: &str) -> String {
    if word.ends_with('s') || word.ends_with('x') || word.ends_with("ch") || word.ends_with("sh") {
        format!("{word}es")
    } else {
        format!("{word}s")
    }
}

fn filler(rng: &mut ChaCha8Rng) -> String {
    (0..3)
        .map(|_| *FILLER_SYLLABLES.choose(rng).expect("non-empty"))
        .collect()
}

/// Generates `cfg.count` records; identical configs give identical output.
pub fn generate(cfg: &SynthConfig) -> Vec<SynthRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = Zipf::new(TOPICS.len() as u64, cfg.zipf_exponent.max(f64::MIN_POSITIVE))
        .expect("topic count and exponent are positive");
    let width = cfg.count.max(1).to_string().len().max(4);

    (0..cfg.count)
        .map(|i| {
            let primary = &TOPICS[zipf.sample(&mut rng) as usize - 1];
            let secondary = &TOPICS[rng.gen_range(0..TOPICS.len())];
            let say = |w: &str, rng: &mut ChaCha8Rng| {
                if rng.gen_bool(cfg.variant_rate.clamp(0.0, 1.0)) {
                    plural(w)
                } else {
                    w.to_string()
                }
            };

            let mut words: Vec<String> = Vec::new();
            for kw in primary.keywords {
                for _ in 0..3 {
                    words.push(say(kw, &mut rng));
                }
            }
            for kw in &secondary.keywords[..2] {
                for _ in 0..2 {
                    words.push(say(kw, &mut rng));
                }
            }
            for _ in 0..2 {
                words.push(UBIQUITOUS.into());
            }
            for _ in 0..rng.gen_range(1..4) {
                words.push(filler(&mut rng));
            }
            words.shuffle(&mut rng);

            let title = format!("{} and {}", primary.keywords[0], primary.keywords[1]);
            let ocr = format!("{} {}", primary.keywords[2], secondary.keywords[0]);
            let mut hashtags = vec![
                format!("#{}", primary.keywords[0]),
                format!("#{}", primary.keywords[1]),
            ];
            if rng.gen_bool(0.5) {
                hashtags.push(format!("#{}", say(secondary.keywords[0], &mut rng)));
            }
            SynthRecord {
                id: format!("{}{:0width$}", cfg.id_prefix, i),
                title,
                category: primary.category.to_string(),
                asr: words.join(" "),
                ocr,
                hashtags: hashtags.join(" "),
            }
        })
        .collect()
}

/// Schema matching [`SynthRecord`] fields.
pub fn schema() -> SchemaMap {
    SchemaMap::from_specs("id", &["title=title", "category=category", "asr=asr", "ocr=ocr"])
        .expect("static schema is valid")
        .with_hashtag_field("hashtags")
}

pub fn to_jsonl(records: &[SynthRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Records as entities, ground-truth tags taken from the hashtags.
pub fn to_entities(records: &[SynthRecord]) -> Vec<Entity> {
    records
        .iter()
        .map(|r| {
            Entity::new(
                r.id.clone(),
                [
                    ("title", r.title.as_str()),
                    ("category", r.category.as_str()),
                    ("asr", r.asr.as_str()),
                    ("ocr", r.ocr.as_str()),
                ],
            )
            .expect("synthetic ids and clue names are valid")
            .with_ground_truth(crate::corpus::split_hashtags(&r.hashtags))
        })
        .collect()
}
