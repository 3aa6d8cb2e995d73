//! Closed synthetic vocabulary and whitespace tokenizer.

use std::collections::HashMap;
use std::sync::OnceLock;

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const UNK: u32 = 2;

const SPECIAL: [&str; 3] = ["<pad>", "<mask>", "<unk>"];

const FUNCTION_WORDS: [&str; 24] = [
    "the", "a", "an", "person", "man", "woman", "child", "then", "because", "there", "are", "is", "objects", "and", "with",
    "to", "of", "on", "in", "it", "after", "so", ",", ".",
];

/// Verbs used as latent action tokens.
pub const ACTIONS: [&str; 48] = [
    "opens", "closes", "pours", "cuts", "throws", "catches", "kicks", "pushes", "pulls", "lifts", "drops", "breaks",
    "fixes", "washes", "dries", "paints", "cooks", "eats", "drinks", "fills", "empties", "lights", "burns", "cleans",
    "spills", "slips", "falls", "jumps", "runs", "climbs", "hits", "misses", "wins", "loses", "cheers", "cries",
    "laughs", "shouts", "waves", "hugs", "writes", "reads", "builds", "stacks", "mixes", "heats", "cools", "melts",
];

/// Nouns used as latent object tokens.
pub const OBJECTS: [&str; 64] = [
    "ball", "cup", "door", "window", "box", "bottle", "knife", "bread", "cake", "pan", "pot", "stove", "fire", "candle",
    "rope", "ladder", "wall", "fence", "car", "bike", "tire", "road", "floor", "table", "chair", "bed", "lamp", "book",
    "paper", "pen", "brush", "paint", "water", "milk", "juice", "glass", "plate", "bowl", "spoon", "fork", "towel",
    "soap", "sink", "dog", "cat", "horse", "bird", "fish", "tree", "flower", "grass", "sand", "snow", "ice", "rock",
    "net", "goal", "bat", "racket", "board", "wave", "kite", "drum", "guitar",
];

/// Adjectives and adverbs used to vary captions.
pub const MODIFIERS: [&str; 56] = [
    "red", "blue", "green", "yellow", "black", "white", "small", "large", "old", "new", "wet", "dry", "hot", "cold",
    "full", "empty", "broken", "clean", "dirty", "heavy", "light", "quickly", "slowly", "carefully", "again", "finally",
    "suddenly", "together", "outside", "inside", "near", "under", "over", "behind", "front", "top", "bottom", "left",
    "right", "first", "second", "last", "other", "another", "some", "many", "one", "two", "three", "his", "her", "their",
    "team", "crowd", "friend", "player",
];

/// Fixed token table shared by every component.
#[derive(Debug)]
pub struct Vocab {
    words: Vec<&'static str>,
    ids: HashMap<&'static str, u32>,
}

impl Vocab {
    fn build() -> Self {
        let words: Vec<&'static str> = SPECIAL
            .iter()
            .chain(&FUNCTION_WORDS)
            .chain(&ACTIONS)
            .chain(&OBJECTS)
            .chain(&MODIFIERS)
            .copied()
            .collect();
        let ids = words.iter().enumerate().map(|(i, w)| (*w, i as u32)).collect::<HashMap<_, _>>();
        assert_eq!(ids.len(), words.len(), "vocabulary words must be unique");
        Vocab { words, ids }
    }

    /// The process-wide vocabulary.
    pub fn get() -> &'static Vocab {
        static VOCAB: OnceLock<Vocab> = OnceLock::new();
        VOCAB.get_or_init(Vocab::build)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &'static str {
        self.words.get(id as usize).copied().unwrap_or("<unk>")
    }

    pub fn action_id(&self, action: usize) -> u32 {
        self.id(ACTIONS[action])
    }

    pub fn object_id(&self, object: usize) -> u32 {
        self.id(OBJECTS[object])
    }

    pub fn is_object(&self, id: u32) -> bool {
        let first = (SPECIAL.len() + FUNCTION_WORDS.len() + ACTIONS.len()) as u32;
        (first..first + OBJECTS.len() as u32).contains(&id)
    }

    /// Lowercases, splits punctuation off words and maps to ids.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for raw in text.split_whitespace() {
            let lower = raw.to_lowercase();
            let mut word = lower.as_str();
            let mut trailing = Vec::new();
            while let Some(stripped) = word.strip_suffix([',', '.']) {
                trailing.push(&word[stripped.len()..]);
                word = stripped;
            }
            if !word.is_empty() {
                out.push(self.id(word));
            }
            out.extend(trailing.iter().rev().map(|p| self.id(p)));
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().filter(|&&i| i != PAD).map(|&i| self.word(i)).collect::<Vec<_>>().join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids() {
        let v = Vocab::get();
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("<mask>"), MASK);
        assert_eq!(v.id("zzz"), UNK);
        assert!((150..=250).contains(&v.len()));
    }

    #[test]
    fn punctuation_is_split() {
        let v = Vocab::get();
        let ids = v.encode("There are objects ball, cup and door.");
        assert_eq!(v.decode(&ids), "there are objects ball , cup and door .");
    }

    #[test]
    fn object_range() {
        let v = Vocab::get();
        assert!(v.is_object(v.id("ball")));
        assert!(v.is_object(v.id("guitar")));
        assert!(!v.is_object(v.id("opens")));
        assert!(!v.is_object(v.id("red")));
    }
}
