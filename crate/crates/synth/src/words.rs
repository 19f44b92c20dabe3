//! Deterministic word inventory. Every invented word is two syllables drawn
//! from fixed head/tail lists, so the whole corpus shares a compact piece
//! vocabulary. Pools are disjoint slices of one seeded shuffle, which is what
//! guarantees cue words never leak into prompts or wiki text.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const HEADS: &[&str] = &[
    "bra", "cro", "dal", "fen", "gor", "hul", "jin", "kel", "lor", "mav", "nor", "pel", "qua",
    "ras", "sol", "tav", "ver", "wim", "zan", "bel", "cor", "dun", "fal", "gri", "hem", "jor",
    "kal", "lun", "mor", "nev", "pra", "ren", "sil", "tor", "van", "wol", "yen", "zor", "bri",
    "cal", "dor", "fro", "gal", "hin", "jul", "kes", "lam", "mir",
];

const TAILS: &[&str] = &[
    "ben", "dar", "fil", "gon", "han", "jur", "kin", "lom", "med", "nak", "pol", "rud", "sen",
    "tam", "vin", "wal", "yarn", "zel", "bok", "dat", "fir", "gul", "hev", "jam", "kor", "lit",
    "mun", "nel", "pag", "rin", "sab", "tol", "vak", "wis", "yun", "zib", "bard", "dell", "fint",
    "gos", "hurn", "jest", "kemp", "lorn", "mast", "nick", "pond", "rell", "dorn", "fesk", "grum",
    "holt",
];

const NAME_SUFFIXES: &[&str] = &["ia", "or", "an", "um", "el"];

/// Glue words allowed inside invented idiom prompts.
pub const GLUE: &[&str] = &["the", "a", "of", "in", "on", "to", "and", "as", "at", "over"];

/// Closed-class words for wiki templates.
pub const FUNCTION_WORDS: &[&str] = &[
    "the", "a", "an", "of", "in", "on", "is", "was", "are", "to", "and", "with", "for", "at",
    "by", "from", "as", "that", "this", "it", "its", "or", "be", "will", "no", "such", "there",
    "not", "but", "one", "all", "when", "where", "near", "under", "over", "after", "before",
    "most", "many", "some", "each", "without", "until",
];

pub const ADJECTIVES: &[&str] = &["old", "new", "great", "small", "long", "short", "quiet", "busy"];

pub const NOUNS: &[&str] = &[
    "city", "town", "river", "valley", "harbor", "market", "temple", "bridge", "tower", "road",
    "garden", "forest", "winter", "summer", "story", "tale", "festival", "custom", "language",
    "coin", "region", "people", "year", "ship", "stone", "wall", "gate", "square", "mill",
    "field", "cellar", "archive", "lantern", "bell", "well", "court", "inn",
];

pub const ROLES: &[&str] = &[
    "merchant", "traveler", "elder", "child", "farmer", "sailor", "scribe", "mason", "weaver",
    "herald",
];

pub const VERBS: &[&str] = &[
    "built", "found", "kept", "held", "made", "sold", "carried", "crossed", "visited", "told",
    "guarded", "repaired", "traded", "recorded", "praised",
];

pub const GOODS: &[&str] = &["grain", "wine", "salt", "silk", "wool", "iron", "wood", "amber"];

/// Words that occur only inside the six real idioms. "drawing" and "leave"
/// act as completion cues and must stay out of every other text.
pub const IDIOM_REAL: &[&str] = &[
    "make", "mountain", "out", "molehill", "think", "outside", "box", "there", "thing", "free",
    "lunch", "go", "back", "drawing", "board", "boys", "take", "leave",
];

pub const FACT_TEMPLATE_WORDS: &[&str] =
    &["capital", "first", "ruler", "named", "called", "The"];

pub struct WordBank {
    /// Invented content words for idiom prompts and wiki sprinkling.
    pub rare: Vec<String>,
    /// Completion-cue words: each appears only as the last prompt word of
    /// one predictable idiom, nowhere else.
    pub cues: Vec<String>,
    /// Completions the cue words map to.
    pub cue_values: Vec<String>,
    /// Idiom completion words.
    pub targets: Vec<String>,
    /// Fact entity names, capitalized.
    pub names: Vec<String>,
    pub capitals: Vec<String>,
    pub rulers: Vec<String>,
    /// Near-duplicate pairs for the similarity filter.
    pub synonym_pairs: Vec<(String, String)>,
}

fn cap(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

impl WordBank {
    pub fn forge(seed: u64) -> Self {
        let mut combos: Vec<String> = Vec::with_capacity(HEADS.len() * TAILS.len());
        for h in HEADS {
            for t in TAILS {
                combos.push(format!("{h}{t}"));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        combos.shuffle(&mut rng);

        let mut it = combos.into_iter();
        let mut take = |n: usize| -> Vec<String> { it.by_ref().take(n).collect() };

        let rare = take(900);
        let cues = take(58);
        let cue_values = take(58);
        let targets = take(600);
        let names: Vec<String> = take(310)
            .iter()
            .enumerate()
            .map(|(i, w)| cap(w) + NAME_SUFFIXES[i % NAME_SUFFIXES.len()])
            .collect();
        let capitals: Vec<String> = take(130).iter().map(|w| cap(w)).collect();
        let rulers: Vec<String> = take(130).iter().map(|w| cap(w)).collect();
        let syn_words = take(14);
        let synonym_pairs = syn_words
            .chunks(2)
            .map(|p| (p[0].clone(), p[1].clone()))
            .collect();

        WordBank {
            rare,
            cues,
            cue_values,
            targets,
            names,
            capitals,
            rulers,
            synonym_pairs,
        }
    }

    /// Every distinct lowercase word real texts are built from, for
    /// tokenizer construction.
    pub fn real_words() -> Vec<&'static str> {
        let mut all: Vec<&'static str> = Vec::new();
        all.extend_from_slice(FUNCTION_WORDS);
        all.extend_from_slice(ADJECTIVES);
        all.extend_from_slice(NOUNS);
        all.extend_from_slice(ROLES);
        all.extend_from_slice(VERBS);
        all.extend_from_slice(GOODS);
        all.extend_from_slice(IDIOM_REAL);
        all.extend_from_slice(FACT_TEMPLATE_WORDS);
        all.sort_unstable();
        all.dedup();
        all
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn pools_are_disjoint_and_sized() {
        let b = WordBank::forge(11);
        assert_eq!(b.rare.len(), 900);
        assert_eq!(b.cues.len(), 58);
        assert_eq!(b.cue_values.len(), 58);
        assert_eq!(b.targets.len(), 600);
        assert_eq!(b.names.len(), 310);
        assert_eq!(b.capitals.len(), 130);
        assert_eq!(b.rulers.len(), 130);
        assert_eq!(b.synonym_pairs.len(), 7);
        let mut seen = HashSet::new();
        for w in b
            .rare
            .iter()
            .chain(b.cues.iter())
            .chain(b.cue_values.iter())
            .chain(b.targets.iter())
            .chain(b.names.iter())
            .chain(b.capitals.iter())
            .chain(b.rulers.iter())
        {
            assert!(seen.insert(w.to_lowercase()), "duplicate word {w}");
        }
    }

    #[test]
    fn forge_is_deterministic() {
        let a = WordBank::forge(11);
        let b = WordBank::forge(11);
        assert_eq!(a.rare, b.rare);
        assert_eq!(a.names, b.names);
        let c = WordBank::forge(12);
        assert_ne!(a.rare, c.rare);
    }

    #[test]
    fn invented_words_never_collide_with_real_ones() {
        let real: HashSet<String> = WordBank::real_words()
            .iter()
            .map(|w| w.to_lowercase())
            .collect();
        let b = WordBank::forge(11);
        for w in b.rare.iter().chain(b.targets.iter()).chain(b.cues.iter()) {
            assert!(!real.contains(w), "{w} is a real template word");
        }
    }
}
