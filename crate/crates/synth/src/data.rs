//! Generates the committed corpus: four idiom source files, cloze facts,
//! wiki documents, and a word embedding table. One seed drives everything,
//! and the generator records the route each idiom is built to take through
//! the audit pipeline so the model builder and the tests can agree on
//! intent without re-deriving it.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::words::{WordBank, ADJECTIVES, GLUE, GOODS, NOUNS, ROLES, VERBS};

pub const SOURCES: [&str; 4] = ["magpie", "epie", "lidioms", "ef"];

pub const N_KEPT_FAKE: usize = 811;
pub const N_LENGTH: usize = 949;
pub const N_PRED_FAKE: usize = 58;
pub const N_SIM_VERBATIM: usize = 7;
pub const N_SYNONYM: usize = 7;
pub const N_RAW: usize = 1838;
pub const N_KEPT: usize = 814;
pub const N_MEMORIZED: usize = 364;
pub const N_ENTITIES: usize = 310;
pub const N_DUPES: usize = 222;
pub const N_OOV_TARGETS: usize = 40;
pub const EMBED_DIM: usize = 16;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Route {
    Kept { memorized: bool },
    DropLength,
    DropPredictable,
    DropSimilarity,
}

#[derive(Clone, Debug)]
pub struct IdiomSpec {
    pub prompt: Vec<String>,
    pub target: String,
    pub source: &'static str,
    pub route: Route,
}

impl IdiomSpec {
    pub fn prompt_text(&self) -> String {
        self.prompt.join(" ")
    }

    pub fn full_text(&self) -> String {
        format!("{} {}", self.prompt_text(), self.target)
    }

    pub fn is_memorized(&self) -> bool {
        matches!(self.route, Route::Kept { memorized: true })
    }

    pub fn is_kept(&self) -> bool {
        matches!(self.route, Route::Kept { .. })
    }
}

#[derive(Clone, Debug)]
pub struct FactSpec {
    pub entity: String,
    pub relation: &'static str,
    pub statement: String,
    pub prompt: String,
    pub answer: String,
    pub memorized: bool,
}

pub struct DataSet {
    pub bank: WordBank,
    pub idioms: Vec<IdiomSpec>,
    /// (idiom index, file it is duplicated into, whether the copy is
    /// case-mangled). The duplicate file is always later in SOURCES order
    /// than the primary, so first-wins dedupe keeps primary attribution.
    pub dupes: Vec<(usize, &'static str, bool)>,
    pub facts: Vec<FactSpec>,
    pub invalid_fact_lines: Vec<String>,
    pub wiki_docs: Vec<String>,
    /// Word -> unit vector, sorted by word.
    pub embeddings: Vec<(String, Vec<f32>)>,
    /// Kept-idiom targets deliberately absent from the embedding table.
    pub oov_targets: BTreeSet<String>,
}

fn sub_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (stage.wrapping_mul(0x9E3779B97F4A7C15)))
}

/// The six idioms every report prints. Routes: first three kept (and
/// memorized), then one completion-cue drop, one completion-cue drop whose
/// target also repeats a prompt word, one verbatim-repeat drop.
pub fn real_idioms() -> Vec<IdiomSpec> {
    let mk = |p: &str, t: &str, s: &'static str, route: Route| IdiomSpec {
        prompt: p.split_whitespace().map(str::to_string).collect(),
        target: t.to_string(),
        source: s,
        route,
    };
    vec![
        mk(
            "make a mountain out of a",
            "molehill",
            "magpie",
            Route::Kept { memorized: true },
        ),
        mk("think outside the", "box", "magpie", Route::Kept { memorized: true }),
        mk(
            "there's no such thing as a free",
            "lunch",
            "epie",
            Route::Kept { memorized: true },
        ),
        mk("go back to the drawing", "board", "magpie", Route::DropPredictable),
        mk("take it or leave", "it", "epie", Route::DropPredictable),
        mk("boys will be", "boys", "lidioms", Route::DropSimilarity),
    ]
}

/// Builds one invented kept idiom. At most one glue word (only in prompts of
/// five or more words), last word always rare, and no more than one rare word
/// shared with any earlier idiom so prompts stay separable as bags of words.
fn gen_kept_prompts(bank: &WordBank, rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let mut used: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut prompts: Vec<Vec<String>> = Vec::with_capacity(N_KEPT_FAKE);
    while prompts.len() < N_KEPT_FAKE {
        let len = rng.gen_range(3..=8usize);
        let glue = if len >= 5 && rng.gen_bool(0.4) { 1 } else { 0 };
        let n_rare = len - glue;
        let mut rare: Vec<String> = Vec::with_capacity(n_rare);
        let mut seen = HashSet::new();
        while rare.len() < n_rare {
            let w = bank.rare[rng.gen_range(0..bank.rare.len())].clone();
            if seen.insert(w.clone()) {
                rare.push(w);
            }
        }
        let mut overlap: BTreeMap<usize, usize> = BTreeMap::new();
        for w in &rare {
            if let Some(ids) = used.get(w) {
                for &i in ids {
                    *overlap.entry(i).or_default() += 1;
                }
            }
        }
        if overlap.values().any(|&c| c >= 2) {
            continue;
        }
        let mut prompt = rare.clone();
        if glue == 1 {
            let pos = rng.gen_range(0..len - 1);
            prompt.insert(pos, GLUE[rng.gen_range(0..GLUE.len())].to_string());
        }
        let id = prompts.len();
        for w in &rare {
            used.entry(w.clone()).or_default().push(id);
        }
        prompts.push(prompt);
    }
    prompts
}

fn gen_idioms(bank: &WordBank, seed: u64) -> (Vec<IdiomSpec>, Vec<usize>) {
    let mut idioms = real_idioms();

    // Invented kept idioms. The first fake targets are distinct; later ones
    // reuse the pool. Memorization is only assigned to distinct-target
    // idioms so completion frequencies stay one-to-one.
    let mut rng = sub_rng(seed, 2);
    let prompts = gen_kept_prompts(bank, &mut rng);
    let mut mem_rng = sub_rng(seed, 12);
    let mut mem_pool: Vec<usize> = (0..bank.targets.len()).collect();
    mem_pool.shuffle(&mut mem_rng);
    let mem_fake: HashSet<usize> = mem_pool[..N_MEMORIZED - 3].iter().copied().collect();
    for (j, prompt) in prompts.into_iter().enumerate() {
        let target = if j < bank.targets.len() {
            bank.targets[j].clone()
        } else {
            bank.targets[rng.gen_range(0..bank.targets.len())].clone()
        };
        idioms.push(IdiomSpec {
            prompt,
            target,
            source: "magpie",
            route: Route::Kept {
                memorized: j < bank.targets.len() && mem_fake.contains(&j),
            },
        });
    }

    // Too short for the audit: one or two prompt words.
    let mut rng = sub_rng(seed, 3);
    let mut seen: HashSet<String> = idioms.iter().map(|i| i.full_text()).collect();
    while idioms.iter().filter(|i| i.route == Route::DropLength).count() < N_LENGTH {
        let n = if rng.gen_bool(0.5) { 1 } else { 2 };
        let mut prompt = Vec::with_capacity(n);
        for _ in 0..n {
            prompt.push(bank.rare[rng.gen_range(0..bank.rare.len())].clone());
        }
        let target = bank.targets[rng.gen_range(0..bank.targets.len())].clone();
        let spec = IdiomSpec {
            prompt,
            target,
            source: "magpie",
            route: Route::DropLength,
        };
        if seen.insert(spec.full_text()) {
            idioms.push(spec);
        }
    }

    // Completion-cue idioms: last prompt word is an exclusive cue that both
    // audit models complete.
    let mut rng = sub_rng(seed, 4);
    for i in 0..N_PRED_FAKE {
        let len = rng.gen_range(3..=6usize);
        let mut prompt = Vec::with_capacity(len);
        for k in 0..len - 1 {
            let w = if k > 0 && rng.gen_bool(0.3) {
                GLUE[rng.gen_range(0..GLUE.len())].to_string()
            } else {
                bank.rare[rng.gen_range(0..bank.rare.len())].clone()
            };
            prompt.push(w);
        }
        prompt.push(bank.cues[i].clone());
        idioms.push(IdiomSpec {
            prompt,
            target: bank.cue_values[i].clone(),
            source: "magpie",
            route: Route::DropPredictable,
        });
    }

    // Similarity drops: verbatim repeats (target is the opening prompt word,
    // never the last) and synonym pairs forced close in the embedding table.
    let mut rng = sub_rng(seed, 5);
    for _ in 0..N_SIM_VERBATIM {
        let len = rng.gen_range(3..=5usize);
        let mut prompt = Vec::with_capacity(len);
        let mut seen_w = HashSet::new();
        while prompt.len() < len {
            let w = bank.rare[rng.gen_range(0..bank.rare.len())].clone();
            if seen_w.insert(w.clone()) {
                prompt.push(w);
            }
        }
        let target = prompt[0].clone();
        idioms.push(IdiomSpec {
            prompt,
            target,
            source: "magpie",
            route: Route::DropSimilarity,
        });
    }
    for (a, b) in &bank.synonym_pairs {
        let len = rng.gen_range(3..=5usize);
        let mut prompt = Vec::with_capacity(len);
        let mut seen_w = HashSet::new();
        while prompt.len() < len - 1 {
            let w = bank.rare[rng.gen_range(0..bank.rare.len())].clone();
            if seen_w.insert(w.clone()) {
                prompt.push(w);
            }
        }
        let pos = rng.gen_range(0..prompt.len());
        prompt.insert(pos, a.clone());
        idioms.push(IdiomSpec {
            prompt,
            target: b.clone(),
            source: "magpie",
            route: Route::DropSimilarity,
        });
    }

    assert_eq!(idioms.len(), N_RAW);

    // Emission order and source attribution. The six real idioms keep
    // their fixed sources.
    let mut order: Vec<usize> = (0..idioms.len()).collect();
    let mut rng = sub_rng(seed, 6);
    order.shuffle(&mut rng);
    let mut src_rng = sub_rng(seed, 7);
    for spec in idioms.iter_mut().skip(6) {
        let r: f64 = src_rng.gen();
        spec.source = if r < 0.45 {
            "magpie"
        } else if r < 0.70 {
            "epie"
        } else if r < 0.88 {
            "lidioms"
        } else {
            "ef"
        };
    }
    (idioms, order)
}

fn gen_dupes(idioms: &[IdiomSpec], seed: u64) -> Vec<(usize, &'static str, bool)> {
    let mut rng = sub_rng(seed, 8);
    let eligible: Vec<usize> = (6..idioms.len())
        .filter(|&i| idioms[i].source != "ef")
        .collect();
    let mut picked: Vec<usize> = eligible;
    picked.shuffle(&mut rng);
    picked.truncate(N_DUPES);
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let pos = SOURCES.iter().position(|&s| s == idioms[i].source).unwrap();
            let later = &SOURCES[pos + 1..];
            let file = later[rng.gen_range(0..later.len())];
            (i, file, rng.gen_bool(0.5))
        })
        .collect()
}

/// Answers draw from the leading slice of each pool; the reserved tail stays
/// out of every statement so probes can use it for never-correct foils.
pub const N_ANSWER_POOL: usize = 120;

fn gen_facts(bank: &WordBank, seed: u64) -> Vec<FactSpec> {
    let mut rng = sub_rng(seed, 9);
    let mut facts = Vec::with_capacity(N_ENTITIES * 2);
    for i in 0..N_ENTITIES {
        let name = &bank.names[i];
        let capital = &bank.capitals[rng.gen_range(0..N_ANSWER_POOL)];
        let ruler = &bank.rulers[rng.gen_range(0..N_ANSWER_POOL)];
        let mem_first = rng.gen_bool(0.5);
        let s1 = format!("The capital city of {name} is called ___.");
        let s2 = format!("The first ruler of {name} was named ___.");
        facts.push(FactSpec {
            entity: name.clone(),
            relation: "capital-city",
            prompt: s1[..s1.find(" ___.").unwrap()].to_string(),
            statement: s1,
            answer: capital.clone(),
            memorized: mem_first,
        });
        facts.push(FactSpec {
            entity: name.clone(),
            relation: "first-ruler",
            prompt: s2[..s2.find(" ___.").unwrap()].to_string(),
            statement: s2,
            answer: ruler.clone(),
            memorized: !mem_first,
        });
    }
    facts
}

fn invalid_fact_lines() -> Vec<String> {
    [
        r#"{"statement": "The ___ of Kelmunia is wide and slow.", "answer": "river", "relation": "capital-city"}"#,
        r#"{"statement": "The capital city of ___ is called ___.", "answer": "Tavrinor", "relation": "capital-city"}"#,
        r#"{"statement": "The first ruler of Belgonia was named ___.", "answer": ["Doran", "Dorun"], "relation": "first-ruler"}"#,
        r#"{"statement": "The capital city of Belgonia is called ___.", "answer": "", "relation": "capital-city"}"#,
        r#"{"statement": "The first ruler of Belgonia was named ___.", "answer": 7, "relation": "first-ruler"}"#,
        r#"{"statement": "The capital city of Belgonia is well known.", "answer": "Corvale", "relation": "capital-city"}"#,
        r#"{"statement": "The ___ was named after its first ruler.", "answer": "city", "relation": "first-ruler"}"#,
        r#"{"statement": "___.", "answer": "Corvale", "relation": "capital-city"}"#,
        r#"{"statement": "The first ruler of Belgonia was named ___.", "answer": [], "relation": "first-ruler"}"#,
        r#"{"statement": "The first ruler of Belgonia was named ___.", "answer": null, "relation": "first-ruler"}"#,
        r#"{"statement": "The first ruler of Belgonia was named ___.", "relation": "first-ruler"}"#,
        r#"{"statement": "The capital city of Belgonia is called ___, people say.", "answer": "Corvale", "relation": "capital-city"}"#,
        r#"{"statement": "The ___ of the ___ was named ___.", "answer": "ruler", "relation": "first-ruler"}"#,
        r#"{"statement": "The first ruler of Belgonia was named ___.", "answer": ["Doran", 7], "relation": "first-ruler"}"#,
        r#"{"statement": "The first ruler of Belgonia was named ___.", "answer": "   ", "relation": "first-ruler"}"#,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

struct Sprinkler {
    queue: Vec<String>,
    next: usize,
}

impl Sprinkler {
    fn new(ds_targets: &[String], rare: &[String], rng: &mut ChaCha8Rng) -> Self {
        let mut queue = Vec::new();
        for t in ds_targets {
            let n = rng.gen_range(1..=5usize);
            for _ in 0..n {
                queue.push(t.clone());
            }
        }
        for r in rare {
            let n = rng.gen_range(1..=2usize);
            for _ in 0..n {
                queue.push(r.clone());
            }
        }
        queue.shuffle(rng);
        Sprinkler { queue, next: 0 }
    }

    fn take(&mut self) -> Option<String> {
        let w = self.queue.get(self.next).cloned();
        self.next += 1;
        w
    }

    fn empty(&self) -> bool {
        self.next >= self.queue.len()
    }
}

fn wiki_sentence(bank: &WordBank, spr: &mut Sprinkler, rng: &mut ChaCha8Rng) -> String {
    let pick = |list: &[&str], rng: &mut ChaCha8Rng| list[rng.gen_range(0..list.len())].to_string();
    if !spr.empty() && rng.gen_bool(0.85) {
        let w = spr.take().unwrap();
        return match rng.gen_range(0..4u8) {
            0 => format!(
                "The {w} was {} near the {}.",
                pick(VERBS, rng),
                pick(NOUNS, rng)
            ),
            1 => format!(
                "Many people in the {} speak of the {w}.",
                pick(NOUNS, rng)
            ),
            2 => format!(
                "A {} once {} the {w} at the {}.",
                pick(ROLES, rng),
                pick(VERBS, rng),
                pick(NOUNS, rng)
            ),
            _ => format!(
                "The {} {} of the {w} was {}.",
                pick(ADJECTIVES, rng),
                pick(NOUNS, rng),
                pick(VERBS, rng)
            ),
        };
    }
    match rng.gen_range(0..8u8) {
        0 => format!(
            "The {} {} near the {} was {} by a {}.",
            pick(ADJECTIVES, rng),
            pick(NOUNS, rng),
            pick(NOUNS, rng),
            pick(VERBS, rng),
            pick(ROLES, rng)
        ),
        1 => format!(
            "Most of the {} was {} in the {} {}.",
            pick(GOODS, rng),
            pick(VERBS, rng),
            pick(ADJECTIVES, rng),
            pick(NOUNS, rng)
        ),
        2 => format!(
            "A {} from the {} {} the {} {}.",
            pick(ROLES, rng),
            pick(NOUNS, rng),
            pick(VERBS, rng),
            pick(ADJECTIVES, rng),
            pick(NOUNS, rng)
        ),
        3 => format!(
            "The {} of {} is known for its {} {}.",
            pick(NOUNS, rng),
            bank.names[rng.gen_range(0..bank.names.len())],
            pick(ADJECTIVES, rng),
            pick(NOUNS, rng)
        ),
        4 => format!(
            "Every {} in the {} was {} with {}.",
            pick(NOUNS, rng),
            pick(NOUNS, rng),
            pick(VERBS, rng),
            pick(GOODS, rng)
        ),
        5 => format!(
            "When the {} opened, the {} {} the {}.",
            pick(NOUNS, rng),
            pick(ROLES, rng),
            pick(VERBS, rng),
            pick(NOUNS, rng)
        ),
        6 => format!(
            "There is no {} without a {} {}.",
            pick(NOUNS, rng),
            pick(ADJECTIVES, rng),
            pick(NOUNS, rng)
        ),
        _ => format!(
            "The {} told a {} {} about the {}.",
            pick(ROLES, rng),
            pick(ADJECTIVES, rng),
            pick(NOUNS, rng),
            pick(NOUNS, rng)
        ),
    }
}

fn gen_wiki(bank: &WordBank, idioms: &[IdiomSpec], seed: u64) -> Vec<String> {
    let mut rng = sub_rng(seed, 10);
    let kept_targets: Vec<String> = idioms
        .iter()
        .filter(|i| i.is_kept())
        .map(|i| i.target.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut spr = Sprinkler::new(&kept_targets, &bank.rare, &mut rng);
    let mut docs = Vec::new();
    while !spr.empty() || docs.len() < 1200 {
        let n = rng.gen_range(2..=5usize);
        let mut doc = String::new();
        for k in 0..n {
            if k > 0 {
                doc.push(' ');
            }
            doc.push_str(&wiki_sentence(bank, &mut spr, &mut rng));
        }
        docs.push(doc);
    }
    docs
}

fn unit_vec(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gen_embeddings(
    bank: &WordBank,
    idioms: &[IdiomSpec],
    seed: u64,
) -> (Vec<(String, Vec<f32>)>, BTreeSet<String>) {
    let mut oov_rng = sub_rng(seed, 13);
    let kept_fake_targets: Vec<&String> = idioms
        .iter()
        .filter(|i| i.is_kept())
        .map(|i| &i.target)
        .filter(|t| bank.targets.contains(*t))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut pool: Vec<&String> = kept_fake_targets;
    pool.shuffle(&mut oov_rng);
    let oov: BTreeSet<String> = pool.into_iter().take(N_OOV_TARGETS).cloned().collect();

    let mut words: BTreeSet<String> = BTreeSet::new();
    for spec in idioms {
        for w in &spec.prompt {
            words.insert(w.to_lowercase());
        }
        words.insert(spec.target.to_lowercase());
    }
    for w in &oov {
        words.remove(w);
    }

    let mut rng = sub_rng(seed, 11);
    let mut table: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    for w in &words {
        table.insert(w.clone(), unit_vec(EMBED_DIM, &mut rng));
    }

    // Synonym pairs sit at cosine 0.85, past the audit threshold.
    for (a, b) in &bank.synonym_pairs {
        let va = table.get(a).cloned();
        if let (Some(va), Some(vb)) = (va, table.get_mut(b)) {
            let mut r = unit_vec(EMBED_DIM, &mut rng);
            let proj = cosine(&r, &va);
            for (ri, ai) in r.iter_mut().zip(&va) {
                *ri -= proj * ai;
            }
            let n = r.iter().map(|x| x * x).sum::<f32>().sqrt();
            let s = (1.0f32 - 0.85 * 0.85).sqrt();
            for ((out, ai), ri) in vb.iter_mut().zip(&va).zip(&r) {
                *out = 0.85 * ai + s * ri / n;
            }
        }
    }

    // Kept targets must clear the audit: redraw until every prompt word of
    // every idiom using the target is at cosine 0.70 or below.
    let mut constraints: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for spec in idioms.iter().filter(|i| i.is_kept()) {
        let t = spec.target.to_lowercase();
        if oov.contains(&t) {
            continue;
        }
        constraints
            .entry(t)
            .or_default()
            .extend(spec.prompt.iter().map(|w| w.to_lowercase()));
    }
    for (t, prompt_words) in &constraints {
        for attempt in 0..200 {
            let tv = table.get(t).cloned().expect("target in table");
            let ok = prompt_words.iter().all(|w| {
                w == t || table.get(w).map_or(true, |wv| cosine(&tv, wv) <= 0.70)
            });
            if ok {
                break;
            }
            assert!(attempt < 199, "could not place target {t}");
            table.insert(t.clone(), unit_vec(EMBED_DIM, &mut rng));
        }
    }

    (table.into_iter().collect(), oov)
}

pub fn generate(seed: u64) -> DataSet {
    let bank = WordBank::forge(seed ^ 1);
    let (mut idioms, order) = gen_idioms(&bank, seed);
    let ordered: Vec<IdiomSpec> = order.into_iter().map(|i| idioms[i].clone()).collect();
    idioms = ordered;
    let dupes = gen_dupes(&idioms, seed);
    let facts = gen_facts(&bank, seed);
    let wiki_docs = gen_wiki(&bank, &idioms, seed);
    let (embeddings, oov_targets) = gen_embeddings(&bank, &idioms, seed);
    DataSet {
        bank,
        idioms,
        dupes,
        facts,
        invalid_fact_lines: invalid_fact_lines(),
        wiki_docs,
        embeddings,
        oov_targets,
    }
}

fn idiom_line(prompt: &str, target: &str, source: &str) -> String {
    format!(
        "{{\"prompt\": {}, \"target\": {}, \"source\": {}}}",
        serde_json::to_string(prompt).unwrap(),
        serde_json::to_string(target).unwrap(),
        serde_json::to_string(source).unwrap()
    )
}

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

impl DataSet {
    pub fn write_all(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for s in SOURCES {
            files.insert(s, Vec::new());
        }
        for spec in &self.idioms {
            files
                .get_mut(spec.source)
                .unwrap()
                .push(idiom_line(&spec.prompt_text(), &spec.target, spec.source));
        }
        for &(idx, file, mangle) in &self.dupes {
            let spec = &self.idioms[idx];
            let (p, t) = if mangle {
                (title_case(&spec.prompt_text()), title_case(&spec.target))
            } else {
                (spec.prompt_text(), spec.target.clone())
            };
            files.get_mut(file).unwrap().push(idiom_line(&p, &t, file));
        }
        for (name, lines) in &files {
            std::fs::write(dir.join(format!("{name}.jsonl")), lines.join("\n") + "\n")?;
        }

        let mut fact_lines: Vec<String> = self
            .facts
            .iter()
            .map(|f| {
                format!(
                    "{{\"statement\": {}, \"answer\": {}, \"relation\": {}}}",
                    serde_json::to_string(&f.statement).unwrap(),
                    serde_json::to_string(&f.answer).unwrap(),
                    serde_json::to_string(f.relation).unwrap()
                )
            })
            .collect();
        // Interleave the malformed lines at fixed strides so loaders see
        // them in context, not bunched at the end.
        for (k, line) in self.invalid_fact_lines.iter().enumerate() {
            let pos = ((k + 1) * 41).min(fact_lines.len());
            fact_lines.insert(pos, line.clone());
        }
        std::fs::write(dir.join("facts.jsonl"), fact_lines.join("\n") + "\n")?;

        std::fs::write(dir.join("wiki.txt"), self.wiki_docs.join("\n\n") + "\n")?;

        let mut emb = String::new();
        for (w, v) in &self.embeddings {
            write!(emb, "{w}").unwrap();
            for x in v {
                write!(emb, " {x:.4}").unwrap();
            }
            emb.push('\n');
        }
        std::fs::write(dir.join("embeddings.txt"), emb)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_the_design() {
        let ds = generate(77);
        assert_eq!(ds.idioms.len(), N_RAW);
        let kept = ds.idioms.iter().filter(|i| i.is_kept()).count();
        let mem = ds.idioms.iter().filter(|i| i.is_memorized()).count();
        let length = ds
            .idioms
            .iter()
            .filter(|i| i.route == Route::DropLength)
            .count();
        let pred = ds
            .idioms
            .iter()
            .filter(|i| i.route == Route::DropPredictable)
            .count();
        let sim = ds
            .idioms
            .iter()
            .filter(|i| i.route == Route::DropSimilarity)
            .count();
        assert_eq!(kept, N_KEPT);
        assert_eq!(mem, N_MEMORIZED);
        assert_eq!(length, N_LENGTH);
        assert_eq!(pred, N_PRED_FAKE + 2);
        assert_eq!(sim, N_SIM_VERBATIM + N_SYNONYM + 1);
        assert_eq!(ds.facts.len(), N_ENTITIES * 2);
        assert_eq!(ds.dupes.len(), N_DUPES);
        assert!(ds.wiki_docs.len() >= 1200);
    }

    #[test]
    fn routes_respect_their_filters() {
        let ds = generate(77);
        for spec in &ds.idioms {
            let n_words = spec.prompt.len() + 1;
            match spec.route {
                Route::DropLength => assert!(n_words < 4, "{}", spec.full_text()),
                _ => assert!(n_words >= 4, "{}", spec.full_text()),
            }
            if spec.is_kept() {
                assert!(
                    !spec.prompt.contains(&spec.target),
                    "kept idiom repeats target: {}",
                    spec.full_text()
                );
                let last = spec.prompt.last().unwrap();
                assert!(!ds.bank.cues.contains(last), "kept idiom ends in cue");
                assert!(last != "drawing" && last != "leave");
            }
        }
    }

    #[test]
    fn cue_words_appear_only_in_cue_idioms() {
        let ds = generate(77);
        let cues: HashSet<&String> = ds.bank.cues.iter().collect();
        for spec in &ds.idioms {
            let has_cue = spec.prompt.iter().any(|w| cues.contains(w));
            if has_cue {
                assert_eq!(spec.route, Route::DropPredictable);
                assert!(cues.contains(spec.prompt.last().unwrap()));
            }
            assert!(!cues.contains(&spec.target));
        }
        for doc in &ds.wiki_docs {
            for w in doc.split_whitespace() {
                let w = w.trim_matches(|c: char| !c.is_alphanumeric()).to_string();
                assert!(!cues.contains(&w), "cue {w} leaked into wiki");
                assert!(w != "drawing" && w != "leave", "real cue leaked into wiki");
            }
        }
    }

    #[test]
    fn memorized_targets_are_distinct_and_sprinkled() {
        let ds = generate(77);
        let mem: Vec<&IdiomSpec> = ds.idioms.iter().filter(|i| i.is_memorized()).collect();
        let distinct: HashSet<&String> = mem.iter().map(|i| &i.target).collect();
        assert_eq!(distinct.len(), mem.len(), "memorized targets must be unique");
        let wiki_words: HashSet<String> = ds
            .wiki_docs
            .iter()
            .flat_map(|d| d.split_whitespace())
            .map(|w| {
                w.trim_matches(|c: char| !c.is_alphanumeric())
                    .to_string()
            })
            .collect();
        for spec in &mem {
            assert!(
                wiki_words.contains(&spec.target),
                "memorized target {} missing from wiki",
                spec.target
            );
        }
    }

    #[test]
    fn wiki_has_no_digits() {
        let ds = generate(77);
        for doc in &ds.wiki_docs {
            assert!(!doc.chars().any(|c| c.is_ascii_digit()));
        }
    }

    #[test]
    fn embeddings_enforce_the_planned_similarities() {
        let ds = generate(77);
        let table: BTreeMap<&String, &Vec<f32>> =
            ds.embeddings.iter().map(|(w, v)| (w, v)).collect();
        for (a, b) in &ds.bank.synonym_pairs {
            let va = table.get(a).expect("synonym in table");
            let vb = table.get(b).expect("synonym in table");
            assert!(cosine(va, vb) > 0.80, "pair {a}/{b} not close");
        }
        for spec in ds.idioms.iter().filter(|i| i.is_kept()) {
            let t = spec.target.to_lowercase();
            if ds.oov_targets.contains(&t) {
                assert!(!table.contains_key(&t), "oov target {t} present");
                continue;
            }
            let tv = table.get(&t).expect("kept target in table");
            for w in &spec.prompt {
                let w = w.to_lowercase();
                if let Some(wv) = table.get(&w) {
                    assert!(
                        cosine(tv, wv) <= 0.75,
                        "kept idiom too similar: {} / {}",
                        w,
                        t
                    );
                }
            }
        }
        assert_eq!(ds.oov_targets.len(), N_OOV_TARGETS);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(77);
        let b = generate(77);
        assert_eq!(
            a.idioms.iter().map(|i| i.full_text()).collect::<Vec<_>>(),
            b.idioms.iter().map(|i| i.full_text()).collect::<Vec<_>>()
        );
        assert_eq!(a.wiki_docs, b.wiki_docs);
        assert_eq!(a.embeddings, b.embeddings);
    }

    #[test]
    fn written_files_are_valid_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(77);
        ds.write_all(dir.path()).unwrap();
        let mut total = 0;
        for s in SOURCES {
            let text = std::fs::read_to_string(dir.path().join(format!("{s}.jsonl"))).unwrap();
            for line in text.lines() {
                let v: serde_json::Value = serde_json::from_str(line).unwrap();
                assert!(v["prompt"].is_string());
                total += 1;
            }
        }
        assert_eq!(total, N_RAW + N_DUPES);
    }
}

/// Seed the committed corpus is generated with.
pub const DATA_SEED: u64 = 77;
