//! Seeded synthetic issue corpora: each report carries words indicative of
//! its class, buried in noise text shared by all classes. Also plants
//! duplicate URLs for deduplication checks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AuthorAssociation, IssueRecord, Label};

const BUG_WORDS: &[&str] = &[
    "crash", "exception", "segfault", "broken", "regression", "stacktrace", "panic", "fails",
];
const ENHANCEMENT_WORDS: &[&str] = &[
    "feature", "proposal", "support", "improve", "option", "suggestion", "enhance", "implement",
];
const QUESTION_WORDS: &[&str] = &[
    "how", "why", "question", "help", "clarify", "wondering", "documentation", "possible",
];
const ROLES: &[&str] = &["NONE", "CONTRIBUTOR", "MEMBER", "OWNER", "COLLABORATOR", "FIRST_TIME_CONTRIBUTOR"];
const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ter", "van", "sol", "ri", "du", "pex", "nor", "qua", "bel", "zi", "tam", "ord", "ux",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Relative frequency of bug, enhancement, question.
    pub class_mix: [f64; 3],
    pub noise_vocab: usize,
    pub title_len: (usize, usize),
    pub body_len: (usize, usize),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 2022,
            class_mix: [0.45, 0.40, 0.15],
            noise_vocab: 400,
            title_len: (3, 8),
            body_len: (15, 60),
        }
    }
}

fn class_words(label: Label) -> &'static [&'static str] {
    match label {
        Label::Bug => BUG_WORDS,
        Label::Enhancement => ENHANCEMENT_WORDS,
        Label::Question => QUESTION_WORDS,
    }
}

/// Generates `n` records. Different `stream` values give disjoint URL
/// ranges and independent draws (e.g. 0 for train, 1 for test).
pub fn generate(cfg: &SyntheticConfig, n: usize, stream: u64) -> Vec<IssueRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let noise: Vec<String> = {
        // The noise vocabulary depends on the seed only, so train and test share it.
        let mut vrng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut words = std::collections::BTreeSet::new();
        while words.len() < cfg.noise_vocab {
            let k = vrng.random_range(2..4);
            let w: String = (0..k).map(|_| *SYLLABLES.choose(&mut vrng).unwrap()).collect();
            if !BUG_WORDS.contains(&w.as_str()) && !ENHANCEMENT_WORDS.contains(&w.as_str()) && !QUESTION_WORDS.contains(&w.as_str()) {
                words.insert(w);
            }
        }
        words.into_iter().collect()
    };
    let total: f64 = cfg.class_mix.iter().sum();
    (0..n)
        .map(|i| {
            let u = rng.random::<f64>() * total;
            let label = if u < cfg.class_mix[0] {
                Label::Bug
            } else if u < cfg.class_mix[0] + cfg.class_mix[1] {
                Label::Enhancement
            } else {
                Label::Question
            };
            let words = class_words(label);
            let mut title: Vec<String> = (0..rng.random_range(cfg.title_len.0..=cfg.title_len.1))
                .map(|_| noise.choose(&mut rng).unwrap().clone())
                .collect();
            let at = rng.random_range(0..=title.len());
            title.insert(at, words.choose(&mut rng).unwrap().to_string());
            let title = capitalize(&title.join(" "));

            let mut body: Vec<String> = (0..rng.random_range(cfg.body_len.0..=cfg.body_len.1))
                .map(|_| noise.choose(&mut rng).unwrap().clone())
                .collect();
            for _ in 0..rng.random_range(1..=3) {
                let at = rng.random_range(0..=body.len());
                body.insert(at, words.choose(&mut rng).unwrap().to_string());
            }
            // Concept spans that cleaning replaces by sentinels.
            match rng.random_range(0..4) {
                0 => body.push(format!("see https://example.org/issue/{}", rng.random_range(1..999))),
                1 => body.push(format!("calling {}(x)", noise.choose(&mut rng).unwrap())),
                2 => body.push(format!("on v{}.{}.{}", rng.random_range(0..5), rng.random_range(0..20), rng.random_range(0..9))),
                _ => {}
            }
            let repo = format!("{}/{}", noise.choose(&mut rng).unwrap(), noise.choose(&mut rng).unwrap());
            IssueRecord {
                issue_url: format!("https://github.com/{repo}/issues/{}-{i}", stream),
                created_at: format!(
                    "2021-{:02}-{:02}T{:02}:{:02}:00Z",
                    rng.random_range(1..=12),
                    rng.random_range(1..=28),
                    rng.random_range(0..24),
                    rng.random_range(0..60)
                ),
                author_association: AuthorAssociation::parse(ROLES.choose(&mut rng).unwrap()),
                repository_url: format!("https://api.github.com/repos/{repo}"),
                title,
                body: body.join(" "),
                label,
            }
        })
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Inserts exact copies of `k` distinct records, each somewhere after its
/// original. Returns the new list and the indices (in the input) that were
/// duplicated.
pub fn plant_duplicates(records: &[IssueRecord], k: usize, seed: u64) -> (Vec<IssueRecord>, Vec<usize>) {
    assert!(k <= records.len(), "cannot duplicate more records than exist");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = (0..records.len()).collect();
    chosen.shuffle(&mut rng);
    chosen.truncate(k);
    chosen.sort_unstable();
    let mut out: Vec<IssueRecord> = records.to_vec();
    for &i in chosen.iter().rev() {
        let url = &records[i].issue_url;
        let orig = out.iter().position(|r| &r.issue_url == url).unwrap();
        let at = rng.random_range(orig + 1..=out.len());
        let mut copy = records[i].clone();
        // Same URL, different text: deduplication keys on the URL alone.
        copy.title.push_str(" again");
        out.insert(at, copy);
    }
    (out, chosen)
}
