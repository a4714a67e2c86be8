//! Templated number-agreement grammar for desk-scale experiments.
//!
//! Sentences follow
//!
//! ```text
//! the N_s [P the N_a] ADV{0..k} V N_s' .
//! ```
//!
//! where the verb agrees in number with the subject `N_s`, the attractor
//! `N_a` has an independent number, and `N_s'` repeats the subject's stem in
//! the singular. Predicting `N_s'` at the verb needs the subject, which is
//! several tokens back. Every token carries a CCG-style category.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attraction::{format_stimuli, AttractorType, Condition, StimulusItem, Violation};
use crate::corpus::{format_dependency_corpus, DependencyRecord};
use crate::error::{Error, Result};

const NOUNS: [(&str, &str); 12] = [
    ("dog", "dogs"),
    ("cat", "cats"),
    ("key", "keys"),
    ("drawer", "drawers"),
    ("handle", "handles"),
    ("box", "boxes"),
    ("bird", "birds"),
    ("lamp", "lamps"),
    ("car", "cars"),
    ("tree", "trees"),
    ("table", "tables"),
    ("door", "doors"),
];
const PREPS: [&str; 5] = ["with", "near", "behind", "under", "beside"];
const ADVERBS: [&str; 4] = ["really", "often", "quietly", "still"];
const VERBS: [(&str, &str); 6] =
    [("opens", "open"), ("falls", "fall"), ("moves", "move"), ("shines", "shine"), ("breaks", "break"), ("stays", "stay")];

pub const TAG_DET: &str = "NP/N";
pub const TAG_NOUN: &str = "N";
pub const TAG_PREP: &str = "(NP\\NP)/NP";
pub const TAG_ADV: &str = "(S\\NP)/(S\\NP)";
pub const TAG_VERB: &str = "(S\\NP)/NP";
pub const TAG_OBJ: &str = "NP";
pub const TAG_STOP: &str = ".";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrammarConfig {
    /// Probability of the prepositional attractor phrase.
    pub pp_prob: f64,
    pub min_adverbs: usize,
    pub max_adverbs: usize,
    /// Noun stems in use, taken from the front of the lexicon.
    pub nouns: usize,
    /// Probability that the attractor's number differs from the subject's.
    pub mismatch_prob: f64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig { pp_prob: 0.7, min_adverbs: 0, max_adverbs: 2, nouns: NOUNS.len(), mismatch_prob: 0.5 }
    }
}

impl GrammarConfig {
    /// Every sentence has the attractor phrase and the maximum adverb run, so
    /// the copied subject is as far back as the grammar allows.
    pub fn long_distance() -> Self {
        GrammarConfig { pp_prob: 1.0, min_adverbs: 2, max_adverbs: 2, ..GrammarConfig::default() }
    }
}

/// One generated sentence with its annotation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthSentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
    pub subj_pos: usize,
    pub attractor_pos: Option<usize>,
    pub verb_pos: usize,
    /// Every noun, including the repeated subject after the verb.
    pub noun_positions: Vec<usize>,
}

struct Builder {
    words: Vec<String>,
    tags: Vec<String>,
}

impl Builder {
    fn push(&mut self, word: &str, tag: &str) -> usize {
        self.words.push(word.to_string());
        self.tags.push(tag.to_string());
        self.words.len() - 1
    }
}

fn noun(stem: usize, plural: bool) -> &'static str {
    if plural {
        NOUNS[stem].1
    } else {
        NOUNS[stem].0
    }
}

fn verb(v: usize, plural: bool) -> &'static str {
    if plural {
        VERBS[v].1
    } else {
        VERBS[v].0
    }
}

/// Explicit choices for one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePlan {
    pub subject: usize,
    pub subject_plural: bool,
    /// Preposition, attractor stem and attractor number.
    pub attractor: Option<(usize, usize, bool)>,
    pub adverbs: Vec<usize>,
    pub verb: usize,
    pub verb_plural: bool,
}

impl SentencePlan {
    pub fn realize(&self) -> SynthSentence {
        let mut b = Builder { words: Vec::new(), tags: Vec::new() };
        b.push("the", TAG_DET);
        let subj_pos = b.push(noun(self.subject, self.subject_plural), TAG_NOUN);
        let mut noun_positions = vec![subj_pos];
        let attractor_pos = self.attractor.map(|(p, stem, plural)| {
            b.push(PREPS[p], TAG_PREP);
            b.push("the", TAG_DET);
            let pos = b.push(noun(stem, plural), TAG_NOUN);
            noun_positions.push(pos);
            pos
        });
        for &a in &self.adverbs {
            b.push(ADVERBS[a], TAG_ADV);
        }
        let verb_pos = b.push(verb(self.verb, self.verb_plural), TAG_VERB);
        noun_positions.push(b.push(NOUNS[self.subject].0, TAG_OBJ));
        b.push(".", TAG_STOP);
        SynthSentence { words: b.words, tags: b.tags, subj_pos, attractor_pos, verb_pos, noun_positions }
    }
}

/// Draws a grammatical sentence.
pub fn sample_sentence(rng: &mut impl Rng, cfg: &GrammarConfig) -> SynthSentence {
    let nouns = cfg.nouns.clamp(2, NOUNS.len());
    let subject = rng.gen_range(0..nouns);
    let subject_plural = rng.gen_bool(0.5);
    let attractor = rng.gen_bool(cfg.pp_prob).then(|| {
        let mut stem = rng.gen_range(0..nouns - 1);
        if stem >= subject {
            stem += 1;
        }
        (rng.gen_range(0..PREPS.len()), stem, subject_plural != rng.gen_bool(cfg.mismatch_prob))
    });
    let n_adv = rng.gen_range(cfg.min_adverbs..=cfg.max_adverbs);
    let adverbs = (0..n_adv).map(|_| rng.gen_range(0..ADVERBS.len())).collect();
    let verb = rng.gen_range(0..VERBS.len());
    SentencePlan { subject, subject_plural, attractor, adverbs, verb, verb_plural: subject_plural }.realize()
}

pub fn generate(n: usize, seed: u64, cfg: &GrammarConfig) -> Vec<SynthSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_sentence(&mut rng, cfg)).collect()
}

/// Every word type the grammar can produce, in a fixed order.
pub fn lexicon() -> Vec<&'static str> {
    let mut words = vec!["the", "."];
    words.extend(NOUNS.iter().flat_map(|(s, p)| [*s, *p]));
    words.extend(PREPS);
    words.extend(ADVERBS);
    words.extend(VERBS.iter().flat_map(|(s, p)| [*s, *p]));
    words
}

/// A document made of consecutive sentences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthDocument {
    pub sentences: Vec<SynthSentence>,
}

impl SynthDocument {
    pub fn words(&self) -> Vec<&str> {
        self.sentences.iter().flat_map(|s| s.words.iter().map(String::as_str)).collect()
    }

    pub fn tags(&self) -> Vec<&str> {
        self.sentences.iter().flat_map(|s| s.tags.iter().map(String::as_str)).collect()
    }

    /// One record per sentence, with document-level positions. The span runs
    /// from the subject up to the verb.
    pub fn dependency_records(&self, doc_id: usize) -> Vec<DependencyRecord> {
        let mut offset = 0;
        let mut out = Vec::new();
        for s in &self.sentences {
            let mut r = DependencyRecord::new(
                doc_id,
                offset + s.verb_pos,
                offset + s.subj_pos,
                usize::from(s.attractor_pos.is_some()),
            );
            r.span = Some((offset + s.subj_pos, offset + s.verb_pos));
            r.noun_positions = Some(s.noun_positions.iter().map(|p| p + offset).collect());
            out.push(r);
            offset += s.words.len();
        }
        out
    }
}

pub fn generate_documents(n_docs: usize, sentences_per_doc: usize, seed: u64, cfg: &GrammarConfig) -> Vec<SynthDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|_| SynthDocument { sentences: (0..sentences_per_doc).map(|_| sample_sentence(&mut rng, cfg)).collect() })
        .collect()
}

pub fn token_lines<'a>(lines: impl IntoIterator<Item = Vec<&'a str>>) -> String {
    lines.into_iter().map(|l| l.join(" ") + "\n").collect()
}

/// Agreement-attraction items in conditions A and B.
///
/// Each item has a subject, an attractor phrase, one adverb and a verb whose
/// number mismatches the subject. In A the attractor shares the subject's
/// number; in B it shares the verb's. Subject number alternates across items.
pub fn attraction_items(n_items: usize, seed: u64) -> Vec<StimulusItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n_items);
    for item in 0..n_items {
        let subject_plural = item % 2 == 1;
        let mut stems: Vec<usize> = (0..NOUNS.len()).collect();
        stems.shuffle(&mut rng);
        let (subject, attractor) = (stems[0], stems[1]);
        let prep = rng.gen_range(0..PREPS.len());
        let adverb = rng.gen_range(0..ADVERBS.len());
        let verb_idx = rng.gen_range(0..VERBS.len());
        for (condition, attractor_type, attractor_plural) in [
            (Condition::A, AttractorType::None, subject_plural),
            (Condition::B, AttractorType::Agreement, !subject_plural),
        ] {
            let s = SentencePlan {
                subject,
                subject_plural,
                attractor: Some((prep, attractor, attractor_plural)),
                adverbs: vec![adverb],
                verb: verb_idx,
                verb_plural: !subject_plural,
            }
            .realize();
            out.push(StimulusItem {
                item_id: (item + 1).to_string(),
                condition,
                tokens: s.words,
                subj_pos: s.subj_pos,
                attractor_pos: s.attractor_pos.expect("attractor present"),
                verb_pos: s.verb_pos,
                violation: Violation::Agreement,
                attractor_type,
            });
        }
    }
    out
}

/// Synonym replacements for out-of-vocabulary words.
pub const SYNONYM_REPLACEMENTS: [(&str, &str); 12] = [
    ("landscape", "mountain"),
    ("landscapes", "mountains"),
    ("highrise", "apartment"),
    ("crackle", "warm"),
    ("loft", "balcony"),
    ("lofts", "balconies"),
    ("dent", "scratch"),
    ("dents", "scratches"),
    ("glow", "shine"),
    ("glows", "shines"),
    ("dribble", "drip"),
    ("soothingly", "comfortably"),
];

/// Noun-noun compounds collapsed to one noun.
pub const COMPOUND_REPLACEMENTS: [(&str, &str); 10] = [
    ("tram stop", "stop"),
    ("wall calendar", "calendar"),
    ("chocolate fountain", "fountain"),
    ("winter garden", "garden"),
    ("coffee shop", "cafe"),
    ("towel hook", "mirror"),
    ("light switch", "switch"),
    ("license plate", "plate"),
    ("walkie talkie", "radio"),
    ("walkie talkies", "radios"),
];

pub fn replacement_table(pairs: &[(&str, &str)]) -> String {
    let mut s = String::from("original\treplacement\n");
    for (a, b) in pairs {
        s.push_str(&format!("{a}\t{b}\n"));
    }
    s
}

/// The eight-condition drawer item.
pub fn drawer_example() -> Vec<StimulusItem> {
    use AttractorType as T;
    use Condition::*;
    use Violation as V;
    [
        (A, V::Agreement, T::None, "handle", "open"),
        (B, V::Agreement, T::Agreement, "handles", "open"),
        (C, V::Semantic, T::None, "handle", "cuts"),
        (D, V::Semantic, T::Semantic, "knife", "cuts"),
        (E, V::Double, T::None, "handle", "cut"),
        (F, V::Double, T::Double, "knives", "cut"),
        (G, V::Double, T::Semantic, "knife", "cut"),
        (H, V::Double, T::Agreement, "handles", "cut"),
    ]
    .into_iter()
    .map(|(condition, violation, attractor_type, noun, verb)| StimulusItem {
        item_id: "1".into(),
        condition,
        tokens: format!("the drawer with the {noun} really {verb}").split(' ').map(String::from).collect(),
        subj_pos: 1,
        attractor_pos: 4,
        verb_pos: 6,
        violation,
        attractor_type,
    })
    .collect()
}

/// Sizes and seeds of the bundled toy data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BundleSpec {
    pub train_sentences: usize,
    pub heldout_sentences: usize,
    pub dependency_docs: usize,
    pub sentences_per_doc: usize,
    pub attraction_items: usize,
    pub seed: u64,
}

impl Default for BundleSpec {
    fn default() -> Self {
        BundleSpec {
            train_sentences: 200,
            heldout_sentences: 100,
            dependency_docs: 1000,
            sentences_per_doc: 5,
            attraction_items: 48,
            seed: 1,
        }
    }
}

/// File names written by [`write_bundle`], relative to its directory.
pub const BUNDLE_FILES: [&str; 10] = [
    "train.tokens",
    "train.tags",
    "heldout.tokens",
    "heldout.tags",
    "deps.tokens",
    "deps.tsv",
    "stimuli.tsv",
    "drawer_stimuli.tsv",
    "replacements_synonyms.tsv",
    "replacements_compounds.tsv",
];

/// Renders every bundle file, in [`BUNDLE_FILES`] order.
pub fn render_bundle(spec: &BundleSpec) -> Vec<(&'static str, String)> {
    let train = generate(spec.train_sentences, spec.seed, &GrammarConfig::default());
    let heldout = generate(spec.heldout_sentences, spec.seed + 1, &GrammarConfig::long_distance());
    let docs = generate_documents(spec.dependency_docs, spec.sentences_per_doc, spec.seed + 2, &GrammarConfig::default());
    let words = |ss: &[SynthSentence]| token_lines(ss.iter().map(|s| s.words.iter().map(String::as_str).collect()));
    let tags = |ss: &[SynthSentence]| token_lines(ss.iter().map(|s| s.tags.iter().map(String::as_str).collect()));
    let records: Vec<DependencyRecord> = docs.iter().enumerate().flat_map(|(i, d)| d.dependency_records(i)).collect();
    let contents = vec![
        words(&train),
        tags(&train),
        words(&heldout),
        tags(&heldout),
        token_lines(docs.iter().map(SynthDocument::words)),
        format_dependency_corpus(&records),
        format_stimuli(&attraction_items(spec.attraction_items, spec.seed + 3)),
        format_stimuli(&drawer_example()),
        replacement_table(&SYNONYM_REPLACEMENTS),
        replacement_table(&COMPOUND_REPLACEMENTS),
    ];
    BUNDLE_FILES.into_iter().zip(contents).collect()
}

pub fn write_bundle(dir: &Path, spec: &BundleSpec) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in render_bundle(spec) {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
