//! Stimulus items and word replacement preprocessing.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{normalize, Vocabulary};
use crate::error::{Error, Result};

pub const STIMULUS_HEADER: [&str; 8] =
    ["item_id", "condition", "sentence", "subj_pos", "attractor_pos", "verb_pos", "violation", "attractor_type"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Violation {
    Agreement,
    Semantic,
    Double,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttractorType {
    None,
    Agreement,
    Semantic,
    Double,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
}

impl Condition {
    pub const ALL: [Condition; 8] =
        [Condition::A, Condition::B, Condition::C, Condition::D, Condition::E, Condition::F, Condition::G, Condition::H];

    /// The (violation, attractor) pair that defines the condition.
    pub fn design(self) -> (Violation, AttractorType) {
        use AttractorType as T;
        use Violation as V;
        match self {
            Condition::A => (V::Agreement, T::None),
            Condition::B => (V::Agreement, T::Agreement),
            Condition::C => (V::Semantic, T::None),
            Condition::D => (V::Semantic, T::Semantic),
            Condition::E => (V::Double, T::None),
            Condition::F => (V::Double, T::Double),
            Condition::G => (V::Double, T::Semantic),
            Condition::H => (V::Double, T::Agreement),
        }
    }

    pub fn from_design(violation: Violation, attractor: AttractorType) -> Option<Condition> {
        Condition::ALL.into_iter().find(|c| c.design() == (violation, attractor))
    }
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),* })
            }
        }

        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok($ty::$variant),)*
                    _ => Err(format!("unknown {} `{s}`", stringify!($ty))),
                }
            }
        }
    };
}

text_enum!(Violation { Agreement => "agreement", Semantic => "semantic", Double => "double" });
text_enum!(AttractorType { None => "none", Agreement => "agreement", Semantic => "semantic", Double => "double" });
text_enum!(Condition { A => "a", B => "b", C => "c", D => "d", E => "e", F => "f", G => "g", H => "h" });

/// One sentence of an attraction experiment. Positions are 0-based token
/// indices into `tokens`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StimulusItem {
    pub item_id: String,
    pub condition: Condition,
    pub tokens: Vec<String>,
    pub subj_pos: usize,
    /// The non-subject noun.
    pub attractor_pos: usize,
    pub verb_pos: usize,
    pub violation: Violation,
    pub attractor_type: AttractorType,
}

impl StimulusItem {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.item_id.is_empty() || self.item_id.contains([',', '\t', ' ']) {
            return Err(format!("item id `{}` must be non-empty without commas or whitespace", self.item_id));
        }
        if !(self.subj_pos < self.attractor_pos && self.attractor_pos < self.verb_pos) {
            return Err(format!(
                "positions must satisfy subject < attractor < verb, got {} {} {}",
                self.subj_pos, self.attractor_pos, self.verb_pos
            ));
        }
        if self.verb_pos >= self.tokens.len() {
            return Err(format!("verb position {} beyond {} tokens", self.verb_pos, self.tokens.len()));
        }
        if self.condition.design() != (self.violation, self.attractor_type) {
            return Err(format!(
                "condition {} requires {:?}, found ({}, {})",
                self.condition.to_string().to_uppercase(),
                self.condition.design(),
                self.violation,
                self.attractor_type
            ));
        }
        Ok(())
    }

    pub fn sentence(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn to_tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.item_id,
            self.condition.to_string().to_uppercase(),
            self.sentence(),
            self.subj_pos,
            self.attractor_pos,
            self.verb_pos,
            self.violation,
            self.attractor_type
        )
    }
}

pub fn format_stimuli(items: &[StimulusItem]) -> String {
    let mut s = STIMULUS_HEADER.join("\t");
    s.push('\n');
    for it in items {
        s.push_str(&it.to_tsv_row());
        s.push('\n');
    }
    s
}

/// Parses a stimulus table. The header is required.
pub fn parse_stimuli(text: &str, source: &str) -> Result<Vec<StimulusItem>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let perr = |line: usize, message: String| Error::Parse { path: source.to_string(), line, message };
    match lines.next() {
        Some((_, h)) if h.split('\t').map(str::trim).eq(STIMULUS_HEADER) => {}
        Some((i, _)) => return Err(perr(i + 1, format!("header must be `{}`", STIMULUS_HEADER.join("\\t")))),
        None => return Err(Error::Empty(format!("{source}: no header"))),
    }
    let mut items = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != STIMULUS_HEADER.len() {
            return Err(perr(i + 1, format!("expected {} fields, found {}", STIMULUS_HEADER.len(), f.len())));
        }
        let pos = |k: usize| f[k].parse::<usize>().map_err(|_| perr(i + 1, format!("{} `{}` is not a position", STIMULUS_HEADER[k], f[k])));
        let item = StimulusItem {
            item_id: f[0].to_string(),
            condition: f[1].parse().map_err(|e| perr(i + 1, e))?,
            tokens: f[2].split_whitespace().map(str::to_string).collect(),
            subj_pos: pos(3)?,
            attractor_pos: pos(4)?,
            verb_pos: pos(5)?,
            violation: f[6].parse().map_err(|e| perr(i + 1, e))?,
            attractor_type: f[7].parse().map_err(|e| perr(i + 1, e))?,
        };
        item.validate().map_err(|m| perr(i + 1, m))?;
        items.push(item);
    }
    Ok(items)
}

/// Word and compound substitutions, applied longest match first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplacementList {
    entries: Vec<(Vec<String>, Vec<String>)>,
}

impl ReplacementList {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut list = ReplacementList::default();
        for (from, to) in pairs {
            list.push(&from, &to);
        }
        list
    }

    fn push(&mut self, from: &str, to: &str) {
        let from: Vec<String> = from.split_whitespace().map(normalize).collect();
        let to: Vec<String> = to.split_whitespace().map(normalize).collect();
        if !from.is_empty() && !to.is_empty() {
            self.entries.push((from, to));
            self.entries.sort_by_key(|e| std::cmp::Reverse(e.0.len()));
        }
    }

    /// Two tab-separated columns, `original` and `replacement`. An optional
    /// header line with exactly those names is skipped.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut list = ReplacementList::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() != 2 || cols[0].is_empty() || cols[1].is_empty() {
                return Err(Error::Parse { path: source.into(), line: i + 1, message: "expected `original<TAB>replacement`".into() });
            }
            if i == 0 && cols == ["original", "replacement"] {
                continue;
            }
            list.push(cols[0], cols[1]);
        }
        Ok(list)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn extend(&mut self, other: &ReplacementList) {
        for (from, to) in &other.entries {
            self.push(&from.join(" "), &to.join(" "));
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rewrites `tokens` and returns, for every original index, its new index.
    /// Indices inside a replaced span map to the last token of the replacement.
    pub fn apply(&self, tokens: &[String]) -> (Vec<String>, Vec<usize>) {
        let lowered: Vec<String> = tokens.iter().map(|t| normalize(t)).collect();
        let mut out = Vec::with_capacity(tokens.len());
        let mut map = vec![0; tokens.len()];
        let mut i = 0;
        while i < tokens.len() {
            let hit = self.entries.iter().find(|(from, _)| lowered[i..].starts_with(from));
            match hit {
                Some((from, to)) => {
                    out.extend(to.iter().cloned());
                    map[i..i + from.len()].fill(out.len() - 1);
                    i += from.len();
                }
                None => {
                    map[i] = out.len();
                    out.push(tokens[i].clone());
                    i += 1;
                }
            }
        }
        (out, map)
    }

    pub fn apply_item(&self, item: &StimulusItem) -> StimulusItem {
        let (tokens, map) = self.apply(&item.tokens);
        StimulusItem {
            tokens,
            subj_pos: map[item.subj_pos],
            attractor_pos: map[item.attractor_pos],
            verb_pos: map[item.verb_pos],
            ..item.clone()
        }
    }
}

/// Items kept after preprocessing, plus the ones that were excluded.
#[derive(Clone, Debug, Default)]
pub struct StimulusSet {
    pub items: Vec<StimulusItem>,
    pub excluded: Vec<(StimulusItem, String)>,
}

/// Applies the replacements, revalidates positions and, with a vocabulary,
/// excludes items that still contain out-of-vocabulary words.
pub fn preprocess(items: Vec<StimulusItem>, replacements: &ReplacementList, vocab: Option<&Vocabulary>) -> StimulusSet {
    let mut set = StimulusSet::default();
    for item in items {
        let new = replacements.apply_item(&item);
        if let Err(m) = new.validate() {
            set.excluded.push((new, m));
            continue;
        }
        let missing: Vec<&String> = match vocab {
            Some(v) => new.tokens.iter().filter(|t| !v.contains(t)).collect(),
            None => Vec::new(),
        };
        if missing.is_empty() {
            set.items.push(new);
        } else {
            let m = format!("out of vocabulary: {}", missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" "));
            log::warn!("item {} ({}) excluded, {m}", new.item_id, new.condition.to_string().to_uppercase());
            set.excluded.push((new, m));
        }
    }
    set
}

pub fn load_stimuli(path: impl AsRef<Path>, replacements: &ReplacementList, vocab: Option<&Vocabulary>) -> Result<StimulusSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(preprocess(parse_stimuli(&text, &path.display().to_string())?, replacements, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(sentence: &str, s: usize, a: usize, v: usize) -> StimulusItem {
        StimulusItem {
            item_id: "1".into(),
            condition: Condition::A,
            tokens: sentence.split_whitespace().map(String::from).collect(),
            subj_pos: s,
            attractor_pos: a,
            verb_pos: v,
            violation: Violation::Agreement,
            attractor_type: AttractorType::None,
        }
    }

    fn lists() -> ReplacementList {
        ReplacementList::parse(
            "original\treplacement\nlandscape\tmountain\nlandscapes\tmountains\ntram stop\tstop\nstop\thalt\n",
            "test",
        )
        .unwrap()
    }

    #[test]
    fn compound_collapses_and_positions_shift_left() {
        let it = item("the tram stop near the lamps really close", 2, 5, 7);
        let out = lists().apply_item(&it);
        assert_eq!(out.sentence(), "the stop near the lamps really close");
        assert_eq!((out.subj_pos, out.attractor_pos, out.verb_pos), (1, 4, 6));
    }

    #[test]
    fn single_word_synonym() {
        let it = item("the landscape with the trees really change", 1, 4, 6);
        let out = lists().apply_item(&it);
        assert_eq!(out.tokens[1], "mountain");
        assert_eq!((out.subj_pos, out.attractor_pos, out.verb_pos), (1, 4, 6));
    }

    #[test]
    fn unlisted_words_are_untouched() {
        let it = item("the drawer with the handle really open", 1, 4, 6);
        assert_eq!(lists().apply_item(&it), it);
    }

    #[test]
    fn longest_match_wins() {
        let (out, map) = lists().apply(&["tram".into(), "stop".into(), "stop".into()]);
        assert_eq!(out, vec!["stop", "halt"]);
        assert_eq!(map, vec![0, 0, 1]);
    }

    #[test]
    fn condition_design_is_enforced() {
        let mut it = item("the drawer with the handles really open", 1, 4, 6);
        it.condition = Condition::B;
        assert!(it.validate().is_err());
        it.attractor_type = AttractorType::Agreement;
        assert!(it.validate().is_ok());
        assert_eq!(Condition::from_design(Violation::Double, AttractorType::Agreement), Some(Condition::H));
    }

    #[test]
    fn table_round_trip_and_header_check() {
        let it = item("the drawer with the handle really open", 1, 4, 6);
        let text = format_stimuli(std::slice::from_ref(&it));
        assert_eq!(parse_stimuli(&text, "t").unwrap(), vec![it]);
        assert!(parse_stimuli("id\tcondition\n", "t").is_err());
        let bad = text.replace("\t4\t6", "\t6\t4");
        assert!(parse_stimuli(&bad, "t").is_err());
    }

    #[test]
    fn out_of_vocabulary_items_are_excluded() {
        let vocab = Vocabulary::build("the drawer with handle really open".split(' '), 100).unwrap();
        let items = vec![item("the drawer with the handle really open", 1, 4, 6), item("the drawer with the knob really open", 1, 4, 6)];
        let set = preprocess(items, &ReplacementList::default(), Some(&vocab));
        assert_eq!(set.items.len(), 1);
        assert_eq!(set.excluded.len(), 1);
        assert!(set.excluded[0].1.contains("knob"));
    }
}
