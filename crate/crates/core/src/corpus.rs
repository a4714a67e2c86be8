//! Word-level tokenization, vocabularies and corpus loaders.
//!
//! File formats:
//!
//! * token corpus: UTF-8, one document per line, whitespace separated words;
//! * tag corpus: parallel file with one supertag per word;
//! * dependency corpus: tab separated with a header row,
//!   `doc_id verb_pos subj_pos intervening_nouns [span_start span_end noun_positions]`,
//!   0-based positions, `noun_positions` comma separated.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: usize = 0;
pub const EOT: usize = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const EOT_TOKEN: &str = "<eot>";

/// Tag id carried by positions that have no supertag (end of text).
pub const NO_TAG: usize = 0;
pub const NO_TAG_LABEL: &str = "<none>";

/// Lowercases with Unicode default case mapping.
pub fn normalize(word: &str) -> String {
    word.to_lowercase()
}

/// Counts types and orders them by descending frequency, first occurrence first on ties.
fn ranked_types<'a>(stream: impl IntoIterator<Item = &'a str>, skip: &[&str]) -> Vec<String> {
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    let mut seen = 0usize;
    for word in stream {
        let w = normalize(word);
        if skip.contains(&w.as_str()) {
            continue;
        }
        let entry = counts.entry(w).or_insert((0, seen));
        if entry.0 == 0 {
            seen += 1;
        }
        entry.0 += 1;
    }
    let mut types: Vec<(String, usize, usize)> = counts.into_iter().map(|(w, (c, first))| (w, c, first)).collect();
    types.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    types.into_iter().map(|(w, _, _)| w).collect()
}

/// Word vocabulary. Id 0 is the unknown token and id 1 marks end of text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `max_size` most frequent word types (reserved symbols not counted).
    pub fn build<'a>(stream: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        let types = ranked_types(stream, &[UNK_TOKEN, EOT_TOKEN]);
        if types.is_empty() {
            return Err(Error::Empty("vocabulary stream has no word types".into()));
        }
        let kept = types.into_iter().take(max_size);
        Ok(Self::from_tokens([UNK_TOKEN.to_string(), EOT_TOKEN.to_string()].into_iter().chain(kept)))
    }

    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let tokens: Vec<String> = tokens.into_iter().collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    /// Reads a vocabulary saved by [`Vocabulary::save`] (one token per line, id order).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|msg| Error::Parse { path: path.display().to_string(), line: 1, message: msg })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < 2 || tokens[UNK] != UNK_TOKEN || tokens[EOT] != EOT_TOKEN {
            return Err(format!("vocabulary must start with {UNK_TOKEN} and {EOT_TOKEN}"));
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err("vocabulary contains duplicate entries".into());
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(&normalize(word)).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&normalize(word))
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps words to ids without appending end of text.
    pub fn ids<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Vec<usize> {
        words.into_iter().map(|w| self.id(w)).collect()
    }

    /// Whitespace-splits and lowercases a line; unknown words map to [`UNK`]
    /// and [`EOT`] is appended.
    pub fn encode(&self, line: &str, doc_id: usize) -> TokenSequence {
        let mut ids = self.ids(line.split_whitespace());
        ids.push(EOT);
        TokenSequence { doc_id, ids }
    }

    /// Space-joined surface form; the trailing end-of-text marker is dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let ids = match ids.last() {
            Some(&EOT) => &ids[..ids.len() - 1],
            _ => ids,
        };
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK_TOKEN)).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub doc_id: usize,
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSequence {
    pub doc_id: usize,
    pub ids: Vec<usize>,
}

/// Supertag inventory; id 0 is the [`NO_TAG`] sentinel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagVocabulary {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagVocabulary {
    pub fn build<'a>(stream: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tags = vec![NO_TAG_LABEL.to_string()];
        let mut index = HashMap::from([(NO_TAG_LABEL.to_string(), NO_TAG)]);
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        for (i, t) in stream.into_iter().enumerate() {
            if t == NO_TAG_LABEL {
                continue;
            }
            counts.entry(t).or_insert((0, i)).0 += 1;
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (c, f))| (t, c, f)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        for (t, _, _) in ranked {
            index.insert(t.to_string(), tags.len());
            tags.push(t.to_string());
        }
        TagVocabulary { tags, index }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tags: Vec<String> = text.lines().map(str::to_string).collect();
        if tags.first().map(String::as_str) != Some(NO_TAG_LABEL) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                message: format!("tag inventory must start with {NO_TAG_LABEL}"),
            });
        }
        let index = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(TagVocabulary { tags, index })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = self.tags.join("\n");
        out.push('\n');
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn id(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, id: usize) -> Option<&str> {
        self.tags.get(id).map(String::as_str)
    }
}

/// Token documents paired with aligned supertags.
#[derive(Clone, Debug)]
pub struct TaggedCorpus {
    pub docs: Vec<(TokenSequence, TagSequence)>,
    pub tags: TagVocabulary,
}

/// Parses line-aligned token and tag texts. Each document gets [`EOT`] with
/// tag [`NO_TAG`] appended. Tags unknown to `tags` (when given) are an error.
pub fn parse_tagged_corpus(
    tokens_text: &str,
    tags_text: &str,
    vocab: &Vocabulary,
    tags: Option<TagVocabulary>,
) -> Result<TaggedCorpus> {
    let token_lines: Vec<&str> = tokens_text.lines().collect();
    let tag_lines: Vec<&str> = tags_text.lines().collect();
    if token_lines.len() != tag_lines.len() {
        let line = token_lines.len().min(tag_lines.len()) + 1;
        return Err(Error::Invalid(format!(
            "line {line}: token file has {} lines but tag file has {}",
            token_lines.len(),
            tag_lines.len()
        )));
    }
    for (i, (t, g)) in token_lines.iter().zip(&tag_lines).enumerate() {
        let nt = t.split_whitespace().count();
        let ng = g.split_whitespace().count();
        if nt != ng {
            return Err(Error::Alignment { line: i + 1, tokens: nt, tags: ng });
        }
    }
    let tags = tags.unwrap_or_else(|| TagVocabulary::build(tag_lines.iter().flat_map(|l| l.split_whitespace())));
    let mut docs = Vec::with_capacity(token_lines.len());
    for (doc_id, (t, g)) in token_lines.iter().zip(&tag_lines).enumerate() {
        let tokens = vocab.encode(t, doc_id);
        let mut ids = Vec::with_capacity(tokens.len());
        for tag in g.split_whitespace() {
            ids.push(tags.id(tag).ok_or_else(|| Error::Invalid(format!("line {}: unknown tag `{tag}`", doc_id + 1)))?);
        }
        ids.push(NO_TAG);
        docs.push((tokens, TagSequence { doc_id, ids }));
    }
    Ok(TaggedCorpus { docs, tags })
}

pub fn load_tagged_corpus(
    tokens_path: impl AsRef<Path>,
    tags_path: impl AsRef<Path>,
    vocab: &Vocabulary,
) -> Result<TaggedCorpus> {
    let tp = tokens_path.as_ref();
    let gp = tags_path.as_ref();
    let tokens = fs::read_to_string(tp).map_err(|e| Error::io(tp, e))?;
    let tags = fs::read_to_string(gp).map_err(|e| Error::io(gp, e))?;
    parse_tagged_corpus(&tokens, &tags, vocab, None)
}

/// Encodes every line of a token corpus.
pub fn load_token_corpus(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<TokenSequence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().enumerate().map(|(i, l)| vocab.encode(l, i)).collect())
}

/// One annotated subject-verb dependency.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyRecord {
    pub doc_id: usize,
    pub verb_pos: usize,
    pub subj_pos: usize,
    pub intervening_nouns: usize,
    /// Half-open span `[start, end)`; defaults to `[subj_pos, verb_pos)`.
    pub span: Option<(usize, usize)>,
    pub noun_positions: Option<Vec<usize>>,
}

impl DependencyRecord {
    pub fn new(doc_id: usize, verb_pos: usize, subj_pos: usize, intervening_nouns: usize) -> Self {
        DependencyRecord { doc_id, verb_pos, subj_pos, intervening_nouns, span: None, noun_positions: None }
    }

    pub fn length(&self) -> usize {
        self.verb_pos - self.subj_pos
    }

    pub fn span(&self) -> (usize, usize) {
        self.span.unwrap_or((self.subj_pos, self.verb_pos))
    }

    /// Nouns inside the span. Without explicit noun positions this is the
    /// subject plus the intervening nouns.
    pub fn nouns_in_span(&self) -> usize {
        match &self.noun_positions {
            Some(ps) => {
                let (lo, hi) = self.span();
                ps.iter().filter(|&&p| p >= lo && p < hi).count()
            }
            None => self.intervening_nouns + 1,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.subj_pos >= self.verb_pos {
            return Err(format!("subject {} does not precede verb {}", self.subj_pos, self.verb_pos));
        }
        if self.intervening_nouns >= self.length() {
            return Err(format!("{} intervening nouns in a dependency of length {}", self.intervening_nouns, self.length()));
        }
        let (lo, hi) = self.span();
        if lo > hi || hi > self.verb_pos {
            return Err(format!("span [{lo}, {hi}) is not inside the left context of the verb"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct DependencyCorpus {
    pub records: Vec<DependencyRecord>,
    /// Rows rejected for failing position invariants or parsing.
    pub skipped: usize,
}

pub const DEPENDENCY_HEADER: [&str; 4] = ["doc_id", "verb_pos", "subj_pos", "intervening_nouns"];
pub const DEPENDENCY_EXTRA_HEADER: [&str; 3] = ["span_start", "span_end", "noun_positions"];

pub fn parse_dependency_corpus(text: &str, source: &str) -> Result<DependencyCorpus> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().map(|l| l.split('\t').collect()).unwrap_or_default();
    if header.len() < 4 || header[..4] != DEPENDENCY_HEADER {
        return Err(Error::Parse {
            path: source.to_string(),
            line: 1,
            message: format!("expected header `{}`", DEPENDENCY_HEADER.join("\t")),
        });
    }
    let mut corpus = DependencyCorpus::default();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_dependency_row(line).and_then(|r| r.validate().map(|_| r)) {
            Ok(r) => corpus.records.push(r),
            Err(msg) => {
                log::warn!("{source}:{}: skipped dependency row: {msg}", i + 2);
                corpus.skipped += 1;
            }
        }
    }
    Ok(corpus)
}

fn parse_dependency_row(line: &str) -> std::result::Result<DependencyRecord, String> {
    let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
    if cols.len() < 4 {
        return Err(format!("expected at least 4 columns, found {}", cols.len()));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("`{s}` is not a position"));
    let mut rec = DependencyRecord::new(num(cols[0])?, num(cols[1])?, num(cols[2])?, num(cols[3])?);
    if cols.len() >= 6 && !cols[4].is_empty() && !cols[5].is_empty() {
        rec.span = Some((num(cols[4])?, num(cols[5])?));
    }
    if cols.len() >= 7 && !cols[6].is_empty() && cols[6] != "-" {
        rec.noun_positions = Some(cols[6].split(',').map(|p| num(p.trim())).collect::<std::result::Result<_, _>>()?);
    }
    Ok(rec)
}

pub fn load_dependency_corpus(path: impl AsRef<Path>) -> Result<DependencyCorpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dependency_corpus(&text, &path.display().to_string())
}

/// Serializes records in the dependency interchange format (with the optional columns).
pub fn format_dependency_corpus(records: &[DependencyRecord]) -> String {
    let mut out = DEPENDENCY_HEADER.iter().chain(&DEPENDENCY_EXTRA_HEADER).copied().collect::<Vec<_>>().join("\t");
    out.push('\n');
    for r in records {
        let (lo, hi) = r.span();
        let nouns = r
            .noun_positions
            .as_ref()
            .map(|ps| ps.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{lo}\t{hi}\t{nouns}\n",
            r.doc_id, r.verb_pos, r.subj_pos, r.intervening_nouns
        ));
    }
    out
}
