//! Positive-pair generation at character, token, and phrase granularity.
//!
//! Character edits (swap, drop, insert, keyboard replace) perturb one word;
//! token edits swap adjacent tokens or substitute a synonym; phrase edits
//! look up a paraphrase table. Each primitive that cannot apply returns its
//! input unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

const QWERTY_JSON: &str = include_str!("../data/qwerty.json");

/// Character → neighbouring keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyboardLayout(BTreeMap<char, Vec<char>>);

impl KeyboardLayout {
    pub fn qwerty() -> Self {
        Self::from_json(QWERTY_JSON).expect("bundled layout is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(text)?;
        let mut map = BTreeMap::new();
        for (key, values) in raw {
            let k = single_char(&key)?;
            let vs = values.iter().map(|v| single_char(v)).collect::<Result<Vec<_>>>()?;
            if !vs.is_empty() {
                map.insert(k, vs);
            }
        }
        Ok(KeyboardLayout(map))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn neighbours(&self, c: char) -> Option<&[char]> {
        self.0.get(&c).map(Vec::as_slice)
    }
}

fn single_char(s: &str) -> Result<char> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(Error::invalid(format!("keyboard layout key {s:?} is not one character"))),
    }
}

/// Synonyms from a lexicon (word or multi-word key → words) and,
/// optionally, from word vectors compared by cosine.
#[derive(Debug, Clone, Default)]
pub struct SynonymSource {
    pub lexicon: BTreeMap<String, BTreeSet<String>>,
    pub embeddings: Option<BTreeMap<String, EmbeddingVector>>,
}

impl SynonymSource {
    /// Parse `word<TAB>synonym` lines. Entries are directed.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lexicon: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (i, (a, b)) in parse_pairs(text)?.into_iter().enumerate() {
            if a == b {
                log::debug!("lexicon line {}: ignoring self-synonym {a:?}", i + 1);
                continue;
            }
            lexicon.entry(a).or_default().insert(b);
        }
        Ok(SynonymSource {
            lexicon,
            embeddings: None,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }

    pub fn with_embeddings(mut self, table: BTreeMap<String, EmbeddingVector>) -> Self {
        self.embeddings = Some(table);
        self
    }

    fn max_key_tokens(&self) -> usize {
        self.lexicon
            .keys()
            .map(|k| k.split_whitespace().count())
            .max()
            .unwrap_or(0)
    }

    /// Words whose vector cosine with `word` is at least `threshold`.
    fn embedding_neighbours(&self, word: &str, threshold: f64) -> Vec<&str> {
        let Some(table) = &self.embeddings else {
            return Vec::new();
        };
        let Some(query) = table.get(word) else {
            return Vec::new();
        };
        table
            .iter()
            .filter(|(w, v)| w.as_str() != word && query.cosine(v) >= threshold)
            .map(|(w, _)| w.as_str())
            .collect()
    }
}

/// Phrase → alternative names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParaphraseTable(BTreeMap<String, Vec<String>>);

impl ParaphraseTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, phrase: &str, paraphrase: &str) {
        let key = normalize(phrase);
        let value = normalize(paraphrase);
        if key.is_empty() || value.is_empty() || key == value {
            return;
        }
        let entry = self.0.entry(key).or_default();
        if !entry.contains(&value) {
            entry.push(value);
        }
    }

    /// Parse `phrase<TAB>paraphrase` lines.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut table = ParaphraseTable::new();
        for (a, b) in parse_pairs(text)? {
            table.insert(&a, &b);
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }

    pub fn get(&self, phrase: &str) -> Option<&[String]> {
        self.0.get(&normalize(phrase)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), None) if !a.trim().is_empty() && !b.trim().is_empty() => {
                out.push((normalize(a), normalize(b)))
            }
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected two non-empty tab-separated columns".into(),
                })
            }
        }
    }
    Ok(out)
}

fn normalize(phrase: &str) -> String {
    phrase.split_whitespace().collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------------------
// character level

pub fn char_swap_at(word: &str, i: usize) -> String {
    let mut cs: Vec<char> = word.chars().collect();
    if i + 1 < cs.len() {
        cs.swap(i, i + 1);
    }
    cs.into_iter().collect()
}

/// Transpose one random adjacent pair; no-op below two characters.
pub fn char_swap<R: Rng + ?Sized>(word: &str, rng: &mut R) -> String {
    let n = word.chars().count();
    if n < 2 {
        return word.to_string();
    }
    char_swap_at(word, rng.gen_range(0..n - 1))
}

pub fn char_drop_at(word: &str, i: usize) -> String {
    word.chars()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, c)| c)
        .collect()
}

/// Delete one random character; no-op below two characters.
pub fn char_drop<R: Rng + ?Sized>(word: &str, rng: &mut R) -> String {
    let n = word.chars().count();
    if n < 2 {
        return word.to_string();
    }
    char_drop_at(word, rng.gen_range(0..n))
}

pub fn char_insert_at(word: &str, i: usize, c: char) -> String {
    let mut cs: Vec<char> = word.chars().collect();
    cs.insert(i.min(cs.len()), c);
    cs.into_iter().collect()
}

/// Insert a random `[a-z]` letter at a random position; no-op on "".
pub fn char_insert<R: Rng + ?Sized>(word: &str, rng: &mut R) -> String {
    let n = word.chars().count();
    if n == 0 {
        return String::new();
    }
    let pos = rng.gen_range(0..=n);
    let c = (b'a' + rng.gen_range(0..26u8)) as char;
    char_insert_at(word, pos, c)
}

pub fn char_replace_at(word: &str, i: usize, c: char) -> String {
    word.chars()
        .enumerate()
        .map(|(j, orig)| if j == i { c } else { orig })
        .collect()
}

/// Replace one character present in `layout` by one of its neighbours.
pub fn char_keyboard_replace<R: Rng + ?Sized>(
    word: &str,
    layout: &KeyboardLayout,
    rng: &mut R,
) -> String {
    let positions: Vec<(usize, &[char])> = word
        .chars()
        .enumerate()
        .filter_map(|(i, c)| layout.neighbours(c).map(|n| (i, n)))
        .collect();
    let Some(&(i, neighbours)) = positions.choose(rng) else {
        return word.to_string();
    };
    let c = *neighbours.choose(rng).expect("layout entries are non-empty");
    char_replace_at(word, i, c)
}

// ---------------------------------------------------------------------------
// token level

pub fn token_swap_at(phrase: &str, i: usize) -> String {
    let mut tokens: Vec<&str> = phrase.split_whitespace().collect();
    if i + 1 < tokens.len() {
        tokens.swap(i, i + 1);
    }
    tokens.join(" ")
}

/// Swap one random adjacent token pair; no-op on single tokens.
pub fn token_swap<R: Rng + ?Sized>(phrase: &str, rng: &mut R) -> String {
    let n = phrase.split_whitespace().count();
    if n < 2 {
        return normalize(phrase);
    }
    token_swap_at(phrase, rng.gen_range(0..n - 1))
}

/// Replace one lexicon unit (a token, or a multi-token lexicon key) by a
/// synonym. Lexicon matches take priority; otherwise a single token may be
/// replaced by a word whose vector cosine is at least `threshold`.
pub fn synonym_replace<R: Rng + ?Sized>(
    phrase: &str,
    src: &SynonymSource,
    threshold: f64,
    rng: &mut R,
) -> String {
    let tokens: Vec<&str> = phrase.split_whitespace().collect();
    let splice = |start: usize, len: usize, with: &str| {
        let mut out: Vec<&str> = tokens[..start].to_vec();
        out.push(with);
        out.extend_from_slice(&tokens[start + len..]);
        out.join(" ")
    };

    let max_len = src.max_key_tokens().min(tokens.len());
    let mut spans: Vec<(usize, usize, &BTreeSet<String>)> = Vec::new();
    for start in 0..tokens.len() {
        for len in 1..=max_len.min(tokens.len() - start) {
            let key = tokens[start..start + len].join(" ");
            if let Some(syns) = src.lexicon.get(&key) {
                if !syns.is_empty() {
                    spans.push((start, len, syns));
                }
            }
        }
    }
    if let Some(&(start, len, syns)) = spans.choose(rng) {
        let syns: Vec<&String> = syns.iter().collect();
        let pick = syns.choose(rng).expect("non-empty");
        return splice(start, len, pick);
    }

    let candidates: Vec<(usize, Vec<&str>)> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (i, src.embedding_neighbours(t, threshold)))
        .filter(|(_, n)| !n.is_empty())
        .collect();
    match candidates.choose(rng) {
        Some((i, neighbours)) => {
            let pick = neighbours.choose(rng).expect("non-empty");
            splice(*i, 1, pick)
        }
        None => tokens.join(" "),
    }
}

// ---------------------------------------------------------------------------
// phrase level

pub fn phrase_paraphrase<R: Rng + ?Sized>(
    phrase: &str,
    table: &ParaphraseTable,
    rng: &mut R,
) -> String {
    match table.get(phrase).and_then(|p| p.choose(rng)) {
        Some(p) => p.clone(),
        None => phrase.to_string(),
    }
}

// ---------------------------------------------------------------------------
// random policy

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentLevel {
    Character,
    Token,
    Phrase,
}

impl AugmentLevel {
    pub const ALL: [AugmentLevel; 3] = [
        AugmentLevel::Character,
        AugmentLevel::Token,
        AugmentLevel::Phrase,
    ];

    pub fn methods(self) -> &'static [AugmentMethod] {
        match self {
            AugmentLevel::Character => &[
                AugmentMethod::CharSwap,
                AugmentMethod::CharDrop,
                AugmentMethod::CharInsert,
                AugmentMethod::CharKeyboard,
            ],
            AugmentLevel::Token => &[AugmentMethod::TokenSwap, AugmentMethod::Synonym],
            AugmentLevel::Phrase => &[AugmentMethod::Paraphrase],
        }
    }
}

impl FromStr for AugmentLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "char" | "character" => Ok(AugmentLevel::Character),
            "token" => Ok(AugmentLevel::Token),
            "phrase" => Ok(AugmentLevel::Phrase),
            other => Err(Error::invalid(format!(
                "unknown augmentation level {other:?} (expected char, token, phrase)"
            ))),
        }
    }
}

impl fmt::Display for AugmentLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            AugmentLevel::Character => "char",
            AugmentLevel::Token => "token",
            AugmentLevel::Phrase => "phrase",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AugmentMethod {
    CharSwap,
    CharDrop,
    CharInsert,
    CharKeyboard,
    TokenSwap,
    Synonym,
    Paraphrase,
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub seed: u64,
    pub synonym_threshold: f64,
    pub enabled_levels: BTreeSet<AugmentLevel>,
    pub keyboard_layout: KeyboardLayout,
}

impl AugmentConfig {
    pub fn new(seed: u64) -> Self {
        AugmentConfig {
            seed,
            synonym_threshold: 0.7,
            enabled_levels: AugmentLevel::ALL.into_iter().collect(),
            keyboard_layout: KeyboardLayout::qwerty(),
        }
    }

    pub fn with_levels(mut self, levels: impl IntoIterator<Item = AugmentLevel>) -> Self {
        self.enabled_levels = levels.into_iter().collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled_levels.is_empty() {
            return Err(Error::Config("at least one augmentation level must be enabled".into()));
        }
        if !(self.synonym_threshold > 0.0 && self.synonym_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "synonym_threshold must be in (0, 1], got {}",
                self.synonym_threshold
            )));
        }
        Ok(())
    }
}

/// Resources the token and phrase levels draw from.
#[derive(Debug, Clone, Default)]
pub struct AugmentResources {
    pub synonyms: SynonymSource,
    pub paraphrases: ParaphraseTable,
}

/// Applies one randomly chosen augmentation per call. The `i`-th call is
/// a pure function of (phrase, seed, i).
#[derive(Debug, Clone)]
pub struct Augmenter {
    config: AugmentConfig,
    resources: AugmentResources,
    counter: u64,
}

impl Augmenter {
    pub fn new(config: AugmentConfig, resources: AugmentResources) -> Result<Self> {
        config.validate()?;
        Ok(Augmenter {
            config,
            resources,
            counter: 0,
        })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.config
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn augment(&mut self, phrase: &str) -> Result<String> {
        let out = self.augment_at(phrase, self.counter);
        self.counter += 1;
        out
    }

    /// Level first, then method within level, both uniform. A method that
    /// leaves the phrase unchanged is discarded and the draw repeated over
    /// the remaining methods; if every method is a no-op the input is
    /// returned.
    pub fn augment_at(&self, phrase: &str, index: u64) -> Result<String> {
        let normalized = normalize(phrase);
        if normalized.is_empty() {
            return Err(Error::invalid("cannot augment an empty phrase"));
        }
        let mut rng = rng::indexed(self.config.seed, streams::AUGMENT, index);
        let mut remaining: Vec<Vec<AugmentMethod>> = self
            .config
            .enabled_levels
            .iter()
            .map(|l| l.methods().to_vec())
            .collect();
        while !remaining.is_empty() {
            let li = rng.gen_range(0..remaining.len());
            let mi = rng.gen_range(0..remaining[li].len());
            let method = remaining[li].remove(mi);
            if remaining[li].is_empty() {
                remaining.remove(li);
            }
            let out = self.apply(method, &normalized, &mut rng);
            if out != normalized {
                return Ok(out);
            }
        }
        Ok(normalized)
    }

    pub fn apply<R: Rng + ?Sized>(&self, method: AugmentMethod, phrase: &str, rng: &mut R) -> String {
        let layout = &self.config.keyboard_layout;
        match method {
            AugmentMethod::CharSwap => edit_one_word(phrase, rng, |w| w.chars().count() >= 2, char_swap),
            AugmentMethod::CharDrop => edit_one_word(phrase, rng, |w| w.chars().count() >= 2, char_drop),
            AugmentMethod::CharInsert => edit_one_word(phrase, rng, |w| !w.is_empty(), char_insert),
            AugmentMethod::CharKeyboard => edit_one_word(
                phrase,
                rng,
                |w| w.chars().any(|c| layout.neighbours(c).is_some()),
                |w, r| char_keyboard_replace(w, layout, r),
            ),
            AugmentMethod::TokenSwap => token_swap(phrase, rng),
            AugmentMethod::Synonym => synonym_replace(
                phrase,
                &self.resources.synonyms,
                self.config.synonym_threshold,
                rng,
            ),
            AugmentMethod::Paraphrase => phrase_paraphrase(phrase, &self.resources.paraphrases, rng),
        }
    }
}

/// Apply a character edit to one word chosen uniformly among the eligible.
fn edit_one_word<R, P, F>(phrase: &str, rng: &mut R, eligible: P, edit: F) -> String
where
    R: Rng + ?Sized,
    P: Fn(&str) -> bool,
    F: Fn(&str, &mut R) -> String,
{
    let mut tokens: Vec<String> = phrase.split_whitespace().map(str::to_string).collect();
    let positions: Vec<usize> = (0..tokens.len()).filter(|&i| eligible(&tokens[i])).collect();
    if let Some(&i) = positions.choose(rng) {
        tokens[i] = edit(&tokens[i], rng);
    }
    tokens.join(" ")
}
