//! Seeded synthetic datasets built from pseudo-words.
//!
//! The alias dataset has groups of five surface forms for one entity: a
//! canonical name, a typo of it, a token-swapped version, an alias where
//! every word is replaced by its lexicon synonym, and a typo of the alias.
//! Some groups are held out of training so that alias retrieval measures
//! generalization through word-level synonymy. The typed dataset draws
//! phrases from entity-type-specific word pools.
//!
//! The files under `data/` were written by [`AliasDataset::write_files`]
//! and [`TypedDataset::write_files`] with the default seeds.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::augment::{char_drop_at, char_insert_at, char_swap_at, token_swap_at, ParaphraseTable, SynonymSource};
use crate::corpus::{Corpus, EntityType, LexicalTag, PhraseRecord};
use crate::error::Result;
use crate::evalharness::{ClusteringTask, RetrievalTask};
use crate::rng::{self, Rng};

pub const ALIAS_SEED: u64 = 2024;
pub const TYPED_SEED: u64 = 7;

/// Share of alias groups built as a near-homograph sibling of an earlier
/// group.
const SIBLING_RATE: f64 = 0.3;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_word(r: &mut Rng) -> String {
    let syllables = r.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(r).unwrap() as char);
        w.push(*VOWELS.choose(r).unwrap() as char);
    }
    if r.gen_bool(0.5) {
        w.push(*CONSONANTS.choose(r).unwrap() as char);
    }
    w
}

/// Fresh words, distinct from each other and from everything in `taken`.
fn fresh_words(r: &mut Rng, n: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(r);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// One character edit inside one token, never a no-op.
fn typo(phrase: &str, r: &mut Rng) -> String {
    let tokens: Vec<&str> = phrase.split(' ').collect();
    loop {
        let t = r.gen_range(0..tokens.len());
        let word = tokens[t];
        let n = word.chars().count();
        let edited = match r.gen_range(0..3) {
            0 if n >= 2 => char_swap_at(word, r.gen_range(0..n - 1)),
            1 if n >= 4 => char_drop_at(word, r.gen_range(1..n)),
            _ => char_insert_at(word, r.gen_range(1..=n), *CONSONANTS.choose(r).unwrap() as char),
        };
        if edited != word {
            let mut out: Vec<&str> = tokens.clone();
            out[t] = &edited;
            return out.join(" ");
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Canonical,
    Typo,
    Swapped,
    Alias,
    AliasTypo,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Canonical, Role::Typo, Role::Swapped, Role::Alias, Role::AliasTypo];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Canonical => "canonical",
            Role::Typo => "typo",
            Role::Swapped => "swapped",
            Role::Alias => "alias",
            Role::AliasTypo => "alias_typo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AliasGroup {
    pub canonical: String,
    pub typo: String,
    pub swapped: String,
    pub alias: String,
    pub alias_typo: String,
    pub entity_type: EntityType,
    pub held_out: bool,
}

impl AliasGroup {
    pub fn get(&self, role: Role) -> &str {
        match role {
            Role::Canonical => &self.canonical,
            Role::Typo => &self.typo,
            Role::Swapped => &self.swapped,
            Role::Alias => &self.alias,
            Role::AliasTypo => &self.alias_typo,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AliasDataset {
    pub groups: Vec<AliasGroup>,
    /// Base word and its synonym.
    pub synonyms: BTreeMap<String, String>,
    frequencies: Vec<[u64; 5]>,
}

const ALIAS_TYPES: [EntityType; 4] = [EntityType::ORG, EntityType::PERSON, EntityType::GPE, EntityType::PRODUCT];

impl AliasDataset {
    /// 100 groups, the last 25 held out.
    pub fn standard() -> Self {
        Self::generate(ALIAS_SEED, 100, 25)
    }

    pub fn generate(seed: u64, n_groups: usize, n_held_out: usize) -> Self {
        assert!(n_held_out < n_groups);
        let mut r = rng::stream(seed, "synthetic-alias");
        let mut taken = HashSet::new();
        let n_base = (n_groups * 3 / 5).max(4);
        let mut base = fresh_words(&mut r, n_base, &mut taken);
        // near-homographs: distinct words one letter away from an existing one
        let mut homograph: BTreeMap<String, String> = BTreeMap::new();
        for i in 0..n_base / 4 {
            let w: Vec<char> = base[i].chars().collect();
            for _ in 0..20 {
                let mut v = w.clone();
                let pos = r.gen_range(0..v.len());
                v[pos] = if VOWELS.contains(&(v[pos] as u8)) {
                    *VOWELS.choose(&mut r).unwrap() as char
                } else {
                    *CONSONANTS.choose(&mut r).unwrap() as char
                };
                let s: String = v.into_iter().collect();
                if taken.insert(s.clone()) {
                    homograph.insert(base[i].clone(), s.clone());
                    homograph.insert(s.clone(), base[i].clone());
                    base.push(s);
                    break;
                }
            }
        }
        let syns = fresh_words(&mut r, base.len(), &mut taken);
        let synonyms: BTreeMap<String, String> = base.iter().cloned().zip(syns).collect();

        let mut used = HashSet::new();
        let mut seen_words: BTreeMap<String, usize> = BTreeMap::new();
        let mut queue: Vec<String> = base.clone();
        queue.shuffle(&mut r);
        let n_train = n_groups - n_held_out;
        let mut groups = Vec::with_capacity(n_groups);
        let mut frequencies = Vec::with_capacity(n_groups);
        while groups.len() < n_groups {
            let held_out = groups.len() >= n_train;
            let len = r.gen_range(2..=3);
            let taught = |w: &String| held_out.then(|| seen_words.get(w).copied().unwrap_or(0) >= 2).unwrap_or(true);
            // a sibling shares all but one word with an earlier training
            // group; the odd word is a near-homograph
            let sibling = if r.gen_bool(SIBLING_RATE) {
                let parents: Vec<&AliasGroup> = groups
                    .iter()
                    .filter(|g: &&AliasGroup| !g.held_out)
                    .filter(|g| g.canonical.split(' ').all(|w| taught(&w.to_string())))
                    .collect();
                parents.choose(&mut r).and_then(|g| {
                    let words: Vec<String> = g.canonical.split(' ').map(String::from).collect();
                    let swappable: Vec<usize> = (0..words.len())
                        .filter(|&i| homograph.get(&words[i]).is_some_and(|h| taught(h) && !words.contains(h)))
                        .collect();
                    swappable.choose(&mut r).map(|&i| {
                        let mut ws = words.clone();
                        ws[i] = homograph[&words[i]].clone();
                        ws
                    })
                })
            } else {
                None
            };
            let words: Vec<String> = if let Some(ws) = sibling {
                ws
            } else if held_out {
                // only words taught by at least two training groups
                let pool: Vec<&String> = seen_words.iter().filter(|(_, &c)| c >= 2).map(|(w, _)| w).collect();
                pool.choose_multiple(&mut r, len).map(|w| w.to_string()).collect()
            } else {
                // cover every base word before reusing
                let mut ws = Vec::new();
                while ws.len() < len {
                    let w = queue.pop().unwrap_or_else(|| base.choose(&mut r).unwrap().clone());
                    if !ws.contains(&w) {
                        ws.push(w);
                    }
                }
                ws
            };
            let canonical = words.join(" ");
            let alias = words.iter().map(|w| synonyms[w].as_str()).collect::<Vec<_>>().join(" ");
            let swapped = token_swap_at(&canonical, r.gen_range(0..words.len() - 1));
            let typo_c = typo(&canonical, &mut r);
            let typo_a = typo(&alias, &mut r);
            let forms = [&canonical, &typo_c, &swapped, &alias, &typo_a];
            let distinct: HashSet<&String> = forms.iter().copied().collect();
            if distinct.len() < 5 || forms.iter().any(|f| used.contains(*f)) {
                continue;
            }
            for f in forms {
                used.insert(f.clone());
            }
            if !held_out {
                for w in &words {
                    *seen_words.entry(w.clone()).or_default() += 1;
                }
            }
            frequencies.push(std::array::from_fn(|_| r.gen_range(2..=60)));
            groups.push(AliasGroup {
                entity_type: ALIAS_TYPES[groups.len() % ALIAS_TYPES.len()],
                canonical,
                typo: typo_c,
                swapped,
                alias,
                alias_typo: typo_a,
                held_out,
            });
        }
        AliasDataset {
            groups,
            synonyms,
            frequencies,
        }
    }

    fn records(&self, include: impl Fn(&AliasGroup) -> bool) -> Corpus {
        let mut records = Vec::new();
        for (g, freqs) in self.groups.iter().zip(&self.frequencies) {
            if !include(g) {
                continue;
            }
            for (role, &f) in Role::ALL.iter().zip(freqs) {
                records.push(PhraseRecord::new(g.get(*role), LexicalTag::NP, g.entity_type, f).expect("valid record"));
            }
        }
        Corpus::from_records(records)
    }

    /// Every phrase of every group.
    pub fn corpus(&self) -> Corpus {
        self.records(|_| true)
    }

    /// Phrases of the groups used for training.
    pub fn training_corpus(&self) -> Corpus {
        self.records(|g| !g.held_out)
    }

    pub fn held_out(&self) -> impl Iterator<Item = &AliasGroup> {
        self.groups.iter().filter(|g| g.held_out)
    }

    /// Both directions of every word/synonym pair.
    pub fn lexicon_tsv(&self) -> String {
        let mut out = String::new();
        for (w, s) in &self.synonyms {
            writeln!(out, "{w}\t{s}").unwrap();
            writeln!(out, "{s}\t{w}").unwrap();
        }
        out
    }

    pub fn synonym_source(&self) -> SynonymSource {
        SynonymSource::from_tsv(&self.lexicon_tsv()).expect("generated lexicon parses")
    }

    /// Canonical and alias names of training groups, both directions.
    pub fn paraphrases_tsv(&self) -> String {
        let mut out = String::new();
        for g in self.groups.iter().filter(|g| !g.held_out) {
            writeln!(out, "{}\t{}", g.canonical, g.alias).unwrap();
            writeln!(out, "{}\t{}", g.alias, g.canonical).unwrap();
        }
        out
    }

    pub fn paraphrase_table(&self) -> ParaphraseTable {
        ParaphraseTable::from_tsv(&self.paraphrases_tsv()).expect("generated table parses")
    }

    /// Dictionary of all canonical names; queries are the held-out aliases
    /// and alias typos.
    pub fn retrieval_task(&self) -> RetrievalTask {
        let dictionary: Vec<String> = self.groups.iter().map(|g| g.canonical.clone()).collect();
        let mut queries = Vec::new();
        for (i, g) in self.groups.iter().enumerate().filter(|(_, g)| g.held_out) {
            queries.push((g.alias.clone(), i));
            queries.push((g.alias_typo.clone(), i));
        }
        RetrievalTask::new(dictionary, queries).expect("generated task is valid")
    }

    /// (canonical, alias) of each held-out group.
    pub fn held_out_positive_pairs(&self) -> Vec<(String, String)> {
        self.held_out().map(|g| (g.canonical.clone(), g.alias.clone())).collect()
    }

    /// Phrases of two different held-out groups, `n` pairs.
    pub fn random_pairs(&self, n: usize, seed: u64) -> Vec<(String, String)> {
        let held: Vec<&AliasGroup> = self.held_out().collect();
        let mut r = rng::stream(seed, "synthetic-pairs");
        (0..n)
            .map(|_| {
                let i = r.gen_range(0..held.len());
                let mut j = r.gen_range(0..held.len() - 1);
                if j >= i {
                    j += 1;
                }
                let a = held[i].get(*Role::ALL.choose(&mut r).unwrap());
                let b = held[j].get(*Role::ALL.choose(&mut r).unwrap());
                (a.to_string(), b.to_string())
            })
            .collect()
    }

    /// `group<TAB>split<TAB>role<TAB>phrase`.
    pub fn groups_tsv(&self) -> String {
        let mut out = String::new();
        for (i, g) in self.groups.iter().enumerate() {
            let split = if g.held_out { "heldout" } else { "train" };
            for role in Role::ALL {
                writeln!(out, "{i}\t{split}\t{}\t{}", role.as_str(), g.get(role)).unwrap();
            }
        }
        out
    }

    /// File name and contents of every shipped artifact.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        let task = self.retrieval_task();
        let mut queries = String::new();
        for (m, g) in &task.queries {
            writeln!(queries, "{m}\t{}", task.dictionary[*g]).unwrap();
        }
        vec![
            ("corpus.jsonl", self.corpus().to_jsonl()),
            ("train.jsonl", self.training_corpus().to_jsonl()),
            ("groups.tsv", self.groups_tsv()),
            ("lexicon.tsv", self.lexicon_tsv()),
            ("paraphrases.tsv", self.paraphrases_tsv()),
            ("dictionary.txt", task.dictionary.join("\n") + "\n"),
            ("queries.tsv", queries),
        ]
    }

    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::create_dir_all(dir.as_ref())?;
        for (name, text) in self.files() {
            std::fs::write(dir.as_ref().join(name), text)?;
        }
        Ok(())
    }
}

/// Large dictionary of random pseudo-word names and typo queries, for
/// search benchmarks.
pub fn synthetic_dictionary(n: usize, n_queries: usize, seed: u64) -> RetrievalTask {
    let mut r = rng::stream(seed, "synthetic-dictionary");
    let mut taken = HashSet::new();
    let vocab = fresh_words(&mut r, (n / 4).max(8), &mut HashSet::new());
    let mut dictionary = Vec::with_capacity(n);
    while dictionary.len() < n {
        let len = r.gen_range(2..=3);
        let name = vocab.choose_multiple(&mut r, len).cloned().collect::<Vec<_>>().join(" ");
        if taken.insert(name.clone()) {
            dictionary.push(name);
        }
    }
    let queries = (0..n_queries)
        .map(|_| {
            let g = r.gen_range(0..n);
            (typo(&dictionary[g], &mut r), g)
        })
        .collect();
    RetrievalTask::new(dictionary, queries).expect("generated dictionary is valid")
}

pub const TYPED_TYPES: [EntityType; 6] = [
    EntityType::PERSON,
    EntityType::ORG,
    EntityType::GPE,
    EntityType::DATE,
    EntityType::PRODUCT,
    EntityType::EVENT,
];

#[derive(Debug, Clone, PartialEq)]
pub struct TypedDataset {
    pub train: Vec<(String, EntityType)>,
    pub held_out: Vec<(String, EntityType)>,
}

impl TypedDataset {
    /// 6 types × 50 training phrases, plus 20 held-out phrases per type.
    pub fn standard() -> Self {
        Self::generate(TYPED_SEED, 50, 20)
    }

    pub fn generate(seed: u64, per_type: usize, held_per_type: usize) -> Self {
        let mut r = rng::stream(seed, "synthetic-typed");
        let mut taken = HashSet::new();
        let mut train = Vec::new();
        let mut held_out = Vec::new();
        let mut used = HashSet::new();
        for t in TYPED_TYPES {
            let pool = fresh_words(&mut r, 16, &mut taken);
            let mut phrases = Vec::new();
            while phrases.len() < per_type + held_per_type {
                let len = r.gen_range(2..=3);
                let p = pool.choose_multiple(&mut r, len).cloned().collect::<Vec<_>>().join(" ");
                if used.insert(p.clone()) {
                    phrases.push(p);
                }
            }
            let rest = phrases.split_off(per_type);
            train.extend(phrases.into_iter().map(|p| (p, t)));
            held_out.extend(rest.into_iter().map(|p| (p, t)));
        }
        TypedDataset { train, held_out }
    }

    pub fn corpus(&self) -> Corpus {
        Corpus::from_records(
            self.train
                .iter()
                .map(|(p, t)| PhraseRecord::new(p.clone(), LexicalTag::NP, *t, 5).expect("valid record")),
        )
    }

    pub fn clustering_task(&self) -> ClusteringTask {
        ClusteringTask::from_labeled(self.held_out.iter().map(|(p, t)| (p.clone(), t.to_string())).collect())
            .expect("generated task is valid")
    }

    pub fn files(&self) -> Vec<(&'static str, String)> {
        let mut clustering = String::new();
        for (p, t) in &self.held_out {
            writeln!(clustering, "{p}\t{t}").unwrap();
        }
        vec![("corpus.jsonl", self.corpus().to_jsonl()), ("items.tsv", clustering)]
    }

    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::create_dir_all(dir.as_ref())?;
        for (name, text) in self.files() {
            std::fs::write(dir.as_ref().join(name), text)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::levenshtein;

    #[test]
    fn alias_dataset_shape() {
        let d = AliasDataset::standard();
        assert_eq!(d.groups.len(), 100);
        assert_eq!(d.corpus().len(), 500);
        assert_eq!(d.training_corpus().len(), 375);
        assert_eq!(d.held_out().count(), 25);
        for g in &d.groups {
            assert_eq!(levenshtein(&g.canonical, &g.typo), levenshtein(&g.typo, &g.canonical));
            assert!(levenshtein(&g.canonical, &g.typo) <= 2);
            assert!(levenshtein(&g.alias, &g.alias_typo) <= 2);
            let a: Vec<&str> = g.alias.split(' ').collect();
            for (w, s) in g.canonical.split(' ').zip(&a) {
                assert_eq!(d.synonyms[w], *s);
            }
        }
        // held-out words all occur in at least two training groups
        let mut train_words: BTreeMap<&str, usize> = BTreeMap::new();
        for g in d.groups.iter().filter(|g| !g.held_out) {
            for w in g.canonical.split(' ') {
                *train_words.entry(w).or_default() += 1;
            }
        }
        for g in d.held_out() {
            assert!(g.canonical.split(' ').all(|w| train_words.get(w).copied().unwrap_or(0) >= 2));
        }
        let task = d.retrieval_task();
        assert_eq!(task.dictionary.len(), 100);
        assert_eq!(task.queries.len(), 50);
        assert_eq!(d, AliasDataset::standard());
    }

    #[test]
    fn typed_dataset_shape() {
        let d = TypedDataset::standard();
        assert_eq!(d.train.len(), 300);
        assert_eq!(d.corpus().len(), 300);
        assert_eq!(d.clustering_task().k(), 6);
        assert_eq!(d.held_out.len(), 120);
    }

    #[test]
    fn dictionary_generator() {
        let t = synthetic_dictionary(500, 50, 1);
        assert_eq!(t.dictionary.len(), 500);
        assert_eq!(t.queries.len(), 50);
        assert_eq!(t, synthetic_dictionary(500, 50, 1));
    }
}
