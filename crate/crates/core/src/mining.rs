//! Hard-negative mining: phrases that are close in spelling but far apart
//! in embedding space.
//!
//! Candidates come from a character edit-distance search over the corpus;
//! the survivors of a cosine threshold under a scoring model are stored per
//! phrase, lowest cosine first, in a TSV index that the trainer samples from.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingVector, PhraseEmbedder};
use crate::error::{Error, Result};

/// Unit-cost Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Distance if it is at most `max`, otherwise `None`. Only the diagonal band
/// of width `2·max + 1` is filled, and the scan stops as soon as a whole row
/// exceeds `max`.
pub fn levenshtein_bounded(a: &[char], b: &[char], max: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > max {
        return None;
    }
    if a.is_empty() || b.is_empty() {
        return Some(a.len().max(b.len()));
    }
    let over = max + 1;
    let width = b.len() + 1;
    let mut prev: Vec<usize> = (0..width).map(|j| j.min(over)).collect();
    let mut cur = vec![over; width];
    for (i, &ca) in a.iter().enumerate() {
        let row = i + 1;
        let lo = row.saturating_sub(max).max(1);
        let hi = (row + max).min(b.len());
        cur.iter_mut().for_each(|c| *c = over);
        if row <= max {
            cur[0] = row;
        }
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(ca != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1).min(over);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > max {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[b.len()];
    (d <= max).then_some(d)
}

/// Every corpus phrase other than `phrase` within edit distance `d_max`,
/// in corpus order.
pub fn edit_candidates<'a>(phrase: &str, corpus: &[&'a str], d_max: usize) -> Result<Vec<&'a str>> {
    if d_max < 1 {
        return Err(Error::Validation {
            field: "d_max",
            message: "must be at least 1".into(),
        });
    }
    let query: Vec<char> = phrase.chars().collect();
    Ok(corpus
        .iter()
        .copied()
        .filter(|&p| p != phrase)
        .filter(|p| {
            let chars: Vec<char> = p.chars().collect();
            levenshtein_bounded(&query, &chars, d_max).is_some()
        })
        .collect())
}

/// Keep candidates scored at most `theta`, sorted by score then text, and
/// truncate to `k_store`.
pub fn select_by_score(mut scored: Vec<(String, f64)>, theta: f64, k_store: usize) -> Vec<(String, f64)> {
    scored.retain(|(_, s)| *s <= theta);
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k_store);
    scored
}

/// Score candidates by cosine to `phrase` under `model` and keep the
/// `k_store` lowest at or below `theta`.
pub fn select_hard_negatives<E: PhraseEmbedder + ?Sized>(
    phrase: &str,
    candidates: &[&str],
    model: &E,
    theta: f64,
    k_store: usize,
) -> Result<Vec<(String, f64)>> {
    check_theta(theta)?;
    let anchor = model.embed(phrase)?;
    let scored = candidates
        .iter()
        .map(|c| Ok((c.to_string(), anchor.cosine(&model.embed(c)?))))
        .collect::<Result<Vec<_>>>()?;
    Ok(select_by_score(scored, theta, k_store))
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Validation {
            field: "theta",
            message: format!("must lie in (0, 1), got {theta}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub d_max: usize,
    pub theta: f64,
    pub k_store: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            d_max: 3,
            theta: 0.5,
            k_store: 10,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_max < 1 {
            return Err(Error::Validation {
                field: "d_max",
                message: "must be at least 1".into(),
            });
        }
        check_theta(self.theta)
    }
}

/// Stored hard negatives per phrase, each list sorted by ascending cosine.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HardNegativeIndex {
    entries: BTreeMap<String, Vec<(String, f64)>>,
}

impl HardNegativeIndex {
    /// Mine the whole corpus. Phrases are embedded once; queries run in
    /// parallel and are merged in corpus order.
    pub fn build<E: PhraseEmbedder + ?Sized>(
        phrases: &[&str],
        model: &E,
        config: &MiningConfig,
    ) -> Result<Self> {
        config.validate()?;
        let chars: Vec<Vec<char>> = phrases.iter().map(|p| p.chars().collect()).collect();
        let embeddings: Vec<EmbeddingVector> = phrases
            .par_iter()
            .map(|p| model.embed(p))
            .collect::<Result<_>>()?;

        // bucket by length so the prefilter skips whole groups
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, c) in chars.iter().enumerate() {
            by_len.entry(c.len()).or_default().push(i);
        }

        let lists: Vec<(usize, Vec<(String, f64)>)> = (0..phrases.len())
            .into_par_iter()
            .map(|i| {
                let len = chars[i].len();
                let lo = len.saturating_sub(config.d_max);
                let mut scored = Vec::new();
                for (_, group) in by_len.range(lo..=len + config.d_max) {
                    for &j in group {
                        if phrases[j] == phrases[i] {
                            continue;
                        }
                        if levenshtein_bounded(&chars[i], &chars[j], config.d_max).is_some() {
                            let cos = embeddings[i].cosine(&embeddings[j]);
                            scored.push((phrases[j].to_string(), cos));
                        }
                    }
                }
                (i, select_by_score(scored, config.theta, config.k_store))
            })
            .collect();

        let mut entries = BTreeMap::new();
        for (i, list) in lists {
            if !list.is_empty() {
                entries.insert(phrases[i].to_string(), list);
            }
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: BTreeMap<String, Vec<(String, f64)>>) -> Self {
        let mut entries = entries;
        for list in entries.values_mut() {
            list.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        }
        entries.retain(|_, l| !l.is_empty());
        Self { entries }
    }

    pub fn get(&self, phrase: &str) -> &[(String, f64)] {
        self.entries.get(phrase).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Number of phrases with at least one negative.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pair_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Check the index invariants: no self pairs, every pair within `d_max`
    /// edits and at or below `theta`, lists sorted.
    pub fn verify(&self, config: &MiningConfig) -> Result<()> {
        for (phrase, list) in &self.entries {
            for (neg, cos) in list {
                if neg == phrase {
                    return Err(Error::invalid(format!("{phrase:?} lists itself")));
                }
                let d = levenshtein(phrase, neg);
                if d > config.d_max {
                    return Err(Error::invalid(format!("{phrase:?} -> {neg:?}: distance {d}")));
                }
                if *cos > config.theta {
                    return Err(Error::invalid(format!("{phrase:?} -> {neg:?}: cosine {cos}")));
                }
            }
            if list.windows(2).any(|w| w[0].1 > w[1].1) {
                return Err(Error::invalid(format!("{phrase:?}: list not sorted")));
            }
        }
        Ok(())
    }

    /// `phrase<TAB>negative<TAB>cosine`, sorted by phrase then cosine.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (phrase, list) in &self.entries {
            for (neg, cos) in list {
                writeln!(out, "{phrase}\t{neg}\t{cos}").unwrap();
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse = |message: String| Error::Parse { line: i + 1, message };
            let mut fields = line.split('\t');
            let (Some(p), Some(n), Some(c), None) = (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(parse("expected 3 tab-separated fields".into()));
            };
            let cos: f64 = c.parse().map_err(|_| parse(format!("bad cosine {c:?}")))?;
            if !cos.is_finite() {
                return Err(parse(format!("non-finite cosine {c:?}")));
            }
            entries.entry(p.to_string()).or_default().push((n.to_string(), cos));
        }
        Ok(Self::from_entries(entries))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}
