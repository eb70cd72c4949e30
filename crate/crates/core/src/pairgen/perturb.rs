use std::collections::BTreeMap;

use crate::numerics::RngStream;
use crate::toymodels::{ToyDims, Word};

/// Text rewriting used to build deliberately degraded prompts.
pub trait TextPerturber: Sync {
    fn name(&self) -> &str;
    fn perturb(&self, text: &[Word], rng: &mut RngStream) -> Vec<Word>;
}

impl<T: TextPerturber + ?Sized> TextPerturber for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn perturb(&self, text: &[Word], rng: &mut RngStream) -> Vec<Word> {
        (**self).perturb(text, rng)
    }
}

/// Near-homophone lookup for pronunciation perturbation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionTable {
    map: BTreeMap<Word, Vec<Word>>,
}

impl ConfusionTable {
    /// Entries mapping a word to itself are removed; empty entries dropped.
    pub fn new(entries: impl IntoIterator<Item = (Word, Vec<Word>)>) -> Self {
        let mut map = BTreeMap::new();
        for (w, mut targets) in entries {
            targets.retain(|&t| t != w);
            targets.sort_unstable();
            targets.dedup();
            if !targets.is_empty() {
                map.insert(w, targets);
            }
        }
        Self { map }
    }

    /// Each word maps to its neighbours `w ± 1` inside the same language half.
    pub fn neighbours(dims: &ToyDims) -> Self {
        let half = (dims.v_text / 2) as Word;
        let entries = (0..dims.v_text as Word).map(|w| {
            let lo = if w < half { 0 } else { half };
            let hi = lo + half;
            let mut t = Vec::new();
            if w > lo {
                t.push(w - 1);
            }
            if w + 1 < hi {
                t.push(w + 1);
            }
            (w, t)
        });
        Self::new(entries)
    }

    pub fn targets(&self, w: Word) -> Option<&[Word]> {
        self.map.get(&w).map(Vec::as_slice)
    }

    /// Fraction of the first `v_text` word ids that have at least one target.
    pub fn coverage(&self, v_text: usize) -> f64 {
        self.map.keys().filter(|&&w| (w as usize) < v_text).count() as f64 / v_text as f64
    }
}

/// Replaces each covered word with a random confusion target with
/// probability `rate`; length is preserved.
pub fn perturb_pronunciation(text: &[Word], table: &ConfusionTable, rate: f64, rng: &mut RngStream) -> Vec<Word> {
    text.iter()
        .map(|&w| match table.targets(w) {
            Some(t) if rng.bernoulli(rate) => t[rng.below(t.len())],
            _ => w,
        })
        .collect()
}

/// Toggles phrase boundaries between adjacent words. Every gap is flipped
/// (insert when empty, delete when occupied) with probability 1/2; when no
/// gap flips, one random gap is flipped. Text with a single word gains a
/// trailing boundary, or loses it if it already has one.
pub fn perturb_punctuation(text: &[Word], boundary: Word, rng: &mut RngStream) -> Vec<Word> {
    // Split into: leading boundaries, words, boundary runs after each word.
    let lead = text.iter().take_while(|&&w| w == boundary).count();
    let mut words: Vec<Word> = Vec::new();
    let mut after: Vec<usize> = Vec::new();
    for &w in &text[lead..] {
        if w == boundary {
            *after.last_mut().expect("word precedes boundary") += 1;
        } else {
            words.push(w);
            after.push(0);
        }
    }
    let mut out = vec![boundary; lead];
    if words.len() < 2 {
        out.extend_from_slice(&words);
        let trailing = after.first().copied().unwrap_or(0);
        if trailing == 0 {
            out.push(boundary);
        }
        return out;
    }
    let gaps = words.len() - 1;
    let mut flip: Vec<bool> = (0..gaps).map(|_| rng.bernoulli(0.5)).collect();
    if !flip.iter().any(|&f| f) {
        flip[rng.below(gaps)] = true;
    }
    for (i, &w) in words.iter().enumerate() {
        out.push(w);
        let run = after[i];
        let keep = if i < gaps && flip[i] {
            if run == 0 {
                1
            } else {
                0
            }
        } else {
            run
        };
        out.extend(std::iter::repeat_n(boundary, keep));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PronunciationPerturber {
    pub table: ConfusionTable,
    pub rate: f64,
}

impl TextPerturber for PronunciationPerturber {
    fn name(&self) -> &str {
        "pronunciation"
    }

    fn perturb(&self, text: &[Word], rng: &mut RngStream) -> Vec<Word> {
        perturb_pronunciation(text, &self.table, self.rate, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PunctuationPerturber {
    pub boundary: Word,
}

impl TextPerturber for PunctuationPerturber {
    fn name(&self) -> &str {
        "punctuation"
    }

    fn perturb(&self, text: &[Word], rng: &mut RngStream) -> Vec<Word> {
        perturb_punctuation(text, self.boundary, rng)
    }
}
