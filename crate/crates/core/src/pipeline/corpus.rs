use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::pairgen::{perturb_pronunciation, perturb_punctuation, ConfusionTable};
use crate::toymodels::{Language, TextLanguage, ToyDims, ToyPrompt, Word};

pub const MIN_TEXT_LEN: usize = 3;
pub const MAX_TEXT_LEN: usize = 12;
/// Paper-scale prompts per text type.
pub const PAPER_PROMPTS_PER_TYPE: usize = 12_000;
pub const DESK_PROMPTS_PER_TYPE: usize = 400;
/// Word replacement rate used when building pronunciation-perturbed prompts.
pub const PRONUNCIATION_RATE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TextType {
    Regular,
    Repeated,
    CodeSwitching,
    PronunciationPerturbed,
    PunctuationPerturbed,
}

impl TextType {
    pub const ALL: [TextType; 5] = [
        TextType::Regular,
        TextType::Repeated,
        TextType::CodeSwitching,
        TextType::PronunciationPerturbed,
        TextType::PunctuationPerturbed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TextType::Regular => "regular",
            TextType::Repeated => "repeated",
            TextType::CodeSwitching => "code_switching",
            TextType::PronunciationPerturbed => "pronunciation_perturbed",
            TextType::PunctuationPerturbed => "punctuation_perturbed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Types used for the harder prompts of later alignment rounds.
    pub fn is_challenging(self) -> bool {
        matches!(self, TextType::Repeated | TextType::CodeSwitching)
    }
}

/// Text language → speech language of a prompt's base text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Combination {
    L1ToL1,
    L2ToL2,
    L1ToL2,
    L2ToL1,
}

impl Combination {
    pub const ALL: [Combination; 4] = [
        Combination::L1ToL1,
        Combination::L2ToL2,
        Combination::L1ToL2,
        Combination::L2ToL1,
    ];

    pub fn text(self) -> Language {
        match self {
            Combination::L1ToL1 | Combination::L1ToL2 => Language::L1,
            Combination::L2ToL2 | Combination::L2ToL1 => Language::L2,
        }
    }

    pub fn speech(self) -> Language {
        match self {
            Combination::L1ToL1 | Combination::L2ToL1 => Language::L1,
            Combination::L2ToL2 | Combination::L1ToL2 => Language::L2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Combination::L1ToL1 => "l1-l1",
            Combination::L2ToL2 => "l2-l2",
            Combination::L1ToL2 => "l1-l2",
            Combination::L2ToL1 => "l2-l1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub prompt: ToyPrompt,
    pub text_type: TextType,
    pub combination: Combination,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PromptCorpus {
    pub entries: Vec<CorpusEntry>,
}

impl PromptCorpus {
    pub fn prompts_of(&self, text_type: TextType) -> Vec<ToyPrompt> {
        self.entries
            .iter()
            .filter(|e| e.text_type == text_type)
            .map(|e| e.prompt.clone())
            .collect()
    }

    pub fn challenging(&self) -> Vec<&CorpusEntry> {
        self.entries.iter().filter(|e| e.text_type.is_challenging()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub dims: ToyDims,
    pub per_type: usize,
    pub text_types: Vec<TextType>,
    pub seed: u64,
}

impl CorpusConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            dims: ToyDims::default(),
            per_type: DESK_PROMPTS_PER_TYPE,
            text_types: TextType::ALL.to_vec(),
            seed,
        }
    }
}

/// Draws `count` stratum indices in `0..strata` so that per-stratum counts
/// differ by at most one: full shuffled rounds, then a shuffled partial round.
fn stratified(count: usize, strata: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut round: Vec<usize> = (0..strata).collect();
        rng.shuffle(&mut round);
        let take = (count - out.len()).min(strata);
        out.extend_from_slice(&round[..take]);
    }
    out
}

fn random_text(dims: &ToyDims, lang: Language, len: usize, rng: &mut RngStream) -> Vec<Word> {
    let words = dims.words_of(lang);
    let n = (words.end - words.start) as usize;
    (0..len).map(|_| words.start + rng.below(n) as Word).collect()
}

/// Balanced combinations, stratified over speaker × text length within each
/// combination. Every text type draws its own base texts.
pub fn build_prompt_corpus(config: &CorpusConfig) -> Result<PromptCorpus> {
    config.dims.validate()?;
    if config.per_type < Combination::ALL.len() {
        return Err(Error::contract(format!(
            "at least {} prompts per text type are needed",
            Combination::ALL.len()
        )));
    }
    let root = RngStream::new(config.seed, STREAM_CORPUS);
    let lengths = MAX_TEXT_LEN - MIN_TEXT_LEN + 1;
    let mut entries = Vec::new();
    for (ti, &text_type) in config.text_types.iter().enumerate() {
        let mut jobs = Vec::new();
        for (ci, &combination) in Combination::ALL.iter().enumerate() {
            let n = config.per_type / 4 + usize::from(ci < config.per_type % 4);
            let speakers = config.dims.speakers_of(combination.speech());
            let n_speakers = (speakers.end - speakers.start) as usize;
            let mut rng = root.fork((ti * 4 + ci) as u64);
            for stratum in stratified(n, n_speakers * lengths, &mut rng) {
                let speaker = speakers.start + (stratum / lengths) as u32;
                let len = MIN_TEXT_LEN + stratum % lengths;
                jobs.push((combination, speaker, len));
            }
        }
        let base_rng = root.fork(1000 + ti as u64);
        let dims = config.dims;
        let made: Vec<Result<CorpusEntry>> = jobs
            .par_iter()
            .enumerate()
            .map(|(i, &(combination, speaker, len))| {
                let mut rng = base_rng.fork(i as u64);
                let text = random_text(&dims, combination.text(), len, &mut rng);
                let variants = make_text_variants(&text, &dims, &mut rng)?;
                let (text, text_language) = match text_type {
                    TextType::Regular => (text, combination.text().into()),
                    TextType::Repeated => (variants.repeated, combination.text().into()),
                    TextType::CodeSwitching => (variants.code_switching, TextLanguage::Mixed),
                    TextType::PronunciationPerturbed => (variants.pronunciation, combination.text().into()),
                    TextType::PunctuationPerturbed => (variants.punctuation, combination.text().into()),
                };
                let prompt = ToyPrompt {
                    text,
                    speaker,
                    text_language,
                    speech_language: combination.speech(),
                };
                prompt.validate(&dims)?;
                Ok(CorpusEntry {
                    prompt,
                    text_type,
                    combination,
                })
            })
            .collect();
        for e in made {
            entries.push(e?);
        }
    }
    Ok(PromptCorpus { entries })
}

const STREAM_CORPUS: u64 = 0x0C0A;
const STREAM_EVAL: u64 = 0x0E7A;

#[derive(Debug, Clone, PartialEq)]
pub struct TextVariants {
    pub repeated: Vec<Word>,
    pub code_switching: Vec<Word>,
    pub pronunciation: Vec<Word>,
    pub punctuation: Vec<Word>,
}

/// Duplicates 1 to 3 spans of 1 or 2 words in place.
pub fn repeat_spans(text: &[Word], rng: &mut RngStream) -> Vec<Word> {
    let mut out = text.to_vec();
    for _ in 0..1 + rng.below(3) {
        let start = rng.below(out.len());
        let len = (1 + rng.below(2)).min(out.len() - start);
        let span: Vec<Word> = out[start..start + len].to_vec();
        let at = start + len;
        out.splice(at..at, span);
    }
    out
}

/// Swaps each word for its other-language counterpart with probability 1/2,
/// forcing at least one swap.
pub fn code_switch(text: &[Word], dims: &ToyDims, rng: &mut RngStream) -> Vec<Word> {
    let boundary = dims.boundary();
    let mut out = text.to_vec();
    let positions: Vec<usize> = (0..out.len()).filter(|&i| out[i] != boundary).collect();
    let mut swapped = false;
    for &i in &positions {
        if rng.bernoulli(0.5) {
            out[i] = dims.counterpart(out[i]);
            swapped = true;
        }
    }
    if !swapped && !positions.is_empty() {
        let i = positions[rng.below(positions.len())];
        out[i] = dims.counterpart(out[i]);
    }
    out
}

pub fn make_text_variants(text: &[Word], dims: &ToyDims, rng: &mut RngStream) -> Result<TextVariants> {
    if text.len() < 2 {
        return Err(Error::contract("text variants need at least two words"));
    }
    let table = ConfusionTable::neighbours(dims);
    Ok(TextVariants {
        repeated: repeat_spans(text, rng),
        code_switching: code_switch(text, dims, rng),
        pronunciation: perturb_pronunciation(text, &table, PRONUNCIATION_RATE, rng),
        punctuation: perturb_punctuation(text, dims.boundary(), rng),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Regular,
    Articulatory,
    CodeSwitching,
    CrossLingual,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Regular,
        Scenario::Articulatory,
        Scenario::CodeSwitching,
        Scenario::CrossLingual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Regular => "regular",
            Scenario::Articulatory => "articulatory",
            Scenario::CodeSwitching => "code_switching",
            Scenario::CrossLingual => "cross_lingual",
        }
    }

    /// Prompt counts at one tenth of the paper's evaluation sets.
    pub fn default_size(self) -> usize {
        match self {
            Scenario::Regular => 300,
            Scenario::Articulatory => 80,
            Scenario::CodeSwitching => 100,
            Scenario::CrossLingual => 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub scenario: Scenario,
    pub prompts: Vec<ToyPrompt>,
}

/// Alternates a word with its nearest confusable neighbour, the toy analog of
/// a tongue twister.
fn articulatory_text(dims: &ToyDims, lang: Language, len: usize, rng: &mut RngStream) -> Vec<Word> {
    let words = dims.words_of(lang);
    let n = (words.end - words.start) as usize;
    let a = words.start + rng.below(n - 1) as Word;
    (0..len).map(|i| if (i / 2) % 2 == 0 { a } else { a + 1 }).collect()
}

/// Held-out evaluation prompts for one scenario. Speakers and lengths are
/// stratified as in the training corpus; the random streams are disjoint.
pub fn build_eval_set(dims: &ToyDims, scenario: Scenario, size: usize, seed: u64) -> Result<EvalSet> {
    if size == 0 {
        return Err(Error::contract("evaluation sets must be non-empty"));
    }
    let mut rng = RngStream::new(seed, STREAM_EVAL).fork(scenario as u64);
    let lengths = MAX_TEXT_LEN - MIN_TEXT_LEN + 1;
    let combos: &[Combination] = match scenario {
        Scenario::Regular | Scenario::Articulatory => &[Combination::L1ToL1, Combination::L2ToL2],
        Scenario::CodeSwitching => &Combination::ALL,
        Scenario::CrossLingual => &[Combination::L1ToL2, Combination::L2ToL1],
    };
    let mut prompts = Vec::with_capacity(size);
    for (ci, &c) in combos.iter().enumerate() {
        let n = size / combos.len() + usize::from(ci < size % combos.len());
        let speakers = dims.speakers_of(c.speech());
        let n_speakers = (speakers.end - speakers.start) as usize;
        for stratum in stratified(n, n_speakers * lengths, &mut rng) {
            let speaker = speakers.start + (stratum / lengths) as u32;
            let len = MIN_TEXT_LEN + stratum % lengths;
            let (text, text_language) = match scenario {
                Scenario::Articulatory => (articulatory_text(dims, c.text(), len, &mut rng), c.text().into()),
                Scenario::CodeSwitching => {
                    let base = random_text(dims, c.text(), len, &mut rng);
                    (code_switch(&base, dims, &mut rng), TextLanguage::Mixed)
                }
                Scenario::Regular | Scenario::CrossLingual => {
                    (random_text(dims, c.text(), len, &mut rng), c.text().into())
                }
            };
            let prompt = ToyPrompt {
                text,
                speaker,
                text_language,
                speech_language: c.speech(),
            };
            prompt.validate(dims)?;
            prompts.push(prompt);
        }
    }
    Ok(EvalSet { scenario, prompts })
}

/// All four scenarios at their default sizes.
pub fn build_eval_suite(dims: &ToyDims, seed: u64) -> Result<Vec<EvalSet>> {
    Scenario::ALL
        .iter()
        .map(|&s| build_eval_set(dims, s, s.default_size(), seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn corpus_is_balanced_and_stratified() {
        let config = CorpusConfig {
            per_type: 403,
            ..CorpusConfig::desk(5)
        };
        let corpus = build_prompt_corpus(&config).unwrap();
        assert_eq!(corpus.len(), 5 * 403);
        let dims = config.dims;
        for t in TextType::ALL {
            let mut per_combo: BTreeMap<Combination, usize> = BTreeMap::new();
            let mut per_stratum: BTreeMap<(Combination, u32, usize), usize> = BTreeMap::new();
            for e in corpus.entries.iter().filter(|e| e.text_type == t) {
                *per_combo.entry(e.combination).or_default() += 1;
                let base_len = e.prompt.words(&dims).len();
                if t == TextType::Regular {
                    *per_stratum.entry((e.combination, e.prompt.speaker, base_len)).or_default() += 1;
                }
                assert_eq!(dims.speaker_language(e.prompt.speaker), e.combination.speech());
            }
            let counts: Vec<usize> = per_combo.values().copied().collect();
            assert_eq!(counts.len(), 4);
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            if t == TextType::Regular {
                for c in Combination::ALL {
                    let v: Vec<usize> = per_stratum
                        .iter()
                        .filter(|(k, _)| k.0 == c)
                        .map(|(_, &n)| n)
                        .collect();
                    assert_eq!(v.len(), 40);
                    assert!(v.iter().max().unwrap() - v.iter().min().unwrap() <= 1);
                }
            }
        }
        assert!(build_prompt_corpus(&CorpusConfig {
            per_type: 3,
            ..config
        })
        .is_err());
    }

    #[test]
    fn variant_rules() {
        let dims = ToyDims::default();
        let mut rng = RngStream::new(1, 0);
        for _ in 0..1000 {
            let len = 2 + rng.below(11);
            let text = random_text(&dims, Language::L1, len, &mut rng);
            let v = make_text_variants(&text, &dims, &mut rng).unwrap();
            assert!(v.repeated.len() > text.len());
            assert_eq!(v.code_switching.len(), text.len());
            assert!(v.code_switching.iter().any(|&w| dims.word_language(w) == Some(Language::L2)));
            assert_eq!(v.pronunciation.len(), text.len());
        }
        assert!(make_text_variants(&[1], &dims, &mut rng).is_err());
    }

    #[test]
    fn repeated_variant_duplicates_in_place() {
        // Search seeds for a single one-word duplication of the middle word.
        for seed in 0..500 {
            let out = repeat_spans(&[1, 2, 3], &mut RngStream::new(seed, 0));
            if out.len() == 4 && out == [1, 2, 2, 3] {
                return;
            }
        }
        panic!("no seed produced [1, 2, 2, 3]");
    }

    #[test]
    fn eval_suite_shapes() {
        let dims = ToyDims::default();
        let suite = build_eval_suite(&dims, 3).unwrap();
        let sizes: Vec<usize> = suite.iter().map(|s| s.prompts.len()).collect();
        assert_eq!(sizes, [300, 80, 100, 100]);
        for set in &suite {
            for p in &set.prompts {
                match set.scenario {
                    Scenario::CrossLingual => {
                        assert_ne!(p.text_language, TextLanguage::from(p.speech_language))
                    }
                    Scenario::CodeSwitching => assert_eq!(p.text_language, TextLanguage::Mixed),
                    _ => assert_eq!(p.text_language, TextLanguage::from(p.speech_language)),
                }
            }
        }
    }
}
