//! Synthetic text-to-speech domain and the three toy generative models.
//!
//! Text is a sequence of word ids. The first half of the word vocabulary
//! belongs to language `L1`, the second half to `L2`, and word `w` in one half
//! is paired with `w ± v_text/2` in the other. One extra symbol,
//! [`ToyDims::boundary`], marks a phrase boundary (the toy analog of a comma).
//!
//! Speech is either a token sequence (autoregressive and masked models) or a
//! sequence of 2-D frames (flow-matching model). The [`ChannelSpec`] maps each
//! `(word, speaker)` to a speech token and a continuous codeword, and
//! transcribes speech back to words with configurable noise.

mod ar;
pub mod checkpoint;
mod channel;
mod fm;
mod mgm;

pub use ar::{ar_logprob, ar_sample, ToyArModel, ARGMAX_TEMPERATURE};
pub use channel::{render_reference, transcribe, ChannelSpec};
pub use fm::{fm_sample, fm_velocity, frame_count, interpolate, standard_normal_frames, ToyFmModel, DEFAULT_FM_STEPS};
pub use mgm::{mgm_decode, mgm_predict, mgm_sample, MaskedPrediction, ToyMgmModel, DEFAULT_MGM_STEPS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseArray, RngStream};

/// Word id (or the boundary symbol).
pub type Word = u32;
/// Speech token id.
pub type Token = u32;
/// One continuous speech frame.
pub type Frame = [f64; 2];

pub const FRAME_DIM: usize = 2;

/// Sizes of the synthetic domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyDims {
    /// Number of words, split evenly between the two languages.
    pub v_text: usize,
    pub v_speech: usize,
    pub n_speakers: usize,
    /// Hidden width of the flow-matching perceptron.
    pub hidden: usize,
}

impl Default for ToyDims {
    fn default() -> Self {
        Self {
            v_text: 40,
            v_speech: 64,
            n_speakers: 8,
            hidden: 64,
        }
    }
}

impl ToyDims {
    pub fn validate(&self) -> Result<()> {
        if self.v_text < 2 || !self.v_text.is_multiple_of(2) {
            return Err(Error::contract("v_text must be even and at least 2"));
        }
        if self.v_speech < self.v_text + 1 {
            return Err(Error::contract(
                "v_speech must cover every word plus the boundary symbol",
            ));
        }
        if self.n_speakers < 2 || !self.n_speakers.is_multiple_of(2) {
            return Err(Error::contract("n_speakers must be even and at least 2"));
        }
        if self.hidden == 0 {
            return Err(Error::contract("hidden width must be positive"));
        }
        Ok(())
    }

    /// Phrase-boundary symbol; sits just past the word ids.
    pub fn boundary(&self) -> Word {
        self.v_text as Word
    }

    /// Words plus the boundary symbol.
    pub fn text_symbols(&self) -> usize {
        self.v_text + 1
    }

    pub fn word_language(&self, w: Word) -> Option<Language> {
        let w = w as usize;
        if w < self.v_text / 2 {
            Some(Language::L1)
        } else if w < self.v_text {
            Some(Language::L2)
        } else {
            None
        }
    }

    /// The paired word in the other language.
    pub fn counterpart(&self, w: Word) -> Word {
        let half = (self.v_text / 2) as Word;
        if (w as usize) < self.v_text / 2 {
            w + half
        } else {
            w - half
        }
    }

    pub fn speaker_language(&self, speaker: u32) -> Language {
        if (speaker as usize) < self.n_speakers / 2 {
            Language::L1
        } else {
            Language::L2
        }
    }

    /// Word ids of one language.
    pub fn words_of(&self, lang: Language) -> std::ops::Range<Word> {
        let half = (self.v_text / 2) as Word;
        match lang {
            Language::L1 => 0..half,
            Language::L2 => half..2 * half,
        }
    }

    pub fn speakers_of(&self, lang: Language) -> std::ops::Range<u32> {
        let half = (self.n_speakers / 2) as u32;
        match lang {
            Language::L1 => 0..half,
            Language::L2 => half..2 * half,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    L1,
    L2,
}

impl Language {
    pub fn other(self) -> Language {
        match self {
            Language::L1 => Language::L2,
            Language::L2 => Language::L1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Language::L1 => "L1",
            Language::L2 => "L2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "L1" => Some(Language::L1),
            "L2" => Some(Language::L2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TextLanguage {
    L1,
    L2,
    Mixed,
}

impl TextLanguage {
    pub fn as_str(self) -> &'static str {
        match self {
            TextLanguage::L1 => "L1",
            TextLanguage::L2 => "L2",
            TextLanguage::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "L1" => Some(TextLanguage::L1),
            "L2" => Some(TextLanguage::L2),
            "mixed" => Some(TextLanguage::Mixed),
            _ => None,
        }
    }
}

impl From<Language> for TextLanguage {
    fn from(l: Language) -> Self {
        match l {
            Language::L1 => TextLanguage::L1,
            Language::L2 => TextLanguage::L2,
        }
    }
}

/// The model input: target text plus the reference-speaker condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ToyPrompt {
    pub text: Vec<Word>,
    pub speaker: u32,
    pub text_language: TextLanguage,
    pub speech_language: Language,
}

impl ToyPrompt {
    pub fn validate(&self, dims: &ToyDims) -> Result<()> {
        if self.text.is_empty() {
            return Err(Error::contract("prompt text is empty"));
        }
        if self.speaker as usize >= dims.n_speakers {
            return Err(Error::contract(format!("speaker {} out of range", self.speaker)));
        }
        let mut seen = [false; 2];
        for &w in &self.text {
            if w == dims.boundary() {
                continue;
            }
            match dims.word_language(w) {
                Some(Language::L1) => seen[0] = true,
                Some(Language::L2) => seen[1] = true,
                None => return Err(Error::contract(format!("word id {w} outside vocabulary"))),
            }
        }
        let consistent = match self.text_language {
            TextLanguage::L1 => !seen[1],
            TextLanguage::L2 => !seen[0],
            TextLanguage::Mixed => true,
        };
        if !consistent {
            return Err(Error::contract(format!(
                "text language {} disagrees with word ids",
                self.text_language.as_str()
            )));
        }
        if dims.speaker_language(self.speaker) != self.speech_language {
            return Err(Error::contract("speech language disagrees with speaker id"));
        }
        Ok(())
    }

    /// Text with phrase boundaries removed; the reference for WER.
    pub fn words(&self, dims: &ToyDims) -> Vec<Word> {
        self.text.iter().copied().filter(|&w| w != dims.boundary()).collect()
    }
}

/// Sampling hyperparameters recorded on every generated sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingHyper {
    /// Noise-free rendering through the channel codebook.
    Reference,
    Ar {
        temperature: f64,
        top_k: usize,
        top_p: f64,
    },
    Fm {
        duration_scale: f64,
        steps: usize,
    },
    Mgm {
        temperature: f64,
        steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpeechPayload {
    Tokens(Vec<Token>),
    Frames(Vec<Frame>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleKind {
    Discrete,
    Continuous,
}

impl SampleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::Discrete => "discrete",
            SampleKind::Continuous => "continuous",
        }
    }
}

/// A model output.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechSample {
    pub payload: SpeechPayload,
    pub hyper: SamplingHyper,
}

impl SpeechSample {
    pub fn tokens(tokens: Vec<Token>, hyper: SamplingHyper) -> Self {
        Self {
            payload: SpeechPayload::Tokens(tokens),
            hyper,
        }
    }

    pub fn frames(frames: Vec<Frame>, hyper: SamplingHyper) -> Self {
        Self {
            payload: SpeechPayload::Frames(frames),
            hyper,
        }
    }

    pub fn kind(&self) -> SampleKind {
        match self.payload {
            SpeechPayload::Tokens(_) => SampleKind::Discrete,
            SpeechPayload::Frames(_) => SampleKind::Continuous,
        }
    }

    pub fn len(&self) -> usize {
        match &self.payload {
            SpeechPayload::Tokens(t) => t.len(),
            SpeechPayload::Frames(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_tokens(&self) -> Option<&[Token]> {
        match &self.payload {
            SpeechPayload::Tokens(t) => Some(t),
            SpeechPayload::Frames(_) => None,
        }
    }

    pub fn as_frames(&self) -> Option<&[Frame]> {
        match &self.payload {
            SpeechPayload::Frames(f) => Some(f),
            SpeechPayload::Tokens(_) => None,
        }
    }
}

/// Index of the text position that frame `j` of `frames` frames is aligned
/// with, when stretching a text of `text_len` symbols uniformly.
pub fn aligned_index(j: usize, frames: usize, text_len: usize) -> usize {
    (j * text_len / frames).min(text_len - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Paradigm {
    Ar,
    Fm,
    Mgm,
}

impl Paradigm {
    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Ar => "ar",
            Paradigm::Fm => "fm",
            Paradigm::Mgm => "mgm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ar" => Some(Paradigm::Ar),
            "fm" => Some(Paradigm::Fm),
            "mgm" => Some(Paradigm::Mgm),
            _ => None,
        }
    }

    pub fn sample_kind(self) -> SampleKind {
        match self {
            Paradigm::Fm => SampleKind::Continuous,
            Paradigm::Ar | Paradigm::Mgm => SampleKind::Discrete,
        }
    }
}

/// Any of the three toy models.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyModel {
    Ar(ToyArModel),
    Fm(ToyFmModel),
    Mgm(ToyMgmModel),
}

impl ToyModel {
    pub fn paradigm(&self) -> Paradigm {
        match self {
            ToyModel::Ar(_) => Paradigm::Ar,
            ToyModel::Fm(_) => Paradigm::Fm,
            ToyModel::Mgm(_) => Paradigm::Mgm,
        }
    }

    pub fn params(&self) -> &[DenseArray] {
        match self {
            ToyModel::Ar(m) => m.params(),
            ToyModel::Fm(m) => m.params(),
            ToyModel::Mgm(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [DenseArray] {
        match self {
            ToyModel::Ar(m) => m.params_mut(),
            ToyModel::Fm(m) => m.params_mut(),
            ToyModel::Mgm(m) => m.params_mut(),
        }
    }

    pub fn zero_grads(&self) -> Vec<DenseArray> {
        self.params().iter().map(|p| DenseArray::zeros(p.shape())).collect()
    }

    /// Draws one sample; `hyper` must belong to this model's paradigm.
    pub fn sample(
        &self,
        prompt: &ToyPrompt,
        hyper: SamplingHyper,
        rng: &mut RngStream,
    ) -> Result<SpeechSample> {
        match (self, hyper) {
            (
                ToyModel::Ar(m),
                SamplingHyper::Ar {
                    temperature,
                    top_k,
                    top_p,
                },
            ) => ar_sample(m, prompt, temperature, top_k, top_p, rng),
            (
                ToyModel::Fm(m),
                SamplingHyper::Fm {
                    duration_scale,
                    steps,
                },
            ) => fm_sample(m, prompt, duration_scale, steps, rng),
            (ToyModel::Mgm(m), SamplingHyper::Mgm { temperature, steps }) => {
                mgm_sample(m, prompt, steps, temperature, rng)
            }
            _ => Err(Error::contract(format!(
                "hyperparameters {hyper:?} do not fit a {} model",
                self.paradigm().as_str()
            ))),
        }
    }
}

/// The five-way sampling schedule used for best/worst-of-n pair building.
pub fn default_schedule(paradigm: Paradigm) -> Vec<SamplingHyper> {
    match paradigm {
        Paradigm::Ar => DEFAULT_TEMPERATURES
            .iter()
            .map(|&temperature| SamplingHyper::Ar {
                temperature,
                top_k: DEFAULT_TOP_K,
                top_p: DEFAULT_TOP_P,
            })
            .collect(),
        Paradigm::Fm => DEFAULT_DURATION_SCALES
            .iter()
            .map(|&duration_scale| SamplingHyper::Fm {
                duration_scale,
                steps: DEFAULT_FM_STEPS,
            })
            .collect(),
        Paradigm::Mgm => DEFAULT_TEMPERATURES
            .iter()
            .map(|&temperature| SamplingHyper::Mgm {
                temperature,
                steps: DEFAULT_MGM_STEPS,
            })
            .collect(),
    }
}

/// Hyperparameters used for single-shot evaluation sampling.
pub fn default_eval_hyper(paradigm: Paradigm) -> SamplingHyper {
    match paradigm {
        Paradigm::Ar => SamplingHyper::Ar {
            temperature: 1.0,
            top_k: DEFAULT_TOP_K,
            top_p: DEFAULT_TOP_P,
        },
        Paradigm::Fm => SamplingHyper::Fm {
            duration_scale: 1.0,
            steps: DEFAULT_FM_STEPS,
        },
        Paradigm::Mgm => SamplingHyper::Mgm {
            temperature: 1.0,
            steps: DEFAULT_MGM_STEPS,
        },
    }
}

pub const DEFAULT_TEMPERATURES: [f64; 5] = [0.4, 0.6, 0.8, 1.0, 1.2];
pub const DEFAULT_DURATION_SCALES: [f64; 5] = [0.8, 0.9, 1.0, 1.1, 1.2];
pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_TOP_P: f64 = 1.0;
