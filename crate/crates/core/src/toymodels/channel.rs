use super::{aligned_index, Frame, SampleKind, SamplingHyper, SpeechPayload, SpeechSample, Token, ToyDims, ToyPrompt, Word};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Length of the per-speaker offset added to every continuous codeword.
pub const OFFSET_RADIUS: f64 = 0.05;
/// Speaker `s` shifts the shared token map by `s * SPEAKER_STRIDE` (odd, so
/// every speaker's token for a word differs from every other speaker's).
const SPEAKER_STRIDE: usize = 9;
/// Floor on the substitution probability used by the quality proxy.
const QUALITY_EPS_FLOOR: f64 = 0.01;
/// Frame noise scale assumed by the quality proxy.
const QUALITY_SIGMA: f64 = 0.1;

/// Ground-truth text/speech channel and the noisy transcriber.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    dims: ToyDims,
    /// `encode[s][symbol]` is the speech token of `symbol` for speaker `s`.
    encode: Vec<Vec<Token>>,
    /// `decode[s][token]` inverts `encode[s]`.
    decode: Vec<Vec<Option<Word>>>,
    offsets: Vec<Frame>,
    grid_side: usize,
    pub substitution_rate: f64,
    pub deletion_rate: f64,
    pub insertion_rate: f64,
}

impl ChannelSpec {
    /// Noise-free channel; the codebook permutation is drawn from `seed`.
    pub fn new(dims: ToyDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let v = dims.v_speech;
        let mut base: Vec<Token> = (0..v as Token).collect();
        RngStream::new(seed, 0xC0DE).shuffle(&mut base);
        let base = &base[..dims.text_symbols()];

        let mut encode = Vec::with_capacity(dims.n_speakers);
        let mut decode = Vec::with_capacity(dims.n_speakers);
        for s in 0..dims.n_speakers {
            let enc: Vec<Token> = base
                .iter()
                .map(|&t| ((t as usize + s * SPEAKER_STRIDE) % v) as Token)
                .collect();
            let mut dec = vec![None; v];
            for (sym, &t) in enc.iter().enumerate() {
                dec[t as usize] = Some(sym as Word);
            }
            encode.push(enc);
            decode.push(dec);
        }
        let offsets = (0..dims.n_speakers)
            .map(|s| {
                let angle = 2.0 * std::f64::consts::PI * s as f64 / dims.n_speakers as f64;
                [OFFSET_RADIUS * angle.cos(), OFFSET_RADIUS * angle.sin()]
            })
            .collect();
        let grid_side = (v as f64).sqrt().ceil() as usize;
        Ok(Self {
            dims,
            encode,
            decode,
            offsets,
            grid_side: grid_side.max(2),
            substitution_rate: 0.0,
            deletion_rate: 0.0,
            insertion_rate: 0.0,
        })
    }

    pub fn with_noise(mut self, substitution: f64, deletion: f64, insertion: f64) -> Result<Self> {
        let rates = [substitution, deletion, insertion];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || rates.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::contract(format!("invalid channel noise rates {rates:?}")));
        }
        self.substitution_rate = substitution;
        self.deletion_rate = deletion;
        self.insertion_rate = insertion;
        Ok(self)
    }

    /// Same codebook without transcription noise.
    pub fn clean(&self) -> Self {
        let mut c = self.clone();
        c.substitution_rate = 0.0;
        c.deletion_rate = 0.0;
        c.insertion_rate = 0.0;
        c
    }

    pub fn dims(&self) -> &ToyDims {
        &self.dims
    }

    pub fn speaker_offset(&self, speaker: u32) -> Frame {
        self.offsets[speaker as usize]
    }

    pub fn token_of(&self, symbol: Word, speaker: u32) -> Result<Token> {
        self.encode
            .get(speaker as usize)
            .ok_or_else(|| Error::contract(format!("speaker {speaker} outside codebook")))?
            .get(symbol as usize)
            .copied()
            .ok_or_else(|| Error::contract(format!("word id {symbol} outside codebook")))
    }

    pub fn symbol_of(&self, token: Token, speaker: u32) -> Option<Word> {
        self.decode.get(speaker as usize)?.get(token as usize).copied().flatten()
    }

    /// Position of token `k` on the square grid spanning `[-1, 1]^2`.
    pub fn grid_point(&self, token: Token) -> Frame {
        let side = self.grid_side;
        let step = 2.0 / (side - 1) as f64;
        let k = token as usize;
        [-1.0 + step * (k % side) as f64, -1.0 + step * (k / side) as f64]
    }

    pub fn codeword(&self, symbol: Word, speaker: u32) -> Result<Frame> {
        let g = self.grid_point(self.token_of(symbol, speaker)?);
        let o = self.speaker_offset(speaker);
        Ok([g[0] + o[0], g[1] + o[1]])
    }

    /// Nearest grid token to a frame; ties go to the lower token id.
    pub fn nearest_token(&self, frame: &Frame) -> Token {
        let mut best = (f64::INFINITY, 0);
        for k in 0..self.dims.v_speech as Token {
            let g = self.grid_point(k);
            let d = (frame[0] - g[0]).powi(2) + (frame[1] - g[1]).powi(2);
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    }

    fn random_other_word(&self, w: Word, rng: &mut RngStream) -> Word {
        let v = self.dims.v_text;
        let r = rng.below(v - 1) as Word;
        if (w as usize) < v && r >= w {
            r + 1
        } else {
            r
        }
    }

    /// Applies word-level substitution/deletion/insertion noise.
    pub fn corrupt(&self, words: &[Word], rng: &mut RngStream) -> Vec<Word> {
        let (s, d, i) = (self.substitution_rate, self.deletion_rate, self.insertion_rate);
        if s == 0.0 && d == 0.0 && i == 0.0 {
            return words.to_vec();
        }
        let mut out = Vec::with_capacity(words.len() + 2);
        for &w in words {
            let u = rng.uniform();
            if u < s {
                out.push(self.random_other_word(w, rng));
            } else if u < s + d {
                // dropped
            } else if u < s + d + i {
                out.push(w);
                out.push(rng.below(self.dims.v_text) as Word);
            } else {
                out.push(w);
            }
        }
        out
    }

    /// Noise-free decoding of a sample to text symbols (boundaries kept).
    pub fn decode_symbols(&self, speech: &SpeechSample, speaker: u32) -> Vec<Word> {
        let tokens: Vec<Token> = match &speech.payload {
            SpeechPayload::Tokens(t) => t.clone(),
            SpeechPayload::Frames(f) => f.iter().map(|fr| self.nearest_token(fr)).collect(),
        };
        tokens
            .into_iter()
            .filter_map(|t| self.symbol_of(t, speaker))
            .collect()
    }

    /// Mean per-unit log-likelihood of `speech` under this channel, given the
    /// prompt it was generated for. Units are aligned to text by uniform
    /// stretching.
    pub fn log_likelihood(&self, speech: &SpeechSample, prompt: &ToyPrompt) -> Result<f64> {
        let n = prompt.text.len();
        let m = speech.len();
        if n == 0 || m == 0 {
            return Err(Error::contract("log_likelihood needs non-empty text and speech"));
        }
        let mut total = 0.0;
        match &speech.payload {
            SpeechPayload::Tokens(tokens) => {
                let eps = self.substitution_rate.max(QUALITY_EPS_FLOOR);
                let miss = (eps / (self.dims.v_speech - 1) as f64).ln();
                let hit = (1.0 - eps).ln();
                for (j, &t) in tokens.iter().enumerate() {
                    let sym = prompt.text[aligned_index(j, m, n)];
                    total += if self.token_of(sym, prompt.speaker)? == t { hit } else { miss };
                }
            }
            SpeechPayload::Frames(frames) => {
                let var = QUALITY_SIGMA * QUALITY_SIGMA;
                let norm = -(2.0 * std::f64::consts::PI * var).ln();
                for (j, f) in frames.iter().enumerate() {
                    let sym = prompt.text[aligned_index(j, m, n)];
                    let c = self.codeword(sym, prompt.speaker)?;
                    let d2 = (f[0] - c[0]).powi(2) + (f[1] - c[1]).powi(2);
                    total += norm - d2 / (2.0 * var);
                }
            }
        }
        Ok(total / m as f64)
    }

    /// Speaker-offset vector recovered from a sample of `text`.
    ///
    /// Continuous samples average the residuals between frames and their
    /// nearest grid points. Discrete samples carry no residual: each token is
    /// aligned to a text symbol and votes with the offset of every speaker
    /// whose codeword for that symbol is exactly this token (tokens no speaker
    /// would emit there vote for nobody).
    pub fn recovered_offset(&self, speech: &SpeechSample, text: &[Word]) -> Frame {
        let mut acc = [0.0, 0.0];
        match &speech.payload {
            SpeechPayload::Frames(frames) => {
                for f in frames {
                    let g = self.grid_point(self.nearest_token(f));
                    acc[0] += f[0] - g[0];
                    acc[1] += f[1] - g[1];
                }
            }
            SpeechPayload::Tokens(tokens) if !text.is_empty() => {
                let (m, n) = (tokens.len(), text.len());
                for (j, &t) in tokens.iter().enumerate() {
                    let sym = text[aligned_index(j, m, n)] as usize;
                    for (s, enc) in self.encode.iter().enumerate() {
                        if enc.get(sym) == Some(&t) {
                            acc[0] += self.offsets[s][0];
                            acc[1] += self.offsets[s][1];
                        }
                    }
                }
            }
            SpeechPayload::Tokens(_) => {}
        }
        let m = speech.len().max(1) as f64;
        [acc[0] / m, acc[1] / m]
    }

    /// Cosine between the recovered offset and the prompt speaker's offset.
    pub fn speaker_similarity(&self, speech: &SpeechSample, prompt: &ToyPrompt) -> f64 {
        cosine(
            &self.recovered_offset(speech, &prompt.text),
            &self.speaker_offset(prompt.speaker),
        )
    }
}

pub(crate) fn cosine(a: &Frame, b: &Frame) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    ((a[0] * b[0] + a[1] * b[1]) / (na * nb)).clamp(-1.0, 1.0)
}

/// Noise-free encoding of `text` for `speaker`: one unit per symbol.
pub fn render_reference(
    text: &[Word],
    speaker: u32,
    channel: &ChannelSpec,
    kind: SampleKind,
) -> Result<SpeechSample> {
    if text.is_empty() {
        return Err(Error::contract("cannot render empty text"));
    }
    Ok(match kind {
        SampleKind::Discrete => SpeechSample::tokens(
            text.iter()
                .map(|&w| channel.token_of(w, speaker))
                .collect::<Result<_>>()?,
            SamplingHyper::Reference,
        ),
        SampleKind::Continuous => SpeechSample::frames(
            text.iter()
                .map(|&w| channel.codeword(w, speaker))
                .collect::<Result<_>>()?,
            SamplingHyper::Reference,
        ),
    })
}

/// Decodes `speech` to words (boundaries dropped), then applies the channel's
/// transcription noise. `speaker` selects the codebook used for decoding.
pub fn transcribe(
    speech: &SpeechSample,
    speaker: u32,
    channel: &ChannelSpec,
    rng: &mut RngStream,
) -> Vec<Word> {
    let boundary = channel.dims.boundary();
    let words: Vec<Word> = channel
        .decode_symbols(speech, speaker)
        .into_iter()
        .filter(|&w| w != boundary)
        .collect();
    channel.corrupt(&words, rng)
}
