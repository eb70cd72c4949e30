use super::ar::ARGMAX_TEMPERATURE;
use super::{ChannelSpec, SamplingHyper, SpeechSample, Token, ToyDims, ToyPrompt};
use crate::error::{Error, Result};
use crate::numerics::{log_softmax_slice, softmax_slice, DenseArray, RngStream};

pub const DEFAULT_MGM_STEPS: usize = 4;

const COND: usize = 0;
const CTX: usize = 1;

/// Per-position token predictor for masked sequences.
///
/// `logits_i = cond_table[word_i, speaker] + (1/n) * sum_{j unmasked} ctx_table[y_j]`
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMgmModel {
    v_speech: usize,
    text_symbols: usize,
    n_speakers: usize,
    params: Vec<DenseArray>,
}

/// Predicted distribution at one masked position.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedPrediction {
    pub position: usize,
    pub probs: Vec<f64>,
}

impl ToyMgmModel {
    pub fn uniform(dims: &ToyDims) -> Self {
        let (v, t, s) = (dims.v_speech, dims.text_symbols(), dims.n_speakers);
        Self {
            v_speech: v,
            text_symbols: t,
            n_speakers: s,
            params: vec![DenseArray::zeros(&[t, s, v]), DenseArray::zeros(&[v, v])],
        }
    }

    pub fn random(dims: &ToyDims, scale: f64, rng: &mut RngStream) -> Self {
        let mut m = Self::uniform(dims);
        for p in &mut m.params {
            *p = DenseArray::randn(p.shape(), scale, rng);
        }
        m
    }

    /// Context-free channel model; see [`super::ToyArModel::from_channel`].
    pub fn from_channel(channel: &ChannelSpec, noise: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&noise) {
            return Err(Error::contract("channel noise must be in [0, 1)"));
        }
        let dims = *channel.dims();
        let mut m = Self::uniform(&dims);
        let v = dims.v_speech;
        let miss = if noise > 0.0 {
            (noise / (v - 1) as f64).ln()
        } else {
            -40.0
        };
        let hit = (1.0 - noise).ln();
        for w in 0..m.text_symbols {
            for s in 0..m.n_speakers {
                let target = channel.token_of(w as u32, s as u32)? as usize;
                let off = (w * m.n_speakers + s) * v;
                let row = &mut m.params[COND].data_mut()[off..off + v];
                row.iter_mut().for_each(|x| *x = miss);
                row[target] = hit;
            }
        }
        Ok(m)
    }

    pub fn from_params(params: Vec<DenseArray>) -> Result<Self> {
        let [cond, ctx] = params.as_slice() else {
            return Err(Error::Checkpoint("MGM model needs 2 arrays".into()));
        };
        let (cs, xs) = (cond.shape(), ctx.shape());
        if cs.len() != 3 || xs.len() != 2 || xs[0] != xs[1] || cs[2] != xs[0] {
            return Err(Error::Checkpoint(format!("inconsistent MGM shapes {cs:?} {xs:?}")));
        }
        Ok(Self {
            v_speech: cs[2],
            text_symbols: cs[0],
            n_speakers: cs[1],
            params,
        })
    }

    pub fn params(&self) -> &[DenseArray] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [DenseArray] {
        &mut self.params
    }

    /// The mask symbol used inside partially decoded sequences.
    pub fn mask_token(&self) -> Token {
        self.v_speech as Token
    }

    fn check(&self, prompt: &ToyPrompt, y_t: &[Token], mask: &[bool]) -> Result<()> {
        if prompt.text.is_empty() {
            return Err(Error::contract("prompt text is empty"));
        }
        if prompt.speaker as usize >= self.n_speakers {
            return Err(Error::contract(format!("speaker {} out of range", prompt.speaker)));
        }
        if let Some(w) = prompt.text.iter().find(|&&w| w as usize >= self.text_symbols) {
            return Err(Error::contract(format!("word id {w} outside vocabulary")));
        }
        if y_t.len() != mask.len() || y_t.len() != prompt.text.len() {
            return Err(Error::contract(format!(
                "sequence {}, mask {}, text {} lengths differ",
                y_t.len(),
                mask.len(),
                prompt.text.len()
            )));
        }
        for (&t, &m) in y_t.iter().zip(mask) {
            if !m && t as usize >= self.v_speech {
                return Err(Error::contract(format!("unmasked token {t} outside vocabulary")));
            }
        }
        Ok(())
    }

    fn context(&self, y_t: &[Token], mask: &[bool]) -> Vec<f64> {
        let v = self.v_speech;
        let inv_n = 1.0 / y_t.len() as f64;
        let ctx = self.params[CTX].data();
        let mut c = vec![0.0; v];
        for (&t, &m) in y_t.iter().zip(mask) {
            if !m {
                let row = &ctx[t as usize * v..(t as usize + 1) * v];
                c.iter_mut().zip(row).for_each(|(a, b)| *a += inv_n * b);
            }
        }
        c
    }

    fn position_logits(&self, ctx: &[f64], word: u32, speaker: u32) -> Vec<f64> {
        let v = self.v_speech;
        let off = (word as usize * self.n_speakers + speaker as usize) * v;
        self.params[COND].data()[off..off + v]
            .iter()
            .zip(ctx)
            .map(|(a, b)| a + b)
            .collect()
    }

    /// `sum over masked i of log p(y_i | y_t, prompt)`, where `y` is the full
    /// sequence and `mask[i]` marks the positions hidden in `y_t`.
    pub fn masked_logprob(&self, prompt: &ToyPrompt, y: &[Token], mask: &[bool]) -> Result<f64> {
        self.check(prompt, y, mask)?;
        if let Some(t) = y.iter().find(|&&t| t as usize >= self.v_speech) {
            return Err(Error::contract(format!("target token {t} outside vocabulary")));
        }
        let ctx = self.context(y, mask);
        let mut total = 0.0;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                let lp = log_softmax_slice(&self.position_logits(&ctx, prompt.text[i], prompt.speaker))?;
                total += lp[y[i] as usize];
            }
        }
        Ok(total)
    }

    /// Adds `scale * d masked_logprob / d params` into `grads`.
    pub fn accumulate_masked_logprob_grad(
        &self,
        prompt: &ToyPrompt,
        y: &[Token],
        mask: &[bool],
        scale: f64,
        grads: &mut [DenseArray],
    ) -> Result<()> {
        self.check(prompt, y, mask)?;
        let v = self.v_speech;
        let inv_n = 1.0 / y.len() as f64;
        let ctx = self.context(y, mask);
        let mut dctx = vec![0.0; v];
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            let probs = softmax_slice(&self.position_logits(&ctx, prompt.text[i], prompt.speaker))?;
            let off = (prompt.text[i] as usize * self.n_speakers + prompt.speaker as usize) * v;
            for (k, p) in probs.iter().enumerate() {
                let d = scale * (f64::from(k == y[i] as usize) - p);
                grads[COND].data_mut()[off + k] += d;
                dctx[k] += d;
            }
        }
        for (&t, &m) in y.iter().zip(mask) {
            if !m {
                let row = &mut grads[CTX].data_mut()[t as usize * v..(t as usize + 1) * v];
                row.iter_mut().zip(&dctx).for_each(|(g, d)| *g += inv_n * d);
            }
        }
        Ok(())
    }
}

/// Distributions at every masked position of `y_t`. Returns an empty list
/// when nothing is masked.
pub fn mgm_predict(
    model: &ToyMgmModel,
    y_t: &[Token],
    mask: &[bool],
    prompt: &ToyPrompt,
) -> Result<Vec<MaskedPrediction>> {
    model.check(prompt, y_t, mask)?;
    let ctx = model.context(y_t, mask);
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| {
            Ok(MaskedPrediction {
                position: i,
                probs: softmax_slice(&model.position_logits(&ctx, prompt.text[i], prompt.speaker))?,
            })
        })
        .collect()
}

/// Confidence-ordered iterative unmasking starting from `(tokens, mask)`.
///
/// Each step draws a token at every masked position, then commits the
/// `ceil(initially_masked / steps)` draws whose distributions have the largest
/// maximum probability (ties to the lower position). Unmasked positions are
/// never touched.
pub fn mgm_decode(
    model: &ToyMgmModel,
    prompt: &ToyPrompt,
    mut tokens: Vec<Token>,
    mut mask: Vec<bool>,
    steps: usize,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<Vec<Token>> {
    if steps == 0 {
        return Err(Error::contract("at least one decoding step"));
    }
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(Error::contract("temperature must be non-negative"));
    }
    model.check(prompt, &tokens, &mask)?;
    let masked = mask.iter().filter(|&&m| m).count();
    let per_step = masked.div_ceil(steps).max(1);
    let greedy = temperature < ARGMAX_TEMPERATURE;

    while mask.iter().any(|&m| m) {
        let ctx = model.context(&tokens, &mask);
        let mut draws: Vec<(f64, usize, Token)> = Vec::new();
        for i in (0..mask.len()).filter(|&i| mask[i]) {
            let logits = model.position_logits(&ctx, prompt.text[i], prompt.speaker);
            let scaled: Vec<f64> = if greedy {
                logits
            } else {
                logits.iter().map(|l| l / temperature).collect()
            };
            let probs = softmax_slice(&scaled)?;
            let (mut best, mut conf) = (0, probs[0]);
            for (k, &p) in probs.iter().enumerate() {
                if p > conf {
                    best = k;
                    conf = p;
                }
            }
            let token = if greedy {
                best
            } else {
                rng.categorical(&probs)
                    .ok_or_else(|| Error::Sampling("degenerate distribution".into()))?
            };
            draws.push((conf, i, token as Token));
        }
        draws.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i, t) in draws.iter().take(per_step) {
            tokens[i] = t;
            mask[i] = false;
        }
    }
    Ok(tokens)
}

/// Decodes a fully masked sequence of the prompt's length.
pub fn mgm_sample(
    model: &ToyMgmModel,
    prompt: &ToyPrompt,
    steps: usize,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<SpeechSample> {
    let n = prompt.text.len();
    let tokens = mgm_decode(
        model,
        prompt,
        vec![model.mask_token(); n],
        vec![true; n],
        steps,
        temperature,
        rng,
    )?;
    Ok(SpeechSample::tokens(tokens, SamplingHyper::Mgm { temperature, steps }))
}
