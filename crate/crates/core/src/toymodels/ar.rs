use super::{ChannelSpec, SamplingHyper, SpeechSample, Token, ToyDims, ToyPrompt};
use crate::error::{Error, Result};
use crate::numerics::{log_softmax_slice, softmax_slice, DenseArray, RngStream};

/// Temperatures below this decode greedily.
pub const ARGMAX_TEMPERATURE: f64 = 1e-6;

const PREV: usize = 0;
const COND: usize = 1;

/// Autoregressive token model with additive logits:
/// `logits(prev, word, speaker) = prev_table[prev] + cond_table[word, speaker]`.
///
/// The first step conditions on a start symbol stored as row `v_speech` of the
/// previous-token table.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyArModel {
    v_speech: usize,
    text_symbols: usize,
    n_speakers: usize,
    params: Vec<DenseArray>,
}

impl ToyArModel {
    /// All-zero logits: uniform next-token distributions.
    pub fn uniform(dims: &ToyDims) -> Self {
        let (v, t, s) = (dims.v_speech, dims.text_symbols(), dims.n_speakers);
        Self {
            v_speech: v,
            text_symbols: t,
            n_speakers: s,
            params: vec![DenseArray::zeros(&[v + 1, v]), DenseArray::zeros(&[t, s, v])],
        }
    }

    pub fn random(dims: &ToyDims, scale: f64, rng: &mut RngStream) -> Self {
        let mut m = Self::uniform(dims);
        for p in &mut m.params {
            *p = DenseArray::randn(p.shape(), scale, rng);
        }
        m
    }

    /// The maximum-likelihood model of a channel that emits the right token
    /// with probability `1 - noise` and any other token uniformly otherwise.
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
                let row = m.cond_row_mut(w, s);
                row.iter_mut().for_each(|x| *x = miss);
                row[target] = hit;
            }
        }
        Ok(m)
    }

    /// Rebuilds a model from its parameter arrays (shapes are checked).
    pub fn from_params(params: Vec<DenseArray>) -> Result<Self> {
        let [prev, cond] = params.as_slice() else {
            return Err(Error::Checkpoint("AR model needs 2 arrays".into()));
        };
        let (ps, cs) = (prev.shape(), cond.shape());
        if ps.len() != 2 || cs.len() != 3 || ps[1] != cs[2] || ps[0] != ps[1] + 1 {
            return Err(Error::Checkpoint(format!("inconsistent AR shapes {ps:?} {cs:?}")));
        }
        Ok(Self {
            v_speech: ps[1],
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

    pub fn v_speech(&self) -> usize {
        self.v_speech
    }

    fn cond_row_mut(&mut self, w: usize, s: usize) -> &mut [f64] {
        let v = self.v_speech;
        let off = (w * self.n_speakers + s) * v;
        &mut self.params[COND].data_mut()[off..off + v]
    }

    pub(crate) fn check_prompt(&self, prompt: &ToyPrompt) -> Result<()> {
        if prompt.text.is_empty() {
            return Err(Error::contract("prompt text is empty"));
        }
        if prompt.speaker as usize >= self.n_speakers {
            return Err(Error::contract(format!("speaker {} out of range", prompt.speaker)));
        }
        if let Some(w) = prompt.text.iter().find(|&&w| w as usize >= self.text_symbols) {
            return Err(Error::contract(format!("word id {w} outside vocabulary")));
        }
        Ok(())
    }

    /// Next-token logits given the previous token (`None` at the first step).
    pub fn logits(&self, prev: Option<Token>, word: u32, speaker: u32) -> Vec<f64> {
        let v = self.v_speech;
        let prev_row = prev.map_or(v, |t| t as usize);
        let p = &self.params[PREV].data()[prev_row * v..(prev_row + 1) * v];
        let off = (word as usize * self.n_speakers + speaker as usize) * v;
        let c = &self.params[COND].data()[off..off + v];
        p.iter().zip(c).map(|(a, b)| a + b).collect()
    }

    fn check_tokens(&self, prompt: &ToyPrompt, tokens: &[Token]) -> Result<()> {
        self.check_prompt(prompt)?;
        if tokens.len() != prompt.text.len() {
            return Err(Error::contract(format!(
                "{} speech tokens for {} text symbols",
                tokens.len(),
                prompt.text.len()
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= self.v_speech) {
            return Err(Error::contract(format!("speech token {t} outside vocabulary")));
        }
        Ok(())
    }

    /// Adds `scale * d log p(tokens | prompt) / d params` into `grads`.
    pub fn accumulate_logprob_grad(
        &self,
        prompt: &ToyPrompt,
        tokens: &[Token],
        scale: f64,
        grads: &mut [DenseArray],
    ) -> Result<()> {
        self.check_tokens(prompt, tokens)?;
        let v = self.v_speech;
        let mut prev = None;
        for (&w, &t) in prompt.text.iter().zip(tokens) {
            let probs = softmax_slice(&self.logits(prev, w, prompt.speaker))?;
            let prev_row = prev.map_or(v, |p: Token| p as usize);
            let off = (w as usize * self.n_speakers + prompt.speaker as usize) * v;
            for (k, p) in probs.iter().enumerate() {
                let d = scale * (f64::from(k == t as usize) - p);
                grads[PREV].data_mut()[prev_row * v + k] += d;
                grads[COND].data_mut()[off + k] += d;
            }
            prev = Some(t);
        }
        Ok(())
    }
}

/// Total and per-token log-probability of `tokens` given `prompt`. The toy
/// domain aligns one speech token with each text symbol.
pub fn ar_logprob(model: &ToyArModel, prompt: &ToyPrompt, tokens: &[Token]) -> Result<(f64, Vec<f64>)> {
    model.check_tokens(prompt, tokens)?;
    let mut prev = None;
    let mut per = Vec::with_capacity(tokens.len());
    for (&w, &t) in prompt.text.iter().zip(tokens) {
        let lp = log_softmax_slice(&model.logits(prev, w, prompt.speaker))?;
        per.push(lp[t as usize]);
        prev = Some(t);
    }
    Ok((per.iter().sum(), per))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices kept by top-k then top-p truncation of `probs`, in descending
/// probability order (ties by lower index).
pub(crate) fn truncated_support(probs: &[f64], top_k: usize, top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(top_k.min(probs.len()));
    let kept: f64 = order.iter().map(|&i| probs[i]).sum();
    let mut cum = 0.0;
    let mut cut = order.len();
    for (n, &i) in order.iter().enumerate() {
        cum += probs[i];
        if cum >= top_p * kept - 1e-15 {
            cut = n + 1;
            break;
        }
    }
    order.truncate(cut);
    order
}

/// Samples a token sequence with temperature, top-k and top-p truncation.
pub fn ar_sample(
    model: &ToyArModel,
    prompt: &ToyPrompt,
    temperature: f64,
    top_k: usize,
    top_p: f64,
    rng: &mut RngStream,
) -> Result<SpeechSample> {
    model.check_prompt(prompt)?;
    if top_k == 0 {
        return Err(Error::contract("top_k must be positive"));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::contract("top_p must lie in (0, 1]"));
    }
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(Error::contract("temperature must be non-negative"));
    }
    let greedy = temperature < ARGMAX_TEMPERATURE || top_k == 1;
    let mut prev = None;
    let mut tokens = Vec::with_capacity(prompt.text.len());
    for &w in &prompt.text {
        let logits = model.logits(prev, w, prompt.speaker);
        let t = if greedy {
            argmax(&logits)
        } else {
            let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
            let probs = softmax_slice(&scaled)?;
            let support = truncated_support(&probs, top_k, top_p);
            let weights: Vec<f64> = support.iter().map(|&i| probs[i]).collect();
            let pick = rng
                .categorical(&weights)
                .ok_or_else(|| Error::Sampling("empty truncated support".into()))?;
            support[pick]
        };
        tokens.push(t as Token);
        prev = Some(t as Token);
    }
    Ok(SpeechSample::tokens(
        tokens,
        SamplingHyper::Ar {
            temperature,
            top_k,
            top_p,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;
    use crate::toymodels::{Language, TextLanguage};

    fn small_dims() -> ToyDims {
        ToyDims {
            v_text: 2,
            v_speech: 4,
            n_speakers: 2,
            hidden: 4,
        }
    }

    fn prompt(text: Vec<u32>, speaker: u32) -> ToyPrompt {
        ToyPrompt {
            text,
            speaker,
            text_language: TextLanguage::Mixed,
            speech_language: if speaker == 0 { Language::L1 } else { Language::L2 },
        }
    }

    #[test]
    fn uniform_model_logprob() {
        let m = ToyArModel::uniform(&ToyDims::default());
        let (total, per) = ar_logprob(&m, &prompt(vec![1, 2, 3], 0), &[5, 6, 7]).unwrap();
        assert!((total + 3.0 * 64f64.ln()).abs() < 1e-12);
        assert_eq!(per.len(), 3);
    }

    #[test]
    fn logprob_matches_enumerated_chain() {
        let dims = small_dims();
        let mut rng = RngStream::new(3, 0);
        let m = ToyArModel::random(&dims, 1.0, &mut rng);
        let p = prompt(vec![0, 2, 1], 1);
        // Enumerate all 4^3 sequences with an explicit per-step softmax.
        let mut total_mass = 0.0;
        for a in 0..4u32 {
            for b in 0..4u32 {
                for c in 0..4u32 {
                    let seq = [a, b, c];
                    let mut lp = 0.0;
                    let mut prev = None;
                    for (i, &t) in seq.iter().enumerate() {
                        let l = m.logits(prev, p.text[i], 1);
                        let z: f64 = l.iter().map(|x| x.exp()).sum();
                        lp += (l[t as usize].exp() / z).ln();
                        prev = Some(t);
                    }
                    let (got, per) = ar_logprob(&m, &p, &seq).unwrap();
                    assert!((got - lp).abs() < 1e-12);
                    let prod: f64 = per.iter().map(|x| x.exp()).product();
                    assert!((prod - got.exp()).abs() < 1e-12);
                    total_mass += lp.exp();
                }
            }
        }
        assert!((total_mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_sequence_has_highest_logprob() {
        // With a context-free previous-token table the per-step argmax is the
        // global maximum, so enumeration must never beat it.
        let dims = small_dims();
        let mut rng = RngStream::new(4, 0);
        let mut m = ToyArModel::random(&dims, 1.0, &mut rng);
        m.params_mut()[PREV].fill(0.0);
        let p = prompt(vec![1, 0, 1], 0);
        let greedy = ar_sample(&m, &p, 0.0, 20, 1.0, &mut rng).unwrap();
        let (best, _) = ar_logprob(&m, &p, greedy.as_tokens().unwrap()).unwrap();
        for code in 0..64u32 {
            let seq = [code % 4, (code / 4) % 4, code / 16];
            assert!(ar_logprob(&m, &p, &seq).unwrap().0 <= best + 1e-15);
        }
    }

    #[test]
    fn top_k_one_is_argmax() {
        let dims = ToyDims::default();
        let mut rng = RngStream::new(9, 0);
        let m = ToyArModel::random(&dims, 2.0, &mut rng);
        let p = prompt(vec![1, 2, 3, 4, 5], 0);
        let greedy = ar_sample(&m, &p, 0.0, 20, 1.0, &mut rng).unwrap();
        for temp in [0.4, 1.0, 5.0] {
            let s = ar_sample(&m, &p, temp, 1, 1.0, &mut rng).unwrap();
            assert_eq!(s.as_tokens(), greedy.as_tokens());
        }
        assert!(ar_sample(&m, &p, 1.0, 0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn samples_stay_inside_truncated_support() {
        let dims = ToyDims::default();
        let mut rng = RngStream::new(10, 0);
        let m = ToyArModel::random(&dims, 1.5, &mut rng);
        let p = prompt(vec![3, 9, 27, 2], 1);
        for _ in 0..200 {
            let s = ar_sample(&m, &p, 1.2, 5, 0.7, &mut rng).unwrap();
            let toks = s.as_tokens().unwrap();
            let mut prev = None;
            for (i, &t) in toks.iter().enumerate() {
                let l: Vec<f64> = m.logits(prev, p.text[i], 1).iter().map(|x| x / 1.2).collect();
                let probs = softmax_slice(&l).unwrap();
                let support = truncated_support(&probs, 5, 0.7);
                assert!(support.contains(&(t as usize)));
                prev = Some(t);
            }
        }
    }

    #[test]
    fn logprob_gradient_matches_finite_differences() {
        let dims = small_dims();
        let mut rng = RngStream::new(12, 0);
        let m = ToyArModel::random(&dims, 0.5, &mut rng);
        let p = prompt(vec![0, 1, 2], 1);
        let toks = [1, 3, 0];
        let mut grads: Vec<DenseArray> = m.params().iter().map(|a| DenseArray::zeros(a.shape())).collect();
        m.accumulate_logprob_grad(&p, &toks, 1.0, &mut grads).unwrap();
        let fd = finite_diff_grad(
            |params| {
                let mm = ToyArModel::from_params(params.to_vec()).unwrap();
                ar_logprob(&mm, &p, &toks).unwrap().0
            },
            m.params(),
            1e-5,
        )
        .unwrap();
        let err = crate::numerics::max_relative_error(&grads, &fd, 1e-6);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let m = ToyArModel::uniform(&ToyDims::default());
        assert!(ar_logprob(&m, &prompt(vec![1, 2], 0), &[1]).is_err());
    }

    #[test]
    fn channel_model_prefers_codebook_tokens() {
        let ch = ChannelSpec::new(ToyDims::default(), 1).unwrap();
        let m = ToyArModel::from_channel(&ch, 0.2).unwrap();
        let p = prompt(vec![4, 8], 3);
        let s = ar_sample(&m, &p, 0.0, 20, 1.0, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(
            s.as_tokens().unwrap(),
            &[ch.token_of(4, 3).unwrap(), ch.token_of(8, 3).unwrap()]
        );
    }
}
