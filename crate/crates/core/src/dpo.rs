//! Preference objectives and their gradients.
//!
//! Every DPO variant reduces to `loss = -ln σ(margin)` where the margin is a
//! β-scaled difference of winner and loser log-likelihood ratios between the
//! trained model and a frozen reference:
//!
//! - autoregressive: exact sequence log-probabilities;
//! - flow matching: the squared velocity error stands in for a negative
//!   Gaussian log-likelihood, so `margin = -β (Δ_w - Δ_l)` with
//!   `Δ = ||v_θ - u||² - ||v_ref - u||²` and `u = y1 - y0`;
//! - masked generative: log-probabilities summed over masked positions.
//!
//! Gradients are written out by hand and checked against central finite
//! differences in the tests.

use crate::error::{Error, Result};
use crate::numerics::{log_sigmoid, sigmoid, DenseArray, RngStream};
use crate::toymodels::{
    ar_logprob, fm_velocity, interpolate, standard_normal_frames, Frame, Paradigm, SpeechPayload, SpeechSample, Token, ToyArModel, ToyFmModel,
    ToyMgmModel, ToyModel, ToyPrompt,
};

pub const DEFAULT_BETA_AR: f64 = 0.1;
pub const DEFAULT_BETA_FM: f64 = 1000.0;
pub const DEFAULT_BETA_MGM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpoConfig {
    pub beta: f64,
    pub paradigm: Paradigm,
}

impl DpoConfig {
    pub fn new(beta: f64, paradigm: Paradigm) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::contract("beta must be positive"));
        }
        Ok(Self { beta, paradigm })
    }

    pub fn default_for(paradigm: Paradigm) -> Self {
        Self {
            beta: default_beta(paradigm),
            paradigm,
        }
    }
}

pub fn default_beta(paradigm: Paradigm) -> f64 {
    match paradigm {
        Paradigm::Ar => DEFAULT_BETA_AR,
        Paradigm::Fm => DEFAULT_BETA_FM,
        Paradigm::Mgm => DEFAULT_BETA_MGM,
    }
}

/// Loss value, the pre-sigmoid margin, and gradients. For scalar objectives
/// the gradients are taken with respect to the scalar inputs in argument
/// order; for model objectives they match the model's parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub margin: f64,
    pub grads: Vec<DenseArray>,
}

fn scalar(v: f64) -> DenseArray {
    DenseArray::from_vec(vec![v]).expect("finite scalar")
}

/// Bradley-Terry negative log-likelihood `-ln σ(r_w - r_l)`.
pub fn bt_reward_loss(r_w: f64, r_l: f64) -> LossReport {
    let margin = r_w - r_l;
    let s = sigmoid(-margin);
    LossReport {
        loss: -log_sigmoid(margin),
        margin,
        grads: vec![scalar(-s), scalar(s)],
    }
}

/// DPO loss from the four sequence log-probabilities. Gradients are with
/// respect to `logp_w` and `logp_l` of the trained policy.
pub fn dpo_ar_loss(logp_w: f64, logp_ref_w: f64, logp_l: f64, logp_ref_l: f64, beta: f64) -> LossReport {
    let margin = beta * ((logp_w - logp_ref_w) - (logp_l - logp_ref_l));
    let s = sigmoid(-margin);
    LossReport {
        loss: -log_sigmoid(margin),
        margin,
        grads: vec![scalar(-beta * s), scalar(beta * s)],
    }
}

fn zero_like(params: &[DenseArray]) -> Vec<DenseArray> {
    params.iter().map(|p| DenseArray::zeros(p.shape())).collect()
}

/// [`dpo_ar_loss`] evaluated on a token pair, with gradients in the model's
/// parameters.
pub fn dpo_ar_pair_loss(
    model: &ToyArModel,
    reference: &ToyArModel,
    prompt: &ToyPrompt,
    y_w: &[Token],
    y_l: &[Token],
    beta: f64,
) -> Result<LossReport> {
    let (lw, _) = ar_logprob(model, prompt, y_w)?;
    let (ll, _) = ar_logprob(model, prompt, y_l)?;
    let (rw, _) = ar_logprob(reference, prompt, y_w)?;
    let (rl, _) = ar_logprob(reference, prompt, y_l)?;
    let scalar = dpo_ar_loss(lw, rw, ll, rl, beta);
    let coef = beta * sigmoid(-scalar.margin);
    let mut grads = zero_like(model.params());
    model.accumulate_logprob_grad(prompt, y_w, -coef, &mut grads)?;
    model.accumulate_logprob_grad(prompt, y_l, coef, &mut grads)?;
    Ok(LossReport {
        loss: scalar.loss,
        margin: scalar.margin,
        grads,
    })
}

fn check_frames(y1: &[Frame], y0: &[Frame]) -> Result<()> {
    if y1.len() != y0.len() || y1.is_empty() {
        return Err(Error::Shape {
            expected: vec![y1.len(), 2],
            actual: vec![y0.len(), 2],
        });
    }
    Ok(())
}

fn target_velocity(y1: &[Frame], y0: &[Frame]) -> Vec<Frame> {
    y1.iter().zip(y0).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect()
}

fn sq_err(v: &[Frame], u: &[Frame]) -> f64 {
    v.iter()
        .zip(u)
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum()
}

/// Flow-matching regression loss `||v(y_t, t) - (y1 - y0)||²` summed over
/// frames. The margin is unused and reported as 0.
pub fn otfm_loss(model: &ToyFmModel, prompt: &ToyPrompt, y1: &[Frame], y0: &[Frame], t: f64) -> Result<LossReport> {
    check_frames(y1, y0)?;
    let u = target_velocity(y1, y0);
    let y_t = interpolate(y0, y1, t);
    let v = fm_velocity(model, &y_t, t, prompt)?;
    let dv: Vec<Frame> = v.iter().zip(&u).map(|(a, b)| [2.0 * (a[0] - b[0]), 2.0 * (a[1] - b[1])]).collect();
    let mut grads = zero_like(model.params());
    model.accumulate_velocity_grad(&y_t, t, prompt, &dv, &mut grads)?;
    Ok(LossReport {
        loss: sq_err(&v, &u),
        margin: 0.0,
        grads,
    })
}

/// `Δ = ||v_θ - u||² - ||v_ref - u||²` at the shared interpolation point.
fn velocity_error_gap(
    model: &ToyFmModel,
    reference: &ToyFmModel,
    prompt: &ToyPrompt,
    y1: &[Frame],
    y0: &[Frame],
    t: f64,
) -> Result<(f64, Vec<Frame>, Vec<Frame>, Vec<Frame>)> {
    check_frames(y1, y0)?;
    let u = target_velocity(y1, y0);
    let y_t = interpolate(y0, y1, t);
    let v = fm_velocity(model, &y_t, t, prompt)?;
    let v_ref = fm_velocity(reference, &y_t, t, prompt)?;
    Ok((sq_err(&v, &u) - sq_err(&v_ref, &u), y_t, v, u))
}

/// Log-likelihood ratio `ln p_θ(y1 | y_t) - ln p_ref(y1 | y_t)` when the flow
/// loss is read as an isotropic Gaussian log-density; equals
/// `-(||v_θ - u||² - ||v_ref - u||²)`.
pub fn fm_log_ratio(
    model: &ToyFmModel,
    reference: &ToyFmModel,
    prompt: &ToyPrompt,
    y1: &[Frame],
    y0: &[Frame],
    t: f64,
) -> Result<f64> {
    Ok(-velocity_error_gap(model, reference, prompt, y1, y0, t)?.0)
}

/// One flow-matching preference pair with its noise draws and shared time.
#[derive(Debug, Clone, PartialEq)]
pub struct FmPairDraw<'a> {
    pub prompt: &'a ToyPrompt,
    pub y1_w: &'a [Frame],
    pub y1_l: &'a [Frame],
    pub y0_w: &'a [Frame],
    pub y0_l: &'a [Frame],
    pub t: f64,
}

/// Flow-matching DPO computed in velocity space, with gradients.
pub fn dpo_fm_loss(
    model: &ToyFmModel,
    reference: &ToyFmModel,
    pair: &FmPairDraw<'_>,
    beta: f64,
) -> Result<LossReport> {
    let (dw, yt_w, v_w, u_w) = velocity_error_gap(model, reference, pair.prompt, pair.y1_w, pair.y0_w, pair.t)?;
    let (dl, yt_l, v_l, u_l) = velocity_error_gap(model, reference, pair.prompt, pair.y1_l, pair.y0_l, pair.t)?;
    let margin = -beta * (dw - dl);
    let c = 2.0 * beta * sigmoid(-margin);
    let dv_w: Vec<Frame> = v_w.iter().zip(&u_w).map(|(a, b)| [c * (a[0] - b[0]), c * (a[1] - b[1])]).collect();
    let dv_l: Vec<Frame> = v_l.iter().zip(&u_l).map(|(a, b)| [-c * (a[0] - b[0]), -c * (a[1] - b[1])]).collect();
    let mut grads = zero_like(model.params());
    model.accumulate_velocity_grad(&yt_w, pair.t, pair.prompt, &dv_w, &mut grads)?;
    model.accumulate_velocity_grad(&yt_l, pair.t, pair.prompt, &dv_l, &mut grads)?;
    Ok(LossReport {
        loss: -log_sigmoid(margin),
        margin,
        grads,
    })
}

/// The same objective assembled from per-sample log-likelihood ratios:
/// `margin = β (ratio_w - ratio_l)`. Returns `(loss, margin)`.
pub fn dpo_fm_loss_via_log_ratio(
    model: &ToyFmModel,
    reference: &ToyFmModel,
    pair: &FmPairDraw<'_>,
    beta: f64,
) -> Result<(f64, f64)> {
    let rw = fm_log_ratio(model, reference, pair.prompt, pair.y1_w, pair.y0_w, pair.t)?;
    let rl = fm_log_ratio(model, reference, pair.prompt, pair.y1_l, pair.y0_l, pair.t)?;
    let margin = beta * (rw - rl);
    Ok((-log_sigmoid(margin), margin))
}

/// Draws the shared time and independent noise for a flow pair.
pub fn draw_fm_noise(len_w: usize, len_l: usize, rng: &mut RngStream) -> (f64, Vec<Frame>, Vec<Frame>) {
    let t = rng.uniform();
    let y0_w = standard_normal_frames(len_w, rng);
    let y0_l = standard_normal_frames(len_l, rng);
    (t, y0_w, y0_l)
}

/// Masked cross-entropy `-sum_{mask_i} ln p(y_i | y_t, prompt)`.
pub fn mgm_masked_ce(model: &ToyMgmModel, prompt: &ToyPrompt, y: &[Token], mask: &[bool]) -> Result<LossReport> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::contract("masked cross-entropy needs at least one masked position"));
    }
    let lp = model.masked_logprob(prompt, y, mask)?;
    let mut grads = zero_like(model.params());
    model.accumulate_masked_logprob_grad(prompt, y, mask, -1.0, &mut grads)?;
    Ok(LossReport {
        loss: -lp,
        margin: 0.0,
        grads,
    })
}

/// Mask with each position hidden independently with probability `fraction`
/// (drawn from `U(0, 1)` when `None`); redrawn until at least one position is
/// masked.
pub fn draw_mask(len: usize, fraction: Option<f64>, rng: &mut RngStream) -> Result<Vec<bool>> {
    if len == 0 {
        return Err(Error::contract("cannot mask an empty sequence"));
    }
    if let Some(f) = fraction {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::contract("mask fraction must lie in (0, 1]"));
        }
    }
    loop {
        let p = fraction.unwrap_or_else(|| rng.uniform());
        let mask: Vec<bool> = (0..len).map(|_| rng.bernoulli(p)).collect();
        if mask.iter().any(|&m| m) {
            return Ok(mask);
        }
    }
}

/// Masked-model DPO for fixed masks.
#[allow(clippy::too_many_arguments)]
pub fn dpo_mgm_loss_masked(
    model: &ToyMgmModel,
    reference: &ToyMgmModel,
    prompt: &ToyPrompt,
    y_w: &[Token],
    y_l: &[Token],
    mask_w: &[bool],
    mask_l: &[bool],
    beta: f64,
) -> Result<LossReport> {
    let lw = model.masked_logprob(prompt, y_w, mask_w)?;
    let ll = model.masked_logprob(prompt, y_l, mask_l)?;
    let rw = reference.masked_logprob(prompt, y_w, mask_w)?;
    let rl = reference.masked_logprob(prompt, y_l, mask_l)?;
    let margin = beta * ((lw - rw) - (ll - rl));
    let coef = beta * sigmoid(-margin);
    let mut grads = zero_like(model.params());
    model.accumulate_masked_logprob_grad(prompt, y_w, mask_w, -coef, &mut grads)?;
    model.accumulate_masked_logprob_grad(prompt, y_l, mask_l, coef, &mut grads)?;
    Ok(LossReport {
        loss: -log_sigmoid(margin),
        margin,
        grads,
    })
}

/// Masked-model DPO with a freshly drawn mask. Equal-length sequences share
/// one mask realization; otherwise each gets its own.
#[allow(clippy::too_many_arguments)]
pub fn dpo_mgm_loss(
    model: &ToyMgmModel,
    reference: &ToyMgmModel,
    prompt: &ToyPrompt,
    y_w: &[Token],
    y_l: &[Token],
    beta: f64,
    mask_fraction: Option<f64>,
    rng: &mut RngStream,
) -> Result<LossReport> {
    let mask_w = draw_mask(y_w.len(), mask_fraction, rng)?;
    let mask_l = if y_l.len() == y_w.len() {
        mask_w.clone()
    } else {
        draw_mask(y_l.len(), mask_fraction, rng)?
    };
    dpo_mgm_loss_masked(model, reference, prompt, y_w, y_l, &mask_w, &mask_l, beta)
}

/// How to evaluate a likelihood ratio for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum LikelihoodProbe {
    /// Exact sequence likelihood (autoregressive models).
    Exact,
    /// Masked-position likelihood under a given mask.
    Masked(Vec<bool>),
    /// Flow likelihood at noise `y0` and time `t`.
    Flow { y0: Vec<Frame>, t: f64 },
}

/// `β ln(p_θ(y | x) / p_ref(y | x))`, the reward implied by a policy relative
/// to its reference. The per-prompt `β ln Z(x)` term is not included; it
/// cancels in every pairwise difference.
pub fn implicit_reward(
    model: &ToyModel,
    reference: &ToyModel,
    prompt: &ToyPrompt,
    y: &SpeechSample,
    beta: f64,
    probe: &LikelihoodProbe,
) -> Result<f64> {
    let ratio = match (model, reference, &y.payload, probe) {
        (ToyModel::Ar(m), ToyModel::Ar(r), SpeechPayload::Tokens(t), LikelihoodProbe::Exact) => {
            ar_logprob(m, prompt, t)?.0 - ar_logprob(r, prompt, t)?.0
        }
        (ToyModel::Mgm(m), ToyModel::Mgm(r), SpeechPayload::Tokens(t), LikelihoodProbe::Masked(mask)) => {
            m.masked_logprob(prompt, t, mask)? - r.masked_logprob(prompt, t, mask)?
        }
        (ToyModel::Fm(m), ToyModel::Fm(r), SpeechPayload::Frames(f), LikelihoodProbe::Flow { y0, t }) => {
            fm_log_ratio(m, r, prompt, f, y0, *t)?
        }
        _ => {
            return Err(Error::contract(
                "model, reference, sample and probe must belong to one paradigm",
            ))
        }
    };
    Ok(beta * ratio)
}

/// `p*(y) ∝ ref(y) exp(r(y) / β)` over a finite outcome set.
pub fn closed_form_policy(reference: &[f64], reward: &[f64], beta: f64) -> Result<Vec<f64>> {
    if reference.is_empty() || reference.len() != reward.len() {
        return Err(Error::contract("reference and reward must be non-empty and equal length"));
    }
    if reference.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::contract("reference must be strictly positive"));
    }
    if !(beta > 0.0) {
        return Err(Error::contract("beta must be positive"));
    }
    // Work in log space, shifted by the max, so large r/β cannot overflow.
    let logits: Vec<f64> = reference.iter().zip(reward).map(|(p, r)| p.ln() + r / beta).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// `β ln(policy / reference)` on a finite outcome set.
pub fn implicit_reward_finite(policy: &[f64], reference: &[f64], beta: f64) -> Vec<f64> {
    policy.iter().zip(reference).map(|(p, r)| beta * (p / r).ln()).collect()
}
