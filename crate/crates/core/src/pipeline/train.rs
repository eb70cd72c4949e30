use crate::dpo::{
    draw_fm_noise, draw_mask, dpo_ar_pair_loss, dpo_fm_loss, dpo_mgm_loss, mgm_masked_ce, otfm_loss, FmPairDraw,
    LossReport,
};
use crate::error::{Error, Result};
use crate::numerics::{adamw_step, lr_schedule, AdamW, DenseArray, OptimizerState, RngStream};
use crate::pairgen::PreferencePair;
use crate::toymodels::{ar_logprob, standard_normal_frames, SpeechPayload, SpeechSample, ToyModel, ToyPrompt};

use super::config::RunConfig;

const STREAM_TRAIN: u64 = 0x7A1;
const STREAM_MARGIN: u64 = 0x3A6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    pub fn mean_loss(&self) -> f64 {
        mean(self.steps.iter().map(|s| s.loss))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn paradigm_mismatch(what: &str) -> Error {
    Error::contract(format!("{what} does not match the configured paradigm"))
}

/// DPO loss and parameter gradients for one pair.
pub fn pair_loss(
    model: &ToyModel,
    reference: &ToyModel,
    pair: &PreferencePair,
    beta: f64,
    rng: &mut RngStream,
) -> Result<LossReport> {
    match (model, reference, &pair.winner.payload, &pair.loser.payload) {
        (ToyModel::Ar(m), ToyModel::Ar(r), SpeechPayload::Tokens(w), SpeechPayload::Tokens(l)) => {
            dpo_ar_pair_loss(m, r, &pair.prompt, w, l, beta)
        }
        (ToyModel::Mgm(m), ToyModel::Mgm(r), SpeechPayload::Tokens(w), SpeechPayload::Tokens(l)) => {
            dpo_mgm_loss(m, r, &pair.prompt, w, l, beta, None, rng)
        }
        (ToyModel::Fm(m), ToyModel::Fm(r), SpeechPayload::Frames(w), SpeechPayload::Frames(l)) => {
            let (t, y0_w, y0_l) = draw_fm_noise(w.len(), l.len(), rng);
            let draw = FmPairDraw {
                prompt: &pair.prompt,
                y1_w: w,
                y1_l: l,
                y0_w: &y0_w,
                y0_l: &y0_l,
                t,
            };
            dpo_fm_loss(m, r, &draw, beta)
        }
        _ => Err(paradigm_mismatch("pair sample kind or reference model")),
    }
}

/// Mean DPO margin over a dataset. Stochastic objectives use a fixed random
/// stream so successive calls are comparable.
pub fn mean_margin(model: &ToyModel, reference: &ToyModel, dataset: &[PreferencePair], beta: f64) -> Result<f64> {
    let rng = RngStream::new(0, STREAM_MARGIN);
    let mut total = 0.0;
    for (i, pair) in dataset.iter().enumerate() {
        total += pair_loss(model, reference, pair, beta, &mut rng.fork(i as u64))?.margin;
    }
    Ok(total / dataset.len().max(1) as f64)
}

fn average_into(acc: &mut [DenseArray], grads: &[DenseArray], scale: f64) -> Result<()> {
    for (a, g) in acc.iter_mut().zip(grads) {
        a.axpy(scale, g)?;
    }
    Ok(())
}

/// Shared minibatch loop: shuffles each epoch, averages per-example
/// gradients over the batch, and applies AdamW with the warmup/inverse
/// square root schedule.
fn run_minibatches<F>(model: &mut ToyModel, n: usize, config: &RunConfig, mut example: F) -> Result<TrainLog>
where
    F: FnMut(&ToyModel, usize, &mut RngStream) -> Result<LossReport>,
{
    config.validate()?;
    let mut rng = RngStream::new(config.seed, STREAM_TRAIN);
    let mut state = OptimizerState::new(AdamW::default(), model.params());
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0u64;
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let mut grads = model.zero_grads();
            let (mut loss, mut margin) = (0.0, 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut ex_rng = rng.fork(step << 32 | i as u64);
                let r = example(model, i, &mut ex_rng)?;
                average_into(&mut grads, &r.grads, scale)?;
                loss += r.loss * scale;
                margin += r.margin * scale;
            }
            let lr = lr_schedule(step, config.warmup, config.base_lr)?;
            adamw_step(model.params_mut(), &grads, &mut state, lr)?;
            log.steps.push(StepRecord { step, lr, loss, margin });
        }
    }
    Ok(log)
}

/// Preference optimization of `model` against the frozen `reference`.
pub fn train_dpo(
    model: &ToyModel,
    reference: &ToyModel,
    dataset: &[PreferencePair],
    config: &RunConfig,
) -> Result<(ToyModel, TrainLog)> {
    if dataset.is_empty() {
        return Err(Error::contract("DPO training needs at least one pair"));
    }
    if model.paradigm() != config.paradigm {
        return Err(paradigm_mismatch("model"));
    }
    if reference.paradigm() != config.paradigm {
        return Err(paradigm_mismatch("reference model"));
    }
    let mut trained = model.clone();
    let log = run_minibatches(&mut trained, dataset.len(), config, |m, i, rng| {
        pair_loss(m, reference, &dataset[i], config.beta, rng)
    })?;
    Ok((trained, log))
}

/// Loss and gradients of the likelihood objective on one positive sample:
/// negative log-likelihood (AR), masked cross-entropy (MGM) or the flow
/// regression loss (FM).
pub fn sft_loss(model: &ToyModel, prompt: &ToyPrompt, sample: &SpeechSample, rng: &mut RngStream) -> Result<LossReport> {
    match (model, &sample.payload) {
        (ToyModel::Ar(m), SpeechPayload::Tokens(t)) => {
            let (lp, _) = ar_logprob(m, prompt, t)?;
            let mut grads = model.zero_grads();
            m.accumulate_logprob_grad(prompt, t, -1.0, &mut grads)?;
            Ok(LossReport {
                loss: -lp,
                margin: 0.0,
                grads,
            })
        }
        (ToyModel::Mgm(m), SpeechPayload::Tokens(t)) => {
            let mask = draw_mask(t.len(), None, rng)?;
            mgm_masked_ce(m, prompt, t, &mask)
        }
        (ToyModel::Fm(m), SpeechPayload::Frames(f)) => {
            let t = rng.uniform();
            let y0 = standard_normal_frames(f.len(), rng);
            otfm_loss(m, prompt, f, &y0, t)
        }
        _ => Err(Error::contract("sample kind does not match the model")),
    }
}

/// Supervised fine-tuning on positive samples only.
pub fn train_sft(
    model: &ToyModel,
    positives: &[(ToyPrompt, SpeechSample)],
    config: &RunConfig,
) -> Result<(ToyModel, TrainLog)> {
    if positives.is_empty() {
        return Err(Error::contract("SFT needs at least one positive sample"));
    }
    if model.paradigm() != config.paradigm {
        return Err(paradigm_mismatch("model"));
    }
    let mut trained = model.clone();
    let log = run_minibatches(&mut trained, positives.len(), config, |m, i, rng| {
        sft_loss(m, &positives[i].0, &positives[i].1, rng)
    })?;
    Ok((trained, log))
}

/// Winner side of each pair, as SFT training data.
pub fn winners(pairs: &[PreferencePair]) -> Vec<(ToyPrompt, SpeechSample)> {
    pairs.iter().map(|p| (p.prompt.clone(), p.winner.clone())).collect()
}
