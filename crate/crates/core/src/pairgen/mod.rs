//! Preference-pair construction from WER rankings.
//!
//! - intra pairs: best and worst of five samples from one model;
//! - inter pairs: three cross-model comparisons between the best/worst
//!   samples of two models (never worst against worst);
//! - perturbed pairs: clean-prompt sample against a sample generated from a
//!   deliberately corrupted prompt, both scored against the clean text.
//!
//! Work is split per prompt, each prompt drawing from its own forked
//! [`RngStream`], and merged in prompt order so results do not depend on
//! thread scheduling.

mod arena;
mod perturb;
mod wer;

pub use arena::{arena, ArenaEntry, ArenaReport};
pub use perturb::{
    perturb_pronunciation, perturb_punctuation, ConfusionTable, PronunciationPerturber, PunctuationPerturber,
    TextPerturber,
};
pub use wer::{edit_distance, wer};

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::toymodels::{transcribe, ChannelSpec, SamplingHyper, SpeechSample, ToyModel, ToyPrompt};

pub const DEFAULT_GAP_THRESHOLD: f64 = 6.0;
pub const SAMPLES_PER_PROMPT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Intra,
    Inter,
    Perturbed,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Intra => "intra",
            Provenance::Inter => "inter",
            Provenance::Perturbed => "perturbed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "intra" => Some(Provenance::Intra),
            "inter" => Some(Provenance::Inter),
            "perturbed" => Some(Provenance::Perturbed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub prompt: ToyPrompt,
    pub winner: SpeechSample,
    pub loser: SpeechSample,
    pub wer_w: f64,
    pub wer_l: f64,
    pub provenance: Provenance,
    pub source_models: Vec<String>,
}

/// All scored samples of one model on one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSamples {
    /// Position of the prompt in the input list.
    pub index: usize,
    pub prompt: ToyPrompt,
    pub samples: Vec<SpeechSample>,
    pub wers: Vec<f64>,
}

impl PromptSamples {
    /// Lowest WER, ties to the lowest schedule index.
    pub fn best(&self) -> usize {
        let mut b = 0;
        for (i, &w) in self.wers.iter().enumerate() {
            if w < self.wers[b] {
                b = i;
            }
        }
        b
    }

    /// Highest WER, ties to the lowest schedule index.
    pub fn worst(&self) -> usize {
        let mut b = 0;
        for (i, &w) in self.wers.iter().enumerate() {
            if w > self.wers[b] {
                b = i;
            }
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSamples {
    pub model_id: String,
    pub prompts: Vec<PromptSamples>,
}

/// Samples once per hyperparameter on every prompt, transcribes each sample
/// through `channel` and scores it against the prompt text. Prompts whose
/// sampling fails are skipped with a warning.
pub fn sample_prompts(
    model: &ToyModel,
    model_id: &str,
    prompts: &[ToyPrompt],
    schedule: &[SamplingHyper],
    channel: &ChannelSpec,
    rng: &RngStream,
) -> ModelSamples {
    let dims = *channel.dims();
    let scored: Vec<Option<PromptSamples>> = prompts
        .par_iter()
        .enumerate()
        .map(|(index, prompt)| {
            let mut r = rng.fork(index as u64);
            let reference = prompt.words(&dims);
            let mut samples = Vec::with_capacity(schedule.len());
            let mut wers = Vec::with_capacity(schedule.len());
            for &hyper in schedule {
                let scored = model.sample(prompt, hyper, &mut r).and_then(|s| {
                    let hyp = transcribe(&s, prompt.speaker, channel, &mut r);
                    Ok((wer(&reference, &hyp)?, s))
                });
                match scored {
                    Ok((w, s)) => {
                        wers.push(w);
                        samples.push(s);
                    }
                    Err(e) => {
                        log::warn!("{model_id}: prompt {index} skipped: {e}");
                        return None;
                    }
                }
            }
            Some(PromptSamples {
                index,
                prompt: prompt.clone(),
                samples,
                wers,
            })
        })
        .collect();
    ModelSamples {
        model_id: model_id.to_string(),
        prompts: scored.into_iter().flatten().collect(),
    }
}

/// Best-versus-worst pairs, kept when the WER gap reaches `gap_threshold`.
pub fn intra_pairs_from(samples: &ModelSamples, gap_threshold: f64) -> Vec<PreferencePair> {
    samples
        .prompts
        .iter()
        .filter_map(|p| {
            let (b, w) = (p.best(), p.worst());
            let (wer_w, wer_l) = (p.wers[b], p.wers[w]);
            (wer_l - wer_w >= gap_threshold).then(|| PreferencePair {
                prompt: p.prompt.clone(),
                winner: p.samples[b].clone(),
                loser: p.samples[w].clone(),
                wer_w,
                wer_l,
                provenance: Provenance::Intra,
                source_models: vec![samples.model_id.clone()],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntraOutput {
    pub samples: ModelSamples,
    pub pairs: Vec<PreferencePair>,
}

/// Five samples per prompt, one per schedule entry; the lowest- and
/// highest-WER samples form a pair when their gap reaches the threshold.
pub fn build_intra_pairs(
    model: &ToyModel,
    model_id: &str,
    prompts: &[ToyPrompt],
    schedule: &[SamplingHyper],
    channel: &ChannelSpec,
    gap_threshold: f64,
    rng: &RngStream,
) -> Result<IntraOutput> {
    if schedule.len() != SAMPLES_PER_PROMPT {
        return Err(Error::contract(format!(
            "sampling schedule needs {SAMPLES_PER_PROMPT} entries, got {}",
            schedule.len()
        )));
    }
    check_gap(gap_threshold)?;
    let samples = sample_prompts(model, model_id, prompts, schedule, channel, rng);
    let pairs = intra_pairs_from(&samples, gap_threshold);
    Ok(IntraOutput { samples, pairs })
}

fn check_gap(gap: f64) -> Result<()> {
    if !(gap >= 0.0 && gap.is_finite()) {
        return Err(Error::contract("gap threshold must be a non-negative number"));
    }
    Ok(())
}

/// Which of a model's two selected samples took part in a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Best,
    Worst,
}

/// One cross-model comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub prompt_index: usize,
    pub side_a: Side,
    pub side_b: Side,
    pub wer_a: f64,
    pub wer_b: f64,
}

impl Comparison {
    /// Whether the comparison yields a pair, and which model won it
    /// (`true` for A). Equal WERs never clear a positive threshold; with a
    /// zero threshold they go to A.
    pub fn outcome(&self, gap_threshold: f64) -> Option<bool> {
        let gap = (self.wer_a - self.wer_b).abs();
        (gap >= gap_threshold).then_some(self.wer_a <= self.wer_b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterOutput {
    pub pairs: Vec<PreferencePair>,
    pub comparisons: Vec<Comparison>,
    /// Number of worst-against-worst comparisons made; always zero.
    pub worst_worst_comparisons: usize,
    /// Prompts present in only one input.
    pub unmatched_prompts: usize,
}

/// The three comparison shapes used per prompt.
pub const INTER_COMPARISONS: [(Side, Side); 3] = [(Side::Best, Side::Best), (Side::Best, Side::Worst), (Side::Worst, Side::Best)];

/// Cross-model pairs. Best/worst selection is taken from each model's raw
/// samples whether or not its own intra pair survived the gap filter.
pub fn build_inter_pairs(a: &ModelSamples, b: &ModelSamples, gap_threshold: f64) -> Result<InterOutput> {
    check_gap(gap_threshold)?;
    if a.model_id == b.model_id {
        return Err(Error::contract("inter pairs need two distinct models"));
    }
    let by_prompt: HashMap<(usize, &ToyPrompt), &PromptSamples> =
        b.prompts.iter().map(|p| ((p.index, &p.prompt), p)).collect();
    let mut out = InterOutput {
        pairs: Vec::new(),
        comparisons: Vec::new(),
        worst_worst_comparisons: 0,
        unmatched_prompts: 0,
    };
    let mut matched = 0;
    for pa in &a.prompts {
        let Some(pb) = by_prompt.get(&(pa.index, &pa.prompt)) else {
            out.unmatched_prompts += 1;
            continue;
        };
        matched += 1;
        for (sa, sb) in INTER_COMPARISONS {
            if sa == Side::Worst && sb == Side::Worst {
                out.worst_worst_comparisons += 1;
            }
            let ia = pick(pa, sa);
            let ib = pick(pb, sb);
            let c = Comparison {
                prompt_index: pa.index,
                side_a: sa,
                side_b: sb,
                wer_a: pa.wers[ia],
                wer_b: pb.wers[ib],
            };
            out.comparisons.push(c);
            if let Some(a_wins) = c.outcome(gap_threshold) {
                let (w, l, ww, wl, ids) = if a_wins {
                    (&pa.samples[ia], &pb.samples[ib], c.wer_a, c.wer_b, [&a.model_id, &b.model_id])
                } else {
                    (&pb.samples[ib], &pa.samples[ia], c.wer_b, c.wer_a, [&b.model_id, &a.model_id])
                };
                out.pairs.push(PreferencePair {
                    prompt: pa.prompt.clone(),
                    winner: w.clone(),
                    loser: l.clone(),
                    wer_w: ww,
                    wer_l: wl,
                    provenance: Provenance::Inter,
                    source_models: ids.iter().map(|s| s.to_string()).collect(),
                });
            }
        }
    }
    out.unmatched_prompts += b.prompts.len() - matched;
    Ok(out)
}

fn pick(p: &PromptSamples, side: Side) -> usize {
    match side {
        Side::Best => p.best(),
        Side::Worst => p.worst(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedOutput {
    pub pairs: Vec<PreferencePair>,
    /// Prompts the perturber left unchanged; no pair is built for them.
    pub degenerate: usize,
}

/// Clean-prompt sample (winner) against a perturbed-prompt sample (loser),
/// both scored against the clean text. No gap filter is applied. Callers pass
/// regular-text prompts only.
pub fn build_perturbed_pairs(
    model: &ToyModel,
    model_id: &str,
    prompts: &[ToyPrompt],
    perturber: &dyn TextPerturber,
    hyper: SamplingHyper,
    channel: &ChannelSpec,
    rng: &RngStream,
) -> PerturbedOutput {
    let dims = *channel.dims();
    let results: Vec<Option<PreferencePair>> = prompts
        .par_iter()
        .enumerate()
        .map(|(index, prompt)| {
            let mut r = rng.fork(index as u64);
            let text = perturber.perturb(&prompt.text, &mut r);
            if text == prompt.text {
                return None;
            }
            let noisy = ToyPrompt {
                text,
                ..prompt.clone()
            };
            let reference = prompt.words(&dims);
            let run = || -> Result<PreferencePair> {
                noisy.validate(&dims)?;
                let mut r = r.clone();
                let w = model.sample(prompt, hyper, &mut r)?;
                let l = model.sample(&noisy, hyper, &mut r)?;
                let wer_w = wer(&reference, &transcribe(&w, prompt.speaker, channel, &mut r))?;
                let wer_l = wer(&reference, &transcribe(&l, prompt.speaker, channel, &mut r))?;
                Ok(PreferencePair {
                    prompt: prompt.clone(),
                    winner: w,
                    loser: l,
                    wer_w,
                    wer_l,
                    provenance: Provenance::Perturbed,
                    source_models: vec![model_id.to_string()],
                })
            };
            match run() {
                Ok(p) => Some(p),
                Err(e) => {
                    log::warn!("{model_id}: perturbed prompt {index} skipped: {e}");
                    None
                }
            }
        })
        .collect();
    let degenerate = results.iter().filter(|r| r.is_none()).count();
    PerturbedOutput {
        pairs: results.into_iter().flatten().collect(),
        degenerate,
    }
}
