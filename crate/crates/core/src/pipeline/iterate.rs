use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::pairgen::build_intra_pairs;
use crate::toymodels::{default_eval_hyper, ChannelSpec, ToyModel, ToyPrompt};

use super::config::RunConfig;
use super::corpus::{EvalSet, PromptCorpus};
use super::eval::{evaluate_suite, SuiteReport};
use super::train::{train_dpo, TrainLog};

const STREAM_ROUNDS: u64 = 0x1735;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub pairs: usize,
    pub log: TrainLog,
    pub metrics: SuiteReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutput {
    /// `models[0]` is the base model; `models[k]` is the round-k model.
    pub models: Vec<ToyModel>,
    pub base_metrics: SuiteReport,
    pub rounds: Vec<RoundReport>,
    /// Set when a round produced no pairs and the loop stopped early.
    pub halted: Option<String>,
}

/// Prompts of the repeated and code-switching text types.
pub fn challenging_prompts(corpus: &PromptCorpus) -> Vec<ToyPrompt> {
    corpus.challenging().into_iter().map(|e| e.prompt.clone()).collect()
}

/// Round k samples fresh intra pairs from the round k-1 model on the
/// challenging prompts, then trains a new model with the round k-1 model as
/// the frozen reference.
pub fn iterate_alignment(
    base: &ToyModel,
    rounds: usize,
    corpus: &PromptCorpus,
    config: &RunConfig,
    channel: &ChannelSpec,
    suite: &[EvalSet],
) -> Result<IterationOutput> {
    if rounds == 0 {
        return Err(Error::contract("at least one alignment round is needed"));
    }
    let prompts = challenging_prompts(corpus);
    if prompts.is_empty() {
        return Err(Error::contract("the corpus has no repeated or code-switching prompts"));
    }
    let hyper = default_eval_hyper(config.paradigm);
    let schedule = config.sampling_schedule();
    let root = RngStream::new(config.seed, STREAM_ROUNDS);
    let mut out = IterationOutput {
        models: vec![base.clone()],
        base_metrics: evaluate_suite(base, suite, channel, hyper, config.seed)?,
        rounds: Vec::new(),
        halted: None,
    };
    for round in 1..=rounds {
        let prev = out.models.last().expect("base model present");
        let built = build_intra_pairs(
            prev,
            &format!("round-{}", round - 1),
            &prompts,
            &schedule,
            channel,
            config.gap_threshold,
            &root.fork(round as u64),
        )?;
        if built.pairs.is_empty() {
            let msg = format!("round {round} produced no preference pairs; stopping");
            log::warn!("{msg}");
            out.halted = Some(msg);
            break;
        }
        let round_config = RunConfig {
            seed: config.seed.wrapping_add(round as u64),
            ..config.clone()
        };
        let (next, log) = train_dpo(prev, prev, &built.pairs, &round_config)?;
        let metrics = evaluate_suite(&next, suite, channel, hyper, config.seed)?;
        log::info!(
            "round {round}: {} pairs, average WER {:.3}",
            built.pairs.len(),
            metrics.average_wer
        );
        out.rounds.push(RoundReport {
            round,
            pairs: built.pairs.len(),
            log,
            metrics,
        });
        out.models.push(next);
    }
    Ok(out)
}
