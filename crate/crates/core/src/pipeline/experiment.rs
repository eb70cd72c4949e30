use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::pairgen::{build_intra_pairs, build_perturbed_pairs, ConfusionTable, PreferencePair, PronunciationPerturber};
use crate::toymodels::{
    checkpoint, default_eval_hyper, render_reference, ChannelSpec, Paradigm, SampleKind, ToyArModel, ToyDims,
    ToyFmModel, ToyMgmModel, ToyModel,
};

use super::config::RunConfig;
use super::corpus::{build_eval_set, build_eval_suite, build_prompt_corpus, CorpusConfig, Scenario, TextType};
use super::dataset_io::{corpus_to_jsonl, pairs_to_jsonl};
use super::eval::{evaluate, evaluate_suite, Metrics, SuiteReport};
use super::train::{mean_margin, train_dpo, train_sft, winners, TrainLog};

/// Substitution rate of the channel the base models are fitted to.
pub const BASE_MODEL_NOISE: f64 = 0.2;

/// The untrained starting point for a paradigm. AR and MGM models are the
/// closed-form fit of a channel with [`BASE_MODEL_NOISE`]; the flow model is
/// pretrained on clean reference renderings.
pub fn base_model(paradigm: Paradigm, channel: &ChannelSpec, seed: u64) -> Result<ToyModel> {
    Ok(match paradigm {
        Paradigm::Ar => ToyModel::Ar(ToyArModel::from_channel(channel, BASE_MODEL_NOISE)?),
        Paradigm::Mgm => ToyModel::Mgm(ToyMgmModel::from_channel(channel, BASE_MODEL_NOISE)?),
        Paradigm::Fm => pretrain_fm(channel, seed)?,
    })
}

fn pretrain_fm(channel: &ChannelSpec, seed: u64) -> Result<ToyModel> {
    let dims = *channel.dims();
    let corpus = build_prompt_corpus(&CorpusConfig {
        dims,
        per_type: 1024,
        text_types: vec![TextType::Regular],
        seed: seed ^ 0xF1,
    })?;
    let data = corpus
        .entries
        .iter()
        .map(|e| {
            let s = render_reference(&e.prompt.text, e.prompt.speaker, channel, SampleKind::Continuous)?;
            Ok((e.prompt.clone(), s))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = RngStream::new(seed, 0xF2);
    let init = ToyModel::Fm(ToyFmModel::new(&dims, 0.1, &mut rng));
    // Constant-ish rate for the whole run: the field needs thousands of steps
    // to separate 320 conditions on the grid.
    let config = RunConfig {
        base_lr: 0.02,
        warmup: 1000,
        epochs: 60,
        seed,
        ..RunConfig::defaults(Paradigm::Fm)
    };
    Ok(train_sft(&init, &data, &config)?.0)
}

/// The clean-versus-noisy alignment experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledSetup {
    pub seed: u64,
    pub train_pairs: usize,
    pub eval_prompts: usize,
    pub config: RunConfig,
}

/// Learning rate and warmup used at desk scale. The paper values
/// (5e-6, 4000 warmup steps) assume hundreds of thousands of pairs; with
/// 2000 pairs and batch 32 a run has 63 steps.
pub const DESK_LR: f64 = 0.02;
pub const DESK_WARMUP: u64 = 10;

impl ControlledSetup {
    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            train_pairs: 2000,
            eval_prompts: 500,
            config: RunConfig {
                base_lr: DESK_LR,
                warmup: DESK_WARMUP,
                seed,
                ..RunConfig::defaults(Paradigm::Ar)
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlledOutcome {
    pub base: Metrics,
    pub sft: Metrics,
    pub dpo: Metrics,
    pub pairs: usize,
    pub margin_before: f64,
    pub margin_after: f64,
    pub dpo_log: TrainLog,
    pub sft_log: TrainLog,
}

/// Base model fitted to a 20%-noise channel; intra pairs ranked by a clean
/// transcriber; DPO and positive-only SFT trained from the same pairs and
/// compared on held-out regular prompts.
pub fn controlled_alignment(setup: &ControlledSetup) -> Result<ControlledOutcome> {
    let config = &setup.config;
    let dims = ToyDims::default();
    let channel = ChannelSpec::new(dims, setup.seed)?;
    let base = base_model(config.paradigm, &channel, setup.seed)?;
    let schedule = config.sampling_schedule();
    let mut pairs: Vec<PreferencePair> = Vec::new();
    for chunk in 0..16u64 {
        if pairs.len() >= setup.train_pairs {
            break;
        }
        let corpus = build_prompt_corpus(&CorpusConfig {
            dims,
            per_type: 1000,
            text_types: vec![TextType::Regular],
            seed: setup.seed.wrapping_add(chunk),
        })?;
        let prompts = corpus.prompts_of(TextType::Regular);
        let rng = RngStream::new(setup.seed, 0x1A7A).fork(chunk);
        let built = build_intra_pairs(&base, "base", &prompts, &schedule, &channel, config.gap_threshold, &rng)?;
        pairs.extend(built.pairs);
    }
    if pairs.len() < setup.train_pairs {
        return Err(Error::contract(format!(
            "only {} pairs survived the gap filter, {} requested",
            pairs.len(),
            setup.train_pairs
        )));
    }
    pairs.truncate(setup.train_pairs);
    let margin_before = mean_margin(&base, &base, &pairs, config.beta)?;
    let (dpo_model, dpo_log) = train_dpo(&base, &base, &pairs, config)?;
    let margin_after = mean_margin(&dpo_model, &base, &pairs, config.beta)?;
    let (sft_model, sft_log) = train_sft(&base, &winners(&pairs), config)?;
    let held_out = build_eval_set(&dims, Scenario::Regular, setup.eval_prompts, setup.seed ^ 0xE7A1)?;
    let hyper = default_eval_hyper(config.paradigm);
    let eval_seed = setup.seed ^ 0x5EED;
    Ok(ControlledOutcome {
        base: evaluate(&base, &held_out, &channel, hyper, eval_seed)?,
        sft: evaluate(&sft_model, &held_out, &channel, hyper, eval_seed)?,
        dpo: evaluate(&dpo_model, &held_out, &channel, hyper, eval_seed)?,
        pairs: pairs.len(),
        margin_before,
        margin_after,
        dpo_log,
        sft_log,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullRunSetup {
    pub corpus: CorpusConfig,
    pub config: RunConfig,
}

impl FullRunSetup {
    pub fn desk(paradigm: Paradigm, seed: u64) -> Self {
        Self {
            corpus: CorpusConfig {
                per_type: 100,
                ..CorpusConfig::desk(seed)
            },
            config: RunConfig {
                base_lr: DESK_LR,
                warmup: DESK_WARMUP,
                seed,
                ..RunConfig::defaults(paradigm)
            },
        }
    }
}

/// Serialized artifacts of one end-to-end run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FullRun {
    pub corpus_jsonl: String,
    pub pairs_jsonl: String,
    pub report_json: String,
    pub checkpoint: Vec<u8>,
}

#[derive(Serialize)]
struct Report<'a> {
    paradigm: &'a str,
    seed: u64,
    intra_pairs: usize,
    perturbed_pairs: usize,
    final_train_loss: f64,
    base: &'a SuiteReport,
    aligned: &'a SuiteReport,
}

/// Corpus, intra and perturbed pairs, DPO training and suite evaluation.
pub fn full_run(setup: &FullRunSetup) -> Result<FullRun> {
    let config = &setup.config;
    let dims = setup.corpus.dims;
    let channel = ChannelSpec::new(dims, config.seed)?;
    let corpus = build_prompt_corpus(&setup.corpus)?;
    let base = base_model(config.paradigm, &channel, config.seed)?;
    let root = RngStream::new(config.seed, 0xF011);

    let intra_prompts: Vec<_> = corpus
        .entries
        .iter()
        .filter(|e| matches!(e.text_type, TextType::Regular | TextType::Repeated | TextType::CodeSwitching))
        .map(|e| e.prompt.clone())
        .collect();
    let schedule = config.sampling_schedule();
    let intra = build_intra_pairs(&base, "base", &intra_prompts, &schedule, &channel, config.gap_threshold, &root.fork(0))?;
    let perturber = PronunciationPerturber {
        table: ConfusionTable::neighbours(&dims),
        rate: super::corpus::PRONUNCIATION_RATE,
    };
    let perturbed = build_perturbed_pairs(
        &base,
        "base",
        &corpus.prompts_of(TextType::Regular),
        &perturber,
        default_eval_hyper(config.paradigm),
        &channel,
        &root.fork(1),
    );
    let mut pairs = intra.pairs;
    let intra_count = pairs.len();
    pairs.extend(perturbed.pairs);

    let (aligned, log) = train_dpo(&base, &base, &pairs, config)?;
    let suite = build_eval_suite(&dims, config.seed ^ 0xE7A1)?;
    let hyper = default_eval_hyper(config.paradigm);
    let base_report = evaluate_suite(&base, &suite, &channel, hyper, config.seed)?;
    let aligned_report = evaluate_suite(&aligned, &suite, &channel, hyper, config.seed)?;
    let report = Report {
        paradigm: config.paradigm.as_str(),
        seed: config.seed,
        intra_pairs: intra_count,
        perturbed_pairs: pairs.len() - intra_count,
        final_train_loss: log.steps.last().map_or(0.0, |s| s.loss),
        base: &base_report,
        aligned: &aligned_report,
    };
    Ok(FullRun {
        corpus_jsonl: corpus_to_jsonl(&corpus),
        pairs_jsonl: pairs_to_jsonl(&pairs),
        report_json: serde_json::to_string_pretty(&report).expect("report serializes"),
        checkpoint: checkpoint::encode(&aligned),
    })
}
