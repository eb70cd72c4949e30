//! Corpus construction, training, evaluation and persistence.

mod config;
mod corpus;
pub mod dataset_io;
mod eval;
mod experiment;
mod iterate;
mod perturber_client;
mod train;

pub use config::{
    default_lr, RunConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LR_AR_MGM, DEFAULT_LR_FM, DEFAULT_WARMUP,
};
pub use corpus::{
    build_eval_set, build_eval_suite, build_prompt_corpus, code_switch, make_text_variants, repeat_spans, Combination,
    CorpusConfig, CorpusEntry, EvalSet, PromptCorpus, Scenario, TextType, TextVariants, DESK_PROMPTS_PER_TYPE,
    MAX_TEXT_LEN, MIN_TEXT_LEN, PAPER_PROMPTS_PER_TYPE, PRONUNCIATION_RATE,
};
pub use eval::{evaluate, evaluate_suite, Metrics, ScenarioMetrics, SuiteReport};
pub use experiment::{
    base_model, controlled_alignment, full_run, ControlledOutcome, ControlledSetup, FullRun, FullRunSetup,
    BASE_MODEL_NOISE, DESK_LR, DESK_WARMUP,
};
pub use iterate::{challenging_prompts, iterate_alignment, IterationOutput, RoundReport};
pub use perturber_client::{ExternalPerturber, PerturbMode, CLIENT_TIMEOUT};
pub use train::{mean_margin, pair_loss, sft_loss, train_dpo, train_sft, winners, StepRecord, TrainLog};
