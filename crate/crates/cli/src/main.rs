use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use annosvc::store::system_clock;
use annosvc::{AnnoService, Catalog, TaskKind};
use prefalign::numerics::RngStream;
use prefalign::pairgen::{
    arena, build_inter_pairs, build_intra_pairs, build_perturbed_pairs, sample_prompts, ArenaEntry,
    ConfusionTable, PreferencePair, PronunciationPerturber, PunctuationPerturber, TextPerturber,
};
use prefalign::pipeline::dataset_io::{corpus_to_jsonl, load_corpus, load_pairs, pairs_to_jsonl};
use prefalign::pipeline::{
    base_model, build_eval_suite, build_prompt_corpus, evaluate_suite, iterate_alignment, train_dpo, train_sft,
    winners, CorpusConfig, ExternalPerturber, PerturbMode, PromptCorpus, RunConfig, TextType, DESK_LR,
    DESK_PROMPTS_PER_TYPE, DESK_WARMUP, PRONUNCIATION_RATE,
};
use prefalign::toymodels::{checkpoint, default_eval_hyper, ChannelSpec, Paradigm, ToyDims, ToyModel, ToyPrompt};

#[derive(Parser)]
#[command(name = "prefalign", version, about = "Preference alignment for toy TTS models")]
struct Cli {
    /// World seed: fixes the channel, base models and every sampling stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run configuration file (key = value lines). Without it, desk-scale
    /// defaults for the model's paradigm are used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory; stdout when omitted and the output is text.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a prompt corpus.
    GenCorpus {
        #[arg(long, default_value_t = DESK_PROMPTS_PER_TYPE)]
        per_type: usize,
    },
    /// Build preference pairs from a corpus.
    GenPairs(GenPairs),
    /// Pairwise win-rate table between models.
    Arena {
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoints to compare (at least two).
        #[arg(long = "model", required = true, num_args = 1)]
        models: Vec<PathBuf>,
    },
    /// Train a model on preference pairs.
    Train {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, value_enum, default_value_t = Objective::Dpo)]
        objective: Objective,
        /// Starting checkpoint; the base model when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Frozen reference for DPO; the starting model when omitted.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value = "ar")]
        paradigm: String,
    },
    /// Evaluate a model on the four-scenario suite.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "ar")]
        paradigm: String,
    },
    /// Rounds of pair generation and DPO on the challenging prompts.
    Iterate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 2)]
        rounds: usize,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "ar")]
        paradigm: String,
    },
    /// Serve annotation tasks over HTTP.
    ServeAnno {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        journal: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Task kinds to serve; all three when omitted.
        #[arg(long = "kind", value_parser = parse_task_kind)]
        kinds: Vec<TaskKind>,
        #[arg(long, default_value_t = 3)]
        replication: u32,
    },
}

#[derive(Args)]
struct GenPairs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = PairKind::All)]
    kind: PairKind,
    /// Model checkpoints. Intra and perturbed pairs use the first; inter
    /// pairs need two. Base models are used for any that are missing.
    #[arg(long = "model", num_args = 1)]
    models: Vec<PathBuf>,
    #[arg(long, default_value = "ar")]
    paradigm: String,
    #[arg(long, value_enum, default_value_t = Mode::Pronunciation)]
    perturb: Mode,
    /// External perturbation service; the rule-based perturber is the fallback.
    #[arg(long)]
    perturber_url: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairKind {
    Intra,
    Inter,
    Perturbed,
    All,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Objective {
    Dpo,
    Sft,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Pronunciation,
    Punctuation,
}

fn parse_task_kind(s: &str) -> std::result::Result<TaskKind, String> {
    TaskKind::parse(s).ok_or_else(|| format!("unknown task kind {s:?}"))
}

fn parse_paradigm(s: &str) -> Result<Paradigm> {
    Paradigm::parse(s).with_context(|| format!("unknown paradigm {s:?} (ar, fm or mgm)"))
}

struct Ctx {
    seed: u64,
    config: Option<RunConfig>,
    out: Option<PathBuf>,
    dims: ToyDims,
    channel: ChannelSpec,
}

impl Ctx {
    fn run_config(&self, paradigm: Paradigm) -> Result<RunConfig> {
        match &self.config {
            Some(c) if c.paradigm != paradigm => bail!(
                "configuration is for {} but the model is {}",
                c.paradigm.as_str(),
                paradigm.as_str()
            ),
            Some(c) => Ok(c.clone()),
            None => Ok(RunConfig {
                base_lr: DESK_LR,
                warmup: DESK_WARMUP,
                seed: self.seed,
                ..RunConfig::defaults(paradigm)
            }),
        }
    }

    fn model(&self, path: Option<&Path>, paradigm: &str) -> Result<ToyModel> {
        match path {
            Some(p) => checkpoint::load(p).with_context(|| format!("loading {}", p.display())),
            None => {
                let paradigm = self.config.as_ref().map_or(parse_paradigm(paradigm), |c| Ok(c.paradigm))?;
                log::info!("no checkpoint given; fitting the {} base model", paradigm.as_str());
                Ok(base_model(paradigm, &self.channel, self.seed)?)
            }
        }
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
            None => {
                std::io::stdout().write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }

    fn out_required(&self, what: &str) -> Result<&Path> {
        self.out.as_deref().with_context(|| format!("--out is required for {what}"))
    }
}

fn model_id(path: Option<&PathBuf>, fallback: &str) -> String {
    path.and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| fallback.to_string())
}

fn prompts_where(corpus: &PromptCorpus, keep: impl Fn(TextType) -> bool) -> Vec<ToyPrompt> {
    corpus
        .entries
        .iter()
        .filter(|e| keep(e.text_type))
        .map(|e| e.prompt.clone())
        .collect()
}

fn gen_pairs(ctx: &Ctx, args: &GenPairs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let first = ctx.model(args.models.first().map(PathBuf::as_path), &args.paradigm)?;
    let config = ctx.run_config(first.paradigm())?;
    let schedule = config.sampling_schedule();
    let root = RngStream::new(ctx.seed, 0xC11);
    let id_a = model_id(args.models.first(), "base");
    let sampled = prompts_where(&corpus, |t| {
        matches!(t, TextType::Regular | TextType::Repeated | TextType::CodeSwitching)
    });
    let mut pairs: Vec<PreferencePair> = Vec::new();
    let (intra, inter, perturbed) = match args.kind {
        PairKind::Intra => (true, false, false),
        PairKind::Inter => (false, true, false),
        PairKind::Perturbed => (false, false, true),
        PairKind::All => (true, true, true),
    };
    if intra || inter {
        let built = build_intra_pairs(&first, &id_a, &sampled, &schedule, &ctx.channel, config.gap_threshold, &root.fork(0))?;
        if intra {
            log::info!("{} intra pairs", built.pairs.len());
            pairs.extend(built.pairs);
        }
        if inter {
            let second = match args.models.get(1) {
                Some(p) => checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => base_model(first.paradigm(), &ctx.channel, ctx.seed.wrapping_add(1))?,
            };
            let mut id_b = model_id(args.models.get(1), "base-2");
            if id_b == id_a {
                id_b.push_str("-b");
            }
            let other = sample_prompts(&second, &id_b, &sampled, &schedule, &ctx.channel, &root.fork(1));
            let out = build_inter_pairs(&built.samples, &other, config.gap_threshold)?;
            log::info!("{} inter pairs from {} comparisons", out.pairs.len(), out.comparisons.len());
            pairs.extend(out.pairs);
        }
    }
    if perturbed {
        let rule: Box<dyn TextPerturber> = match args.perturb {
            Mode::Pronunciation => Box::new(PronunciationPerturber {
                table: ConfusionTable::neighbours(&ctx.dims),
                rate: PRONUNCIATION_RATE,
            }),
            Mode::Punctuation => Box::new(PunctuationPerturber {
                boundary: ctx.dims.boundary(),
            }),
        };
        let perturber: Box<dyn TextPerturber> = match &args.perturber_url {
            Some(url) => {
                let mode = match args.perturb {
                    Mode::Pronunciation => PerturbMode::Pronunciation,
                    Mode::Punctuation => PerturbMode::Punctuation,
                };
                Box::new(ExternalPerturber::new(url.clone(), mode, ctx.dims, rule)?)
            }
            None => rule,
        };
        let out = build_perturbed_pairs(
            &first,
            &id_a,
            &prompts_where(&corpus, |t| t == TextType::Regular),
            perturber.as_ref(),
            default_eval_hyper(first.paradigm()),
            &ctx.channel,
            &root.fork(2),
        );
        log::info!("{} perturbed pairs, {} unchanged prompts", out.pairs.len(), out.degenerate);
        pairs.extend(out.pairs);
    }
    ctx.emit(&pairs_to_jsonl(&pairs))
}

fn run_arena(ctx: &Ctx, corpus: &Path, paths: &[PathBuf]) -> Result<()> {
    if paths.len() < 2 {
        bail!("the arena needs at least two --model checkpoints");
    }
    let corpus = load_corpus(corpus)?;
    let models = paths
        .iter()
        .map(|p| checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let entries = models
        .iter()
        .zip(paths)
        .enumerate()
        .map(|(i, (m, p))| {
            Ok(ArenaEntry {
                id: format!("{i}:{}", model_id(Some(p), "model")),
                model: m,
                schedule: ctx.run_config(m.paradigm())?.sampling_schedule(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let gap = ctx.run_config(models[0].paradigm())?.gap_threshold;
    let prompts = prompts_where(&corpus, |_| true);
    let r = arena(&entries, &prompts, &ctx.channel, gap, &RngStream::new(ctx.seed, 0xA2E))?;
    let report = json!({
        "models": r.model_ids,
        "cells": r.cells,
        "win_rates": r.win_rates,
        "comparisons": r.comparisons,
        "excluded": r.excluded,
    });
    ctx.emit(&format!("{}\n", serde_json::to_string_pretty(&report)?))
}

fn train(
    ctx: &Ctx,
    pairs: &Path,
    objective: Objective,
    model: Option<&Path>,
    reference: Option<&Path>,
    paradigm: &str,
) -> Result<()> {
    let out = ctx.out_required("the trained checkpoint")?;
    let pairs = load_pairs(pairs)?;
    let init = ctx.model(model, paradigm)?;
    let config = ctx.run_config(init.paradigm())?;
    let (trained, log) = match objective {
        Objective::Dpo => {
            let reference = match reference {
                Some(p) => checkpoint::load(p)?,
                None => init.clone(),
            };
            train_dpo(&init, &reference, &pairs, &config)?
        }
        Objective::Sft => train_sft(&init, &winners(&pairs), &config)?,
    };
    checkpoint::save(&trained, out)?;
    let last = log.steps.last();
    eprintln!(
        "{} steps, mean loss {:.5}, final margin {:.5}",
        log.steps.len(),
        log.mean_loss(),
        last.map_or(0.0, |s| s.margin)
    );
    Ok(())
}

fn eval(ctx: &Ctx, model: Option<&Path>, paradigm: &str) -> Result<()> {
    let model = ctx.model(model, paradigm)?;
    let suite = build_eval_suite(&ctx.dims, ctx.seed ^ 0xE7A1)?;
    let report = evaluate_suite(&model, &suite, &ctx.channel, default_eval_hyper(model.paradigm()), ctx.seed)?;
    ctx.emit(&format!("{}\n", serde_json::to_string_pretty(&report)?))
}

fn iterate(ctx: &Ctx, corpus: &Path, rounds: usize, model: Option<&Path>, paradigm: &str) -> Result<()> {
    let dir = ctx.out_required("iterate (a directory)")?;
    fs::create_dir_all(dir)?;
    let corpus = load_corpus(corpus)?;
    let base = ctx.model(model, paradigm)?;
    let config = ctx.run_config(base.paradigm())?;
    let suite = build_eval_suite(&ctx.dims, ctx.seed ^ 0xE7A1)?;
    let out = iterate_alignment(&base, rounds, &corpus, &config, &ctx.channel, &suite)?;
    for (k, m) in out.models.iter().enumerate().skip(1) {
        checkpoint::save(m, &dir.join(format!("round-{k}.ckpt")))?;
    }
    let rounds: Vec<_> = out
        .rounds
        .iter()
        .map(|r| json!({"round": r.round, "pairs": r.pairs, "mean_loss": r.log.mean_loss(), "metrics": r.metrics}))
        .collect();
    let report = json!({"base": out.base_metrics, "rounds": rounds, "halted": out.halted});
    fs::write(dir.join("report.json"), format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    if let Some(msg) = &out.halted {
        eprintln!("{msg}");
    }
    Ok(())
}

fn serve_anno(
    ctx: &Ctx,
    pairs: &Path,
    journal: &Path,
    addr: SocketAddr,
    kinds: &[TaskKind],
    replication: u32,
) -> Result<()> {
    let pairs = load_pairs(pairs)?;
    let kinds = if kinds.is_empty() { TaskKind::ALL.to_vec() } else { kinds.to_vec() };
    let catalog = Catalog::new(pairs, &kinds, replication, ctx.seed, ctx.channel.clone())?;
    let svc = Arc::new(AnnoService::open(catalog, journal, system_clock())?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(annosvc::http::serve(svc, addr, |bound| {
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
    }))?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = cli
        .config
        .as_deref()
        .map(|p| RunConfig::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let dims = ToyDims::default();
    let ctx = Ctx {
        seed: cli.seed,
        config,
        out: cli.out,
        dims,
        channel: ChannelSpec::new(dims, cli.seed)?,
    };
    match &cli.command {
        Command::GenCorpus { per_type } => {
            let corpus = build_prompt_corpus(&CorpusConfig {
                per_type: *per_type,
                ..CorpusConfig::desk(ctx.seed)
            })?;
            ctx.emit(&corpus_to_jsonl(&corpus))
        }
        Command::GenPairs(args) => gen_pairs(&ctx, args),
        Command::Arena { corpus, models } => run_arena(&ctx, corpus, models),
        Command::Train {
            pairs,
            objective,
            model,
            reference,
            paradigm,
        } => train(&ctx, pairs, *objective, model.as_deref(), reference.as_deref(), paradigm),
        Command::Eval { model, paradigm } => eval(&ctx, model.as_deref(), paradigm),
        Command::Iterate {
            corpus,
            rounds,
            model,
            paradigm,
        } => iterate(&ctx, corpus, *rounds, model.as_deref(), paradigm),
        Command::ServeAnno {
            pairs,
            journal,
            addr,
            kinds,
            replication,
        } => serve_anno(&ctx, pairs, journal, *addr, kinds, *replication),
    }
}
