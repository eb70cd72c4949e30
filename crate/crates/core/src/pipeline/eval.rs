use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::pairgen::wer;
use crate::toymodels::{transcribe, ChannelSpec, SamplingHyper, ToyModel};

use super::corpus::{EvalSet, Scenario};

const STREAM_EVAL_SAMPLING: u64 = 0xE5A;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// Mean WER in percent.
    pub wer: f64,
    /// Mean speaker similarity in [-1, 1].
    pub sim: f64,
    /// Mean per-unit channel log-likelihood.
    pub quality_proxy: f64,
    pub prompts: usize,
}

/// One sample per prompt at `hyper`, transcribed through `channel`. The
/// sampling stream depends only on `seed` and the prompt position, so two
/// models evaluated with the same seed see common random numbers.
pub fn evaluate(
    model: &ToyModel,
    evalset: &EvalSet,
    channel: &ChannelSpec,
    hyper: SamplingHyper,
    seed: u64,
) -> Result<Metrics> {
    if evalset.prompts.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    let dims = *channel.dims();
    let root = RngStream::new(seed, STREAM_EVAL_SAMPLING).fork(evalset.scenario as u64);
    let rows: Vec<Result<(f64, f64, f64)>> = evalset
        .prompts
        .par_iter()
        .enumerate()
        .map(|(i, prompt)| {
            let mut rng = root.fork(i as u64);
            let s = model.sample(prompt, hyper, &mut rng)?;
            let hyp = transcribe(&s, prompt.speaker, channel, &mut rng);
            Ok((
                wer(&prompt.words(&dims), &hyp)?,
                channel.speaker_similarity(&s, prompt),
                channel.log_likelihood(&s, prompt)?,
            ))
        })
        .collect();
    let mut acc = (0.0, 0.0, 0.0);
    for r in rows {
        let (w, s, q) = r?;
        acc.0 += w;
        acc.1 += s;
        acc.2 += q;
    }
    let n = evalset.prompts.len() as f64;
    Ok(Metrics {
        wer: acc.0 / n,
        sim: acc.1 / n,
        quality_proxy: acc.2 / n,
        prompts: evalset.prompts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioMetrics {
    pub scenario: &'static str,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub scenarios: Vec<ScenarioMetrics>,
    /// Unweighted mean WER over scenarios.
    pub average_wer: f64,
}

impl SuiteReport {
    pub fn get(&self, scenario: Scenario) -> Option<&Metrics> {
        self.scenarios
            .iter()
            .find(|s| s.scenario == scenario.as_str())
            .map(|s| &s.metrics)
    }
}

/// Evaluates every set; all four scenarios must be present.
pub fn evaluate_suite(
    model: &ToyModel,
    suite: &[EvalSet],
    channel: &ChannelSpec,
    hyper: SamplingHyper,
    seed: u64,
) -> Result<SuiteReport> {
    for s in Scenario::ALL {
        if !suite.iter().any(|e| e.scenario == s) {
            return Err(Error::contract(format!("evaluation suite lacks the {} scenario", s.as_str())));
        }
    }
    let scenarios = suite
        .iter()
        .map(|set| {
            Ok(ScenarioMetrics {
                scenario: set.scenario.as_str(),
                metrics: evaluate(model, set, channel, hyper, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let average_wer = scenarios.iter().map(|s| s.metrics.wer).sum::<f64>() / scenarios.len() as f64;
    Ok(SuiteReport { scenarios, average_wer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toymodels::{
        default_eval_hyper, render_reference, Language, Paradigm, SampleKind, TextLanguage, ToyDims, ToyFmModel,
        ToyPrompt,
    };

    #[test]
    fn reference_rendering_scores_perfectly() {
        let dims = ToyDims::default();
        let ch = ChannelSpec::new(dims, 4).unwrap();
        let set = super::super::corpus::build_eval_set(&dims, Scenario::Regular, 40, 1).unwrap();
        for p in &set.prompts {
            for kind in [SampleKind::Discrete, SampleKind::Continuous] {
                let s = render_reference(&p.text, p.speaker, &ch, kind).unwrap();
                let hyp = transcribe(&s, p.speaker, &ch, &mut RngStream::new(0, 0));
                assert_eq!(wer(&p.words(&dims), &hyp).unwrap(), 0.0);
                assert!((ch.speaker_similarity(&s, p) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn orthogonal_speaker_scores_zero_similarity() {
        let dims = ToyDims::default();
        let ch = ChannelSpec::new(dims, 4).unwrap();
        // Speakers 0 and 2 have orthogonal offsets.
        let listener = ToyPrompt {
            text: vec![1, 2, 3, 4],
            speaker: 0,
            text_language: TextLanguage::L1,
            speech_language: Language::L1,
        };
        for kind in [SampleKind::Discrete, SampleKind::Continuous] {
            let s = render_reference(&listener.text, 2, &ch, kind).unwrap();
            assert!(ch.speaker_similarity(&s, &listener).abs() < 0.05);
        }
    }

    #[test]
    fn suite_needs_every_scenario() {
        let dims = ToyDims::default();
        let ch = ChannelSpec::new(dims, 4).unwrap();
        let mut rng = RngStream::new(1, 0);
        let m = ToyModel::Fm(ToyFmModel::with_zero_output(&dims, &mut rng));
        let set = EvalSet {
            scenario: Scenario::Regular,
            prompts: vec![ToyPrompt {
                text: vec![1, 2],
                speaker: 0,
                text_language: TextLanguage::L1,
                speech_language: Language::L1,
            }],
        };
        let hyper = default_eval_hyper(Paradigm::Fm);
        assert!(evaluate_suite(&m, std::slice::from_ref(&set), &ch, hyper, 0).is_err());
        let r = evaluate(&m, &set, &ch, hyper, 0).unwrap();
        assert_eq!(r.prompts, 1);
        let empty = EvalSet {
            prompts: vec![],
            ..set
        };
        assert!(evaluate(&m, &empty, &ch, hyper, 0).is_err());
    }
}
