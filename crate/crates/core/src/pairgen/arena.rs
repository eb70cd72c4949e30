use super::{build_inter_pairs, sample_prompts, ModelSamples};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::toymodels::{ChannelSpec, SamplingHyper, ToyModel, ToyPrompt};

pub struct ArenaEntry<'a> {
    pub id: String,
    pub model: &'a ToyModel,
    pub schedule: Vec<SamplingHyper>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArenaReport {
    pub model_ids: Vec<String>,
    /// `cells[i][j]`: percentage of the comparisons between models `i` and
    /// `j` that `i` won with a WER gap at or above the threshold. Diagonal is 0.
    pub cells: Vec<Vec<f64>>,
    /// Row sums of `cells`.
    pub win_rates: Vec<f64>,
    /// Comparisons made per model pair (3 per shared prompt).
    pub comparisons: Vec<Vec<usize>>,
    /// Comparisons per model pair that produced no winner.
    pub excluded: Vec<Vec<usize>>,
    /// Worst-against-worst comparisons across the whole run; always zero.
    pub worst_worst_comparisons: usize,
}

/// Pairwise win-rate table. Every model samples its schedule once per prompt;
/// each model pair is then compared with the inter-pair rules. Cells use all
/// comparisons as the denominator, so filtered ones count as neither a win nor
/// a loss.
pub fn arena(
    entries: &[ArenaEntry<'_>],
    prompts: &[ToyPrompt],
    channel: &ChannelSpec,
    gap_threshold: f64,
    rng: &RngStream,
) -> Result<ArenaReport> {
    if entries.len() < 2 {
        return Err(Error::contract("the arena needs at least two models"));
    }
    let samples: Vec<ModelSamples> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| sample_prompts(e.model, &e.id, prompts, &e.schedule, channel, &rng.fork(i as u64)))
        .collect();
    let n = entries.len();
    let mut cells = vec![vec![0.0; n]; n];
    let mut comparisons = vec![vec![0usize; n]; n];
    let mut excluded = vec![vec![0usize; n]; n];
    let mut worst_worst = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let out = build_inter_pairs(&samples[i], &samples[j], gap_threshold)?;
            worst_worst += out.worst_worst_comparisons;
            let total = out.comparisons.len();
            let (mut wi, mut wj) = (0usize, 0usize);
            for c in &out.comparisons {
                match c.outcome(gap_threshold) {
                    Some(true) => wi += 1,
                    Some(false) => wj += 1,
                    None => {}
                }
            }
            comparisons[i][j] = total;
            comparisons[j][i] = total;
            excluded[i][j] = total - wi - wj;
            excluded[j][i] = total - wi - wj;
            if total > 0 {
                cells[i][j] = 100.0 * wi as f64 / total as f64;
                cells[j][i] = 100.0 * wj as f64 / total as f64;
            }
        }
    }
    let win_rates = cells.iter().map(|row| row.iter().sum()).collect();
    Ok(ArenaReport {
        model_ids: entries.iter().map(|e| e.id.clone()).collect(),
        cells,
        win_rates,
        comparisons,
        excluded,
        worst_worst_comparisons: worst_worst,
    })
}
