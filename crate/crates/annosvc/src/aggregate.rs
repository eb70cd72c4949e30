//! Summaries over annotation records. Every figure is a function of integer
//! counts, so record order never changes a result.

use std::collections::BTreeMap;

use prefalign::pairgen::PreferencePair;
use serde::Serialize;

use crate::error::{AnnoError, Result};
use crate::model::{AnnotationRecord, AnnotationTask, Judgment, PairSide, TaskKind};

fn task_of<'a>(tasks: &'a [AnnotationTask], r: &AnnotationRecord) -> Result<&'a AnnotationTask> {
    tasks.get(r.task as usize).ok_or(AnnoError::UnknownTask(r.task))
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ReadingCounts {
    pub no_error: u64,
    pub has_error: u64,
}

impl ReadingCounts {
    pub fn total(&self) -> u64 {
        self.no_error + self.has_error
    }

    /// Share of samples judged free of reading errors.
    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.no_error, self.total())
    }

    fn add(&mut self, o: &ReadingCounts) {
        self.no_error += o.no_error;
        self.has_error += o.has_error;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReadingRow {
    pub positive: ReadingCounts,
    pub negative: ReadingCounts,
    pub all: ReadingCounts,
    pub positive_accuracy: Option<f64>,
    pub negative_accuracy: Option<f64>,
    pub all_accuracy: Option<f64>,
}

/// Reading accuracy keyed by the model that produced the judged sample: a
/// winner comes from the first source model, a loser from the last.
pub fn aggregate_reading_accuracy(
    pairs: &[PreferencePair],
    tasks: &[AnnotationTask],
    records: &[AnnotationRecord],
) -> Result<BTreeMap<String, ReadingRow>> {
    let mut counts: BTreeMap<String, (ReadingCounts, ReadingCounts)> = BTreeMap::new();
    for r in records {
        let t = task_of(tasks, r)?;
        let Some(side) = t.side.filter(|_| t.kind == TaskKind::ReadingAccuracy) else {
            continue;
        };
        let pair = &pairs[t.pair];
        let model = match side {
            PairSide::Winner => pair.source_models.first(),
            PairSide::Loser => pair.source_models.last(),
        }
        .cloned()
        .unwrap_or_default();
        let entry = counts.entry(model).or_default();
        let c = if side == PairSide::Winner { &mut entry.0 } else { &mut entry.1 };
        match r.judgment {
            Judgment::NoError => c.no_error += 1,
            Judgment::HasError => c.has_error += 1,
            j => {
                return Err(AnnoError::IllegalJudgment {
                    kind: t.kind.as_str(),
                    judgment: j.as_str().into(),
                })
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(m, (positive, negative))| {
            let mut all = positive;
            all.add(&negative);
            let row = ReadingRow {
                positive,
                negative,
                all,
                positive_accuracy: positive.accuracy(),
                negative_accuracy: negative.accuracy(),
                all_accuracy: all.accuracy(),
            };
            (m, row)
        })
        .collect())
}

/// Five-way counts with A the pair's winner.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Buckets {
    pub a2: u64,
    pub a1: u64,
    pub tie: u64,
    pub b1: u64,
    pub b2: u64,
}

impl Buckets {
    fn add(&mut self, j: Judgment) {
        match j {
            Judgment::A2 => self.a2 += 1,
            Judgment::A1 => self.a1 += 1,
            Judgment::Tie => self.tie += 1,
            Judgment::B1 => self.b1 += 1,
            Judgment::B2 => self.b2 += 1,
            Judgment::NoError | Judgment::HasError => {}
        }
    }

    pub fn total(&self) -> u64 {
        self.a2 + self.a1 + self.tie + self.b1 + self.b2
    }

    pub fn winner(&self) -> u64 {
        self.a2 + self.a1
    }

    pub fn loser(&self) -> u64 {
        self.b2 + self.b1
    }

    /// Percentages in a2, a1, tie, b1, b2 order.
    pub fn percentages(&self) -> Option<[f64; 5]> {
        let t = self.total();
        (t > 0).then(|| [self.a2, self.a1, self.tie, self.b1, self.b2].map(|c| 100.0 * c as f64 / t as f64))
    }

    /// Mean score for the winner on the -2..=2 scale.
    pub fn mean(&self) -> Option<f64> {
        let t = self.total();
        (t > 0).then(|| {
            (2 * self.a2 as i64 + self.a1 as i64 - self.b1 as i64 - 2 * self.b2 as i64) as f64 / t as f64
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Agreement {
    /// Records over pairs whose automatic preference is defined.
    pub records: u64,
    pub winner: Option<f64>,
    pub tie: Option<f64>,
    pub loser: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CmosSummary {
    pub buckets: Buckets,
    pub distribution: Option<[f64; 5]>,
    pub mean: Option<f64>,
    pub agreement: Agreement,
}

fn comparative(
    kind: TaskKind,
    tasks: &[AnnotationTask],
    records: &[AnnotationRecord],
) -> Result<Vec<(usize, Judgment)>> {
    let mut out = Vec::new();
    for r in records {
        let t = task_of(tasks, r)?;
        if t.kind != kind {
            continue;
        }
        if !kind.allows(r.judgment) {
            return Err(AnnoError::IllegalJudgment {
                kind: kind.as_str(),
                judgment: r.judgment.as_str().into(),
            });
        }
        out.push((t.pair, t.canonical(r.judgment)));
    }
    Ok(out)
}

/// Naturalness buckets, and how often raters side with the WER ranking on
/// pairs whose WER gap reaches `gap_threshold`.
pub fn aggregate_cmos(
    pairs: &[PreferencePair],
    tasks: &[AnnotationTask],
    records: &[AnnotationRecord],
    gap_threshold: f64,
) -> Result<CmosSummary> {
    let mut buckets = Buckets::default();
    let mut defined = Buckets::default();
    for (pair, j) in comparative(TaskKind::NaturalnessCmos, tasks, records)? {
        buckets.add(j);
        let p = &pairs[pair];
        if p.wer_l - p.wer_w >= gap_threshold {
            defined.add(j);
        }
    }
    let n = defined.total();
    Ok(CmosSummary {
        buckets,
        distribution: buckets.percentages(),
        mean: buckets.mean(),
        agreement: Agreement {
            records: n,
            winner: ratio(defined.winner(), n),
            tie: ratio(defined.tie, n),
            loser: ratio(defined.loser(), n),
        },
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct WinTieLose {
    pub win: u64,
    pub tie: u64,
    pub lose: u64,
    pub win_rate: Option<f64>,
    pub tie_rate: Option<f64>,
    pub lose_rate: Option<f64>,
}

impl WinTieLose {
    fn add(&mut self, j: Judgment) {
        match j {
            Judgment::A2 | Judgment::A1 => self.win += 1,
            Judgment::Tie => self.tie += 1,
            _ => self.lose += 1,
        }
    }

    fn finish(mut self) -> Self {
        let n = self.win + self.tie + self.lose;
        self.win_rate = ratio(self.win, n);
        self.tie_rate = ratio(self.tie, n);
        self.lose_rate = ratio(self.lose, n);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimilaritySummary {
    /// Keyed by the pair's source models joined with `/`.
    pub per_model: BTreeMap<String, WinTieLose>,
    pub overall: WinTieLose,
}

/// Similarity preference for the pair winner.
pub fn aggregate_similarity(
    pairs: &[PreferencePair],
    tasks: &[AnnotationTask],
    records: &[AnnotationRecord],
) -> Result<SimilaritySummary> {
    let mut s = SimilaritySummary::default();
    for (pair, j) in comparative(TaskKind::SimilarityAb, tasks, records)? {
        let key = pairs[pair].source_models.join("/");
        s.per_model.entry(key).or_default().add(j);
        s.overall.add(j);
    }
    s.per_model.values_mut().for_each(|w| *w = w.finish());
    s.overall = s.overall.finish();
    Ok(s)
}
