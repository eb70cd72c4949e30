use serde::{Deserialize, Serialize};

/// The three judgment tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ReadingAccuracy,
    NaturalnessCmos,
    SimilarityAb,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::ReadingAccuracy, TaskKind::NaturalnessCmos, TaskKind::SimilarityAb];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ReadingAccuracy => "reading_accuracy",
            TaskKind::NaturalnessCmos => "naturalness_cmos",
            TaskKind::SimilarityAb => "similarity_ab",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Question shown to the rater.
    pub fn question(self) -> &'static str {
        match self {
            TaskKind::ReadingAccuracy => "Is any reading error? (insertion, omission, or mispronunciation)",
            TaskKind::NaturalnessCmos => "Which speech sounds more natural?",
            TaskKind::SimilarityAb => "Which speech sounds more like the reference speaker's style?",
        }
    }

    /// Legal judgments in display order.
    pub fn options(self) -> &'static [Judgment] {
        match self {
            TaskKind::ReadingAccuracy => &[Judgment::NoError, Judgment::HasError],
            TaskKind::NaturalnessCmos | TaskKind::SimilarityAb => {
                &[Judgment::A2, Judgment::A1, Judgment::Tie, Judgment::B1, Judgment::B2]
            }
        }
    }

    pub fn allows(self, j: Judgment) -> bool {
        self.options().contains(&j)
    }

    /// Whether a task shows two samples in randomized order.
    pub fn is_comparative(self) -> bool {
        !matches!(self, TaskKind::ReadingAccuracy)
    }
}

/// A rater's answer. Wire strings: `no_error`, `has_error`, `a2`, `a1`,
/// `tie`, `b1`, `b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Judgment {
    #[serde(rename = "no_error")]
    NoError,
    #[serde(rename = "has_error")]
    HasError,
    #[serde(rename = "a2")]
    A2,
    #[serde(rename = "a1")]
    A1,
    #[serde(rename = "tie")]
    Tie,
    #[serde(rename = "b1")]
    B1,
    #[serde(rename = "b2")]
    B2,
}

impl Judgment {
    pub const ALL: [Judgment; 7] = [
        Judgment::NoError,
        Judgment::HasError,
        Judgment::A2,
        Judgment::A1,
        Judgment::Tie,
        Judgment::B1,
        Judgment::B2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Judgment::NoError => "no_error",
            Judgment::HasError => "has_error",
            Judgment::A2 => "a2",
            Judgment::A1 => "a1",
            Judgment::Tie => "tie",
            Judgment::B1 => "b1",
            Judgment::B2 => "b2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|j| j.as_str() == s)
    }

    /// The same preference with A and B exchanged. Binary judgments are fixed.
    pub fn mirrored(self) -> Self {
        match self {
            Judgment::A2 => Judgment::B2,
            Judgment::A1 => Judgment::B1,
            Judgment::B1 => Judgment::A1,
            Judgment::B2 => Judgment::A2,
            j => j,
        }
    }

    pub fn label(self, kind: TaskKind) -> &'static str {
        let natural = kind == TaskKind::NaturalnessCmos;
        match self {
            Judgment::NoError => "No Error",
            Judgment::HasError => "Has Error",
            Judgment::A2 if natural => "A +2 (Sample A is much more natural)",
            Judgment::A1 if natural => "A +1 (Sample A is slightly more natural)",
            Judgment::Tie if natural => "Tie (Both are equally natural)",
            Judgment::B1 if natural => "B +1 (Sample B is slightly more natural)",
            Judgment::B2 if natural => "B +2 (Sample B is much more natural)",
            Judgment::A2 => "A +2 (Sample A is much more similar)",
            Judgment::A1 => "A +1 (Sample A is slightly more similar)",
            Judgment::Tie => "Tie (Both are equally similar)",
            Judgment::B1 => "B +1 (Sample B is slightly more similar)",
            Judgment::B2 => "B +2 (Sample B is much more similar)",
        }
    }
}

/// Which sample of a preference pair a reading task shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSide {
    Winner,
    Loser,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub id: u64,
    pub kind: TaskKind,
    /// Index into the service's pair list.
    pub pair: usize,
    /// Replication slot, `0..replication`.
    pub slot: u32,
    /// The sample shown by a reading task; `None` for comparative tasks.
    pub side: Option<PairSide>,
    /// Comparative tasks: `true` when sample A is the pair's loser.
    pub swapped: bool,
    /// Seed the A/B order was drawn from.
    pub seed: u64,
}

impl AnnotationTask {
    /// Tasks sharing a group show the same material; one session answers at
    /// most one task of a group.
    pub fn group(&self) -> GroupKey {
        GroupKey {
            kind: self.kind,
            pair: self.pair,
            side: self.side,
        }
    }

    /// Maps a judgment as given on this task to the canonical orientation
    /// where A is the pair's winner.
    pub fn canonical(&self, j: Judgment) -> Judgment {
        if self.swapped {
            j.mirrored()
        } else {
            j
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub kind: TaskKind,
    pub pair: usize,
    pub side: Option<PairSide>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub task: u64,
    pub session: String,
    pub judgment: Judgment,
    /// Unix time in milliseconds.
    pub ts: u64,
}
