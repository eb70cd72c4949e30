use prefalign::pairgen::PreferencePair;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AnnoError, Result};
use crate::model::{AnnotationTask, PairSide, TaskKind};

pub const DEFAULT_REPLICATION: u32 = 3;

/// One task per pair and replication slot. Reading tasks judge a single
/// sample, so each pair contributes one reading task per side and slot.
/// Comparative tasks draw their A/B order from a per-task seed.
pub fn create_tasks(
    pairs: &[PreferencePair],
    kind: TaskKind,
    replication: u32,
    rng: &mut impl RngCore,
) -> Result<Vec<AnnotationTask>> {
    if pairs.is_empty() {
        return Err(AnnoError::Contract("no pairs to annotate".into()));
    }
    if replication == 0 {
        return Err(AnnoError::Contract("replication must be positive".into()));
    }
    let mut tasks = Vec::new();
    let mut push = |pair: usize, slot: u32, side: Option<PairSide>, rng: &mut dyn RngCore| {
        let seed = rng.next_u64();
        let swapped = side.is_none() && ChaCha8Rng::seed_from_u64(seed).random::<bool>();
        tasks.push(AnnotationTask {
            id: tasks.len() as u64,
            kind,
            pair,
            slot,
            side,
            swapped,
            seed,
        });
    };
    for pair in 0..pairs.len() {
        for slot in 0..replication {
            if kind.is_comparative() {
                push(pair, slot, None, rng);
            } else {
                push(pair, slot, Some(PairSide::Winner), rng);
                push(pair, slot, Some(PairSide::Loser), rng);
            }
        }
    }
    Ok(tasks)
}

/// Tasks of several kinds over one pair list, numbered consecutively.
pub fn create_task_set(
    pairs: &[PreferencePair],
    kinds: &[TaskKind],
    replication: u32,
    seed: u64,
) -> Result<Vec<AnnotationTask>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::new();
    for &kind in kinds {
        for mut t in create_tasks(pairs, kind, replication, &mut rng)? {
            t.id = all.len() as u64;
            all.push(t);
        }
    }
    Ok(all)
}
