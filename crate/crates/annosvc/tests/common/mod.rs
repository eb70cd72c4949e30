#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use annosvc::store::Clock;
use annosvc::{AnnoService, Catalog, TaskKind};
use prefalign::pairgen::{PreferencePair, Provenance};
use prefalign::toymodels::{ChannelSpec, Language, SamplingHyper, SpeechSample, TextLanguage, ToyDims, ToyPrompt};

/// `n` pairs; odd pairs come from model "b" and have a WER gap below 6.
pub fn pairs(n: usize) -> Vec<PreferencePair> {
    (0..n)
        .map(|i| PreferencePair {
            prompt: ToyPrompt {
                text: vec![i as u32 % 20, 40, 3],
                speaker: 0,
                text_language: TextLanguage::L1,
                speech_language: Language::L1,
            },
            winner: SpeechSample::tokens(vec![1, 40, 2], SamplingHyper::Reference),
            loser: SpeechSample::tokens(vec![1, 40, 5], SamplingHyper::Reference),
            wer_w: 0.0,
            wer_l: if i % 2 == 0 { 50.0 } else { 5.0 },
            provenance: Provenance::Intra,
            source_models: vec![if i % 2 == 0 { "a" } else { "b" }.into()],
        })
        .collect()
}

pub fn catalog(n: usize, kinds: &[TaskKind], replication: u32) -> Catalog {
    let channel = ChannelSpec::new(ToyDims::default(), 1).unwrap();
    Catalog::new(pairs(n), kinds, replication, 9, channel).unwrap()
}

/// A clock tests can move by hand.
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(start: u64) -> (Self, Clock) {
        let t = Arc::new(AtomicU64::new(start));
        let c = t.clone();
        (Self(t), Arc::new(move || c.load(Ordering::SeqCst)))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

pub fn open(catalog: Catalog, path: &Path) -> (AnnoService, ManualClock) {
    let (clock, f) = ManualClock::new(1_000_000);
    (AnnoService::open(catalog, path, f).unwrap(), clock)
}
