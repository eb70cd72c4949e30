use prefalign::pairgen::{PreferencePair, Provenance};
use prefalign::toymodels::{Language, SamplingHyper, SpeechSample, TextLanguage, ToyPrompt};

pub fn pairs(n: usize) -> Vec<PreferencePair> {
    (0..n)
        .map(|i| PreferencePair {
            prompt: ToyPrompt {
                text: vec![i as u32 % 20, 3],
                speaker: 0,
                text_language: TextLanguage::L1,
                speech_language: Language::L1,
            },
            winner: SpeechSample::tokens(vec![1, 2], SamplingHyper::Reference),
            loser: SpeechSample::tokens(vec![1, 5], SamplingHyper::Reference),
            wer_w: 0.0,
            wer_l: 50.0,
            provenance: Provenance::Intra,
            source_models: vec!["m".into()],
        })
        .collect()
}
