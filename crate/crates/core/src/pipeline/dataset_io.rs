//! JSON-lines persistence for preference pairs and prompt corpora.
//!
//! Lines are written by hand so that field order is fixed and every float
//! has exactly six decimals; reading goes through `serde_json::Value` and
//! reports the first offending line and field.
//!
//! ```text
//! {"prompt":{"text":[1,2],"speaker":0,"text_lang":"l1","speech_lang":"l1"},
//!  "winner":{"kind":"discrete","tokens":[5,9],"hyper":{"type":"ar","temperature":0.400000,"top_k":20,"top_p":1.000000}},
//!  "loser":{...},"wer_w":0.000000,"wer_l":50.000000,"provenance":"intra","source_models":["base"]}
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::pairgen::{PreferencePair, Provenance};
use crate::toymodels::{Frame, Language, SamplingHyper, SpeechPayload, SpeechSample, TextLanguage, ToyPrompt};

use super::corpus::{Combination, CorpusEntry, PromptCorpus, TextType};

/// Rounds to the six decimals kept on disk.
pub fn quantize(v: f64) -> f64 {
    format!("{v:.6}").parse().expect("formatted float parses")
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn write_list<T>(out: &mut String, items: &[T], mut f: impl FnMut(&mut String, &T)) {
    out.push('[');
    for (i, x) in items.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        f(out, x);
    }
    out.push(']');
}

fn write_prompt(out: &mut String, p: &ToyPrompt) {
    out.push_str("{\"text\":");
    write_list(out, &p.text, |o, w| {
        let _ = write!(o, "{w}");
    });
    let _ = write!(
        out,
        ",\"speaker\":{},\"text_lang\":\"{}\",\"speech_lang\":\"{}\"}}",
        p.speaker,
        p.text_language.as_str(),
        p.speech_language.as_str()
    );
}

fn write_hyper(out: &mut String, h: &SamplingHyper) {
    match *h {
        SamplingHyper::Reference => out.push_str("{\"type\":\"reference\"}"),
        SamplingHyper::Ar {
            temperature,
            top_k,
            top_p,
        } => {
            let _ = write!(
                out,
                "{{\"type\":\"ar\",\"temperature\":{temperature:.6},\"top_k\":{top_k},\"top_p\":{top_p:.6}}}"
            );
        }
        SamplingHyper::Fm { duration_scale, steps } => {
            let _ = write!(out, "{{\"type\":\"fm\",\"duration_scale\":{duration_scale:.6},\"steps\":{steps}}}");
        }
        SamplingHyper::Mgm { temperature, steps } => {
            let _ = write!(out, "{{\"type\":\"mgm\",\"temperature\":{temperature:.6},\"steps\":{steps}}}");
        }
    }
}

fn write_sample(out: &mut String, s: &SpeechSample) {
    let _ = write!(out, "{{\"kind\":\"{}\",", s.kind().as_str());
    match &s.payload {
        SpeechPayload::Tokens(t) => {
            out.push_str("\"tokens\":");
            write_list(out, t, |o, x| {
                let _ = write!(o, "{x}");
            });
        }
        SpeechPayload::Frames(f) => {
            out.push_str("\"frames\":");
            write_list(out, f, |o, x| {
                let _ = write!(o, "[{:.6},{:.6}]", x[0], x[1]);
            });
        }
    }
    out.push_str(",\"hyper\":");
    write_hyper(out, &s.hyper);
    out.push('}');
}

pub fn pair_to_json_line(p: &PreferencePair) -> String {
    let mut out = String::with_capacity(256);
    out.push_str("{\"prompt\":");
    write_prompt(&mut out, &p.prompt);
    out.push_str(",\"winner\":");
    write_sample(&mut out, &p.winner);
    out.push_str(",\"loser\":");
    write_sample(&mut out, &p.loser);
    let _ = write!(
        out,
        ",\"wer_w\":{:.6},\"wer_l\":{:.6},\"provenance\":\"{}\",\"source_models\":",
        p.wer_w,
        p.wer_l,
        p.provenance.as_str()
    );
    write_list(&mut out, &p.source_models, |o, s| o.push_str(&json_str(s)));
    out.push('}');
    out
}

pub fn pairs_to_jsonl(pairs: &[PreferencePair]) -> String {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&pair_to_json_line(p));
        s.push('\n');
    }
    s
}

pub fn corpus_to_jsonl(corpus: &PromptCorpus) -> String {
    let mut s = String::new();
    for e in &corpus.entries {
        s.push_str("{\"prompt\":");
        write_prompt(&mut s, &e.prompt);
        let _ = writeln!(
            s,
            ",\"text_type\":\"{}\",\"combination\":\"{}\"}}",
            e.text_type.as_str(),
            e.combination.as_str()
        );
    }
    s
}

struct Ctx {
    line: usize,
}

impl Ctx {
    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn get<'a>(&self, obj: &'a Map<String, Value>, field: &str) -> Result<&'a Value> {
        obj.get(field).ok_or_else(|| self.err(field, "missing"))
    }

    fn obj<'a>(&self, v: &'a Value, field: &str) -> Result<&'a Map<String, Value>> {
        v.as_object().ok_or_else(|| self.err(field, "expected an object"))
    }

    fn str<'a>(&self, obj: &'a Map<String, Value>, field: &str) -> Result<&'a str> {
        self.get(obj, field)?.as_str().ok_or_else(|| self.err(field, "expected a string"))
    }

    fn u64(&self, v: &Value, field: &str) -> Result<u64> {
        v.as_u64().ok_or_else(|| self.err(field, "expected a non-negative integer"))
    }

    fn u32(&self, v: &Value, field: &str) -> Result<u32> {
        u32::try_from(self.u64(v, field)?).map_err(|_| self.err(field, "integer out of range"))
    }

    fn f64(&self, v: &Value, field: &str) -> Result<f64> {
        v.as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| self.err(field, "expected a finite number"))
    }

    fn array<'a>(&self, v: &'a Value, field: &str) -> Result<&'a Vec<Value>> {
        v.as_array().ok_or_else(|| self.err(field, "expected an array"))
    }
}

fn parse_prompt(c: &Ctx, v: &Value) -> Result<ToyPrompt> {
    let o = c.obj(v, "prompt")?;
    let text = c
        .array(c.get(o, "text")?, "prompt.text")?
        .iter()
        .map(|w| c.u32(w, "prompt.text"))
        .collect::<Result<Vec<_>>>()?;
    if text.is_empty() {
        return Err(c.err("prompt.text", "empty text"));
    }
    let text_lang = c.str(o, "text_lang")?;
    let speech_lang = c.str(o, "speech_lang")?;
    Ok(ToyPrompt {
        text,
        speaker: c.u32(c.get(o, "speaker")?, "prompt.speaker")?,
        text_language: TextLanguage::parse(text_lang)
            .ok_or_else(|| c.err("prompt.text_lang", format!("unknown language `{text_lang}`")))?,
        speech_language: Language::parse(speech_lang)
            .ok_or_else(|| c.err("prompt.speech_lang", format!("unknown language `{speech_lang}`")))?,
    })
}

fn parse_hyper(c: &Ctx, v: &Value, field: &str) -> Result<SamplingHyper> {
    let o = c.obj(v, field)?;
    let ty = c.str(o, "type")?;
    let usize_of = |name: &str| -> Result<usize> {
        usize::try_from(c.u64(c.get(o, name)?, name)?).map_err(|_| c.err(name, "integer out of range"))
    };
    let f = |name: &str| c.f64(c.get(o, name)?, name);
    Ok(match ty {
        "reference" => SamplingHyper::Reference,
        "ar" => SamplingHyper::Ar {
            temperature: f("temperature")?,
            top_k: usize_of("top_k")?,
            top_p: f("top_p")?,
        },
        "fm" => SamplingHyper::Fm {
            duration_scale: f("duration_scale")?,
            steps: usize_of("steps")?,
        },
        "mgm" => SamplingHyper::Mgm {
            temperature: f("temperature")?,
            steps: usize_of("steps")?,
        },
        other => return Err(c.err(&format!("{field}.type"), format!("unknown hyperparameter type `{other}`"))),
    })
}

fn parse_sample(c: &Ctx, v: &Value, field: &str) -> Result<SpeechSample> {
    let o = c.obj(v, field)?;
    let hyper = parse_hyper(c, c.get(o, "hyper")?, &format!("{field}.hyper"))?;
    let payload = match c.str(o, "kind")? {
        "discrete" => SpeechPayload::Tokens(
            c.array(c.get(o, "tokens")?, "tokens")?
                .iter()
                .map(|t| c.u32(t, "tokens"))
                .collect::<Result<_>>()?,
        ),
        "continuous" => SpeechPayload::Frames(
            c.array(c.get(o, "frames")?, "frames")?
                .iter()
                .map(|f| {
                    let xs = c.array(f, "frames")?;
                    if xs.len() != 2 {
                        return Err(c.err("frames", "each frame needs two values"));
                    }
                    Ok::<Frame, Error>([c.f64(&xs[0], "frames")?, c.f64(&xs[1], "frames")?])
                })
                .collect::<Result<_>>()?,
        ),
        other => return Err(c.err(&format!("{field}.kind"), format!("unknown sample kind `{other}`"))),
    };
    Ok(SpeechSample { payload, hyper })
}

fn parse_pair_line(line: usize, text: &str) -> Result<PreferencePair> {
    let c = Ctx { line };
    let v: Value = serde_json::from_str(text).map_err(|e| c.err("<line>", e.to_string()))?;
    let o = c.obj(&v, "<line>")?;
    let provenance = c.str(o, "provenance")?;
    let pair = PreferencePair {
        prompt: parse_prompt(&c, c.get(o, "prompt")?)?,
        winner: parse_sample(&c, c.get(o, "winner")?, "winner")?,
        loser: parse_sample(&c, c.get(o, "loser")?, "loser")?,
        wer_w: c.f64(c.get(o, "wer_w")?, "wer_w")?,
        wer_l: c.f64(c.get(o, "wer_l")?, "wer_l")?,
        provenance: Provenance::parse(provenance)
            .ok_or_else(|| c.err("provenance", format!("unknown provenance `{provenance}`")))?,
        source_models: c
            .array(c.get(o, "source_models")?, "source_models")?
            .iter()
            .map(|s| s.as_str().map(str::to_string).ok_or_else(|| c.err("source_models", "expected strings")))
            .collect::<Result<_>>()?,
    };
    if pair.winner.kind() != pair.loser.kind() {
        return Err(c.err("loser.kind", "winner and loser kinds differ"));
    }
    if pair.wer_w < 0.0 || pair.wer_l < 0.0 {
        return Err(c.err("wer_w", "WER must be non-negative"));
    }
    if pair.source_models.is_empty() {
        return Err(c.err("source_models", "at least one model id"));
    }
    Ok(pair)
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_pairs_jsonl(text: &str) -> Result<Vec<PreferencePair>> {
    lines(text).map(|(n, l)| parse_pair_line(n, l)).collect()
}

pub fn parse_corpus_jsonl(text: &str) -> Result<PromptCorpus> {
    let entries = lines(text)
        .map(|(line, l)| {
            let c = Ctx { line };
            let v: Value = serde_json::from_str(l).map_err(|e| c.err("<line>", e.to_string()))?;
            let o = c.obj(&v, "<line>")?;
            let tt = c.str(o, "text_type")?;
            let comb = c.str(o, "combination")?;
            Ok(CorpusEntry {
                prompt: parse_prompt(&c, c.get(o, "prompt")?)?,
                text_type: TextType::parse(tt).ok_or_else(|| c.err("text_type", format!("unknown text type `{tt}`")))?,
                combination: Combination::parse(comb)
                    .ok_or_else(|| c.err("combination", format!("unknown combination `{comb}`")))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PromptCorpus { entries })
}

pub fn save_pairs(pairs: &[PreferencePair], path: &Path) -> Result<()> {
    std::fs::write(path, pairs_to_jsonl(pairs)).map_err(|e| Error::io(path, e))
}

pub fn load_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    parse_pairs_jsonl(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_corpus(corpus: &PromptCorpus, path: &Path) -> Result<()> {
    std::fs::write(path, corpus_to_jsonl(corpus)).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: &Path) -> Result<PromptCorpus> {
    parse_corpus_jsonl(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// The value a pair takes after a write/read cycle.
pub fn quantize_pair(p: &PreferencePair) -> PreferencePair {
    fn hyper(h: SamplingHyper) -> SamplingHyper {
        match h {
            SamplingHyper::Reference => h,
            SamplingHyper::Ar {
                temperature,
                top_k,
                top_p,
            } => SamplingHyper::Ar {
                temperature: quantize(temperature),
                top_k,
                top_p: quantize(top_p),
            },
            SamplingHyper::Fm { duration_scale, steps } => SamplingHyper::Fm {
                duration_scale: quantize(duration_scale),
                steps,
            },
            SamplingHyper::Mgm { temperature, steps } => SamplingHyper::Mgm {
                temperature: quantize(temperature),
                steps,
            },
        }
    }
    fn sample(s: &SpeechSample) -> SpeechSample {
        let payload = match &s.payload {
            SpeechPayload::Tokens(t) => SpeechPayload::Tokens(t.clone()),
            SpeechPayload::Frames(f) => SpeechPayload::Frames(f.iter().map(|x| [quantize(x[0]), quantize(x[1])]).collect()),
        };
        SpeechSample {
            payload,
            hyper: hyper(s.hyper),
        }
    }
    PreferencePair {
        prompt: p.prompt.clone(),
        winner: sample(&p.winner),
        loser: sample(&p.loser),
        wer_w: quantize(p.wer_w),
        wer_l: quantize(p.wer_l),
        provenance: p.provenance,
        source_models: p.source_models.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> PreferencePair {
        PreferencePair {
            prompt: ToyPrompt {
                text: vec![1, 40, 2],
                speaker: 5,
                text_language: TextLanguage::L1,
                speech_language: Language::L2,
            },
            winner: SpeechSample::frames(
                vec![[0.5, -0.25], [1.0 / 3.0, 2.0]],
                SamplingHyper::Fm {
                    duration_scale: 0.8,
                    steps: 32,
                },
            ),
            loser: SpeechSample::frames(vec![[0.0, 0.0]], SamplingHyper::Reference),
            wer_w: 100.0 / 3.0,
            wer_l: 50.0,
            provenance: Provenance::Perturbed,
            source_models: vec!["a \"quoted\" id".into()],
        }
    }

    #[test]
    fn round_trip_up_to_quantization() {
        let p = pair();
        let text = pairs_to_jsonl(std::slice::from_ref(&p));
        let back = parse_pairs_jsonl(&text).unwrap();
        assert_eq!(back, vec![quantize_pair(&p)]);
        assert_eq!(pairs_to_jsonl(&back), text);
        assert!(parse_pairs_jsonl("").unwrap().is_empty());
    }

    #[test]
    fn errors_name_line_and_field() {
        let good = pair_to_json_line(&pair());
        let bad = good.replace(",\"provenance\":\"perturbed\"", "");
        let text = format!("{good}\n{bad}\n");
        match parse_pairs_jsonl(&text) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "provenance");
            }
            other => panic!("{other:?}"),
        }
        let bad = good.replace("\"speaker\":5", "\"speaker\":-5");
        assert!(matches!(parse_pairs_jsonl(&bad), Err(Error::Parse { field, .. }) if field == "prompt.speaker"));
        assert!(parse_pairs_jsonl("{").is_err());
    }

    #[test]
    fn corpus_round_trip() {
        let corpus = PromptCorpus {
            entries: vec![CorpusEntry {
                prompt: pair().prompt,
                text_type: TextType::PunctuationPerturbed,
                combination: Combination::L1ToL2,
            }],
        };
        let text = corpus_to_jsonl(&corpus);
        assert_eq!(parse_corpus_jsonl(&text).unwrap(), corpus);
    }
}
