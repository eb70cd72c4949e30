//! Optional HTTP text perturber with a rule-based fallback.
//!
//! Request: `POST <url>` with `{"text": [word ids], "mode": "pronunciation" | "punctuation"}`.
//! Response: `{"text": [word ids]}`. Any transport, status or decoding
//! failure, or a response that fails validation, falls back to the local
//! perturber and logs the substitution.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::pairgen::TextPerturber;
use crate::toymodels::{ToyDims, Word};

pub const CLIENT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    Pronunciation,
    Punctuation,
}

#[derive(Serialize)]
struct Request<'a> {
    text: &'a [Word],
    mode: PerturbMode,
}

#[derive(Deserialize)]
struct Response {
    text: Vec<Word>,
}

pub struct ExternalPerturber<P> {
    url: String,
    mode: PerturbMode,
    dims: ToyDims,
    client: reqwest::blocking::Client,
    fallback: P,
}

impl<P: TextPerturber> ExternalPerturber<P> {
    pub fn new(url: impl Into<String>, mode: PerturbMode, dims: ToyDims, fallback: P) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(CLIENT_TIMEOUT)
            .build()
            .map_err(|e| Error::contract(format!("HTTP client setup failed: {e}")))?;
        Ok(Self {
            url: url.into(),
            mode,
            dims,
            client,
            fallback,
        })
    }

    fn remote(&self, text: &[Word]) -> std::result::Result<Vec<Word>, String> {
        let resp = self
            .client
            .post(&self.url)
            .json(&Request { text, mode: self.mode })
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("status {}", resp.status()));
        }
        let body: Response = resp.json().map_err(|e| e.to_string())?;
        if body.text.is_empty() || body.text.iter().any(|&w| w as usize >= self.dims.text_symbols()) {
            return Err("response text is empty or outside the vocabulary".into());
        }
        Ok(body.text)
    }
}

impl<P: TextPerturber> TextPerturber for ExternalPerturber<P> {
    fn name(&self) -> &str {
        "external"
    }

    fn perturb(&self, text: &[Word], rng: &mut RngStream) -> Vec<Word> {
        // The fallback always consumes its draws so results stay aligned
        // whether or not the remote call succeeds.
        let local = self.fallback.perturb(text, rng);
        match self.remote(text) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("external perturber at {} failed ({e}); using {}", self.url, self.fallback.name());
                local
            }
        }
    }
}
