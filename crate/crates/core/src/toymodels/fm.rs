use super::{aligned_index, Frame, SamplingHyper, SpeechSample, ToyDims, ToyPrompt, FRAME_DIM};
use crate::error::{Error, Result};
use crate::numerics::{DenseArray, RngStream};

pub const DEFAULT_FM_STEPS: usize = 32;

const W_IN: usize = 0;
const EMB_WORD: usize = 1;
const EMB_SPK: usize = 2;
const B_IN: usize = 3;
const W_OUT: usize = 4;
const B_OUT: usize = 5;
/// `[y_t.x, y_t.y, t]`
const INPUTS: usize = FRAME_DIM + 1;

/// Two-layer tanh perceptron velocity field `v(y_t, t, condition)`.
///
/// The condition of a frame is the text symbol it is aligned with plus the
/// prompt speaker; both enter as learned biases on the hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFmModel {
    hidden: usize,
    text_symbols: usize,
    n_speakers: usize,
    params: Vec<DenseArray>,
}

impl ToyFmModel {
    fn zeros(dims: &ToyDims) -> Self {
        let h = dims.hidden;
        Self {
            hidden: h,
            text_symbols: dims.text_symbols(),
            n_speakers: dims.n_speakers,
            params: vec![
                DenseArray::zeros(&[h, INPUTS]),
                DenseArray::zeros(&[dims.text_symbols(), h]),
                DenseArray::zeros(&[dims.n_speakers, h]),
                DenseArray::zeros(&[h]),
                DenseArray::zeros(&[FRAME_DIM, h]),
                DenseArray::zeros(&[FRAME_DIM]),
            ],
        }
    }

    /// Random hidden layer with the output layer scaled by `out_scale`.
    pub fn new(dims: &ToyDims, out_scale: f64, rng: &mut RngStream) -> Self {
        let mut m = Self::zeros(dims);
        let h = dims.hidden as f64;
        m.params[W_IN] = DenseArray::randn(&[dims.hidden, INPUTS], 1.0, rng);
        m.params[EMB_WORD] = DenseArray::randn(&[dims.text_symbols(), dims.hidden], 1.0, rng);
        m.params[EMB_SPK] = DenseArray::randn(&[dims.n_speakers, dims.hidden], 0.5, rng);
        m.params[W_OUT] = DenseArray::randn(&[FRAME_DIM, dims.hidden], out_scale / h.sqrt(), rng);
        m
    }

    /// Output weights and bias zeroed: the field is identically zero.
    pub fn with_zero_output(dims: &ToyDims, rng: &mut RngStream) -> Self {
        Self::new(dims, 0.0, rng)
    }

    pub fn from_params(params: Vec<DenseArray>) -> Result<Self> {
        if params.len() != 6 {
            return Err(Error::Checkpoint("FM model needs 6 arrays".into()));
        }
        let s: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
        let h = s[W_IN].first().copied().unwrap_or(0);
        let ok = s[W_IN] == [h, INPUTS]
            && s[EMB_WORD].len() == 2
            && s[EMB_WORD][1] == h
            && s[EMB_SPK].len() == 2
            && s[EMB_SPK][1] == h
            && s[B_IN] == [h]
            && s[W_OUT] == [FRAME_DIM, h]
            && s[B_OUT] == [FRAME_DIM];
        if !ok {
            return Err(Error::Checkpoint(format!("inconsistent FM shapes {s:?}")));
        }
        Ok(Self {
            hidden: h,
            text_symbols: s[EMB_WORD][0],
            n_speakers: s[EMB_SPK][0],
            params,
        })
    }

    pub fn params(&self) -> &[DenseArray] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [DenseArray] {
        &mut self.params
    }

    fn check_prompt(&self, prompt: &ToyPrompt) -> Result<()> {
        if prompt.text.is_empty() {
            return Err(Error::contract("prompt text is empty"));
        }
        if prompt.speaker as usize >= self.n_speakers {
            return Err(Error::contract(format!("speaker {} out of range", prompt.speaker)));
        }
        if let Some(w) = prompt.text.iter().find(|&&w| w as usize >= self.text_symbols) {
            return Err(Error::contract(format!("word id {w} outside vocabulary")));
        }
        Ok(())
    }

    /// Hidden activations for one frame.
    fn hidden(&self, y: &Frame, t: f64, word: u32, speaker: u32) -> Vec<f64> {
        let h = self.hidden;
        let w_in = self.params[W_IN].data();
        let ew = &self.params[EMB_WORD].data()[word as usize * h..(word as usize + 1) * h];
        let es = &self.params[EMB_SPK].data()[speaker as usize * h..(speaker as usize + 1) * h];
        let b = self.params[B_IN].data();
        (0..h)
            .map(|k| {
                let r = &w_in[k * INPUTS..(k + 1) * INPUTS];
                (r[0] * y[0] + r[1] * y[1] + r[2] * t + ew[k] + es[k] + b[k]).tanh()
            })
            .collect()
    }

    fn output(&self, act: &[f64]) -> Frame {
        let w = self.params[W_OUT].data();
        let b = self.params[B_OUT].data();
        let h = self.hidden;
        let mut v = [b[0], b[1]];
        for (d, vd) in v.iter_mut().enumerate() {
            *vd += w[d * h..(d + 1) * h].iter().zip(act).map(|(a, b)| a * b).sum::<f64>();
        }
        v
    }

    fn frame_velocity(&self, y: &Frame, t: f64, word: u32, speaker: u32) -> Frame {
        self.output(&self.hidden(y, t, word, speaker))
    }

    /// Adds `sum_j dv_j · dv(y_j)/dparams` into `grads`.
    pub fn accumulate_velocity_grad(
        &self,
        y_t: &[Frame],
        t: f64,
        prompt: &ToyPrompt,
        dv: &[Frame],
        grads: &mut [DenseArray],
    ) -> Result<()> {
        self.check_prompt(prompt)?;
        if y_t.len() != dv.len() || y_t.is_empty() {
            return Err(Error::contract("velocity cotangent must match frame count"));
        }
        let h = self.hidden;
        let (m, n) = (y_t.len(), prompt.text.len());
        let w_out = self.params[W_OUT].data().to_vec();
        for (j, (y, g)) in y_t.iter().zip(dv).enumerate() {
            let word = prompt.text[aligned_index(j, m, n)] as usize;
            let act = self.hidden(y, t, word as u32, prompt.speaker);
            for d in 0..FRAME_DIM {
                grads[B_OUT].data_mut()[d] += g[d];
                for k in 0..h {
                    grads[W_OUT].data_mut()[d * h + k] += g[d] * act[k];
                }
            }
            let z = [y[0], y[1], t];
            for k in 0..h {
                let dh = g[0] * w_out[k] + g[1] * w_out[h + k];
                let da = dh * (1.0 - act[k] * act[k]);
                for (i, zi) in z.iter().enumerate() {
                    grads[W_IN].data_mut()[k * INPUTS + i] += da * zi;
                }
                grads[EMB_WORD].data_mut()[word * h + k] += da;
                grads[EMB_SPK].data_mut()[prompt.speaker as usize * h + k] += da;
                grads[B_IN].data_mut()[k] += da;
            }
        }
        Ok(())
    }
}

/// Velocity at every frame of `y_t`. Frames are aligned to the prompt text by
/// uniform stretching, so any positive frame count is accepted.
pub fn fm_velocity(model: &ToyFmModel, y_t: &[Frame], t: f64, prompt: &ToyPrompt) -> Result<Vec<Frame>> {
    model.check_prompt(prompt)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::contract(format!("time {t} outside [0, 1]")));
    }
    if y_t.is_empty() {
        return Err(Error::contract("no frames"));
    }
    let (m, n) = (y_t.len(), prompt.text.len());
    Ok(y_t
        .iter()
        .enumerate()
        .map(|(j, y)| model.frame_velocity(y, t, prompt.text[aligned_index(j, m, n)], prompt.speaker))
        .collect())
}

/// Linear interpolation `(1 - t) y0 + t y1`.
pub fn interpolate(y0: &[Frame], y1: &[Frame], t: f64) -> Vec<Frame> {
    y0.iter()
        .zip(y1)
        .map(|(a, b)| [(1.0 - t) * a[0] + t * b[0], (1.0 - t) * a[1] + t * b[1]])
        .collect()
}

pub fn standard_normal_frames(count: usize, rng: &mut RngStream) -> Vec<Frame> {
    (0..count).map(|_| [rng.normal(), rng.normal()]).collect()
}

/// Frame count produced for a text of `text_len` symbols.
pub fn frame_count(duration_scale: f64, text_len: usize) -> usize {
    ((duration_scale * text_len as f64).round() as usize).max(1)
}

/// Euler integration of the velocity field from Gaussian noise.
pub fn fm_sample(
    model: &ToyFmModel,
    prompt: &ToyPrompt,
    duration_scale: f64,
    steps: usize,
    rng: &mut RngStream,
) -> Result<SpeechSample> {
    model.check_prompt(prompt)?;
    if steps == 0 {
        return Err(Error::contract("at least one integration step"));
    }
    if !(duration_scale > 0.0 && duration_scale.is_finite()) {
        return Err(Error::contract("duration scale must be positive"));
    }
    let m = frame_count(duration_scale, prompt.text.len());
    let mut y = standard_normal_frames(m, rng);
    let dt = 1.0 / steps as f64;
    for k in 0..steps {
        let t = k as f64 * dt;
        let v = fm_velocity(model, &y, t, prompt)?;
        for (yj, vj) in y.iter_mut().zip(&v) {
            yj[0] += dt * vj[0];
            yj[1] += dt * vj[1];
        }
    }
    if y.iter().any(|f| !f[0].is_finite() || !f[1].is_finite()) {
        return Err(Error::Sampling("flow integration diverged".into()));
    }
    Ok(SpeechSample::frames(
        y,
        SamplingHyper::Fm {
            duration_scale,
            steps,
        },
    ))
}
