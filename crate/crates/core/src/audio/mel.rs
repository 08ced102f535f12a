use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::wav::{PcmSignal, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const N_MELS: usize = 40;
pub const WINDOW: usize = 400;
pub const HOP: usize = 160;
pub const N_FFT: usize = 512;
/// Minimum signal length accepted by [`log_mel`] (0.1 s).
pub const MIN_SAMPLES: usize = 1_600;

/// Natural-log energy floor, `ln(1e-10)`.
pub fn log_floor() -> f32 {
    (1e-10f64).ln() as f32
}

/// `T × D` row-major log-mel energies (D = 40 for extracted features).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dims: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dims: usize, data: Vec<f32>) -> Result<Self> {
        if frames * dims != data.len() {
            return Err(Error::dim(
                "feature_matrix",
                format!("{frames}x{dims} needs {} values, got {}", frames * dims, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "feature matrix".into(),
            });
        }
        Ok(FeatureMatrix { frames, dims, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filter weight of band `m` at frequency `f` (HTK mel spacing over 0–8 kHz).
pub fn mel_filter_weight(m: usize, f: f64) -> f64 {
    let top = hz_to_mel(f64::from(SAMPLE_RATE) / 2.0);
    let edge = |i: usize| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64);
    let (lo, mid, hi) = (edge(m), edge(m + 1), edge(m + 2));
    if f <= lo || f >= hi {
        0.0
    } else if f <= mid {
        (f - lo) / (mid - lo)
    } else {
        (hi - f) / (hi - mid)
    }
}

/// `N_MELS × (N_FFT/2 + 1)` filterbank sampled at FFT bin frequencies.
fn filterbank() -> Vec<Vec<f64>> {
    let bins = N_FFT / 2 + 1;
    let bin_hz = f64::from(SAMPLE_RATE) / N_FFT as f64;
    (0..N_MELS)
        .map(|m| (0..bins).map(|k| mel_filter_weight(m, k as f64 * bin_hz)).collect())
        .collect()
}

/// Periodic Hann window.
fn hann() -> Vec<f64> {
    (0..WINDOW)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / WINDOW as f64).cos())
        .collect()
}

pub fn frame_count(n_samples: usize) -> usize {
    1 + (n_samples - WINDOW) / HOP
}

/// 25 ms Hann frames every 10 ms, 512-point power spectrum, 40 mel bands,
/// natural-log energies clamped at [`log_floor`].
pub fn log_mel(signal: &PcmSignal) -> Result<FeatureMatrix> {
    if signal.sample_rate != SAMPLE_RATE {
        return Err(Error::format(
            "sample_rate",
            format!("expected {SAMPLE_RATE}, got {}", signal.sample_rate),
        ));
    }
    let n = signal.samples.len();
    if n < MIN_SAMPLES {
        return Err(Error::Length(format!(
            "signal has {n} samples; at least {MIN_SAMPLES} (0.1 s) required"
        )));
    }
    let frames = frame_count(n);
    let window = hann();
    let bank = filterbank();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);
    let floor = 1e-10f64;
    let mut data = Vec::with_capacity(frames * N_MELS);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut power = vec![0.0f64; N_FFT / 2 + 1];
    for t in 0..frames {
        let start = t * HOP;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < WINDOW {
                Complex::new(f64::from(signal.samples[start + i]) * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for filt in &bank {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            data.push(e.max(floor).ln() as f32);
        }
    }
    FeatureMatrix::new(frames, N_MELS, data)
}
