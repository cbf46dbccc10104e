//! Per-channel short-time Fourier transform.

use std::f64::consts::PI;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::MultiChannelSegment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(Window::Hann),
            "rectangular" | "rect" => Ok(Window::Rectangular),
            other => Err(Error::InvalidInput(format!("unknown window '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 512,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize, window: Window) -> Result<Self> {
        let cfg = Self { n_fft, hop, window };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return Err(Error::InvalidInput(format!(
                "n_fft must be a power of two >= 2, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::InvalidInput(format!(
                "hop must be in 1..={}, got {}",
                self.n_fft, self.hop
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of full frames in `len` samples; partial tail frames are dropped.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            (len - self.n_fft) / self.hop + 1
        }
    }

    pub fn bin_frequency(&self, bin: usize, sample_rate: u32) -> f64 {
        bin as f64 * sample_rate as f64 / self.n_fft as f64
    }
}

/// One-sided STFT, `N × F × T`, stored channel-major then bin then frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    values: Vec<Complex64>,
    n_channels: usize,
    n_frames: usize,
    freqs_hz: Vec<f64>,
    sample_rate: u32,
    config: StftConfig,
}

impl ComplexSpectrogram {
    /// Builds a spectrogram from explicit values laid out `[channel][bin][frame]`.
    pub fn from_values(
        values: Vec<Complex64>,
        n_channels: usize,
        n_frames: usize,
        sample_rate: u32,
        config: StftConfig,
    ) -> Result<Self> {
        config.validate()?;
        let f = config.n_bins();
        if n_channels == 0 || n_frames == 0 || values.len() != n_channels * f * n_frames {
            return Err(Error::Shape(format!(
                "{} values for {n_channels} channels × {f} bins × {n_frames} frames",
                values.len()
            )));
        }
        let freqs_hz = (0..f).map(|k| config.bin_frequency(k, sample_rate)).collect();
        Ok(Self {
            values,
            n_channels,
            n_frames,
            freqs_hz,
            sample_rate,
            config,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_bins(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn freqs_hz(&self) -> &[f64] {
        &self.freqs_hz
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn get(&self, channel: usize, bin: usize, frame: usize) -> Complex64 {
        self.values[(channel * self.n_bins() + bin) * self.n_frames + frame]
    }

    /// The `N` channel values at one time-frequency point.
    pub fn snapshot(&self, bin: usize, frame: usize) -> Vec<Complex64> {
        (0..self.n_channels).map(|i| self.get(i, bin, frame)).collect()
    }

    /// Bin index whose center frequency equals `f_hz`.
    pub fn bin_of(&self, f_hz: f64) -> Option<usize> {
        let k = (f_hz * self.config.n_fft as f64 / self.sample_rate as f64).round();
        if k < 0.0 || k as usize >= self.n_bins() {
            return None;
        }
        let k = k as usize;
        ((self.freqs_hz[k] - f_hz).abs() <= 1e-9 * f_hz.abs().max(1.0)).then_some(k)
    }
}

fn stft_channel(x: &[f64], cfg: &StftConfig, window: &[f64], n_frames: usize) -> Vec<Complex64> {
    let n_bins = cfg.n_bins();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
    let mut out = vec![Complex64::new(0.0, 0.0); n_bins * n_frames];
    for t in 0..n_frames {
        let frame = &x[t * cfg.hop..t * cfg.hop + cfg.n_fft];
        for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(window) {
            *b = Complex64::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, v) in buf[..n_bins].iter().enumerate() {
            out[k * n_frames + t] = *v;
        }
    }
    out
}

/// Frame `t` covers samples `[t·hop, t·hop + n_fft)`; the unnormalized DFT of each
/// windowed frame is kept for bins `0..=n_fft/2`.
pub fn stft(seg: &MultiChannelSegment, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if seg.len() < cfg.n_fft {
        return Err(Error::InvalidInput(format!(
            "segment of {} samples is shorter than one {}-sample frame",
            seg.len(),
            cfg.n_fft
        )));
    }
    let n_frames = cfg.frame_count(seg.len());
    let window = cfg.window.coefficients(cfg.n_fft);
    let per_channel: Vec<Vec<Complex64>> = seg
        .channels()
        .par_iter()
        .map(|x| stft_channel(x, cfg, &window, n_frames))
        .collect();
    ComplexSpectrogram::from_values(
        per_channel.concat(),
        seg.channel_count(),
        n_frames,
        seg.sample_rate(),
        *cfg,
    )
}
