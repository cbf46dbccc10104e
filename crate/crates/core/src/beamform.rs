//! Narrowband directional power under delay-and-sum, MVDR and SRP-PHAT processors.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AngularGrid, SteeringField};
use crate::linalg::{CMatrix, Cholesky};
use crate::stft::ComplexSpectrogram;

pub const DEFAULT_DIAG_LOAD: f64 = 1e-3;
pub const DEFAULT_PHAT_EPS: f64 = 1e-8;

/// Spatial processor used to scan the grid.
///
/// `diag_load_rel` scales the loading by `trace(R)/N`. `eps` is relative to the
/// largest channel magnitude of each time-frequency snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BeamformerKind {
    DelayAndSum,
    Mvdr { diag_load_rel: f64 },
    SrpPhat { eps: f64 },
}

impl BeamformerKind {
    pub fn mvdr() -> Self {
        BeamformerKind::Mvdr {
            diag_load_rel: DEFAULT_DIAG_LOAD,
        }
    }

    pub fn srp_phat() -> Self {
        BeamformerKind::SrpPhat {
            eps: DEFAULT_PHAT_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BeamformerKind::DelayAndSum => Ok(()),
            BeamformerKind::Mvdr { diag_load_rel } if diag_load_rel > 0.0 && diag_load_rel.is_finite() => Ok(()),
            BeamformerKind::SrpPhat { eps } if eps > 0.0 && eps.is_finite() => Ok(()),
            other => Err(Error::InvalidInput(format!(
                "beamformer parameter must be positive and finite: {other:?}"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            BeamformerKind::DelayAndSum => "das",
            BeamformerKind::Mvdr { .. } => "mvdr",
            BeamformerKind::SrpPhat { .. } => "srp-phat",
        }
    }
}

impl Default for BeamformerKind {
    fn default() -> Self {
        BeamformerKind::DelayAndSum
    }
}

impl fmt::Display for BeamformerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BeamformerKind {
    type Err = Error;

    /// `das`, `mvdr` or `srp-phat`, with default parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "das" | "delay-and-sum" => Ok(BeamformerKind::DelayAndSum),
            "mvdr" => Ok(BeamformerKind::mvdr()),
            "srp-phat" | "srp" => Ok(BeamformerKind::srp_phat()),
            other => Err(Error::InvalidInput(format!("unknown beamformer '{other}'"))),
        }
    }
}

/// Power response `[f][t][az][el]`, nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrowbandPowerField {
    values: Vec<f64>,
    freqs_hz: Vec<f64>,
    n_frames: usize,
    grid: AngularGrid,
    kind: BeamformerKind,
    source_id: String,
}

impl NarrowbandPowerField {
    pub fn from_values(
        values: Vec<f64>,
        freqs_hz: Vec<f64>,
        n_frames: usize,
        grid: AngularGrid,
        kind: BeamformerKind,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if values.len() != freqs_hz.len() * n_frames * grid.len() {
            return Err(Error::Shape(format!(
                "{} values for {} freqs × {n_frames} frames × {} grid points",
                values.len(),
                freqs_hz.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("power must be finite and nonnegative".into()));
        }
        Ok(Self {
            values,
            freqs_hz,
            n_frames,
            grid,
            kind,
            source_id: source_id.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn freqs_hz(&self) -> &[f64] {
        &self.freqs_hz
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn grid(&self) -> &AngularGrid {
        &self.grid
    }

    pub fn kind(&self) -> BeamformerKind {
        self.kind
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn get(&self, f: usize, t: usize, a: usize, e: usize) -> f64 {
        let (na, ne) = (self.grid.n_azimuths(), self.grid.n_elevations());
        self.values[((f * self.n_frames + t) * na + a) * ne + e]
    }
}

/// Per-frequency covariance matrices of one segment.
#[derive(Debug, Clone)]
pub struct SpatialCovariance {
    pub freqs_hz: Vec<f64>,
    pub matrices: Vec<CMatrix>,
}

/// `|a^H x|²`.
#[inline]
pub fn steered_power(a: &[Complex64], x: &[Complex64]) -> f64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (s, v) in a.iter().zip(x) {
        // conj(s) * v
        re += s.re * v.re + s.im * v.im;
        im += s.re * v.im - s.im * v.re;
    }
    re * re + im * im
}

/// `(1/T) Σ_t X(f,t) X(f,t)^H + δ I` with `δ = diag_load_rel · trace(R₀)/N`.
pub fn estimate_covariance(x: &ComplexSpectrogram, bin: usize, diag_load_rel: f64) -> CMatrix {
    let snaps: Vec<Vec<Complex64>> = (0..x.n_frames()).map(|t| x.snapshot(bin, t)).collect();
    covariance_of(&snaps, diag_load_rel)
}

pub(crate) fn covariance_of(snaps: &[Vec<Complex64>], diag_load_rel: f64) -> CMatrix {
    let n = snaps[0].len();
    let mut r = CMatrix::zeros(n);
    for s in snaps {
        for i in 0..n {
            for j in 0..n {
                r[(i, j)] += s[i] * s[j].conj();
            }
        }
    }
    let scale = 1.0 / snaps.len() as f64;
    for i in 0..n {
        for j in 0..n {
            r[(i, j)] *= scale;
        }
    }
    let delta = diag_load_rel * r.trace().re / n as f64;
    for i in 0..n {
        r[(i, i)] += delta;
    }
    r
}

/// MVDR weights `w = R⁻¹a / (a^H R⁻¹ a)`.
pub fn mvdr_weights(r: &CMatrix, a: &[Complex64]) -> Result<Vec<Complex64>> {
    let ch = r.cholesky()?;
    let ra = ch.solve(a);
    let denom: Complex64 = a.iter().zip(&ra).map(|(s, v)| s.conj() * v).sum();
    Ok(ra.into_iter().map(|v| v / denom).collect())
}

/// Everything the grid scan needs for one segment, resolved against a steering field.
pub(crate) enum Prepared {
    /// Snapshots `[f_sel][t][mic]`, PHAT-normalized for SRP-PHAT.
    Snapshots { data: Vec<Complex64> },
    /// One Cholesky factor per selected frequency.
    Mvdr { factors: Vec<Cholesky> },
}

pub(crate) struct PreparedSegment {
    pub kind: BeamformerKind,
    pub n_frames: usize,
    pub n_mics: usize,
    pub inner: Prepared,
}

impl PreparedSegment {
    pub fn new(x: &ComplexSpectrogram, s: &SteeringField, kind: BeamformerKind) -> Result<Self> {
        kind.validate()?;
        let n = x.n_channels();
        if n != s.channel_count() {
            return Err(Error::Shape(format!(
                "spectrogram has {n} channels, steering field {}",
                s.channel_count()
            )));
        }
        let bins = s
            .frequencies()
            .iter()
            .map(|&f| {
                x.bin_of(f).ok_or_else(|| {
                    Error::Shape(format!("steering frequency {f} Hz is not an STFT bin"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let t_len = x.n_frames();
        let inner = match kind {
            BeamformerKind::DelayAndSum | BeamformerKind::SrpPhat { .. } => {
                let mut data = Vec::with_capacity(bins.len() * t_len * n);
                for &bin in &bins {
                    for t in 0..t_len {
                        let mut snap = x.snapshot(bin, t);
                        if let BeamformerKind::SrpPhat { eps } = kind {
                            phat_normalize(&mut snap, eps);
                        }
                        data.extend(snap);
                    }
                }
                Prepared::Snapshots { data }
            }
            BeamformerKind::Mvdr { diag_load_rel } => {
                let factors = bins
                    .iter()
                    .map(|&bin| estimate_covariance(x, bin, diag_load_rel).cholesky())
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::Numerical(format!("MVDR covariance: {e}")))?;
                Prepared::Mvdr { factors }
            }
        };
        Ok(Self {
            kind,
            n_frames: t_len,
            n_mics: n,
            inner,
        })
    }

    pub fn from_covariance(cov: &SpatialCovariance, n_frames: usize, kind: BeamformerKind) -> Result<Self> {
        let factors = cov
            .matrices
            .iter()
            .map(|m| m.cholesky())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            n_frames,
            n_mics: cov.matrices.first().map_or(0, |m| m.dim()),
            inner: Prepared::Mvdr { factors },
        })
    }

    /// Power at selected frequency `fi` and frame `t` for steering vector `a`.
    #[inline]
    pub fn power(&self, fi: usize, t: usize, a: &[Complex64]) -> f64 {
        match &self.inner {
            Prepared::Snapshots { data } => {
                let start = (fi * self.n_frames + t) * self.n_mics;
                steered_power(a, &data[start..start + self.n_mics])
            }
            Prepared::Mvdr { factors } => 1.0 / factors[fi].inverse_quadratic_form(a),
        }
    }

    /// Powers for frames `0..T` at one (frequency, direction). MVDR is time-invariant.
    #[inline]
    pub fn for_each_frame(&self, fi: usize, a: &[Complex64], mut sink: impl FnMut(f64)) {
        match &self.inner {
            Prepared::Snapshots { .. } => {
                for t in 0..self.n_frames {
                    sink(self.power(fi, t, a));
                }
            }
            Prepared::Mvdr { factors } => {
                let p = 1.0 / factors[fi].inverse_quadratic_form(a);
                for _ in 0..self.n_frames {
                    sink(p);
                }
            }
        }
    }
}

/// `x_i ← x_i / (|x_i| + eps · max_j |x_j|)`; an all-zero snapshot stays zero.
pub fn phat_normalize(snap: &mut [Complex64], eps: f64) {
    let peak = snap.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return;
    }
    let floor = eps * peak;
    for z in snap.iter_mut() {
        *z /= z.norm() + floor;
    }
}

fn scan(prep: &PreparedSegment, s: &SteeringField, x_source: &str) -> Result<NarrowbandPowerField> {
    let grid = s.grid().clone();
    let (nf, na, ne, _) = s.shape();
    let t_len = prep.n_frames;
    let block = t_len * na * ne;
    let mut values = vec![0.0; nf * block];
    values.par_chunks_mut(block).enumerate().for_each(|(fi, out)| {
        for a in 0..na {
            for e in 0..ne {
                let steer = s.vector(fi, a, e);
                let mut t = 0;
                prep.for_each_frame(fi, steer, |p| {
                    out[(t * na + a) * ne + e] = p;
                    t += 1;
                });
            }
        }
    });
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite power {bad}")));
    }
    NarrowbandPowerField::from_values(
        values,
        s.frequencies().to_vec(),
        t_len,
        grid,
        prep.kind,
        x_source,
    )
}

/// Delay-and-sum pseudo-power `|a^H X(f,t)|²`.
pub fn das_power(x: &ComplexSpectrogram, s: &SteeringField) -> Result<NarrowbandPowerField> {
    let prep = PreparedSegment::new(x, s, BeamformerKind::DelayAndSum)?;
    scan(&prep, s, "")
}

/// Capon spectrum `1 / Re(a^H R(f)⁻¹ a)` from one loaded covariance per frequency,
/// broadcast over the frames of the segment.
pub fn mvdr_power(x: &ComplexSpectrogram, s: &SteeringField, diag_load_rel: f64) -> Result<NarrowbandPowerField> {
    let prep = PreparedSegment::new(x, s, BeamformerKind::Mvdr { diag_load_rel })?;
    scan(&prep, s, "")
}

/// Capon spectrum from explicitly supplied covariance matrices (one per steering frequency).
pub fn mvdr_power_from_covariance(cov: &SpatialCovariance, s: &SteeringField, n_frames: usize) -> Result<NarrowbandPowerField> {
    if cov.matrices.len() != s.frequencies().len() {
        return Err(Error::Shape("one covariance matrix per steering frequency required".into()));
    }
    if cov.matrices.iter().any(|m| m.dim() != s.channel_count()) {
        return Err(Error::Shape("covariance size differs from channel count".into()));
    }
    let kind = BeamformerKind::Mvdr { diag_load_rel: 0.0 };
    let prep = PreparedSegment::from_covariance(cov, n_frames, kind)?;
    scan(&prep, s, "")
}

/// Steered power of PHAT-weighted snapshots `X_i / (|X_i| + eps·max_j|X_j|)`.
pub fn srp_phat_power(x: &ComplexSpectrogram, s: &SteeringField, eps: f64) -> Result<NarrowbandPowerField> {
    let prep = PreparedSegment::new(x, s, BeamformerKind::SrpPhat { eps })?;
    scan(&prep, s, "")
}

/// Dispatches on `kind`.
pub fn narrowband_power(x: &ComplexSpectrogram, s: &SteeringField, kind: BeamformerKind) -> Result<NarrowbandPowerField> {
    let prep = PreparedSegment::new(x, s, kind)?;
    scan(&prep, s, "")
}
