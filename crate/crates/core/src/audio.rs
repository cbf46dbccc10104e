//! Multi-channel PCM segments and WAV I/O.

use std::path::Path;

use hound::{SampleFormat, WavSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N × T_s` real samples, channel-major, nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSegment {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
    source_id: String,
}

impl MultiChannelSegment {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidInput("segment has no channels".into()));
        }
        let len = channels[0].len();
        if len == 0 {
            return Err(Error::InvalidInput("segment has no samples".into()));
        }
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("samples must be finite".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        Ok(Self {
            channels,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    /// Samples `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize, source_id: impl Into<String>) -> Self {
        Self {
            channels: self.channels.iter().map(|c| c[start..end].to_vec()).collect(),
            sample_rate: self.sample_rate,
            source_id: source_id.into(),
        }
    }
}

/// Sample encodings accepted on read and produced on write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PcmFormat {
    Int16,
    Int32,
    Float32,
}

impl PcmFormat {
    fn spec(self, channels: u16, sample_rate: u32) -> WavSpec {
        let (bits_per_sample, sample_format) = match self {
            PcmFormat::Int16 => (16, SampleFormat::Int),
            PcmFormat::Int32 => (32, SampleFormat::Int),
            PcmFormat::Float32 => (32, SampleFormat::Float),
        };
        WavSpec {
            channels,
            sample_rate,
            bits_per_sample,
            sample_format,
        }
    }
}

/// Reads a PCM WAV file; integer samples are divided by 2^(bits-1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultiChannelSegment> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let n = spec.channels as usize;
    if n == 0 {
        return Err(Error::UnsupportedFormat("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => {
            let scale = 1.0 / 32768.0;
            reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()?
        }
        (SampleFormat::Int, 32) => {
            let scale = 1.0 / 2147483648.0;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()?
        }
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {fmt:?} samples"
            )))
        }
    };
    if interleaved.len() % n != 0 {
        return Err(Error::Parse("truncated sample frame".into()));
    }
    let frames = interleaved.len() / n;
    let mut channels = vec![Vec::with_capacity(frames); n];
    for frame in interleaved.chunks_exact(n) {
        for (ch, &v) in channels.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    MultiChannelSegment::new(channels, spec.sample_rate, id)
}

/// Writes a segment; integer formats clamp to the representable range.
pub fn write_wav(seg: &MultiChannelSegment, path: impl AsRef<Path>, format: PcmFormat) -> Result<()> {
    let path = path.as_ref();
    let channels = u16::try_from(seg.channel_count())
        .map_err(|_| Error::InvalidInput("too many channels for WAV".into()))?;
    let mut writer = hound::WavWriter::create(path, format.spec(channels, seg.sample_rate))?;
    for t in 0..seg.len() {
        for ch in &seg.channels {
            let x = ch[t];
            match format {
                PcmFormat::Int16 => {
                    writer.write_sample((x * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?
                }
                PcmFormat::Int32 => writer.write_sample(
                    (x * 2147483648.0).round().clamp(-2147483648.0, 2147483647.0) as i32,
                )?,
                PcmFormat::Float32 => writer.write_sample(x as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Splits into contiguous chunks of at most `max_seconds`; a trailing chunk is kept
/// only when it holds at least `min_samples` samples.
pub fn segment(seg: &MultiChannelSegment, max_seconds: f64, min_samples: usize) -> Result<Vec<MultiChannelSegment>> {
    if !(max_seconds.is_finite() && max_seconds > 0.0) {
        return Err(Error::InvalidInput(format!(
            "max_seconds must be positive, got {max_seconds}"
        )));
    }
    let chunk = ((max_seconds * seg.sample_rate as f64).round() as usize).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    let mut index = 0;
    while start < seg.len() {
        let end = (start + chunk).min(seg.len());
        if end - start == chunk || end - start >= min_samples {
            out.push(seg.slice(start, end, format!("{}#{index}", seg.source_id)));
            index += 1;
        }
        start = end;
    }
    Ok(out)
}
