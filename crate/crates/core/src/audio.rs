//! Container probing for uploaded audio. Duration comes from the header,
//! never from the client.

use std::io::Cursor;

use crate::domain::MediaFormat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AudioInfo {
    pub media_format: MediaFormat,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub channels: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AudioError {
    #[error("audio is empty")]
    Empty,
    #[error("unsupported media: {0}")]
    Unsupported(String),
}

pub fn probe(bytes: &[u8]) -> Result<AudioInfo, AudioError> {
    if bytes.is_empty() {
        return Err(AudioError::Empty);
    }
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::Unsupported("expected a RIFF/WAVE container".into()));
    }
    let reader = hound::WavReader::new(Cursor::new(bytes))
        .map_err(|e| AudioError::Unsupported(format!("unreadable WAV header: {e}")))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::Unsupported(format!(
            "only 16-bit PCM WAV is accepted, got {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.sample_rate == 0 {
        return Err(AudioError::Unsupported("sample rate is zero".into()));
    }
    let frames = reader.duration();
    if frames == 0 {
        return Err(AudioError::Empty);
    }
    Ok(AudioInfo {
        media_format: MediaFormat::WavPcm16,
        duration_s: f64::from(frames) / f64::from(spec.sample_rate),
        sample_rate_hz: spec.sample_rate,
        channels: spec.channels,
    })
}

/// A silent mono PCM16 WAV of the given length, for fixtures and demos.
///
/// `seed` is written into the first sample so distinct seeds give distinct
/// content addresses.
pub fn silent_wav(duration_s: f64, sample_rate_hz: u32, seed: i16) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let frames = (duration_s * f64::from(sample_rate_hz)).round() as u64;
    let mut cursor = Cursor::new(Vec::with_capacity(44 + 2 * frames as usize));
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory WAV writer");
        let mut samples = writer.get_i16_writer(frames as u32);
        for i in 0..frames {
            samples.write_sample(if i == 0 { seed } else { 0 });
        }
        samples.flush().expect("in-memory write");
        writer.finalize().expect("in-memory finalize");
    }
    cursor.into_inner()
}
