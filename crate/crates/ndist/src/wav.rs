//! 16-bit PCM mono WAV read/write.

use std::path::Path;

use crate::error::{NdistError, Result};

pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| NdistError::Audio(e.to_string()))?;
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(q)
            .map_err(|e| NdistError::Audio(e.to_string()))?;
    }
    writer.finalize().map_err(|e| NdistError::Audio(e.to_string()))?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut reader =
        hound::WavReader::open(path).map_err(|e| NdistError::Audio(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 {
        return Err(NdistError::Audio(format!(
            "expected 16-bit mono PCM, got {} ch / {} bit",
            spec.channels, spec.bits_per_sample
        )));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    let samples = samples.map_err(|e| NdistError::Audio(e.to_string()))?;
    Ok((
        samples.into_iter().map(|s| s as f32 / 32767.0).collect(),
        spec.sample_rate,
    ))
}
