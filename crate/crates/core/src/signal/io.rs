use std::io::{Cursor, Write};
use std::path::Path;

use super::Waveform;
use crate::error::{invalid, Result};

/// Reads 16-bit PCM mono RIFF; samples are divided by 32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(invalid(format!(
            "{}: expected 16-bit PCM mono, got {} ch / {} bit",
            path.as_ref().display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Encodes a waveform as 16-bit PCM mono RIFF bytes.
pub fn wav_bytes(w: &Waveform) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec)?;
        for &s in &w.samples {
            writer.write_sample(quantize(s))?;
        }
        writer.finalize()?;
    }
    Ok(cursor.into_inner())
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    std::fs::write(path, wav_bytes(w)?)?;
    Ok(())
}

/// Binary PGM (P5): one pixel per matrix entry, `rows` tall and `cols` wide,
/// linearly scaled so the minimum maps to 0 and the maximum to 255.
pub fn write_pgm(path: impl AsRef<Path>, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    if values.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(invalid("pgm dimensions do not match data"));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    let mut out = Vec::with_capacity(values.len() + 32);
    write!(out, "P5\n{cols} {rows}\n255\n")?;
    out.extend(values.iter().map(|&v| {
        if range > 0.0 {
            (255.0 * (v - lo) / range).round() as u8
        } else {
            0
        }
    }));
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_is_exact_on_the_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.0, 0.5, -0.5, -1.0, 12345.0 / 32768.0], 16000).unwrap();
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r, w);
        assert_eq!(quantize(1.0), 32767);
    }

    #[test]
    fn pgm_header_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        write_pgm(&p, &[0.0, 1.0, 2.0, 4.0, 4.0, 0.0], 2, 3).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 64, 128, 255, 255, 0]);
    }
}
