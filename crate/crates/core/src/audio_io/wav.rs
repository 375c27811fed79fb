use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioError, Waveform};

/// Reads a PCM (8/16/24/32-bit) or 32-bit float WAV file, averaging channels to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| AudioError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = WavReader::new(BufReader::new(file)).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 {
        return Err(AudioError::Malformed {
            path: path.to_path_buf(),
            detail: "zero channels".into(),
        });
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / f64::from(1u32 << (bits - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{fmt:?} with {bits} bits per sample"),
            })
        }
    };

    let frames = interleaved.len() / channels;
    if frames == 0 {
        return Err(AudioError::Empty {
            path: path.to_path_buf(),
        });
    }
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

fn map_hound(path: &Path, err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(source) => AudioError::Unreadable {
            path: path.to_path_buf(),
            source,
        },
        hound::Error::Unsupported => AudioError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: "unsupported WAV feature".into(),
        },
        hound::Error::TooWide | hound::Error::InvalidSampleFormat => {
            AudioError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: err.to_string(),
            }
        }
        other => AudioError::Malformed {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

/// Writes a mono 16-bit PCM WAV file. Samples are clipped to [-1, 1].
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let err = |e: hound::Error| AudioError::Write {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(err)?;
    for &s in w.samples() {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(q).map_err(err)?;
    }
    writer.finalize().map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_i16(path: &Path, channels: u16, rate: u32, samples: &[i16]) {
        let spec = WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn silence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let w = Waveform::new(vec![0.0; 22050], 22050).unwrap();
        write_wav(&w, &p).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.sample_rate(), 22050);
        assert_eq!(r.len(), 22050);
        assert!(r.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stereo_antiphase_downmixes_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let frames: Vec<i16> = (0..100).flat_map(|_| [16384i16, -16384]).collect();
        write_i16(&p, 2, 8000, &frames);
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), 100);
        assert!(r.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.wav");
        write_i16(&p, 1, 8000, &[16384, -32768]);
        let r = read_wav(&p).unwrap();
        // oracle: value / 32768
        assert!((r.samples()[0] - 16384.0 / 32768.0).abs() < 1e-4);
        assert!((r.samples()[0] - 0.5).abs() < 1e-4);
        assert_eq!(r.samples()[1], -1.0);
    }

    #[test]
    fn float_and_24bit_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(0.25f32).unwrap();
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples(), &[0.25]);

        let p = dir.path().join("i24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(1 << 22).unwrap();
        w.finalize().unwrap();
        assert!((read_wav(&p).unwrap().samples()[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = read_wav(dir.path().join("nope.wav")).unwrap_err();
        assert!(matches!(missing, AudioError::Unreadable { .. }));

        let empty = dir.path().join("empty.wav");
        write_i16(&empty, 1, 8000, &[]);
        assert!(matches!(read_wav(&empty).unwrap_err(), AudioError::Empty { .. }));

        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"definitely not a RIFF file").unwrap();
        assert!(matches!(read_wav(&junk).unwrap_err(), AudioError::Malformed { .. }));
    }
}
