//! Detection CSVs in the DCASE submission shape: `Audiofilename,Starttime,Endtime`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{AnnotationError, EventInterval};

/// Writes detections with six decimals. Events of each file must be sorted by onset.
pub fn write_detections(
    events: &[EventInterval],
    path: impl AsRef<Path>,
) -> Result<(), AnnotationError> {
    let path = path.as_ref();
    for pair in events.windows(2) {
        if pair[0].file_id == pair[1].file_id && pair[1].onset < pair[0].onset {
            return Err(AnnotationError::Unsorted {
                path: path.to_path_buf(),
                file_id: pair[0].file_id.clone(),
            });
        }
    }
    let mut text = String::from("Audiofilename,Starttime,Endtime\n");
    for e in events {
        text.push_str(&format!("{},{:.6},{:.6}\n", e.file_id, e.onset, e.offset));
    }
    File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| AnnotationError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
}

pub fn parse_detections(path: impl AsRef<Path>) -> Result<Vec<EventInterval>, AnnotationError> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| AnnotationError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| AnnotationError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AnnotationError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let (fc, sc, ec) = (col("Audiofilename")?, col("Starttime")?, col("Endtime")?);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| AnnotationError::BadRow {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| AnnotationError::BadRow {
            path: path.to_path_buf(),
            line,
            message,
        };
        let parse = |i: usize| {
            record
                .get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| bad(e.to_string()))
        };
        out.push(EventInterval::new(
            record.get(fc).unwrap_or(""),
            parse(sc)?,
            parse(ec)?,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn empty_list_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_detections(&[], &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "Audiofilename,Starttime,Endtime\n"
        );
    }

    #[test]
    fn single_event_is_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_detections(&[EventInterval::new("a.wav", 0.5, 1.0)], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().nth(1), Some("a.wav,0.500000,1.000000"));
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ev = [
            EventInterval::new("a.wav", 2.0, 3.0),
            EventInterval::new("a.wav", 1.0, 1.5),
        ];
        assert!(write_detections(&ev, dir.path().join("d.csv")).is_err());
    }

    #[test]
    fn random_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut events: Vec<EventInterval> = (0..100)
            .map(|i| {
                let on: f64 = rng.random_range(0.0..600.0);
                let len: f64 = rng.random_range(0.01..5.0);
                EventInterval::new(format!("f{}.wav", i % 4), on, on + len)
            })
            .collect();
        events.sort_by(|a, b| {
            a.file_id
                .cmp(&b.file_id)
                .then(a.onset.total_cmp(&b.onset))
        });
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_detections(&events, &p).unwrap();
        let back = parse_detections(&p).unwrap();
        assert_eq!(back.len(), events.len());
        for (a, b) in events.iter().zip(&back) {
            assert_eq!(a.file_id, b.file_id);
            assert!((a.onset - b.onset).abs() < 1e-4);
            assert!((a.offset - b.offset).abs() < 1e-4);
        }
    }
}
