use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{AnnotationError, EventLabel, LabeledEvent, Provenance};

const FILE_COL: &str = "Audiofilename";
const START_COL: &str = "Starttime";
const END_COL: &str = "Endtime";
const PROVENANCE_COL: &str = "provenance";

/// A row that could not be turned into events. Line numbers are 1-based and
/// count the header as line 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct AnnotationFile {
    pub class_columns: Vec<String>,
    pub events: Vec<LabeledEvent>,
    pub row_errors: Vec<RowError>,
}

impl AnnotationFile {
    pub fn positives(&self) -> impl Iterator<Item = &LabeledEvent> {
        self.events.iter().filter(|e| e.label == EventLabel::Pos)
    }
}

pub fn parse_annotations(path: impl AsRef<Path>) -> Result<AnnotationFile, AnnotationError> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| AnnotationError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    parse_annotations_str(&text, path)
}

/// Parses annotation CSV text; `origin` is only used in error messages.
pub fn parse_annotations_str(
    text: &str,
    origin: &Path,
) -> Result<AnnotationFile, AnnotationError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| AnnotationError::Io {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?
        .clone();

    let find = |name: &str| -> Result<usize, AnnotationError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AnnotationError::MissingColumn {
                path: origin.to_path_buf(),
                column: name.to_string(),
            })
    };
    let file_col = find(FILE_COL)?;
    let start_col = find(START_COL)?;
    let end_col = find(END_COL)?;
    let provenance_col = headers.iter().position(|h| h == PROVENANCE_COL);
    let class_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            ![file_col, start_col, end_col].contains(i) && Some(*i) != provenance_col
        })
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if class_cols.is_empty() {
        return Err(AnnotationError::NoClassColumns {
            path: origin.to_path_buf(),
        });
    }

    let mut out = AnnotationFile {
        class_columns: class_cols.iter().map(|(_, n)| n.clone()).collect(),
        ..Default::default()
    };

    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let mut row_error = |message: String| out.row_errors.push(RowError { line, message });

        let field = |i: usize| record.get(i).unwrap_or("");
        let file_id = field(file_col);
        if file_id.is_empty() {
            row_error("empty Audiofilename".into());
            continue;
        }
        let (onset, offset) = match (field(start_col).parse::<f64>(), field(end_col).parse::<f64>())
        {
            (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => (a, b),
            _ => {
                row_error(format!(
                    "non-numeric time (Starttime={:?}, Endtime={:?})",
                    field(start_col),
                    field(end_col)
                ));
                continue;
            }
        };
        if onset < 0.0 {
            row_error(format!("negative Starttime {onset}"));
            continue;
        }
        if offset <= onset {
            row_error(format!("Endtime {offset} is not after Starttime {onset}"));
            continue;
        }
        let provenance = match provenance_col.map(field) {
            Some("pseudo") => Provenance::Pseudo,
            _ => Provenance::Annotated,
        };

        let mut row_events = Vec::new();
        let mut bad = None;
        for (col, class_name) in &class_cols {
            let cell = field(*col);
            if cell.is_empty() {
                continue;
            }
            match EventLabel::parse(cell) {
                Some(label) => row_events.push(LabeledEvent {
                    file_id: file_id.to_string(),
                    onset_s: onset,
                    offset_s: offset,
                    label,
                    class_name: class_name.clone(),
                    provenance,
                }),
                None => {
                    bad = Some(format!("column {class_name}: unknown value {cell:?}"));
                    break;
                }
            }
        }
        match bad {
            Some(msg) => row_error(msg),
            None => out.events.extend(row_events),
        }
    }
    Ok(out)
}

/// Writes events in the annotation schema, one row per event. A `provenance`
/// column is appended when any event is pseudo-labelled.
pub fn write_annotations(
    events: &[LabeledEvent],
    class_columns: &[String],
    path: impl AsRef<Path>,
) -> Result<(), AnnotationError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| AnnotationError::Io {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let with_provenance = events.iter().any(|e| e.provenance == Provenance::Pseudo);
    let mut text = format!("{FILE_COL},{START_COL},{END_COL}");
    for c in class_columns {
        text.push(',');
        text.push_str(c);
    }
    if with_provenance {
        text.push(',');
        text.push_str(PROVENANCE_COL);
    }
    text.push('\n');
    for e in events {
        text.push_str(&format!("{},{:.6},{:.6}", e.file_id, e.onset_s, e.offset_s));
        for c in class_columns {
            text.push(',');
            if *c == e.class_name {
                text.push_str(e.label.as_str());
            }
        }
        if with_provenance {
            text.push(',');
            text.push_str(e.provenance.as_str());
        }
        text.push('\n');
    }
    let mut f = File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}
