use std::path::{Path, PathBuf};

use super::{parse_annotations, AnnotationFile, ManifestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub audio: PathBuf,
    pub annotation: Option<PathBuf>,
    /// Grouping used for per-subset evaluation rows (e.g. `HB`, `ME`).
    pub subset: String,
}

impl ManifestEntry {
    /// The identifier used in annotation and detection CSVs: the audio file name.
    pub fn file_id(&self) -> String {
        self.audio
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Pairs of audio and annotation files, sorted by audio path.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
}

impl DatasetManifest {
    /// Loads a manifest from a directory (scanned recursively) or from a
    /// manifest CSV with columns `audio,annotation,subset`.
    pub fn load(path: impl AsRef<Path>, split: Split) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        if path.is_dir() {
            Self::from_dir(path, split)
        } else {
            Self::from_csv(path, split)
        }
    }

    /// Every `*.wav` under `root`; the annotation is the sibling `*.csv` with
    /// the same stem, and the subset is the first directory component below
    /// `root` (or `default` for files directly in it).
    pub fn from_dir(root: impl AsRef<Path>, split: Split) -> Result<Self, ManifestError> {
        let root = root.as_ref();
        let mut wavs = Vec::new();
        collect_wavs(root, &mut wavs).map_err(|e| ManifestError::Io {
            path: root.to_path_buf(),
            detail: e.to_string(),
        })?;
        wavs.sort();
        let entries = wavs
            .into_iter()
            .map(|audio| {
                let csv = audio.with_extension("csv");
                let subset = audio
                    .strip_prefix(root)
                    .ok()
                    .and_then(|rel| {
                        let mut comps = rel.components();
                        let first = comps.next()?;
                        comps.next()?;
                        Some(first.as_os_str().to_string_lossy().into_owned())
                    })
                    .unwrap_or_else(|| "default".to_string());
                ManifestEntry {
                    annotation: csv.is_file().then_some(csv),
                    audio,
                    subset,
                }
            })
            .collect();
        Ok(Self { entries, split })
    }

    pub fn from_csv(path: impl AsRef<Path>, split: Split) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let io = |detail: String| ManifestError::Io {
            path: path.to_path_buf(),
            detail,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| io(e.to_string()))?;
        let headers = reader.headers().map_err(|e| io(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let audio_col = col("audio").ok_or_else(|| io("missing column `audio`".into()))?;
        let ann_col = col("annotation");
        let subset_col = col("subset");
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| io(e.to_string()))?;
            let resolve = |s: &str| {
                let p = PathBuf::from(s);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            };
            let annotation = ann_col
                .and_then(|c| record.get(c))
                .filter(|s| !s.is_empty())
                .map(resolve);
            entries.push(ManifestEntry {
                audio: resolve(record.get(audio_col).unwrap_or("")),
                annotation,
                subset: subset_col
                    .and_then(|c| record.get(c))
                    .filter(|s| !s.is_empty())
                    .unwrap_or("default")
                    .to_string(),
            });
        }
        entries.sort_by(|a, b| a.audio.cmp(&b.audio));
        Ok(Self { entries, split })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn find(&self, file_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.file_id() == file_id)
    }

    /// Parses every annotation and checks that each referenced file id maps to
    /// exactly one audio entry. Returns the parsed annotations in entry order.
    pub fn load_annotations(&self) -> Result<Vec<Option<AnnotationFile>>, ManifestError> {
        let ids: Vec<String> = self.entries.iter().map(ManifestEntry::file_id).collect();
        let mut out = Vec::with_capacity(self.entries.len());
        for entry in &self.entries {
            let Some(path) = &entry.annotation else {
                out.push(None);
                continue;
            };
            let ann = parse_annotations(path)?;
            for ev in &ann.events {
                let matches = ids.iter().filter(|id| **id == ev.file_id).count();
                if matches != 1 {
                    return Err(ManifestError::Unresolved {
                        annotation: path.clone(),
                        file_id: ev.file_id.clone(),
                        matches,
                    });
                }
            }
            out.push(Some(ann));
        }
        Ok(out)
    }
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scans_directory_and_resolves_ids() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("HB");
        std::fs::create_dir(&sub).unwrap();
        std::fs::write(sub.join("a.wav"), b"").unwrap();
        std::fs::write(
            sub.join("a.csv"),
            "Audiofilename,Starttime,Endtime,Q\na.wav,0,1,POS\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("b.wav"), b"").unwrap();
        let m = DatasetManifest::from_dir(dir.path(), Split::Validation).unwrap();
        assert_eq!(m.len(), 2);
        let a = m.find("a.wav").unwrap();
        assert_eq!(a.subset, "HB");
        assert!(a.annotation.is_some());
        assert_eq!(m.find("b.wav").unwrap().subset, "default");
        let anns = m.load_annotations().unwrap();
        assert_eq!(anns.iter().flatten().count(), 1);
    }

    #[test]
    fn unresolved_file_id_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.wav"), b"").unwrap();
        std::fs::write(
            dir.path().join("a.csv"),
            "Audiofilename,Starttime,Endtime,Q\nzzz.wav,0,1,POS\n",
        )
        .unwrap();
        let m = DatasetManifest::from_dir(dir.path(), Split::Train).unwrap();
        assert!(matches!(
            m.load_annotations().unwrap_err(),
            ManifestError::Unresolved { matches: 0, .. }
        ));
    }

    #[test]
    fn manifest_csv_paths_are_relative_to_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("m.csv"),
            "audio,annotation,subset\nx/a.wav,x/a.csv,ME\n",
        )
        .unwrap();
        let m = DatasetManifest::load(dir.path().join("m.csv"), Split::Train).unwrap();
        assert_eq!(m.entries[0].audio, dir.path().join("x/a.wav"));
        assert_eq!(m.entries[0].subset, "ME");
    }
}
