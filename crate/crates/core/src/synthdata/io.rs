//! Dataset directory format.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<id>/frames/000000.png
//! <root>/<id>/annotations.jsonl   {frame, x_min, y_min, x_max, y_max, visible}
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::image::Image;

use super::{Annotation, Sequence, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub num_frames: usize,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sequences: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    frame: usize,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    visible: bool,
}

pub fn write_dataset(root: &Path, sequences: &[Sequence]) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    sequences.par_iter().try_for_each(|seq| write_sequence(root, seq))?;
    let manifest = Manifest {
        sequences: sequences
            .iter()
            .map(|s| {
                let (width, height) = s.frame_size();
                ManifestEntry {
                    id: s.id.clone(),
                    width,
                    height,
                    num_frames: s.len(),
                    split: s.split,
                }
            })
            .collect(),
    };
    let path = root.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn write_sequence(root: &Path, seq: &Sequence) -> Result<()> {
    if seq.annotations.len() != seq.len() {
        return Err(Error::Invalid(format!("sequence {} needs one annotation per frame", seq.id)));
    }
    let dir = root.join(&seq.id);
    let frames = dir.join("frames");
    fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        f.save_png(&frames.join(format!("{i:06}.png")))?;
    }
    let path = dir.join("annotations.jsonl");
    let mut out = Vec::new();
    for a in &seq.annotations {
        let r = Record {
            frame: a.frame,
            x_min: a.bbox.x_min,
            y_min: a.bbox.y_min,
            x_max: a.bbox.x_max,
            y_max: a.bbox.y_max,
            visible: a.visible,
        };
        serde_json::to_writer(&mut out, &r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&out).map_err(|e| Error::io(&path, e))
}

/// Reads every sequence under `root`. A missing manifest falls back to the
/// sorted list of subdirectories holding an annotation file; an empty
/// directory yields an empty dataset.
pub fn read_dataset(root: &Path) -> Result<Vec<Sequence>> {
    let manifest_path = root.join("manifest.json");
    let entries: Vec<(String, Option<Split>, Option<usize>)> = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.sequences.into_iter().map(|e| (e.id, e.split, Some(e.num_frames))).collect()
    } else {
        let mut ids = Vec::new();
        for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let entry = entry.map_err(|e| Error::io(root, e))?;
            if entry.path().join("annotations.jsonl").is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        ids.into_iter().map(|id| (id, None, None)).collect()
    };
    entries
        .par_iter()
        .map(|(id, split, n)| read_sequence(root, id, *split, *n))
        .collect()
}

fn read_sequence(root: &Path, id: &str, split: Option<Split>, expected: Option<usize>) -> Result<Sequence> {
    let dir = root.join(id);
    let annotations = read_annotations(&dir.join("annotations.jsonl"))?;
    if let Some(n) = expected {
        if n != annotations.len() {
            return Err(Error::Invalid(format!(
                "sequence {id}: manifest lists {n} frames, annotations hold {}",
                annotations.len()
            )));
        }
    }
    let frames = (0..annotations.len())
        .map(|i| Image::load_png(&dir.join("frames").join(format!("{i:06}.png"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        id: id.to_string(),
        split,
        frames,
        annotations,
    })
}

/// Parses an annotation file; errors name the file and 1-based line.
pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let err = |message: String| Error::Annotation {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let r: Record = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if r.frame != i {
            return Err(err(format!("expected frame {i}, found {}", r.frame)));
        }
        let bbox = BBox::new(r.x_min, r.y_min, r.x_max, r.y_max);
        if !bbox.is_valid() {
            return Err(err(format!("invalid box {bbox:?}")));
        }
        out.push(Annotation {
            frame: r.frame,
            bbox,
            visible: r.visible,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_dataset, DatasetConfig, SceneConfig, SplitCount};

    fn small() -> Vec<Sequence> {
        let cfg = DatasetConfig {
            scene: SceneConfig {
                num_frames: 5,
                width: 48,
                height: 40,
                size_range: (8.0, 12.0),
                ..SceneConfig::default()
            },
            splits: vec![
                SplitCount { split: Split::Easy, count: 2 },
                SplitCount { split: Split::Hard, count: 1 },
            ],
        };
        generate_dataset(&cfg, 9).unwrap()
    }

    #[test]
    fn write_read_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let seqs = small();
        write_dataset(dir.path(), &seqs).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), seqs);
    }

    #[test]
    fn empty_directory_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn truncated_line_is_reported_with_its_number() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &small()).unwrap();
        let p = dir.path().join("easy-0000").join("annotations.jsonl");
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let cut = &lines[2][..lines[2].len() / 2];
        lines[2] = cut;
        fs::write(&p, lines.join("\n")).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::Annotation { path, line, .. }) => {
                assert_eq!(line, 3);
                assert!(path.ends_with("easy-0000/annotations.jsonl"));
            }
            other => panic!("expected an annotation error, got {other:?}"),
        }
    }

    #[test]
    fn without_manifest_subdirectories_are_read_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let seqs = small();
        write_dataset(dir.path(), &seqs).unwrap();
        fs::remove_file(dir.path().join("manifest.json")).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        let ids: Vec<&str> = back.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["easy-0000", "easy-0001", "hard-0000"]);
        assert_eq!(back[0].annotations, seqs[0].annotations);
    }
}
