//! Sequence manifests: one JSON object per line.
//!
//! ```text
//! {"sequence_id":"s0001","subject_id":"p03","view":"dual",
//!  "frame_paths":["frames/s0001/f000.pgm", ...],
//!  "labels":[1,0,0,0,0],"split":"train"}
//! ```
//!
//! `view` is `left`, `right`, or `dual` for side-by-side composites. Relative
//! frame paths resolve against the manifest's directory. An optional
//! `bboxes` array (one box per frame) is accepted for single-view records.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::frames::{split_views, BBox};
use super::imageio::read_gray;
use crate::error::{Error, Result};
use crate::optflow::GrayImage;
use crate::types::{Labels, Split, View};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub sequence_id: String,
    pub subject_id: String,
    pub view: View,
    pub frame_paths: Vec<PathBuf>,
    pub labels: Labels,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bboxes: Option<Vec<BBox>>,
}

/// One view of one expression instance with its frames loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub sequence_id: String,
    pub subject_id: String,
    pub view: View,
    pub frames: Vec<GrayImage>,
    pub labels: Labels,
    pub split: Split,
    pub bboxes: Option<Vec<BBox>>,
}

pub const MIN_FRAMES: usize = 3;

fn validate(e: &ManifestEntry) -> std::result::Result<(), String> {
    if e.sequence_id.is_empty() {
        return Err("empty sequence_id".into());
    }
    if e.frame_paths.len() < MIN_FRAMES {
        return Err(format!(
            "sequence {} has {} frames, need at least {MIN_FRAMES}",
            e.sequence_id,
            e.frame_paths.len()
        ));
    }
    if e.labels.iter().any(|&b| b > 1) {
        return Err("label bits must be 0 or 1".into());
    }
    if e.labels.iter().all(|&b| b == 0) {
        return Err(format!("sequence {} has no label bit set", e.sequence_id));
    }
    if let Some(b) = &e.bboxes {
        if e.view == View::Dual {
            return Err("bboxes are only accepted for single-view records".into());
        }
        if b.len() != e.frame_paths.len() {
            return Err(format!("{} bboxes for {} frames", b.len(), e.frame_paths.len()));
        }
        if b.iter().any(|b| b.w == 0 || b.h == 0) {
            return Err("bbox with zero extent".into());
        }
    }
    Ok(())
}

/// Parses manifest text. Relative frame paths are joined onto `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
        let mut e: ManifestEntry = serde_json::from_str(line).map_err(|err| parse_err(err.to_string()))?;
        validate(&e).map_err(parse_err)?;
        for p in &mut e.frame_paths {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        out.push(e);
    }
    Ok(out)
}

/// Reads and validates a manifest; every referenced frame must exist.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base)?;
    for e in &entries {
        for p in &e.frame_paths {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "frame file not found"),
                ));
            }
        }
    }
    Ok(entries)
}

/// Writes entries one per line; paths under the manifest's directory are
/// stored relative to it.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut buf = Vec::new();
    for e in entries {
        let mut e = e.clone();
        for p in &mut e.frame_paths {
            if let Ok(rel) = p.strip_prefix(base) {
                *p = rel.to_path_buf();
            }
        }
        serde_json::to_writer(&mut buf, &e).expect("manifest entry serializes");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Every subject id appears in exactly one split.
pub fn check_subject_disjoint(entries: &[ManifestEntry]) -> Result<()> {
    let mut seen = std::collections::BTreeMap::new();
    for e in entries {
        if let Some(prev) = seen.insert(e.subject_id.as_str(), e.split) {
            if prev != e.split {
                return Err(Error::data(format!(
                    "subject {} appears in both {prev:?} and {:?}",
                    e.subject_id, e.split
                )));
            }
        }
    }
    Ok(())
}

impl ManifestEntry {
    /// Loads the frames; a dual-view entry yields a left and a right record.
    pub fn load_views(&self) -> Result<Vec<SequenceRecord>> {
        let frames = self
            .frame_paths
            .iter()
            .map(|p| read_gray(p))
            .collect::<Result<Vec<_>>>()?;
        records_from_frames(self, frames)
    }
}

/// Builds per-view records from already decoded frames of `entry`.
pub fn records_from_frames(entry: &ManifestEntry, frames: Vec<GrayImage>) -> Result<Vec<SequenceRecord>> {
    let (w, h) = (frames[0].width(), frames[0].height());
    if frames.iter().any(|f| f.width() != w || f.height() != h) {
        return Err(Error::data(format!(
            "sequence {} has frames of differing extent",
            entry.sequence_id
        )));
    }
    let make = |view, frames| SequenceRecord {
        sequence_id: entry.sequence_id.clone(),
        subject_id: entry.subject_id.clone(),
        view,
        frames,
        labels: entry.labels,
        split: entry.split,
        bboxes: entry.bboxes.clone(),
    };
    if entry.view != View::Dual {
        return Ok(vec![make(entry.view, frames)]);
    }
    let mut left = Vec::with_capacity(frames.len());
    let mut right = Vec::with_capacity(frames.len());
    for f in &frames {
        let (l, r) = split_views(f)?;
        left.push(l);
        right.push(r);
    }
    Ok(vec![make(View::Left, left), make(View::Right, right)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(labels: &str) -> String {
        format!(
            r#"{{"sequence_id":"a","subject_id":"p1","view":"left","frame_paths":["x0.pgm","x1.pgm","x2.pgm"],"labels":{labels},"split":"train"}}"#
        )
    }

    #[test]
    fn empty_manifest() {
        assert!(parse_manifest("", Path::new(".")).unwrap().is_empty());
        assert!(parse_manifest("\n\n", Path::new(".")).unwrap().is_empty());
    }

    #[test]
    fn label_length_enforced() {
        let ok = parse_manifest(&line("[1,0,0,0,0]"), Path::new("/d")).unwrap();
        assert_eq!(ok[0].frame_paths[0], PathBuf::from("/d/x0.pgm"));
        let text = format!("{}\n{}", line("[1,0,0,0,0]"), line("[1,0,0,0,0,1]"));
        match parse_manifest(&text, Path::new(".")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_manifest(&line("[0,0,0,0,0]"), Path::new(".")), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_manifest(&line("[2,0,0,0,0]"), Path::new(".")), Err(Error::Parse { .. })));
        assert!(matches!(parse_manifest("{not json", Path::new(".")), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_frame_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, line("[0,1,0,0,0]")).unwrap();
        match load_manifest(&p) {
            Err(Error::Io { path, .. }) => assert_eq!(path, dir.path().join("x0.pgm")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn subject_overlap_detected() {
        let mut a = parse_manifest(&line("[1,0,0,0,0]"), Path::new(".")).unwrap().remove(0);
        let mut b = a.clone();
        b.sequence_id = "b".into();
        assert!(check_subject_disjoint(&[a.clone(), b.clone()]).is_ok());
        b.split = Split::Test;
        assert!(check_subject_disjoint(&[a.clone(), b.clone()]).is_err());
        a.subject_id = "p2".into();
        assert!(check_subject_disjoint(&[a, b]).is_ok());
    }

    #[test]
    fn dual_split_into_views() {
        let e = ManifestEntry {
            sequence_id: "q".into(),
            subject_id: "p".into(),
            view: View::Dual,
            frame_paths: vec![],
            labels: [0, 0, 1, 0, 0],
            split: Split::Val,
            bboxes: None,
        };
        let frames = vec![GrayImage::from_fn_clamped(100, 20, |x, _| if x < 50 { 0.1 } else { 0.9 }); 3];
        let recs = records_from_frames(&e, frames).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].view, View::Left);
        assert_eq!(recs[1].frames[2].get(0, 0), 0.9f32);
        assert_eq!(recs[1].labels, e.labels);
    }
}
