//! Synthetic dual-view sequences with known apex frames and label motifs.
//!
//! Each view shows a textured ellipse "face" on a dark background. Every
//! label class owns a displacement motif: Gaussian patches at fixed face
//! positions moving in a fixed direction. The motif amplitude follows a bell
//! profile that is zero at the first and last frame and peaks at the apex.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::imageio::write_gray;
use super::manifest::{records_from_frames, write_manifest, ManifestEntry, SequenceRecord};
use crate::error::{Error, Result};
use crate::optflow::{smooth_texture, FlowField, GrayImage, Grid};
use crate::types::{Labels, Split, View, NUM_CLASSES};

/// Smallest peak displacement the flow estimator reliably resolves.
pub const MIN_PEAK_DISPLACEMENT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Instances whose primary class is each label bit.
    pub counts_per_class: [usize; NUM_CLASSES],
    /// Share of instances that carry a second motif.
    pub multi_label_fraction: f64,
    pub view_width: usize,
    pub height: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    /// Peak motif displacement range, pixels.
    pub peak_min: f64,
    pub peak_max: f64,
    /// Bell profile width, frames.
    pub profile_sigma: f64,
    /// Uniform per-pixel noise amplitude.
    pub noise: f64,
    pub subjects: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            counts_per_class: [40; NUM_CLASSES],
            multi_label_fraction: 0.2,
            view_width: 96,
            height: 96,
            frames_min: 9,
            frames_max: 12,
            peak_min: 1.0,
            peak_max: 2.0,
            profile_sigma: 1.5,
            noise: 0.01,
            subjects: 20,
            train_fraction: 0.6,
            val_fraction: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn total(&self) -> usize {
        self.counts_per_class.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.peak_min < MIN_PEAK_DISPLACEMENT {
            return Err(Error::config(format!(
                "peak displacement {} below {MIN_PEAK_DISPLACEMENT} px",
                self.peak_min
            )));
        }
        if self.peak_max < self.peak_min {
            return Err(Error::config("peak_max below peak_min"));
        }
        if self.frames_min < 5 || self.frames_max < self.frames_min {
            return Err(Error::config("frame range must satisfy 5 <= frames_min <= frames_max"));
        }
        if self.view_width < 48 || self.height < 48 {
            return Err(Error::config("views must be at least 48x48"));
        }
        if !(0.0..=1.0).contains(&self.multi_label_fraction) {
            return Err(Error::config("multi_label_fraction outside [0, 1]"));
        }
        if self.subjects < 3 {
            return Err(Error::config("need at least 3 subjects for a three-way split"));
        }
        let (t, v) = (self.train_fraction, self.val_fraction);
        if t <= 0.0 || v <= 0.0 || t + v >= 1.0 {
            return Err(Error::config("split fractions must leave room for all three splits"));
        }
        if !(self.profile_sigma > 0.0) || !(0.0..0.2).contains(&self.noise) {
            return Err(Error::config("profile_sigma must be positive and noise below 0.2"));
        }
        Ok(())
    }
}

/// One Gaussian displacement patch in face-normalized coordinates, where the
/// ellipse spans `[-1, 1]` on both axes.
struct Patch {
    cx: f64,
    cy: f64,
    dx: f64,
    dy: f64,
}

const PATCH_SIGMA: f64 = 0.15;

fn motif(class: usize) -> Vec<Patch> {
    let p = |cx, cy, dx: f64, dy: f64| {
        let n = dx.hypot(dy);
        Patch { cx, cy, dx: dx / n, dy: dy / n }
    };
    match class {
        // inner brows pulled down and together
        0 => vec![p(-0.22, -0.42, 0.4, 0.9), p(0.22, -0.42, -0.4, 0.9)],
        // mouth corners up and out
        1 => vec![p(-0.4, 0.5, -0.7, -0.7), p(0.4, 0.5, 0.7, -0.7)],
        // lower lip pressed up
        2 => vec![p(0.0, 0.68, 0.0, -1.0)],
        // outer brows raised and widened
        3 => vec![p(-0.5, -0.58, -0.5, -0.85), p(0.5, -0.58, 0.5, -0.85)],
        // one-sided cheek shift
        _ => vec![p(0.5, 0.12, 1.0, 0.0)],
    }
}

/// Ground-truth annotations for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub sequence_id: String,
    pub apex: usize,
    pub classes: Vec<usize>,
    pub peak: f64,
    pub sigma: f64,
    pub frames: usize,
    /// Motif amplitude per frame.
    pub amplitudes: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Face {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

/// A generated instance: composite frames plus its manifest fields.
#[derive(Clone, Debug)]
pub struct SynthSequence {
    pub sequence_id: String,
    pub subject_id: String,
    pub labels: Labels,
    pub split: Split,
    /// Side-by-side composites, left view first.
    pub frames: Vec<GrayImage>,
    pub truth: SynthTruth,
    faces: [Face; 2],
    view_width: usize,
    height: usize,
}

/// Bell profile with zero amplitude at both ends and `peak` at `apex`.
pub fn bell_profile(frames: usize, apex: usize, peak: f64, sigma: f64) -> Vec<f64> {
    let g = |t: usize| (-((t as f64 - apex as f64).powi(2)) / (2.0 * sigma * sigma)).exp();
    let (g0, g1) = (g(0), g(frames - 1));
    (0..frames)
        .map(|t| {
            if t == apex {
                return peak;
            }
            let base = if t < apex { g0 } else { g1 };
            peak * (g(t) - base) / (1.0 - base)
        })
        .collect()
}

fn displacement(face: &Face, classes: &[usize], x: f64, y: f64) -> (f64, f64) {
    let (u, v) = ((x - face.cx) / face.rx, (y - face.cy) / face.ry);
    let (mut dx, mut dy) = (0.0, 0.0);
    for &c in classes {
        for p in motif(c) {
            let r2 = (u - p.cx).powi(2) + (v - p.cy).powi(2);
            let w = (-r2 / (2.0 * PATCH_SIGMA * PATCH_SIGMA)).exp();
            dx += w * p.dx;
            dy += w * p.dy;
        }
    }
    // patches of one motif may overlap; keep the unit peak
    let n = dx.hypot(dy);
    if n > 1.0 {
        (dx / n, dy / n)
    } else {
        (dx, dy)
    }
}

impl SynthSequence {
    /// Displacement of frame `t` relative to frame 0 in view coordinates,
    /// in the flow sign convention.
    pub fn ground_truth_flow(&self, view: View, t: usize) -> FlowField {
        let face = self.faces[if view == View::Right { 1 } else { 0 }];
        let a = self.truth.amplitudes[t];
        let mut f = FlowField::zeros(self.view_width, self.height);
        for y in 0..self.height {
            for x in 0..self.view_width {
                let (dx, dy) = displacement(&face, &self.truth.classes, x as f64, y as f64);
                f.u[y * self.view_width + x] = a * dx;
                f.v[y * self.view_width + x] = a * dy;
            }
        }
        f
    }

    pub fn manifest_entry(&self, frame_paths: Vec<PathBuf>) -> ManifestEntry {
        ManifestEntry {
            sequence_id: self.sequence_id.clone(),
            subject_id: self.subject_id.clone(),
            view: View::Dual,
            frame_paths,
            labels: self.labels,
            split: self.split,
            bboxes: None,
        }
    }

    /// Left and right records without a round trip through files.
    pub fn records(&self) -> Result<Vec<SequenceRecord>> {
        records_from_frames(&self.manifest_entry(Vec::new()), self.frames.clone())
    }
}

fn render_face(face: Face, texture: &Grid, background: &Grid) -> Grid {
    Grid::from_fn(texture.width, texture.height, |x, y| {
        let d = ((x as f64 - face.cx) / face.rx).powi(2) + ((y as f64 - face.cy) / face.ry).powi(2);
        if d <= 1.0 {
            0.35 + 0.55 * (texture.get(x, y) - 0.1) / 0.8
        } else {
            background.get(x, y)
        }
    })
}

/// Assigns subjects to splits by index: the first share trains, the next
/// validates, the rest test.
fn subject_split(k: usize, cfg: &SynthConfig) -> Split {
    let n = cfg.subjects as f64;
    let train = (cfg.train_fraction * n).round().max(1.0) as usize;
    let val = ((cfg.val_fraction * n).round().max(1.0) as usize).min(cfg.subjects - train - 1);
    if k < train {
        Split::Train
    } else if k < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Generates the dataset. Output depends only on `config` and `seed`.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<Vec<SynthSequence>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<usize> = (0..NUM_CLASSES)
        .flat_map(|c| std::iter::repeat_n(c, config.counts_per_class[c]))
        .collect();
    // Fisher-Yates with the dataset stream
    for i in (1..classes.len()).rev() {
        classes.swap(i, rng.random_range(0..=i));
    }
    let (vw, h) = (config.view_width, config.height);
    let subject_textures: Vec<[u64; 2]> = (0..config.subjects).map(|_| [rng.random(), rng.random()]).collect();

    let mut out = Vec::with_capacity(classes.len());
    for (i, &primary) in classes.iter().enumerate() {
        let subject = i % config.subjects;
        let mut cls = vec![primary];
        if rng.random_bool(config.multi_label_fraction) {
            let other = (primary + rng.random_range(1..NUM_CLASSES)) % NUM_CLASSES;
            cls.push(other);
            cls.sort_unstable();
        }
        let frames_n = rng.random_range(config.frames_min..=config.frames_max);
        let apex = rng.random_range(2..=frames_n - 3);
        let peak = rng.random_range(config.peak_min..=config.peak_max);
        let amplitudes = bell_profile(frames_n, apex, peak, config.profile_sigma);

        let mut faces = [Face { cx: 0.0, cy: 0.0, rx: 0.0, ry: 0.0 }; 2];
        let mut statics = Vec::with_capacity(2);
        for (v, face) in faces.iter_mut().enumerate() {
            *face = Face {
                cx: vw as f64 / 2.0 + rng.random_range(-3.0..3.0),
                cy: h as f64 / 2.0 + rng.random_range(-3.0..3.0),
                rx: vw as f64 * rng.random_range(0.36..0.40),
                ry: h as f64 * rng.random_range(0.40..0.44),
            };
            let tex = smooth_texture(vw, h, subject_textures[subject][v]);
            let bg_seed: u64 = rng.random();
            let bg = Grid {
                width: vw,
                height: h,
                data: smooth_texture(vw, h, bg_seed).data.iter().map(|v| 0.02 + 0.05 * v).collect(),
            };
            statics.push(render_face(*face, &tex, &bg));
        }

        let mut frames = Vec::with_capacity(frames_n);
        for &a in &amplitudes {
            let mut data = Vec::with_capacity(2 * vw * h);
            let mut rows = vec![Vec::with_capacity(vw); 2 * h];
            for (v, face) in faces.iter().enumerate() {
                for y in 0..h {
                    for x in 0..vw {
                        let (dx, dy) = displacement(face, &cls, x as f64, y as f64);
                        let val = statics[v].sample(x as f64 - a * dx, y as f64 - a * dy)
                            + config.noise * rng.random_range(-1.0..1.0);
                        rows[v * h + y].push(val.clamp(0.0, 1.0) as f32);
                    }
                }
            }
            for y in 0..h {
                data.extend_from_slice(&rows[y]);
                data.extend_from_slice(&rows[h + y]);
            }
            frames.push(GrayImage::new(2 * vw, h, data)?);
        }

        let mut labels = [0u8; NUM_CLASSES];
        for &c in &cls {
            labels[c] = 1;
        }
        let sequence_id = format!("s{i:04}");
        out.push(SynthSequence {
            truth: SynthTruth {
                sequence_id: sequence_id.clone(),
                apex,
                classes: cls,
                peak,
                sigma: config.profile_sigma,
                frames: frames_n,
                amplitudes,
            },
            sequence_id,
            subject_id: format!("p{subject:02}"),
            labels,
            split: subject_split(subject, config),
            frames,
            faces,
            view_width: vw,
            height: h,
        });
    }
    Ok(out)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";

/// Writes PGM frames, the manifest and the ground-truth sidecar under `dir`.
pub fn write_dataset(dir: &Path, sequences: &[SynthSequence]) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::with_capacity(sequences.len());
    let mut truth = String::new();
    for s in sequences {
        let seq_dir = dir.join("frames").join(&s.sequence_id);
        fs::create_dir_all(&seq_dir).map_err(|e| Error::io(&seq_dir, e))?;
        let mut paths = Vec::with_capacity(s.frames.len());
        for (t, f) in s.frames.iter().enumerate() {
            let p = seq_dir.join(format!("f{t:03}.pgm"));
            write_gray(&p, f)?;
            paths.push(p);
        }
        entries.push(s.manifest_entry(paths));
        truth.push_str(&serde_json::to_string(&s.truth).expect("truth serializes"));
        truth.push('\n');
    }
    write_manifest(&dir.join(MANIFEST_FILE), &entries)?;
    let tp = dir.join(TRUTH_FILE);
    fs::write(&tp, truth).map_err(|e| Error::io(&tp, e))?;
    Ok(entries)
}

pub fn read_truth(path: &Path) -> Result<Vec<SynthTruth>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            counts_per_class: [2; NUM_CLASSES],
            view_width: 64,
            height: 64,
            frames_min: 6,
            frames_max: 8,
            subjects: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn profile_peaks_at_apex() {
        for (n, apex) in [(9, 2), (12, 9), (7, 3)] {
            let a = bell_profile(n, apex, 1.5, 1.5);
            assert_eq!(a[0], 0.0);
            assert!(a[n - 1].abs() < 1e-12);
            assert_eq!(a[apex], 1.5);
            let arg = (0..n).fold(0, |b, t| if a[t] > a[b] { t } else { b });
            assert_eq!(arg, apex);
            assert!(a.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_generate(&small(), 3).unwrap();
        let b = synth_generate(&small(), 3).unwrap();
        let c = synth_generate(&small(), 4).unwrap();
        assert_eq!(a.len(), 10);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.frames, y.frames);
            assert_eq!(x.truth, y.truth);
        }
        assert_ne!(a[0].frames, c[0].frames);
    }

    #[test]
    fn annotations_are_consistent() {
        let cfg = small();
        let seqs = synth_generate(&cfg, 5).unwrap();
        let mut per_class = [0; NUM_CLASSES];
        for s in &seqs {
            let t = &s.truth;
            assert!(t.apex >= 2 && t.apex + 3 <= t.frames);
            assert_eq!(s.frames.len(), t.frames);
            assert_eq!(s.frames[0].width(), 2 * cfg.view_width);
            let arg = (0..t.frames).fold(0, |b, i| if t.amplitudes[i] > t.amplitudes[b] { i } else { b });
            assert_eq!(arg, t.apex);
            assert!(s.labels.contains(&1));
            for &c in &t.classes {
                assert_eq!(s.labels[c], 1);
            }
            per_class[t.classes[0]] += 1;
            let gt = s.ground_truth_flow(View::Left, t.apex);
            let peak = gt.u.iter().zip(&gt.v).map(|(u, v)| u.hypot(*v)).fold(0.0, f64::max);
            assert!((peak - t.peak).abs() < 0.05 * t.peak, "{peak} vs {}", t.peak);
        }
        assert!(per_class.iter().all(|&n| n >= 1));
    }

    #[test]
    fn splits_are_subject_disjoint() {
        let seqs = synth_generate(&SynthConfig::default(), 1).unwrap();
        let entries: Vec<_> = seqs.iter().map(|s| s.manifest_entry(vec![])).collect();
        crate::pipeline::check_subject_disjoint(&entries).unwrap();
        let count = |sp| seqs.iter().filter(|s| s.split == sp).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (120, 40, 40));
    }

    #[test]
    fn rejects_tiny_peaks() {
        let cfg = SynthConfig {
            peak_min: 0.4,
            ..small()
        };
        assert!(matches!(synth_generate(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let seqs = synth_generate(&small(), 2).unwrap();
        let written = write_dataset(dir.path(), &seqs).unwrap();
        let loaded = crate::pipeline::load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded, written);
        let truth = read_truth(&dir.path().join(TRUTH_FILE)).unwrap();
        assert_eq!(truth, seqs.iter().map(|s| s.truth.clone()).collect::<Vec<_>>());
        // frames survive 8-bit quantization to within half a level
        let recs = loaded[0].load_views().unwrap();
        let direct = seqs[0].records().unwrap();
        for (a, b) in recs.iter().zip(&direct) {
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                assert!(fa.data().iter().zip(fb.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
            }
        }
    }
}
