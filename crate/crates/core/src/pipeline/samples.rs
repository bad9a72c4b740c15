//! Per-view preprocessing, phase features, training samples and feature
//! normalization.

use serde::{Deserialize, Serialize};

use super::frames::{crop, detect_bbox, select_sequence_bbox, BBox};
use super::manifest::SequenceRecord;
use crate::digest::Hasher;
use crate::error::{Error, Result};
use crate::optflow::dump::FeatureRecord;
use crate::optflow::{
    detect_apex, extract_phase_features, ApexConfig, ApexResult, FarnebackParams, GrayImage, MotionFeature,
};
use crate::types::{Labels, Phase, SampleMode, Split, View};

/// Frames of one view cropped with a single sequence-wide box.
#[derive(Clone, Debug)]
pub struct CroppedSequence {
    pub bbox: BBox,
    pub frames: Vec<GrayImage>,
}

/// Detects a box per frame, keeps the largest and crops every frame with it
/// at native resolution.
pub fn crop_sequence(record: &SequenceRecord) -> Result<CroppedSequence> {
    let first = record
        .frames
        .first()
        .ok_or_else(|| Error::data(format!("sequence {} has no frames", record.sequence_id)))?;
    let (w, h) = (first.width(), first.height());
    let boxes: Vec<BBox> = record
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| detect_bbox(f, record.bboxes.as_ref().map(|b| b[i])))
        .collect();
    let bbox = select_sequence_bbox(&boxes, w, h)?;
    let frames = record
        .frames
        .iter()
        .map(|f| crop(f, bbox))
        .collect::<Result<Vec<_>>>()?;
    Ok(CroppedSequence { bbox, frames })
}

/// Apex and phase features of one view, resized to the network side.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewFeatures {
    pub view: View,
    pub bbox: BBox,
    pub apex: ApexResult,
    pub onset_apex: MotionFeature,
    /// Absent when the apex is the final frame.
    pub apex_offset: Option<MotionFeature>,
}

pub fn extract_view(
    record: &SequenceRecord,
    params: &FarnebackParams,
    apex_cfg: &ApexConfig,
    side: usize,
) -> Result<ViewFeatures> {
    let cropped = crop_sequence(record)?;
    let apex = detect_apex(&cropped.frames, params, apex_cfg)?;
    let phases = extract_phase_features(&cropped.frames, apex.index, params)?;
    Ok(ViewFeatures {
        view: record.view,
        bbox: cropped.bbox,
        onset_apex: phases.onset_apex.resize(side, side),
        apex_offset: (!phases.degenerate).then(|| phases.apex_offset.resize(side, side)),
        apex,
    })
}

/// Sequence-level metadata kept next to the feature dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub sequence_id: String,
    pub subject_id: String,
    pub labels: Labels,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFeatures {
    pub meta: SequenceMeta,
    pub views: Vec<ViewFeatures>,
}

impl SequenceFeatures {
    pub fn to_records(&self) -> Vec<FeatureRecord> {
        let mut out = Vec::new();
        for v in &self.views {
            let mut push = |phase, feature: &MotionFeature| {
                out.push(FeatureRecord {
                    sequence_id: self.meta.sequence_id.clone(),
                    view: v.view,
                    phase,
                    apex: v.apex.index as u32,
                    feature: feature.clone(),
                })
            };
            push(Phase::OnsetApex, &v.onset_apex);
            if let Some(f) = &v.apex_offset {
                push(Phase::ApexOffset, f);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub sequence_id: String,
    pub view: View,
    pub phase: Phase,
    pub labels: Labels,
    pub split: Split,
    pub feature: MotionFeature,
}

/// Samples of one sequence. Training uses both phases of every view, while
/// evaluation uses the onset-apex phase only. Returned warnings name skipped
/// apex-offset samples.
pub fn build_samples(seq: &SequenceFeatures, mode: SampleMode) -> (Vec<TrainingSample>, Vec<String>) {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    let sample = |view, phase, feature: &MotionFeature| TrainingSample {
        sequence_id: seq.meta.sequence_id.clone(),
        view,
        phase,
        labels: seq.meta.labels,
        split: seq.meta.split,
        feature: feature.clone(),
    };
    for v in &seq.views {
        out.push(sample(v.view, Phase::OnsetApex, &v.onset_apex));
        if mode == SampleMode::Train {
            match &v.apex_offset {
                Some(f) => out.push(sample(v.view, Phase::ApexOffset, f)),
                None => warnings.push(format!(
                    "{} {}: apex is the last frame, apex_offset sample skipped",
                    seq.meta.sequence_id, v.view
                )),
            }
        }
    }
    sort_samples(&mut out);
    (out, warnings)
}

/// Canonical order: sequence id, then view, then phase.
pub fn sort_samples(samples: &mut [TrainingSample]) {
    samples.sort_by(|a, b| {
        (a.sequence_id.as_str(), a.view, a.phase).cmp(&(b.sequence_id.as_str(), b.view, b.phase))
    });
}

/// Regroups dump records into per-sequence features using metadata for
/// labels and splits. Apex intensities are not stored in dumps and come back
/// empty.
pub fn features_from_records(metas: &[SequenceMeta], records: &[FeatureRecord]) -> Result<Vec<SequenceFeatures>> {
    let mut out = Vec::with_capacity(metas.len());
    for meta in metas {
        let mut views: Vec<ViewFeatures> = Vec::new();
        for r in records.iter().filter(|r| r.sequence_id == meta.sequence_id) {
            let pos = match views.iter().position(|v| v.view == r.view) {
                Some(p) => p,
                None => {
                    views.push(ViewFeatures {
                        view: r.view,
                        bbox: BBox::full(r.feature.width, r.feature.height),
                        apex: ApexResult {
                            index: r.apex as usize,
                            intensities: Vec::new(),
                            low_confidence: false,
                        },
                        onset_apex: MotionFeature::zeros(0, 0),
                        apex_offset: None,
                    });
                    views.len() - 1
                }
            };
            match r.phase {
                Phase::OnsetApex => views[pos].onset_apex = r.feature.clone(),
                Phase::ApexOffset => views[pos].apex_offset = Some(r.feature.clone()),
            }
        }
        if views.is_empty() || views.iter().any(|v| v.onset_apex.plane() == 0) {
            return Err(Error::data(format!(
                "feature dump lacks onset_apex records for {}",
                meta.sequence_id
            )));
        }
        views.sort_by_key(|v| v.view);
        out.push(SequenceFeatures {
            meta: meta.clone(),
            views,
        });
    }
    Ok(out)
}

pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel standardization statistics of training features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    /// Hash of the training sample identities the statistics came from.
    pub source_hash: String,
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
            source_hash: String::new(),
        }
    }

    /// Population mean and standard deviation over every pixel of every
    /// sample. All samples must come from the training split.
    pub fn from_train(samples: &[TrainingSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::data("normalization needs at least one training sample"));
        }
        if let Some(s) = samples.iter().find(|s| s.split != Split::Train) {
            return Err(Error::usage(format!(
                "normalization statistics must use training data only; {} is {:?}",
                s.sequence_id, s.split
            )));
        }
        let mut sum = [0.0f64; 3];
        let mut count = 0usize;
        for s in samples {
            for (k, acc) in sum.iter_mut().enumerate() {
                *acc += s.feature.channel(k).iter().map(|&v| v as f64).sum::<f64>();
            }
            count += s.feature.plane();
        }
        let mean = sum.map(|v| v / count as f64);
        let mut sq = [0.0f64; 3];
        for s in samples {
            for (k, acc) in sq.iter_mut().enumerate() {
                *acc += s
                    .feature
                    .channel(k)
                    .iter()
                    .map(|&v| (v as f64 - mean[k]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = sq.map(|v| (v / count as f64).sqrt().max(STD_FLOOR));
        let mut h = Hasher::new();
        for s in samples {
            h.field(s.sequence_id.as_bytes()).field(&[s.view.tag(), s.phase.tag()]);
        }
        Ok(Self {
            mean,
            std,
            source_hash: h.finish(),
        })
    }

    pub fn normalize(&self, feature: &MotionFeature) -> MotionFeature {
        let mut out = feature.clone();
        for k in 0..3 {
            let (m, s) = (self.mean[k], self.std[k]);
            for v in out.channel_mut(k) {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        out
    }
}
