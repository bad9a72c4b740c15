use super::synth::{synth_generate, SynthConfig};
use super::*;
use crate::optflow::{ApexConfig, FarnebackParams, FlowField};
use crate::types::{SampleMode, View, NUM_CLASSES};

fn config(per_class: usize) -> SynthConfig {
    SynthConfig {
        counts_per_class: [per_class; NUM_CLASSES],
        ..SynthConfig::default()
    }
}

#[test]
fn every_frame_uses_the_same_crop() {
    let seqs = synth_generate(&config(1), 9).unwrap();
    for s in &seqs {
        for rec in s.records().unwrap() {
            let c = crop_sequence(&rec).unwrap();
            assert!(c.frames.iter().all(|f| f.width() == c.bbox.w && f.height() == c.bbox.h));
            // the face ellipse is roughly 75% of the view width
            assert!(c.bbox.w > 60 && c.bbox.w <= 96, "{:?}", c.bbox);
            for (i, f) in rec.frames.iter().enumerate() {
                assert_eq!(crop(f, c.bbox).unwrap(), c.frames[i]);
            }
        }
    }
}

#[test]
fn detected_apex_matches_generator() {
    let seqs = synth_generate(&config(4), 21).unwrap();
    let params = FarnebackParams::default();
    let mut hits = 0;
    let mut total = 0;
    for s in &seqs {
        for rec in s.records().unwrap() {
            let f = extract_view(&rec, &params, &ApexConfig::default(), 32).unwrap();
            assert!(!f.apex.low_confidence);
            total += 1;
            hits += usize::from(f.apex.index == s.truth.apex);
        }
    }
    assert!(hits * 100 >= 95 * total, "{hits}/{total}");
}

#[test]
fn sample_counts_follow_mode() {
    let seqs = synth_generate(&config(1), 2).unwrap();
    let params = FarnebackParams::default();
    for s in &seqs[..2] {
        let views = s
            .records()
            .unwrap()
            .iter()
            .map(|r| extract_view(r, &params, &ApexConfig::default(), 16).unwrap())
            .collect();
        let seq = SequenceFeatures {
            meta: SequenceMeta {
                sequence_id: s.sequence_id.clone(),
                subject_id: s.subject_id.clone(),
                labels: s.labels,
                split: s.split,
            },
            views,
        };
        let (train, _) = build_samples(&seq, SampleMode::Train);
        let (eval, _) = build_samples(&seq, SampleMode::Eval);
        assert_eq!(train.len(), 4);
        assert_eq!(eval.len(), 2);
        assert!(train.iter().all(|t| t.feature.width == 16 && t.feature.height == 16));
    }
}

/// Ground-truth onset-apex field pooled to a coarse grid.
fn probe_features(flow: &FlowField, cells: usize) -> Vec<f64> {
    let (cw, ch) = (flow.width / cells, flow.height / cells);
    let mut out = vec![0.0; 2 * cells * cells + 1];
    for y in 0..cells * ch {
        for x in 0..cells * cw {
            let c = (y / ch) * cells + x / cw;
            out[2 * c] += flow.u[y * flow.width + x];
            out[2 * c + 1] += flow.v[y * flow.width + x];
        }
    }
    let n = out.len();
    out[n - 1] = (cw * ch) as f64;
    out.iter().map(|v| v / (cw * ch) as f64).collect()
}

#[test]
fn motifs_are_linearly_separable() {
    let seqs = synth_generate(&config(40), 13).unwrap();
    let data: Vec<(Vec<f64>, [u8; NUM_CLASSES])> = seqs
        .iter()
        .map(|s| (probe_features(&s.ground_truth_flow(View::Left, s.truth.apex), 12), s.labels))
        .collect();
    let (train, test) = data.split_at(100);
    let dim = train[0].0.len();
    let mut f1_sum = 0.0;
    for c in 0..NUM_CLASSES {
        // one-vs-rest logistic regression by full-batch gradient descent
        let mut w = vec![0.0; dim];
        for _ in 0..400 {
            let mut g = vec![0.0; dim];
            for (x, y) in train {
                let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                let err = 1.0 / (1.0 + (-z).exp()) - y[c] as f64;
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += err * xi;
                }
            }
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= 2.0 * gi / train.len() as f64;
            }
        }
        let (mut tp, mut fp, mut fne) = (0.0, 0.0, 0.0);
        for (x, y) in test {
            let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            match (z > 0.0, y[c] == 1) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fne += 1.0,
                _ => {}
            }
        }
        f1_sum += if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fne) };
    }
    let macro_f1 = f1_sum / NUM_CLASSES as f64;
    assert!(macro_f1 >= 0.95, "probe macro-F1 {macro_f1}");
}
