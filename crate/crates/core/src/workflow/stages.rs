use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{PhaseMode, RunConfig};
use super::stage::{json_bytes, stage_key, Opened, Stage, StageOutput, LOG_FILE};
use crate::digest::Hasher;
use crate::error::{Error, Result};
use crate::evaluation::{
    emit_report, threshold_sweep, write_ablation, AblationRun, MetricReport, SweepResult, ABLATION_ROWS, METRICS_FILE,
};
use crate::model::{miniature_config, model_gradcheck, predict_multilabel, ClassProbs, ModelMeta, ModelState};
use crate::optflow::dump::{encode_records, read_records};
use crate::pipeline::synth::{synth_generate, write_dataset, MANIFEST_FILE};
use crate::pipeline::{
    build_samples, check_subject_disjoint, crop_sequence, extract_view, features_from_records, load_manifest,
    write_manifest, BBox, ManifestEntry, NormStats, SequenceFeatures, SequenceMeta, TrainingSample,
};
use crate::tensorgrad::{Checkpoint, DType, GradcheckReport, Real};
use crate::training::{evaluate, Precision, SampleSet, TrainHistory, Trainer};
use crate::types::{Labels, Phase, SampleMode, Split, View};

pub const PREPROCESS_DIR: &str = "preprocess";
pub const EXTRACT_DIR: &str = "extract";
pub const TRAIN_DIR: &str = "train";
pub const EVAL_DIR: &str = "eval";
pub const SWEEP_DIR: &str = "sweep";
pub const ABLATE_DIR: &str = "ablate";

pub const CROPS_FILE: &str = "crops.jsonl";
pub const FEATURES_FILE: &str = "features.bin";
pub const SEQUENCES_FILE: &str = "sequences.jsonl";
pub const APEX_FILE: &str = "apex.jsonl";
pub const MODEL_FILE: &str = "model.matn";
pub const RESUME_FILE: &str = "resume.matn";
pub const HISTORY_FILE: &str = "history.csv";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const RUNS_FILE: &str = "runs.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.txt";

/// Largest accepted relative error of the `gradcheck` command.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// One line of the per-view crop log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropEntry {
    pub sequence_id: String,
    pub view: View,
    pub bbox: BBox,
    pub frames: usize,
}

/// One line of the apex log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApexEntry {
    pub sequence_id: String,
    pub view: View,
    pub apex: usize,
    pub low_confidence: bool,
    pub intensities: Vec<f64>,
}

/// One line of the prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub sequence_id: String,
    pub probabilities: ClassProbs,
    pub predicted: Labels,
    pub labels: Labels,
}

fn to_io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("log entry serializes"));
        s.push('\n');
    }
    s
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = to_io(path, fs::read_to_string(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn manifest_path(cfg: &RunConfig) -> Result<PathBuf> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset given: set `data` in the config file or pass --data".into()))?;
    Ok(if data.is_dir() { data.join(MANIFEST_FILE) } else { data.clone() })
}

/// Writes the synthetic dataset (frames, manifest, ground truth) to `out`.
pub fn synth(cfg: &RunConfig) -> Result<Vec<ManifestEntry>> {
    let seqs = synth_generate(&cfg.synth, cfg.seed)?;
    write_dataset(&cfg.out, &seqs)
}

/// Splits views, finds one face box per view and sequence, and stores the
/// crops with a manifest pointing at them.
pub fn preprocess(cfg: &RunConfig) -> Result<StageOutput> {
    let manifest = manifest_path(cfg)?;
    let text = to_io(&manifest, fs::read(&manifest))?;
    let entries = load_manifest(&manifest)?;
    let mut frames = Hasher::new();
    for e in &entries {
        for p in &e.frame_paths {
            frames.field(&to_io(p, fs::read(p))?);
        }
    }
    let key = stage_key("preprocess", &[&text, frames.finish().as_bytes()]);
    let dir = cfg.out.join(PREPROCESS_DIR);
    let mut st = match Stage::open(&dir, "preprocess", key)? {
        Opened::Cached(o) => return Ok(o),
        Opened::Fresh(s) => s,
    };
    if let Err(e) = check_subject_disjoint(&entries) {
        st.log(format!("warning: {e}"));
    }
    let mut out = Vec::new();
    let mut crops = Vec::new();
    for e in &entries {
        for rec in e.load_views()? {
            let c = crop_sequence(&rec)?;
            let sub = dir
                .join("crops")
                .join(safe_name(&rec.sequence_id))
                .join(rec.view.as_str());
            to_io(&sub, fs::create_dir_all(&sub))?;
            let mut paths = Vec::with_capacity(c.frames.len());
            for (t, f) in c.frames.iter().enumerate() {
                let p = sub.join(format!("f{t:03}.pgm"));
                crate::pipeline::imageio::write_gray(&p, f)?;
                paths.push(p);
            }
            let (w, h) = (c.frames[0].width(), c.frames[0].height());
            crops.push(CropEntry {
                sequence_id: rec.sequence_id.clone(),
                view: rec.view,
                bbox: c.bbox,
                frames: paths.len(),
            });
            out.push(ManifestEntry {
                sequence_id: rec.sequence_id,
                subject_id: rec.subject_id,
                view: rec.view,
                bboxes: Some(vec![BBox::full(w, h); paths.len()]),
                frame_paths: paths,
                labels: rec.labels,
                split: rec.split,
            });
        }
    }
    write_manifest(&st.path(MANIFEST_FILE), &out)?;
    st.write(CROPS_FILE, write_jsonl(&crops))?;
    st.log(format!("{} sequences, {} views cropped", entries.len(), out.len()));
    st.finish()
}

/// Apex detection and phase features for every cropped view.
pub fn extract(cfg: &RunConfig) -> Result<StageOutput> {
    let pre = preprocess(cfg)?;
    let side = cfg.model.input_side as u64;
    let key = stage_key(
        "extract",
        &[
            pre.key.as_bytes(),
            &json_bytes(&cfg.flow),
            &json_bytes(&cfg.apex),
            &side.to_le_bytes(),
        ],
    );
    let dir = cfg.out.join(EXTRACT_DIR);
    let mut st = match Stage::open(&dir, "extract", key)? {
        Opened::Cached(o) => return Ok(o),
        Opened::Fresh(s) => s,
    };
    let entries = load_manifest(&pre.dir.join(MANIFEST_FILE))?;
    let mut order: Vec<&str> = Vec::new();
    for e in &entries {
        if !order.contains(&e.sequence_id.as_str()) {
            order.push(&e.sequence_id);
        }
    }
    let fpath = st.path(FEATURES_FILE);
    let mut dump = std::io::BufWriter::new(to_io(&fpath, fs::File::create(&fpath))?);
    let (mut metas, mut apexes) = (Vec::new(), Vec::new());
    let mut low = 0;
    for id in order {
        let group: Vec<&ManifestEntry> = entries.iter().filter(|e| e.sequence_id == id).collect();
        let meta = SequenceMeta {
            sequence_id: id.to_string(),
            subject_id: group[0].subject_id.clone(),
            labels: group[0].labels,
            split: group[0].split,
        };
        let mut views = Vec::new();
        for e in group {
            for rec in e.load_views()? {
                let vf = extract_view(&rec, &cfg.flow, &cfg.apex, cfg.model.input_side)?;
                if vf.apex.low_confidence {
                    low += 1;
                    let peak = vf.apex.intensities.iter().copied().fold(0.0, f64::max);
                    st.log(format!(
                        "low-confidence apex: {id} {}: peak intensity {peak:.4e} below the motion threshold, apex = frame {}",
                        rec.view, vf.apex.index
                    ));
                }
                if vf.apex_offset.is_none() {
                    st.log(format!("{id} {}: apex is the last frame, no apex-offset feature", rec.view));
                }
                apexes.push(ApexEntry {
                    sequence_id: id.to_string(),
                    view: vf.view,
                    apex: vf.apex.index,
                    low_confidence: vf.apex.low_confidence,
                    intensities: vf.apex.intensities.clone(),
                });
                views.push(vf);
            }
        }
        views.sort_by_key(|v| v.view);
        let seq = SequenceFeatures { meta, views };
        to_io(&fpath, dump.write_all(&encode_records(&seq.to_records())))?;
        metas.push(seq.meta);
    }
    to_io(&fpath, dump.flush())?;
    drop(dump);
    st.write(SEQUENCES_FILE, write_jsonl(&metas))?;
    st.write(APEX_FILE, write_jsonl(&apexes))?;
    st.log(format!(
        "{} sequences, {} views, {low} low-confidence apexes",
        metas.len(),
        apexes.len()
    ));
    st.finish()
}

/// Features stored by the extract stage in `dir`.
pub fn load_features(dir: &Path) -> Result<Vec<SequenceFeatures>> {
    let metas: Vec<SequenceMeta> = read_jsonl(&dir.join(SEQUENCES_FILE))?;
    let records = read_records(&dir.join(FEATURES_FILE))?;
    features_from_records(&metas, &records)
}

fn split_samples(
    feats: &[SequenceFeatures],
    split: Split,
    mode: SampleMode,
    warnings: &mut Vec<String>,
) -> Vec<TrainingSample> {
    let mut out = Vec::new();
    for s in feats.iter().filter(|s| s.meta.split == split) {
        let (samples, w) = build_samples(s, mode);
        out.extend(samples);
        warnings.extend(w);
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub stage: StageOutput,
    pub extract: StageOutput,
    pub history: TrainHistory,
}

#[derive(Serialize, Deserialize)]
struct TrainedMeta {
    history: TrainHistory,
    phases: PhaseMode,
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutput> {
    train_variant(cfg, Path::new(TRAIN_DIR))
}

/// Trains into `cfg.out / rel`, resuming an interrupted run with the same
/// settings from its last completed epoch.
pub fn train_variant(cfg: &RunConfig, rel: &Path) -> Result<TrainOutput> {
    let ext = extract(cfg)?;
    let key = stage_key(
        "train",
        &[
            ext.key.as_bytes(),
            &json_bytes(&cfg.model),
            &json_bytes(&cfg.train),
            &json_bytes(&cfg.phases),
        ],
    );
    let dir = cfg.out.join(rel);
    let mut st = match Stage::open(&dir, "train", key)? {
        Opened::Cached(o) => {
            let history = read_history(&o.dir.join(MODEL_FILE))?;
            return Ok(TrainOutput {
                stage: o,
                extract: ext,
                history,
            });
        }
        Opened::Fresh(s) => s,
    };
    let feats = load_features(&ext.dir)?;
    let mut warnings = Vec::new();
    let mut train_s = split_samples(&feats, Split::Train, SampleMode::Train, &mut warnings);
    if cfg.phases == PhaseMode::OnsetOnly {
        train_s.retain(|s| s.phase == Phase::OnsetApex);
        warnings.clear();
    }
    let val_s = split_samples(&feats, Split::Val, SampleMode::Eval, &mut warnings);
    for w in warnings {
        st.log(w);
    }
    if train_s.is_empty() || val_s.is_empty() {
        return Err(Error::data("training needs sequences in both the train and val splits"));
    }
    let norm = NormStats::from_train(&train_s)?;
    let history = match cfg.train.precision {
        Precision::F32 => run_training::<f32>(&mut st, cfg, &train_s, &val_s, &norm)?,
        Precision::F64 => run_training::<f64>(&mut st, cfg, &train_s, &val_s, &norm)?,
    };
    st.write(HISTORY_FILE, history.to_csv())?;
    Ok(TrainOutput {
        stage: st.finish()?,
        extract: ext,
        history,
    })
}

fn run_training<T: Real>(
    st: &mut Stage,
    cfg: &RunConfig,
    train_s: &[TrainingSample],
    val_s: &[TrainingSample],
    norm: &NormStats,
) -> Result<TrainHistory> {
    let side = cfg.model.input_side;
    let train = SampleSet::<T>::from_samples(train_s, norm, side)?;
    let val = SampleSet::<T>::from_samples(val_s, norm, side)?;
    let resume = st.path(RESUME_FILE);
    let mut t = if resume.is_file() {
        let (t, _) = Trainer::<T>::load(&resume)?;
        st.log(format!("resuming after epoch {}", t.epochs_done()));
        t
    } else {
        Trainer::<T>::new(&cfg.model, &cfg.train)?
    };
    st.log(format!(
        "{} training samples, {} validation samples, {} parameters, {}",
        train.len(),
        val.len(),
        t.state.parameter_count(),
        cfg.train.precision
    ));
    while !t.should_stop() {
        let rec = t.run_epoch(&train, &val)?.clone();
        st.log(format!(
            "epoch {} train_loss {:.6} val_loss {:.6} val_uf1 {:.4}",
            rec.epoch, rec.train_loss, rec.val_loss, rec.val_uf1
        ));
        eprintln!("[train] epoch {} took {:.1} s", rec.epoch, rec.seconds);
        t.save(&resume, Some(norm))?;
    }
    let (best, history) = t.finish();
    if let Some(b) = history.best() {
        st.log(format!("best epoch {} (val_loss {:.6})", b.epoch, b.val_loss));
    }
    let extra = serde_json::to_value(TrainedMeta {
        history: history.clone(),
        phases: cfg.phases,
    })
    .expect("training metadata serializes");
    best.to_checkpoint(Some(norm), extra).save(&st.path(MODEL_FILE))?;
    if resume.is_file() {
        to_io(&resume, fs::remove_file(&resume))?;
    }
    Ok(history)
}

fn read_history(model: &Path) -> Result<TrainHistory> {
    let ck = Checkpoint::load(model)?;
    let meta: ModelMeta = serde_json::from_str(&ck.meta).map_err(|e| Error::Format(format!("model metadata: {e}")))?;
    let m: TrainedMeta = serde_json::from_value(meta.extra)
        .map_err(|e| Error::Format(format!("{}: no training history: {e}", model.display())))?;
    Ok(m.history)
}

/// Fused class probabilities per test sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub sequence_ids: Vec<String>,
    pub per_sequence: Vec<Vec<ClassProbs>>,
    pub labels: Vec<Labels>,
}

/// Scores the test split with the model stored in `train_dir`.
pub fn test_scores(cfg: &RunConfig, train_dir: &Path, extract_dir: &Path) -> Result<Scores> {
    let path = train_dir.join(MODEL_FILE);
    let ck = Checkpoint::load(&path)?;
    let meta: ModelMeta = serde_json::from_str(&ck.meta).map_err(|e| Error::Format(format!("model metadata: {e}")))?;
    let norm = meta
        .norm
        .ok_or_else(|| Error::Format(format!("{} lacks normalization statistics", path.display())))?;
    let feats = load_features(extract_dir)?;
    let samples = split_samples(&feats, Split::Test, SampleMode::Eval, &mut Vec::new());
    if samples.is_empty() {
        return Err(Error::data("no sequences in the test split"));
    }
    match meta.dtype {
        DType::F32 => scores_typed::<f32>(&ck, &samples, &norm, cfg),
        DType::F64 => scores_typed::<f64>(&ck, &samples, &norm, cfg),
    }
}

fn scores_typed<T: Real>(ck: &Checkpoint, samples: &[TrainingSample], norm: &NormStats, cfg: &RunConfig) -> Result<Scores> {
    let (state, _) = ModelState::<T>::from_checkpoint(ck)?;
    let data = SampleSet::<T>::from_samples(samples, norm, state.config.input_side)?;
    let (_, probs) = evaluate(&state, &data, &cfg.train)?;
    let (sequence_ids, per_sequence, labels) = data.group_by_sequence(&probs);
    Ok(Scores {
        sequence_ids,
        per_sequence,
        labels,
    })
}

fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        to_io(dir, fs::remove_dir_all(dir))?;
    }
    to_io(dir, fs::create_dir_all(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    to_io(path, fs::write(path, text))
}

/// Test-split metrics at the configured threshold.
pub fn eval(cfg: &RunConfig) -> Result<MetricReport> {
    let tr = train(cfg)?;
    let scores = test_scores(cfg, &tr.stage.dir, &tr.extract.dir)?;
    let theta = cfg.threshold();
    let predicted = predict_multilabel(&scores.per_sequence, theta)?;
    let report = MetricReport::new(&predicted, &scores.labels, theta)?;
    let dir = cfg.out.join(EVAL_DIR);
    fresh_dir(&dir)?;
    let entries: Vec<PredictionEntry> = scores
        .sequence_ids
        .iter()
        .zip(&scores.per_sequence)
        .zip(predicted.iter().zip(&scores.labels))
        .map(|((id, probs), (p, l))| PredictionEntry {
            sequence_id: id.clone(),
            probabilities: crate::model::fuse_probabilities(probs).expect("non-empty group"),
            predicted: *p,
            labels: *l,
        })
        .collect();
    write_text(&dir.join(PREDICTIONS_FILE), &write_jsonl(&entries))?;
    write_text(&dir.join(METRICS_FILE), &crate::evaluation::metrics_csv(&report))?;
    let line = format!(
        "UF1 {:.4} at threshold {:.2} over {} test sequences",
        report.uf1, theta, report.sequences
    );
    eprintln!("[eval] {line}");
    write_text(&dir.join(LOG_FILE), &format!("{line}\n"))?;
    Ok(report)
}

/// Threshold sweep on the test split and metrics at the best threshold.
pub fn sweep(cfg: &RunConfig) -> Result<(SweepResult, MetricReport)> {
    let tr = train(cfg)?;
    let scores = test_scores(cfg, &tr.stage.dir, &tr.extract.dir)?;
    let sw = threshold_sweep(&scores.per_sequence, &scores.labels, &cfg.sweep_grid)?;
    let predicted = predict_multilabel(&scores.per_sequence, sw.best_theta)?;
    let report = MetricReport::new(&predicted, &scores.labels, sw.best_theta)?;
    let dir = cfg.out.join(SWEEP_DIR);
    fresh_dir(&dir)?;
    emit_report(&report, &sw, &dir)?;
    let line = format!(
        "best threshold {:.2}: UF1 {:.4} over {} test sequences ({} thresholds tried)",
        sw.best_theta,
        sw.best_uf1,
        report.sequences,
        sw.curve.len()
    );
    eprintln!("[sweep] {line}");
    write_text(&dir.join(LOG_FILE), &format!("{line}\n"))?;
    Ok((sw, report))
}

fn ablation_slug(fusion_attention: bool, se: bool) -> &'static str {
    match (fusion_attention, se) {
        (true, true) => "full",
        (false, true) => "no-attention",
        (true, false) => "no-se",
        (false, false) => "no-attention-no-se",
    }
}

/// Trains the four attention/SE combinations for every training seed and
/// tabulates their swept UF1. The run matching the base configuration
/// reuses the main training stage.
pub fn ablate(cfg: &RunConfig) -> Result<Vec<AblationRun>> {
    let dir = cfg.out.join(ABLATE_DIR);
    to_io(&dir, fs::create_dir_all(&dir))?;
    let mut runs = Vec::new();
    let mut csv = String::from("configuration,fusion_attention,se,seed,theta,uf1\n");
    let mut log = Vec::new();
    for seed in cfg.training_seeds() {
        for (name, fa, se) in ABLATION_ROWS {
            let mut sub = cfg.clone();
            sub.model.fusion_attention = fa;
            sub.model.se = se;
            sub.train.seed = seed;
            let base = fa == cfg.model.fusion_attention && se == cfg.model.se && seed == cfg.seed;
            let rel = if base {
                PathBuf::from(TRAIN_DIR)
            } else {
                Path::new(ABLATE_DIR).join(format!("{}-seed{seed}", ablation_slug(fa, se)))
            };
            let tr = train_variant(&sub, &rel)?;
            let scores = test_scores(&sub, &tr.stage.dir, &tr.extract.dir)?;
            let sw = threshold_sweep(&scores.per_sequence, &scores.labels, &cfg.sweep_grid)?;
            let line = format!("{name}, seed {seed}: UF1 {:.4} at threshold {:.2}", sw.best_uf1, sw.best_theta);
            eprintln!("[ablate] {line}");
            log.push(line);
            csv.push_str(&format!(
                "{},{fa},{se},{seed},{:.2},{:.6}\n",
                ablation_slug(fa, se),
                sw.best_theta,
                sw.best_uf1
            ));
            runs.push(AblationRun {
                name: name.to_string(),
                fusion_attention: fa,
                se,
                uf1: sw.best_uf1,
            });
        }
    }
    log.extend(write_ablation(&runs, &dir)?);
    write_text(&dir.join(RUNS_FILE), &csv)?;
    write_text(&dir.join(LOG_FILE), &(log.join("\n") + "\n"))?;
    Ok(runs)
}

/// Finite-difference check of the miniature network.
pub fn gradcheck(cfg: &RunConfig) -> Result<GradcheckReport> {
    let report = model_gradcheck(&miniature_config(), cfg.seed, 1e-5)?;
    to_io(&cfg.out, fs::create_dir_all(&cfg.out))?;
    let text = format!(
        "max relative error {:.3e} over {} coordinates (tolerance {GRADCHECK_TOLERANCE:.0e}): {}\n",
        report.max_rel_error,
        report.coordinates,
        if report.max_rel_error <= GRADCHECK_TOLERANCE { "pass" } else { "fail" }
    );
    write_text(&cfg.out.join(GRADCHECK_FILE), &text)?;
    Ok(report)
}
