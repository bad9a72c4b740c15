use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::ClassProbs;
use crate::types::{Labels, NUM_CLASSES};

fn counts(tp: usize, fp: usize, fn_: usize) -> ClassCounts {
    ClassCounts { tp, fp, fn_, tn: 0 }
}

#[test]
fn f1_arithmetic() {
    let c = counts(2, 1, 1);
    assert!((c.precision() - 2.0 / 3.0).abs() < 1e-15);
    assert!((c.recall() - 2.0 / 3.0).abs() < 1e-15);
    assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(counts(0, 0, 0).f1(), 0.0);
    assert_eq!(counts(0, 3, 0).f1(), 0.0);
    assert_eq!(counts(0, 0, 4).precision(), 0.0);
}

#[test]
fn macro_examples() {
    assert_eq!(macro_f1(&[1.0; 5]), 1.0);
    assert!((macro_f1(&[1.0, 0.0, 0.0, 0.0, 0.0]) - 0.2).abs() < 1e-15);
}

fn random_labels(rng: &mut impl Rng, n: usize, density: f64) -> Vec<Labels> {
    (0..n)
        .map(|_| std::array::from_fn(|_| u8::from(rng.random_bool(density))))
        .collect()
}

/// Counts by visiting every (sequence, class) pair class-major and scores
/// each class from its own counts.
fn oracle(pred: &[Labels], truth: &[Labels]) -> ([f64; NUM_CLASSES], f64) {
    let mut f1 = [0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for i in 0..truth.len() {
            if pred[i][c] == 1 && truth[i][c] == 1 {
                tp += 1;
            }
            if pred[i][c] == 1 && truth[i][c] == 0 {
                fp += 1;
            }
            if pred[i][c] == 0 && truth[i][c] == 1 {
                fn_ += 1;
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        f1[c] = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    let mut sum = 0.0;
    for v in f1 {
        sum += v;
    }
    (f1, sum / NUM_CLASSES as f64)
}

#[test]
fn matches_counting_oracle_on_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let d = rng.random_range(0.05..0.6);
        let truth = random_labels(&mut rng, n, d);
        let pred = random_labels(&mut rng, n, d);
        let r = MetricReport::new(&pred, &truth, 0.2).unwrap();
        let (f1, uf1) = oracle(&pred, &truth);
        assert_eq!(r.f1, f1);
        assert_eq!(r.uf1, uf1);
        for k in r.counts.classes {
            assert_eq!(k.total(), n);
        }
        assert!(r.f1.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((r.uf1 - r.f1.iter().sum::<f64>() / 5.0).abs() <= 1e-9);
    }
}

#[test]
fn perfect_and_always_wrong_predictors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = random_labels(&mut rng, 50, 0.4);
    assert_eq!(uf1_score(&truth, &truth).unwrap(), 1.0);
    let balanced: Vec<Labels> = (0..50)
        .map(|i| std::array::from_fn(|c| u8::from(c == i % 5)))
        .collect();
    let wrong: Vec<Labels> = (0..50)
        .map(|i| std::array::from_fn(|c| u8::from(c == (i + 1) % 5)))
        .collect();
    assert!(uf1_score(&wrong, &balanced).unwrap() < 0.5);
    assert!(uf1_score(&wrong[..3], &balanced).is_err());
}

#[test]
fn default_grid_shape() {
    let g = default_grid();
    assert_eq!(g.len(), 21);
    assert_eq!(g[0], 0.10);
    assert_eq!(g[20], 0.30);
    assert!(g.windows(2).all(|w| ((w[1] - w[0]) - 0.01).abs() < 1e-12));
}

#[test]
fn constant_curve_picks_smallest_theta() {
    let probs: Vec<Vec<ClassProbs>> = (0..6).map(|i| vec![[0.5 + 0.05 * i as f64; 5]]).collect();
    let truth = vec![[1u8; 5]; 6];
    let sw = threshold_sweep(&probs, &truth, &default_grid()).unwrap();
    assert!(sw.curve.iter().all(|&(_, u)| u == 1.0));
    assert_eq!(sw.best_theta, 0.10);
    assert_eq!(sw.best_index(), 0);
    assert!(threshold_sweep(&probs, &truth, &[]).is_err());
}

fn random_probs(rng: &mut impl Rng, n: usize) -> Vec<Vec<ClassProbs>> {
    (0..n)
        .map(|_| {
            (0..rng.random_range(1..3))
                .map(|_| std::array::from_fn(|_| rng.random_range(0.0..0.5)))
                .collect()
        })
        .collect()
}

#[test]
fn sweep_matches_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probs = random_probs(&mut rng, 30);
    let truth = random_labels(&mut rng, 30, 0.3);
    let grid = default_grid();
    let sw = threshold_sweep(&probs, &truth, &grid).unwrap();
    let mut best = (0.0, -1.0);
    for (k, &theta) in grid.iter().enumerate() {
        let pred: Vec<Labels> = probs
            .iter()
            .map(|s| {
                let mut mean = [0.0; 5];
                for p in s {
                    for c in 0..5 {
                        mean[c] += p[c] / s.len() as f64;
                    }
                }
                let mut bits = mean.map(|p| u8::from(p >= theta));
                if bits == [0; 5] {
                    let arg = (0..5).fold(0, |b, c| if mean[c] > mean[b] { c } else { b });
                    bits[arg] = 1;
                }
                bits
            })
            .collect();
        let (_, uf1) = oracle(&pred, &truth);
        assert_eq!(sw.curve[k], (theta, uf1));
        if uf1 > best.1 {
            best = (theta, uf1);
        }
    }
    assert_eq!((sw.best_theta, sw.best_uf1), best);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uf1_is_permutation_invariant(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_labels(&mut rng, n, 0.3);
        let pred = random_labels(&mut rng, n, 0.3);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let pt: Vec<Labels> = idx.iter().map(|&i| truth[i]).collect();
        let pp: Vec<Labels> = idx.iter().map(|&i| pred[i]).collect();
        prop_assert_eq!(uf1_score(&pred, &truth).unwrap(), uf1_score(&pp, &pt).unwrap());
    }

    #[test]
    fn raising_theta_never_adds_true_positives(seed in any::<u64>(), lo in 0.05f64..0.4, step in 0.0f64..0.3) {
        let hi = (lo + step).min(0.95);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs = random_probs(&mut rng, 25);
        let truth = random_labels(&mut rng, 25, 0.3);
        let fused: Vec<ClassProbs> = probs.iter().map(|s| crate::model::fuse_probabilities(s).unwrap()).collect();
        let keep: Vec<usize> = (0..25).filter(|&i| fused[i].iter().any(|&p| p >= hi)).collect();
        let sub: Vec<Vec<ClassProbs>> = keep.iter().map(|&i| probs[i].clone()).collect();
        let st: Vec<Labels> = keep.iter().map(|&i| truth[i]).collect();
        let a = ConfusionCounts::from_predictions(&crate::model::predict_multilabel(&sub, lo).unwrap(), &st).unwrap();
        let b = ConfusionCounts::from_predictions(&crate::model::predict_multilabel(&sub, hi).unwrap(), &st).unwrap();
        for c in 0..NUM_CLASSES {
            prop_assert!(b.classes[c].tp <= a.classes[c].tp);
        }
    }
}

fn sample_report() -> (MetricReport, SweepResult) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let probs = random_probs(&mut rng, 20);
    let truth = random_labels(&mut rng, 20, 0.3);
    let sw = threshold_sweep(&probs, &truth, &default_grid()).unwrap();
    let pred = crate::model::predict_multilabel(&probs, sw.best_theta).unwrap();
    (MetricReport::new(&pred, &truth, sw.best_theta).unwrap(), sw)
}

#[test]
fn report_files_are_deterministic_and_well_formed() {
    let (rep, sw) = sample_report();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    emit_report(&rep, &sw, a.path()).unwrap();
    emit_report(&rep, &sw, b.path()).unwrap();
    for f in [METRICS_FILE, SWEEP_CSV_FILE, SWEEP_SVG_FILE] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let sweep = std::fs::read_to_string(a.path().join(SWEEP_CSV_FILE)).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines.len(), 22);
    assert_eq!(lines[0], "theta,uf1");
    assert!(lines[1].starts_with("0.10,"));
    assert!(lines[21].starts_with("0.30,"));

    let metrics = std::fs::read_to_string(a.path().join(METRICS_FILE)).unwrap();
    let rows: Vec<&str> = metrics.lines().collect();
    assert_eq!(rows[0], "class,tp,fp,fn,precision,recall,f1");
    assert_eq!(rows.len(), 7);
    assert!(rows[1].starts_with("Negative,"));
    assert_eq!(rows[6], format!("UF1,,,,,,{:.6}", rep.uf1));

    let svg = std::fs::read_to_string(a.path().join(SWEEP_SVG_FILE)).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("well-formed svg");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 1);
    let poly = doc.descendants().find(|n| n.has_tag_name("polyline")).unwrap();
    assert_eq!(poly.attribute("points").unwrap().split(' ').count(), 21);
}

#[test]
fn emit_report_surfaces_path_on_failure() {
    let (rep, sw) = sample_report();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let e = emit_report(&rep, &sw, &blocker.join("sub")).unwrap_err();
    assert!(e.to_string().contains("file"), "{e}");
}

#[test]
fn ablation_rows_in_fixed_order() {
    let run = |name: &str, fa, se, uf1| AblationRun {
        name: name.into(),
        fusion_attention: fa,
        se,
        uf1,
    };
    let runs = vec![
        run("neither", false, false, 0.510),
        run("no-se", true, false, 0.518),
        run("full", true, true, 0.554),
        run("no-att", false, true, 0.524),
    ];
    let (t, notes) = ablation_table(&runs).unwrap();
    assert!(notes.is_empty());
    let vals: Vec<&str> = t
        .lines()
        .skip(2)
        .map(|l| l.trim_end_matches(" |").rsplit("| ").next().unwrap())
        .collect();
    assert_eq!(vals, ["0.554", "0.524", "0.518", "0.510"]);
    assert!(t.lines().nth(2).unwrap().starts_with("| Full model"));

    let (t, notes) = ablation_table(&runs[2..3]).unwrap();
    assert_eq!(notes.len(), 3);
    assert_eq!(t.lines().filter(|l| l.starts_with("| ")).count(), 2);
    assert!(ablation_table(&[]).is_err());

    let seeds = vec![run("a", true, true, 0.5), run("b", true, true, 0.6)];
    assert!(ablation_table(&seeds).unwrap().0.contains("| 2 | 0.550 |"));
}
