use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use super::sweep::SweepResult;
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SWEEP_CSV_FILE: &str = "sweep.csv";
pub const SWEEP_SVG_FILE: &str = "sweep.svg";
pub const ABLATION_FILE: &str = "ablation.md";

pub fn metrics_csv(r: &MetricReport) -> String {
    let mut s = String::from("class,tp,fp,fn,precision,recall,f1\n");
    for (name, (c, f1)) in r.class_names.iter().zip(r.counts.classes.iter().zip(r.f1)) {
        writeln!(
            s,
            "{name},{},{},{},{:.6},{:.6},{:.6}",
            c.tp,
            c.fp,
            c.fn_,
            c.precision(),
            c.recall(),
            f1
        )
        .unwrap();
    }
    writeln!(s, "UF1,,,,,,{:.6}", r.uf1).unwrap();
    s
}

pub fn sweep_csv(sw: &SweepResult) -> String {
    let mut s = String::from("theta,uf1\n");
    for (t, u) in &sw.curve {
        writeln!(s, "{t:.2},{u:.6}").unwrap();
    }
    s
}

/// Line plot of UF1 against θ with the selected threshold circled.
pub fn sweep_svg(sw: &SweepResult) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 48.0;
    let (t0, t1) = sw
        .curve
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(t, _)| (a.min(t), b.max(t)));
    let span = if t1 > t0 { t1 - t0 } else { 1.0 };
    let px = |t: f64| M + (t - t0) / span * (W - 2.0 * M);
    let py = |u: f64| H - M - u.clamp(0.0, 1.0) * (H - 2.0 * M);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<path d="M{M} {a} L{M} {b} L{c} {b}" fill="none" stroke="black"/>"#,
        a = M,
        b = H - M,
        c = W - M
    )
    .unwrap();
    for k in 0..=4 {
        let u = k as f64 / 4.0;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{u:.2}</text>"#,
            M - 6.0,
            py(u) + 4.0
        )
        .unwrap();
    }
    for &t in &[t0, t1] {
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{t:.2}</text>"#,
            px(t),
            H - M + 16.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">threshold</text>"#,
        W / 2.0,
        H - 10.0
    )
    .unwrap();
    writeln!(s, r#"<text x="14" y="{:.2}" font-size="12">UF1</text>"#, M - 14.0).unwrap();
    let pts: Vec<String> = sw
        .curve
        .iter()
        .map(|&(t, u)| format!("{:.2},{:.2}", px(t), py(u)))
        .collect();
    writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        pts.join(" ")
    )
    .unwrap();
    writeln!(
        s,
        r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="crimson"><title>best {:.2}: {:.3}</title></circle>"#,
        px(sw.best_theta),
        py(sw.best_uf1),
        sw.best_theta,
        sw.best_uf1
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `metrics.csv`, `sweep.csv` and `sweep.svg` into `dir`.
pub fn emit_report(report: &MetricReport, sweep: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        (METRICS_FILE, metrics_csv(report)),
        (SWEEP_CSV_FILE, sweep_csv(sweep)),
        (SWEEP_SVG_FILE, sweep_svg(sweep)),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        write_file(&p, &body)?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub name: String,
    pub fusion_attention: bool,
    pub se: bool,
    pub uf1: f64,
}

/// Row labels and toggles in table order.
pub const ABLATION_ROWS: [(&str, bool, bool); 4] = [
    ("Full model (FA + SE)", true, true),
    ("Without fusion attention", false, true),
    ("Without SE", true, false),
    ("Without FA and SE", false, false),
];

/// Markdown table with one row per toggle combination. Several runs of the
/// same combination (seeds) are averaged. Missing combinations are left out
/// and reported in the returned notices.
pub fn ablation_table(runs: &[AblationRun]) -> Result<(String, Vec<String>)> {
    if runs.is_empty() {
        return Err(Error::usage("ablation table needs at least one run"));
    }
    let mut s = String::from("| Configuration | Fusion attention | SE | Runs | UF1 |\n|---|---|---|---|---|\n");
    let mut notices = Vec::new();
    let mark = |b: bool| if b { "yes" } else { "no" };
    for (label, fa, se) in ABLATION_ROWS {
        let vals: Vec<f64> = runs
            .iter()
            .filter(|r| r.fusion_attention == fa && r.se == se)
            .map(|r| r.uf1)
            .collect();
        if vals.is_empty() {
            notices.push(format!("no run for \"{label}\"; row omitted"));
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        writeln!(s, "| {label} | {} | {} | {} | {mean:.3} |", mark(fa), mark(se), vals.len()).unwrap();
    }
    for n in &notices {
        writeln!(s, "\nNote: {n}").unwrap();
    }
    Ok((s, notices))
}

pub fn write_ablation(runs: &[AblationRun], dir: &Path) -> Result<Vec<String>> {
    let (table, notices) = ablation_table(runs)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(ABLATION_FILE), &table)?;
    Ok(notices)
}
