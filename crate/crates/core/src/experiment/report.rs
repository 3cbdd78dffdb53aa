//! Aggregates per-arm metrics into a comparison table with Wilcoxon
//! signed-rank tests of each baseline against the full method.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::pipeline::{ArmMetrics, CURVETE_ARM, REPORT};
use crate::error::{Error, Result};
use crate::metrics::{format_p_value, render_table, wilcoxon_signed_rank, ConfusionMatrix, MetricsReport};
use crate::training::AblationMode;

pub const ALPHA: f64 = 0.05;

fn read_metrics(dir: &Path) -> Result<Vec<ArmMetrics>> {
    let mut out = vec![];
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("metrics_") && name.ends_with(".json") {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            out.push(serde_json::from_str(&text)?);
        }
    }
    Ok(out)
}

fn arm_order(arm: &str) -> (usize, String) {
    if arm == CURVETE_ARM {
        return (0, String::new());
    }
    match AblationMode::ALL.iter().position(|m| m.as_str() == arm) {
        Some(i) => (1 + i, String::new()),
        None => (usize::MAX, arm.to_string()),
    }
}

fn display_name(arm: &str) -> String {
    if arm == CURVETE_ARM {
        "CURVETE".into()
    } else {
        arm.into()
    }
}

fn mean_report(reports: &[&MetricsReport]) -> MetricsReport {
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    MetricsReport {
        accuracy: mean(|r| r.accuracy),
        macro_precision: mean(|r| r.macro_precision),
        macro_recall: mean(|r| r.macro_recall),
        macro_f1: mean(|r| r.macro_f1),
        per_class: vec![],
        confusion: ConfusionMatrix { counts: vec![] },
    }
}

/// Loaded metrics for every run: either `dir` itself or each of its
/// subdirectories that holds metrics files.
fn collect_runs(dir: &Path) -> Result<Vec<(PathBuf, Vec<ArmMetrics>)>> {
    let here = read_metrics(dir)?;
    if !here.is_empty() {
        return Ok(vec![(dir.to_path_buf(), here)]);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut runs = vec![];
    for d in subdirs {
        let m = read_metrics(&d)?;
        if !m.is_empty() {
            runs.push((d, m));
        }
    }
    if runs.is_empty() {
        return Err(Error::Dependency {
            path: dir.join("metrics_curvete.json"),
            command: "evaluate".into(),
        });
    }
    Ok(runs)
}

/// Builds the report for `dir`, writes `report.md` there and returns it.
///
/// With one run, the test compares per-sample correctness of each arm with
/// the full method. With several runs (one per seed, same configuration),
/// it compares test accuracies paired by run.
pub fn build_report(dir: &Path) -> Result<String> {
    let runs = collect_runs(dir)?;
    let mut arms: BTreeMap<String, Vec<&ArmMetrics>> = BTreeMap::new();
    for (path, metrics) in &runs {
        let hash = &metrics[0].manifest_hash;
        if let Some(bad) = metrics.iter().find(|m| &m.manifest_hash != hash) {
            return Err(Error::input(format!(
                "{}: metrics for `{}` come from manifest {} but `{}` from {}",
                path.display(),
                bad.arm,
                bad.manifest_hash,
                metrics[0].arm,
                hash
            )));
        }
        for m in metrics {
            arms.entry(m.arm.clone()).or_default().push(m);
        }
    }
    let config = &runs[0].1[0].config_hash;
    if let Some((path, _)) = runs.iter().find(|(_, m)| &m[0].config_hash != config) {
        return Err(Error::input(format!(
            "{} was run with a different configuration than {}",
            path.display(),
            runs[0].0.display()
        )));
    }
    let multi = runs.len() > 1;
    let mut names: Vec<&String> = arms.keys().collect();
    names.sort_by_key(|a| arm_order(a));

    let mut out = String::from("# Results\n\n");
    if multi {
        out.push_str(&format!("config hash: `{config}`\n\n"));
        let seeds: Vec<String> = runs.iter().map(|(_, m)| m[0].seed.to_string()).collect();
        out.push_str(&format!("runs: {} (seeds {})\n\n", runs.len(), seeds.join(", ")));
    } else {
        out.push_str(&format!("manifest hash: `{}`\n\n", runs[0].1[0].manifest_hash));
    }
    let rows: Vec<(String, MetricsReport)> = names
        .iter()
        .map(|a| {
            let reports: Vec<&MetricsReport> = arms[*a].iter().map(|m| &m.report).collect();
            let label = if multi {
                format!("{} (mean of {})", display_name(a), reports.len())
            } else {
                display_name(a)
            };
            (label, mean_report(&reports))
        })
        .collect();
    out.push_str(&render_table(&rows));

    let notes: Vec<String> = names
        .iter()
        .filter_map(|a| arms[*a].iter().find_map(|m| m.note.clone()).map(|n| format!("- {}: {n}\n", display_name(a))))
        .collect();
    if !notes.is_empty() {
        out.push_str("\nNotes:\n\n");
        out.extend(notes);
    }

    out.push_str(&format!("\n## Wilcoxon signed-rank vs CURVETE (alpha = {ALPHA})\n\n"));
    out.push_str(if multi {
        "Pairs: test accuracy per run.\n\n"
    } else {
        "Pairs: per-sample test correctness (1 correct, 0 wrong).\n\n"
    });
    let Some(reference) = arms.get(CURVETE_ARM) else {
        out.push_str("not computable: no metrics for CURVETE\n");
        return finish(dir, out);
    };
    out.push_str("| Baseline | n | W | p | significant |\n| --- | ---: | ---: | ---: | --- |\n");
    for a in names.iter().filter(|a| a.as_str() != CURVETE_ARM) {
        let pairs = paired(reference, &arms[*a], multi);
        let line = match pairs.and_then(|(x, y)| wilcoxon_signed_rank(&x, &y, ALPHA)) {
            Ok(w) => format!(
                "| {} | {} | {} | {} | {} |\n",
                display_name(a),
                w.n,
                w.statistic,
                format_p_value(w.p_value),
                if w.significant { "yes" } else { "no" }
            ),
            Err(e) => format!("| {} | - | - | - | not computable: {e} |\n", display_name(a)),
        };
        out.push_str(&line);
    }
    finish(dir, out)
}

fn finish(dir: &Path, out: String) -> Result<String> {
    let path = dir.join(REPORT);
    fs::write(&path, &out).map_err(|e| Error::io(&path, e))?;
    Ok(out)
}

/// Paired observations of the full method and one baseline.
fn paired(reference: &[&ArmMetrics], other: &[&ArmMetrics], multi: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    if multi {
        let by_seed: BTreeMap<u64, f64> = other.iter().map(|m| (m.seed, m.report.accuracy)).collect();
        let (mut x, mut y) = (vec![], vec![]);
        for r in reference {
            if let Some(&acc) = by_seed.get(&r.seed) {
                x.push(r.report.accuracy);
                y.push(acc);
            }
        }
        return Ok((x, y));
    }
    let (r, o) = (reference[0], other[0]);
    if r.test_ids != o.test_ids {
        return Err(Error::input(format!("`{}` and `{}` were scored on different test sets", r.arm, o.arm)));
    }
    let bits = |v: &[bool]| v.iter().map(|&c| c as u8 as f64).collect::<Vec<_>>();
    Ok((bits(&r.correct), bits(&o.correct)))
}
