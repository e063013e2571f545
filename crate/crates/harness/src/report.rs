//! Combines the metrics of several experiment runs into one text report:
//! a recall table with one column per removal method plus target and
//! non-target accuracy tables.

use crate::HarnessError;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
struct RunMetrics {
    method: String,
    // phase -> (target, non_target, recall, inversion)
    rows: Vec<ParsedRow>,
}

#[derive(Debug, Clone)]
struct ParsedRow {
    phase: String,
    target: Option<f64>,
    non_target: Option<f64>,
    recall: Option<f64>,
    inversion: Option<f64>,
}

fn parse_opt(field: &str) -> Option<f64> {
    if field.is_empty() {
        None
    } else {
        field.parse().ok()
    }
}

fn read_run(dir: &Path) -> Result<RunMetrics, HarnessError> {
    let metrics_path = dir.join("metrics.csv");
    let config_path = dir.join("resolved_config.txt");
    let mut missing = Vec::new();
    if !metrics_path.exists() {
        missing.push(metrics_path.clone());
    }
    if !config_path.exists() {
        missing.push(config_path.clone());
    }
    if !missing.is_empty() {
        return Err(HarnessError::MissingFiles(missing));
    }
    let read = |p: &PathBuf| {
        std::fs::read_to_string(p).map_err(|source| HarnessError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let config_text = read(&config_path)?;
    let method = config_text
        .lines()
        .find_map(|l| l.strip_prefix("removal.method = "))
        .unwrap_or("train")
        .trim()
        .to_string();
    let metrics_text = read(&metrics_path)?;
    let mut rows = Vec::new();
    for line in metrics_text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(HarnessError::Invalid(format!(
                "{}: malformed metrics line {line:?}",
                metrics_path.display()
            )));
        }
        rows.push(ParsedRow {
            phase: fields[0].to_string(),
            target: parse_opt(fields[1]),
            non_target: parse_opt(fields[2]),
            recall: parse_opt(fields[3]),
            inversion: parse_opt(fields[4]),
        });
    }
    Ok(RunMetrics { method, rows })
}

const METHOD_ORDER: &[(&str, &str)] = &[
    ("naive", "Naive Retraining"),
    ("unlearning", "Unlearning"),
    ("amnesiac", "Amnesiac Unlearning"),
];

fn render_table(
    title: &str,
    runs: &[RunMetrics],
    pick: impl Fn(&ParsedRow) -> Option<f64>,
) -> Option<String> {
    // Methods in Table-1 order, then anything else alphabetically.
    let mut methods: Vec<&str> = Vec::new();
    for (key, _) in METHOD_ORDER {
        if runs.iter().any(|r| r.method == *key) {
            methods.push(key);
        }
    }
    let mut extra: Vec<&str> = runs
        .iter()
        .map(|r| r.method.as_str())
        .filter(|m| !METHOD_ORDER.iter().any(|(k, _)| k == m))
        .collect();
    extra.sort_unstable();
    extra.dedup();
    methods.extend(extra);

    // phase -> method -> value
    let mut phases: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut any = false;
    for run in runs {
        for row in &run.rows {
            if !phases.contains(&row.phase) {
                phases.push(row.phase.clone());
            }
            if let Some(v) = pick(row) {
                any = true;
                cells.insert((row.phase.clone(), run.method.clone()), v);
            }
        }
    }
    if !any {
        return None;
    }

    let label = |m: &str| {
        METHOD_ORDER
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, l)| *l)
            .unwrap_or(m)
    };
    let mut s = String::new();
    let _ = writeln!(s, "== {title} ==");
    let _ = write!(s, "{:<8}", "phase");
    for m in &methods {
        let _ = write!(s, " {:>20}", label(m));
    }
    let _ = writeln!(s);
    for phase in &phases {
        let _ = write!(s, "{phase:<8}");
        for m in &methods {
            match cells.get(&(phase.clone(), m.to_string())) {
                Some(v) => {
                    let _ = write!(s, " {:>20.8}", v);
                }
                None => {
                    let _ = write!(s, " {:>20}", "-");
                }
            }
        }
        let _ = writeln!(s);
    }
    Some(s)
}

/// Renders the combined report for every run directory under `metrics_dir`
/// (a run directory is any immediate subdirectory containing `metrics.csv`;
/// `metrics_dir` itself counts if it contains one). Regenerating from the
/// same inputs yields identical bytes.
pub fn report(metrics_dir: &Path) -> Result<String, HarnessError> {
    let mut run_dirs: Vec<PathBuf> = Vec::new();
    if metrics_dir.join("metrics.csv").exists() {
        run_dirs.push(metrics_dir.to_path_buf());
    }
    if metrics_dir.is_dir() {
        let entries = metrics_dir
            .read_dir()
            .map_err(|source| HarnessError::Io {
                path: metrics_dir.display().to_string(),
                source,
            })?;
        let mut subdirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir() && p.join("metrics.csv").exists())
            .collect();
        subdirs.sort();
        run_dirs.extend(subdirs);
    }
    if run_dirs.is_empty() {
        return Err(HarnessError::MissingFiles(vec![
            metrics_dir.join("metrics.csv"),
            metrics_dir.join("<run>/metrics.csv"),
        ]));
    }
    let runs: Vec<RunMetrics> = run_dirs
        .iter()
        .map(|d| read_run(d))
        .collect::<Result<_, _>>()?;

    let mut out = String::new();
    let _ = writeln!(out, "combined report: {} run(s)", runs.len());
    let _ = writeln!(out);
    if let Some(t) = render_table("Membership inference recall", &runs, |r| r.recall) {
        out.push_str(&t);
        let _ = writeln!(out);
    }
    if let Some(t) = render_table("Target accuracy", &runs, |r| r.target) {
        out.push_str(&t);
        let _ = writeln!(out);
    }
    if let Some(t) = render_table("Non-target accuracy", &runs, |r| r.non_target) {
        out.push_str(&t);
        let _ = writeln!(out);
    }
    if let Some(t) = render_table(
        "Inversion recognizability (oracle-probability proxy)",
        &runs,
        |r| r.inversion,
    ) {
        out.push_str(&t);
        let _ = writeln!(out);
    }
    Ok(out)
}
