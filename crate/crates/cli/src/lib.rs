//! Batch driver behind the `gbplan` binary: seed and sweep expansion, run
//! output files, sweep summaries and the experiment tables built from them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gbplan_core::metrics::{self, RobotMetrics, RunSummary};
use gbplan_core::{ConfigError, RunResult, ScenarioConfig, SimError};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Config {
        path: String,
        #[source]
        source: ConfigError,
    },
    #[error("invalid seed list `{0}`: use a..b (inclusive), a comma list, or a single integer")]
    Seeds(String),
    #[error("override `{0}` must look like key=value")]
    Override(String),
    #[error("run {label} seed {seed}: {source}")]
    Sim {
        label: String,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("no run results found under {0}")]
    NoRuns(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> CliError + '_ {
    move |source| CliError::Json {
        path: path.display().to_string(),
        source,
    }
}

/// Parses `a..b` (inclusive), `a,b,c` or a single seed.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Seeds(text.to_string());
    let text = text.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Splits a value on top-level commas, leaving commas inside brackets,
/// braces or quotes alone so TOML arrays and strings pass through intact.
fn split_top_level(value: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut quoted = false;
    let mut current = String::new();
    for c in value.chars() {
        match c {
            '"' => quoted = !quoted,
            '[' | '{' if !quoted => depth += 1,
            ']' | '}' if !quoted => depth -= 1,
            ',' if !quoted && depth == 0 => {
                parts.push(current.trim().to_string());
                current.clear();
                continue;
            }
            _ => {}
        }
        current.push(c);
    }
    parts.push(current.trim().to_string());
    parts
}

/// One point of a parameter sweep: the overrides that define it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Combination {
    pub overrides: Vec<String>,
}

impl Combination {
    /// Directory-safe name, `base` when there is nothing swept.
    pub fn label(&self, swept: &[String]) -> String {
        let parts: Vec<String> = self
            .overrides
            .iter()
            .filter(|o| swept.iter().any(|k| o.starts_with(&format!("{k}="))))
            .map(|o| {
                o.chars()
                    .map(|c| {
                        if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                            c
                        } else {
                            '_'
                        }
                    })
                    .collect()
            })
            .collect();
        if parts.is_empty() {
            "base".to_string()
        } else {
            parts.join("__")
        }
    }
}

/// Expands `key=v1,v2,...` overrides into the cartesian product of their
/// values, in the order given. Returns the combinations and the swept keys.
pub fn expand_sweep(sets: &[String]) -> Result<(Vec<Combination>, Vec<String>), CliError> {
    let mut combos = vec![Vec::<String>::new()];
    let mut swept = Vec::new();
    for set in sets {
        let (key, value) = set.split_once('=').ok_or_else(|| CliError::Override(set.clone()))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(CliError::Override(set.clone()));
        }
        let values = split_top_level(value);
        if values.len() > 1 {
            swept.push(key.to_string());
        }
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut next = c.clone();
                    next.push(format!("{key}={v}"));
                    next
                })
            })
            .collect();
    }
    Ok((
        combos.into_iter().map(|overrides| Combination { overrides }).collect(),
        swept,
    ))
}

/// Loads a scenario file and applies overrides; errors name the file.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cfg = ScenarioConfig::from_toml_with_overrides(&text, overrides).map_err(|source| CliError::Config {
        path: path.display().to_string(),
        source,
    })?;
    cfg.validate().map_err(|source| CliError::Config {
        path: path.display().to_string(),
        source,
    })?;
    Ok(cfg)
}

/// What a run directory's `metrics.json` holds.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetricsFile<'a> {
    pub label: &'a str,
    pub seed: u64,
    pub overrides: &'a [String],
    pub summary: &'a RunSummary,
    pub robots: &'a [RobotMetrics],
}

/// Writes `trace.csv`, `robots.csv`, `metadata.json` and `metrics.json`
/// for one finished run into `dir`.
pub fn write_run(
    dir: &Path,
    label: &str,
    seed: u64,
    overrides: &[String],
    result: &RunResult,
) -> Result<RunSummary, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let per_robot = metrics::robot_metrics(result);
    let summary = metrics::summarize(result, &per_robot);

    let trace_path = dir.join("trace.csv");
    let file = fs::File::create(&trace_path).map_err(io_err(&trace_path))?;
    result
        .write_trace_csv(std::io::BufWriter::new(file))
        .map_err(io_err(&trace_path))?;

    let robots_path = dir.join("robots.csv");
    let file = fs::File::create(&robots_path).map_err(io_err(&robots_path))?;
    metrics::write_robot_csv(&per_robot, std::io::BufWriter::new(file)).map_err(io_err(&robots_path))?;

    let mut meta = result.metadata();
    meta["label"] = Value::from(label);
    meta["seed"] = Value::from(seed);
    meta["overrides"] = Value::from(overrides.to_vec());
    let meta_path = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&meta).map_err(json_err(&meta_path))?;
    fs::write(&meta_path, text).map_err(io_err(&meta_path))?;

    let metrics_path = dir.join("metrics.json");
    let doc = RunMetricsFile {
        label,
        seed,
        overrides,
        summary: &summary,
        robots: &per_robot,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(json_err(&metrics_path))?;
    fs::write(&metrics_path, text).map_err(io_err(&metrics_path))?;
    Ok(summary)
}

/// Mean, sample standard deviation and range of a set of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(Self {
            mean,
            std: var.sqrt(),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            n,
        })
    }
}

/// One row of a sweep summary: all seeds of one combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub overrides: Vec<String>,
    pub seeds: Vec<u64>,
    /// Effective values of the parameters the tables key on.
    pub params: serde_json::Map<String, Value>,
    pub incomplete_runs: usize,
    pub makespan: Option<Spread>,
    pub mean_distance: Option<Spread>,
    pub mean_ldj: Option<Spread>,
    pub collisions: Option<Spread>,
    pub q_in: Option<Spread>,
    pub q_out: Option<Spread>,
    pub violations: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
}

/// Config keys whose effective values are copied into summary rows.
pub const TABLE_PARAMS: [&str; 6] = [
    "comm.radius",
    "comm.gamma",
    "robots.initial_speed",
    "robots.count",
    "junction.inflow_rate",
    "kind",
];

fn lookup<'a>(value: &'a Value, dotted: &str) -> Option<&'a Value> {
    dotted.split('.').try_fold(value, |v, k| v.get(k))
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

fn number(v: Option<&Value>) -> Option<f64> {
    v.and_then(Value::as_f64)
}

/// Builds the sweep summary purely from the `metrics.json` and
/// `metadata.json` files of every run directory under `runs_root`
/// (layout `<label>/seed<seed>/`).
pub fn summarize_runs(runs_root: &Path) -> Result<SweepSummary, CliError> {
    let mut by_label: Vec<(String, Vec<(Value, Value)>)> = Vec::new();
    let mut labels: Vec<PathBuf> = fs::read_dir(runs_root)
        .map_err(io_err(runs_root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    labels.sort();
    for label_dir in labels {
        let mut seed_dirs: Vec<PathBuf> = fs::read_dir(&label_dir)
            .map_err(io_err(&label_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("metrics.json").is_file())
            .collect();
        seed_dirs.sort();
        let mut runs = Vec::new();
        for d in seed_dirs {
            runs.push((
                read_json(&d.join("metrics.json"))?,
                read_json(&d.join("metadata.json"))?,
            ));
        }
        if !runs.is_empty() {
            let label = label_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            by_label.push((label, runs));
        }
    }
    if by_label.is_empty() {
        return Err(CliError::NoRuns(runs_root.display().to_string()));
    }

    let rows = by_label
        .into_iter()
        .map(|(label, mut runs)| {
            runs.sort_by_key(|(m, _)| m["seed"].as_u64());
            let collect = |f: &dyn Fn(&Value) -> Option<f64>| -> Option<Spread> {
                let vals: Vec<f64> = runs.iter().filter_map(|(m, _)| f(&m["summary"])).collect();
                Spread::of(&vals)
            };
            let (first_metrics, first_meta) = &runs[0];
            let params = TABLE_PARAMS
                .iter()
                .filter_map(|k| lookup(&first_meta["config"], k).map(|v| (k.to_string(), v.clone())))
                .collect();
            SweepRow {
                label,
                overrides: serde_json::from_value(first_metrics["overrides"].clone()).unwrap_or_default(),
                seeds: runs.iter().filter_map(|(m, _)| m["seed"].as_u64()).collect(),
                params,
                incomplete_runs: runs
                    .iter()
                    .filter(|(m, _)| m["summary"]["status"] == "incomplete")
                    .count(),
                makespan: collect(&|s| {
                    (s["makespan"]["complete"] == true)
                        .then(|| number(s["makespan"].get("seconds")))
                        .flatten()
                }),
                mean_distance: collect(&|s| number(s.get("mean_distance"))),
                mean_ldj: collect(&|s| number(s.get("mean_ldj"))),
                collisions: collect(&|s| number(s.get("collision_episodes"))),
                q_in: collect(&|s| number(lookup(s, "flow.q_in"))),
                q_out: collect(&|s| number(lookup(s, "flow.q_out"))),
                violations: collect(&|s| number(lookup(s, "flow.correctness_violations"))),
            }
        })
        .collect();
    Ok(SweepSummary { rows })
}

pub fn write_summary(path: &Path, summary: &SweepSummary) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(summary).map_err(json_err(path))?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_summary(path: &Path) -> Result<SweepSummary, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

/// Outcome of a `run` invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub runs: usize,
    pub incomplete: usize,
    pub summary_path: PathBuf,
}

/// Runs every (combination × seed), writing per-run files under
/// `out/runs/<label>/seed<seed>/` and the sweep summary at
/// `out/summary.json`. `progress` receives one line per finished run.
pub fn run_sweep(
    scenario: &Path,
    seeds: &[u64],
    sets: &[String],
    max_ticks: Option<u64>,
    out: &Path,
    mut progress: impl FnMut(&str),
) -> Result<RunReport, CliError> {
    let (combos, swept) = expand_sweep(sets)?;
    // Validate every combination before spending time on any run.
    let mut plans = Vec::new();
    for combo in &combos {
        for &seed in seeds {
            let mut overrides = combo.overrides.clone();
            overrides.push(format!("seed={seed}"));
            if let Some(m) = max_ticks {
                overrides.push(format!("max_ticks={m}"));
            }
            let cfg = load_config(scenario, &overrides)?;
            plans.push((combo.label(&swept), seed, combo.overrides.clone(), cfg));
        }
    }
    let runs_root = out.join("runs");
    let mut incomplete = 0;
    for (label, seed, overrides, cfg) in &plans {
        let result = gbplan_core::run(cfg).map_err(|source| CliError::Sim {
            label: label.clone(),
            seed: *seed,
            source,
        })?;
        let dir = runs_root.join(label).join(format!("seed{seed}"));
        let summary = write_run(&dir, label, *seed, overrides, &result)?;
        if !result.is_complete() {
            incomplete += 1;
        }
        progress(&format!(
            "{label} seed {seed}: {:?}, {} ticks, makespan {:.1} s, {} collision episodes",
            summary.status, summary.ticks, summary.makespan.seconds, summary.collision_episodes
        ));
    }
    let summary = summarize_runs(&runs_root)?;
    let summary_path = out.join("summary.json");
    write_summary(&summary_path, &summary)?;
    Ok(RunReport {
        runs: plans.len(),
        incomplete,
        summary_path,
    })
}

/// Tables reproducible from sweep summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    /// Communication range sweep: makespan, mean distance, LDJ per r_C.
    Table1,
    /// Communication failure sweep: makespan and collisions per γ and speed.
    Table3,
    /// Junction inflow sweep: measured Q_in, Q_out and violations.
    Flow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

/// Marker for grid cells with no matching runs.
pub const ABSENT: &str = "absent";

fn param(row: &SweepRow, key: &str) -> Option<f64> {
    row.params.get(key).and_then(Value::as_f64)
}

fn find<'a>(rows: &'a [SweepRow], conds: &[(&str, f64)]) -> Option<&'a SweepRow> {
    rows.iter().find(|r| {
        conds
            .iter()
            .all(|(k, v)| param(r, k).is_some_and(|p| (p - v).abs() < 1e-9))
    })
}

fn fmt_mean(s: Option<Spread>, digits: usize) -> String {
    s.map_or_else(|| ABSENT.to_string(), |s| format!("{:.*}", digits, s.mean))
}

/// Renders a table from the rows of one or more sweep summaries.
pub fn render_table(kind: TableKind, rows: &[SweepRow], format: TableFormat) -> String {
    let (header, body): (Vec<String>, Vec<Vec<String>>) = match kind {
        TableKind::Table1 => {
            let header = ["r_C [m]", "Makespan [s]", "Mean distance [m]", "LDJ"];
            let body = [20.0, 40.0, 60.0, 80.0]
                .iter()
                .map(|&rc| match find(rows, &[("comm.radius", rc)]) {
                    Some(r) => vec![
                        format!("{rc}"),
                        fmt_mean(r.makespan, 1),
                        fmt_mean(r.mean_distance, 1),
                        fmt_mean(r.mean_ldj, 2),
                    ],
                    None => vec![format!("{rc}"), ABSENT.into(), ABSENT.into(), ABSENT.into()],
                })
                .collect();
            (header.iter().map(|s| s.to_string()).collect(), body)
        }
        TableKind::Table3 => {
            let speeds = [10.0, 15.0];
            let mut header = vec!["gamma [%]".to_string()];
            for v in speeds {
                header.push(format!("Makespan @{v} m/s [s]"));
                header.push(format!("Mean collisions @{v} m/s"));
            }
            let body = (0..10)
                .map(|p| {
                    let gamma = p as f64 / 10.0;
                    let mut line = vec![format!("{}", p * 10)];
                    for v in speeds {
                        match find(rows, &[("comm.gamma", gamma), ("robots.initial_speed", v)]) {
                            Some(r) => {
                                line.push(fmt_mean(r.makespan, 1));
                                line.push(fmt_mean(r.collisions, 1));
                            }
                            None => {
                                line.push(ABSENT.into());
                                line.push(ABSENT.into());
                            }
                        }
                    }
                    line
                })
                .collect();
            (header, body)
        }
        TableKind::Flow => {
            let header = ["Q_in set [1/s]", "Q_in [1/s]", "Q_out [1/s]", "Violations", "Correct"];
            let mut flow_rows: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.params.get("kind").and_then(Value::as_str) == Some("junction"))
                .collect();
            flow_rows.sort_by(|a, b| {
                param(a, "junction.inflow_rate")
                    .partial_cmp(&param(b, "junction.inflow_rate"))
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let body = flow_rows
                .iter()
                .map(|r| {
                    let correct = match r.violations {
                        Some(v) if v.max == 0.0 => "yes",
                        Some(_) => "no",
                        None => ABSENT,
                    };
                    vec![
                        param(r, "junction.inflow_rate").map_or(ABSENT.to_string(), |q| format!("{q}")),
                        fmt_mean(r.q_in, 2),
                        fmt_mean(r.q_out, 2),
                        fmt_mean(r.violations, 1),
                        correct.to_string(),
                    ]
                })
                .collect();
            (header.iter().map(|s| s.to_string()).collect(), body)
        }
    };
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            let _ = writeln!(out, "{}", header.join(","));
            for line in body {
                let _ = writeln!(out, "{}", line.join(","));
            }
        }
        TableFormat::Markdown => {
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
            for line in body {
                let _ = writeln!(out, "| {} |", line.join(" | "));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_forms() {
        assert_eq!(parse_seeds("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_seeds("3, 7,9").unwrap(), vec![3, 7, 9]);
        assert_eq!(parse_seeds("4").unwrap(), vec![4]);
        assert!(parse_seeds("5..1").is_err());
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn sweep_is_a_cartesian_product() {
        let sets = vec![
            "robots.count=5,10,15".to_string(),
            "comm.gamma=0,0.5".to_string(),
            "dt=0.1".to_string(),
        ];
        let (combos, swept) = expand_sweep(&sets).unwrap();
        assert_eq!(combos.len(), 6);
        assert_eq!(swept, vec!["robots.count", "comm.gamma"]);
        assert_eq!(combos[1].overrides, vec!["robots.count=5", "comm.gamma=0.5", "dt=0.1"]);
        assert_eq!(combos[1].label(&swept), "robots.count_5__comm.gamma_0.5");
    }

    #[test]
    fn arrays_are_not_swept() {
        let (combos, swept) = expand_sweep(&["a.b=[1, 2]".to_string()]).unwrap();
        assert_eq!(combos.len(), 1);
        assert!(swept.is_empty());
        assert_eq!(combos[0].label(&swept), "base");
    }

    #[test]
    fn malformed_override() {
        assert!(matches!(
            expand_sweep(&["novalue".to_string()]),
            Err(CliError::Override(_))
        ));
    }

    #[test]
    fn spread_statistics() {
        let s = Spread::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.min, s.max, s.n), (2.0, 1.0, 1.0, 3.0, 3));
        assert!(Spread::of(&[]).is_none());
    }

    fn row(params: &[(&str, Value)], makespan: f64) -> SweepRow {
        SweepRow {
            label: "x".into(),
            overrides: Vec::new(),
            seeds: vec![0],
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            incomplete_runs: 0,
            makespan: Spread::of(&[makespan]),
            mean_distance: Spread::of(&[104.0]),
            mean_ldj: Spread::of(&[-9.0]),
            collisions: Spread::of(&[0.0]),
            q_in: None,
            q_out: None,
            violations: None,
        }
    }

    #[test]
    fn table3_marks_missing_cells() {
        let rows = vec![
            row(
                &[("comm.gamma", 0.0.into()), ("robots.initial_speed", 10.0.into())],
                19.5,
            ),
            row(
                &[("comm.gamma", 0.5.into()), ("robots.initial_speed", 10.0.into())],
                35.6,
            ),
        ];
        let t = render_table(TableKind::Table3, &rows, TableFormat::Csv);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[1], "0,19.5,0.0,absent,absent");
        assert_eq!(lines[6], "50,35.6,0.0,absent,absent");
        assert_eq!(lines[2], "10,absent,absent,absent,absent");
    }

    #[test]
    fn table1_has_four_rows() {
        let rows = vec![row(&[("comm.radius", 40.0.into())], 12.3)];
        let t = render_table(TableKind::Table1, &rows, TableFormat::Markdown);
        assert_eq!(t.lines().count(), 6);
        assert!(t.contains("| 40 | 12.3 | 104.0 | -9.00 |"));
        assert!(t.contains("| 20 | absent | absent | absent |"));
    }
}
