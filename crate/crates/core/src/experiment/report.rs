use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{read_json, IdentificationReport, Layout, RunSummary, TimingReport};
use crate::error::Result;
use crate::mpc::ControllerKind;

/// Reference mean step times (reduced, full) in seconds, for comparison.
pub(crate) const REFERENCE_TIMING: (f64, f64) = (0.0405, 0.0734);

const CASES: [&str; 6] = ["I", "II", "III", "IV", "V", "VI"];

/// One controller/case entry of the RMSE grid, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseCell {
    pub case: String,
    pub controller: ControllerKind,
    pub scenario: Option<String>,
    pub window: Option<(f64, f64)>,
    pub seeds: Vec<u64>,
    pub run_ids: Vec<String>,
    /// Runs that cover this case but produced no value.
    pub failed_runs: Vec<String>,
    pub median: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl RmseCell {
    pub fn status(&self) -> &'static str {
        match (self.median.is_some(), self.failed_runs.is_empty()) {
            (false, _) => "missing",
            (true, false) => "partial",
            (true, true) => "ok",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub seed: u64,
    pub identification: Option<IdentificationReport>,
    pub rmse: Vec<RmseCell>,
    pub timing: Option<TimingReport>,
    pub reference_timing: (f64, f64),
    pub runs: Vec<RunSummary>,
}

impl ReportBundle {
    pub fn cell(&self, controller: ControllerKind, case: &str) -> Option<&RmseCell> {
        self.rmse
            .iter()
            .find(|c| c.controller == controller && c.case == case)
    }
}

fn collect_summaries(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_summaries(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "summary.json") {
            out.push(p);
        }
    }
    Ok(())
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub(crate) fn build_grid(runs: &[RunSummary]) -> Vec<RmseCell> {
    let mut cases: Vec<String> = CASES.iter().map(|s| s.to_string()).collect();
    for r in runs {
        for w in &r.windows {
            if !cases.contains(&w.label) {
                cases.push(w.label.clone());
            }
        }
    }
    let mut cells = Vec::new();
    for kind in ControllerKind::ALL {
        for case in &cases {
            let mut cell = RmseCell {
                case: case.clone(),
                controller: kind,
                scenario: None,
                window: None,
                seeds: Vec::new(),
                run_ids: Vec::new(),
                failed_runs: Vec::new(),
                median: None,
                min: None,
                max: None,
            };
            let mut values = Vec::new();
            for r in runs.iter().filter(|r| r.controller == kind) {
                let Some(w) = r.windows.iter().find(|w| &w.label == case) else {
                    continue;
                };
                cell.scenario.get_or_insert_with(|| r.scenario.clone());
                cell.window.get_or_insert((w.start, w.end));
                match w.rmse {
                    Some(v) if v.is_finite() => {
                        values.push(v);
                        cell.seeds.push(r.seed);
                        cell.run_ids.push(r.run_id.clone());
                    }
                    _ => cell.failed_runs.push(r.run_id.clone()),
                }
            }
            cell.min = values.iter().copied().reduce(f64::min);
            cell.max = values.iter().copied().reduce(f64::max);
            cell.median = median(&mut values);
            cells.push(cell);
        }
    }
    cells
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_rmse_csv(path: &Path, cells: &[RmseCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "case",
        "controller",
        "scenario",
        "window_start",
        "window_end",
        "runs",
        "median_rmse",
        "min_rmse",
        "max_rmse",
        "status",
        "seeds",
        "run_ids",
    ])?;
    for c in cells {
        let seeds: Vec<String> = c.seeds.iter().map(|s| s.to_string()).collect();
        w.write_record([
            c.case.clone(),
            c.controller.label().to_string(),
            c.scenario.clone().unwrap_or_default(),
            fmt_opt(c.window.map(|w| w.0)),
            fmt_opt(c.window.map(|w| w.1)),
            c.run_ids.len().to_string(),
            fmt_opt(c.median),
            fmt_opt(c.min),
            fmt_opt(c.max),
            c.status().to_string(),
            seeds.join(";"),
            c.run_ids.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn markdown(b: &ReportBundle) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Experiment report\n\nseed: {}\n", b.seed);
    if let Some(id) = &b.identification {
        let _ = writeln!(s, "## Identification\n");
        let _ = writeln!(
            s,
            "- library size {}, lifted dimension N = {}, order r = {}",
            id.library_size, id.lifted_dim, id.reduced.order
        );
        let _ = writeln!(s, "- selected: {}", id.selected_functions.join(", "));
        let _ = writeln!(s, "- retained POD energy {:.6}", id.retained_energy);
        let _ = writeln!(
            s,
            "- validation RMSE full {:.4}, reduced {:.4}",
            id.full.validation_rmse, id.reduced.validation_rmse
        );
        let _ = writeln!(
            s,
            "- spectral radius full {:.4}, reduced {:.4}\n",
            id.full.spectral_radius, id.reduced.spectral_radius
        );
    }

    let mut cases: Vec<&str> = Vec::new();
    for c in &b.rmse {
        if !cases.contains(&c.case.as_str()) {
            cases.push(&c.case);
        }
    }
    let _ = writeln!(s, "## Scaled tracking RMSE (median over seeds)\n");
    let _ = writeln!(s, "| controller | {} |", cases.join(" | "));
    let _ = writeln!(s, "|---|{}", "---|".repeat(cases.len()));
    for kind in ControllerKind::ALL {
        let row: Vec<String> = cases
            .iter()
            .map(|case| match b.cell(kind, case) {
                Some(c) if c.median.is_some() => {
                    let mark = if c.failed_runs.is_empty() { "" } else { "*" };
                    format!("{:.4}{mark} (n={})", c.median.unwrap_or_default(), c.run_ids.len())
                }
                _ => "missing".to_string(),
            })
            .collect();
        let _ = writeln!(s, "| {} | {} |", kind.label(), row.join(" | "));
    }
    let _ = writeln!(s, "\n`*` marks cells where some runs failed; `missing` means no run covers the case.\n");

    let _ = writeln!(s, "## Mean time per control step\n");
    match &b.timing {
        Some(t) => {
            let _ = writeln!(s, "| controller | r | s/step | repeats |\n|---|---|---|---|");
            for e in &t.entries {
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.3e} | {} |",
                    e.controller.label(),
                    e.order,
                    e.mean_step_time,
                    e.repeats
                );
            }
            let ratio = t.ratio.map(|r| format!("{r:.3}")).unwrap_or_else(|| "missing".into());
            let _ = writeln!(
                s,
                "\nreduced/full ratio {ratio}; reference {:.4}/{:.4} = {:.3}",
                b.reference_timing.0,
                b.reference_timing.1,
                b.reference_timing.0 / b.reference_timing.1
            );
        }
        None => {
            let _ = writeln!(s, "missing");
        }
    }
    s
}

/// Aggregates the run directories under `out_dir` into the RMSE grid and
/// timing table.
pub fn report(cfg: &ExperimentConfig) -> Result<ReportBundle> {
    let layout = Layout::new(&cfg.out_dir);
    let mut paths = Vec::new();
    collect_summaries(&layout.control(), &mut paths)?;
    let runs: Vec<RunSummary> = paths
        .iter()
        .map(|p| read_json(p))
        .collect::<Result<_>>()?;
    if runs.is_empty() {
        log::warn!("no runs under {}", layout.control().display());
    }
    let id_path = layout.identify().join("identification.json");
    let identification = id_path.exists().then(|| read_json(&id_path)).transpose()?;
    let timing_path = layout.control().join("timing.json");
    let timing = timing_path.exists().then(|| read_json(&timing_path)).transpose()?;
    let bundle = ReportBundle {
        seed: cfg.seed,
        identification,
        rmse: build_grid(&runs),
        timing,
        reference_timing: REFERENCE_TIMING,
        runs,
    };
    let dir = layout.report();
    fs::create_dir_all(&dir)?;
    write_rmse_csv(&dir.join("rmse.csv"), &bundle.rmse)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&bundle)?)?;
    fs::write(dir.join("report.md"), markdown(&bundle))?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::WindowRmse;

    fn run(kind: ControllerKind, seed: u64, label: &str, rmse: Option<f64>) -> RunSummary {
        RunSummary {
            run_id: format!("s/{}/seed-{seed}", kind.label()),
            scenario: "s".into(),
            controller: kind,
            seed,
            windows: vec![WindowRmse {
                label: label.into(),
                start: 0.0,
                end: 1.0,
                rmse,
            }],
            steps: 40,
            saturation_count: 0,
            failure: None,
            mean_step_time: None,
            p95_step_time: None,
            mean_iterations: 0.0,
        }
    }

    #[test]
    fn single_run_cell_equals_its_summary() {
        let grid = build_grid(&[run(ControllerKind::ReducedKmpc, 3, "II", Some(0.0123))]);
        let c = grid
            .iter()
            .find(|c| c.controller == ControllerKind::ReducedKmpc && c.case == "II")
            .unwrap();
        assert_eq!(c.median, Some(0.0123));
        assert_eq!(c.seeds, vec![3]);
        assert_eq!(c.status(), "ok");
    }

    #[test]
    fn absent_runs_are_explicit_gaps() {
        let grid = build_grid(&[run(ControllerKind::FullKmpc, 0, "I", Some(0.1))]);
        assert_eq!(grid.len(), 3 * 6);
        let gap = grid
            .iter()
            .find(|c| c.controller == ControllerKind::ReducedRkmpc && c.case == "V")
            .unwrap();
        assert_eq!(gap.median, None);
        assert_eq!(gap.status(), "missing");
    }

    #[test]
    fn failed_runs_mark_the_cell() {
        let grid = build_grid(&[
            run(ControllerKind::FullKmpc, 0, "I", Some(0.1)),
            run(ControllerKind::FullKmpc, 1, "I", None),
        ]);
        let c = &grid[0];
        assert_eq!(c.status(), "partial");
        assert_eq!(c.failed_runs.len(), 1);
    }

    #[test]
    fn median_of_even_count_averages_the_middle() {
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
