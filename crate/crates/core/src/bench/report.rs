use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::lifted::solve_parasdm_annealed;
use crate::model::Network;
use crate::stagewise::solve_flpo_annealed;

/// How `normalized_cost` is defined in every report.
pub const NORMALIZATION: &str = "normalized_cost = hard_cost / stagewise hard_cost on the same dataset";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Stagewise,
    Lifted,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Stagewise => "stagewise",
            Solver::Lifted => "lifted",
        })
    }
}

/// One row of `results.csv`, in column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset_id: String,
    pub solver: Solver,
    pub hard_cost: f64,
    pub normalized_cost: f64,
    pub wall_time_s: f64,
    pub beta_steps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub normalization: &'static str,
    pub datasets: usize,
    /// Mean of `lifted normalized_cost − 1`.
    pub mean_gap: f64,
    /// Largest `|lifted normalized_cost − 1|`.
    pub max_gap: f64,
    pub within_5_percent: usize,
    /// Mean of per-dataset `lifted time / stagewise time`.
    pub mean_time_ratio: f64,
    pub median_time_stagewise: f64,
    pub median_time_lifted: f64,
    /// `median lifted / median stagewise`.
    pub median_time_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<RunReport>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ComparisonTable {
    /// `(stagewise, lifted)` row pairs in dataset order.
    pub fn pairs(&self) -> Vec<(&RunReport, &RunReport)> {
        let mut out = Vec::new();
        for s in self.rows.iter().filter(|r| r.solver == Solver::Stagewise) {
            if let Some(l) = self
                .rows
                .iter()
                .find(|r| r.solver == Solver::Lifted && r.dataset_id == s.dataset_id)
            {
                out.push((s, l));
            }
        }
        out
    }

    pub fn summary(&self) -> Summary {
        let pairs = self.pairs();
        let n = pairs.len();
        let gaps: Vec<f64> = pairs.iter().map(|(_, l)| l.normalized_cost - 1.0).collect();
        let ratios: Vec<f64> = pairs.iter().map(|(s, l)| l.wall_time_s / s.wall_time_s).collect();
        let ts = median(pairs.iter().map(|(s, _)| s.wall_time_s).collect());
        let tl = median(pairs.iter().map(|(_, l)| l.wall_time_s).collect());
        Summary {
            normalization: NORMALIZATION,
            datasets: n,
            mean_gap: gaps.iter().sum::<f64>() / n as f64,
            max_gap: gaps.iter().fold(0.0, |m, g| m.max(g.abs())),
            within_5_percent: gaps.iter().filter(|g| g.abs() <= 0.05).count(),
            mean_time_ratio: ratios.iter().sum::<f64>() / n as f64,
            median_time_stagewise: ts,
            median_time_lifted: tl,
            median_time_ratio: tl / ts,
        }
    }
}

/// Both solvers on one dataset, stage-wise first.
pub fn run_dataset(dataset_id: &str, net: &Network, config: &RunConfig) -> Result<[RunReport; 2]> {
    let schedule = config.schedule_for(net)?;
    let opts = config.lifted_options()?;
    let flpo = solve_flpo_annealed(net, &schedule)?;
    let sdm = solve_parasdm_annealed(net, &schedule, &opts)?;
    let base = flpo.hard_cost;
    let normalize = |c: f64| {
        if base > 0.0 {
            c / base
        } else if c == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    };
    let tick = |t: f64| t.max(f64::MIN_POSITIVE);
    Ok([
        RunReport {
            dataset_id: dataset_id.to_string(),
            solver: Solver::Stagewise,
            hard_cost: flpo.hard_cost,
            normalized_cost: 1.0,
            wall_time_s: tick(flpo.wall_time_s),
            beta_steps: flpo.beta_steps(),
            converged: flpo.converged,
        },
        RunReport {
            dataset_id: dataset_id.to_string(),
            solver: Solver::Lifted,
            hard_cost: sdm.hard_cost,
            normalized_cost: normalize(sdm.hard_cost),
            wall_time_s: tick(sdm.wall_time_s),
            beta_steps: sdm.beta_steps(),
            converged: sdm.converged,
        },
    ])
}

/// Worker count from `PARASDM_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("PARASDM_THREADS")
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

/// Runs both solvers on every dataset, one dataset per worker.
pub fn compare(datasets: &[(String, Network)], config: &RunConfig) -> Result<ComparisonTable> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let results: Vec<Result<[RunReport; 2]>> = pool.install(|| {
        datasets
            .par_iter()
            .map(|(id, net)| run_dataset(id, net, config))
            .collect()
    });
    let mut rows = Vec::with_capacity(2 * datasets.len());
    for r in results {
        rows.extend(r?);
    }
    Ok(ComparisonTable { rows })
}

/// Every `*.json` file in `dir`, sorted by name, keyed by file stem.
pub fn load_datasets(dir: impl AsRef<Path>) -> Result<Vec<(String, Network)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let net = Network::load(&p).map_err(|e| match e {
                Error::Schema(m) => Error::Schema(format!("{}: {m}", p.display())),
                e => e,
            })?;
            Ok((id, net))
        })
        .collect()
}

/// Writes `results.csv`, `cost.svg`, `time.svg` and `summary.json`.
pub fn emit_report(table: &ComparisonTable, out_dir: impl AsRef<Path>) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::InvalidInput("comparison table is empty".into()));
    }
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;

    let mut csv = csv::Writer::from_path(out.join("results.csv")).map_err(csv_err)?;
    for row in &table.rows {
        csv.serialize(row).map_err(csv_err)?;
    }
    csv.flush()?;

    let pairs = table.pairs();
    let ids: Vec<String> = pairs.iter().map(|(s, _)| s.dataset_id.clone()).collect();
    let series = |f: fn(&RunReport) -> f64| -> [(&'static str, Vec<f64>); 2] {
        [
            ("stagewise", pairs.iter().map(|(s, _)| f(s)).collect()),
            ("lifted", pairs.iter().map(|(_, l)| f(l)).collect()),
        ]
    };
    let cost = grouped_bar_svg(
        "Normalized hard cost (lifted / stagewise)",
        &ids,
        &series(|r| r.normalized_cost),
    );
    let time = grouped_bar_svg("Wall time [s]", &ids, &series(|r| r.wall_time_s));
    std::fs::write(out.join("cost.svg"), cost)?;
    std::fs::write(out.join("time.svg"), time)?;
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&table.summary())?,
    )?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}

const COLORS: [&str; 2] = ["#4c72b0", "#dd8452"];

/// Grouped bar chart, one group per category.
pub fn grouped_bar_svg(title: &str, categories: &[String], series: &[(&str, Vec<f64>)]) -> String {
    let (w, h) = (720.0, 360.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 60.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let ymax = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.1 } else { 1.0 };
    let groups = categories.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-size="15" text-anchor="middle" font-family="sans-serif">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        top + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + plot_h,
        left + plot_w,
        top + plot_h
    );
    for t in 0..=4 {
        let v = ymax * t as f64 / 4.0;
        let y = top + plot_h - plot_h * t as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end" font-family="sans-serif">{:.3}</text>"#,
            left - 4.0,
            y + 3.0,
            v
        );
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="lightgray"/>"#,
            left + plot_w
        );
    }
    for (g, cat) in categories.iter().enumerate() {
        let gx = left + group_w * g as f64 + group_w * 0.1;
        for (k, (_, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(0.0);
            let v = if v.is_finite() { v.max(0.0) } else { ymax };
            let bh = plot_h * v / ymax;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                gx + bar_w * k as f64,
                top + plot_h - bh,
                bar_w,
                bh,
                COLORS[k % COLORS.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="10" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            gx + group_w * 0.4,
            top + plot_h + 14.0,
            escape(cat)
        );
    }
    for (k, (name, _)) in series.iter().enumerate() {
        let x = left + 10.0 + 110.0 * k as f64;
        let y = h - 18.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#,
            y - 10.0,
            COLORS[k % COLORS.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-size="11" font-family="sans-serif">{}</text>"#,
            x + 16.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
