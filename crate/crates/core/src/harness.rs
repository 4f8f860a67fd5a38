//! Experiment sweeps over horizons and seeds, with CSV/JSON artifacts,
//! regret-exponent fits and an SVG log-log chart.
//!
//! Output layout of [`run_experiment`]:
//!
//! ```text
//! <out>/runs.csv            n,seed,status,R_total,R1,R2,R3,subspace_err,n1
//! <out>/summary.json        aggregates per horizon and the exponent fit
//! <out>/runs/n<N>_s<S>.json one record per cell
//! <out>/runs/n<N>_s<S>.csv  regret trace (only with `write_traces`)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvDescriptor;
use crate::error::{Error, Result};
use crate::orchestrator::{run_cablp, Phase2Settings, PlanMode, RunConfig, RunRecord, TheoryConstants};
use crate::recovery::SolverConfig;

/// SplitMix64 finalizer; a bijection on `u64`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `seed_i = master XOR splitmix64(i)`.
pub fn derive_seed(master: u64, i: u64) -> u64 {
    master ^ splitmix64(i)
}

/// Seed of the algorithm's own draws for a run whose environment uses `seed`.
pub fn algorithm_seed(seed: u64) -> u64 {
    splitmix64(seed ^ 0x5eed_a160_0000_0001)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Derived { master: u64, count: u64 },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Derived { master, count } => (0..*count).map(|i| derive_seed(*master, i)).collect(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_oracle_resolution() -> f64 {
    0.01
}

/// A sweep, read from a single JSON document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub environment: EnvDescriptor,
    #[serde(flatten)]
    pub mode: PlanMode,
    #[serde(default)]
    pub constants: TheoryConstants,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub phase2: Phase2Settings,
    pub horizons: Vec<u64>,
    pub seeds: SeedSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_oracle_resolution")]
    pub oracle_resolution: f64,
    #[serde(default)]
    pub write_traces: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.horizons.is_empty() {
            return bad("at least one horizon is required");
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return bad("horizons must be strictly ascending");
        }
        let mut seeds = self.seeds.seeds();
        if seeds.is_empty() {
            return bad("at least one seed is required");
        }
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct");
        }
        if !(self.oracle_resolution > 0.0) {
            return bad("oracle_resolution must be > 0");
        }
        self.constants.validate()
    }

    pub fn run_config(&self, n: u64, seed: u64) -> RunConfig {
        RunConfig {
            n,
            mode: self.mode,
            constants: self.constants,
            solver: self.solver,
            phase2: self.phase2,
            oracle_resolution: self.oracle_resolution,
            seed: algorithm_seed(seed),
            injected_a_hat: None,
        }
    }
}

/// One `(n, seed)` cell. Numeric fields are empty for failed cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub n: u64,
    pub seed: u64,
    pub status: String,
    #[serde(rename = "R_total")]
    pub r_total: Option<f64>,
    #[serde(rename = "R1")]
    pub r1: Option<f64>,
    #[serde(rename = "R2")]
    pub r2: Option<f64>,
    #[serde(rename = "R3")]
    pub r3: Option<f64>,
    pub subspace_err: Option<f64>,
    pub n1: Option<u64>,
}

impl CellRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    fn from_record(rec: &RunRecord) -> Self {
        Self {
            n: rec.n,
            seed: rec.env_seed,
            status: "ok".to_string(),
            r_total: Some(rec.total_regret),
            r1: Some(rec.r1),
            r2: Some(rec.r2),
            r3: Some(rec.r3),
            subspace_err: Some(rec.subspace_err),
            n1: Some(rec.phase1_rounds),
        }
    }

    fn failed(n: u64, seed: u64, error: &Error) -> Self {
        Self {
            n,
            seed,
            status: error.status().to_string(),
            r_total: None,
            r1: None,
            r2: None,
            r3: None,
            subspace_err: None,
            n1: None,
        }
    }
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and standard error of each quantity over the successful seeds of one horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub n: u64,
    pub runs: usize,
    pub mean_total: f64,
    pub se_total: f64,
    pub mean_r1: f64,
    pub se_r1: f64,
    pub mean_r2: f64,
    pub se_r2: f64,
    pub mean_r3: f64,
    pub se_r3: f64,
    pub mean_subspace_err: f64,
    pub se_subspace_err: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: Vec<CellRow>,
    pub aggregates: Vec<AggregatePoint>,
    pub failed_cells: usize,
    /// Fit of `log mean R(n)` against `log n`; absent with fewer than three usable horizons.
    pub fit: Option<ExponentFit>,
}

impl SweepSummary {
    /// Aggregate rows grouped by horizon, in ascending `n`. Failed cells are
    /// counted but excluded.
    pub fn from_cells(cells: Vec<CellRow>) -> Self {
        let mut horizons: Vec<u64> = cells.iter().map(|c| c.n).collect();
        horizons.sort_unstable();
        horizons.dedup();
        let mut aggregates = Vec::new();
        for n in horizons {
            let ok: Vec<&CellRow> = cells.iter().filter(|c| c.n == n && c.ok()).collect();
            if ok.is_empty() {
                continue;
            }
            let col = |f: fn(&CellRow) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|c| f(c)).collect() };
            let (mean_total, se_total) = mean_se(&col(|c| c.r_total));
            let (mean_r1, se_r1) = mean_se(&col(|c| c.r1));
            let (mean_r2, se_r2) = mean_se(&col(|c| c.r2));
            let (mean_r3, se_r3) = mean_se(&col(|c| c.r3));
            let (mean_subspace_err, se_subspace_err) = mean_se(&col(|c| c.subspace_err));
            aggregates.push(AggregatePoint {
                n,
                runs: ok.len(),
                mean_total,
                se_total,
                mean_r1,
                se_r1,
                mean_r2,
                se_r2,
                mean_r3,
                se_r3,
                mean_subspace_err,
                se_subspace_err,
            });
        }
        let points: Vec<(f64, f64)> = aggregates.iter().map(|a| (a.n as f64, a.mean_total)).collect();
        let fit = fit_regret_exponent(&points).ok();
        Self {
            failed_cells: cells.iter().filter(|c| !c.ok()).count(),
            cells,
            aggregates,
            fit,
        }
    }
}

/// Least-squares line through `(log n, log R)`.
pub fn fit_regret_exponent(points: &[(f64, f64)]) -> Result<ExponentFit> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "exponent fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(&(n, r)) = points.iter().find(|&&(n, r)| !(n > 0.0 && r > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "exponent fit needs positive values, got ({n}, {r})"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("exponent fit needs distinct horizons".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(ExponentFit {
        slope,
        intercept,
        r_squared,
    })
}

fn cell_stem(n: u64, seed: u64) -> String {
    format!("n{n}_s{seed}")
}

/// Run one cell on a fresh environment.
pub fn run_cell(config: &ExperimentConfig, n: u64, seed: u64) -> std::result::Result<RunRecord, Error> {
    let mut env = config.environment.with_seed(seed).build()?;
    run_cablp(&mut env, &config.run_config(n, seed)).map_err(|f| f.error)
}

/// Run every `(n, seed)` cell and write the artifacts under `config.output_dir`.
///
/// Cells run in parallel; files are written per cell and the combined CSV
/// and summary once at the end, in `(n, seed)` order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<SweepSummary> {
    config.validate()?;
    let out = &config.output_dir;
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir)?;

    let seeds = config.seeds.seeds();
    let cells: Vec<(u64, u64)> = config
        .horizons
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();

    let rows: Vec<Result<CellRow>> = cells
        .par_iter()
        .map(|&(n, seed)| {
            let stem = cell_stem(n, seed);
            match run_cell(config, n, seed) {
                Ok(rec) => {
                    fs::write(runs_dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&rec)?)?;
                    if config.write_traces {
                        fs::write(runs_dir.join(format!("{stem}.csv")), rec.trace_csv())?;
                    }
                    Ok(CellRow::from_record(&rec))
                }
                Err(e) => {
                    let failure = serde_json::json!({
                        "n": n,
                        "seed": seed,
                        "status": e.status(),
                        "error": e.to_string(),
                    });
                    fs::write(runs_dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&failure)?)?;
                    Ok(CellRow::failed(n, seed, &e))
                }
            }
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    write_runs_csv(&out.join("runs.csv"), &rows)?;
    let summary = SweepSummary::from_cells(rows);
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn write_runs_csv(path: &Path, rows: &[CellRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<CellRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<CellRow>, _>>()?;
    Ok(rows)
}

/// Write `<stem>.svg` (log-log mean regret with standard-error bars and the
/// fitted line) and `<stem>.csv` (the plotted points). Returns the SVG path.
pub fn emit_plot_data(summary: &SweepSummary, dir: &Path, stem: &str) -> Result<PathBuf> {
    let points: Vec<&AggregatePoint> = summary.aggregates.iter().filter(|a| a.mean_total > 0.0).collect();
    if points.is_empty() {
        return Err(Error::NoData);
    }
    fs::create_dir_all(dir)?;

    let mut csv_out = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    csv_out.write_record(["n", "runs", "mean_total", "se_total"])?;
    for a in &points {
        csv_out.write_record([
            a.n.to_string(),
            a.runs.to_string(),
            a.mean_total.to_string(),
            a.se_total.to_string(),
        ])?;
    }
    csv_out.flush()?;

    let svg = render_svg(&points, summary.fit.as_ref());
    let path = dir.join(format!("{stem}.svg"));
    fs::write(&path, svg)?;
    Ok(path)
}

/// Axis bounds in log10 units, widened by 10% of the span on each side.
pub fn plot_bounds(points: &[&AggregatePoint]) -> ((f64, f64), (f64, f64)) {
    let lx: Vec<f64> = points.iter().map(|a| (a.n as f64).log10()).collect();
    let mut ly = Vec::new();
    for a in points {
        let lo = a.mean_total - a.se_total;
        ly.push(if lo > 0.0 { lo.log10() } else { a.mean_total.log10() });
        ly.push((a.mean_total + a.se_total).log10());
    }
    let pad = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        (lo - 0.1 * span, hi + 0.1 * span)
    };
    (pad(&lx), pad(&ly))
}

fn render_svg(points: &[&AggregatePoint], fit: Option<&ExponentFit>) -> String {
    const W: f64 = 640.0;
    const H: f64 = 440.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 30.0;
    const B: f64 = 50.0;
    let ((x0, x1), (y0, y1)) = plot_bounds(points);
    let px = |lx: f64| L + (lx - x0) / (x1 - x0) * (W - L - R);
    let py = |ly: f64| H - B - (ly - y0) / (y1 - y0) * (H - T - B);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    s.push_str(&format!("<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    s.push_str(&format!(
        "<rect x=\"{L}\" y=\"{T}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - L - R,
        H - T - B
    ));
    // decade ticks
    for e in (x0.ceil() as i32)..=(x1.floor() as i32) {
        let x = px(e as f64);
        s.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">1e{e}</text>\n",
            H - B,
            H - B + 5.0,
            H - B + 20.0
        ));
    }
    for e in (y0.ceil() as i32)..=(y1.floor() as i32) {
        let y = py(e as f64);
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{L}\" y2=\"{y:.2}\" stroke=\"black\"/>\n<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">1e{e}</text>\n",
            L - 5.0,
            L - 8.0,
            y + 4.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">horizon n</text>\n",
        L + (W - L - R) / 2.0,
        H - 10.0
    ));
    s.push_str(&format!(
        "<text x=\"15\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {:.2})\">mean regret R(n)</text>\n",
        T + (H - T - B) / 2.0,
        T + (H - T - B) / 2.0
    ));

    if let Some(f) = fit {
        let ln10 = std::f64::consts::LN_10;
        let line = |lx: f64| (f.intercept + f.slope * lx * ln10) / ln10;
        s.push_str(&format!(
            "<line class=\"fit\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"steelblue\" stroke-dasharray=\"6 4\"/>\n",
            px(x0),
            py(line(x0)),
            px(x1),
            py(line(x1))
        ));
        s.push_str(&format!(
            "<text class=\"fit-label\" x=\"{:.2}\" y=\"{:.2}\" fill=\"steelblue\">slope {:.3} (r\u{b2} {:.3})</text>\n",
            L + 10.0,
            T + 18.0,
            f.slope,
            f.r_squared
        ));
    }

    for a in points {
        let x = px((a.n as f64).log10());
        let y = py(a.mean_total.log10());
        let lo = a.mean_total - a.se_total;
        let y_lo = if lo > 0.0 { py(lo.log10()) } else { y };
        let y_hi = py((a.mean_total + a.se_total).log10());
        s.push_str(&format!(
            "<line class=\"errbar\" x1=\"{x:.2}\" y1=\"{y_lo:.2}\" x2=\"{x:.2}\" y2=\"{y_hi:.2}\" stroke=\"black\"/>\n"
        ));
        s.push_str(&format!(
            "<circle class=\"marker\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"firebrick\"/>\n"
        ));
    }
    s.push_str("</svg>\n");
    s
}
