//! Subcommand implementations. Every `(α, T, seed)` cell is independent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context as _};
use rayon::prelude::*;
use serde::Serialize;

use safecert::abstraction::{
    build_partition, empirical_cell_probs, evaluate_abstraction, imp_value_iteration, ssr_value_iteration_with, IntervalModel, Radii,
    SsrParams,
};
use safecert::barrier::{check_barrier, BarrierCandidate, BarrierGrids, BarrierReport};
use safecert::benchmark::{dependent_pairs, gen_synth_dataset, iid_pairs, mc_ground_truth, PairMode};
use safecert::calibration::{calibrate, soundness_of_bounds};
use safecert::io::{fmt_f64, parse_table, read_grid, read_pairs, read_trajectories, write_grid, write_pairs, write_trajectories};
use safecert::metrics::{brier_decomposition_counts, clamp_unit, excess_rmse, rmse};
use safecert::rng::{derive_seed, Purpose};
use safecert::{fit_direct, fit_dp, AxisBox, DpModel, PointSet, SafeRegion, TrajectorySet};

use crate::config::{KernelFamily, LoadedConfig, Method};
use crate::output::{header, read, write_atomic};
use crate::{Command, UsageError};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed_offset: u64,
    pub method: Option<Method>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub alpha: f64,
    pub horizon: usize,
    pub seed: u64,
}

impl Cell {
    pub fn tag(&self) -> String {
        format!("a{}_T{}_s{}", fmt_f64(self.alpha), self.horizon, self.seed)
    }
}

pub struct Context {
    pub cfg: LoadedConfig,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub region: SafeRegion,
    threads: Option<usize>,
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: Method,
    pub alpha: f64,
    pub horizon: usize,
    pub seed: u64,
    pub rmse: f64,
    pub excess_rmse: f64,
    pub rel: f64,
    pub res: f64,
    pub res_norm: f64,
    pub unc: f64,
    pub brier: f64,
    pub binned_brier: f64,
}

const METRIC_NAMES: [&str; 8] = ["rmse", "excess_rmse", "rel", "res", "res_norm", "unc", "brier", "binned_brier"];

impl MetricsRow {
    fn values(&self) -> [f64; 8] {
        [self.rmse, self.excess_rmse, self.rel, self.res, self.res_norm, self.unc, self.brier, self.binned_brier]
    }
}

impl Context {
    pub fn new(cfg: LoadedConfig, opts: &RunOptions) -> anyhow::Result<Self> {
        let c = &cfg.config;
        let out = match &opts.out {
            Some(o) => o.clone(),
            None => cfg.resolve(&c.output.dir),
        };
        let seeds = c.seeds.iter().map(|s| s + opts.seed_offset).collect();
        let methods = match opts.method {
            Some(m) => {
                if m == Method::Barrier && c.barrier.is_none() {
                    return Err(UsageError("method barrier needs a [barrier] section".into()).into());
                }
                for &t in &c.data.horizons {
                    c.kernel(m.kernel_family(), t)?;
                }
                vec![m]
            }
            None => c.methods.clone(),
        };
        Ok(Self { cfg, out, seeds, methods, region: SafeRegion::benchmark(), threads: opts.threads })
    }

    pub fn cells(&self) -> Vec<Cell> {
        let c = &self.cfg.config;
        let mut cells = Vec::new();
        for &alpha in &c.system.alphas {
            for &horizon in &c.data.horizons {
                for &seed in &self.seeds {
                    cells.push(Cell { alpha, horizon, seed });
                }
            }
        }
        cells
    }

    pub fn run(&self, command: Command) -> anyhow::Result<()> {
        let job = || match command {
            Command::GenData => self.gen_data(),
            Command::McOracle => self.mc_oracle(),
            Command::Certify => self.certify(),
            Command::Calibrate => self.calibrate(),
            Command::Evaluate => self.evaluate().map(|_| ()),
            Command::Sweep => self.sweep(),
        };
        match self.threads {
            Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().context("building thread pool")?.install(job),
            None => job(),
        }
    }

    pub fn sweep(&self) -> anyhow::Result<()> {
        self.gen_data()?;
        self.mc_oracle()?;
        self.certify()?;
        if self.cfg.config.data.n_cal > 0 {
            self.calibrate()?;
        }
        self.evaluate()?;
        Ok(())
    }

    fn for_cells(&self, f: impl Fn(&Cell) -> anyhow::Result<()> + Sync) -> anyhow::Result<()> {
        self.cells().par_iter().map(&f).collect::<anyhow::Result<Vec<()>>>()?;
        Ok(())
    }

    fn head(&self, seed: u64) -> String {
        header(&self.cfg.sha256, &seed.to_string())
    }

    pub fn traj_path(&self, c: &Cell) -> PathBuf {
        self.out.join("data").join(format!("traj_{}.csv", c.tag()))
    }

    pub fn pairs_path(&self, c: &Cell) -> PathBuf {
        self.out.join("data").join(format!("pairs_{}.csv", c.tag()))
    }

    pub fn cal_path(&self, c: &Cell) -> PathBuf {
        self.out.join("data").join(format!("cal_{}.csv", c.tag()))
    }

    pub fn mc_path(&self, c: &Cell) -> PathBuf {
        self.out.join("mc").join(format!("mc_{}.csv", c.tag()))
    }

    pub fn pred_path(&self, m: Method, c: &Cell) -> PathBuf {
        let ext = if m.is_pointwise() { "csv" } else { "json" };
        self.out.join("pred").join(format!("{}_{}.{ext}", m.name(), c.tag()))
    }

    pub fn cal_scores_path(&self, m: Method, c: &Cell) -> PathBuf {
        self.out.join("pred").join(format!("{}_{}_cal.csv", m.name(), c.tag()))
    }

    pub fn cert_path(&self, m: Method, c: &Cell, ext: &str) -> PathBuf {
        self.out.join("cert").join(format!("{}_{}.{ext}", m.name(), c.tag()))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.out.join("metrics.csv")
    }

    pub fn aggregate_path(&self) -> PathBuf {
        self.out.join("metrics_aggregate.csv")
    }

    fn grid(&self) -> anyhow::Result<PointSet> {
        Ok(self.region.bounds().grid(&self.cfg.config.grid.resolution)?)
    }

    pub fn gen_data(&self) -> anyhow::Result<()> {
        let c = &self.cfg.config;
        self.for_cells(|cell| {
            let params = c.synth(cell.alpha);
            let ts = gen_synth_dataset(&params, &self.region, c.data.n_traj, cell.horizon, cell.seed)?;
            let n_pairs = c.n_pairs(cell.horizon);
            let pairs = match c.data.pair_mode {
                PairMode::Iid => iid_pairs(&params, self.region.bounds(), n_pairs, cell.seed)?,
                PairMode::Dependent => dependent_pairs(&ts, Some(n_pairs), cell.seed)?,
            };
            let mut buf = self.head(cell.seed).into_bytes();
            write_trajectories(&ts, &mut buf)?;
            write_atomic(&self.traj_path(cell), &buf)?;
            let mut buf = self.head(cell.seed).into_bytes();
            write_pairs(&pairs, &mut buf)?;
            write_atomic(&self.pairs_path(cell), &buf)?;
            if c.data.n_cal > 0 {
                let cal_seed = derive_seed(cell.seed, Purpose::Calibration, 0);
                let cal = gen_synth_dataset(&params, &self.region, c.data.n_cal, cell.horizon, cal_seed)?;
                let mut buf = self.head(cell.seed).into_bytes();
                write_trajectories(&cal, &mut buf)?;
                write_atomic(&self.cal_path(cell), &buf)?;
            }
            Ok(())
        })
    }

    pub fn mc_oracle(&self) -> anyhow::Result<()> {
        let c = &self.cfg.config;
        let grid = self.grid()?;
        self.for_cells(|cell| {
            let params = c.synth(cell.alpha);
            let mc = mc_ground_truth(&params, &self.region, &grid, cell.horizon, c.grid.n_mc, cell.seed)?;
            let safe: Vec<f64> = mc.safe_counts.iter().map(|&s| s as f64).collect();
            let n_mc = vec![c.grid.n_mc as f64; mc.len()];
            let mut buf = self.head(cell.seed).into_bytes();
            write_grid(&grid, &[("p_mc", &mc.p_mc()), ("safe", &safe), ("n_mc", &n_mc)], &mut buf)?;
            write_atomic(&self.mc_path(cell), &buf)
        })
    }

    fn load_trajectories(&self, path: &std::path::Path) -> anyhow::Result<TrajectorySet> {
        read_trajectories(&read(path)?).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn certify(&self) -> anyhow::Result<()> {
        self.for_cells(|cell| self.certify_cell(cell))
    }

    /// Fits each selected method for one cell; the one-step model is fitted
    /// once and shared by every indirect method.
    pub fn certify_cell(&self, cell: &Cell) -> anyhow::Result<()> {
        let c = &self.cfg.config;
        let grid = self.grid()?;
        let cal = if c.data.n_cal > 0 { Some(self.load_trajectories(&self.cal_path(cell))?) } else { None };
        let cal_x0 = cal.as_ref().map(|t| t.initial_states());
        let mut dp: Option<DpModel> = None;
        for &m in &self.methods {
            if m.kernel_family() == KernelFamily::Dp && dp.is_none() {
                let path = self.pairs_path(cell);
                let pairs = read_pairs(&read(&path)?).with_context(|| format!("parsing {}", path.display()))?;
                let spec = c.kernel(KernelFamily::Dp, cell.horizon)?;
                dp = Some(fit_dp(&spec, &pairs, &self.region, c.dp.epsilon)?);
            }
            let scorer: Box<dyn Fn(&PointSet) -> anyhow::Result<Vec<f64>>> = match m {
                Method::Direct => {
                    let ts = self.load_trajectories(&self.traj_path(cell))?;
                    let model = fit_direct(&c.kernel(KernelFamily::Direct, cell.horizon)?, &ts, &self.region)?;
                    Box::new(move |p| Ok(model.predict_many(p)?))
                }
                Method::Dp => {
                    let model = dp.as_ref().expect("fitted above");
                    let stack = model.backward_value(cell.horizon)?;
                    Box::new(move |p| Ok(model.evaluate_dp_many(&stack, p)?))
                }
                Method::Imp | Method::Ssr => {
                    let model = dp.as_ref().expect("fitted above");
                    let part = build_partition(&self.region, &c.abstraction.cells)?;
                    let probs = empirical_cell_probs(&part, model)?;
                    let values = if m == Method::Imp {
                        let im = IntervalModel::new(&probs, &Radii::Constant(c.abstraction.radius))?;
                        imp_value_iteration(&im, &part, cell.horizon)?
                    } else {
                        let ssr = SsrParams::uniform(c.abstraction.delta, &part)?;
                        ssr_value_iteration_with(&probs, &part, &ssr, cell.horizon)?
                    };
                    Box::new(move |p| Ok(p.rows().map(|x| evaluate_abstraction(&values, &part, x).value).collect()))
                }
                Method::Barrier => {
                    let report = self.barrier_report(dp.as_ref().expect("fitted above"), cell)?;
                    let json = serde_json::to_string_pretty(&Provenance { config_sha256: &self.cfg.sha256, seed: cell.seed, report: &report })?;
                    write_atomic(&self.pred_path(m, cell), format!("{json}\n").as_bytes())?;
                    continue;
                }
            };
            let est = scorer(&grid)?;
            let mut buf = self.head(cell.seed).into_bytes();
            write_grid(&grid, &[("estimate", &est)], &mut buf)?;
            write_atomic(&self.pred_path(m, cell), &buf)?;
            if let (Some(ts), Some(x0)) = (&cal, &cal_x0) {
                let scores = scorer(x0)?;
                let outcomes: Vec<f64> = ts.safety_labels(&self.region).into_iter().map(|s| s as u8 as f64).collect();
                let mut text = self.head(cell.seed);
                text.push_str("x1,x2,score,outcome\n");
                for ((x, s), y) in x0.rows().zip(&scores).zip(&outcomes) {
                    writeln!(text, "{},{},{},{}", fmt_f64(x[0]), fmt_f64(x[1]), fmt_f64(*s), y)?;
                }
                write_atomic(&self.cal_scores_path(m, cell), text.as_bytes())?;
            }
        }
        Ok(())
    }

    fn barrier_report(&self, dp: &DpModel, cell: &Cell) -> anyhow::Result<BarrierReport> {
        let b = self.cfg.config.barrier.as_ref().ok_or_else(|| UsageError("missing [barrier] section".into()))?;
        let path = self.cfg.resolve(&b.candidate);
        let spec = self.cfg.config.kernel(KernelFamily::Dp, cell.horizon)?;
        let candidate = BarrierCandidate::from_csv(&read(&path)?, spec).with_context(|| format!("parsing {}", path.display()))?;
        let initial = match (&b.initial_low, &b.initial_high) {
            (Some(lo), Some(hi)) => AxisBox::new(lo.clone(), hi.clone())?,
            (None, None) => self.region.bounds().clone(),
            _ => bail!(UsageError("barrier.initial_low and barrier.initial_high go together".into())),
        };
        let grids = BarrierGrids {
            domain: AxisBox::new(b.domain_low.clone(), b.domain_high.clone())?,
            domain_resolution: b.domain_resolution.clone(),
            initial,
            initial_resolution: b.initial_resolution.clone(),
        };
        Ok(check_barrier(&candidate, dp, &self.region, &grids, cell.horizon)?)
    }

    pub fn calibrate(&self) -> anyhow::Result<()> {
        let c = &self.cfg.config;
        if c.data.n_cal == 0 {
            bail!("calibration needs a held-out split; set data.n_cal");
        }
        self.for_cells(|cell| {
            let (_, p_mc) = read_grid(&read(&self.mc_path(cell))?, 2, "p_mc")?;
            for &m in self.methods.iter().filter(|m| m.is_pointwise()) {
                let (grid, est) = read_grid(&read(&self.pred_path(m, cell))?, 2, "estimate")?;
                check_len(&est, &p_mc, &self.pred_path(m, cell))?;
                let path = self.cal_scores_path(m, cell);
                let table = parse_table(&read(&path)?).with_context(|| format!("parsing {}", path.display()))?;
                let (si, oi) = match (table.column("score"), table.column("outcome")) {
                    (Some(s), Some(o)) => (s, o),
                    _ => bail!("{} lacks score/outcome columns", path.display()),
                };
                let scores: Vec<f64> = table.rows.iter().map(|r| r[si]).collect();
                let outcomes: Vec<bool> = table.rows.iter().map(|r| r[oi] > 0.5).collect();
                let cal = calibrate(&scores, &outcomes, c.calibration.bins, c.calibration.delta)?;
                let bounds: Vec<f64> = est.iter().map(|&s| cal.certified_lower_bound(s)).collect();
                let sd = soundness_of_bounds(&bounds, &p_mc)?;
                let mut buf = self.head(cell.seed).into_bytes();
                write_grid(&grid, &[("bound", &bounds)], &mut buf)?;
                write_atomic(&self.cert_path(m, cell, "csv"), &buf)?;
                let summary = CalibrationSummary {
                    config_sha256: &self.cfg.sha256,
                    seed: cell.seed,
                    method: m,
                    alpha: cell.alpha,
                    horizon: cell.horizon,
                    soundness: sd.soundness,
                    discrimination: sd.discrimination,
                    mean_width: cal.widths.iter().sum::<f64>() / cal.widths.len() as f64,
                    calibrator: &cal,
                };
                let json = serde_json::to_string_pretty(&summary)?;
                write_atomic(&self.cert_path(m, cell, "json"), format!("{json}\n").as_bytes())?;
            }
            Ok(())
        })
    }

    /// Writes the per-cell metrics table and its seed aggregate.
    pub fn evaluate(&self) -> anyhow::Result<Vec<MetricsRow>> {
        let n_mc = self.cfg.config.grid.n_mc as u64;
        let methods: Vec<Method> = self.methods.iter().copied().filter(|m| m.is_pointwise()).collect();
        let per_cell = self
            .cells()
            .par_iter()
            .map(|cell| {
                let mc_text = read(&self.mc_path(cell))?;
                let (_, p_mc) = read_grid(&mc_text, 2, "p_mc")?;
                let (_, safe) = read_grid(&mc_text, 2, "safe")?;
                let successes: Vec<u64> = safe.iter().map(|&s| s as u64).collect();
                let trials = vec![n_mc; successes.len()];
                methods
                    .iter()
                    .map(|&m| {
                        let path = self.pred_path(m, cell);
                        let (_, est) = read_grid(&read(&path)?, 2, "estimate")?;
                        check_len(&est, &p_mc, &path)?;
                        let pred = clamp_unit(&est);
                        let b = brier_decomposition_counts(&pred, &successes, &trials, 10)?;
                        Ok(MetricsRow {
                            method: m,
                            alpha: cell.alpha,
                            horizon: cell.horizon,
                            seed: cell.seed,
                            rmse: rmse(&pred, &p_mc)?,
                            excess_rmse: excess_rmse(&pred, &p_mc)?,
                            rel: b.reliability,
                            res: b.resolution,
                            res_norm: b.normalized_resolution.unwrap_or(0.0),
                            unc: b.uncertainty,
                            brier: b.brier,
                            binned_brier: b.binned_brier,
                        })
                    })
                    .collect::<anyhow::Result<Vec<_>>>()
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let mut rows: Vec<MetricsRow> = per_cell.into_iter().flatten().collect();
        rows.sort_by(|a, b| {
            a.method.cmp(&b.method).then(a.alpha.total_cmp(&b.alpha)).then(a.horizon.cmp(&b.horizon)).then(a.seed.cmp(&b.seed))
        });

        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
        let mut text = header(&self.cfg.sha256, &seeds);
        writeln!(text, "method,alpha,horizon,seed,{}", METRIC_NAMES.join(","))?;
        for r in &rows {
            let vals: Vec<String> = r.values().iter().map(|&v| fmt_f64(v)).collect();
            writeln!(text, "{},{},{},{},{}", r.method.name(), fmt_f64(r.alpha), r.horizon, r.seed, vals.join(","))?;
        }
        write_atomic(&self.metrics_path(), text.as_bytes())?;

        let mut groups: BTreeMap<(Method, u64, usize), Vec<&MetricsRow>> = BTreeMap::new();
        for r in &rows {
            groups.entry((r.method, r.alpha.to_bits(), r.horizon)).or_default().push(r);
        }
        let mut text = header(&self.cfg.sha256, &seeds);
        let cols: Vec<String> = METRIC_NAMES.iter().flat_map(|n| [format!("{n}_mean"), format!("{n}_2std")]).collect();
        writeln!(text, "method,alpha,horizon,n_seeds,{}", cols.join(","))?;
        let mut keys: Vec<_> = groups.keys().copied().collect();
        keys.sort_by(|a, b| a.0.cmp(&b.0).then(f64::from_bits(a.1).total_cmp(&f64::from_bits(b.1))).then(a.2.cmp(&b.2)));
        for key in keys {
            let g = &groups[&key];
            let mut vals = Vec::new();
            for k in 0..METRIC_NAMES.len() {
                let xs: Vec<f64> = g.iter().map(|r| r.values()[k]).collect();
                let (mean, std) = mean_std(&xs);
                vals.push(fmt_f64(mean));
                vals.push(fmt_f64(2.0 * std));
            }
            writeln!(text, "{},{},{},{},{}", key.0.name(), fmt_f64(f64::from_bits(key.1)), key.2, g.len(), vals.join(","))?;
        }
        write_atomic(&self.aggregate_path(), text.as_bytes())?;
        Ok(rows)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn check_len(a: &[f64], b: &[f64], path: &std::path::Path) -> anyhow::Result<()> {
    if a.len() != b.len() {
        bail!("{} has {} grid points, the Monte-Carlo grid has {}", path.display(), a.len(), b.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct Provenance<'a, T: Serialize> {
    config_sha256: &'a str,
    seed: u64,
    report: &'a T,
}

#[derive(Serialize)]
struct CalibrationSummary<'a> {
    config_sha256: &'a str,
    seed: u64,
    method: Method,
    alpha: f64,
    horizon: usize,
    soundness: f64,
    discrimination: f64,
    mean_width: f64,
    calibrator: &'a safecert::calibration::BinnedCalibrator,
}
