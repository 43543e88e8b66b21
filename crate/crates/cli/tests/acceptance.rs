//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;
use std::time::Instant;

use faer::Mat;
use rand::Rng;

use safecert::abstraction::{build_partition, imp_inner_min, imp_value_iteration, CellProbabilities, IntervalModel, Radii};
use safecert::barrier::{check_barrier, uniform_mc_oracle, BarrierCandidate, BarrierGrids};
use safecert::benchmark::{iid_pairs, LinearSystem};
use safecert::calibration::{calibrate, hoeffding_width};
use safecert::direct::{Mollifier, SmoothedRegion};
use safecert::metrics::brier_decomposition;
use safecert::rng::{stream, Purpose, SimRng};
use safecert::{fit_dp, AxisBox, DpModel, KernelSpec, SafeRegion, Trajectory};
use safecert_cli::commands::{Context, MetricsRow, RunOptions};
use safecert_cli::{Command, LoadedConfig, Method};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Criterion numbers may be passed as arguments to run a subset,
/// e.g. `cargo test --test acceptance -- 4 10`.
fn main() {
    let started = Instant::now();
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |k: usize| selected.is_empty() || selected.contains(&k);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    if want(1) || want(2) || want(3) {
        let sweep = desk_sweep();
        let all: [(usize, &str, fn(&Sweep) -> Outcome); 3] = [
            (1, "non-Markov degradation", criterion_1),
            (2, "direct reliability", criterion_2),
            (3, "overestimation attribution", criterion_3),
        ];
        for (k, name, f) in all {
            if want(k) {
                results.push((k, name, f(&sweep)));
            }
        }
    }
    let rest: [(usize, &str, fn() -> Outcome); 9] = [
        (4, "chain DP equals matrix power", criterion_4),
        (5, "order-maximization vs vertex enumeration", criterion_5),
        (6, "histogram-binning coverage", criterion_6),
        (7, "Hoeffding width", criterion_7),
        (8, "Brier-Murphy identity", criterion_8),
        (9, "smoothed safety vs quadrature", criterion_9),
        (10, "power iteration vs dense eigensolver", criterion_10),
        (11, "barrier soundness", criterion_11),
        (12, "sweep determinism", criterion_12),
    ];
    for (k, name, f) in rest {
        if want(k) {
            results.push((k, name, f()));
        }
    }

    let mut failed = 0;
    for (k, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("{tag} criterion {k:>2} ({name}): {}", o.detail);
    }
    println!("{} of {} criteria passed in {:.1?}", results.len() - failed, results.len(), started.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

/// Metrics keyed by `(method, alpha bits, seed)` for the desk config.
struct Sweep {
    rows: BTreeMap<(Method, u64, u64), MetricsRow>,
    seeds: Vec<u64>,
}

impl Sweep {
    fn get(&self, m: Method, alpha: f64, seed: u64) -> &MetricsRow {
        &self.rows[&(m, alpha.to_bits(), seed)]
    }
}

fn desk_sweep() -> Sweep {
    let cfg = LoadedConfig::from_path(&configs_dir().join("desk.toml")).expect("desk config");
    let out = tempfile::tempdir().expect("tempdir");
    let opts = RunOptions { out: Some(out.path().to_path_buf()), ..RunOptions::default() };
    let ctx = Context::new(cfg, &opts).expect("context");
    let t = Instant::now();
    ctx.run(Command::GenData).expect("gen-data");
    ctx.run(Command::McOracle).expect("mc-oracle");
    ctx.run(Command::Certify).expect("certify");
    let metrics = ctx.evaluate().expect("evaluate");
    eprintln!("desk sweep finished in {:.1?}", t.elapsed());
    let rows = metrics.into_iter().map(|r| ((r.method, r.alpha.to_bits(), r.seed), r)).collect();
    Sweep { rows, seeds: ctx.seeds.clone() }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_1(s: &Sweep) -> Outcome {
    let mut ok = 0;
    for &seed in &s.seeds {
        let d0 = s.get(Method::Direct, 0.0, seed).rmse;
        let d95 = s.get(Method::Direct, 0.95, seed).rmse;
        let p95 = s.get(Method::Dp, 0.95, seed).rmse;
        if d95 <= 1.5 * d0 && p95 >= 2.0 * d95 {
            ok += 1;
        }
    }
    let md0 = mean(s.seeds.iter().map(|&k| s.get(Method::Direct, 0.0, k).rmse));
    let md95 = mean(s.seeds.iter().map(|&k| s.get(Method::Direct, 0.95, k).rmse));
    let mp95 = mean(s.seeds.iter().map(|&k| s.get(Method::Dp, 0.95, k).rmse));
    outcome(
        ok >= 8 && md95 <= 1.5 * md0 && mp95 >= 2.0 * md95,
        format!("{ok}/10 seeds; mean RMSE direct α=0 {md0:.4}, direct α=0.95 {md95:.4}, dp α=0.95 {mp95:.4}"),
    )
}

fn criterion_2(s: &Sweep) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [0.0, 0.5, 0.95] {
        let rel: Vec<f64> = s.seeds.iter().map(|&k| s.get(Method::Direct, alpha, k).rel).collect();
        let m = mean(rel.iter().copied());
        let worst = rel.iter().copied().fold(0.0, f64::max);
        pass &= m <= 0.02;
        parts.push(format!("α={alpha}: mean {m:.4} (max {worst:.4})"));
    }
    outcome(pass, format!("REL ≤ 0.02; {}", parts.join(", ")))
}

fn criterion_3(s: &Sweep) -> Outcome {
    let ok = s
        .seeds
        .iter()
        .filter(|&&k| {
            let r = s.get(Method::Dp, 0.95, k);
            r.excess_rmse >= 0.8 * r.rmse
        })
        .count();
    let ratio = mean(s.seeds.iter().map(|&k| {
        let r = s.get(Method::Dp, 0.95, k);
        r.excess_rmse / r.rmse
    }));
    outcome(ok >= 8, format!("{ok}/10 seeds with excess ≥ 0.8·RMSE; mean ratio {ratio:.3}"))
}

fn chain() -> (Vec<Vec<f64>>, Vec<bool>) {
    let p = vec![
        vec![0.70, 0.20, 0.05, 0.05],
        vec![0.10, 0.60, 0.25, 0.05],
        vec![0.05, 0.15, 0.60, 0.20],
        vec![0.00, 0.00, 0.10, 0.90],
    ];
    (p, vec![true, true, true, false])
}

/// `(diag(1_S) P)^T 1_S` by explicit repeated multiplication.
fn matrix_power_dp(p: &[Vec<f64>], safe: &[bool], horizon: usize) -> Vec<f64> {
    let n = p.len();
    let mask: Vec<f64> = safe.iter().map(|&s| s as u8 as f64).collect();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = mask[i] * p[i][j];
        }
    }
    let mut pow = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect::<Vec<_>>()).collect::<Vec<_>>();
    for _ in 0..horizon {
        pow = (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| pow[i][k] * a[k][j]).sum()).collect()).collect();
    }
    (0..n).map(|i| (0..n).map(|j| pow[i][j] * mask[j]).sum()).collect()
}

fn criterion_4() -> Outcome {
    let (p, safe) = chain();
    let model = DpModel::from_chain(&p, &safe, 0.0).unwrap();
    let mut worst: f64 = 0.0;
    for t in [1, 5, 20] {
        let v0 = model.backward_value(t).unwrap().level(0).to_vec();
        let oracle = matrix_power_dp(&p, &safe, t);
        worst = v0.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    outcome(worst <= 1e-10, format!("max |Δ| = {worst:.2e} over T ∈ {{1, 5, 20}}"))
}

/// Minimum of `pᵀv` over the vertices of `{lower ≤ p ≤ upper, Σp = 1}`.
fn vertex_min(lower: &[f64], upper: &[f64], v: &[f64]) -> f64 {
    let n = lower.len();
    let mut best = f64::INFINITY;
    for free in 0..n {
        for mask in 0u32..(1 << (n - 1)) {
            let mut p = vec![0.0; n];
            let mut bit = 0;
            for i in (0..n).filter(|&i| i != free) {
                p[i] = if mask & (1 << bit) != 0 { upper[i] } else { lower[i] };
                bit += 1;
            }
            p[free] = 1.0 - p.iter().sum::<f64>();
            if p[free] >= lower[free] - 1e-15 && p[free] <= upper[free] + 1e-15 {
                best = best.min(p.iter().zip(v).map(|(a, b)| a * b).sum());
            }
        }
    }
    best
}

fn random_simplex(rng: &mut SimRng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn criterion_5() -> Outcome {
    let mut rng = stream(5, Purpose::Oracle, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=4);
        let p = random_simplex(&mut rng, n);
        let lower: Vec<f64> = p.iter().map(|&x| (x - 0.3 * rng.random::<f64>()).max(0.0)).collect();
        let upper: Vec<f64> = p.iter().map(|&x| (x + 0.3 * rng.random::<f64>()).min(1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let (_, val) = imp_inner_min(&lower, &upper, &v).unwrap();
        worst = worst.max((val - vertex_min(&lower, &upper, &v)).abs());
    }

    // zero-width intervals on the chain of criterion 4: cells 0..2 safe, cell 3 unsafe
    let (p, safe) = chain();
    let region = SafeRegion::new(
        AxisBox::new(vec![0.0], vec![4.0]).unwrap(),
        vec![AxisBox::new(vec![3.2], vec![3.8]).unwrap()],
    )
    .unwrap();
    let part = build_partition(&region, &[4]).unwrap();
    assert_eq!(part.safe_flags(), &safe[..]);
    let rows = p.iter().map(|r| r.iter().copied().chain([0.0]).collect()).collect();
    let model = IntervalModel::new(&CellProbabilities { rows, flagged: vec![] }, &Radii::Constant(0.0)).unwrap();
    let dp = DpModel::from_chain(&p, &safe, 0.0).unwrap();
    let mut chain_worst: f64 = 0.0;
    for t in [1, 5, 20] {
        let imp = imp_value_iteration(&model, &part, t).unwrap();
        let reference = dp.backward_value(t).unwrap();
        chain_worst = imp.v0().iter().zip(reference.level(0)).map(|(a, b)| (a - b).abs()).fold(chain_worst, f64::max);
    }
    outcome(
        worst <= 1e-12 && chain_worst <= 1e-12,
        format!("1000 instances max |Δ| = {worst:.2e}; zero-width chain max |Δ| = {chain_worst:.2e}"),
    )
}

fn criterion_6() -> Outcome {
    let truth = |x: f64| 0.1 + 0.8 * x * x;
    let mut miss = 0;
    let reps = 500;
    for r in 0..reps {
        let mut rng = stream(6, Purpose::Calibration, r);
        let xs: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<bool> = xs.iter().map(|&x| rng.random::<f64>() < truth(x)).collect();
        let cal = calibrate(&xs, &ys, 10, 0.1).unwrap();
        let x_test = rng.random::<f64>();
        if truth(x_test) < cal.certified_lower_bound(x_test) {
            miss += 1;
        }
    }
    let rate = miss as f64 / reps as f64;
    outcome(rate <= 0.13, format!("miscoverage {rate:.3} over {reps} replicates (limit 0.13)"))
}

fn criterion_7() -> Outcome {
    let eps = hoeffding_width(10, 0.1, 100);
    let scores: Vec<f64> = (0..1000).map(|i| i as f64).collect();
    let cal = calibrate(&scores, &vec![true; 1000], 10, 0.1).unwrap();
    let balanced = cal.widths.iter().all(|w| (w - eps).abs() < 1e-15);
    outcome((eps - 0.15174).abs() <= 1e-5 && balanced, format!("ε_b = {eps:.6}"))
}

fn criterion_8() -> Outcome {
    let mut rng = stream(8, Purpose::Oracle, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(20..400);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 1.2 - 0.1).collect();
        let ys: Vec<bool> = scores.iter().map(|&s| rng.random::<f64>() < s.clamp(0.0, 1.0)).collect();
        let r = brier_decomposition(&scores, &ys, 10).unwrap();
        // direct MSE of bin-averaged predictions
        let bin = |p: f64| ((p.clamp(0.0, 1.0) * 10.0).floor() as usize).min(9);
        let mut sum = [0.0; 10];
        let mut cnt = [0.0; 10];
        for &s in &scores {
            sum[bin(s)] += s.clamp(0.0, 1.0);
            cnt[bin(s)] += 1.0;
        }
        let mse = scores
            .iter()
            .zip(&ys)
            .map(|(&s, &y)| (sum[bin(s)] / cnt[bin(s)] - y as u8 as f64).powi(2))
            .sum::<f64>()
            / n as f64;
        let identity = r.reliability - r.resolution + r.uncertainty;
        worst = worst.max((mse - identity).abs()).max((r.binned_brier - identity).abs());
    }
    outcome(worst <= 1e-12, format!("max |binned − (REL − RES + UNC)| = {worst:.2e}"))
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn criterion_9() -> Outcome {
    let region = SafeRegion::new(AxisBox::new(vec![-1.0], vec![1.0]).unwrap(), vec![]).unwrap();
    let smoothed = SmoothedRegion::new(&region).unwrap();
    let mut worst: f64 = 0.0;
    for gamma in [0.05, 0.2, 0.8] {
        let m = Mollifier { bandwidth: gamma, order: 1 };
        // K_γ(u) = (2/(πγ²))^{1/2} exp(−2u²/γ²) in one dimension
        let kernel = move |u: f64| (2.0 / (std::f64::consts::PI * gamma * gamma)).sqrt() * (-2.0 * u * u / (gamma * gamma)).exp();
        for x in [0.0, 0.5, 0.95, -1.0, 1.2] {
            let closed = m.smoothed_safety(&smoothed, &Trajectory::new(1, vec![x]).unwrap());
            let quad = simpson(&|y| kernel(x - y), -1.0, 1.0, 1e-12);
            worst = worst.max((closed - quad).abs());
        }
    }
    outcome(worst <= 1e-6, format!("max |closed − quadrature| = {worst:.2e} at γ_N ∈ {{0.05, 0.2, 0.8}}"))
}

fn spectral_radius_dense(model: &DpModel) -> f64 {
    let n = model.len();
    let a = Mat::from_fn(n, n, |i, j| if model.safe_next()[i] { model.transfer(i, j) } else { 0.0 });
    a.eigenvalues().unwrap().iter().map(|z| (z.re * z.re + z.im * z.im).sqrt()).fold(0.0, f64::max)
}

fn criterion_10() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    let mut radii = Vec::new();
    let region = SafeRegion::benchmark();
    for k in 0..20u64 {
        let model = if k % 2 == 0 {
            // kernel-fitted one-step model on 20 benchmark pairs
            let params = safecert::SynthParams::with_alpha(0.5);
            let pairs = iid_pairs(&params, region.bounds(), 20, 100 + k).unwrap();
            let spec = KernelSpec::from_squared_lengthscales(&[0.472, 0.290], 1e-3).unwrap();
            fit_dp(&spec, &pairs, &region, 0.0).unwrap()
        } else {
            let mut rng = stream(10, Purpose::Oracle, k);
            let p: Vec<Vec<f64>> = (0..20).map(|_| random_simplex(&mut rng, 20).into_iter().map(|x| 0.95 * x).collect()).collect();
            let safe: Vec<bool> = (0..20).map(|_| rng.random::<f64>() < 0.8).collect();
            DpModel::from_chain(&p, &safe, 0.0).unwrap()
        };
        let dense = spectral_radius_dense(&model);
        let power = match model.spectral_decay(1) {
            Ok(d) => d.radius,
            Err(e) => return outcome(false, format!("model {k}: {e}")),
        };
        worst = worst.max((power - dense).abs());
        radii.push(power);
        if power < 1.0 && power > 0.0 {
            let seq: Vec<f64> = (1..=50).map(|t| model.spectral_decay(t).unwrap().bound).collect();
            monotone &= seq.windows(2).all(|w| w[1] < w[0]);
        }
    }
    let below_one = radii.iter().filter(|&&r| r < 1.0).count();
    outcome(
        worst <= 1e-8 && monotone,
        format!("max |ρ_power − ρ_dense| = {worst:.2e} over 20 models; ρ^T decreasing on the {below_one} with ρ < 1"),
    )
}

fn criterion_11() -> Outcome {
    let system = LinearSystem { gain: 0.5, noise_scale: 0.05, dim: 1 };
    let region = SafeRegion::new(AxisBox::new(vec![-1.0], vec![1.0]).unwrap(), vec![]).unwrap();
    let spec = KernelSpec::isotropic(0.5, 1, 1e-6).unwrap();
    let pairs = iid_pairs(&system, region.bounds(), 400, 11).unwrap();
    let dp = fit_dp(&spec, &pairs, &region, 0.0).unwrap();

    // kernel interpolant of x² + 0.01 on [−2, 2]
    let centers = AxisBox::new(vec![-2.0], vec![2.0]).unwrap().grid(&[41]).unwrap();
    let gram = safecert::fit_weights(&KernelSpec::isotropic(0.5, 1, 1e-10).unwrap(), &centers).unwrap();
    let target: Vec<f64> = centers.rows().map(|c| c[0] * c[0] + 0.01).collect();
    let coef = gram.solve(&target).unwrap();
    let candidate = BarrierCandidate::new(spec, centers, coef).unwrap();

    let x0 = AxisBox::new(vec![-0.2], vec![0.2]).unwrap();
    let grids = BarrierGrids {
        domain: AxisBox::new(vec![-1.5], vec![1.5]).unwrap(),
        domain_resolution: vec![301],
        initial: x0.clone(),
        initial_resolution: vec![41],
    };
    let mut bounds = Vec::new();
    let mut sound = true;
    let mut parts = Vec::new();
    for t in [5, 20] {
        let report = check_barrier(&candidate, &dp, &region, &grids, t).unwrap();
        let Some(bound) = report.bound else {
            return outcome(false, format!("conditions failed at T = {t}: {report:?}"));
        };
        let init = x0.grid(&[5]).unwrap();
        let mc = uniform_mc_oracle(&system, &region, &init, t, 10_000, 11).unwrap();
        sound &= bound <= mc.value + 3.0 * mc.std_error;
        parts.push(format!("T={t}: bound {bound:.4} vs MC {:.4}±{:.4} (β={:.2e})", mc.value, mc.std_error, report.beta));
        bounds.push((bound, report.beta));
    }
    let decreasing = bounds[0].1 <= 0.0 || bounds[1].0 < bounds[0].0;
    outcome(sound && decreasing, parts.join("; "))
}

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
seeds = [1, 2]
methods = ["direct", "dp", "imp", "ssr", "barrier"]

[system]
alphas = [0.0, 0.95]

[data]
horizons = [5]
n_traj = 60
pairs_per_step = 40
n_cal = 50

[grid]
resolution = [6, 6]
n_mc = 40

[abstraction]
cells = [8, 8]
radius = 0.02
delta = 0.01

[barrier]
candidate = "barrier.csv"
domain_low = [-3.5, -2.5]
domain_high = [3.0, 1.5]
domain_resolution = [14, 9]
initial_resolution = [4, 4]
"#;
    std::fs::write(dir.path().join("sweep.toml"), config).unwrap();
    std::fs::write(dir.path().join("barrier.csv"), "cx1,cx2,alpha\n0.0,0.0,0.5\n3.0,1.0,2.0\n").unwrap();
    let bin = env!("CARGO_BIN_EXE_safecert");
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Proc::new(bin)
            .arg("sweep")
            .arg("--config")
            .arg(dir.path().join("sweep.toml"))
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, format!("sweep run {run} exited with {status}"));
        }
        trees.push(collect_files(&out));
    }
    let csvs = trees[0].keys().filter(|k| k.ends_with(".csv")).count();
    let same = trees[0] == trees[1];
    outcome(same && csvs > 0, format!("{} files ({csvs} CSV) compared byte for byte", trees[0].len()))
}

fn collect_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
