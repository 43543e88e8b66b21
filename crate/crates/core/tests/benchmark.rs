use proptest::prelude::*;
use safecert::benchmark::{gen_synth_dataset, iid_pairs, mc_ground_truth, sample_uniform, LinearSystem};
use safecert::rng::{stream, Purpose};
use safecert::{AxisBox, SafeRegion, SynthParams, Trajectory};

#[test]
fn datasets_are_bit_identical_per_seed() {
    let s = SafeRegion::benchmark();
    let p = SynthParams::with_alpha(0.5);
    let a = gen_synth_dataset(&p, &s, 50, 15, 11).unwrap();
    let b = gen_synth_dataset(&p, &s, 50, 15, 11).unwrap();
    let c = gen_synth_dataset(&p, &s, 50, 15, 12).unwrap();
    assert_eq!(a.trajectories(), b.trajectories());
    assert_ne!(a.trajectories(), c.trajectories());
    assert_eq!((a.len(), a.horizon(), a.dim()), (50, 15, 2));
    assert_eq!(a.get(0).len(), 16);
}

#[test]
fn uniform_sampler_mean() {
    let b = SafeRegion::benchmark().bounds().clone();
    let n = 100_000;
    let mut rng = stream(3, Purpose::Oracle, 0);
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let x = sample_uniform(&b, &mut rng);
        assert!(b.contains(&x));
        sum[0] += x[0];
        sum[1] += x[1];
    }
    let c = b.center();
    for j in 0..2 {
        let width = b.high()[j] - b.low()[j];
        let se = width / 12f64.sqrt() / (n as f64).sqrt();
        assert!((sum[j] / n as f64 - c[j]).abs() < 3.0 * se, "dim {j}");
    }
}

#[test]
fn markovian_latent_is_uncorrelated() {
    let p = SynthParams::with_alpha(0.0);
    let mut rng = stream(5, Purpose::Oracle, 1);
    let n = 100_000;
    // the latent process does not depend on the state when α = 0
    let (_, z) = p.rollout(&[0.0, 0.0], n, &mut rng);
    let a: Vec<f64> = z.iter().map(|v| v[0]).collect();
    let mean = a.iter().sum::<f64>() / n as f64;
    let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let lag: f64 = a.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1) as f64;
    let r = lag / var;
    assert!(r.abs() < 3.0 / (n as f64).sqrt(), "lag-1 autocorrelation {r}");
}

#[test]
fn stationary_latent_variance_without_coupling() {
    let p = SynthParams { coupling_gain: 0.0, ..SynthParams::with_alpha(0.9) };
    let n = 20_000;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream(9, Purpose::Oracle, i as u64);
        let (_, z) = p.rollout(&[0.0, 0.0], 40, &mut rng);
        samples.push(z[39][1]);
    }
    let var = samples.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let s2 = p.noise_scale * p.noise_scale;
    let se = s2 * (2.0 / n as f64).sqrt();
    assert!((var - s2).abs() < 3.0 * se, "variance {var} vs {s2}");
}

#[test]
fn safety_examples() {
    let s = SafeRegion::benchmark();
    assert!(s.is_safe(&[0.0, 0.0]));
    assert!(!s.is_safe(&[0.5, 0.4]));
    assert!(!s.is_safe(&[3.0, 0.0]));
    let origin = Trajectory::new(2, vec![0.0; 8]).unwrap();
    assert!(s.trajectory_safe(origin.states()));
    let bad_start = Trajectory::new(2, vec![0.5, 0.4, 0.0, 0.0, 0.0, 0.0]).unwrap();
    assert!(!s.trajectory_safe(bad_start.states()));
    let late = Trajectory::new(2, vec![0.0, 0.0, 0.0, 0.0, -1.0, -1.2]).unwrap();
    assert!(!s.trajectory_safe(late.states()));
}

#[test]
fn iid_pairs_start_in_the_box() {
    let s = SafeRegion::benchmark();
    let p = SynthParams::default();
    let a = iid_pairs(&p, s.bounds(), 5000, 4).unwrap();
    assert_eq!(a.len(), 5000);
    assert!(a.sources.rows().all(|x| s.bounds().contains(x)));
    let mean0 = a.sources.rows().map(|x| x[0]).sum::<f64>() / 5000.0;
    // width 5.5, se ≈ 0.0225
    assert!((mean0 + 0.25).abs() < 0.07);
    assert_eq!(a, iid_pairs(&p, s.bounds(), 5000, 4).unwrap());
}

#[test]
fn mc_entries_are_counts_over_n() {
    let s = SafeRegion::benchmark();
    let grid = s.bounds().grid(&[5, 5]).unwrap();
    let p = SynthParams::default();
    let g = mc_ground_truth(&p, &s, &grid, 5, 37, 2).unwrap();
    for (p, &c) in g.p_mc().iter().zip(&g.safe_counts) {
        assert!(c <= 37);
        assert_eq!(*p, c as f64 / 37.0);
    }
    assert_eq!(g, mc_ground_truth(&p, &s, &grid, 5, 37, 2).unwrap());
    assert!(mc_ground_truth(&p, &s, &grid, 5, 0, 2).is_err());
}

#[test]
fn linear_system_without_noise_is_deterministic() {
    let sys = LinearSystem { gain: 0.5, noise_scale: 0.0, dim: 1 };
    let region = SafeRegion::new(AxisBox::new(vec![-1.0], vec![1.0]).unwrap(), vec![]).unwrap();
    let grid = safecert::PointSet::from_rows(1, &[[0.9], [1.5]]).unwrap();
    let g = mc_ground_truth(&sys, &region, &grid, 10, 20, 0).unwrap();
    assert_eq!(g.p_mc(), vec![1.0, 0.0]);
}

proptest! {
    #[test]
    fn trajectory_safety_is_min_over_states(data in prop::collection::vec(-3.5f64..3.0, 2..=20)) {
        let mut data = data;
        if data.len() % 2 == 1 {
            data.pop();
        }
        let s = SafeRegion::benchmark();
        let t = Trajectory::new(2, data).unwrap();
        let min = t.states().map(|x| s.is_safe(x) as u8).min().unwrap();
        prop_assert_eq!(s.trajectory_safe(t.states()) as u8, min);
    }
}
