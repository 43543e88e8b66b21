use faer::Mat;
use proptest::prelude::*;
use safecert::benchmark::iid_pairs;
use safecert::{fit_dp, AxisBox, DpModel, KernelSpec, PointSet, SafeRegion, SynthParams, TransitionSet};

// states 0, 1, 2 on a line; state 2 lies outside S
const P: [[f64; 3]; 3] = [[0.5, 0.25, 0.25], [0.25, 0.75, 0.0], [0.0, 0.5, 0.5]];
const SAFE: [bool; 3] = [true, true, false];

fn line_region() -> SafeRegion {
    SafeRegion::new(AxisBox::new(vec![-0.5], vec![1.5]).unwrap(), vec![]).unwrap()
}

/// Four pairs per source state, split according to `P`.
fn encoded_chain() -> (TransitionSet, Vec<usize>) {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut target_state = Vec::new();
    for (i, row) in P.iter().enumerate() {
        for (j, p) in row.iter().enumerate() {
            for _ in 0..(p * 4.0).round() as usize {
                src.push(i as f64);
                dst.push(j as f64);
                target_state.push(j);
            }
        }
    }
    let pairs = TransitionSet::new(PointSet::new(1, src).unwrap(), PointSet::new(1, dst).unwrap()).unwrap();
    (pairs, target_state)
}

fn encoded_model() -> (DpModel, Vec<usize>) {
    let (pairs, targets) = encoded_chain();
    let spec = KernelSpec::isotropic(0.05, 1, 1e-9).unwrap();
    (fit_dp(&spec, &pairs, &line_region(), 0.0).unwrap(), targets)
}

fn matrix_power_values(horizon: usize) -> Vec<Vec<f64>> {
    let mut u = vec![SAFE.map(|s| s as u8 as f64).to_vec()];
    for _ in 0..horizon {
        let next = u.last().unwrap();
        let cur = (0..3)
            .map(|i| if SAFE[i] { (0..3).map(|k| P[i][k] * next[k]).sum() } else { 0.0 })
            .collect();
        u.push(cur);
    }
    u.reverse();
    u
}

fn benchmark_model(eps: f64) -> DpModel {
    let s = SafeRegion::benchmark();
    let pairs = iid_pairs(&SynthParams::default(), s.bounds(), 60, 3).unwrap();
    let spec = KernelSpec::from_squared_lengthscales(&[0.596, 0.361], 1e-3).unwrap();
    fit_dp(&spec, &pairs, &s, eps).unwrap()
}

#[test]
fn single_pair_transfer_is_scalar_weight() {
    let pairs = TransitionSet::new(PointSet::from_rows(1, &[[0.0]]).unwrap(), PointSet::from_rows(1, &[[0.3]]).unwrap()).unwrap();
    let spec = KernelSpec::isotropic(0.5, 1, 0.1).unwrap();
    let m = fit_dp(&spec, &pairs, &line_region(), 0.0).unwrap();
    assert_eq!(m.len(), 1);
    let expect = (-0.18f64).exp() / 1.1;
    assert!((m.transfer(0, 0) - expect).abs() < 1e-14);
    assert_eq!(m.safe_next(), &[true]);
}

#[test]
fn encoded_chain_recovers_transition_matrix() {
    let (m, targets) = encoded_model();
    for a in 0..m.len() {
        let row: f64 = (0..m.len()).map(|b| m.transfer(a, b)).sum();
        assert!((row - 1.0).abs() < 1e-3);
        let from = targets[a];
        for k in 0..3 {
            let agg: f64 = (0..m.len()).filter(|&b| targets[b] == k).map(|b| m.transfer(a, b)).sum();
            assert!((agg - P[from][k]).abs() < 1e-3);
        }
    }
}

#[test]
fn encoded_chain_matches_matrix_power() {
    let (m, targets) = encoded_model();
    for horizon in [1, 3, 6] {
        let u = matrix_power_values(horizon);
        let stack = m.backward_value(horizon).unwrap();
        for l in 0..=horizon {
            for (a, &k) in targets.iter().enumerate() {
                assert!((stack.level(l)[a] - u[l][k]).abs() < 1e-3, "T={horizon} l={l}");
            }
        }
        for i in 0..3 {
            let v = m.evaluate_dp(&stack, &[i as f64]).unwrap();
            assert!((v - u[0][i]).abs() < 1e-3);
        }
    }
}

#[test]
fn exact_chain_matches_matrix_power() {
    let rows: Vec<Vec<f64>> = P.iter().map(|r| r.to_vec()).collect();
    let m = DpModel::from_chain(&rows, &SAFE, 0.0).unwrap();
    let u = matrix_power_values(8);
    let stack = m.backward_value(8).unwrap();
    for l in 0..=8 {
        for i in 0..3 {
            assert!((stack.level(l)[i] - u[l][i]).abs() < 1e-10);
        }
    }
}

#[test]
fn base_cases() {
    let m = benchmark_model(0.0);
    let stack = m.backward_value(0).unwrap();
    let mask: Vec<f64> = m.safe_next().iter().map(|&s| s as u8 as f64).collect();
    assert_eq!(stack.level(0), &mask[..]);
    assert_eq!(m.evaluate_dp(&stack, &[0.0, 0.0]).unwrap(), 1.0);
    assert_eq!(m.evaluate_dp(&stack, &[0.5, 0.4]).unwrap(), 0.0);
    let stack = m.backward_value(7).unwrap();
    assert_eq!(stack.level(7), &mask[..]);
    assert_eq!(m.evaluate_dp(&stack, &[0.5, 0.4]).unwrap(), 0.0);
    assert_eq!(m.evaluate_dp(&stack, &[9.0, 0.0]).unwrap(), 0.0);
}

#[test]
fn averaging_preserves_all_safe_values() {
    let rows = vec![vec![0.5, 0.5, 0.0], vec![0.2, 0.2, 0.6], vec![0.0, 0.0, 1.0]];
    let m = DpModel::from_chain(&rows, &[true; 3], 0.0).unwrap();
    let stack = m.backward_value(12).unwrap();
    for l in 0..=12 {
        assert!(stack.level(l).iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }
}

#[test]
fn diagonal_operators() {
    let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let m = DpModel::from_chain(&id, &[true, true], 0.0).unwrap();
    assert!((m.spectral_decay(10).unwrap().radius - 1.0).abs() < 1e-10);
    let half = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
    let d = DpModel::from_chain(&half, &[true, true], 0.0).unwrap().spectral_decay(10).unwrap();
    assert!((d.radius - 0.5).abs() < 1e-10);
    assert!((d.bound - 9.765625e-4).abs() < 1e-12);
}

#[test]
fn fitted_radius_matches_dense_eigensolver() {
    let s = SafeRegion::benchmark();
    let pairs = iid_pairs(&SynthParams::default(), s.bounds(), 20, 17).unwrap();
    let spec = KernelSpec::from_squared_lengthscales(&[0.5, 0.5], 1e-3).unwrap();
    let m = fit_dp(&spec, &pairs, &s, 0.0).unwrap();
    let n = m.len();
    let a = Mat::from_fn(n, n, |i, j| if m.safe_next()[i] { m.transfer(i, j) } else { 0.0 });
    let dense = a.eigenvalues().unwrap().iter().map(|z| (z.re * z.re + z.im * z.im).sqrt()).fold(0.0, f64::max);
    let got = m.spectral_decay(5).unwrap();
    assert!((got.radius - dense).abs() < 1e-8, "{} vs {dense}", got.radius);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn epsilon_is_monotone(e1 in 0.0f64..0.05, de in 0.0f64..0.05, horizon in 1usize..6) {
        let lo = benchmark_model(e1);
        let hi = benchmark_model(e1 + de);
        let (a, b) = (lo.backward_value(horizon).unwrap(), hi.backward_value(horizon).unwrap());
        for l in 0..=horizon {
            for (x, y) in a.level(l).iter().zip(b.level(l)) {
                prop_assert!(y <= x);
                prop_assert!((0.0..=1.0).contains(x) && (0.0..=1.0).contains(y));
            }
        }
        let q = [0.1, -0.3];
        prop_assert!(hi.evaluate_dp(&b, &q).unwrap() <= lo.evaluate_dp(&a, &q).unwrap());
    }

    #[test]
    fn chain_values_stay_in_unit_interval(
        raw in prop::collection::vec(prop::collection::vec(-0.5f64..1.5, 4), 4),
        safe in prop::collection::vec(any::<bool>(), 4),
        eps in 0.0f64..0.5,
    ) {
        let m = DpModel::from_chain(&raw, &safe, eps).unwrap();
        let stack = m.backward_value(5).unwrap();
        for l in 0..=5 {
            for (i, v) in stack.level(l).iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(v));
                if !safe[i] {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
    }
}
