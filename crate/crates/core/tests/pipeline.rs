//! End-to-end checks across the public modules, against the master equation
//! and reference values.

use std::f64::consts::PI;

use gptraj_core::analytic::locate_singularity;
use gptraj_core::echo::{echo_no_jump, run_echo_ensemble};
use gptraj_core::lindblad::{integrate_with, trace_distance, DensityMatrix};
use gptraj_core::stats::CircularHistogram;
use gptraj_core::topology::winding_number;
use gptraj_core::trajectory::{ensemble_density, excited_state, run_ensemble, run_no_jump, RunOptions};
use gptraj_core::ModelParams;

fn reference(omega_ratio: f64, gamma_ratio: f64) -> ModelParams {
    ModelParams::reference(0.34 * PI, omega_ratio, gamma_ratio, 0.0)
}

#[test]
fn stream_split_does_not_change_trajectories() {
    let p = reference(5e-3, 1e-3);
    let psi = excited_state(&p);
    let opts = RunOptions::default();
    let whole = run_ensemble(&p, p.period(), &psi, 0..300, &opts).unwrap();
    let mut parts = run_ensemble(&p, p.period(), &psi, 0..37, &opts).unwrap();
    parts.extend(run_ensemble(&p, p.period(), &psi, 37..300, &opts).unwrap());
    let key = |r: &gptraj_core::trajectory::TrajectoryRecord| (r.n_jumps(), r.gp.map(|g| g.value().to_bits()));
    assert_eq!(whole.iter().map(key).collect::<Vec<_>>(), parts.iter().map(key).collect::<Vec<_>>());
}

#[test]
fn ensemble_tracks_master_equation() {
    let n = 2000;
    let p = reference(5e-3, 1e-3);
    let psi = excited_state(&p);
    let (steps, _) = p.time_grid(p.period()).unwrap();
    let opts = RunOptions { snapshot_steps: vec![steps / 2, steps], ..Default::default() };
    let records = run_ensemble(&p, p.period(), &psi, 0..n, &opts).unwrap();
    let lind = integrate_with(&DensityMatrix::pure(&psi), &p, p.period(), steps / 2).unwrap();
    let bound = 3.0 / (n as f64).sqrt();
    for k in 0..2 {
        let d = trace_distance(&ensemble_density(&records, k), lind.states[k + 1].matrix());
        assert!(d < bound, "snapshot {k}: {d} >= {bound}");
    }
    let mean = records.iter().map(|r| r.n_jumps() as f64).sum::<f64>() / n as f64;
    let se = (lind.expected_jumps / n as f64).sqrt();
    assert!((mean - lind.expected_jumps).abs() < 4.0 * se, "{mean} vs {}", lind.expected_jumps);
}

#[test]
fn slow_unitary_driving_gives_berry_phase() {
    let p = ModelParams::unitary(0.34 * PI, 1e-4);
    let gp = run_no_jump(&p, p.period(), &excited_state(&p)).unwrap().gp.unwrap();
    let berry = -PI * (1.0 - p.theta.cos());
    assert!((gp.value() - berry).abs() < 5e-3, "{} vs {berry}", gp.value());
}

#[test]
fn echo_plateau_beyond_transition() {
    // Strong decay pins the jump-free echo at persistence 1/2.
    let v = echo_no_jump(&reference(2e-3, 0.0306)).unwrap().varphi;
    assert!((v - 1.375 * PI).abs() < 0.00125 * PI, "{}", v / PI);
}

#[test]
fn echo_histogram_lives_on_display_branch() {
    let p = reference(5e-3, 1e-3);
    let mut h = CircularHistogram::echo(200);
    for o in run_echo_ensemble(&p, 0..200).unwrap() {
        assert!((1.25 * PI..=1.5 * PI).contains(&o.varphi));
        h.accumulate_value(o.varphi);
    }
    assert_eq!(h.n_binned(), 200);
    assert!((h.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn singular_point_near_reference_value() {
    let s = locate_singularity(0.34 * PI, (4.79e-3, 4.826e-3), (0.0303, 0.0309)).unwrap();
    assert!((s.omega_ratio / 4.8082e-3 - 1.0).abs() < 5e-4);
    assert!((s.gamma_ratio / 0.0306 - 1.0).abs() < 5e-4);
    assert!(s.survival < 1e-6);
}

#[test]
fn adiabatic_sector_winds_once_backwards() {
    assert_eq!(winding_number(&reference(1e-3, 1e-4)).unwrap(), -1);
}
