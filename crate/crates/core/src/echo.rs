//! The monitored spin-echo protocol: prepare (ψ₊ + ψ₋)/√2, run one cycle,
//! exchange the instantaneous eigenstates, run the cycle backwards and
//! measure the return probability.

use std::f64::consts::PI;
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{eigensystem, Channel};
use crate::trajectory::{
    advance, gridded, script_steps, trajectory_rng, Clock, Monitor, RunOptions, Segment, TrajectoryRecord, Walker,
    CHUNK,
};
use crate::types::{C64, ModelParams, PureState};

/// Lower edge of the display branch for the echo parameter.
pub const BRANCH_LO: f64 = 1.25 * PI;
/// Upper edge of the display branch for the echo parameter.
pub const BRANCH_HI: f64 = 1.5 * PI;

#[derive(Debug, Clone)]
pub struct EchoOutcome {
    /// |⟨ψ(0)|ψ(2T)⟩|².
    pub persistence: f64,
    /// Fringe parameter on the display branch [1.25π, 1.5π].
    pub varphi: f64,
    /// Record over [0, 2T].
    pub record: TrajectoryRecord,
}

/// The echo parameter φ with cos²(2φ) = `persistence`, on [1.25π, 1.5π].
///
/// φ is only defined modulo π/2 and up to a sign; this branch puts
/// persistence 0 at 1.25π, 1/2 at 1.375π and 1 at 1.5π. Inputs are clamped
/// to [0, 1] to absorb rounding.
pub fn varphi_from_persistence(persistence: f64) -> f64 {
    let p = persistence.clamp(0.0, 1.0);
    PI + 0.5 * (-p.sqrt()).acos()
}

/// (ψ₊(0) + ψ₋(0))/√2.
pub fn echo_initial_state(p: &ModelParams) -> PureState {
    let e = eigensystem(p, 0.0, None);
    PureState::from_spinor_unchecked((e.plus() + e.minus()) * C64::from(std::f64::consts::FRAC_1_SQRT_2))
}

fn protocol<R: Rng>(p: &ModelParams, walkers: &mut [Walker<R>], opts: &RunOptions) -> Result<ModelParams> {
    let period = p.period();
    let (pe, n) = gridded(p, period)?;
    advance(walkers, &pe, Segment { t0: 0.0, n_steps: n, clock: Clock::Forward }, opts)?;
    let flip = eigensystem(&pe, period, None).flip_operator();
    for w in walkers.iter_mut() {
        w.apply(&flip);
    }
    advance(walkers, &pe, Segment { t0: period, n_steps: n, clock: Clock::Mirrored(2.0 * period) }, opts)?;
    Ok(pe)
}

fn outcome(record: TrajectoryRecord) -> EchoOutcome {
    let persistence = record.return_probability();
    EchoOutcome { persistence, varphi: varphi_from_persistence(persistence), record }
}

/// One stochastic realization of the protocol.
pub fn run_echo<R: Rng>(p: &ModelParams, rng: &mut R) -> Result<EchoOutcome> {
    let opts = RunOptions::default();
    let mut walkers = [Walker::new(&echo_initial_state(p), Monitor::Random(rng), &opts)];
    let pe = protocol(p, &mut walkers, &opts)?;
    let [w] = walkers;
    Ok(outcome(w.into_record(&pe, pe.dt, None)))
}

/// Realizations `streams` under `p.seed`.
pub fn run_echo_ensemble(p: &ModelParams, streams: Range<u64>) -> Result<Vec<EchoOutcome>> {
    let opts = RunOptions::default();
    let psi0 = echo_initial_state(p);
    let ids: Vec<u64> = streams.collect();
    let mut out = Vec::with_capacity(ids.len());
    for block in ids.chunks(CHUNK) {
        let mut walkers: Vec<_> = block
            .iter()
            .map(|&s| Walker::new(&psi0, Monitor::Random(trajectory_rng(p.seed, s)), &opts))
            .collect();
        let pe = protocol(p, &mut walkers, &opts)?;
        out.extend(walkers.into_iter().zip(block).map(|(w, &s)| outcome(w.into_record(&pe, pe.dt, Some(s)))));
    }
    Ok(out)
}

/// The protocol with jumps exactly at the given times in [0, 2T) and none
/// elsewhere.
pub fn run_echo_scripted(p: &ModelParams, jumps: &[(f64, Channel)]) -> Result<EchoOutcome> {
    let opts = RunOptions::default();
    let (pe, n) = gridded(p, p.period())?;
    let script = script_steps(jumps, pe.dt, 2 * n);
    let mut walkers = [Walker::<ChaCha8Rng>::new(&echo_initial_state(p), Monitor::Scripted(script), &opts)];
    let pe = protocol(p, &mut walkers, &opts)?;
    let [w] = walkers;
    Ok(outcome(w.into_record(&pe, pe.dt, None)))
}

/// The jump-free protocol.
pub fn echo_no_jump(p: &ModelParams) -> Result<EchoOutcome> {
    run_echo_scripted(p, &[])
}
