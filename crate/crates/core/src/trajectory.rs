//! Monitored evolution: stochastic jump/no-jump stepping, event records and
//! ensembles run in lockstep.
//!
//! All walkers of an ensemble share the step operators of a given time step,
//! so the operators are built once per step and applied to every walker.
//! Randomness is keyed by `(seed, stream)`, one stream per trajectory, so any
//! trajectory can be re-run alone and results do not depend on how an
//! ensemble is split across workers.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpAccumulator;
use crate::model::{eigensystem, kraus_at_midpoint, no_jump_parts_at_midpoint, Channel, KrausOps};
use crate::types::{inner, Matrix2c, ModelParams, Phase, PureState, Spinor, C64, EPS_OVERLAP};

/// Largest tolerated deviation of p_o + Σ p_α from 1 in a single step.
pub const STEP_TOLERANCE: f64 = 1e-4;

/// Trajectories advanced together in one lockstep block.
pub const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub channel: Channel,
    pub time: f64,
}

/// Why a trajectory has no well-defined geometric phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    /// A jump mapped the state onto an orthogonal one, so its phase term is
    /// undefined.
    SingularJump,
    /// The final state is orthogonal to the initial one.
    OrthogonalEndpoints,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub events: Vec<JumpEvent>,
    pub initial_state: PureState,
    /// Normalized final state.
    pub final_state: PureState,
    pub gp: Option<Phase>,
    pub exclusion: Option<Exclusion>,
    /// ⟨ψ(0)|ψ(T)⟩ for the normalized endpoints.
    pub endpoint_overlap: C64,
    pub n_steps: usize,
    /// Effective step after snapping the duration onto the grid.
    pub dt: f64,
    pub seed: u64,
    pub stream: Option<u64>,
    /// ln Π (1 − Σ p_α) over the no-jump steps: the probability the sampler
    /// assigns to staying jump-free on those steps.
    pub log_no_jump_prob: f64,
    /// ln Π p_o over the no-jump steps; for a jump-free run this is
    /// ln⟨ψ̃(T)|ψ̃(T)⟩ of the non-normalized state. With the first-order step
    /// it exceeds `log_no_jump_prob` by O(δt) per unit time.
    pub log_norm: f64,
    pub accumulator: GpAccumulator,
    /// Normalized states at the requested snapshot steps.
    pub snapshots: Vec<PureState>,
    /// Every normalized state, initial included, when requested.
    pub history: Option<Vec<PureState>>,
}

impl TrajectoryRecord {
    pub fn n_jumps(&self) -> usize {
        self.events.len()
    }

    pub fn no_jump_probability(&self) -> f64 {
        self.log_no_jump_prob.exp()
    }

    /// |⟨ψ(0)|ψ(T)⟩|² for the normalized endpoints.
    pub fn return_probability(&self) -> f64 {
        self.endpoint_overlap.norm_sqr()
    }

    /// ⟨ψ̃(T)|ψ̃(T)⟩ = Π p_o.
    pub fn norm_sqr(&self) -> f64 {
        self.log_norm.exp()
    }

    /// ⟨ψ(0)|ψ̃(T)⟩ for the non-normalized no-jump state.
    pub fn no_jump_amplitude(&self) -> C64 {
        self.endpoint_overlap * (0.5 * self.log_norm).exp()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep every intermediate state (memory grows with the step count).
    pub history: bool,
    /// Step counts after which the state is recorded; 0 is the initial state.
    pub snapshot_steps: Vec<usize>,
}

/// The RNG of trajectory `stream` under `seed`.
pub fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Maps the lab time of a step midpoint to the time at which the operators
/// are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Clock {
    Forward,
    /// Operators at `mirror − t`: the field retraces its path backwards.
    Mirrored(f64),
}

impl Clock {
    fn op_time(self, t: f64) -> f64 {
        match self {
            Clock::Forward => t,
            Clock::Mirrored(m) => m - t,
        }
    }
}

/// A stretch of evolution on a uniform grid.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Segment {
    pub t0: f64,
    pub n_steps: usize,
    pub clock: Clock,
}

/// Step operators for one step plus the jump metrics K_α†K_α.
pub(crate) struct StepKernel {
    k_o: Matrix2c,
    jumps: Vec<(Channel, Matrix2c, Matrix2c)>,
    gram_sum: Matrix2c,
}

impl StepKernel {
    fn new(ops: KrausOps) -> Self {
        let mut gram_sum = Matrix2c::zeros();
        let jumps = ops
            .jumps
            .into_iter()
            .map(|(ch, k)| {
                let g = k.adjoint() * k;
                gram_sum += g;
                (ch, k, g)
            })
            .collect();
        StepKernel { k_o: ops.k_o, jumps, gram_sum }
    }

    fn jump_op(&self, ch: Channel) -> Option<&Matrix2c> {
        self.jumps.iter().find(|(c, _, _)| *c == ch).map(|(_, k, _)| k)
    }
}

/// ψ†Gψ for Hermitian G.
#[inline]
fn quad(g: &Matrix2c, v: &Spinor) -> f64 {
    g[(0, 0)].re * v[0].norm_sqr() + g[(1, 1)].re * v[1].norm_sqr() + 2.0 * (v[0].conj() * g[(0, 1)] * v[1]).re
}

#[inline]
fn matvec(m: &Matrix2c, v: &Spinor) -> Spinor {
    Spinor::new(m[(0, 0)] * v[0] + m[(0, 1)] * v[1], m[(1, 0)] * v[0] + m[(1, 1)] * v[1])
}

/// A running product of factors near 1, folded into a logarithm every few
/// factors so that neither the product nor a per-step `ln` is needed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogProduct {
    log: f64,
    prod: f64,
    pending: u32,
}

impl Default for LogProduct {
    fn default() -> Self {
        LogProduct { log: 0.0, prod: 1.0, pending: 0 }
    }
}

impl LogProduct {
    #[inline]
    fn mul(&mut self, x: f64) {
        self.prod *= x;
        self.pending += 1;
        if self.pending == 64 {
            self.log += self.prod.ln();
            self.prod = 1.0;
            self.pending = 0;
        }
    }

    fn ln(&self) -> f64 {
        self.log + self.prod.ln()
    }
}

#[inline]
fn scale(v: Spinor, s: f64) -> Spinor {
    Spinor::new(v[0] * s, v[1] * s)
}

/// How a walker chooses between jump and no-jump at each step.
#[derive(Debug, Clone)]
pub(crate) enum Monitor<R> {
    Random(R),
    /// Jumps only at the listed global step indices, never otherwise.
    Scripted(Vec<(usize, Channel)>),
    NoJump,
}

pub(crate) struct Walker<R> {
    pub psi: Spinor,
    pub initial: PureState,
    pub acc: GpAccumulator,
    pub events: Vec<JumpEvent>,
    pub monitor: Monitor<R>,
    pub singular_jump: bool,
    pub log_norm: LogProduct,
    pub log_survival: LogProduct,
    pub steps_done: usize,
    pub snapshots: Vec<PureState>,
    pub history: Option<Vec<PureState>>,
}

impl<R: Rng> Walker<R> {
    pub fn new(initial: &PureState, monitor: Monitor<R>, opts: &RunOptions) -> Self {
        let init = initial.normalized();
        let mut w = Walker {
            psi: *init.spinor(),
            initial: init,
            acc: GpAccumulator::new(init),
            events: Vec::new(),
            monitor,
            singular_jump: false,
            log_norm: LogProduct::default(),
            log_survival: LogProduct::default(),
            steps_done: 0,
            snapshots: Vec::new(),
            history: opts.history.then(|| vec![init]),
        };
        w.record(opts);
        w
    }

    fn state(&self) -> PureState {
        PureState::from_spinor_unchecked(self.psi)
    }

    fn record(&mut self, opts: &RunOptions) {
        if opts.snapshot_steps.contains(&self.steps_done) {
            self.snapshots.push(self.state());
        }
    }

    fn after_step(&mut self, opts: &RunOptions) {
        self.steps_done += 1;
        if let Some(h) = self.history.as_mut() {
            h.push(PureState::from_spinor_unchecked(self.psi));
        }
        if !opts.snapshot_steps.is_empty() {
            self.record(opts);
        }
    }

    fn smooth(&mut self, next: Spinor, p_o: f64, p_jump: f64) {
        self.acc.smooth_step(inner(&self.psi, &next));
        self.psi = scale(next, p_o.sqrt().recip());
        self.log_norm.mul(p_o);
        self.log_survival.mul(1.0 - p_jump);
    }

    fn jump(&mut self, ch: Channel, k: &Matrix2c, time: f64) {
        let out = k * self.psi;
        let n = out.norm();
        let z = inner(&self.psi, &out);
        if z.norm() <= EPS_OVERLAP * n {
            self.singular_jump = true;
        } else {
            self.acc.jump(z);
        }
        self.psi = scale(out, n.recip());
        self.events.push(JumpEvent { channel: ch, time });
    }

    fn step(&mut self, kernel: &StepKernel, t: f64, t_event: f64) -> Result<()> {
        let next = matvec(&kernel.k_o, &self.psi);
        let p_o = next.norm_squared();
        let p_jump = quad(&kernel.gram_sum, &self.psi);
        let jump = match &mut self.monitor {
            Monitor::NoJump => None,
            Monitor::Scripted(script) => {
                let step = self.steps_done;
                match script.iter().find(|(k, _)| *k == step) {
                    Some(&(_, ch)) => Some(kernel.jump_op(ch).map(|k| (ch, k)).ok_or_else(|| {
                        Error::InvalidParams(format!("scripted jump on absent channel {ch}"))
                    })?),
                    None => None,
                }
            }
            Monitor::Random(rng) => {
                let total = p_o + p_jump;
                if (total - 1.0).abs() > STEP_TOLERANCE || !total.is_finite() {
                    return Err(Error::StepTooCoarse { total, time: t });
                }
                let u: f64 = rng.random();
                if u < p_jump {
                    let mut acc = 0.0;
                    let mut chosen = kernel.jumps.len() - 1;
                    for (i, (_, _, g)) in kernel.jumps.iter().enumerate() {
                        acc += quad(g, &self.psi);
                        if u < acc {
                            chosen = i;
                            break;
                        }
                    }
                    let (ch, k, _) = &kernel.jumps[chosen];
                    Some((*ch, k))
                } else {
                    None
                }
            }
        };
        match jump {
            Some((ch, k)) => self.jump(ch, k, t_event),
            None => self.smooth(next, p_o, p_jump),
        }
        Ok(())
    }

    /// Applies a unitary that is not part of the monitored evolution.
    pub fn apply(&mut self, u: &Matrix2c) {
        let v = u * self.psi;
        self.psi = scale(v, v.norm().recip());
    }

    pub fn into_record(self, p: &ModelParams, dt: f64, stream: Option<u64>) -> TrajectoryRecord {
        let final_state = self.state();
        let endpoint_overlap = self.initial.inner(&final_state);
        let (gp, exclusion) = if self.singular_jump {
            (None, Some(Exclusion::SingularJump))
        } else {
            match self.acc.finish(&final_state) {
                Ok(phase) => (Some(phase), None),
                Err(_) => (None, Some(Exclusion::OrthogonalEndpoints)),
            }
        };
        TrajectoryRecord {
            events: self.events,
            initial_state: self.initial,
            final_state,
            gp,
            exclusion,
            endpoint_overlap,
            n_steps: self.steps_done,
            dt,
            seed: p.seed,
            stream,
            log_no_jump_prob: self.log_survival.ln(),
            log_norm: self.log_norm.ln(),
            accumulator: self.acc,
            snapshots: self.snapshots,
            history: self.history,
        }
    }
}

/// Advances every walker through `seg`, building the step operators once per
/// step. `p.dt` must already be the effective step.
pub(crate) fn advance<R: Rng>(walkers: &mut [Walker<R>], p: &ModelParams, seg: Segment, opts: &RunOptions) -> Result<()> {
    let dt = p.dt;
    let fast = p.lambda_disp <= 0.0 && walkers.iter().all(|w| matches!(w.monitor, Monitor::NoJump));
    for k in 0..seg.n_steps {
        let t = seg.t0 + k as f64 * dt;
        let tm = t + 0.5 * dt;
        let top = seg.clock.op_time(tm);
        let kernel = if fast {
            let (k_o, gram_sum) = no_jump_parts_at_midpoint(p, top);
            StepKernel { k_o, jumps: Vec::new(), gram_sum }
        } else {
            StepKernel::new(kraus_at_midpoint(p, top))
        };
        for w in walkers.iter_mut() {
            w.step(&kernel, t, tm)?;
            w.after_step(opts);
        }
    }
    Ok(())
}

/// Validates `p` and returns it with the step snapped onto a grid covering
/// `duration`, plus the step count.
pub(crate) fn gridded(p: &ModelParams, duration: f64) -> Result<(ModelParams, usize)> {
    p.validate()?;
    let (n, dt) = p.time_grid(duration)?;
    Ok((p.with_dt(dt), n))
}

/// One stochastic step from `state` at time `t`.
///
/// The state is normalized first. Returns the normalized next state and the
/// jump, if any.
pub fn step<R: Rng>(state: &PureState, p: &ModelParams, t: f64, rng: &mut R) -> Result<(PureState, Option<JumpEvent>)> {
    let kernel = StepKernel::new(kraus_at_midpoint(p, t + 0.5 * p.dt));
    let mut w = Walker::new(state, Monitor::Random(rng), &RunOptions::default());
    w.step(&kernel, t, t + 0.5 * p.dt)?;
    let event = w.events.pop();
    Ok((w.state(), event))
}

/// Applies the jump `channel` at time `t` regardless of its probability.
pub fn step_forced(state: &PureState, p: &ModelParams, t: f64, channel: Channel) -> Result<PureState> {
    let kernel = StepKernel::new(kraus_at_midpoint(p, t + 0.5 * p.dt));
    let k = kernel
        .jump_op(channel)
        .ok_or_else(|| Error::InvalidParams(format!("channel {channel} has zero rate")))?;
    state.normalized().apply(k).map(|s| s.normalized())
}

/// Samples one trajectory over [0, duration].
pub fn run_trajectory<R: Rng>(p: &ModelParams, duration: f64, initial: &PureState, rng: &mut R) -> Result<TrajectoryRecord> {
    run_trajectory_with(p, duration, initial, rng, &RunOptions::default())
}

pub fn run_trajectory_with<R: Rng>(
    p: &ModelParams,
    duration: f64,
    initial: &PureState,
    rng: &mut R,
    opts: &RunOptions,
) -> Result<TrajectoryRecord> {
    let (pe, n) = gridded(p, duration)?;
    let mut walkers = [Walker::new(initial, Monitor::Random(rng), opts)];
    advance(&mut walkers, &pe, Segment { t0: 0.0, n_steps: n, clock: Clock::Forward }, opts)?;
    let [w] = walkers;
    Ok(w.into_record(&pe, pe.dt, None))
}

/// Trajectory with jumps exactly at the given times (rounded to the step
/// containing them) and no-jump evolution otherwise.
pub fn run_scripted(
    p: &ModelParams,
    duration: f64,
    initial: &PureState,
    jumps: &[(f64, Channel)],
    opts: &RunOptions,
) -> Result<TrajectoryRecord> {
    let (pe, n) = gridded(p, duration)?;
    let script = script_steps(jumps, pe.dt, n);
    let mut walkers = [Walker::<ChaCha8Rng>::new(initial, Monitor::Scripted(script), opts)];
    advance(&mut walkers, &pe, Segment { t0: 0.0, n_steps: n, clock: Clock::Forward }, opts)?;
    let [w] = walkers;
    Ok(w.into_record(&pe, pe.dt, None))
}

pub(crate) fn script_steps(jumps: &[(f64, Channel)], dt: f64, n: usize) -> Vec<(usize, Channel)> {
    jumps
        .iter()
        .map(|&(t, ch)| (((t / dt).floor().max(0.0) as usize).min(n.saturating_sub(1)), ch))
        .collect()
}

/// Deterministic jump-free evolution under K_o, tracking ln Π p_o.
pub fn run_no_jump(p: &ModelParams, duration: f64, initial: &PureState) -> Result<TrajectoryRecord> {
    run_no_jump_with(p, duration, initial, &RunOptions::default())
}

pub fn run_no_jump_with(p: &ModelParams, duration: f64, initial: &PureState, opts: &RunOptions) -> Result<TrajectoryRecord> {
    let (pe, n) = gridded(p, duration)?;
    let mut walkers = [Walker::<ChaCha8Rng>::new(initial, Monitor::NoJump, opts)];
    advance(&mut walkers, &pe, Segment { t0: 0.0, n_steps: n, clock: Clock::Forward }, opts)?;
    let [w] = walkers;
    Ok(w.into_record(&pe, pe.dt, None))
}

/// Trajectories `streams` under `p.seed`, each started from `initial`.
pub fn run_ensemble(
    p: &ModelParams,
    duration: f64,
    initial: &PureState,
    streams: Range<u64>,
    opts: &RunOptions,
) -> Result<Vec<TrajectoryRecord>> {
    let (pe, n) = gridded(p, duration)?;
    let ids: Vec<u64> = streams.collect();
    let mut out = Vec::with_capacity(ids.len());
    for block in ids.chunks(CHUNK) {
        let mut walkers: Vec<_> = block
            .iter()
            .map(|&s| Walker::new(initial, Monitor::Random(trajectory_rng(pe.seed, s)), opts))
            .collect();
        advance(&mut walkers, &pe, Segment { t0: 0.0, n_steps: n, clock: Clock::Forward }, opts)?;
        out.extend(walkers.into_iter().zip(block).map(|(w, &s)| w.into_record(&pe, pe.dt, Some(s))));
    }
    Ok(out)
}

/// Ensemble average of |ψ⟩⟨ψ| over the `index`-th snapshot.
pub fn ensemble_density(records: &[TrajectoryRecord], index: usize) -> Matrix2c {
    let mut rho = Matrix2c::zeros();
    for r in records {
        rho += r.snapshots[index].projector();
    }
    rho / C64::from(records.len() as f64)
}

/// Largest step, starting from 10⁻³·2π/ω and halving, for which the first
/// step from `initial` passes the probability guard.
pub fn auto_dt(p: &ModelParams, initial: &PureState) -> Result<f64> {
    let mut dt = crate::types::default_dt(p.omega);
    let psi = initial.normalized();
    for _ in 0..40 {
        let pe = p.with_dt(dt);
        let kernel = StepKernel::new(kraus_at_midpoint(&pe, 0.5 * dt));
        let total = (kernel.k_o * psi.spinor()).norm_squared() + quad(&kernel.gram_sum, psi.spinor());
        if (total - 1.0).abs() <= STEP_TOLERANCE && pe.validate().is_ok() {
            return Ok(dt);
        }
        dt *= 0.5;
    }
    Err(Error::InvalidParams("no admissible time step".into()))
}

/// ψ₊(0) for `p`.
pub fn excited_state(p: &ModelParams) -> PureState {
    eigensystem(p, 0.0, None).state_plus
}
