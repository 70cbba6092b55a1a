//! Topological characterization of the jump-free geometric phase: sweeps of
//! φ₀ over the field inclination θ ∈ [0, π], the integer n = φ₀(π)/2π, the
//! difference Δ(θ) between two parameter points, sector maps over
//! (Ω/ω, Γ/ω), and the 2π winding of φ₀ around an isolated singular point.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::analytic::{no_jump_cycle, no_jump_return_ratio};
use crate::echo::echo_no_jump;
use crate::error::{Error, Result};
use crate::types::{C64, ModelParams, Phase};

/// Cells whose minimum jump-free survival over θ falls below this are
/// treated as lying on a singular line.
pub const SINGULAR_SURVIVAL: f64 = 1e-8;

/// Largest allowed distance of φ₀(π)/2π from an integer.
pub const WINDING_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    /// Phase change per step the step-size control aims for.
    pub target_step: f64,
    /// Steps whose wrapped phase change reaches this are retried at half
    /// the size. Must stay well below π for the unwrapping to be reliable.
    pub jump_threshold: f64,
    /// First step away from each grid point.
    pub initial_step: f64,
    pub max_step: f64,
    /// Smallest step before the sweep is declared to cross a singularity.
    pub min_step: f64,
    /// Integration steps per unit time for each jump-free cycle.
    pub steps_per_time: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            target_step: 0.6,
            jump_threshold: 0.5 * PI,
            initial_step: 1e-9,
            max_step: PI / 64.0,
            min_step: 1e-14,
            steps_per_time: 16.0,
        }
    }
}

/// φ₀(θ) along an ordered θ grid, unwrapped by continuity from its first
/// point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSweep {
    pub thetas: Vec<f64>,
    pub phases: Vec<f64>,
    /// |⟨ψ₊(0)|ψ(T)⟩|² of the normalized jump-free state at each θ.
    pub survival: Vec<f64>,
}

impl ThetaSweep {
    /// round(φ₀(π)/2π), rejecting values far from an integer.
    pub fn winding(&self) -> Result<i32> {
        let x = self.phases.last().copied().unwrap_or(0.0) / (2.0 * PI);
        let n = x.round();
        if (x - n).abs() >= WINDING_TOLERANCE {
            return Err(Error::NonIntegerWinding { value: x });
        }
        Ok(n as i32)
    }

    /// The θ of least survival and that survival.
    pub fn min_survival(&self) -> (f64, f64) {
        self.thetas
            .iter()
            .zip(&self.survival)
            .map(|(&t, &s)| (t, s))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((f64::NAN, f64::NAN))
    }

    /// Unwrapped phase at `theta` by linear interpolation.
    pub fn phase_at(&self, theta: f64) -> f64 {
        let k = self.thetas.partition_point(|&t| t < theta);
        if k == 0 {
            return self.phases[0];
        }
        if k == self.thetas.len() {
            return *self.phases.last().unwrap();
        }
        let (t0, t1) = (self.thetas[k - 1], self.thetas[k]);
        let (p0, p1) = (self.phases[k - 1], self.phases[k]);
        p0 + (p1 - p0) * (theta - t0) / (t1 - t0)
    }
}

/// Marches the jump-free phase across `grid`, unwrapping as it goes.
///
/// Between grid points the step adapts to the observed phase rate: it grows
/// by at most 1.5× per step toward `target_step` of phase change and is
/// halved whenever a step changes the phase by `jump_threshold` or more, or
/// when its midpoint disagrees with its ends.
/// Near the poles the phase varies like ln θ, so steps grow geometrically
/// from `initial_step`.
fn march(p: &ModelParams, grid: &[f64], opts: &SweepOptions) -> Result<ThetaSweep> {
    let sample = |theta: f64| -> Result<(Phase, f64)> {
        let c = no_jump_cycle(&p.with_theta(theta), opts.steps_per_time);
        Ok((c.gp.ok_or(Error::SweepThroughSingularity { theta })?, c.survival))
    };
    let Some(&start) = grid.first() else {
        return Ok(ThetaSweep { thetas: vec![], phases: vec![], survival: vec![] });
    };
    let (mut phase, surv) = sample(start)?;
    let mut sweep = ThetaSweep { thetas: vec![start], phases: vec![phase.value()], survival: vec![surv] };
    let mut unwrapped = phase.value();
    for &end in &grid[1..] {
        let mut theta = *sweep.thetas.last().unwrap();
        let mut h = opts.initial_step.min(end - theta);
        while theta < end {
            let next = if end - theta <= h * (1.0 + 1e-9) { end } else { theta + h };
            let (ph, sv) = sample(next)?;
            let d = phase.distance_to(ph);
            if d.abs() >= opts.jump_threshold {
                h = 0.5 * (next - theta);
                if h < opts.min_step {
                    return Err(Error::SweepThroughSingularity { theta });
                }
                continue;
            }
            // A swing narrower than the step can hide a full turn, so the
            // two half-steps must agree with the whole one.
            let mid = 0.5 * (theta + next);
            let (pm, sm) = sample(mid)?;
            let (d1, d2) = (phase.distance_to(pm), pm.distance_to(ph));
            if d1.abs() >= opts.jump_threshold
                || d2.abs() >= opts.jump_threshold
                || (d1 + d2 - d).abs() > 0.25 * opts.jump_threshold
            {
                h = 0.5 * (next - theta);
                if h < opts.min_step {
                    return Err(Error::SweepThroughSingularity { theta });
                }
                continue;
            }
            for (x, dd, s) in [(mid, d1, sm), (next, d2, sv)] {
                unwrapped += dd;
                sweep.thetas.push(x);
                sweep.phases.push(unwrapped);
                sweep.survival.push(s);
            }
            let step = next - theta;
            let grow = if d.abs() > 0.0 { (opts.target_step / d.abs()).min(1.5) } else { 1.5 };
            h = (step * grow).clamp(opts.min_step, opts.max_step);
            (theta, phase) = (next, ph);
        }
    }
    Ok(sweep)
}

/// Adaptive sweep of the jump-free phase over θ ∈ [0, π] at the driving
/// and rates of `p` (its θ is ignored), anchored at its value at θ = 0.
pub fn theta_sweep(p: &ModelParams, opts: &SweepOptions) -> Result<ThetaSweep> {
    p.validate()?;
    march(p, &[0.0, 0.5 * PI, PI], opts)
}

/// The integer n with φ₀(π) = 2πn.
pub fn winding_number(p: &ModelParams) -> Result<i32> {
    theta_sweep(p, &SweepOptions::default())?.winding()
}

/// Δ(θ) = [φ₀⁽¹⁾(θ) − φ₀⁽²⁾(θ)]/2π on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSweep {
    pub thetas: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Difference of the two unwrapped sweeps over 2π, on the union of their
/// θ points (each sweep interpolated linearly onto the other's points).
pub fn delta_theta(p1: &ModelParams, p2: &ModelParams) -> Result<DeltaSweep> {
    let opts = SweepOptions::default();
    let a = theta_sweep(p1, &opts)?;
    let b = theta_sweep(p2, &opts)?;
    let mut thetas: Vec<f64> = a.thetas.iter().chain(&b.thetas).copied().collect();
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    let delta = thetas.iter().map(|&t| (a.phase_at(t) - b.phase_at(t)) / (2.0 * PI)).collect();
    Ok(DeltaSweep { thetas, delta })
}

/// One cell of a phase-diagram scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorCell {
    pub omega_ratio: f64,
    pub gamma_ratio: f64,
    /// None when the sweep could not be made continuous or does not close
    /// on an integer. Kept for low-survival cells, which `singular` flags.
    pub winding: Option<i32>,
    /// θ of least jump-free survival over the grid.
    pub theta_c: f64,
    pub min_survival: f64,
    pub singular: bool,
}

/// Winding number and nearest critical angle for every (Ω/ω, Γ/ω) pair,
/// Ω-major. `base` supplies the remaining parameters; every sweep passes
/// through the points of `theta_grid`, which must run from 0 to π.
pub fn sector_map(
    base: &ModelParams,
    theta_grid: &[f64],
    omega_grid: &[f64],
    gamma_grid: &[f64],
    singular_survival: f64,
) -> Result<Vec<SectorCell>> {
    let mut cells = Vec::with_capacity(omega_grid.len() * gamma_grid.len());
    for &w in omega_grid {
        for &g in gamma_grid {
            cells.push(sector_cell(base, theta_grid, w, g, singular_survival)?);
        }
    }
    Ok(cells)
}

/// A single cell of [`sector_map`]. The cell is singular when the sweep
/// cannot be made continuous or its least survival falls below
/// `singular_survival` (see [`SINGULAR_SURVIVAL`]).
pub fn sector_cell(
    base: &ModelParams,
    theta_grid: &[f64],
    omega_ratio: f64,
    gamma_ratio: f64,
    singular_survival: f64,
) -> Result<SectorCell> {
    let ends_ok = theta_grid.first() == Some(&0.0) && theta_grid.last() == Some(&PI);
    if theta_grid.len() < 2 || !ends_ok || theta_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParams("theta grid must increase strictly from 0 to pi".into()));
    }
    let p = base.with_drive(omega_ratio).with_gamma(gamma_ratio);
    p.validate()?;
    let singular_cell = |theta_c: f64| SectorCell {
        omega_ratio,
        gamma_ratio,
        winding: None,
        theta_c,
        min_survival: 0.0,
        singular: true,
    };
    let sweep = match march(&p, theta_grid, &SweepOptions::default()) {
        Ok(s) => s,
        Err(Error::SweepThroughSingularity { theta }) => return Ok(singular_cell(theta)),
        Err(e) => return Err(e),
    };
    let (theta_c, min_survival) = sweep.min_survival();
    let singular = min_survival < singular_survival;
    Ok(SectorCell { omega_ratio, gamma_ratio, winding: sweep.winding().ok(), theta_c, min_survival, singular })
}

/// φ₀ sampled around a closed loop in (Ω/ω, Γ/ω).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopWinding {
    pub points: Vec<(f64, f64)>,
    pub phases: Vec<Phase>,
    /// Sum of the wrapped increments around the loop, closing back on the
    /// first point; an integer multiple of 2π.
    pub total: f64,
}

const LOOP_STEPS_PER_TIME: f64 = 32.0;

/// Winds φ₀ once around the singular point `center` at the θ of `p`.
///
/// The loop is the preimage, under the linearization of c̃₊(T)/c̃₋(T) at
/// `center`, of a circle of radius `radius` in the ratio plane, so the
/// points are spread evenly in the phase that winds. The points run
/// counterclockwise in that plane.
pub fn loop_winding(p: &ModelParams, center: (f64, f64), n_points: usize, radius: f64) -> Result<LoopWinding> {
    if n_points < 3 || !(radius > 0.0) {
        return Err(Error::InvalidParams("loop needs at least 3 points and a positive radius".into()));
    }
    let (w0, g0) = center;
    let ratio = |w: f64, g: f64| no_jump_return_ratio(p.theta, w, g);
    let (hw, hg) = (w0 * 1e-7, g0 * 1e-7);
    let dw = (ratio(w0 + hw, g0) - ratio(w0 - hw, g0)) / (2.0 * hw);
    let dg = (ratio(w0, g0 + hg) - ratio(w0, g0 - hg)) / (2.0 * hg);
    let det = dw.re * dg.im - dg.re * dw.im;
    if !(det.abs() > 0.0) {
        return Err(Error::InvalidParams("singular point has a degenerate neighborhood".into()));
    }

    let mut points = Vec::with_capacity(n_points);
    let mut phases = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let z = C64::from_polar(radius, 2.0 * PI * k as f64 / n_points as f64);
        // Solve [Re dw, Re dg; Im dw, Im dg]·(δw, δg) = (Re z, Im z).
        let dx = (z.re * dg.im - dg.re * z.im) / det;
        let dy = (dw.re * z.im - z.re * dw.im) / det;
        let q = p.with_drive(w0 + dx).with_gamma(g0 + dy);
        q.validate()?;
        let cycle = no_jump_cycle(&q, LOOP_STEPS_PER_TIME);
        points.push((w0 + dx, g0 + dy));
        phases.push(cycle.gp.ok_or(Error::SingularOverlap { magnitude: cycle.survival.sqrt(), index: None })?);
    }
    let total = (0..n_points).map(|k| phases[k].distance_to(phases[(k + 1) % n_points])).sum();
    Ok(LoopWinding { points, phases, total })
}

/// Jump-free echo parameter at each parameter point.
pub fn echo_transect(points: &[ModelParams]) -> Result<Vec<f64>> {
    points.iter().map(|p| echo_no_jump(p).map(|o| o.varphi)).collect()
}
