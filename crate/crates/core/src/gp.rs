//! Geometric phases of state sequences: the streaming trajectory phase, the
//! discrete Pancharatnam phase, the no-jump phase and the interferometric
//! mixed-state phase.

use crate::error::{Error, Result};
use crate::lindblad::DensityMatrix;
use crate::trajectory::{excited_state, run_no_jump};
use crate::types::{arg_of_overlap, inner, C64, ModelParams, Phase, PureState, Spinor, EPS_OVERLAP};

/// Renormalize the smooth-step phasor this often to keep it on the unit
/// circle.
const RENORM_EVERY: u32 = 64;

/// Running phase bookkeeping of one trajectory.
///
/// Instead of summing angles the accumulator keeps unit phasors of the two
/// running sums, −Σ arg⟨ψ_k|ψ_{k+1}⟩ over smooth steps and
/// −Σ arg⟨ψ|K_α|ψ⟩ over jumps. Only the sums modulo 2π are needed.
#[derive(Debug, Clone, Copy)]
pub struct GpAccumulator {
    initial: PureState,
    smooth: C64,
    jump: C64,
    pending: u32,
}

impl GpAccumulator {
    pub fn new(initial: PureState) -> Self {
        GpAccumulator { initial, smooth: C64::new(1.0, 0.0), jump: C64::new(1.0, 0.0), pending: 0 }
    }

    pub fn initial_state(&self) -> &PureState {
        &self.initial
    }

    /// Adds a smooth step with overlap ⟨ψ_k|ψ_{k+1}⟩.
    #[inline]
    pub fn smooth_step(&mut self, overlap: C64) {
        self.smooth *= overlap.conj();
        self.pending += 1;
        if self.pending >= RENORM_EVERY {
            self.smooth /= self.smooth.norm();
            self.pending = 0;
        }
    }

    /// Adds a jump with overlap ⟨ψ|K_α|ψ⟩ (nonzero).
    pub fn jump(&mut self, overlap: C64) {
        self.jump *= overlap.conj() / overlap.norm();
    }

    /// −Σ arg⟨ψ_k|ψ_{k+1}⟩ over the smooth steps, wrapped.
    pub fn pancharatnam_sum(&self) -> f64 {
        self.smooth.arg()
    }

    /// −Σ arg⟨ψ(t_i)|K_{α_i}|ψ(t_i)⟩ over the jumps, wrapped.
    pub fn jump_phase_sum(&self) -> f64 {
        self.jump.arg()
    }

    /// Geometric phase of the trajectory ending in `final_state`.
    pub fn finish(&self, final_state: &PureState) -> Result<Phase> {
        gp_trajectory(self, final_state)
    }
}

/// arg⟨ψ(0)|ψ(T)⟩ plus the accumulated smooth and jump sums, wrapped.
pub fn gp_trajectory(acc: &GpAccumulator, final_state: &PureState) -> Result<Phase> {
    let z = acc.initial.inner(final_state);
    arg_of_overlap(z, acc.initial.norm_sqr() * final_state.norm_sqr(), None)?;
    let total = z / z.norm() * (acc.smooth / acc.smooth.norm()) * acc.jump;
    Ok(Phase::from_finite(total.arg()))
}

/// Discrete Pancharatnam phase arg⟨ψ₁|ψ_N⟩ − Σ arg⟨ψ_k|ψ_{k+1}⟩.
///
/// Gauge invariant and insensitive to the norms of the states. A vanishing
/// consecutive overlap is reported with the index `k` of the pair
/// (ψ_k, ψ_{k+1}); a vanishing closing overlap has no index.
pub fn gp_pancharatnam(states: &[PureState]) -> Result<Phase> {
    let Some((first, rest)) = states.split_first() else {
        return Err(Error::EmptyDistribution);
    };
    let Some(last) = rest.last() else {
        return Ok(Phase::ZERO);
    };
    let mut total = arg_of_overlap(first.inner(last), first.norm_sqr() * last.norm_sqr(), None)?.value();
    for (k, w) in states.windows(2).enumerate() {
        let z = w[0].inner(&w[1]);
        total -= arg_of_overlap(z, w[0].norm_sqr() * w[1].norm_sqr(), Some(k))?.value();
    }
    Ok(Phase::from_finite(total))
}

/// Geometric phase of the jump-free evolution of ψ₊(0) over `duration`.
pub fn gp_no_jump(p: &ModelParams, duration: f64) -> Result<Phase> {
    let rec = run_no_jump(p, duration, &excited_state(p))?;
    rec.accumulator.finish(&rec.final_state)
}

/// Geometric phase of a non-degenerate density-matrix path.
///
/// Each ρ is decomposed into its two eigenbranches λ_m, ξ_m; the phase is
/// arg Σ_m √(λ_m(0)λ_m(T)) ⟨ξ_m(0)|ξ_m(T)⟩ Π_k e^{−i arg⟨ξ_m(k)|ξ_m(k+1)⟩}.
pub fn gp_mixed(rho_path: &[DensityMatrix]) -> Result<Phase> {
    if rho_path.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mut branches: Vec<[(f64, Spinor); 2]> = Vec::with_capacity(rho_path.len());
    for (i, rho) in rho_path.iter().enumerate() {
        let (lam, vecs) = rho.eigen();
        let gap = lam[0] - lam[1];
        if !(gap > 1e-8) {
            return Err(Error::DegenerateSpectrum { gap, index: i });
        }
        let mut pair = [(lam[0], vecs[0]), (lam[1], vecs[1])];
        if let Some(prev) = branches.last() {
            for m in 0..2 {
                let z = inner(&prev[m].1, &pair[m].1);
                if z.norm() > 0.0 {
                    pair[m].1 *= z.conj() / z.norm();
                }
            }
        }
        branches.push(pair);
    }
    let first = branches[0];
    let last = branches[branches.len() - 1];
    let mut sum = C64::new(0.0, 0.0);
    for m in 0..2 {
        let mut transport = C64::new(1.0, 0.0);
        for w in branches.windows(2) {
            let z = inner(&w[0][m].1, &w[1][m].1);
            if z.norm() <= EPS_OVERLAP {
                return Err(Error::SingularOverlap { magnitude: z.norm(), index: None });
            }
            transport *= z.conj() / z.norm();
        }
        sum += (first[m].0 * last[m].0).max(0.0).sqrt() * inner(&first[m].1, &last[m].1) * transport;
    }
    arg_of_overlap(sum, 1.0, None)
}
