//! Shared numerical vocabulary: spinors, 2×2 operators, model parameters and
//! circular phases.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = num_complex::Complex64;

/// A 2×2 complex operator (Hamiltonian, Lindblad or Kraus step operator).
pub type Matrix2c = Matrix2<C64>;

/// Raw amplitude pair in the σ_z basis {|0⟩, |1⟩}.
pub type Spinor = Vector2<C64>;

/// Overlaps at or below this magnitude (relative to the state norms) have no
/// meaningful argument.
pub const EPS_OVERLAP: f64 = 1e-12;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn identity() -> Matrix2c {
    Matrix2c::new(ONE, ZERO, ZERO, ONE)
}

pub fn sigma_x() -> Matrix2c {
    Matrix2c::new(ZERO, ONE, ONE, ZERO)
}

pub fn sigma_y() -> Matrix2c {
    Matrix2c::new(ZERO, -I, I, ZERO)
}

pub fn sigma_z() -> Matrix2c {
    Matrix2c::new(ONE, ZERO, ZERO, -ONE)
}

/// `|a⟩⟨b|`
pub fn outer(a: &Spinor, b: &Spinor) -> Matrix2c {
    a * b.adjoint()
}

/// `⟨a|b⟩`
#[inline]
pub fn inner(a: &Spinor, b: &Spinor) -> C64 {
    a[0].conj() * b[0] + a[1].conj() * b[1]
}

/// `⟨a|M|b⟩`
pub fn matrix_element(a: &Spinor, m: &Matrix2c, b: &Spinor) -> C64 {
    inner(a, &(m * b))
}

/// Largest absolute entry; cheap stand-in for an operator norm in checks.
pub fn max_abs(m: &Matrix2c) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Frobenius norm of a 2×2 matrix.
pub fn frobenius(m: &Matrix2c) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// A (possibly non-normalized) pure state of the two-level system.
///
/// The zero vector is rejected; any other finite amplitude pair is legal.
#[derive(Clone, Copy, PartialEq)]
pub struct PureState(Spinor);

impl PureState {
    pub fn new(a0: C64, a1: C64) -> Result<Self> {
        Self::from_spinor(Spinor::new(a0, a1))
    }

    pub fn from_spinor(v: Spinor) -> Result<Self> {
        if !v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("state amplitude"));
        }
        let n = v.norm_squared();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroState);
        }
        Ok(PureState(v))
    }

    /// Skips validation; callers must uphold the invariant.
    pub(crate) fn from_spinor_unchecked(v: Spinor) -> Self {
        debug_assert!(v.norm_squared() > 0.0);
        PureState(v)
    }

    pub fn basis0() -> Self {
        PureState(Spinor::new(ONE, ZERO))
    }

    pub fn basis1() -> Self {
        PureState(Spinor::new(ZERO, ONE))
    }

    pub fn spinor(&self) -> &Spinor {
        &self.0
    }

    pub fn amplitudes(&self) -> [C64; 2] {
        [self.0[0], self.0[1]]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn normalized(&self) -> Self {
        PureState(self.0 / C64::from(self.norm_sqr().sqrt()))
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &PureState) -> C64 {
        inner(&self.0, &other.0)
    }

    pub fn apply(&self, m: &Matrix2c) -> Result<Self> {
        Self::from_spinor(m * self.0)
    }

    pub fn scaled(&self, factor: C64) -> Result<Self> {
        Self::from_spinor(self.0 * factor)
    }

    /// `|self⟩⟨self|` for the normalized state.
    pub fn projector(&self) -> Matrix2c {
        let v = self.normalized().0;
        outer(&v, &v)
    }

    /// `|⟨self|other⟩|²` for the normalized states.
    pub fn fidelity(&self, other: &PureState) -> f64 {
        self.inner(other).norm_sqr() / (self.norm_sqr() * other.norm_sqr())
    }
}

impl fmt::Debug for PureState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PureState({}, {})", self.0[0], self.0[1])
    }
}

/// A circular quantity, stored wrapped to (−π, π].
#[derive(Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Phase(f64);

impl Phase {
    pub const ZERO: Phase = Phase(0.0);

    /// Wraps a finite value; non-finite input is a programming error here.
    pub(crate) fn from_finite(x: f64) -> Self {
        debug_assert!(x.is_finite());
        Phase(wrap_raw(x))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The representative of this phase in `[lo, lo + 2π)`.
    pub fn on_branch(self, lo: f64) -> f64 {
        lo + (self.0 - lo).rem_euclid(2.0 * PI)
    }

    /// Signed distance to `other` along the circle, in (−π, π].
    pub fn distance_to(self, other: Phase) -> f64 {
        wrap_raw(other.0 - self.0)
    }

    pub fn phasor(self) -> C64 {
        C64::from_polar(1.0, self.0)
    }
}

impl fmt::Debug for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Phase({:.6}π)", self.0 / PI)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[inline]
pub(crate) fn wrap_raw(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Wraps `x` to (−π, π].
pub fn wrap_phase(x: f64) -> Result<Phase> {
    if !x.is_finite() {
        return Err(Error::NonFinite("phase"));
    }
    Ok(Phase(wrap_raw(x)))
}

/// `arg⟨a|b⟩`, rejecting overlaps too small to carry a phase.
pub fn arg_overlap(a: &PureState, b: &PureState) -> Result<Phase> {
    arg_of_overlap(a.inner(b), a.norm_sqr() * b.norm_sqr(), None)
}

/// Argument of an overlap `z` between states whose squared norms multiply to
/// `norm_product`.
pub(crate) fn arg_of_overlap(z: C64, norm_product: f64, index: Option<usize>) -> Result<Phase> {
    let magnitude = z.norm() / norm_product.sqrt();
    if !(magnitude > EPS_OVERLAP) {
        return Err(Error::SingularOverlap { magnitude, index });
    }
    Ok(Phase(z.arg()))
}

/// Physical rates and angles defining one simulation, in units of the field
/// amplitude ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    /// Field amplitude ω.
    pub omega: f64,
    /// Azimuthal driving frequency Ω.
    pub drive_freq: f64,
    /// Polar angle of the field, in [0, π].
    pub theta: f64,
    /// Dissipation scale Γ.
    pub gamma: f64,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    pub gamma_d: f64,
    pub gamma_z: f64,
    /// Homodyne displacement λ (a rate); 0 means direct detection.
    pub lambda_disp: f64,
    /// Whether the displacement is also applied to the σ_z channel.
    pub displace_z: bool,
    /// Requested (maximum) time step.
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
}

/// Ratio γ_d / Γ used throughout the reference setup.
pub const DEPHASING_RATIO: f64 = 0.32;

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams::reference(0.34 * PI, 5e-3, 1e-3, 0.0)
    }
}

impl ModelParams {
    /// The reference environment: γ₋ = Γ, γ_d = 0.32 Γ, γ₊ = 0 and
    /// γ_z = `gz_ratio`·Γ, with ω = 1.
    pub fn reference(theta: f64, drive_freq: f64, gamma: f64, gz_ratio: f64) -> Self {
        ModelParams {
            omega: 1.0,
            drive_freq,
            theta,
            gamma,
            gamma_minus: gamma,
            gamma_plus: 0.0,
            gamma_d: DEPHASING_RATIO * gamma,
            gamma_z: gz_ratio * gamma,
            lambda_disp: 0.0,
            displace_z: true,
            dt: default_dt(1.0),
            n_traj: 10_000,
            seed: 0,
        }
    }

    /// Closed system (all rates zero).
    pub fn unitary(theta: f64, drive_freq: f64) -> Self {
        ModelParams::reference(theta, drive_freq, 0.0, 0.0)
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_drive(mut self, drive_freq: f64) -> Self {
        self.drive_freq = drive_freq;
        self
    }

    /// Rescales every rate so that γ₋ = Γ keeps the reference ratios.
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        let scale = if self.gamma > 0.0 { gamma / self.gamma } else { f64::NAN };
        if scale.is_finite() {
            self.gamma_minus *= scale;
            self.gamma_plus *= scale;
            self.gamma_d *= scale;
            self.gamma_z *= scale;
        } else {
            self.gamma_minus = gamma;
            self.gamma_d = DEPHASING_RATIO * gamma;
        }
        self.gamma = gamma;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda_disp = lambda;
        self
    }

    /// Period T = 2π/Ω of one driving cycle.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.drive_freq
    }

    /// Effective dissipation entering the drift generator, γ₋ − γ₊.
    pub fn drift_gamma(&self) -> f64 {
        self.gamma_minus - self.gamma_plus
    }

    /// Upper bound on the total jump rate Σ_α ⟨L_α†L_α⟩ over all states and
    /// times (including the displacement terms).
    pub fn max_jump_rate(&self) -> f64 {
        let mut total = 0.0;
        let lam = self.lambda_disp.max(0.0);
        for (rate, displaced) in self.channel_rates() {
            if rate > 0.0 {
                let amp = rate.sqrt() + if displaced { lam.sqrt() } else { 0.0 };
                total += amp * amp;
            }
        }
        total
    }

    fn channel_rates(&self) -> [(f64, bool); 4] {
        [
            (self.gamma_minus, true),
            (self.gamma_plus, true),
            (self.gamma_d, true),
            (self.gamma_z, self.displace_z),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_static()?;
        if self.drive_freq <= 0.0 {
            return Err(Error::InvalidParams("drive_freq must be > 0".into()));
        }
        Ok(())
    }

    /// As [`validate`](Self::validate) but also admits a static field, Ω = 0.
    pub fn validate_static(&self) -> Result<()> {
        let fields = [
            ("omega", self.omega),
            ("drive_freq", self.drive_freq),
            ("theta", self.theta),
            ("gamma", self.gamma),
            ("gamma_minus", self.gamma_minus),
            ("gamma_plus", self.gamma_plus),
            ("gamma_d", self.gamma_d),
            ("gamma_z", self.gamma_z),
            ("lambda_disp", self.lambda_disp),
            ("dt", self.dt),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} is not finite")));
            }
        }
        let bad = |msg: &str| Err(Error::InvalidParams(msg.to_string()));
        if self.omega <= 0.0 {
            return bad("omega must be > 0");
        }
        if self.drive_freq < 0.0 {
            return bad("drive_freq must be >= 0");
        }
        if self.dt <= 0.0 {
            return bad("dt must be > 0");
        }
        if !(0.0..=PI).contains(&self.theta) {
            return bad("theta must lie in [0, pi]");
        }
        if [self.gamma, self.gamma_minus, self.gamma_plus, self.gamma_d, self.gamma_z, self.lambda_disp]
            .iter()
            .any(|&r| r < 0.0)
        {
            return bad("rates must be >= 0");
        }
        if self.dt * self.max_jump_rate() > 1e-2 {
            return Err(Error::InvalidParams(format!(
                "dt * max jump rate = {:e} exceeds 1e-2",
                self.dt * self.max_jump_rate()
            )));
        }
        Ok(())
    }

    /// Number of steps and the effective step for a run of length
    /// `duration`: the smallest step count whose step does not exceed `dt`.
    pub fn time_grid(&self, duration: f64) -> Result<(usize, f64)> {
        if !(duration >= 0.0) || !duration.is_finite() {
            return Err(Error::InvalidParams(format!("bad duration {duration}")));
        }
        if duration == 0.0 {
            return Ok((0, self.dt));
        }
        let n = (duration / self.dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Ok((n, duration / n as f64))
    }
}

/// Default step 10⁻³·(2π/ω).
pub fn default_dt(omega: f64) -> f64 {
    1e-3 * 2.0 * PI / omega
}
