//! Fixed-step RK4 integration of the master equation for the 2×2 density
//! matrix.

use crate::error::{Error, Result};
use crate::model::{eigensystem, hamiltonian, lindblad_ops};
use crate::types::{C64, Matrix2c, ModelParams, PureState, Spinor, I};

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-8;
const POSITIVITY_TOL: f64 = 1e-10;

/// A Hermitian, positive, unit-trace 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(Matrix2c);

impl DensityMatrix {
    pub fn new(m: Matrix2c) -> Result<Self> {
        if !m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("density matrix entry"));
        }
        let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidParams(format!("density matrix not Hermitian ({herm:e})")));
        }
        let rho = DensityMatrix(m);
        if (rho.trace() - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidParams(format!("density matrix trace {}", rho.trace())));
        }
        if rho.eigenvalues()[1] < -POSITIVITY_TOL {
            return Err(Error::InvalidParams("density matrix not positive".into()));
        }
        Ok(rho)
    }

    /// |ψ⟩⟨ψ| for the normalized state.
    pub fn pure(state: &PureState) -> Self {
        DensityMatrix(state.projector())
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(Matrix2c::identity() * C64::from(0.5))
    }

    pub fn matrix(&self) -> &Matrix2c {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        (self.0[(0, 0)] + self.0[(1, 1)]).re
    }

    /// Bloch vector r with ρ = (𝟙 + r·σ)/2.
    pub fn bloch(&self) -> [f64; 3] {
        let m = &self.0;
        [2.0 * m[(1, 0)].re, 2.0 * m[(1, 0)].im, (m[(0, 0)] - m[(1, 1)]).re]
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let t = self.trace();
        let [x, y, z] = self.bloch();
        let r = (x * x + y * y + z * z).sqrt();
        [0.5 * (t + r), 0.5 * (t - r)]
    }

    /// Eigenvalues (descending) and unit eigenvectors. The eigenvectors are
    /// the spin states along ±r̂; for r = 0 the σ_z basis is returned.
    pub fn eigen(&self) -> ([f64; 2], [Spinor; 2]) {
        let [x, y, z] = self.bloch();
        let r = (x * x + y * y + z * z).sqrt();
        let (up, down) = if r > 0.0 {
            let n = [x / r, y / r, z / r];
            (spin_along(n), spin_along([-n[0], -n[1], -n[2]]))
        } else {
            (Spinor::new(C64::from(1.0), C64::from(0.0)), Spinor::new(C64::from(0.0), C64::from(1.0)))
        };
        (self.eigenvalues(), [up, down])
    }

    /// (ρ + ρ†)/2 rescaled to unit trace.
    fn regularized(m: Matrix2c) -> Matrix2c {
        let h = (m + m.adjoint()) * C64::from(0.5);
        let t = (h[(0, 0)] + h[(1, 1)]).re;
        h / C64::from(t)
    }
}

/// The +1 eigenvector of n̂·σ, choosing the better-conditioned of the two
/// closed forms.
fn spin_along(n: [f64; 3]) -> Spinor {
    let v = if n[2] >= 0.0 {
        Spinor::new(C64::from(1.0 + n[2]), C64::new(n[0], n[1]))
    } else {
        Spinor::new(C64::new(n[0], -n[1]), C64::from(1.0 - n[2]))
    };
    v / C64::from(v.norm())
}

/// Trace distance ½‖a − b‖₁ between Hermitian 2×2 matrices.
pub fn trace_distance(a: &Matrix2c, b: &Matrix2c) -> f64 {
    let d = a - b;
    let tr = (d[(0, 0)] + d[(1, 1)]).re;
    let diff = (d[(0, 0)] - d[(1, 1)]).re;
    let disc = (diff * diff + 4.0 * d[(0, 1)].norm_sqr()).sqrt();
    0.25 * ((tr + disc).abs() + (tr - disc).abs())
}

/// The master-equation generator at time `t` applied to `rho`.
pub fn lindblad_rhs(rho: &DensityMatrix, p: &ModelParams, t: f64) -> Matrix2c {
    Generator::at(p, t).apply(&rho.0)
}

struct Generator {
    h: Matrix2c,
    ops: Vec<Matrix2c>,
    rate_op: Matrix2c,
}

impl Generator {
    fn at(p: &ModelParams, t: f64) -> Self {
        let ops: Vec<Matrix2c> = lindblad_ops(p, &eigensystem(p, t, None)).into_iter().map(|(_, l)| l).collect();
        let rate_op = ops.iter().fold(Matrix2c::zeros(), |acc, l| acc + l.adjoint() * l);
        Generator { h: hamiltonian(p, t), ops, rate_op }
    }

    fn apply(&self, rho: &Matrix2c) -> Matrix2c {
        let mut out = (self.h * rho - rho * self.h) * (-I);
        for l in &self.ops {
            out += l * rho * l.adjoint();
        }
        out - (self.rate_op * rho + rho * self.rate_op) * C64::from(0.5)
    }

    /// Instantaneous total jump rate Tr[Σ L†L ρ].
    fn jump_rate(&self, rho: &Matrix2c) -> f64 {
        (self.rate_op * rho).trace().re
    }
}

/// Output of [`integrate_with`]: sampled states and the expected number of
/// jumps ∫ Tr[Σ L†L ρ] dt over the run.
#[derive(Debug, Clone)]
pub struct Integration {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub expected_jumps: f64,
    pub dt: f64,
}

/// RK4 integration over [0, duration], sampling every step.
pub fn integrate(rho0: &DensityMatrix, p: &ModelParams, duration: f64) -> Result<Vec<DensityMatrix>> {
    Ok(integrate_with(rho0, p, duration, 1)?.states)
}

/// RK4 integration on the same grid as the trajectory engine (δt snapped so
/// that the duration is a whole number of steps), keeping every
/// `sample_every`-th state plus the final one.
pub fn integrate_with(rho0: &DensityMatrix, p: &ModelParams, duration: f64, sample_every: usize) -> Result<Integration> {
    p.validate_static()?;
    let (n, dt) = p.time_grid(duration)?;
    let every = sample_every.max(1);
    let mut rho = rho0.0;
    let mut jumps = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![*rho0];
    let mut g0 = Generator::at(p, 0.0);
    for k in 0..n {
        let t = k as f64 * dt;
        let gm = Generator::at(p, t + 0.5 * dt);
        let g1 = Generator::at(p, t + dt);
        let h = C64::from(dt);
        let half = C64::from(0.5 * dt);
        let k1 = g0.apply(&rho);
        let r2 = rho + k1 * half;
        let k2 = gm.apply(&r2);
        let r3 = rho + k2 * half;
        let k3 = gm.apply(&r3);
        let r4 = rho + k3 * h;
        let k4 = g1.apply(&r4);
        jumps += dt / 6.0 * (g0.jump_rate(&rho) + 2.0 * gm.jump_rate(&r2) + 2.0 * gm.jump_rate(&r3) + g1.jump_rate(&r4));
        rho += (k1 + (k2 + k3) * C64::from(2.0) + k4) * (h / C64::from(6.0));
        g0 = g1;

        let done = k + 1;
        if done % every == 0 || done == n {
            let tnow = done as f64 * dt;
            check(&rho, tnow)?;
            rho = DensityMatrix::regularized(rho);
            times.push(tnow);
            states.push(DensityMatrix(rho));
        }
    }
    Ok(Integration { times, states, expected_jumps: jumps, dt })
}

fn check(rho: &Matrix2c, t: f64) -> Result<()> {
    let diverged = |reason: String| Err(Error::IntegrationDiverged { time: t, reason });
    if !rho.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return diverged("non-finite entry".into());
    }
    let tr = (rho[(0, 0)] + rho[(1, 1)]).re;
    if (tr - 1.0).abs() > TRACE_TOL {
        return diverged(format!("trace drifted to {tr}"));
    }
    let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if herm > HERMITIAN_TOL {
        return diverged(format!("hermiticity defect {herm:e}"));
    }
    let lam = DensityMatrix(*rho).eigenvalues()[1];
    if lam < -POSITIVITY_TOL {
        return diverged(format!("negative eigenvalue {lam:e}"));
    }
    Ok(())
}

/// Expected number of jumps over [0, duration] starting from `rho0`.
pub fn expected_jump_count(rho0: &DensityMatrix, p: &ModelParams, duration: f64) -> Result<f64> {
    Ok(integrate_with(rho0, p, duration, usize::MAX)?.expected_jumps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{frobenius, outer};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn reference() -> ModelParams {
        ModelParams::reference(0.34 * PI, 5e-3, 1e-3, 0.0).with_dt(2.0 * PI / 400.0)
    }

    #[test]
    fn maximally_mixed_is_stationary_without_dissipation() {
        let p = ModelParams::unitary(1.1, 5e-3);
        let out = lindblad_rhs(&DensityMatrix::maximally_mixed(), &p, 2.0);
        assert!(frobenius(&out) < 1e-16);
    }

    #[test]
    fn decay_transfers_population_at_expected_rate() {
        let mut p = reference();
        p.gamma_d = 0.0;
        let t = 123.0;
        let e = eigensystem(&p, t, None);
        let rho = DensityMatrix::pure(&e.state_plus);
        let out = lindblad_rhs(&rho, &p, t);
        let m = crate::types::matrix_element(e.minus(), &crate::types::sigma_x(), e.plus());
        let gain = crate::types::matrix_element(e.minus(), &out, e.minus()).re;
        // Population of ψ₋ grows at γ₋|⟨ψ₋|σ_x|ψ₊⟩|²; the Hamiltonian term
        // does not touch eigenprojector populations.
        assert_abs_diff_eq!(gain, p.gamma_minus * m.norm_sqr(), epsilon = 1e-15);
    }

    #[test]
    fn frozen_populations_on_pole() {
        let p = ModelParams::unitary(0.0, 5e-3).with_dt(0.05);
        let rho0 = DensityMatrix::new(Matrix2c::new(
            C64::from(0.8),
            C64::new(0.1, 0.05),
            C64::new(0.1, -0.05),
            C64::from(0.2),
        ))
        .unwrap();
        let path = integrate(&rho0, &p, 50.0).unwrap();
        let last = path.last().unwrap().matrix();
        assert_abs_diff_eq!(last[(0, 0)].re, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(last[(1, 1)].re, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn static_field_relaxes_to_ground_state() {
        let mut p = ModelParams::reference(0.6, 0.0, 0.05, 0.0).with_dt(0.05);
        p.drive_freq = 0.0;
        let rho0 = DensityMatrix::maximally_mixed();
        let last = *integrate(&rho0, &p, 2000.0).unwrap().last().unwrap();
        let ground = DensityMatrix::pure(&eigensystem(&p, 0.0, None).state_minus);
        assert!(trace_distance(last.matrix(), ground.matrix()) < 1e-6);
    }

    #[test]
    fn fourth_order_convergence() {
        let base = ModelParams::reference(0.34 * PI, 5e-3, 0.02, 0.1);
        let rho0 = DensityMatrix::pure(&eigensystem(&base, 0.0, None).state_plus);
        let dur = 400.0;
        let run = |dt: f64| *integrate_with(&rho0, &base.with_dt(dt), dur, usize::MAX).unwrap().states.last().unwrap();
        let (a, b, c) = (run(0.3), run(0.15), run(0.075));
        let e1 = frobenius(&(a.matrix() - b.matrix()));
        let e2 = frobenius(&(b.matrix() - c.matrix()));
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
        let fine = run(2.0 * PI / 400.0);
        let finer = run(PI / 400.0);
        assert!(frobenius(&(fine.matrix() - finer.matrix())) < 1e-6);
    }

    #[test]
    fn trace_preserved_over_cycle() {
        let p = reference();
        let rho0 = DensityMatrix::pure(&eigensystem(&p, 0.0, None).state_plus);
        let out = integrate_with(&rho0, &p, p.period(), 1000).unwrap();
        assert!(out.states.len() > 10);
        assert!(out.expected_jumps > 0.0);
    }

    #[test]
    fn trace_distance_examples() {
        let a = DensityMatrix::pure(&PureState::basis0());
        let b = DensityMatrix::pure(&PureState::basis1());
        assert_abs_diff_eq!(trace_distance(a.matrix(), b.matrix()), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(trace_distance(a.matrix(), a.matrix()), 0.0);
        let m = DensityMatrix::maximally_mixed();
        assert_abs_diff_eq!(trace_distance(a.matrix(), m.matrix()), 0.5, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn generator_is_traceless_and_hermitian(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64,
                                                th in 0.0..PI, t in 0.0..1e3f64, gz in 0.0..1.0f64) {
            let r = (x * x + y * y + z * z).sqrt().max(1.0);
            let (x, y, z) = (x / r, y / r, z / r);
            let rho = DensityMatrix::new(Matrix2c::new(
                C64::from(0.5 * (1.0 + z)), C64::new(0.5 * x, -0.5 * y),
                C64::new(0.5 * x, 0.5 * y), C64::from(0.5 * (1.0 - z)),
            )).unwrap();
            let p = ModelParams::reference(th, 5e-3, 0.01, gz);
            let out = lindblad_rhs(&rho, &p, t);
            prop_assert!(out.trace().norm() < 1e-15);
            prop_assert!(frobenius(&(out - out.adjoint())) < 1e-15);
        }

        #[test]
        fn eigen_decomposition_reconstructs(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64) {
            let r = (x * x + y * y + z * z).sqrt().max(1.0);
            let (x, y, z) = (x / r, y / r, z / r);
            let m = Matrix2c::new(
                C64::from(0.5 * (1.0 + z)), C64::new(0.5 * x, -0.5 * y),
                C64::new(0.5 * x, 0.5 * y), C64::from(0.5 * (1.0 - z)),
            );
            let (lam, v) = DensityMatrix(m).eigen();
            let back = outer(&v[0], &v[0]) * C64::from(lam[0]) + outer(&v[1], &v[1]) * C64::from(lam[1]);
            prop_assert!(frobenius(&(back - m)) < 1e-12);
        }
    }
}
