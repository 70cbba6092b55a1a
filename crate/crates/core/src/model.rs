//! Time-dependent Hamiltonian of the rotating field, its instantaneous
//! eigenbasis, the eigenbasis Lindblad channels and the Kraus step operators.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::{
    identity, inner, matrix_element, outer, sigma_x, sigma_z, C64, Matrix2c, ModelParams, PureState, Spinor, I,
};

/// A Lindblad channel tag. The order of [`Channel::ALL`] is the order in which
/// jump probabilities partition the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Minus,
    Plus,
    Dephase,
    Z,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Minus, Channel::Plus, Channel::Dephase, Channel::Z];

    pub fn label(self) -> &'static str {
        match self {
            Channel::Minus => "minus",
            Channel::Plus => "plus",
            Channel::Dephase => "dephase",
            Channel::Z => "z",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn rate(self, p: &ModelParams) -> f64 {
        match self {
            Channel::Minus => p.gamma_minus,
            Channel::Plus => p.gamma_plus,
            Channel::Dephase => p.gamma_d,
            Channel::Z => p.gamma_z,
        }
    }

    fn displaced(self, p: &ModelParams) -> bool {
        self != Channel::Z || p.displace_z
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Instantaneous eigenpair of `H(t)`; states are normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenPair {
    pub energy_plus: f64,
    pub energy_minus: f64,
    pub state_plus: PureState,
    pub state_minus: PureState,
}

impl EigenPair {
    pub fn plus(&self) -> &Spinor {
        self.state_plus.spinor()
    }

    pub fn minus(&self) -> &Spinor {
        self.state_minus.spinor()
    }

    /// Ideal spin flip exchanging the two eigenvectors in this gauge.
    pub fn flip_operator(&self) -> Matrix2c {
        outer(self.plus(), self.minus()) + outer(self.minus(), self.plus())
    }
}

/// Azimuth of the field at time `t`.
pub fn azimuth(p: &ModelParams, t: f64) -> f64 {
    p.drive_freq * t
}

/// Unit field direction (n_x, n_y, n_z).
pub fn field_direction(p: &ModelParams, t: f64) -> [f64; 3] {
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = azimuth(p, t).sin_cos();
    [st * cp, st * sp, ct]
}

/// f(t) = 1 − n_x², the squared decay matrix element |⟨ψ₋|σ_x|ψ₊⟩|².
pub fn decay_weight(p: &ModelParams, t: f64) -> f64 {
    let nx = field_direction(p, t)[0];
    1.0 - nx * nx
}

/// H(t) = (ω/2) n̂(t)·σ.
pub fn hamiltonian(p: &ModelParams, t: f64) -> Matrix2c {
    let [nx, ny, nz] = field_direction(p, t);
    let h = 0.5 * p.omega;
    Matrix2c::new(
        C64::new(h * nz, 0.0),
        C64::new(h * nx, -h * ny),
        C64::new(h * nx, h * ny),
        C64::new(-h * nz, 0.0),
    )
}

const POLE_EPS: f64 = 1e-14;

/// Rotates `v` so that its first non-negligible component is real positive.
fn canonical_phase(v: Spinor) -> Spinor {
    let lead = if v[0].norm() > POLE_EPS { v[0] } else { v[1] };
    if lead.norm() == 0.0 {
        return v;
    }
    v * (lead.conj() / lead.norm())
}

fn align_to(reference: &PureState, v: Spinor) -> Spinor {
    let z = inner(reference.spinor(), &v);
    if z.norm() > 1e-300 {
        v * (z.conj() / z.norm())
    } else {
        v
    }
}

/// Closed-form eigensystem of H(t).
///
/// Without a reference the states are ψ₊ = (cos θ/2, e^{iΩt} sin θ/2) and
/// ψ₋ = (sin θ/2, −e^{iΩt} cos θ/2), rephased so that the first nonzero
/// component is real positive. This gauge is smooth in t and periodic over a
/// cycle. With `gauge_ref`, each state is instead rephased so that its
/// overlap with the reference is real positive.
pub fn eigensystem(p: &ModelParams, t: f64, gauge_ref: Option<&EigenPair>) -> EigenPair {
    let (s, c) = (0.5 * p.theta).sin_cos();
    let e = C64::from_polar(1.0, azimuth(p, t));
    let mut plus = canonical_phase(Spinor::new(C64::from(c), e * s));
    let mut minus = canonical_phase(Spinor::new(C64::from(s), -e * c));
    if let Some(r) = gauge_ref {
        plus = align_to(&r.state_plus, plus);
        minus = align_to(&r.state_minus, minus);
    }
    EigenPair {
        energy_plus: 0.5 * p.omega,
        energy_minus: -0.5 * p.omega,
        state_plus: PureState::from_spinor_unchecked(plus),
        state_minus: PureState::from_spinor_unchecked(minus),
    }
}

/// The eigenbasis Lindblad operators at the eigensystem `eig`; channels with
/// zero rate are omitted.
pub fn lindblad_ops(p: &ModelParams, eig: &EigenPair) -> Vec<(Channel, Matrix2c)> {
    let sx = sigma_x();
    let (up, dn) = (eig.plus(), eig.minus());
    let mut ops = Vec::with_capacity(4);
    for ch in Channel::ALL {
        let rate = ch.rate(p);
        if rate <= 0.0 {
            continue;
        }
        let amp = C64::from(rate.sqrt());
        let op = match ch {
            Channel::Minus => outer(dn, up) * (amp * matrix_element(dn, &sx, up)),
            Channel::Plus => outer(up, dn) * (amp * matrix_element(up, &sx, dn)),
            Channel::Dephase => {
                (outer(up, up) * matrix_element(up, &sx, up) + outer(dn, dn) * matrix_element(dn, &sx, dn)) * amp
            }
            Channel::Z => sigma_z() * amp,
        };
        ops.push((ch, op));
    }
    ops
}

/// The displaced unravelling at time `t`: every present channel (σ_z only if
/// `displace_z`) becomes L' = L + √λ·𝟙 and the Hamiltonian picks up
/// H' = H − (i√λ/2) Σ (L − L†), which leaves the averaged dynamics unchanged.
pub fn displaced_ops(p: &ModelParams, t: f64) -> (Matrix2c, Vec<(Channel, Matrix2c)>) {
    let h = hamiltonian(p, t);
    let ops = lindblad_ops(p, &eigensystem(p, t, None));
    displace(p, h, ops)
}

fn displace(p: &ModelParams, mut h: Matrix2c, mut ops: Vec<(Channel, Matrix2c)>) -> (Matrix2c, Vec<(Channel, Matrix2c)>) {
    if p.lambda_disp <= 0.0 {
        return (h, ops);
    }
    let shift = C64::from(p.lambda_disp.sqrt());
    for (ch, l) in ops.iter_mut() {
        if ch.displaced(p) {
            h -= (*l - l.adjoint()) * (I * shift * 0.5);
            *l += identity() * shift;
        }
    }
    (h, ops)
}

/// Kraus operators for one step of length `p.dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausOps {
    pub k_o: Matrix2c,
    pub jumps: Vec<(Channel, Matrix2c)>,
}

impl KrausOps {
    /// 𝟙 − K_o†K_o − Σ K_α†K_α; O(δt²).
    pub fn completeness_defect(&self) -> Matrix2c {
        let mut d = identity() - self.k_o.adjoint() * self.k_o;
        for (_, k) in &self.jumps {
            d -= k.adjoint() * k;
        }
        d
    }
}

/// Kraus step operators for the step [t, t + δt].
///
/// K_o = 𝟙 − iδt[H − (i/2) Σ L†L] and K_α = √δt L_α, with all operators
/// evaluated at the step midpoint, which makes the scheme second order in the
/// state direction.
pub fn kraus_step_ops(p: &ModelParams, t: f64) -> KrausOps {
    kraus_at_midpoint(p, t + 0.5 * p.dt)
}

/// Step operators built from the operators at time `tm`.
pub(crate) fn kraus_at_midpoint(p: &ModelParams, tm: f64) -> KrausOps {
    let (h, ops) = displaced_ops(p, tm);
    let dt = p.dt;
    let mut bracket = h;
    for (_, l) in &ops {
        bracket -= l.adjoint() * l * (0.5 * I);
    }
    let k_o = identity() - bracket * (I * dt);
    let sdt = C64::from(dt.sqrt());
    let jumps = ops.into_iter().map(|(ch, l)| (ch, l * sdt)).collect();
    KrausOps { k_o, jumps }
}

/// No-jump step operator K_o for the undisplaced unravelling, built directly
/// from the closed form of Σ L†L. Matches [`kraus_step_ops`] when λ = 0.
pub fn no_jump_step_op(p: &ModelParams, t: f64) -> Matrix2c {
    no_jump_parts_at_midpoint(p, t + 0.5 * p.dt).0
}

/// K_o and the total jump metric δt·Σ L†L from the operators at `tm`.
pub(crate) fn no_jump_parts_at_midpoint(p: &ModelParams, tm: f64) -> (Matrix2c, Matrix2c) {
    let [nx, ny, nz] = field_direction(p, tm);
    let f = 1.0 - nx * nx;
    // Σ L†L = a·𝟙 + b·(P₊ − P₋)
    let a = 0.5 * f * (p.gamma_minus + p.gamma_plus) + p.gamma_d * nx * nx + p.gamma_z;
    let b = 0.5 * f * (p.gamma_minus - p.gamma_plus);
    // bracket = −(i/2)a·𝟙 + (ω/2 − (i/2)b)·n̂·σ
    let g = C64::new(0.5 * p.omega, -0.5 * b);
    let dt = p.dt;
    let diag = C64::new(1.0 - 0.5 * dt * a, 0.0);
    let mi_dt_g = -I * dt * g;
    let k_o = Matrix2c::new(
        diag + mi_dt_g * nz,
        mi_dt_g * C64::new(nx, -ny),
        mi_dt_g * C64::new(nx, ny),
        diag - mi_dt_g * nz,
    );
    let (ad, bd) = (dt * a, dt * b);
    let gram = Matrix2c::new(
        C64::from(ad + bd * nz),
        C64::new(bd * nx, -bd * ny),
        C64::new(bd * nx, bd * ny),
        C64::from(ad - bd * nz),
    );
    (k_o, gram)
}

/// The non-Hermitian drift generator H_o(t) = (1 − i(γ₋−γ₊) f(t)/(2ω)) H(t).
///
/// It equals the traceless part of H − (i/2) Σ L†L; the remaining multiple
/// of the identity only rescales the norm and carries no phase.
pub fn drift_hamiltonian(p: &ModelParams, t: f64) -> Matrix2c {
    let f = decay_weight(p, t);
    hamiltonian(p, t) * C64::new(1.0, -p.drift_gamma() * f / (2.0 * p.omega))
}

/// The imaginary identity part −i·c·𝟙 separating the Kraus bracket from
/// [`drift_hamiltonian`] (undisplaced unravelling).
pub fn drift_identity_rate(p: &ModelParams, t: f64) -> f64 {
    let nx = field_direction(p, t)[0];
    let f = 1.0 - nx * nx;
    0.25 * f * (p.gamma_minus + p.gamma_plus) + 0.5 * (p.gamma_d * nx * nx + p.gamma_z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{frobenius, max_abs, ONE, ZERO};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn params(theta: f64) -> ModelParams {
        ModelParams::reference(theta, 5e-3, 1e-3, 0.0).with_dt(2.0 * PI / 400.0)
    }

    #[test]
    fn hamiltonian_examples() {
        let p = params(0.0);
        let h = hamiltonian(&p, 3.7);
        assert!(frobenius(&(h - sigma_z() * C64::from(0.5))) < 1e-15);

        let p = params(PI / 2.0);
        assert!(frobenius(&(hamiltonian(&p, 0.0) - sigma_x() * C64::from(0.5))) < 1e-15);

        let th = 0.34 * PI;
        let expect = (sigma_x() * C64::from(th.sin()) + sigma_z() * C64::from(th.cos())) * C64::from(0.5);
        assert!(frobenius(&(hamiltonian(&params(th), 0.0) - expect)) < 1e-15);
    }

    #[test]
    fn eigensystem_examples() {
        let e = eigensystem(&params(0.0), 0.0, None);
        assert_eq!(e.state_plus.amplitudes(), [ONE, ZERO]);
        assert_eq!(e.state_minus.amplitudes(), [ZERO, ONE]);
        assert_eq!((e.energy_plus, e.energy_minus), (0.5, -0.5));

        let e = eigensystem(&params(PI), 0.0, None);
        assert!(e.state_plus.fidelity(&PureState::basis1()) > 1.0 - 1e-15);

        let th = 0.34 * PI;
        let e = eigensystem(&params(th), 0.0, None);
        let [a, b] = e.state_plus.amplitudes();
        assert_abs_diff_eq!(a.re, (0.17 * PI).cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(b.re, (0.17 * PI).sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(a.im.abs() + b.im.abs(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn minus_operator_examples() {
        let p = ModelParams::reference(PI / 2.0, 5e-3, 1e-3, 0.0);
        let e = eigensystem(&p, 0.0, None);
        assert!(matrix_element(e.minus(), &sigma_x(), e.plus()).norm() < 1e-15);
        let ops = lindblad_ops(&p, &e);
        let lm = &ops.iter().find(|(c, _)| *c == Channel::Minus).unwrap().1;
        let ld = &ops.iter().find(|(c, _)| *c == Channel::Dephase).unwrap().1;
        assert!(max_abs(lm) < 1e-15);
        // σ_x is diagonal in this eigenbasis, so L_d = √γ_d σ_x.
        assert!(frobenius(&(ld - sigma_x() * C64::from(p.gamma_d.sqrt()))) < 1e-15);
        assert!(ops.iter().all(|(c, _)| *c != Channel::Z && *c != Channel::Plus));

        let p = ModelParams::reference(0.0, 5e-3, 1e-3, 0.0);
        let e = eigensystem(&p, 0.0, None);
        assert_abs_diff_eq!(matrix_element(e.minus(), &sigma_x(), e.plus()).re, 1.0, epsilon = 1e-15);
        let ops = lindblad_ops(&p, &e);
        let expect = outer(e.minus(), e.plus()) * C64::from(p.gamma_minus.sqrt());
        assert!(frobenius(&(ops[0].1 - expect)) < 1e-18);
    }

    #[test]
    fn unitary_kraus_is_first_order_step() {
        let p = ModelParams::unitary(0.34 * PI, 5e-3).with_dt(0.01);
        let k = kraus_step_ops(&p, 2.0);
        assert!(k.jumps.is_empty());
        let expect = identity() - hamiltonian(&p, 2.005) * (I * 0.01);
        assert!(frobenius(&(k.k_o - expect)) < 1e-15);
        let tiny = kraus_step_ops(&p.with_dt(1e-12), 2.0);
        assert!(frobenius(&(tiny.k_o - identity())) < 1e-11);
    }

    #[test]
    fn jump_probability_on_excited_state() {
        let th = 0.34 * PI;
        let p = params(th);
        let t = 17.0;
        let k = kraus_step_ops(&p, t);
        let e = eigensystem(&p, t + 0.5 * p.dt, None);
        let psi = e.plus();
        let total: f64 = k.jumps.iter().map(|(_, m)| (m * psi).norm_squared()).sum();
        let sx = sigma_x();
        let expect = p.dt
            * (p.gamma_minus * matrix_element(e.minus(), &sx, psi).norm_sqr()
                + p.gamma_d * matrix_element(psi, &sx, psi).norm_sqr());
        assert_abs_diff_eq!(total, expect, epsilon = 1e-18);
    }

    #[test]
    fn drift_examples() {
        let p = ModelParams::reference(0.0, 5e-3, 1e-3, 0.0);
        let expect = sigma_z() * C64::new(0.5, -0.25e-3);
        assert!(frobenius(&(drift_hamiltonian(&p, 1.3) - expect)) < 1e-16);

        let p = ModelParams::unitary(1.1, 5e-3);
        assert!(frobenius(&(drift_hamiltonian(&p, 1.3) - hamiltonian(&p, 1.3))) < 1e-16);

        let p = ModelParams::reference(PI / 2.0, 5e-3, 1e-3, 0.0);
        assert_abs_diff_eq!(decay_weight(&p, PI / (2.0 * p.drive_freq)), 1.0, epsilon = 1e-15);
        let gz = ModelParams::reference(0.7, 5e-3, 1e-3, 0.4);
        let no_gz = ModelParams::reference(0.7, 5e-3, 1e-3, 0.0);
        assert_eq!(drift_hamiltonian(&gz, 3.0), drift_hamiltonian(&no_gz, 3.0));
    }

    #[test]
    fn gauge_is_periodic_and_continuous() {
        let p = params(0.34 * PI);
        let n = 400;
        let period = p.period();
        let mut prev = eigensystem(&p, 0.0, None);
        let first = prev;
        let mut worst = f64::INFINITY;
        for k in 1..=n {
            let e = eigensystem(&p, period * k as f64 / n as f64, None);
            worst = worst.min(inner(prev.plus(), e.plus()).re).min(inner(prev.minus(), e.minus()).re);
            prev = e;
        }
        assert!(worst > 0.99);
        assert!((prev.plus() - first.plus()).norm() < 1e-12);
        assert!((prev.minus() - first.minus()).norm() < 1e-12);
    }

    #[test]
    fn displacement_with_zero_lambda_is_identity() {
        let p = params(1.0);
        let (h, ops) = displaced_ops(&p, 4.0);
        assert_eq!(h, hamiltonian(&p, 4.0));
        assert_eq!(ops, lindblad_ops(&p, &eigensystem(&p, 4.0, None)));
    }

    #[test]
    fn fast_no_jump_operator_matches_generic() {
        for (th, gz, gp) in [(0.34 * PI, 0.0, 0.0), (1.9, 0.1, 0.2), (0.0, 0.3, 0.0), (PI, 0.0, 0.5)] {
            let mut p = ModelParams::reference(th, 4.8e-3, 0.0306, gz).with_dt(0.007);
            p.gamma_plus = gp * p.gamma;
            for t in [0.0, 11.0, 500.0] {
                let a = no_jump_step_op(&p, t);
                let k = kraus_step_ops(&p, t);
                assert!(frobenius(&(a - k.k_o)) < 1e-15, "{th} {t}");
                let gram = k.jumps.iter().fold(Matrix2c::zeros(), |acc, (_, m)| acc + m.adjoint() * m);
                let (_, fast) = no_jump_parts_at_midpoint(&p, t + 0.5 * p.dt);
                assert!(frobenius(&(gram - fast)) < 1e-17, "{th} {t}");
            }
        }
    }

    fn arb_params() -> impl Strategy<Value = (ModelParams, f64)> {
        (0.0..PI, 1e-4..0.05f64, 0.0..0.05f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1e4f64).prop_map(
            |(th, om, g, gz, gp, t)| {
                let mut p = ModelParams::reference(th, om, g, gz).with_dt(0.01);
                p.gamma_plus = gp * g;
                (p, t)
            },
        )
    }

    proptest! {
        #[test]
        fn eigenpairs_are_orthonormal_eigenvectors((p, t) in arb_params()) {
            let e = eigensystem(&p, t, None);
            let h = hamiltonian(&p, t);
            prop_assert!(inner(e.plus(), e.minus()).norm() < 1e-12);
            prop_assert!((e.state_plus.norm_sqr() - 1.0).abs() < 1e-12);
            prop_assert!((h * e.plus() - e.plus() * C64::from(0.5)).norm() < 1e-10);
            prop_assert!((h * e.minus() + e.minus() * C64::from(0.5)).norm() < 1e-10);
            prop_assert!((hamiltonian(&p, t) - hamiltonian(&p, t).adjoint()).norm() < 1e-15);
        }

        #[test]
        fn gauge_reference_is_respected((p, t) in arb_params(), dt in 1e-3..1.0f64) {
            let r = eigensystem(&p, t, None);
            let e = eigensystem(&p, t + dt, Some(&r));
            prop_assert!(inner(r.plus(), e.plus()).re > 0.0);
            prop_assert!(inner(r.minus(), e.minus()).re > 0.0);
        }

        #[test]
        fn completeness_defect_is_second_order((p, t) in arb_params()) {
            let k = kraus_step_ops(&p, t);
            let d = frobenius(&k.completeness_defect());
            prop_assert!(d < 2.0 * p.dt * p.dt, "defect {d}");
        }

        #[test]
        fn drift_matches_bracket_up_to_identity((p, t) in arb_params()) {
            let (h, ops) = displaced_ops(&p, t);
            let mut bracket = h;
            for (_, l) in &ops {
                bracket -= l.adjoint() * l * (0.5 * I);
            }
            let expect = drift_hamiltonian(&p, t) - identity() * (I * drift_identity_rate(&p, t));
            prop_assert!(frobenius(&(bracket - expect)) <= 1e-10 * frobenius(&bracket));
        }

        #[test]
        fn minus_operator_maps_excited_to_ground((p, t) in arb_params()) {
            let e = eigensystem(&p, t, None);
            let ops = lindblad_ops(&p, &e);
            let lm = ops.iter().find(|(c, _)| *c == Channel::Minus).map(|(_, l)| *l);
            if let Some(lm) = lm {
                let out = lm * e.plus();
                prop_assert!(inner(e.plus(), &out).norm() < 1e-15);
                prop_assert!((lm * e.minus()).norm() < 1e-15);
            }
        }

        #[test]
        fn displacement_preserves_generator((p, t) in arb_params(), lam in 1e-6..1e-3f64) {
            // L ρ L† − ½{L†L, ρ} − i[H, ρ] is invariant under the displacement.
            let rho = {
                let v = Spinor::new(C64::new(0.6, 0.1), C64::new(-0.3, 0.7));
                let v = v / C64::from(v.norm());
                outer(&v, &v) * C64::from(0.8) + identity() * C64::from(0.1)
            };
            let gen = |h: &Matrix2c, ops: &[(Channel, Matrix2c)]| {
                let mut out = (h * rho - rho * h) * (-I);
                for (_, l) in ops {
                    let ll = l.adjoint() * l;
                    out += l * rho * l.adjoint() - (ll * rho + rho * ll) * C64::from(0.5);
                }
                out
            };
            let (h0, ops0) = displaced_ops(&p, t);
            let (h1, ops1) = displaced_ops(&p.with_lambda(lam), t);
            prop_assert!(frobenius(&(gen(&h0, &ops0) - gen(&h1, &ops1))) < 1e-14);
        }
    }
}
