//! Closed-form treatment of the jump-free dynamics in the instantaneous
//! eigenbasis: the coefficient equations, their rotating-frame solution with
//! f(t) replaced by its cycle mean, the small-rate phase formula, and the
//! location of the parameter points where the jump-free trajectory loses
//! all weight on the initial eigenstate.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::decay_weight;
use crate::types::{Spinor, C64, I, ModelParams, Phase, PureState, ONE, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

/// ν and ε of the rotating-frame solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotFrameParams {
    pub nu: C64,
    pub eps: C64,
}

impl RotFrameParams {
    /// Principal branch of ε.
    pub fn new(p: &ModelParams) -> Self {
        let (s, c) = p.theta.sin_cos();
        let nu = C64::new(p.omega - p.drive_freq * c, -0.5 * p.drift_gamma() * mean_decay_weight(p));
        let eps = (nu * nu + (p.drive_freq * s).powi(2)).sqrt();
        RotFrameParams { nu, eps }
    }

    /// The branch of ε closest to `prev`, for continuity along a scan.
    pub fn continued_from(p: &ModelParams, prev: C64) -> Self {
        let mut r = Self::new(p);
        if (r.eps * prev.conj()).re < 0.0 {
            r.eps = -r.eps;
        }
        r
    }
}

/// Cycle average of f(t): 1 − sin²θ/2.
pub fn mean_decay_weight(p: &ModelParams) -> f64 {
    1.0 - 0.5 * p.theta.sin().powi(2)
}

/// Eigenbasis of H(t) in the periodic gauge the coefficient equations are
/// written in: ψ₊ = (cos θ/2, e^{iΩt} sin θ/2), ψ₋ = (sin θ/2, −e^{iΩt} cos θ/2).
pub fn rotating_basis(p: &ModelParams, t: f64) -> (Spinor, Spinor) {
    let (s, c) = (0.5 * p.theta).sin_cos();
    let e = C64::from_polar(1.0, p.drive_freq * t);
    (Spinor::new(C64::from(c), e * s), Spinor::new(C64::from(s), -e * c))
}

fn rhs_with(c_plus: C64, c_minus: C64, p: &ModelParams, f: f64) -> (C64, C64) {
    let (st, ct) = p.theta.sin_cos();
    let (w, big) = (p.omega, p.drive_freq);
    let damp = 0.25 * p.drift_gamma() * f;
    let mix = I * (0.5 * big * st);
    let dp = C64::new(-damp, -0.5 * w - 0.5 * big * (1.0 - ct)) * c_plus + mix * c_minus;
    let dm = C64::new(damp, 0.5 * w - 0.5 * big * (1.0 + ct)) * c_minus + mix * c_plus;
    (dp, dm)
}

/// Time derivative of the eigenbasis coefficients (c̃₊, c̃₋) under the
/// traceless part of the jump-free generator, with the exact f(t).
///
/// The identity part of the generator is dropped; it rescales the norm but
/// leaves the normalized state and its phase untouched.
pub fn coeff_odes_rhs(c_plus: C64, c_minus: C64, p: &ModelParams, t: f64) -> (C64, C64) {
    rhs_with(c_plus, c_minus, p, decay_weight(p, t))
}

/// As [`coeff_odes_rhs`] with f(t) replaced by its cycle mean.
pub fn coeff_odes_rhs_mean_f(c_plus: C64, c_minus: C64, p: &ModelParams) -> (C64, C64) {
    rhs_with(c_plus, c_minus, p, mean_decay_weight(p))
}

/// RK4 integration of [`coeff_odes_rhs`] over [0, duration] in `n_steps`
/// steps. The result is rescaled to unit norm after every step, so only the
/// direction (including the phase) is meaningful.
pub fn integrate_coefficients(p: &ModelParams, duration: f64, c0: (C64, C64), n_steps: usize) -> (C64, C64) {
    let h = duration / n_steps as f64;
    let (mut a, mut b) = c0;
    let add = |x: (C64, C64), k: (C64, C64), s: f64| (x.0 + k.0 * s, x.1 + k.1 * s);
    for i in 0..n_steps {
        let t = i as f64 * h;
        let k1 = coeff_odes_rhs(a, b, p, t);
        let y = add((a, b), k1, 0.5 * h);
        let k2 = coeff_odes_rhs(y.0, y.1, p, t + 0.5 * h);
        let y = add((a, b), k2, 0.5 * h);
        let k3 = coeff_odes_rhs(y.0, y.1, p, t + 0.5 * h);
        let y = add((a, b), k3, h);
        let k4 = coeff_odes_rhs(y.0, y.1, p, t + h);
        a += (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0) * (h / 6.0);
        b += (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1) * (h / 6.0);
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        a /= n;
        b /= n;
    }
    (a, b)
}

/// Closed-form coefficients (c̃₊, c̃₋) at time `t` under the mean-f equations,
/// starting from the eigenstate `branch` with unit amplitude.
///
/// With c̃ = e^{−iΩt/2} d, the equations become ḋ = (i/2) M d with
/// M = [[−ν, Ω sinθ], [Ω sinθ, ν]] and M² = ε², so
/// d(t) = [cos(εt/2) + i sin(εt/2) M/ε] d(0).
pub fn analytic_coefficients(p: &ModelParams, t: f64, branch: Branch) -> (C64, C64) {
    let RotFrameParams { nu, eps } = RotFrameParams::new(p);
    let off = C64::from(p.drive_freq * p.theta.sin());
    let x = eps * (0.5 * t);
    let cos = x.cos();
    // sin(x)/ε, finite as ε → 0.
    let sinc = if eps.norm() > 1e-300 { x.sin() / eps } else { C64::from(0.5 * t) };
    let d = match branch {
        Branch::Plus => (cos - I * sinc * nu, I * sinc * off),
        Branch::Minus => (I * sinc * off, cos + I * sinc * nu),
    };
    let rot = C64::from_polar(1.0, -0.5 * p.drive_freq * t);
    (rot * d.0, rot * d.1)
}

/// Normalized jump-free state at time `t` from the mean-f closed form,
/// starting in the eigenstate `branch`.
pub fn analytic_no_jump_state(p: &ModelParams, t: f64, branch: Branch) -> PureState {
    let (cp, cm) = analytic_coefficients(p, t, branch);
    let (up, dn) = rotating_basis(p, t);
    let v = up * cp + dn * cm;
    PureState::from_spinor(v)
        .map(|s| s.normalized())
        .unwrap_or_else(|_| PureState::from_spinor_unchecked(if branch == Branch::Plus { up } else { dn }))
}

/// Small-rate approximation of the jump-free geometric phase over one cycle,
/// evaluated term by term:
///
/// φ₀ ≈ −π(1 − cosθ) − π sin²θ (W + cosθ W²)
///      − (sin²θ/4)(W + cosθ W²)(e^{−4π Im ν/Ω} − 1)/(2 Im ν/Ω),  W = Ω/ω.
pub fn gp_no_jump_approx(p: &ModelParams) -> Phase {
    let (s, c) = p.theta.sin_cos();
    let s2 = s * s;
    let w = p.drive_freq / p.omega;
    let poly = w + c * w * w;
    let x = RotFrameParams::new(p).nu.im / p.drive_freq;
    // (e^{−4πx} − 1)/(2x), with its limit −2π at x = 0.
    let ratio = if x.abs() > 1e-300 { (-4.0 * PI * x).exp_m1() / (2.0 * x) } else { -2.0 * PI };
    let phi = -PI * (1.0 - c) - PI * s2 * poly - 0.25 * s2 * poly * ratio;
    Phase::from_finite(phi)
}

/// (ν + ε) − (ν − ε) e^{2πiε/Ω}; its zeros approximate the points where the
/// jump-free evolution of ψ₊(0) ends on ψ₋(T).
pub fn singularity_residual(p: &ModelParams) -> C64 {
    singularity_residual_with(p, &RotFrameParams::new(p))
}

pub fn singularity_residual_with(p: &ModelParams, r: &RotFrameParams) -> C64 {
    (r.nu + r.eps) - (r.nu - r.eps) * (I * r.eps * (2.0 * PI / p.drive_freq)).exp()
}

/// A parameter point where the jump-free trajectory from ψ₊(0) ends
/// orthogonal to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singularity {
    pub omega_ratio: f64,
    pub gamma_ratio: f64,
    /// |⟨ψ₊(0)|ψ(T)⟩|² of the normalized final state.
    pub survival: f64,
    /// Root of the closed-form residual used as the starting point.
    pub seed: (f64, f64),
    pub iterations: usize,
}

/// Steps per unit time for the coefficient integration used by the locator.
const LOCATOR_STEPS_PER_TIME: f64 = 32.0;

/// c̃₊(T)/c̃₋(T) for the jump-free evolution of ψ₊(0) at (Ω/ω, Γ/ω).
pub fn no_jump_return_ratio(theta: f64, omega_ratio: f64, gamma_ratio: f64) -> C64 {
    no_jump_cycle(&ModelParams::reference(theta, omega_ratio, gamma_ratio, 0.0), LOCATOR_STEPS_PER_TIME).ratio
}

/// One jump-free cycle from ψ₊(0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoJumpCycle {
    /// c̃₊(T)/c̃₋(T).
    pub ratio: C64,
    /// |⟨ψ₊(0)|ψ(T)⟩|² of the normalized final state.
    pub survival: f64,
    /// Pancharatnam phase of the path; None when the endpoints are
    /// orthogonal.
    pub gp: Option<Phase>,
}

/// Integrates the coefficient equations (exact f(t)) over one period with
/// classical RK4 at `steps_per_time` steps per unit time, accumulating the
/// Pancharatnam phase of the sampled lab-frame states on the fly.
///
/// Consecutive eigenbases differ by a fixed rotation, so the overlaps
/// ⟨ψ(t_k)|ψ(t_{k+1})⟩ need no lab-frame reconstruction. This is the fast
/// path for θ sweeps; it agrees with the Kraus-step evolution up to that
/// scheme's O(δt) error.
pub fn no_jump_cycle(p: &ModelParams, steps_per_time: f64) -> NoJumpCycle {
    let period = p.period();
    let n = (period * steps_per_time).ceil().max(1.0) as usize;
    let h = period / n as f64;
    let (sh, ch) = (0.5 * p.theta).sin_cos();
    let s2 = p.theta.sin().powi(2);
    let u = C64::from_polar(1.0, p.drive_freq * h);
    let half = C64::from_polar(1.0, 0.5 * p.drive_freq * h);
    let b = [[C64::from(ch * ch) + u * (sh * sh), (ONE - u) * (ch * sh)], [(ONE - u) * (ch * sh), C64::from(sh * sh) + u * (ch * ch)]];

    let (st, ct) = p.theta.sin_cos();
    let (w, big) = (p.omega, p.drive_freq);
    let mix = I * (0.5 * big * st);
    let diag_p = C64::new(0.0, -0.5 * w - 0.5 * big * (1.0 - ct));
    let diag_m = C64::new(0.0, 0.5 * w - 0.5 * big * (1.0 + ct));
    let g4 = 0.25 * p.drift_gamma();
    let rhs = |a: C64, c: C64, cos_phi: f64| {
        let damp = g4 * (1.0 - s2 * cos_phi * cos_phi);
        ((diag_p - damp) * a + mix * c, (diag_m + damp) * c + mix * a)
    };

    let (mut a, mut c) = (ONE, ZERO);
    let mut e = ONE;
    let mut prod = ONE;
    for k in 0..n {
        if k % 1024 == 0 {
            e = C64::from_polar(1.0, p.drive_freq * k as f64 * h);
        }
        let em = e * half;
        let en = e * u;
        let k1 = rhs(a, c, e.re);
        let k2 = rhs(a + k1.0 * (0.5 * h), c + k1.1 * (0.5 * h), em.re);
        let k3 = rhs(a + k2.0 * (0.5 * h), c + k2.1 * (0.5 * h), em.re);
        let k4 = rhs(a + k3.0 * h, c + k3.1 * h, en.re);
        let mut na = a + (k1.0 + (k2.0 + k3.0) * 2.0 + k4.0) * (h / 6.0);
        let mut nc = c + (k1.1 + (k2.1 + k3.1) * 2.0 + k4.1) * (h / 6.0);
        let norm = (na.norm_sqr() + nc.norm_sqr()).sqrt().recip();
        na *= norm;
        nc *= norm;
        let ov = a.conj() * (b[0][0] * na + b[0][1] * nc) + c.conj() * (b[1][0] * na + b[1][1] * nc);
        prod *= ov;
        if k % 64 == 63 {
            prod /= prod.norm();
        }
        (a, c, e) = (na, nc, en);
    }
    let survival = a.norm_sqr();
    let gp = (a.norm() > crate::types::EPS_OVERLAP).then(|| Phase::from_finite(a.arg() - prod.arg()));
    NoJumpCycle { ratio: a / c, survival, gp }
}

/// Newton iteration on a complex function of two real variables, with a
/// central-difference Jacobian. `scale` sets the difference step and the
/// convergence tolerance per coordinate.
fn newton2(
    f: impl Fn(f64, f64) -> C64,
    x0: (f64, f64),
    scale: (f64, f64),
    window: ((f64, f64), (f64, f64)),
    tol: f64,
    max_iter: usize,
) -> Option<((f64, f64), usize)> {
    let (mut x, mut y) = x0;
    let inside = |x: f64, y: f64| {
        let ((x0, x1), (y0, y1)) = window;
        x > x0 && x < x1 && y > y0 && y < y1
    };
    let (hx, hy) = (scale.0 * 1e-6, scale.1 * 1e-6);
    let mut fx = f(x, y);
    for it in 1..=max_iter {
        let dx = (f(x + hx, y) - f(x - hx, y)) / (2.0 * hx);
        let dy = (f(x, y + hy) - f(x, y - hy)) / (2.0 * hy);
        // [Re dx, Re dy; Im dx, Im dy] · (u, v) = −(Re f, Im f)
        let det = dx.re * dy.im - dy.re * dx.im;
        if !det.is_finite() || det == 0.0 {
            return None;
        }
        let u = -(fx.re * dy.im - dy.re * fx.im) / det;
        let v = -(dx.re * fx.im - fx.re * dx.im) / det;
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..20 {
            let (nx, ny) = (x + t * u, y + t * v);
            if nx.is_finite() && ny.is_finite() {
                let fn_ = f(nx, ny);
                if fn_.norm() < fx.norm() || (u / scale.0).abs().max((v / scale.1).abs()) * t < tol {
                    next = Some((nx, ny, fn_));
                    break;
                }
            }
            t *= 0.5;
        }
        let (nx, ny, fn_) = next?;
        let converged = ((nx - x) / scale.0).abs().max(((ny - y) / scale.1).abs()) < tol;
        (x, y, fx) = (nx, ny, fn_);
        if !inside(x, y) {
            return None;
        }
        if converged || fx.norm() == 0.0 {
            return Some(((x, y), it));
        }
    }
    None
}

/// Finds (Ω/ω, Γ/ω) inside the windows at which the jump-free evolution of
/// ψ₊(0) over one cycle ends on ψ₋(T), at fixed θ. When the window holds
/// several such points, the one nearest its center (in window-relative
/// coordinates) is returned.
///
/// The closed-form residual seeds the search; the point itself is a root of
/// c̃₊(T) from direct integration of the coefficient equations with the
/// exact f(t).
pub fn locate_singularity(theta: f64, omega_window: (f64, f64), gamma_window: (f64, f64)) -> Result<Singularity> {
    let roots = locate_singularities(theta, omega_window, gamma_window)?;
    let center = |(a, b): (f64, f64), x: f64| (x - 0.5 * (a + b)) / (b - a);
    let dist = |s: &Singularity| center(omega_window, s.omega_ratio).hypot(center(gamma_window, s.gamma_ratio));
    roots
        .into_iter()
        .min_by(|a, b| dist(a).total_cmp(&dist(b)))
        .ok_or_else(|| Error::NoRootInWindow(format!("no jump-free singularity at theta = {theta}")))
}

/// Every singular point found inside the windows, ordered by Ω.
///
/// Each local minimum of the closed-form residual on a 48×48 grid is refined
/// to a residual root, then to a root of the exact c̃₊(T); roots closer than
/// 10⁻⁸ of the window size are merged.
pub fn locate_singularities(theta: f64, omega_window: (f64, f64), gamma_window: (f64, f64)) -> Result<Vec<Singularity>> {
    let valid = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && 0.0 < a && a < b;
    if !valid(omega_window) || !valid(gamma_window) || !theta.is_finite() {
        return Err(Error::InvalidParams("singularity windows must be positive, finite and ordered".into()));
    }
    let window = (omega_window, gamma_window);
    let scale = (omega_window.1 - omega_window.0, gamma_window.1 - gamma_window.0);
    let residual = |w: f64, g: f64| {
        let p = ModelParams::reference(theta, w, g, 0.0);
        singularity_residual(&p) / RotFrameParams::new(&p).nu.norm()
    };
    let numeric = |w: f64, g: f64| no_jump_return_ratio(theta, w, g);

    const GRID: usize = 48;
    let at = |(a, b): (f64, f64), k: usize| a + (b - a) * (k as f64 + 0.5) / GRID as f64;
    let mag: Vec<Vec<f64>> = (0..GRID)
        .map(|i| (0..GRID).map(|j| residual(at(omega_window, i), at(gamma_window, j)).norm()).collect())
        .collect();
    let mut seeds = Vec::new();
    for i in 0..GRID {
        for j in 0..GRID {
            let m = mag[i][j];
            let is_min = (i.saturating_sub(1)..=(i + 1).min(GRID - 1))
                .flat_map(|a| (j.saturating_sub(1)..=(j + 1).min(GRID - 1)).map(move |b| (a, b)))
                .all(|(a, b)| mag[a][b] >= m);
            if is_min {
                seeds.push((m, at(omega_window, i), at(gamma_window, j)));
            }
        }
    }
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut roots: Vec<Singularity> = Vec::new();
    for (_, w, g) in seeds {
        let Some((seed, _)) = newton2(residual, (w, g), scale, window, 1e-12, 60) else {
            continue;
        };
        let Some(((w, g), iterations)) = newton2(numeric, seed, scale, window, 1e-12, 60) else {
            continue;
        };
        let duplicate = roots
            .iter()
            .any(|r| ((r.omega_ratio - w) / scale.0).abs() < 1e-8 && ((r.gamma_ratio - g) / scale.1).abs() < 1e-8);
        if !duplicate {
            let r = numeric(w, g);
            let survival = r.norm_sqr() / (1.0 + r.norm_sqr());
            roots.push(Singularity { omega_ratio: w, gamma_ratio: g, survival, seed, iterations });
        }
    }
    if roots.is_empty() {
        return Err(Error::NoRootInWindow(format!(
            "no jump-free singularity at theta = {theta} in Omega {omega_window:?}, Gamma {gamma_window:?}"
        )));
    }
    roots.sort_by(|a, b| a.omega_ratio.total_cmp(&b.omega_ratio));
    Ok(roots)
}
