//! One function per experiment mode. Work is split into independent stream
//! blocks or grid cells, run on the pool, and reassembled in order, so the
//! outputs do not depend on the number of workers.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::Range;

use rayon::prelude::*;
use rayon::ThreadPool;
use serde_json::{json, Value};

use gptraj_core::analytic::{gp_no_jump_approx, locate_singularities, no_jump_cycle};
use gptraj_core::echo::{echo_no_jump, run_echo_ensemble, EchoOutcome};
use gptraj_core::lindblad::{integrate_with, trace_distance, DensityMatrix};
use gptraj_core::stats::{circular_mean, circular_variance, find_peaks, find_peaks_with, CircularHistogram, Peak};
use gptraj_core::topology::{delta_theta, sector_cell};
use gptraj_core::trajectory::{
    ensemble_density, excited_state, run_ensemble, run_no_jump, Exclusion, RunOptions, TrajectoryRecord, CHUNK,
};
use gptraj_core::{wrap_phase, Error, Matrix2c, ModelParams, Result};

use crate::config::{Mode, Resolved};
use crate::output::{num, opt, Artifacts, Table};

/// Peak thresholds, in probability per bin.
const GP_PROMINENCE: f64 = 0.005;
const ECHO_PROMINENCE: f64 = 0.01;
/// Echo sub-peaks closer than this many bins are reported as one.
const ECHO_SEPARATION: usize = 3;
/// Integration steps per unit time for jump-free phase-diagram cells.
const CELL_STEPS_PER_TIME: f64 = 32.0;

pub struct Ctx<'a> {
    pub pool: &'a ThreadPool,
    pub run: &'a Resolved,
}

impl Ctx<'_> {
    fn base(&self) -> ModelParams {
        self.run.config.params.model(self.run.config.seed)
    }

    fn bins(&self) -> usize {
        self.run.config.output.bins
    }

    fn sweep_points(&self) -> Vec<(f64, ModelParams)> {
        let c = &self.run.config;
        match &self.run.sweep {
            Some((axis, values)) => values.iter().map(|&v| (v, axis.apply(&c.params, v).model(c.seed))).collect(),
            None => vec![(c.params.omega_ratio, self.base())],
        }
    }

    /// Runs `f` on every item on the pool, keeping the input order.
    fn map<T: Sync, U: Send>(&self, items: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    fn trajectories(&self, p: &ModelParams, opts: &RunOptions) -> Result<Vec<TrajectoryRecord>> {
        let psi0 = excited_state(p);
        let parts = self.map(&blocks(p.n_traj as u64), |r| run_ensemble(p, p.period(), &psi0, r.clone(), opts))?;
        Ok(parts.into_iter().flatten().collect())
    }

    fn echoes(&self, p: &ModelParams) -> Result<Vec<EchoOutcome>> {
        let parts = self.map(&blocks(p.n_traj as u64), |r| run_echo_ensemble(p, r.clone()))?;
        Ok(parts.into_iter().flatten().collect())
    }
}

fn blocks(n: u64) -> Vec<Range<u64>> {
    (0..n).step_by(CHUNK).map(|s| s..(s + CHUNK as u64).min(n)).collect()
}

pub fn run(ctx: &Ctx) -> Result<Artifacts> {
    match ctx.run.mode {
        Mode::GpDist => gp_dist(ctx),
        Mode::GpVsOmega => gp_vs_omega(ctx),
        Mode::EchoDist => echo_dist(ctx),
        Mode::EchoVsOmega => echo_vs_omega(ctx),
        Mode::NoJumpGp => no_jump_gp(ctx),
        Mode::PhaseDiagram => phase_diagram(ctx),
        Mode::SectorMap => sector_map(ctx),
        Mode::DeltaTheta => delta(ctx),
        Mode::LindbladCheck => lindblad_check(ctx),
        Mode::UnravelCompare => unravel_compare(ctx),
    }
}

fn gp_histogram(records: &[TrajectoryRecord], bins: usize) -> CircularHistogram {
    let mut h = CircularHistogram::new(bins);
    for r in records {
        match r.gp {
            Some(g) => h.accumulate(g),
            None => h.exclude(),
        }
    }
    h
}

fn mean_jumps<'a>(records: impl ExactSizeIterator<Item = &'a TrajectoryRecord>) -> f64 {
    let n = records.len().max(1) as f64;
    records.map(|r| r.n_jumps() as f64).sum::<f64>() / n
}

fn ensemble_summary(records: &[TrajectoryRecord], h: &CircularHistogram) -> Value {
    let mut excluded = BTreeMap::new();
    for r in records {
        let key = match r.exclusion {
            Some(Exclusion::SingularJump) => "singular_jump",
            Some(Exclusion::OrthogonalEndpoints) => "orthogonal_endpoints",
            None => continue,
        };
        *excluded.entry(key).or_insert(0usize) += 1;
    }
    json!({
        "n_traj": records.len(),
        "mean_jumps": mean_jumps(records.iter()),
        "excluded": excluded,
        "circular_mean_rad": circular_mean(h).ok().map(|m| m.value()),
        "circular_variance": circular_variance(h).ok(),
    })
}

fn peaks_json(peaks: &[Peak], n_bins: usize) -> Value {
    peaks
        .iter()
        .map(|p| json!({ "center_rad": p.center, "mass": p.mass, "width_bins": p.width(n_bins) }))
        .collect()
}

fn histogram_table(name: &'static str, h: &CircularHistogram) -> Table {
    let mut t = Table::new(name, &["bin_center_rad", "count", "probability"]);
    for (i, (&c, p)) in h.bins.iter().zip(h.probabilities()).enumerate() {
        t.push(vec![num(h.bin_center(i)), c.to_string(), num(p)]);
    }
    t
}

fn gp_no_jump_of(p: &ModelParams) -> Result<Option<f64>> {
    Ok(run_no_jump(p, p.period(), &excited_state(p))?.gp.map(|g| g.value()))
}

fn gp_dist(ctx: &Ctx) -> Result<Artifacts> {
    let p = ctx.base();
    let records = ctx.trajectories(&p, &RunOptions::default())?;
    let h = gp_histogram(&records, ctx.bins());
    let berry = wrap_phase(-PI * (1.0 - p.theta.cos()))?.value();
    let results = json!({
        "ensemble": ensemble_summary(&records, &h),
        "gp_no_jump_rad": gp_no_jump_of(&p)?,
        "gp_berry_rad": berry,
        "peaks": peaks_json(&find_peaks(&h, GP_PROMINENCE), h.n_bins()),
    });
    Ok(Artifacts { tables: vec![histogram_table("gp_histogram", &h)], results })
}

fn gp_vs_omega(ctx: &Ctx) -> Result<Artifacts> {
    let mut dist = Table::new("gp_vs_omega", &["omega_ratio", "bin_center_rad", "probability"]);
    let mut summary = Table::new(
        "gp_vs_omega_summary",
        &["omega_ratio", "mean_jumps", "n_excluded", "circular_mean_rad", "circular_variance", "gp_no_jump_rad"],
    );
    let mut points = vec![];
    for (w, p) in ctx.sweep_points() {
        let records = ctx.trajectories(&p, &RunOptions::default())?;
        let h = gp_histogram(&records, ctx.bins());
        for (i, pr) in h.probabilities().into_iter().enumerate() {
            dist.push(vec![num(w), num(h.bin_center(i)), num(pr)]);
        }
        let mean = circular_mean(&h).ok().map(|m| m.value());
        let var = circular_variance(&h).ok();
        let phi0 = gp_no_jump_of(&p)?;
        summary.push(vec![
            num(w),
            num(mean_jumps(records.iter())),
            h.n_excluded.to_string(),
            opt(mean),
            opt(var),
            opt(phi0),
        ]);
        points.push(json!({ "omega_ratio": w, "ensemble": ensemble_summary(&records, &h), "gp_no_jump_rad": phi0 }));
    }
    Ok(Artifacts { tables: vec![dist, summary], results: json!({ "points": points }) })
}

fn echo_histogram(outcomes: &[EchoOutcome], bins: usize) -> CircularHistogram {
    let mut h = CircularHistogram::echo(bins);
    outcomes.iter().for_each(|o| h.accumulate_value(o.varphi));
    h
}

fn echo_dist(ctx: &Ctx) -> Result<Artifacts> {
    let p = ctx.base();
    let outcomes = ctx.echoes(&p)?;
    let h = echo_histogram(&outcomes, ctx.bins());
    let results = json!({
        "n_traj": outcomes.len(),
        "mean_jumps": mean_jumps(outcomes.iter().map(|o| &o.record)),
        "echo_no_jump_varphi_rad": echo_no_jump(&p)?.varphi,
        "peaks": peaks_json(&find_peaks_with(&h, ECHO_PROMINENCE, ECHO_SEPARATION), h.n_bins()),
    });
    Ok(Artifacts { tables: vec![histogram_table("echo_histogram", &h)], results })
}

fn echo_vs_omega(ctx: &Ctx) -> Result<Artifacts> {
    let mut dist = Table::new("echo_vs_omega", &["omega_ratio", "bin_center_rad", "probability"]);
    let mut summary = Table::new("echo_vs_omega_summary", &["omega_ratio", "mean_jumps", "echo_no_jump_varphi_rad"]);
    let mut points = vec![];
    for (w, p) in ctx.sweep_points() {
        let outcomes = ctx.echoes(&p)?;
        let h = echo_histogram(&outcomes, ctx.bins());
        for (i, pr) in h.probabilities().into_iter().enumerate() {
            dist.push(vec![num(w), num(h.bin_center(i)), num(pr)]);
        }
        let jumps = mean_jumps(outcomes.iter().map(|o| &o.record));
        let smooth = echo_no_jump(&p)?.varphi;
        summary.push(vec![num(w), num(jumps), num(smooth)]);
        points.push(json!({ "omega_ratio": w, "mean_jumps": jumps, "echo_no_jump_varphi_rad": smooth }));
    }
    Ok(Artifacts { tables: vec![dist, summary], results: json!({ "points": points }) })
}

fn no_jump_gp(ctx: &Ctx) -> Result<Artifacts> {
    let points = ctx.sweep_points();
    let rows = ctx.map(&points, |(_, p)| {
        let rec = run_no_jump(p, p.period(), &excited_state(p))?;
        Ok((rec.gp.map(|g| g.value()), rec.return_probability(), gp_no_jump_approx(p).value(), echo_no_jump(p)?.varphi))
    })?;
    let mut t = Table::new(
        "no_jump",
        &["omega_ratio", "gamma_ratio", "theta_pi_units", "gp_no_jump_rad", "gp_closed_form_rad", "echo_varphi_rad", "survival"],
    );
    for ((_, p), (gp, survival, approx, varphi)) in points.iter().zip(&rows) {
        t.push(vec![
            num(p.drive_freq),
            num(p.gamma),
            num(p.theta / PI),
            opt(*gp),
            num(*approx),
            num(*varphi),
            num(*survival),
        ]);
    }
    let axis = ctx.run.sweep.as_ref().map(|(a, _)| a.column());
    Ok(Artifacts { tables: vec![t], results: json!({ "axis": axis, "points": rows.len() }) })
}

fn window<'a>(ctx: &'a Ctx) -> (&'a [f64], &'a [f64]) {
    let (om, ga) = ctx.run.window.as_ref().expect("validated window");
    (om, ga)
}

fn cells(om: &[f64], ga: &[f64]) -> Vec<(f64, f64)> {
    om.iter().flat_map(|&w| ga.iter().map(move |&g| (w, g))).collect()
}

fn phase_diagram(ctx: &Ctx) -> Result<Artifacts> {
    let base = ctx.base();
    let (om, ga) = window(ctx);
    let grid = cells(om, ga);
    let values = ctx.map(&grid, |&(w, g)| {
        let c = no_jump_cycle(&base.with_drive(w).with_gamma(g), CELL_STEPS_PER_TIME);
        Ok((c.gp.map(|x| x.value()), c.survival))
    })?;
    let span = |v: &[f64]| (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (ow, gw) = (span(om), span(ga));
    let roots = if om.len() > 1 && ga.len() > 1 {
        match locate_singularities(base.theta, ow, gw) {
            Ok(r) => r,
            Err(Error::NoRootInWindow(_)) => vec![],
            Err(e) => return Err(e),
        }
    } else {
        vec![]
    };
    // Flag the cell nearest each root, measuring distance in grid spacings.
    let step = |v: &[f64], (lo, hi): (f64, f64)| (hi - lo) / (v.len().max(2) - 1) as f64;
    let (sw, sg) = (step(om, ow), step(ga, gw));
    let mut singular = vec![false; grid.len()];
    for r in &roots {
        let nearest = grid
            .iter()
            .map(|&(w, g)| ((w - r.omega_ratio) / sw).powi(2) + ((g - r.gamma_ratio) / sg).powi(2))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i);
        if let Some(i) = nearest {
            singular[i] = true;
        }
    }
    let mut t = Table::new("phase_diagram", &["omega_ratio", "gamma_ratio", "gp_no_jump_rad", "survival", "singular"]);
    for (((w, g), (gp, s)), flag) in grid.iter().zip(&values).zip(&singular) {
        t.push(vec![num(*w), num(*g), opt(*gp), num(*s), u8::from(*flag).to_string()]);
    }
    let mut r = Table::new("singularities", &["omega_ratio", "gamma_ratio", "survival"]);
    for s in &roots {
        r.push(vec![num(s.omega_ratio), num(s.gamma_ratio), num(s.survival)]);
    }
    let results = json!({
        "theta_rad": base.theta,
        "cells": grid.len(),
        "singularities": roots.iter().map(|s| json!({ "omega_ratio": s.omega_ratio, "gamma_ratio": s.gamma_ratio, "survival": s.survival })).collect::<Vec<_>>(),
    });
    Ok(Artifacts { tables: vec![t, r], results })
}

fn sector_map(ctx: &Ctx) -> Result<Artifacts> {
    let base = ctx.base();
    let w = ctx.run.config.window.as_ref().expect("validated window");
    let mut thetas: Vec<f64> = w.theta_pi_units.iter().map(|t| t * PI).collect();
    thetas.extend([0.0, PI]);
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    let (om, ga) = window(ctx);
    let grid = cells(om, ga);
    let threshold = w.singular_survival;
    let out = ctx.map(&grid, |&(wr, gr)| sector_cell(&base, &thetas, wr, gr, threshold))?;
    let mut t = Table::new(
        "sector_map",
        &["omega_ratio", "gamma_ratio", "winding", "theta_c_rad", "min_survival", "singular"],
    );
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for c in &out {
        t.push(vec![
            num(c.omega_ratio),
            num(c.gamma_ratio),
            opt(c.winding),
            num(c.theta_c),
            num(c.min_survival),
            u8::from(c.singular).to_string(),
        ]);
        *counts.entry(c.winding.map_or("singular".into(), |n| n.to_string())).or_default() += 1;
    }
    Ok(Artifacts { tables: vec![t], results: json!({ "cells": out.len(), "windings": counts }) })
}

fn delta(ctx: &Ctx) -> Result<Artifacts> {
    let p1 = ctx.base();
    let c = ctx.run.config.compare.expect("validated compare point");
    let p2 = p1.with_drive(c.omega_ratio).with_gamma(c.gamma_ratio);
    let d = delta_theta(&p1, &p2)?;
    let mut t = Table::new("delta_theta", &["theta_rad", "delta"]);
    for (th, x) in d.thetas.iter().zip(&d.delta) {
        t.push(vec![num(*th), num(*x)]);
    }
    let results = json!({
        "point_1": { "omega_ratio": p1.drive_freq, "gamma_ratio": p1.gamma },
        "point_2": { "omega_ratio": p2.drive_freq, "gamma_ratio": p2.gamma },
        "delta_at_pi": d.delta.last(),
    });
    Ok(Artifacts { tables: vec![t], results })
}

/// Snapshot steps shared by the ensemble and the master-equation run, and
/// the master-equation states at those steps.
fn sampled_oracle(ctx: &Ctx, p: &ModelParams) -> Result<(RunOptions, Vec<f64>, Vec<Matrix2c>, f64)> {
    let period = p.period();
    let (n, _) = p.time_grid(period)?;
    let every = (n / ctx.run.config.output.samples).max(1);
    let mut steps: Vec<usize> = (0..=n).step_by(every).collect();
    if steps.last() != Some(&n) {
        steps.push(n);
    }
    let lind = integrate_with(&DensityMatrix::pure(&excited_state(p)), p, period, every)?;
    let states = lind.states.iter().map(|s| *s.matrix()).collect();
    Ok((RunOptions { snapshot_steps: steps, ..Default::default() }, lind.times, states, lind.expected_jumps))
}

fn lindblad_check(ctx: &Ctx) -> Result<Artifacts> {
    let p = ctx.base();
    let (opts, times, oracle, expected) = sampled_oracle(ctx, &p)?;
    let records = ctx.trajectories(&p, &opts)?;
    let mut t = Table::new("lindblad_check", &["time", "trace_distance"]);
    let mut worst: f64 = 0.0;
    for (k, (time, rho)) in times.iter().zip(&oracle).enumerate() {
        let d = trace_distance(&ensemble_density(&records, k), rho);
        worst = worst.max(d);
        t.push(vec![num(*time), num(d)]);
    }
    let bound = 3.0 / (records.len() as f64).sqrt();
    let results = json!({
        "n_traj": records.len(),
        "mean_jumps": mean_jumps(records.iter()),
        "expected_jumps": expected,
        "max_trace_distance": worst,
        "bound": bound,
        "within_bound": worst < bound,
    });
    Ok(Artifacts { tables: vec![t], results })
}

fn unravel_compare(ctx: &Ctx) -> Result<Artifacts> {
    let displaced = ctx.base();
    let direct = displaced.with_lambda(0.0);
    let (opts, times, oracle, _) = sampled_oracle(ctx, &direct)?;
    let a = ctx.trajectories(&direct, &opts)?;
    let b = ctx.trajectories(&displaced, &opts)?;
    let (ha, hb) = (gp_histogram(&a, ctx.bins()), gp_histogram(&b, ctx.bins()));
    let mut hist = Table::new("unravel_histograms", &["bin_center_rad", "probability_direct", "probability_displaced"]);
    for (i, (pa, pb)) in ha.probabilities().into_iter().zip(hb.probabilities()).enumerate() {
        hist.push(vec![num(ha.bin_center(i)), num(pa), num(pb)]);
    }
    let mut dist = Table::new(
        "unravel_distance",
        &["time", "direct_vs_displaced", "displaced_vs_master", "direct_vs_master"],
    );
    let mut worst: f64 = 0.0;
    for (k, (time, rho)) in times.iter().zip(&oracle).enumerate() {
        let (ra, rb) = (ensemble_density(&a, k), ensemble_density(&b, k));
        let d = [trace_distance(&ra, &rb), trace_distance(&rb, rho), trace_distance(&ra, rho)];
        worst = worst.max(d[0]).max(d[1]);
        dist.push(vec![num(*time), num(d[0]), num(d[1]), num(d[2])]);
    }
    let bound = 3.0 / (a.len() as f64).sqrt();
    let results = json!({
        "lambda_ratio": displaced.lambda_disp,
        "direct": ensemble_summary(&a, &ha),
        "displaced": ensemble_summary(&b, &hb),
        "max_trace_distance": worst,
        "bound": bound,
        "within_bound": worst < bound,
    });
    Ok(Artifacts { tables: vec![hist, dist], results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Axis;

    #[test]
    fn blocks_cover_streams_in_order() {
        let b = blocks(2 * CHUNK as u64 + 5);
        assert_eq!(b.len(), 3);
        assert_eq!(b[0], 0..CHUNK as u64);
        assert_eq!(b[2].end, 2 * CHUNK as u64 + 5);
        assert!(blocks(0).is_empty());
    }

    #[test]
    fn axis_column_names() {
        assert_eq!(Axis::Omega.column(), "omega_ratio");
        assert_eq!(Axis::Theta.column(), "theta_pi_units");
    }
}
