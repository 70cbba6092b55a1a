//! Circular statistics for phase samples: binned histograms with exact
//! resultant moments, merge for parallel reduction, and peak extraction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{wrap_phase, Phase};

pub const DEFAULT_BINS: usize = 200;

/// Histogram over `(lo, hi]`, plus the resultant Σe^{iφ} of every binned
/// sample.
///
/// A full-circle histogram wraps samples into (−π, π] and treats its ends as
/// adjacent. A histogram over a shorter branch clamps samples into range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircularHistogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: Vec<u64>,
    pub n_total: u64,
    /// Samples counted in `n_total` but not binned (e.g. singular
    /// trajectories).
    pub n_excluded: u64,
    pub resultant_re: f64,
    pub resultant_im: f64,
}

impl CircularHistogram {
    /// Full circle (−π, π].
    pub fn new(n_bins: usize) -> Self {
        Self::with_range(-PI, PI, n_bins)
    }

    /// Branch `(lo, hi]` with `hi − lo ≤ 2π`.
    pub fn with_range(lo: f64, hi: f64, n_bins: usize) -> Self {
        assert!(n_bins > 0 && hi > lo && hi - lo <= 2.0 * PI + 1e-12, "bad histogram range");
        CircularHistogram { lo, hi, bins: vec![0; n_bins], n_total: 0, n_excluded: 0, resultant_re: 0.0, resultant_im: 0.0 }
    }

    /// The echo display branch [1.25π, 1.5π].
    pub fn echo(n_bins: usize) -> Self {
        Self::with_range(crate::echo::BRANCH_LO, crate::echo::BRANCH_HI, n_bins)
    }

    pub fn is_full_circle(&self) -> bool {
        (self.hi - self.lo - 2.0 * PI).abs() < 1e-12
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins.len() as f64
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.bin_width()
    }

    /// Index of the bin containing `x`.
    pub fn bin_index(&self, x: f64) -> usize {
        let x = if self.is_full_circle() { self.hi - (self.hi - x).rem_euclid(2.0 * PI) } else { x };
        let k = ((x - self.lo) / self.bin_width()).ceil() as i64 - 1;
        k.clamp(0, self.bins.len() as i64 - 1) as usize
    }

    pub fn n_binned(&self) -> u64 {
        self.n_total - self.n_excluded
    }

    /// Adds one sample given as a real angle.
    pub fn accumulate_value(&mut self, x: f64) {
        if !x.is_finite() {
            self.exclude();
            return;
        }
        let i = self.bin_index(x);
        self.bins[i] += 1;
        self.n_total += 1;
        let (s, c) = x.sin_cos();
        self.resultant_re += c;
        self.resultant_im += s;
    }

    pub fn accumulate(&mut self, sample: Phase) {
        self.accumulate_value(sample.value());
    }

    /// Counts a sample that carries no phase.
    pub fn exclude(&mut self) {
        self.n_total += 1;
        self.n_excluded += 1;
    }

    /// Adds `other`'s samples. Both must have the same range and binning.
    pub fn merge(&mut self, other: &CircularHistogram) -> Result<()> {
        if self.lo != other.lo || self.hi != other.hi || self.bins.len() != other.bins.len() {
            return Err(Error::InvalidParams("merging histograms with different binning".into()));
        }
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        self.n_total += other.n_total;
        self.n_excluded += other.n_excluded;
        self.resultant_re += other.resultant_re;
        self.resultant_im += other.resultant_im;
        Ok(())
    }

    /// Normalized bin masses (fractions of binned samples).
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.n_binned().max(1) as f64;
        self.bins.iter().map(|&c| c as f64 / n).collect()
    }

    /// |Σe^{iφ}| / n.
    pub fn mean_resultant_length(&self) -> Result<f64> {
        let n = self.n_binned();
        if n == 0 {
            return Err(Error::EmptyDistribution);
        }
        Ok(self.resultant_re.hypot(self.resultant_im) / n as f64)
    }
}

/// arg Σe^{iφ}.
pub fn circular_mean(h: &CircularHistogram) -> Result<Phase> {
    if h.n_binned() == 0 {
        return Err(Error::EmptyDistribution);
    }
    wrap_phase(h.resultant_im.atan2(h.resultant_re))
}

/// 1 − |Σe^{iφ}|/n, in [0, 1].
pub fn circular_variance(h: &CircularHistogram) -> Result<f64> {
    Ok((1.0 - h.mean_resultant_length()?).clamp(0.0, 1.0))
}

/// Histogram of `samples`.
pub fn histogram_of(samples: impl IntoIterator<Item = Phase>, n_bins: usize) -> CircularHistogram {
    let mut h = CircularHistogram::new(n_bins);
    samples.into_iter().for_each(|s| h.accumulate(s));
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub center: f64,
    pub bin: usize,
    /// Bin mass at the maximum.
    pub height: f64,
    pub prominence: f64,
    /// Mass of the contiguous bins at or above half prominence.
    pub mass: f64,
    /// Inclusive bin range of that region (may wrap on a full circle).
    pub first_bin: usize,
    pub last_bin: usize,
}

impl Peak {
    /// Number of bins in the peak region.
    pub fn width(&self, n_bins: usize) -> usize {
        (self.last_bin + n_bins - self.first_bin) % n_bins + 1
    }
}

/// Local maxima of the bin masses whose topographic prominence is at least
/// `min_prominence` (in probability units), sorted by decreasing mass.
///
/// On a full circle the ends are adjacent; on a branch the edges bound the
/// search. Flat tops count once, at their first bin.
pub fn find_peaks(h: &CircularHistogram, min_prominence: f64) -> Vec<Peak> {
    let y = h.probabilities();
    let n = y.len();
    let wrap = h.is_full_circle();
    let at = |i: isize| -> Option<f64> {
        if wrap {
            Some(y[i.rem_euclid(n as isize) as usize])
        } else if (0..n as isize).contains(&i) {
            Some(y[i as usize])
        } else {
            None
        }
    };

    let mut peaks = Vec::new();
    for i in 0..n {
        let yi = y[i];
        if yi <= 0.0 {
            continue;
        }
        // Rising edge on the left, then no higher bin before the plateau ends.
        if at(i as isize - 1).is_some_and(|l| l >= yi) {
            continue;
        }
        let mut j = i as isize + 1;
        while j < i as isize + n as isize && at(j) == Some(yi) {
            j += 1;
        }
        if at(j).is_some_and(|r| r > yi) {
            continue;
        }
        if wrap && j == i as isize + n as isize {
            // Entirely flat.
            continue;
        }

        let base_side = |dir: isize| -> f64 {
            let mut lowest = yi;
            let mut k = i as isize + dir;
            for _ in 0..n {
                match at(k) {
                    Some(v) if v > yi => break,
                    Some(v) => lowest = lowest.min(v),
                    None => break,
                }
                k += dir;
            }
            lowest
        };
        let base = base_side(-1).max(base_side(1));
        let prominence = yi - base;
        if prominence < min_prominence {
            continue;
        }

        let level = base + 0.5 * prominence;
        let mut mass = 0.0;
        let mut lo = i as isize;
        while lo > i as isize - n as isize + 1 && at(lo - 1).is_some_and(|v| v >= level) {
            lo -= 1;
        }
        let mut hi = i as isize;
        while hi - lo + 1 < n as isize && at(hi + 1).is_some_and(|v| v >= level) {
            hi += 1;
        }
        for k in lo..=hi {
            mass += at(k).unwrap_or(0.0);
        }
        peaks.push(Peak {
            center: h.bin_center(i),
            bin: i,
            height: yi,
            prominence,
            mass,
            first_bin: lo.rem_euclid(n as isize) as usize,
            last_bin: hi.rem_euclid(n as isize) as usize,
        });
    }
    peaks.sort_by(|a, b| b.mass.total_cmp(&a.mass));
    peaks
}

/// [`find_peaks`], then merges peaks whose maxima lie within
/// `min_separation` bins of each other into one peak centered on the
/// highest, with the mass of the combined region.
pub fn find_peaks_with(h: &CircularHistogram, min_prominence: f64, min_separation: usize) -> Vec<Peak> {
    let mut peaks = find_peaks(h, min_prominence);
    if min_separation == 0 || peaks.len() < 2 {
        return peaks;
    }
    let n = h.n_bins();
    let y = h.probabilities();
    let wrap = h.is_full_circle();
    peaks.sort_by_key(|p| p.bin);
    let gap = |a: &Peak, b: &Peak| if wrap { (b.bin + n - a.bin) % n } else { b.bin - a.bin };

    let mut clusters: Vec<Vec<Peak>> = Vec::new();
    for p in peaks {
        match clusters.last_mut() {
            Some(c) if gap(c.last().unwrap(), &p) <= min_separation => c.push(p),
            _ => clusters.push(vec![p]),
        }
    }
    if wrap && clusters.len() > 1 {
        let first = clusters[0][0];
        let last = *clusters.last().unwrap().last().unwrap();
        if gap(&last, &first) <= min_separation {
            let head = clusters.remove(0);
            clusters.last_mut().unwrap().extend(head);
        }
    }

    let mut merged: Vec<Peak> = clusters
        .into_iter()
        .map(|c| {
            let top = *c.iter().max_by(|a, b| a.height.total_cmp(&b.height)).unwrap();
            let (first_bin, last_bin) = (c[0].first_bin, c.last().unwrap().last_bin);
            let span = if wrap { (last_bin + n - first_bin) % n + 1 } else { last_bin - first_bin + 1 };
            let mass = (0..span).map(|k| y[(first_bin + k) % n]).sum();
            let prominence = c.iter().map(|p| p.prominence).fold(0.0, f64::max);
            Peak { prominence, mass, first_bin, last_bin, ..top }
        })
        .collect();
    merged.sort_by(|a, b| b.mass.total_cmp(&a.mass));
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ph(x: f64) -> Phase {
        wrap_phase(x).unwrap()
    }

    #[test]
    fn single_sample() {
        let mut h = CircularHistogram::new(DEFAULT_BINS);
        h.accumulate(ph(1.2));
        assert_abs_diff_eq!(circular_mean(&h).unwrap().value(), 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(circular_variance(&h).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn antipodal_pair_has_unit_variance() {
        let h = histogram_of([ph(0.3), ph(0.3 + PI)], DEFAULT_BINS);
        assert_abs_diff_eq!(circular_variance(&h).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_antipodes() {
        let samples = [0.5, 0.5, 0.5, 0.5 + PI].map(ph);
        let h = histogram_of(samples, DEFAULT_BINS);
        assert_abs_diff_eq!(circular_variance(&h).unwrap(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn uniform_samples_approach_unit_variance() {
        let n = 10_000;
        let h = histogram_of((0..n).map(|k| ph(-PI + 2.0 * PI * (k as f64 + 0.5) / n as f64)), DEFAULT_BINS);
        assert!(circular_variance(&h).unwrap() > 1.0 - 1e-9);
        assert!(h.bins.iter().all(|&c| c == 50));
    }

    #[test]
    fn empty_is_an_error() {
        let mut h = CircularHistogram::new(10);
        assert_eq!(circular_mean(&h), Err(Error::EmptyDistribution));
        h.exclude();
        assert_eq!(circular_variance(&h), Err(Error::EmptyDistribution));
        assert_eq!(h.n_total, 1);
    }

    #[test]
    fn bin_edges_are_right_closed() {
        let h = CircularHistogram::new(4);
        assert_eq!(h.bin_index(PI), 3);
        assert_eq!(h.bin_index(-PI), 3);
        assert_eq!(h.bin_index(-PI + 1e-9), 0);
        assert_eq!(h.bin_index(-PI / 2.0), 0);
        assert_eq!(h.bin_index(0.0), 1);
        let e = CircularHistogram::echo(10);
        assert_eq!(e.bin_index(1.25 * PI), 0);
        assert_eq!(e.bin_index(2.0), 0);
        assert_eq!(e.bin_index(1.5 * PI), 9);
        assert_eq!(e.bin_index(9.0), 9);
    }

    #[test]
    fn delta_has_one_peak() {
        let h = histogram_of(std::iter::repeat_n(ph(-1.0), 50), DEFAULT_BINS);
        let peaks = find_peaks(&h, 0.01);
        assert_eq!(peaks.len(), 1);
        assert_abs_diff_eq!(peaks[0].mass, 1.0);
        assert!((peaks[0].center + 1.0).abs() < h.bin_width());
    }

    #[test]
    fn peak_across_the_seam() {
        let samples = [PI - 0.01, PI - 0.01, -PI + 0.01, -PI + 0.01, 0.0].map(ph);
        let peaks = find_peaks(&histogram_of(samples, 100), 0.05);
        assert_eq!(peaks.len(), 2);
        assert_abs_diff_eq!(peaks[0].mass, 0.8, epsilon = 1e-12);
        assert_eq!(peaks[0].width(100), 2);
    }

    #[test]
    fn three_bumps_on_a_branch() {
        let mut h = CircularHistogram::echo(DEFAULT_BINS);
        for (x, n) in [(1.3 * PI, 30), (1.375 * PI, 50), (1.47 * PI, 20)] {
            for _ in 0..n {
                h.accumulate_value(x);
            }
        }
        for k in 0..200 {
            h.accumulate_value(1.25 * PI + 0.25 * PI * (k as f64 + 0.5) / 200.0);
        }
        let peaks = find_peaks(&h, 0.02);
        assert_eq!(peaks.len(), 3);
        assert!((peaks[0].center - 1.375 * PI).abs() <= h.bin_width());
    }

    #[test]
    fn close_maxima_merge() {
        let mut h = CircularHistogram::echo(DEFAULT_BINS);
        let w = h.bin_width();
        for (i, n) in [(13, 30), (15, 32), (100, 50)] {
            for _ in 0..n {
                h.accumulate_value(h.lo + (i as f64 + 0.5) * w);
            }
        }
        assert_eq!(find_peaks(&h, 0.01).len(), 3);
        let merged = find_peaks_with(&h, 0.01, 3);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].bin, 15);
        assert_abs_diff_eq!(merged[0].mass, 62.0 / 112.0, epsilon = 1e-12);
        assert_eq!(merged[0].width(DEFAULT_BINS), 3);
    }

    #[test]
    fn merge_rejects_mismatched_bins() {
        let mut a = CircularHistogram::new(10);
        assert!(a.merge(&CircularHistogram::new(20)).is_err());
    }

    fn fill(xs: &[f64]) -> CircularHistogram {
        let mut h = CircularHistogram::new(64);
        for &x in xs {
            h.accumulate_value(x);
        }
        h
    }

    proptest! {
        #[test]
        fn rotation_shifts_mean(xs in prop::collection::vec(-3.0f64..3.0, 1..40), chi in -PI..PI) {
            // Keep the samples clustered so the mean is well defined.
            let xs: Vec<f64> = xs.iter().map(|x| 0.4 * x).collect();
            let a = fill(&xs);
            let b = fill(&xs.iter().map(|x| x + chi).collect::<Vec<_>>());
            let ma = circular_mean(&a).unwrap();
            let mb = circular_mean(&b).unwrap();
            prop_assert!((ma.distance_to(mb) - wrap_phase(chi).unwrap().value()).abs() < 1e-9);
            prop_assert!((circular_variance(&a).unwrap() - circular_variance(&b).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn moments_ignore_binning(xs in prop::collection::vec(-PI..PI, 1..40)) {
            let mut a = CircularHistogram::new(50);
            let mut b = CircularHistogram::new(100);
            for &x in &xs {
                a.accumulate_value(x);
                b.accumulate_value(x);
            }
            prop_assert_eq!(circular_variance(&a).unwrap(), circular_variance(&b).unwrap());
            prop_assert_eq!(circular_mean(&a).unwrap(), circular_mean(&b).unwrap());
        }

        #[test]
        fn merge_is_associative_and_commutative(
            xs in prop::collection::vec(-PI..PI, 0..30),
            ys in prop::collection::vec(-PI..PI, 0..30),
            zs in prop::collection::vec(-PI..PI, 0..30),
        ) {
            let (a, b, c) = (fill(&xs), fill(&ys), fill(&zs));
            let mut left = a.clone();
            left.merge(&b).unwrap();
            left.merge(&c).unwrap();
            let mut bc = b.clone();
            bc.merge(&c).unwrap();
            let mut right = a.clone();
            right.merge(&bc).unwrap();
            prop_assert_eq!(&left.bins, &right.bins);
            prop_assert_eq!(left.n_total, right.n_total);
            prop_assert!((left.resultant_re - right.resultant_re).abs() < 1e-12);
            prop_assert!((left.resultant_im - right.resultant_im).abs() < 1e-12);
            let mut ba = b.clone();
            ba.merge(&a).unwrap();
            let mut ab = a.clone();
            ab.merge(&b).unwrap();
            prop_assert_eq!(&ab.bins, &ba.bins);
            // Merging equals accumulating everything into one histogram.
            let all: Vec<f64> = xs.iter().chain(&ys).chain(&zs).copied().collect();
            prop_assert_eq!(&fill(&all).bins, &left.bins);
        }

        #[test]
        fn variance_in_unit_interval(xs in prop::collection::vec(-10.0f64..10.0, 1..60)) {
            let v = circular_variance(&fill(&xs)).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
