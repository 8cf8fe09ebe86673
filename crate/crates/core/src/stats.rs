//! Monte Carlo aggregation, log-log exponent fits and chi-square comparisons.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, tags};

/// Streaming mean/variance with an order-sensitive but deterministic merge.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    pub n: u64,
    pub mean: f64,
    m2: f64,
    /// Samples with a nonzero value.
    pub hits: u64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        if x != 0.0 {
            self.hits += 1;
        }
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
        self.hits += other.hits;
    }

    /// Sample variance (0 for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Binomial standard error `sqrt(p (1 - p) / n)`.
pub fn binomial_stderr(hits: u64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = hits as f64 / n as f64;
    (p * (1.0 - p) / n as f64).sqrt()
}

/// One point of an estimate series; `t` holds the grid variable (time or distance).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub n: u64,
    pub hits: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<i64>>,
}

impl EstimateRecord {
    pub fn from_stats(t: f64, s: &RunningStats, seed: u64) -> Self {
        EstimateRecord { t, estimate: s.mean, stderr: s.stderr(), n: s.n, hits: s.hits, seed, mode: None, target: None }
    }

    /// Indicator estimate with binomial standard error.
    pub fn from_hits(t: f64, hits: u64, n: u64, seed: u64) -> Self {
        let estimate = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        EstimateRecord { t, estimate, stderr: binomial_stderr(hits, n), n, hits, seed, mode: None, target: None }
    }

    pub fn with_mode(mut self, mode: &str) -> Self {
        self.mode = Some(mode.to_string());
        self
    }

    pub fn with_target(mut self, target: Vec<i64>) -> Self {
        self.target = Some(target);
        self
    }
}

/// An estimate series for one scenery seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateSeries {
    pub records: Vec<EstimateRecord>,
    pub scenery_seed: u64,
    pub mode: String,
    pub params: BTreeMap<String, f64>,
}

impl EstimateSeries {
    pub fn new(scenery_seed: u64, mode: &str) -> Self {
        EstimateSeries { records: Vec::new(), scenery_seed, mode: mode.to_string(), params: BTreeMap::new() }
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn push(&mut self, r: EstimateRecord) {
        self.records.push(r);
    }

    pub fn ts(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.estimate).collect()
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut s = EstimateSeries::default();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: EstimateRecord = serde_json::from_str(&line)?;
            s.scenery_seed = r.seed;
            if let Some(m) = &r.mode {
                s.mode = m.clone();
            }
            s.records.push(r);
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub min_hits: u64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { min_hits: 25, resamples: 10_000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_ci: (f64, f64),
    pub r_squared: f64,
    pub points_used: usize,
    pub points_excluded: usize,
}

/// Weighted least squares of `y` on `x`: `(slope, intercept, r_squared)`.
fn wls(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}

/// Fit `ln(estimate) = intercept + slope ln(t)`.
///
/// Points need a positive estimate and at least `min_hits` hits. Weights are
/// `(estimate / stderr)^2`; if any usable point has zero stderr the fit is
/// unweighted. The slope interval is the 2.5/97.5 percentile range of slopes
/// refitted on per-point lognormal resamples of the estimates.
pub fn fit_exponent(series: &EstimateSeries, opts: &FitOptions) -> Result<ExponentFit> {
    let mut pts = Vec::new();
    let mut excluded = 0;
    for r in &series.records {
        if r.estimate > 0.0 && r.hits >= opts.min_hits && r.t > 0.0 {
            pts.push(r);
        } else {
            if r.hits == 0 {
                log::warn!("t={} excluded: zero hits", r.t);
            } else {
                log::warn!("t={} excluded: {} hits < {}", r.t, r.hits, opts.min_hits);
            }
            excluded += 1;
        }
    }
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable points (need 3; {} excluded)",
            pts.len(),
            excluded
        )));
    }
    let x: Vec<f64> = pts.iter().map(|r| r.t.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|r| r.estimate.ln()).collect();
    let rel: Vec<f64> = pts.iter().map(|r| r.stderr / r.estimate).collect();
    let weighted = rel.iter().all(|&s| s > 0.0);
    let w: Vec<f64> = if weighted { rel.iter().map(|s| 1.0 / (s * s)).collect() } else { vec![1.0; pts.len()] };
    let (slope, intercept, r_squared) = wls(&x, &y, &w);

    let mut lo = slope;
    let mut hi = slope;
    if opts.resamples > 0 && rel.iter().any(|&s| s > 0.0) {
        let mut rng = stream_rng(opts.seed, &[tags::BOOTSTRAP]);
        let mut slopes = Vec::with_capacity(opts.resamples);
        let mut yb = vec![0.0; y.len()];
        for _ in 0..opts.resamples {
            for i in 0..y.len() {
                let z: f64 = StandardNormal.sample(&mut rng);
                yb[i] = y[i] + rel[i] * z;
            }
            slopes.push(wls(&x, &yb, &w).0);
        }
        slopes.sort_by(f64::total_cmp);
        let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
        lo = q(0.025).min(slope);
        hi = q(0.975).max(slope);
    }
    Ok(ExponentFit { slope, intercept, slope_ci: (lo, hi), r_squared, points_used: pts.len(), points_excluded: excluded })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub slope: f64,
    pub slope_ci: (f64, f64),
    pub theoretical: f64,
    pub tolerance: f64,
    pub within_tolerance: bool,
    pub theory_in_ci: bool,
    pub pass: bool,
}

pub fn compare_to_theory(fit: &ExponentFit, theoretical: f64, tolerance: f64) -> Verdict {
    let within_tolerance = (fit.slope - theoretical).abs() <= tolerance;
    let theory_in_ci = fit.slope_ci.0 <= theoretical && theoretical <= fit.slope_ci.1;
    Verdict {
        slope: fit.slope,
        slope_ci: fit.slope_ci,
        theoretical,
        tolerance,
        within_tolerance,
        theory_in_ci,
        pass: within_tolerance || theory_in_ci,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
}

fn chi_square_p(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    dist.sf(statistic)
}

/// Minimum expected count per bin before pooling.
pub const MIN_EXPECTED: f64 = 5.0;

/// Two-sample chi-square homogeneity test on categorical counts.
///
/// Bins whose pooled count is below `2 * MIN_EXPECTED` are merged into one
/// overflow bin.
pub fn chi_square_two_sample<K: Ord + Clone>(a: &BTreeMap<K, u64>, b: &BTreeMap<K, u64>) -> Result<ChiSquare> {
    let na: u64 = a.values().sum();
    let nb: u64 = b.values().sum();
    if na == 0 || nb == 0 {
        return Err(Error::InsufficientData("empty sample in chi-square test".into()));
    }
    let mut keys: Vec<&K> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut bins: Vec<(u64, u64)> = Vec::new();
    let mut rest = (0u64, 0u64);
    for k in keys {
        let ca = a.get(k).copied().unwrap_or(0);
        let cb = b.get(k).copied().unwrap_or(0);
        if ((ca + cb) as f64) < 2.0 * MIN_EXPECTED {
            rest.0 += ca;
            rest.1 += cb;
        } else {
            bins.push((ca, cb));
        }
    }
    if rest.0 + rest.1 > 0 {
        bins.push(rest);
    }
    let ka = (nb as f64 / na as f64).sqrt();
    let kb = (na as f64 / nb as f64).sqrt();
    let statistic: f64 = bins
        .iter()
        .map(|&(ca, cb)| {
            let d = ka * ca as f64 - kb * cb as f64;
            d * d / (ca + cb) as f64
        })
        .sum();
    let dof = bins.len().saturating_sub(1);
    Ok(ChiSquare { statistic, dof, p_value: chi_square_p(statistic, dof), bins: bins.len() })
}

/// Goodness-of-fit test of `observed` against cell probabilities `expected`.
///
/// Cells absent from `expected` and the probability mass outside it form one
/// remainder cell; cells with expected count below `MIN_EXPECTED` are pooled into it.
pub fn chi_square_gof<K: Ord + Clone>(observed: &BTreeMap<K, u64>, expected: &BTreeMap<K, f64>) -> Result<ChiSquare> {
    let n: u64 = observed.values().sum();
    if n == 0 {
        return Err(Error::InsufficientData("empty sample in chi-square test".into()));
    }
    let nf = n as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut rest_obs = n as f64;
    let mut rest_p = 1.0;
    for (k, &p) in expected {
        if p * nf >= MIN_EXPECTED {
            let o = observed.get(k).copied().unwrap_or(0) as f64;
            bins.push((o, p * nf));
            rest_obs -= o;
            rest_p -= p;
        }
    }
    let rest_exp = rest_p.max(0.0) * nf;
    let mut statistic: f64 = bins.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let mut cells = bins.len();
    if rest_exp > 1e-9 * nf {
        statistic += (rest_obs - rest_exp) * (rest_obs - rest_exp) / rest_exp;
        cells += 1;
    } else if rest_obs > 0.0 {
        statistic = f64::INFINITY;
    }
    let dof = cells.saturating_sub(1);
    Ok(ChiSquare { statistic, dof, p_value: chi_square_p(statistic, dof), bins: cells })
}

/// Two-sided normal z-score agreement `|a - b| <= k * sqrt(se_a^2 + se_b^2) + slack`.
pub fn within_sigma(a: f64, se_a: f64, b: f64, se_b: f64, k: f64, slack: f64) -> bool {
    (a - b).abs() <= k * (se_a * se_a + se_b * se_b).sqrt() + slack
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(noise: f64, seed: u64) -> EstimateSeries {
        let mut rng = stream_rng(seed, &[99]);
        let mut s = EstimateSeries::new(1, "synthetic");
        for k in 5..=12 {
            let t = 2f64.powi(k);
            let clean = 3.0 * t.powf(-1.25);
            let z: f64 = StandardNormal.sample(&mut rng);
            let est = clean * (1.0 + noise * z);
            s.push(EstimateRecord {
                t,
                estimate: est,
                stderr: noise * clean,
                n: 1000,
                hits: 1000,
                seed: 1,
                mode: None,
                target: None,
            });
        }
        s
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let s = synthetic(0.0, 1);
        let f = fit_exponent(&s, &FitOptions::default()).unwrap();
        assert!((f.slope + 1.25).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
        assert_eq!(f.points_used, 8);
        assert_eq!(f.slope_ci, (f.slope, f.slope));
    }

    #[test]
    fn two_points_is_insufficient() {
        let mut s = synthetic(0.0, 1);
        s.records.truncate(2);
        assert!(matches!(fit_exponent(&s, &FitOptions::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn zero_hit_points_are_excluded_and_counted() {
        let mut s = synthetic(0.0, 1);
        s.records[0].estimate = 0.0;
        s.records[0].hits = 0;
        s.records[1].hits = 3;
        let f = fit_exponent(&s, &FitOptions::default()).unwrap();
        assert_eq!(f.points_used, 6);
        assert_eq!(f.points_excluded, 2);
    }

    #[test]
    fn scaling_equivariance() {
        let s = synthetic(0.01, 2);
        let opts = FitOptions { resamples: 0, ..Default::default() };
        let base = fit_exponent(&s, &opts).unwrap();
        let mut scaled = s.clone();
        for r in &mut scaled.records {
            r.estimate *= 7.0;
            r.stderr *= 7.0;
        }
        let f = fit_exponent(&scaled, &opts).unwrap();
        assert!((f.slope - base.slope).abs() < 1e-12);
        assert!((f.intercept - base.intercept - 7f64.ln()).abs() < 1e-12);
        let mut shifted = s.clone();
        for r in &mut shifted.records {
            r.t *= 5.0;
        }
        let g = fit_exponent(&shifted, &opts).unwrap();
        assert!((g.slope - base.slope).abs() < 1e-12);
    }

    #[test]
    fn verdicts() {
        let fit = |slope, ci| ExponentFit { slope, intercept: 0.0, slope_ci: ci, r_squared: 1.0, points_used: 5, points_excluded: 0 };
        assert!(compare_to_theory(&fit(-1.24, (-1.24, -1.24)), -1.25, 0.15).pass);
        assert!(!compare_to_theory(&fit(-0.9, (-1.0, -0.8)), -1.25, 0.15).pass);
        let v = compare_to_theory(&fit(-1.3, (-1.4, -1.1)), -1.25, 0.0);
        assert!(v.pass && v.theory_in_ci && !v.within_tolerance);
    }

    #[test]
    fn running_stats_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut all = RunningStats::new();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = RunningStats::new();
        let mut b = RunningStats::new();
        xs[..300].iter().for_each(|&x| a.push(x));
        xs[300..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert_eq!(a.n, all.n);
        assert!((a.mean - all.mean).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-9);
    }

    #[test]
    fn jsonl_round_trip() {
        let s = synthetic(0.01, 3);
        let text = s.to_jsonl();
        assert!(text.lines().next().unwrap().starts_with("{\"t\":32.0,\"estimate\":"));
        let back = EstimateSeries::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back.records, s.records);
    }

    #[test]
    fn chi_square_identical_samples() {
        let a: BTreeMap<i32, u64> = (0..10).map(|k| (k, 100 + k as u64)).collect();
        let r = chi_square_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let b: BTreeMap<i32, u64> = (0..10).map(|k| (k, 100 + 40 * k as u64)).collect();
        assert!(chi_square_two_sample(&a, &b).unwrap().p_value < 1e-3);
    }

    #[test]
    fn chi_square_gof_exact_counts() {
        let expected: BTreeMap<i32, f64> = [(0, 0.5), (1, 0.25), (2, 0.25)].into_iter().collect();
        let observed: BTreeMap<i32, u64> = [(0, 500), (1, 250), (2, 250)].into_iter().collect();
        let r = chi_square_gof(&observed, &expected).unwrap();
        assert!(r.statistic.abs() < 1e-9);
        assert_eq!(r.dof, 2);
    }
}
