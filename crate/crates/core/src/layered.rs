//! The layered conductance walk on `Z^{d1+d2}`: conductance `z(x2)` along the
//! first `d1` directions and `1` along the last `d2`.
//!
//! The walk is `X_t = (S1_{A2(t)}, S2_t)` where `A2` is the scenery clock of the
//! second coordinate, so the first coordinate can be integrated out exactly:
//! `P(X_t = (x1, x2)) = E[p_{A2(t)}(0, x1); S2_t = x2]`.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::lattice::{Point, MAX_DIM};
use crate::numeric::Neumaier;
use crate::parallel::reduce_walkers;
use crate::rng::{stream_rng, tags};
use crate::rwrs::shared_walks;
use crate::scenery::{SceneryField, ScenerySource, SceneryView, DENSE_BUDGET};
use crate::stats::{EstimateRecord, EstimateSeries, RunningStats};
use crate::walk::{kernel, killed_kernel_1d, sample_displacement, BridgeSampler, Walker};

use rand::Rng;
use rand_distr::{Distribution, Exp1};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredModel {
    pub d1: usize,
    pub d2: usize,
    pub field: SceneryField,
}

impl LayeredModel {
    pub fn new(d1: usize, d2: usize, field: SceneryField) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return arg_err("d1 and d2 must be >= 1");
        }
        if d1 + d2 > MAX_DIM {
            return arg_err(format!("d1 + d2 must be <= {MAX_DIM}"));
        }
        if field.dimension != d2 {
            return Err(Error::Dimension { expected: d2, got: field.dimension });
        }
        Ok(LayeredModel { d1, d2, field })
    }

    pub fn dim(&self) -> usize {
        self.d1 + self.d2
    }

    /// Transient iff `d1 + d2 >= 3`, or the clock has infinite mean (`alpha < 1`) on `Z^{1+1}`.
    pub fn is_transient(&self) -> bool {
        self.dim() >= 3 || self.field.mean().is_infinite()
    }

    /// Scenery view sized for walks up to time `t_max`: dense around the origin when it fits.
    pub fn view(&self, t_max: f64) -> SceneryView<'_> {
        let wanted = (12.0 * t_max.max(1.0).sqrt()).ceil().min(1e7) as i64 + 16;
        // the cache is only an accelerator, so shrink it to the budget rather than dropping it
        let fits = (((DENSE_BUDGET as f64).powf(1.0 / self.d2 as f64) - 1.0) / 2.0).floor() as i64;
        SceneryView::build(&self.field, wanted.min(fits), DENSE_BUDGET)
    }

    fn check_target(&self, target: &Target) -> Result<()> {
        target.x1.ensure_dim(self.d1)?;
        target.x2.ensure_dim(self.d2)
    }
}

/// A site `(x1, x2)` of `Z^{d1} x Z^{d2}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub x1: Point,
    pub x2: Point,
}

impl Target {
    pub fn new(x1: &[i64], x2: &[i64]) -> Result<Self> {
        Ok(Target { x1: Point::from_slice(x1)?, x2: Point::from_slice(x2)? })
    }

    pub fn origin(d1: usize, d2: usize) -> Self {
        Target { x1: Point::origin(d1), x2: Point::origin(d2) }
    }

    /// `(n e1, 0)`.
    pub fn axis(d1: usize, d2: usize, n: i64) -> Self {
        Target { x1: Point::axis(d1, 0, n), x2: Point::origin(d2) }
    }

    pub fn coords(&self) -> Vec<i64> {
        let mut c = self.x1.coords().to_vec();
        c.extend_from_slice(self.x2.coords());
        c
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return arg_err(format!("time must be finite and >= 0, got {t}"));
    }
    Ok(())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return arg_err("time grid is empty");
    }
    let mut prev = 0.0;
    for &t in grid {
        check_time(t)?;
        if t <= prev && prev > 0.0 {
            return arg_err("time grid must be strictly increasing");
        }
        prev = t;
    }
    Ok(())
}

/// `X_t` by the time change: walk `S2` to `t`, then displace `S1` by intensity `A2(t)`.
fn timechange_on<S: ScenerySource, R: Rng + ?Sized>(src: &S, d1: usize, d2: usize, t: f64, rng: &mut R) -> (Point, Point) {
    let mut walker = Walker::new(Point::origin(d2), rng);
    let mut a = Neumaier::new();
    walker.advance(t, rng, |site, from, to| a.add(src.z(site) * (to - from)));
    let x1 = sample_displacement(d1, a.value(), rng);
    (x1, walker.pos)
}

/// Result of an event-driven run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GillespieRun {
    pub x1: Point,
    pub x2: Point,
    pub events: u64,
}

fn gillespie_on<S: ScenerySource, R: Rng + ?Sized>(src: &S, d1: usize, d2: usize, t: f64, rng: &mut R) -> GillespieRun {
    let mut x1 = Point::origin(d1);
    let mut x2 = Point::origin(d2);
    let mut now = 0.0;
    let mut events = 0;
    let layer = 2.0 * d1 as f64;
    let vertical = 2.0 * d2 as f64;
    loop {
        let z = src.z(&x2);
        let rate = layer * z + vertical;
        let e: f64 = Exp1.sample(rng);
        now += e / rate;
        if now > t {
            break;
        }
        events += 1;
        // branch first, then the direction, so huge z cannot swamp the vertical choice
        if rng.random::<f64>() * rate < layer * z {
            let dir = rng.random_range(0..2 * d1);
            x1.step(dir / 2, dir % 2 == 0);
        } else {
            let dir = rng.random_range(0..2 * d2);
            x2.step(dir / 2, dir % 2 == 0);
        }
    }
    GillespieRun { x1, x2, events }
}

/// Result of a constant-speed run: `Y_t = X_{B^{-1}(t)}` with `B(s) = 2 d1 A2(s) + 2 d2 s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsrwRun {
    pub x1: Point,
    pub x2: Point,
    /// `B^{-1}(t)`.
    pub inverse_time: f64,
    /// `A2(B^{-1}(t))`.
    pub clock: f64,
}

fn csrw_on<S: ScenerySource, R: Rng + ?Sized>(src: &S, d1: usize, d2: usize, t: f64, rng: &mut R) -> CsrwRun {
    let mut walker = Walker::new(Point::origin(d2), rng);
    let mut a = Neumaier::new();
    let mut b = 0.0;
    let layer = 2.0 * d1 as f64;
    let vertical = 2.0 * d2 as f64;
    loop {
        let (site, from, to) = walker.next_segment(rng);
        let z = src.z(&site);
        let slope = layer * z + vertical;
        let db = slope * (to - from);
        if b + db >= t {
            // B is continuous and strictly increasing, so the inverse is the root in this segment
            let ds = ((t - b) / slope).clamp(0.0, to - from);
            a.add(z * ds);
            let x1 = sample_displacement(d1, a.value(), rng);
            return CsrwRun { x1, x2: site, inverse_time: from + ds, clock: a.value() };
        }
        b += db;
        a.add(z * (to - from));
    }
}

/// Exact sample of `X_t` through the time-change representation.
pub fn sample_timechange<R: Rng + ?Sized>(model: &LayeredModel, t: f64, rng: &mut R) -> Result<(Point, Point)> {
    check_time(t)?;
    Ok(timechange_on(&model.field, model.d1, model.d2, t, rng))
}

/// Exact sample of `X_t` by event-driven simulation of the variable-speed chain.
pub fn direct_gillespie<R: Rng + ?Sized>(model: &LayeredModel, t: f64, rng: &mut R) -> Result<(Point, Point)> {
    let run = gillespie_run(model, t, rng)?;
    Ok((run.x1, run.x2))
}

pub fn gillespie_run<R: Rng + ?Sized>(model: &LayeredModel, t: f64, rng: &mut R) -> Result<GillespieRun> {
    check_time(t)?;
    Ok(gillespie_on(&model.field, model.d1, model.d2, t, rng))
}

/// Sample of the constant-speed walk `Y_t`.
pub fn csrw_timechange<R: Rng + ?Sized>(model: &LayeredModel, t: f64, rng: &mut R) -> Result<(Point, Point)> {
    let run = csrw_run(model, t, rng)?;
    Ok((run.x1, run.x2))
}

pub fn csrw_run<R: Rng + ?Sized>(model: &LayeredModel, t: f64, rng: &mut R) -> Result<CsrwRun> {
    check_time(t)?;
    Ok(csrw_on(&model.field, model.d1, model.d2, t, rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMethod {
    TimeChange,
    Gillespie,
    Csrw,
}

impl SampleMethod {
    fn tag(self) -> u64 {
        match self {
            SampleMethod::TimeChange => tags::TIMECHANGE,
            SampleMethod::Gillespie => tags::GILLESPIE,
            SampleMethod::Csrw => tags::CSRW,
        }
    }
}

/// `n` independent endpoints at time `t` as points of `Z^{d1+d2}`, in walker order.
pub fn simulate_layered(model: &LayeredModel, t: f64, n: u64, method: SampleMethod, seed: u64) -> Result<Vec<Point>> {
    check_time(t)?;
    let view = model.view(t);
    let (d1, d2) = (model.d1, model.d2);
    let scenery_seed = model.field.seed;
    Ok(reduce_walkers(
        n,
        Vec::new,
        |out: &mut Vec<Point>, w| {
            let mut rng = stream_rng(seed, &[method.tag(), scenery_seed, 0, w]);
            let (x1, x2) = match method {
                SampleMethod::TimeChange => timechange_on(&view, d1, d2, t, &mut rng),
                SampleMethod::Gillespie => {
                    let r = gillespie_on(&view, d1, d2, t, &mut rng);
                    (r.x1, r.x2)
                }
                SampleMethod::Csrw => {
                    let r = csrw_on(&view, d1, d2, t, &mut rng);
                    (r.x1, r.x2)
                }
            };
            out.push(Point::concat(&x1, &x2).expect("dimensions checked by the model"));
        },
        |acc, part| acc.extend(part),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// `p_{A2(t)}(0, x1) 1{S2_t = x2}` on free walks of `S2`.
    RaoBlackwell,
    /// `p_t(0, x2) E[p_{A2(t)}(0, x1) | S2_t = x2]` on exact bridges of `S2`.
    RaoBlackwellBridge,
    /// Indicator of `X_t = (x1, x2)` from event-driven runs.
    DirectGillespie,
    /// `E[p_{A2(t)}(0, x1)] p_t(0, x2)`: ignores the pinning bias, diagnostic only.
    Factorized,
}

impl KernelMode {
    pub fn label(self) -> &'static str {
        match self {
            KernelMode::RaoBlackwell => "rao-blackwell",
            KernelMode::RaoBlackwellBridge => "rao-blackwell-bridge",
            KernelMode::DirectGillespie => "direct-gillespie",
            KernelMode::Factorized => "factorized",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub t: f64,
    pub target: Vec<i64>,
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    pub hits: u64,
    pub mode: KernelMode,
}

impl KernelEstimate {
    pub fn to_record(&self, scenery_seed: u64) -> EstimateRecord {
        EstimateRecord {
            t: self.t,
            estimate: self.mean,
            stderr: self.stderr,
            n: self.n,
            hits: self.hits,
            seed: scenery_seed,
            mode: Some(self.mode.label().to_string()),
            target: Some(self.target.clone()),
        }
    }
}

#[inline]
fn layer_kernel(d1: usize, a: f64, x1: &Point) -> f64 {
    kernel(d1, a, x1.coords(), 1.0).unwrap_or(0.0)
}

#[allow(clippy::ptr_arg)] // used as a reduce_walkers merge, which passes `&mut Vec`
fn merge_stats(acc: &mut Vec<Vec<RunningStats>>, part: Vec<Vec<RunningStats>>) {
    for (row, prow) in acc.iter_mut().zip(part) {
        for (s, p) in row.iter_mut().zip(prow) {
            s.merge(&p);
        }
    }
}

/// Estimate at grid time `grid[k]` for every target in `targets[k]`.
///
/// Unpinned estimates drop the `S2_t = x2` constraint and estimate `P(X1_t = x1)`.
fn estimate_grid(
    model: &LayeredModel,
    grid: &[f64],
    targets: &[Vec<Target>],
    n: u64,
    mode: KernelMode,
    pinned: bool,
    seed: u64,
) -> Result<Vec<Vec<KernelEstimate>>> {
    check_grid(grid)?;
    if n == 0 {
        return arg_err("n_samples must be >= 1");
    }
    if targets.len() != grid.len() {
        return arg_err("one target list per grid time is required");
    }
    for tk in targets {
        for tg in tk {
            model.check_target(tg)?;
        }
    }
    let t_max = *grid.last().expect("grid checked nonempty");
    let view = model.view(t_max);
    let (d1, d2) = (model.d1, model.d2);
    let scenery_seed = model.field.seed;
    let init = || targets.iter().map(|tk| vec![RunningStats::new(); tk.len()]).collect::<Vec<_>>();
    let stats: Vec<Vec<RunningStats>> = match mode {
        KernelMode::RaoBlackwell | KernelMode::Factorized => shared_walks(
            &view,
            d2,
            grid,
            n,
            seed,
            tags::LAYERED_WALK,
            init,
            |acc, k, o| {
                for (s, tg) in acc[k].iter_mut().zip(&targets[k]) {
                    let on_target = mode == KernelMode::Factorized || !pinned || o.end == tg.x2;
                    s.push(if on_target { layer_kernel(d1, o.a, &tg.x1) } else { 0.0 });
                }
            },
            merge_stats,
        ),
        KernelMode::DirectGillespie => {
            let mut all = Vec::with_capacity(grid.len());
            for (k, &t) in grid.iter().enumerate() {
                let tk = &targets[k];
                let row = reduce_walkers(
                    n,
                    || vec![RunningStats::new(); tk.len()],
                    |acc, w| {
                        let mut rng = stream_rng(seed, &[tags::GILLESPIE, scenery_seed, k as u64, w]);
                        let r = gillespie_on(&view, d1, d2, t, &mut rng);
                        for (s, tg) in acc.iter_mut().zip(tk) {
                            let hit = r.x1 == tg.x1 && (!pinned || r.x2 == tg.x2);
                            s.push(if hit { 1.0 } else { 0.0 });
                        }
                    },
                    |acc, part| {
                        for (s, p) in acc.iter_mut().zip(&part) {
                            s.merge(p);
                        }
                    },
                );
                all.push(row);
            }
            all
        }
        KernelMode::RaoBlackwellBridge => {
            if !pinned {
                return arg_err("bridge mode needs a pinned second coordinate");
            }
            let mut all = Vec::with_capacity(grid.len());
            for (k, &t) in grid.iter().enumerate() {
                let m = targets[k].len() as u64;
                let mut row = Vec::with_capacity(targets[k].len());
                for (j, tg) in targets[k].iter().enumerate() {
                    let index = k as u64 * m + j as u64;
                    let s = reduce_walkers(
                        n,
                        || (RunningStats::new(), BridgeSampler::new()),
                        |(s, sampler), w| {
                            let mut rng = stream_rng(seed, &[tags::LAYERED_BRIDGE, scenery_seed, index, w]);
                            sampler.sample(t, 1.0, &tg.x2, &mut rng).expect("time checked");
                            let mut a = Neumaier::new();
                            sampler.segments(Point::origin(d2), t, |site, from, to| a.add(view.z(site) * (to - from)));
                            s.push(layer_kernel(d1, a.value(), &tg.x1));
                        },
                        |acc, part| acc.0.merge(&part.0),
                    )
                    .0;
                    row.push(s);
                }
                all.push(row);
            }
            all
        }
    };
    let mut out = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        let mut row = Vec::with_capacity(targets[k].len());
        for (s, tg) in stats[k].iter().zip(&targets[k]) {
            let scale = match mode {
                KernelMode::Factorized if pinned => kernel(d2, t, tg.x2.coords(), 1.0)?,
                KernelMode::RaoBlackwellBridge => kernel(d2, t, tg.x2.coords(), 1.0)?,
                _ => 1.0,
            };
            row.push(KernelEstimate {
                t,
                target: tg.coords(),
                mean: s.mean * scale,
                stderr: s.stderr() * scale,
                n: s.n,
                hits: s.hits,
                mode,
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// Unbiased estimate of `P(X_t = (x1, x2))` for a fixed scenery.
pub fn kernel_estimate(model: &LayeredModel, t: f64, target: &Target, n: u64, mode: KernelMode, seed: u64) -> Result<KernelEstimate> {
    let mut rows = estimate_grid(model, &[t], &[vec![*target]], n, mode, true, seed)?;
    Ok(rows.remove(0).remove(0))
}

/// Estimates for several targets at one time on shared samples (per target for bridges).
pub fn kernel_estimates(model: &LayeredModel, t: f64, targets: &[Target], n: u64, mode: KernelMode, seed: u64) -> Result<Vec<KernelEstimate>> {
    let mut rows = estimate_grid(model, &[t], &[targets.to_vec()], n, mode, true, seed)?;
    Ok(rows.remove(0))
}

fn series_from(model: &LayeredModel, rows: Vec<Vec<KernelEstimate>>, label: &str) -> EstimateSeries {
    let mut series = EstimateSeries::new(model.field.seed, label)
        .param("d1", model.d1 as f64)
        .param("d2", model.d2 as f64)
        .param("alpha", model.field.alpha);
    for row in rows {
        for e in row {
            series.push(e.to_record(model.field.seed));
        }
    }
    series
}

/// `P(X_t = 0)` along the time grid.
pub fn ondiag_estimate(model: &LayeredModel, t_grid: &[f64], n: u64, mode: KernelMode, seed: u64) -> Result<EstimateSeries> {
    let targets = vec![vec![Target::origin(model.d1, model.d2)]; t_grid.len()];
    let rows = estimate_grid(model, t_grid, &targets, n, mode, true, seed)?;
    Ok(series_from(model, rows, mode.label()))
}

/// First coordinate of the moderate-deviation target `floor(t^delta) e1`;
/// `delta = 0` is the on-diagonal target `0`.
pub fn moddev_target(t: f64, delta: f64) -> i64 {
    if delta == 0.0 {
        0
    } else {
        t.powf(delta).floor() as i64
    }
}

/// `P(X_t = (floor(t^delta) e1, 0))` (pinned) or `P(X1_t = floor(t^delta) e1)` (unpinned).
pub fn moddev_estimate(
    model: &LayeredModel,
    t_grid: &[f64],
    delta: f64,
    n: u64,
    pinned: bool,
    mode: KernelMode,
    seed: u64,
) -> Result<EstimateSeries> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return arg_err(format!("delta must be finite and >= 0, got {delta}"));
    }
    let targets: Vec<Vec<Target>> =
        t_grid.iter().map(|&t| vec![Target::axis(model.d1, model.d2, moddev_target(t, delta))]).collect();
    let rows = estimate_grid(model, t_grid, &targets, n, mode, pinned, seed)?;
    let label = format!("{}-{}", mode.label(), if pinned { "pinned" } else { "unpinned" });
    Ok(series_from(model, rows, &label).param("delta", delta))
}

/// Ratio of the quenched kernel to the kernel of the averaged environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LcltRatio {
    pub target: Vec<i64>,
    pub ratio: f64,
    pub stderr: f64,
    pub estimate: f64,
    pub reference: f64,
}

/// `P^omega(X_t = x) / P^{E omega}(X_t = x)` for each target.
pub fn lclt_ratio(model: &LayeredModel, t: f64, targets: &[Target], n: u64, mode: KernelMode, seed: u64) -> Result<Vec<LcltRatio>> {
    let mean = model.field.mean();
    if !mean.is_finite() || mean <= 0.0 {
        return Err(Error::Regime(format!(
            "the averaged walk needs 0 < E[z] < inf (alpha > 1); got E[z] = {mean}"
        )));
    }
    let estimates = kernel_estimates(model, t, targets, n, mode, seed)?;
    estimates
        .into_iter()
        .zip(targets)
        .map(|(e, tg)| {
            let reference = kernel(model.d1, t, tg.x1.coords(), mean)? * kernel(model.d2, t, tg.x2.coords(), 1.0)?;
            Ok(LcltRatio { target: e.target, ratio: e.mean / reference, stderr: e.stderr / reference, estimate: e.mean, reference })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenConfig {
    pub points_per_octave: usize,
    /// `t_min = max(1, n^eps0)`.
    pub t_min_exponent: f64,
    /// Extra octaves integrated below `t_min`, shrinking the head bound.
    pub head_octaves: usize,
    /// `t_max = factor n^2 / (2 E[z] ∧ 1)`.
    pub t_max_factor: f64,
    pub n_samples: u64,
    /// Bridges per time point for the tail fit.
    pub tail_samples: u64,
    pub seed: u64,
    /// Kill the walk on leaving `[-r, r]^{d1+d2}`.
    pub box_radius: Option<i64>,
}

impl Default for GreenConfig {
    fn default() -> Self {
        GreenConfig {
            points_per_octave: 8,
            t_min_exponent: 0.5,
            head_octaves: 6,
            t_max_factor: 64.0,
            n_samples: 10_000,
            tail_samples: 1_000,
            seed: 0,
            box_radius: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenEstimate {
    pub n: i64,
    /// Quadrature plus extrapolated tail.
    pub value: f64,
    pub stderr: f64,
    pub quadrature: f64,
    pub tail_mass: f64,
    /// Fitted power of the integrand over the last two octaves, if enough points were positive.
    pub tail_slope: Option<f64>,
    /// Bound on the integral over `[0, t_lo]`.
    pub head_bound: f64,
    /// `tail_mass + head_bound`.
    pub bias_bound: f64,
    pub t_lo: f64,
    pub t_max: f64,
    pub grid_points: usize,
    pub n_samples: u64,
}

/// Grid exponents `j` (times `2^{j/p}`) spanned for distance `n`.
fn green_span(model: &LayeredModel, n: i64, cfg: &GreenConfig) -> (i64, i64) {
    let p = cfg.points_per_octave as f64;
    let t_min = (n as f64).powf(cfg.t_min_exponent).max(1.0);
    let lo = (p * t_min.log2()).floor() as i64 - (cfg.head_octaves * cfg.points_per_octave) as i64;
    let mean = model.field.mean();
    let t_max = cfg.t_max_factor * (n * n) as f64 / (2.0 * mean).min(1.0);
    let hi = (p * t_max.log2()).ceil() as i64;
    (lo, hi)
}

/// Monte Carlo Green function `g(0, (n e1, 0))` for several distances on shared walks.
///
/// Each walker integrates `p_{A2(t)}(0, n e1) 1{S2_t = 0}` by the trapezoid rule in
/// `ln t` up to a common `t_max`. Beyond it the integrand is a power law fitted to
/// bridge estimates `p_t(0, 0) E[p_{A2(t)}(0, n e1) | S2_t = 0]` over the last two
/// octaves; pinned walks are too rare there to fit on. Killed walks decay
/// exponentially and get no extrapolated tail.
pub fn green_survey(model: &LayeredModel, ns: &[i64], cfg: &GreenConfig) -> Result<Vec<GreenEstimate>> {
    if ns.is_empty() || ns.iter().any(|&n| n < 0) {
        return arg_err("distances must be a nonempty list of nonnegative integers");
    }
    if cfg.points_per_octave == 0 || cfg.n_samples < 2 || !(cfg.t_max_factor > 0.0) {
        return arg_err("green config needs points_per_octave >= 1, n_samples >= 2, t_max_factor > 0");
    }
    if let Some(r) = cfg.box_radius {
        if ns.iter().any(|&n| n > r) || r < 0 {
            return arg_err(format!("targets must lie inside the box of radius {r}"));
        }
    } else if !model.is_transient() {
        return Err(Error::Regime(format!(
            "the walk on Z^{}+{} with E[z] = {} is recurrent, so its Green function is infinite",
            model.d1,
            model.d2,
            model.field.mean()
        )));
    }
    let p = cfg.points_per_octave as f64;
    let spans: Vec<(i64, i64)> = ns.iter().map(|&n| green_span(model, n, cfg)).collect();
    let j0 = spans.iter().map(|s| s.0).min().expect("nonempty");
    let j1 = spans.iter().map(|s| s.1).max().expect("nonempty");
    let spans: Vec<(i64, i64)> = spans.into_iter().map(|(lo, _)| (lo, j1)).collect();
    let grid: Vec<f64> = (j0..=j1).map(|j| (j as f64 / p).exp2()).collect();
    let h = std::f64::consts::LN_2 / p;
    // trapezoid weights in ln t, times the Jacobian t
    let weights: Vec<Vec<f64>> = spans
        .iter()
        .map(|&(lo, hi)| {
            grid.iter()
                .enumerate()
                .map(|(k, &t)| {
                    let j = j0 + k as i64;
                    if j < lo || j > hi {
                        0.0
                    } else if j == lo || j == hi {
                        0.5 * h * t
                    } else {
                        h * t
                    }
                })
                .collect()
        })
        .collect();
    let targets: Vec<Point> = ns.iter().map(|&n| Point::axis(model.d1, 0, n)).collect();
    let t_end = *grid.last().expect("nonempty");
    let view = model.view(t_end);
    let (d1, d2) = (model.d1, model.d2);
    let scenery_seed = model.field.seed;
    let len = grid.len();
    let radius = cfg.box_radius;
    let kern = |a: f64, x1: &Point| -> f64 {
        match radius {
            Some(r) => x1.coords().iter().map(|&x| killed_kernel_1d(a, x, r)).product(),
            None => layer_kernel(d1, a, x1),
        }
    };
    struct Acc {
        integrals: Vec<RunningStats>,
        points: Vec<Vec<RunningStats>>,
    }
    let init = || Acc { integrals: vec![RunningStats::new(); ns.len()], points: vec![vec![RunningStats::new(); len]; ns.len()] };
    let acc = reduce_walkers(
        cfg.n_samples,
        init,
        |acc, w| {
            let mut rng = stream_rng(cfg.seed, &[tags::GREEN, scenery_seed, 0, w]);
            let mut walker = Walker::new(Point::origin(d2), &mut rng);
            let mut a = Neumaier::new();
            let mut alive = true;
            let mut integral = vec![0.0; ns.len()];
            for (k, &t) in grid.iter().enumerate() {
                if alive {
                    walker.advance(t, &mut rng, |site, from, to| {
                        if let Some(r) = radius {
                            if site.sup_norm() > r {
                                alive = false;
                            }
                        }
                        a.add(view.z(site) * (to - from));
                    });
                }
                let pinned = alive && walker.pos.is_origin();
                for (i, x1) in targets.iter().enumerate() {
                    let v = if pinned && weights[i][k] > 0.0 { kern(a.value(), x1) } else { 0.0 };
                    integral[i] += weights[i][k] * v;
                    acc.points[i][k].push(v);
                }
            }
            for (s, v) in acc.integrals.iter_mut().zip(integral) {
                s.push(v);
            }
        },
        |acc, part| {
            for (s, p) in acc.integrals.iter_mut().zip(&part.integrals) {
                s.merge(p);
            }
            merge_stats(&mut acc.points, part.points);
        },
    );
    let per_octave = cfg.points_per_octave;
    let k_end = grid.len() - 1;
    let tail_ks: Vec<usize> = if radius.is_none() {
        let stride = (per_octave / 2).max(1);
        (0..=4).rev().map(|m| k_end.saturating_sub(m * stride)).collect()
    } else {
        Vec::new()
    };
    let tail_fits = bridge_tail(&view, d1, d2, &grid, &tail_ks, &targets, cfg.tail_samples, cfg.seed)?;
    let mut out = Vec::with_capacity(ns.len());
    for (i, &n) in ns.iter().enumerate() {
        let (lo, hi) = spans[i];
        let k_lo = (lo - j0) as usize;
        let k_hi = (hi - j0) as usize;
        let pts = &acc.points[i];
        let head_bound = grid[k_lo] * pts[k_lo..=(k_lo + per_octave).min(k_hi)].iter().map(|s| s.mean).fold(0.0, f64::max);
        let t_max = grid[k_hi];
        let (tail_mass, tail_se, tail_slope, extra_bias) = if radius.is_some() {
            // a killed walk decays exponentially: charge a t^-2 tail from the last point to the bias
            (0.0, 0.0, None, t_max * pts[k_hi].mean)
        } else {
            let fit: Vec<(f64, f64)> =
                tail_fits.iter().filter(|p| p.1[i].0 > 0.0).map(|p| (p.0.ln(), p.1[i].0.ln())).collect();
            if fit.len() >= 3 {
                let (slope, intercept) = least_squares(&fit);
                if slope >= -1.0 {
                    return Err(Error::Regime(format!(
                        "integrand decays like t^{slope:.3} over the last two octaves at n = {n}; the tail is not integrable"
                    )));
                }
                let f_end = (intercept + slope * t_max.ln()).exp();
                let (m, se) = tail_fits.last().expect("five tail points").1[i];
                let tail = f_end * t_max / (-slope - 1.0);
                (tail, tail * se / m, Some(slope), 0.0)
            } else {
                let f_end = tail_fits.iter().map(|p| p.1[i].0).fold(0.0, f64::max);
                (0.0, 0.0, None, f_end * t_max)
            }
        };
        let quadrature = acc.integrals[i].mean;
        let stderr = (acc.integrals[i].stderr().powi(2) + tail_se.powi(2)).sqrt();
        out.push(GreenEstimate {
            n,
            value: quadrature + tail_mass,
            stderr,
            quadrature,
            tail_mass,
            tail_slope,
            head_bound,
            bias_bound: tail_mass + head_bound + extra_bias,
            t_lo: grid[k_lo],
            t_max,
            grid_points: k_hi - k_lo + 1,
            n_samples: cfg.n_samples,
        });
    }
    Ok(out)
}

/// `(t, [(mean, stderr)])` per target.
type TailPoint = (f64, Vec<(f64, f64)>);

/// Pinned integrand `p_t(0, 0) E[p_{A2(t)}(0, x1) | S2_t = 0]` at `grid[k]` for each `k` in `ks`
/// and each target, as `(t, [(mean, stderr)])`.
#[allow(clippy::too_many_arguments)]
fn bridge_tail<S: ScenerySource>(
    view: &S,
    d1: usize,
    d2: usize,
    grid: &[f64],
    ks: &[usize],
    targets: &[Point],
    n: u64,
    seed: u64,
) -> Result<Vec<TailPoint>> {
    let scenery_seed = view.field().seed;
    let origin = Point::origin(d2);
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let t = grid[k];
        let p0 = kernel(d2, t, origin.coords(), 1.0)?;
        let (stats, _) = reduce_walkers(
            n,
            || (vec![RunningStats::new(); targets.len()], BridgeSampler::new()),
            |(stats, sampler), w| {
                let mut rng = stream_rng(seed, &[tags::GREEN, scenery_seed, 1 + k as u64, w]);
                sampler.sample(t, 1.0, &origin, &mut rng).expect("time checked");
                let mut a = Neumaier::new();
                sampler.segments(origin, t, |site, from, to| a.add(view.z(site) * (to - from)));
                for (s, x1) in stats.iter_mut().zip(targets) {
                    s.push(layer_kernel(d1, a.value(), x1));
                }
            },
            |acc, part| {
                for (s, p) in acc.0.iter_mut().zip(&part.0) {
                    s.merge(p);
                }
            },
        );
        out.push((t, stats.iter().map(|s| (p0 * s.mean, p0 * s.stderr())).collect()));
    }
    Ok(out)
}

/// Monte Carlo Green function `g(0, (n e1, 0))`.
pub fn green_estimate(model: &LayeredModel, n: i64, cfg: &GreenConfig) -> Result<GreenEstimate> {
    Ok(green_survey(model, &[n], cfg)?.remove(0))
}

/// Green estimates as a series indexed by distance, ready for exponent fits.
pub fn green_series(model: &LayeredModel, estimates: &[GreenEstimate]) -> EstimateSeries {
    let mut series = EstimateSeries::new(model.field.seed, "green")
        .param("d1", model.d1 as f64)
        .param("d2", model.d2 as f64)
        .param("alpha", model.field.alpha);
    for e in estimates {
        let hits = if e.value > 0.0 { e.n_samples } else { 0 };
        series.push(EstimateRecord {
            t: e.n as f64,
            estimate: e.value,
            stderr: e.stderr,
            n: e.n_samples,
            hits,
            seed: model.field.seed,
            mode: Some("green".into()),
            target: Some(Target::axis(model.d1, model.d2, e.n).coords()),
        });
    }
    series
}

/// Ordinary least squares `y = slope x + intercept`.
fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::stats::chi_square_gof;
    use std::collections::BTreeMap;

    fn constant(c: f64) -> LayeredModel {
        LayeredModel::new(1, 1, SceneryField::constant(c, 1).unwrap()).unwrap()
    }

    #[test]
    fn zero_time_is_the_origin() {
        let m = LayeredModel::new(1, 1, SceneryField::pareto(3, 0.5, 1).unwrap()).unwrap();
        let mut rng = stream_rng(1, &[0]);
        let o = (Point::origin(1), Point::origin(1));
        assert_eq!(sample_timechange(&m, 0.0, &mut rng).unwrap(), o);
        assert_eq!(direct_gillespie(&m, 0.0, &mut rng).unwrap(), o);
        assert_eq!(csrw_timechange(&m, 0.0, &mut rng).unwrap(), o);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(LayeredModel::new(1, 2, SceneryField::pareto(1, 1.0, 1).unwrap()).is_err());
        let m = constant(1.0);
        let mut rng = stream_rng(1, &[0]);
        assert!(sample_timechange(&m, -1.0, &mut rng).is_err());
        let bad = Target::new(&[0, 0], &[0]).unwrap();
        assert!(kernel_estimate(&m, 1.0, &bad, 10, KernelMode::RaoBlackwell, 0).is_err());
        // Z^{1+1} with a finite-mean clock is recurrent
        let err = green_estimate(&m, 3, &GreenConfig::default()).unwrap_err();
        assert_eq!(err.kind(), "regime");
        let heavy = LayeredModel::new(1, 1, SceneryField::pareto(1, 0.5, 1).unwrap()).unwrap();
        assert!(lclt_ratio(&heavy, 4.0, &[Target::origin(1, 1)], 10, KernelMode::RaoBlackwell, 0).is_err());
    }

    #[test]
    fn constant_scenery_is_the_free_walk() {
        let m = constant(1.0);
        let t = 2.0;
        let e = kernel_estimate(&m, t, &Target::origin(1, 1), 40_000, KernelMode::RaoBlackwell, 5).unwrap();
        let exact = kernel(1, t, &[0], 1.0).unwrap().powi(2);
        assert!((e.mean - exact).abs() <= 4.0 * e.stderr, "{} vs {exact} ± {}", e.mean, e.stderr);
        let b = kernel_estimate(&m, t, &Target::new(&[1], &[2]).unwrap(), 500, KernelMode::RaoBlackwellBridge, 5).unwrap();
        let exact = kernel(1, t, &[1], 1.0).unwrap() * kernel(1, t, &[2], 1.0).unwrap();
        // on constant scenery the bridge estimator has zero variance
        assert!((b.mean - exact).abs() < 1e-14);
    }

    #[test]
    fn gillespie_event_count_is_poisson() {
        let m = constant(1.0);
        let t = 2.5;
        let mut s = RunningStats::new();
        for w in 0..20_000 {
            let mut rng = stream_rng(9, &[w]);
            s.push(gillespie_run(&m, t, &mut rng).unwrap().events as f64);
        }
        assert!((s.mean - 4.0 * t).abs() <= 3.0 * s.stderr());
    }

    fn first_coordinate_gof(points: &[Point], a: f64) -> f64 {
        let mut obs = BTreeMap::new();
        for p in points {
            *obs.entry(p.get(0)).or_insert(0u64) += 1;
        }
        let expected: BTreeMap<i64, f64> = (-60..=60).map(|x| (x, kernel(1, a, &[x], 1.0).unwrap())).collect();
        chi_square_gof(&obs, &expected).unwrap().p_value
    }

    #[test]
    fn constant_scenery_marginals_match_the_kernel() {
        let c = 2.0;
        let m = constant(c);
        let t = 3.0;
        let g = simulate_layered(&m, t, 100_000, SampleMethod::Gillespie, 2).unwrap();
        assert!(first_coordinate_gof(&g, c * t) > 1e-3);
        let tc = simulate_layered(&m, t, 100_000, SampleMethod::TimeChange, 2).unwrap();
        assert!(first_coordinate_gof(&tc, c * t) > 1e-3);
        // B(s) = (2c + 2) s on constant scenery
        let y = simulate_layered(&m, t, 100_000, SampleMethod::Csrw, 2).unwrap();
        assert!(first_coordinate_gof(&y, c * t / (2.0 * c + 2.0)) > 1e-3);
    }

    #[test]
    fn csrw_inverse_clock() {
        let m = LayeredModel::new(1, 1, SceneryField::pareto(4, 0.7, 1).unwrap()).unwrap();
        for w in 0..200 {
            let mut rng = stream_rng(3, &[w]);
            let t = 0.1 * (w + 1) as f64;
            let r = csrw_run(&m, t, &mut rng).unwrap();
            // B(B^{-1}(t)) = 2 A(B^{-1}(t)) + 2 B^{-1}(t) = t
            let b = 2.0 * r.clock + 2.0 * r.inverse_time;
            assert!((b - t).abs() <= 1e-9 * t.max(1.0), "{b} vs {t}");
        }
        let c = constant(1.0);
        let mut rng = stream_rng(3, &[0]);
        let r = csrw_run(&c, 8.0, &mut rng).unwrap();
        assert!((r.inverse_time - 2.0).abs() < 1e-12);
    }

    #[test]
    fn green_box_killed_matches_constant_walk_scale() {
        let m = LayeredModel::new(1, 2, SceneryField::constant(1.0, 2).unwrap()).unwrap();
        let cfg = GreenConfig { n_samples: 400, seed: 1, box_radius: Some(3), t_max_factor: 16.0, ..GreenConfig::default() };
        let g = green_estimate(&m, 1, &cfg).unwrap();
        assert!(g.value > 0.0 && g.stderr > 0.0);
        // killed walks get no fitted tail; the cut-off is charged to the bias bound
        assert!(g.tail_slope.is_none() && g.tail_mass == 0.0);
        assert!(g.bias_bound > 0.0);
    }

    #[test]
    fn moddev_delta_zero_is_the_on_diagonal_estimate() {
        let m = LayeredModel::new(1, 1, SceneryField::pareto(2, 0.5, 1).unwrap()).unwrap();
        let grid = [4.0, 8.0];
        let a = moddev_estimate(&m, &grid, 0.0, 2000, true, KernelMode::RaoBlackwell, 3).unwrap();
        let b = ondiag_estimate(&m, &grid, 2000, KernelMode::RaoBlackwell, 3).unwrap();
        assert_eq!(a.estimates(), b.estimates());
    }

    #[test]
    fn thread_count_does_not_change_estimates() {
        use crate::parallel::with_threads;
        let m = LayeredModel::new(1, 1, SceneryField::pareto(2, 0.5, 1).unwrap()).unwrap();
        let run = || ondiag_estimate(&m, &[2.0, 16.0], 700, KernelMode::RaoBlackwell, 8).unwrap().to_jsonl();
        assert_eq!(with_threads(1, run), with_threads(3, run));
    }
}
