//! The scenery functional `A(t) = int_0^t z(S_u) du` of a simple random walk:
//! clocks, upper/lower tail estimators, level-set hitting and return/departure
//! decompositions.

use serde::{Serialize, Serializer};

use crate::error::{arg_err, Error, Result};
use crate::lattice::Point;
use crate::numeric::Neumaier;
use crate::parallel::reduce_walkers;
use crate::rng::{stream_rng, tags};
use crate::scenery::ScenerySource;
use crate::stats::{EstimateRecord, EstimateSeries, RunningStats};
use crate::theory;
use crate::walk::{kernel, BridgeSampler, WalkPath, Walker};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClockValue {
    pub t: f64,
    pub a: f64,
    /// `A_M(t) = int_0^t z(S_u) ∧ M du` when a cap was requested.
    pub truncated_a: Option<f64>,
}

fn check_checkpoints(checkpoints: &[f64], horizon: f64) -> Result<()> {
    let mut prev = 0.0;
    for &s in checkpoints {
        if !(s >= prev) {
            return arg_err("checkpoints must be sorted and nonnegative");
        }
        if s > horizon {
            return arg_err(format!("checkpoint {s} beyond the path horizon {horizon}"));
        }
        prev = s;
    }
    Ok(())
}

/// Integrate `g(z(site))` over the path up to each checkpoint.
fn path_integral<S: ScenerySource>(
    path: &WalkPath,
    field: &S,
    checkpoints: &[f64],
    g: impl Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    check_checkpoints(checkpoints, path.horizon)?;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut acc = Neumaier::new();
    let mut segs = path.segments().peekable();
    for &s in checkpoints {
        // whole segments ending before s
        while let Some(&(site, from, to)) = segs.peek() {
            if to > s {
                break;
            }
            acc.add(g(field.z(site)) * (to - from));
            segs.next();
        }
        let mut partial = acc;
        if let Some(&(site, from, _)) = segs.peek() {
            if s > from {
                partial.add(g(field.z(site)) * (s - from));
            }
        }
        out.push(partial.value());
    }
    Ok(out)
}

/// `A(s)` at each checkpoint, and `A_M(s)` if `cap` is given.
pub fn clock<S: ScenerySource>(path: &WalkPath, field: &S, checkpoints: &[f64], cap: Option<f64>) -> Result<Vec<ClockValue>> {
    if let Some(m) = cap {
        if !(m > 0.0) {
            return arg_err(format!("cap must be positive, got {m}"));
        }
    }
    let a = path_integral(path, field, checkpoints, |z| z)?;
    let am = match cap {
        Some(m) => Some(path_integral(path, field, checkpoints, |z| z.min(m))?),
        None => None,
    };
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(i, &t)| ClockValue { t, a: a[i], truncated_a: am.as_ref().map(|v| v[i]) })
        .collect())
}

/// `V_M(s) = int_0^s (M - z(S_u) ∧ M) du`.
pub fn deficit_clock<S: ScenerySource>(path: &WalkPath, field: &S, cap: f64, checkpoints: &[f64]) -> Result<Vec<f64>> {
    path_integral(path, field, checkpoints, |z| cap - z.min(cap))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return arg_err("time grid is empty");
    }
    let mut prev = 0.0;
    for &t in grid {
        if !(t > prev) || !t.is_finite() {
            return arg_err("time grid must be positive and strictly increasing");
        }
        prev = t;
    }
    Ok(())
}

fn check_field_dim<S: ScenerySource>(field: &S, d: usize) -> Result<()> {
    if field.field().dimension != d {
        return Err(Error::Dimension { expected: d, got: field.field().dimension });
    }
    Ok(())
}

/// What a walker looks like at a checkpoint.
#[derive(Clone, Copy, Debug)]
pub struct Observation {
    /// `A(t)`.
    pub a: f64,
    /// `max_{u < t} z(S_u)`.
    pub max_z: f64,
    pub end: Point,
}

/// Run `n` independent walks on `Z^d` to the last grid time, reporting the
/// observation at every grid time. Walker `w` uses the stream
/// `(seed, tag, scenery seed, 0, w)`.
#[allow(clippy::too_many_arguments)]
pub fn shared_walks<S, A, I, R, M>(field: &S, d: usize, grid: &[f64], n: u64, seed: u64, tag: u64, init: I, record: R, merge: M) -> A
where
    S: ScenerySource,
    A: Send,
    I: Fn() -> A + Sync,
    R: Fn(&mut A, usize, &Observation) + Sync,
    M: Fn(&mut A, A),
{
    let scenery_seed = field.field().seed;
    reduce_walkers(
        n,
        &init,
        |acc, w| {
            let mut rng = stream_rng(seed, &[tag, scenery_seed, 0, w]);
            let mut walker = Walker::new(Point::origin(d), &mut rng);
            let mut a = Neumaier::new();
            let mut max_z = f64::NEG_INFINITY;
            for (k, &t) in grid.iter().enumerate() {
                walker.advance(t, &mut rng, |site, from, to| {
                    let z = field.z(site);
                    a.add(z * (to - from));
                    if z > max_z {
                        max_z = z;
                    }
                });
                record(acc, k, &Observation { a: a.value(), max_z, end: walker.pos });
            }
        },
        merge,
    )
}

#[allow(clippy::ptr_arg)] // used as a reduce_walkers merge, which passes `&mut Vec`
fn add_counts(a: &mut Vec<u64>, b: Vec<u64>) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailMode {
    /// `P(A(t) >= t^rho)`.
    Unpinned,
    /// `P(A(t) >= t^rho, S_t = 0)` from the endpoint indicator.
    PinnedIndicator,
    /// `P(A(t) >= t^rho, S_t = 0) = p_t(0,0) P(A(t) >= t^rho | S_t = 0)` with exact bridges.
    PinnedBridge,
    /// Unpinned estimate times `p_t(0,0)`; exact only asymptotically.
    Factorized,
}

impl TailMode {
    pub fn label(self) -> &'static str {
        match self {
            TailMode::Unpinned => "unpinned",
            TailMode::PinnedIndicator => "pinned-indicator",
            TailMode::PinnedBridge => "pinned-bridge",
            TailMode::Factorized => "factorized",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailConfig {
    pub d: usize,
    pub rho: f64,
    pub t_grid: Vec<f64>,
    pub n_samples: u64,
    pub seed: u64,
    pub mode: TailMode,
}

fn check_tail(cfg: &TailConfig) -> Result<()> {
    if !(cfg.rho > 0.0) {
        return arg_err(format!("rho must be positive, got {}", cfg.rho));
    }
    if cfg.n_samples == 0 {
        return arg_err("n_samples must be >= 1");
    }
    check_grid(&cfg.t_grid)
}

/// Estimate `P(A(t) >= t^rho)` (or its pinned variant) along the time grid.
pub fn tail_estimate<S: ScenerySource>(field: &S, cfg: &TailConfig) -> Result<EstimateSeries> {
    check_tail(cfg)?;
    check_field_dim(field, cfg.d)?;
    let scenery_seed = field.field().seed;
    let mut series = EstimateSeries::new(scenery_seed, cfg.mode.label())
        .param("d", cfg.d as f64)
        .param("alpha", field.field().alpha)
        .param("rho", cfg.rho);
    let n = cfg.n_samples;
    match cfg.mode {
        TailMode::PinnedBridge => {
            for (k, &t) in cfg.t_grid.iter().enumerate() {
                let threshold = t.powf(cfg.rho);
                let hits = bridge_hits(field, cfg.d, t, threshold, n, cfg.seed, k as u64);
                let p0 = kernel(cfg.d, t, &vec![0; cfg.d], 1.0)?;
                let cond = EstimateRecord::from_hits(t, hits, n, scenery_seed);
                series.push(EstimateRecord { estimate: p0 * cond.estimate, stderr: p0 * cond.stderr, ..cond }.with_mode(cfg.mode.label()));
            }
        }
        _ => {
            let len = cfg.t_grid.len();
            let thresholds: Vec<f64> = cfg.t_grid.iter().map(|t| t.powf(cfg.rho)).collect();
            let pinned = cfg.mode == TailMode::PinnedIndicator;
            let hits = shared_walks(
                field,
                cfg.d,
                &cfg.t_grid,
                n,
                cfg.seed,
                tags::RWRS_WALK,
                || vec![0u64; len],
                |acc, k, o| {
                    if o.a >= thresholds[k] && (!pinned || o.end.is_origin()) {
                        acc[k] += 1;
                    }
                },
                add_counts,
            );
            for (k, &t) in cfg.t_grid.iter().enumerate() {
                let mut r = EstimateRecord::from_hits(t, hits[k], n, scenery_seed).with_mode(cfg.mode.label());
                if cfg.mode == TailMode::Factorized {
                    let p0 = kernel(cfg.d, t, &vec![0; cfg.d], 1.0)?;
                    r.estimate *= p0;
                    r.stderr *= p0;
                }
                series.push(r);
            }
        }
    }
    Ok(series)
}

/// Number of `n` bridges of length `t` (origin to origin) with `A(t) >= threshold`.
fn bridge_hits<S: ScenerySource>(field: &S, d: usize, t: f64, threshold: f64, n: u64, seed: u64, grid_index: u64) -> u64 {
    let scenery_seed = field.field().seed;
    let origin = Point::origin(d);
    reduce_walkers(
        n,
        || (0u64, BridgeSampler::new()),
        |(hits, sampler), w| {
            let mut rng = stream_rng(seed, &[tags::RWRS_BRIDGE, scenery_seed, grid_index, w]);
            sampler.sample(t, 1.0, &origin, &mut rng).expect("bridge to the origin is always valid");
            let mut a = Neumaier::new();
            sampler.segments(origin, t, |site, from, to| a.add(field.z(site) * (to - from)));
            if a.value() >= threshold {
                *hits += 1;
            }
        },
        |acc, part| acc.0 += part.0,
    )
    .0
}

/// Tail, pinned-indicator and hitting series from one set of walks.
#[derive(Clone, Debug, PartialEq)]
pub struct TailAndHitting {
    pub tail: EstimateSeries,
    pub pinned_indicator: EstimateSeries,
    pub hitting: EstimateSeries,
}

/// `P(A(t) >= t^rho)`, `P(A(t) >= t^rho, S_t = 0)` and `P(walk visits {z >= t^(rho - 5 eps)} before t)`
/// estimated on shared walks.
pub fn tail_and_hitting<S: ScenerySource>(field: &S, d: usize, rho: f64, eps: f64, t_grid: &[f64], n: u64, seed: u64) -> Result<TailAndHitting> {
    let cfg = TailConfig { d, rho, t_grid: t_grid.to_vec(), n_samples: n, seed, mode: TailMode::Unpinned };
    check_tail(&cfg)?;
    check_field_dim(field, d)?;
    let lambda = rho - 5.0 * eps;
    if !(lambda > 0.0) {
        return arg_err(format!("rho - 5 eps must be positive, got {lambda}"));
    }
    let len = t_grid.len();
    let tail_thr: Vec<f64> = t_grid.iter().map(|t| t.powf(rho)).collect();
    let hit_thr: Vec<f64> = t_grid.iter().map(|t| t.powf(lambda)).collect();
    let counts = shared_walks(
        field,
        d,
        t_grid,
        n,
        seed,
        tags::RWRS_WALK,
        || vec![[0u64; 3]; len],
        |acc, k, o| {
            let tail = o.a >= tail_thr[k];
            acc[k][0] += tail as u64;
            acc[k][1] += (tail && o.end.is_origin()) as u64;
            acc[k][2] += (o.max_z >= hit_thr[k]) as u64;
        },
        |a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                for i in 0..3 {
                    x[i] += y[i];
                }
            }
        },
    );
    let scenery_seed = field.field().seed;
    let alpha = field.field().alpha;
    let make = |i: usize, mode: &str| {
        let mut s = EstimateSeries::new(scenery_seed, mode).param("d", d as f64).param("alpha", alpha).param("rho", rho);
        if i == 2 {
            s = s.param("eps", eps);
        }
        for (k, &t) in t_grid.iter().enumerate() {
            s.push(EstimateRecord::from_hits(t, counts[k][i], n, scenery_seed).with_mode(mode));
        }
        s
    };
    Ok(TailAndHitting { tail: make(0, "unpinned"), pinned_indicator: make(1, "pinned-indicator"), hitting: make(2, "hitting") })
}

/// `P(walk visits {z >= t^(rho - 5 eps)} before t)`.
pub fn hitting_estimate<S: ScenerySource>(field: &S, d: usize, rho: f64, eps: f64, t_grid: &[f64], n: u64, seed: u64) -> Result<EstimateSeries> {
    Ok(tail_and_hitting(field, d, rho, eps, t_grid, n, seed)?.hitting)
}

/// `P(walk visits {z >= t^lambda} before t)` for any `lambda >= 0`.
pub fn level_hitting_estimate<S: ScenerySource>(field: &S, d: usize, lambda: f64, t_grid: &[f64], n: u64, seed: u64) -> Result<EstimateSeries> {
    check_grid(t_grid)?;
    check_field_dim(field, d)?;
    if !(lambda >= 0.0) || n == 0 {
        return arg_err("level exponent must be >= 0 and n_samples >= 1");
    }
    let thr: Vec<f64> = t_grid.iter().map(|t| t.powf(lambda)).collect();
    let len = t_grid.len();
    let hits = shared_walks(
        field,
        d,
        t_grid,
        n,
        seed,
        tags::RWRS_WALK,
        || vec![0u64; len],
        |acc, k, o| acc[k] += (o.max_z >= thr[k]) as u64,
        add_counts,
    );
    let f = field.field();
    let mut s = EstimateSeries::new(f.seed, "hitting").param("d", d as f64).param("alpha", f.alpha).param("lambda", lambda);
    for (k, &t) in t_grid.iter().enumerate() {
        s.push(EstimateRecord::from_hits(t, hits[k], n, f.seed).with_mode("hitting"));
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "kind", content = "eps", rename_all = "kebab-case")]
pub enum LowerThreshold {
    /// `t^{s(d, alpha) - eps}`.
    ScalingGap(f64),
    /// `t (E[z] - eps)`.
    FiniteMean(f64),
}

/// Estimate `P(A(t) <= threshold(t))` along the grid.
pub fn lower_deviation_estimate<S: ScenerySource>(field: &S, d: usize, threshold: LowerThreshold, t_grid: &[f64], n: u64, seed: u64) -> Result<EstimateSeries> {
    check_grid(t_grid)?;
    check_field_dim(field, d)?;
    if n == 0 {
        return arg_err("n_samples must be >= 1");
    }
    let f = field.field();
    let thresholds: Vec<f64> = match threshold {
        LowerThreshold::ScalingGap(eps) => {
            let s = theory::s_exponent(d, f.alpha)?;
            if !(eps > 0.0 && eps < s) {
                return arg_err(format!("eps must lie in (0, {s}), got {eps}"));
            }
            t_grid.iter().map(|t| t.powf(s - eps)).collect()
        }
        LowerThreshold::FiniteMean(eps) => {
            let m = f.mean();
            if !m.is_finite() {
                return Err(Error::Regime("the finite-mean threshold needs E[z] < infinity".into()));
            }
            if !(eps > 0.0 && eps < m) {
                return arg_err(format!("eps must lie in (0, E[z]) = (0, {m}), got {eps}"));
            }
            t_grid.iter().map(|t| t * (m - eps)).collect()
        }
    };
    let len = t_grid.len();
    let hits = shared_walks(
        field,
        d,
        t_grid,
        n,
        seed,
        tags::LOWER,
        || vec![0u64; len],
        |acc, k, o| acc[k] += (o.a <= thresholds[k]) as u64,
        add_counts,
    );
    let (label, eps) = match threshold {
        LowerThreshold::ScalingGap(e) => ("scaling-gap", e),
        LowerThreshold::FiniteMean(e) => ("finite-mean", e),
    };
    let mut series = EstimateSeries::new(f.seed, label).param("d", d as f64).param("alpha", f.alpha).param("eps", eps);
    for (k, &t) in t_grid.iter().enumerate() {
        series.push(EstimateRecord::from_hits(t, hits[k], n, f.seed).with_mode(label));
    }
    Ok(series)
}

/// Mean of `A(t) / t` along the grid, with standard errors.
pub fn clock_mean<S: ScenerySource>(field: &S, d: usize, t_grid: &[f64], n: u64, seed: u64) -> Result<EstimateSeries> {
    check_grid(t_grid)?;
    check_field_dim(field, d)?;
    let len = t_grid.len();
    let stats = shared_walks(
        field,
        d,
        t_grid,
        n,
        seed,
        tags::RWRS_WALK,
        || vec![RunningStats::new(); len],
        |acc, k, o| acc[k].push(o.a / t_grid[k]),
        |a, b| {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                x.merge(y);
            }
        },
    );
    let f = field.field();
    let mut series = EstimateSeries::new(f.seed, "clock-mean");
    for (k, &t) in t_grid.iter().enumerate() {
        series.push(EstimateRecord::from_stats(t, &stats[k], f.seed));
    }
    Ok(series)
}

fn inf_as_null<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        if x.is_finite() {
            seq.serialize_element(x)?;
        } else {
            seq.serialize_element(&Option::<f64>::None)?;
        }
    }
    seq.end()
}

/// Successive returns to and departures from a level set along one path.
///
/// `returns[k-1] = R_k`, `departures[k-1] = D_k` for `k = 1..`; a departure
/// that has not happened by the horizon is `+inf` (`null` in JSON).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReturnsDiagnostics {
    pub threshold: f64,
    pub horizon: f64,
    pub returns: Vec<f64>,
    #[serde(serialize_with = "inf_as_null")]
    pub departures: Vec<f64>,
    pub n_t: usize,
    pub level_local_time: f64,
}

/// Decompose `path` into visits to `{x : z(x) >= threshold}`.
pub fn returns_diagnostics<S: ScenerySource>(path: &WalkPath, field: &S, threshold: f64) -> Result<ReturnsDiagnostics> {
    check_field_dim(field, path.dim())?;
    let mut returns = Vec::new();
    let mut departures = Vec::new();
    let mut inside = false;
    let mut local = Neumaier::new();
    for (site, from, to) in path.segments() {
        let now_inside = field.z(site) >= threshold;
        if now_inside && !inside {
            returns.push(from);
        } else if !now_inside && inside {
            departures.push(from);
        }
        if now_inside {
            local.add(to - from);
        }
        inside = now_inside;
    }
    if inside {
        departures.push(f64::INFINITY);
    }
    let horizon = path.horizon;
    let n_t = returns.iter().filter(|&&r| r < horizon).count();
    Ok(ReturnsDiagnostics { threshold, horizon, returns, departures, n_t, level_local_time: local.value() })
}

impl ReturnsDiagnostics {
    /// `sum_k (D_k ∧ t - R_k ∧ t)`.
    pub fn local_time_from_excursions(&self) -> f64 {
        let t = self.horizon;
        self.returns.iter().zip(&self.departures).map(|(r, dd)| dd.min(t) - r.min(t)).sum()
    }
}

/// `P(l_t({z >= threshold}) <= bound)` over `n` walks of length `t`.
pub fn level_local_time_probability<S: ScenerySource>(field: &S, d: usize, threshold: f64, t: f64, bound: f64, n: u64, seed: u64) -> Result<EstimateRecord> {
    check_field_dim(field, d)?;
    if n == 0 {
        return arg_err("n_samples must be >= 1");
    }
    let scenery_seed = field.field().seed;
    let hits = reduce_walkers(
        n,
        || 0u64,
        |acc, w| {
            let mut rng = stream_rng(seed, &[tags::RETURNS, scenery_seed, 0, w]);
            let mut walker = Walker::new(Point::origin(d), &mut rng);
            let mut local = Neumaier::new();
            walker.advance(t, &mut rng, |site, from, to| {
                if field.z(site) >= threshold {
                    local.add(to - from);
                }
            });
            *acc += (local.value() <= bound) as u64;
        },
        |a, b| *a += b,
    );
    Ok(EstimateRecord::from_hits(t, hits, n, scenery_seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenery::SceneryField;
    use crate::walk::simulate_path;

    fn path_0_to_1() -> WalkPath {
        WalkPath::from_parts(1.0, vec![0.4], vec![Point::origin(1), Point::axis(1, 0, 1)]).unwrap()
    }

    #[test]
    fn constant_clock_is_linear() {
        let f = SceneryField::constant(2.5, 2).unwrap();
        let mut rng = stream_rng(1, &[1]);
        let p = simulate_path(Point::origin(2), 10.0, &mut rng).unwrap();
        let c = clock(&p, &f, &[0.0, 1.0, 3.3, 10.0], None).unwrap();
        for v in c {
            assert!((v.a - 2.5 * v.t).abs() < 1e-12);
        }
    }

    #[test]
    fn clock_is_a_piecewise_integral() {
        let f = SceneryField::pareto(7, 1.0, 1).unwrap();
        let p = path_0_to_1();
        let c = clock(&p, &f, &[0.2, 1.0], None).unwrap();
        let (z0, z1) = (f.z(&[0]), f.z(&[1]));
        assert!((c[0].a - 0.2 * z0).abs() < 1e-12 * z0);
        assert!((c[1].a - (0.4 * z0 + 0.6 * z1)).abs() < 1e-12 * (z0 + z1));
        assert!(clock(&p, &f, &[2.0], None).is_err());
        assert!(clock(&p, &f, &[0.5, 0.2], None).is_err());
    }

    #[test]
    fn truncated_clock_identity() {
        let f = SceneryField::pareto(3, 0.7, 2).unwrap();
        let mut rng = stream_rng(2, &[2]);
        let p = simulate_path(Point::origin(2), 200.0, &mut rng).unwrap();
        let cps = [10.0, 50.0, 200.0];
        let c = clock(&p, &f, &cps, Some(10.0)).unwrap();
        let v = deficit_clock(&p, &f, 10.0, &cps).unwrap();
        for i in 0..3 {
            let am = c[i].truncated_a.unwrap();
            assert!(am <= c[i].a);
            assert!((am - (10.0 * cps[i] - v[i])).abs() < 1e-9 * 10.0 * cps[i]);
        }
    }

    #[test]
    fn tail_of_constant_scenery() {
        let f = SceneryField::constant(1.0, 2).unwrap();
        let mk = |rho| TailConfig { d: 2, rho, t_grid: vec![4.0, 8.0], n_samples: 50, seed: 1, mode: TailMode::Unpinned };
        let s = tail_estimate(&f, &mk(1.0)).unwrap();
        assert!(s.records.iter().all(|r| r.estimate == 1.0));
        let s = tail_estimate(&f, &mk(1.1)).unwrap();
        assert!(s.records.iter().all(|r| r.estimate == 0.0));
        assert!(tail_estimate(&f, &TailConfig { n_samples: 0, ..mk(1.0) }).is_err());
    }

    #[test]
    fn tail_is_monotone_in_rho_on_shared_samples() {
        let f = SceneryField::pareto(11, 1.0, 3).unwrap();
        let grid = vec![16.0, 32.0, 64.0];
        let est = |rho| {
            tail_estimate(&f, &TailConfig { d: 3, rho, t_grid: grid.clone(), n_samples: 2000, seed: 5, mode: TailMode::Unpinned }).unwrap().estimates()
        };
        let (a, b) = (est(1.1), est(1.3));
        for i in 0..grid.len() {
            assert!(b[i] <= a[i]);
        }
    }

    #[test]
    fn bridge_mode_of_constant_scenery_is_the_kernel() {
        let f = SceneryField::constant(1.0, 3).unwrap();
        let cfg = TailConfig { d: 3, rho: 1.0, t_grid: vec![4.0, 8.0], n_samples: 20, seed: 3, mode: TailMode::PinnedBridge };
        let s = tail_estimate(&f, &cfg).unwrap();
        for r in &s.records {
            assert_eq!(r.estimate, kernel(3, r.t, &[0, 0, 0], 1.0).unwrap());
        }
    }

    #[test]
    fn hitting_trivial_cases() {
        let c = SceneryField::constant(1.0, 2).unwrap();
        let s = hitting_estimate(&c, 2, 0.6, 0.02, &[4.0, 16.0], 100, 1).unwrap();
        assert!(s.records.iter().all(|r| r.estimate == 0.0));
        // threshold t^0 = 1 is met everywhere under the unit Pareto law
        let p = SceneryField::pareto(1, 1.5, 2).unwrap();
        let s = level_hitting_estimate(&p, 2, 0.0, &[4.0, 16.0], 100, 1).unwrap();
        assert!(s.records.iter().all(|r| r.estimate == 1.0));
        assert!(hitting_estimate(&p, 2, 0.5, 0.2, &[4.0], 10, 1).is_err());
    }

    #[test]
    fn lower_deviation_of_constant_scenery() {
        let f = SceneryField::constant(1.0, 1).unwrap();
        let s = lower_deviation_estimate(&f, 1, LowerThreshold::FiniteMean(0.5), &[8.0, 16.0], 100, 1).unwrap();
        assert!(s.records.iter().all(|r| r.estimate == 0.0));
        let p = SceneryField::pareto(1, 0.5, 1).unwrap();
        assert!(lower_deviation_estimate(&p, 1, LowerThreshold::ScalingGap(1.6), &[8.0], 10, 1).is_err());
        assert!(lower_deviation_estimate(&p, 1, LowerThreshold::FiniteMean(0.1), &[8.0], 10, 1).is_err());
    }

    #[test]
    fn returns_never_entering() {
        let f = SceneryField::constant(1.0, 1).unwrap();
        let r = returns_diagnostics(&path_0_to_1(), &f, 2.0).unwrap();
        assert_eq!(r.n_t, 0);
        assert_eq!(r.level_local_time, 0.0);
    }

    #[test]
    fn returns_always_inside() {
        let f = SceneryField::constant(3.0, 1).unwrap();
        let r = returns_diagnostics(&path_0_to_1(), &f, 2.0).unwrap();
        assert_eq!(r.returns, vec![0.0]);
        assert_eq!(r.departures, vec![f64::INFINITY]);
        assert_eq!(r.n_t, 1);
        assert_eq!(r.level_local_time, 1.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"departures\":[null]"));
    }

    #[test]
    fn returns_decomposition_identity() {
        let f = SceneryField::pareto(5, 0.8, 1).unwrap();
        let mut rng = stream_rng(8, &[8]);
        for _ in 0..20 {
            let p = simulate_path(Point::origin(1), 300.0, &mut rng).unwrap();
            let r = returns_diagnostics(&p, &f, 3.0).unwrap();
            assert!((r.level_local_time - r.local_time_from_excursions()).abs() < 1e-9);
            let mut prev = 0.0;
            for (a, b) in r.returns.iter().zip(&r.departures) {
                assert!(prev <= *a && a <= b);
                prev = *b;
            }
        }
    }
}
