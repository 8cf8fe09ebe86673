//! Continuous-time simple random walk on `Z^d`: path sampling, occupation
//! measures, exact bridges and the Bessel-product heat kernel.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::bessel::{ln_kernel_1d, ln_scaled_bessel_i};
use crate::error::{arg_err, Error, Result};
use crate::lattice::{Point, MAX_DIM};

/// A sampled path on `[0, horizon]`.
///
/// `sites[0]` is the start; `sites[k]` is occupied on `[jump_times[k-1], jump_times[k])`
/// with the conventions `jump_times[-1] = 0` and `jump_times[n] = horizon`.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkPath {
    pub horizon: f64,
    pub jump_times: Vec<f64>,
    pub sites: Vec<Point>,
}

impl WalkPath {
    pub fn constant(start: Point, horizon: f64) -> Self {
        WalkPath { horizon, jump_times: Vec::new(), sites: vec![start] }
    }

    /// Build a path from explicit jumps, checking the nearest-neighbour and ordering invariants.
    pub fn from_parts(horizon: f64, jump_times: Vec<f64>, sites: Vec<Point>) -> Result<Self> {
        if sites.len() != jump_times.len() + 1 {
            return arg_err("a path needs exactly one more site than jump times");
        }
        let mut prev = 0.0;
        for &s in &jump_times {
            if s <= prev {
                return arg_err("jump times must be strictly increasing and positive");
            }
            if s > horizon {
                return arg_err("jump time beyond horizon");
            }
            prev = s;
        }
        for w in sites.windows(2) {
            w[1].ensure_dim(w[0].dim())?;
            let diff: i64 = w[0].coords().iter().zip(w[1].coords()).map(|(a, b)| (a - b).abs()).sum();
            if diff != 1 {
                return arg_err("consecutive sites must be nearest neighbours");
            }
        }
        Ok(WalkPath { horizon, jump_times, sites })
    }

    pub fn start(&self) -> Point {
        self.sites[0]
    }

    pub fn end(&self) -> Point {
        *self.sites.last().expect("path has a start site")
    }

    pub fn dim(&self) -> usize {
        self.sites[0].dim()
    }

    pub fn jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// Holding intervals `(site, from, to)` in time order.
    pub fn segments(&self) -> impl Iterator<Item = (&Point, f64, f64)> + '_ {
        self.sites.iter().enumerate().map(move |(k, site)| {
            let from = if k == 0 { 0.0 } else { self.jump_times[k - 1] };
            let to = self.jump_times.get(k).copied().unwrap_or(self.horizon);
            (site, from, to)
        })
    }

    /// Site occupied at time `s`.
    pub fn at(&self, s: f64) -> Point {
        let k = self.jump_times.partition_point(|&u| u <= s);
        self.sites[k]
    }
}

#[inline]
fn direction(dir: u32) -> (usize, bool) {
    ((dir / 2) as usize, dir.is_multiple_of(2))
}

/// Streaming simple random walk with per-direction rate 1.
///
/// Holds only the current site and the next jump time, so memory is constant
/// in the horizon.
#[derive(Clone, Debug)]
pub struct Walker {
    pub pos: Point,
    pub now: f64,
    next_jump: f64,
    total_rate: f64,
    dirs: u32,
}

impl Walker {
    pub fn new<R: Rng + ?Sized>(start: Point, rng: &mut R) -> Self {
        let dirs = 2 * start.dim() as u32;
        let total_rate = dirs as f64;
        let first: f64 = Exp1.sample(rng);
        Walker { pos: start, now: 0.0, next_jump: first / total_rate, total_rate, dirs }
    }

    /// Advance to time `until`, calling `f(site, from, to)` for every holding interval
    /// (possibly partial) traversed.
    #[inline]
    pub fn advance<R: Rng + ?Sized, F: FnMut(&Point, f64, f64)>(&mut self, until: f64, rng: &mut R, mut f: F) {
        while self.next_jump <= until {
            f(&self.pos, self.now, self.next_jump);
            self.now = self.next_jump;
            let (axis, positive) = direction(rng.random_range(0..self.dirs));
            self.pos.step(axis, positive);
            let hold: f64 = Exp1.sample(rng);
            self.next_jump = self.now + hold / self.total_rate;
        }
        if until > self.now {
            f(&self.pos, self.now, until);
            self.now = until;
        }
    }
}

impl Walker {
    /// Return the current holding interval `(site, from, to)` in full and make the jump at its end.
    #[inline]
    pub fn next_segment<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (Point, f64, f64) {
        let seg = (self.pos, self.now, self.next_jump);
        self.now = self.next_jump;
        let (axis, positive) = direction(rng.random_range(0..self.dirs));
        self.pos.step(axis, positive);
        let hold: f64 = Exp1.sample(rng);
        self.next_jump = self.now + hold / self.total_rate;
        seg
    }
}

/// Exact path sample on `[0, t]` started at `start`.
pub fn simulate_path<R: Rng + ?Sized>(start: Point, t: f64, rng: &mut R) -> Result<WalkPath> {
    if !(t >= 0.0 && t.is_finite()) {
        return arg_err(format!("horizon must be finite and >= 0, got {t}"));
    }
    let mut path = WalkPath::constant(start, t);
    let dirs = 2 * start.dim() as u32;
    let mut pos = start;
    let mut now = 0.0;
    loop {
        let hold: f64 = Exp1.sample(rng);
        now += hold / dirs as f64;
        if now > t {
            break;
        }
        let (axis, positive) = direction(rng.random_range(0..dirs));
        pos.step(axis, positive);
        path.jump_times.push(now);
        path.sites.push(pos);
    }
    Ok(path)
}

/// Occupation measure `l_t(x)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupationMeasure {
    pub local_time: BTreeMap<Point, f64>,
    pub total: f64,
}

pub fn occupation(path: &WalkPath) -> OccupationMeasure {
    let mut local_time: BTreeMap<Point, f64> = BTreeMap::new();
    let mut total = crate::numeric::Neumaier::new();
    for (site, from, to) in path.segments() {
        let dt = to - from;
        *local_time.entry(*site).or_insert(0.0) += dt;
        total.add(dt);
    }
    OccupationMeasure { local_time, total: total.value() }
}

/// Number of distinct sites visited.
pub fn range_size(path: &WalkPath) -> usize {
    path.sites.iter().collect::<HashSet<_>>().len()
}

fn check_kernel_args(t: f64, rate: f64) -> Result<()> {
    if !(t >= 0.0) || t.is_nan() {
        return arg_err(format!("time must be >= 0, got {t}"));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return arg_err(format!("rate must be positive and finite, got {rate}"));
    }
    Ok(())
}

/// `ln p_t(0, x)` for the walk with per-direction rate `rate`.
pub fn ln_kernel(d: usize, t: f64, x: &[i64], rate: f64) -> Result<f64> {
    check_kernel_args(t, rate)?;
    if x.len() != d {
        return Err(Error::Dimension { expected: d, got: x.len() });
    }
    let a = rate * t;
    Ok(x.iter().map(|&xi| ln_kernel_1d(a, xi)).sum())
}

/// `p_t(0, x) = prod_i e^{-2 rate t} I_{|x_i|}(2 rate t)`.
pub fn kernel(d: usize, t: f64, x: &[i64], rate: f64) -> Result<f64> {
    Ok(ln_kernel(d, t, x, rate)?.exp())
}

/// Kernel of the one-dimensional unit-rate walk killed on leaving `[-r, r]`,
/// from `0` to `x` after intensity `a`, by the sine eigenbasis of the path graph:
/// `sum_k 2/(M+1) sin(k pi (r+1)/(M+1)) sin(k pi (x+r+1)/(M+1)) e^{-a (2 - 2 cos(k pi/(M+1)))}`, `M = 2r + 1`.
pub fn killed_kernel_1d(a: f64, x: i64, r: i64) -> f64 {
    if x.abs() > r || r < 0 {
        return 0.0;
    }
    let m1 = (2 * r + 2) as f64;
    let mut sum = 0.0;
    for k in 1..=(2 * r + 1) {
        let th = k as f64 * std::f64::consts::PI / m1;
        let lambda = 2.0 - 2.0 * th.cos();
        sum += (th * (r + 1) as f64).sin() * (th * (x + r + 1) as f64).sin() * (-a * lambda).exp();
    }
    (2.0 / m1 * sum).max(0.0)
}

const POISSON_NORMAL_SWITCH: f64 = 1e15;

/// Endpoint of the rate-1 walk after intensity `a` per direction, sampled without a path:
/// independent Poisson(`a`) jump counts in each of the `2d` directions.
pub fn sample_displacement<R: Rng + ?Sized>(dim: usize, a: f64, rng: &mut R) -> Point {
    let mut p = Point::origin(dim);
    if a <= 0.0 {
        return p;
    }
    if a > POISSON_NORMAL_SWITCH {
        // the difference of two Poisson(a) counts is N(0, 2a) to far below one lattice step
        let sd = (2.0 * a).sqrt();
        for i in 0..dim {
            let g: f64 = StandardNormal.sample(rng);
            p.set(i, (g * sd).round() as i64);
        }
        return p;
    }
    let pois = Poisson::new(a).expect("finite positive intensity");
    for i in 0..dim {
        let up: f64 = pois.sample(rng);
        let down: f64 = pois.sample(rng);
        p.set(i, (up - down) as i64);
    }
    p
}

/// `ln P(k)` for the number `k` of backward jumps of a one-dimensional bridge
/// ending at displacement `m = |x|` after intensity `a`:
/// `P(k) = a^{2k + m} / ((m + k)! k! I_m(2a))`.
fn ln_bridge_count_prob(m: u64, a: f64, k: u64, ln_norm: f64) -> f64 {
    (2 * k + m) as f64 * a.ln() - ln_gamma((m + k + 1) as f64) - ln_gamma((k + 1) as f64) - ln_norm
}

/// Sample the backward-jump count of a one-dimensional bridge by chop-down search from the mode.
fn sample_bridge_count<R: Rng + ?Sized>(m: u64, a: f64, rng: &mut R) -> u64 {
    if a == 0.0 {
        return 0;
    }
    let ln_norm = ln_scaled_bessel_i(m, 2.0 * a) + 2.0 * a;
    let a2 = a * a;
    let mf = m as f64;
    // largest k with k (m + k) <= a^2
    let mut mode = ((-mf + (mf * mf + 4.0 * a2).sqrt()) / 2.0).floor().max(0.0) as u64;
    while mode > 0 && (mode as f64) * (mf + mode as f64) > a2 {
        mode -= 1;
    }
    while ((mode + 1) as f64) * (mf + (mode + 1) as f64) <= a2 {
        mode += 1;
    }
    let p_mode = ln_bridge_count_prob(m, a, mode, ln_norm).exp();
    let u: f64 = rng.random();
    let mut acc = p_mode;
    if u < acc {
        return mode;
    }
    let (mut lo, mut p_lo) = (mode, p_mode);
    let (mut hi, mut p_hi) = (mode, p_mode);
    loop {
        let next_hi = p_hi * a2 / (((hi + 1) as f64) * (mf + (hi + 1) as f64));
        let next_lo = if lo > 0 { p_lo * (lo as f64) * (mf + lo as f64) / a2 } else { 0.0 };
        if next_hi <= 0.0 && next_lo <= 0.0 || (next_hi < 1e-300 && next_lo < 1e-300) {
            // rounding left the cumulative mass just below u
            return mode;
        }
        if next_hi >= next_lo {
            hi += 1;
            p_hi = next_hi;
            acc += p_hi;
            if u < acc {
                return hi;
            }
        } else {
            lo -= 1;
            p_lo = next_lo;
            acc += p_lo;
            if u < acc {
                return lo;
            }
        }
    }
}

/// Exact sampler of walk bridges: paths of the rate-`rate` walk on `[0, t]`
/// from the origin conditioned on ending at `target`.
///
/// Per coordinate the forward/backward jump counts are drawn from their
/// conditional law, the jump labels are shuffled, and jump times are the order
/// statistics of uniforms on `(0, t)`.
#[derive(Clone, Debug, Default)]
pub struct BridgeSampler {
    times: Vec<f64>,
    labels: Vec<u32>,
}

impl BridgeSampler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, t: f64, rate: f64, target: &Point, rng: &mut R) -> Result<()> {
        check_kernel_args(t, rate)?;
        let a = rate * t;
        self.labels.clear();
        self.times.clear();
        if a == 0.0 {
            if !target.is_origin() {
                return arg_err("a bridge of zero duration must end at the origin");
            }
            return Ok(());
        }
        for (axis, &x) in target.coords().iter().enumerate() {
            let m = x.unsigned_abs();
            let k = sample_bridge_count(m, a, rng);
            let (fwd, back) = if x >= 0 { (2 * axis as u32, 2 * axis as u32 + 1) } else { (2 * axis as u32 + 1, 2 * axis as u32) };
            self.labels.extend(std::iter::repeat_n(fwd, (m + k) as usize));
            self.labels.extend(std::iter::repeat_n(back, k as usize));
        }
        self.labels.shuffle(rng);
        let n = self.labels.len();
        let mut acc = 0.0;
        for _ in 0..n {
            let e: f64 = Exp1.sample(rng);
            acc += e;
            self.times.push(acc);
        }
        let e: f64 = Exp1.sample(rng);
        let scale = t / (acc + e);
        for s in &mut self.times {
            *s *= scale;
        }
        Ok(())
    }

    pub fn jumps(&self) -> usize {
        self.labels.len()
    }

    /// Visit the holding intervals of the last sampled bridge, started at `start`.
    pub fn segments<F: FnMut(&Point, f64, f64)>(&self, start: Point, t: f64, mut f: F) {
        let mut pos = start;
        let mut now = 0.0;
        for (&s, &dir) in self.times.iter().zip(&self.labels) {
            f(&pos, now, s);
            let (axis, positive) = direction(dir);
            pos.step(axis, positive);
            now = s;
        }
        f(&pos, now, t);
    }

    pub fn to_path(&self, start: Point, t: f64) -> WalkPath {
        let mut sites = Vec::with_capacity(self.labels.len() + 1);
        self.segments(start, t, |p, _, _| sites.push(*p));
        WalkPath { horizon: t, jump_times: self.times.clone(), sites }
    }
}

/// Fitted Gaussian envelope `c1 t^{-1/2} e^{-c2 x^2/t} <= p_t(0,x) <= c3 t^{-1/2} e^{-c4 x^2/t}`
/// for the one-dimensional unit-rate kernel on `|x| <= t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GaussianEnvelope {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl GaussianEnvelope {
    /// Fit on the points `(t, x)`; the result holds on every fitting point.
    /// `margin` loosens the constants multiplicatively (e.g. 0.05).
    pub fn fit(points: &[(f64, i64)], margin: f64) -> Result<Self> {
        if points.iter().all(|&(_, x)| x == 0) {
            return arg_err("envelope fit needs off-diagonal points");
        }
        let mut g = Vec::with_capacity(points.len());
        for &(t, x) in points {
            if !(t >= 1.0) || x.unsigned_abs() as f64 > t {
                return arg_err(format!("envelope point ({t}, {x}) outside t >= 1, |x| <= t"));
            }
            g.push((x as f64 * x as f64 / t, ln_kernel_1d(t, x) + 0.5 * t.ln()));
        }
        let on_diag = g.iter().filter(|(y, _)| *y == 0.0).map(|(_, v)| *v);
        let all = g.iter().map(|(_, v)| *v);
        let ln_c3 = all.fold(f64::NEG_INFINITY, f64::max);
        let ln_c1 = on_diag.fold(f64::INFINITY, f64::min).min(ln_c3);
        let mut c4 = f64::INFINITY;
        let mut c2: f64 = 0.0;
        for &(y, v) in g.iter().filter(|(y, _)| *y > 0.0) {
            c4 = c4.min((ln_c3 - v) / y);
            c2 = c2.max((ln_c1 - v) / y);
        }
        Ok(GaussianEnvelope {
            c1: ln_c1.exp() * (1.0 - margin),
            c2: c2 * (1.0 + margin),
            c3: ln_c3.exp() * (1.0 + margin),
            c4: c4 * (1.0 - margin),
        })
    }

    pub fn holds(&self, t: f64, x: i64) -> bool {
        let y = x as f64 * x as f64 / t;
        let v = ln_kernel_1d(t, x) + 0.5 * t.ln();
        self.c1.ln() - self.c2 * y <= v && v <= self.c3.ln() - self.c4 * y
    }
}

/// One line of the kernel self-check report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckLine {
    fn new(name: &str, error: f64, tolerance: f64) -> Self {
        CheckLine { name: name.to_string(), value: error, tolerance, passed: error <= tolerance }
    }
}

/// Deterministic kernel identities: normalisation, symmetry, Chapman-Kolmogorov,
/// a series value and the local CLT constant.
pub fn self_check() -> Vec<CheckLine> {
    let mut out = Vec::new();

    // sum_k (t^{2k} / (k!)^2) e^{-2t} at t = 1
    let mut term = 1.0f64;
    let mut series = 0.0;
    for k in 0..40 {
        if k > 0 {
            term /= (k * k) as f64;
        }
        series += term;
    }
    let series = series * (-2.0f64).exp();
    let k0 = kernel(1, 1.0, &[0], 1.0).unwrap_or(f64::NAN);
    out.push(CheckLine::new("series value p_1(0,0)", ((k0 - series) / series).abs(), 1e-12));

    let mut norm = 0.0;
    for x in -60..=60 {
        for y in -60..=60 {
            norm += kernel(2, 3.0, &[x, y], 1.0).unwrap_or(f64::NAN);
        }
    }
    out.push(CheckLine::new("normalisation d=2 t=3", (norm - 1.0).abs(), 1e-10));

    let mut sym: f64 = 0.0;
    for &(x, y, z) in &[(1i64, 2i64, 3i64), (4, 0, -2), (7, -7, 1)] {
        let base = kernel(3, 2.5, &[x, y, z], 1.0).unwrap_or(f64::NAN);
        for perm in [[x, y, z], [-x, y, z], [z, x, y], [y, -z, -x]] {
            let v = kernel(3, 2.5, &perm, 1.0).unwrap_or(f64::NAN);
            sym = sym.max(((v - base) / base).abs());
        }
    }
    out.push(CheckLine::new("sign and permutation symmetry d=3", sym, 1e-13));

    let mut ck: f64 = 0.0;
    for x in [0i64, 1, 3] {
        let lhs = kernel(1, 1.5, &[x], 1.0).unwrap_or(f64::NAN);
        let rhs: f64 = (-60..=60)
            .map(|y| kernel(1, 0.5, &[y], 1.0).unwrap_or(f64::NAN) * kernel(1, 1.0, &[x - y], 1.0).unwrap_or(f64::NAN))
            .sum();
        ck = ck.max((lhs - rhs).abs());
    }
    out.push(CheckLine::new("Chapman-Kolmogorov d=1", ck, 1e-9));

    let lclt = 1e4f64.sqrt() * kernel(1, 1e4, &[0], 1.0).unwrap_or(f64::NAN);
    let target = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
    out.push(CheckLine::new("local CLT t=1e4 (relative)", ((lclt - target) / target).abs(), 0.01));

    out
}

/// Upper bound on the dimension accepted by the walk routines.
pub const MAX_WALK_DIM: usize = MAX_DIM;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn path_0_to_1() -> WalkPath {
        WalkPath::from_parts(1.0, vec![0.4], vec![Point::origin(1), Point::axis(1, 0, 1)]).unwrap()
    }

    #[test]
    fn zero_horizon_path() {
        let mut rng = stream_rng(1, &[0]);
        let p = simulate_path(Point::origin(2), 0.0, &mut rng).unwrap();
        assert_eq!(p.jumps(), 0);
        assert_eq!(p.end(), Point::origin(2));
        assert_eq!(range_size(&p), 1);
    }

    #[test]
    fn negative_horizon_rejected() {
        let mut rng = stream_rng(1, &[0]);
        assert!(simulate_path(Point::origin(1), -1.0, &mut rng).is_err());
        assert!(kernel(1, -1.0, &[0], 1.0).is_err());
    }

    #[test]
    fn occupation_of_constant_and_one_jump_paths() {
        let occ = occupation(&WalkPath::constant(Point::origin(2), 3.0));
        assert_eq!(occ.local_time.len(), 1);
        assert_eq!(occ.local_time[&Point::origin(2)], 3.0);
        let occ = occupation(&path_0_to_1());
        assert_eq!(occ.local_time[&Point::origin(1)], 0.4);
        assert!((occ.local_time[&Point::axis(1, 0, 1)] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn simulated_paths_are_valid() {
        let mut rng = stream_rng(4, &[1]);
        for d in 1..=3 {
            let p = simulate_path(Point::origin(d), 50.0, &mut rng).unwrap();
            let q = WalkPath::from_parts(p.horizon, p.jump_times.clone(), p.sites.clone()).unwrap();
            assert_eq!(p, q);
            let occ = occupation(&p);
            assert!((occ.total - 50.0).abs() <= 1e-9 * 50.0);
            if d == 1 {
                let lo = p.sites.iter().map(|s| s.get(0)).min().unwrap();
                let hi = p.sites.iter().map(|s| s.get(0)).max().unwrap();
                assert_eq!(range_size(&p) as i64, hi - lo + 1);
            }
        }
    }

    #[test]
    fn kernel_trivial_values() {
        assert_eq!(kernel(2, 0.0, &[0, 0], 1.0).unwrap(), 1.0);
        assert_eq!(kernel(2, 0.0, &[1, 0], 1.0).unwrap(), 0.0);
        assert!(matches!(kernel(2, 1.0, &[0], 1.0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn kernel_rate_is_a_time_rescaling() {
        let a = kernel(1, 3.0, &[2], 2.5).unwrap();
        let b = kernel(1, 7.5, &[2], 1.0).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn killed_kernel_limits() {
        assert!((killed_kernel_1d(0.0, 0, 5) - 1.0).abs() < 1e-14);
        assert!(killed_kernel_1d(0.0, 2, 5).abs() < 1e-14);
        // far from the walls the killed and free kernels agree
        let free = kernel(1, 2.0, &[3], 1.0).unwrap();
        assert!((killed_kernel_1d(2.0, 3, 60) - free).abs() < 1e-14);
        // Chapman-Kolmogorov inside the box
        let r = 4;
        let direct = killed_kernel_1d(1.5, 2, r);
        let via: f64 = (-r..=r).map(|y| killed_kernel_1d(0.5, y, r) * killed_kernel_from(1.0, y, 2, r)).sum();
        assert!((direct - via).abs() < 1e-13);
    }

    /// Killed kernel between arbitrary box points, by brute-force expm of the 1-d generator.
    fn killed_kernel_from(a: f64, from: i64, to: i64, r: i64) -> f64 {
        let m = (2 * r + 1) as usize;
        let mut v = vec![0.0; m];
        v[(from + r) as usize] = 1.0;
        let steps = 20_000;
        let h = a / steps as f64;
        for _ in 0..steps {
            // classical RK4 on dv/ds = L v
            let lap = |u: &Vec<f64>| -> Vec<f64> {
                (0..m).map(|i| {
                    let l = if i > 0 { u[i - 1] } else { 0.0 };
                    let rr = if i + 1 < m { u[i + 1] } else { 0.0 };
                    l + rr - 2.0 * u[i]
                }).collect()
            };
            let k1 = lap(&v);
            let t1: Vec<f64> = v.iter().zip(&k1).map(|(x, k)| x + 0.5 * h * k).collect();
            let k2 = lap(&t1);
            let t2: Vec<f64> = v.iter().zip(&k2).map(|(x, k)| x + 0.5 * h * k).collect();
            let k3 = lap(&t2);
            let t3: Vec<f64> = v.iter().zip(&k3).map(|(x, k)| x + h * k).collect();
            let k4 = lap(&t3);
            for i in 0..m {
                v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        v[(to + r) as usize]
    }

    #[test]
    fn killed_kernel_matches_time_stepping() {
        for (a, x) in [(0.3, 0), (1.0, 2), (3.0, -4)] {
            let exact = killed_kernel_1d(a, x, 4);
            assert!((exact - killed_kernel_from(a, 0, x, 4)).abs() < 1e-10, "a={a} x={x}");
        }
    }

    #[test]
    fn self_check_passes() {
        for line in self_check() {
            assert!(line.passed, "{line:?}");
        }
    }

    #[test]
    fn bridge_ends_at_target() {
        let mut rng = stream_rng(9, &[2]);
        let mut b = BridgeSampler::new();
        for target in [[0i64, 0, 0], [3, -2, 0], [-7, 1, 5]] {
            let target = Point::from_slice(&target).unwrap();
            b.sample(20.0, 1.0, &target, &mut rng).unwrap();
            let p = b.to_path(Point::origin(3), 20.0);
            assert_eq!(p.end(), target);
            WalkPath::from_parts(p.horizon, p.jump_times.clone(), p.sites.clone()).unwrap();
        }
        assert!(b.sample(0.0, 1.0, &Point::axis(1, 0, 1), &mut rng).is_err());
    }

    #[test]
    fn bridge_count_law_is_normalised() {
        for (m, a) in [(0u64, 0.7), (3, 5.0), (20, 400.0)] {
            let ln_norm = ln_scaled_bessel_i(m, 2.0 * a) + 2.0 * a;
            let total: f64 = (0..5000).map(|k| ln_bridge_count_prob(m, a, k, ln_norm).exp()).sum();
            assert!((total - 1.0).abs() < 1e-10, "m={m} a={a} total={total}");
        }
    }

    #[test]
    fn bridge_count_sampler_matches_its_law() {
        let (m, a) = (2u64, 3.0);
        let ln_norm = ln_scaled_bessel_i(m, 2.0 * a) + 2.0 * a;
        let mut rng = stream_rng(5, &[3]);
        let n = 200_000;
        let mut counts = [0u64; 12];
        for _ in 0..n {
            let k = sample_bridge_count(m, a, &mut rng) as usize;
            counts[k.min(11)] += 1;
        }
        for (k, &c) in counts.iter().enumerate().take(8) {
            let p = ln_bridge_count_prob(m, a, k as u64, ln_norm).exp();
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 5.0 * se + 1e-6, "k={k}");
        }
    }

    #[test]
    fn displacement_sampler_variance() {
        let mut rng = stream_rng(6, &[4]);
        let n = 20_000;
        let a = 10.0;
        let mean_sq: f64 = (0..n).map(|_| sample_displacement(2, a, &mut rng).euclidean_sq() as f64).sum::<f64>() / n as f64;
        // each coordinate has variance 2a
        assert!((mean_sq - 4.0 * a).abs() < 0.05 * 4.0 * a);
    }

    #[test]
    fn envelope_fits_and_validates() {
        let mut fit = Vec::new();
        let mut t = 1.0;
        while t <= 1e4 {
            for frac in [0.0, 0.1, 0.3, 0.5, 1.0] {
                fit.push((t, (frac * t) as i64));
            }
            t *= 2.0;
        }
        let env = GaussianEnvelope::fit(&fit, 0.05).unwrap();
        assert!(fit.iter().all(|&(t, x)| env.holds(t, x)));
        assert!(env.c4 > 0.0 && env.c2 >= env.c4 && env.c1 <= env.c3);
    }
}
