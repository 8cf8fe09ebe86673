//! The fifteen acceptance checks, each run on scenery seeds and reported as PASS/FAIL.
//!
//! Stochastic checks pass when at least two thirds of the seeds pass. Checks with
//! sub-parts apply that rule to each part separately.

use std::cell::OnceCell;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::lattice::{LatticeBox, Point};
use crate::layered::{
    green_series, green_survey, kernel_estimate, lclt_ratio, moddev_estimate, ondiag_estimate, simulate_layered,
    GreenConfig, KernelMode, LayeredModel, SampleMethod, Target,
};
use crate::oracle::{exact_green, exact_prob, Boundary, GeneratorBox};
use crate::parallel::with_threads;
use crate::rwrs::{lower_deviation_estimate, tail_and_hitting, tail_estimate, LowerThreshold, TailAndHitting, TailConfig, TailMode};
use crate::scenery::SceneryField;
use crate::stats::{chi_square_two_sample, fit_exponent, EstimateSeries, FitOptions};
use crate::theory;
use crate::walk::kernel;
use crate::{Error, Result};

pub const CRITERIA: u32 = 15;

#[derive(Clone, Debug)]
pub struct AcceptanceConfig {
    pub seeds: Vec<u64>,
    /// Criteria to run; empty runs all.
    pub only: Vec<u32>,
    /// Where to write each series as JSONL.
    pub out_dir: Option<PathBuf>,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        AcceptanceConfig { seeds: vec![1, 2, 3], only: Vec::new(), out_dir: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionReport {
    pub id: u32,
    pub title: &'static str,
    pub pass: bool,
    pub detail: Value,
    pub seconds: f64,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "{} {:>2} {} ({:.1}s) {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.seconds,
            self.detail
        )
    }
}

pub fn title(id: u32) -> &'static str {
    match id {
        1 => "kernel exactness",
        2 => "estimator unbiasedness",
        3 => "representation equivalence",
        4 => "RWRS power-law tail",
        5 => "pinned/unpinned gap",
        6 => "level-set hitting",
        7 => "on-diagonal exponent, infinite mean",
        8 => "on-diagonal constant, finite mean",
        9 => "moderate deviation exponents",
        10 => "Green exponents",
        11 => "Green small-box cross-validation",
        12 => "LCLT regime split",
        13 => "lower deviation property",
        14 => "theory golden table",
        15 => "determinism",
        _ => "unknown",
    }
}

/// At least two thirds of the seeds pass.
pub fn majority(passes: &[bool]) -> bool {
    let k = passes.iter().filter(|&&p| p).count();
    !passes.is_empty() && 3 * k >= 2 * passes.len()
}

fn dyadic(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).map(|k| (1u64 << k) as f64).collect()
}

/// Fit options used by every slope check.
fn fit_opts() -> FitOptions {
    FitOptions::default()
}

fn slope_check(series: &EstimateSeries, target: f64, tol: f64) -> (bool, Value) {
    match fit_exponent(series, &fit_opts()) {
        Ok(f) => {
            let pass = (f.slope - target).abs() <= tol;
            (pass, json!({"slope": f.slope, "ci": [f.slope_ci.0, f.slope_ci.1], "points": f.points_used, "pass": pass}))
        }
        Err(e) => (false, json!({"error": e.to_string(), "pass": false})),
    }
}

fn err_json(e: &Error) -> Value {
    json!({"error": e.to_string(), "pass": false})
}

/// Runs criteria and caches the walks shared by 4, 5 and 6.
pub struct Suite {
    cfg: AcceptanceConfig,
    rwrs: Vec<OnceCell<std::result::Result<TailAndHitting, String>>>,
}

const RWRS_RHO: f64 = 1.2;
const RWRS_EPS: f64 = 0.01;
const RWRS_WALKS: u64 = 10_000;

impl Suite {
    pub fn new(cfg: AcceptanceConfig) -> Self {
        let rwrs = cfg.seeds.iter().map(|_| OnceCell::new()).collect();
        Suite { cfg, rwrs }
    }

    pub fn selected(&self) -> Vec<u32> {
        if self.cfg.only.is_empty() {
            (1..=CRITERIA).collect()
        } else {
            self.cfg.only.clone()
        }
    }

    /// Run every selected criterion, calling `report` as each finishes.
    pub fn run(&self, mut report: impl FnMut(&CriterionReport)) -> Result<Vec<CriterionReport>> {
        let mut out = Vec::new();
        for id in self.selected() {
            let r = self.criterion(id)?;
            report(&r);
            out.push(r);
        }
        Ok(out)
    }

    pub fn criterion(&self, id: u32) -> Result<CriterionReport> {
        let start = Instant::now();
        let (pass, detail) = match id {
            1 => self.c1(),
            2 => self.c2(),
            3 => self.c3(),
            4 => self.c4(),
            5 => self.c5(),
            6 => self.c6(),
            7 => self.c7(),
            8 => self.c8(),
            9 => self.c9(),
            10 => self.c10(),
            11 => self.c11(),
            12 => self.c12(),
            13 => self.c13(),
            14 => self.c14(),
            15 => self.c15(),
            _ => return Err(Error::Config(format!("no criterion {id} (1..={CRITERIA})"))),
        }?;
        Ok(CriterionReport { id, title: title(id), pass, detail, seconds: start.elapsed().as_secs_f64() })
    }

    fn write(&self, name: &str, series: &EstimateSeries) -> Result<()> {
        if let Some(dir) = &self.cfg.out_dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("{name}.jsonl")), series.to_jsonl())?;
        }
        Ok(())
    }

    /// Per-seed checks combined by majority.
    fn per_seed(&self, mut f: impl FnMut(u64) -> Result<(bool, Value)>) -> Result<(bool, Value)> {
        let mut passes = Vec::new();
        let mut details = serde_json::Map::new();
        for &seed in &self.cfg.seeds {
            let (p, d) = f(seed)?;
            passes.push(p);
            details.insert(format!("seed {seed}"), d);
        }
        Ok((majority(&passes), Value::Object(details)))
    }

    fn rwrs(&self, i: usize) -> std::result::Result<&TailAndHitting, String> {
        let seed = self.cfg.seeds[i];
        self.rwrs[i]
            .get_or_init(|| {
                let field = SceneryField::pareto(seed, 1.0, 3).map_err(|e| e.to_string())?;
                let r = tail_and_hitting(&field, 3, RWRS_RHO, RWRS_EPS, &dyadic(7, 13), RWRS_WALKS, seed)
                    .map_err(|e| e.to_string())?;
                Ok(r)
            })
            .as_ref()
            .map_err(|e| e.clone())
    }

    fn c1(&self) -> Result<(bool, Value)> {
        let mut worst: f64 = 0.0;
        let mut cases = Vec::new();
        for d in [1usize, 2] {
            let gen = GeneratorBox::free_walk(d, 30, Boundary::Absorbing)?;
            let origin = vec![0i64; d];
            let from = gen.index(&origin)?;
            for t in [0.5, 1.0, 2.0] {
                let (dist, _) = gen.distribution(t, from)?;
                let mut err: f64 = 0.0;
                for p in LatticeBox::cube(d, 30).iter() {
                    let i = gen.index(p.coords())?;
                    err = err.max((dist[i] - kernel(d, t, p.coords(), 1.0)?).abs());
                }
                // the single-target entry point agrees with the full law
                let at = exact_prob(&gen, t, &origin, &origin)?.value;
                err = err.max((at - kernel(d, t, &origin, 1.0)?).abs());
                worst = worst.max(err);
                cases.push(json!({"d": d, "t": t, "max_abs_diff": err}));
            }
        }
        Ok((worst <= 1e-8, json!({"max_abs_diff": worst, "cases": cases})))
    }

    fn c2(&self) -> Result<(bool, Value)> {
        self.per_seed(|seed| {
            let model = LayeredModel::new(1, 1, SceneryField::capped(seed, 0.5, 1, 10.0)?)?;
            let gen = GeneratorBox::layered(&model, LatticeBox::cube(2, 25), Boundary::Absorbing, false)?;
            let mut ok = true;
            let mut rows = Vec::new();
            for x in [0i64, 3] {
                let exact = exact_prob(&gen, 5.0, &[0, 0], &[x, 0])?;
                let e = kernel_estimate(&model, 5.0, &Target::new(&[x], &[0])?, 1_000_000, KernelMode::RaoBlackwell, seed)?;
                let absorbed = exact.absorbed_mass.unwrap_or(0.0);
                let pass = (e.mean - exact.value).abs() <= 4.0 * e.stderr + absorbed;
                ok &= pass;
                rows.push(json!({"target": [x, 0], "oracle": exact.value, "absorbed": absorbed, "estimate": e.mean, "stderr": e.stderr, "pass": pass}));
            }
            Ok((ok, json!(rows)))
        })
    }

    fn c3(&self) -> Result<(bool, Value)> {
        self.per_seed(|seed| {
            let model = LayeredModel::new(1, 1, SceneryField::pareto(seed, 3.0, 1)?)?;
            let n = 1_000_000;
            let a = simulate_layered(&model, 3.0, n, SampleMethod::TimeChange, seed)?;
            let b = simulate_layered(&model, 3.0, n, SampleMethod::Gillespie, seed)?;
            let count = |v: &[Point]| {
                let mut m = std::collections::BTreeMap::new();
                for p in v {
                    *m.entry(p.coords().to_vec()).or_insert(0u64) += 1;
                }
                m
            };
            let chi = chi_square_two_sample(&count(&a), &count(&b))?;
            let pass = chi.p_value > 1e-3;
            Ok((pass, json!({"statistic": chi.statistic, "dof": chi.dof, "p_value": chi.p_value, "pass": pass})))
        })
    }

    fn c4(&self) -> Result<(bool, Value)> {
        let target = theory::rwrs_tail_exponent(3, 1.0, RWRS_RHO)?;
        let mut passes = Vec::new();
        let mut details = serde_json::Map::new();
        for (i, &seed) in self.cfg.seeds.iter().enumerate() {
            let (p, d) = match self.rwrs(i) {
                Ok(r) => {
                    self.write(&format!("c04_tail_seed{seed}"), &r.tail)?;
                    slope_check(&r.tail, -0.2, 0.1)
                }
                Err(e) => (false, json!({"error": e})),
            };
            passes.push(p);
            details.insert(format!("seed {seed}"), d);
        }
        Ok((majority(&passes), json!({"theory": target, "seeds": details})))
    }

    fn c5(&self) -> Result<(bool, Value)> {
        let grid = dyadic(7, 10);
        let mut passes = Vec::new();
        let mut details = serde_json::Map::new();
        for (i, &seed) in self.cfg.seeds.iter().enumerate() {
            let field = SceneryField::pareto(seed, 1.0, 3)?;
            let cfg = TailConfig { d: 3, rho: RWRS_RHO, t_grid: grid.clone(), n_samples: RWRS_WALKS, seed, mode: TailMode::PinnedBridge };
            let pinned = tail_estimate(&field, &cfg)?;
            self.write(&format!("c05_pinned_seed{seed}"), &pinned)?;
            let (p, d) = match self.rwrs(i) {
                Ok(r) => {
                    let mut unpinned = r.tail.clone();
                    unpinned.records.retain(|rec| rec.t <= 1024.0);
                    match (fit_exponent(&pinned, &fit_opts()), fit_exponent(&unpinned, &fit_opts())) {
                        (Ok(a), Ok(b)) => {
                            let gap = a.slope - b.slope;
                            let pass = (gap + 1.5).abs() <= 0.3;
                            (pass, json!({"pinned": a.slope, "unpinned": b.slope, "gap": gap, "pass": pass}))
                        }
                        (a, b) => (
                            false,
                            json!({"pinned": a.map(|f| f.slope).map_err(|e| e.to_string()).ok(),
                                   "unpinned": b.map(|f| f.slope).map_err(|e| e.to_string()).ok(), "pass": false}),
                        ),
                    }
                }
                Err(e) => (false, json!({"error": e})),
            };
            passes.push(p);
            details.insert(format!("seed {seed}"), d);
        }
        Ok((majority(&passes), Value::Object(details)))
    }

    fn c6(&self) -> Result<(bool, Value)> {
        let mut passes = Vec::new();
        let mut details = serde_json::Map::new();
        for (i, &seed) in self.cfg.seeds.iter().enumerate() {
            let (p, d) = match self.rwrs(i) {
                Ok(r) => {
                    self.write(&format!("c06_hitting_seed{seed}"), &r.hitting)?;
                    slope_check(&r.hitting, -0.2, 0.1)
                }
                Err(e) => (false, json!({"error": e})),
            };
            passes.push(p);
            details.insert(format!("seed {seed}"), d);
        }
        Ok((majority(&passes), Value::Object(details)))
    }

    fn c7(&self) -> Result<(bool, Value)> {
        let target = -theory::ondiag_exponent(1, 1, 0.5)?;
        self.per_seed(|seed| {
            let model = LayeredModel::new(1, 1, SceneryField::pareto(seed, 0.5, 1)?)?;
            let s = ondiag_estimate(&model, &dyadic(6, 12), 200_000, KernelMode::RaoBlackwell, seed)?;
            self.write(&format!("c07_ondiag_seed{seed}"), &s)?;
            Ok(slope_check(&s, target, 0.15))
        })
    }

    fn c8(&self) -> Result<(bool, Value)> {
        let reference = theory::constants(1, 1, 3.0, None)?.ondiag_const;
        self.per_seed(|seed| {
            let model = LayeredModel::new(1, 1, SceneryField::pareto(seed, 3.0, 1)?)?;
            let t = 2048.0;
            let e = kernel_estimate(&model, t, &Target::origin(1, 1), 200_000, KernelMode::RaoBlackwell, seed)?;
            let scaled = t * e.mean;
            let pass = (scaled / reference - 1.0).abs() <= 0.15;
            Ok((pass, json!({"t_p": scaled, "stderr": t * e.stderr, "reference": reference, "pass": pass})))
        })
    }

    fn c9(&self) -> Result<(bool, Value)> {
        let mut out = serde_json::Map::new();
        let mut all = true;
        for (delta, target) in [(0.6, -0.8), (0.3, -0.5)] {
            // the unpinned probability drops the d2/2 of the return factor
            let theory_slope = theory::moddev_exponent(1, 3, 1.0, delta).ok().map(|r| 1.5 - r);
            let (pass, d) = self.per_seed(|seed| {
                let model = LayeredModel::new(1, 3, SceneryField::pareto(seed, 1.0, 3)?)?;
                let s = moddev_estimate(&model, &dyadic(10, 13), delta, 10_000, false, KernelMode::RaoBlackwell, seed)?;
                self.write(&format!("c09_moddev{delta}_seed{seed}"), &s)?;
                Ok(slope_check(&s, target, 0.2))
            })?;
            all &= pass;
            out.insert(format!("delta {delta}"), json!({"target": target, "theory": theory_slope, "pass": pass, "seeds": d}));
        }
        Ok((all, Value::Object(out)))
    }

    fn c10(&self) -> Result<(bool, Value)> {
        let mut out = serde_json::Map::new();
        let mut all = true;
        for (part, d2, ns) in [("a", 1usize, [8i64, 16, 32, 64]), ("b", 2, [4, 8, 16, 32])] {
            let target = theory::green_exponent(1, d2, 0.5)?;
            let tol = if d2 == 1 { 0.15 } else { 0.2 };
            let (pass, d) = self.per_seed(|seed| {
                let model = LayeredModel::new(1, d2, SceneryField::pareto(seed, 0.5, d2)?)?;
                let cfg = GreenConfig { seed, ..GreenConfig::default() };
                match green_survey(&model, &ns, &cfg) {
                    Ok(est) => {
                        let s = green_series(&model, &est);
                        self.write(&format!("c10{part}_green_seed{seed}"), &s)?;
                        Ok(slope_check(&s, target, tol))
                    }
                    Err(e @ Error::Regime(_)) => Ok((false, err_json(&e))),
                    Err(e) => Err(e),
                }
            })?;
            all &= pass;
            out.insert(part.to_string(), json!({"target": target, "pass": pass, "seeds": d}));
        }
        Ok((all, Value::Object(out)))
    }

    fn c11(&self) -> Result<(bool, Value)> {
        self.per_seed(|seed| {
            let model = LayeredModel::new(1, 2, SceneryField::capped(seed, 0.5, 2, 10.0)?)?;
            let gen = GeneratorBox::layered(&model, LatticeBox::cube(3, 12), Boundary::Absorbing, false)?;
            let exact = exact_green(&gen, &[0, 0, 0], &[4, 0, 0])?;
            let cfg = GreenConfig { n_samples: 20_000, seed, box_radius: Some(12), ..GreenConfig::default() };
            let e = crate::layered::green_estimate(&model, 4, &cfg)?;
            let pass = (e.value - exact.value).abs() <= 4.0 * e.stderr + e.bias_bound;
            Ok((
                pass,
                json!({"oracle": exact.value, "iterations": exact.iterations, "estimate": e.value,
                       "stderr": e.stderr, "bias_bound": e.bias_bound, "pass": pass}),
            ))
        })
    }

    fn c12(&self) -> Result<(bool, Value)> {
        let (pass_a, a) = self.per_seed(|seed| {
            let model = LayeredModel::new(1, 1, SceneryField::pareto(seed, 3.0, 1)?)?;
            let t: f64 = 2048.0;
            let r = (2.0 * t.sqrt()).floor() as i64;
            let mut targets = Vec::new();
            for k in -4i64..=4 {
                let x = k * r / 4;
                targets.push(Target::new(&[x], &[0])?);
                if k != 0 {
                    targets.push(Target::new(&[0], &[x])?);
                }
            }
            let ratios = lclt_ratio(&model, t, &targets, 10_000, KernelMode::RaoBlackwellBridge, seed)?;
            let dev = ratios.iter().map(|r| (r.ratio - 1.0).abs()).fold(0.0, f64::max);
            let pass = dev <= 0.15;
            Ok((pass, json!({"max_deviation": dev, "targets": ratios.len(), "pass": pass})))
        })?;
        let (pass_b, b) = self.per_seed(|seed| {
            let t: f64 = 1024.0;
            let field = SceneryField::pareto(seed, 1.2, 3)?;
            let (x2, z) = field.argmax(&LatticeBox::cube(3, t.sqrt().floor() as i64))?;
            let model = LayeredModel::new(1, 3, field)?;
            let target = Target { x1: Point::origin(1), x2 };
            let r = lclt_ratio(&model, t, std::slice::from_ref(&target), 10_000, KernelMode::RaoBlackwellBridge, seed)?;
            let pass = r[0].ratio <= 0.5;
            Ok((pass, json!({"site": r[0].target, "z": z, "ratio": r[0].ratio, "stderr": r[0].stderr, "pass": pass})))
        })?;
        Ok((pass_a && pass_b, json!({"a": {"pass": pass_a, "seeds": a}, "b": {"pass": pass_b, "seeds": b}})))
    }

    fn c13(&self) -> Result<(bool, Value)> {
        let mut out = serde_json::Map::new();
        let mut all = true;
        let cases = [(1usize, 0.5, LowerThreshold::ScalingGap(0.3), dyadic(6, 10)), (2, 3.0, LowerThreshold::FiniteMean(0.2), dyadic(7, 11))];
        for (d, alpha, threshold, grid) in cases {
            let (pass, detail) = self.per_seed(|seed| {
                let field = SceneryField::pareto(seed, alpha, d)?;
                let s = lower_deviation_estimate(&field, d, threshold, &grid, 100_000, seed)?;
                self.write(&format!("c13_lower_d{d}_seed{seed}"), &s)?;
                let r = &s.records;
                let last = r.last().map(|x| x.estimate).unwrap_or(f64::NAN);
                let monotone = r.windows(2).all(|w| w[1].estimate <= w[0].estimate + 2.0 * w[0].stderr.hypot(w[1].stderr));
                let pass = last <= 0.01 && monotone;
                Ok((pass, json!({"estimates": s.estimates(), "last": last, "nonincreasing": monotone, "pass": pass})))
            })?;
            all &= pass;
            out.insert(format!("d={d} alpha={alpha}"), json!({"pass": pass, "seeds": detail}));
        }
        Ok((all, Value::Object(out)))
    }

    fn c14(&self) -> Result<(bool, Value)> {
        let table = theory::golden_table();
        let failed: Vec<&str> = table.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
        Ok((failed.is_empty(), json!({"cases": table.len(), "failed": failed})))
    }

    fn c15(&self) -> Result<(bool, Value)> {
        let seed = self.cfg.seeds.first().copied().unwrap_or(1);
        let runs: Vec<String> = [1usize, 2, 1].iter().map(|&threads| with_threads(threads, || determinism_run(seed))).collect::<Result<_>>()?;
        let pass = runs.windows(2).all(|w| w[0] == w[1]);
        Ok((pass, json!({"threads": [1, 2, 1], "bytes": runs[0].len(), "identical": pass})))
    }
}

/// A small mixed run whose JSONL output must not depend on the thread budget.
pub fn determinism_run(seed: u64) -> Result<String> {
    let mut out = String::new();
    let layered = LayeredModel::new(1, 1, SceneryField::pareto(seed, 0.5, 1)?)?;
    out += &ondiag_estimate(&layered, &dyadic(3, 6), 3_000, KernelMode::RaoBlackwell, seed)?.to_jsonl();
    out += &moddev_estimate(&layered, &dyadic(3, 6), 0.5, 1_000, true, KernelMode::RaoBlackwellBridge, seed)?.to_jsonl();
    let field = SceneryField::pareto(seed, 1.0, 3)?;
    let r = tail_and_hitting(&field, 3, 1.2, 0.01, &dyadic(3, 6), 2_000, seed)?;
    out += &r.tail.to_jsonl();
    out += &r.hitting.to_jsonl();
    let green = LayeredModel::new(1, 2, SceneryField::capped(seed, 0.5, 2, 10.0)?)?;
    let cfg = GreenConfig { n_samples: 500, seed, box_radius: Some(6), ..GreenConfig::default() };
    out += &green_series(&green, &green_survey(&green, &[2, 4], &cfg)?).to_jsonl();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_is_two_of_three() {
        assert!(majority(&[true, false, true]));
        assert!(!majority(&[true, false, false]));
        assert!(!majority(&[]));
    }

    #[test]
    fn unknown_criterion_is_a_config_error() {
        let s = Suite::new(AcceptanceConfig::default());
        assert!(matches!(s.criterion(16), Err(Error::Config(_))));
    }

    #[test]
    fn golden_table_criterion_passes() {
        let s = Suite::new(AcceptanceConfig { only: vec![14], ..Default::default() });
        let r = s.run(|_| {}).unwrap();
        assert!(r[0].pass, "{}", r[0].line());
        assert!(r[0].line().starts_with("PASS 14"));
    }
}
