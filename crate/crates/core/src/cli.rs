//! Command-line driver: one-off subcommands and config-file runs with artifacts.
//!
//! `run` reads a [`RunConfig`] JSON file, applies `--set key=value` overrides to
//! its leaves and writes one JSONL series per scenery seed, `summary.json` and a
//! `MANIFEST.json` listing every output with its SHA-256.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::acceptance::{AcceptanceConfig, Suite};
use crate::lattice::{LatticeBox, Point};
use crate::layered::{self, GreenConfig, KernelMode, LayeredModel, SampleMethod, Target};
use crate::oracle::{exact_green, exact_prob, Boundary, GeneratorBox};
use crate::parallel::with_threads;
use crate::rng::{stream_rng, tags};
use crate::rwrs::{self, LowerThreshold, TailConfig, TailMode};
use crate::scenery::{self, Law, SceneryField};
use crate::stats::{compare_to_theory, fit_exponent, EstimateRecord, EstimateSeries, FitOptions};
use crate::theory;
use crate::walk;
use crate::{Error, Result};

pub const THREADS_ENV: &str = "RCMWALK_THREADS";

#[derive(Parser, Debug)]
#[command(name = "rcmwalk", version, about = "Random walks in random scenery and layered random conductances")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = THREADS_ENV, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Scenery values on a box.
    #[command(subcommand)]
    Scenery(SceneryCmd),
    /// Kernel and normalisation self-tests.
    #[command(subcommand)]
    Walk(WalkCmd),
    #[command(subcommand)]
    Simulate(SimulateCmd),
    #[command(subcommand)]
    Estimate(EstimateCmd),
    #[command(subcommand)]
    Diagnose(DiagnoseCmd),
    /// Exact finite-box computations.
    #[command(subcommand)]
    Oracle(OracleCmd),
    #[command(subcommand)]
    Theory(TheoryCmd),
    /// Fit a power law to a JSONL series.
    Fit(FitArgs),
    /// Run the acceptance suite.
    Accept(AcceptArgs),
    /// Run an experiment from a JSON config.
    Run(RunArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SceneryArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = LawName::ParetoUnit)]
    pub law: LawName,
    /// Cap for `capped-pareto`, value for `constant`.
    #[arg(long)]
    pub cap: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawName {
    #[default]
    ParetoUnit,
    CappedPareto,
    Constant,
}

fn build_field(seed: u64, alpha: f64, law: LawName, cap: Option<f64>, dim: usize) -> Result<SceneryField> {
    let law = match law {
        LawName::ParetoUnit => Law::ParetoUnit,
        LawName::CappedPareto => Law::CappedPareto { cap: cap.ok_or_else(|| Error::Config("capped-pareto needs a cap".into()))? },
        LawName::Constant => Law::Constant { value: cap.unwrap_or(1.0) },
    };
    SceneryField::new(seed, alpha, dim, law)
}

impl SceneryArgs {
    fn field(&self, dim: usize) -> Result<SceneryField> {
        build_field(self.seed, self.alpha, self.law, self.cap, dim)
    }
}

#[derive(Subcommand, Debug)]
pub enum SceneryCmd {
    /// CSV rows `x1,...,xd,z` for the cube `[-radius, radius]^d`.
    Dump {
        #[command(flatten)]
        scenery: SceneryArgs,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        radius: i64,
    },
}

#[derive(Subcommand, Debug)]
pub enum WalkCmd {
    Check,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[command(flatten)]
    pub scenery: SceneryArgs,
    #[arg(long, default_value_t = 1)]
    pub d1: usize,
    #[arg(long, default_value_t = 1)]
    pub d2: usize,
}

impl ModelArgs {
    fn model(&self) -> Result<LayeredModel> {
        LayeredModel::new(self.d1, self.d2, self.scenery.field(self.d2)?)
    }
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub n: u64,
    /// Walker seed; defaults to the scenery seed.
    #[arg(long)]
    pub walk_seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MethodArg {
    TimeChange,
    Gillespie,
    Csrw,
}

#[derive(Subcommand, Debug)]
pub enum SimulateCmd {
    /// Endpoints of the layered walk as JSONL `{"x": [...]}`.
    Layered {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1000)]
        n: u64,
        #[arg(long, value_enum, default_value_t = MethodArg::TimeChange)]
        method: MethodArg,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    RaoBlackwell,
    RaoBlackwellBridge,
    DirectGillespie,
    Factorized,
}

impl From<ModeArg> for KernelMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::RaoBlackwell => KernelMode::RaoBlackwell,
            ModeArg::RaoBlackwellBridge => KernelMode::RaoBlackwellBridge,
            ModeArg::DirectGillespie => KernelMode::DirectGillespie,
            ModeArg::Factorized => KernelMode::Factorized,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum TailModeArg {
    Unpinned,
    PinnedIndicator,
    PinnedBridge,
    Factorized,
}

#[derive(Subcommand, Debug)]
pub enum EstimateCmd {
    /// `P(A(t) >= t^rho)` for the walk on `Z^d`.
    RwrsTail {
        #[command(flatten)]
        scenery: SceneryArgs,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long)]
        rho: f64,
        #[arg(long, value_enum, default_value_t = TailModeArg::Unpinned)]
        mode: TailModeArg,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// `P(A(t) <= t^{s - eps})` or, with `--finite-mean`, `P(A(t) <= t (E z - eps))`.
    RwrsLower {
        #[command(flatten)]
        scenery: SceneryArgs,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        finite_mean: bool,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Probability of visiting `{z >= t^(rho - 5 eps)}` before `t`.
    Hitting {
        #[command(flatten)]
        scenery: SceneryArgs,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        eps: f64,
        #[command(flatten)]
        grid: GridArgs,
    },
    Ondiag {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = ModeArg::RaoBlackwell)]
        mode: ModeArg,
        #[command(flatten)]
        grid: GridArgs,
    },
    Moddev {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        pinned: bool,
        #[arg(long, value_enum, default_value_t = ModeArg::RaoBlackwell)]
        mode: ModeArg,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Green function along `e1`; `--grid` lists the distances.
    Green {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        box_radius: Option<i64>,
        #[arg(long, default_value_t = 1000)]
        tail_samples: u64,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Quenched over averaged kernel at `(x1, x2)` targets given as `x1;x2` pairs of comma lists.
    Lclt {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        t: f64,
        #[arg(long, required = true)]
        target: Vec<String>,
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::RaoBlackwellBridge)]
        mode: ModeArg,
        #[arg(long)]
        walk_seed: Option<u64>,
    },
}

#[derive(Subcommand, Debug)]
pub enum DiagnoseCmd {
    /// Returns to and departures from `{z >= threshold}` along one walk.
    Returns {
        #[command(flatten)]
        scenery: SceneryArgs,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        walk: u64,
    },
}

#[derive(Args, Debug, Clone)]
pub struct OracleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 10)]
    pub radius: i64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub from: Option<Vec<i64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub to: Vec<i64>,
    /// Constant-speed chain.
    #[arg(long)]
    pub csrw: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum BoundaryArg {
    Absorbing,
    Reflecting,
}

#[derive(Subcommand, Debug)]
pub enum OracleCmd {
    Prob {
        #[command(flatten)]
        args: OracleArgs,
        #[arg(long)]
        t: f64,
        #[arg(long, value_enum, default_value_t = BoundaryArg::Absorbing)]
        boundary: BoundaryArg,
    },
    Green {
        #[command(flatten)]
        args: OracleArgs,
    },
}

#[derive(Subcommand, Debug)]
pub enum TheoryCmd {
    /// Exponents and constants as CSV; points are `d1,d2,alpha` triples.
    Table {
        #[arg(long = "point")]
        points: Vec<String>,
    },
    /// Replay the golden table.
    Check,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// JSONL series; `-` reads stdin.
    pub input: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub theory: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 25)]
    pub min_hits: u64,
}

#[derive(Args, Debug)]
pub struct AcceptArgs {
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Override a config leaf, e.g. `--set n_samples=1000 --set params.rho=1.3`.
    #[arg(long = "set")]
    pub set: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    RwrsTail,
    RwrsLower,
    Hitting,
    Returns,
    Ondiag,
    Moddev,
    Green,
    Lclt,
    OracleProb,
    OracleGreen,
    TheoryTable,
    Acceptance,
}

/// `base^k` for `k = min_exp..=max_exp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default = "two")]
    pub base: f64,
    pub min_exp: i32,
    pub max_exp: i32,
}

fn two() -> f64 {
    2.0
}

fn one() -> usize {
    1
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        (self.min_exp..=self.max_exp).map(|k| self.base.powi(k)).collect()
    }
}

/// Experiment-specific knobs; unused ones are ignored.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default)]
    pub pinned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<LowerThreshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Single time for lclt, returns and oracle-prob.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,
    #[serde(default)]
    pub constant_speed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_samples: Option<u64>,
    /// Acceptance criteria to run; empty runs all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub only: Vec<u32>,
}

/// A reproducible experiment. RWRS experiments walk on `Z^{d2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default = "one")]
    pub d1: usize,
    #[serde(default = "one")]
    pub d2: usize,
    pub alpha: f64,
    #[serde(default)]
    pub law: LawName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Grid>,
    pub n_samples: u64,
    pub scenery_seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeArg>,
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub params: Params,
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenery_seeds.is_empty() {
            return cfg_err("scenery_seeds is empty");
        }
        let mut seen = self.scenery_seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.scenery_seeds.len() {
            return cfg_err("scenery_seeds must be distinct");
        }
        for (name, g) in [("t_grid", &self.t_grid), ("n_grid", &self.n_grid)] {
            if let Some(g) = g {
                if g.min_exp > g.max_exp || !(g.base > 1.0) {
                    return cfg_err(format!("{name} is empty or has base <= 1"));
                }
            }
        }
        let needs = |g: &Option<Grid>, name: &str| if g.is_none() { cfg_err(format!("{:?} needs {name}", self.experiment)) } else { Ok(()) };
        match self.experiment {
            Experiment::RwrsTail | Experiment::RwrsLower | Experiment::Hitting | Experiment::Ondiag | Experiment::Moddev => {
                needs(&self.t_grid, "t_grid")?
            }
            Experiment::Green => needs(&self.n_grid, "n_grid")?,
            _ => {}
        }
        if self.n_samples == 0 {
            return cfg_err("n_samples must be >= 1");
        }
        Ok(())
    }

    /// Parse JSON and apply `key.path=value` overrides (values parsed as JSON, else strings).
    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut v: Value = serde_json::from_str(text)?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut v;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let obj = node.as_object_mut().ok_or_else(|| Error::Config(format!("{key}: {part} is not inside an object")))?;
                if i + 1 == parts.len() {
                    obj.insert(part.to_string(), value.clone());
                    break;
                }
                node = obj.entry(part.to_string()).or_insert_with(|| json!({}));
            }
        }
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn field(&self, seed: u64, dim: usize) -> Result<SceneryField> {
        build_field(seed, self.alpha, self.law, self.cap, dim)
    }

    fn model(&self, seed: u64) -> Result<LayeredModel> {
        LayeredModel::new(self.d1, self.d2, self.field(seed, self.d2)?)
    }

    fn t_values(&self) -> Vec<f64> {
        self.t_grid.as_ref().map(Grid::values).unwrap_or_default()
    }

    fn kernel_mode(&self) -> KernelMode {
        self.mode.map(KernelMode::from).unwrap_or(KernelMode::RaoBlackwell)
    }

    fn param<T: Copy>(&self, v: Option<T>, name: &str) -> Result<T> {
        v.ok_or_else(|| Error::Config(format!("{:?} needs params.{name}", self.experiment)))
    }

    /// Theoretical slope for the experiment's series, when one is defined.
    pub fn theory_slope(&self) -> Option<f64> {
        let (d1, d2, a) = (self.d1, self.d2, self.alpha);
        match self.experiment {
            Experiment::RwrsTail => {
                let rho = self.params.rho?;
                if self.params.pinned {
                    theory::rwrs_pinned_tail_exponent(d2, a, rho).ok()
                } else {
                    theory::rwrs_tail_exponent(d2, a, rho).ok()
                }
            }
            Experiment::Hitting => theory::rwrs_tail_exponent(d2, a, self.params.rho?).ok(),
            Experiment::Ondiag => theory::ondiag_exponent(d1, d2, a).ok().map(|b| -b),
            Experiment::Moddev => {
                let r = theory::moddev_exponent(d1, d2, a, self.params.delta?).ok()?;
                Some(if self.params.pinned { -r } else { d2 as f64 / 2.0 - r })
            }
            Experiment::Green => theory::green_exponent(d1, d2, a).ok(),
            _ => None,
        }
    }
}

/// Output of one experiment for one scenery seed.
enum SeedOutput {
    Series(EstimateSeries),
    Json(Value),
}

fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedOutput> {
    let grid = cfg.t_values();
    let n = cfg.n_samples;
    let p = &cfg.params;
    Ok(match cfg.experiment {
        Experiment::RwrsTail => {
            let mode = if p.pinned { TailMode::PinnedBridge } else { TailMode::Unpinned };
            let tc = TailConfig { d: cfg.d2, rho: cfg.param(p.rho, "rho")?, t_grid: grid, n_samples: n, seed, mode };
            SeedOutput::Series(rwrs::tail_estimate(&cfg.field(seed, cfg.d2)?, &tc)?)
        }
        Experiment::RwrsLower => {
            let th = cfg.param(p.lower, "lower")?;
            SeedOutput::Series(rwrs::lower_deviation_estimate(&cfg.field(seed, cfg.d2)?, cfg.d2, th, &grid, n, seed)?)
        }
        Experiment::Hitting => SeedOutput::Series(rwrs::hitting_estimate(
            &cfg.field(seed, cfg.d2)?,
            cfg.d2,
            cfg.param(p.rho, "rho")?,
            cfg.param(p.eps, "eps")?,
            &grid,
            n,
            seed,
        )?),
        Experiment::Returns => {
            let field = cfg.field(seed, cfg.d2)?;
            let mut rng = stream_rng(seed, &[tags::RETURNS, seed, 0]);
            let path = walk::simulate_path(Point::origin(cfg.d2), cfg.param(p.t, "t")?, &mut rng)?;
            SeedOutput::Json(serde_json::to_value(rwrs::returns_diagnostics(&path, &field, cfg.param(p.threshold, "threshold")?)?)?)
        }
        Experiment::Ondiag => SeedOutput::Series(layered::ondiag_estimate(&cfg.model(seed)?, &grid, n, cfg.kernel_mode(), seed)?),
        Experiment::Moddev => SeedOutput::Series(layered::moddev_estimate(
            &cfg.model(seed)?,
            &grid,
            cfg.param(p.delta, "delta")?,
            n,
            p.pinned,
            cfg.kernel_mode(),
            seed,
        )?),
        Experiment::Green => {
            let model = cfg.model(seed)?;
            let ns: Vec<i64> = cfg.n_grid.as_ref().map(Grid::values).unwrap_or_default().iter().map(|&x| x.round() as i64).collect();
            let mut gc = GreenConfig { n_samples: n, seed, box_radius: p.radius, ..GreenConfig::default() };
            if let Some(k) = p.tail_samples {
                gc.tail_samples = k;
            }
            SeedOutput::Series(layered::green_series(&model, &layered::green_survey(&model, &ns, &gc)?))
        }
        Experiment::Lclt => {
            let model = cfg.model(seed)?;
            let t = cfg.param(p.t, "t")?;
            if p.targets.is_empty() {
                return cfg_err("lclt needs params.targets");
            }
            let mode = cfg.mode.map(KernelMode::from).unwrap_or(KernelMode::RaoBlackwellBridge);
            SeedOutput::Json(serde_json::to_value(layered::lclt_ratio(&model, t, &p.targets, n, mode, seed)?)?)
        }
        Experiment::OracleProb | Experiment::OracleGreen => {
            let model = cfg.model(seed)?;
            let r = cfg.param(p.radius, "radius")?;
            let to = p.targets.first().ok_or_else(|| Error::Config("oracle runs need params.targets".into()))?;
            let shape = LatticeBox::cube(model.dim(), r);
            let origin = vec![0i64; model.dim()];
            let v = if cfg.experiment == Experiment::OracleProb {
                let g = GeneratorBox::layered(&model, shape, p.boundary.unwrap_or(Boundary::Absorbing), p.constant_speed)?;
                exact_prob(&g, cfg.param(p.t, "t")?, &origin, &to.coords())?
            } else {
                let g = GeneratorBox::layered(&model, shape, Boundary::Absorbing, p.constant_speed)?;
                exact_green(&g, &origin, &to.coords())?
            };
            SeedOutput::Json(serde_json::to_value(v)?)
        }
        Experiment::TheoryTable | Experiment::Acceptance => unreachable!("seedless experiments"),
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_name(e: Experiment) -> String {
    serde_json::to_value(e).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_else(|| "run".into())
}

/// Execute a config; returns whether every verdict (if any) passed.
pub fn run(cfg: &RunConfig) -> Result<bool> {
    let start = Instant::now();
    let out = &cfg.output;
    fs::create_dir_all(out)?;
    let name = file_name(cfg.experiment);
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    let mut write = |fname: String, bytes: &[u8]| -> Result<()> {
        fs::write(out.join(&fname), bytes)?;
        files.insert(fname, sha256_hex(bytes));
        Ok(())
    };
    let mut summary = json!({"experiment": name, "config": cfg});
    let mut ok = true;
    match cfg.experiment {
        Experiment::TheoryTable => {
            let mut pts = theory::default_table_points();
            if !pts.contains(&(cfg.d1, cfg.d2, cfg.alpha)) {
                pts.push((cfg.d1, cfg.d2, cfg.alpha));
            }
            write(format!("{name}.csv"), theory::table_csv(&pts).as_bytes())?;
        }
        Experiment::Acceptance => {
            let suite = Suite::new(AcceptanceConfig {
                seeds: cfg.scenery_seeds.clone(),
                only: cfg.params.only.clone(),
                out_dir: Some(out.join("series")),
            });
            let reports = suite.run(|r| println!("{}", r.line()))?;
            ok = reports.iter().all(|r| r.pass);
            summary["criteria"] = serde_json::to_value(&reports)?;
        }
        _ => {
            let theory = cfg.theory_slope();
            let mut seeds = serde_json::Map::new();
            let mut all = Vec::new();
            for &seed in &cfg.scenery_seeds {
                match run_seed(cfg, seed)? {
                    SeedOutput::Series(s) => {
                        write(format!("{name}_seed{seed}.jsonl"), s.to_jsonl().as_bytes())?;
                        let fit = fit_exponent(&s, &FitOptions::default()).ok();
                        let verdict = match (&fit, theory) {
                            (Some(f), Some(th)) => Some(compare_to_theory(f, th, 0.1)),
                            _ => None,
                        };
                        if let Some(v) = &verdict {
                            ok &= v.pass;
                        }
                        seeds.insert(seed.to_string(), json!({"fit": fit, "verdict": verdict}));
                        all.push(s);
                    }
                    SeedOutput::Json(v) => {
                        let mut line = serde_json::to_string(&v)?;
                        line.push('\n');
                        write(format!("{name}_seed{seed}.jsonl"), line.as_bytes())?;
                        seeds.insert(seed.to_string(), v);
                    }
                }
            }
            summary["seeds"] = Value::Object(seeds);
            if all.len() > 1 {
                let pooled = pool(&all);
                summary["pooled"] = json!({"fit": fit_exponent(&pooled, &FitOptions::default()).ok(), "theory": theory});
            }
        }
    }
    write("summary.json".into(), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let manifest = json!({
        "config_sha256": sha256_hex(serde_json::to_string(cfg)?.as_bytes()),
        "version": env!("CARGO_PKG_VERSION"),
        "wall_clock_seconds": start.elapsed().as_secs_f64(),
        "files": files,
    });
    fs::write(out.join("MANIFEST.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(ok)
}

/// Seed average of series on a common grid; the stderr combines the per-seed errors.
pub fn pool(series: &[EstimateSeries]) -> EstimateSeries {
    let mut out = EstimateSeries::new(0, "pooled");
    let k = series.len() as f64;
    for (i, r) in series[0].records.iter().enumerate() {
        let rows: Vec<&EstimateRecord> = series.iter().filter_map(|s| s.records.get(i)).collect();
        let est = rows.iter().map(|r| r.estimate).sum::<f64>() / k;
        let se = rows.iter().map(|r| r.stderr * r.stderr).sum::<f64>().sqrt() / k;
        out.push(EstimateRecord {
            t: r.t,
            estimate: est,
            stderr: se,
            n: rows.iter().map(|r| r.n).sum(),
            hits: rows.iter().map(|r| r.hits).sum(),
            seed: 0,
            mode: r.mode.clone(),
            target: r.target.clone(),
        });
    }
    out
}

fn print_series(s: &EstimateSeries) -> Result<()> {
    let mut out = io::stdout().lock();
    s.write_jsonl(&mut out)?;
    Ok(())
}

fn parse_target(text: &str) -> Result<Target> {
    let (a, b) = text.split_once(';').ok_or_else(|| Error::Argument(format!("target {text:?} is not x1;x2")))?;
    let list = |s: &str| -> Result<Vec<i64>> {
        s.split(',').map(|v| v.trim().parse::<i64>().map_err(|e| Error::Argument(format!("{v:?}: {e}")))).collect()
    };
    Target::new(&list(a)?, &list(b)?)
}

fn parse_point(text: &str) -> Result<(usize, usize, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::Argument(format!("point {text:?} is not d1,d2,alpha"));
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok((parts[0].parse().map_err(|_| bad())?, parts[1].parse().map_err(|_| bad())?, parts[2].parse().map_err(|_| bad())?))
}

/// Run one command; `Ok(false)` is a completed run with a failing check.
pub fn execute(cli: Cli) -> Result<bool> {
    let threads = cli.threads;
    match cli.command {
        Command::Run(args) => {
            let text = fs::read_to_string(&args.config)?;
            let cfg = RunConfig::from_json_with_overrides(&text, &args.set)?;
            let t = cfg.threads.unwrap_or(threads);
            with_threads(t, || run(&cfg))
        }
        other => with_threads(threads, || dispatch(other)),
    }
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Scenery(SceneryCmd::Dump { scenery: s, dim, radius }) => {
            let field = s.field(dim)?;
            scenery::dump_csv(&field, &LatticeBox::cube(dim, radius), io::stdout().lock())?;
            Ok(true)
        }
        Command::Walk(WalkCmd::Check) => {
            let lines = walk::self_check();
            for l in &lines {
                println!("{} {} error={:.3e} tolerance={:.1e}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.value, l.tolerance);
            }
            Ok(lines.iter().all(|l| l.passed))
        }
        Command::Simulate(SimulateCmd::Layered { model, t, n, method }) => {
            let m = model.model()?;
            let method = match method {
                MethodArg::TimeChange => SampleMethod::TimeChange,
                MethodArg::Gillespie => SampleMethod::Gillespie,
                MethodArg::Csrw => SampleMethod::Csrw,
            };
            let pts = layered::simulate_layered(&m, t, n, method, model.scenery.seed)?;
            let mut out = io::stdout().lock();
            for p in pts {
                writeln!(out, "{}", json!({"x": p}))?;
            }
            Ok(true)
        }
        Command::Estimate(e) => {
            estimate(e)?;
            Ok(true)
        }
        Command::Diagnose(DiagnoseCmd::Returns { scenery: s, d, t, threshold, walk: w }) => {
            let field = s.field(d)?;
            let mut rng = stream_rng(s.seed, &[tags::RETURNS, s.seed, w]);
            let path = walk::simulate_path(Point::origin(d), t, &mut rng)?;
            println!("{}", serde_json::to_string(&rwrs::returns_diagnostics(&path, &field, threshold)?)?);
            Ok(true)
        }
        Command::Oracle(o) => {
            let v = match o {
                OracleCmd::Prob { args, t, boundary } => {
                    let b = match boundary {
                        BoundaryArg::Absorbing => Boundary::Absorbing,
                        BoundaryArg::Reflecting => Boundary::Reflecting,
                    };
                    let m = args.model.model()?;
                    let g = GeneratorBox::layered(&m, LatticeBox::cube(m.dim(), args.radius), b, args.csrw)?;
                    let from = args.from.clone().unwrap_or(vec![0; m.dim()]);
                    exact_prob(&g, t, &from, &args.to)?
                }
                OracleCmd::Green { args } => {
                    let m = args.model.model()?;
                    let g = GeneratorBox::layered(&m, LatticeBox::cube(m.dim(), args.radius), Boundary::Absorbing, args.csrw)?;
                    let from = args.from.clone().unwrap_or(vec![0; m.dim()]);
                    exact_green(&g, &from, &args.to)?
                }
            };
            println!("{}", serde_json::to_string(&v)?);
            Ok(true)
        }
        Command::Theory(TheoryCmd::Table { points }) => {
            let pts = if points.is_empty() {
                theory::default_table_points()
            } else {
                points.iter().map(|p| parse_point(p)).collect::<Result<_>>()?
            };
            print!("{}", theory::table_csv(&pts));
            Ok(true)
        }
        Command::Theory(TheoryCmd::Check) => {
            let table = theory::golden_table();
            for c in &table {
                println!("{} {} expected={} computed={}", if c.passed() { "PASS" } else { "FAIL" }, c.name, c.expected, c.computed);
            }
            Ok(table.iter().all(|c| c.passed()))
        }
        Command::Fit(args) => {
            let series = if args.input == Path::new("-") {
                EstimateSeries::read_jsonl(io::stdin().lock())?
            } else {
                EstimateSeries::read_jsonl(io::BufReader::new(fs::File::open(&args.input)?))?
            };
            let opts = FitOptions { min_hits: args.min_hits, ..FitOptions::default() };
            let fit = fit_exponent(&series, &opts)?;
            let verdict = args.theory.map(|th| compare_to_theory(&fit, th, args.tolerance));
            println!("{}", json!({"fit": fit, "verdict": verdict}));
            Ok(verdict.map(|v| v.pass).unwrap_or(true))
        }
        Command::Accept(args) => {
            let suite = Suite::new(AcceptanceConfig { seeds: args.seeds, only: args.only, out_dir: args.out.clone() });
            let reports = suite.run(|r| println!("{}", r.line()))?;
            if let Some(dir) = args.out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&reports)?)?;
            }
            Ok(reports.iter().all(|r| r.pass))
        }
        Command::Run(_) => unreachable!("handled by execute"),
    }
}

fn estimate(cmd: EstimateCmd) -> Result<()> {
    let seed_of = |g: &GridArgs, s: &SceneryArgs| g.walk_seed.unwrap_or(s.seed);
    match cmd {
        EstimateCmd::RwrsTail { scenery: s, d, rho, mode, grid } => {
            let mode = match mode {
                TailModeArg::Unpinned => TailMode::Unpinned,
                TailModeArg::PinnedIndicator => TailMode::PinnedIndicator,
                TailModeArg::PinnedBridge => TailMode::PinnedBridge,
                TailModeArg::Factorized => TailMode::Factorized,
            };
            let cfg = TailConfig { d, rho, t_grid: grid.grid.clone(), n_samples: grid.n, seed: seed_of(&grid, &s), mode };
            print_series(&rwrs::tail_estimate(&s.field(d)?, &cfg)?)
        }
        EstimateCmd::RwrsLower { scenery: s, d, eps, finite_mean, grid } => {
            let th = if finite_mean { LowerThreshold::FiniteMean(eps) } else { LowerThreshold::ScalingGap(eps) };
            print_series(&rwrs::lower_deviation_estimate(&s.field(d)?, d, th, &grid.grid, grid.n, seed_of(&grid, &s))?)
        }
        EstimateCmd::Hitting { scenery: s, d, rho, eps, grid } => {
            print_series(&rwrs::hitting_estimate(&s.field(d)?, d, rho, eps, &grid.grid, grid.n, seed_of(&grid, &s))?)
        }
        EstimateCmd::Ondiag { model, mode, grid } => {
            let seed = seed_of(&grid, &model.scenery);
            print_series(&layered::ondiag_estimate(&model.model()?, &grid.grid, grid.n, mode.into(), seed)?)
        }
        EstimateCmd::Moddev { model, delta, pinned, mode, grid } => {
            let seed = seed_of(&grid, &model.scenery);
            print_series(&layered::moddev_estimate(&model.model()?, &grid.grid, delta, grid.n, pinned, mode.into(), seed)?)
        }
        EstimateCmd::Green { model, box_radius, tail_samples, grid } => {
            let m = model.model()?;
            let ns: Vec<i64> = grid.grid.iter().map(|&x| x.round() as i64).collect();
            let cfg = GreenConfig { n_samples: grid.n, tail_samples, seed: seed_of(&grid, &model.scenery), box_radius, ..GreenConfig::default() };
            let est = layered::green_survey(&m, &ns, &cfg)?;
            let mut out = io::stdout().lock();
            for e in &est {
                writeln!(out, "{}", serde_json::to_string(e)?)?;
            }
            Ok(())
        }
        EstimateCmd::Lclt { model, t, target, n, mode, walk_seed } => {
            let targets: Vec<Target> = target.iter().map(|s| parse_target(s)).collect::<Result<_>>()?;
            let seed = walk_seed.unwrap_or(model.scenery.seed);
            let rs = layered::lclt_ratio(&model.model()?, t, &targets, n, mode.into(), seed)?;
            let mut out = io::stdout().lock();
            for r in rs {
                writeln!(out, "{}", serde_json::to_string(&r)?)?;
            }
            Ok(())
        }
    }
}

/// Machine-readable error line.
pub fn error_json(e: &Error) -> String {
    json!({"error": e.kind(), "message": e.to_string()}).to_string()
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = io::stdout().flush();
            eprintln!("{}", error_json(&e));
            match e {
                Error::Config(_) | Error::Argument(_) | Error::Dimension { .. } => 2,
                _ => 3,
            }
        }
    }
}
