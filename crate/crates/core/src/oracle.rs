//! Exact finite-box computations: transition probabilities by uniformization
//! and Green functions by a preconditioned conjugate-gradient solve.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{arg_err, Error, Result};
use crate::lattice::{LatticeBox, Point};
use crate::layered::LayeredModel;
use crate::numeric::Neumaier;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Jumps leaving the box are lost.
    Absorbing,
    /// Jumps leaving the box are suppressed.
    Reflecting,
}

/// Sparse generator of a chain on finitely many states.
///
/// Rates are `base(i -> j) / speed(i)`: `speed = 1` is the variable-speed chain and
/// `speed = omega(x)` its constant-speed time change.
#[derive(Clone, Debug)]
pub struct GeneratorBox {
    shape: Option<LatticeBox>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    base: Vec<f64>,
    /// Total base rate out of each state, absorbed jumps included.
    exit: Vec<f64>,
    speed: Vec<f64>,
    pub boundary: Boundary,
    /// Uniformization rate, the largest effective exit rate.
    pub lambda: f64,
}

/// Oracle output, serialized as `{"value", "absorbed_mass", "iterations", "residual"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub absorbed_mass: Option<f64>,
    pub iterations: u64,
    pub residual: Option<f64>,
}

/// Matrix applications allowed to one uniformization.
pub const UNIFORMIZATION_BUDGET: u64 = 1_000_000;
/// Poisson mass left out of the uniformization series.
pub const POISSON_TAIL: f64 = 1e-12;
/// Relative residual required of the Green solve.
pub const GREEN_TOLERANCE: f64 = 1e-10;
pub const GREEN_MAX_ITERATIONS: u64 = 200_000;

impl GeneratorBox {
    /// General chain from directed edges `(from, to, rate)` on states `0..n`, plus
    /// an extra killing rate per state (empty for none).
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], killing: &[f64]) -> Result<Self> {
        if n == 0 {
            return arg_err("a chain needs at least one state");
        }
        if !killing.is_empty() && killing.len() != n {
            return arg_err("killing rates must be given for every state or none");
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, r) in edges {
            if i >= n || j >= n {
                return arg_err(format!("edge ({i}, {j}) outside 0..{n}"));
            }
            if !(r > 0.0 && r.is_finite()) {
                return arg_err(format!("rate must be positive and finite, got {r}"));
            }
            if i != j {
                rows[i].push((j, r));
            }
        }
        let mut exit: Vec<f64> = rows.iter().map(|r| r.iter().map(|e| e.1).sum()).collect();
        let mut absorbing = false;
        for (e, &k) in exit.iter_mut().zip(killing) {
            if !(k >= 0.0 && k.is_finite()) {
                return arg_err(format!("killing rate must be finite and >= 0, got {k}"));
            }
            *e += k;
            absorbing |= k > 0.0;
        }
        let boundary = if absorbing { Boundary::Absorbing } else { Boundary::Reflecting };
        Ok(Self::assemble(None, rows, exit, vec![1.0; n], boundary))
    }

    /// `{0, ..., len}` with unit rates between neighbours; the ends absorb, so the states are `1..len`.
    pub fn path_graph(len: usize) -> Result<Self> {
        if len < 2 {
            return arg_err("path graph needs len >= 2");
        }
        let m = len - 1;
        let mut edges = Vec::new();
        for i in 0..m.saturating_sub(1) {
            edges.push((i, i + 1, 1.0));
            edges.push((i + 1, i, 1.0));
        }
        let mut killing = vec![0.0; m];
        killing[0] += 1.0;
        killing[m - 1] += 1.0;
        Self::from_edges(m, &edges, &killing)
    }

    /// Layered conductances on a box of `Z^{d1+d2}`: rate `z(x2)` along the first `d1` axes, `1` along the rest.
    pub fn layered(model: &LayeredModel, shape: LatticeBox, boundary: Boundary, constant_speed: bool) -> Result<Self> {
        if shape.dim() != model.dim() {
            return Err(Error::Dimension { expected: model.dim(), got: shape.dim() });
        }
        let d1 = model.d1;
        Self::on_lattice(shape, boundary, constant_speed, |p: &Point| {
            let (_, x2) = p.split(d1);
            let z = model.field.z_point(&x2);
            (0..model.dim()).map(|axis| if axis < d1 { z } else { 1.0 }).collect()
        })
    }

    /// Free unit-rate walk on `[-radius, radius]^d`.
    pub fn free_walk(d: usize, radius: i64, boundary: Boundary) -> Result<Self> {
        Self::on_lattice(LatticeBox::cube(d, radius), boundary, false, |_| vec![1.0; d])
    }

    /// Nearest-neighbour chain on a box; `axis_rates(x)[i]` is the rate of both jumps along axis `i`.
    pub fn on_lattice(
        shape: LatticeBox,
        boundary: Boundary,
        constant_speed: bool,
        axis_rates: impl Fn(&Point) -> Vec<f64>,
    ) -> Result<Self> {
        let n = shape.len();
        if n > 50_000_000 {
            return Err(Error::Resource(format!("box of {n} states is too large")));
        }
        let n = n as usize;
        let mut rows = Vec::with_capacity(n);
        let mut exit = Vec::with_capacity(n);
        let mut speed = Vec::with_capacity(n);
        for p in shape.iter() {
            let rates = axis_rates(&p);
            let mut row = Vec::with_capacity(2 * rates.len());
            let mut out = 0.0;
            let mut omega = 0.0;
            for (axis, &r) in rates.iter().enumerate() {
                if !(r >= 0.0 && r.is_finite()) {
                    return arg_err(format!("rate must be finite and >= 0, got {r}"));
                }
                for positive in [true, false] {
                    omega += r;
                    let mut q = p;
                    q.step(axis, positive);
                    match shape.index_of(&q) {
                        Some(j) if r > 0.0 => {
                            row.push((j, r));
                            out += r;
                        }
                        Some(_) => {}
                        None => {
                            if boundary == Boundary::Absorbing {
                                out += r;
                            }
                        }
                    }
                }
            }
            rows.push(row);
            exit.push(out);
            speed.push(if constant_speed { omega } else { 1.0 });
        }
        if speed.iter().any(|&s| s <= 0.0) {
            return arg_err("constant-speed chain needs a positive total conductance at every site");
        }
        Ok(Self::assemble(Some(shape), rows, exit, speed, boundary))
    }

    fn assemble(shape: Option<LatticeBox>, rows: Vec<Vec<(usize, f64)>>, exit: Vec<f64>, speed: Vec<f64>, boundary: Boundary) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut base = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, r) in row {
                cols.push(j);
                base.push(r);
            }
            row_ptr.push(cols.len());
        }
        let lambda = exit.iter().zip(&speed).map(|(e, s)| e / s).fold(0.0, f64::max);
        GeneratorBox { shape, row_ptr, cols, base, exit, speed, boundary, lambda }
    }

    pub fn states(&self) -> usize {
        self.exit.len()
    }

    /// State index of a site (a one-coordinate index for edge-built chains).
    pub fn index(&self, site: &[i64]) -> Result<usize> {
        match &self.shape {
            Some(b) => {
                let p = Point::from_slice(site)?;
                p.ensure_dim(b.dim())?;
                b.index_of(&p).ok_or_else(|| Error::Argument(format!("site {site:?} outside the box")))
            }
            None => {
                if site.len() != 1 {
                    return Err(Error::Dimension { expected: 1, got: site.len() });
                }
                let i = site[0];
                if i < 0 || i as usize >= self.states() {
                    return arg_err(format!("state {i} outside 0..{}", self.states()));
                }
                Ok(i as usize)
            }
        }
    }

    /// One step `v <- v P` of the uniformized chain `P = I + L / lambda`.
    fn step(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = v[i] * (1.0 - self.exit[i] / (self.speed[i] * self.lambda));
        }
        for (i, &vi) in v.iter().enumerate().take(self.states()) {
            if vi == 0.0 {
                continue;
            }
            let scale = vi / (self.speed[i] * self.lambda);
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[e]] += scale * self.base[e];
            }
        }
    }

    /// Law of the chain at time `t` started from state `from`, and the series length used.
    pub fn distribution(&self, t: f64, from: usize) -> Result<(Vec<f64>, u64)> {
        if !(t >= 0.0 && t.is_finite()) {
            return arg_err(format!("time must be finite and >= 0, got {t}"));
        }
        if from >= self.states() {
            return arg_err(format!("state {from} outside 0..{}", self.states()));
        }
        let n = self.states();
        let mut v = vec![0.0; n];
        v[from] = 1.0;
        let mu = self.lambda * t;
        if mu == 0.0 {
            return Ok((v, 0));
        }
        if mu + 12.0 * mu.sqrt() + 50.0 > UNIFORMIZATION_BUDGET as f64 {
            return Err(Error::Resource(format!(
                "uniformization needs about {mu:.3e} matrix applications (budget {UNIFORMIZATION_BUDGET}); cap the scenery or shorten t"
            )));
        }
        let mut acc = vec![Neumaier::new(); n];
        let mut next = vec![0.0; n];
        let mut mass = Neumaier::new();
        let ln_mu = mu.ln();
        let mut k: u64 = 0;
        loop {
            let w = (-mu + k as f64 * ln_mu - ln_gamma(k as f64 + 1.0)).exp();
            if w > 0.0 {
                for (a, &x) in acc.iter_mut().zip(&v) {
                    if x != 0.0 {
                        a.add(w * x);
                    }
                }
            }
            mass.add(w);
            if k as f64 > mu && 1.0 - mass.value() < POISSON_TAIL {
                break;
            }
            k += 1;
            if k > UNIFORMIZATION_BUDGET {
                return Err(Error::Resource(format!("uniformization exceeded {UNIFORMIZATION_BUDGET} matrix applications")));
            }
            self.step(&v, &mut next);
            std::mem::swap(&mut v, &mut next);
        }
        Ok((acc.iter().map(|a| a.value()).collect(), k))
    }

    /// Sum of the base rates in both directions must agree for the Green solve.
    fn is_symmetric(&self) -> bool {
        let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(self.cols.len());
        for i in 0..self.states() {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                edges.push((i, self.cols[e], self.base[e]));
            }
        }
        let mut fwd: Vec<(usize, usize, u64)> = edges.iter().map(|&(i, j, r)| (i, j, r.to_bits())).collect();
        let mut rev: Vec<(usize, usize, u64)> = edges.iter().map(|&(i, j, r)| (j, i, r.to_bits())).collect();
        fwd.sort_unstable();
        rev.sort_unstable();
        fwd == rev
    }

    /// `y = -L_base x`.
    fn apply_base(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.states() {
            let mut s = self.exit[i] * x[i];
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                s -= self.base[e] * x[self.cols[e]];
            }
            y[i] = s;
        }
    }
}

/// `P(X_t = to | X_0 = from)` with the mass absorbed by the boundary.
pub fn exact_prob(gen: &GeneratorBox, t: f64, from: &[i64], to: &[i64]) -> Result<OracleValue> {
    let i = gen.index(from)?;
    let j = gen.index(to)?;
    let (dist, iterations) = gen.distribution(t, i)?;
    let total: f64 = dist.iter().sum();
    Ok(OracleValue { value: dist[j], absorbed_mass: Some((1.0 - total).max(0.0)), iterations, residual: None })
}

/// Green function `int_0^inf P(X_t = to | X_0 = from) dt` of the absorbed chain,
/// from `-L g = delta_from` by Jacobi-preconditioned conjugate gradients.
pub fn exact_green(gen: &GeneratorBox, from: &[i64], to: &[i64]) -> Result<OracleValue> {
    if gen.boundary != Boundary::Absorbing {
        return arg_err("the Green function of a closed box is infinite; use an absorbing boundary");
    }
    if !gen.is_symmetric() {
        return arg_err("the Green solve needs symmetric conductances");
    }
    let i = gen.index(from)?;
    let j = gen.index(to)?;
    let n = gen.states();
    let (g, iterations, residual) = conjugate_gradient(gen, i, n)?;
    // the constant-speed chain spends speed(y) times longer in y
    Ok(OracleValue { value: g[j] * gen.speed[j], absorbed_mass: Some(1.0), iterations, residual: Some(residual) })
}

fn conjugate_gradient(gen: &GeneratorBox, source: usize, n: usize) -> Result<(Vec<f64>, u64, f64)> {
    let diag = &gen.exit;
    if diag.iter().any(|&d| d <= 0.0) {
        return arg_err("every state needs a positive exit rate");
    }
    let mut x = vec![0.0; n];
    let mut r = vec![0.0; n];
    r[source] = 1.0;
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut iterations = 0;
    loop {
        let norm = r.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm <= GREEN_TOLERANCE {
            // confirm on the true residual, not the recursively updated one
            gen.apply_base(&x, &mut ap);
            ap[source] -= 1.0;
            let true_norm = ap.iter().map(|a| a * a).sum::<f64>().sqrt();
            if true_norm <= GREEN_TOLERANCE {
                return Ok((x, iterations, true_norm));
            }
            for (ri, a) in r.iter_mut().zip(&ap) {
                *ri = -a;
            }
            z = r.iter().zip(diag).map(|(a, d)| a / d).collect();
            p = z.clone();
            rz = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        }
        if iterations >= GREEN_MAX_ITERATIONS {
            return Err(Error::Resource(format!(
                "Green solve did not reach residual {GREEN_TOLERANCE} in {GREEN_MAX_ITERATIONS} iterations (residual {norm:.3e})"
            )));
        }
        iterations += 1;
        gen.apply_base(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Regime("generator is not positive definite; is every component absorbed?".into()));
        }
        let step = rz / pap;
        for k in 0..n {
            x[k] += step * p[k];
            r[k] -= step * ap[k];
        }
        for k in 0..n {
            z[k] = r[k] / diag[k];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
}
