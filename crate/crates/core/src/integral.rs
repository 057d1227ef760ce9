//! Bounds for expected path integrals `E ∫₀ᵀ f(X_s) ds` and
//! `E ∫₀ᵀ f(s, X_s) ds` over the admissible class, and the matching Monte
//! Carlo functional.
//!
//! Profiles carry a finite support plus a declared tail. Mass outside the
//! support is certified with the closed-form y-integral of the rate kernel,
//! so a finite answer is always an upper bound.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{
    occupation_bound_at, occupation_mass_between, rate_in_sqrt_time, sqrt_time_breaks, BoundReport,
    CoefficientBox,
};
use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_with_breaks, QuadratureOptions};
use crate::sim::{simulate_paths, PathObserver, SimConfig};

/// What the profile does outside its declared support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    /// Exactly zero outside the support.
    Zero,
    /// Bounded by the given constant outside the support.
    Bounded(f64),
    /// Nothing is known; bounds refuse to run.
    Undeclared,
}

/// Regularity data used by the Riemann-sum discretisation budget.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Regularity {
    /// Lipschitz constant in `y` away from the jumps.
    pub lipschitz: f64,
    /// Sum of absolute jump sizes in `y`, including the support edges.
    pub jump_total: f64,
    /// Lipschitz constant in `t`.
    pub time_lipschitz: f64,
}

type SpaceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

const SAMPLE_POINTS: usize = 257;

fn check_support(lo: f64, hi: f64) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(())
    } else {
        Err(Error::UnboundedSupport(format!(
            "support must be a finite interval, got [{lo}, {hi}]"
        )))
    }
}

fn check_tail(tail: Tail) -> Result<()> {
    match tail {
        Tail::Undeclared => Err(Error::UnboundedSupport(
            "tail behaviour outside the support is not declared".into(),
        )),
        Tail::Bounded(s) if !(s >= 0.0 && s.is_finite()) => Err(Error::InvalidProfile(format!(
            "tail bound must be finite and >= 0, got {s}"
        ))),
        _ => Ok(()),
    }
}

fn check_table(xs: &[f64], what: &str) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidProfile(format!("{what} grid is empty")));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidProfile(format!(
            "{what} grid has non-finite entries"
        )));
    }
    if xs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidProfile(format!(
            "{what} grid must be strictly increasing"
        )));
    }
    Ok(())
}

fn check_values(fs: &[f64]) -> Result<()> {
    match fs.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        Some(v) => Err(Error::InvalidProfile(format!(
            "profile values must be finite and >= 0, found {v}"
        ))),
        None => Ok(()),
    }
}

/// Linear interpolation on a strictly increasing grid, zero outside.
fn interp(xs: &[f64], fs: &[f64], x: f64) -> f64 {
    if xs.len() == 1 {
        return if x == xs[0] { fs[0] } else { 0.0 };
    }
    if !(x >= xs[0] && x <= xs[xs.len() - 1]) {
        return 0.0;
    }
    let j = xs.partition_point(|&p| p <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let w = (x - x0) / (x1 - x0);
    fs[j - 1] + w * (fs[j] - fs[j - 1])
}

/// Nonnegative `f(y)` with a finite support `[lo, hi]`.
#[derive(Clone)]
pub struct ProfileFunction {
    label: String,
    f: SpaceFn,
    support: (f64, f64),
    breaks: Vec<f64>,
    tail: Tail,
    regularity: Option<Regularity>,
}

impl fmt::Debug for ProfileFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProfileFunction")
            .field("label", &self.label)
            .field("support", &self.support)
            .field("tail", &self.tail)
            .finish_non_exhaustive()
    }
}

impl ProfileFunction {
    /// Callback profile. Its regularity is unknown until
    /// [`with_regularity`](Self::with_regularity) is called.
    pub fn new<F>(label: impl Into<String>, support: (f64, f64), tail: Tail, f: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_support(support.0, support.1)?;
        Ok(Self {
            label: label.into(),
            f: Arc::new(f),
            support,
            breaks: Vec::new(),
            tail,
            regularity: None,
        })
    }

    pub fn zero() -> Self {
        Self {
            label: "zero".into(),
            f: Arc::new(|_| 0.0),
            support: (0.0, 0.0),
            breaks: Vec::new(),
            tail: Tail::Zero,
            regularity: Some(Regularity::default()),
        }
    }

    /// `height · 1_[c, d]`.
    pub fn indicator(c: f64, d: f64, height: f64) -> Result<Self> {
        check_support(c, d)?;
        check_values(&[height])?;
        Ok(Self {
            label: format!("indicator[{c},{d}]"),
            f: Arc::new(move |y| if (c..=d).contains(&y) { height } else { 0.0 }),
            support: (c, d),
            breaks: Vec::new(),
            tail: Tail::Zero,
            regularity: Some(Regularity {
                lipschitz: 0.0,
                jump_total: 2.0 * height,
                time_lipschitz: 0.0,
            }),
        })
    }

    /// Triangle rising from `c` to `height` at `peak` and back to zero at `d`.
    pub fn tent(c: f64, peak: f64, d: f64, height: f64) -> Result<Self> {
        if !(c < peak && peak < d) {
            return Err(Error::InvalidProfile(format!(
                "tent needs c < peak < d, got {c}, {peak}, {d}"
            )));
        }
        let mut p = Self::piecewise_linear(vec![c, peak, d], vec![0.0, height, 0.0])?;
        p.label = format!("tent[{c},{peak},{d}]");
        Ok(p)
    }

    /// `height · exp(−(y − mu)²/(2 s²))` on `mu ± 8s`, with the Gaussian
    /// value at the cut declared as the tail bound.
    pub fn gaussian(mu: f64, s: f64, height: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite() && mu.is_finite()) {
            return Err(Error::InvalidProfile(format!(
                "gaussian needs s > 0, got {s}"
            )));
        }
        check_values(&[height])?;
        let cut = 8.0;
        Ok(Self {
            label: format!("gaussian[{mu},{s}]"),
            f: Arc::new(move |y| height * (-0.5 * ((y - mu) / s).powi(2)).exp()),
            support: (mu - cut * s, mu + cut * s),
            breaks: vec![mu],
            tail: Tail::Bounded(height * (-0.5 * cut * cut).exp()),
            regularity: Some(Regularity {
                // max |f'| = height/(s √e)
                lipschitz: height / (s * std::f64::consts::E.sqrt()),
                jump_total: 2.0 * height * (-0.5 * cut * cut).exp(),
                time_lipschitz: 0.0,
            }),
        })
    }

    /// Linear interpolation of `(ys, fs)`, zero outside `[ys[0], ys[n−1]]`.
    pub fn piecewise_linear(ys: Vec<f64>, fs: Vec<f64>) -> Result<Self> {
        if ys.len() != fs.len() {
            return Err(Error::InvalidProfile(format!(
                "table has {} abscissae and {} values",
                ys.len(),
                fs.len()
            )));
        }
        check_table(&ys, "y")?;
        check_values(&fs)?;
        let lipschitz = ys
            .windows(2)
            .zip(fs.windows(2))
            .map(|(y, f)| ((f[1] - f[0]) / (y[1] - y[0])).abs())
            .fold(0.0, f64::max);
        let jump_total = fs[0] + fs[fs.len() - 1];
        let support = (ys[0], ys[ys.len() - 1]);
        let breaks = ys.clone();
        Ok(Self {
            label: "table".into(),
            f: Arc::new(move |y| interp(&ys, &fs, y)),
            support,
            breaks,
            tail: Tail::Zero,
            regularity: Some(Regularity {
                lipschitz,
                jump_total,
                time_lipschitz: 0.0,
            }),
        })
    }

    /// `α f + β g` on the union of the supports, with `α, β ≥ 0`.
    pub fn combine(
        alpha: f64,
        f: &ProfileFunction,
        beta: f64,
        g: &ProfileFunction,
    ) -> Result<Self> {
        check_values(&[alpha, beta])?;
        let support = (f.support.0.min(g.support.0), f.support.1.max(g.support.1));
        let tail = match (f.tail, g.tail) {
            (Tail::Undeclared, _) | (_, Tail::Undeclared) => Tail::Undeclared,
            (Tail::Zero, Tail::Zero) => Tail::Zero,
            (s, t) => {
                let bound = |t: Tail| if let Tail::Bounded(v) = t { v } else { 0.0 };
                Tail::Bounded(alpha * bound(s) + beta * bound(t))
            }
        };
        let regularity = match (f.regularity, g.regularity) {
            (Some(r), Some(s)) => Some(Regularity {
                lipschitz: alpha * r.lipschitz + beta * s.lipschitz,
                jump_total: alpha * r.jump_total + beta * s.jump_total,
                time_lipschitz: alpha * r.time_lipschitz + beta * s.time_lipschitz,
            }),
            _ => None,
        };
        let mut breaks: Vec<f64> = f.breaks.iter().chain(&g.breaks).copied().collect();
        breaks.extend([f.support.0, f.support.1, g.support.0, g.support.1]);
        let (ff, gg) = (f.f.clone(), g.f.clone());
        Ok(Self {
            label: format!("{alpha}*{}+{beta}*{}", f.label, g.label),
            f: Arc::new(move |y| alpha * ff(y) + beta * gg(y)),
            support,
            breaks,
            tail,
            regularity,
        })
    }

    pub fn with_regularity(mut self, regularity: Regularity) -> Self {
        self.regularity = Some(regularity);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Extra points where `f` has kinks or jumps, used to seed quadrature.
    pub fn with_breaks(mut self, breaks: impl IntoIterator<Item = f64>) -> Self {
        self.breaks.extend(breaks);
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn tail(&self) -> Tail {
        self.tail
    }

    pub fn regularity(&self) -> Option<Regularity> {
        self.regularity
    }

    pub fn eval(&self, y: f64) -> f64 {
        (self.f)(y)
    }

    /// Checks `f ≥ 0` on a uniform sample of the support and the break points.
    pub fn validate(&self) -> Result<()> {
        check_tail(self.tail)?;
        let (lo, hi) = self.support;
        let samples = (0..SAMPLE_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (SAMPLE_POINTS - 1) as f64)
            .chain(self.breaks.iter().copied());
        for y in samples {
            let v = self.eval(y);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidProfile(format!(
                    "`{}` has f({y}) = {v}; profiles must be finite and >= 0",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

/// Nonnegative `f(t, y)`, nonincreasing in `t`, supported in `y` on `[lo, hi]`.
#[derive(Clone)]
pub struct TimeProfileFunction {
    label: String,
    f: SpaceTimeFn,
    support: (f64, f64),
    breaks: Vec<f64>,
    time_breaks: Vec<f64>,
    tail: Tail,
    regularity: Option<Regularity>,
    /// Extra sample points for the monotonicity check, e.g. table nodes.
    sample_times: Vec<f64>,
    sample_states: Vec<f64>,
}

impl fmt::Debug for TimeProfileFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeProfileFunction")
            .field("label", &self.label)
            .field("support", &self.support)
            .field("tail", &self.tail)
            .finish_non_exhaustive()
    }
}

impl From<&ProfileFunction> for TimeProfileFunction {
    fn from(p: &ProfileFunction) -> Self {
        let f = p.f.clone();
        Self {
            label: p.label.clone(),
            f: Arc::new(move |_, y| f(y)),
            support: p.support,
            breaks: p.breaks.clone(),
            time_breaks: Vec::new(),
            tail: p.tail,
            regularity: p.regularity,
            sample_times: Vec::new(),
            sample_states: p.breaks.clone(),
        }
    }
}

impl TimeProfileFunction {
    pub fn new<F>(label: impl Into<String>, support: (f64, f64), tail: Tail, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        check_support(support.0, support.1)?;
        Ok(Self {
            label: label.into(),
            f: Arc::new(f),
            support,
            breaks: Vec::new(),
            time_breaks: Vec::new(),
            tail,
            regularity: None,
            sample_times: Vec::new(),
            sample_states: Vec::new(),
        })
    }

    /// `w(t) · g(y)` for a nonincreasing, nonnegative weight `w`.
    pub fn separable<W>(label: impl Into<String>, g: &ProfileFunction, w: W) -> Self
    where
        W: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let gf = g.f.clone();
        Self {
            label: label.into(),
            f: Arc::new(move |t, y| w(t) * gf(y)),
            support: g.support,
            breaks: g.breaks.clone(),
            time_breaks: Vec::new(),
            tail: match g.tail {
                Tail::Zero => Tail::Zero,
                _ => Tail::Undeclared,
            },
            regularity: None,
            sample_times: Vec::new(),
            sample_states: g.breaks.clone(),
        }
    }

    /// Bilinear interpolation of `values[i][j] = f(ts[i], ys[j])`; zero
    /// outside `[ys[0], ys[m−1]]`, constant in `t` beyond the time grid.
    pub fn bilinear_table(ts: Vec<f64>, ys: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        check_table(&ts, "t")?;
        check_table(&ys, "y")?;
        if values.len() != ts.len() || values.iter().any(|row| row.len() != ys.len()) {
            return Err(Error::InvalidProfile(format!(
                "table must be {}×{} (t × y)",
                ts.len(),
                ys.len()
            )));
        }
        for row in &values {
            check_values(row)?;
        }
        let mut lipschitz: f64 = 0.0;
        let mut jump_total: f64 = 0.0;
        for row in &values {
            for (y, f) in ys.windows(2).zip(row.windows(2)) {
                lipschitz = lipschitz.max(((f[1] - f[0]) / (y[1] - y[0])).abs());
            }
            jump_total = jump_total.max(row[0] + row[row.len() - 1]);
        }
        let mut time_lipschitz: f64 = 0.0;
        for (t, pair) in ts.windows(2).zip(values.windows(2)) {
            for (u, v) in pair[0].iter().zip(&pair[1]) {
                time_lipschitz = time_lipschitz.max((v - u).abs() / (t[1] - t[0]));
            }
        }
        let support = (ys[0], ys[ys.len() - 1]);
        let (tsc, ysc) = (ts.clone(), ys.clone());
        let f = move |t: f64, y: f64| {
            if !(y >= ysc[0] && y <= ysc[ysc.len() - 1]) {
                return 0.0;
            }
            let tc = t.clamp(tsc[0], tsc[tsc.len() - 1]);
            if tsc.len() == 1 {
                return interp(&ysc, &values[0], y);
            }
            let i = tsc.partition_point(|&p| p <= tc).clamp(1, tsc.len() - 1);
            let w = (tc - tsc[i - 1]) / (tsc[i] - tsc[i - 1]);
            let lo = interp(&ysc, &values[i - 1], y);
            let hi = interp(&ysc, &values[i], y);
            lo + w * (hi - lo)
        };
        Ok(Self {
            label: "table".into(),
            f: Arc::new(f),
            support,
            breaks: ys.clone(),
            time_breaks: ts.clone(),
            tail: Tail::Zero,
            regularity: Some(Regularity {
                lipschitz,
                jump_total,
                time_lipschitz,
            }),
            sample_times: ts,
            sample_states: ys,
        })
    }

    pub fn with_regularity(mut self, regularity: Regularity) -> Self {
        self.regularity = Some(regularity);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_breaks(mut self, breaks: impl IntoIterator<Item = f64>) -> Self {
        self.breaks.extend(breaks);
        self
    }

    pub fn with_time_breaks(mut self, breaks: impl IntoIterator<Item = f64>) -> Self {
        self.time_breaks.extend(breaks);
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn tail(&self) -> Tail {
        self.tail
    }

    pub fn regularity(&self) -> Option<Regularity> {
        self.regularity
    }

    pub fn eval(&self, t: f64, y: f64) -> f64 {
        (self.f)(t, y)
    }

    /// The `y ↦ f(t₀, y)` slice as a space profile.
    pub fn slice(&self, t0: f64) -> ProfileFunction {
        let f = self.f.clone();
        ProfileFunction {
            label: format!("{}@t={t0}", self.label),
            f: Arc::new(move |y| f(t0, y)),
            support: self.support,
            breaks: self.breaks.clone(),
            tail: self.tail,
            regularity: self.regularity,
        }
    }

    fn sample_grid(&self, horizon: f64) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = self.support;
        let n = 65;
        let mut times: Vec<f64> = (0..n)
            .map(|i| horizon * i as f64 / (n - 1) as f64)
            .collect();
        times.extend(
            self.sample_times
                .iter()
                .filter(|t| (0.0..=horizon).contains(*t)),
        );
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut states: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        states.extend(self.sample_states.iter().filter(|y| (lo..=hi).contains(*y)));
        states.sort_by(f64::total_cmp);
        states.dedup();
        (times, states)
    }

    /// Checks `f ≥ 0` and `f(t, y) ≤ f(s, y)` for `s ≤ t` on a sample grid
    /// of `[0, horizon] × support`. Monotonicity between samples is assumed.
    pub fn validate(&self, horizon: f64) -> Result<()> {
        check_tail(self.tail)?;
        let (times, states) = self.sample_grid(horizon);
        for &y in &states {
            let mut prev: Option<(f64, f64)> = None;
            for &t in &times {
                let v = self.eval(t, y);
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::InvalidProfile(format!(
                        "`{}` has f({t}, {y}) = {v}; profiles must be finite and >= 0",
                        self.label
                    )));
                }
                if let Some((t0, v0)) = prev {
                    if v > v0 + 1e-12 * v0.abs().max(1.0) {
                        return Err(Error::MonotonicityViolation {
                            y,
                            t_early: t0,
                            t_late: t,
                            early: v0,
                            late: v,
                        });
                    }
                }
                prev = Some((t, v));
            }
        }
        Ok(())
    }
}

/// Sorted outer break points: support ends, the start `x` when inside, and
/// the profile's own breaks.
fn outer_points(x: f64, support: (f64, f64), breaks: &[f64]) -> Vec<f64> {
    let (lo, hi) = support;
    let mut pts = vec![lo, hi];
    pts.extend(
        breaks
            .iter()
            .copied()
            .chain(std::iter::once(x))
            .filter(|p| *p > lo && *p < hi),
    );
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

fn tail_certificate(
    bx: &CoefficientBox,
    x: f64,
    support: (f64, f64),
    tail: Tail,
    horizon: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    match tail {
        Tail::Undeclared => check_tail(tail).map(|_| (0.0, 0.0)),
        Tail::Zero => Ok((0.0, 0.0)),
        Tail::Bounded(s) if s == 0.0 => Ok((0.0, 0.0)),
        Tail::Bounded(s) => {
            check_tail(tail)?;
            let left = occupation_mass_between(bx, x, f64::NEG_INFINITY, support.0, horizon, tol)?;
            let right = occupation_mass_between(bx, x, support.1, f64::INFINITY, horizon, tol)?;
            Ok((
                s * (left.value + right.value),
                s * (left.abs_error_estimate + right.abs_error_estimate),
            ))
        }
    }
}

fn check_inputs(x: f64, horizon: f64, tol: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("start must be finite, got {x}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!(
            "horizon must be finite and >= 0, got {horizon}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be > 0, got {tol}")));
    }
    Ok(())
}

/// Outer tolerance share, inner tolerance for a profile of mass `mass`.
fn split_tolerance(tol: f64, mass: f64) -> (f64, f64) {
    let outer = 0.5 * tol;
    let inner = (0.1 * tol / mass.max(1.0)).max(1e-14);
    (outer, inner)
}

/// `∫ G(x, y, T) f(y) dy` over the support of `f`, plus the certified tail.
///
/// Outer adaptive quadrature in `y` (split at `x` and the profile breaks),
/// inner quadrature for `G` memoised on the exact distance.
pub fn path_integral_bound(
    bx: &CoefficientBox,
    x: f64,
    horizon: f64,
    f: &ProfileFunction,
    tol: f64,
) -> Result<BoundReport> {
    check_inputs(x, horizon, tol)?;
    f.validate()?;
    if horizon == 0.0 {
        return Ok(BoundReport::ZERO);
    }
    let pts = outer_points(x, f.support, &f.breaks);
    let mass = integrate_with_breaks(|y| f.eval(y), &pts, &QuadratureOptions::with_tol(1e-6))?;
    let (outer_tol, inner_tol) = split_tolerance(tol, mass.value.abs());

    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut inner_err: f64 = 0.0;
    let mut inner_evals = 0usize;
    let mut failure: Option<Error> = None;
    let outer = integrate_with_breaks(
        |y| {
            let fy = f.eval(y);
            if fy == 0.0 || failure.is_some() {
                return 0.0;
            }
            let r = (x - y).abs();
            let g = match cache.get(&r.to_bits()) {
                Some(&g) => g,
                None => match occupation_bound_at(bx, r, horizon, inner_tol) {
                    Ok(rep) => {
                        inner_err = inner_err.max(rep.abs_error_estimate);
                        inner_evals += rep.evaluations;
                        cache.insert(r.to_bits(), rep.value);
                        rep.value
                    }
                    Err(e) => {
                        failure = Some(e);
                        return f64::NAN;
                    }
                },
            };
            g * fy
        },
        &pts,
        &QuadratureOptions::with_tol(outer_tol),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let outer = outer?;
    let (tail, tail_err) = tail_certificate(bx, x, f.support, f.tail, horizon, 0.1 * tol)?;
    Ok(BoundReport {
        value: outer.value.max(0.0) + tail,
        abs_error_estimate: outer.abs_error
            + inner_err * (mass.value.abs() + mass.abs_error)
            + tail_err,
        evaluations: outer.evaluations + inner_evals,
    })
}

/// `∬ ρ(|x − y|, t) f(t, y) dt dy` over `[0, T] × support`, plus the
/// certified tail. Refuses profiles that increase in `t` on the sample grid.
pub fn time_integral_bound(
    bx: &CoefficientBox,
    x: f64,
    horizon: f64,
    f: &TimeProfileFunction,
    tol: f64,
) -> Result<BoundReport> {
    check_inputs(x, horizon, tol)?;
    f.validate(horizon)?;
    if horizon == 0.0 {
        return Ok(BoundReport::ZERO);
    }
    let pts = outer_points(x, f.support, &f.breaks);
    let f0 = f.slice(0.0);
    let mass = integrate_with_breaks(|y| f0.eval(y), &pts, &QuadratureOptions::with_tol(1e-6))?;
    let (outer_tol, inner_tol) = split_tolerance(tol, mass.value.abs());

    let root = horizon.sqrt();
    let mut u_pts = vec![root];
    u_pts.extend(
        f.time_breaks
            .iter()
            .filter(|t| **t > 0.0 && **t < horizon)
            .map(|t| t.sqrt()),
    );
    u_pts.sort_by(f64::total_cmp);
    u_pts.dedup();
    let inner_opts = QuadratureOptions::with_tol(inner_tol);

    let mut inner_err: f64 = 0.0;
    let mut inner_evals = 0usize;
    let mut failure: Option<Error> = None;
    let outer = integrate_with_breaks(
        |y| {
            if failure.is_some() {
                return 0.0;
            }
            let r = (x - y).abs();
            let mut pts = sqrt_time_breaks(bx, &[r], root);
            pts.extend(u_pts.iter().copied());
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let inner = integrate_with_breaks(
                |u| {
                    let fv = f.eval(u * u, y);
                    if fv == 0.0 {
                        0.0
                    } else {
                        rate_in_sqrt_time(bx, r, u) * fv
                    }
                },
                &pts,
                &inner_opts,
            );
            match inner {
                Ok(i) => {
                    inner_err = inner_err.max(i.abs_error);
                    inner_evals += i.evaluations;
                    i.value
                }
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        &pts,
        &QuadratureOptions::with_tol(outer_tol),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let outer = outer?;
    let (tail, tail_err) = tail_certificate(bx, x, f.support, f.tail, horizon, 0.1 * tol)?;
    Ok(BoundReport {
        value: outer.value.max(0.0) + tail,
        abs_error_estimate: outer.abs_error + inner_err * (pts[pts.len() - 1] - pts[0]) + tail_err,
        evaluations: outer.evaluations + inner_evals,
    })
}

/// Either kind of profile, for the Monte Carlo functional.
#[derive(Debug, Clone, Copy)]
pub enum Profile<'a> {
    Space(&'a ProfileFunction),
    SpaceTime(&'a TimeProfileFunction),
}

impl<'a> From<&'a ProfileFunction> for Profile<'a> {
    fn from(p: &'a ProfileFunction) -> Self {
        Profile::Space(p)
    }
}

impl<'a> From<&'a TimeProfileFunction> for Profile<'a> {
    fn from(p: &'a TimeProfileFunction) -> Self {
        Profile::SpaceTime(p)
    }
}

impl Profile<'_> {
    fn eval(&self, t: f64, y: f64) -> f64 {
        match self {
            Profile::Space(p) => p.eval(y),
            Profile::SpaceTime(p) => p.eval(t, y),
        }
    }

    fn label(&self) -> &str {
        match self {
            Profile::Space(p) => p.label(),
            Profile::SpaceTime(p) => p.label(),
        }
    }

    fn regularity(&self) -> Option<Regularity> {
        match self {
            Profile::Space(p) => p.regularity(),
            Profile::SpaceTime(p) => p.regularity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathIntegralEstimate {
    pub control: String,
    pub profile: String,
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: u64,
}

struct RiemannObserver<'a> {
    f: Profile<'a>,
}

impl PathObserver for RiemannObserver<'_> {
    fn width(&self) -> usize {
        1
    }

    #[inline]
    fn observe(&self, acc: &mut [f64], t: f64, x: f64, _beta: f64, _sigma: f64, dt: f64) {
        acc[0] += self.f.eval(t, x) * dt;
    }
}

/// Monte Carlo estimate of `E Σ f(t_i, X_{t_i}) dt`, the left-endpoint
/// Riemann sum of `E ∫₀ᵀ f(s, X_s) ds` along Euler paths.
pub fn mc_path_integral<'a>(
    ctrl: &FeedbackControl,
    cfg: &SimConfig,
    f: impl Into<Profile<'a>>,
) -> Result<PathIntegralEstimate> {
    let f = f.into();
    let summary = simulate_paths(ctrl, cfg, &RiemannObserver { f })?;
    summary.ensure_finite()?;
    Ok(PathIntegralEstimate {
        control: ctrl.label().to_string(),
        profile: f.label().to_string(),
        mean: summary.stats[0].mean,
        std_error: summary.stats[0].std_error(),
        n_paths: summary.stats[0].n,
    })
}

/// Allowance for the gap between the Riemann sum on the Euler grid and the
/// continuous-time integral:
/// `2 [T L δ + J · 2 δ H_T(0) + T L_t dt]` with `δ = b√dt + k b² dt` the
/// per-step displacement, `L` and `L_t` the Lipschitz constants in `y` and
/// `t`, and `J` the total jump in `y`. Jumps contribute through the expected
/// time spent within `δ` of a discontinuity.
pub fn integral_discretization_budget<'a>(
    bx: &CoefficientBox,
    cfg: &SimConfig,
    f: impl Into<Profile<'a>>,
) -> Result<f64> {
    let f = f.into();
    let reg = f.regularity().ok_or_else(|| {
        Error::InvalidProfile(format!(
            "`{}` declares no regularity; the discretisation budget is unavailable",
            f.label()
        ))
    })?;
    cfg.validate()?;
    let t = cfg.horizon;
    if t == 0.0 {
        return Ok(0.0);
    }
    let dt = cfg.step();
    let b = bx.b();
    let delta = b * dt.sqrt() + bx.k() * b * b * dt;
    let h0 = occupation_bound_at(bx, 0.0, t, 1e-10)?.value;
    Ok(2.0
        * (t * reg.lipschitz * delta
            + reg.jump_total * 2.0 * delta * h0
            + t * reg.time_lipschitz * dt))
}

/// `∫_c^d G(x, y, T) dy` through the profile machinery, for cross-checks.
pub fn indicator_bound(
    bx: &CoefficientBox,
    x: f64,
    c: f64,
    d: f64,
    horizon: f64,
    tol: f64,
) -> Result<BoundReport> {
    path_integral_bound(bx, x, horizon, &ProfileFunction::indicator(c, d, 1.0)?, tol)
}

/// Fubini counterpart of [`path_integral_bound`] for indicators: the
/// closed-form y-mass of the rate kernel integrated over time.
pub fn indicator_bound_by_time(
    bx: &CoefficientBox,
    x: f64,
    c: f64,
    d: f64,
    horizon: f64,
    tol: f64,
) -> Result<BoundReport> {
    occupation_mass_between(bx, x, c, d, horizon, tol)
}

/// Expected occupation time of `[c, d]` by `x + σW` up to `T`, by
/// quadrature of the Gaussian transition mass over time.
pub fn brownian_occupation_time(
    x: f64,
    sigma: f64,
    c: f64,
    d: f64,
    horizon: f64,
    tol: f64,
) -> Result<f64> {
    if !(sigma > 0.0) || c > d || !(horizon >= 0.0) {
        return Err(Error::Domain("need sigma > 0, c <= d, T >= 0".into()));
    }
    if horizon == 0.0 {
        return Ok(0.0);
    }
    use crate::special::normal_cdf;
    let mass = |t: f64| {
        if t == 0.0 {
            return if (c..=d).contains(&x) { 1.0 } else { 0.0 };
        }
        let s = sigma * t.sqrt();
        normal_cdf((d - x) / s) - normal_cdf((c - x) / s)
    };
    integrate(mass, 0.0, horizon, &QuadratureOptions::with_tol(tol)).map(|i| i.value)
}
