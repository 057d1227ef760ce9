//! The occupation bound `G(x, y, T) = H_T(|x − y|)` and related closed forms.
//!
//! `H_T(r) = ∫₀ᵀ ρ(r, t) dt` with rate kernel
//! `ρ(r, t) = b/(a²√t) φ(v) + b²k/a² Φ(v)`, `v = kb√t − r/(b√t)`.
//! The exponentially stopped value is
//! `Q_λ(r) = exp(−(√(k² + 2λ/b²) − k) r) / ((√(k² + 2λ/b²) − k) a²)`
//! and satisfies `Q_λ(r) = ∫₀^∞ e^{−λt} ρ(r, t) dt`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_with_breaks, Integral, QuadratureOptions, DEFAULT_ABS_TOL};
use crate::special::{integrated_normal_cdf, normal_cdf, normal_pdf};

/// Sign with `sign(0) = −1`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Admissible-class parameters: `σ ∈ [a, b]`, `|β| ≤ k σ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct CoefficientBox {
    a: f64,
    b: f64,
    k: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawBox {
    a: f64,
    b: f64,
    k: f64,
}

impl TryFrom<RawBox> for CoefficientBox {
    type Error = Error;
    fn try_from(raw: RawBox) -> Result<Self> {
        CoefficientBox::new(raw.a, raw.b, raw.k)
    }
}

impl From<CoefficientBox> for RawBox {
    fn from(bx: CoefficientBox) -> Self {
        RawBox {
            a: bx.a,
            b: bx.b,
            k: bx.k,
        }
    }
}

impl CoefficientBox {
    pub fn new(a: f64, b: f64, k: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && k.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "a, b, k must be finite (got a={a}, b={b}, k={k})"
            )));
        }
        if !(a > 0.0 && a <= b) {
            return Err(Error::InvalidBox(format!(
                "need 0 < a <= b, got a={a}, b={b}"
            )));
        }
        if k < 0.0 {
            return Err(Error::InvalidBox(format!("need k >= 0, got k={k}")));
        }
        Ok(Self { a, b, k })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Largest drift magnitude in the class, `k b²`.
    pub fn max_drift(&self) -> f64 {
        self.k * self.b * self.b
    }

    /// How far `(β, σ)` lies outside the control set `U`; `0` when inside.
    pub fn violation(&self, beta: f64, sigma: f64) -> f64 {
        if !(beta.is_finite() && sigma.is_finite()) {
            return f64::INFINITY;
        }
        let below = self.a - sigma;
        let above = sigma - self.b;
        let drift = beta.abs() - self.k * sigma * sigma;
        below.max(above).max(drift).max(0.0)
    }
}

/// A bound evaluation point. `r = |x − y|` is always derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub x: f64,
    pub y: f64,
    /// Horizon `T`.
    pub horizon: f64,
}

impl Query {
    pub fn new(x: f64, y: f64, horizon: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::Domain(format!(
                "x and y must be finite (x={x}, y={y})"
            )));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!(
                "horizon must be finite and >= 0, got {horizon}"
            )));
        }
        Ok(Self { x, y, horizon })
    }

    pub fn r(&self) -> f64 {
        (self.x - self.y).abs()
    }
}

/// Value of a quadrature-backed quantity with its error estimate.
///
/// Bounds (`G`, integral bounds) are nonnegative; the r-derivatives reuse
/// this type and carry their own sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub evaluations: usize,
}

impl BoundReport {
    pub const ZERO: BoundReport = BoundReport {
        value: 0.0,
        abs_error_estimate: 0.0,
        evaluations: 0,
    };
}

impl From<Integral> for BoundReport {
    fn from(i: Integral) -> Self {
        BoundReport {
            value: i.value,
            abs_error_estimate: i.abs_error,
            evaluations: i.evaluations,
        }
    }
}

fn check_distance(r: f64) -> Result<()> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "distance r must be finite and >= 0, got {r}"
        )))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "time must be finite and > 0, got {t}"
        )))
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon >= 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "horizon must be finite and >= 0, got {horizon}"
        )))
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("tolerance must be > 0, got {tol}")))
    }
}

#[inline]
fn v_raw(bx: &CoefficientBox, r: f64, sqrt_t: f64) -> f64 {
    bx.k * bx.b * sqrt_t - r / (bx.b * sqrt_t)
}

/// `v(r, t) = k b √t − r / (b √t)`.
pub fn v_argument(bx: &CoefficientBox, r: f64, t: f64) -> Result<f64> {
    check_distance(r)?;
    check_time(t)?;
    Ok(v_raw(bx, r, t.sqrt()))
}

#[inline]
pub(crate) fn rate_raw(bx: &CoefficientBox, r: f64, t: f64) -> f64 {
    let st = t.sqrt();
    let v = v_raw(bx, r, st);
    let a2 = bx.a * bx.a;
    bx.b / (a2 * st) * normal_pdf(v) + bx.b * bx.b * bx.k / a2 * normal_cdf(v)
}

/// Rate kernel `ρ(r, t) = ∂_T H_T(r)`.
pub fn density_rate(bx: &CoefficientBox, r: f64, t: f64) -> Result<f64> {
    check_distance(r)?;
    check_time(t)?;
    Ok(rate_raw(bx, r, t))
}

/// `2u ρ(r, u²)`: the rate kernel after `t = u²`, bounded near `u = 0`.
#[inline]
pub(crate) fn rate_in_sqrt_time(bx: &CoefficientBox, r: f64, u: f64) -> f64 {
    let v = v_raw(bx, r, u);
    let a2 = bx.a * bx.a;
    2.0 * bx.b / a2 * normal_pdf(v) + 2.0 * u * bx.b * bx.b * bx.k / a2 * normal_cdf(v)
}

/// `G(x, y, T)` at the default tolerance `1e-10`.
pub fn occupation_bound(bx: &CoefficientBox, q: &Query) -> Result<BoundReport> {
    occupation_bound_at(bx, q.r(), q.horizon, DEFAULT_ABS_TOL)
}

/// `H_T(r) = ∫₀ᵀ ρ(r, t) dt`, integrated in `u = √t`.
pub fn occupation_bound_at(
    bx: &CoefficientBox,
    r: f64,
    horizon: f64,
    tol: f64,
) -> Result<BoundReport> {
    check_distance(r)?;
    check_horizon(horizon)?;
    check_tol(tol)?;
    if horizon == 0.0 {
        return Ok(BoundReport::ZERO);
    }
    let opts = QuadratureOptions::with_tol(tol);
    let pts = sqrt_time_breaks(bx, &[r], horizon.sqrt());
    integrate_with_breaks(|u| rate_in_sqrt_time(bx, r, u), &pts, &opts).map(Into::into)
}

/// Closed form of `H_T(r)` for `k = 0`:
/// `2√T (b/a²) φ(r/(b√T)) − (2r/a²) Φ(−r/(b√T))`.
pub fn driftless_closed_form(bx: &CoefficientBox, r: f64, horizon: f64) -> Result<f64> {
    check_distance(r)?;
    check_horizon(horizon)?;
    if bx.k != 0.0 {
        return Err(Error::Domain(format!(
            "closed form only holds for k = 0, got k = {}",
            bx.k
        )));
    }
    if horizon == 0.0 {
        return Ok(0.0);
    }
    let st = horizon.sqrt();
    let a2 = bx.a * bx.a;
    let z = r / (bx.b * st);
    Ok(2.0 * st * bx.b / a2 * normal_pdf(z) - 2.0 * r / a2 * normal_cdf(-z))
}

/// Decay rate `√(k² + 2λ/b²) − k`, written without cancellation.
fn resolvent_decay(bx: &CoefficientBox, lambda: f64) -> f64 {
    let c = 2.0 * lambda / (bx.b * bx.b);
    let s = (bx.k * bx.k + c).sqrt();
    c / (bx.k + s)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "lambda must be finite and > 0, got {lambda}"
        )))
    }
}

/// `Q_λ(r)`, the value of the exponentially stopped problem.
pub fn resolvent_bound(bx: &CoefficientBox, r: f64, lambda: f64) -> Result<f64> {
    check_distance(r)?;
    check_lambda(lambda)?;
    let d = resolvent_decay(bx, lambda);
    Ok((-d * r).exp() / (d * bx.a * bx.a))
}

/// `∂_r Q_λ(r) = −e^{−d r}/a²` for `r > 0`.
pub fn resolvent_dr(bx: &CoefficientBox, r: f64, lambda: f64) -> Result<f64> {
    check_distance(r)?;
    check_lambda(lambda)?;
    let d = resolvent_decay(bx, lambda);
    Ok(-(-d * r).exp() / (bx.a * bx.a))
}

/// `∂_rr Q_λ(r) = d e^{−d r}/a²` for `r > 0`.
pub fn resolvent_drr(bx: &CoefficientBox, r: f64, lambda: f64) -> Result<f64> {
    check_distance(r)?;
    check_lambda(lambda)?;
    let d = resolvent_decay(bx, lambda);
    Ok(d * (-d * r).exp() / (bx.a * bx.a))
}

/// Spatial derivative `∂_x Q_λ(x, y) = sign(y − x)/a² e^{−d|x−y|}`.
pub fn resolvent_dx(bx: &CoefficientBox, x: f64, y: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let d = resolvent_decay(bx, lambda);
    Ok(sign(y - x) / (bx.a * bx.a) * (-d * (x - y).abs()).exp())
}

/// One-sided limit of `∂_x Q_λ(·, y)` at `x = y`, from the right when
/// `from_right`, else from the left.
pub fn resolvent_dx_limit(bx: &CoefficientBox, lambda: f64, from_right: bool) -> Result<f64> {
    check_lambda(lambda)?;
    let side = if from_right { -1.0 } else { 1.0 };
    Ok(side / (bx.a * bx.a))
}

/// Jump `Δ[∂_x Q_λ(·, y)](y)` of the spatial derivative across the level.
pub fn resolvent_pasting_jump(bx: &CoefficientBox, lambda: f64) -> Result<f64> {
    Ok(resolvent_dx_limit(bx, lambda, true)? - resolvent_dx_limit(bx, lambda, false)?)
}

/// The pointwise HJB supremum `sup_{(β,σ) ∈ U} { β d1 + σ² d2 / 2 }` and
/// its maximiser. The objective is affine in `β` and in `σ²`, so the
/// supremum sits on a corner of `U`.
pub fn hamiltonian_sup(bx: &CoefficientBox, d1: f64, d2: f64) -> (f64, f64, f64) {
    let mut best = (f64::NEG_INFINITY, 0.0, bx.a);
    for sigma in [bx.a, bx.b] {
        let s2 = sigma * sigma;
        for beta in [-bx.k * s2, bx.k * s2] {
            let value = beta * d1 + 0.5 * s2 * d2;
            if value > best.0 {
                best = (value, beta, sigma);
            }
        }
    }
    best
}

/// `−λ Q + sup_U {β ∂_x Q + σ²/2 ∂_xx Q}` on the branch `x > y`, `r = x − y > 0`.
pub fn resolvent_hjb_residual(bx: &CoefficientBox, r: f64, lambda: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("HJB residual needs r > 0, got {r}")));
    }
    let q = resolvent_bound(bx, r, lambda)?;
    let d1 = resolvent_dr(bx, r, lambda)?;
    let d2 = resolvent_drr(bx, r, lambda)?;
    let (sup, _, _) = hamiltonian_sup(bx, d1, d2);
    Ok(-lambda * q + sup)
}

/// Pasting condition `sup_{σ∈[a,b]} {1 + σ²/2 · jump}`; zero for the sharp bound.
pub fn pasting_residual(bx: &CoefficientBox, jump: f64) -> f64 {
    [bx.a, bx.b]
        .iter()
        .map(|s| 1.0 + 0.5 * s * s * jump)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Geometric points `p, 4p, 16p, …` strictly inside `(lo, hi)`.
fn geometric_from(p: f64, lo: f64, hi: f64, out: &mut Vec<f64>) {
    let mut q = p;
    while q > 0.0 && q < hi {
        if q > lo {
            out.push(q);
        }
        q *= 4.0;
    }
}

fn sorted_points(mut pts: Vec<f64>) -> Vec<f64> {
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// `[lo, hi]` split geometrically from the lower end. `φ(kr/s − s)` turns
/// on near `s = kr` and then approaches `φ(s)` only like `kr/s`, far below
/// the first Gauss–Kronrod node when `r` is small.
fn similarity_breaks(kr: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut pts = vec![lo, hi, kr];
    pts.retain(|p| *p >= lo && *p <= hi);
    geometric_from(2.0 * lo, lo, hi.min(4.0), &mut pts);
    sorted_points(pts)
}

/// `[0, u_max]` split geometrically from `u = d/b` for each distance `d`:
/// `φ(−d/(b u))` switches on there and approaches `φ(0)` only like
/// `(d/(b u))²`, so a small `d` would hide the whole transition inside the
/// first panel.
pub(crate) fn sqrt_time_breaks(bx: &CoefficientBox, distances: &[f64], u_max: f64) -> Vec<f64> {
    let mut pts = vec![0.0, u_max];
    for &d in distances {
        if d.is_finite() && d > 0.0 {
            geometric_from(d / bx.b, 0.0, u_max, &mut pts);
        }
    }
    sorted_points(pts)
}

/// Upper end of the similarity-variable range beyond which `φ(kr/s − s)`
/// is below `φ(40)`.
fn similarity_cutoff(kr: f64) -> f64 {
    20.0 + (400.0 + kr).sqrt()
}

/// `∂_r H_T(r)` for `r > 0`.
///
/// The t-integrand `−r/(a² b t^{3/2}) φ(v(r,t))` is integrated after the
/// substitution `s = r/(b√t)`, which turns it into `−(2/a²) φ(kr/s − s)` on
/// `[r/(b√T), ∞)` with no endpoint singularity at any `r`.
pub fn dh_dr(bx: &CoefficientBox, r: f64, horizon: f64, tol: f64) -> Result<BoundReport> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("dH/dr needs finite r > 0, got {r}")));
    }
    check_horizon(horizon)?;
    check_tol(tol)?;
    if horizon == 0.0 {
        return Ok(BoundReport::ZERO);
    }
    let a2 = bx.a * bx.a;
    let kr = bx.k * r;
    let s0 = r / (bx.b * horizon.sqrt());
    let s1 = similarity_cutoff(kr);
    if s0 >= s1 {
        return Ok(BoundReport::ZERO);
    }
    let scale = 2.0 / a2;
    let opts = QuadratureOptions::with_tol(tol / scale);
    let pts = similarity_breaks(kr, s0, s1);
    let i = integrate_with_breaks(|s| normal_pdf(kr / s - s), &pts, &opts)?;
    Ok(BoundReport {
        value: -scale * i.value,
        abs_error_estimate: scale * i.abs_error,
        evaluations: i.evaluations,
    })
}

/// `∂_rr H_T(r)` for `r > 0`, from the t-integrand
/// `φ(v)/(a² b t^{3/2}) (r²/(b²t) − kr − 1)` under `s = r/(b√t)`:
/// `(2/(a² r)) ∫ (s² − kr − 1) φ(kr/s − s) ds`.
///
/// The `1/r` prefactor amplifies roundoff, so tolerances much below
/// `1e-14 / r` are unattainable.
pub fn d2h_dr2(bx: &CoefficientBox, r: f64, horizon: f64, tol: f64) -> Result<BoundReport> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!(
            "d2H/dr2 needs finite r > 0, got {r}"
        )));
    }
    check_horizon(horizon)?;
    check_tol(tol)?;
    if horizon == 0.0 {
        return Ok(BoundReport::ZERO);
    }
    let a2 = bx.a * bx.a;
    let kr = bx.k * r;
    let s0 = r / (bx.b * horizon.sqrt());
    let s1 = similarity_cutoff(kr);
    if s0 >= s1 {
        return Ok(BoundReport::ZERO);
    }
    let scale = 2.0 / (a2 * r);
    let opts = QuadratureOptions::with_tol(tol / scale);
    let pts = similarity_breaks(kr, s0, s1);
    let i = integrate_with_breaks(|s| (s * s - kr - 1.0) * normal_pdf(kr / s - s), &pts, &opts)?;
    Ok(BoundReport {
        value: scale * i.value,
        abs_error_estimate: scale * i.abs_error,
        evaluations: i.evaluations,
    })
}

/// Residual of the time-domain HJB equation on the branch `x > y`:
/// `|−∂_T H + sup_U {β ∂_r H + σ²/2 ∂_rr H}|`, with `∂_T H = ρ` exact and the
/// r-derivatives from [`dh_dr`] / [`d2h_dr2`] at tolerance `tol`.
pub fn time_hjb_residual(bx: &CoefficientBox, r: f64, horizon: f64, tol: f64) -> Result<f64> {
    check_time(horizon)?;
    let d1 = dh_dr(bx, r, horizon, tol)?;
    let d2 = d2h_dr2(bx, r, horizon, tol)?;
    let (sup, _, _) = hamiltonian_sup(bx, d1.value, d2.value);
    Ok((-rate_raw(bx, r, horizon) + sup).abs())
}

/// Smallest (up to bisection precision) `t*` with
/// `(b/(a²√t*) + b²k/a²) e^{−λt*}/λ ≤ eps`, which bounds
/// `∫_{t*}^∞ e^{−λt} ρ(r, t) dt` for every `r`.
pub fn laplace_truncation_time(bx: &CoefficientBox, lambda: f64, eps: f64) -> Result<f64> {
    check_lambda(lambda)?;
    check_tol(eps)?;
    let a2 = bx.a * bx.a;
    let envelope =
        |t: f64| (bx.b / (a2 * t.sqrt()) + bx.b * bx.b * bx.k / a2) * (-lambda * t).exp() / lambda;
    let mut hi = 1.0 / lambda;
    while envelope(hi) > eps {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Domain("laplace truncation point diverged".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        if hi - lo <= 1e-9 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if envelope(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `∫₀^∞ e^{−λt} ρ(r, t) dt`, truncated where the analytic envelope of the
/// tail drops below `tol/10`; the remainder is integrated in `u = √t` to
/// `tol/10`. The reported error includes the tail bound.
pub fn laplace_transform_of_rate(
    bx: &CoefficientBox,
    r: f64,
    lambda: f64,
    tol: f64,
) -> Result<BoundReport> {
    check_distance(r)?;
    check_lambda(lambda)?;
    check_tol(tol)?;
    let tail = tol / 10.0;
    let t_star = laplace_truncation_time(bx, lambda, tail)?;
    let opts = QuadratureOptions::with_tol(tol / 10.0);
    let pts = sqrt_time_breaks(bx, &[r], t_star.sqrt());
    let i = integrate_with_breaks(
        |u| (-lambda * u * u).exp() * rate_in_sqrt_time(bx, r, u),
        &pts,
        &opts,
    )?;
    Ok(BoundReport {
        value: i.value,
        abs_error_estimate: i.abs_error + tail,
        evaluations: i.evaluations,
    })
}

/// `|∫₀^∞ e^{−λt} ρ(r, t) dt − Q_λ(r)|`; consistent when below `tol`.
pub fn laplace_consistency(bx: &CoefficientBox, r: f64, lambda: f64, tol: f64) -> Result<f64> {
    let transform = laplace_transform_of_rate(bx, r, lambda, tol)?;
    let q = resolvent_bound(bx, r, lambda)?;
    Ok((transform.value - q).abs())
}

/// `∫_R^∞ ρ(r, t) dr = (b²/a²) [Φ(v_R) + k b √t (v_R Φ(v_R) + φ(v_R))]`
/// with `v_R = v(R, t)`.
pub fn rate_tail_mass(bx: &CoefficientBox, distance: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    if distance == f64::INFINITY {
        return Ok(0.0);
    }
    check_distance(distance)?;
    Ok(rate_tail_raw(bx, distance, t.sqrt()))
}

#[inline]
fn rate_tail_raw(bx: &CoefficientBox, distance: f64, sqrt_t: f64) -> f64 {
    if distance == f64::INFINITY {
        return 0.0;
    }
    let v = v_raw(bx, distance, sqrt_t);
    let b2a2 = bx.b * bx.b / (bx.a * bx.a);
    b2a2 * (normal_cdf(v) + bx.k * bx.b * sqrt_t * integrated_normal_cdf(v))
}

/// `∫_c^d ρ(|x − y|, t) dy` in closed form.
pub fn rate_mass_between(bx: &CoefficientBox, x: f64, c: f64, d: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    check_interval(c, d)?;
    Ok(mass_between_raw(bx, x, c, d, t.sqrt()))
}

fn check_interval(c: f64, d: f64) -> Result<()> {
    if c <= d && !c.is_nan() && !d.is_nan() {
        Ok(())
    } else {
        Err(Error::Domain(format!("need c <= d, got [{c}, {d}]")))
    }
}

fn mass_between_raw(bx: &CoefficientBox, x: f64, c: f64, d: f64, sqrt_t: f64) -> f64 {
    let tail = |dist: f64| rate_tail_raw(bx, dist, sqrt_t);
    if x <= c {
        tail(c - x) - tail(d - x)
    } else if x >= d {
        tail(x - d) - tail(x - c)
    } else {
        2.0 * tail(0.0) - tail(x - c) - tail(d - x)
    }
}

/// `∫_c^d G(x, y, T) dy`, computed from the closed-form y-integral of the
/// rate kernel followed by one quadrature in `u = √t`. Either end may be
/// infinite.
pub fn occupation_mass_between(
    bx: &CoefficientBox,
    x: f64,
    c: f64,
    d: f64,
    horizon: f64,
    tol: f64,
) -> Result<BoundReport> {
    check_interval(c, d)?;
    check_horizon(horizon)?;
    check_tol(tol)?;
    if horizon == 0.0 || c == d {
        return Ok(BoundReport::ZERO);
    }
    let opts = QuadratureOptions::with_tol(tol);
    let pts = sqrt_time_breaks(bx, &[(x - c).abs(), (x - d).abs()], horizon.sqrt());
    integrate_with_breaks(
        |u| 2.0 * u * mass_between_raw(bx, x, c, d, u).max(0.0),
        &pts,
        &opts,
    )
    .map(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use approx::assert_relative_eq;

    fn bx(a: f64, b: f64, k: f64) -> CoefficientBox {
        CoefficientBox::new(a, b, k).unwrap()
    }

    // Frozen reference values, mpmath at 40 digits from the raw t-integrals.
    const G_BROWNIAN_R1: f64 = 0.166_630_941_175_372_6;
    const G_1_2_1_R05_T1: f64 = 3.995_703_229_257_403;
    const G_05_15_2_R1_T2: f64 = 33.000_015_662_159_79;
    const G_1_2_1_R0_T1: f64 = 4.494_231_273_285_48;
    const G_1_1_1_R0_T1: f64 = 1.424_660_216_656_229_2;
    const DH_1_2_1_R05_T1: f64 = -0.993_170_405_016_885_4;
    const D2H_1_2_1_R05_T1: f64 = 0.019_818_195_065_106_484;
    const DH_05_15_2_R1_T2: f64 = -3.999_940_297_972_506_7;
    const D2H_05_15_2_R1_T2: f64 = 1.669_395_800_772_085_5e-4;
    const LAPLACE_1_2_05_R07_L1: f64 = 2.114_534_631_908_986_6;

    #[test]
    fn box_invariants() {
        assert!(CoefficientBox::new(1.0, 2.0, 0.5).is_ok());
        assert!(CoefficientBox::new(1.0, 1.0, 0.0).is_ok());
        assert!(CoefficientBox::new(0.0, 1.0, 0.0).is_err());
        assert!(CoefficientBox::new(2.0, 1.0, 0.0).is_err());
        assert!(CoefficientBox::new(1.0, 2.0, -0.1).is_err());
        assert!(CoefficientBox::new(1.0, f64::INFINITY, 0.0).is_err());
        assert!(CoefficientBox::new(f64::NAN, 1.0, 0.0).is_err());
    }

    #[test]
    fn box_deserialization_validates() {
        assert!(CoefficientBox::try_from(RawBox {
            a: 1.0,
            b: 2.0,
            k: 0.0
        })
        .is_ok());
        assert!(CoefficientBox::try_from(RawBox {
            a: 3.0,
            b: 2.0,
            k: 0.0
        })
        .is_err());
    }

    #[test]
    fn query_distance_is_derived() {
        let q = Query::new(0.25, 1.0, 2.0).unwrap();
        assert_eq!(q.r(), 0.75);
        assert!(Query::new(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn box_violation() {
        let b = bx(1.0, 2.0, 1.0);
        assert_eq!(b.violation(0.0, 1.5), 0.0);
        assert_eq!(b.violation(4.0, 2.0), 0.0);
        assert!((b.violation(4.1, 2.0) - 0.1).abs() < 1e-12);
        assert!((b.violation(0.0, 0.5) - 0.5).abs() < 1e-15);
        assert!((b.violation(0.0, 2.25) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sign_convention() {
        assert_eq!(sign(0.0), -1.0);
        assert_eq!(sign(-0.0), -1.0);
        assert_eq!(sign(1e-300), 1.0);
        assert_eq!(sign(-2.0), -1.0);
    }

    #[test]
    fn v_argument_examples() {
        assert_eq!(v_argument(&bx(1.0, 1.0, 0.0), 0.0, 3.0).unwrap(), 0.0);
        let b = bx(1.0, 2.0, 0.75);
        let t = 0.5;
        let root = b.k() * b.b() * b.b() * t;
        assert!(v_argument(&b, root, t).unwrap().abs() < 1e-15);
        assert_eq!(v_argument(&bx(1.0, 2.0, 1.0), 1.0, 1.0).unwrap(), 1.5);
        assert!(v_argument(&b, 1.0, 0.0).is_err());
        assert!(v_argument(&b, 1.0, -1.0).is_err());
    }

    #[test]
    fn density_rate_examples() {
        let r = density_rate(&bx(1.0, 1.0, 0.0), 0.0, 1.0).unwrap();
        assert_relative_eq!(r, 0.398_942_280_401_432_7, max_relative = 1e-15);
        let far = density_rate(&bx(1.0, 1.0, 0.0), 60.0, 1.0).unwrap();
        assert_eq!(far, 0.0);
        let r = density_rate(&bx(1.0, 1.0, 1.0), 0.0, 1.0).unwrap();
        assert!((r - 1.083_315_470_587_686_3).abs() < 1e-14);
        assert!(density_rate(&bx(1.0, 1.0, 1.0), 0.0, 0.0).is_err());
    }

    #[test]
    fn occupation_bound_examples() {
        let b = bx(1.0, 1.0, 0.0);
        assert_eq!(
            occupation_bound_at(&b, 0.3, 0.0, 1e-10).unwrap(),
            BoundReport::ZERO
        );
        let g = occupation_bound_at(&b, 0.0, 1.0, 1e-10).unwrap();
        assert!((g.value - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-10);
        assert!(g.abs_error_estimate <= 1e-10);
        let g = occupation_bound_at(&b, 1.0, 1.0, 1e-10).unwrap();
        assert!((g.value - G_BROWNIAN_R1).abs() < 1e-10);
        assert!(occupation_bound_at(&b, 1.0, -1.0, 1e-10).is_err());
    }

    #[test]
    fn occupation_bound_against_high_precision_reference() {
        let cases = [
            (bx(1.0, 2.0, 1.0), 0.5, 1.0, G_1_2_1_R05_T1),
            (bx(0.5, 1.5, 2.0), 1.0, 2.0, G_05_15_2_R1_T2),
            (bx(1.0, 2.0, 1.0), 0.0, 1.0, G_1_2_1_R0_T1),
            (bx(1.0, 1.0, 1.0), 0.0, 1.0, G_1_1_1_R0_T1),
        ];
        for (b, r, t, expected) in cases {
            let g = occupation_bound_at(&b, r, t, 1e-10).unwrap();
            assert!(
                (g.value - expected).abs() < 2e-10,
                "{b:?} r={r}: {} vs {expected}",
                g.value
            );
        }
    }

    #[test]
    fn driftless_closed_form_matches_quadrature() {
        for (a, b) in [(1.0, 1.0), (1.0, 2.0), (0.5, 1.5)] {
            let bx = bx(a, b, 0.0);
            for r in [0.0, 0.1, 1.0, 5.0] {
                for t in [0.1, 1.0, 4.0] {
                    let q = occupation_bound_at(&bx, r, t, 1e-11).unwrap().value;
                    let c = driftless_closed_form(&bx, r, t).unwrap();
                    assert!((q - c).abs() < 1e-9, "a={a} b={b} r={r} t={t}");
                }
            }
        }
        assert!(driftless_closed_form(&bx(1.0, 1.0, 0.5), 0.0, 1.0).is_err());
    }

    #[test]
    fn resolvent_examples() {
        let q = resolvent_bound(&bx(1.0, 1.0, 0.0), 0.0, 0.5).unwrap();
        assert!((q - 1.0).abs() < 1e-15);
        let q = resolvent_bound(&bx(1.0, 1.0, 1.0), 0.0, 1.5).unwrap();
        assert!((q - 1.0).abs() < 1e-15);
        let q = resolvent_bound(&bx(1.0, 2.0, 1.0), 800.0, 0.3).unwrap();
        assert!((q / 9.835_730_153_549_588e-25 - 1.0).abs() < 1e-11, "{q}");
        assert!(resolvent_bound(&bx(1.0, 1.0, 0.0), 0.0, 0.0).is_err());
        assert!(resolvent_bound(&bx(1.0, 1.0, 0.0), 0.0, -1.0).is_err());
    }

    #[test]
    fn resolvent_large_k_has_no_cancellation() {
        // 2λ/b² ≪ k²: naive √(k²+c) − k would lose every digit.
        let b = bx(1.0, 1.0, 1e9);
        let lambda = 1e-9;
        let d = resolvent_decay(&b, lambda);
        assert_relative_eq!(d, 1e-18, max_relative = 1e-12);
        let q = resolvent_bound(&b, 0.0, lambda).unwrap();
        assert_relative_eq!(q, 1e18, max_relative = 1e-12);
    }

    #[test]
    fn resolvent_hjb_and_pasting() {
        for b in [bx(1.0, 1.0, 0.0), bx(1.0, 2.0, 1.0), bx(0.5, 1.5, 2.0)] {
            for lambda in [0.5, 1.0, 3.0] {
                for r in [0.1, 1.0, 5.0] {
                    assert!(resolvent_hjb_residual(&b, r, lambda).unwrap().abs() < 1e-10);
                }
                let jump = resolvent_pasting_jump(&b, lambda).unwrap();
                assert!((jump + 2.0 / (b.a() * b.a())).abs() < 1e-12);
                assert!(pasting_residual(&b, jump).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resolvent_dx_matches_finite_differences() {
        let b = bx(1.0, 2.0, 0.5);
        for x in [-1.0, -0.2, 0.3, 2.0] {
            let h = 1e-6;
            let fd = (resolvent_bound(&b, (x + h - 0.1f64).abs(), 1.0).unwrap()
                - resolvent_bound(&b, (x - h - 0.1f64).abs(), 1.0).unwrap())
                / (2.0 * h);
            let exact = resolvent_dx(&b, x, 0.1, 1.0).unwrap();
            assert!((fd - exact).abs() < 1e-7, "x={x}: {fd} vs {exact}");
        }
    }

    #[test]
    fn r_derivative_examples() {
        let b = bx(1.0, 1.0, 0.0);
        assert_eq!(dh_dr(&b, 1.0, 0.0, 1e-10).unwrap().value, 0.0);
        assert_eq!(d2h_dr2(&b, 1.0, 0.0, 1e-10).unwrap().value, 0.0);
        let d1 = dh_dr(&b, 1.0, 1.0, 1e-12).unwrap();
        assert!((d1.value - (-2.0 * normal_cdf(-1.0))).abs() < 1e-11);
        let d2 = d2h_dr2(&b, 1.0, 1.0, 1e-12).unwrap();
        assert!((d2.value - 2.0 * normal_pdf(1.0)).abs() < 1e-11);
        assert!(dh_dr(&b, 60.0, 1.0, 1e-10).unwrap().value.abs() < 1e-10);
        assert!(dh_dr(&b, 0.0, 1.0, 1e-10).is_err());
        assert!(d2h_dr2(&b, -1.0, 1.0, 1e-10).is_err());
    }

    #[test]
    fn r_derivatives_against_high_precision_reference() {
        let b = bx(1.0, 2.0, 1.0);
        assert!((dh_dr(&b, 0.5, 1.0, 1e-12).unwrap().value - DH_1_2_1_R05_T1).abs() < 1e-11);
        assert!((d2h_dr2(&b, 0.5, 1.0, 1e-12).unwrap().value - D2H_1_2_1_R05_T1).abs() < 1e-11);
        let b = bx(0.5, 1.5, 2.0);
        assert!((dh_dr(&b, 1.0, 2.0, 1e-12).unwrap().value - DH_05_15_2_R1_T2).abs() < 1e-11);
        assert!((d2h_dr2(&b, 1.0, 2.0, 1e-12).unwrap().value - D2H_05_15_2_R1_T2).abs() < 1e-11);
    }

    #[test]
    fn time_hjb_holds() {
        for b in [bx(1.0, 1.0, 0.0), bx(1.0, 2.0, 1.0), bx(0.5, 1.5, 2.0)] {
            for r in [0.1, 1.0, 5.0] {
                for t in [0.5, 2.0] {
                    let res = time_hjb_residual(&b, r, t, 1e-11).unwrap();
                    assert!(res < 1e-8, "{b:?} r={r} t={t}: {res}");
                }
            }
        }
    }

    #[test]
    fn hamiltonian_picks_the_expected_corner() {
        let b = bx(1.0, 2.0, 1.0);
        let (_, beta, sigma) = hamiltonian_sup(&b, -0.5, 0.2);
        assert_eq!((beta, sigma), (-4.0, 2.0));
        let (_, beta, sigma) = hamiltonian_sup(&b, 0.5, 0.2);
        assert_eq!((beta, sigma), (4.0, 2.0));
    }

    #[test]
    fn laplace_examples() {
        let b = bx(1.0, 1.0, 0.0);
        let l = laplace_transform_of_rate(&b, 0.0, 0.5, 1e-9).unwrap();
        assert!((l.value - 1.0).abs() < 1e-8);
        assert!(laplace_consistency(&b, 0.0, 0.5, 1e-9).unwrap() < 1e-8);
        let b = bx(1.0, 2.0, 0.5);
        let l = laplace_transform_of_rate(&b, 0.7, 1.0, 1e-9).unwrap();
        assert!((l.value - LAPLACE_1_2_05_R07_L1).abs() < 1e-9);
        assert!(laplace_consistency(&b, 0.7, 1.0, 1e-9).unwrap() < 1e-8);
        assert!(laplace_consistency(&b, 40.0, 1.0, 1e-9).unwrap() < 1e-9);
        assert!(laplace_consistency(&b, 0.7, 0.0, 1e-9).is_err());
    }

    #[test]
    fn truncation_time_bounds_the_tail() {
        let b = bx(0.5, 1.5, 2.0);
        let eps = 1e-10;
        let t = laplace_truncation_time(&b, 0.5, eps).unwrap();
        let a2 = 0.25;
        let env = (1.5 / (a2 * t.sqrt()) + 2.25 * 2.0 / a2) * (-0.5 * t).exp() / 0.5;
        assert!(env <= eps);
        let env_before = {
            let t = t * (1.0 - 1e-6);
            (1.5 / (a2 * t.sqrt()) + 2.25 * 2.0 / a2) * (-0.5 * t).exp() / 0.5
        };
        assert!(env_before > eps);
    }

    #[test]
    fn rate_tail_mass_matches_quadrature() {
        let b = bx(1.0, 2.0, 1.0);
        for (dist, t) in [(0.0, 0.5), (0.3, 1.0), (2.0, 2.0)] {
            let closed = rate_tail_mass(&b, dist, t).unwrap();
            let q = integrate(
                |r| rate_raw(&b, r, t),
                dist,
                dist + 80.0,
                &QuadratureOptions::with_tol(1e-12),
            )
            .unwrap();
            assert!((closed - q.value).abs() < 1e-10, "dist={dist} t={t}");
        }
    }

    #[test]
    fn total_mass_for_driftless_box() {
        // ∫_ℝ G dy = T b²/a² when k = 0
        let b = bx(1.0, 2.0, 0.0);
        let m =
            occupation_mass_between(&b, 0.3, f64::NEG_INFINITY, f64::INFINITY, 1.5, 1e-11).unwrap();
        assert!((m.value - 1.5 * 4.0).abs() < 1e-9);
    }
}
