//! Feedback controls `(β, σ)(t, x)` and admissibility checks.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{occupation_bound_at, sign, CoefficientBox};
use crate::error::{Error, Result};

/// Violations below this are treated as rounding noise.
pub const ADMISSIBILITY_TOL: f64 = 1e-12;

type CustomLaw = Arc<dyn Fn(f64, f64) -> (f64, f64) + Send + Sync>;

#[derive(Clone)]
enum Law {
    Constant {
        drift: f64,
        sigma: f64,
    },
    Extremal {
        a: f64,
        b: f64,
        k: f64,
        level: f64,
        m: f64,
    },
    /// Strongest pull towards the level with `σ = b` everywhere.
    Pull {
        drift: f64,
        sigma: f64,
        level: f64,
    },
    Sinusoidal {
        k: f64,
        sigma_mid: f64,
        sigma_amp: f64,
        drift_amp: f64,
    },
    BangBang {
        period: f64,
        even: (f64, f64),
        odd: (f64, f64),
    },
    Custom(CustomLaw),
}

/// A candidate control: drift `β(t, x)` and diffusion `σ(t, x)`.
#[derive(Clone)]
pub struct FeedbackControl {
    label: String,
    law: Law,
}

impl fmt::Debug for FeedbackControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeedbackControl")
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

impl FeedbackControl {
    pub fn constant(label: impl Into<String>, drift: f64, sigma: f64) -> Self {
        Self {
            label: label.into(),
            law: Law::Constant { drift, sigma },
        }
    }

    /// Arbitrary `(t, x) ↦ (β, σ)`.
    pub fn custom<F>(label: impl Into<String>, law: F) -> Self
    where
        F: Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            law: Law::Custom(Arc::new(law)),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `(β(t, x), σ(t, x))`.
    #[inline]
    pub fn coefficients(&self, t: f64, x: f64) -> (f64, f64) {
        match &self.law {
            Law::Constant { drift, sigma } => (*drift, *sigma),
            Law::Extremal { a, b, k, level, m } => {
                let d = x - level;
                let sigma = a + (b - a) * ramp(*m, d.abs());
                (-k * sigma * sigma * sign(d), sigma)
            }
            Law::Pull {
                drift,
                sigma,
                level,
            } => (-drift * sign(x - level), *sigma),
            Law::Sinusoidal {
                k,
                sigma_mid,
                sigma_amp,
                drift_amp,
            } => {
                let sigma = sigma_mid + sigma_amp * (2.0 * x).cos();
                let cap = k * sigma * sigma;
                ((drift_amp * (3.0 * x).sin()).clamp(-cap, cap), sigma)
            }
            Law::BangBang { period, even, odd } => {
                if ((t / period).floor() as i64) % 2 == 0 {
                    *even
                } else {
                    *odd
                }
            }
            Law::Custom(f) => f(t, x),
        }
    }

    pub fn drift(&self, t: f64, x: f64) -> f64 {
        self.coefficients(t, x).0
    }

    pub fn diffusion(&self, t: f64, x: f64) -> f64 {
        self.coefficients(t, x).1
    }
}

/// Width scale `1/M` of the ramp joining `σ = a` to `σ = b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MollificationParams {
    m: u32,
}

impl MollificationParams {
    pub fn new(m: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain(
                "mollification parameter M must be >= 1".into(),
            ));
        }
        Ok(Self { m })
    }

    pub fn m(&self) -> u32 {
        self.m
    }
}

/// `g_M(s) = clamp(M s − 1, 0, 1)`: 0 on `[0, 1/M]`, 1 on `[2/M, ∞)`.
#[inline]
pub fn ramp(m: f64, s: f64) -> f64 {
    (m * s - 1.0).clamp(0.0, 1.0)
}

/// `σ_M(x) = a + (b − a) g_M(|x − y|)`.
pub fn mollified_sigma(bx: &CoefficientBox, level: f64, m: MollificationParams, x: f64) -> f64 {
    bx.a() + (bx.b() - bx.a()) * ramp(m.m as f64, (x - level).abs())
}

/// The near-optimal control: `σ = σ_M(x)`, `β = −k σ_M(x)² sign(x − y)`.
pub fn make_extremal_control(
    bx: &CoefficientBox,
    level: f64,
    m: MollificationParams,
) -> FeedbackControl {
    FeedbackControl {
        label: format!("extremal(M={})", m.m),
        law: Law::Extremal {
            a: bx.a(),
            b: bx.b(),
            k: bx.k(),
            level,
            m: m.m as f64,
        },
    }
}

/// `(β, σ) = (−k b² sign(x − y), b)`: the maximiser away from the level.
pub fn make_pull_control(bx: &CoefficientBox, level: f64) -> FeedbackControl {
    FeedbackControl {
        label: "pull".into(),
        law: Law::Pull {
            drift: bx.max_drift(),
            sigma: bx.b(),
            level,
        },
    }
}

/// Spatially oscillating σ between `a` and `b`, with drift `2kb² sin(3x)`
/// clipped to `±k σ²`.
pub fn make_sinusoidal_control(bx: &CoefficientBox) -> FeedbackControl {
    FeedbackControl {
        label: "sinusoidal".into(),
        law: Law::Sinusoidal {
            k: bx.k(),
            sigma_mid: 0.5 * (bx.a() + bx.b()),
            sigma_amp: 0.5 * (bx.b() - bx.a()),
            drift_amp: 2.0 * bx.max_drift(),
        },
    }
}

/// Switches every `period` between `(kb², b)` and `(−ka², a)`.
pub fn make_bang_bang_control(bx: &CoefficientBox, period: f64) -> FeedbackControl {
    let a = bx.a();
    FeedbackControl {
        label: "bang-bang".into(),
        law: Law::BangBang {
            period,
            even: (bx.max_drift(), bx.b()),
            odd: (-bx.k() * a * a, a),
        },
    }
}

pub const PRESET_NAMES: [&str; 7] = [
    "extremal",
    "brownian",
    "max-drift-up",
    "max-drift-down",
    "pull",
    "sinusoidal",
    "bang-bang",
];

/// Named preset controls; `level` and `m` only matter for level-aware ones.
pub fn preset(
    name: &str,
    bx: &CoefficientBox,
    level: f64,
    m: MollificationParams,
) -> Result<FeedbackControl> {
    let a = bx.a();
    let b = bx.b();
    let ctrl = match name {
        "extremal" => make_extremal_control(bx, level, m),
        "brownian" => FeedbackControl::constant("brownian", 0.0, a),
        "max-drift-up" => FeedbackControl::constant("max-drift-up", bx.max_drift(), b),
        "max-drift-down" => FeedbackControl::constant("max-drift-down", -bx.max_drift(), b),
        "pull" => make_pull_control(bx, level),
        "sinusoidal" => make_sinusoidal_control(bx),
        "bang-bang" => make_bang_bang_control(bx, 0.25),
        other => {
            return Err(Error::Domain(format!(
                "unknown control preset `{other}` (known: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(ctrl)
}

/// The adversarial presets used by validity experiments (everything except
/// the extremal control).
pub fn adversarial_suite(bx: &CoefficientBox, level: f64) -> Vec<FeedbackControl> {
    let m = MollificationParams { m: 1 };
    PRESET_NAMES[1..]
        .iter()
        .map(|name| preset(name, bx, level, m).expect("preset names are valid"))
        .collect()
}

/// Points `(t, x)` on which admissibility is checked.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
}

impl SampleGrid {
    pub fn uniform(horizon: f64, n_times: usize, x_lo: f64, x_hi: f64, n_states: usize) -> Self {
        let lin = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            match n {
                0 => vec![],
                1 => vec![lo],
                _ => (0..n)
                    .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                    .collect(),
            }
        };
        Self {
            times: lin(0.0, horizon, n_times),
            states: lin(x_lo, x_hi, n_states),
        }
    }

    /// Adds the points just either side of `x` (and `x` itself).
    pub fn with_state_refinement(mut self, x: f64, spread: f64) -> Self {
        self.states.extend([x - spread, x, x + spread]);
        self
    }

    pub fn len(&self) -> usize {
        self.times.len() * self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub x: f64,
    pub beta: f64,
    pub sigma: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub label: String,
    pub passed: bool,
    pub points_checked: usize,
    pub violation_count: usize,
    pub worst_excess: f64,
    /// First few violations in grid order.
    pub violations: Vec<Violation>,
}

impl AdmissibilityReport {
    pub fn into_result(self) -> Result<()> {
        if self.passed {
            Ok(())
        } else {
            Err(Error::Inadmissible {
                label: self.label,
                count: self.violation_count,
                worst: self.worst_excess,
            })
        }
    }
}

const MAX_LISTED_VIOLATIONS: usize = 20;

/// Checks `σ ∈ [a, b]` and `|β| ≤ k σ²` at every grid point.
pub fn validate_admissible(
    bx: &CoefficientBox,
    ctrl: &FeedbackControl,
    grid: &SampleGrid,
) -> Result<AdmissibilityReport> {
    if grid.is_empty() {
        return Err(Error::Domain("admissibility grid is empty".into()));
    }
    let mut report = AdmissibilityReport {
        label: ctrl.label.clone(),
        passed: true,
        points_checked: 0,
        violation_count: 0,
        worst_excess: 0.0,
        violations: Vec::new(),
    };
    for &t in &grid.times {
        for &x in &grid.states {
            let (beta, sigma) = ctrl.coefficients(t, x);
            let excess = bx.violation(beta, sigma);
            report.points_checked += 1;
            if excess > ADMISSIBILITY_TOL {
                report.passed = false;
                report.violation_count += 1;
                if report.violations.len() < MAX_LISTED_VIOLATIONS {
                    report.violations.push(Violation {
                        t,
                        x,
                        beta,
                        sigma,
                        excess,
                    });
                }
            }
            if excess > report.worst_excess || excess.is_nan() {
                report.worst_excess = excess;
            }
        }
    }
    Ok(report)
}

/// `C₃ = 2 max(2^{5/2} b T^{1/6} H_T(0)^{1/3} / (a² √π), 8 b² k H_T(0) / a²)`.
pub fn suboptimality_constant(bx: &CoefficientBox, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("horizon must be > 0, got {horizon}")));
    }
    let h0 = occupation_bound_at(bx, 0.0, horizon, 1e-12)?.value;
    let a2 = bx.a() * bx.a();
    let b = bx.b();
    let first = 2f64.powf(2.5) * b * horizon.powf(1.0 / 6.0) * h0.cbrt()
        / (a2 * std::f64::consts::PI.sqrt());
    let second = 8.0 * b * b * bx.k() * h0 / a2;
    Ok(2.0 * first.max(second))
}

/// Budget `C₃ / M^{1/3}` on the extremal control's shortfall from `G`.
pub fn suboptimality_budget(
    bx: &CoefficientBox,
    horizon: f64,
    m: MollificationParams,
) -> Result<f64> {
    Ok(suboptimality_constant(bx, horizon)? / (m.m as f64).cbrt())
}
