//! Globally adaptive 15-point Gauss–Kronrod quadrature.
//!
//! Intervals are kept in a max-heap keyed on their error estimate; the worst
//! one is bisected until the summed estimate drops below the absolute
//! tolerance. Error estimates use the QUADPACK rescaling of `|K15 − G7|`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Kronrod abscissae on `[0, 1]`, descending; odd indices are Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

pub const DEFAULT_ABS_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_DEPTH: u32 = 60;
const DEFAULT_MAX_INTERVALS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    /// Maximum number of bisections applied to any single interval.
    pub max_depth: u32,
    /// Cap on live intervals; guards against tolerances below roundoff.
    pub max_intervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            abs_tol: DEFAULT_ABS_TOL,
            max_depth: DEFAULT_MAX_DEPTH,
            max_intervals: DEFAULT_MAX_INTERVALS,
        }
    }
}

impl QuadratureOptions {
    pub fn with_tol(abs_tol: f64) -> Self {
        Self {
            abs_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

impl Integral {
    pub const ZERO: Integral = Integral {
        value: 0.0,
        abs_error: 0.0,
        evaluations: 0,
    };
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
    depth: u32,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.lo.total_cmp(&self.lo))
    }
}

fn rescale_error(err: f64, resabs: f64, resasc: f64) -> f64 {
    let mut err = err.abs();
    if resasc != 0.0 && err != 0.0 {
        let scale = (200.0 * err / resasc).powf(1.5);
        err = if scale < 1.0 { resasc * scale } else { resasc };
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    err
}

/// One 15-point Gauss–Kronrod panel on `[lo, hi]`: `(value, error)`.
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64) -> (f64, f64) {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);

    let fc = f(center);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];

    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }

    let mean = 0.5 * resk;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let ahalf = half.abs();
    let err = rescale_error((resk - resg) * half, resabs * ahalf, resasc * ahalf);
    (resk * half, err)
}

/// Integrates `f` over `[lo, hi]` to absolute tolerance `opts.abs_tol`.
///
/// `f` is never evaluated at the endpoints, so integrands with removable
/// endpoint singularities are fine. Returns `Error::ToleranceNotMet` when an
/// interval would exceed `max_depth` bisections or the live-interval cap is
/// reached.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    opts: &QuadratureOptions,
) -> Result<Integral> {
    integrate_with_breaks(&mut f, &[lo, hi], opts)
}

/// Like [`integrate`] over `[points[0], points[last]]`, with the initial
/// partition taken from the sorted break points (kinks, support edges).
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    points: &[f64],
    opts: &QuadratureOptions,
) -> Result<Integral> {
    if points.len() < 2 {
        return Ok(Integral::ZERO);
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain(format!(
            "quadrature limits must be finite, got {points:?}"
        )));
    }
    if !(opts.abs_tol >= 0.0) {
        return Err(Error::Domain(format!(
            "quadrature tolerance must be nonnegative, got {}",
            opts.abs_tol
        )));
    }

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0usize;
    for w in points.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if lo == hi {
            continue;
        }
        let (value, error) = gk15(&mut f, lo, hi);
        evaluations += 15;
        heap.push(Segment {
            lo,
            hi,
            value,
            error,
            depth: 0,
        });
    }

    let mut total_error: f64 = heap.iter().map(|s| s.error).sum();
    let mut refresh = 0usize;
    while total_error > opts.abs_tol {
        let worst = match heap.pop() {
            Some(s) => s,
            None => break,
        };
        if worst.depth >= opts.max_depth || heap.len() + 2 > opts.max_intervals {
            heap.push(worst);
            let achieved: f64 = heap.iter().map(|s| s.error).sum();
            return Err(Error::ToleranceNotMet {
                requested: opts.abs_tol,
                achieved,
                evaluations,
            });
        }
        let mid = 0.5 * (worst.lo + worst.hi);
        let (v1, e1) = gk15(&mut f, worst.lo, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.hi);
        evaluations += 30;
        total_error += e1 + e2 - worst.error;
        for (lo, hi, value, error) in [(worst.lo, mid, v1, e1), (mid, worst.hi, v2, e2)] {
            heap.push(Segment {
                lo,
                hi,
                value,
                error,
                depth: worst.depth + 1,
            });
        }
        refresh += 1;
        if refresh % 64 == 0 {
            total_error = heap.iter().map(|s| s.error).sum();
        }
    }

    // Sum in ascending interval order so the result does not depend on heap layout.
    let mut segments = heap.into_vec();
    segments.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let value = segments.iter().map(|s| s.value).sum();
    let abs_error = segments.iter().map(|s| s.error).sum();
    Ok(Integral {
        value,
        abs_error,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(
            |x| x.powi(7) - 3.0 * x * x,
            0.0,
            2.0,
            &QuadratureOptions::default(),
        )
        .unwrap();
        assert!((r.value - (32.0 - 8.0)).abs() < 1e-12);
        assert_eq!(r.evaluations, 15);
    }

    #[test]
    fn integrable_endpoint_singularity() {
        // ∫₀¹ 1/√x dx = 2, never evaluated at 0
        let opts = QuadratureOptions::with_tol(1e-9);
        let r = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, &opts).unwrap();
        assert!((r.value - 2.0).abs() < 1e-8, "{r:?}");
        assert!(r.abs_error <= 1e-9);
    }

    #[test]
    fn sharp_peak_is_resolved() {
        let w = 1e-3;
        let f = |x: f64| (-(x - 0.3) * (x - 0.3) / (2.0 * w * w)).exp();
        let r = integrate_with_breaks(f, &[0.0, 0.3, 1.0], &QuadratureOptions::default()).unwrap();
        let exact = w * (2.0 * std::f64::consts::PI).sqrt();
        assert!((r.value - exact).abs() < 1e-10);
    }

    #[test]
    fn breaks_are_respected() {
        let r = integrate_with_breaks(
            |x: f64| x.abs(),
            &[-1.0, 0.0, 2.0],
            &QuadratureOptions::default(),
        )
        .unwrap();
        assert!((r.value - 2.5).abs() < 1e-14);
        assert_eq!(r.evaluations, 30);
    }

    #[test]
    fn depth_cap_reports_tolerance_failure() {
        let opts = QuadratureOptions {
            abs_tol: 1e-14,
            max_depth: 3,
            max_intervals: 1000,
        };
        let err = integrate(|x| (1.0 / x).sin(), 1e-3, 1.0, &opts).unwrap_err();
        assert!(matches!(err, Error::ToleranceNotMet { .. }));
    }

    #[test]
    fn empty_and_reversed_ranges() {
        let opts = QuadratureOptions::default();
        assert_eq!(integrate(|x| x, 1.0, 1.0, &opts).unwrap().value, 0.0);
        let r = integrate(|x| x, 1.0, 0.0, &opts).unwrap();
        assert!((r.value + 0.5).abs() < 1e-15);
    }
}
