//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on failure.

use std::process::Command;
use std::time::{Duration, Instant};

use occbound::bounds::{
    d2h_dr2, dh_dr, laplace_consistency, occupation_bound_at, resolvent_hjb_residual,
    resolvent_pasting_jump, time_hjb_residual,
};
use occbound::control::{adversarial_suite, preset};
use occbound::integral::{
    brownian_occupation_time, integral_discretization_budget, mc_path_integral,
    path_integral_bound, time_integral_bound, ProfileFunction, TimeProfileFunction,
};
use occbound::sim::{bias_budget, estimate_occupation_density, Noise};
use occbound::special::{normal_cdf, normal_pdf};
use occbound::verify::{
    derivative_limit_at_zero, run_sharpness_experiment, run_validity_experiment, SharpnessSpec,
    ValiditySpec,
};
use occbound::{CoefficientBox, FeedbackControl, MollificationParams, Result, SimConfig};

const SEED: u64 = 20_240_601;

// 2φ(1) − 2Φ(−1), mpmath at 40 digits.
const CLOSED_FORM_R1: f64 = 0.166_630_941_175_370_5;

fn bx(a: f64, b: f64, k: f64) -> CoefficientBox {
    CoefficientBox::new(a, b, k).unwrap()
}

fn grid_boxes() -> Vec<CoefficientBox> {
    vec![
        bx(1.0, 1.0, 0.0),
        bx(1.0, 2.0, 0.0),
        bx(1.0, 2.0, 1.0),
        bx(0.5, 1.5, 2.0),
    ]
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn closed_form() -> Result<Outcome> {
    let b = bx(1.0, 1.0, 0.0);
    let g0 = occupation_bound_at(&b, 0.0, 1.0, 1e-12)?.value;
    let g1 = occupation_bound_at(&b, 1.0, 1.0, 1e-12)?.value;
    let e0 = (g0 - (2.0 / std::f64::consts::PI).sqrt()).abs();
    // the antiderivative 2√T φ(r/√T) − 2r Φ(−r/√T) at r = T = 1
    let antiderivative = 2.0 * normal_pdf(1.0) - 2.0 * normal_cdf(-1.0);
    let e1 = (g1 - CLOSED_FORM_R1).abs();
    let e_formula = (antiderivative - CLOSED_FORM_R1).abs();
    outcome(
        e0 <= 1e-9 && e1 <= 1e-7 && e_formula <= 1e-14,
        format!("|G(0)-sqrt(2/pi)|={e0:.2e} |G(1)-oracle|={e1:.2e}"),
    )
}

fn laplace() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for b in grid_boxes() {
        for r in [1e-6, 0.1, 1.0, 5.0] {
            for lambda in [0.5, 1.0, 3.0] {
                worst = worst.max(laplace_consistency(&b, r, lambda, 1e-9)?);
                n += 1;
            }
        }
    }
    outcome(
        worst < 1e-8,
        format!("{n} points, worst residual {worst:.2e}"),
    )
}

fn hjb() -> Result<Outcome> {
    let mut time_worst: f64 = 0.0;
    let mut res_worst: f64 = 0.0;
    let mut paste_worst: f64 = 0.0;
    for b in grid_boxes() {
        for r in [0.1, 1.0, 5.0] {
            for t in [0.5, 2.0] {
                time_worst = time_worst.max(time_hjb_residual(&b, r, t, 1e-12)?.abs());
            }
            for lambda in [0.5, 1.0, 3.0] {
                res_worst = res_worst.max(resolvent_hjb_residual(&b, r, lambda)?.abs());
            }
        }
        for lambda in [0.5, 1.0, 3.0] {
            let jump = resolvent_pasting_jump(&b, lambda)?;
            paste_worst = paste_worst.max((jump + 2.0 / (b.a() * b.a())).abs());
        }
    }
    outcome(
        time_worst < 1e-5 && res_worst < 1e-10 && paste_worst <= 1e-12,
        format!("time {time_worst:.2e}, resolvent {res_worst:.2e}, pasting {paste_worst:.2e}"),
    )
}

fn monotonicity() -> Result<Outcome> {
    let mut max_d1 = f64::NEG_INFINITY;
    let mut min_d2 = f64::INFINITY;
    for b in grid_boxes() {
        for r in [1e-6, 0.1, 1.0, 5.0] {
            for t in [0.1, 1.0, 4.0] {
                // the 1/r prefactor of the second derivative amplifies roundoff
                let tol = f64::max(1e-13 / r, 1e-12);
                max_d1 = max_d1.max(dh_dr(&b, r, t, tol)?.value);
                min_d2 = min_d2.min(d2h_dr2(&b, r, t, tol)?.value);
            }
        }
    }
    let mut limit_worst: f64 = 0.0;
    for b in [
        bx(0.5, 1.5, 2.0),
        bx(0.5, 0.5, 0.0),
        bx(1.0, 2.0, 1.0),
        bx(1.0, 1.0, 0.0),
    ] {
        for t in [0.5, 2.0] {
            let lim = derivative_limit_at_zero(&b, t, 1e-2, 1e-12)?;
            limit_worst = limit_worst.max((lim + 1.0 / (b.a() * b.a())).abs());
        }
    }
    outcome(
        max_d1 <= 1e-12 && min_d2 >= -1e-12 && limit_worst <= 1e-4,
        format!("max dH/dr {max_d1:.2e}, min d2H/dr2 {min_d2:.2e}, limit error {limit_worst:.2e}"),
    )
}

fn validity() -> Result<Outcome> {
    let b = bx(1.0, 2.0, 1.0);
    let controls = adversarial_suite(&b, 0.0);
    let spec = ValiditySpec {
        bx: b,
        controls,
        queries: vec![
            (0.0, 0.0),
            (0.5, 0.0),
            (-1.0, 0.0),
            (1.5, 0.0),
            (0.0, 0.3),
            (0.2, -0.4),
        ],
        cfg: SimConfig {
            dt: 1e-4,
            n_paths: 20_000,
            seed: SEED,
            window_n: 50.0,
            horizon: 1.0,
            x0: 0.0,
            noise: Noise::Gaussian,
        },
        strict: false,
    };
    let n_controls = spec.controls.len();
    let reports = run_validity_experiment(&spec);
    let estimates: Vec<_> = reports.iter().filter(|r| r.name == "validity").collect();
    let failed = reports.iter().filter(|r| !r.passed).count();
    let min_margin = estimates
        .iter()
        .map(|r| r.value)
        .fold(f64::INFINITY, f64::min);
    outcome(
        failed == 0 && n_controls >= 4 && estimates.len() == n_controls * spec.queries.len(),
        format!(
            "{n_controls} controls x {} queries, {failed} failed, min margin {min_margin:.3e}",
            spec.queries.len()
        ),
    )
}

fn sharpness() -> Result<Outcome> {
    let cfg = SimConfig {
        dt: 1e-5,
        n_paths: 50_000,
        seed: SEED,
        window_n: 100.0,
        horizon: 1.0,
        x0: 0.0,
        noise: Noise::Gaussian,
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [0.0, 1.0] {
        let spec = SharpnessSpec {
            bx: bx(1.0, 2.0, k),
            level: 0.0,
            ms: vec![50],
            cfg,
            strict: false,
        };
        let rep = &run_sharpness_experiment(&spec)[0];
        let ratio = rep.metrics["mean"] / rep.metrics["G"];
        ok &= rep.passed && ratio >= 0.8;
        parts.push(format!("k={k}: mean/G={ratio:.3} margin={:.3e}", rep.value));
    }
    // a = b: the extremal control has constant σ and the bound is attained
    for k in [0.0, 1.0] {
        let b = bx(1.0, 1.0, k);
        let m = MollificationParams::new(50)?;
        let ctrl = preset("extremal", &b, 0.0, m)?;
        let est = estimate_occupation_density(&ctrl, &cfg, 0.0)?;
        let g = occupation_bound_at(&b, 0.0, 1.0, 1e-12)?.value;
        let allowance = 3.0 * est.std_error + bias_budget(&b, cfg.dt, cfg.window_n);
        let gap = (est.mean - g).abs();
        ok &= gap <= allowance;
        parts.push(format!("a=b k={k}: |mean-G|={gap:.3e} <= {allowance:.3e}"));
    }
    outcome(ok, parts.join("; "))
}

fn integral() -> Result<Outcome> {
    let b = bx(1.0, 2.0, 1.0);
    let x = 0.0;
    let t = 1.0;
    let cfg = SimConfig {
        dt: 1e-4,
        n_paths: 10_000,
        seed: SEED,
        window_n: 1.0,
        horizon: t,
        x0: x,
        noise: Noise::Gaussian,
    };
    let profiles = [
        ProfileFunction::indicator(-0.5, 0.5, 1.0)?,
        ProfileFunction::tent(-1.0, 0.3, 1.0, 2.0)?,
    ];
    let m = MollificationParams::new(50)?;
    let controls: Vec<FeedbackControl> = ["extremal", "max-drift-up", "sinusoidal"]
        .iter()
        .map(|name| preset(name, &b, 0.0, m))
        .collect::<Result<_>>()?;

    let mut ok = true;
    let mut min_margin = f64::INFINITY;
    let mut time_gap: f64 = 0.0;
    for f in &profiles {
        let bound = path_integral_bound(&b, x, t, f, 1e-10)?.value;
        let budget = integral_discretization_budget(&b, &cfg, f)?;
        for ctrl in &controls {
            let est = mc_path_integral(ctrl, &cfg, f)?;
            let margin = bound + 3.0 * est.std_error + budget - est.mean;
            min_margin = min_margin.min(margin);
            ok &= margin >= 0.0;
        }
        let tf = TimeProfileFunction::from(f);
        let by_time = time_integral_bound(&b, x, t, &tf, 1e-10)?.value;
        time_gap = time_gap.max((by_time - bound).abs());
    }
    ok &= time_gap <= 1e-8;

    let brownian = FeedbackControl::constant("brownian", 0.0, 1.0);
    let cfg_bm = SimConfig {
        n_paths: 20_000,
        ..cfg
    };
    let est = mc_path_integral(&brownian, &cfg_bm, &profiles[0])?;
    let oracle = brownian_occupation_time(x, 1.0, -0.5, 0.5, t, 1e-12)?;
    let z = (est.mean - oracle).abs() / est.std_error;
    ok &= z <= 3.0;
    outcome(
        ok,
        format!(
            "min margin {min_margin:.3e}, time-constant gap {time_gap:.2e}, heat-kernel |z|={z:.2}"
        ),
    )
}

fn determinism() -> Result<Outcome> {
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_occbound"))
            .args([
                "simulate",
                "--a",
                "1",
                "--b",
                "2",
                "--k",
                "1",
                "--control",
                "extremal",
                "--M",
                "50",
                "--y",
                "0",
                "--T",
                "1",
                "--dt",
                "1e-3",
                "--paths",
                "3000",
                "--N",
                "10",
                "--estimator",
                "both",
                "--seed",
                "7",
                "--threads",
                threads,
            ])
            .output()
            .expect("binary runs")
    };
    let outs: Vec<_> = ["1", "4", "8"].iter().map(|t| run(t)).collect();
    let all_ok = outs
        .iter()
        .all(|o| o.status.success() && !o.stdout.is_empty());
    let identical = outs.windows(2).all(|w| w[0].stdout == w[1].stdout);
    outcome(
        all_ok && identical,
        format!(
            "{} bytes, identical across 1/4/8 threads: {identical}",
            outs[0].stdout.len()
        ),
    )
}

type Criterion = (&'static str, Duration, fn() -> Result<Outcome>);

fn main() {
    let criteria: [Criterion; 8] = [
        ("closed-form reduction", Duration::from_secs(1), closed_form),
        ("laplace consistency", Duration::from_secs(10), laplace),
        ("hjb residuals", Duration::from_secs(10), hjb),
        (
            "monotonicity and derivative limit",
            Duration::from_secs(10),
            monotonicity,
        ),
        ("validity", Duration::from_secs(300), validity),
        ("sharpness", Duration::from_secs(600), sharpness),
        ("integral bounds", Duration::from_secs(300), integral),
        (
            "determinism across threads",
            Duration::from_secs(120),
            determinism,
        ),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failures = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && elapsed <= *limit, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failures += 1;
        }
        println!(
            "criterion {} {name}: {} ({detail}; {:.2}s of {}s)",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
