//! Scenario files (TOML) and the input tables they reference.
//!
//! ```toml
//! seed = 7
//! tol = 1e-10
//! format = "json"
//!
//! [box]
//! a = 1.0
//! b = 2.0
//! k = 1.0
//!
//! [query]
//! x = 0.0
//! y = 0.0
//! T = 1.0
//! points = [[0.0, 1.0], [0.5, 2.0]]   # (y, T) pairs
//!
//! [resolvent]
//! r = [0.0, 1.0]
//! lambda = [0.5, 1.0]
//!
//! [sim]
//! dt = 1e-4
//! paths = 20000
//! N = 50.0
//! T = 1.0
//! x0 = 0.0
//! level = 0.0
//! estimator = "window"
//!
//! [control]
//! preset = "extremal"
//! M = 50
//! file = "control.toml"
//!
//! [profile]
//! file = "profile.csv"
//! x = 0.0
//! T = 1.0
//!
//! [verify]
//! only = ["analytic"]
//! strict = false
//! M = [10, 50]
//! ```
//!
//! Command-line flags override every value here.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use occbound::control::{preset, FeedbackControl, MollificationParams};
use occbound::integral::{ProfileFunction, TimeProfileFunction};
use occbound::CoefficientBox;

use crate::output::Format;
use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub format: Option<Format>,
    #[serde(rename = "box")]
    pub coefficients: Option<BoxSpec>,
    pub query: Option<QuerySpec>,
    pub resolvent: Option<ResolventSpec>,
    pub sim: Option<SimSpec>,
    pub control: Option<ControlSpec>,
    pub profile: Option<ProfileSpec>,
    pub verify: Option<VerifySpec>,
    /// Directory of the scenario file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub k: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub x: Option<f64>,
    pub y: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub points: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventSpec {
    pub r: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub dt: Option<f64>,
    pub paths: Option<u64>,
    #[serde(rename = "N")]
    pub window_n: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub x0: Option<f64>,
    pub level: Option<f64>,
    pub estimator: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub preset: Option<String>,
    #[serde(rename = "M")]
    pub m: Option<u32>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub file: Option<PathBuf>,
    pub x: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub only: Option<Vec<String>>,
    pub strict: Option<bool>,
    #[serde(rename = "M")]
    pub ms: Option<Vec<u32>>,
    pub paths: Option<u64>,
    pub dt: Option<f64>,
    #[serde(rename = "N")]
    pub window_n: Option<f64>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Input(format!("cannot read scenario {}: {e}", path.display()))
        })?;
        let mut s: Scenario = toml::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid scenario {}: {e}", path.display())))?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn coefficient_box(
        &self,
        a: Option<f64>,
        b: Option<f64>,
        k: Option<f64>,
    ) -> Result<CoefficientBox, CliError> {
        let file = self.coefficients.clone().unwrap_or_default();
        let a = a
            .or(file.a)
            .ok_or_else(|| CliError::Input("missing coefficient a".into()))?;
        let b = b
            .or(file.b)
            .ok_or_else(|| CliError::Input("missing coefficient b".into()))?;
        let k = k.or(file.k).unwrap_or(0.0);
        Ok(CoefficientBox::new(a, b, k)?)
    }
}

/// Control definition file.
///
/// ```toml
/// label = "my-control"
/// kind = "table"            # "preset" | "constant" | "table"
/// # preset:   name = "pull", level = 0.0, M = 50
/// # constant: beta = 0.1, sigma = 1.5
/// # table:    piecewise linear in x, clamped beyond the ends
/// x = [-1.0, 0.0, 1.0]
/// beta = [0.5, 0.0, -0.5]
/// sigma = [1.5, 1.0, 1.5]
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlFile {
    pub label: Option<String>,
    pub kind: String,
    pub name: Option<String>,
    pub level: Option<f64>,
    #[serde(rename = "M")]
    pub m: Option<u32>,
    pub beta: Option<toml::Value>,
    pub sigma: Option<toml::Value>,
    pub x: Option<Vec<f64>>,
}

fn number_list(v: &toml::Value, what: &str) -> Result<Vec<f64>, CliError> {
    let as_f64 = |v: &toml::Value| match v {
        toml::Value::Float(f) => Some(*f),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    };
    match v {
        toml::Value::Array(items) => items
            .iter()
            .map(|i| as_f64(i).ok_or_else(|| CliError::Input(format!("{what}: expected numbers"))))
            .collect(),
        other => as_f64(other)
            .map(|f| vec![f])
            .ok_or_else(|| CliError::Input(format!("{what}: expected a number or list"))),
    }
}

fn clamp_interp(xs: &[f64], fs: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return fs[0];
    }
    if x >= xs[xs.len() - 1] {
        return fs[fs.len() - 1];
    }
    let j = xs.partition_point(|&p| p <= x);
    let w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    fs[j - 1] + w * (fs[j] - fs[j - 1])
}

pub fn load_control_file(
    path: &Path,
    bx: &CoefficientBox,
    level: f64,
) -> Result<FeedbackControl, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Input(format!("cannot read control file {}: {e}", path.display()))
    })?;
    let spec: ControlFile = toml::from_str(&text)
        .map_err(|e| CliError::Input(format!("invalid control file {}: {e}", path.display())))?;
    let label = spec.label.clone().unwrap_or_else(|| spec.kind.clone());
    match spec.kind.as_str() {
        "preset" => {
            let name = spec
                .name
                .ok_or_else(|| CliError::Input("preset control needs `name`".into()))?;
            let m = MollificationParams::new(spec.m.unwrap_or(50))?;
            Ok(preset(&name, bx, spec.level.unwrap_or(level), m)?)
        }
        "constant" => {
            let beta = number_list(
                spec.beta.as_ref().unwrap_or(&toml::Value::Float(0.0)),
                "beta",
            )?;
            let sigma = number_list(
                spec.sigma
                    .as_ref()
                    .ok_or_else(|| CliError::Input("constant control needs `sigma`".into()))?,
                "sigma",
            )?;
            if beta.len() != 1 || sigma.len() != 1 {
                return Err(CliError::Input(
                    "constant control needs scalar beta and sigma".into(),
                ));
            }
            Ok(FeedbackControl::constant(label, beta[0], sigma[0]))
        }
        "table" => {
            let xs = spec
                .x
                .ok_or_else(|| CliError::Input("table control needs `x`".into()))?;
            let beta = number_list(
                spec.beta
                    .as_ref()
                    .ok_or_else(|| CliError::Input("table control needs `beta`".into()))?,
                "beta",
            )?;
            let sigma = number_list(
                spec.sigma
                    .as_ref()
                    .ok_or_else(|| CliError::Input("table control needs `sigma`".into()))?,
                "sigma",
            )?;
            if xs.is_empty() || xs.len() != beta.len() || xs.len() != sigma.len() {
                return Err(CliError::Input(
                    "table control needs equally long, nonempty x, beta, sigma".into(),
                ));
            }
            if xs.windows(2).any(|w| w[0] >= w[1]) || xs.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Input(
                    "table control x must be finite and strictly increasing".into(),
                ));
            }
            Ok(FeedbackControl::custom(label, move |_, x| {
                (clamp_interp(&xs, &beta, x), clamp_interp(&xs, &sigma, x))
            }))
        }
        other => Err(CliError::Input(format!(
            "unknown control kind `{other}` (expected preset, constant or table)"
        ))),
    }
}

/// Built-in control by name; `extremal` uses `m`.
pub fn builtin_control(
    name: &str,
    bx: &CoefficientBox,
    level: f64,
    m: u32,
) -> Result<FeedbackControl, CliError> {
    Ok(preset(name, bx, level, MollificationParams::new(m)?)?)
}

/// A profile table, either `y,f` or `t,y,f`.
#[derive(Debug, Clone)]
pub enum LoadedProfile {
    Space(ProfileFunction),
    SpaceTime(TimeProfileFunction),
}

fn parse_field(s: &str, line: usize, col: &str) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::Input(format!("row {line}: `{s}` in column {col} is not a number")))
}

pub fn load_profile(path: &Path) -> Result<LoadedProfile, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot read profile {}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("profile {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "profile".into());
    let records: Vec<csv::StringRecord> = rdr
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Input(format!("profile {}: {e}", path.display())))?;

    match headers
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["y", "f"] => {
            let mut ys = Vec::with_capacity(records.len());
            let mut fs = Vec::with_capacity(records.len());
            for (i, r) in records.iter().enumerate() {
                ys.push(parse_field(&r[0], i + 2, "y")?);
                fs.push(parse_field(&r[1], i + 2, "f")?);
            }
            Ok(LoadedProfile::Space(
                ProfileFunction::piecewise_linear(ys, fs)?.with_label(label),
            ))
        }
        ["t", "y", "f"] => {
            let mut rows = Vec::with_capacity(records.len());
            for (i, r) in records.iter().enumerate() {
                rows.push((
                    parse_field(&r[0], i + 2, "t")?,
                    parse_field(&r[1], i + 2, "y")?,
                    parse_field(&r[2], i + 2, "f")?,
                ));
            }
            let key = |v: f64| v.to_bits();
            let ts: BTreeSet<u64> = rows.iter().map(|r| key(r.0)).collect();
            let ys: BTreeSet<u64> = rows.iter().map(|r| key(r.1)).collect();
            let mut ts: Vec<f64> = ts.into_iter().map(f64::from_bits).collect();
            let mut ys: Vec<f64> = ys.into_iter().map(f64::from_bits).collect();
            ts.sort_by(f64::total_cmp);
            ys.sort_by(f64::total_cmp);
            let mut values = vec![vec![f64::NAN; ys.len()]; ts.len()];
            for (t, y, f) in rows {
                let i = ts.partition_point(|&p| p < t);
                let j = ys.partition_point(|&p| p < y);
                if !values[i][j].is_nan() {
                    return Err(CliError::Input(format!(
                        "profile has duplicate node t={t}, y={y}"
                    )));
                }
                values[i][j] = f;
            }
            if values.iter().flatten().any(|v| v.is_nan()) {
                return Err(CliError::Input(
                    "t,y,f profile must list every (t, y) node of a full grid".into(),
                ));
            }
            Ok(LoadedProfile::SpaceTime(
                TimeProfileFunction::bilinear_table(ts, ys, values)?.with_label(label),
            ))
        }
        other => Err(CliError::Input(format!(
            "profile header must be `y,f` or `t,y,f`, got {other:?}"
        ))),
    }
}

/// `(x, y, T)` rows from a CSV with columns `y,T` and optionally `x`.
pub fn load_query_grid(
    path: &Path,
    default_x: Option<f64>,
) -> Result<Vec<(f64, f64, f64)>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot read grid {}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("grid {}: {e}", path.display())))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (iy, it) = match (col("y"), col("T")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CliError::Input("grid needs columns `y` and `T`".into())),
    };
    let ix = col("x");
    if ix.is_none() && default_x.is_none() {
        return Err(CliError::Input(
            "grid has no `x` column and no --x given".into(),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(format!("grid {}: {e}", path.display())))?;
        let x = match ix {
            Some(j) => parse_field(&rec[j], i + 2, "x")?,
            None => default_x.unwrap_or(0.0),
        };
        out.push((
            x,
            parse_field(&rec[iy], i + 2, "y")?,
            parse_field(&rec[it], i + 2, "T")?,
        ));
    }
    Ok(out)
}
