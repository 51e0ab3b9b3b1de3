//! Command-line front end: `curvature`, `glue`, `solve`, `kernel`, `norms`,
//! `sweep` and `estimate`.
//!
//! Settings come from built-in defaults, then an optional `--config` file of
//! `key = value` lines, then flags. Every output embeds `format_version` and
//! the resolved configuration; CSV files carry them as `#` lines above the
//! header. Exit codes: 0 success, 1 solver failure (output still written),
//! 2 configuration or input error.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::asymptotics::{cusp_block_exponents, cusp_kernel_classification, ugly_estimate, GrowthWindow, UglyEstimateConfig};
use crate::error::{Error, Result};
use crate::geometry::{sectional_curvatures, v_profile, DiagonalMetricProfile, Dimension};
use crate::gluing::{
    double_star_norm, glue, glue_for_radius, glued_residual, residual_decay_sweep, residual_decay_sweep_ell, GluedProfile,
    WeightFunction,
};
use crate::operator::{einstein_residual, InvariantTensor};
use crate::solver::{newton_solve, NewtonReport, SolverConfig, SolverMode};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::Config(format!("unknown format `{s}`"))),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dehnfill", version, about = "Black-hole caps, cusp gluing and Einstein solves for torus-invariant metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form sectional curvatures of the black-hole metric.
    Curvature(Common),
    /// Glued almost-Einstein profile.
    Glue(Common),
    /// Newton solve starting from the glued profile.
    Solve(Common),
    /// Kernel of the linearized equation on the cusp.
    Kernel(Common),
    /// Weighted norms of the Newton correction.
    Norms(Common),
    /// Glued residual against the cap radius.
    Sweep(Common),
    /// Empirical constant of the cusp a-priori estimate.
    Estimate(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Curvature(_) => "curvature",
            Self::Glue(_) => "glue",
            Self::Solve(_) => "solve",
            Self::Kernel(_) => "kernel",
            Self::Norms(_) => "norms",
            Self::Sweep(_) => "sweep",
            Self::Estimate(_) => "estimate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Self::Curvature(c)
            | Self::Glue(c)
            | Self::Solve(c)
            | Self::Kernel(c)
            | Self::Norms(c)
            | Self::Sweep(c)
            | Self::Estimate(c) => c,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
struct Common {
    /// Dimension n ≥ 3.
    #[arg(long = "n")]
    n: Option<usize>,
    /// Meridian length(s), comma separated.
    #[arg(long = "ell", value_delimiter = ',')]
    ell: Option<Vec<f64>>,
    /// Cap radius (or radii, comma separated).
    #[arg(long = "R", value_delimiter = ',')]
    big_r: Option<Vec<f64>>,
    #[arg(long)]
    nodes: Option<usize>,
    /// r_max / R of the glued profile.
    #[arg(long = "outer-factor")]
    outer_factor: Option<f64>,
    /// Residual tolerance of the solver.
    #[arg(long)]
    tol: Option<f64>,
    /// newton or frozen_jacobian.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; standard output when absent or `-`.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    format: Option<Format>,
    /// `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<String>,
    /// Radius range for `curvature`: R_MIN R_MAX SAMPLES.
    #[arg(long = "r", num_args = 3, value_names = ["R_MIN", "R_MAX", "SAMPLES"])]
    r_range: Option<Vec<f64>>,
    /// Forcing amplitude for `estimate`.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long = "max-iterations")]
    max_iterations: Option<usize>,
    #[arg(long)]
    damping: Option<f64>,
    /// Extra CSV: final profile (`solve`, `norms`) or residual (`glue`).
    #[arg(long)]
    aux: Option<String>,
}

const CONFIG_KEYS: &[&str] = &[
    "n",
    "ell",
    "R",
    "nodes",
    "outer_factor",
    "tol",
    "mode",
    "seed",
    "out",
    "format",
    "r_min",
    "r_max",
    "samples",
    "alpha",
    "trials",
    "max_iterations",
    "damping",
    "aux",
];

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse_value(key, x.trim())).collect()
}

/// Parses a flat `key = value` file; `#` starts a comment.
fn parse_config_file(text: &str) -> Result<Common> {
    let mut c = Common::default();
    let mut range = [None, None, None];
    let mut seen = std::collections::BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Config(format!("line {}: unknown key `{key}`", lineno + 1)));
        }
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
        match key {
            "n" => c.n = Some(parse_value(key, value)?),
            "ell" => c.ell = Some(parse_list(key, value)?),
            "R" => c.big_r = Some(parse_list(key, value)?),
            "nodes" => c.nodes = Some(parse_value(key, value)?),
            "outer_factor" => c.outer_factor = Some(parse_value(key, value)?),
            "tol" => c.tol = Some(parse_value(key, value)?),
            "mode" => c.mode = Some(value.to_string()),
            "seed" => c.seed = Some(parse_value(key, value)?),
            "out" => c.out = Some(value.to_string()),
            "format" => c.format = Some(value.parse()?),
            "r_min" => range[0] = Some(parse_value(key, value)?),
            "r_max" => range[1] = Some(parse_value(key, value)?),
            "samples" => range[2] = Some(parse_value(key, value)?),
            "alpha" => c.alpha = Some(parse_value(key, value)?),
            "trials" => c.trials = Some(parse_value(key, value)?),
            "max_iterations" => c.max_iterations = Some(parse_value(key, value)?),
            "damping" => c.damping = Some(parse_value(key, value)?),
            "aux" => c.aux = Some(value.to_string()),
            _ => unreachable!(),
        }
    }
    match range {
        [Some(a), Some(b), Some(s)] => c.r_range = Some(vec![a, b, s]),
        [None, None, None] => {}
        _ => return Err(Error::Config("r_min, r_max and samples go together".into())),
    }
    Ok(c)
}

fn merge(file: Common, flags: &Common) -> Common {
    let f = flags.clone();
    Common {
        n: f.n.or(file.n),
        ell: f.ell.or(file.ell),
        big_r: f.big_r.or(file.big_r),
        nodes: f.nodes.or(file.nodes),
        outer_factor: f.outer_factor.or(file.outer_factor),
        tol: f.tol.or(file.tol),
        mode: f.mode.or(file.mode),
        seed: f.seed.or(file.seed),
        out: f.out.or(file.out),
        format: f.format.or(file.format),
        config: None,
        r_range: f.r_range.or(file.r_range),
        alpha: f.alpha.or(file.alpha),
        trials: f.trials.or(file.trials),
        max_iterations: f.max_iterations.or(file.max_iterations),
        damping: f.damping.or(file.damping),
        aux: f.aux.or(file.aux),
    }
}

/// Fully resolved settings of one run, echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub n: usize,
    pub ell: Vec<f64>,
    #[serde(rename = "R")]
    pub big_r: Vec<f64>,
    pub nodes: usize,
    pub outer_factor: f64,
    pub tol: f64,
    pub mode: SolverMode,
    pub seed: u64,
    pub out: Option<String>,
    pub format: Format,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub samples: Option<usize>,
    pub alpha: f64,
    pub trials: usize,
    pub max_iterations: usize,
    pub damping: f64,
    pub aux: Option<String>,
}

impl RunConfig {
    fn resolve(command: &str, c: Common) -> Result<Self> {
        let n = c.n.ok_or_else(|| Error::Config("--n is required".into()))?;
        Dimension::new(n).map_err(|e| Error::Config(e.to_string()))?;
        let default_format = match command {
            "curvature" | "glue" | "sweep" => Format::Csv,
            _ => Format::Json,
        };
        let default_nodes = if command == "estimate" { 1024 } else { 2048 };
        let (r_min, r_max, samples) = match c.r_range.as_deref() {
            Some([a, b, s]) => {
                if !(s.fract() == 0.0 && *s >= 0.0) {
                    return Err(Error::Config("SAMPLES must be a whole number".into()));
                }
                (Some(*a), Some(*b), Some(*s as usize))
            }
            _ => (None, None, None),
        };
        let cfg = Self {
            command: command.to_string(),
            n,
            ell: c.ell.unwrap_or_default(),
            big_r: c.big_r.unwrap_or_default(),
            nodes: c.nodes.unwrap_or(default_nodes),
            outer_factor: c.outer_factor.unwrap_or(4.0),
            tol: c.tol.unwrap_or(1e-8),
            mode: c.mode.as_deref().unwrap_or("newton").parse()?,
            seed: c.seed.unwrap_or(0),
            out: c.out.filter(|p| p != "-"),
            format: c.format.unwrap_or(default_format),
            r_min,
            r_max,
            samples,
            alpha: c.alpha.unwrap_or(0.1),
            trials: c.trials.unwrap_or(50),
            max_iterations: c.max_iterations.unwrap_or(30),
            damping: c.damping.unwrap_or(1.0),
            aux: c.aux,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.ell.iter().chain(&self.big_r).any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("ℓ and R must be positive");
        }
        if !(self.outer_factor > 1.0) {
            return bad("--outer-factor must exceed 1");
        }
        if !(self.tol > 0.0) {
            return bad("--tol must be positive");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("--damping must lie in (0, 1]");
        }
        if !(self.alpha >= 0.0) {
            return bad("--alpha must be non-negative");
        }
        Ok(())
    }

    fn dim(&self) -> Dimension {
        Dimension::new(self.n).expect("validated")
    }

    /// The single ℓ or R of `glue`, `solve` and `norms`.
    fn glued(&self) -> Result<GluedProfile> {
        match (self.ell.as_slice(), self.big_r.as_slice()) {
            ([ell], []) => glue(self.dim(), *ell, self.outer_factor, self.nodes),
            ([], [r]) => glue_for_radius(self.dim(), *r, self.outer_factor, self.nodes),
            _ => Err(Error::Config("give exactly one of --ell or --R, with a single value".into())),
        }
    }

    fn solver(&self, big_r: f64) -> SolverConfig {
        SolverConfig {
            max_iterations: self.max_iterations,
            residual_tolerance: self.tol,
            damping: self.damping,
            mode: self.mode,
            weight_radius: Some(big_r),
            ..SolverConfig::default()
        }
    }
}

/// Text written by a subcommand, and whether the solver failed.
struct Outcome {
    body: String,
    aux: Option<String>,
    failed: bool,
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv(cfg: &RunConfig, header: &[String], rows: &[Vec<f64>]) -> String {
    let mut s = format!("# format_version={FORMAT_VERSION}\n# config={}\n", serde_json::to_string(cfg).expect("config serializes"));
    s.push_str(&header.join(","));
    s.push('\n');
    for row in rows {
        s.push_str(&row.iter().map(|v| num(*v)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

fn json<T: Serialize>(cfg: &RunConfig, result: &T) -> Result<String> {
    let mut map = match serde_json::to_value(result)? {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("result".into(), other);
            m
        }
    };
    map.insert("format_version".into(), Value::from(FORMAT_VERSION));
    map.insert("config".into(), serde_json::to_value(cfg)?);
    let mut s = serde_json::to_string_pretty(&Value::Object(map))?;
    s.push('\n');
    Ok(s)
}

fn profile_csv(cfg: &RunConfig, p: &DiagonalMetricProfile) -> String {
    let mut header = vec!["s".to_string(), "r".to_string()];
    header.extend((2..=cfg.n).map(|i| format!("f{i}")));
    let rows: Vec<Vec<f64>> = (0..p.len())
        .map(|k| {
            let mut row = vec![p.grid.nodes[k], p.r[k]];
            row.extend(&p.f[k]);
            row
        })
        .collect();
    csv(cfg, &header, &rows)
}

fn residual_csv(cfg: &RunConfig, p: &DiagonalMetricProfile) -> Result<String> {
    let res = einstein_residual(p)?;
    let mut header = vec!["s".to_string(), "r".to_string()];
    header.extend((2..=cfg.n).map(|i| format!("E1_{i}")));
    header.push("E2".into());
    let rows: Vec<Vec<f64>> = (0..p.len())
        .map(|k| {
            let mut row = vec![p.grid.nodes[k], p.r[k]];
            let e1 = res.e1_nodes.contains(&k);
            row.extend((0..cfg.n - 1).map(|i| if e1 { res.e1[k][(i, i)] } else { 0.0 }));
            row.push(if res.e2_nodes.contains(&k) { res.e2[k] } else { 0.0 });
            row
        })
        .collect();
    Ok(csv(cfg, &header, &rows))
}

#[derive(Serialize)]
struct CurvatureRow {
    r: f64,
    #[serde(rename = "K12")]
    k12: f64,
    #[serde(rename = "K1i")]
    k1i: f64,
    #[serde(rename = "Kij")]
    kij: f64,
    #[serde(rename = "V")]
    v: f64,
    #[serde(rename = "Vp")]
    vp: f64,
}

fn cmd_curvature(cfg: &RunConfig) -> Result<Outcome> {
    let (Some(a), Some(b), Some(samples)) = (cfg.r_min, cfg.r_max, cfg.samples) else {
        return Err(Error::Config("curvature needs --r R_MIN R_MAX SAMPLES".into()));
    };
    if samples == 0 || !(a <= b) || (samples == 1 && a != b) {
        return Err(Error::Config(format!("empty radius range [{a}, {b}] with {samples} samples")));
    }
    let n = cfg.dim();
    let mut rows = Vec::with_capacity(samples);
    for j in 0..samples {
        let r = if samples == 1 { a } else { a + (b - a) * j as f64 / (samples - 1) as f64 };
        let k = sectional_curvatures(n, r)?;
        let v = v_profile(n, r)?;
        rows.push(CurvatureRow { r, k12: k.k12, k1i: k.k1i, kij: k.kij, v: v.v, vp: v.dv });
    }
    let body = match cfg.format {
        Format::Csv => {
            let header: Vec<String> = ["r", "K12", "K1i", "Kij", "V", "Vp"].iter().map(|s| s.to_string()).collect();
            let table: Vec<Vec<f64>> = rows.iter().map(|c| vec![c.r, c.k12, c.k1i, c.kij, c.v, c.vp]).collect();
            csv(cfg, &header, &table)
        }
        Format::Json => json(cfg, &serde_json::json!({ "rows": rows }))?,
    };
    Ok(Outcome { body, aux: None, failed: false })
}

#[derive(Serialize)]
struct ProfileColumns<'a> {
    s: &'a [f64],
    r: &'a [f64],
    f: &'a [Vec<f64>],
}

fn cmd_glue(cfg: &RunConfig) -> Result<Outcome> {
    let g = cfg.glued()?;
    let p = &g.profile;
    let body = match cfg.format {
        Format::Csv => profile_csv(cfg, p),
        Format::Json => json(
            cfg,
            &serde_json::json!({
                "ell": g.ell,
                "R": g.big_r,
                "collar_inner": g.collar_inner,
                "theta_scale": g.theta_scale,
                "r_max": g.r_max,
                "residual": glued_residual(&g)?,
                "cone_angle_defect": p.cone_angle_defect(),
                "profile": ProfileColumns { s: &p.grid.nodes, r: &p.r, f: &p.f },
            }),
        )?,
    };
    let aux = match &cfg.aux {
        Some(_) => Some(residual_csv(cfg, p)?),
        None => None,
    };
    Ok(Outcome { body, aux, failed: false })
}

fn solve_glued(cfg: &RunConfig) -> Result<(GluedProfile, DiagonalMetricProfile, NewtonReport)> {
    let g = cfg.glued()?;
    let (p, report) = newton_solve(&g.profile, &cfg.solver(g.big_r))?;
    Ok((g, p, report))
}

fn cmd_solve(cfg: &RunConfig) -> Result<Outcome> {
    let (g, p, report) = solve_glued(cfg)?;
    let body = match cfg.format {
        Format::Json => json(cfg, &serde_json::json!({ "ell": g.ell, "R": g.big_r, "report": report, "final_max_residual": report.final_max_residual, "converged": report.converged() }))?,
        Format::Csv => {
            let header: Vec<String> = ["iteration", "residual_sup", "residual_star", "e2_max", "step_sup", "perturbation_double_star", "rate", "order"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
            let rows: Vec<Vec<f64>> = report
                .iterations
                .iter()
                .map(|r| {
                    vec![
                        r.iteration as f64,
                        r.residual_sup,
                        opt(r.residual_star),
                        r.e2_max,
                        opt(r.step_sup),
                        opt(r.perturbation_double_star),
                        opt(r.rate),
                        opt(r.order),
                    ]
                })
                .collect();
            csv(cfg, &header, &rows)
        }
    };
    let aux = cfg.aux.as_ref().map(|_| profile_csv(cfg, &p));
    Ok(Outcome { body, aux, failed: !report.converged() })
}

fn cmd_kernel(cfg: &RunConfig) -> Result<Outcome> {
    let n = cfg.dim();
    let k = cusp_kernel_classification(n, GrowthWindow::default())?;
    let strict = cusp_kernel_classification(n, GrowthWindow::strict(-0.1, 0.1))?;
    let exponents = cusp_block_exponents(n)?;
    let body = match cfg.format {
        Format::Json => json(
            cfg,
            &serde_json::json!({
                "n": k.n,
                "dimension": k.dimension,
                "strict_dimension": strict.dimension,
                "exponents": exponents,
                "window": k.window,
                "modes": k.modes,
                "description": k.description,
            }),
        )?,
        Format::Csv => {
            let header: Vec<String> = ["block", "exponent", "multiplicity", "admissible"].iter().map(|s| s.to_string()).collect();
            let mut s = csv(cfg, &header, &[]);
            for m in &k.modes {
                let block = serde_json::to_value(m.block)?.as_str().unwrap_or_default().to_string();
                s.push_str(&format!("{block},{},{},{}\n", num(m.exponent), m.multiplicity, u8::from(m.admissible)));
            }
            s
        }
    };
    Ok(Outcome { body, aux: None, failed: false })
}

fn cmd_norms(cfg: &RunConfig) -> Result<Outcome> {
    let (g, p, report) = solve_glued(cfg)?;
    let g0 = &g.profile;
    let mut h = InvariantTensor::zeros(g0.grid.clone());
    for k in 0..g0.len() {
        let c = g0.f[k].len();
        h.hij[k] = DMatrix::from_fn(c, c, |i, j| if i == j { p.f[k][i] * p.f[k][i] - g0.f[k][i] * g0.f[k][i] } else { 0.0 });
    }
    let wf = WeightFunction::new(cfg.dim(), g.big_r);
    let norms = double_star_norm(&h, g0, &wf, 0)?;
    let body = match cfg.format {
        Format::Json => {
            let mut v = serde_json::to_value(&norms)?;
            if let Value::Object(m) = &mut v {
                m.insert("subject".into(), Value::from("newton_correction"));
                m.insert("converged".into(), Value::from(report.converged()));
                m.insert("R".into(), Value::from(g.big_r));
            }
            json(cfg, &v)?
        }
        Format::Csv => {
            let header: Vec<String> = ["sup", "star", "double_star", "split", "c_k_index"].iter().map(|s| s.to_string()).collect();
            csv(cfg, &header, &[vec![norms.sup, norms.star, norms.double_star, norms.split, norms.c_k_index as f64]])
        }
    };
    let aux = cfg.aux.as_ref().map(|_| profile_csv(cfg, &p));
    Ok(Outcome { body, aux, failed: !report.converged() })
}

fn cmd_sweep(cfg: &RunConfig) -> Result<Outcome> {
    let n = cfg.dim();
    let rep = match (cfg.ell.is_empty(), cfg.big_r.is_empty()) {
        (true, false) => residual_decay_sweep(n, &cfg.big_r, cfg.outer_factor, cfg.nodes),
        (false, true) => residual_decay_sweep_ell(n, &cfg.ell, cfg.outer_factor, cfg.nodes),
        _ => Err(Error::Config("sweep takes a list of either --R or --ell".into())),
    }
    .map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Config(m),
        e => e,
    })?;
    let body = match cfg.format {
        Format::Json => json(cfg, &rep)?,
        Format::Csv => {
            let header: Vec<String> = ["ell", "R", "star_residual", "sup_residual", "residual_off_collar", "slope"].iter().map(|s| s.to_string()).collect();
            let rows: Vec<Vec<f64>> = rep
                .rows
                .iter()
                .map(|r| vec![r.ell, r.big_r, r.star_residual, r.sup_residual, r.residual_off_collar, rep.slope])
                .collect();
            csv(cfg, &header, &rows)
        }
    };
    Ok(Outcome { body, aux: None, failed: false })
}

fn cmd_estimate(cfg: &RunConfig) -> Result<Outcome> {
    let [big_r] = cfg.big_r.as_slice() else {
        return Err(Error::Config("estimate needs a single --R".into()));
    };
    let mut ec = UglyEstimateConfig::new(cfg.n, *big_r, cfg.alpha, cfg.trials, cfg.seed);
    ec.nodes = cfg.nodes;
    let est = ugly_estimate(&ec).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Config(m),
        e => e,
    })?;
    let body = match cfg.format {
        Format::Json => json(cfg, &est)?,
        Format::Csv => {
            let header: Vec<String> = ["trial", "ratio"].iter().map(|s| s.to_string()).collect();
            let rows: Vec<Vec<f64>> = est.per_trial.iter().enumerate().map(|(j, v)| vec![j as f64, *v]).collect();
            csv(cfg, &header, &rows)
        }
    };
    Ok(Outcome { body, aux: None, failed: false })
}

fn write_to(path: Option<&str>, body: &str, stdout: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(Path::new(p), body)?,
        None => stdout.write_all(body.as_bytes())?,
    }
    Ok(())
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<bool> {
    let name = cli.command.name();
    let flags = cli.command.common();
    let file = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {path}: {e}")))?;
            parse_config_file(&text)?
        }
        None => Common::default(),
    };
    let cfg = RunConfig::resolve(name, merge(file, flags))?;
    let outcome = match cli.command {
        Command::Curvature(_) => cmd_curvature(&cfg)?,
        Command::Glue(_) => cmd_glue(&cfg)?,
        Command::Solve(_) => cmd_solve(&cfg)?,
        Command::Kernel(_) => cmd_kernel(&cfg)?,
        Command::Norms(_) => cmd_norms(&cfg)?,
        Command::Sweep(_) => cmd_sweep(&cfg)?,
        Command::Estimate(_) => cmd_estimate(&cfg)?,
    };
    write_to(cfg.out.as_deref(), &outcome.body, stdout)?;
    if let (Some(path), Some(text)) = (&cfg.aux, &outcome.aux) {
        write_to(Some(path), text, stdout)?;
    }
    Ok(!outcome.failed)
}

/// Runs the CLI on `args` (program name first), writing to `stdout` and
/// `stderr`; returns the exit code.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(true) => 0,
        Ok(false) => {
            let _ = writeln!(stderr, "solver did not converge; report written");
            1
        }
        Err(e) => {
            let _ = writeln!(stderr, "dehnfill: {e}");
            2
        }
    }
}

/// Entry point of the binary.
pub fn run() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
