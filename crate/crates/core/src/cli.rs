//! Batch runner behind the `isoprice` binary: pricing runs, convergence
//! ladders, Greek curves and the invariant suite.
//!
//! Every verb computes all of its output in memory before touching the
//! filesystem, so a failed run leaves no partial CSV behind.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::assembly::Discretization;
use crate::config::{ExperimentConfig, ModelKind, ModelParams};
use crate::error::{Error, Result};
use crate::greeks::{self, fmt_sig};
use crate::models::Model;
use crate::reference::{
    bs_exact_call, fdm_solve_afv, fdm_solve_leland, misfit_epsilon, p1fem_solve, sample_expansion,
    FdmConfig,
};
use crate::stepper::{run, run_afv, AfvStepper, SolutionSurface, Storage};
use crate::validation;

/// Environment variable holding the worker-thread count for ladder runs.
pub const THREADS_ENV: &str = "ISOPRICE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "isoprice", version, about = "NURBS Galerkin pricing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Price one configuration; writes surface, t = 0 slice and Greek CSVs.
    Price(RunArgs),
    /// Run the configured ladder of (elements, steps) rungs.
    Converge(ConvergeArgs),
    /// Write Δ, Γ, Θ at t = 0 on the Greville grid.
    Greeks(RunArgs),
    /// Run the invariant suite; exits nonzero if any check fails.
    Validate,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Spot at which the value is reported; overrides `[output] probe_s`.
    #[arg(long = "probe-s")]
    pub probe_s: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Error reference; defaults to closed-form for linear-bs, p1 for
    /// leland and none for afv.
    #[arg(long, value_enum)]
    pub oracle: Option<Oracle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Oracle {
    ClosedForm,
    P1,
    Fdm,
    None,
}

impl Oracle {
    pub fn default_for(model: ModelKind) -> Self {
        match model {
            ModelKind::LinearBs => Oracle::ClosedForm,
            ModelKind::Leland => Oracle::P1,
            ModelKind::Afv => Oracle::None,
        }
    }
}

/// One finished run.
#[derive(Debug, Clone)]
pub struct Solved {
    pub params: ModelParams,
    pub disc: Discretization,
    pub surface: SolutionSurface,
}

impl Solved {
    pub fn model(&self) -> Model<'_> {
        self.params.model()
    }

    /// Backward time of the t = 0 slice.
    pub fn final_tau(&self) -> f64 {
        self.surface.last().tau
    }
}

/// Solves the configured model with `elements` spans and `steps` steps.
pub fn solve(cfg: &ExperimentConfig, elements: usize, steps: usize, storage: Storage) -> Result<Solved> {
    let params = cfg.params()?;
    let (x_min, x_max) = cfg.domain(&params);
    let basis = cfg.basis(&params, elements)?;
    let disc = Discretization::new(basis, x_min, x_max, cfg.discretization.quad_order)?;
    let scheme = cfg.scheme(&params, steps)?;
    let surface = match &params {
        ModelParams::Afv(p) => {
            let stepper = AfvStepper::new(&disc, p, &scheme)?.with_accrual(cfg.discretization.accrual.into());
            run_afv(&stepper, storage)?
        }
        ModelParams::Leland(_) => run(params.model(), &disc, &scheme, storage)?,
    };
    Ok(Solved { params, disc, surface })
}

/// Value at the Greville image nearest to the probe and the exact
/// evaluation of the expansion at the probe itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub s: f64,
    pub nearest_s: f64,
    pub nearest_value: f64,
    pub value: f64,
}

pub fn probe(solved: &Solved, s: f64) -> Result<Probe> {
    let tau = solved.final_tau();
    let coeffs = solved.surface.last().field(0);
    let grid = greeks::greville_s_grid(&solved.disc, solved.model(), tau);
    let nearest_s = grid
        .iter()
        .copied()
        .min_by(|a, b| (a - s).abs().total_cmp(&(b - s).abs()))
        .expect("a basis has at least two functions");
    let v = greeks::value(&solved.disc, coeffs, solved.model(), tau, &[nearest_s, s])?;
    Ok(Probe {
        s,
        nearest_s,
        nearest_value: v.values[0],
        value: v.values[1],
    })
}

fn header(solved: &Solved) -> &'static str {
    if solved.surface.unknowns.len() == 3 {
        "tau,x,S,U,B,C"
    } else {
        "tau,x,S,U"
    }
}

/// Appends one row per Greville point of `index`, in S-space values.
fn push_slice_rows(out: &mut String, solved: &Solved, index: usize) {
    let slice = &solved.surface.slices[index];
    let tau = slice.tau;
    let xs = solved.disc.greville_x();
    let s = greeks::greville_s_grid(&solved.disc, solved.model(), tau);
    let scale = match solved.model() {
        Model::Leland(p) => (-p.kappa() * tau).exp(),
        Model::Afv(_) => 1.0,
    };
    let fields: Vec<Vec<f64>> = slice
        .fields
        .iter()
        .map(|c| solved.disc.values_at_greville(c))
        .collect();
    for j in 0..xs.len() {
        write!(out, "{},{},{}", fmt_sig(tau), fmt_sig(xs[j]), fmt_sig(s[j])).expect("string write");
        for f in &fields {
            write!(out, ",{}", fmt_sig(scale * f[j])).expect("string write");
        }
        out.push('\n');
    }
}

/// Every stored level, Greville point by Greville point.
pub fn surface_csv(solved: &Solved) -> String {
    let mut out = format!("{}\n", header(solved));
    for i in 0..solved.surface.slices.len() {
        push_slice_rows(&mut out, solved, i);
    }
    out
}

/// The t = 0 level only.
pub fn slice_csv(solved: &Solved) -> String {
    let mut out = format!("{}\n", header(solved));
    push_slice_rows(&mut out, solved, solved.surface.slices.len() - 1);
    out
}

/// Δ, Γ, Θ of the first unknown at t = 0 on the Greville image grid.
pub fn greeks_csv(solved: &Solved) -> Result<String> {
    let tau = solved.final_tau();
    let coeffs = solved.surface.last().field(0);
    let model = solved.model();
    let s = greeks::greville_s_grid(&solved.disc, model, tau);
    let d = greeks::delta(&solved.disc, coeffs, model, tau, &s)?;
    let g = greeks::gamma(&solved.disc, coeffs, model, tau, &s)?;
    let last = solved.surface.slices.len() - 1;
    let t = greeks::theta(&solved.disc, &solved.surface, last, 0, model, &s)?;
    let mut buf = Vec::new();
    greeks::write_greeks_csv(&mut buf, &d, &g, &t)?;
    Ok(String::from_utf8(buf).expect("CSV is ASCII"))
}

/// Largest jump of Γ across simple knots, relative to `1 + max |Γ|`, for
/// bases that are C² there (degree ≥ 3); `None` otherwise.
pub fn gamma_continuity(solved: &Solved) -> Result<Option<f64>> {
    if solved.disc.basis.degree() < 3 {
        return Ok(None);
    }
    let tau = solved.final_tau();
    let coeffs = solved.surface.last().field(0);
    let model = solved.model();
    let jump = greeks::max_gamma_jump(&solved.disc, coeffs, model, tau)?;
    let s = greeks::greville_s_grid(&solved.disc, model, tau);
    let g = greeks::gamma(&solved.disc, coeffs, model, tau, &s)?;
    let scale = g.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(Some(jump / (1.0 + scale)))
}

/// One row of a convergence table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rung {
    pub elements: usize,
    pub steps: usize,
    pub value: f64,
    pub error: Option<f64>,
    pub contraction: Option<f64>,
}

fn rung_error(cfg: &ExperimentConfig, solved: &Solved, oracle: Oracle, value: f64, probe_s: f64) -> Result<Option<f64>> {
    let (x_min, x_max) = (solved.disc.map.x_min, solved.disc.map.x_max);
    match (oracle, &solved.params) {
        (Oracle::None, _) => Ok(None),
        (Oracle::ClosedForm, ModelParams::Leland(p)) if p.leland == 0.0 => {
            Ok(Some((value - bs_exact_call(probe_s, p.strike, p.rate, p.sigma, p.maturity)).abs()))
        }
        (Oracle::ClosedForm, _) => Err(Error::InvalidParameter(
            "the closed-form oracle needs the linear model (leland = 0)".into(),
        )),
        (Oracle::P1, ModelParams::Leland(_)) => {
            let n = solved.disc.basis.knots().n_elements();
            let (p1, surf) = p1fem_solve(solved.model(), x_min, x_max, n, &solved.surface.scheme, Storage::Endpoints)?;
            let xs = solved.disc.breakpoints_x();
            let a = sample_expansion(&p1, surf.last().field(0), &xs);
            let b = sample_expansion(&solved.disc, solved.surface.last().field(0), &xs);
            misfit_epsilon(&a, &b).map(Some)
        }
        (Oracle::P1, ModelParams::Afv(_)) => {
            let n = solved.disc.basis.knots().n_elements();
            let (p1, surf) = p1fem_solve(solved.model(), x_min, x_max, n, &solved.surface.scheme, Storage::Endpoints)?;
            let other = Solved {
                params: solved.params.clone(),
                disc: p1,
                surface: surf,
            };
            Ok(Some((value - probe(&other, probe_s)?.value).abs()))
        }
        (Oracle::Fdm, params) => {
            let fdm = FdmConfig {
                x_min,
                x_max,
                n_intervals: solved.disc.basis.knots().n_elements(),
                scheme: solved.surface.scheme,
            };
            let reference = match params {
                ModelParams::Leland(p) => {
                    let grid = fdm_solve_leland(p, &fdm)?;
                    let k = p.kappa() * grid.tau;
                    (-k).exp() * grid.value_at(0, probe_s.ln() + k)
                }
                ModelParams::Afv(p) => {
                    let grid = fdm_solve_afv(p, &fdm, cfg.discretization.accrual.into())?;
                    grid.value_at(0, p.x_of(probe_s)?)
                }
            };
            Ok(Some((value - reference).abs()))
        }
    }
}

/// Runs every ladder rung (concurrently) and fills the contraction column
/// from consecutive errors, in rung order.
pub fn convergence(cfg: &ExperimentConfig, oracle: Oracle, probe_s: f64) -> Result<Vec<Rung>> {
    if cfg.ladder.rungs.is_empty() {
        return Err(Error::InvalidParameter("the ladder has no rungs".into()));
    }
    let mut rows = cfg
        .ladder
        .rungs
        .par_iter()
        .map(|&[elements, steps]| {
            let solved = solve(cfg, elements, steps, Storage::Endpoints)?;
            let value = probe(&solved, probe_s)?.value;
            let error = rung_error(cfg, &solved, oracle, value, probe_s)?;
            Ok(Rung {
                elements,
                steps,
                value,
                error,
                contraction: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for i in 1..rows.len() {
        if let (Some(prev), Some(cur)) = (rows[i - 1].error, rows[i].error) {
            rows[i].contraction = Some(prev / cur);
        }
    }
    Ok(rows)
}

pub fn convergence_csv(rows: &[Rung]) -> String {
    let opt = |v: Option<f64>| v.map(fmt_sig).unwrap_or_default();
    let mut out = String::from("n_elements,n_steps,value,error,contraction\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.elements,
            r.steps,
            fmt_sig(r.value),
            opt(r.error),
            opt(r.contraction)
        )
        .expect("string write");
    }
    out
}

fn out_dir(cfg: &ExperimentConfig, args: &RunArgs) -> PathBuf {
    args.out.clone().unwrap_or_else(|| cfg.base_dir.join(&cfg.output.dir))
}

fn write_files(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn default_stride(cfg: &ExperimentConfig) -> usize {
    match cfg.output.surface_stride {
        0 => (cfg.discretization.steps / 100).max(1),
        k => k,
    }
}

fn print_warnings<W: Write>(out: &mut W, surface: &SolutionSurface) -> Result<()> {
    for w in &surface.warnings {
        writeln!(out, "warning: {w}")?;
    }
    Ok(())
}

fn price<W: Write>(args: &RunArgs, out: &mut W) -> Result<i32> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let d = &cfg.discretization;
    let solved = solve(&cfg, d.elements, d.steps, Storage::Stride(default_stride(&cfg)))?;
    let p = probe(&solved, args.probe_s.unwrap_or(cfg.output.probe_s))?;
    let files = [
        ("surface.csv", surface_csv(&solved)),
        ("slice_t0.csv", slice_csv(&solved)),
        ("greeks.csv", greeks_csv(&solved)?),
    ];
    let dir = out_dir(&cfg, args);
    write_files(&dir, &files)?;
    print_warnings(out, &solved.surface)?;
    writeln!(out, "nearest Greville S = {:.4}: U = {:.4}", p.nearest_s, p.nearest_value)?;
    writeln!(out, "U({}) = {:.4}", p.s, p.value)?;
    writeln!(out, "wrote {}", dir.display())?;
    Ok(0)
}

fn converge<W: Write>(args: &ConvergeArgs, out: &mut W) -> Result<i32> {
    let cfg = ExperimentConfig::load(&args.run.config)?;
    let oracle = args.oracle.unwrap_or(Oracle::default_for(cfg.model));
    let probe_s = args.run.probe_s.unwrap_or(cfg.output.probe_s);
    let rows = convergence(&cfg, oracle, probe_s)?;
    let csv = convergence_csv(&rows);
    let dir = out_dir(&cfg, &args.run);
    write_files(&dir, &[("convergence.csv", csv.clone())])?;
    out.write_all(csv.as_bytes())?;
    Ok(0)
}

fn greeks_verb<W: Write>(args: &RunArgs, out: &mut W) -> Result<i32> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let d = &cfg.discretization;
    let solved = solve(&cfg, d.elements, d.steps, Storage::Endpoints)?;
    let csv = greeks_csv(&solved)?;
    let continuity = gamma_continuity(&solved)?;
    if let Some(jump) = continuity {
        if !(jump <= GAMMA_JUMP_TOL) {
            return Err(Error::Solver {
                step: solved.surface.scheme.n_steps,
                reason: format!("gamma jumps by {jump:.3e} (relative) across a simple knot"),
            });
        }
    }
    let dir = out_dir(&cfg, args);
    write_files(&dir, &[("greeks.csv", csv)])?;
    print_warnings(out, &solved.surface)?;
    if let Some(jump) = continuity {
        writeln!(out, "gamma continuity across simple knots: {jump:.3e}")?;
    }
    writeln!(out, "wrote {}", dir.join("greeks.csv").display())?;
    Ok(0)
}

/// Largest relative Γ jump accepted across a knot of multiplicity one.
pub const GAMMA_JUMP_TOL: f64 = 1e-8;

fn validate<W: Write>(out: &mut W) -> Result<i32> {
    let results = validation::run_all();
    for r in &results {
        writeln!(out, "{r}")?;
    }
    Ok(if results.iter().all(|r| r.passed) { 0 } else { 1 })
}

/// Runs one verb and returns the process exit status.
pub fn execute<W: Write>(cli: &Cli, out: &mut W) -> Result<i32> {
    match &cli.command {
        Command::Price(a) => price(a, out),
        Command::Converge(a) => converge(a, out),
        Command::Greeks(a) => greeks_verb(a, out),
        Command::Validate => validate(out),
    }
}

/// Sizes the global thread pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("{THREADS_ENV}={v} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}
