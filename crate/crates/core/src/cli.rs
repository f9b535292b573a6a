//! Command-line front end.
//!
//! Every subcommand reads a TOML run configuration (see [`crate::config`]), runs the matching
//! pipeline and writes its artifacts into the output directory:
//!
//! * `solve`: `manifest.txt`, `solution_phi.vtk`, `solution_u.vtk`
//! * `estimate`: as `solve`, plus `estimators.csv` and the indicator as a VTK cell field
//! * `study`: `manifest.txt`, `convergence.csv` (needs an `[mms]` table)
//! * `adapt`: `manifest.txt`, `convergence.csv` with one row per level, and `level_XX/`
//!   directories holding the solutions and indicators of each level
//!
//! Exit codes: 0 success, 2 configuration error, 3 non-convergence, 4 mesh error, 1 other.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::adapt::{adaptive_solve, LevelOutput};
use crate::config::RunConfig;
use crate::estimate::{estimate, EstimatorReport};
use crate::mesh::{write_vtk, Mesh, VtkField};
use crate::problem::ProblemData;
use crate::solver::{PicardSolver, PicardState, SolveReport, Spaces};
use crate::verify::{convergence_study, small_data_check, ExactSolution};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "joulefem", version, about = "Finite elements for stationary Joule heating")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set solver.tol=1e-10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory; defaults to `output` from the config, then `out`.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Worker threads for assembly and estimation.
    #[arg(long, default_value_t = 1, global = true)]
    pub threads: usize,
    /// Only report errors.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve once on the configured mesh.
    Solve,
    /// Solve, then compute the error indicators.
    Estimate,
    /// Uniform-refinement convergence study against the `[mms]` exact solution.
    Study,
    /// Adaptive solve-estimate-mark-refine loop.
    Adapt,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Estimate => "estimate",
            Command::Study => "study",
            Command::Adapt => "adapt",
        }
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Syntax { .. } | Error::UnknownIdentifier { .. } | Error::Data(_) | Error::Argument(_) => 2,
        Error::IllPosed(_) => 2,
        Error::NonConvergence { .. } => 3,
        Error::Mesh(_) => 4,
        _ => 1,
    }
}

/// Runs a parsed command line and returns the process exit code. Diagnostics go to stderr.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("error: the Picard iteration did not converge");
            3
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs the pipeline; `Ok(false)` reports a nonlinear iteration that did not converge (the
/// artifacts are still written).
pub fn execute(cli: &Cli) -> Result<bool> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let cfg = RunConfig::load(path, &cli.overrides)?;
    let out = cli
        .output
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    if cli.threads == 0 {
        return Err(Error::Argument("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start thread pool: {e}")))?;
    pool.install(|| Runner { cfg: &cfg, out: &out, command: cli.command, threads: cli.threads, quiet: cli.quiet }.run())
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    command: Command,
    threads: usize,
    quiet: bool,
}

impl Runner<'_> {
    fn run(&self) -> Result<bool> {
        let start = Instant::now();
        let mesh = self.cfg.build_mesh()?;
        let (data, exact) = self.cfg.build_data(&mesh)?;
        std::fs::create_dir_all(self.out)?;
        let mut manifest = toml::Table::new();
        let converged = match self.command {
            Command::Solve | Command::Estimate => self.solve(mesh, &data, exact.as_ref(), &mut manifest)?,
            Command::Study => self.study(mesh, &data, exact.as_ref(), &mut manifest)?,
            Command::Adapt => self.adapt(mesh, &data, exact.as_ref(), &mut manifest)?,
        };
        let mut run = toml::Table::new();
        run.insert("command".into(), self.command.name().into());
        run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        run.insert("threads".into(), (self.threads as i64).into());
        run.insert("seconds".into(), start.elapsed().as_secs_f64().into());
        run.insert("converged".into(), converged.into());
        manifest.insert("run".into(), run.into());
        manifest.insert("config".into(), toml::Value::try_from(self.cfg).map_err(|e| Error::Config(e.to_string()))?);
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(self.out.join("manifest.txt"), text)?;
        Ok(converged)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn solve(
        &self,
        mesh: Mesh,
        data: &ProblemData,
        exact: Option<&ExactSolution>,
        manifest: &mut toml::Table,
    ) -> Result<bool> {
        let t = Instant::now();
        let spaces = Spaces::new(mesh.into(), self.cfg.space.k, self.cfg.space.l)?;
        let solver = PicardSolver::new(data, spaces.clone(), self.cfg.solver_params())?;
        let (state, report) = solver.solve()?;
        let solve_seconds = t.elapsed().as_secs_f64();
        let mut result = solution_summary(&spaces, &state, &report);
        result.insert("solve_seconds".into(), solve_seconds.into());
        if let Some(ex) = exact {
            insert_errors(&mut result, ex, &state);
        }
        let est = if self.command == Command::Estimate {
            let t = Instant::now();
            let est = estimate(&state.phi, &state.u, data)?;
            result.insert("estimator_total".into(), est.weighted_total.into());
            result.insert("estimate_seconds".into(), t.elapsed().as_secs_f64().into());
            Some(est)
        } else {
            None
        };
        write_level(self.out, &spaces, &state, est.as_ref())?;
        manifest.insert("result".into(), result.into());
        self.small_data(data, &state, manifest)?;
        self.say(format!(
            "{} after {} Picard iterations; u in [{:.6}, {:.6}]",
            if report.converged { "converged" } else { "not converged" },
            report.iterations,
            min(state.u.coeffs()),
            max(state.u.coeffs())
        ));
        if let Some(e) = &est {
            self.say(format!("estimator total {:.6e}", e.weighted_total));
        }
        Ok(report.converged)
    }

    fn small_data(&self, data: &ProblemData, state: &PicardState, manifest: &mut toml::Table) -> Result<()> {
        let report = small_data_check(&state.phi, data, &self.cfg.small_data_constants())?;
        let value = toml::Value::try_from(&report).map_err(|e| Error::Config(e.to_string()))?;
        manifest.insert("small_data".into(), value);
        Ok(())
    }

    fn study(
        &self,
        mesh: Mesh,
        data: &ProblemData,
        exact: Option<&ExactSolution>,
        manifest: &mut toml::Table,
    ) -> Result<bool> {
        let exact = exact.ok_or_else(|| Error::Config("study: an [mms] table with the exact solution is required".into()))?;
        let table = convergence_study(
            data,
            exact,
            mesh,
            self.cfg.study.levels,
            (self.cfg.space.k, self.cfg.space.l),
            &self.cfg.solver_params(),
        )?;
        let mut f = BufWriter::new(File::create(self.out.join("convergence.csv"))?);
        table.write_csv(&mut f)?;
        f.flush()?;
        let mut result = toml::Table::new();
        result.insert("levels".into(), (table.rows.len() as i64).into());
        result.insert("failed".into(), table.failed.into());
        for (name, rates) in [
            ("rate_phi_h1", table.rates(|r| r.err_phi_h1)),
            ("rate_u_h1", table.rates(|r| r.err_u_h1)),
            ("rate_phi_l2", table.rates(|r| r.err_phi_l2)),
            ("rate_u_l2", table.rates(|r| r.err_u_l2)),
        ] {
            result.insert(name.into(), rates.clone().into());
        }
        let max_norm = table.rows.iter().map(|r| r.max_iterate_norm).fold(0.0, f64::max);
        result.insert("max_iterate_norm".into(), max_norm.into());
        manifest.insert("result".into(), result.into());
        for r in &table.rows {
            self.say(format!(
                "h {:.4e}  dofs {:>8}  |e_phi|_1 {:.4e}  |e_u|_1 {:.4e}  est {:.4e}",
                r.h_max, r.ndofs, r.err_phi_h1, r.err_u_h1, r.estimator_total
            ));
        }
        Ok(!table.failed)
    }

    fn adapt(
        &self,
        mesh: Mesh,
        data: &ProblemData,
        exact: Option<&ExactSolution>,
        manifest: &mut toml::Table,
    ) -> Result<bool> {
        let error = exact.map(|ex| move |s: &PicardState| ex.errors(s).x_norm());
        let error_ref = error.as_ref().map(|f| f as &dyn Fn(&PicardState) -> f64);
        let history = adaptive_solve(data, mesh, &self.cfg.adapt_params(), error_ref, |lvl: &LevelOutput<'_>| {
            let dir = self.out.join(format!("level_{:02}", lvl.record.level));
            std::fs::create_dir_all(&dir)?;
            write_level(&dir, lvl.spaces, lvl.state, Some(lvl.estimator))?;
            self.say(format!(
                "level {:>2}: cells {:>7}  dofs {:>8}  estimator {:.4e}",
                lvl.record.level,
                lvl.record.num_cells,
                lvl.record.ndofs_phi + lvl.record.ndofs_u,
                lvl.record.estimator_total
            ));
            Ok(())
        })?;
        let mut f = BufWriter::new(File::create(self.out.join("convergence.csv"))?);
        history.write_csv(&mut f)?;
        f.flush()?;
        let mut result = toml::Table::new();
        result.insert("levels".into(), (history.levels.len() as i64).into());
        result.insert("failed".into(), history.failed.into());
        if let Some(last) = history.levels.last() {
            result.insert("final_estimator_total".into(), last.estimator_total.into());
            result.insert("final_ndofs".into(), ((last.ndofs_phi + last.ndofs_u) as i64).into());
        }
        let max_norm = history.levels.iter().map(|r| r.max_iterate_norm).fold(0.0, f64::max);
        result.insert("max_iterate_norm".into(), max_norm.into());
        manifest.insert("result".into(), result.into());
        Ok(!history.failed)
    }
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn solution_summary(spaces: &Spaces, state: &PicardState, report: &SolveReport) -> toml::Table {
    let mut t = toml::Table::new();
    let mesh = spaces.mesh();
    t.insert("num_cells".into(), (mesh.num_cells() as i64).into());
    t.insert("ndofs_phi".into(), (spaces.phi.ndofs() as i64).into());
    t.insert("ndofs_u".into(), (spaces.u.ndofs() as i64).into());
    t.insert("picard_iterations".into(), (report.iterations as i64).into());
    t.insert("final_increment".into(), report.final_increment.into());
    t.insert("max_iterate_norm".into(), report.max_iterate_norm().into());
    t.insert("phi_min".into(), min(state.phi.coeffs()).into());
    t.insert("phi_max".into(), max(state.phi.coeffs()).into());
    t.insert("u_min".into(), min(state.u.coeffs()).into());
    t.insert("u_max".into(), max(state.u.coeffs()).into());
    t
}

fn insert_errors(t: &mut toml::Table, exact: &ExactSolution, state: &PicardState) {
    let e = exact.errors(state);
    t.insert("error_phi_l2".into(), e.phi_l2.into());
    t.insert("error_phi_h1".into(), e.phi_h1.into());
    t.insert("error_u_l2".into(), e.u_l2.into());
    t.insert("error_u_h1".into(), e.u_h1.into());
    t.insert("error_x".into(), e.x_norm().into());
}

/// Writes the two solution files and, when given, the indicator table into `dir`. VTK point
/// data holds the vertex values; higher-order dofs are not exported.
fn write_level(dir: &Path, spaces: &Spaces, state: &PicardState, est: Option<&EstimatorReport>) -> Result<()> {
    let mesh = spaces.mesh();
    let nv = mesh.num_vertices();
    for (name, f) in [("phi", &state.phi), ("u", &state.u)] {
        let mut fields = vec![VtkField::Point(name, &f.coeffs()[..nv])];
        if let Some(e) = est {
            fields.push(VtkField::Cell("estimator", &e.per_cell_total));
        }
        let mut w = BufWriter::new(File::create(dir.join(format!("solution_{name}.vtk")))?);
        write_vtk(&mut w, mesh, &format!("joulefem {name}"), &fields)?;
        w.flush()?;
    }
    if let Some(e) = est {
        let mut w = BufWriter::new(File::create(dir.join("estimators.csv"))?);
        e.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}
