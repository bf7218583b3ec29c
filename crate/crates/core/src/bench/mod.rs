//! Mass-spring benchmark family and the benchmark runner.

mod mass_spring;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use mass_spring::{
    continuous_dynamics, expm, mass_spring_ocp, polygon_approximation, polygon_normals, zoh, ConstraintConfig,
    MassSpringSpec,
};

use crate::condensing::{self, CondensedSolution};
use crate::error::QcqpError;
use crate::ipm::{ExitStatus, IpmSettings, KktBackend, Mode, ResidualNorms};
use crate::kkt_dense::solve_dense;
use crate::kkt_ocp::{solve_ocp, OcpSolution, RiccatiBackend};
use crate::model::{read_problem_file, ProblemFile};
use crate::model::{OcpQcqp, X0Mode};

/// Block size used by the partial-condensing pipeline unless overridden.
pub const DEFAULT_BLOCK_SIZE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Table1,
    Table2,
    Custom,
}

/// Preprocessing applied before the solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pipeline {
    /// Solve the OCP with the initial state as a pinned variable.
    Baseline,
    X0Removal,
    X0Full,
    X0Partial,
    /// A dense problem file, solved as given.
    Dense,
}

impl Pipeline {
    pub fn label(self) -> &'static str {
        match self {
            Pipeline::Baseline => "baseline",
            Pipeline::X0Removal => "x0",
            Pipeline::X0Full => "x0+full",
            Pipeline::X0Partial => "x0+part",
            Pipeline::Dense => "dense",
        }
    }

    /// Parses the `--condense` values `none | x0 | full | partial`.
    pub fn from_condense(s: &str) -> Result<Self, QcqpError> {
        match s {
            "none" => Ok(Pipeline::Baseline),
            "x0" => Ok(Pipeline::X0Removal),
            "full" => Ok(Pipeline::X0Full),
            "partial" => Ok(Pipeline::X0Partial),
            _ => Err(QcqpError::Argument(format!("unknown condensing option '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Iters {
    /// Iterate to convergence within the mode's limit.
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for Iters {
    type Err = QcqpError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Iters::Auto);
        }
        s.parse()
            .map(Iters::Fixed)
            .map_err(|_| QcqpError::Argument(format!("iterations must be a count or 'auto', got '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchArgs {
    pub suite: Suite,
    pub mode: Mode,
    /// `None` uses the suite's iteration protocol (7 for table 1, 9 for
    /// table 2, auto for custom problems).
    pub iters: Option<Iters>,
    /// `None` runs every pipeline the suite defines.
    pub condense: Option<Pipeline>,
    pub block_size: usize,
    pub problem_file: Option<PathBuf>,
    /// Restricts the suite to these problem labels.
    pub problems: Option<Vec<String>>,
    pub seed: u64,
    pub repeats: usize,
    pub parallel: bool,
}

impl Default for BenchArgs {
    fn default() -> Self {
        BenchArgs {
            suite: Suite::Table1,
            mode: Mode::Balance,
            iters: None,
            condense: None,
            block_size: DEFAULT_BLOCK_SIZE,
            problem_file: None,
            problems: None,
            seed: 0,
            repeats: 1,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub problem: String,
    pub pipeline: String,
    pub mode: String,
    pub iters: usize,
    /// Fastest of the repeats, preprocessing and expansion included.
    pub wall_s: f64,
    /// Residual norms of the expanded solution on the original problem.
    pub stat_res: f64,
    pub eq_res: f64,
    pub ineq_res: f64,
    pub comp_res: f64,
    pub objective: f64,
    pub status: String,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub contended: bool,
}

impl BenchRecord {
    pub fn exit_status(&self) -> Option<ExitStatus> {
        [
            ExitStatus::Converged,
            ExitStatus::MaxIter,
            ExitStatus::MinStep,
            ExitStatus::NanDetected,
            ExitStatus::FactorizationFailed,
        ]
        .into_iter()
        .find(|s| s.to_string() == self.status)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub fixed_iterations: bool,
}

impl BenchReport {
    /// All runs converged, or in fixed mode all ran to the iteration count.
    pub fn success(&self) -> bool {
        self.records.iter().all(|r| match r.exit_status() {
            Some(ExitStatus::Converged) => true,
            Some(ExitStatus::MaxIter) => self.fixed_iterations,
            _ => false,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), QcqpError> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| QcqpError::Io(e.to_string());
        wr.write_record([
            "problem", "pipeline", "mode", "iters", "wall_s", "stat_res", "eq_res", "ineq_res", "comp_res", "objective",
            "status",
        ])
        .map_err(io)?;
        for r in &self.records {
            wr.write_record([
                r.problem.clone(),
                r.pipeline.clone(),
                r.mode.clone(),
                r.iters.to_string(),
                format!("{:e}", r.wall_s),
                format!("{:e}", r.stat_res),
                format!("{:e}", r.eq_res),
                format!("{:e}", r.ineq_res),
                format!("{:e}", r.comp_res),
                format!("{:.17e}", r.objective),
                r.status.clone(),
            ])
            .map_err(io)?;
        }
        wr.flush().map_err(|e| QcqpError::Io(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.records).expect("json serialization")
    }

    pub fn write(&self, path: &Path, format: ReportFormat) -> Result<(), QcqpError> {
        let f = std::fs::File::create(path).map_err(|e| QcqpError::Io(format!("{}: {e}", path.display())))?;
        match format {
            ReportFormat::Csv => self.write_csv(f),
            ReportFormat::Json => {
                let mut f = f;
                f.write_all(self.to_json().as_bytes())
                    .map_err(|e| QcqpError::Io(format!("{}: {e}", path.display())))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Result of one pipeline run, expanded to the original problem.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub solution: OcpSolution,
    pub iterations: usize,
    pub status: ExitStatus,
    /// Residuals of the expanded solution on the original problem.
    pub residuals: ResidualNorms,
    pub objective: f64,
}

/// Residual norms of a stage-wise solution on `ocp`.
pub fn ocp_residuals(ocp: &OcpQcqp, sol: &OcpSolution) -> ResidualNorms {
    let mut backend = RiccatiBackend::new(ocp);
    let it = sol.to_iterate(&backend);
    backend.linearize(&it);
    backend.residuals(&it, 0.0).norms()
}

fn x0_of(ocp: &OcpQcqp) -> Result<Vec<f64>, QcqpError> {
    ocp.initial_state
        .clone()
        .ok_or_else(|| QcqpError::Argument("x0 removal needs a nominal initial state".into()))
}

/// Preprocesses, solves and expands `ocp` with one pipeline.
pub fn run_pipeline(
    ocp: &OcpQcqp,
    pipeline: Pipeline,
    block_size: usize,
    settings: &IpmSettings,
) -> Result<PipelineRun, QcqpError> {
    let (solution, stats) = match pipeline {
        Pipeline::Baseline => solve_ocp(ocp, settings)?,
        Pipeline::Dense => return Err(QcqpError::Argument("dense pipeline needs a dense problem".into())),
        _ => {
            let (reduced, x0_map) = if ocp.x0_mode == X0Mode::Variable {
                let (r, m) = condensing::remove_x0(ocp, &x0_of(ocp)?)?;
                (r, Some(m))
            } else {
                (ocp.clone(), None)
            };
            let (sol, stats) = match pipeline {
                Pipeline::X0Removal => solve_ocp(&reduced, settings)?,
                Pipeline::X0Full => {
                    let (dense, map) = condensing::full_condense(&reduced);
                    let (ds, stats) = solve_dense(&dense, settings)?;
                    (condensing::expand_solution(&map, CondensedSolution::Dense(&ds))?, stats)
                }
                _ => {
                    let n_blocks = condensing::blocks_for_size(reduced.horizon(), block_size)?;
                    let (part, map) = condensing::partial_condense(&reduced, n_blocks)?;
                    let (ps, stats) = solve_ocp(&part, settings)?;
                    (condensing::expand_solution(&map, CondensedSolution::Ocp(&ps))?, stats)
                }
            };
            match x0_map {
                Some(m) => (condensing::expand_solution(&m, CondensedSolution::Ocp(&sol))?, stats),
                None => (sol, stats),
            }
        }
    };
    Ok(PipelineRun {
        residuals: ocp_residuals(ocp, &solution),
        objective: stats.objective,
        iterations: stats.iterations,
        status: stats.status,
        solution,
    })
}

enum Job {
    Ocp(String, OcpQcqp, Pipeline),
    Dense(String, crate::model::DenseQcqp),
}

fn suite_jobs(args: &BenchArgs) -> Result<Vec<Job>, QcqpError> {
    let configs: &[ConstraintConfig] = match args.suite {
        Suite::Table1 => &[ConstraintConfig::Qp0, ConstraintConfig::Qcqp1, ConstraintConfig::QcqpN],
        Suite::Table2 => &[
            ConstraintConfig::QcqpEnergy,
            ConstraintConfig::Qp4,
            ConstraintConfig::Qp6,
            ConstraintConfig::Qp8,
        ],
        Suite::Custom => &[],
    };
    if let Some(sel) = &args.problems {
        let known: Vec<&str> = configs.iter().map(|c| c.label()).collect();
        if let Some(bad) = sel.iter().find(|s| !known.contains(&s.as_str())) {
            return Err(QcqpError::Argument(format!("unknown problem label '{bad}'")));
        }
    }
    let wanted = |label: &str| args.problems.as_ref().is_none_or(|sel| sel.iter().any(|s| s == label));
    let mut jobs = Vec::new();
    if args.suite == Suite::Custom {
        let path = args
            .problem_file
            .as_ref()
            .ok_or_else(|| QcqpError::Argument("the custom suite needs --problem-file".into()))?;
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match read_problem_file(path)? {
            ProblemFile::Dense(d) => jobs.push(Job::Dense(label, d)),
            ProblemFile::Ocp(o) => {
                let pipeline = args.condense.unwrap_or(Pipeline::Baseline);
                jobs.push(Job::Ocp(label, o, pipeline));
            }
        }
        return Ok(jobs);
    }
    let pipelines: Vec<Pipeline> = match (args.condense, args.suite) {
        (Some(p), _) => vec![p],
        (None, Suite::Table1) => vec![
            Pipeline::Baseline,
            Pipeline::X0Removal,
            Pipeline::X0Full,
            Pipeline::X0Partial,
        ],
        (None, _) => vec![Pipeline::X0Removal],
    };
    for &c in configs {
        if !wanted(c.label()) {
            continue;
        }
        let spec = match args.suite {
            Suite::Table1 => MassSpringSpec::table1(c, args.seed),
            _ => MassSpringSpec::table2(c, args.seed),
        };
        let ocp = mass_spring_ocp(&spec)?;
        for &p in &pipelines {
            jobs.push(Job::Ocp(c.label().to_string(), ocp.clone(), p));
        }
    }
    Ok(jobs)
}

fn run_job(job: &Job, args: &BenchArgs, settings: &IpmSettings) -> Result<BenchRecord, QcqpError> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..args.repeats.max(1) {
        let start = Instant::now();
        let out = match job {
            Job::Ocp(_, ocp, p) => {
                let run = run_pipeline(ocp, *p, args.block_size, settings)?;
                (run.iterations, run.status, run.residuals, run.objective)
            }
            Job::Dense(_, d) => {
                let (_, stats) = solve_dense(d, settings)?;
                (stats.iterations, stats.status, stats.final_res, stats.objective)
            }
        };
        best = best.min(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    let (iters, status, res, objective) = last.expect("at least one repeat");
    let (problem, pipeline) = match job {
        Job::Ocp(l, _, p) => (l.clone(), p.label()),
        Job::Dense(l, _) => (l.clone(), Pipeline::Dense.label()),
    };
    Ok(BenchRecord {
        problem,
        pipeline: pipeline.to_string(),
        mode: args.mode.to_string(),
        iters,
        wall_s: best,
        stat_res: res.stat,
        eq_res: res.eq,
        ineq_res: res.ineq,
        comp_res: res.comp,
        objective,
        status: status.to_string(),
        contended: args.parallel,
    })
}

/// Builds, preprocesses, solves and expands every requested problem.
pub fn run_benchmark(args: &BenchArgs) -> Result<BenchReport, QcqpError> {
    let iters = args.iters.unwrap_or(match args.suite {
        Suite::Table1 => Iters::Fixed(7),
        Suite::Table2 => Iters::Fixed(9),
        Suite::Custom => Iters::Auto,
    });
    let settings = match iters {
        Iters::Auto => IpmSettings::for_mode(args.mode),
        Iters::Fixed(n) => IpmSettings::fixed(args.mode, n),
    };
    let jobs = suite_jobs(args)?;
    let records: Result<Vec<_>, _> = if args.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|j| s.spawn(|| run_job(j, args, &settings)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("benchmark thread")).collect()
        })
    } else {
        jobs.iter().map(|j| run_job(j, args, &settings)).collect()
    };
    Ok(BenchReport {
        records: records?,
        fixed_iterations: settings.fixed_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iters_parse() {
        assert_eq!("auto".parse::<Iters>().unwrap(), Iters::Auto);
        assert_eq!("7".parse::<Iters>().unwrap(), Iters::Fixed(7));
        assert!("x".parse::<Iters>().is_err());
    }

    #[test]
    fn empty_selection_is_empty_success() {
        let args = BenchArgs {
            problems: Some(Vec::new()),
            ..BenchArgs::default()
        };
        let r = run_benchmark(&args).unwrap();
        assert!(r.records.is_empty());
        assert!(r.success());
    }

    #[test]
    fn unknown_label_rejected() {
        let args = BenchArgs {
            problems: Some(vec!["QP_5".into()]),
            ..BenchArgs::default()
        };
        assert!(matches!(run_benchmark(&args), Err(QcqpError::Argument(_))));
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        BenchReport::default().write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            "problem,pipeline,mode,iters,wall_s,stat_res,eq_res,ineq_res,comp_res,objective,status"
        );
    }
}
