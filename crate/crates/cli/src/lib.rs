//! `conecraft`: constraint conversion, training, sampling, projection and
//! timing from the command line. [`run_with`] is the whole program with
//! its output streams passed in.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 verification or
//! convergence failure.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use conecraft::experiments::{
    run_bench, run_projection_experiment, run_vae_experiment, sample_vae, BenchConfig, ExperimentError,
    ProjectionConfig, VaeConfig,
};
use conecraft::netkit::gradcheck_suite;
use conecraft::polyhedra::{
    checkerboard_hrep, dd_convert, format_matrix, parse_matrix, read_hrep, verify_vrep, write_hrep, write_vrep,
    InsertionOrder, PolyError, ToleranceConfig,
};
use conecraft::projector::{project_batch, DykstraOptions};

/// `writeln!` to a stream whose write errors the program cannot act on.
macro_rules! say {
    ($o:expr, $($t:tt)*) => {
        let _ = writeln!($o, $($t)*);
    };
}

#[derive(Debug, Parser)]
#[command(name = "conecraft", version, about = "Hard linear constraints on network outputs via cone parameterization")]
struct Cli {
    /// Seed for every random choice; overrides `seed` in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads for internal parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Order {
    Input,
    Greedy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Checkerboard,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Projection,
    Vae,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Convert an H-rep file to a V-rep file and verify the result.
    Convert {
        #[arg(long)]
        hrep: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "greedy")]
        order: Order,
        /// Feasible points sampled for the completeness check.
        #[arg(long, default_value_t = 200)]
        verify_samples: usize,
    },
    /// Write a constraint H-rep file.
    GenConstraints {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        side: usize,
        #[arg(long)]
        tiles: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes config, metrics, summary and checkpoint to --out.
    Train {
        #[arg(long, value_enum)]
        task: TaskArg,
        /// JSON config; missing keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `dotted.key=value` applied after the file; values parse as JSON,
        /// falling back to strings.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode prior samples from a VAE checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        n: usize,
        /// Directory for samples.txt, samples.bin and report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Project the rows of a matrix file onto the cone (and box).
    Project {
        #[arg(long)]
        hrep: PathBuf,
        #[arg(long = "box")]
        boxed: bool,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DykstraOptions::default().tol)]
        tol: f64,
        #[arg(long, default_value_t = DykstraOptions::default().max_iter)]
        max_iter: usize,
    },
    /// Time constrained inference against forward pass plus projection.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every op and of the constraint layer.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            kind: "input",
            message: message.into(),
        }
    }

    fn check(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind,
            message: message.into(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let kind = match &e {
            ExperimentError::Config(_) => "config",
            ExperimentError::Data(_) => "data",
            ExperimentError::Poly(_) => "constraints",
            ExperimentError::Net(_) => "model",
            ExperimentError::Tensor(_) => "tensor",
            ExperimentError::Projection(_) => "projection",
            ExperimentError::Io { .. } => "io",
        };
        Self {
            code: 1,
            kind,
            message: e.to_string(),
        }
    }
}

fn poly_failure(path: &Path, e: PolyError) -> Failure {
    Failure {
        code: 1,
        kind: if matches!(e, PolyError::Parse(_)) { "parse" } else { "constraints" },
        message: format!("{}: {e}", path.display()),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::input(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn print_json<T: serde::Serialize>(out: &mut dyn Write, v: &T) {
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn convert(o: &mut dyn Write, hrep: &Path, out: &Path, order: Order, samples: usize, seed: u64) -> Result<(), Failure> {
    let h = read_hrep(hrep).map_err(|e| poly_failure(hrep, e))?;
    let tol = ToleranceConfig {
        order: match order {
            Order::Input => InsertionOrder::Input,
            Order::Greedy => InsertionOrder::Greedy,
        },
        ..Default::default()
    };
    let start = Instant::now();
    let conv = dd_convert(&h, &tol).map_err(|e| poly_failure(hrep, e))?;
    let seconds = start.elapsed().as_secs_f64();
    let v = conv.vrep;
    write_vrep(out, &v).map_err(|e| poly_failure(out, e))?;
    say!(o, "m: {}", h.m());
    say!(o, "d: {}", h.d());
    say!(o, "n_pointed: {}", v.n_pointed());
    say!(o, "n_lin: {}", v.n_lin());
    say!(o, "n_r: {}", v.n_r());
    say!(o, "seconds: {seconds:.3}");
    let report = verify_vrep(&h, &v, samples, seed);
    say!(o, "verify: {}", if report.pass { "pass" } else { "FAIL" });
    say!(o, "soundness_max_violation: {:.3e}", report.soundness_max_violation);
    say!(o, "completeness_max_residual: {:.3e}", report.completeness_max_residual);
    if !report.pass {
        return Err(Failure::check("verification", report.failures.join("; ")));
    }
    Ok(())
}

fn train(o: &mut dyn Write, task: TaskArg, file: Option<&Path>, overrides: &[String], seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let value = config::merged(file, overrides, seed)?;
    match task {
        TaskArg::Projection => {
            let cfg: ProjectionConfig = config::parse(value)?;
            let run = run_projection_experiment(&cfg, Some(out))?;
            print_json(o, &run.summary);
        }
        TaskArg::Vae => {
            let cfg: VaeConfig = config::parse(value)?;
            let run = run_vae_experiment(&cfg, Some(out))?;
            print_json(o, &run.summary);
        }
    }
    Ok(())
}

fn sample(o: &mut dyn Write, ckpt: &Path, n: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let report = sample_vae(ckpt, n, seed)?;
    let (_, d) = report.images.dims2();
    write(&out.join("samples.txt"), format_matrix(d, report.images.data()))?;
    let bytes: Vec<u8> = report.images.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write(&out.join("samples.bin"), bytes)?;
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    write(&out.join("report.json"), text + "\n")?;
    let worst = report.max_violation.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    say!(o, "samples: {n}");
    say!(o, "max_violation: {worst:.3e} (tolerance {:.3e})", report.tolerance);
    say!(o, "feasible: {}", report.pass);
    if !report.pass {
        return Err(Failure::check("feasibility", "a decoded sample violates the constraints"));
    }
    Ok(())
}

fn project(o: &mut dyn Write, hrep: &Path, boxed: bool, input: &Path, out: &Path, opts: DykstraOptions) -> Result<(), Failure> {
    let h = read_hrep(hrep).map_err(|e| poly_failure(hrep, e))?;
    let text = fs::read_to_string(input).map_err(|e| Failure::input(format!("{}: {e}", input.display())))?;
    let (rows, cols, data) = parse_matrix(&text).map_err(|e| Failure {
        code: 1,
        kind: "parse",
        message: format!("{}: {e}", input.display()),
    })?;
    if cols != h.d() {
        return Err(Failure::input(format!("input has {cols} columns, constraints have d={}", h.d())));
    }
    let p = project_batch(&h, boxed, &data, opts).map_err(|e| Failure::input(e.to_string()))?;
    write(out, format_matrix(cols, &p.z))?;
    let cycles = p.iterations.iter().sum::<usize>() as f64 / rows.max(1) as f64;
    say!(o, "rows: {rows}");
    say!(o, "mean_cycles: {cycles:.1}");
    if !p.not_converged.is_empty() {
        return Err(Failure::check(
            "convergence",
            format!("{} rows hit max_iter: {:?}", p.not_converged.len(), p.not_converged),
        ));
    }
    Ok(())
}

fn bench(o: &mut dyn Write, file: Option<&Path>, overrides: &[String], seed: Option<u64>, out: Option<&Path>) -> Result<(), Failure> {
    let cfg: BenchConfig = config::parse(config::merged(file, overrides, seed)?)?;
    let report = run_bench(&cfg)?;
    print_json(o, &report);
    if let Some(p) = out {
        write(p, serde_json::to_string_pretty(&report).expect("serializable") + "\n")?;
    }
    Ok(())
}

fn gradcheck(o: &mut dyn Write, seed: u64, tol: f64) -> Result<(), Failure> {
    let results = gradcheck_suite(seed);
    let mut failed = Vec::new();
    for r in &results {
        let ok = r.error < tol;
        say!(o, "{:<4} {:<40} {:.3e}", if ok { "ok" } else { "FAIL" }, r.name, r.error);
        if !ok {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::check("gradcheck", format!("{} checks above {tol:e}: {}", failed.len(), failed.join(", "))))
    }
}

fn run(o: &mut dyn Write, cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::input(format!("--threads: {e}")))?;
    }
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Convert {
            hrep,
            out,
            order,
            verify_samples,
        } => convert(o, &hrep, &out, order, verify_samples, seed.unwrap_or(0)),
        Cmd::GenConstraints { kind, side, tiles, out } => {
            let h = match kind {
                Kind::Checkerboard => checkerboard_hrep(side, tiles).map_err(|e| Failure::input(e.to_string()))?,
            };
            write_hrep(&out, &h).map_err(|e| poly_failure(&out, e))?;
            say!(o, "m: {}", h.m());
            say!(o, "d: {}", h.d());
            Ok(())
        }
        Cmd::Train {
            task,
            config,
            overrides,
            out,
        } => train(o, task, config.as_deref(), &overrides, seed, &out),
        Cmd::Sample { ckpt, n, out } => sample(o, &ckpt, n, seed.unwrap_or(0), &out),
        Cmd::Project {
            hrep,
            boxed,
            input,
            out,
            tol,
            max_iter,
        } => project(o, &hrep, boxed, &input, &out, DykstraOptions { tol, max_iter }),
        Cmd::Bench {
            config,
            overrides,
            out,
        } => bench(o, config.as_deref(), &overrides, seed, out.as_deref()),
        Cmd::Gradcheck { tol } => gradcheck(o, seed.unwrap_or(0), tol),
    }
}

/// Runs the program on `args` (including the program name) and returns the
/// process exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return 1;
            }
            let _ = write!(out, "{text}");
            return 0;
        }
    };
    match run(out, cli) {
        Ok(()) => 0,
        Err(f) => {
            say!(err, "error[{}]: {}", f.kind, f.message);
            f.code
        }
    }
}
