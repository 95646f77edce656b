use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::models::{load_model, LoadedModel};
use super::{ConstraintConfig, Constraints, DykstraConfig, ExperimentError, Task, Variant};
use crate::datakit::{synthetic_dataset, Domain};
use crate::projector::{dykstra_project, ProjectionError, ProjectionProblem};
use crate::tensorkit::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub task: Task,
    /// Checkpoint directories; freshly initialized models when unset.
    pub constrained: Option<PathBuf>,
    pub unconstrained: Option<PathBuf>,
    pub constraint: ConstraintConfig,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub box_active: bool,
    pub n_runs: usize,
    pub warmup: usize,
    pub batch: usize,
    pub projection: DykstraConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            task: Task::Projection,
            constrained: None,
            unconstrained: None,
            constraint: ConstraintConfig::default(),
            hidden_dim: 256,
            latent_dim: 2,
            box_active: true,
            n_runs: 100,
            warmup: 3,
            batch: 256,
            projection: DykstraConfig::default(),
            seed: 0,
        }
    }
}

/// Wall-clock seconds per run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean: f64,
    pub std: f64,
}

impl Timing {
    fn of(samples: &[f64]) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub batch: usize,
    pub n_runs: usize,
    pub warmup: usize,
    /// Constrained forward pass.
    pub constrained: Timing,
    /// Unconstrained forward pass plus Dykstra projection of every row.
    pub projection: Timing,
    /// `projection.mean / constrained.mean`.
    pub ratio: f64,
    pub mean_dykstra_cycles: f64,
    pub not_converged: usize,
}

/// Times both inference paths on the same inputs, single-threaded, after
/// `warmup` untimed runs. Each run processes one batch.
pub fn bench_inference(
    constrained: &mut LoadedModel,
    unconstrained: &mut LoadedModel,
    inputs: &[Tensor],
    n_runs: usize,
    warmup: usize,
    dykstra: &DykstraConfig,
) -> Result<BenchReport, ExperimentError> {
    if constrained.input_dim() != unconstrained.input_dim()
        || constrained.constraints.h.d() != unconstrained.constraints.h.d()
    {
        return Err(ExperimentError::Config("models do not share dimensions".into()));
    }
    if inputs.is_empty() {
        return Err(ExperimentError::Config("no benchmark inputs".into()));
    }
    let h = unconstrained.constraints.h.clone();
    let boxed = unconstrained.box_active;
    let opts = dykstra.options();
    let (mut cycles, mut projected, mut not_converged) = (0usize, 0usize, 0usize);
    let mut t_con = Vec::with_capacity(n_runs);
    let mut t_proj = Vec::with_capacity(n_runs);
    for run in 0..warmup + n_runs {
        let x = &inputs[run % inputs.len()];

        let t0 = Instant::now();
        let z = constrained.infer(x)?;
        let dt_con = t0.elapsed().as_secs_f64();
        std::hint::black_box(&z);

        let t0 = Instant::now();
        let y = unconstrained.infer(x)?;
        let (n, _) = y.dims2();
        let mut out = Vec::with_capacity(y.numel());
        let mut run_cycles = 0;
        let mut run_nc = 0;
        for i in 0..n {
            let prob = ProjectionProblem {
                h: &h,
                boxed,
                y: y.row(i),
                options: opts,
            };
            let p = match dykstra_project(&prob) {
                Ok(p) => p,
                Err(ProjectionError::NotConverged(p)) => {
                    run_nc += 1;
                    p
                }
                Err(e) => return Err(e.into()),
            };
            run_cycles += p.iterations;
            out.extend_from_slice(&p.z);
        }
        let dt_proj = t0.elapsed().as_secs_f64();
        std::hint::black_box(&out);

        if run >= warmup {
            t_con.push(dt_con);
            t_proj.push(dt_proj);
            cycles += run_cycles;
            projected += n;
            not_converged += run_nc;
        }
    }
    let constrained_t = Timing::of(&t_con);
    let projection_t = Timing::of(&t_proj);
    Ok(BenchReport {
        batch: inputs[0].dims2().0,
        n_runs,
        warmup,
        constrained: constrained_t,
        projection: projection_t,
        ratio: projection_t.mean / constrained_t.mean,
        mean_dykstra_cycles: cycles as f64 / projected.max(1) as f64,
        not_converged,
    })
}

/// Loads (or initializes) both models and times them on synthetic images
/// or prior latents.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, ExperimentError> {
    if cfg.batch == 0 || cfg.n_runs == 0 {
        return Err(ExperimentError::Config("batch and n_runs must be positive".into()));
    }
    let load = |path: &Option<PathBuf>, variant: Variant| -> Result<LoadedModel, ExperimentError> {
        match path {
            Some(p) => {
                let m = load_model(p)?;
                if m.variant != variant {
                    return Err(ExperimentError::Config(format!(
                        "{} holds a {:?} model, expected {variant:?}",
                        p.display(),
                        m.variant
                    )));
                }
                Ok(m)
            }
            None => LoadedModel::fresh(
                cfg.task,
                variant,
                Constraints::build(&cfg.constraint)?,
                cfg.hidden_dim,
                cfg.latent_dim,
                Domain::Symmetric,
                cfg.box_active,
                cfg.seed,
            ),
        }
    };
    let mut con = load(&cfg.constrained, Variant::Constrained)?;
    let mut unc = load(&cfg.unconstrained, Variant::Unconstrained)?;
    let k = con.input_dim();
    let pool = 8.min(cfg.n_runs + cfg.warmup);
    let inputs: Vec<Tensor> = match cfg.task {
        Task::Projection => {
            let side = (k as f64).sqrt().round() as usize;
            if side * side != k {
                return Err(ExperimentError::Config(format!("input size {k} is not a square image")));
            }
            let ds = synthetic_dataset(side, pool * cfg.batch, cfg.seed, Domain::Symmetric);
            (0..pool)
                .map(|r| ds.images.select_rows(&(r * cfg.batch..(r + 1) * cfg.batch).collect::<Vec<_>>()))
                .collect()
        }
        Task::Vae => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..pool)
                .map(|_| {
                    let data = (0..cfg.batch * k).map(|_| rng.sample(StandardNormal)).collect();
                    Tensor::matrix(cfg.batch, k, data).expect("sized")
                })
                .collect()
        }
    };
    bench_inference(&mut con, &mut unc, &inputs, cfg.n_runs, cfg.warmup, &cfg.projection)
}
