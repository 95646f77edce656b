//! Experiment drivers: learning the projection onto a cone, a VAE with a
//! constrained decoder, sampling, and the inference timing comparison.
//!
//! Every driver is deterministic given its config. When an output directory
//! is given it receives `config.json` (the effective config), `metrics.jsonl`
//! (one record per epoch, epoch 0 is the untrained model), `summary.json`
//! and a `checkpoint/` directory.

mod bench;
mod models;
mod projection;
mod vae;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use bench::{bench_inference, run_bench, BenchConfig, BenchReport, Timing};
pub use models::{load_model, LoadedModel, Net, ProjectionNet, VaeNet};
pub use projection::{optimum_loss, run_projection_experiment, ProjectionConfig, ProjectionRun, ProjectionSummary};
pub use vae::{kl_divergence, run_vae_experiment, sample_vae, SampleReport, VaeConfig, VaeRun, VaeSummary};

use crate::datakit::{load_mnist, synthetic_dataset, DataError, Dataset, Domain};
use crate::netkit::NetError;
use crate::polyhedra::{checkerboard_hrep, dd_convert, read_hrep, HRep, InsertionOrder, PolyError, ToleranceConfig, VRep};
use crate::projector::{DykstraOptions, ProjectionError};
use crate::tensorkit::{Tensor, TensorError};

/// Environment fallback for `data.dir`.
pub const DATA_DIR_ENV: &str = "CONECRAFT_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Output through a constraint layer.
    #[default]
    Constrained,
    /// Plain output, projected onto the feasible set for evaluation.
    Unconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Projection,
    Vae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory with the MNIST IDX files; `CONECRAFT_DATA_DIR` when unset.
    pub dir: Option<PathBuf>,
    pub domain: Domain,
    /// Use generated images instead of MNIST.
    pub synthetic: bool,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            domain: Domain::Symmetric,
            synthetic: true,
            n_train: 5000,
            n_val: 500,
            n_test: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintConfig {
    /// Image side length.
    pub side: usize,
    /// Checkerboard tiles per side.
    pub tiles: usize,
    /// H-representation file to use instead of the generated checkerboard.
    pub hrep: Option<PathBuf>,
    pub order: InsertionOrder,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            side: 16,
            tiles: 2,
            hrep: None,
            order: InsertionOrder::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            factor: 0.1,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DykstraConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DykstraConfig {
    fn default() -> Self {
        let o = DykstraOptions::default();
        Self {
            tol: o.tol,
            max_iter: o.max_iter,
        }
    }
}

impl DykstraConfig {
    pub fn options(&self) -> DykstraOptions {
        DykstraOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub max_violation: f64,
    pub seconds: f64,
}

/// Append-only per-epoch log, mirrored to `metrics.jsonl` when a path is set.
#[derive(Debug, Default)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
    file: Option<fs::File>,
}

impl MetricsLog {
    pub fn new(path: Option<&Path>) -> Result<Self, ExperimentError> {
        let file = match path {
            Some(p) => Some(fs::File::create(p).map_err(io_err(p))?),
            None => None,
        };
        Ok(Self {
            records: Vec::new(),
            file,
        })
    }

    pub fn push(&mut self, rec: EpochRecord) -> Result<(), ExperimentError> {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(&rec).expect("plain record");
            writeln!(f, "{line}").map_err(|source| ExperimentError::Io {
                path: "metrics.jsonl".into(),
                source,
            })?;
        }
        self.records.push(rec);
        Ok(())
    }
}

/// Constraint set and its converted generators.
#[derive(Debug, Clone)]
pub struct Constraints {
    pub h: HRep,
    pub v: VRep,
}

impl Constraints {
    pub fn build(cfg: &ConstraintConfig) -> Result<Self, ExperimentError> {
        let h = match &cfg.hrep {
            Some(p) => read_hrep(p)?,
            None => checkerboard_hrep(cfg.side, cfg.tiles)?,
        };
        if h.d() != cfg.side * cfg.side {
            return Err(ExperimentError::Config(format!(
                "constraint dimension {} does not match side {}",
                h.d(),
                cfg.side
            )));
        }
        let tol = ToleranceConfig {
            order: cfg.order,
            ..Default::default()
        };
        let v = dd_convert(&h, &tol)?.vrep;
        Ok(Self { h, v })
    }

    /// `max_i max_k (A z_i)_k` over the rows of `z`; `-inf` for an empty batch.
    pub fn max_violation(&self, z: &Tensor) -> f64 {
        let (n, _) = z.dims2();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..n {
            for r in self.h.rows() {
                worst = worst.max(crate::linalg::dot(r, z.row(i)));
            }
        }
        worst
    }
}

pub(crate) fn load_dataset(cfg: &DataConfig, side: usize, seed: u64) -> Result<Dataset, ExperimentError> {
    let ds = if cfg.synthetic {
        let n = cfg.n_train + cfg.n_val + cfg.n_test;
        synthetic_dataset(side, n, seed, cfg.domain).with_splits(cfg.n_train, cfg.n_val, cfg.n_test)?
    } else {
        let dir = cfg
            .dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| {
                ExperimentError::Config(format!("data.dir is unset and {DATA_DIR_ENV} is not defined"))
            })?;
        load_mnist(&dir, cfg.domain, cfg.n_val)?
    };
    if ds.rows != side || ds.cols != side {
        return Err(ExperimentError::Config(format!(
            "images are {}x{}, constraint side is {side}",
            ds.rows, ds.cols
        )));
    }
    Ok(ds)
}

/// Output directory layout shared by the drivers.
pub(crate) struct OutDir<'a>(pub Option<&'a Path>);

impl OutDir<'_> {
    pub fn prepare(&self) -> Result<(), ExperimentError> {
        if let Some(d) = self.0 {
            fs::create_dir_all(d).map_err(io_err(d))?;
        }
        Ok(())
    }

    pub fn file(&self, name: &str) -> Option<PathBuf> {
        self.0.map(|d| d.join(name))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), ExperimentError> {
        if let Some(p) = self.file(name) {
            let text = serde_json::to_string_pretty(value).expect("serializable");
            fs::write(&p, text + "\n").map_err(io_err(&p))?;
        }
        Ok(())
    }
}

/// Mean of `(a - b)^2` over all entries.
pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub(crate) fn elapsed(start: std::time::Instant, wall_clock: bool) -> f64 {
    if wall_clock {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}
