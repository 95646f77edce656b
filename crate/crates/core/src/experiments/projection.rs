use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::models::{save_model, ModelMeta, ProjectionNet};
use super::{
    elapsed, load_dataset, mse, ConstraintConfig, Constraints, DataConfig, DykstraConfig, EpochRecord, ExperimentError,
    MetricsLog, OutDir, SchedulerConfig, Task, Variant,
};
use crate::datakit::{batches, Split};
use crate::netkit::{adam_step, AdamState, ParamStore, PlateauScheduler};
use crate::projector::project_batch;
use crate::tensorkit::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    pub data: DataConfig,
    pub constraint: ConstraintConfig,
    pub variant: Variant,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Box scaling is on from epoch `box_activation_epoch + 1`; `null` disables it.
    pub box_activation_epoch: Option<usize>,
    pub scheduler: SchedulerConfig,
    pub projection: DykstraConfig,
    pub seed: u64,
    /// Record wall-clock seconds in the metrics; `false` writes 0 so logs are
    /// byte-identical across runs.
    pub wall_clock: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            constraint: ConstraintConfig::default(),
            variant: Variant::Constrained,
            lr: 1e-4,
            batch_size: 64,
            epochs: 60,
            box_activation_epoch: Some(30),
            scheduler: SchedulerConfig::default(),
            projection: DykstraConfig::default(),
            seed: 0,
            wall_clock: true,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if matches!(self.box_activation_epoch, Some(e) if e >= self.epochs) {
            return bad("box_activation_epoch must be smaller than epochs");
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return bad("lr must be positive");
        }
        if self.data.n_val == 0 {
            return bad("data.n_val must be positive");
        }
        Ok(())
    }

    fn boxed(&self) -> bool {
        self.box_activation_epoch.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub variant: Variant,
    /// Mean over validation images of the per-pixel squared error of the
    /// exact projection onto the feasible set.
    pub optimum: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    /// `best_val_loss / optimum`.
    pub gap: f64,
    pub final_val_loss: f64,
    /// Largest `A z` over validation outputs of all logged epochs.
    pub max_violation: f64,
    /// Largest `|z|_inf` over validation outputs once the box is active.
    pub box_max_abs: Option<f64>,
    pub eps_layer: Option<f64>,
    pub not_converged: usize,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct ProjectionRun {
    pub log: MetricsLog,
    pub summary: ProjectionSummary,
    pub store: ParamStore,
    pub net: ProjectionNet,
}

/// Average per-pixel squared distance between the validation images and
/// their projections onto the cone (intersected with the box when `boxed`).
/// Returns the loss and the number of projections that hit `max_iter`.
pub fn optimum_loss(
    c: &Constraints,
    ys: &Tensor,
    boxed: bool,
    dykstra: &DykstraConfig,
) -> Result<(f64, usize), ExperimentError> {
    let p = project_batch(&c.h, boxed, ys.data(), dykstra.options())?;
    Ok((mse(&p.z, ys.data()), p.not_converged.len()))
}

struct Eval {
    loss: f64,
    violation: f64,
    max_abs: f64,
    not_converged: usize,
}

fn evaluate(
    net: &ProjectionNet,
    store: &mut ParamStore,
    c: &Constraints,
    ys: &Tensor,
    boxed: bool,
    dykstra: &DykstraConfig,
) -> Result<Eval, ExperimentError> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let x = tape.constant(ys.clone());
    let out = net.forward(&mut tape, &bound, store, x, false)?;
    let mut z = tape.value(out).clone();
    let mut not_converged = 0;
    if matches!(net, ProjectionNet::Unconstrained(_)) {
        let p = project_batch(&c.h, boxed, z.data(), dykstra.options())?;
        not_converged = p.not_converged.len();
        z = Tensor::new(z.shape().to_vec(), p.z)?;
    }
    Ok(Eval {
        loss: mse(z.data(), ys.data()),
        violation: c.max_violation(&z),
        max_abs: z.data().iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        not_converged,
    })
}

/// Trains one model to map each image `y` to its projection onto the
/// feasible set, by minimizing the mean squared error to `y`. The
/// constrained variant is a single constraint layer; the unconstrained
/// variant a single fully connected layer whose outputs are projected with
/// Dykstra's method before evaluation.
pub fn run_projection_experiment(cfg: &ProjectionConfig, out: Option<&Path>) -> Result<ProjectionRun, ExperimentError> {
    cfg.validate()?;
    let start = Instant::now();
    let out = OutDir(out);
    out.prepare()?;
    out.write_json("config.json", cfg)?;

    let c = Constraints::build(&cfg.constraint)?;
    let ds = load_dataset(&cfg.data, cfg.constraint.side, cfg.seed)?;
    let train = ds.split(Split::Train);
    let val = ds.split(Split::Val);
    let (optimum, mut not_converged) = optimum_loss(&c, &val, cfg.boxed(), &cfg.projection)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let box_now = |epoch: usize| matches!(cfg.box_activation_epoch, Some(e) if epoch > e);
    let mut net = ProjectionNet::build(&mut store, cfg.variant, &c, box_now(0), &mut rng)?;
    let constrained = matches!(net, ProjectionNet::Constrained(_));
    let eps_layer = match &net {
        ProjectionNet::Constrained(l) => Some(l.eps_layer()),
        ProjectionNet::Unconstrained(_) => None,
    };
    let mut adam = AdamState::new(&store);
    let mut sched = PlateauScheduler::new(cfg.scheduler.factor, cfg.scheduler.patience);
    let mut lr = cfg.lr;
    let mut log = MetricsLog::new(out.file("metrics.jsonl").as_deref())?;

    let mut summary = ProjectionSummary {
        variant: cfg.variant,
        optimum,
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
        gap: f64::INFINITY,
        final_val_loss: f64::NAN,
        max_violation: f64::NEG_INFINITY,
        box_max_abs: None,
        eps_layer,
        not_converged: 0,
        seconds: 0.0,
    };

    for epoch in 0..=cfg.epochs {
        let t0 = Instant::now();
        let boxed = box_now(epoch);
        net.set_box(boxed);
        let train_loss = if epoch == 0 {
            evaluate(&net, &mut store, &c, &train, cfg.boxed(), &cfg.projection)?.loss
        } else {
            let (mut sum, mut count) = (0.0, 0usize);
            for y in batches(&train, cfg.batch_size, cfg.seed, epoch as u64) {
                let n = y.dims2().0;
                // batch norm needs two rows
                if constrained && n < 2 {
                    continue;
                }
                let mut tape = Tape::new();
                let bound = store.bind(&mut tape);
                let yv = tape.constant(y);
                let z = net.forward(&mut tape, &bound, &mut store, yv, true)?;
                let diff = tape.sub(z, yv)?;
                let sq = tape.square(diff);
                let loss = tape.mean(sq);
                tape.backward(loss)?;
                let grads = store.grads(&tape, &bound);
                adam_step(&mut adam, &mut store, &grads, lr);
                sum += tape.value(loss).item() * n as f64;
                count += n;
            }
            sum / count.max(1) as f64
        };
        let ev = evaluate(&net, &mut store, &c, &val, cfg.boxed(), &cfg.projection)?;
        not_converged += ev.not_converged;
        summary.max_violation = summary.max_violation.max(ev.violation);
        let eligible = epoch > 0 && (!constrained || !cfg.boxed() || boxed);
        if boxed || (!constrained && cfg.boxed()) {
            summary.box_max_abs = Some(summary.box_max_abs.unwrap_or(0.0).max(ev.max_abs));
        }
        if eligible && ev.loss < summary.best_val_loss {
            summary.best_val_loss = ev.loss;
            summary.best_epoch = epoch;
        }
        summary.final_val_loss = ev.loss;
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: ev.loss,
            lr,
            max_violation: ev.violation,
            seconds: elapsed(t0, cfg.wall_clock),
        })?;
        if epoch > 0 {
            lr = sched.step(ev.loss, lr);
        }
    }

    summary.gap = summary.best_val_loss / optimum;
    summary.not_converged = not_converged;
    summary.seconds = elapsed(start, cfg.wall_clock);
    out.write_json("summary.json", &summary)?;
    if let Some(dir) = out.file("checkpoint") {
        let d = c.h.d();
        let meta = ModelMeta::new(Task::Projection, cfg.variant, d, 0, 0, cfg.data.domain, box_now(cfg.epochs));
        let extra = serde_json::json!({
            "optimizer": {"kind": "adam", "step": adam.step, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps, "lr": lr},
            "scheduler": sched,
            "config": cfg,
        });
        save_model(&dir, &store, &meta, &c, extra)?;
    }
    Ok(ProjectionRun {
        log,
        summary,
        store,
        net,
    })
}
