use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::models::{load_model, save_model, ModelMeta, VaeNet};
use super::{
    elapsed, load_dataset, ConstraintConfig, Constraints, DataConfig, DykstraConfig, EpochRecord, ExperimentError,
    MetricsLog, Net, OutDir, SchedulerConfig, Task, Variant,
};
use crate::datakit::{batches, Split};
use crate::netkit::{adam_step, AdamState, Bound, ParamStore, PlateauScheduler};
use crate::projector::project_batch;
use crate::tensorkit::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub data: DataConfig,
    pub constraint: ConstraintConfig,
    /// Decoder output: constraint layer or plain (projected at test time).
    pub variant: Variant,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub box_activation_epoch: Option<usize>,
    pub scheduler: SchedulerConfig,
    pub projection: DykstraConfig,
    /// Prior samples decoded after training for the feasibility sweep.
    pub n_prior_samples: usize,
    pub seed: u64,
    pub wall_clock: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            constraint: ConstraintConfig::default(),
            variant: Variant::Constrained,
            latent_dim: 2,
            hidden_dim: 256,
            lr: 1e-4,
            batch_size: 64,
            epochs: 60,
            box_activation_epoch: Some(30),
            scheduler: SchedulerConfig::default(),
            projection: DykstraConfig::default(),
            n_prior_samples: 1000,
            seed: 0,
            wall_clock: true,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1");
        }
        if self.hidden_dim == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("hidden_dim, batch_size and epochs must be positive");
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
}

/// `KL(N(mu, diag(exp(logvar))) || N(0, I))` summed over coordinates.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeSummary {
    pub variant: Variant,
    /// Training ELBO (per image, up to the Gaussian normalizing constant) of epoch 1.
    pub elbo_first: f64,
    pub elbo_final: f64,
    /// `(elbo_final - elbo_first) / |elbo_first|`.
    pub elbo_improvement: f64,
    pub prior_samples: usize,
    pub prior_max_violation: f64,
    pub prior_max_abs: f64,
    pub eps_layer: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct VaeRun {
    pub log: MetricsLog,
    pub summary: VaeSummary,
    pub store: ParamStore,
    pub net: VaeNet,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Tensor {
    Tensor::matrix(n, k, (0..n * k).map(|_| rng.sample(StandardNormal)).collect()).expect("sized")
}

/// Negative ELBO per image: `0.5 |x - f(z)|^2 + KL`, averaged over the batch.
#[allow(clippy::too_many_arguments)]
fn neg_elbo(
    net: &VaeNet,
    tape: &mut Tape,
    bound: &Bound,
    store: &mut ParamStore,
    x: Var,
    eps: Tensor,
    training: bool,
) -> Result<(Var, Var), ExperimentError> {
    let n = tape.value(x).dims2().0.max(1) as f64;
    let (mu, logvar) = net.encode(tape, bound, x)?;
    let half = tape.scale(logvar, 0.5);
    let sigma = tape.exp(half);
    let ev = tape.constant(eps);
    let noise = tape.mul(sigma, ev)?;
    let z = tape.add(mu, noise)?;
    let xr = net.decode(tape, bound, store, z, training)?;
    let diff = tape.sub(xr, x)?;
    let sq = tape.square(diff);
    let rec = tape.sum(sq);
    let rec = tape.scale(rec, 0.5 / n);
    // 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar) / n
    let mu2 = tape.square(mu);
    let var = tape.exp(logvar);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, logvar)?;
    let b = tape.add_scalar(b, -1.0);
    let kl = tape.sum(b);
    let kl = tape.scale(kl, 0.5 / n);
    Ok((tape.add(rec, kl)?, xr))
}

fn decode_eval(net: &VaeNet, store: &mut ParamStore, z: &Tensor) -> Result<Tensor, ExperimentError> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let zv = tape.constant(z.clone());
    let out = net.decode(&mut tape, &bound, store, zv, false)?;
    Ok(tape.value(out).clone())
}

/// Trains a VAE whose decoder ends in a constraint layer (or a plain
/// output for the baseline) by maximizing the ELBO with one reparameterized
/// sample per image. `train_loss`/`val_loss` in the metrics are negative ELBOs.
pub fn run_vae_experiment(cfg: &VaeConfig, out: Option<&Path>) -> Result<VaeRun, ExperimentError> {
    cfg.validate()?;
    let start = Instant::now();
    let out = OutDir(out);
    out.prepare()?;
    out.write_json("config.json", cfg)?;

    let c = Constraints::build(&cfg.constraint)?;
    let ds = load_dataset(&cfg.data, cfg.constraint.side, cfg.seed)?;
    let train = ds.split(Split::Train);
    let val = ds.split(Split::Val);
    let (n_val, k) = (val.dims2().0, cfg.latent_dim);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let box_now = |epoch: usize| matches!(cfg.box_activation_epoch, Some(e) if epoch > e);
    let mut net = VaeNet::build(
        &mut store,
        cfg.variant,
        &c,
        cfg.hidden_dim,
        k,
        cfg.data.domain,
        box_now(0),
        &mut rng,
    )?;
    let eps_layer = net.head.as_ref().map(|h| h.eps_layer());
    let mut adam = AdamState::new(&store);
    let mut sched = PlateauScheduler::new(cfg.scheduler.factor, cfg.scheduler.patience);
    let mut lr = cfg.lr;
    let mut log = MetricsLog::new(out.file("metrics.jsonl").as_deref())?;
    let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut elbo_first = f64::NAN;
    let mut elbo_final = f64::NAN;

    let eval = |net: &VaeNet, store: &mut ParamStore, data: &Tensor| -> Result<(f64, f64), ExperimentError> {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(u64::MAX);
        let eps = gaussian(&mut r, data.dims2().0, k);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = tape.constant(data.clone());
        let (loss, xr) = neg_elbo(net, &mut tape, &bound, store, x, eps, false)?;
        Ok((tape.value(loss).item(), c.max_violation(tape.value(xr))))
    };

    for epoch in 0..=cfg.epochs {
        let t0 = Instant::now();
        net.set_box(box_now(epoch));
        let train_loss = if epoch == 0 {
            eval(&net, &mut store, &train)?.0
        } else {
            noise.set_stream(epoch as u64);
            let (mut sum, mut count) = (0.0, 0usize);
            for x in batches(&train, cfg.batch_size, cfg.seed, epoch as u64) {
                let n = x.dims2().0;
                if n < 2 && net.head.is_some() {
                    continue;
                }
                let eps = gaussian(&mut noise, n, k);
                let mut tape = Tape::new();
                let bound = store.bind(&mut tape);
                let xv = tape.constant(x);
                let (loss, _) = neg_elbo(&net, &mut tape, &bound, &mut store, xv, eps, true)?;
                tape.backward(loss)?;
                let grads = store.grads(&tape, &bound);
                adam_step(&mut adam, &mut store, &grads, lr);
                sum += tape.value(loss).item() * n as f64;
                count += n;
            }
            sum / count.max(1) as f64
        };
        if epoch == 1 {
            elbo_first = -train_loss;
        }
        elbo_final = -train_loss;
        let (val_loss, violation) = if n_val > 0 { eval(&net, &mut store, &val)? } else { (f64::NAN, f64::NAN) };
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            max_violation: violation,
            seconds: elapsed(t0, cfg.wall_clock),
        })?;
        if epoch > 0 {
            lr = sched.step(val_loss, lr);
        }
    }

    // feasibility sweep over prior samples
    let mut prior_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    prior_rng.set_stream(u64::MAX - 1);
    let z = gaussian(&mut prior_rng, cfg.n_prior_samples, k);
    let mut imgs = decode_eval(&net, &mut store, &z)?;
    if net.head.is_none() {
        let p = project_batch(&c.h, cfg.box_activation_epoch.is_some(), imgs.data(), cfg.projection.options())?;
        imgs = Tensor::new(imgs.shape().to_vec(), p.z)?;
    }
    let summary = VaeSummary {
        variant: cfg.variant,
        elbo_first,
        elbo_final,
        elbo_improvement: (elbo_final - elbo_first) / elbo_first.abs(),
        prior_samples: cfg.n_prior_samples,
        prior_max_violation: c.max_violation(&imgs),
        prior_max_abs: imgs.data().iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        eps_layer,
        seconds: elapsed(start, cfg.wall_clock),
    };
    out.write_json("summary.json", &summary)?;
    if let Some(dir) = out.file("checkpoint") {
        let meta = ModelMeta::new(
            Task::Vae,
            cfg.variant,
            c.h.d(),
            cfg.hidden_dim,
            k,
            cfg.data.domain,
            cfg.box_activation_epoch.is_some(),
        );
        let extra = serde_json::json!({
            "optimizer": {"kind": "adam", "step": adam.step, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps, "lr": lr},
            "scheduler": sched,
            "config": cfg,
        });
        save_model(&dir, &store, &meta, &c, extra)?;
    }
    Ok(VaeRun {
        log,
        summary,
        store,
        net,
    })
}

/// Decoded prior samples with per-sample feasibility.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleReport {
    #[serde(skip)]
    pub images: Tensor,
    /// `max_k (A z)_k` per sample.
    pub max_violation: Vec<f64>,
    /// `|z|_inf` per sample.
    pub max_abs: Vec<f64>,
    pub tolerance: f64,
    pub box_active: bool,
    pub projected: bool,
    pub pass: bool,
}

/// Decodes `n` draws from `N(0, I)`. Baseline (unconstrained) decoders are
/// followed by the test-time projection.
pub fn sample_vae(checkpoint: &Path, n: usize, seed: u64) -> Result<SampleReport, ExperimentError> {
    let mut model = load_model(checkpoint)?;
    let Net::Vae(net) = model.net else {
        return Err(ExperimentError::Config("checkpoint is not a VAE".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = gaussian(&mut rng, n, net.latent_dim);
    let mut images = decode_eval(&net, &mut model.store, &z)?;
    let projected = net.head.is_none();
    if projected {
        let opts = DykstraConfig::default().options();
        let p = project_batch(&model.constraints.h, model.box_active, images.data(), opts)?;
        images = Tensor::new(images.shape().to_vec(), p.z)?;
    }
    let tolerance = net.head.as_ref().map(|h| h.eps_layer()).unwrap_or(1e-8);
    let mut report = SampleReport {
        max_violation: Vec::with_capacity(n),
        max_abs: Vec::with_capacity(n),
        tolerance,
        box_active: model.box_active,
        projected,
        pass: true,
        images: Tensor::zeros(&[0]),
    };
    for i in 0..n {
        let row = images.row(i);
        let v = model
            .constraints
            .h
            .rows()
            .map(|r| crate::linalg::dot(r, row))
            .fold(f64::NEG_INFINITY, f64::max);
        let a = row.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        report.pass &= v <= tolerance && (!model.box_active || a <= 1.0 + 1e-12);
        report.max_violation.push(v);
        report.max_abs.push(a);
    }
    report.images = images;
    Ok(report)
}
