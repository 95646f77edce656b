use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Constraints, ExperimentError, Task, Variant};
use crate::datakit::Domain;
use crate::netkit::{load_checkpoint, save_checkpoint, Bound, ConstraintLayer, Linear, NetError, ParamStore};
use crate::polyhedra::{read_hrep, read_vrep, write_hrep, write_vrep};
use crate::tensorkit::{Tape, Tensor, Var};

const HREP_FILE: &str = "constraints.hrep";
const VREP_FILE: &str = "constraints.vrep";
const EPS_FEAS: f64 = 1e-9;

/// Single fully connected layer mapping an image to an image.
#[derive(Debug, Clone, Copy)]
pub enum ProjectionNet {
    Constrained(ConstraintLayer),
    Unconstrained(Linear),
}

impl ProjectionNet {
    pub fn build(
        store: &mut ParamStore,
        variant: Variant,
        c: &Constraints,
        box_active: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ExperimentError> {
        let d = c.h.d();
        Ok(match variant {
            Variant::Constrained => Self::Constrained(ConstraintLayer::new(
                store, "out", d, &c.h, &c.v, EPS_FEAS, box_active, rng,
            )?),
            Variant::Unconstrained => Self::Unconstrained(Linear::new(store, "out", d, d, rng)),
        })
    }

    pub fn set_box(&mut self, on: bool) {
        if let Self::Constrained(l) = self {
            l.box_active = on;
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        store: &mut ParamStore,
        x: Var,
        training: bool,
    ) -> Result<Var, NetError> {
        match self {
            Self::Constrained(l) => l.forward(tape, bound, store, x, training),
            Self::Unconstrained(l) => l.forward(tape, bound, x),
        }
    }
}

/// Encoder `FC(d, h) - ReLU - {FC(h, k), FC(h, k)}` for the posterior mean
/// and log-variance; decoder `FC(k, h) - ReLU - FC(h, d) - sigmoid` followed
/// by a constraint layer, or by an affine map onto the pixel domain.
#[derive(Debug, Clone, Copy)]
pub struct VaeNet {
    pub enc: Linear,
    pub enc_mu: Linear,
    pub enc_logvar: Linear,
    pub dec_hidden: Linear,
    pub dec_out: Linear,
    pub head: Option<ConstraintLayer>,
    pub domain: Domain,
    pub latent_dim: usize,
}

impl VaeNet {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        store: &mut ParamStore,
        variant: Variant,
        c: &Constraints,
        hidden: usize,
        latent: usize,
        domain: Domain,
        box_active: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ExperimentError> {
        if latent == 0 {
            return Err(ExperimentError::Config("latent_dim must be at least 1".into()));
        }
        let d = c.h.d();
        let enc = Linear::new(store, "enc.fc", d, hidden, rng);
        let enc_mu = Linear::new(store, "enc.mu", hidden, latent, rng);
        let enc_logvar = Linear::new(store, "enc.logvar", hidden, latent, rng);
        let dec_hidden = Linear::new(store, "dec.fc1", latent, hidden, rng);
        let dec_out = Linear::new(store, "dec.fc2", hidden, d, rng);
        let head = match variant {
            Variant::Constrained => Some(ConstraintLayer::new(
                store, "dec.out", d, &c.h, &c.v, EPS_FEAS, box_active, rng,
            )?),
            Variant::Unconstrained => None,
        };
        Ok(Self {
            enc,
            enc_mu,
            enc_logvar,
            dec_hidden,
            dec_out,
            head,
            domain,
            latent_dim: latent,
        })
    }

    pub fn set_box(&mut self, on: bool) {
        if let Some(h) = &mut self.head {
            h.box_active = on;
        }
    }

    pub fn encode(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<(Var, Var), NetError> {
        let h = self.enc.forward(tape, bound, x)?;
        let h = tape.relu(h);
        Ok((self.enc_mu.forward(tape, bound, h)?, self.enc_logvar.forward(tape, bound, h)?))
    }

    pub fn decode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        store: &mut ParamStore,
        z: Var,
        training: bool,
    ) -> Result<Var, NetError> {
        let h = self.dec_hidden.forward(tape, bound, z)?;
        let h = tape.relu(h);
        let o = self.dec_out.forward(tape, bound, h)?;
        let s = tape.sigmoid(o);
        match (&self.head, self.domain) {
            (Some(c), _) => c.forward(tape, bound, store, s, training),
            (None, Domain::Unit) => Ok(s),
            (None, Domain::Symmetric) => {
                let t = tape.scale(s, 2.0);
                Ok(tape.add_scalar(t, -1.0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Net {
    Projection(ProjectionNet),
    Vae(VaeNet),
}

/// Topology stored in a checkpoint manifest under `"model"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ModelMeta {
    pub task: Task,
    pub variant: Variant,
    pub d: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub domain: Domain,
    pub box_active: bool,
    pub hrep: String,
    pub vrep: String,
}

impl ModelMeta {
    pub fn new(task: Task, variant: Variant, d: usize, hidden: usize, latent: usize, domain: Domain, box_active: bool) -> Self {
        Self {
            task,
            variant,
            d,
            hidden_dim: hidden,
            latent_dim: latent,
            domain,
            box_active,
            hrep: HREP_FILE.into(),
            vrep: VREP_FILE.into(),
        }
    }
}

pub(crate) fn save_model(
    dir: &Path,
    store: &ParamStore,
    model: &ModelMeta,
    c: &Constraints,
    extra: serde_json::Value,
) -> Result<(), ExperimentError> {
    let mut meta = serde_json::json!({ "model": model });
    if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra) {
        m.extend(e);
    }
    save_checkpoint(dir, store, &meta)?;
    write_hrep(dir.join(HREP_FILE), &c.h)?;
    write_vrep(dir.join(VREP_FILE), &c.v)?;
    Ok(())
}

/// A model restored from a checkpoint directory, ready for inference.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub net: Net,
    pub store: ParamStore,
    pub constraints: Constraints,
    pub variant: Variant,
    pub box_active: bool,
    pub meta: serde_json::Value,
}

pub fn load_model(dir: &Path) -> Result<LoadedModel, ExperimentError> {
    let ck = load_checkpoint(dir)?;
    let corrupt = |m: String| ExperimentError::Net(NetError::CheckpointCorrupt(m));
    let model: ModelMeta = ck
        .meta
        .get("model")
        .cloned()
        .ok_or_else(|| corrupt("manifest has no model section".into()))
        .and_then(|m| serde_json::from_value(m).map_err(|e| corrupt(format!("model section: {e}"))))?;
    let h = read_hrep(dir.join(&model.hrep)).map_err(|e| corrupt(format!("{}: {e}", model.hrep)))?;
    let v = read_vrep(dir.join(&model.vrep)).map_err(|e| corrupt(format!("{}: {e}", model.vrep)))?;
    if h.d() != model.d {
        return Err(corrupt(format!("constraints have d={}, model d={}", h.d(), model.d)));
    }
    let constraints = Constraints { h, v };
    let mut store = ParamStore::new();
    // initial values are overwritten by the checkpoint
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = match model.task {
        Task::Projection => Net::Projection(ProjectionNet::build(
            &mut store,
            model.variant,
            &constraints,
            model.box_active,
            &mut rng,
        )?),
        Task::Vae => Net::Vae(VaeNet::build(
            &mut store,
            model.variant,
            &constraints,
            model.hidden_dim,
            model.latent_dim,
            model.domain,
            model.box_active,
            &mut rng,
        )?),
    };
    if store.len() != ck.store.len() {
        return Err(corrupt(format!(
            "checkpoint holds {} tensors, model expects {}",
            ck.store.len(),
            store.len()
        )));
    }
    store.load_from(&ck.store)?;
    Ok(LoadedModel {
        net,
        store,
        constraints,
        variant: model.variant,
        box_active: model.box_active,
        meta: ck.meta,
    })
}

impl LoadedModel {
    /// Width of the inference input: the image size, or the latent size for a VAE.
    pub fn input_dim(&self) -> usize {
        match &self.net {
            Net::Projection(_) => self.constraints.h.d(),
            Net::Vae(v) => v.latent_dim,
        }
    }

    /// Eval-mode forward pass: images to outputs, or latents to decoded images.
    pub fn infer(&mut self, input: &Tensor) -> Result<Tensor, ExperimentError> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let x = tape.constant(input.clone());
        let out = match &self.net {
            Net::Projection(p) => p.forward(&mut tape, &bound, &mut self.store, x, false)?,
            Net::Vae(v) => v.decode(&mut tape, &bound, &mut self.store, x, false)?,
        };
        Ok(tape.value(out).clone())
    }
}

impl LoadedModel {
    /// Freshly initialized model, used when timing without trained checkpoints.
    #[allow(clippy::too_many_arguments)]
    pub fn fresh(
        task: Task,
        variant: Variant,
        constraints: Constraints,
        hidden: usize,
        latent: usize,
        domain: Domain,
        box_active: bool,
        seed: u64,
    ) -> Result<Self, ExperimentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = match task {
            Task::Projection => Net::Projection(ProjectionNet::build(
                &mut store,
                variant,
                &constraints,
                box_active,
                &mut rng,
            )?),
            Task::Vae => Net::Vae(VaeNet::build(
                &mut store,
                variant,
                &constraints,
                hidden,
                latent,
                domain,
                box_active,
                &mut rng,
            )?),
        };
        Ok(Self {
            net,
            store,
            constraints,
            variant,
            box_active,
            meta: serde_json::Value::Null,
        })
    }
}
