use super::ParamStore;

/// Adam with bias correction. Moment buffers are indexed like the store.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(skip)]
    m: Vec<Vec<f64>>,
    #[serde(skip)]
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = |_: &super::ParamEntry| Vec::new();
        Self {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: store.entries().iter().map(zeros).collect(),
            v: store.entries().iter().map(zeros).collect(),
        }
    }
}

/// One Adam update of every trainable entry that has a gradient.
pub fn adam_step(state: &mut AdamState, store: &mut ParamStore, grads: &[Option<Vec<f64>>], lr: f64) {
    assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
    if state.m.len() != store.len() {
        state.m.resize(store.len(), Vec::new());
        state.v.resize(store.len(), Vec::new());
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let i = id.index();
        let Some(g) = &grads[i] else { continue };
        let w = store.get_mut(id).data_mut();
        assert_eq!(g.len(), w.len(), "gradient shape");
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.is_empty() {
            *m = vec![0.0; w.len()];
            *v = vec![0.0; w.len()];
        }
        for k in 0..w.len() {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            w[k] -= lr * mh / (vh.sqrt() + state.eps);
        }
    }
}

/// Multiplies the learning rate by `factor` once the validation loss has
/// failed to improve for more than `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub best: f64,
    pub stagnant: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            best: f64::INFINITY,
            stagnant: 0,
        }
    }

    /// Call once per epoch; returns the learning rate for the next epoch.
    pub fn step(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best - 1e-12 {
            self.best = val_loss;
            self.stagnant = 0;
            return lr;
        }
        self.stagnant += 1;
        if self.stagnant > self.patience {
            self.stagnant = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorkit::Tensor;

    #[test]
    fn scheduler_traces() {
        let mut s = PlateauScheduler::new(0.5, 5);
        let mut lr = 1.0;
        for k in 0..20 {
            lr = s.step(10.0 - k as f64, lr);
        }
        assert_eq!(lr, 1.0);

        let mut s = PlateauScheduler::new(0.5, 5);
        let lrs: Vec<f64> = (0..8)
            .scan(1.0, |lr, _| {
                *lr = s.step(1.0, *lr);
                Some(*lr)
            })
            .collect();
        // first call sets the baseline, six stagnant epochs follow
        assert_eq!(lrs, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5]);

        let mut s = PlateauScheduler::new(0.5, 5);
        let losses = [1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5];
        let mut lr = 1.0;
        for l in losses {
            lr = s.step(l, lr);
        }
        assert_eq!(lr, 1.0);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(vec![2], vec![0.3, -0.7]).unwrap(), true);
        let mut st = AdamState::new(&store);
        for _ in 0..5 {
            adam_step(&mut st, &mut store, &[Some(vec![0.0, 0.0])], 0.1);
        }
        assert_eq!(store.get(id).data(), &[0.3, -0.7]);
    }
}
