//! AdamW with a linear warmup / linear decay learning-rate schedule.

use std::collections::BTreeSet;

use ndarray::Array2;

use crate::autograd::{Gradients, Params};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// Updates every tensor named in `trainable`; others are left untouched.
    pub fn step(
        &self,
        params: &mut Params,
        grads: &Gradients,
        trainable: &BTreeSet<String>,
        state: &mut AdamState,
        lr: f64,
    ) {
        state.step += 1;
        let t = state.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            if !trainable.contains(name) {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            if state.m.get(name).is_none() {
                state.m.insert(name, Array2::zeros(p.raw_dim()));
                state.v.insert(name, Array2::zeros(p.raw_dim()));
            }
            let m = state.m.get_mut(name).expect("moment");
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            let m = m.clone();
            let v = state.v.get_mut(name).expect("moment");
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let wd = self.weight_decay;
            ndarray::Zip::from(p).and(&m).and(&*v).for_each(|p, &m, &v| {
                let update = (m / bias1) / ((v / bias2).sqrt() + self.eps);
                *p -= lr * (update + wd * *p);
            });
        }
    }
}

/// Linear warmup over the first `warmup_fraction` of steps, then linear decay
/// to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn new(base_lr: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        Self {
            base_lr,
            warmup_steps: (warmup_fraction * total_steps as f64).round() as usize,
            total_steps,
        }
    }

    /// Learning rate for the zero-based step index.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let remaining = self.total_steps.saturating_sub(step) as f64;
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        self.base_lr * remaining / span
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use ndarray::array;

    #[test]
    fn schedule_shape() {
        let s = LinearSchedule::new(1.0, 0.1, 100);
        assert_eq!(s.warmup_steps, 10);
        assert!((s.lr(0) - 0.1).abs() < 1e-12);
        assert!((s.lr(9) - 1.0).abs() < 1e-12);
        assert!((s.lr(10) - 1.0).abs() < 1e-12);
        assert!((s.lr(55) - 0.5).abs() < 1e-12);
        assert!(s.lr(99) > 0.0);
        let no_warmup = LinearSchedule::new(1.0, 0.0, 10);
        assert_eq!(no_warmup.lr(0), 1.0);
    }

    #[test]
    fn adamw_minimises_a_quadratic_and_skips_frozen() {
        let mut params = Params::new();
        params.insert("x", array![[3.0, -2.0]]);
        params.insert("frozen", array![[5.0]]);
        let trainable: BTreeSet<String> = ["x".to_string()].into();
        let opt = AdamW::new(0.0);
        let mut state = AdamState::default();
        for _ in 0..500 {
            let mut g = Graph::new();
            let x = g.param(&params, "x");
            let f = g.param(&params, "frozen");
            let sq = g.mul(x, x);
            let s = g.sum(sq);
            let fs = g.sum(f);
            let loss = g.add(s, fs);
            let grads = g.backward(loss);
            opt.step(&mut params, &grads, &trainable, &mut state, 0.05);
        }
        assert!(params.get("x").unwrap().iter().all(|v| v.abs() < 1e-2));
        assert_eq!(params.get("frozen").unwrap()[[0, 0]], 5.0);
        assert!(state.m.get("frozen").is_none());
        assert_eq!(state.step, 500);
    }
}
