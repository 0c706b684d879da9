//! Adam optimizer over a [`ParamStore`].

use indexmap::IndexMap;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adam with bias correction; β = (0.9, 0.999), eps = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// Apply one update from the gradients currently in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let names: Vec<String> = store.names().map(String::from).collect();
        for name in names {
            let g = store
                .grad(&name)
                .ok_or_else(|| Error::Numeric(format!("no gradient for parameter '{name}'")))?
                .clone();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            for ((m, v), &g) in m.data.iter_mut().zip(v.data.iter_mut()).zip(&g.data) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            }
            let p = store.get_mut(&name)?;
            for (p, (m, v)) in p.data.iter_mut().zip(m.data.iter().zip(&v.data)) {
                *p -= self.lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            }
            if !store.get(&name)?.is_finite() {
                return Err(Error::Numeric(format!(
                    "parameter '{name}' became non-finite after the update"
                )));
            }
        }
        Ok(())
    }
}
