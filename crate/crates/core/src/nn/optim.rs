use candle_core::{backprop::GradStore, DType, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::params::{Blob, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: default_eps(),
        }
    }
}

/// Adam over a fixed list of variables. Variables absent from a gradient store
/// are left untouched (their moments do not decay either).
pub struct Adam {
    cfg: AdamConfig,
    vars: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(vars: Vec<(String, Var)>, cfg: AdamConfig) -> Result<Self> {
        let m = vars
            .iter()
            .map(|(_, v)| Ok(v.as_tensor().zeros_like()?))
            .collect::<Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self {
            cfg,
            vars,
            m,
            v,
            step: 0,
        })
    }

    pub fn for_store(store: &ParamStore, cfg: AdamConfig) -> Result<Self> {
        Self::new(store.vars(), cfg)
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, (_, var)) in self.vars.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Moments must not hold on to past graphs.
            let g = g.detach();
            let m = ((&self.m[i] * c.beta1)? + (&g * (1.0 - c.beta1))?)?;
            let v = ((&self.v[i] * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + c.eps)?)?;
            var.set(&(var.as_tensor() - (update * c.lr)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }

    /// Moment tensors as blobs named `<prefix>m.<param>` / `<prefix>v.<param>`.
    pub fn state_blobs(&self, prefix: &str) -> Result<Vec<Blob>> {
        let mut out = Vec::with_capacity(2 * self.vars.len());
        for (kind, moments) in [("m", &self.m), ("v", &self.v)] {
            for ((name, _), t) in self.vars.iter().zip(moments) {
                out.push(Blob {
                    name: format!("{prefix}{kind}.{name}"),
                    shape: t.dims().to_vec(),
                    data: t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?,
                });
            }
        }
        Ok(out)
    }

    pub fn load_state<'b>(
        &mut self,
        blobs: impl IntoIterator<Item = &'b Blob> + Clone,
        prefix: &str,
        step: u64,
    ) -> Result<()> {
        for (kind, moments) in [("m", &mut self.m), ("v", &mut self.v)] {
            for ((name, var), slot) in self.vars.iter().zip(moments.iter_mut()) {
                let key = format!("{prefix}{kind}.{name}");
                let blob = blobs
                    .clone()
                    .into_iter()
                    .find(|b| b.name == key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state {key}")))?;
                if blob.shape.as_slice() != var.dims() {
                    return Err(Error::Checkpoint(format!("optimizer state {key} has wrong shape")));
                }
                *slot = Tensor::from_vec(blob.data.clone(), blob.shape.as_slice(), var.device())?
                    .to_dtype(var.dtype())?;
            }
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        // With bias correction the first Adam update is lr * sign(g) (up to eps).
        let store = ParamStore::new(DType::F64, 1);
        let w = store.root().param("w", &[3], Init::Const(1.0)).unwrap();
        let mut opt = Adam::for_store(&store, AdamConfig::new(0.1, 0.9, 0.99)).unwrap();
        let target = Tensor::new(&[2.0f64, 0.0, 1.5], w.device()).unwrap();
        let loss = (&w - &target).unwrap().sqr().unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap()).unwrap();
        let got = store.get("w").unwrap().as_tensor().to_vec1::<f64>().unwrap();
        let expect = [1.1, 0.9, 1.1];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-6, "{got:?}");
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let store = ParamStore::new(DType::F64, 1);
        let w = store.root().param("w", &[2], Init::Const(0.0)).unwrap();
        let mut opt = Adam::for_store(&store, AdamConfig::new(0.05, 0.9, 0.99)).unwrap();
        let target = Tensor::new(&[1.0f64, -2.0], w.device()).unwrap();
        for _ in 0..500 {
            let loss = (&w - &target).unwrap().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap()).unwrap();
        }
        let got = w.to_vec1::<f64>().unwrap();
        assert!((got[0] - 1.0).abs() < 1e-2 && (got[1] + 2.0).abs() < 1e-2, "{got:?}");
    }
}
