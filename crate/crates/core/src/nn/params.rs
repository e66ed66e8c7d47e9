use std::cell::RefCell;
use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Named trainable parameters of one module, in a deterministic (sorted) order.
///
/// Initial values come from a seeded ChaCha stream, so building the same module
/// graph twice with one seed gives bit-identical parameters.
pub struct ParamStore {
    vars: RefCell<BTreeMap<String, Var>>,
    rng: RefCell<ChaCha8Rng>,
    dtype: DType,
    device: Device,
}

/// How a fresh parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanInUniform { fan_in: usize },
    Const(f64),
}

/// A flat float32 parameter dump: name, shape and row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            vars: RefCell::new(BTreeMap::new()),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Builder<'_> {
        Builder {
            store: self,
            prefix: String::new(),
        }
    }

    fn create(&self, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        self.create_with(name, shape, |rng, n| match init {
            Init::FanInUniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::Const(c) => vec![c; n],
        })
    }

    fn create_with(
        &self,
        name: String,
        shape: &[usize],
        fill: impl FnOnce(&mut ChaCha8Rng, usize) -> Vec<f64>,
    ) -> Result<Tensor> {
        if let Some(v) = self.vars.borrow().get(&name) {
            if v.dims() != shape {
                return Err(Error::Shape(format!(
                    "parameter {name} re-registered with shape {shape:?}, had {:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let values = fill(&mut self.rng.borrow_mut(), n);
        if values.len() != n {
            return Err(Error::Shape(format!(
                "parameter {name}: {} initial values for shape {shape:?}",
                values.len()
            )));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.borrow_mut().insert(name, var);
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.vars.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.borrow().is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.borrow().keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.borrow().get(name).cloned()
    }

    /// All variables sorted by name.
    pub fn vars(&self) -> Vec<(String, Var)> {
        self.vars
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.borrow().values().map(|v| v.elem_count()).sum()
    }

    pub fn to_blobs(&self) -> Result<Vec<Blob>> {
        self.vars
            .borrow()
            .iter()
            .map(|(name, v)| {
                Ok(Blob {
                    name: name.clone(),
                    shape: v.dims().to_vec(),
                    data: v
                        .as_tensor()
                        .to_dtype(DType::F32)?
                        .flatten_all()?
                        .to_vec1::<f32>()?,
                })
            })
            .collect()
    }

    /// Overwrites every parameter from `blobs` (matched by name after stripping
    /// `prefix`). All parameters must be covered and shapes must agree.
    pub fn load_blobs<'b>(&self, blobs: impl IntoIterator<Item = &'b Blob>, prefix: &str) -> Result<()> {
        let vars = self.vars.borrow();
        let mut covered = std::collections::BTreeSet::new();
        for blob in blobs {
            let Some(name) = blob.name.strip_prefix(prefix) else {
                continue;
            };
            let var = vars
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {}", blob.name)))?;
            if var.dims() != blob.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    blob.name,
                    blob.shape,
                    var.dims()
                )));
            }
            let t = Tensor::from_vec(blob.data.clone(), blob.shape.as_slice(), &self.device)?
                .to_dtype(self.dtype)?;
            var.set(&t)?;
            covered.insert(name.to_string());
        }
        if let Some(missing) = vars.keys().find(|k| !covered.contains(*k)) {
            return Err(Error::Checkpoint(format!(
                "missing parameter {prefix}{missing}"
            )));
        }
        Ok(())
    }

    /// Deep copy: same names and values, independent storage.
    pub fn deep_copy(&self) -> Result<ParamStore> {
        let copy = ParamStore::new(self.dtype, 0);
        *copy.rng.borrow_mut() = self.rng.borrow().clone();
        {
            let mut dst = copy.vars.borrow_mut();
            for (k, v) in self.vars.borrow().iter() {
                dst.insert(k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?);
            }
        }
        Ok(copy)
    }
}

/// Hierarchical naming handle used while constructing layers.
#[derive(Clone)]
pub struct Builder<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn pp(&self, name: impl AsRef<str>) -> Builder<'a> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Builder {
            store: self.store,
            prefix,
        }
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.create(full, shape, init)
    }

    /// Registers a parameter with explicit initial values (row-major).
    pub fn param_values(&self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.create_with(full, shape, move |_, _| values)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }
}
