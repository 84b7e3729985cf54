//! Named parameter storage. A [`ParamStore`] owns every trainable tensor of a
//! model under a dotted name, which gives us deterministic initialization,
//! prefix-based freezing, deep copies for test-time adaptation, and a stable
//! ordering for checkpoints.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor, Var};

use crate::error::{NdistError, Result};
use crate::rng::SeedRng;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Gaussian with the given standard deviation.
    Randn(f64),
    /// Kaiming-style fan-in scaling: std = gain / sqrt(fan_in).
    FanIn(f64),
}

#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    dtype: DType,
    device: Device,
}

struct Inner {
    vars: BTreeMap<String, Var>,
    seed: u64,
}

impl ParamStore {
    pub fn new(dtype: DType, device: Device, seed: u64) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                vars: BTreeMap::new(),
                seed,
            })),
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> Device {
        self.device.clone()
    }

    /// Fetch a parameter, creating and initializing it on first use. The
    /// initialization stream is keyed on the parameter name so construction
    /// order does not affect the values.
    pub fn get_or_init<S: Into<Shape>>(&self, name: &str, shape: S, init: Init) -> Result<Var> {
        let shape: Shape = shape.into();
        let mut inner = self.inner.lock().unwrap();
        if let Some(v) = inner.vars.get(name) {
            if v.shape() != &shape {
                return Err(NdistError::shape("param store", format!("{shape:?}"), format!("{:?}", v.shape())));
            }
            return Ok(v.clone());
        }
        let mut rng = SeedRng::new(inner.seed ^ name_key(name));
        let n = shape.elem_count();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Randn(std) => rng.normal_vec(n).into_iter().map(|x| x * std).collect(),
            Init::FanIn(gain) => {
                let dims = shape.dims();
                let fan_in: usize = if dims.len() >= 2 {
                    dims[1..].iter().product()
                } else {
                    dims.iter().product()
                };
                let std = gain / (fan_in.max(1) as f64).sqrt();
                rng.normal_vec(n).into_iter().map(|x| x * std).collect()
            }
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let v = Var::from_tensor(&t)?;
        inner.vars.insert(name.to_string(), v.clone());
        Ok(v)
    }

    /// All parameters in name order.
    pub fn all_vars(&self) -> Vec<(String, Var)> {
        let inner = self.inner.lock().unwrap();
        inner.vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<(String, Var)> {
        self.all_vars()
            .into_iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.all_vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Independent copy: same names, values cloned into fresh `Var`s.
    pub fn deep_clone(&self) -> Result<ParamStore> {
        let inner = self.inner.lock().unwrap();
        let mut vars = BTreeMap::new();
        for (k, v) in inner.vars.iter() {
            vars.insert(k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?);
        }
        Ok(ParamStore {
            inner: Arc::new(Mutex::new(Inner {
                vars,
                seed: inner.seed,
            })),
            dtype: self.dtype,
            device: self.device.clone(),
        })
    }

    /// Overwrite parameters from `(name, tensor)` pairs. Unknown names and
    /// shape mismatches are errors; missing names are left untouched.
    pub fn load_values(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        let inner = self.inner.lock().unwrap();
        for (name, t) in values {
            let var = inner
                .vars
                .get(name)
                .ok_or_else(|| NdistError::Checkpoint(format!("unknown parameter `{name}`")))?;
            if var.shape() != t.shape() {
                return Err(NdistError::shape("load_values", format!("{:?}", var.shape()), format!("{:?}", t.shape())));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Export parameter values as plain tensors.
    pub fn export_values(&self) -> Result<BTreeMap<String, Tensor>> {
        let inner = self.inner.lock().unwrap();
        let mut out = BTreeMap::new();
        for (k, v) in inner.vars.iter() {
            out.insert(k.clone(), v.as_tensor().copy()?);
        }
        Ok(out)
    }
}

fn name_key(name: &str) -> u64 {
    // FNV-1a over the parameter name.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}
