use std::path::Path;
use std::sync::Mutex;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::VarMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Parameter initialisation rule.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    Uniform(f64),
    Normal(f64),
}

/// Named, seeded parameter storage backed by a candle `VarMap`.
///
/// All draws come from a ChaCha stream so that constructing the same model
/// twice with the same seed yields identical weights.
pub struct ParamStore {
    map: VarMap,
    rng: Mutex<ChaCha8Rng>,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { map: VarMap::new(), rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)), device: Device::Cpu }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Scope<'_> {
        Scope { store: self, prefix: String::new() }
    }

    pub fn scope(&self, prefix: &str) -> Scope<'_> {
        Scope { store: self, prefix: prefix.to_string() }
    }

    fn create(&self, name: String, dims: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let values: Vec<f32> = {
            let mut rng = self.rng.lock().expect("param rng poisoned");
            match init {
                Init::Zeros => vec![0.0; n],
                Init::Const(c) => vec![c as f32; n],
                Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..b) as f32).collect(),
                Init::Normal(s) => (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut *rng);
                        (z * s) as f32
                    })
                    .collect(),
            }
        };
        let var = Var::from_tensor(&Tensor::from_vec(values, dims, &self.device)?)?;
        let mut data = self.map.data().lock().expect("var map poisoned");
        if data.contains_key(&name) {
            return Err(Error::config(format!("parameter `{name}` declared twice")));
        }
        let t = var.as_tensor().clone();
        data.insert(name, var);
        Ok(t)
    }

    /// Trainable variables whose names satisfy `keep`, sorted by name.
    pub fn vars_where(&self, keep: impl Fn(&str) -> bool) -> Vec<Var> {
        let data = self.map.data().lock().expect("var map poisoned");
        let mut named: Vec<_> = data.iter().filter(|(k, _)| keep(k)).collect();
        named.sort_by(|a, b| a.0.cmp(b.0));
        named.into_iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars_where(|_| true)
    }

    pub fn names(&self) -> Vec<String> {
        let data = self.map.data().lock().expect("var map poisoned");
        let mut names: Vec<String> = data.keys().cloned().collect();
        names.sort();
        names
    }

    pub fn num_params(&self) -> usize {
        self.all_vars().iter().map(|v| v.elem_count()).sum()
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        let data = self.map.data().lock().expect("var map poisoned");
        data.get(name).map(|v| v.as_tensor().clone())
    }

    /// Overwrites a parameter in place.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let data = self.map.data().lock().expect("var map poisoned");
        let var = data.get(name).ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?;
        var.set(&value.to_dtype(DType::F32)?)?;
        Ok(())
    }

    /// Snapshot of every parameter by name.
    pub fn tensors(&self) -> std::collections::HashMap<String, Tensor> {
        let data = self.map.data().lock().expect("var map poisoned");
        data.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.map.save(path)?;
        Ok(())
    }

    /// Loads values into already-declared parameters. Every declared parameter
    /// must be present in the archive.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint missing")));
        }
        self.map.load(path)?;
        Ok(())
    }
}

/// A name prefix inside a [`ParamStore`].
#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn sub(&self, name: impl AsRef<str>) -> Scope<'a> {
        Scope { store: self.store, prefix: self.path(name.as_ref()) }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn var(&self, name: &str, dims: &[usize], init: Init) -> Result<Tensor> {
        self.store.create(self.path(name), dims, init)
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn device(&self) -> &'a Device {
        &self.store.device
    }
}
