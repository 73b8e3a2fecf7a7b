//! Named parameter arrays with paired gradient buffers.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::array::Array2;
use crate::error::{Error, Result};

/// Index of a registered parameter; stable for the lifetime of the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in [-0.08, 0.08], drawn from the store's seeded RNG.
    Uniform,
    Zeros,
}

#[derive(Debug)]
pub(crate) struct Entry {
    pub name: String,
    pub value: Array2,
    pub grad: Array2,
}

/// All learnable arrays of a model plus same-shaped gradient buffers.
/// Registration order is deterministic and defines checkpoint order.
#[derive(Debug)]
pub struct ParameterStore {
    seed: u64,
    rng: ChaCha8Rng,
    entries: Vec<Entry>,
    by_name: BTreeMap<String, usize>,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            entries: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn register(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let value = match init {
            Init::Zeros => Array2::zeros(rows, cols),
            Init::Uniform => {
                let data = (0..rows * cols)
                    .map(|_| self.rng.gen_range(-0.08..=0.08))
                    .collect();
                Array2::from_data(rows, cols, data)
            }
        };
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.to_string(), id.0);
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad: Array2::zeros(rows, cols),
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Array2 {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2 {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2 {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array2 {
        &mut self.entries[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Global L2 norm over every gradient buffer.
    pub fn grad_norm(&self) -> f64 {
        let mut sq = 0.0;
        for e in &self.entries {
            for g in e.grad.data() {
                sq += g * g;
            }
        }
        sq.sqrt()
    }

    /// Scale every gradient in place.
    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            for g in e.grad.data_mut() {
                *g *= factor;
            }
        }
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}
