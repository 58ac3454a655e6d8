use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Buffers (running statistics) are stored and serialized but never
    /// receive gradients and are not counted as parameters.
    pub trainable: bool,
}

/// Named tensors owned by a network: learnable parameters plus buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name `{name}`");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Total number of learnable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// Blends batch statistics from a training-mode pass into the running
    /// buffers: `running ← (1 − momentum)·running + momentum·batch`.
    /// `momentum = 1` simply adopts the batch statistics.
    pub fn update_running_stats(&mut self, stats: &[(ParamId, ParamId, Vec<f64>, Vec<f64>)], momentum: f64) {
        for (mean, var, bm, bv) in stats {
            for (id, batch) in [(mean, bm), (var, bv)] {
                for (r, &b) in self.entries[id.0].value.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - momentum) * *r + momentum * b;
                }
            }
        }
    }

    /// Replaces the value of an existing entry, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.find(name).ok_or_else(|| Error::MissingWeight(name.to_string()))?;
        let cur = &mut self.entries[id.0].value;
        if cur.shape() != value.shape() {
            return Err(Error::WeightShape {
                name: name.to_string(),
                expected: cur.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        *cur = value;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Stored running statistics.
    Eval,
    /// Batch statistics; running statistics are updated after the step.
    Train,
}

/// One forward pass over a [`ParamStore`]: a fresh tape plus lazily bound
/// parameter leaves.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    mode: BnMode,
    grad: bool,
    bn_nodes: Vec<(ParamId, ParamId, Var)>,
    probes: Vec<(String, Var)>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, mode: BnMode, grad: bool) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            grad,
            bn_nodes: Vec::new(),
            probes: Vec::new(),
        }
    }

    /// Inference session: eval-mode batch norm, no gradient tracking.
    pub fn eval(store: &'a ParamStore) -> Self {
        Self::new(store, BnMode::Eval, false)
    }

    pub fn mode(&self) -> BnMode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let e = self.store.entry(id);
        let v = self.tape.leaf(e.value.clone(), self.grad && e.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn buffer(&self, id: ParamId) -> &'a Tensor {
        self.store.get(id)
    }

    pub(crate) fn record_bn(&mut self, mean: ParamId, var: ParamId, node: Var) {
        self.bn_nodes.push((mean, var, node));
    }

    /// Tags an intermediate value so callers can read it after the pass
    /// (participation matrices, for instance).
    pub fn record_probe(&mut self, name: impl Into<String>, v: Var) {
        self.probes.push((name.into(), v));
    }

    pub fn probes(&self) -> &[(String, Var)] {
        &self.probes
    }

    /// Parameters bound during this pass and their tape handles.
    pub fn bound(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().enumerate().filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }

    /// Per-parameter gradients for every trainable parameter used in the
    /// pass.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.bound()
            .filter(|(id, _)| self.store.entry(*id).trainable)
            .filter_map(|(id, v)| grads.get(v).map(|g| (id, g)))
            .collect()
    }

    /// Batch statistics gathered by training-mode batch norms, as
    /// (running mean id, running var id, batch mean, batch var).
    pub fn bn_statistics(&self) -> Vec<(ParamId, ParamId, Vec<f64>, Vec<f64>)> {
        self.bn_nodes
            .iter()
            .filter_map(|&(m, v, node)| {
                self.tape
                    .batch_stats(node)
                    .map(|(bm, bv)| (m, v, bm.to_vec(), bv.to_vec()))
            })
            .collect()
    }
}
