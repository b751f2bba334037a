use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::grad::{Sgd, SgdStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyHyper {
    pub vocab_size: usize,
    pub d_model: usize,
    /// Maximum prompt + target length; also the size of each positional table.
    pub context_len: usize,
}

impl PolicyHyper {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size, d_model: 32, context_len: 64 }
    }
}

/// Position of each tensor inside [`PolicyParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    TokEmbed,
    PosEmbed,
    Query,
    Key,
    Value,
    Hidden,
    HiddenBias,
    Out,
    OutBias,
}

pub(crate) const SLOTS: [Slot; 9] = [
    Slot::TokEmbed,
    Slot::PosEmbed,
    Slot::Query,
    Slot::Key,
    Slot::Value,
    Slot::Hidden,
    Slot::HiddenBias,
    Slot::Out,
    Slot::OutBias,
];

impl Slot {
    fn name(self) -> &'static str {
        match self {
            Slot::TokEmbed => "tok_embed",
            Slot::PosEmbed => "pos_embed",
            Slot::Query => "w_query",
            Slot::Key => "w_key",
            Slot::Value => "w_value",
            Slot::Hidden => "w_hidden",
            Slot::HiddenBias => "b_hidden",
            Slot::Out => "w_out",
            Slot::OutBias => "b_out",
        }
    }

    fn shape(self, h: &PolicyHyper) -> Vec<usize> {
        let (v, d) = (h.vocab_size, h.d_model);
        match self {
            Slot::TokEmbed => vec![v, d],
            // Source-side rows first, then target-side rows.
            Slot::PosEmbed => vec![2 * h.context_len, d],
            Slot::Query | Slot::Key | Slot::Value | Slot::Hidden => vec![d, d],
            Slot::HiddenBias => vec![d],
            Slot::Out => vec![d, v],
            Slot::OutBias => vec![v],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Actor parameters: token and positional embeddings, one single-head
/// causal attention block, a tanh hidden layer and an output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    hyper: PolicyHyper,
    tensors: Vec<ParamTensor>,
}

/// Gradient buffers aligned with [`PolicyParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Vec<f64>>);

impl ParamGrads {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Self(params.tensors.iter().map(|t| vec![0.0; t.values.len()]).collect())
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.concat()
    }
}

impl PolicyParams {
    /// Small random initialisation, deterministic in `seed`.
    pub fn init(hyper: PolicyHyper, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = SLOTS
            .iter()
            .map(|&slot| {
                let shape = slot.shape(&hyper);
                let n: usize = shape.iter().product();
                let scale = match slot {
                    Slot::TokEmbed | Slot::PosEmbed => 0.5,
                    Slot::HiddenBias | Slot::OutBias => 0.0,
                    _ => 1.0 / (shape[0] as f64).sqrt(),
                };
                let values = (0..n)
                    .map(|_| if scale == 0.0 { 0.0 } else { rng.gen_range(-scale..scale) })
                    .collect();
                ParamTensor { name: slot.name().into(), shape, values }
            })
            .collect();
        Self { hyper, tensors }
    }

    /// All-zero parameters: every next-token distribution is uniform.
    pub fn zeros(hyper: PolicyHyper) -> Self {
        let tensors = SLOTS
            .iter()
            .map(|&slot| {
                let shape = slot.shape(&hyper);
                let n = shape.iter().product();
                ParamTensor { name: slot.name().into(), shape, values: vec![0.0; n] }
            })
            .collect();
        Self { hyper, tensors }
    }

    /// Reassembles parameters from named tensors, validating every shape.
    pub fn from_tensors(hyper: PolicyHyper, tensors: Vec<ParamTensor>) -> Result<Self, PolicyError> {
        if tensors.len() != SLOTS.len() {
            return Err(PolicyError::Checkpoint(format!(
                "expected {} tensors, found {}",
                SLOTS.len(),
                tensors.len()
            )));
        }
        for (slot, t) in SLOTS.iter().zip(&tensors) {
            let shape = slot.shape(&hyper);
            if t.name != slot.name() || t.shape != shape || t.values.len() != shape.iter().product::<usize>() {
                return Err(PolicyError::Checkpoint(format!(
                    "tensor {:?} with shape {:?} does not match expected {:?} {:?}",
                    t.name,
                    t.shape,
                    slot.name(),
                    shape
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(PolicyError::Checkpoint(format!("tensor {:?} has non-finite values", t.name)));
            }
        }
        Ok(Self { hyper, tensors })
    }

    pub fn hyper(&self) -> &PolicyHyper {
        &self.hyper
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub(crate) fn get(&self, slot: Slot) -> &[f64] {
        &self.tensors[slot as usize].values
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.values.iter().all(|v| v.is_finite()))
    }

    /// One optimizer step; `grads` is the gradient of the loss to minimise.
    pub fn apply(&mut self, grads: &ParamGrads, opt: &Sgd) -> Result<SgdStep, PolicyError> {
        let pairs = self
            .tensors
            .iter_mut()
            .zip(&grads.0)
            .map(|(t, g)| (t.values.as_mut_slice(), g.as_slice()));
        Ok(opt.step(pairs)?)
    }
}
