//! Named parameter tables.
//!
//! Every block declares its parameters as an ordered list of [`ParamSlot`]s.
//! A [`ModelParams`] pairs those slots with tensors; gradients use the same
//! order, with zeros for the non-trainable running statistics.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    /// Convolution or linear weight, initialized uniformly in `±sqrt(6/fan_in)`.
    Weight { fan_in: usize },
    Bias,
    BnGamma,
    BnBeta,
    RunningMean,
    RunningVar,
}

impl SlotKind {
    pub fn trainable(self) -> bool {
        !matches!(self, SlotKind::RunningMean | SlotKind::RunningVar)
    }

    /// Whether weight decay applies.
    pub fn decays(self) -> bool {
        matches!(self, SlotKind::Weight { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Shape,
    pub kind: SlotKind,
}

impl ParamSlot {
    pub fn new(name: impl Into<String>, shape: Shape, kind: SlotKind) -> Self {
        ParamSlot {
            name: name.into(),
            shape,
            kind,
        }
    }

    pub fn init<E: Real>(&self, rng: &mut Rng) -> Result<Tensor<E>> {
        Ok(match self.kind {
            SlotKind::Weight { fan_in } => Tensor::kaiming_uniform(self.shape, fan_in, rng)?,
            SlotKind::Bias | SlotKind::BnBeta | SlotKind::RunningMean => Tensor::zeros(self.shape),
            SlotKind::BnGamma | SlotKind::RunningVar => Tensor::ones(self.shape),
        })
    }
}

/// Number of learned scalars in `slots`.
pub fn learned_count(slots: &[ParamSlot]) -> usize {
    slots
        .iter()
        .filter(|s| s.kind.trainable())
        .map(|s| s.shape.numel())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<E: Real = f32> {
    slots: Vec<ParamSlot>,
    tensors: Vec<Tensor<E>>,
}

impl<E: Real> ModelParams<E> {
    /// Initializes every slot in order from `rng`.
    pub fn init(slots: Vec<ParamSlot>, rng: &mut Rng) -> Result<Self> {
        let tensors = slots.iter().map(|s| s.init(rng)).collect::<Result<Vec<_>>>()?;
        Ok(ModelParams { slots, tensors })
    }

    /// Pairs slots with existing tensors; names must be unique and shapes match.
    pub fn from_parts(slots: Vec<ParamSlot>, tensors: Vec<Tensor<E>>) -> Result<Self> {
        if slots.len() != tensors.len() {
            return Err(Error::arg(alloc::format!(
                "expected {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (i, (s, t)) in slots.iter().zip(&tensors).enumerate() {
            if slots[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::arg(alloc::format!("duplicate parameter name {}", s.name)));
            }
            if t.shape() != s.shape {
                return Err(Error::arg(alloc::format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(ModelParams { slots, tensors })
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn tensors(&self) -> &[Tensor<E>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<E>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.slots
            .iter()
            .position(|s| s.name == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        let i = self.slots.iter().position(|s| s.name == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamSlot, &Tensor<E>)> {
        self.slots.iter().zip(&self.tensors)
    }

    /// Learned scalars actually allocated (running statistics excluded).
    pub fn learned_count(&self) -> usize {
        self.iter()
            .filter(|(s, _)| s.kind.trainable())
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// All allocated scalars, running statistics included.
    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn cast<F: Real>(&self) -> ModelParams<F> {
        ModelParams {
            slots: self.slots.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    /// Zero tensors in this table's layout, e.g. to accumulate gradients.
    pub fn zeros_like(&self) -> Vec<Tensor<E>> {
        self.slots.iter().map(|s| Tensor::zeros(s.shape)).collect()
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.slots == other.slots
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.bit_eq(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots() -> Vec<ParamSlot> {
        alloc::vec![
            ParamSlot::new("w", Shape::new(2, 3, 3, 3).unwrap(), SlotKind::Weight { fan_in: 27 }),
            ParamSlot::new("g", Shape::vector(2).unwrap(), SlotKind::BnGamma),
            ParamSlot::new("rv", Shape::vector(2).unwrap(), SlotKind::RunningVar),
        ]
    }

    #[test]
    fn init_and_counts() {
        let p = ModelParams::<f32>::init(slots(), &mut Rng::new(1)).unwrap();
        assert_eq!(p.learned_count(), 54 + 2);
        assert_eq!(p.total_count(), 58);
        assert_eq!(learned_count(p.slots()), 56);
        assert_eq!(p.get("rv").unwrap().data(), &[1.0, 1.0]);
        assert!(p.get("w").unwrap().max_abs() <= (6.0f32 / 27.0).sqrt());
    }

    #[test]
    fn from_parts_checks() {
        let p = ModelParams::<f32>::init(slots(), &mut Rng::new(1)).unwrap();
        let mut t = p.tensors().to_vec();
        assert!(ModelParams::from_parts(slots(), t.clone()).is_ok());
        t.pop();
        assert!(ModelParams::from_parts(slots(), t).is_err());
        let mut dup = slots();
        dup[1].name = "w".into();
        assert!(ModelParams::from_parts(dup, p.tensors().to_vec()).is_err());
    }
}
