use candle_core::{DType, Device, Tensor, Var};

use super::nn::{Init, Linear, State};
use crate::error::{Error, Result};

/// Two-layer perceptron: Linear(d, hidden) -> ReLU -> Linear(hidden, 2).
#[derive(Debug)]
pub struct Head {
    fc1: Linear,
    fc2: Linear,
    d: usize,
    hidden: usize,
}

pub const NUM_CLASSES: usize = 2;

impl Head {
    pub fn new(d: usize, hidden: usize, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        if d == 0 || hidden == 0 {
            return Err(Error::invalid(format!(
                "head widths must be positive (d = {d}, hidden = {hidden})"
            )));
        }
        let mut init = Init::new(seed, dtype, device);
        Ok(Head {
            fc1: Linear::init(&mut init, d, hidden)?,
            fc2: Linear::init(&mut init, hidden, NUM_CLASSES)?,
            d,
            hidden,
        })
    }

    pub(crate) fn load(state: &State, d: usize, hidden: usize) -> Result<Self> {
        Ok(Head {
            fc1: Linear::load(state, "fc1", d, hidden)?,
            fc2: Linear::load(state, "fc2", hidden, NUM_CLASSES)?,
            d,
            hidden,
        })
    }

    pub fn input_width(&self) -> usize {
        self.d
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    /// `[B, d]` -> `[B, 2]` logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.relu()?)
    }

    /// fc1.weight, fc1.bias, fc2.weight, fc2.bias.
    pub fn vars(&self) -> Vec<Var> {
        vec![
            self.fc1.weight.clone(),
            self.fc1.bias.clone(),
            self.fc2.weight.clone(),
            self.fc2.bias.clone(),
        ]
    }

    pub(crate) fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.fc1.collect("fc1", &mut out);
        self.fc2.collect("fc2", &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_reproducible() {
        let dev = Device::Cpu;
        let a = Head::new(8, 4, 7, DType::F32, &dev).unwrap();
        let b = Head::new(8, 4, 7, DType::F32, &dev).unwrap();
        for (x, y) in a.vars().iter().zip(b.vars()) {
            let x = x.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let y = y.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(x, y);
        }
        assert!(Head::new(8, 0, 7, DType::F32, &dev).is_err());
    }

    #[test]
    fn output_is_two_logits() {
        let dev = Device::Cpu;
        let h = Head::new(5, 3, 0, DType::F32, &dev).unwrap();
        let x = Tensor::ones((4, 5), DType::F32, &dev).unwrap();
        assert_eq!(h.forward(&x).unwrap().dims(), &[4, 2]);
    }
}
