use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::{gemm, Real, Tensor};
use super::NnError;

/// Affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn kaiming<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        let std = (2.0 / inputs as f64).sqrt();
        for w in &mut layer.weight {
            let z: f64 = rng.sample(StandardNormal);
            *w = T::of(z * std);
        }
        layer
    }

    fn check(&self, input: &Tensor<T>) -> Result<usize, NnError> {
        if input.item_len() != self.inputs || input.shape().len() != 2 {
            return Err(NnError::Shape(format!(
                "dense expects [B, {}], got {:?}",
                self.inputs,
                input.shape()
            )));
        }
        Ok(input.batch())
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let batch = self.check(input)?;
        let mut out = Tensor::zeros(vec![batch, self.outputs]);
        for row in out.data_mut().chunks_exact_mut(self.outputs) {
            row.copy_from_slice(&self.bias);
        }
        // Y = X · Wᵀ + b
        gemm(
            false,
            true,
            batch,
            self.outputs,
            self.inputs,
            T::one(),
            input.data(),
            &self.weight,
            T::one(),
            out.data_mut(),
        );
        Ok(out)
    }

    pub fn backward(
        &self,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        grad_weight: &mut [T],
        grad_bias: &mut [T],
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>, NnError> {
        let batch = self.check(input)?;
        if grad_out.shape() != [batch, self.outputs] {
            return Err(NnError::Shape(format!(
                "dense grad shape {:?}",
                grad_out.shape()
            )));
        }
        // dW += dYᵀ · X
        gemm(
            true,
            false,
            self.outputs,
            self.inputs,
            batch,
            T::one(),
            grad_out.data(),
            input.data(),
            T::one(),
            grad_weight,
        );
        for row in grad_out.data().chunks_exact(self.outputs) {
            for (gb, &g) in grad_bias.iter_mut().zip(row) {
                *gb = *gb + g;
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let mut gi = Tensor::zeros(vec![batch, self.inputs]);
        gemm(
            false,
            false,
            batch,
            self.inputs,
            self.outputs,
            T::one(),
            grad_out.data(),
            &self.weight,
            T::zero(),
            gi.data_mut(),
        );
        Ok(Some(gi))
    }
}
