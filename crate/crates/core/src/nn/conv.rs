//! Same-padded, stride-1 2-D cross-correlation.

use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::{gemm, Real, Tensor};
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd square kernel side.
    pub kernel: usize,
    /// `[out][in][ky][kx]`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// Kaiming fan-in Gaussian weights, zero bias.
    pub fn kaiming<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels, kernel);
        let std = (2.0 / layer.patch_len() as f64).sqrt();
        for w in &mut layer.weight {
            let z: f64 = rng.sample(StandardNormal);
            *w = T::of(z * std);
        }
        layer
    }

    /// Rows of the unfolded input: `in · k · k`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn check_input(&self, shape: &[usize]) -> Result<(usize, usize, usize), NnError> {
        match shape {
            [b, c, h, w] if *c == self.in_channels => Ok((*b, *h, *w)),
            _ => Err(NnError::Shape(format!(
                "conv expects [B, {}, H, W], got {shape:?}",
                self.in_channels
            ))),
        }
    }

    /// Returns the output and, when `keep_cols`, the unfolded input
    /// (`B × patch_len × H·W`) needed by the backward pass.
    pub fn forward(
        &self,
        input: &Tensor<T>,
        keep_cols: bool,
    ) -> Result<(Tensor<T>, Option<Vec<T>>), NnError> {
        let (batch, h, w) = self.check_input(input.shape())?;
        let hw = h * w;
        let pl = self.patch_len();
        let mut out = Tensor::zeros(vec![batch, self.out_channels, h, w]);
        let mut scratch = vec![T::zero(); pl * hw];
        let mut kept = if keep_cols {
            vec![T::zero(); batch * pl * hw]
        } else {
            Vec::new()
        };
        for b in 0..batch {
            let cols: &mut [T] = if keep_cols {
                &mut kept[b * pl * hw..(b + 1) * pl * hw]
            } else {
                &mut scratch
            };
            im2col(input.item(b), self.in_channels, h, w, self.kernel, cols);
            let o =
                &mut out.data_mut()[b * self.out_channels * hw..(b + 1) * self.out_channels * hw];
            for (oc, bias) in o.chunks_exact_mut(hw).zip(&self.bias) {
                oc.fill(*bias);
            }
            gemm(
                false,
                false,
                self.out_channels,
                hw,
                pl,
                T::one(),
                &self.weight,
                cols,
                T::one(),
                o,
            );
        }
        Ok((out, keep_cols.then_some(kept)))
    }

    /// Accumulates weight/bias gradients and optionally returns the input
    /// gradient.
    pub fn backward(
        &self,
        cols: &[T],
        in_shape: &[usize],
        grad_out: &Tensor<T>,
        grad_weight: &mut [T],
        grad_bias: &mut [T],
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>, NnError> {
        let (batch, h, w) = self.check_input(in_shape)?;
        let hw = h * w;
        let pl = self.patch_len();
        if grad_out.shape() != [batch, self.out_channels, h, w] {
            return Err(NnError::Shape(format!(
                "conv grad shape {:?}",
                grad_out.shape()
            )));
        }
        let mut grad_in = need_input_grad.then(|| Tensor::zeros(in_shape.to_vec()));
        let mut dcols = vec![T::zero(); pl * hw];
        for b in 0..batch {
            let go = &grad_out.data()[b * self.out_channels * hw..(b + 1) * self.out_channels * hw];
            let c = &cols[b * pl * hw..(b + 1) * pl * hw];
            // dW += dOut · colsᵀ
            gemm(
                false,
                true,
                self.out_channels,
                pl,
                hw,
                T::one(),
                go,
                c,
                T::one(),
                grad_weight,
            );
            for (gb, row) in grad_bias.iter_mut().zip(go.chunks_exact(hw)) {
                *gb = *gb + row.iter().copied().sum::<T>();
            }
            if let Some(gi) = grad_in.as_mut() {
                // dcols = Wᵀ · dOut
                gemm(
                    true,
                    false,
                    pl,
                    hw,
                    self.out_channels,
                    T::one(),
                    &self.weight,
                    go,
                    T::zero(),
                    &mut dcols,
                );
                let item = self.in_channels * hw;
                col2im(
                    &dcols,
                    self.in_channels,
                    h,
                    w,
                    self.kernel,
                    &mut gi.data_mut()[b * item..(b + 1) * item],
                );
            }
        }
        Ok(grad_in)
    }

    /// Same layer with zero biases.
    pub fn without_bias(&self) -> Self {
        let mut c = self.clone();
        c.bias.iter_mut().for_each(|b| *b = T::zero());
        c
    }
}

/// Unfolds `x` (`C×H×W`) into `cols` (`C·k·k × H·W`), zero padded.
fn im2col<T: Real>(x: &[T], channels: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x_out, d) in dst.iter_mut().enumerate() {
                        let sx = x_out as isize + dx;
                        *d = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back and accumulates into `x`.
fn col2im<T: Real>(cols: &[T], channels: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..channels {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x_out, &g) in src.iter().enumerate() {
                        let sx = x_out as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] = dst[sx as usize] + g;
                        }
                    }
                }
            }
        }
    }
}
