use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use super::NnError;

/// Floating-point element type of the engine.
///
/// Training runs in `f32`; verification paths (finite differences,
/// homogeneity) run in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + Send + Sync + 'static
{
    /// Raw strided GEMM, `C ← α·A·B + β·C`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// regions, with `c` not aliasing `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite float")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `C (m×n) ← α·op(A)·op(B) + β·C` on dense row-major buffers.
///
/// `op(A)` is `m×k`: `A` is stored `m×k`, or `k×m` when `trans_a`.
/// `op(B)` is `k×n`: `B` is stored `k×n`, or `n×k` when `trans_b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: A too short");
    assert!(b.len() >= k * n, "gemm: B too short");
    assert!(c.len() >= m * n, "gemm: C too short");
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: bounds asserted above; `c` is a distinct &mut borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense row-major tensor. The leading dimension is the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NnError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(NnError::Shape(format!(
                "shape {shape:?} needs {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Elements per batch entry.
    pub fn item_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn item(&self, i: usize) -> &[T] {
        let l = self.item_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, NnError> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(NnError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts element type (e.g. `f32` model → `f64` verification copy).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Stacks equally sized items into a `[B, item_shape...]` tensor.
    pub fn stack(item_shape: &[usize], items: &[&[T]]) -> Result<Self, NnError> {
        let l: usize = item_shape.iter().product();
        let mut data = Vec::with_capacity(l * items.len());
        for it in items {
            if it.len() != l {
                return Err(NnError::Shape(format!(
                    "item of length {} does not fit {item_shape:?}",
                    it.len()
                )));
            }
            data.extend_from_slice(it);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(item_shape);
        Ok(Self { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2,3],[4,5,6]] (2×3), B = [[1,0],[0,1],[1,1]] (3×2)
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0f64; 4];
        gemm(false, false, 2, 2, 3, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);

        // Aᵀ stored as 3×2
        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0f64, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [0.0f64; 4];
        gemm(true, true, 2, 2, 3, 1.0, &at, &bt, 0.0, &mut c2);
        assert_eq!(c2, c);
    }

    #[test]
    fn shape_checked() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::zeros(vec![2, 3]);
        assert_eq!(t.item_len(), 3);
        assert!(t.reshape(vec![6, 1]).is_ok());
    }
}
