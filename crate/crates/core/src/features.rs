//! Sample covariance features.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;

/// `R = (1/N) X X^H`, kept exactly Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance {
    r: CMatrix,
}

impl SampleCovariance {
    /// Wraps a matrix, symmetrizing it to its Hermitian part.
    pub fn from_matrix(r: CMatrix) -> Result<Self> {
        if !r.is_square() {
            return Err(Error::DimensionMismatch {
                expected: "square matrix".into(),
                actual: format!("{}x{}", r.rows(), r.cols()),
            });
        }
        Ok(Self {
            r: r.hermitian_part(),
        })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.r
    }

    pub fn antennas(&self) -> usize {
        self.r.rows()
    }

    pub fn into_matrix(self) -> CMatrix {
        self.r
    }
}

pub fn sample_covariance(x: &CMatrix) -> Result<SampleCovariance> {
    let (m, n) = (x.rows(), x.cols());
    if n == 0 {
        return Err(Error::invalid(
            "sample covariance needs at least one column",
        ));
    }
    let mut r = CMatrix::zeros(m, m);
    // upper triangle of Σ_n x_n x_n^H, then mirror
    for col in x.columns() {
        for j in 0..m {
            let xj = col[j].conj();
            for i in 0..=j {
                r[(i, j)] += col[i] * xj;
            }
        }
    }
    let scale = 1.0 / n as f64;
    for j in 0..m {
        for i in 0..j {
            let v = r[(i, j)] * scale;
            r[(i, j)] = v;
            r[(j, i)] = v.conj();
        }
        r[(j, j)] = Complex64::new(r[(j, j)].re * scale, 0.0);
    }
    Ok(SampleCovariance { r })
}

/// M×M×2 real tensor: channel 0 holds `Re R`, channel 1 holds `Im R`.
///
/// Stored channel-major (`[channel][row][col]`), which is the layout the
/// network consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    antennas: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn from_raw(antennas: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * antennas * antennas {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", 2 * antennas * antennas),
                actual: format!("{}", data.len()),
            });
        }
        Ok(Self { antennas, data })
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        let m = self.antennas;
        self.data[(channel * m + row) * m + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Recombines the two channels into `R`.
    pub fn to_matrix(&self) -> CMatrix {
        let m = self.antennas;
        CMatrix::from_fn(m, m, |r, c| {
            Complex64::new(self.get(r, c, 0), self.get(r, c, 1))
        })
    }

    /// Same tensor scaled by `s` (used for homogeneity probes).
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            antennas: self.antennas,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `σ²·I_M` (zero imaginary channel).
    pub fn scaled_identity(antennas: usize, sigma2: f64) -> Self {
        let m = antennas;
        let mut data = vec![0.0; 2 * m * m];
        for i in 0..m {
            data[i * m + i] = sigma2;
        }
        Self { antennas, data }
    }
}

/// Lossless split of `R` into real and imaginary channels; no normalization.
pub fn to_feature_tensor(r: &SampleCovariance) -> FeatureTensor {
    let m = r.antennas();
    let mut data = vec![0.0; 2 * m * m];
    for row in 0..m {
        for col in 0..m {
            let z = r.r[(row, col)];
            data[row * m + col] = z.re;
            data[(m + row) * m + col] = z.im;
        }
    }
    FeatureTensor { antennas: m, data }
}

/// Convenience: covariance feature of one received block.
pub fn block_feature(x: &CMatrix) -> Result<FeatureTensor> {
    Ok(to_feature_tensor(&sample_covariance(x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::sim::complex_normal;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_columns() {
        let r = sample_covariance(&CMatrix::identity(2)).unwrap();
        assert_eq!(*r.matrix(), CMatrix::identity(2).scale(0.5));
    }

    #[test]
    fn single_column_is_rank_one() {
        let x = vec![c(1.0, 2.0), c(-0.5, 0.25), c(0.0, -1.0)];
        let r = sample_covariance(&CMatrix::from_columns(std::slice::from_ref(&x))).unwrap();
        let expect = CMatrix::outer(&x);
        assert!(r.matrix().sub(&expect).frobenius_norm() < 1e-15);
    }

    #[test]
    fn empty_block_rejected() {
        assert!(sample_covariance(&CMatrix::zeros(3, 0)).is_err());
    }

    #[test]
    fn large_sample_white_noise_approaches_scaled_identity() {
        let mut rng = seeded(12);
        let sigma2 = 1.7;
        let n = 100_000;
        let cols: Vec<Vec<Complex64>> = (0..n)
            .map(|_| (0..8).map(|_| complex_normal(&mut rng, sigma2)).collect())
            .collect();
        let r = sample_covariance(&CMatrix::from_columns(&cols)).unwrap();
        let target = CMatrix::identity(8).scale(sigma2);
        let rel = r.matrix().sub(&target).frobenius_norm() / target.frobenius_norm();
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn tensor_channels() {
        let r = SampleCovariance::from_matrix(CMatrix::identity(3)).unwrap();
        let t = to_feature_tensor(&r);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(t.get(i, j, 0), if i == j { 1.0 } else { 0.0 });
                assert_eq!(t.get(i, j, 1), 0.0);
            }
        }

        let mut m = CMatrix::identity(2);
        m[(0, 1)] = c(1.0, 2.0);
        m[(1, 0)] = c(1.0, -2.0);
        let t = to_feature_tensor(&SampleCovariance::from_matrix(m.clone()).unwrap());
        assert_eq!(t.get(0, 1, 0), 1.0);
        assert_eq!(t.get(0, 1, 1), 2.0);
        assert_eq!(t.to_matrix(), m);
    }

    #[test]
    fn trace_is_mean_column_energy() {
        let mut rng = seeded(3);
        let cols: Vec<Vec<Complex64>> = (0..7)
            .map(|_| (0..4).map(|_| complex_normal(&mut rng, 2.0)).collect())
            .collect();
        let x = CMatrix::from_columns(&cols);
        let r = sample_covariance(&x).unwrap();
        let energy = crate::detectors::energy_statistic(&x);
        assert!((r.matrix().trace().re - energy / 7.0).abs() < 1e-12);
    }
}
