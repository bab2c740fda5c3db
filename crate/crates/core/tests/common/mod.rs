//! Direct density evaluation for the likelihood-ratio oracles.

use ambc_core::detectors::{GaussianLrtDetector, ModulatedLrtDetector};
use ambc_core::linalg::CMatrix;
use ambc_core::rng::stream;
use ambc_core::sim::{draw_channel, generate_block, AmbientSource, SimParams, SourceKind};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

fn column(x: &CMatrix, n: usize) -> DVector<Complex64> {
    DVector::from_column_slice(x.col(n))
}

/// `Π_n CN(x_n; 0, σ_s² c c^H + σ_u² I)`.
pub fn gaussian_density(x: &CMatrix, c: &[Complex64], s2: f64, u2: f64) -> f64 {
    let m = c.len();
    let c = DVector::from_column_slice(c);
    let sigma = &c * c.adjoint() * Complex64::new(s2, 0.0)
        + DMatrix::<Complex64>::identity(m, m) * Complex64::new(u2, 0.0);
    let inv = sigma.clone().try_inverse().expect("positive definite");
    let det = sigma.determinant().re;
    (0..x.cols())
        .map(|n| {
            let v = column(x, n);
            let q = (v.adjoint() * &inv * &v)[(0, 0)].re;
            (-q).exp() / (PI.powi(m as i32) * det)
        })
        .product()
}

/// `Π_n (1/Q) Σ_q CN(x_n; c s_q, σ_u² I)`.
pub fn mixture_density(x: &CMatrix, c: &[Complex64], points: &[Complex64], u2: f64) -> f64 {
    let m = c.len();
    let c = DVector::from_column_slice(c);
    (0..x.cols())
        .map(|n| {
            let v = column(x, n);
            points
                .iter()
                .map(|&s| {
                    let d = &v - &c * s;
                    (-d.norm_squared() / u2).exp() / (PI * u2).powi(m as i32)
                })
                .sum::<f64>()
                / points.len() as f64
        })
        .product()
}

pub struct Instance {
    pub params: SimParams,
    pub x: CMatrix,
    pub w: Vec<Complex64>,
    pub h: Vec<Complex64>,
}

pub fn instance(k: u64, source: SourceKind) -> Instance {
    let mut rng = stream(77, &[k]);
    let m = rng.random_range(1..=3);
    let n = rng.random_range(1..=4);
    let snr = rng.random_range(-5.0..10.0);
    let zeta = rng.random_range(-15.0..0.0);
    let mut params = SimParams::new(m, n, snr, zeta, source);
    params.sigma_u2 = rng.random_range(0.5..2.0);
    let ch = draw_channel(&mut rng, &params).unwrap();
    let bit = rng.random_range(0..=1u8);
    let x = generate_block(&mut rng, &ch, &params, bit).unwrap().x;
    Instance {
        params,
        x,
        w: ch.w.clone(),
        h: ch.h.clone(),
    }
}

pub fn quotient_error(llr: f64, quotient: f64) -> f64 {
    (llr.exp() - quotient).abs() / quotient
}

/// Largest quotient error of the Gaussian-source LRT over `count` instances.
pub fn gaussian_worst(count: u64) -> f64 {
    (0..count)
        .map(|k| {
            let it = instance(k, SourceKind::Gaussian);
            let (s2, u2) = (it.params.source_power(), it.params.sigma_u2);
            let det = GaussianLrtDetector::new(&it.w, &it.h, s2, u2).unwrap();
            let q = gaussian_density(&it.x, &it.w, s2, u2) / gaussian_density(&it.x, &it.h, s2, u2);
            quotient_error(det.log_likelihood_ratio(&it.x).unwrap(), q)
        })
        .fold(0.0, f64::max)
}

/// Largest quotient error of the modulated-source LRT over `count`
/// instances cycling through BPSK, QPSK and 8-PSK.
pub fn modulated_worst(count: u64) -> f64 {
    (0..count)
        .map(|k| {
            let order = [2, 4, 8][k as usize % 3];
            let it = instance(10_000 + k, SourceKind::Psk { order });
            let u2 = it.params.sigma_u2;
            let points = AmbientSource::new(it.params.source, it.params.source_power())
                .unwrap()
                .constellation()
                .unwrap();
            let det =
                ModulatedLrtDetector::new(it.w.clone(), it.h.clone(), points.clone(), u2).unwrap();
            let q = mixture_density(&it.x, &it.w, &points, u2)
                / mixture_density(&it.x, &it.h, &points, u2);
            quotient_error(det.log_likelihood_ratio(&it.x).unwrap(), q)
        })
        .fold(0.0, f64::max)
}
