//! Perfect-CSI benchmark detectors.
//!
//! Every detector maps a received block to a log-likelihood ratio (or an
//! energy) and decides `c = 1` only when the statistic is strictly on the
//! H1 side; exact ties resolve to `c = 0`.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{quadratic_form, CMatrix};
use crate::sim::{synthesize_block, Bit, ChannelRealization, SimParams};

/// Anything that turns a received block into a tag bit.
pub trait Detector {
    fn decide(&self, x: &CMatrix) -> Bit;
}

fn check_rows(x: &CMatrix, m: usize) -> Result<()> {
    if x.rows() != m {
        return Err(Error::DimensionMismatch {
            expected: format!("{m} antenna rows"),
            actual: format!("{}", x.rows()),
        });
    }
    Ok(())
}

/// Optimal LRT for a circular Gaussian source, `x_n ~ CN(0, Σ_c)` with
/// `Σ_1 = σ_s² w w^H + σ_u² I` and `Σ_0 = σ_s² h h^H + σ_u² I`.
#[derive(Debug, Clone)]
pub struct GaussianLrtDetector {
    sigma1_inv: CMatrix,
    sigma0_inv: CMatrix,
    /// `Σ_0⁻¹ − Σ_1⁻¹`, the quadratic-form kernel.
    kernel: CMatrix,
    /// `ln det Σ_0 − ln det Σ_1`.
    logdet_ratio: f64,
}

impl GaussianLrtDetector {
    pub fn new(w: &[Complex64], h: &[Complex64], sigma_s2: f64, sigma_u2: f64) -> Result<Self> {
        if w.len() != h.len() || w.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: format!("w and h of equal nonzero length ({})", h.len()),
                actual: format!("{}", w.len()),
            });
        }
        let m = w.len();
        let noise = CMatrix::identity(m).scale(sigma_u2);
        let sigma1 = CMatrix::outer(w).scale(sigma_s2).add(&noise);
        let sigma0 = CMatrix::outer(h).scale(sigma_s2).add(&noise);
        let chol1 = sigma1.cholesky().ok_or(Error::SingularCovariance("Σ1"))?;
        let chol0 = sigma0.cholesky().ok_or(Error::SingularCovariance("Σ0"))?;
        let sigma1_inv = chol1.inverse();
        let sigma0_inv = chol0.inverse();
        let kernel = sigma0_inv.sub(&sigma1_inv);
        Ok(Self {
            logdet_ratio: chol0.ln_det() - chol1.ln_det(),
            sigma1_inv,
            sigma0_inv,
            kernel,
        })
    }

    pub fn from_channel(channel: &ChannelRealization, params: &SimParams) -> Result<Self> {
        Self::new(
            &channel.w,
            &channel.h,
            params.source_power(),
            params.sigma_u2,
        )
    }

    pub fn antennas(&self) -> usize {
        self.kernel.rows()
    }

    pub fn sigma1_inv(&self) -> &CMatrix {
        &self.sigma1_inv
    }

    pub fn sigma0_inv(&self) -> &CMatrix {
        &self.sigma0_inv
    }

    pub fn logdet_ratio(&self) -> f64 {
        self.logdet_ratio
    }

    /// `Σ_n [ln det Σ_0 − ln det Σ_1 + x_n^H (Σ_0⁻¹ − Σ_1⁻¹) x_n]`.
    pub fn log_likelihood_ratio(&self, x: &CMatrix) -> Result<f64> {
        check_rows(x, self.antennas())?;
        Ok(x.columns()
            .map(|col| self.logdet_ratio + quadratic_form(&self.kernel, col))
            .sum())
    }
}

impl Detector for GaussianLrtDetector {
    fn decide(&self, x: &CMatrix) -> Bit {
        let llr = self
            .log_likelihood_ratio(x)
            .expect("block shape checked by caller");
        (llr > 0.0) as Bit
    }
}

/// Optimal LRT for an equiprobable constellation source,
/// `x_n ~ CN(v S_q, σ_u² I)` mixed uniformly over `q`.
#[derive(Debug, Clone)]
pub struct ModulatedLrtDetector {
    w: Vec<Complex64>,
    h: Vec<Complex64>,
    constellation: Vec<Complex64>,
    sigma_u2: f64,
}

impl ModulatedLrtDetector {
    pub fn new(
        w: Vec<Complex64>,
        h: Vec<Complex64>,
        constellation: Vec<Complex64>,
        sigma_u2: f64,
    ) -> Result<Self> {
        if !(sigma_u2 > 0.0) {
            return Err(Error::invalid(format!(
                "noise variance must be positive, got {sigma_u2}"
            )));
        }
        if constellation.is_empty() {
            return Err(Error::invalid("constellation must not be empty"));
        }
        if w.len() != h.len() || w.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: format!("w and h of equal nonzero length ({})", h.len()),
                actual: format!("{}", w.len()),
            });
        }
        Ok(Self {
            w,
            h,
            constellation,
            sigma_u2,
        })
    }

    pub fn from_channel(channel: &ChannelRealization, params: &SimParams) -> Result<Self> {
        let source = params.ambient_source()?;
        let points = source
            .constellation()
            .ok_or_else(|| Error::invalid("modulated LRT needs a constellation source"))?;
        Self::new(
            channel.w.clone(),
            channel.h.clone(),
            points,
            params.sigma_u2,
        )
    }

    pub fn antennas(&self) -> usize {
        self.h.len()
    }

    /// `ln Σ_q exp(−‖x − v S_q‖² / σ_u²)`, accumulated with a running
    /// max-shift so no term underflows.
    fn log_mixture(&self, x: &[Complex64], v: &[Complex64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &s in &self.constellation {
            let d: f64 = x
                .iter()
                .zip(v)
                .map(|(&xm, &vm)| (xm - vm * s).norm_sqr())
                .sum();
            let t = -d / self.sigma_u2;
            if t > max {
                sum = sum * (max - t).exp() + 1.0;
                max = t;
            } else {
                sum += (t - max).exp();
            }
        }
        max + sum.ln()
    }

    pub fn log_likelihood_ratio(&self, x: &CMatrix) -> Result<f64> {
        check_rows(x, self.antennas())?;
        Ok(x.columns()
            .map(|col| self.log_mixture(col, &self.w) - self.log_mixture(col, &self.h))
            .sum())
    }
}

impl Detector for ModulatedLrtDetector {
    fn decide(&self, x: &CMatrix) -> Bit {
        let llr = self
            .log_likelihood_ratio(x)
            .expect("block shape checked by caller");
        (llr > 0.0) as Bit
    }
}

/// `Σ_n ‖x_n‖²`.
pub fn energy_statistic(x: &CMatrix) -> f64 {
    x.frobenius_norm_sqr()
}

/// Threshold test on the received energy.
///
/// With perfect CSI the reader knows whether reflection raises or lowers
/// the mean energy (`‖w‖² ≷ ‖h‖²`); `high_is_one` records that polarity.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyDetector {
    pub gamma: f64,
    pub high_is_one: bool,
}

impl EnergyDetector {
    pub fn new(gamma: f64, high_is_one: bool) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "energy threshold must be nonnegative, got {gamma}"
            )));
        }
        Ok(Self { gamma, high_is_one })
    }

    pub fn decide_energy(&self, energy: f64) -> Bit {
        let above = if self.high_is_one {
            energy > self.gamma
        } else {
            energy < self.gamma
        };
        above as Bit
    }
}

impl Detector for EnergyDetector {
    fn decide(&self, x: &CMatrix) -> Bit {
        self.decide_energy(energy_statistic(x))
    }
}

/// Result of picking a threshold on labelled energies.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdFit {
    pub gamma: f64,
    pub errors: usize,
}

/// Minimum-error threshold for `decide = (energy > γ) == high_is_one`.
///
/// Candidate thresholds sit between consecutive sorted energies (plus one
/// below the minimum and one above the maximum). Among all candidates that
/// attain the minimum error count the middle one is chosen.
pub fn fit_energy_threshold(samples: &[(f64, Bit)], high_is_one: bool) -> Result<ThresholdFit> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sorted: Vec<(f64, Bit)> = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = sorted.len();
    let ones_total = sorted.iter().filter(|s| s.1 == 1).count();
    // split k: the first k sorted samples fall below γ.
    let mut best = usize::MAX;
    let mut best_splits = Vec::new();
    let mut ones_below = 0usize;
    for k in 0..=n {
        if k > 0 {
            ones_below += (sorted[k - 1].1 == 1) as usize;
            // γ must separate distinct values
            if k < n && sorted[k].0 == sorted[k - 1].0 {
                continue;
            }
        }
        let zeros_below = k - ones_below;
        let ones_above = ones_total - ones_below;
        let zeros_above = (n - k) - ones_above;
        let errors = if high_is_one {
            ones_below + zeros_above
        } else {
            zeros_below + ones_above
        };
        if errors < best {
            best = errors;
            best_splits.clear();
        }
        if errors == best {
            best_splits.push(k);
        }
    }
    let k = best_splits[(best_splits.len() - 1) / 2];
    let gamma = if k == 0 {
        sorted[0].0 * 0.5
    } else if k == n {
        sorted[n - 1].0 * 1.5 + f64::MIN_POSITIVE
    } else {
        0.5 * (sorted[k - 1].0 + sorted[k].0)
    };
    Ok(ThresholdFit {
        gamma: gamma.max(0.0),
        errors: best,
    })
}

/// Genie-aided energy detector: `trials` labelled calibration blocks are
/// drawn under the true channel (alternating labels) and the
/// minimum-empirical-BER threshold is kept.
pub fn calibrate_ed_threshold<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    params: &SimParams,
    trials: usize,
    rng: &mut R,
) -> Result<EnergyDetector> {
    if trials < 1000 {
        return Err(Error::invalid(format!(
            "ED calibration needs at least 1000 trials, got {trials}"
        )));
    }
    params.validate()?;
    let source = params.ambient_source()?;
    let samples: Vec<(f64, Bit)> = (0..trials)
        .map(|i| {
            let bit = (i % 2 == 0) as Bit;
            let blk = synthesize_block(
                rng,
                channel,
                &source,
                params.samples_per_symbol,
                params.sigma_u2,
                bit,
            );
            (energy_statistic(&blk.x), bit)
        })
        .collect();
    let high_is_one =
        crate::linalg::vec_norm_sqr(&channel.w) >= crate::linalg::vec_norm_sqr(&channel.h);
    let fit = fit_energy_threshold(&samples, high_is_one)?;
    EnergyDetector::new(fit.gamma, high_is_one)
}
