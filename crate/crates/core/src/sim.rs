//! Two-hypothesis ambient backscatter channel.
//!
//! A single-antenna ambient source broadcasts `s_n`; the M-antenna reader
//! receives the direct path `h s_n` and, while the tag reflects (bit 1), the
//! backscatter path `α f g s_n`. With `w = h + α f g`:
//!
//! ```text
//! H1: x_n = w s_n + u_n
//! H0: x_n = h s_n + u_n,       u_n ~ CN(0, σ_u² I_M)
//! ```
//!
//! Unit-variance channel convention: `E‖h‖² = E‖g‖² = M` and `E|f|² = 1`, so
//! the direct-link SNR is `σ_s²/σ_u²` and the relative backscatter gain is
//! `ζ = |α|²`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;

/// Tag bit carried by one symbol: 1 = reflect (H1), 0 = silent (H0).
pub type Bit = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SourceKind {
    Gaussian,
    Psk { order: usize },
}

impl SourceKind {
    pub const QPSK: SourceKind = SourceKind::Psk { order: 4 };

    pub fn label(&self) -> String {
        match self {
            SourceKind::Gaussian => "gaussian".to_string(),
            SourceKind::Psk { order: 4 } => "qpsk".to_string(),
            SourceKind::Psk { order } => format!("{order}psk"),
        }
    }
}

/// Ambient RF source with its transmit power.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientSource {
    pub kind: SourceKind,
    pub sigma_s2: f64,
}

impl AmbientSource {
    pub fn new(kind: SourceKind, sigma_s2: f64) -> Result<Self> {
        if !(sigma_s2 > 0.0) || !sigma_s2.is_finite() {
            return Err(Error::invalid(format!(
                "source power must be positive, got {sigma_s2}"
            )));
        }
        if let SourceKind::Psk { order } = kind {
            if order < 2 {
                return Err(Error::invalid(format!(
                    "PSK order must be at least 2, got {order}"
                )));
            }
        }
        Ok(Self { kind, sigma_s2 })
    }

    /// Equiprobable constellation points; `None` for the Gaussian source.
    ///
    /// Q-th roots of unity scaled to `√σ_s²`, rotated by π/4 for Q = 4 so
    /// QPSK is `{±1 ± j}·√(σ_s²/2)`.
    pub fn constellation(&self) -> Option<Vec<Complex64>> {
        match self.kind {
            SourceKind::Gaussian => None,
            SourceKind::Psk { order } => {
                let amp = self.sigma_s2.sqrt();
                let offset = if order == 4 { PI / 4.0 } else { 0.0 };
                Some(
                    (0..order)
                        .map(|q| {
                            Complex64::from_polar(amp, 2.0 * PI * q as f64 / order as f64 + offset)
                        })
                        .collect(),
                )
            }
        }
    }
}

/// Simulation parameters for one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Reader antenna count M.
    pub antennas: usize,
    /// Source samples per tag symbol N (source-to-tag ratio).
    pub samples_per_symbol: usize,
    /// Direct-link SNR in dB.
    pub snr_db: f64,
    /// Relative backscatter coefficient ζ in dB; `-inf` disables the tag path.
    pub zeta_db: f64,
    /// Noise variance per antenna.
    #[serde(default = "default_noise")]
    pub sigma_u2: f64,
    pub source: SourceKind,
    /// Fading model of the source-to-tag coefficient `f`.
    #[serde(default)]
    pub tag_link: TagLinkFading,
}

fn default_noise() -> f64 {
    1.0
}

/// Distribution of the scalar source-to-tag coefficient `f`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagLinkFading {
    /// `f = e^{jφ}`, φ uniform: unit gain with random phase.
    #[default]
    UnitModulus,
    /// `f ~ CN(0, 1)`.
    Rayleigh,
}

impl SimParams {
    pub fn new(
        antennas: usize,
        samples_per_symbol: usize,
        snr_db: f64,
        zeta_db: f64,
        source: SourceKind,
    ) -> Self {
        Self {
            antennas,
            samples_per_symbol,
            snr_db,
            zeta_db,
            sigma_u2: 1.0,
            source,
            tag_link: TagLinkFading::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return Err(Error::invalid("antenna count must be at least 1"));
        }
        if self.samples_per_symbol == 0 {
            return Err(Error::invalid("samples per symbol must be at least 1"));
        }
        if !(self.sigma_u2 > 0.0) || !self.sigma_u2.is_finite() {
            return Err(Error::invalid(format!(
                "noise variance must be positive, got {}",
                self.sigma_u2
            )));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::invalid("snr_db must be finite"));
        }
        if self.zeta_db.is_nan() || self.zeta_db == f64::INFINITY {
            return Err(Error::invalid("zeta_db must be finite or -inf"));
        }
        self.ambient_source().map(|_| ())
    }

    /// `σ_s² = σ_u² · 10^(SNR/10)`.
    pub fn source_power(&self) -> f64 {
        self.sigma_u2 * db_to_linear(self.snr_db)
    }

    pub fn ambient_source(&self) -> Result<AmbientSource> {
        AmbientSource::new(self.source, self.source_power())
    }

    /// Linear ζ.
    pub fn zeta(&self) -> f64 {
        db_to_linear(self.zeta_db)
    }

    /// Real reflection coefficient `α = √ζ`.
    pub fn alpha(&self) -> f64 {
        self.zeta().sqrt()
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Standard circular complex Gaussian scaled to variance `var`.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// One draw of the direct and backscatter paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Source → reader.
    pub h: Vec<Complex64>,
    /// Tag → reader.
    pub g: Vec<Complex64>,
    /// Source → tag.
    pub f: Complex64,
    /// Tag reflection coefficient.
    pub alpha: Complex64,
    /// Cached `h + α f g`.
    pub w: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn new(
        h: Vec<Complex64>,
        g: Vec<Complex64>,
        f: Complex64,
        alpha: Complex64,
    ) -> Result<Self> {
        if h.len() != g.len() || h.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: format!("g of length {}", h.len()),
                actual: format!("{}", g.len()),
            });
        }
        let w = h
            .iter()
            .zip(&g)
            .map(|(&hm, &gm)| hm + alpha * f * gm)
            .collect();
        Ok(Self { h, g, f, alpha, w })
    }

    pub fn antennas(&self) -> usize {
        self.h.len()
    }

    /// Channel vector when the tag is in state `bit`.
    pub fn effective(&self, bit: Bit) -> &[Complex64] {
        if bit == 1 {
            &self.w
        } else {
            &self.h
        }
    }
}

/// `h`, `g` entries i.i.d. CN(0, 1); `f` per [`TagLinkFading`]; `α = √ζ`.
pub fn draw_channel<R: Rng + ?Sized>(
    rng: &mut R,
    params: &SimParams,
) -> Result<ChannelRealization> {
    params.validate()?;
    let m = params.antennas;
    let h: Vec<_> = (0..m).map(|_| complex_normal(rng, 1.0)).collect();
    let g: Vec<_> = (0..m).map(|_| complex_normal(rng, 1.0)).collect();
    let f = match params.tag_link {
        TagLinkFading::UnitModulus => {
            Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
        }
        TagLinkFading::Rayleigh => complex_normal(rng, 1.0),
    };
    ChannelRealization::new(h, g, f, Complex64::new(params.alpha(), 0.0))
}

/// `count` i.i.d. source samples.
pub fn sample_source<R: Rng + ?Sized>(
    rng: &mut R,
    source: &AmbientSource,
    count: usize,
) -> Result<Vec<Complex64>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut out = Vec::with_capacity(count);
    match source.constellation() {
        None => out.extend((0..count).map(|_| complex_normal(rng, source.sigma_s2))),
        Some(points) => out.extend((0..count).map(|_| points[rng.random_range(0..points.len())])),
    }
    Ok(out)
}

/// Received samples of one tag symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct TagSymbolBlock {
    /// M×N; column n is `x_n`.
    pub x: CMatrix,
    pub label: Bit,
}

impl TagSymbolBlock {
    pub fn antennas(&self) -> usize {
        self.x.rows()
    }

    pub fn samples(&self) -> usize {
        self.x.cols()
    }
}

/// Draws one tag symbol. Column n is `w s_n + u_n` for `bit = 1` and
/// `h s_n + u_n` for `bit = 0`.
pub fn generate_block<R: Rng + ?Sized>(
    rng: &mut R,
    channel: &ChannelRealization,
    params: &SimParams,
    bit: Bit,
) -> Result<TagSymbolBlock> {
    params.validate()?;
    if channel.antennas() != params.antennas {
        return Err(Error::DimensionMismatch {
            expected: format!("{} antennas", params.antennas),
            actual: format!("{}", channel.antennas()),
        });
    }
    if bit > 1 {
        return Err(Error::invalid(format!("tag bit must be 0 or 1, got {bit}")));
    }
    let source = params.ambient_source()?;
    Ok(synthesize_block(
        rng,
        channel,
        &source,
        params.samples_per_symbol,
        params.sigma_u2,
        bit,
    ))
}

pub(crate) fn synthesize_block<R: Rng + ?Sized>(
    rng: &mut R,
    channel: &ChannelRealization,
    source: &AmbientSource,
    samples: usize,
    noise_var: f64,
    bit: Bit,
) -> TagSymbolBlock {
    let m = channel.antennas();
    let v = channel.effective(bit);
    let points = source.constellation();
    let noise_scale = (0.5 * noise_var).sqrt();
    let mut data = Vec::with_capacity(m * samples);
    for _ in 0..samples {
        let s = match &points {
            None => complex_normal(rng, source.sigma_s2),
            Some(p) => p[rng.random_range(0..p.len())],
        };
        for &vm in v {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            data.push(vm * s + Complex64::new(re * noise_scale, im * noise_scale));
        }
    }
    TagSymbolBlock {
        x: CMatrix::from_column_major(m, samples, data),
        label: bit,
    }
}

/// One slow-fading frame: `P` pilots followed by `T - P` data symbols, all
/// under the same channel.
#[derive(Debug, Clone)]
pub struct TagFrame {
    pub channel: ChannelRealization,
    pub blocks: Vec<TagSymbolBlock>,
    pub pilot_count: usize,
}

impl TagFrame {
    pub fn pilots(&self) -> &[TagSymbolBlock] {
        &self.blocks[..self.pilot_count]
    }

    pub fn data(&self) -> &[TagSymbolBlock] {
        &self.blocks[self.pilot_count..]
    }

    pub fn pilot_labels(&self) -> Vec<Bit> {
        self.pilots().iter().map(|b| b.label).collect()
    }

    pub fn symbol_count(&self) -> usize {
        self.blocks.len()
    }
}

/// Alternating 1, 0, 1, 0, ... so both hypotheses appear among the pilots.
pub fn pilot_pattern(count: usize) -> Vec<Bit> {
    (0..count).map(|i| if i % 2 == 0 { 1 } else { 0 }).collect()
}

pub fn generate_frame<R: Rng + ?Sized>(
    rng: &mut R,
    channel: &ChannelRealization,
    params: &SimParams,
    symbols: usize,
    pilots: usize,
    data_bits: Option<&[Bit]>,
) -> Result<TagFrame> {
    if pilots >= symbols {
        return Err(Error::invalid(format!(
            "pilot count {pilots} must be smaller than the frame length {symbols}"
        )));
    }
    if let Some(bits) = data_bits {
        if bits.len() != symbols - pilots {
            return Err(Error::DimensionMismatch {
                expected: format!("{} data bits", symbols - pilots),
                actual: format!("{}", bits.len()),
            });
        }
    }
    params.validate()?;
    let source = params.ambient_source()?;
    let mut blocks = Vec::with_capacity(symbols);
    for bit in pilot_pattern(pilots) {
        blocks.push(synthesize_block(
            rng,
            channel,
            &source,
            params.samples_per_symbol,
            params.sigma_u2,
            bit,
        ));
    }
    for i in 0..symbols - pilots {
        let bit = match data_bits {
            Some(bits) => bits[i],
            None => rng.random_range(0..=1u8),
        };
        if bit > 1 {
            return Err(Error::invalid(format!("tag bit must be 0 or 1, got {bit}")));
        }
        blocks.push(synthesize_block(
            rng,
            channel,
            &source,
            params.samples_per_symbol,
            params.sigma_u2,
            bit,
        ));
    }
    Ok(TagFrame {
        channel: channel.clone(),
        blocks,
        pilot_count: pilots,
    })
}
