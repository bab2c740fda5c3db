use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "cmnet")]
    Cmnet,
    #[serde(rename = "ed")]
    Energy,
    #[serde(rename = "lrt-gaussian")]
    LrtGaussian,
    #[serde(rename = "lrt-modulated")]
    LrtModulated,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::Cmnet,
        DetectorKind::Energy,
        DetectorKind::LrtGaussian,
        DetectorKind::LrtModulated,
    ];

    pub fn id(self) -> &'static str {
        match self {
            DetectorKind::Cmnet => "cmnet",
            DetectorKind::Energy => "ed",
            DetectorKind::LrtGaussian => "lrt-gaussian",
            DetectorKind::LrtModulated => "lrt-modulated",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.id() == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    SnrDb,
    /// Samples per tag symbol N.
    Samples,
    /// Reader antennas M.
    Antennas,
    ZetaDb,
    DistanceM,
}

impl SweepVar {
    pub fn id(self) -> &'static str {
        match self {
            SweepVar::SnrDb => "snr_db",
            SweepVar::Samples => "samples",
            SweepVar::Antennas => "antennas",
            SweepVar::ZetaDb => "zeta_db",
            SweepVar::DistanceM => "distance_m",
        }
    }
}

/// Error count of one detector at one grid value.
#[derive(Debug, Clone, PartialEq)]
pub struct BerPoint {
    pub detector: DetectorKind,
    pub sweep_var: SweepVar,
    pub sweep_value: f64,
    pub trials: u64,
    pub errors: u64,
}

impl BerPoint {
    pub fn ber(&self) -> f64 {
        self.errors as f64 / self.trials as f64
    }

    /// Normal-approximation binomial 95% half-width.
    pub fn ci95(&self) -> f64 {
        let p = self.ber();
        1.96 * (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    /// Binomial standard deviation of the BER estimate.
    pub fn sigma(&self) -> f64 {
        let p = self.ber();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

pub const CSV_HEADER: [&str; 7] = [
    "detector",
    "sweep_var",
    "sweep_value",
    "trials",
    "errors",
    "ber",
    "ci95",
];

/// Points ordered by detector id, then sweep value.
pub fn sorted_points(points: &[BerPoint]) -> Vec<BerPoint> {
    let mut v = points.to_vec();
    v.sort_by(|a, b| {
        a.detector
            .id()
            .cmp(b.detector.id())
            .then(a.sweep_value.total_cmp(&b.sweep_value))
    });
    v
}

/// Writes the CSV document for `points` to `out`.
pub fn write_csv<W: Write>(points: &[BerPoint], out: W) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for p in sorted_points(points) {
        w.write_record([
            p.detector.id().to_string(),
            p.sweep_var.id().to_string(),
            format!("{}", p.sweep_value),
            p.trials.to_string(),
            p.errors.to_string(),
            format!("{}", p.ber()),
            format!("{}", p.ci95()),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn emit_csv(points: &[BerPoint], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(points, BufWriter::new(file))
}

pub fn csv_string(points: &[BerPoint]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(points, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is ASCII"))
}
