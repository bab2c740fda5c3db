//! Training sets for the two learning stages.

use rand::Rng;

use crate::cmnet::{Domain, LabeledCovarianceSet};
use crate::error::{Error, Result};
use crate::features::block_feature;
use crate::linalg::CMatrix;
use crate::rng::stream;
use crate::sim::{complex_normal, draw_channel, generate_block, Bit, SimParams, TagFrame};

/// Augmentation noise variance applied to pilot samples.
pub const PILOT_AUGMENT_VAR: f64 = 1e-3;

/// Source-domain set: every example has its own channel draw.
///
/// Labels alternate 1, 0, 1, 0, ...; example `k` uses operating point
/// `grid[(k / 2) % grid.len()]`, so both labels of a pair share one point.
/// Example `k` is drawn from stream `(seed, k)`.
pub fn build_offline_dataset(
    seed: u64,
    grid: &[SimParams],
    count: usize,
) -> Result<LabeledCovarianceSet> {
    if count < 2 {
        return Err(Error::invalid(format!(
            "offline set needs at least 2 examples, got {count}"
        )));
    }
    let first = grid
        .first()
        .ok_or_else(|| Error::invalid("offline grid is empty"))?;
    for p in grid {
        p.validate()?;
        if p.antennas != first.antennas {
            return Err(Error::invalid("offline grid mixes antenna counts"));
        }
    }
    let list = |f: fn(&SimParams) -> f64| {
        grid.iter()
            .map(|p| format!("{}", f(p)))
            .collect::<Vec<_>>()
            .join(",")
    };
    let id = format!(
        "offline:seed={seed}:count={count}:M={}:N={}:snr_db=[{}]:zeta_db=[{}]",
        first.antennas,
        first.samples_per_symbol,
        list(|p| p.snr_db),
        list(|p| p.zeta_db)
    );
    let mut set = LabeledCovarianceSet::new(Domain::Source, id);
    for k in 0..count {
        let params = &grid[(k / 2) % grid.len()];
        let bit: Bit = (k % 2 == 0) as Bit;
        let mut rng = stream(seed, &[k as u64]);
        let ch = draw_channel(&mut rng, params)?;
        let block = generate_block(&mut rng, &ch, params, bit)?;
        set.push(block_feature(&block.x)?, bit);
    }
    Ok(set)
}

/// Target-domain set built from a frame's pilots only.
///
/// Copy `i` perturbs pilot `i mod P` with i.i.d. `CN(0, augment_var)` noise
/// on every raw sample before its covariance is taken.
pub fn build_online_dataset<R: Rng + ?Sized>(
    rng: &mut R,
    frame: &TagFrame,
    target_count: usize,
    augment_var: f64,
) -> Result<LabeledCovarianceSet> {
    let pilots = frame.pilots();
    if pilots.is_empty() {
        return Err(Error::invalid("frame carries no pilots"));
    }
    if target_count < pilots.len() {
        return Err(Error::invalid(format!(
            "online set of {target_count} cannot cover {} pilots",
            pilots.len()
        )));
    }
    if !(augment_var >= 0.0) {
        return Err(Error::invalid(format!(
            "augmentation variance must be nonnegative, got {augment_var}"
        )));
    }
    let mut set = LabeledCovarianceSet::new(
        Domain::Target,
        format!(
            "pilots:P={}:count={target_count}:aug_var={augment_var}",
            pilots.len()
        ),
    );
    for i in 0..target_count {
        let pilot = &pilots[i % pilots.len()];
        let x = if augment_var > 0.0 {
            let mut x: CMatrix = pilot.x.clone();
            for v in x.as_mut_slice() {
                *v += complex_normal(rng, augment_var);
            }
            x
        } else {
            pilot.x.clone()
        };
        set.push(block_feature(&x)?, pilot.label);
    }
    Ok(set)
}
