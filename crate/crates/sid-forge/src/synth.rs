//! Synthetic beam generation: plants target SIDs at configurable ranks so
//! the evaluator can be exercised end-to-end without a trained generator.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cce::BeamRecord;
use crate::error::{Error, Result};
use crate::index::{ItemId, SidIndex, SidSequence};

/// Configuration for planted beams.
#[derive(Clone, Debug)]
pub struct SynthBeamConfig {
    pub beam_width: usize,
    /// `hit_prob[r]` is the probability of planting the target SID at rank
    /// `r + 1`; ranks are tried in order and the first success wins.
    pub hit_prob: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthBeamConfig {
    fn default() -> Self {
        Self {
            beam_width: 20,
            hit_prob: vec![0.6, 0.2, 0.1],
            seed: 42,
        }
    }
}

/// One beam per target. The plant-rank decision consumes a fixed number of
/// random draws before any filler sampling, so two indexes over the same
/// items see identical plant ranks under identical seeds.
pub fn synth_beams(
    index: &SidIndex,
    targets: &[ItemId],
    cfg: &SynthBeamConfig,
) -> Result<Vec<BeamRecord>> {
    if cfg.beam_width == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    if cfg.hit_prob.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidArgument("hit probabilities must lie in [0, 1]".into()));
    }
    let n = index.n_items();

    let mut records = Vec::with_capacity(targets.len());
    for (record_idx, &target) in targets.iter().enumerate() {
        let target_sid = index.sid_of(target)?.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed
                .wrapping_add((record_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );

        let mut planted: Option<usize> = None;
        for (rank, &p) in cfg.hit_prob.iter().take(cfg.beam_width).enumerate() {
            let draw: f64 = rng.random();
            if planted.is_none() && draw < p {
                planted = Some(rank);
            }
        }

        let mut beams: Vec<SidSequence> = Vec::with_capacity(cfg.beam_width);
        for slot in 0..cfg.beam_width {
            if planted == Some(slot) {
                beams.push(target_sid.clone());
                continue;
            }
            beams.push(sample_filler(index, &target_sid, &beams, n, &mut rng));
        }
        records.push(BeamRecord::new(record_idx as u64, target, beams));
    }
    Ok(records)
}

/// Prefer valid SIDs of other items; fall back to random code sequences when
/// the index cannot supply enough distinct ones.
fn sample_filler(
    index: &SidIndex,
    target_sid: &SidSequence,
    used: &[SidSequence],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> SidSequence {
    for _ in 0..64 {
        let candidate = index
            .sid_of(ItemId(rng.random_range(0..n as u32)))
            .expect("in-range item")
            .clone();
        if &candidate != target_sid && !used.contains(&candidate) {
            return candidate;
        }
    }
    let v = index.codebook_size();
    loop {
        let codes: Vec<u32> = (0..index.sid_len()).map(|_| rng.random_range(0..v)).collect();
        let candidate = SidSequence::new(codes);
        if &candidate != target_sid && !used.contains(&candidate) {
            return candidate;
        }
    }
}
