//! Collision-corrected evaluation of ranked SID beams.
//!
//! A beam of generated SID sequences is scored twice: at the SID level
//! (standard Hit/NDCG on the ranked sequences) and at the item level, where
//! each sequence is expanded to its collision group and the target item
//! receives uniform fractional credit across the group. The expanded item
//! ranking concatenates the groups in beam order; items inside one group are
//! unordered, so the metrics depend only on the group sizes, never on any
//! within-group ordering.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{ItemId, SidIndex, SidSequence};

/// One test case: a target item and the ranked beam generated for it.
///
/// Beams are deduplicated at construction, keeping the first occurrence of
/// each sequence; a duplicate would double-count its group in the expansion.
#[derive(Clone, Debug)]
pub struct BeamRecord {
    pub user: u64,
    pub target_item: ItemId,
    beams: Vec<SidSequence>,
}

impl BeamRecord {
    pub fn new(user: u64, target_item: ItemId, beams: Vec<SidSequence>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let beams = beams
            .into_iter()
            .filter(|s| seen.insert(s.clone()))
            .collect();
        Self {
            user,
            target_item,
            beams,
        }
    }

    /// Rank-ordered, duplicate-free beam (rank 1 first).
    pub fn beams(&self) -> &[SidSequence] {
        &self.beams
    }
}

/// Where the target group lands in the expanded item ranking.
///
/// `r` is the first rank (1-based) of the target SID within the top-K beam,
/// 0 when absent. `g` is the target group size, `p` the expanded start
/// position of the group, and `m` how many of its items fall at or before
/// position K.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpandedMatch {
    pub r: usize,
    pub g: usize,
    pub p: usize,
    pub m: usize,
}

/// Locate the target item's SID in the beam and expand.
///
/// Sequences assigned to no item contribute zero expanded positions, so a
/// beam full of unknown sequences leaves `p` at 1.
pub fn match_target(
    beam: &[SidSequence],
    index: &SidIndex,
    target: ItemId,
    k: usize,
) -> Result<ExpandedMatch> {
    let target_sid = index.sid_of(target)?;
    let g = index.collision_group(target_sid).len();

    let depth = beam.len().min(k);
    let r = beam[..depth]
        .iter()
        .position(|s| s == target_sid)
        .map(|q| q + 1)
        .unwrap_or(0);
    if r == 0 {
        return Ok(ExpandedMatch { r: 0, g, p: 0, m: 0 });
    }

    let p = 1 + beam[..r - 1]
        .iter()
        .map(|s| index.collision_group(s).len())
        .sum::<usize>();
    let m = g.min((k + 1).saturating_sub(p));
    Ok(ExpandedMatch { r, g, p, m })
}

/// Expected item-level hit under a uniform prior over the target group:
/// `m / g`. A missing group (`g = 0`) scores 0.
pub fn item_hit(m: &ExpandedMatch) -> f64 {
    if m.g == 0 {
        return 0.0;
    }
    m.m as f64 / m.g as f64
}

/// Item-level NDCG: log-discounted gain of the in-window group items,
/// averaged over the group. No IDCG division; a single target item already
/// has an ideal DCG of 1.
pub fn item_ndcg(m: &ExpandedMatch) -> f64 {
    if m.g == 0 || m.m == 0 {
        return 0.0;
    }
    let mut sum = 0.0f64;
    for e in 1..=m.m {
        sum += 1.0 / ((m.p + e) as f64).log2();
    }
    sum / m.g as f64
}

/// SID-level reference metrics on the ranked beam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SidMetrics {
    pub hit: f64,
    pub ndcg: f64,
}

pub fn sid_metrics(beam: &[SidSequence], target_sid: &SidSequence, k: usize) -> SidMetrics {
    let depth = beam.len().min(k);
    match beam[..depth].iter().position(|s| s == target_sid) {
        Some(q) => SidMetrics {
            hit: 1.0,
            ndcg: 1.0 / ((q + 2) as f64).log2(),
        },
        None => SidMetrics { hit: 0.0, ndcg: 0.0 },
    }
}

/// Relative excess of SID-level hit rate over item-level hit rate, as a
/// percentage. `None` when the item-level rate is zero.
pub fn inflation_percent(sid_hit: f64, item_hit: f64) -> Option<f64> {
    if item_hit == 0.0 {
        None
    } else {
        Some((sid_hit / item_hit - 1.0) * 100.0)
    }
}

/// Mean metrics at one cutoff.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct KMetrics {
    pub sid_hit: f64,
    pub sid_ndcg: f64,
    pub item_hit: f64,
    pub item_ndcg: f64,
    pub inflation_percent: Option<f64>,
}

/// Aggregated evaluation over a record stream.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub n_records: u64,
    /// Records whose target item lies outside the index; scored zero.
    pub skipped_targets: u64,
    /// Records whose beam is shorter than the largest requested K.
    pub short_beams: u64,
    pub per_k: BTreeMap<usize, KMetrics>,
}

/// Kahan compensated sum, so means do not depend on accumulation noise.
#[derive(Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum
    }
}

#[derive(Clone, Copy, Default)]
struct KAccum {
    sid_hit: KahanSum,
    sid_ndcg: KahanSum,
    item_hit: KahanSum,
    item_ndcg: KahanSum,
}

/// Score every record at every requested cutoff and average.
///
/// Records are independent; this accumulates in record order so results are
/// identical for a fixed record order regardless of how the stream was
/// produced.
pub fn evaluate(
    records: impl IntoIterator<Item = BeamRecord>,
    index: &SidIndex,
    ks: &[usize],
) -> Result<MetricsReport> {
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Error::InvalidArgument("need at least one cutoff K >= 1".into()));
    }
    let k_max = *ks.last().unwrap();

    let mut accums: Vec<KAccum> = vec![KAccum::default(); ks.len()];
    let mut n_records = 0u64;
    let mut skipped_targets = 0u64;
    let mut short_beams = 0u64;

    for record in records {
        n_records += 1;
        if record.target_item.index() >= index.n_items() {
            skipped_targets += 1;
            continue; // scored zero at every K
        }
        if record.beams().len() < k_max {
            short_beams += 1;
        }
        let target_sid = index.sid_of(record.target_item)?;
        for (ki, &k) in ks.iter().enumerate() {
            let m = match_target(record.beams(), index, record.target_item, k)?;
            let s = sid_metrics(record.beams(), target_sid, k);
            accums[ki].sid_hit.add(s.hit);
            accums[ki].sid_ndcg.add(s.ndcg);
            accums[ki].item_hit.add(item_hit(&m));
            accums[ki].item_ndcg.add(item_ndcg(&m));
        }
    }
    if n_records == 0 {
        return Err(Error::EmptyEvaluation);
    }

    let n = n_records as f64;
    let per_k = ks
        .iter()
        .zip(accums)
        .map(|(&k, a)| {
            let sid_hit = a.sid_hit.value() / n;
            let item_hit = a.item_hit.value() / n;
            (
                k,
                KMetrics {
                    sid_hit,
                    sid_ndcg: a.sid_ndcg.value() / n,
                    item_hit,
                    item_ndcg: a.item_ndcg.value() / n,
                    inflation_percent: inflation_percent(sid_hit, item_hit),
                },
            )
        })
        .collect();

    Ok(MetricsReport {
        n_records,
        skipped_targets,
        short_beams,
        per_k,
    })
}

#[derive(Serialize, Deserialize)]
struct BeamRecordWire {
    user: u64,
    target_item: u32,
    beams: Vec<Vec<u32>>,
}

/// Read beam records from JSON Lines. Every sequence must have the index's
/// SID length and in-range codes; sequences need not map to any item.
pub fn read_beams(r: impl Read, index: &SidIndex) -> Result<Vec<BeamRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: BeamRecordWire = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("beam line {}: {e}", lineno + 1)))?;
        let mut beams = Vec::with_capacity(wire.beams.len());
        for codes in wire.beams {
            if codes.len() != index.sid_len() {
                return Err(Error::BadSidLength {
                    got: codes.len(),
                    expected: index.sid_len(),
                });
            }
            if let Some(&code) = codes.iter().find(|&&c| c >= index.codebook_size()) {
                return Err(Error::CodeOutOfRange {
                    code,
                    v: index.codebook_size(),
                });
            }
            beams.push(SidSequence::new(codes));
        }
        records.push(BeamRecord::new(wire.user, ItemId(wire.target_item), beams));
    }
    Ok(records)
}

pub fn read_beams_path(path: impl AsRef<Path>, index: &SidIndex) -> Result<Vec<BeamRecord>> {
    read_beams(File::open(path)?, index)
}

/// Write beam records as JSON Lines, one record per line.
pub fn write_beams(w: &mut impl Write, records: &[BeamRecord]) -> Result<()> {
    for record in records {
        let wire = BeamRecordWire {
            user: record.user,
            target_item: record.target_item.0,
            beams: record
                .beams()
                .iter()
                .map(|s| s.codes().to_vec())
                .collect(),
        };
        serde_json::to_writer(&mut *w, &wire)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_beams_path(path: impl AsRef<Path>, records: &[BeamRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_beams(&mut w, records)?;
    w.flush()?;
    Ok(())
}
