//! Zero-collision reassignment of last-level codes.
//!
//! Items sharing a length-(L-1) prefix form independent subproblems: within
//! each group, distinct last-level codes make the full sequences distinct,
//! and the first L-1 codes are never touched. For each group that needs it,
//! the minimum-cost relabeling is a constrained bipartite assignment between
//! the group's items and the V last-level codes, solved exactly; a greedy
//! nearest-unused-code baseline is provided for cost comparisons.

mod assignment;

pub use assignment::solve_lsap;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::collision::prefix_groups;
use crate::error::{Error, Result};
use crate::index::{build_sid_index, ItemId, SidIndex};

/// Per-level codebooks plus the residual each item carried into the last
/// quantization level. These are the tokenizer's own vectors; costs computed
/// from them live in the tokenizer's original residual space.
#[derive(Clone, Debug)]
pub struct QuantizationModel {
    sid_len: usize,
    codebook_size: usize,
    dim: usize,
    /// `sid_len * codebook_size * dim`, level-major.
    codebooks: Vec<f32>,
    /// `n_items * dim`, row-major.
    residuals: Vec<f32>,
}

impl QuantizationModel {
    pub fn new(
        sid_len: usize,
        codebook_size: usize,
        dim: usize,
        codebooks: Vec<f32>,
        residuals: Vec<f32>,
    ) -> Result<Self> {
        if codebooks.len() != sid_len * codebook_size * dim {
            return Err(Error::DimMismatch(format!(
                "codebooks: got {} floats, expected {}*{}*{}",
                codebooks.len(),
                sid_len,
                codebook_size,
                dim
            )));
        }
        if dim == 0 || !residuals.len().is_multiple_of(dim) {
            return Err(Error::DimMismatch(format!(
                "residuals: {} floats is not a multiple of dim {}",
                residuals.len(),
                dim
            )));
        }
        if codebooks.iter().chain(&residuals).any(|x| !x.is_finite()) {
            return Err(Error::BadInput("non-finite value in model".into()));
        }
        Ok(Self {
            sid_len,
            codebook_size,
            dim,
            codebooks,
            residuals,
        })
    }

    pub fn n_items(&self) -> usize {
        self.residuals.len() / self.dim
    }

    pub fn sid_len(&self) -> usize {
        self.sid_len
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Codeword `code` of level `level` (both 0-based).
    pub fn codeword(&self, level: usize, code: u32) -> &[f32] {
        let start = (level * self.codebook_size + code as usize) * self.dim;
        &self.codebooks[start..start + self.dim]
    }

    /// Full codebook of one level, `codebook_size * dim` floats.
    pub fn level_codebook(&self, level: usize) -> &[f32] {
        let start = level * self.codebook_size * self.dim;
        &self.codebooks[start..start + self.codebook_size * self.dim]
    }

    pub fn residual(&self, item: ItemId) -> &[f32] {
        let start = item.index() * self.dim;
        &self.residuals[start..start + self.dim]
    }

    /// Binary format: `SFQM1` magic, u32 L/V/d/N little-endian, then the
    /// codebooks and residuals as f32 little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"SFQM1")?;
        for value in [
            self.sid_len as u32,
            self.codebook_size as u32,
            self.dim as u32,
            self.n_items() as u32,
        ] {
            w.write_all(&value.to_le_bytes())?;
        }
        for x in self.codebooks.iter().chain(&self.residuals) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_to_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != b"SFQM1" {
            return Err(Error::Format("bad model magic, expected SFQM1".into()));
        }
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        let mut words = header
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize);
        let (l, v, d, n) = (
            words.next().unwrap(),
            words.next().unwrap(),
            words.next().unwrap(),
            words.next().unwrap(),
        );
        let codebooks = read_f32s(&mut r, l * v * d)?;
        let residuals = read_f32s(&mut r, n * d)?;
        Self::new(l, v, d, codebooks, residuals)
    }

    pub fn read_from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}

pub(crate) fn read_f32s(r: &mut impl Read, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Squared distances between one group's residuals and every candidate code.
#[derive(Clone, Debug)]
pub struct CostMatrix {
    n_items: usize,
    n_codes: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_codes(&self) -> usize {
        self.n_codes
    }

    #[inline]
    pub fn at(&self, item: usize, code: usize) -> f64 {
        self.data[item * self.n_codes + code]
    }
}

/// Squared Euclidean distances `D[i, c] = |r_i - e_c|^2` between flat
/// row-major `residuals` and `codewords` of width `dim`, accumulated in
/// double precision regardless of the stored precision.
pub fn cost_matrix(residuals: &[f32], codewords: &[f32], dim: usize) -> Result<CostMatrix> {
    if dim == 0 || !residuals.len().is_multiple_of(dim) || !codewords.len().is_multiple_of(dim) {
        return Err(Error::DimMismatch(format!(
            "residuals {} / codewords {} not divisible by dim {}",
            residuals.len(),
            codewords.len(),
            dim
        )));
    }
    let n_items = residuals.len() / dim;
    let n_codes = codewords.len() / dim;
    let mut data = Vec::with_capacity(n_items * n_codes);
    for i in 0..n_items {
        let r = &residuals[i * dim..(i + 1) * dim];
        for c in 0..n_codes {
            let e = &codewords[c * dim..(c + 1) * dim];
            let mut acc = 0.0f64;
            for (a, b) in r.iter().zip(e) {
                let d = *a as f64 - *b as f64;
                acc += d * d;
            }
            data.push(acc);
        }
    }
    Ok(CostMatrix {
        n_items,
        n_codes,
        data,
    })
}

fn distinct_count(codes: &[u32]) -> usize {
    let mut sorted = codes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.len()
}

/// Minimum-cost distinct relabeling of one prefix group's last codes.
///
/// Exactly `rho` items change code (the provable minimum), and among all
/// such relabelings the total cost increase is minimal. Change count is
/// prioritized over cost by shifting every non-native cell up by a constant
/// `M` larger than twice the worst possible cost swing, which turns the
/// lexicographic objective into a single assignment solve.
pub fn solve_group(native_codes: &[u32], costs: &CostMatrix) -> Result<Vec<u32>> {
    let n = native_codes.len();
    let v = costs.n_codes();
    if costs.n_items() != n {
        return Err(Error::DimMismatch(format!(
            "{n} native codes for a {}-row cost matrix",
            costs.n_items()
        )));
    }
    if n > v {
        return Err(Error::GroupExceedsCapacity { size: n, v });
    }
    let rho = n - distinct_count(native_codes);
    if rho == 0 {
        return Ok(native_codes.to_vec());
    }

    let mut swing = 0.0f64;
    for (i, &native) in native_codes.iter().enumerate() {
        let base = costs.at(i, native as usize);
        let worst = (0..v)
            .map(|c| (costs.at(i, c) - base).abs())
            .fold(0.0f64, f64::max);
        swing += worst;
    }
    let m = 1.0 + 2.0 * swing;

    let mut shifted = Vec::with_capacity(n * v);
    for (i, &native) in native_codes.iter().enumerate() {
        let base = costs.at(i, native as usize);
        for c in 0..v {
            let delta = costs.at(i, c) - base;
            shifted.push(if c == native as usize { delta } else { delta + m });
        }
    }

    let assignment = solve_lsap(n, v, &shifted);
    let new_codes: Vec<u32> = assignment.into_iter().map(|c| c as u32).collect();

    let changed = new_codes
        .iter()
        .zip(native_codes)
        .filter(|(new, old)| new != old)
        .count();
    assert_eq!(changed, rho, "assignment made a non-minimal change count");
    Ok(new_codes)
}

/// Greedy baseline: per shared code, keep the item with the smallest native
/// distance (ties to the lowest item position) and push the rest, in
/// ascending position order, onto their nearest still-unused codes.
pub fn greedy_group(native_codes: &[u32], costs: &CostMatrix) -> Result<Vec<u32>> {
    let n = native_codes.len();
    let v = costs.n_codes();
    if costs.n_items() != n {
        return Err(Error::DimMismatch(format!(
            "{n} native codes for a {}-row cost matrix",
            costs.n_items()
        )));
    }
    if n > v {
        return Err(Error::GroupExceedsCapacity { size: n, v });
    }

    let mut keeper: std::collections::BTreeMap<u32, usize> = Default::default();
    for (i, &code) in native_codes.iter().enumerate() {
        keeper
            .entry(code)
            .and_modify(|best| {
                if costs.at(i, code as usize) < costs.at(*best, code as usize) {
                    *best = i;
                }
            })
            .or_insert(i);
    }

    let mut new_codes = native_codes.to_vec();
    let mut used = vec![false; v];
    for &code in keeper.keys() {
        used[code as usize] = true;
    }
    for i in 0..n {
        if keeper[&native_codes[i]] == i {
            continue;
        }
        let mut best = None;
        for c in 0..v {
            if used[c] {
                continue;
            }
            let d = costs.at(i, c);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((c, d));
            }
        }
        let (c, _) = best.expect("group fits in codebook, so a free code exists");
        new_codes[i] = c as u32;
        used[c] = true;
    }
    Ok(new_codes)
}

/// Which relabeling rule produced a report.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReassignMethod {
    Zcr,
    Greedy,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChangedItem {
    pub item: ItemId,
    pub old_code: u32,
    pub new_code: u32,
    /// Cost increase `D[i, new] - D[i, old]` for this item.
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupReassignment {
    pub prefix: Vec<u32>,
    pub rho: usize,
    pub changed: Vec<ChangedItem>,
}

/// Outcome of one reassignment run. Groups appear in lexicographic prefix
/// order and changed items ascend by id, so identical inputs always yield
/// identical reports.
#[derive(Clone, Debug, Serialize)]
pub struct ReassignmentReport {
    pub method: ReassignMethod,
    /// Total items whose last code changed; equals the sum of rho over the
    /// processed groups for both methods.
    pub n_reass: usize,
    /// Total cost increase over all changed items.
    pub delta_d_total: f64,
    /// Prefixes of groups larger than the codebook, left untouched.
    pub skipped_prefixes: Vec<Vec<u32>>,
    pub per_group: Vec<GroupReassignment>,
}

/// Minimum-cost zero-collision reassignment. The output index keeps every
/// item's first L-1 codes and is collision-free whenever every prefix group
/// fits in the last-level codebook.
pub fn zcr(index: &SidIndex, model: &QuantizationModel) -> Result<(SidIndex, ReassignmentReport)> {
    reassign(index, model, ReassignMethod::Zcr)
}

/// Greedy nearest-unused-code baseline. Makes the same number of changes as
/// [`zcr`] but possibly at higher total cost.
pub fn greedy_reassign(
    index: &SidIndex,
    model: &QuantizationModel,
) -> Result<(SidIndex, ReassignmentReport)> {
    reassign(index, model, ReassignMethod::Greedy)
}

fn reassign(
    index: &SidIndex,
    model: &QuantizationModel,
    method: ReassignMethod,
) -> Result<(SidIndex, ReassignmentReport)> {
    if model.n_items() != index.n_items() {
        return Err(Error::ModelMismatch(format!(
            "model has {} items, index has {}",
            model.n_items(),
            index.n_items()
        )));
    }
    if model.sid_len() != index.sid_len() {
        return Err(Error::ModelMismatch(format!(
            "model has {} levels, index sids have length {}",
            model.sid_len(),
            index.sid_len()
        )));
    }
    if model.codebook_size() != index.codebook_size() as usize {
        return Err(Error::ModelMismatch(format!(
            "model codebook size {} vs index {}",
            model.codebook_size(),
            index.codebook_size()
        )));
    }

    let table = prefix_groups(index)?;
    let last_level = model.sid_len() - 1;
    let codebook = model.level_codebook(last_level);

    let mut new_last: Vec<u32> = index
        .assignments()
        .map(|(_, sid)| sid.last_code())
        .collect();
    let mut per_group = Vec::new();
    let mut skipped_prefixes = Vec::new();
    let mut n_reass = 0usize;
    let mut delta_d_total = 0.0f64;

    for group in &table.groups {
        if group.items.len() > model.codebook_size() {
            skipped_prefixes.push(group.prefix.clone());
            continue;
        }
        if group.rho == 0 {
            continue;
        }

        let mut residuals = Vec::with_capacity(group.items.len() * model.dim());
        for &item in &group.items {
            residuals.extend_from_slice(model.residual(item));
        }
        let costs = cost_matrix(&residuals, codebook, model.dim())?;
        let native: Vec<u32> = group.items.iter().map(|&i| new_last[i.index()]).collect();
        let solved = match method {
            ReassignMethod::Zcr => solve_group(&native, &costs)?,
            ReassignMethod::Greedy => greedy_group(&native, &costs)?,
        };

        let mut changed = Vec::new();
        for (pos, (&item, &new_code)) in group.items.iter().zip(&solved).enumerate() {
            let old_code = native[pos];
            if new_code != old_code {
                let delta = costs.at(pos, new_code as usize) - costs.at(pos, old_code as usize);
                delta_d_total += delta;
                changed.push(ChangedItem {
                    item,
                    old_code,
                    new_code,
                    delta,
                });
                new_last[item.index()] = new_code;
            }
        }
        n_reass += changed.len();
        per_group.push(GroupReassignment {
            prefix: group.prefix.clone(),
            rho: group.rho,
            changed,
        });
    }

    let assignments = index
        .assignments()
        .map(|(item, sid)| (item, sid.with_last_code(new_last[item.index()])))
        .collect();
    let new_index = build_sid_index(assignments, index.sid_len(), index.codebook_size())?;

    Ok((
        new_index,
        ReassignmentReport {
            method,
            n_reass,
            delta_d_total,
            skipped_prefixes,
            per_group,
        },
    ))
}

/// True when every SID sequence in the index maps to exactly one item.
pub fn verify_zero_collision(index: &SidIndex) -> bool {
    index.is_collision_free()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::SidSequence;

    fn sid(codes: &[u32]) -> SidSequence {
        SidSequence::new(codes.to_vec())
    }

    #[test]
    fn cost_matrix_zero_for_identical_vectors() {
        let costs = cost_matrix(&[1.0, 2.0], &[1.0, 2.0], 2).unwrap();
        assert_eq!(costs.at(0, 0), 0.0);
    }

    #[test]
    fn cost_matrix_three_four_five() {
        let costs = cost_matrix(&[3.0, 4.0], &[0.0, 0.0], 2).unwrap();
        assert_eq!(costs.at(0, 0), 25.0);
    }

    #[test]
    fn cost_matrix_matches_scalar_loop() {
        let mut state = 77u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f32) / (u32::MAX as f32) * 4.0 - 2.0
        };
        let dim = 5;
        let residuals: Vec<f32> = (0..6 * dim).map(|_| next()).collect();
        let codewords: Vec<f32> = (0..9 * dim).map(|_| next()).collect();
        let costs = cost_matrix(&residuals, &codewords, dim).unwrap();
        for i in 0..6 {
            for c in 0..9 {
                let mut want = 0.0f64;
                for t in 0..dim {
                    let d = residuals[i * dim + t] as f64 - codewords[c * dim + t] as f64;
                    want += d * d;
                }
                let got = costs.at(i, c);
                assert!((got - want).abs() <= 1e-6 * want.max(1.0));
            }
        }
    }

    #[test]
    fn cost_matrix_rejects_dim_mismatch() {
        assert!(matches!(
            cost_matrix(&[1.0, 2.0, 3.0], &[0.0, 0.0], 2),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn solve_group_identity_when_already_distinct() {
        let costs = cost_matrix(&[0.0, 1.0], &[0.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(solve_group(&[0, 1], &costs).unwrap(), vec![0, 1]);
    }

    #[test]
    fn solve_group_rejects_oversized_group() {
        let costs = cost_matrix(&[0.0, 1.0, 2.0], &[0.0, 1.0], 1).unwrap();
        assert!(matches!(
            solve_group(&[0, 0, 1], &costs),
            Err(Error::GroupExceedsCapacity { size: 3, v: 2 })
        ));
    }

    /// Build the two-item case-study cost geometry in two dimensions:
    /// code 206 at the origin, code 111 placed so the four distances come
    /// out at 154.02 / 154.74 / 167.78 / 175.39, every other code far away.
    pub(crate) fn case_study_costs() -> (Vec<f32>, Vec<f32>) {
        let r14 = [154.02f64.sqrt(), 0.0];
        let v = 13.76f64.sqrt();
        let y2 = -6.89 / (2.0 * v);
        let r1943 = [(154.74 - y2 * y2).sqrt(), y2];
        let mut codewords = vec![[900.0f64, 900.0]; 256];
        codewords[206] = [0.0, 0.0];
        codewords[111] = [0.0, v];
        let residuals: Vec<f32> = r14
            .iter()
            .chain(&r1943)
            .map(|&x| x as f32)
            .collect();
        let flat: Vec<f32> = codewords
            .iter()
            .flat_map(|c| c.iter().map(|&x| x as f32))
            .collect();
        (residuals, flat)
    }

    #[test]
    fn case_study_zcr_moves_the_cheaper_item() {
        let (residuals, codewords) = case_study_costs();
        let costs = cost_matrix(&residuals, &codewords, 2).unwrap();
        assert!((costs.at(0, 206) - 154.02).abs() < 1e-3);
        assert!((costs.at(1, 206) - 154.74).abs() < 1e-3);
        assert!((costs.at(0, 111) - 167.78).abs() < 1e-3);
        assert!((costs.at(1, 111) - 175.39).abs() < 1e-3);

        let solved = solve_group(&[206, 206], &costs).unwrap();
        // Item at position 0 moves to 111, position 1 keeps 206.
        assert_eq!(solved, vec![111, 206]);
        let delta = costs.at(0, 111) - costs.at(0, 206);
        assert!((delta - 13.76).abs() < 0.01);
    }

    #[test]
    fn case_study_greedy_keeps_the_closer_item() {
        let (residuals, codewords) = case_study_costs();
        let costs = cost_matrix(&residuals, &codewords, 2).unwrap();
        let solved = greedy_group(&[206, 206], &costs).unwrap();
        // Position 0 has the smaller native distance and keeps 206.
        assert_eq!(solved, vec![206, 111]);
        let delta = costs.at(1, 111) - costs.at(1, 206);
        assert!((delta - 20.65).abs() < 0.01);
    }

    /// Exhaustive oracle over distinct-code relabelings with exactly `rho`
    /// changes; returns the minimal total delta.
    pub(crate) fn brute_force_min_delta(native: &[u32], costs: &CostMatrix) -> f64 {
        let n = native.len();
        let v = costs.n_codes();
        let rho = n - {
            let mut s = native.to_vec();
            s.sort_unstable();
            s.dedup();
            s.len()
        };
        #[allow(clippy::too_many_arguments)]
        fn rec(
            pos: usize,
            native: &[u32],
            costs: &CostMatrix,
            v: usize,
            rho: usize,
            used: &mut Vec<bool>,
            changes: usize,
            acc: f64,
            best: &mut f64,
        ) {
            if changes > rho {
                return;
            }
            if pos == native.len() {
                if changes == rho {
                    *best = best.min(acc);
                }
                return;
            }
            for c in 0..v {
                if used[c] {
                    continue;
                }
                used[c] = true;
                let delta = costs.at(pos, c) - costs.at(pos, native[pos] as usize);
                rec(
                    pos + 1,
                    native,
                    costs,
                    v,
                    rho,
                    used,
                    changes + usize::from(c as u32 != native[pos]),
                    acc + delta,
                    best,
                );
                used[c] = false;
            }
        }
        let mut best = f64::INFINITY;
        rec(
            0,
            native,
            costs,
            v,
            rho,
            &mut vec![false; v],
            0,
            0.0,
            &mut best,
        );
        best
    }

    #[test]
    fn solve_group_matches_enumeration_even_with_negative_deltas() {
        let mut state = 0xfeed_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as u32
        };
        for trial in 0..120 {
            let n = 2 + (next() % 4) as usize;
            let v = n + (next() % 5) as usize;
            let dim = 2;
            let residuals: Vec<f32> = (0..n * dim)
                .map(|_| (next() % 1000) as f32 / 100.0)
                .collect();
            let codewords: Vec<f32> = (0..v * dim)
                .map(|_| (next() % 1000) as f32 / 100.0)
                .collect();
            let costs = cost_matrix(&residuals, &codewords, dim).unwrap();
            // Arbitrary native codes: not necessarily the nearest codeword,
            // so deltas may be negative.
            let native: Vec<u32> = (0..n).map(|_| next() % v as u32).collect();
            let rho = n - distinct_count(&native);
            if rho == 0 {
                continue;
            }
            let solved = solve_group(&native, &costs).unwrap();
            let got: f64 = solved
                .iter()
                .zip(&native)
                .enumerate()
                .map(|(i, (&new, &old))| costs.at(i, new as usize) - costs.at(i, old as usize))
                .sum();
            let want = brute_force_min_delta(&native, &costs);
            assert!(
                (got - want).abs() < 1e-9,
                "trial {trial}: got {got}, enumeration says {want}"
            );
        }
    }

    fn pair_fixture() -> (SidIndex, QuantizationModel) {
        // Items 0-1 collide on [0, 5]; items 2-3 are already distinct.
        let assignments = vec![
            (ItemId(0), sid(&[0, 5])),
            (ItemId(1), sid(&[0, 5])),
            (ItemId(2), sid(&[1, 0])),
            (ItemId(3), sid(&[1, 1])),
        ];
        let index = build_sid_index(assignments, 2, 8).unwrap();
        let mut codebooks = vec![0.0f32; 2 * 8];
        for c in 0..8 {
            codebooks[8 + c] = c as f32; // last-level codewords at 0..7
        }
        // Both colliding items sit at their native codeword 5; the nearest
        // alternatives are 4 and 6 at unit cost.
        let residuals = vec![5.0f32, 5.2, 0.0, 1.0];
        let model = QuantizationModel::new(2, 8, 1, codebooks, residuals).unwrap();
        (index, model)
    }

    #[test]
    fn zcr_resolves_the_pair_and_preserves_prefixes() {
        let (index, model) = pair_fixture();
        let (out, report) = zcr(&index, &model).unwrap();
        assert!(verify_zero_collision(&out));
        assert_eq!(report.n_reass, 1);
        assert!(report.delta_d_total >= 0.0);
        for (item, sid) in index.assignments() {
            assert_eq!(out.sid_of(item).unwrap().prefix(), sid.prefix());
        }
    }

    #[test]
    fn collision_free_input_is_untouched() {
        let assignments = vec![(ItemId(0), sid(&[0, 1])), (ItemId(1), sid(&[0, 2]))];
        let index = build_sid_index(assignments, 2, 4).unwrap();
        let codebooks = vec![0.0f32; 2 * 4];
        let residuals = vec![0.0f32, 0.0];
        let model = QuantizationModel::new(2, 4, 1, codebooks, residuals).unwrap();
        let (out, report) = zcr(&index, &model).unwrap();
        assert_eq!(report.n_reass, 0);
        assert_eq!(report.delta_d_total, 0.0);
        for (item, sid) in index.assignments() {
            assert_eq!(out.sid_of(item).unwrap(), sid);
        }
    }

    #[test]
    fn oversized_groups_are_skipped_and_reported() {
        // Three items share prefix [3] but V = 2 at the last level.
        let assignments = vec![
            (ItemId(0), sid(&[1, 0])),
            (ItemId(1), sid(&[1, 0])),
            (ItemId(2), sid(&[1, 1])),
        ];
        let index = build_sid_index(assignments, 2, 2).unwrap();
        let model =
            QuantizationModel::new(2, 2, 1, vec![0.0; 4], vec![0.0, 0.1, 1.0]).unwrap();
        let (out, report) = zcr(&index, &model).unwrap();
        assert_eq!(report.skipped_prefixes, vec![vec![1]]);
        assert_eq!(report.n_reass, 0);
        assert!(!verify_zero_collision(&out));
    }

    #[test]
    fn model_mismatch_is_rejected() {
        let (index, _) = pair_fixture();
        let other = QuantizationModel::new(2, 8, 1, vec![0.0; 16], vec![0.0; 3]).unwrap();
        assert!(matches!(
            zcr(&index, &other),
            Err(Error::ModelMismatch(_))
        ));
    }

    #[test]
    fn reassignment_counting_fixture_sums_rho() {
        // 1574 prefix groups, each a pair colliding on last code 0.
        let n_groups = 1574u32;
        let v = 1600u32;
        let mut assignments = Vec::new();
        for p in 0..n_groups {
            assignments.push((ItemId(2 * p), sid(&[p, 0])));
            assignments.push((ItemId(2 * p + 1), sid(&[p, 0])));
        }
        let index = build_sid_index(assignments, 2, v).unwrap();
        let dim = 1;
        let mut codebooks = vec![0.0f32; 2 * v as usize * dim];
        for c in 0..v as usize {
            codebooks[v as usize + c] = c as f32;
        }
        // Every residual equals its native codeword, so deltas stay >= 0.
        let residuals = vec![0.0f32; 2 * n_groups as usize];
        let model = QuantizationModel::new(2, v as usize, dim, codebooks, residuals).unwrap();
        let (out, report) = zcr(&index, &model).unwrap();
        assert_eq!(report.n_reass, 1574);
        assert!(verify_zero_collision(&out));
    }

    #[test]
    fn verify_zero_collision_detects_duplicates() {
        let free = build_sid_index(
            vec![(ItemId(0), sid(&[0, 1])), (ItemId(1), sid(&[0, 2]))],
            2,
            4,
        )
        .unwrap();
        assert!(verify_zero_collision(&free));
        let dup = build_sid_index(
            vec![(ItemId(0), sid(&[0, 1])), (ItemId(1), sid(&[0, 1]))],
            2,
            4,
        )
        .unwrap();
        assert!(!verify_zero_collision(&dup));
    }

    #[test]
    fn model_round_trips_through_binary_format() {
        let (_, model) = pair_fixture();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let back = QuantizationModel::read_from(&buf[..]).unwrap();
        assert_eq!(back.sid_len(), model.sid_len());
        assert_eq!(back.codebook_size(), model.codebook_size());
        assert_eq!(back.dim(), model.dim());
        assert_eq!(back.n_items(), model.n_items());
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }
}
