//! Item identities, SID sequences, and the bidirectional item ↔ SID index.
//!
//! A tokenizer maps every item to a fixed-length sequence of discrete codes
//! (its SID). The mapping is many-to-one in general: several items may share
//! one sequence, and the set of items behind a sequence is its *collision
//! group*. [`SidIndex`] stores the forward mapping densely and the inverse
//! mapping as sorted groups, and is immutable after construction, so it can
//! be shared freely across threads.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense item index in `[0, N)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A fixed-length sequence of codebook indices.
///
/// Codes are 0-based in memory and in every file format. Equality is
/// element-wise, so a sequence can be used directly as a map key.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct SidSequence(Box<[u32]>);

impl SidSequence {
    pub fn new(codes: impl Into<Box<[u32]>>) -> Self {
        Self(codes.into())
    }

    pub fn codes(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// All codes but the last.
    pub fn prefix(&self) -> &[u32] {
        &self.0[..self.0.len() - 1]
    }

    pub fn last_code(&self) -> u32 {
        *self.0.last().expect("empty sid")
    }

    /// Copy of this sequence with the last code replaced.
    pub fn with_last_code(&self, code: u32) -> Self {
        let mut codes = self.0.to_vec();
        *codes.last_mut().expect("empty sid") = code;
        Self(codes.into())
    }
}

impl fmt::Display for SidSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Per-user chronological interaction sequences over dense item ids.
#[derive(Clone, Debug)]
pub struct InteractionLog {
    n_items: usize,
    sequences: std::collections::BTreeMap<u32, Vec<ItemId>>,
}

impl InteractionLog {
    pub fn new(n_items: usize) -> Self {
        Self {
            n_items,
            sequences: Default::default(),
        }
    }

    /// Add a user's chronologically ordered sequence. Replaces any previous
    /// sequence for the same user.
    pub fn push_sequence(&mut self, user: u32, items: Vec<ItemId>) -> Result<()> {
        if items.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "user {user} has an empty sequence"
            )));
        }
        if let Some(bad) = items.iter().find(|i| i.index() >= self.n_items) {
            return Err(Error::UnknownItem {
                id: bad.0,
                n: self.n_items,
            });
        }
        self.sequences.insert(user, items);
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_users(&self) -> usize {
        self.sequences.len()
    }

    /// Users in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &[ItemId])> {
        self.sequences.iter().map(|(u, s)| (*u, s.as_slice()))
    }

    pub fn sequence(&self, user: u32) -> Option<&[ItemId]> {
        self.sequences.get(&user).map(|s| s.as_slice())
    }
}

/// Immutable bidirectional mapping between items and SID sequences.
///
/// Invariants, established at construction and never mutated:
/// - `forward` is total over `0..n_items`;
/// - `inverse` is the exact multiset inversion of `forward`;
/// - every inverse list is sorted ascending by item id.
#[derive(Clone, Debug)]
pub struct SidIndex {
    sid_len: usize,
    codebook_size: u32,
    forward: Vec<SidSequence>,
    inverse: HashMap<SidSequence, Vec<ItemId>>,
}

impl SidIndex {
    pub fn n_items(&self) -> usize {
        self.forward.len()
    }

    pub fn sid_len(&self) -> usize {
        self.sid_len
    }

    pub fn codebook_size(&self) -> u32 {
        self.codebook_size
    }

    /// SID of an item, or `UnknownItem` if the id is out of range.
    pub fn sid_of(&self, item: ItemId) -> Result<&SidSequence> {
        self.forward.get(item.index()).ok_or(Error::UnknownItem {
            id: item.0,
            n: self.forward.len(),
        })
    }

    /// Items whose SID equals `s`, ascending. Sequences assigned to no item
    /// yield an empty group rather than an error: generated beams routinely
    /// contain such sequences.
    pub fn collision_group(&self, s: &SidSequence) -> &[ItemId] {
        self.inverse.get(s).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// True when every SID sequence maps to exactly one item.
    pub fn is_collision_free(&self) -> bool {
        self.inverse.values().all(|g| g.len() == 1)
    }

    /// `(item, sid)` pairs in ascending item order.
    pub fn assignments(&self) -> impl Iterator<Item = (ItemId, &SidSequence)> {
        self.forward
            .iter()
            .enumerate()
            .map(|(i, s)| (ItemId(i as u32), s))
    }

    /// Distinct SID groups in arbitrary order; use for counting only.
    pub fn groups(&self) -> impl Iterator<Item = (&SidSequence, &[ItemId])> {
        self.inverse.iter().map(|(s, g)| (s, g.as_slice()))
    }

    /// Write the index in the text format:
    /// a `#sid v=<V> l=<L> n=<N>` header, then one `item<TAB>c1,...,cL` line
    /// per item in ascending id order. LF endings, no trailing whitespace.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(
            w,
            "#sid v={} l={} n={}",
            self.codebook_size,
            self.sid_len,
            self.forward.len()
        )?;
        for (item, sid) in self.assignments() {
            writeln!(w, "{item}\t{sid}")?;
        }
        Ok(())
    }

    pub fn write_to_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parse the text format. Strict: the header must come first and items
    /// must appear exactly once each, in ascending order.
    pub fn read_from(r: impl Read) -> Result<SidIndex> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("missing header line".into()))??;
        let (v, l, n) = parse_header(&header)?;

        let mut assignments = Vec::with_capacity(n);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let (id_str, codes_str) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!("line {}: expected item<TAB>codes", lineno + 2))
            })?;
            let id: u32 = id_str
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad item id", lineno + 2)))?;
            if id as usize != assignments.len() {
                return Err(Error::Format(format!(
                    "line {}: expected item {} but found {id}",
                    lineno + 2,
                    assignments.len()
                )));
            }
            let codes = codes_str
                .split(',')
                .map(|c| {
                    c.parse::<u32>()
                        .map_err(|_| Error::Format(format!("line {}: bad code", lineno + 2)))
                })
                .collect::<Result<Vec<u32>>>()?;
            assignments.push((ItemId(id), SidSequence::new(codes)));
        }
        if assignments.len() != n {
            return Err(Error::Format(format!(
                "header declares {n} items but file has {}",
                assignments.len()
            )));
        }
        build_sid_index(assignments, l, v)
    }

    pub fn read_from_path(path: impl AsRef<Path>) -> Result<SidIndex> {
        Self::read_from(File::open(path)?)
    }
}

fn parse_header(line: &str) -> Result<(u32, usize, usize)> {
    let rest = line
        .strip_prefix("#sid ")
        .ok_or_else(|| Error::Format("header must start with '#sid '".into()))?;
    let mut v = None;
    let mut l = None;
    let mut n = None;
    for field in rest.split(' ') {
        match field.split_once('=') {
            Some(("v", x)) => v = x.parse::<u32>().ok(),
            Some(("l", x)) => l = x.parse::<usize>().ok(),
            Some(("n", x)) => n = x.parse::<usize>().ok(),
            _ => return Err(Error::Format(format!("bad header field '{field}'"))),
        }
    }
    match (v, l, n) {
        (Some(v), Some(l), Some(n)) => Ok((v, l, n)),
        _ => Err(Error::Format("header needs v=, l=, n= fields".into())),
    }
}

/// Build a [`SidIndex`] from per-item assignments.
///
/// `assignments` must cover item ids `0..N-1` exactly once (any order);
/// every sequence must have length `sid_len` and codes below
/// `codebook_size`.
pub fn build_sid_index(
    assignments: Vec<(ItemId, SidSequence)>,
    sid_len: usize,
    codebook_size: u32,
) -> Result<SidIndex> {
    let n = assignments.len();
    let mut forward: Vec<Option<SidSequence>> = vec![None; n];
    for (item, sid) in assignments {
        if sid.len() != sid_len {
            return Err(Error::BadSidLength {
                got: sid.len(),
                expected: sid_len,
            });
        }
        if let Some(&code) = sid.codes().iter().find(|&&c| c >= codebook_size) {
            return Err(Error::CodeOutOfRange {
                code,
                v: codebook_size,
            });
        }
        let slot = forward
            .get_mut(item.index())
            .ok_or(Error::UnknownItem { id: item.0, n })?;
        if slot.is_some() {
            return Err(Error::DuplicateItem(item.0));
        }
        *slot = Some(sid);
    }
    // n slots, n assignments, no duplicates: every slot is filled.
    let forward: Vec<SidSequence> = forward.into_iter().map(|s| s.unwrap()).collect();

    let mut inverse: HashMap<SidSequence, Vec<ItemId>> = HashMap::new();
    for (i, sid) in forward.iter().enumerate() {
        inverse
            .entry(sid.clone())
            .or_default()
            .push(ItemId(i as u32));
    }
    // Pushed in ascending item order, so each group is already sorted.

    Ok(SidIndex {
        sid_len,
        codebook_size,
        forward,
        inverse,
    })
}
