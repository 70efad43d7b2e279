//! Non-parametric residual K-Means tokenizer.
//!
//! Level 1 clusters the raw embeddings; every later level clusters the
//! residuals left by the previous one, so the codeword sums telescope back
//! to the input. Vectors are stored in single precision; all distance and
//! centroid arithmetic accumulates in double precision. Runs are bitwise
//! deterministic for a fixed seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::index::{build_sid_index, ItemId, SidIndex, SidSequence};
use crate::zcr::{read_f32s, QuantizationModel};

/// Dense row-major matrix of item embeddings.
#[derive(Clone, Debug)]
pub struct EmbeddingMatrix {
    n: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * dim {
            return Err(Error::DimMismatch(format!(
                "{} floats for a {n}x{dim} matrix",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::BadInput("non-finite embedding value".into()));
        }
        Ok(Self { n, dim, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Binary format: `SFEMB1` magic, u32 n and d little-endian, then
    /// `n*d` f32 little-endian values row-major.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"SFEMB1")?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for x in &self.data {
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
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != b"SFEMB1" {
            return Err(Error::Format("bad embedding magic, expected SFEMB1".into()));
        }
        let mut header = [0u8; 8];
        r.read_exact(&mut header)?;
        let n = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let data = read_f32s(&mut r, n * dim)?;
        Self::new(n, dim, data)
    }

    pub fn read_from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}

/// One clustering level: centroids, per-item assignments, and the inertia
/// trail across Lloyd iterations.
#[derive(Clone, Debug)]
pub struct KMeansLevel {
    /// `v * dim` row-major centroids.
    pub centroids: Vec<f32>,
    pub assignments: Vec<u32>,
    /// Total squared distance of every point to its centroid, final state.
    pub inertia: f64,
    /// Inertia after each assignment pass (`iters + 1` entries); must be
    /// non-increasing up to rounding.
    pub inertia_trace: Vec<f64>,
}

fn dist2(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

/// Assign every point to its nearest centroid; ties go to the lowest index.
fn assign(data: &[f32], dim: usize, centroids: &[f32], out: &mut [u32], dists: &mut [f64]) {
    let v = centroids.len() / dim;
    for (i, (slot, dist)) in out.iter_mut().zip(dists.iter_mut()).enumerate() {
        let point = &data[i * dim..(i + 1) * dim];
        let mut best = 0usize;
        let mut best_d = dist2(point, &centroids[..dim]);
        for c in 1..v {
            let d = dist2(point, &centroids[c * dim..(c + 1) * dim]);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        *slot = best as u32;
        *dist = best_d;
    }
}

/// Weighted pick proportional to `weights`; falls back to a cyclic index
/// when all weights are zero (every point already sits on a centroid).
fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64], fallback: usize) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return fallback % weights.len();
    }
    let mut t = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        t -= w;
        if t <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn kmeans_pp_init(data: &[f32], n: usize, dim: usize, v: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut centroids = Vec::with_capacity(v * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);

    let mut dists: Vec<f64> = (0..n)
        .map(|i| dist2(&data[i * dim..(i + 1) * dim], &centroids[..dim]))
        .collect();
    for j in 1..v {
        let pick = weighted_pick(rng, &dists, j);
        let row = &data[pick * dim..(pick + 1) * dim];
        centroids.extend_from_slice(row);
        for (i, d) in dists.iter_mut().enumerate() {
            let nd = dist2(&data[i * dim..(i + 1) * dim], row);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

fn kmeans_raw(
    data: &[f32],
    n: usize,
    dim: usize,
    v: usize,
    iters: usize,
    seed: u64,
) -> KMeansLevel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(data, n, dim, v, &mut rng);

    let mut assignments = vec![0u32; n];
    let mut dists = vec![0.0f64; n];
    let mut trace = Vec::with_capacity(iters + 1);
    let mut sums = vec![0.0f64; v * dim];
    let mut counts = vec![0usize; v];

    for _ in 0..iters {
        assign(data, dim, &centroids, &mut assignments, &mut dists);
        trace.push(dists.iter().sum());

        sums.fill(0.0);
        counts.fill(0);
        for (i, &a) in assignments.iter().enumerate() {
            let c = a as usize;
            counts[c] += 1;
            for t in 0..dim {
                sums[c * dim + t] += data[i * dim + t] as f64;
            }
        }
        for c in 0..v {
            if counts[c] == 0 {
                continue;
            }
            for t in 0..dim {
                centroids[c * dim + t] = (sums[c * dim + t] / counts[c] as f64) as f32;
            }
        }

        // Re-seed empty clusters to the farthest points, one point each.
        let mut taken = dists.clone();
        for c in 0..v {
            if counts[c] > 0 {
                continue;
            }
            let far = taken
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            centroids[c * dim..(c + 1) * dim].copy_from_slice(&data[far * dim..(far + 1) * dim]);
            taken[far] = 0.0;
        }
    }

    assign(data, dim, &centroids, &mut assignments, &mut dists);
    let inertia = dists.iter().sum();
    trace.push(inertia);

    KMeansLevel {
        centroids,
        assignments,
        inertia,
        inertia_trace: trace,
    }
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Runs exactly `iters` update steps. Empty clusters are re-seeded to the
/// point currently farthest from its centroid. Centroid means accumulate in
/// f64 before rounding back to f32 storage.
pub fn kmeans(vectors: &EmbeddingMatrix, v: usize, iters: usize, seed: u64) -> Result<KMeansLevel> {
    if vectors.n() == 0 || v == 0 {
        return Err(Error::InvalidArgument(
            "kmeans needs at least one point and one centroid".into(),
        ));
    }
    Ok(kmeans_raw(
        vectors.data(),
        vectors.n(),
        vectors.dim(),
        v,
        iters,
        seed,
    ))
}

/// Quantize embeddings into length-`l` SIDs over `v` codes per level.
///
/// The returned model carries the level codebooks and, crucially, the
/// residuals that fed the *last* level, which is exactly what last-level
/// reassignment scores against.
pub fn tokenize(
    embeddings: &EmbeddingMatrix,
    l: usize,
    v: usize,
    iters: usize,
    seed: u64,
) -> Result<(SidIndex, QuantizationModel)> {
    if l == 0 {
        return Err(Error::InvalidArgument("need at least one level".into()));
    }
    if v == 0 || v > u32::MAX as usize {
        return Err(Error::InvalidArgument(format!("bad codebook size {v}")));
    }
    if embeddings.n() == 0 {
        return Err(Error::InvalidArgument("no embeddings to tokenize".into()));
    }
    let n = embeddings.n();
    let dim = embeddings.dim();

    let mut current = embeddings.data().to_vec();
    let mut codebooks = Vec::with_capacity(l * v * dim);
    let mut level_assignments: Vec<Vec<u32>> = Vec::with_capacity(l);
    let mut last_level_residuals = Vec::new();

    for level in 0..l {
        if level == l - 1 {
            last_level_residuals = current.clone();
        }
        let level_seed = seed ^ ((level as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let result = kmeans_raw(&current, n, dim, v, iters, level_seed);

        for (i, &a) in result.assignments.iter().enumerate() {
            let codeword = &result.centroids[a as usize * dim..(a as usize + 1) * dim];
            for t in 0..dim {
                current[i * dim + t] -= codeword[t];
            }
        }
        codebooks.extend_from_slice(&result.centroids);
        level_assignments.push(result.assignments);
    }

    let assignments = (0..n)
        .map(|i| {
            let codes: Vec<u32> = level_assignments.iter().map(|a| a[i]).collect();
            (ItemId(i as u32), SidSequence::new(codes))
        })
        .collect();
    let index = build_sid_index(assignments, l, v as u32)?;
    let model = QuantizationModel::new(l, v, dim, codebooks, last_level_residuals)?;
    Ok((index, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::collision_stats;

    fn matrix(rows: &[&[f32]]) -> EmbeddingMatrix {
        let dim = rows[0].len();
        let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        EmbeddingMatrix::new(rows.len(), dim, data).unwrap()
    }

    pub(crate) fn random_embeddings(n: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * dim)
            .map(|_| rng.random::<f32>() * 4.0 - 2.0)
            .collect();
        EmbeddingMatrix::new(n, dim, data).unwrap()
    }

    #[test]
    fn two_separable_points_get_their_own_centroids() {
        let m = matrix(&[&[0.0], &[10.0]]);
        let result = kmeans(&m, 2, 20, 42).unwrap();
        assert_eq!(result.inertia, 0.0);
        let mut cents = result.centroids.clone();
        cents.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cents, vec![0.0, 10.0]);
        assert_ne!(result.assignments[0], result.assignments[1]);
    }

    #[test]
    fn fewer_distinct_points_than_centroids_reach_zero_inertia() {
        let m = matrix(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let result = kmeans(&m, 5, 20, 7).unwrap();
        assert_eq!(result.inertia, 0.0);
    }

    #[test]
    fn rejects_non_finite_input() {
        assert!(matches!(
            EmbeddingMatrix::new(1, 2, vec![0.0, f32::NAN]),
            Err(Error::BadInput(_))
        ));
    }

    #[test]
    fn reaches_the_exhaustive_two_partition_optimum() {
        // Two well-separated blobs of four points each.
        let m = matrix(&[
            &[0.0, 0.1],
            &[0.2, 0.0],
            &[0.1, 0.2],
            &[0.0, 0.0],
            &[5.0, 5.1],
            &[5.2, 5.0],
            &[5.1, 5.2],
            &[5.0, 5.0],
        ]);
        let result = kmeans(&m, 2, 20, 42).unwrap();

        // Oracle: inertia of every 2-partition, centroids at exact means.
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << 8) - 1 {
            let mut total = 0.0f64;
            for side in 0..2 {
                let members: Vec<usize> = (0..8)
                    .filter(|i| ((mask >> i) & 1) as usize == side)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let mut mean = [0.0f64; 2];
                for &i in &members {
                    for t in 0..2 {
                        mean[t] += m.row(i)[t] as f64;
                    }
                }
                for t in &mut mean {
                    *t /= members.len() as f64;
                }
                for &i in &members {
                    for t in 0..2 {
                        let d = m.row(i)[t] as f64 - mean[t];
                        total += d * d;
                    }
                }
            }
            best = best.min(total);
        }
        assert!(result.inertia <= best + 1e-9);
    }

    #[test]
    fn inertia_is_monotone_over_iterations() {
        for seed in 0..5 {
            let m = random_embeddings(300, 8, seed);
            let result = kmeans(&m, 16, 20, seed).unwrap();
            assert_eq!(result.inertia_trace.len(), 21);
            for w in result.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "inertia rose: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn identical_rows_collide() {
        let m = matrix(&[&[1.0, 2.0], &[1.0, 2.0], &[3.0, 4.0], &[-1.0, 0.5]]);
        let (index, _) = tokenize(&m, 2, 4, 10, 42).unwrap();
        assert_eq!(
            index.sid_of(ItemId(0)).unwrap(),
            index.sid_of(ItemId(1)).unwrap()
        );
        let stats = collision_stats(&index).unwrap();
        assert!(stats.coll_percent >= 50.0 - 1e-9);
    }

    #[test]
    fn single_level_residuals_are_the_raw_embeddings() {
        let m = random_embeddings(20, 3, 3);
        let (index, model) = tokenize(&m, 1, 4, 10, 42).unwrap();
        assert_eq!(index.sid_len(), 1);
        for i in 0..20 {
            assert_eq!(model.residual(ItemId(i as u32)), m.row(i));
        }
        // SIDs are plain k-means labels over the same data and seed.
        let level_seed = 42u64 ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(1);
        let direct = kmeans(&m, 4, 10, level_seed).unwrap();
        for i in 0..20 {
            assert_eq!(
                index.sid_of(ItemId(i as u32)).unwrap().codes()[0],
                direct.assignments[i]
            );
        }
    }

    #[test]
    fn residuals_telescope_back_to_the_input() {
        let m = random_embeddings(50, 6, 9);
        let l = 3;
        let (index, model) = tokenize(&m, l, 8, 15, 42).unwrap();
        // Walk the levels forward to recover the final residual, then check
        // sum(codewords) + final residual == embedding.
        for i in 0..50 {
            let sid = index.sid_of(ItemId(i as u32)).unwrap();
            let mut reconstructed = [0.0f64; 6];
            for (level, &code) in sid.codes().iter().enumerate() {
                for (t, x) in model.codeword(level, code).iter().enumerate() {
                    reconstructed[t] += *x as f64;
                }
            }
            // Final residual: the stored level-(L-1) residual minus the last
            // codeword.
            let last = model.codeword(l - 1, sid.last_code());
            let stored = model.residual(ItemId(i as u32));
            for t in 0..6 {
                let final_residual = stored[t] as f64 - last[t] as f64;
                let total = reconstructed[t] + final_residual;
                let want = m.row(i)[t] as f64;
                assert!(
                    (total - want).abs() <= 1e-5 * want.abs().max(1.0),
                    "row {i} dim {t}: {total} vs {want}"
                );
            }
        }
    }

    #[test]
    fn fixed_seed_is_bitwise_deterministic() {
        let m = random_embeddings(120, 5, 4);
        let (index_a, model_a) = tokenize(&m, 3, 8, 20, 42).unwrap();
        let (index_b, model_b) = tokenize(&m, 3, 8, 20, 42).unwrap();
        for i in 0..120 {
            assert_eq!(
                index_a.sid_of(ItemId(i)).unwrap(),
                index_b.sid_of(ItemId(i)).unwrap()
            );
        }
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        model_a.write_to(&mut bytes_a).unwrap();
        model_b.write_to(&mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn native_last_codes_are_nearest_codewords() {
        // Reassignment cost deltas stay non-negative only if the tokenizer
        // emits argmin assignments against the stored f32 codebook.
        let m = random_embeddings(80, 4, 11);
        let (index, model) = tokenize(&m, 2, 8, 10, 42).unwrap();
        let last = model.level_codebook(1);
        for i in 0..80u32 {
            let item = ItemId(i);
            let sid = index.sid_of(item).unwrap();
            let costs =
                crate::zcr::cost_matrix(model.residual(item), last, model.dim()).unwrap();
            let native = costs.at(0, sid.last_code() as usize);
            for c in 0..8 {
                assert!(native <= costs.at(0, c) + 1e-12);
            }
        }
    }

    #[test]
    fn embeddings_round_trip_through_binary_format() {
        let m = random_embeddings(17, 3, 5);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = EmbeddingMatrix::read_from(&buf[..]).unwrap();
        assert_eq!(back.n(), 17);
        assert_eq!(back.dim(), 3);
        assert_eq!(back.data(), m.data());
    }
}
