//! Training references: patch sampling from image pyramids, perceptual
//! clustering, and the dataset archive.
//!
//! Archive layout (little-endian):
//! ```text
//! "PBDS"  u32 version (1)  u32 count  u32 height  u32 width
//! per patch manifest: u32 source, f64 scale, u32 row, u32 col, u32 crop,
//!                     u8 quarter_turns, u8 flipped
//! per patch: R, G, B planes of height*width f64 values
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::canvas::Canvas;
use crate::error::{Error, Result};
use crate::losses::FeatureStack;

pub const MAGIC: &[u8; 4] = b"PBDS";
pub const VERSION: u32 = 1;

/// Where a patch came from. `source == u32::MAX` marks patches built in memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchOrigin {
    pub source: u32,
    pub scale: f64,
    pub row: u32,
    pub col: u32,
    pub crop: u32,
    pub quarter_turns: u8,
    pub flipped: bool,
}

impl Default for PatchOrigin {
    fn default() -> Self {
        Self { source: u32::MAX, scale: 1.0, row: 0, col: 0, crop: 0, quarter_turns: 0, flipped: false }
    }
}

/// Per-reference counters maintained by the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReferenceStats {
    pub selections: u64,
    pub episodes: u64,
    /// Mean episode return over all episodes on this reference.
    pub mean_return: f64,
    /// Most recent value-network difficulty estimate.
    pub last_estimate: Option<f64>,
}

impl ReferenceStats {
    pub(crate) fn record_return(&mut self, ret: f64) {
        self.episodes += 1;
        self.mean_return += (ret - self.mean_return) / self.episodes as f64;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    patches: Vec<Canvas>,
    origins: Vec<PatchOrigin>,
    pub stats: Vec<ReferenceStats>,
}

impl Dataset {
    pub fn new(patches: Vec<Canvas>) -> Result<Self> {
        let origins = vec![PatchOrigin::default(); patches.len()];
        Self::with_origins(patches, origins)
    }

    pub fn with_origins(patches: Vec<Canvas>, origins: Vec<PatchOrigin>) -> Result<Self> {
        let first = patches.first().ok_or_else(|| Error::invalid("dataset must not be empty"))?;
        if patches.iter().any(|p| !p.same_shape(first)) {
            return Err(Error::invalid("all dataset patches must have the same shape"));
        }
        if origins.len() != patches.len() {
            return Err(Error::invalid("one origin per patch required"));
        }
        let stats = vec![ReferenceStats::default(); patches.len()];
        Ok(Self { patches, origins, stats })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_dims(&self) -> (usize, usize) {
        self.patches[0].dims()
    }

    pub fn patches(&self) -> &[Canvas] {
        &self.patches
    }

    pub fn origins(&self) -> &[PatchOrigin] {
        &self.origins
    }

    /// The subset at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("patch index {bad} out of range")));
        }
        Self::with_origins(
            indices.iter().map(|&i| self.patches[i].clone()).collect(),
            indices.iter().map(|&i| self.origins[i]).collect(),
        )
    }

    pub fn encode(&self) -> Vec<u8> {
        let (h, w) = self.patch_dims();
        let mut out = Vec::with_capacity(20 + self.len() * (26 + h * w * 24));
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.len() as u32, h as u32, w as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for o in &self.origins {
            out.extend_from_slice(&o.source.to_le_bytes());
            out.extend_from_slice(&o.scale.to_le_bytes());
            for v in [o.row, o.col, o.crop] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(o.quarter_turns);
            out.push(u8::from(o.flipped));
        }
        for p in &self.patches {
            for ch in 0..3 {
                for px in p.data().chunks_exact(3) {
                    out.extend_from_slice(&px[ch].to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Dataset> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(Error::format(format!("dataset archive truncated while reading {what}")));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(4, "magic")? != MAGIC {
            return Err(Error::format("not a dataset archive (bad magic)"));
        }
        let mut header = [0usize; 4];
        for v in header.iter_mut() {
            *v = u32::from_le_bytes(take(4, "header")?.try_into().unwrap()) as usize;
        }
        let [version, count, h, w] = header;
        if version != VERSION as usize {
            return Err(Error::format(format!("unsupported dataset archive version {version}")));
        }
        if count == 0 {
            return Err(Error::invalid("dataset archive holds no patches"));
        }
        if h == 0 || w == 0 {
            return Err(Error::format("dataset archive has zero-sized patches"));
        }
        let u32_at = |s: &[u8], i: usize| u32::from_le_bytes(s[i..i + 4].try_into().unwrap());
        let mut origins = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let m = take(26, "manifest")?;
            origins.push(PatchOrigin {
                source: u32_at(m, 0),
                scale: f64::from_le_bytes(m[4..12].try_into().unwrap()),
                row: u32_at(m, 12),
                col: u32_at(m, 16),
                crop: u32_at(m, 20),
                quarter_turns: m[24] % 4,
                flipped: m[25] != 0,
            });
        }
        let plane = h.checked_mul(w).ok_or_else(|| Error::format("patch size overflow"))?;
        let mut patches = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let raw = take(plane * 24, "patch data")?;
            let mut data = vec![0.0; plane * 3];
            for ch in 0..3 {
                for p in 0..plane {
                    let off = (ch * plane + p) * 8;
                    data[p * 3 + ch] = f64::from_le_bytes(raw[off..off + 8].try_into().unwrap());
                }
            }
            patches.push(Canvas::from_data(h, w, data).map_err(|e| Error::format(format!("patch {i}: {e}")))?);
        }
        if pos != bytes.len() {
            return Err(Error::format(format!("{} trailing bytes in dataset archive", bytes.len() - pos)));
        }
        Self::with_origins(patches, origins)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepOptions {
    pub count: usize,
    /// Side length of the output patches.
    pub patch_size: usize,
    /// Crop side lengths, in pixels of the pyramid level.
    pub crop_sizes: Vec<usize>,
    /// Pyramid scale factors relative to the source.
    pub scales: Vec<f64>,
    pub rotate: bool,
    pub flip: bool,
}

impl PrepOptions {
    pub fn new(count: usize, patch_size: usize) -> Self {
        Self { count, patch_size, crop_sizes: vec![patch_size], scales: vec![1.0, 0.5, 0.25], rotate: true, flip: true }
    }
}

/// Samples `opts.count` patches: pick a source, a pyramid level and a crop size
/// that fits it, a random position, an optional rotation and flip, then
/// resample bilinearly to `patch_size`.
pub fn prepare_dataset<R: Rng + ?Sized>(sources: &[Canvas], opts: &PrepOptions, rng: &mut R) -> Result<Dataset> {
    if sources.is_empty() {
        return Err(Error::invalid("need at least one source image"));
    }
    if opts.count == 0 || opts.patch_size == 0 {
        return Err(Error::invalid("patch count and size must be positive"));
    }
    if opts.crop_sizes.is_empty() || opts.crop_sizes.contains(&0) {
        return Err(Error::invalid("crop sizes must be non-empty and positive"));
    }
    if opts.scales.is_empty() || opts.scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
        return Err(Error::invalid("scales must lie in (0, 1]"));
    }
    // per source: (scale, level image) pairs with at least one crop that fits
    let mut levels: Vec<Vec<(f64, Canvas)>> = Vec::with_capacity(sources.len());
    let min_crop = *opts.crop_sizes.iter().min().unwrap();
    for (i, src) in sources.iter().enumerate() {
        let (h, w) = src.dims();
        let mut per = Vec::new();
        for &s in &opts.scales {
            let (lh, lw) = (((h as f64) * s).round() as usize, ((w as f64) * s).round() as usize);
            if lh >= min_crop && lw >= min_crop {
                per.push((s, src.resize_area(lh, lw)?));
            }
        }
        if per.is_empty() {
            return Err(Error::invalid(format!("patch size {min_crop} is larger than source image {i} ({h}x{w})")));
        }
        levels.push(per);
    }
    let mut patches = Vec::with_capacity(opts.count);
    let mut origins = Vec::with_capacity(opts.count);
    for _ in 0..opts.count {
        let source = rng.random_range(0..sources.len());
        let (scale, level) = levels[source].choose(rng).unwrap();
        let (lh, lw) = level.dims();
        let fitting: Vec<usize> = opts.crop_sizes.iter().copied().filter(|&c| c <= lh && c <= lw).collect();
        let crop = *fitting.choose(rng).unwrap();
        let row = rng.random_range(0..=lh - crop);
        let col = rng.random_range(0..=lw - crop);
        let mut patch = level.crop(row, col, crop, crop)?;
        let quarter_turns = if opts.rotate { rng.random_range(0..4u8) } else { 0 };
        let flipped = opts.flip && rng.random_bool(0.5);
        patch = patch.rotate90(quarter_turns as u32);
        if flipped {
            patch = patch.flip_horizontal();
        }
        patches.push(patch.resize_bilinear(opts.patch_size, opts.patch_size)?);
        origins.push(PatchOrigin {
            source: source as u32,
            scale: *scale,
            row: row as u32,
            col: col as u32,
            crop: crop as u32,
            quarter_turns,
            flipped,
        });
    }
    Dataset::with_origins(patches, origins)
}

/// Medoid indices, per-item cluster index (position in `medoids`), and the
/// total distance of items to their medoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub medoids: Vec<usize>,
    pub assignment: Vec<usize>,
    pub cost: f64,
}

fn assign(dist: &[Vec<f64>], medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let assignment = (0..dist.len())
        .map(|i| {
            if let Some(own) = medoids.iter().position(|&m| m == i) {
                return own;
            }
            let (best, d) = medoids
                .iter()
                .enumerate()
                .map(|(c, &m)| (c, dist[i][m]))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            cost += d;
            best
        })
        .collect();
    (assignment, cost)
}

/// Number of k-subsets of n, saturating.
fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if acc > 1 << 64 {
            return u128::MAX;
        }
    }
    acc
}

const EXHAUSTIVE_LIMIT: u128 = 20_000;

/// k-medoids on a symmetric distance matrix. Small instances are solved
/// exactly by enumerating medoid sets; larger ones use greedy build plus swap
/// refinement. Ties resolve toward lower indices.
pub fn kmedoids(dist: &[Vec<f64>], k: usize) -> Result<Clustering> {
    let n = dist.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot form {k} clusters from {n} items")));
    }
    if binomial(n, k) <= EXHAUSTIVE_LIMIT {
        let mut best: Option<(Vec<usize>, Vec<usize>, f64)> = None;
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            let (a, cost) = assign(dist, &combo);
            if best.as_ref().is_none_or(|b| cost < b.2) {
                best = Some((combo.clone(), a, cost));
            }
            // next combination in lexicographic order
            let mut i = k;
            while i > 0 && combo[i - 1] == n - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for j in i..k {
                combo[j] = combo[j - 1] + 1;
            }
        }
        let (medoids, assignment, cost) = best.unwrap();
        return Ok(Clustering { medoids, assignment, cost });
    }

    // build: add the point that most reduces total cost
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    for _ in 0..k {
        let mut best = (usize::MAX, f64::INFINITY);
        for cand in (0..n).filter(|c| !medoids.contains(c)) {
            let cost: f64 = (0..n).map(|i| nearest[i].min(dist[i][cand])).sum();
            if cost < best.1 {
                best = (cand, cost);
            }
        }
        medoids.push(best.0);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist[i][best.0]);
        }
    }
    let (mut assignment, mut cost) = assign(dist, &medoids);
    // swap: first improving exchange until none improves
    'improve: loop {
        for slot in 0..k {
            for cand in 0..n {
                if medoids.contains(&cand) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = cand;
                let (a, c) = assign(dist, &trial);
                if c < cost - 1e-12 * cost.abs().max(1.0) {
                    medoids = trial;
                    assignment = a;
                    cost = c;
                    continue 'improve;
                }
            }
        }
        break;
    }
    Ok(Clustering { medoids, assignment, cost })
}

/// Pairwise perceptual distances between patches.
pub fn perceptual_distances(patches: &[Canvas], stack: &FeatureStack) -> Result<Vec<Vec<f64>>> {
    let (h, w) = patches.first().map(Canvas::dims).unwrap_or((1, 1));
    let shapes = stack.output_shapes(h, w)?;
    let feats: Vec<Vec<Vec<f64>>> = patches.iter().map(|p| stack.features(p)).collect::<Result<_>>()?;
    let n = patches.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let mut d = 0.0;
            for (layer, &(lh, lw, lc)) in shapes.iter().enumerate() {
                let s: f64 = feats[i][layer].iter().zip(&feats[j][layer]).map(|(a, b)| (a - b) * (a - b)).sum();
                d += s / (lh * lw * lc) as f64;
            }
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok(dist)
}

/// Clusters the patches under perceptual distance and keeps one randomly
/// chosen member of each cluster, ordered by cluster.
pub fn cluster_representatives<R: Rng + ?Sized>(
    dataset: &Dataset,
    stack: &FeatureStack,
    k: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if k > dataset.len() {
        return Err(Error::invalid(format!("cluster count {k} exceeds the number of patches ({})", dataset.len())));
    }
    let dist = perceptual_distances(dataset.patches(), stack)?;
    let clustering = kmedoids(&dist, k)?;
    let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &c) in clustering.assignment.iter().enumerate() {
        members.entry(c).or_default().push(i);
    }
    let picks: Vec<usize> = (0..k).map(|c| *members[&c].choose(rng).unwrap()).collect();
    dataset.subset(&picks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(h: usize, w: usize, seed: u64) -> Canvas {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Canvas::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    #[test]
    fn patches_share_shape() {
        let sources = vec![noise(40, 50, 1), noise(64, 30, 2)];
        let mut opts = PrepOptions::new(10, 12);
        opts.crop_sizes = vec![8, 16, 24];
        let ds = prepare_dataset(&sources, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ds.len(), 10);
        assert!(ds.patches().iter().all(|p| p.dims() == (12, 12)));
    }

    #[test]
    fn plain_patch_is_exact_crop() {
        let src = noise(20, 20, 3);
        let opts = PrepOptions { scales: vec![1.0], rotate: false, flip: false, ..PrepOptions::new(5, 6) };
        let ds = prepare_dataset(std::slice::from_ref(&src), &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (p, o) in ds.patches().iter().zip(ds.origins()) {
            assert_eq!(*p, src.crop(o.row as usize, o.col as usize, 6, 6).unwrap());
        }
    }

    #[test]
    fn augmentation_preserves_pixel_multiset() {
        let src = noise(16, 16, 4);
        let opts = PrepOptions { scales: vec![1.0], ..PrepOptions::new(12, 7) };
        let ds = prepare_dataset(std::slice::from_ref(&src), &opts, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let key = |c: &Canvas| {
            let mut v: Vec<[u64; 3]> =
                c.data().chunks(3).map(|p| [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()]).collect();
            v.sort();
            v
        };
        assert!(ds.origins().iter().any(|o| o.quarter_turns != 0 || o.flipped));
        for (p, o) in ds.patches().iter().zip(ds.origins()) {
            let plain = src.crop(o.row as usize, o.col as usize, 7, 7).unwrap();
            assert_eq!(key(p), key(&plain));
        }
    }

    #[test]
    fn oversize_patch_rejected() {
        let err = prepare_dataset(&[noise(8, 8, 0)], &PrepOptions::new(1, 16), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn archive_round_trip() {
        let ds =
            prepare_dataset(&[noise(30, 30, 5)], &PrepOptions::new(4, 8), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let bytes = ds.encode();
        let back = Dataset::decode(&bytes).unwrap();
        assert_eq!(back, ds);
        assert!(Dataset::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'Q';
        assert!(matches!(Dataset::decode(&bad), Err(Error::Format(_))));
    }

    /// Minimum total distance over every assignment of items to k non-empty
    /// groups, each served by its best member.
    fn partition_oracle(dist: &[Vec<f64>], k: usize) -> f64 {
        fn rec(i: usize, labels: &mut Vec<usize>, used: usize, k: usize, dist: &[Vec<f64>], best: &mut f64) {
            let n = dist.len();
            if i == n {
                if used != k {
                    return;
                }
                let mut total = 0.0;
                for g in 0..k {
                    let members: Vec<usize> = (0..n).filter(|&j| labels[j] == g).collect();
                    let c = members
                        .iter()
                        .map(|&m| members.iter().map(|&j| dist[j][m]).sum::<f64>())
                        .fold(f64::INFINITY, f64::min);
                    total += c;
                }
                *best = best.min(total);
                return;
            }
            for g in 0..(used + 1).min(k) {
                labels[i] = g;
                rec(i + 1, labels, used.max(g + 1), k, dist, best);
            }
        }
        let mut best = f64::INFINITY;
        rec(0, &mut vec![0; dist.len()], 0, k, dist, &mut best);
        best
    }

    #[test]
    fn kmedoids_matches_partition_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..30 {
            let n = 3 + trial % 4;
            let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
            let dist: Vec<Vec<f64>> = pts
                .iter()
                .map(|a| pts.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
                .collect();
            let c = kmedoids(&dist, 2).unwrap();
            assert!((c.cost - partition_oracle(&dist, 2)).abs() < 1e-12);
            // every item sits with its nearest medoid
            for i in 0..n {
                let d = dist[i][c.medoids[c.assignment[i]]];
                assert!(c.medoids.iter().all(|&m| d <= dist[i][m]));
            }
        }
    }

    #[test]
    fn swap_search_on_larger_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // three well separated blobs of 20 points
        let pts: Vec<f64> = (0..60).map(|i| (i / 20) as f64 * 100.0 + rng.random::<f64>()).collect();
        let dist: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| (a - b).abs()).collect()).collect();
        assert!(binomial(60, 3) > EXHAUSTIVE_LIMIT);
        let c = kmedoids(&dist, 3).unwrap();
        for blob in 0..3 {
            let labels: Vec<usize> = (blob * 20..blob * 20 + 20).map(|i| c.assignment[i]).collect();
            assert!(labels.iter().all(|&l| l == labels[0]));
        }
    }

    #[test]
    fn representatives() {
        let stack = FeatureStack::default();
        let a = noise(16, 16, 1);
        let b = Canvas::new(16, 16, [0.2, 0.4, 0.9]).unwrap();
        let c = Canvas::new(16, 16, [1.0, 1.0, 0.0]).unwrap();
        let ds = Dataset::new(vec![a.clone(), b.clone(), a.clone(), c.clone(), b.clone()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let reps = cluster_representatives(&ds, &stack, 3, &mut rng).unwrap();
        assert_eq!(reps.len(), 3);
        for want in [&a, &b, &c] {
            assert!(reps.patches().iter().any(|p| p == want));
        }
        let all = cluster_representatives(&ds, &stack, 5, &mut rng).unwrap();
        assert_eq!(all.len(), 5);
        assert!(cluster_representatives(&ds, &stack, 6, &mut rng).is_err());
    }
}
