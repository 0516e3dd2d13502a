//! Patch grouping (block matching), gathering of similarity matrices, and the
//! two ways of putting patch estimates back into an image: plain-average
//! aggregation and single-estimate reprojection.
//!
//! A group only stores geometry (member positions and distances). Similarity
//! matrices are gathered on demand, so the same geometry can be read from the
//! noisy image, the current iterate and the pilot with aligned columns.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::exec;
use crate::image::Image;
use crate::linalg::SmallMatrix;

/// Top-left corner of a square patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchIndex {
    pub row: usize,
    pub col: usize,
}

impl PatchIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// A reference patch and its nearest neighbours, closest first.
///
/// `members[0]` is always the reference. The others are sorted by squared
/// distance, ties broken by row-major linear index.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGroup {
    pub members: Vec<PatchIndex>,
    pub distances: Vec<f64>,
}

impl PatchGroup {
    pub fn reference(&self) -> PatchIndex {
        self.members[0]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// The `n x k` similarity matrix of this group read from `img`.
    pub fn matrix(&self, img: &Image, patch_side: usize) -> SmallMatrix {
        let n = patch_side * patch_side;
        let k = self.members.len();
        let mut m = SmallMatrix::zeros(n, k);
        let data = m.as_mut_slice();
        for (j, p) in self.members.iter().enumerate() {
            for dr in 0..patch_side {
                let src = &img.row(p.row + dr)[p.col..p.col + patch_side];
                for (dc, &v) in src.iter().enumerate() {
                    data[(dr * patch_side + dc) * k + j] = v;
                }
            }
        }
        m
    }
}

/// All groups of one matching pass together with the geometry they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSet {
    pub groups: Vec<PatchGroup>,
    pub patch_side: usize,
    pub group_size: usize,
    pub height: usize,
    pub width: usize,
}

impl GroupSet {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Pixels per patch.
    pub fn patch_len(&self) -> usize {
        self.patch_side * self.patch_side
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        if img.height() != self.height || img.width() != self.width {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.height, self.width),
                actual: format!("{}x{}", img.height(), img.width()),
            });
        }
        Ok(())
    }

    /// Similarity matrix of group `i` read from `img` (no shape check).
    #[inline]
    pub fn matrix(&self, i: usize, img: &Image) -> SmallMatrix {
        self.groups[i].matrix(img, self.patch_side)
    }

    /// Number of member-patch occurrences covering each pixel.
    pub fn coverage(&self) -> Vec<u32> {
        let mut cover = vec![0u32; self.height * self.width];
        let s = self.patch_side;
        for g in &self.groups {
            for p in &g.members {
                for dr in 0..s {
                    let base = (p.row + dr) * self.width + p.col;
                    for c in &mut cover[base..base + s] {
                        *c += 1;
                    }
                }
            }
        }
        cover
    }
}

/// Reference patch positions with the step trick: the lattice `0, δ, 2δ, …`
/// in each axis, plus the last valid index so that borders are covered.
pub fn reference_positions(
    height: usize,
    width: usize,
    patch_side: usize,
    step: usize,
) -> Result<Vec<PatchIndex>> {
    if step == 0 {
        return Err(Error::Config("step must be at least 1".into()));
    }
    check_fits(height, width, patch_side)?;
    let rows = axis_positions(height - patch_side, step);
    let cols = axis_positions(width - patch_side, step);
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| PatchIndex::new(r, c)))
        .collect())
}

fn axis_positions(last: usize, step: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=last).step_by(step).collect();
    if v.last() != Some(&last) {
        v.push(last);
    }
    v
}

fn check_fits(height: usize, width: usize, patch_side: usize) -> Result<()> {
    if patch_side == 0 || patch_side > height || patch_side > width {
        return Err(Error::PatchTooLarge {
            patch: patch_side,
            height,
            width,
        });
    }
    Ok(())
}

/// Finds the `k` patches closest to `reference` (itself included) inside the
/// `window x window` search area centred on it, clipped at the borders.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
    lin: usize,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.lin.cmp(&other.lin))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            let t = x[l] - y[l];
            acc[l] += t * t;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn block_match(
    img: &Image,
    reference: PatchIndex,
    patch_side: usize,
    k: usize,
    window: usize,
) -> Result<PatchGroup> {
    check_fits(img.height(), img.width(), patch_side)?;
    let (h, w, s) = (img.height(), img.width(), patch_side);
    if k == 0 {
        return Err(Error::Config("group size must be at least 1".into()));
    }
    if reference.row + s > h || reference.col + s > w {
        return Err(Error::DimensionMismatch {
            expected: format!("patch inside {h}x{w}"),
            actual: format!("patch at ({}, {})", reference.row, reference.col),
        });
    }
    let half = window / 2;
    let r0 = reference.row.saturating_sub(half);
    let r1 = (reference.row + half).min(h - s);
    let c0 = reference.col.saturating_sub(half);
    let c1 = (reference.col + half).min(w - s);
    let available = (r1 - r0 + 1) * (c1 - c0 + 1);
    if available < k {
        return Err(Error::NotEnoughCandidates { available, k });
    }

    let mut ref_patch = Vec::with_capacity(s * s);
    for dr in 0..s {
        ref_patch.extend_from_slice(&img.row(reference.row + dr)[reference.col..reference.col + s]);
    }

    let ref_lin = reference.row * w + reference.col;
    let keep = k - 1;
    // Bounded max-heap of the best candidates so far. A candidate is dropped
    // as soon as its partial distance exceeds the current worst kept one,
    // which cannot change the result.
    let mut best: BinaryHeap<Candidate> = BinaryHeap::with_capacity(keep + 1);
    if keep > 0 {
        for r in r0..=r1 {
            for c in c0..=c1 {
                let lin = r * w + c;
                if lin == ref_lin {
                    continue;
                }
                let bound = if best.len() == keep {
                    best.peek().map_or(f64::INFINITY, |t| t.dist)
                } else {
                    f64::INFINITY
                };
                let mut d = 0.0;
                for dr in 0..s {
                    d += sq_dist(&img.row(r + dr)[c..c + s], &ref_patch[dr * s..(dr + 1) * s]);
                    if d > bound {
                        break;
                    }
                }
                if d > bound {
                    continue;
                }
                let cand = Candidate { dist: d, lin };
                if best.len() < keep {
                    best.push(cand);
                } else if best.peek().is_some_and(|t| cand < *t) {
                    best.pop();
                    best.push(cand);
                }
            }
        }
    }
    let cands = best.into_sorted_vec();

    let mut members = Vec::with_capacity(k);
    let mut distances = Vec::with_capacity(k);
    members.push(reference);
    distances.push(0.0);
    for Candidate { dist, lin } in cands {
        members.push(PatchIndex::new(lin / w, lin % w));
        distances.push(dist);
    }
    Ok(PatchGroup { members, distances })
}

/// One group per reference position of the step lattice.
pub fn extract_groups(
    img: &Image,
    patch_side: usize,
    k: usize,
    window: usize,
    step: usize,
) -> Result<GroupSet> {
    let refs = reference_positions(img.height(), img.width(), patch_side, step)?;
    let groups = exec::map_range(refs.len(), |i| {
        block_match(img, refs[i], patch_side, k, window)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let gs = GroupSet {
        groups,
        patch_side,
        group_size: k,
        height: img.height(),
        width: img.width(),
    };
    if let Some(pos) = gs.coverage().iter().position(|&c| c == 0) {
        return Err(Error::Uncovered {
            row: pos / gs.width,
            col: pos % gs.width,
        });
    }
    Ok(gs)
}

/// Similarity matrices of every group read from `img` at the stored positions.
pub fn gather(img: &Image, gs: &GroupSet) -> Result<Vec<SmallMatrix>> {
    gs.check_image(img)?;
    Ok(exec::map_range(gs.len(), |i| gs.matrix(i, img)))
}

fn check_estimates(gs: &GroupSet, estimates: &[SmallMatrix]) -> Result<()> {
    if estimates.len() != gs.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} group estimates", gs.len()),
            actual: format!("{}", estimates.len()),
        });
    }
    let n = gs.patch_len();
    for (g, m) in gs.groups.iter().zip(estimates) {
        if m.rows() != n || m.cols() != g.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{n}x{} estimate", g.len()),
                actual: format!("{}x{}", m.rows(), m.cols()),
            });
        }
    }
    Ok(())
}

/// Repositions the patches of `estimates` and averages every pixel over all
/// estimates covering it.
pub fn aggregate(
    gs: &GroupSet,
    estimates: &[SmallMatrix],
    height: usize,
    width: usize,
) -> Result<Image> {
    check_estimates(gs, estimates)?;
    if height != gs.height || width != gs.width {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", gs.height, gs.width),
            actual: format!("{height}x{width}"),
        });
    }
    let mut out = aggregate_with(gs, 1, |i| Ok(vec![estimates[i].clone()]))?;
    Ok(out.pop().expect("one output"))
}

struct Accum {
    sums: Vec<Vec<f64>>,
    counts: Vec<u32>,
    error: Option<Error>,
}

/// Fused estimate-and-aggregate: `estimate(i)` returns `outputs` matrices for
/// group `i`, each of which is aggregated into its own image. Estimates are
/// never stored for the whole image. The first error in group order wins.
pub fn aggregate_with<F>(gs: &GroupSet, outputs: usize, estimate: F) -> Result<Vec<Image>>
where
    F: Fn(usize) -> Result<Vec<SmallMatrix>> + Sync + Send,
{
    let (h, w, s) = (gs.height, gs.width, gs.patch_side);
    let npix = h * w;
    let acc = exec::chunked_reduce(
        gs.len(),
        || Accum {
            sums: vec![vec![0.0; npix]; outputs],
            counts: vec![0; npix],
            error: None,
        },
        |acc, i| {
            if acc.error.is_some() {
                return;
            }
            let group = &gs.groups[i];
            let mats = match estimate(i) {
                Ok(m) => m,
                Err(e) => {
                    acc.error = Some(e);
                    return;
                }
            };
            debug_assert_eq!(mats.len(), outputs);
            for (j, p) in group.members.iter().enumerate() {
                for dr in 0..s {
                    let base = (p.row + dr) * w + p.col;
                    for c in &mut acc.counts[base..base + s] {
                        *c += 1;
                    }
                }
                for (m, sum) in mats.iter().zip(acc.sums.iter_mut()) {
                    let k = m.cols();
                    let data = m.as_slice();
                    for dr in 0..s {
                        let base = (p.row + dr) * w + p.col;
                        for dc in 0..s {
                            sum[base + dc] += data[(dr * s + dc) * k + j];
                        }
                    }
                }
            }
        },
        |total, part| {
            if total.error.is_none() {
                total.error = part.error;
            }
            for (t, p) in total.sums.iter_mut().zip(part.sums) {
                for (a, b) in t.iter_mut().zip(p) {
                    *a += b;
                }
            }
            for (a, b) in total.counts.iter_mut().zip(part.counts) {
                *a += b;
            }
        },
    );
    if let Some(e) = acc.error {
        return Err(e);
    }
    if let Some(pos) = acc.counts.iter().position(|&c| c == 0) {
        return Err(Error::Uncovered {
            row: pos / w,
            col: pos % w,
        });
    }
    acc.sums
        .into_iter()
        .map(|sum| {
            let data = sum
                .into_iter()
                .zip(&acc.counts)
                .map(|(v, &c)| v / c as f64)
                .collect();
            Image::new(h, w, data)
        })
        .collect()
}

/// Single-estimate reprojection: every pixel takes one value from a denoised
/// reference patch (column 0 of its group), chosen among the references in
/// which it sits closest to the patch centre. Remaining ties are broken by a
/// seeded hash, so the output is reproducible for a given `seed`.
pub fn select_single(
    gs: &GroupSet,
    estimates: &[SmallMatrix],
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Image> {
    check_estimates(gs, estimates)?;
    if height != gs.height || width != gs.width {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", gs.height, gs.width),
            actual: format!("{height}x{width}"),
        });
    }
    let s = gs.patch_side;
    let mut best = vec![u64::MAX; height * width];
    let mut value = vec![0.0; height * width];
    for (i, (g, m)) in gs.groups.iter().zip(estimates).enumerate() {
        let p = g.reference();
        let k = m.cols();
        let data = m.as_slice();
        for dr in 0..s {
            for dc in 0..s {
                // Twice the offset from the centre, so odd and even sides stay integral.
                let er = (2 * dr) as i64 - (s as i64 - 1);
                let ec = (2 * dc) as i64 - (s as i64 - 1);
                let centrality = (er * er + ec * ec) as u64;
                let pix = (p.row + dr) * width + p.col + dc;
                let tie = mix64(seed ^ mix64(((i as u64) << 32) ^ pix as u64)) >> 32;
                let key = (centrality << 32) | tie;
                if key < best[pix] {
                    best[pix] = key;
                    value[pix] = data[(dr * s + dc) * k];
                }
            }
        }
    }
    if let Some(pos) = best.iter().position(|&b| b == u64::MAX) {
        return Err(Error::Uncovered {
            row: pos / width,
            col: pos % width,
        });
    }
    Image::new(height, width, value)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |r, c| ((r * 37 + c * 11) % 97) as f64)
    }

    #[test]
    fn lattice_with_forced_last_index() {
        let pos = reference_positions(8, 8, 4, 3).unwrap();
        let rows: Vec<_> = pos.iter().map(|p| p.row).collect();
        assert_eq!(pos.len(), 9);
        assert_eq!(rows, vec![0, 0, 0, 3, 3, 3, 4, 4, 4]);
        assert_eq!(pos[..3].iter().map(|p| p.col).collect::<Vec<_>>(), vec![0, 3, 4]);
    }

    #[test]
    fn unit_step_gives_every_position() {
        assert_eq!(reference_positions(10, 7, 3, 1).unwrap().len(), 8 * 5);
        assert_eq!(
            reference_positions(4, 4, 4, 1).unwrap(),
            vec![PatchIndex::new(0, 0)]
        );
    }

    #[test]
    fn patch_larger_than_image_fails() {
        assert!(matches!(
            reference_positions(3, 8, 4, 1),
            Err(Error::PatchTooLarge { .. })
        ));
        assert!(reference_positions(8, 8, 4, 0).is_err());
    }

    #[test]
    fn constant_image_ties_break_by_linear_index() {
        let img = Image::filled(10, 10, 5.0);
        let g = block_match(&img, PatchIndex::new(4, 4), 3, 5, 5).unwrap();
        assert_eq!(g.members[0], PatchIndex::new(4, 4));
        assert!(g.distances.iter().all(|&d| d == 0.0));
        // window rows/cols 2..=6, smallest linear indices first
        assert_eq!(
            &g.members[1..],
            &[
                PatchIndex::new(2, 2),
                PatchIndex::new(2, 3),
                PatchIndex::new(2, 4),
                PatchIndex::new(2, 5)
            ]
        );
    }

    #[test]
    fn equal_patches_are_grouped() {
        // Two identical 2x2 patches at (0,0) and (2,2); everything else differs.
        let data = vec![
            1.0, 2.0, 50.0, 60.0, //
            3.0, 4.0, 70.0, 80.0, //
            90.0, 100.0, 1.0, 2.0, //
            110.0, 120.0, 3.0, 4.0,
        ];
        let img = Image::new(4, 4, data).unwrap();
        let g = block_match(&img, PatchIndex::new(0, 0), 2, 2, 9).unwrap();
        // Exhaustive scan of the 9 candidates.
        let mut best = (f64::INFINITY, PatchIndex::new(0, 0));
        for r in 0..3 {
            for c in 0..3 {
                if (r, c) == (0, 0) {
                    continue;
                }
                let mut d = 0.0;
                for dr in 0..2 {
                    for dc in 0..2 {
                        let t = img.get(r + dr, c + dc) - img.get(dr, dc);
                        d += t * t;
                    }
                }
                if d < best.0 {
                    best = (d, PatchIndex::new(r, c));
                }
            }
        }
        assert_eq!(best, (0.0, PatchIndex::new(2, 2)));
        assert_eq!(g.members, vec![PatchIndex::new(0, 0), PatchIndex::new(2, 2)]);
        assert_eq!(g.distances, vec![0.0, 0.0]);
    }

    #[test]
    fn single_member_group() {
        let img = ramp(9, 9);
        let g = block_match(&img, PatchIndex::new(2, 3), 3, 1, 7).unwrap();
        assert_eq!(g.members, vec![PatchIndex::new(2, 3)]);
    }

    #[test]
    fn too_few_candidates() {
        let img = ramp(4, 4);
        let err = block_match(&img, PatchIndex::new(0, 0), 3, 5, 9).unwrap_err();
        assert!(matches!(err, Error::NotEnoughCandidates { available: 4, k: 5 }));
    }

    #[test]
    fn members_are_sorted_and_inside_window() {
        let img = ramp(30, 30);
        let r = PatchIndex::new(12, 9);
        let g = block_match(&img, r, 4, 10, 11).unwrap();
        assert!(g.distances.windows(2).all(|d| d[0] <= d[1]));
        for p in &g.members {
            assert!(p.row.abs_diff(r.row) <= 5 && p.col.abs_diff(r.col) <= 5);
        }
    }

    #[test]
    fn group_counts() {
        let img = ramp(4, 4);
        assert_eq!(extract_groups(&img, 4, 1, 5, 1).unwrap().len(), 1);
        let img = ramp(8, 8);
        let gs = extract_groups(&img, 4, 3, 9, 3).unwrap();
        assert_eq!(gs.len(), 9);
        assert!(gs.coverage().iter().all(|&c| c >= 1));
    }

    #[test]
    fn gather_reuses_geometry() {
        let img = ramp(12, 12);
        let gs = extract_groups(&img, 3, 4, 7, 2).unwrap();
        let own = gather(&img, &gs).unwrap();
        assert_eq!(own[0], gs.groups[0].matrix(&img, 3));
        let other = img.map(|v| 2.0 * v + 1.0);
        let theirs = gather(&other, &gs).unwrap();
        for (a, b) in own.iter().zip(&theirs) {
            assert!(a.combine(2.0, b, -1.0).as_slice().iter().all(|&v| v == -1.0));
        }
        assert!(gather(&ramp(11, 12), &gs).is_err());
    }

    #[test]
    fn aggregate_inverts_gather() {
        let img = ramp(15, 13);
        let gs = extract_groups(&img, 4, 6, 9, 3).unwrap();
        let est = gather(&img, &gs).unwrap();
        let back = aggregate(&gs, &est, 15, 13).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn aggregate_averages_estimates() {
        let img = ramp(6, 6);
        let gs = extract_groups(&img, 2, 1, 3, 2).unwrap();
        let est: Vec<_> = (0..gs.len())
            .map(|_| SmallMatrix::from_fn(4, 1, |_, _| 7.0))
            .collect();
        let out = aggregate(&gs, &est, 6, 6).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.0));

        // Rows 0..2 and 1..3 overlap on row 1 only.
        let img = ramp(3, 2);
        let gs = extract_groups(&img, 2, 1, 3, 1).unwrap();
        assert_eq!(gs.len(), 2);
        let est = vec![
            SmallMatrix::from_fn(4, 1, |_, _| 10.0),
            SmallMatrix::from_fn(4, 1, |_, _| 20.0),
        ];
        let out = aggregate(&gs, &est, 3, 2).unwrap();
        assert_eq!(out.data(), &[10.0, 10.0, 15.0, 15.0, 20.0, 20.0]);
    }

    #[test]
    fn select_single_odd_side_takes_centre() {
        let img = ramp(9, 9);
        let gs = extract_groups(&img, 3, 2, 5, 1).unwrap();
        // Estimates tagged with their group index.
        let est: Vec<_> = (0..gs.len())
            .map(|i| SmallMatrix::from_fn(9, 2, |_, _| i as f64))
            .collect();
        let out = select_single(&gs, &est, 9, 9, 1).unwrap();
        for r in 1..8 {
            for c in 1..8 {
                let i = gs
                    .groups
                    .iter()
                    .position(|g| g.reference() == PatchIndex::new(r - 1, c - 1))
                    .unwrap();
                assert_eq!(out.get(r, c), i as f64);
            }
        }
        let again = select_single(&gs, &est, 9, 9, 1).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn select_single_constant() {
        let img = ramp(10, 10);
        let gs = extract_groups(&img, 4, 3, 7, 3).unwrap();
        let est: Vec<_> = (0..gs.len())
            .map(|_| SmallMatrix::from_fn(16, 3, |_, _| 4.5))
            .collect();
        let out = select_single(&gs, &est, 10, 10, 9).unwrap();
        assert!(out.data().iter().all(|&v| v == 4.5));
    }
}
