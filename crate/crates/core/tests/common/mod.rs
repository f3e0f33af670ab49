//! Brute-force oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use claid_core::geometry::{BBox, Connectivity, GridDims};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f32> {
    let mut v = gaussian(rng, n * dim);
    for row in v.chunks_mut(dim) {
        let norm = row.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt() as f32;
        row.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn random_subset(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<u32> {
    let mut all: Vec<u32> = (0..n as u32).collect();
    all.shuffle(rng);
    all.truncate(size);
    all.sort_unstable();
    all
}

pub fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn row(data: &[f32], dim: usize, i: u32) -> &[f32] {
    &data[i as usize * dim..(i as usize + 1) * dim]
}

/// Degrees by direct pairwise comparison. Also returns, per member, the
/// number of pairs whose similarity lies within `1e-5` of `alpha`, where
/// single-precision products may legitimately land on either side.
pub fn brute_degrees(data: &[f32], dim: usize, subset: &[u32], alpha: f32) -> (Vec<u32>, Vec<u32>) {
    let mut deg = vec![0; subset.len()];
    let mut near = vec![0; subset.len()];
    for (a, &i) in subset.iter().enumerate() {
        for (b, &j) in subset.iter().enumerate() {
            if a == b {
                continue;
            }
            let s = dot64(row(data, dim, i), row(data, dim, j));
            if (s - alpha as f64).abs() < 1e-5 {
                near[a] += 1;
            } else if s > alpha as f64 {
                deg[a] += 1;
            }
        }
    }
    (deg, near)
}

/// `2 Σ_{i<j} A_ij / (n (n-1))`, with 1 for a singleton.
pub fn brute_c_bar(data: &[f32], dim: usize, subset: &[u32], alpha: f32) -> (u64, f64) {
    let n = subset.len();
    let mut c = 0u64;
    for a in 0..n {
        for b in a + 1..n {
            if dot64(row(data, dim, subset[a]), row(data, dim, subset[b])) > alpha as f64 {
                c += 1;
            }
        }
    }
    let c_bar = if n < 2 { 1.0 } else { 2.0 * c as f64 / (n * (n - 1)) as f64 };
    (c, c_bar)
}

/// Top `ceil(theta N)` indices by L1 norm after a full sort, lower index
/// first on ties, zero-norm rows dropped.
pub fn brute_high_energy(l1: &[f32], theta: f64) -> BTreeSet<u32> {
    let n = l1.len();
    let count = (0..=n).find(|&k| k as f64 >= theta * n as f64 - 1e-9).unwrap();
    let mut idx: Vec<u32> = (0..n as u32).collect();
    idx.sort_by(|&a, &b| l1[b as usize].total_cmp(&l1[a as usize]).then(a.cmp(&b)));
    idx.into_iter().take(count).filter(|&i| l1[i as usize] > 0.0).collect()
}

pub fn brute_xi(subset: &[u32], h: &BTreeSet<u32>) -> f64 {
    subset.iter().filter(|i| h.contains(i)).count() as f64 / subset.len() as f64
}

/// `Σ_{i<j in C} ||x_i - x_j||²`.
pub fn pairwise_objective(data: &[f32], dim: usize, cluster: &[u32]) -> f64 {
    let mut s = 0.0;
    for a in 0..cluster.len() {
        for b in a + 1..cluster.len() {
            let (x, y) = (row(data, dim, cluster[a]), row(data, dim, cluster[b]));
            s += x.iter().zip(y).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum::<f64>();
        }
    }
    s
}

/// `Σ_{j in C} ||x - x_j||²`.
pub fn pairwise_cost(x: &[f32], data: &[f32], dim: usize, cluster: &[u32]) -> f64 {
    cluster
        .iter()
        .map(|&j| x.iter().zip(row(data, dim, j)).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum::<f64>())
        .sum()
}

pub fn split_objective(data: &[f32], dim: usize, a: &[u32], b: &[u32]) -> f64 {
    pairwise_objective(data, dim, a) + pairwise_objective(data, dim, b)
}

/// Minimum objective over every split of `subset` into two nonempty parts.
pub fn exhaustive_optimum(data: &[f32], dim: usize, subset: &[u32]) -> f64 {
    let n = subset.len();
    assert!((2..=20).contains(&n));
    let mut best = f64::INFINITY;
    // fix the first element on side A to halve the enumeration
    for mask in 0u32..(1 << (n - 1)) {
        let mut a = vec![subset[0]];
        let mut b = Vec::new();
        for (k, &p) in subset.iter().enumerate().skip(1) {
            if mask >> (k - 1) & 1 == 1 {
                a.push(p);
            } else {
                b.push(p);
            }
        }
        if b.is_empty() {
            continue;
        }
        best = best.min(split_objective(data, dim, &a, &b));
    }
    best
}

/// Whether some single move between `a` and `b` that leaves both nonempty
/// strictly lowers the objective (relative slack `1e-9`).
pub fn improving_move_exists(data: &[f32], dim: usize, a: &[u32], b: &[u32]) -> bool {
    let base = split_objective(data, dim, a, b);
    let tol = 1e-9 * base.abs().max(1.0);
    let try_moves = |from: &[u32], to: &[u32]| {
        if from.len() < 2 {
            return false;
        }
        from.iter().any(|&p| {
            let f: Vec<u32> = from.iter().copied().filter(|&q| q != p).collect();
            let mut t = to.to_vec();
            t.push(p);
            split_objective(data, dim, &f, &t) < base - tol
        })
    };
    try_moves(a, b) || try_moves(b, a)
}

/// Connected components by breadth-first flood fill, largest first, then
/// by smallest member.
pub fn flood_fill(members: &[u32], dims: GridDims, conn: Connectivity) -> Vec<Vec<u32>> {
    let mut inside = vec![false; dims.len()];
    members.iter().for_each(|&m| inside[m as usize] = true);
    let mut seen = vec![false; dims.len()];
    let mut comps = Vec::new();
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    for &start in &sorted {
        if seen[start as usize] {
            continue;
        }
        let mut comp = Vec::new();
        let mut q = VecDeque::from([start]);
        seen[start as usize] = true;
        while let Some(p) = q.pop_front() {
            comp.push(p);
            let (r, c) = dims.row_col(p);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if (dr == 0 && dc == 0) || (conn == Connectivity::Four && dr != 0 && dc != 0) {
                        continue;
                    }
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= dims.rows as i64 || nc >= dims.cols as i64 {
                        continue;
                    }
                    let np = dims.index(nr as usize, nc as usize);
                    if inside[np as usize] && !seen[np as usize] {
                        seen[np as usize] = true;
                        q.push_back(np);
                    }
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    comps
}

pub fn brute_iou(a: &BBox, b: &BBox) -> f64 {
    let area = |x0: f32, y0: f32, x1: f32, y1: f32| ((x1 - x0).max(0.0) as f64) * ((y1 - y0).max(0.0) as f64);
    let aa = area(a.x0, a.y0, a.x1, a.y1);
    let ab = area(b.x0, b.y0, b.x1, b.y1);
    if aa == 0.0 || ab == 0.0 {
        return 0.0;
    }
    let inter = area(a.x0.max(b.x0), a.y0.max(b.y0), a.x1.min(b.x1), a.y1.min(b.y1));
    inter / (aa + ab - inter)
}

/// Mean of precision at each relevant hit within the cutoff, over
/// `min(|relevant|, cutoff)` (or `|relevant|`).
pub fn brute_ap(ranking: &[String], relevant: &BTreeSet<String>, cutoff: Option<usize>) -> f64 {
    let limit = cutoff.unwrap_or(usize::MAX);
    let mut precisions = Vec::new();
    for (k, id) in ranking.iter().enumerate().take(limit) {
        if relevant.contains(id) {
            let hits = ranking[..=k].iter().filter(|r| relevant.contains(*r)).count();
            precisions.push(hits as f64 / (k + 1) as f64);
        }
    }
    let denom = cutoff.map_or(relevant.len(), |c| relevant.len().min(c));
    precisions.iter().sum::<f64>() / denom as f64
}

fn for_each_matching(n: usize, m: usize, w: &[Vec<f64>], f: &mut impl FnMut(&[f64])) {
    fn rec(i: usize, n: usize, m: usize, w: &[Vec<f64>], used: &mut Vec<bool>, picked: &mut Vec<f64>, f: &mut impl FnMut(&[f64])) {
        if i == n {
            f(picked);
            return;
        }
        rec(i + 1, n, m, w, used, picked, f);
        for j in 0..m {
            if !used[j] && w[i][j] > 0.0 {
                used[j] = true;
                picked.push(w[i][j]);
                rec(i + 1, n, m, w, used, picked, f);
                picked.pop();
                used[j] = false;
            }
        }
    }
    rec(0, n, m, w, &mut vec![false; m], &mut Vec::new(), f);
}

/// Enumerates every one-to-one matching between gt boxes and proposals of
/// one image and returns the IoUs of the matching whose descending IoU
/// sequence is lexicographically greatest, together with the size of a
/// maximum matching at each threshold.
pub fn exhaustive_matchings(gt: &[BBox], props: &[BBox], thresholds: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let w: Vec<Vec<f64>> = gt.iter().map(|g| props.iter().map(|p| brute_iou(g, p)).collect()).collect();
    let mut best: Vec<f64> = Vec::new();
    let mut max_card = vec![0usize; thresholds.len()];
    for_each_matching(gt.len(), props.len(), &w, &mut |picked| {
        let mut s = picked.to_vec();
        s.sort_by(|a, b| b.total_cmp(a));
        if lex_greater(&s, &best) {
            best = s.clone();
        }
        for (k, &t) in thresholds.iter().enumerate() {
            max_card[k] = max_card[k].max(s.iter().filter(|&&v| v >= t).count());
        }
    });
    (best, max_card)
}

fn lex_greater(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x > y;
        }
    }
    a.len() > b.len()
}

pub fn random_box(rng: &mut ChaCha8Rng, extent: f32) -> BBox {
    let x0 = rng.random_range(0.0..extent * 0.8);
    let y0 = rng.random_range(0.0..extent * 0.8);
    let w = rng.random_range(1.0..extent * 0.4);
    let h = rng.random_range(1.0..extent * 0.4);
    BBox::new(x0, y0, x0 + w, y0 + h)
}
