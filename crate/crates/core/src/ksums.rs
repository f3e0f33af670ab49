//! Two-way k-sums: greedy single-point moves that minimize the sum of
//! intra-cluster pairwise squared distances.
//!
//! For a cluster with member sum `D`, size `n` and `Q = Σ ||x_j||²`:
//!
//! * the cluster objective is `n·Q − ||D||²`,
//! * the cost of a point against the cluster is `n·||x||² − 2·x·D + Q`,
//!   which for unit vectors collapses to `2n − 2·x·D`.
//!
//! Moving `x` from its own cluster to the other changes the objective by
//! `cost(x, other) − cost(x, own)`, so a move is taken iff it is negative.
//! Sums are kept in `f64` so that the comparison is exact enough for the
//! local-optimality guarantee to hold at convergence.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::PointView;
use crate::linalg::{dot, dot_f64, norm_sq_f64};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Grow both clusters from two seed patches.
    #[default]
    Seeded,
    /// Uniform random split.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundOrder {
    /// Each round visits every member once in a shuffled order.
    #[default]
    Permutation,
    /// Each round draws `n` members with replacement.
    WithReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostForm {
    /// `2n − 2·x·D`; valid for unit-norm points.
    #[default]
    UnitShortcut,
    /// `n·||x||² − 2·x·D + Q`; valid for any points.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsumsParams {
    pub max_rounds: u32,
    pub rng_seed: u64,
    pub init_mode: InitMode,
    #[serde(default)]
    pub round_order: RoundOrder,
    #[serde(default)]
    pub cost_form: CostForm,
}

impl Default for KsumsParams {
    fn default() -> Self {
        Self {
            max_rounds: 100,
            rng_seed: 0,
            init_mode: InitMode::Seeded,
            round_order: RoundOrder::Permutation,
            cost_form: CostForm::UnitShortcut,
        }
    }
}

impl KsumsParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::Validation("max_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Running statistics of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSums {
    pub sum: Vec<f64>,
    pub size: usize,
    /// Σ ||x_j||² over members.
    pub sq_norms: f64,
}

impl ClusterSums {
    pub fn empty(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            size: 0,
            sq_norms: 0.0,
        }
    }

    pub fn from_members(points: PointView<'_>, members: &[u32]) -> Self {
        let mut c = Self::empty(points.dim());
        for &m in members {
            c.add(points.row(m));
        }
        c
    }

    #[inline]
    pub fn add(&mut self, x: &[f32]) {
        for (s, &v) in self.sum.iter_mut().zip(x) {
            *s += v as f64;
        }
        self.size += 1;
        self.sq_norms += norm_sq_f64(x);
    }

    #[inline]
    pub fn remove(&mut self, x: &[f32]) {
        for (s, &v) in self.sum.iter_mut().zip(x) {
            *s -= v as f64;
        }
        self.size -= 1;
        self.sq_norms -= norm_sq_f64(x);
    }

    /// `Σ_{i<j} ||x_i − x_j||²` over the members.
    pub fn objective(&self) -> f64 {
        let d2: f64 = self.sum.iter().map(|v| v * v).sum();
        self.size as f64 * self.sq_norms - d2
    }
}

/// Cost of point `x` against a cluster: `Σ_{j ∈ cluster} ||x − x_j||²`.
///
/// The same closed form serves both the cluster `x` belongs to (where the
/// `j = i` term is zero) and a destination cluster.
#[inline]
pub fn point_to_cluster_cost(x: &[f32], cluster: &ClusterSums, form: CostForm) -> f64 {
    let xd = dot_f64(x, &cluster.sum);
    let n = cluster.size as f64;
    match form {
        CostForm::UnitShortcut => 2.0 * n - 2.0 * xd,
        CostForm::Full => n * norm_sq_f64(x) - 2.0 * xd + cluster.sq_norms,
    }
}

/// Result of bisecting one subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Bisection {
    pub members_b: Vec<u32>,
    pub members_w: Vec<u32>,
    pub sums_b: Vec<f64>,
    pub sums_w: Vec<f64>,
    pub objective: f64,
    pub rounds_used: u32,
    /// Objective after initialization, then after each round.
    pub objective_history: Vec<f64>,
    /// Last round made no moves (as opposed to hitting `max_rounds`).
    pub converged: bool,
}

impl Bisection {
    pub fn n_b(&self) -> usize {
        self.members_b.len()
    }

    pub fn n_w(&self) -> usize {
        self.members_w.len()
    }
}

/// Splits `subset` into two non-empty clusters.
///
/// With `seeds`, each other member starts with whichever seed it has the
/// larger dot product with (ties to `seed_b`). Without seeds, or when
/// `init_mode` is `Random`, the start is a uniform random split.
pub fn bisect(
    points: PointView<'_>,
    subset: &[u32],
    seeds: Option<(u32, u32)>,
    params: &KsumsParams,
) -> Result<Bisection> {
    if subset.len() < 2 {
        return Err(Error::Contract("bisection needs at least two patches"));
    }
    params.validate()?;
    let n = subset.len();
    let mut rng = rng_from_seed(params.rng_seed);

    // side[k] is 0 for cluster b, 1 for cluster w
    let mut side = vec![0u8; n];
    match (params.init_mode, seeds) {
        (InitMode::Seeded, Some((sb, sw))) => {
            if sb == sw {
                return Err(Error::Contract("bisection seeds must differ"));
            }
            let (xb, xw) = (points.row(sb), points.row(sw));
            let mut found = (false, false);
            for (k, &p) in subset.iter().enumerate() {
                side[k] = if p == sb {
                    found.0 = true;
                    0
                } else if p == sw {
                    found.1 = true;
                    1
                } else {
                    let x = points.row(p);
                    u8::from(dot(x, xw) > dot(x, xb))
                };
            }
            if !(found.0 && found.1) {
                return Err(Error::Contract("bisection seeds must belong to the subset"));
            }
        }
        _ => loop {
            for s in side.iter_mut() {
                *s = u8::from(rng.random_bool(0.5));
            }
            let w = side.iter().filter(|&&s| s == 1).count();
            if w != 0 && w != n {
                break;
            }
        },
    }

    let mut clusters = [
        ClusterSums::empty(points.dim()),
        ClusterSums::empty(points.dim()),
    ];
    for (k, &p) in subset.iter().enumerate() {
        clusters[side[k] as usize].add(points.row(p));
    }

    let total = |c: &[ClusterSums; 2]| c[0].objective() + c[1].objective();
    let mut history = vec![total(&clusters)];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rounds_used = 0;
    let mut converged = false;

    while rounds_used < params.max_rounds {
        match params.round_order {
            RoundOrder::Permutation => order.shuffle(&mut rng),
            RoundOrder::WithReplacement => {
                for slot in order.iter_mut() {
                    *slot = rng.random_range(0..n);
                }
            }
        }
        let mut moves = 0usize;
        for &k in &order {
            let own = side[k] as usize;
            let other = 1 - own;
            if clusters[own].size == 1 {
                continue;
            }
            let x = points.row(subset[k]);
            let stay = point_to_cluster_cost(x, &clusters[own], params.cost_form);
            let go = point_to_cluster_cost(x, &clusters[other], params.cost_form);
            if go < stay {
                clusters[own].remove(x);
                clusters[other].add(x);
                side[k] = other as u8;
                moves += 1;
            }
        }
        rounds_used += 1;
        let obj = total(&clusters);
        debug_assert!(
            obj <= history.last().unwrap() + 1e-9 * history.last().unwrap().abs().max(1.0),
            "k-sums objective increased"
        );
        history.push(obj);
        if moves == 0 {
            converged = true;
            break;
        }
    }

    let mut members_b = Vec::with_capacity(clusters[0].size);
    let mut members_w = Vec::with_capacity(clusters[1].size);
    for (k, &p) in subset.iter().enumerate() {
        if side[k] == 0 {
            members_b.push(p);
        } else {
            members_w.push(p);
        }
    }
    members_b.sort_unstable();
    members_w.sort_unstable();
    let [cb, cw] = clusters;
    Ok(Bisection {
        members_b,
        members_w,
        objective: *history.last().unwrap(),
        sums_b: cb.sum,
        sums_w: cw.sum,
        rounds_used,
        objective_history: history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_member_cost_is_zero() {
        let x = [0.6f32, 0.8];
        let c = ClusterSums::from_members(PointView::new(&x, 2), &[0]);
        assert!(point_to_cluster_cost(&x, &c, CostForm::UnitShortcut).abs() < 1e-6);
        assert!(point_to_cluster_cost(&x, &c, CostForm::Full).abs() < 1e-6);
    }

    #[test]
    fn joining_identical_point_costs_nothing() {
        let pts = [0.0f32, 1.0, 0.0, 1.0];
        let view = PointView::new(&pts, 2);
        let dest = ClusterSums::from_members(view, &[1]);
        assert!(point_to_cluster_cost(view.row(0), &dest, CostForm::UnitShortcut).abs() < 1e-12);
    }

    #[test]
    fn two_points_forced_split() {
        let pts = [1.0f32, 0.0, -0.9, 0.435_889_9];
        let b = bisect(PointView::new(&pts, 2), &[0, 1], Some((0, 1)), &KsumsParams::default()).unwrap();
        assert_eq!(b.members_b, vec![0]);
        assert_eq!(b.members_w, vec![1]);
        assert!(b.objective.abs() < 1e-12);
    }

    #[test]
    fn too_small_subset_rejected() {
        let pts = [1.0f32, 0.0];
        let err = bisect(PointView::new(&pts, 2), &[0], None, &KsumsParams::default()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn seeds_outside_subset_rejected() {
        let pts = [1.0f32, 0.0, 0.0, 1.0, 1.0, 0.0];
        let err = bisect(PointView::new(&pts, 2), &[0, 1], Some((0, 2)), &KsumsParams::default()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn random_init_keeps_both_sides() {
        let pts: Vec<f32> = (0..20).flat_map(|i| [(i as f32).cos(), (i as f32).sin()]).collect();
        for seed in 0..20 {
            let params = KsumsParams {
                init_mode: InitMode::Random,
                rng_seed: seed,
                ..Default::default()
            };
            let subset: Vec<u32> = (0..20).collect();
            let b = bisect(PointView::new(&pts, 2), &subset, None, &params).unwrap();
            assert!(b.n_b() > 0 && b.n_w() > 0);
            assert_eq!(b.n_b() + b.n_w(), 20);
        }
    }

    #[test]
    fn max_rounds_cap_is_reported() {
        let pts: Vec<f32> = (0..40).flat_map(|i| [(i as f32 * 0.7).cos(), (i as f32 * 0.7).sin()]).collect();
        let subset: Vec<u32> = (0..40).collect();
        let params = KsumsParams {
            max_rounds: 1,
            init_mode: InitMode::Random,
            ..Default::default()
        };
        let b = bisect(PointView::new(&pts, 2), &subset, None, &params).unwrap();
        assert_eq!(b.rounds_used, 1);
        assert_eq!(b.objective_history.len(), 2);
    }
}
