//! Ball-cone tree: construction, marginal-gain upper bounds, and the
//! bound-driven best-candidate search behind the tree-accelerated solvers.
//!
//! Every node stores a ball (centroid plus covering radius). Leaves
//! additionally store, per item, the radius around the leaf center and the
//! decomposition of the item norm along/off the center direction
//! (`norm*cos`, `norm*sin`), enabling O(1) point-level bounds:
//!
//! ```text
//! node  ball bound:  (lambda/k) * (<q,c> + r   * |q|)
//! point ball bound:  (lambda/k) * (<q,c> + r_p * |q|)
//! point cone bound:  (lambda/k) * (|q|cos(theta) * |p|cos(phi_p)
//!                                 + |q|sin(theta) * |p|sin(phi_p))
//! ```
//!
//! All three upper-bound the marginal gain of any item in the node for both
//! objectives and any partial result set, provided the item coordinates are
//! non-negative (the diversity term can only lower the gain). The cone bound
//! is never looser than the point ball bound, which at `r_p = r` matches the
//! node bound. Leaf items are sorted by descending `r_p`, so one failed point
//! ball bound prunes the rest of the leaf in a batch.

use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{dot, dot_f64_f32, ItemMatrix, QueryVector};
use crate::error::{Error, Result};
use crate::greedy::check_k;
use crate::objective::{DiversityCache, ResultSet, SearchParams};

/// Default maximum leaf size.
pub const DEFAULT_LEAF_CAP: usize = 100;

/// Per-item payload of a leaf.
#[derive(Debug, Clone, Copy)]
pub struct LeafItem {
    pub id: u32,
    /// Distance from the leaf center.
    pub radius: f64,
    /// |p| cos(phi_p) = <p, c> / |c|.
    pub normcos: f64,
    /// |p| sin(phi_p) = sqrt(|p|^2 - normcos^2).
    pub normsin: f64,
}

#[derive(Debug)]
enum Node {
    Internal {
        count: usize,
        center: Vec<f64>,
        radius: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        center: Vec<f64>,
        center_norm: f64,
        radius: f64,
        entries: Vec<LeafItem>,
    },
}

impl Node {
    fn count(&self) -> usize {
        match self {
            Node::Internal { count, .. } => *count,
            Node::Leaf { entries, .. } => entries.len(),
        }
    }

    fn radius(&self) -> f64 {
        match self {
            Node::Internal { radius, .. } | Node::Leaf { radius, .. } => *radius,
        }
    }

    fn center(&self) -> &[f64] {
        match self {
            Node::Internal { center, .. } | Node::Leaf { center, .. } => center,
        }
    }
}

/// Read-only view of one leaf, for bound verification and diagnostics.
pub struct LeafView<'a> {
    pub center: &'a [f64],
    pub center_norm: f64,
    pub radius: f64,
    pub items: &'a [LeafItem],
}

/// Pruning counters for one or more best-candidate searches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Number of best-candidate searches these counters aggregate.
    pub steps: usize,
    pub nodes_visited: usize,
    pub nodes_pruned: usize,
    /// Items whose exact query inner product was computed.
    pub items_scanned: usize,
    /// Unselected items discarded by a batch break on the point ball bound.
    pub items_pruned_ball: usize,
    /// Items skipped individually by the point cone bound.
    pub items_pruned_cone: usize,
}

impl SearchStats {
    /// Fraction of the candidate pool whose inner product was computed,
    /// averaged over steps.
    pub fn scanned_fraction(&self, n: usize) -> f64 {
        if self.steps == 0 || n == 0 {
            return 0.0;
        }
        self.items_scanned as f64 / (self.steps as f64 * n as f64)
    }
}

/// Node-level ball bound given `<q,c>`, the node radius, and `|q|`.
#[inline]
pub fn node_ball_bound(ip_qc: f64, radius: f64, q_norm: f64, params: &SearchParams) -> f64 {
    params.relevance_coef() * (ip_qc + radius * q_norm)
}

/// Point-level ball bound; identical shape with the per-item radius.
#[inline]
pub fn point_ball_bound(ip_qc: f64, r_p: f64, q_norm: f64, params: &SearchParams) -> f64 {
    params.relevance_coef() * (ip_qc + r_p * q_norm)
}

/// Point-level cone bound from the precomputed leaf terms
/// `q_cos = |q|cos(theta)`, `q_sin = |q|sin(theta)` and the item terms.
/// Callers must fall back to the ball bound when the leaf center has zero
/// norm (theta is undefined there).
#[inline]
pub fn point_cone_bound(
    q_cos: f64,
    q_sin: f64,
    normcos: f64,
    normsin: f64,
    params: &SearchParams,
) -> f64 {
    params.relevance_coef() * (q_cos * normcos + q_sin * normsin)
}

/// An immutable ball-cone tree over an [`ItemMatrix`].
///
/// Construction is single-threaded and deterministic for a fixed seed; any
/// number of queries may search concurrently afterwards.
#[derive(Debug)]
pub struct BcTree {
    root: Node,
    n_items: usize,
    d: usize,
    leaf_cap: usize,
}

impl BcTree {
    /// Builds the tree with the seed-growth split rule.
    ///
    /// If the items were loaded without non-negativity validation the bounds
    /// only cover the relevance term, so pruning may no longer be exact; a
    /// warning is logged in that case.
    pub fn build(items: &ItemMatrix, leaf_cap: usize, seed: u64) -> Result<BcTree> {
        if leaf_cap < 1 {
            return Err(Error::Parameter("leaf capacity must be at least 1".into()));
        }
        if items.n() > u32::MAX as usize {
            return Err(Error::Parameter("too many items for the tree index".into()));
        }
        if !items.is_nonneg_validated() {
            log::warn!(
                "items were not validated non-negative; tree bounds cover only the \
                 relevance term and pruned search may diverge from a linear scan"
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids: Vec<u32> = (0..items.n() as u32).collect();
        let root = build_node(items, &mut ids, leaf_cap, &mut rng);
        Ok(BcTree {
            root,
            n_items: items.n(),
            d: items.d(),
            leaf_cap,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn leaf_cap(&self) -> usize {
        self.leaf_cap
    }

    /// Visits every leaf, in left-to-right order.
    pub fn for_each_leaf<F: FnMut(LeafView<'_>)>(&self, mut f: F) {
        fn walk<'a, F: FnMut(LeafView<'a>)>(node: &'a Node, f: &mut F) {
            match node {
                Node::Leaf {
                    center,
                    center_norm,
                    radius,
                    entries,
                } => f(LeafView {
                    center,
                    center_norm: *center_norm,
                    radius: *radius,
                    items: entries,
                }),
                Node::Internal { left, right, .. } => {
                    walk(left, f);
                    walk(right, f);
                }
            }
        }
        walk(&self.root, &mut f);
    }

    /// Verifies the structural invariants by full traversal: child counts
    /// partition parents, every item lies inside its node's ball, leaves
    /// respect the capacity and the descending-radius sort, and the stored
    /// cone terms recompose each item norm.
    pub fn check_invariants(&self, items: &ItemMatrix) -> Result<()> {
        fn verify(node: &Node, items: &ItemMatrix, cap: usize, out: &mut Vec<u32>) -> Result<()> {
            let start = out.len();
            match node {
                Node::Internal {
                    count,
                    center,
                    radius,
                    left,
                    right,
                } => {
                    if left.count() + right.count() != *count {
                        return Err(Error::Logic(format!(
                            "child counts {} + {} != {count}",
                            left.count(),
                            right.count()
                        )));
                    }
                    verify(left, items, cap, out)?;
                    verify(right, items, cap, out)?;
                    for &id in &out[start..] {
                        check_inside(items, id, center, *radius)?;
                    }
                }
                Node::Leaf {
                    center,
                    center_norm,
                    radius,
                    entries,
                } => {
                    if entries.len() > cap {
                        return Err(Error::Logic(format!(
                            "leaf holds {} items, capacity {cap}",
                            entries.len()
                        )));
                    }
                    let norm_direct = center.iter().map(|c| c * c).sum::<f64>().sqrt();
                    if (norm_direct - center_norm).abs() > 1e-9 * norm_direct.max(1.0) {
                        return Err(Error::Logic("stale leaf center norm".into()));
                    }
                    let mut prev = f64::INFINITY;
                    for e in entries {
                        if e.radius > prev {
                            return Err(Error::Logic("leaf not sorted by descending radius".into()));
                        }
                        prev = e.radius;
                        if e.radius > radius * (1.0 + 1e-6) + 1e-12 {
                            return Err(Error::Logic("item radius exceeds leaf radius".into()));
                        }
                        check_inside(items, e.id, center, *radius)?;
                        let norm_sq = items.norm(e.id as usize).powi(2);
                        let recomposed = e.normcos * e.normcos + e.normsin * e.normsin;
                        if (recomposed - norm_sq).abs() > 1e-5 * norm_sq.max(1e-30) {
                            return Err(Error::Logic(format!(
                                "cone terms recompose {recomposed}, norm^2 is {norm_sq}"
                            )));
                        }
                        out.push(e.id);
                    }
                }
            }
            Ok(())
        }

        fn check_inside(items: &ItemMatrix, id: u32, center: &[f64], radius: f64) -> Result<()> {
            let dist = dist_to_center(items.row(id as usize), center);
            if dist > radius * (1.0 + 1e-6) + 1e-12 {
                return Err(Error::Logic(format!(
                    "item {id} at distance {dist} escapes ball radius {radius}"
                )));
            }
            Ok(())
        }

        let mut ids = Vec::with_capacity(self.n_items);
        verify(&self.root, items, self.leaf_cap, &mut ids)?;
        if ids.len() != self.n_items {
            return Err(Error::Logic(format!(
                "tree holds {} items, matrix has {}",
                ids.len(),
                self.n_items
            )));
        }
        let mut seen = vec![false; self.n_items];
        for id in ids {
            if seen[id as usize] {
                return Err(Error::Logic(format!("item {id} appears twice")));
            }
            seen[id as usize] = true;
        }
        Ok(())
    }

    /// Best unmasked item by marginal gain against the cache's result set.
    ///
    /// Returns exactly the linear-scan argmax (lower id on ties) whenever
    /// the non-negativity precondition holds and no distinct candidates tie
    /// at a pruning bound; `None` if every item is masked.
    pub fn find_best(
        &self,
        items: &ItemMatrix,
        q: &QueryVector,
        params: &SearchParams,
        cache: &DiversityCache,
        mask: &[bool],
        stats: &mut SearchStats,
    ) -> Option<(usize, f64)> {
        let mut search = Search {
            items,
            q,
            q_norm: q.norm(),
            scale: params.relevance_coef(),
            mask,
            gain: GainKind::Marginal { cache, params },
            stats,
            best_id: usize::MAX,
            tau: f64::NEG_INFINITY,
        };
        search.run(&self.root)
    }

    /// Best unmasked item by plain inner product (tree MIPS); serves the
    /// first greedy pick, where the diversity term is always zero.
    pub fn find_max_ip(
        &self,
        items: &ItemMatrix,
        q: &QueryVector,
        mask: &[bool],
        stats: &mut SearchStats,
    ) -> Option<(usize, f64)> {
        let mut search = Search {
            items,
            q,
            q_norm: q.norm(),
            scale: 1.0,
            mask,
            gain: GainKind::Relevance,
            stats,
            best_id: usize::MAX,
            tau: f64::NEG_INFINITY,
        };
        search.run(&self.root)
    }
}

enum GainKind<'a> {
    /// The gain is the raw inner product with the query.
    Relevance,
    /// The gain is the cached marginal gain of the configured objective.
    Marginal {
        cache: &'a DiversityCache,
        params: &'a SearchParams,
    },
}

struct Search<'a> {
    items: &'a ItemMatrix,
    q: &'a QueryVector,
    q_norm: f64,
    /// Scale applied to the relevance side of every bound: lambda/k for
    /// marginal search, 1 for plain MIPS.
    scale: f64,
    mask: &'a [bool],
    gain: GainKind<'a>,
    stats: &'a mut SearchStats,
    best_id: usize,
    tau: f64,
}

impl<'a> Search<'a> {
    fn run(&mut self, root: &Node) -> Option<(usize, f64)> {
        self.stats.steps += 1;
        let ip = dot_f64_f32(root.center(), self.q.coords());
        self.subtree(root, ip);
        if self.best_id == usize::MAX {
            None
        } else {
            Some((self.best_id, self.tau))
        }
    }

    fn subtree(&mut self, node: &Node, ip: f64) {
        self.stats.nodes_visited += 1;
        let ub_node = self.scale * (ip + node.radius() * self.q_norm);
        if self.tau >= ub_node {
            self.stats.nodes_pruned += 1;
            return;
        }
        match node {
            Node::Leaf { .. } => self.filter_scan(node, ip),
            Node::Internal {
                count, left, right, ..
            } => {
                let ip_l = dot_f64_f32(left.center(), self.q.coords());
                // <q, c_R> recovered from the centroid identity
                // c = (|L| c_L + |R| c_R) / |N|, saving one dot product
                let nr = right.count() as f64;
                let ip_r = (*count as f64 / nr) * ip - (left.count() as f64 / nr) * ip_l;
                if ip_l >= ip_r {
                    self.subtree(left, ip_l);
                    self.subtree(right, ip_r);
                } else {
                    self.subtree(right, ip_r);
                    self.subtree(left, ip_l);
                }
            }
        }
    }

    fn filter_scan(&mut self, node: &Node, ip: f64) {
        let Node::Leaf {
            center_norm,
            entries,
            ..
        } = node
        else {
            unreachable!("filter_scan is only called on leaves");
        };
        // cone terms are undefined for an all-zero leaf center
        let has_cone = *center_norm > 0.0;
        let (q_cos, q_sin) = if has_cone {
            let q_cos = ip / center_norm;
            let q_sin = (self.q_norm * self.q_norm - q_cos * q_cos).max(0.0).sqrt();
            (q_cos, q_sin)
        } else {
            (0.0, 0.0)
        };
        for (pos, e) in entries.iter().enumerate() {
            let id = e.id as usize;
            // selected items never contribute bounds, so they cannot
            // trigger the batch break below
            if self.mask[id] {
                continue;
            }
            let ub_ball = self.scale * (ip + e.radius * self.q_norm);
            if self.tau >= ub_ball {
                // sorted descending by radius: every later bound is smaller
                self.stats.items_pruned_ball += entries[pos..]
                    .iter()
                    .filter(|e| !self.mask[e.id as usize])
                    .count();
                break;
            }
            if has_cone {
                let ub_cone = self.scale * (q_cos * e.normcos + q_sin * e.normsin);
                if self.tau >= ub_cone {
                    self.stats.items_pruned_cone += 1;
                    continue;
                }
            }
            self.stats.items_scanned += 1;
            let ip_pq = dot(self.items.row(id), self.q.coords());
            // the scaled inner product already bounds the gain; only spend
            // the exact gain computation when it can still win or tie
            if self.scale * ip_pq >= self.tau {
                let g = match self.gain {
                    GainKind::Relevance => ip_pq,
                    GainKind::Marginal { cache, params } => cache.gain(id, ip_pq, params),
                };
                if g > self.tau || (g == self.tau && id < self.best_id) {
                    self.tau = g;
                    self.best_id = id;
                }
            }
        }
    }
}

/// Greedy selection with every argmax served by the tree. Output is
/// identical to [`crate::greedy::greedy`] on tie-free inputs.
pub fn bc_greedy(
    tree: &BcTree,
    items: &ItemMatrix,
    q: &QueryVector,
    params: &SearchParams,
) -> Result<(ResultSet, SearchStats)> {
    check_tree(tree, items)?;
    q.check_dim(items)?;
    check_k(items, params.k)?;
    let mut stats = SearchStats::default();
    let mut cache = DiversityCache::new(items.n(), params.mode);
    let (first, ip0) = tree
        .find_max_ip(items, q, cache.selected_mask(), &mut stats)
        .expect("tree holds at least one item");
    let mut selected = vec![first];
    let mut gains = vec![params.relevance_coef() * ip0];
    if params.k > 1 {
        cache.insert(items, first)?;
        for _ in 1..params.k {
            let (best, gain) = tree
                .find_best(items, q, params, &cache, cache.selected_mask(), &mut stats)
                .ok_or_else(|| Error::Logic("all items already selected".into()))?;
            selected.push(best);
            gains.push(gain);
            cache.insert(items, best)?;
        }
    }
    Ok((ResultSet::from_gains(selected, gains), stats))
}

/// Dual-greedy with tree-served argmax steps; identical to
/// [`crate::greedy::dual_greedy`] on tie-free inputs.
pub fn bc_dual_greedy(
    tree: &BcTree,
    items: &ItemMatrix,
    q: &QueryVector,
    params: &SearchParams,
) -> Result<(ResultSet, SearchStats)> {
    check_tree(tree, items)?;
    q.check_dim(items)?;
    check_k(items, params.k)?;
    let n = items.n();
    let mut stats = SearchStats::default();
    let mut caches = [
        DiversityCache::new(n, params.mode),
        DiversityCache::new(n, params.mode),
    ];
    let mut ids: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut gains: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut taken = vec![false; n];
    let mut remaining = n;

    while ids.iter().any(|s| s.len() < params.k) {
        if remaining == 0 {
            break;
        }
        let mut best: [Option<(usize, f64)>; 2] = [None, None];
        for j in 0..2 {
            if ids[j].len() < params.k {
                best[j] = tree.find_best(items, q, params, &caches[j], &taken, &mut stats);
            }
        }
        let g1 = best[0].map_or(f64::NEG_INFINITY, |(_, g)| g);
        let g2 = best[1].map_or(f64::NEG_INFINITY, |(_, g)| g);
        if g1.max(g2) <= 0.0 {
            break;
        }
        let j = if g1 >= g2 { 0 } else { 1 };
        let (id, gain) = best[j].expect("winning side has a candidate");
        caches[j].insert(items, id)?;
        ids[j].push(id);
        gains[j].push(gain);
        taken[id] = true;
        remaining -= 1;
    }

    let f1: f64 = gains[0].iter().sum();
    let f2: f64 = gains[1].iter().sum();
    let j = if f1 >= f2 { 0 } else { 1 };
    let [ids1, ids2] = ids;
    let [gains1, gains2] = gains;
    let result = if j == 0 {
        ResultSet::from_gains(ids1, gains1)
    } else {
        ResultSet::from_gains(ids2, gains2)
    };
    Ok((result, stats))
}

fn check_tree(tree: &BcTree, items: &ItemMatrix) -> Result<()> {
    if tree.n_items != items.n() || tree.d != items.d() {
        return Err(Error::Logic(format!(
            "tree was built over {}x{} items, matrix is {}x{}",
            tree.n_items,
            tree.d,
            items.n(),
            items.d()
        )));
    }
    Ok(())
}

fn build_node(items: &ItemMatrix, ids: &mut [u32], leaf_cap: usize, rng: &mut ChaCha8Rng) -> Node {
    let (center, radius) = bounding_ball(items, ids);
    if ids.len() <= leaf_cap {
        let center_norm = center.iter().map(|c| c * c).sum::<f64>().sqrt();
        let mut entries: Vec<LeafItem> = ids
            .iter()
            .map(|&id| {
                let row = items.row(id as usize);
                let r_p = dist_to_center(row, &center);
                let (normcos, normsin) = if center_norm > 0.0 {
                    let normcos = dot_f64_f32(&center, row) / center_norm;
                    let rest = items.norm(id as usize).powi(2) - normcos * normcos;
                    (normcos, rest.max(0.0).sqrt())
                } else {
                    // degenerate center: the cone structure is unusable, keep
                    // terms that make the cone bound equal the norm product
                    (0.0, items.norm(id as usize))
                };
                LeafItem {
                    id,
                    radius: r_p,
                    normcos,
                    normsin,
                }
            })
            .collect();
        entries.sort_unstable_by(|a, b| {
            b.radius
                .partial_cmp(&a.radius)
                .expect("radii are finite")
                .then(a.id.cmp(&b.id))
        });
        Node::Leaf {
            center,
            center_norm,
            radius,
            entries,
        }
    } else {
        let (left_ids, right_ids) = split(items, ids, rng);
        let mid = left_ids.len();
        ids[..mid].copy_from_slice(&left_ids);
        ids[mid..].copy_from_slice(&right_ids);
        let (l, r) = ids.split_at_mut(mid);
        let left = build_node(items, l, leaf_cap, rng);
        let right = build_node(items, r, leaf_cap, rng);
        Node::Internal {
            count: left.count() + right.count(),
            center,
            radius,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Centroid and covering radius of a set of items.
fn bounding_ball(items: &ItemMatrix, ids: &[u32]) -> (Vec<f64>, f64) {
    let d = items.d();
    let mut center = vec![0.0f64; d];
    for &id in ids {
        for (c, &v) in center.iter_mut().zip(items.row(id as usize)) {
            *c += v as f64;
        }
    }
    let inv = 1.0 / ids.len() as f64;
    for c in &mut center {
        *c *= inv;
    }
    let radius = ids
        .iter()
        .map(|&id| dist_to_center(items.row(id as usize), &center))
        .fold(0.0f64, f64::max);
    (center, radius)
}

/// Seed-growth split: pick a random seed, take the farthest item from it as
/// the left pivot and the farthest item from that as the right pivot, then
/// assign every item to its closer pivot (ties to the left). A degenerate
/// split (all items coincident) falls back to halving the scan order.
fn split(items: &ItemMatrix, ids: &[u32], rng: &mut ChaCha8Rng) -> (Vec<u32>, Vec<u32>) {
    let seed_item = ids[rng.gen_range(0..ids.len())];
    let pivot_l = farthest_from(items, ids, items.row(seed_item as usize));
    let pivot_r = farthest_from(items, ids, items.row(pivot_l as usize));
    let row_l = items.row(pivot_l as usize);
    let row_r = items.row(pivot_r as usize);
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &id in ids {
        let row = items.row(id as usize);
        if dist_rows(row, row_l) <= dist_rows(row, row_r) {
            left.push(id);
        } else {
            right.push(id);
        }
    }
    if right.is_empty() {
        let mid = ids.len() / 2;
        left = ids[..mid].to_vec();
        right = ids[mid..].to_vec();
    }
    (left, right)
}

fn farthest_from(items: &ItemMatrix, ids: &[u32], origin: &[f32]) -> u32 {
    let mut best = ids[0];
    let mut best_dist = f64::NEG_INFINITY;
    for &id in ids {
        let dist = dist_rows(items.row(id as usize), origin);
        if dist > best_dist {
            best_dist = dist;
            best = id;
        }
    }
    best
}

#[inline]
fn dist_rows(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let diff = x as f64 - y as f64;
        acc += diff * diff;
    }
    acc.sqrt()
}

#[inline]
pub(crate) fn dist_to_center(row: &[f32], center: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &c) in row.iter().zip(center.iter()) {
        let diff = x as f64 - c;
        acc += diff * diff;
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greedy::{dual_greedy, greedy, linear_topk};
    use crate::objective::{marginal_naive, Mode};
    use crate::par;
    use crate::synthetic;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn naive_best(
        items: &ItemMatrix,
        q: &QueryVector,
        s: &[usize],
        mask: &[bool],
        params: &SearchParams,
    ) -> Option<(usize, f64)> {
        par::best_candidate(items.n(), mask, |i| marginal_naive(items, i, s, q, params))
    }

    #[test]
    fn single_leaf_fixture_layout() {
        let (items, _) = synthetic::non_submodular_fixture();
        let tree = BcTree::build(&items, DEFAULT_LEAF_CAP, 42).unwrap();
        let mut leaves = 0;
        tree.for_each_leaf(|leaf| {
            leaves += 1;
            assert_eq!(leaf.center, &[1.0, 0.75]);
            // farthest item from the centroid comes first
            let order: Vec<u32> = leaf.items.iter().map(|e| e.id).collect();
            assert_eq!(order, vec![3, 2, 1, 0]);
            assert!((leaf.items[0].radius - 1.6007810593582121).abs() < 1e-9);
        });
        assert_eq!(leaves, 1);
        tree.check_invariants(&items).unwrap();
    }

    #[test]
    fn duplicate_points_build_terminates() {
        let rows: Vec<Vec<f32>> = (0..10).map(|_| vec![1.0, 2.0, 3.0]).collect();
        let items = ItemMatrix::from_rows(&rows, true).unwrap();
        let tree = BcTree::build(&items, 2, 7).unwrap();
        tree.check_invariants(&items).unwrap();
        tree.for_each_leaf(|leaf| {
            assert!(leaf.radius < 1e-9);
            for e in leaf.items {
                assert!(e.radius < 1e-9);
            }
        });
    }

    #[test]
    fn tiny_and_single_item_builds() {
        let items = ItemMatrix::from_rows(&[vec![0.5f32, 0.25]], true).unwrap();
        let tree = BcTree::build(&items, 100, 1).unwrap();
        tree.check_invariants(&items).unwrap();
        let (items2, _) = synthetic::non_submodular_fixture();
        let tree2 = BcTree::build(&items2, 1, 9).unwrap();
        tree2.check_invariants(&items2).unwrap();
    }

    #[test]
    fn invariants_hold_on_random_builds() {
        let mut rng = StdRng::seed_from_u64(100);
        for seed in 0..5u64 {
            let n = rng.gen_range(50..400);
            let d = rng.gen_range(2..10);
            let items = if seed % 2 == 0 {
                synthetic::random_items(&mut rng, n, d)
            } else {
                synthetic::clustered_items(&mut rng, n, d, 5)
            };
            let tree = BcTree::build(&items, 16, seed).unwrap();
            tree.check_invariants(&items).unwrap();
        }
    }

    #[test]
    fn zero_norm_center_falls_back_to_ball() {
        let rows: Vec<Vec<f32>> = (0..4).map(|_| vec![0.0f32, 0.0]).collect();
        let items = ItemMatrix::from_rows(&rows, true).unwrap();
        let tree = BcTree::build(&items, 100, 3).unwrap();
        let q = QueryVector::new(vec![1.0, 1.0]).unwrap();
        let params = SearchParams::new(2, 0.5, 0.3, Mode::Avg).unwrap();
        let cache = DiversityCache::new(4, Mode::Avg);
        let mut stats = SearchStats::default();
        let got = tree
            .find_best(&items, &q, &params, &cache, cache.selected_mask(), &mut stats)
            .unwrap();
        assert_eq!(got.0, 0, "lowest id wins among all-zero gains");
        assert_eq!(stats.items_pruned_cone, 0, "cone checks are disabled");
    }

    #[test]
    fn bound_chain_on_random_leaves() {
        let mut rng = StdRng::seed_from_u64(4242);
        let items = synthetic::clustered_items(&mut rng, 600, 8, 6);
        let tree = BcTree::build(&items, 20, 0).unwrap();
        for nonneg_query in [true, false] {
            let q = synthetic::random_query(&mut rng, 8, nonneg_query);
            for mode in [Mode::Avg, Mode::Max] {
                let params = SearchParams::new(5, 0.6, 0.05, mode).unwrap();
                let s: Vec<usize> = vec![0, 3, 11];
                tree.for_each_leaf(|leaf| {
                    let ip_qc = dot_f64_f32(leaf.center, q.coords());
                    let ub_node = node_ball_bound(ip_qc, leaf.radius, q.norm(), &params);
                    let q_cos = if leaf.center_norm > 0.0 {
                        ip_qc / leaf.center_norm
                    } else {
                        0.0
                    };
                    let q_sin = (q.norm() * q.norm() - q_cos * q_cos).max(0.0).sqrt();
                    for e in leaf.items {
                        let id = e.id as usize;
                        if s.contains(&id) {
                            continue;
                        }
                        let delta = marginal_naive(&items, id, &s, &q, &params);
                        let ub_ball = point_ball_bound(ip_qc, e.radius, q.norm(), &params);
                        let ub_cone =
                            point_cone_bound(q_cos, q_sin, e.normcos, e.normsin, &params);
                        assert!(delta <= ub_cone + 1e-9, "{delta} > cone {ub_cone}");
                        assert!(ub_cone <= ub_ball + 1e-9, "cone {ub_cone} > ball {ub_ball}");
                        assert!(ub_ball <= ub_node + 1e-9, "ball {ub_ball} > node {ub_node}");
                    }
                });
            }
        }
    }

    #[test]
    fn node_bound_is_exact_for_zero_radius() {
        let params = SearchParams::new(3, 0.5, 1.0 / 3.0, Mode::Max).unwrap();
        // a leaf holding only p3 = (2, 0) has center p3 and radius 0
        let bound = node_ball_bound(1.0, 0.0, 0.5f64.sqrt(), &params);
        assert!((bound - 1.0 / 6.0).abs() < 1e-12);
        // lambda = 0 collapses every bound to zero
        let p0 = SearchParams::new(3, 0.0, 1.0 / 3.0, Mode::Max).unwrap();
        assert_eq!(node_ball_bound(1.0, 2.0, 1.0, &p0), 0.0);
        // the point ball bound at r_p = r equals the node bound
        let q_norm = 0.5f64.sqrt();
        assert_eq!(
            point_ball_bound(0.875, 1.25, q_norm, &params),
            node_ball_bound(0.875, 1.25, q_norm, &params)
        );
    }

    #[test]
    fn cone_bound_is_exact_for_aligned_vectors() {
        // single-item leaf: the item is its own center, phi_p = 0, and the
        // cone bound collapses to the exact scaled inner product
        let items = ItemMatrix::from_rows(&[vec![2.0f32, 1.0]], true).unwrap();
        let tree = BcTree::build(&items, 4, 0).unwrap();
        let params = SearchParams::new(2, 0.5, 0.3, Mode::Avg).unwrap();
        let q = QueryVector::new(vec![0.25, 0.75]).unwrap();
        tree.for_each_leaf(|leaf| {
            let e = &leaf.items[0];
            let ip_qc = dot_f64_f32(leaf.center, q.coords());
            let q_cos = ip_qc / leaf.center_norm;
            let q_sin = (q.norm() * q.norm() - q_cos * q_cos).max(0.0).sqrt();
            let bound = point_cone_bound(q_cos, q_sin, e.normcos, e.normsin, &params);
            let exact = params.relevance_coef() * items.query_ip(0, &q);
            assert!((bound - exact).abs() <= 1e-12, "{bound} vs {exact}");
        });
        // query parallel to the item: equality at Cauchy-Schwarz
        let q_par = QueryVector::new(vec![1.0, 0.5]).unwrap();
        tree.for_each_leaf(|leaf| {
            let e = &leaf.items[0];
            let ip_qc = dot_f64_f32(leaf.center, q_par.coords());
            let q_cos = ip_qc / leaf.center_norm;
            let q_sin = (q_par.norm() * q_par.norm() - q_cos * q_cos).max(0.0).sqrt();
            let bound = point_cone_bound(q_cos, q_sin, e.normcos, e.normsin, &params);
            let cauchy = params.relevance_coef() * items.norm(0) * q_par.norm();
            assert!((bound - cauchy).abs() <= 1e-12 * cauchy, "{bound} vs {cauchy}");
        });
    }

    #[test]
    fn find_best_matches_linear_argmax() {
        let mut rng = StdRng::seed_from_u64(31);
        for trial in 0..40 {
            let n = rng.gen_range(30..300);
            let d = rng.gen_range(2..12);
            let (items, q) = synthetic::random_instance(&mut rng, n, d, trial % 3 != 0);
            let tree = BcTree::build(&items, 16, trial).unwrap();
            let k = rng.gen_range(2..=6).min(n);
            let mode = if trial % 2 == 0 { Mode::Avg } else { Mode::Max };
            let lambda = [0.1, 0.5, 0.9][trial as usize % 3];
            let params = SearchParams::new(k, lambda, 0.1, mode).unwrap();
            let mut cache = DiversityCache::new(n, mode);
            let mut s = Vec::new();
            for _ in 0..k {
                let mut stats = SearchStats::default();
                let got = tree
                    .find_best(&items, &q, &params, &cache, cache.selected_mask(), &mut stats)
                    .unwrap();
                let want = naive_best(&items, &q, &s, cache.selected_mask(), &params).unwrap();
                assert_eq!(got.0, want.0, "trial {trial}, step {}", s.len());
                assert!((got.1 - want.1).abs() <= 1e-12 * want.1.abs().max(1.0));
                cache.insert(&items, got.0).unwrap();
                s.push(got.0);
            }
        }
    }

    #[test]
    fn bc_greedy_fixture_matches_plain() {
        let (items, q) = synthetic::non_submodular_fixture();
        let tree = BcTree::build(&items, DEFAULT_LEAF_CAP, 42).unwrap();
        let params = SearchParams::new(3, 0.5, 1.0 / 3.0, Mode::Max).unwrap();
        let (r, stats) = bc_greedy(&tree, &items, &q, &params).unwrap();
        assert_eq!(r.items, vec![0, 1, 2]);
        assert!((r.objective - 1.0 / 12.0).abs() < 1e-12);
        assert_eq!(stats.steps, 3);
        let plain = greedy(&items, &q, &params).unwrap();
        assert_eq!(r, plain);

        let (d, _) = bc_dual_greedy(&tree, &items, &q, &params).unwrap();
        assert_eq!(d.items, vec![2, 3]);
        assert!((d.objective - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(d, dual_greedy(&items, &q, &params).unwrap());
    }

    #[test]
    fn bc_solvers_match_plain_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(9000);
        for trial in 0..15u64 {
            let n = rng.gen_range(100..500);
            let (items, q) = synthetic::random_instance(&mut rng, n, 8, true);
            let tree = BcTree::build(&items, 24, trial).unwrap();
            for mode in [Mode::Avg, Mode::Max] {
                let params = SearchParams::new(8, 0.5, 0.05, mode).unwrap();
                let (bg, _) = bc_greedy(&tree, &items, &q, &params).unwrap();
                let g = greedy(&items, &q, &params).unwrap();
                assert_eq!(bg.items, g.items);
                assert_eq!(bg.gains, g.gains);
                assert_eq!(bg.objective.to_bits(), g.objective.to_bits());
                let (bd, _) = bc_dual_greedy(&tree, &items, &q, &params).unwrap();
                let dd = dual_greedy(&items, &q, &params).unwrap();
                assert_eq!(bd.items, dd.items);
                assert_eq!(bd.objective.to_bits(), dd.objective.to_bits());
            }
        }
    }

    #[test]
    fn build_time_grows_subquadratically() {
        // doubling n should scale build time like n log n, well below 4x;
        // min-of-reps rejects scheduler noise, and the whole measurement
        // retries before failing
        let mut rng = StdRng::seed_from_u64(2024);
        let sets: Vec<ItemMatrix> = [10_000, 20_000, 40_000]
            .iter()
            .map(|&n| synthetic::clustered_items(&mut rng, n, 16, 16))
            .collect();
        let min_build = |items: &ItemMatrix| {
            (0..3)
                .map(|_| {
                    let start = std::time::Instant::now();
                    let tree = BcTree::build(items, 100, 7).unwrap();
                    assert_eq!(tree.n_items(), items.n());
                    start.elapsed()
                })
                .min()
                .unwrap()
        };
        for attempt in 0..3 {
            let times: Vec<f64> = sets.iter().map(|s| min_build(s).as_secs_f64()).collect();
            let ratios: Vec<f64> = times.windows(2).map(|w| w[1] / w[0].max(1e-9)).collect();
            if ratios.iter().all(|&r| r < 2.5) {
                return;
            }
            assert!(attempt < 2, "build-time ratios stayed at {ratios:?}");
        }
    }

    #[test]
    fn bc_greedy_lambda1_is_topk() {
        let mut rng = StdRng::seed_from_u64(55);
        let (items, q) = synthetic::random_instance(&mut rng, 200, 6, false);
        let tree = BcTree::build(&items, 16, 1).unwrap();
        let params = SearchParams::new(10, 1.0, 0.05, Mode::Avg).unwrap();
        let (r, _) = bc_greedy(&tree, &items, &q, &params).unwrap();
        let t = linear_topk(&items, &q, &params).unwrap();
        assert_eq!(r.items, t.items);
    }
}
