//! The two DkMIPS objectives, their marginal gains, and the incremental
//! per-candidate caches that make each greedy step O(nd).
//!
//! For a result set S and query q, with balance lambda, scaling mu and
//! result size k:
//!
//! ```text
//! f_avg(S) = (lambda/k) * sum_{p in S} <p,q>
//!            - (2*mu*(1-lambda) / (k*(k-1))) * sum_{p != p' in S} <p,p'>
//! f_max(S) = (lambda/k) * sum_{p in S} <p,q>
//!            - mu*(1-lambda) * max_{p != p' in S} <p,p'>
//! ```
//!
//! The diversity term is 0 when |S| < 2. Marginal gains are the exact
//! differences f(S + p) - f(S); the avg-mode gain only needs the running sum
//! of inner products against S, the max-mode gain only the running max plus
//! the current maximum pairwise inner product inside S.

use crate::dataset::{dot, ItemMatrix, QueryVector};
use crate::error::{Error, Result};
use crate::par;

/// Which pairwise-similarity penalty the objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Penalize the average pairwise inner product (submodular objective).
    Avg,
    /// Penalize the maximum pairwise inner product.
    Max,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Avg => "avg",
            Mode::Max => "max",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Mode::Avg),
            "max" => Ok(Mode::Max),
            other => Err(Error::Parameter(format!("unknown mode `{other}`"))),
        }
    }
}

/// Search knobs: result size k, balance lambda in [0,1], scaling mu > 0.
///
/// k = 1 is accepted and degenerates to plain top-1 MIPS; the pairwise
/// normalizer k*(k-1) is never evaluated in that case.
#[derive(Debug, Clone, Copy)]
pub struct SearchParams {
    pub k: usize,
    pub lambda: f64,
    pub mu: f64,
    pub mode: Mode,
}

impl SearchParams {
    pub fn new(k: usize, lambda: f64, mu: f64, mode: Mode) -> Result<Self> {
        if k < 1 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Parameter(format!(
                "lambda must lie in [0,1], got {lambda}"
            )));
        }
        if mu <= 0.0 || !mu.is_finite() {
            return Err(Error::Parameter(format!("mu must be positive, got {mu}")));
        }
        Ok(SearchParams { k, lambda, mu, mode })
    }

    /// lambda / k — the relevance coefficient shared by both objectives.
    #[inline]
    pub fn relevance_coef(&self) -> f64 {
        self.lambda / self.k as f64
    }

    /// 2*mu*(1-lambda) / (k*(k-1)) — avg-mode pair coefficient; requires k >= 2.
    #[inline]
    pub(crate) fn avg_pair_coef(&self) -> f64 {
        debug_assert!(self.k >= 2);
        2.0 * self.mu * (1.0 - self.lambda) / (self.k as f64 * (self.k as f64 - 1.0))
    }

    /// mu*(1-lambda) — max-mode penalty coefficient.
    #[inline]
    pub(crate) fn max_pair_coef(&self) -> f64 {
        self.mu * (1.0 - self.lambda)
    }
}

/// An ordered selection with its per-step marginal gains and final objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    /// Selected item ids in insertion order.
    pub items: Vec<usize>,
    /// Marginal gain recorded at each insertion.
    pub gains: Vec<f64>,
    /// Objective value of `items`; equals the telescoped sum of `gains`.
    pub objective: f64,
}

impl ResultSet {
    pub(crate) fn from_gains(items: Vec<usize>, gains: Vec<f64>) -> Self {
        let objective = gains.iter().sum();
        ResultSet {
            items,
            gains,
            objective,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn check_ids(items: &ItemMatrix, ids: &[usize]) -> Result<()> {
    let mut seen = vec![false; items.n()];
    for &id in ids {
        if id >= items.n() {
            return Err(Error::Parameter(format!(
                "item id {id} out of range (n={})",
                items.n()
            )));
        }
        if seen[id] {
            return Err(Error::Parameter(format!("duplicate item id {id}")));
        }
        seen[id] = true;
    }
    Ok(())
}

/// Evaluates f_avg from scratch on an id set. |S| may be below k; the
/// normalizers still use the k from `params`.
pub fn eval_f_avg(items: &ItemMatrix, ids: &[usize], q: &QueryVector, params: &SearchParams) -> Result<f64> {
    check_ids(items, ids)?;
    q.check_dim(items)?;
    if params.k < 2 && ids.len() >= 2 {
        return Err(Error::Parameter(format!(
            "k={} cannot normalize a {}-item pairwise sum; k > 1 is required",
            params.k,
            ids.len()
        )));
    }
    let rel: f64 = ids
        .iter()
        .map(|&i| params.relevance_coef() * items.query_ip(i, q))
        .sum();
    if ids.len() < 2 {
        return Ok(rel);
    }
    let mut pair_sum = 0.0f64;
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            pair_sum += items.pair_ip(i, j);
        }
    }
    Ok(rel - params.avg_pair_coef() * pair_sum)
}

/// Evaluates f_max from scratch on an id set; the max over fewer than two
/// elements is defined as 0.
pub fn eval_f_max(items: &ItemMatrix, ids: &[usize], q: &QueryVector, params: &SearchParams) -> Result<f64> {
    check_ids(items, ids)?;
    q.check_dim(items)?;
    let rel: f64 = ids
        .iter()
        .map(|&i| params.relevance_coef() * items.query_ip(i, q))
        .sum();
    if ids.len() < 2 {
        return Ok(rel);
    }
    let mut max_pair = f64::NEG_INFINITY;
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            max_pair = max_pair.max(items.pair_ip(i, j));
        }
    }
    Ok(rel - params.max_pair_coef() * max_pair)
}

/// Evaluates the objective selected by `params.mode`.
pub fn eval_objective(items: &ItemMatrix, ids: &[usize], q: &QueryVector, params: &SearchParams) -> Result<f64> {
    match params.mode {
        Mode::Avg => eval_f_avg(items, ids, q, params),
        Mode::Max => eval_f_max(items, ids, q, params),
    }
}

/// Per-candidate running diversity state for one in-flight query.
///
/// Avg mode keeps `sum_{p' in S} <p,p'>` per candidate; max mode keeps
/// `max_{p' in S} <p,p'>` per candidate plus the scalar maximum pairwise
/// inner product within S. One cache per query, never shared.
#[derive(Debug, Clone)]
pub struct DiversityCache {
    mode: Mode,
    /// Avg: running sums (0 at start). Max: running maxes (-inf at start).
    values: Vec<f64>,
    /// Max pairwise inner product within S; -inf until |S| >= 2.
    max_pair: f64,
    selected: Vec<bool>,
    members: Vec<usize>,
}

impl DiversityCache {
    pub fn new(n: usize, mode: Mode) -> Self {
        let init = match mode {
            Mode::Avg => 0.0,
            Mode::Max => f64::NEG_INFINITY,
        };
        DiversityCache {
            mode,
            values: vec![init; n],
            max_pair: f64::NEG_INFINITY,
            selected: vec![false; n],
            members: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of items inserted so far (|S|).
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    #[inline]
    pub fn is_selected(&self, id: usize) -> bool {
        self.selected[id]
    }

    pub fn selected_mask(&self) -> &[bool] {
        &self.selected
    }

    /// Max pairwise inner product within S, with the convention that sets of
    /// fewer than two elements yield 0.
    #[inline]
    pub fn max_pair(&self) -> f64 {
        if self.members.len() < 2 {
            0.0
        } else {
            self.max_pair
        }
    }

    /// Cached div_avg / div_max value for a candidate.
    #[inline]
    pub fn value(&self, id: usize) -> f64 {
        self.values[id]
    }

    /// Marginal gain of adding candidate `id`, given its query inner product.
    /// O(1): everything else is cached.
    #[inline]
    pub fn gain(&self, id: usize, ip_q: f64, params: &SearchParams) -> f64 {
        let rel = params.relevance_coef() * ip_q;
        match self.mode {
            Mode::Avg => {
                if self.members.is_empty() {
                    rel
                } else {
                    rel - params.avg_pair_coef() * self.values[id]
                }
            }
            Mode::Max => rel - params.max_pair_coef() * self.delta_max(id),
        }
    }

    /// Increase of the max pairwise inner product caused by adding `id`,
    /// under the |S| < 2 => 0 convention.
    #[inline]
    pub(crate) fn delta_max(&self, id: usize) -> f64 {
        match self.members.len() {
            0 => 0.0,
            1 => self.values[id],
            _ => self.values[id].max(self.max_pair) - self.max_pair,
        }
    }

    /// Folds a newly selected item into every candidate's running state.
    /// O(nd) total; entries are independent, so the update runs in parallel.
    pub fn insert(&mut self, items: &ItemMatrix, new_id: usize) -> Result<()> {
        if new_id >= items.n() {
            return Err(Error::Parameter(format!(
                "item id {new_id} out of range (n={})",
                items.n()
            )));
        }
        if self.selected[new_id] {
            return Err(Error::Logic(format!("item {new_id} is already selected")));
        }
        // the new member's own entry still holds its diversity w.r.t. S
        let div_of_new = self.values[new_id];
        let new_row = items.row(new_id);
        let mode = self.mode;
        par::for_each_indexed(&mut self.values, |i, v| {
            let ip = dot(items.row(i), new_row);
            match mode {
                Mode::Avg => *v += ip,
                Mode::Max => {
                    if ip > *v {
                        *v = ip;
                    }
                }
            }
        });
        if mode == Mode::Max && !self.members.is_empty() {
            // the previous cache row of the inserted item is exactly
            // max_{p' in S} <new, p'>, which updates the pair max in O(1)
            self.max_pair = self.max_pair.max(div_of_new);
        }
        self.selected[new_id] = true;
        self.members.push(new_id);
        Ok(())
    }
}

/// Marginal gain of f_avg for candidate `p` against the cache's current S.
/// Computes one fresh inner product with the query, everything else is O(1).
pub fn marginal_avg(
    items: &ItemMatrix,
    p: usize,
    q: &QueryVector,
    params: &SearchParams,
    cache: &DiversityCache,
) -> Result<f64> {
    if cache.mode() != Mode::Avg {
        return Err(Error::Logic("cache mode is not Avg".into()));
    }
    if p >= items.n() {
        return Err(Error::Parameter(format!("item id {p} out of range")));
    }
    if cache.is_selected(p) {
        return Err(Error::Logic(format!("item {p} is already in S")));
    }
    Ok(cache.gain(p, items.query_ip(p, q), params))
}

/// Marginal gain of f_max for candidate `p` against the cache's current S.
pub fn marginal_max(
    items: &ItemMatrix,
    p: usize,
    q: &QueryVector,
    params: &SearchParams,
    cache: &DiversityCache,
) -> Result<f64> {
    if cache.mode() != Mode::Max {
        return Err(Error::Logic("cache mode is not Max".into()));
    }
    if p >= items.n() {
        return Err(Error::Parameter(format!("item id {p} out of range")));
    }
    if cache.is_selected(p) {
        return Err(Error::Logic(format!("item {p} is already in S")));
    }
    Ok(cache.gain(p, items.query_ip(p, q), params))
}

/// Marginal gain for the mode selected by `params`, recomputed from scratch
/// over an explicit S (no cache). Used as the independent route in tests and
/// by the linear-scan oracle.
pub fn marginal_naive(
    items: &ItemMatrix,
    p: usize,
    s: &[usize],
    q: &QueryVector,
    params: &SearchParams,
) -> f64 {
    let rel = params.relevance_coef() * items.query_ip(p, q);
    match params.mode {
        Mode::Avg => {
            if s.is_empty() {
                rel
            } else {
                let sum: f64 = s.iter().map(|&j| items.pair_ip(p, j)).sum();
                rel - params.avg_pair_coef() * sum
            }
        }
        Mode::Max => {
            let delta = match s.len() {
                0 => 0.0,
                1 => items.pair_ip(p, s[0]),
                _ => {
                    let div: f64 = s
                        .iter()
                        .map(|&j| items.pair_ip(p, j))
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut max_pair = f64::NEG_INFINITY;
                    for (a, &i) in s.iter().enumerate() {
                        for &j in &s[a + 1..] {
                            max_pair = max_pair.max(items.pair_ip(i, j));
                        }
                    }
                    div.max(max_pair) - max_pair
                }
            };
            rel - params.max_pair_coef() * delta
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn fixture() -> (ItemMatrix, QueryVector, SearchParams, SearchParams) {
        let (items, q) = synthetic::non_submodular_fixture();
        let avg = SearchParams::new(3, 0.5, 1.0 / 3.0, Mode::Avg).unwrap();
        let max = SearchParams::new(3, 0.5, 1.0 / 3.0, Mode::Max).unwrap();
        (items, q, avg, max)
    }

    #[test]
    fn f_avg_golden() {
        let (items, q, avg, _) = fixture();
        let v = eval_f_avg(&items, &[0, 1, 2], &q, &avg).unwrap();
        assert!((v - 5.0 / 36.0).abs() < 1e-12, "{v}");
        // lambda = 1 leaves only the relevance term
        let p1 = SearchParams::new(3, 1.0, 0.05, Mode::Avg).unwrap();
        let v1 = eval_f_avg(&items, &[0], &q, &p1).unwrap();
        assert!((v1 - 1.0 / 3.0).abs() < 1e-12);
        // lambda = 0 leaves the negated diversity term
        let p0 = SearchParams::new(3, 0.0, 1.0 / 3.0, Mode::Avg).unwrap();
        let v0 = eval_f_avg(&items, &[0, 1], &q, &p0).unwrap();
        assert!((v0 + (2.0 / 18.0) * 1.0).abs() < 1e-12, "{v0}");
    }

    #[test]
    fn f_max_golden() {
        let (items, q, _, max) = fixture();
        let v = eval_f_max(&items, &[0, 1, 2], &q, &max).unwrap();
        assert!((v - 1.0 / 12.0).abs() < 1e-12, "{v}");
        let orth = eval_f_max(&items, &[2, 3], &q, &max).unwrap();
        assert!((orth - 1.0 / 3.0).abs() < 1e-12);
        let single = eval_f_max(&items, &[0], &q, &max).unwrap();
        assert!((single - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn k1_with_multiple_items_is_rejected() {
        let (items, q, _, _) = fixture();
        let p = SearchParams::new(1, 0.5, 0.05, Mode::Avg).unwrap();
        assert!(matches!(
            eval_f_avg(&items, &[0, 1], &q, &p),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn marginal_avg_golden() {
        let (items, q, avg, _) = fixture();
        let mut cache = DiversityCache::new(items.n(), Mode::Avg);
        // empty S: gain is (lambda/k) <p,q>
        for p in 0..4 {
            let g = marginal_avg(&items, p, &q, &avg, &cache).unwrap();
            let rel = avg.relevance_coef() * items.query_ip(p, &q);
            assert_eq!(g, rel);
        }
        cache.insert(&items, 0).unwrap();
        let g = marginal_avg(&items, 2, &q, &avg, &cache).unwrap();
        assert!((g - 1.0 / 18.0).abs() < 1e-12, "{g}");
        assert!(matches!(
            marginal_avg(&items, 0, &q, &avg, &cache),
            Err(Error::Logic(_))
        ));
    }

    #[test]
    fn marginal_max_example_values() {
        let (items, q, _, max) = fixture();
        let mut cache = DiversityCache::new(items.n(), Mode::Max);
        cache.insert(&items, 0).unwrap();
        let g = marginal_max(&items, 2, &q, &max, &cache).unwrap();
        assert!((g + 1.0 / 6.0).abs() < 1e-12, "{g}");
        cache.insert(&items, 1).unwrap();
        let g = marginal_max(&items, 2, &q, &max, &cache).unwrap();
        assert!(g.abs() < 1e-12, "{g}");
        let g4 = marginal_max(&items, 3, &q, &max, &cache).unwrap();
        assert!(g4.abs() < 1e-12, "{g4}");

        let mut c2 = DiversityCache::new(items.n(), Mode::Max);
        c2.insert(&items, 1).unwrap();
        let g = marginal_max(&items, 3, &q, &max, &c2).unwrap();
        assert!((g - 1.0 / 6.0).abs() < 1e-12, "{g}");
    }

    #[test]
    fn cache_insert_golden() {
        let (items, _, _, _) = fixture();
        let mut avg = DiversityCache::new(items.n(), Mode::Avg);
        let mut max = DiversityCache::new(items.n(), Mode::Max);
        avg.insert(&items, 0).unwrap();
        max.insert(&items, 0).unwrap();
        assert_eq!(max.max_pair(), 0.0, "single member has no pairs");
        avg.insert(&items, 1).unwrap();
        max.insert(&items, 1).unwrap();
        assert_eq!(avg.value(2), 4.0, "<p3,p1> + <p3,p2> = 2 + 2");
        assert_eq!(max.max_pair(), 1.0, "<p1,p2> = 1");
    }

    #[test]
    fn gains_telescope_to_objective() {
        let mut rng = StdRng::seed_from_u64(7);
        for trial in 0..50 {
            let n = rng.gen_range(3..12);
            let d = rng.gen_range(1..6);
            let (items, q) = synthetic::random_instance(&mut rng, n, d, true);
            let k = rng.gen_range(2..=n.min(5));
            for mode in [Mode::Avg, Mode::Max] {
                let params = SearchParams::new(k, rng.gen_range(0.0..=1.0), 0.3, mode).unwrap();
                let mut cache = DiversityCache::new(n, mode);
                let mut order: Vec<usize> = Vec::new();
                let mut total = 0.0;
                for _ in 0..k {
                    let p = loop {
                        let c = rng.gen_range(0..n);
                        if !cache.is_selected(c) {
                            break c;
                        }
                    };
                    total += cache.gain(p, items.query_ip(p, &q), &params);
                    cache.insert(&items, p).unwrap();
                    order.push(p);
                }
                let direct = eval_objective(&items, &order, &q, &params).unwrap();
                let tol = 1e-9 * direct.abs().max(1.0);
                assert!(
                    (total - direct).abs() <= tol,
                    "trial {trial} mode {mode:?}: telescoped {total} vs direct {direct}"
                );
            }
        }
    }

    #[test]
    fn cached_gains_match_naive_recomputation() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(3..15);
            let d = rng.gen_range(1..6);
            let (items, q) = synthetic::random_instance(&mut rng, n, d, true);
            let k = rng.gen_range(2..=n.min(6));
            let mode = if rng.gen_bool(0.5) { Mode::Avg } else { Mode::Max };
            let params = SearchParams::new(k, rng.gen_range(0.0..=1.0), 0.5, mode).unwrap();
            let mut cache = DiversityCache::new(n, mode);
            let mut s: Vec<usize> = Vec::new();
            for _ in 0..k {
                for p in 0..n {
                    if cache.is_selected(p) {
                        continue;
                    }
                    let cached = cache.gain(p, items.query_ip(p, &q), &params);
                    let naive = marginal_naive(&items, p, &s, &q, &params);
                    let tol = 1e-6 * cached.abs().max(naive.abs()) + 1e-12;
                    assert!((cached - naive).abs() <= tol, "{cached} vs {naive}");
                }
                let p = (0..n).find(|&p| !cache.is_selected(p)).unwrap();
                cache.insert(&items, p).unwrap();
                s.push(p);
            }
        }
    }

    #[test]
    fn submodularity_of_avg_spot_check() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(4..12);
            let (items, q) = synthetic::random_instance(&mut rng, n, 4, true);
            let params = SearchParams::new(4, rng.gen_range(0.0..=1.0), 0.7, Mode::Avg).unwrap();
            // S subset of T, p outside T
            let t_len = rng.gen_range(1..n - 1);
            let t: Vec<usize> = (0..t_len).collect();
            let s_len = rng.gen_range(0..=t_len);
            let s: Vec<usize> = t[..s_len].to_vec();
            let p = n - 1;
            let gs = marginal_naive(&items, p, &s, &q, &params);
            let gt = marginal_naive(&items, p, &t, &q, &params);
            assert!(gs - gt >= -1e-9, "submodularity violated: {gs} < {gt}");
        }
    }
}
