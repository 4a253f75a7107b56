//! Linear-scan solvers: exact top-k MIPS, greedy selection, and the
//! dual-greedy variant that maintains two disjoint result sets.
//!
//! All three run in O(ndk) using the incremental diversity caches. Ties are
//! broken by the lower item id everywhere (strict improvement is required to
//! replace an incumbent), which makes the tree-accelerated variants testable
//! against these as an exact reference.

use crate::dataset::{ItemMatrix, QueryVector};
use crate::error::{Error, Result};
use crate::objective::{DiversityCache, ResultSet, SearchParams};
use crate::par;

pub(crate) fn check_k(items: &ItemMatrix, k: usize) -> Result<()> {
    if k > items.n() {
        return Err(Error::Parameter(format!(
            "k={k} exceeds the number of items n={}",
            items.n()
        )));
    }
    Ok(())
}

/// All query inner products, in one parallel pass.
pub(crate) fn query_ips(items: &ItemMatrix, q: &QueryVector) -> Vec<f64> {
    par::map_collect(items.n(), |i| items.query_ip(i, q))
}

/// Exact kMIPS: the k items with the largest inner products, ordered
/// descending, ties broken by lower id. The objective field reports the
/// relevance term (lambda/k) * sum of the selected inner products.
pub fn linear_topk(items: &ItemMatrix, q: &QueryVector, params: &SearchParams) -> Result<ResultSet> {
    q.check_dim(items)?;
    check_k(items, params.k)?;
    let ips = query_ips(items, q);
    let mut order: Vec<usize> = (0..items.n()).collect();
    order.sort_unstable_by(|&a, &b| {
        ips[b]
            .partial_cmp(&ips[a])
            .expect("inner products are finite")
            .then(a.cmp(&b))
    });
    order.truncate(params.k);
    let gains: Vec<f64> = order
        .iter()
        .map(|&i| params.relevance_coef() * ips[i])
        .collect();
    Ok(ResultSet::from_gains(order, gains))
}

/// Greedy selection: the first item is the plain MIPS winner, each later
/// item maximizes the marginal gain over the remaining candidates. All k
/// slots are filled even when every remaining gain is negative.
pub fn greedy(items: &ItemMatrix, q: &QueryVector, params: &SearchParams) -> Result<ResultSet> {
    q.check_dim(items)?;
    check_k(items, params.k)?;
    let n = items.n();
    let ips = query_ips(items, q);
    let none_selected = vec![false; n];
    let (first, _) =
        par::best_candidate(n, &none_selected, |i| ips[i]).expect("n >= 1 by construction");

    let mut selected = vec![first];
    let mut gains = vec![params.relevance_coef() * ips[first]];
    if params.k > 1 {
        let mut cache = DiversityCache::new(n, params.mode);
        cache.insert(items, first)?;
        for _ in 1..params.k {
            let (best, gain) = par::best_candidate(n, cache.selected_mask(), |i| {
                cache.gain(i, ips[i], params)
            })
            .expect("k <= n leaves at least one candidate");
            selected.push(best);
            gains.push(gain);
            cache.insert(items, best)?;
        }
    }
    Ok(ResultSet::from_gains(selected, gains))
}

/// State for one of dual-greedy's two result sets.
struct DualSet {
    cache: DiversityCache,
    ids: Vec<usize>,
    gains: Vec<f64>,
}

impl DualSet {
    fn objective(&self) -> f64 {
        self.gains.iter().sum()
    }
}

/// Dual-greedy: grows two disjoint result sets over a shared candidate pool,
/// each round inserting the better set's best candidate, and stops early once
/// neither set can gain. Returns the set with the larger objective, which may
/// hold fewer than k items.
pub fn dual_greedy(items: &ItemMatrix, q: &QueryVector, params: &SearchParams) -> Result<ResultSet> {
    q.check_dim(items)?;
    check_k(items, params.k)?;
    let n = items.n();
    let ips = query_ips(items, q);
    let mut sets = [
        DualSet {
            cache: DiversityCache::new(n, params.mode),
            ids: Vec::new(),
            gains: Vec::new(),
        },
        DualSet {
            cache: DiversityCache::new(n, params.mode),
            ids: Vec::new(),
            gains: Vec::new(),
        },
    ];
    // candidates are drawn from P minus both sets
    let mut taken = vec![false; n];
    let mut remaining = n;

    while sets.iter().any(|s| s.ids.len() < params.k) {
        if remaining == 0 {
            break;
        }
        let mut best: [Option<(usize, f64)>; 2] = [None, None];
        for (j, set) in sets.iter().enumerate() {
            if set.ids.len() < params.k {
                best[j] =
                    par::best_candidate(n, &taken, |i| set.cache.gain(i, ips[i], params));
            }
        }
        let g1 = best[0].map_or(f64::NEG_INFINITY, |(_, g)| g);
        let g2 = best[1].map_or(f64::NEG_INFINITY, |(_, g)| g);
        if g1.max(g2) <= 0.0 {
            break;
        }
        let j = if g1 >= g2 { 0 } else { 1 };
        let (id, gain) = best[j].expect("winning side has a candidate");
        sets[j].cache.insert(items, id)?;
        sets[j].ids.push(id);
        sets[j].gains.push(gain);
        taken[id] = true;
        remaining -= 1;
    }

    let [s1, s2] = sets;
    let winner = if s1.objective() >= s2.objective() { s1 } else { s2 };
    Ok(ResultSet::from_gains(winner.ids, winner.gains))
}
