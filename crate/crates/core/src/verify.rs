//! Randomized verification suites: objective properties, approximation
//! bounds, bound-chain soundness, and tree-vs-scan equivalence.
//!
//! Each suite generates instances from a per-case seed derived from the
//! configured base seed, so reports are identical across runs and thread
//! counts. The same runners back `dkmips verify` and the acceptance tests.

use std::fmt;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::bctree::{
    bc_dual_greedy, bc_greedy, node_ball_bound, point_ball_bound, point_cone_bound, BcTree,
};
use crate::dataset::{dot_f64_f32, ItemMatrix};
use crate::error::Result;
use crate::greedy::{dual_greedy, greedy, linear_topk};
use crate::objective::{marginal_naive, DiversityCache, Mode, SearchParams};
use crate::oracle::{check_dualgreedy_ratio, check_greedy_datadep, enumeration_guard};
use crate::par;
use crate::synthetic;

/// Default scaling factors, one per objective.
pub const DEFAULT_MU_AVG: f64 = 0.05;
pub const DEFAULT_MU_MAX: f64 = 0.001;

const LAMBDA_SWEEP: [f64; 3] = [0.1, 0.5, 0.9];

/// Case counts and instance sizes for the verification suites. Defaults
/// match the acceptance gate.
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub seed: u64,
    pub submodular_cases: usize,
    pub cache_traces: usize,
    pub ratio_cases: usize,
    pub datadep_cases: usize,
    pub oracle_max_n: usize,
    pub oracle_ks: Vec<usize>,
    pub chain_builds: usize,
    pub chain_sets: usize,
    pub chain_n: usize,
    pub chain_d: usize,
    pub equiv_cases: usize,
    pub equiv_n: usize,
    pub equiv_d: usize,
    pub lambda_one_cases: usize,
    pub tree_builds: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 42,
            submodular_cases: 1000,
            cache_traces: 1000,
            ratio_cases: 200,
            datadep_cases: 200,
            oracle_max_n: 10,
            oracle_ks: vec![2, 3],
            chain_builds: 50,
            chain_sets: 20,
            chain_n: 5000,
            chain_d: 16,
            equiv_cases: 100,
            equiv_n: 2000,
            equiv_d: 16,
            lambda_one_cases: 100,
            tree_builds: 20,
        }
    }
}

impl VerifyConfig {
    /// A scaled-down configuration for quick smoke runs.
    pub fn quick(seed: u64) -> Self {
        VerifyConfig {
            seed,
            submodular_cases: 100,
            cache_traces: 100,
            ratio_cases: 30,
            datadep_cases: 30,
            chain_builds: 3,
            chain_sets: 5,
            chain_n: 600,
            chain_d: 8,
            equiv_cases: 10,
            equiv_n: 400,
            equiv_d: 8,
            lambda_one_cases: 10,
            tree_builds: 5,
            ..VerifyConfig::default()
        }
    }
}

/// Aggregated outcome of one suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub passed: usize,
    pub skipped: usize,
    pub failed: usize,
    /// Smallest margin by which a case cleared its bound, when applicable.
    pub worst_slack: Option<f64>,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }

    fn from_outcomes(name: &'static str, outcomes: Vec<CaseOutcome>) -> SuiteReport {
        let mut report = SuiteReport {
            name,
            cases: outcomes.len(),
            passed: 0,
            skipped: 0,
            failed: 0,
            worst_slack: None,
        };
        for o in outcomes {
            match o {
                CaseOutcome::Pass(slack) => {
                    report.passed += 1;
                    report.absorb_slack(slack);
                }
                CaseOutcome::Skip => report.skipped += 1,
                CaseOutcome::Fail(slack) => {
                    report.failed += 1;
                    report.absorb_slack(slack);
                }
            }
        }
        report
    }

    fn absorb_slack(&mut self, slack: Option<f64>) {
        if let Some(s) = slack {
            self.worst_slack = Some(match self.worst_slack {
                Some(w) => w.min(s),
                None => s,
            });
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} cases, {} passed, {} skipped, {} failed",
            self.name, self.cases, self.passed, self.skipped, self.failed
        )?;
        if let Some(s) = self.worst_slack {
            write!(f, ", worst slack {s:.3e}")?;
        }
        Ok(())
    }
}

enum CaseOutcome {
    Pass(Option<f64>),
    Skip,
    Fail(Option<f64>),
}

fn case_rng(base: u64, salt: u64, case: usize) -> StdRng {
    StdRng::seed_from_u64(base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (case as u64) << 17)
}

/// Diminishing returns of the avg objective: for S inside T and p outside T,
/// the gain w.r.t. S is never smaller than w.r.t. T.
pub fn run_submodularity(cfg: &VerifyConfig) -> SuiteReport {
    let outcomes = par::map_collect_tasks(cfg.submodular_cases, |case| {
        let mut rng = case_rng(cfg.seed, 1, case);
        let n = rng.gen_range(4..=20);
        let d = rng.gen_range(1..=8);
        let (items, q) = synthetic::random_instance(&mut rng, n, d, true);
        let k = rng.gen_range(2..=6);
        let lambda = rng.gen_range(0.0..=1.0);
        let params = SearchParams::new(k, lambda, DEFAULT_MU_AVG, Mode::Avg).unwrap();
        // random S inside T, p outside T
        let mut ids: Vec<usize> = (0..n).collect();
        partial_shuffle(&mut ids, &mut rng);
        let t_len = rng.gen_range(1..n);
        let s_len = rng.gen_range(0..=t_len);
        let p = ids[n - 1];
        let t = &ids[..t_len];
        let s = &t[..s_len];
        let slack = marginal_naive(&items, p, s, &q, &params)
            - marginal_naive(&items, p, t, &q, &params);
        if slack >= -1e-9 {
            CaseOutcome::Pass(Some(slack))
        } else {
            CaseOutcome::Fail(Some(slack))
        }
    });
    SuiteReport::from_outcomes("submodularity (avg objective)", outcomes)
}

/// Cached marginal gains equal naive recomputation along random insertion
/// traces, within 1e-6 relative.
pub fn run_cache_consistency(cfg: &VerifyConfig) -> SuiteReport {
    let outcomes = par::map_collect_tasks(cfg.cache_traces, |case| {
        let mut rng = case_rng(cfg.seed, 2, case);
        let n = rng.gen_range(3..=20);
        let d = rng.gen_range(1..=8);
        let (items, q) = synthetic::random_instance(&mut rng, n, d, true);
        let k = rng.gen_range(2..=n.min(8));
        let mode = if case % 2 == 0 { Mode::Avg } else { Mode::Max };
        let mu = if mode == Mode::Avg { DEFAULT_MU_AVG } else { DEFAULT_MU_MAX };
        let params = SearchParams::new(k, rng.gen_range(0.0..=1.0), mu, mode).unwrap();
        let mut cache = DiversityCache::new(n, mode);
        let mut order: Vec<usize> = (0..n).collect();
        partial_shuffle(&mut order, &mut rng);
        let mut s: Vec<usize> = Vec::new();
        let mut worst: f64 = f64::INFINITY;
        for &next in order.iter().take(k) {
            for cand in 0..n {
                if cache.is_selected(cand) {
                    continue;
                }
                let cached = cache.gain(cand, items.query_ip(cand, &q), &params);
                let naive = marginal_naive(&items, cand, &s, &q, &params);
                let tol = 1e-6 * cached.abs().max(naive.abs()).max(1e-6);
                worst = worst.min(tol - (cached - naive).abs());
                if (cached - naive).abs() > tol {
                    return CaseOutcome::Fail(Some(tol - (cached - naive).abs()));
                }
            }
            cache.insert(&items, next).unwrap();
            s.push(next);
        }
        CaseOutcome::Pass(Some(worst))
    });
    SuiteReport::from_outcomes("incremental cache vs naive gains", outcomes)
}

fn oracle_instance(
    cfg: &VerifyConfig,
    case: usize,
    salt: u64,
) -> (ItemMatrix, crate::dataset::QueryVector, usize, f64) {
    let mut rng = case_rng(cfg.seed, salt, case);
    let ks = &cfg.oracle_ks;
    let k = ks[case % ks.len()];
    let lambda = LAMBDA_SWEEP[(case / ks.len()) % LAMBDA_SWEEP.len()];
    let n = rng.gen_range((k + 1).max(4)..=cfg.oracle_max_n.max(k + 1));
    let d = rng.gen_range(2..=6);
    let (items, q) = synthetic::random_instance(&mut rng, n, d, true);
    (items, q, k, lambda)
}

/// Quarter-ratio guarantee of dual-greedy against the exhaustive optimum.
pub fn run_dualgreedy_ratio(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let max_k = cfg.oracle_ks.iter().copied().max().unwrap_or(2);
    enumeration_guard(cfg.oracle_max_n, max_k)?;
    let outcomes = par::map_collect_tasks(cfg.ratio_cases, |case| {
        let (items, q, k, lambda) = oracle_instance(cfg, case, 3);
        let params = SearchParams::new(k, lambda, DEFAULT_MU_AVG, Mode::Avg).unwrap();
        let check = check_dualgreedy_ratio(&items, &q, &params).unwrap();
        if check.passed {
            CaseOutcome::Pass(Some(check.slack))
        } else {
            CaseOutcome::Fail(Some(check.slack))
        }
    });
    Ok(SuiteReport::from_outcomes(
        "dual-greedy 1/4 ratio vs oracle",
        outcomes,
    ))
}

/// Data-dependent greedy bound, both modes, skipping non-positive kMIPS
/// instances as the bound's precondition requires.
pub fn run_greedy_datadep(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let max_k = cfg.oracle_ks.iter().copied().max().unwrap_or(2);
    enumeration_guard(cfg.oracle_max_n, max_k)?;
    let outcomes = par::map_collect_tasks(cfg.datadep_cases, |case| {
        let (items, q, k, lambda) = oracle_instance(cfg, case, 4);
        let (mode, mu) = if case % 2 == 0 {
            (Mode::Avg, DEFAULT_MU_AVG)
        } else {
            (Mode::Max, DEFAULT_MU_MAX)
        };
        let params = SearchParams::new(k, lambda, mu, mode).unwrap();
        let check = check_greedy_datadep(&items, &q, &params).unwrap();
        if check.skipped {
            CaseOutcome::Skip
        } else if check.passed {
            CaseOutcome::Pass(Some(check.slack))
        } else {
            CaseOutcome::Fail(Some(check.slack))
        }
    });
    Ok(SuiteReport::from_outcomes(
        "greedy data-dependent bound vs oracle",
        outcomes,
    ))
}

/// Bound chain on random builds: for every leaf item and random partial
/// result set, gain <= cone <= ball <= node bound (1e-9 slack each).
pub fn run_bound_chain(cfg: &VerifyConfig) -> SuiteReport {
    let outcomes = par::map_collect_tasks(cfg.chain_builds, |case| {
        let mut rng = case_rng(cfg.seed, 5, case);
        let items = synthetic::random_items(&mut rng, cfg.chain_n, cfg.chain_d);
        let tree = BcTree::build(&items, 100, cfg.seed ^ case as u64).unwrap();
        let q = synthetic::random_query(&mut rng, cfg.chain_d, true);
        let k = 10usize;
        let mode = if case % 2 == 0 { Mode::Avg } else { Mode::Max };
        let mu = if mode == Mode::Avg { DEFAULT_MU_AVG } else { DEFAULT_MU_MAX };
        let lambda = LAMBDA_SWEEP[case % LAMBDA_SWEEP.len()];
        let params = SearchParams::new(k, lambda, mu, mode).unwrap();
        let sets: Vec<Vec<usize>> = (0..cfg.chain_sets)
            .map(|_| {
                let len = rng.gen_range(1..k);
                sample_distinct(&mut rng, cfg.chain_n, len)
            })
            .collect();
        let mut worst = f64::INFINITY;
        let mut violated = false;
        tree.for_each_leaf(|leaf| {
            if violated {
                return;
            }
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
                let ub_ball = point_ball_bound(ip_qc, e.radius, q.norm(), &params);
                let ub_cone = if leaf.center_norm > 0.0 {
                    point_cone_bound(q_cos, q_sin, e.normcos, e.normsin, &params)
                } else {
                    ub_ball
                };
                worst = worst.min(ub_ball - ub_cone).min(ub_node - ub_ball);
                if ub_cone > ub_ball + 1e-9 || ub_ball > ub_node + 1e-9 {
                    violated = true;
                    return;
                }
                for s in &sets {
                    if s.contains(&id) {
                        continue;
                    }
                    let delta = marginal_naive(&items, id, s, &q, &params);
                    worst = worst.min(ub_cone - delta);
                    if delta > ub_cone + 1e-9 {
                        violated = true;
                        return;
                    }
                }
            }
        });
        if violated {
            CaseOutcome::Fail(Some(worst))
        } else {
            CaseOutcome::Pass(Some(worst))
        }
    });
    SuiteReport::from_outcomes("bound chain gain <= cone <= ball <= node", outcomes)
}

/// Tree-served solvers return the same sequences, gains, and objective bits
/// as the linear-scan solvers.
pub fn run_equivalence(cfg: &VerifyConfig) -> SuiteReport {
    let outcomes = par::map_collect_tasks(cfg.equiv_cases, |case| {
        let mut rng = case_rng(cfg.seed, 6, case);
        let (items, q) = synthetic::random_instance(&mut rng, cfg.equiv_n, cfg.equiv_d, true);
        let tree = BcTree::build(&items, 100, cfg.seed ^ case as u64).unwrap();
        let k = 10usize.min(cfg.equiv_n / 2);
        for &lambda in &LAMBDA_SWEEP {
            for mode in [Mode::Avg, Mode::Max] {
                let mu = if mode == Mode::Avg { DEFAULT_MU_AVG } else { DEFAULT_MU_MAX };
                let params = SearchParams::new(k, lambda, mu, mode).unwrap();
                let plain = greedy(&items, &q, &params).unwrap();
                let (tree_r, _) = bc_greedy(&tree, &items, &q, &params).unwrap();
                if plain.items != tree_r.items
                    || plain.gains != tree_r.gains
                    || plain.objective.to_bits() != tree_r.objective.to_bits()
                {
                    return CaseOutcome::Fail(None);
                }
                let plain_d = dual_greedy(&items, &q, &params).unwrap();
                let (tree_d, _) = bc_dual_greedy(&tree, &items, &q, &params).unwrap();
                if plain_d.items != tree_d.items
                    || plain_d.gains != tree_d.gains
                    || plain_d.objective.to_bits() != tree_d.objective.to_bits()
                {
                    return CaseOutcome::Fail(None);
                }
            }
        }
        CaseOutcome::Pass(None)
    });
    SuiteReport::from_outcomes("tree vs linear-scan equivalence", outcomes)
}

/// With lambda = 1 both greedy variants reduce to exact top-k MIPS.
pub fn run_lambda_one(cfg: &VerifyConfig) -> SuiteReport {
    let outcomes = par::map_collect_tasks(cfg.lambda_one_cases, |case| {
        let mut rng = case_rng(cfg.seed, 7, case);
        let n = rng.gen_range(50..=500);
        let d = rng.gen_range(2..=16);
        let (items, q) = synthetic::random_instance(&mut rng, n, d, false);
        let tree = BcTree::build(&items, 32, cfg.seed ^ case as u64).unwrap();
        let k = rng.gen_range(1..=10.min(n));
        let mode = if case % 2 == 0 { Mode::Avg } else { Mode::Max };
        let params = SearchParams::new(k, 1.0, DEFAULT_MU_AVG, mode).unwrap();
        let topk = linear_topk(&items, &q, &params).unwrap();
        let g = greedy(&items, &q, &params).unwrap();
        let (bg, _) = bc_greedy(&tree, &items, &q, &params).unwrap();
        if g.items == topk.items && bg.items == topk.items {
            CaseOutcome::Pass(None)
        } else {
            CaseOutcome::Fail(None)
        }
    });
    SuiteReport::from_outcomes("lambda = 1 reduction to top-k", outcomes)
}

/// Structural tree invariants on random and adversarial builds.
pub fn run_tree_invariants(cfg: &VerifyConfig) -> SuiteReport {
    let mut outcomes = Vec::new();
    // adversarial: duplicates, n below the leaf cap, a single item
    let dup_rows: Vec<Vec<f32>> = (0..64).map(|_| vec![0.5, 0.5, 0.5]).collect();
    let dup = ItemMatrix::from_rows(&dup_rows, true).unwrap();
    outcomes.push(check_build(&dup, 4, cfg.seed));
    let few = synthetic::random_items(&mut StdRng::seed_from_u64(cfg.seed), 7, 3);
    outcomes.push(check_build(&few, 100, cfg.seed));
    let single = ItemMatrix::from_rows(&[vec![1.0, 2.0]], true).unwrap();
    outcomes.push(check_build(&single, 100, cfg.seed));
    // random builds
    let random = par::map_collect_tasks(cfg.tree_builds, |case| {
        let mut rng = case_rng(cfg.seed, 8, case);
        let n = rng.gen_range(64..=2000);
        let d = rng.gen_range(2..=24);
        let items = if case % 2 == 0 {
            synthetic::random_items(&mut rng, n, d)
        } else {
            synthetic::clustered_items(&mut rng, n, d, 8)
        };
        let cap = rng.gen_range(1..=128);
        check_build(&items, cap, cfg.seed ^ case as u64)
    });
    outcomes.extend(random);
    SuiteReport::from_outcomes("tree structural invariants", outcomes)
}

fn check_build(items: &ItemMatrix, cap: usize, seed: u64) -> CaseOutcome {
    match BcTree::build(items, cap, seed).and_then(|t| t.check_invariants(items)) {
        Ok(()) => CaseOutcome::Pass(None),
        Err(_) => CaseOutcome::Fail(None),
    }
}

/// Runs every suite at the given configuration, in a fixed order.
pub fn run_all(cfg: &VerifyConfig) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        run_submodularity(cfg),
        run_cache_consistency(cfg),
        run_dualgreedy_ratio(cfg)?,
        run_greedy_datadep(cfg)?,
        run_bound_chain(cfg),
        run_equivalence(cfg),
        run_lambda_one(cfg),
        run_tree_invariants(cfg),
    ])
}

fn partial_shuffle<T>(v: &mut [T], rng: &mut StdRng) {
    for i in (1..v.len()).rev() {
        v.swap(i, rng.gen_range(0..=i));
    }
}

fn sample_distinct(rng: &mut StdRng, n: usize, len: usize) -> Vec<usize> {
    let mut picked = Vec::with_capacity(len);
    while picked.len() < len {
        let c = rng.gen_range(0..n);
        if !picked.contains(&c) {
            picked.push(c);
        }
    }
    picked
}
