//! Recommendation-quality metrics (MMR, PCC, Cov) and the timed parameter
//! sweep behind `dkmips bench`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::bctree::{bc_dual_greedy, bc_greedy, BcTree, SearchStats};
use crate::dataset::{ItemMatrix, QueryVector};
use crate::error::{Error, Result};
use crate::greedy::{dual_greedy, greedy, linear_topk};
use crate::objective::{eval_objective, Mode, ResultSet, SearchParams};
use crate::par;

/// The solvers a sweep or query run can dispatch to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Linear,
    Greedy,
    Dual,
    BcGreedy,
    BcDual,
}

impl Algo {
    pub const ALL: [Algo; 5] = [
        Algo::Linear,
        Algo::Greedy,
        Algo::Dual,
        Algo::BcGreedy,
        Algo::BcDual,
    ];

    pub fn requires_tree(&self) -> bool {
        matches!(self, Algo::BcGreedy | Algo::BcDual)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Linear => "linear",
            Algo::Greedy => "greedy",
            Algo::Dual => "dual",
            Algo::BcGreedy => "bc-greedy",
            Algo::BcDual => "bc-dual",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Algo> {
        match s {
            "linear" => Ok(Algo::Linear),
            "greedy" => Ok(Algo::Greedy),
            "dual" => Ok(Algo::Dual),
            "bc-greedy" => Ok(Algo::BcGreedy),
            "bc-dual" => Ok(Algo::BcDual),
            other => Err(Error::Parameter(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// One timed solver execution.
#[derive(Debug, Clone)]
pub struct QueryRun {
    pub result: ResultSet,
    /// Pruning counters; present only for the tree-backed solvers.
    pub stats: Option<SearchStats>,
    pub time_ms: f64,
}

/// Runs one solver on one query, timing the query phase only.
pub fn run_query(
    items: &ItemMatrix,
    q: &QueryVector,
    algo: Algo,
    params: &SearchParams,
    tree: Option<&BcTree>,
) -> Result<QueryRun> {
    if algo.requires_tree() && tree.is_none() {
        return Err(Error::Parameter(format!("{algo} needs a built tree index")));
    }
    let start = Instant::now();
    let (result, stats) = match algo {
        Algo::Linear => (linear_topk(items, q, params)?, None),
        Algo::Greedy => (greedy(items, q, params)?, None),
        Algo::Dual => (dual_greedy(items, q, params)?, None),
        Algo::BcGreedy => {
            let (r, s) = bc_greedy(tree.unwrap(), items, q, params)?;
            (r, Some(s))
        }
        Algo::BcDual => {
            let (r, s) = bc_dual_greedy(tree.unwrap(), items, q, params)?;
            (r, Some(s))
        }
    };
    let time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(QueryRun {
        result,
        stats,
        time_ms,
    })
}

/// Runs a whole query batch, fanning out across workers; results come back
/// in input order.
pub fn run_batch(
    items: &ItemMatrix,
    queries: &[QueryVector],
    algo: Algo,
    params: &SearchParams,
    tree: Option<&BcTree>,
) -> Result<Vec<QueryRun>> {
    let runs = par::map_collect_tasks(queries.len(), |i| {
        run_query(items, &queries[i], algo, params, tree)
    });
    runs.into_iter().collect()
}

/// Re-evaluates the configured objective from scratch on a result's id set.
pub fn mmr(
    items: &ItemMatrix,
    result: &ResultSet,
    q: &QueryVector,
    params: &SearchParams,
) -> Result<f64> {
    if result.is_empty() {
        return Err(Error::Parameter("result set is empty".into()));
    }
    eval_objective(items, &result.items, q, params)
}

/// Item id -> category ids, from CSV lines `item_id,category_id`.
#[derive(Debug, Clone, Default)]
pub struct CategoryMap {
    by_item: HashMap<usize, BTreeSet<u32>>,
    all: BTreeSet<u32>,
}

impl CategoryMap {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut map = CategoryMap::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let item = parse_field::<usize>(path, lineno, parts.next())?;
            let cat = parse_field::<u32>(path, lineno, parts.next())?;
            map.insert(item, cat);
        }
        Ok(map)
    }

    pub fn insert(&mut self, item: usize, category: u32) {
        self.by_item.entry(item).or_default().insert(category);
        self.all.insert(category);
    }

    /// Total distinct category count (the histogram dimensionality).
    pub fn n_categories(&self) -> usize {
        self.all.len()
    }

    pub fn categories_of(&self, item: usize) -> Option<&BTreeSet<u32>> {
        self.by_item.get(&item)
    }

    /// Every referenced item id must exist in the matrix.
    pub fn validate(&self, items: &ItemMatrix) -> Result<()> {
        if let Some(&bad) = self.by_item.keys().find(|&&i| i >= items.n()) {
            return Err(Error::Parameter(format!(
                "category file references item {bad}, matrix has n={}",
                items.n()
            )));
        }
        Ok(())
    }

    /// Dense index of each category id, in ascending id order.
    fn dense_index(&self) -> BTreeMap<u32, usize> {
        self.all.iter().enumerate().map(|(i, &c)| (c, i)).collect()
    }
}

/// User id -> rated items, from CSV lines `user_id,item_id,rating` with
/// ratings on a 0-5 scale.
#[derive(Debug, Clone, Default)]
pub struct RatingsTable {
    by_user: HashMap<u64, Vec<(usize, f64)>>,
}

impl RatingsTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut table = RatingsTable::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let user = parse_field::<u64>(path, lineno, parts.next())?;
            let item = parse_field::<usize>(path, lineno, parts.next())?;
            let rating = parse_field::<f64>(path, lineno, parts.next())?;
            if !(0.0..=5.0).contains(&rating) {
                return Err(Error::Load {
                    path: path.to_path_buf(),
                    reason: format!("row {}: rating {rating} outside [0,5]", lineno + 1),
                });
            }
            table.insert(user, item, rating);
        }
        Ok(table)
    }

    pub fn insert(&mut self, user: u64, item: usize, rating: f64) {
        self.by_user.entry(user).or_default().push((item, rating));
    }

    pub fn ratings_of(&self, user: u64) -> Option<&[(usize, f64)]> {
        self.by_user.get(&user).map(Vec::as_slice)
    }

    pub fn validate(&self, items: &ItemMatrix) -> Result<()> {
        for ratings in self.by_user.values() {
            if let Some(&(bad, _)) = ratings.iter().find(|&&(i, _)| i >= items.n()) {
                return Err(Error::Parameter(format!(
                    "ratings file references item {bad}, matrix has n={}",
                    items.n()
                )));
            }
        }
        Ok(())
    }
}

fn parse_field<T: FromStr>(path: &Path, lineno: usize, field: Option<&str>) -> Result<T> {
    field
        .map(str::trim)
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Load {
            path: path.to_path_buf(),
            reason: format!("row {}: malformed field", lineno + 1),
        })
}

/// Pearson correlation between the rating-weighted category histogram of the
/// user's rated items and the plain category histogram of the result.
/// `None` when either histogram has zero variance (undefined, not 0).
pub fn pcc(
    result: &[usize],
    user: u64,
    categories: &CategoryMap,
    ratings: &RatingsTable,
) -> Option<f64> {
    let rated = ratings.ratings_of(user)?;
    if rated.is_empty() || categories.n_categories() < 2 {
        return None;
    }
    let index = categories.dense_index();
    let dim = index.len();
    let mut user_hist = vec![0.0f64; dim];
    for &(item, rating) in rated {
        if let Some(cats) = categories.categories_of(item) {
            for c in cats {
                user_hist[index[c]] += rating;
            }
        }
    }
    let mut result_hist = vec![0.0f64; dim];
    for &item in result {
        if let Some(cats) = categories.categories_of(item) {
            for c in cats {
                result_hist[index[c]] += 1.0;
            }
        }
    }
    pearson(&user_hist, &result_hist)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Fraction of the user's rated categories covered by the result set.
/// `None` when the user's rated items cover no category.
pub fn cov(
    result: &[usize],
    user: u64,
    categories: &CategoryMap,
    ratings: &RatingsTable,
) -> Option<f64> {
    let rated = ratings.ratings_of(user)?;
    let mut user_cats: BTreeSet<u32> = BTreeSet::new();
    for &(item, _) in rated {
        if let Some(cats) = categories.categories_of(item) {
            user_cats.extend(cats.iter().copied());
        }
    }
    if user_cats.is_empty() {
        return None;
    }
    let mut result_cats: BTreeSet<u32> = BTreeSet::new();
    for &item in result {
        if let Some(cats) = categories.categories_of(item) {
            result_cats.extend(cats.iter().copied());
        }
    }
    let covered = result_cats.intersection(&user_cats).count();
    Some(covered as f64 / user_cats.len() as f64)
}

/// Optional quality inputs; queries are matched to users by position, i.e.
/// query i carries user id i.
#[derive(Clone, Copy)]
pub struct QualityData<'a> {
    pub categories: &'a CategoryMap,
    pub ratings: &'a RatingsTable,
}

/// The sweep dimensions of a benchmark run.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub algos: Vec<Algo>,
    pub modes: Vec<Mode>,
    pub lambdas: Vec<f64>,
    pub ks: Vec<usize>,
    pub mu_avg: f64,
    pub mu_max: f64,
}

/// One sweep cell, averaged over queries and repetitions.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub algo: Algo,
    pub mode: Mode,
    pub lambda: f64,
    pub mu: f64,
    pub k: usize,
    pub mean_time_ms: f64,
    pub mean_mmr: f64,
    /// Fraction of candidates whose inner product was computed per step;
    /// zero for the scan-based solvers.
    pub items_scanned_frac: f64,
    pub mean_pcc: Option<f64>,
    pub mean_cov: Option<f64>,
    /// Queries whose PCC / Cov was undefined and excluded from the mean.
    pub pcc_excluded: usize,
    pub cov_excluded: usize,
}

/// Runs every (algo, mode, lambda, k) cell of the grid `repetitions` times.
/// Quality metrics come from the first repetition (they are deterministic);
/// timings average over all of them.
pub fn bench_sweep(
    items: &ItemMatrix,
    queries: &[QueryVector],
    grid: &SweepGrid,
    repetitions: usize,
    tree: Option<&BcTree>,
    quality: Option<QualityData<'_>>,
) -> Result<Vec<SweepRow>> {
    if repetitions == 0 {
        return Err(Error::Parameter("repetitions must be positive".into()));
    }
    if queries.is_empty() {
        return Err(Error::Parameter("no queries supplied".into()));
    }
    let mut rows = Vec::new();
    for &algo in &grid.algos {
        for &mode in &grid.modes {
            let mu = match mode {
                Mode::Avg => grid.mu_avg,
                Mode::Max => grid.mu_max,
            };
            for &lambda in &grid.lambdas {
                for &k in &grid.ks {
                    let params = SearchParams::new(k, lambda, mu, mode)?;
                    rows.push(run_cell(
                        items,
                        queries,
                        algo,
                        &params,
                        repetitions,
                        tree,
                        quality,
                    )?);
                }
            }
        }
    }
    Ok(rows)
}

fn run_cell(
    items: &ItemMatrix,
    queries: &[QueryVector],
    algo: Algo,
    params: &SearchParams,
    repetitions: usize,
    tree: Option<&BcTree>,
    quality: Option<QualityData<'_>>,
) -> Result<SweepRow> {
    let mut total_time = 0.0f64;
    let mut first_rep: Option<Vec<QueryRun>> = None;
    for _ in 0..repetitions {
        let runs = run_batch(items, queries, algo, params, tree)?;
        total_time += runs.iter().map(|r| r.time_ms).sum::<f64>();
        if first_rep.is_none() {
            first_rep = Some(runs);
        }
    }
    let runs = first_rep.expect("at least one repetition");
    let mut mmr_sum = 0.0f64;
    let mut stats_total = SearchStats::default();
    for (i, run) in runs.iter().enumerate() {
        if !run.result.is_empty() {
            mmr_sum += mmr(items, &run.result, &queries[i], params)?;
        }
        if let Some(s) = run.stats {
            stats_total.steps += s.steps;
            stats_total.items_scanned += s.items_scanned;
        }
    }
    let mut mean_pcc = None;
    let mut mean_cov = None;
    let mut pcc_excluded = 0usize;
    let mut cov_excluded = 0usize;
    if let Some(qd) = quality {
        let mut pcc_sum = 0.0;
        let mut pcc_n = 0usize;
        let mut cov_sum = 0.0;
        let mut cov_n = 0usize;
        for (i, run) in runs.iter().enumerate() {
            match pcc(&run.result.items, i as u64, qd.categories, qd.ratings) {
                Some(v) => {
                    pcc_sum += v;
                    pcc_n += 1;
                }
                None => pcc_excluded += 1,
            }
            match cov(&run.result.items, i as u64, qd.categories, qd.ratings) {
                Some(v) => {
                    cov_sum += v;
                    cov_n += 1;
                }
                None => cov_excluded += 1,
            }
        }
        mean_pcc = (pcc_n > 0).then(|| pcc_sum / pcc_n as f64);
        mean_cov = (cov_n > 0).then(|| cov_sum / cov_n as f64);
    }
    Ok(SweepRow {
        algo,
        mode: params.mode,
        lambda: params.lambda,
        mu: params.mu,
        k: params.k,
        mean_time_ms: total_time / (repetitions * queries.len()) as f64,
        mean_mmr: mmr_sum / queries.len() as f64,
        items_scanned_frac: stats_total.scanned_fraction(items.n()),
        mean_pcc,
        mean_cov,
        pcc_excluded,
        cov_excluded,
    })
}

/// Writes the sweep report CSV. Quality columns appear only when requested;
/// undefined metrics render as empty fields.
pub fn write_report(path: &Path, rows: &[SweepRow], include_quality: bool) -> Result<()> {
    let mut out = String::new();
    out.push_str("algo,mode,lambda,mu,k,mean_time_ms,mean_mmr,items_scanned_frac");
    if include_quality {
        out.push_str(",mean_pcc,mean_cov");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}",
            r.algo, r.mode.as_str(), r.lambda, r.mu, r.k, r.mean_time_ms, r.mean_mmr,
            r.items_scanned_frac
        ));
        if include_quality {
            out.push(',');
            if let Some(v) = r.mean_pcc {
                out.push_str(&format!("{v}"));
            }
            out.push(',');
            if let Some(v) = r.mean_cov {
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    file.write_all(out.as_bytes()).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}
