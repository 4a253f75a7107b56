//! Synthetic instance generators for verification suites and benchmarks.

use rand::Rng;

use crate::dataset::{ItemMatrix, QueryVector};

/// Uniform non-negative items in [0,1)^d plus a query; the query is
/// non-negative too when `nonneg_query` is set.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    n: usize,
    d: usize,
    nonneg_query: bool,
) -> (ItemMatrix, QueryVector) {
    let items = random_items(rng, n, d);
    let q = random_query(rng, d, nonneg_query);
    (items, q)
}

pub fn random_items<R: Rng>(rng: &mut R, n: usize, d: usize) -> ItemMatrix {
    let data: Vec<f32> = (0..n * d).map(|_| rng.gen::<f32>()).collect();
    ItemMatrix::from_flat(n, d, data, true).expect("generated data is non-negative")
}

pub fn random_query<R: Rng>(rng: &mut R, d: usize, nonneg: bool) -> QueryVector {
    let coords: Vec<f32> = if nonneg {
        (0..d).map(|_| rng.gen::<f32>()).collect()
    } else {
        (0..d).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect()
    };
    QueryVector::new(coords).expect("generated query is valid")
}

/// Clustered non-negative data with varying norms; resembles factorization
/// embeddings far more than a uniform cube and gives tree pruning something
/// to work with.
pub fn clustered_items<R: Rng>(rng: &mut R, n: usize, d: usize, n_clusters: usize) -> ItemMatrix {
    assert!(n_clusters >= 1);
    let centers: Vec<Vec<f32>> = (0..n_clusters)
        .map(|_| (0..d).map(|_| rng.gen::<f32>()).collect())
        .collect();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = &centers[rng.gen_range(0..n_clusters)];
        let scale = 0.2 + 1.6 * rng.gen::<f32>();
        for &coord in c.iter() {
            let noise = 0.15 * rng.gen::<f32>();
            data.push((coord * 0.85 + noise) * scale);
        }
    }
    ItemMatrix::from_flat(n, d, data, true).expect("generated data is non-negative")
}

/// The four-item, two-dimensional fixture whose max-mode objective is
/// neither submodular nor supermodular: p1=(1,1), p2=(1,0), p3=(2,0),
/// p4=(0,2) with query (0.5, 0.5).
pub fn non_submodular_fixture() -> (ItemMatrix, QueryVector) {
    let rows = vec![
        vec![1.0, 1.0],
        vec![1.0, 0.0],
        vec![2.0, 0.0],
        vec![0.0, 2.0],
    ];
    let items = ItemMatrix::from_rows(&rows, true).unwrap();
    let q = QueryVector::new(vec![0.5, 0.5]).unwrap();
    (items, q)
}
