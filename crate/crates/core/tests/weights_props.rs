use nalgebra::DMatrix;
use pstarmax::{AdjacencyList, GridSpec, WeightMatrixSet};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Spanning tree over a shuffled order plus a few random chords.
fn random_connected_graph(seed: u64, p: usize) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    let mut edges: Vec<(usize, usize)> = (1..p).map(|k| (order[rng.random_range(0..k)], order[k])).collect();
    for _ in 0..rng.random_range(0..p) {
        let (a, b) = (rng.random_range(0..p), rng.random_range(0..p));
        if a != b {
            edges.push((a, b));
        }
    }
    edges
}

fn assert_row_stochastic(set: &WeightMatrixSet, allow_empty: bool) {
    for (l, m) in set.matrices().iter().enumerate() {
        let d = m.to_dense();
        for i in 0..set.p() {
            let s: f64 = d.row(i).iter().sum();
            assert!(d.row(i).iter().all(|w| *w >= 0.0));
            if l > 0 {
                assert_eq!(d[(i, i)], 0.0);
            }
            assert!((s - 1.0).abs() < 1e-12 || (allow_empty && s == 0.0), "order {l} row {i} sums to {s}");
        }
    }
}

#[test]
fn grid_builders_satisfy_invariants() {
    for n in 2..=10 {
        let g = GridSpec::new(n).unwrap();
        let iso = WeightMatrixSet::grid_4nn(g).unwrap();
        let dir = WeightMatrixSet::grid_directional(g).unwrap();
        for set in [&iso, &dir] {
            assert!(set.validate().is_ok(), "n = {n}: {}", set.validate());
            assert_row_stochastic(set, false);
        }
        let (w4, ns, we) = (iso.matrix(1).to_dense(), dir.matrix(1).to_dense(), dir.matrix(2).to_dense());
        for i in 0..n * n {
            let support: Vec<usize> = (0..n * n).filter(|&j| ns[(i, j)] > 0.0 || we[(i, j)] > 0.0).collect();
            for j in 0..n * n {
                let expect = if support.contains(&j) { 1.0 / support.len() as f64 } else { 0.0 };
                assert!((w4[(i, j)] - expect).abs() < 1e-15, "n = {n}, row {i}, col {j}");
            }
        }
    }
}

#[test]
fn small_grid_reference_rows() {
    let dir = WeightMatrixSet::grid_directional(GridSpec::new(3).unwrap()).unwrap();
    let (ns, we) = (dir.matrix(1).to_dense(), dir.matrix(2).to_dense());
    // 1-based location 5 is the centre
    assert_eq!((ns[(4, 3)], ns[(4, 5)], ns.row(4).sum()), (0.5, 0.5, 1.0));
    assert_eq!((we[(4, 1)], we[(4, 7)], we.row(4).sum()), (0.5, 0.5, 1.0));
    assert_eq!((we[(0, 3)], we.row(0).sum()), (1.0, 1.0));
}

#[test]
fn tau_of_small_grid_is_max_column_sum() {
    let set = WeightMatrixSet::grid_4nn(GridSpec::new(3).unwrap()).unwrap();
    let d = set.matrix(1).to_dense();
    let oracle = (0..9).map(|j| d.column(j).sum()).fold(0.0, f64::max);
    assert_eq!(set.column_sum_norm_tau(), oracle.max(1.0));
    // the identity already contributes 1
    assert_eq!(WeightMatrixSet::identity(4).column_sum_norm_tau(), 1.0);
}

#[test]
fn validation_catches_constructed_failures() {
    let base = WeightMatrixSet::grid_4nn(GridSpec::new(3).unwrap()).unwrap();
    let w1 = base.matrix(1).to_dense();
    let dep = WeightMatrixSet::from_dense(vec![DMatrix::identity(9, 9), w1.clone(), w1.clone() * 0.5]).unwrap();
    assert!(dep.validate().has_code("linear_dependence"));
    let mut diag = w1.clone();
    diag[(0, 0)] = 0.5;
    diag[(0, 1)] -= 0.5;
    let diag = WeightMatrixSet::from_dense(vec![DMatrix::identity(9, 9), diag]).unwrap();
    assert!(diag.validate().has_code("nonzero_diagonal"));
}

#[test]
fn path_and_complete_graph_examples() {
    let path = AdjacencyList::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let set = WeightMatrixSet::from_adjacency(&path, 2).unwrap();
    let w1 = set.matrix(1).to_dense();
    assert_eq!(w1, DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0]));
    let w2 = set.matrix(2).to_dense();
    assert_eq!(w2, DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
    assert!(set.validate().has_code("empty_row"));
    assert!(set.validate_with(true).is_ok());

    let k4: Vec<(usize, usize)> = (0..4).flat_map(|a| (a + 1..4).map(move |b| (a, b))).collect();
    let set = WeightMatrixSet::from_adjacency(&AdjacencyList::from_edges(4, &k4).unwrap(), 1).unwrap();
    let d = set.matrix(1).to_dense();
    assert!((0..4).all(|i| (0..4).all(|j| d[(i, j)] == if i == j { 0.0 } else { 1.0 / 3.0 })));
}

#[test]
fn random_connected_graphs_validate() {
    for seed in 0..100u64 {
        let p = 3 + (seed as usize % 12);
        let adj = AdjacencyList::from_edges(p, &random_connected_graph(seed, p)).unwrap();
        let one = WeightMatrixSet::from_adjacency(&adj, 1).unwrap();
        assert!(one.validate().is_ok(), "seed {seed}: {}", one.validate());
        assert_row_stochastic(&one, false);
        let two = WeightMatrixSet::from_adjacency(&adj, 2).unwrap();
        assert_row_stochastic(&two, true);
        let rep = two.validate_with(true);
        // only a second order collinear with the first may fail, never the row structure
        assert!(rep.errors().all(|e| e.code == "linear_dependence"), "seed {seed}: {rep}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_weights_are_permutation_equivariant(seed in any::<u64>(), p in 3usize..12, perm_seed in any::<u64>()) {
        let edges = random_connected_graph(seed, p);
        let mut perm: Vec<usize> = (0..p).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        // old location o becomes new location inv[o]
        let mut inv = vec![0; p];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let relabelled: Vec<_> = edges.iter().map(|&(a, b)| (inv[a], inv[b])).collect();
        let a = WeightMatrixSet::from_adjacency(&AdjacencyList::from_edges(p, &edges).unwrap(), 2).unwrap();
        let b = WeightMatrixSet::from_adjacency(&AdjacencyList::from_edges(p, &relabelled).unwrap(), 2).unwrap();
        for l in 0..3 {
            let (da, db) = (a.matrix(l).to_dense(), b.matrix(l).to_dense());
            for i in 0..p {
                for j in 0..p {
                    prop_assert_eq!(db[(i, j)], da[(perm[i], perm[j])]);
                }
            }
        }
    }

    #[test]
    fn weight_csv_roundtrip(seed in any::<u64>(), p in 3usize..12) {
        let adj = AdjacencyList::from_edges(p, &random_connected_graph(seed, p)).unwrap();
        let set = WeightMatrixSet::from_adjacency(&adj, 1).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let back = WeightMatrixSet::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), set.len());
        for l in 0..set.len() {
            prop_assert_eq!(back.matrix(l).to_dense(), set.matrix(l).to_dense());
        }
    }
}
