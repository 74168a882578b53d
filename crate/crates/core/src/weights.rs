//! Spatial weight matrices: grid and adjacency builders, validation, CSV I/O.
//!
//! Locations are 0-based in code. Grid locations are numbered column-wise, so
//! location `col * n + row` sits at (`row`, `col`) with (0, 0) the top-left cell.

use crate::error::{dim, invalid, Error, Result};
use crate::validation::ValidationReport;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{Read, Write};

const ROW_SUM_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;
const SPARSE_DENSITY: f64 = 0.25;

/// Compressed sparse row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    p: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    fn from_sorted_triplets(p: usize, trip: &[(usize, usize, f64)]) -> Self {
        let mut indptr = vec![0usize; p + 1];
        for &(r, _, _) in trip {
            indptr[r + 1] += 1;
        }
        for i in 0..p {
            indptr[i + 1] += indptr[i];
        }
        Self {
            p,
            indptr,
            indices: trip.iter().map(|t| t.1).collect(),
            values: trip.iter().map(|t| t.2).collect(),
        }
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }
}

/// One p×p weight matrix. Storage is an implementation detail; semantics are dense.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightMatrix {
    Identity(usize),
    Dense(DMatrix<f64>),
    Sparse(Csr),
}

impl WeightMatrix {
    /// Builds from (row, col, weight) triplets. Duplicates are summed, zeros dropped.
    pub fn from_triplets(p: usize, mut trip: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = trip.iter().find(|t| t.0 >= p || t.1 >= p) {
            return dim(format!("entry ({r}, {c}) outside a {p}x{p} matrix"));
        }
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(trip.len());
        for (r, c, w) in trip {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += w,
                _ => merged.push((r, c, w)),
            }
        }
        merged.retain(|t| t.2 != 0.0);
        let density = merged.len() as f64 / (p * p).max(1) as f64;
        if density < SPARSE_DENSITY {
            Ok(WeightMatrix::Sparse(Csr::from_sorted_triplets(p, &merged)))
        } else {
            let mut m = DMatrix::zeros(p, p);
            for (r, c, w) in merged {
                m[(r, c)] = w;
            }
            Ok(WeightMatrix::Dense(m))
        }
    }

    pub fn from_dense(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return dim(format!("weight matrix must be square, got {}x{}", m.nrows(), m.ncols()));
        }
        let p = m.nrows();
        let trip = (0..p)
            .flat_map(|r| (0..p).map(move |c| (r, c)))
            .filter_map(|(r, c)| (m[(r, c)] != 0.0).then(|| (r, c, m[(r, c)])))
            .collect();
        Self::from_triplets(p, trip)
    }

    pub fn dim(&self) -> usize {
        match self {
            WeightMatrix::Identity(p) => *p,
            WeightMatrix::Dense(m) => m.nrows(),
            WeightMatrix::Sparse(s) => s.p,
        }
    }

    /// Nonzero entries of row `i` in column order.
    pub fn row_entries(&self, i: usize) -> Vec<(usize, f64)> {
        match self {
            WeightMatrix::Identity(_) => vec![(i, 1.0)],
            WeightMatrix::Dense(m) => (0..m.ncols())
                .filter(|&c| m[(i, c)] != 0.0)
                .map(|c| (c, m[(i, c)]))
                .collect(),
            WeightMatrix::Sparse(s) => s.row(i).collect(),
        }
    }

    /// All nonzero entries as (row, col, weight).
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.dim())
            .flat_map(|r| self.row_entries(r).into_iter().map(move |(c, w)| (r, c, w)))
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.dim();
        match self {
            WeightMatrix::Identity(_) => DMatrix::identity(p, p),
            WeightMatrix::Dense(m) => m.clone(),
            WeightMatrix::Sparse(_) => {
                let mut m = DMatrix::zeros(p, p);
                for (r, c, w) in self.triplets() {
                    m[(r, c)] = w;
                }
                m
            }
        }
    }

    /// `out = W v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            WeightMatrix::Identity(_) => out.copy_from_slice(v),
            WeightMatrix::Dense(m) => {
                let p = m.nrows();
                for (i, o) in out.iter_mut().enumerate() {
                    // column-major storage: walk the row with stride p
                    let mut acc = 0.0;
                    for (j, vj) in v.iter().enumerate() {
                        acc += m.as_slice()[j * p + i] * vj;
                    }
                    *o = acc;
                }
            }
            WeightMatrix::Sparse(s) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = s.row(i).map(|(j, w)| w * v[j]).sum();
                }
            }
        }
    }

    /// `out += c * W v`.
    pub fn apply_add(&self, c: f64, v: &[f64], out: &mut [f64]) {
        if c == 0.0 {
            return;
        }
        match self {
            WeightMatrix::Identity(_) => {
                for (o, x) in out.iter_mut().zip(v) {
                    *o += c * x;
                }
            }
            WeightMatrix::Dense(m) => {
                let p = m.nrows();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, vj) in v.iter().enumerate() {
                        acc += m.as_slice()[j * p + i] * vj;
                    }
                    *o += c * acc;
                }
            }
            WeightMatrix::Sparse(s) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += c * s.row(i).map(|(j, w)| w * v[j]).sum::<f64>();
                }
            }
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.row_entries(i).iter().map(|e| e.1).sum())
            .collect()
    }

    /// Maximum absolute column sum.
    pub fn column_sum_norm(&self) -> f64 {
        let mut cs = vec![0.0; self.dim()];
        for (_, c, w) in self.triplets() {
            cs[c] += w.abs();
        }
        cs.into_iter().fold(0.0, f64::max)
    }

    fn frobenius_dot(&self, other: &WeightMatrix) -> f64 {
        (0..self.dim())
            .map(|i| {
                let b = other.row_entries(i);
                self.row_entries(i)
                    .iter()
                    .filter_map(|&(c, w)| b.iter().find(|e| e.0 == c).map(|e| w * e.1))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Ordered set `[W⁽⁰⁾ = I, W⁽¹⁾, …]` of p×p weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrixSet {
    p: usize,
    matrices: Vec<WeightMatrix>,
}

/// Square grid with side length `n`; `p = n²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return invalid(format!("grid side length must be at least 2, got {n}"));
        }
        Ok(Self { n })
    }

    pub fn p(&self) -> usize {
        self.n * self.n
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        col * self.n + row
    }
}

/// Symmetric first-order neighbor sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyList {
    neighbors: Vec<BTreeSet<usize>>,
}

impl AdjacencyList {
    /// Validates symmetry, absence of self-loops and non-empty neighborhoods.
    pub fn new(neighbors: Vec<BTreeSet<usize>>) -> Result<Self> {
        let p = neighbors.len();
        for (i, ns) in neighbors.iter().enumerate() {
            if ns.is_empty() {
                return invalid(format!("location {i} has no neighbors"));
            }
            for &j in ns {
                if j >= p {
                    return dim(format!("neighbor {j} of location {i} is out of range"));
                }
                if j == i {
                    return invalid(format!("location {i} lists itself as a neighbor"));
                }
                if !neighbors[j].contains(&i) {
                    return invalid(format!("adjacency not symmetric: {j} in N({i}) but {i} not in N({j})"));
                }
            }
        }
        Ok(Self { neighbors })
    }

    /// Builds from undirected edges over `p` locations.
    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut ns = vec![BTreeSet::new(); p];
        for &(a, b) in edges {
            if a >= p || b >= p {
                return dim(format!("edge ({a}, {b}) outside {p} locations"));
            }
            ns[a].insert(b);
            ns[b].insert(a);
        }
        Self::new(ns)
    }

    pub fn p(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.neighbors[i]
    }

    /// Locations reachable by crossing exactly one other region and not closer.
    pub fn second_order(&self, i: usize) -> BTreeSet<usize> {
        let first = &self.neighbors[i];
        first
            .iter()
            .flat_map(|&j| self.neighbors[j].iter().copied())
            .filter(|k| *k != i && !first.contains(k))
            .collect()
    }
}

fn equal_weight_triplets(sets: &[BTreeSet<usize>]) -> Vec<(usize, usize, f64)> {
    sets.iter()
        .enumerate()
        .flat_map(|(i, s)| {
            let w = 1.0 / s.len() as f64;
            s.iter().map(move |&j| (i, j, w))
        })
        .collect()
}

impl WeightMatrixSet {
    /// Wraps matrices without checking invariants; call [`validate`](Self::validate).
    pub fn new(matrices: Vec<WeightMatrix>) -> Result<Self> {
        let p = match matrices.first() {
            Some(m) => m.dim(),
            None => return invalid("weight matrix set is empty"),
        };
        if let Some(m) = matrices.iter().find(|m| m.dim() != p) {
            return dim(format!("matrices of size {p} and {} in one set", m.dim()));
        }
        Ok(Self { p, matrices })
    }

    pub fn from_dense(ms: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(ms.into_iter().map(WeightMatrix::from_dense).collect::<Result<_>>()?)
    }

    /// The set `[I]`, used for p = 1 or purely temporal models.
    pub fn identity(p: usize) -> Self {
        Self {
            p,
            matrices: vec![WeightMatrix::Identity(p)],
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Highest spatial order available.
    pub fn max_order(&self) -> usize {
        self.matrices.len() - 1
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrix(&self, order: usize) -> &WeightMatrix {
        &self.matrices[order]
    }

    pub fn matrices(&self) -> &[WeightMatrix] {
        &self.matrices
    }

    /// `[I, W_4NN]`: each location weights its axis neighbors equally.
    pub fn grid_4nn(grid: GridSpec) -> Result<Self> {
        let g = GridSpec::new(grid.n)?;
        let sets: Vec<BTreeSet<usize>> = (0..g.p())
            .map(|i| {
                let (row, col) = (i % g.n, i / g.n);
                let mut s = BTreeSet::new();
                if row > 0 {
                    s.insert(g.index(row - 1, col));
                }
                if row + 1 < g.n {
                    s.insert(g.index(row + 1, col));
                }
                if col > 0 {
                    s.insert(g.index(row, col - 1));
                }
                if col + 1 < g.n {
                    s.insert(g.index(row, col + 1));
                }
                s
            })
            .collect();
        Ok(Self {
            p: g.p(),
            matrices: vec![
                WeightMatrix::Identity(g.p()),
                WeightMatrix::from_triplets(g.p(), equal_weight_triplets(&sets))?,
            ],
        })
    }

    /// `[I, W_NS, W_WE]`: separate north/south and west/east neighborhoods.
    pub fn grid_directional(grid: GridSpec) -> Result<Self> {
        let g = GridSpec::new(grid.n)?;
        let p = g.p();
        let mut ns = vec![BTreeSet::new(); p];
        let mut we = vec![BTreeSet::new(); p];
        for i in 0..p {
            let (row, col) = (i % g.n, i / g.n);
            if row > 0 {
                ns[i].insert(g.index(row - 1, col));
            }
            if row + 1 < g.n {
                ns[i].insert(g.index(row + 1, col));
            }
            if col > 0 {
                we[i].insert(g.index(row, col - 1));
            }
            if col + 1 < g.n {
                we[i].insert(g.index(row, col + 1));
            }
        }
        Ok(Self {
            p,
            matrices: vec![
                WeightMatrix::Identity(p),
                WeightMatrix::from_triplets(p, equal_weight_triplets(&ns))?,
                WeightMatrix::from_triplets(p, equal_weight_triplets(&we))?,
            ],
        })
    }

    /// Equal weights within each neighborhood order (1 or 2). Locations with an empty
    /// second-order neighborhood get an all-zero row, which `validate` flags.
    pub fn from_adjacency(adj: &AdjacencyList, max_order: usize) -> Result<Self> {
        if !(1..=2).contains(&max_order) {
            return Err(Error::Unsupported(format!(
                "adjacency-derived neighborhood order {max_order}; only 1 and 2 are available"
            )));
        }
        let p = adj.p();
        let first: Vec<_> = (0..p).map(|i| adj.neighbors(i).clone()).collect();
        let mut matrices = vec![
            WeightMatrix::Identity(p),
            WeightMatrix::from_triplets(p, equal_weight_triplets(&first))?,
        ];
        if max_order == 2 {
            let second: Vec<_> = (0..p).map(|i| adj.second_order(i)).collect();
            let trip = second
                .iter()
                .enumerate()
                .filter(|(_, s)| !s.is_empty())
                .flat_map(|(i, s)| {
                    let w = 1.0 / s.len() as f64;
                    s.iter().map(move |&j| (i, j, w))
                })
                .collect();
            matrices.push(WeightMatrix::from_triplets(p, trip)?);
        }
        Ok(Self { p, matrices })
    }

    /// Checks every set invariant. Empty rows are errors unless `allow_empty_rows`.
    pub fn validate_with(&self, allow_empty_rows: bool) -> ValidationReport {
        let mut rep = ValidationReport::new();
        let p = self.p;
        if self.matrices[0].to_dense() != DMatrix::identity(p, p) {
            rep.error("not_identity", Some(0), None, "first matrix must be the identity");
        }
        for (l, m) in self.matrices.iter().enumerate() {
            for i in 0..p {
                let row = m.row_entries(i);
                if let Some(&(c, w)) = row.iter().find(|e| e.1 < 0.0 || !e.1.is_finite()) {
                    rep.error("negative_entry", Some(l), Some(i), format!("entry at column {c} is {w}"));
                }
                if l > 0 {
                    if let Some(&(_, w)) = row.iter().find(|e| e.0 == i) {
                        rep.error("nonzero_diagonal", Some(l), Some(i), format!("diagonal entry is {w}"));
                    }
                }
                let s: f64 = row.iter().map(|e| e.1).sum();
                if row.is_empty() {
                    let msg = "row has no neighbors; its spatial regressor is identically zero";
                    if allow_empty_rows {
                        rep.warning("empty_row", Some(l), Some(i), msg);
                    } else {
                        rep.error("empty_row", Some(l), Some(i), msg);
                    }
                } else if (s - 1.0).abs() > ROW_SUM_TOL {
                    rep.error("row_sum", Some(l), Some(i), format!("row sums to {s}"));
                }
            }
        }
        let rank = self.rank();
        if rank < self.matrices.len() {
            rep.error(
                "linear_dependence",
                None,
                None,
                format!("{} matrices span only rank {rank}", self.matrices.len()),
            );
        }
        rep
    }

    pub fn validate(&self) -> ValidationReport {
        self.validate_with(false)
    }

    /// Numerical rank of the matrices viewed as vectors in ℝ^{p²}, via the Gram matrix.
    pub fn rank(&self) -> usize {
        let k = self.matrices.len();
        let gram = DMatrix::from_fn(k, k, |a, b| self.matrices[a].frobenius_dot(&self.matrices[b]));
        let eig = SymmetricEigen::new(gram).eigenvalues;
        let sv: Vec<f64> = eig.iter().map(|e| e.max(0.0).sqrt()).collect();
        let top = sv.iter().cloned().fold(0.0, f64::max);
        if top == 0.0 {
            return 0;
        }
        sv.iter().filter(|s| **s > RANK_TOL * top).count()
    }

    /// τ = largest column-sum norm over the set.
    pub fn column_sum_norm_tau(&self) -> f64 {
        self.matrices.iter().map(WeightMatrix::column_sum_norm).fold(0.0, f64::max)
    }

    /// Keeps only the listed orders (order 0 must come first).
    pub fn select(&self, orders: &[usize]) -> Result<Self> {
        if orders.first() != Some(&0) {
            return invalid("selected orders must start with 0");
        }
        if let Some(o) = orders.iter().find(|&&o| o > self.max_order()) {
            return dim(format!("order {o} exceeds the set's maximum {}", self.max_order()));
        }
        Self::new(orders.iter().map(|&o| self.matrices[o].clone()).collect())
    }

    /// Writes `order,row,col,weight` rows with a header, 0-based indices.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["order", "row", "col", "weight"])?;
        for (l, m) in self.matrices.iter().enumerate() {
            for (r, c, x) in m.triplets() {
                wr.serialize((l, r, c, x))?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the CSV format of [`write_csv`](Self::write_csv). The result is not
    /// validated here; loaders that need the invariants call `validate`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            order: usize,
            row: usize,
            col: usize,
            weight: f64,
        }
        let mut rd = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for rec in rd.deserialize() {
            let row: Row = rec?;
            rows.push(row);
        }
        if rows.is_empty() {
            return invalid("weight file contains no entries");
        }
        let p = rows.iter().map(|r| r.row.max(r.col)).max().unwrap_or(0) + 1;
        let orders = rows.iter().map(|r| r.order).max().unwrap_or(0) + 1;
        let mut trip = vec![Vec::new(); orders];
        for r in rows {
            trip[r.order].push((r.row, r.col, r.weight));
        }
        let matrices = trip
            .into_iter()
            .map(|t| WeightMatrix::from_triplets(p, t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(matrices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_row(set: &WeightMatrixSet, order: usize, loc1: usize) -> Vec<f64> {
        let d = set.matrix(order).to_dense();
        d.row(loc1 - 1).iter().copied().collect()
    }

    #[test]
    fn grid_4nn_center_and_corner_rows() {
        let s = WeightMatrixSet::grid_4nn(GridSpec { n: 3 }).unwrap();
        let row5 = dense_row(&s, 1, 5);
        for (j, w) in row5.iter().enumerate() {
            let expect = if [2, 4, 6, 8].contains(&(j + 1)) { 0.25 } else { 0.0 };
            assert_eq!(*w, expect, "column {}", j + 1);
        }
        let row1 = dense_row(&s, 1, 1);
        assert_eq!(row1[1], 0.5);
        assert_eq!(row1[3], 0.5);
        assert_eq!(row1.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn grid_4nn_two_by_two() {
        let s = WeightMatrixSet::grid_4nn(GridSpec { n: 2 }).unwrap();
        let d = s.matrix(1).to_dense();
        // hand enumeration: 1~{2,3}, 2~{1,4}, 3~{1,4}, 4~{2,3}
        let expect = [[0., 0.5, 0.5, 0.], [0.5, 0., 0., 0.5], [0.5, 0., 0., 0.5], [0., 0.5, 0.5, 0.]];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(d[(i, j)], expect[i][j]);
            }
        }
    }

    #[test]
    fn grid_directional_rows() {
        let s = WeightMatrixSet::grid_directional(GridSpec { n: 3 }).unwrap();
        let ns5 = dense_row(&s, 1, 5);
        assert_eq!((ns5[3], ns5[5]), (0.5, 0.5));
        assert_eq!(ns5.iter().filter(|w| **w != 0.0).count(), 2);
        let we5 = dense_row(&s, 2, 5);
        assert_eq!((we5[1], we5[7]), (0.5, 0.5));
        assert_eq!(we5.iter().filter(|w| **w != 0.0).count(), 2);
        let we1 = dense_row(&s, 2, 1);
        assert_eq!(we1[3], 1.0);
        assert_eq!(we1.iter().filter(|w| **w != 0.0).count(), 1);
    }

    #[test]
    fn rejects_small_grid() {
        assert!(WeightMatrixSet::grid_4nn(GridSpec { n: 1 }).is_err());
        assert!(WeightMatrixSet::grid_directional(GridSpec { n: 0 }).is_err());
    }

    #[test]
    fn path_graph_orders() {
        let adj = AdjacencyList::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let s1 = WeightMatrixSet::from_adjacency(&adj, 1).unwrap();
        let d = s1.matrix(1).to_dense();
        assert_eq!(d.row(0).iter().copied().collect::<Vec<_>>(), vec![0., 1., 0.]);
        assert_eq!(d.row(1).iter().copied().collect::<Vec<_>>(), vec![0.5, 0., 0.5]);
        assert_eq!(d.row(2).iter().copied().collect::<Vec<_>>(), vec![0., 1., 0.]);

        assert_eq!(adj.second_order(0), BTreeSet::from([2]));
        assert!(adj.second_order(1).is_empty());
        assert_eq!(adj.second_order(2), BTreeSet::from([0]));

        let s2 = WeightMatrixSet::from_adjacency(&adj, 2).unwrap();
        let rep = s2.validate();
        assert!(!rep.is_ok());
        assert!(rep.errors().any(|i| i.code == "empty_row" && i.matrix == Some(2) && i.row == Some(1)));
        let relaxed = s2.validate_with(true);
        assert!(relaxed.warnings().any(|i| i.code == "empty_row"));
    }

    #[test]
    fn complete_graph_weights() {
        let edges: Vec<_> = (0..4).flat_map(|a| ((a + 1)..4).map(move |b| (a, b))).collect();
        let adj = AdjacencyList::from_edges(4, &edges).unwrap();
        let d = WeightMatrixSet::from_adjacency(&adj, 1).unwrap().matrix(1).to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert_eq!(d[(i, j)], e);
            }
        }
    }

    #[test]
    fn adjacency_rejects_isolated_and_asymmetric() {
        assert!(AdjacencyList::from_edges(3, &[(0, 1)]).is_err());
        let ns = vec![BTreeSet::from([1]), BTreeSet::new()];
        assert!(AdjacencyList::new(ns).is_err());
        let ns = vec![BTreeSet::from([1]), BTreeSet::from([2]), BTreeSet::from([1])];
        assert!(AdjacencyList::new(ns).is_err());
    }

    #[test]
    fn validate_flags() {
        let s = WeightMatrixSet::grid_4nn(GridSpec { n: 3 }).unwrap();
        assert!(s.validate().is_ok());

        let w1 = s.matrix(1).to_dense();
        let dep = WeightMatrixSet::from_dense(vec![DMatrix::identity(9, 9), w1.clone(), &w1 * 0.5]).unwrap();
        let rep = dep.validate();
        assert!(rep.has_code("linear_dependence"));

        let mut diag = w1.clone();
        diag[(0, 0)] = 0.5;
        diag[(0, 1)] = 0.25;
        diag[(0, 3)] = 0.25;
        let bad = WeightMatrixSet::from_dense(vec![DMatrix::identity(9, 9), diag]).unwrap();
        let rep = bad.validate();
        assert!(rep.errors().any(|i| i.code == "nonzero_diagonal" && i.matrix == Some(1) && i.row == Some(0)));
    }

    #[test]
    fn tau_values() {
        assert_eq!(WeightMatrixSet::identity(5).column_sum_norm_tau(), 1.0);
        let s = WeightMatrixSet::grid_4nn(GridSpec { n: 3 }).unwrap();
        // column sums computed independently from the dense matrix
        let d = s.matrix(1).to_dense();
        let by_hand = (0..9).map(|c| d.column(c).sum()).fold(0.0, f64::max);
        assert!((s.column_sum_norm_tau() - by_hand).abs() < 1e-15);
        assert!(s.column_sum_norm_tau() >= 1.0);
        let col5: f64 = d.column(4).sum();
        assert!((col5 - 4.0 / 3.0).abs() < 1e-15);

        let edges: Vec<_> = (0..5).flat_map(|a| ((a + 1)..5).map(move |b| (a, b))).collect();
        let k5 = WeightMatrixSet::from_adjacency(&AdjacencyList::from_edges(5, &edges).unwrap(), 1).unwrap();
        assert!((k5.column_sum_norm_tau() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let s = WeightMatrixSet::grid_directional(GridSpec { n: 4 }).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = WeightMatrixSet::read_csv(buf.as_slice()).unwrap();
        for l in 0..3 {
            assert_eq!(s.matrix(l).to_dense(), back.matrix(l).to_dense());
        }
    }

    #[test]
    fn apply_matches_dense_product() {
        let s = WeightMatrixSet::grid_4nn(GridSpec { n: 4 }).unwrap();
        let v: Vec<f64> = (0..16).map(|i| i as f64 * 0.7 - 3.0).collect();
        let mut out = vec![0.0; 16];
        s.matrix(1).apply(&v, &mut out);
        let dense = s.matrix(1).to_dense() * nalgebra::DVector::from_vec(v.clone());
        for i in 0..16 {
            assert!((out[i] - dense[i]).abs() < 1e-14);
        }
        let dm = WeightMatrix::Dense(s.matrix(1).to_dense());
        let mut out2 = vec![1.0; 16];
        dm.apply_add(2.0, &v, &mut out2);
        for i in 0..16 {
            assert!((out2[i] - (1.0 + 2.0 * dense[i])).abs() < 1e-13);
        }
    }
}
