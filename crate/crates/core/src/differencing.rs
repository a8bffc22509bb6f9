//! Sparse spatial difference operators over the selected subsample.
//!
//! Every operator is an `M x N` matrix, `N` the number of selected
//! observations, whose rows each sum to zero and touch a single location.
//! Columns follow the order of the `selected` index slice used to build it.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dataset::NeighborhoodGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Pairwise,
    FixedEffect,
    Kernel,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Pairwise => "pairwise",
            OperatorKind::FixedEffect => "fixed-effect",
            OperatorKind::Kernel => "kernel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Epanechnikov,
    Gaussian,
}

impl Kernel {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => crate::numerics::pdf(u),
        }
    }
}

/// CSR-stored difference operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceOperator {
    kind: OperatorKind,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    weights: Vec<f64>,
    anchors: Vec<usize>,
    partners: Vec<Option<usize>>,
    selected: Vec<usize>,
    dropped_anchors: usize,
}

struct Builder {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    weights: Vec<f64>,
    anchors: Vec<usize>,
    partners: Vec<Option<usize>>,
}

impl Builder {
    fn new() -> Self {
        Self {
            row_ptr: vec![0],
            col_idx: Vec::new(),
            weights: Vec::new(),
            anchors: Vec::new(),
            partners: Vec::new(),
        }
    }

    fn push_row(&mut self, anchor: usize, partner: Option<usize>, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (c, w) in entries {
            self.col_idx.push(c);
            self.weights.push(w);
        }
        self.row_ptr.push(self.col_idx.len());
        self.anchors.push(anchor);
        self.partners.push(partner);
    }

    fn finish(self, kind: OperatorKind, selected: &[usize], dropped_anchors: usize) -> DifferenceOperator {
        DifferenceOperator {
            kind,
            n_cols: selected.len(),
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            weights: self.weights,
            anchors: self.anchors,
            partners: self.partners,
            selected: selected.to_vec(),
            dropped_anchors,
        }
    }
}

/// For each selected column, the columns of its selected neighbours (ascending).
fn selected_neighbors(graph: &NeighborhoodGraph, selected: &[usize]) -> Vec<Vec<usize>> {
    let mut column_of = vec![usize::MAX; graph.len()];
    for (c, &i) in selected.iter().enumerate() {
        column_of[i] = c;
    }
    selected
        .iter()
        .map(|&i| {
            let mut cols: Vec<usize> = graph
                .neighbors(i)
                .iter()
                .map(|&k| column_of[k])
                .filter(|&c| c != usize::MAX)
                .collect();
            cols.sort_unstable();
            cols
        })
        .collect()
}

/// One row `e_i - e_k` per unordered pair of selected neighbours, anchored
/// at the lower column.
pub fn pairwise_operator(graph: &NeighborhoodGraph, selected: &[usize]) -> DifferenceOperator {
    let nbrs = selected_neighbors(graph, selected);
    let mut b = Builder::new();
    let mut dropped = 0;
    for (a, list) in nbrs.iter().enumerate() {
        if list.is_empty() {
            dropped += 1;
        }
        for &k in list.iter().filter(|&&k| k > a) {
            b.push_row(a, Some(k), [(a, 1.0), (k, -1.0)]);
        }
    }
    b.finish(OperatorKind::Pairwise, selected, dropped)
}

/// One row per selected observation with at least one selected neighbour:
/// the observation minus the mean of its selected neighbours. With
/// `include_self` the mean also runs over the observation itself.
pub fn fixed_effect_operator(graph: &NeighborhoodGraph, selected: &[usize], include_self: bool) -> DifferenceOperator {
    let nbrs = selected_neighbors(graph, selected);
    let mut b = Builder::new();
    let mut dropped = 0;
    for (a, list) in nbrs.iter().enumerate() {
        if list.is_empty() {
            dropped += 1;
            continue;
        }
        let n_d = (list.len() + usize::from(include_self)) as f64;
        let w = 1.0 / n_d;
        let own = if include_self { 1.0 - w } else { 1.0 };
        let partner = (list.len() == 1).then(|| list[0]);
        let mut entries: Vec<(usize, f64)> = list.iter().map(|&k| (k, -w)).collect();
        let pos = entries.partition_point(|&(k, _)| k < a);
        entries.insert(pos, (a, own));
        b.push_row(a, partner, entries);
    }
    b.finish(OperatorKind::FixedEffect, selected, dropped)
}

/// Kernel-weighted deviation from the neighbourhood: weights
/// `K((index_i - index_k)/h)/h` over selected neighbours, normalized to sum
/// to one. Anchors whose weights all vanish are dropped and counted.
pub fn kernel_operator(
    graph: &NeighborhoodGraph,
    selected: &[usize],
    index_values: &[f64],
    bandwidth: f64,
    kernel: Kernel,
) -> Result<DifferenceOperator> {
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if index_values.len() != selected.len() {
        return Err(Error::Dimension {
            expected: selected.len(),
            got: index_values.len(),
        });
    }
    let nbrs = selected_neighbors(graph, selected);
    let mut b = Builder::new();
    let mut dropped = 0;
    for (a, list) in nbrs.iter().enumerate() {
        let raw: Vec<f64> = list
            .iter()
            .map(|&k| kernel.eval((index_values[a] - index_values[k]) / bandwidth) / bandwidth)
            .collect();
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            dropped += 1;
            continue;
        }
        let mut entries: Vec<(usize, f64)> = list
            .iter()
            .zip(&raw)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&k, &w)| (k, -w / total))
            .collect();
        let partner = (entries.len() == 1).then(|| entries[0].0);
        let pos = entries.partition_point(|&(k, _)| k < a);
        entries.insert(pos, (a, 1.0));
        b.push_row(a, partner, entries);
    }
    if dropped > 0 {
        log::info!("kernel operator dropped {dropped} anchors with zero total weight");
    }
    Ok(b.finish(OperatorKind::Kernel, selected, dropped))
}

impl DifferenceOperator {
    /// Identity map over `selected`; used for the undifferenced comparator.
    pub fn identity(selected: &[usize]) -> Self {
        let mut b = Builder::new();
        for a in 0..selected.len() {
            b.push_row(a, None, [(a, 1.0)]);
        }
        // Not a difference operator; kind is nominal.
        b.finish(OperatorKind::FixedEffect, selected, 0)
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.anchors.len()
    }

    pub fn cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    /// Selected observations with no row (no usable neighbour).
    pub fn dropped_anchors(&self) -> usize {
        self.dropped_anchors
    }

    /// Dataset indices of the columns.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    /// Anchor column of each row.
    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    /// Partner column of each row with exactly one differenced neighbour.
    pub fn partners(&self) -> &[Option<usize>] {
        &self.partners
    }

    /// `(column, weight)` entries of row `r`, in ascending column order.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.weights[span].iter().copied())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows()).map(|r| self.row(r).map(|(_, w)| w).sum()).collect()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n_cols {
            return Err(Error::Dimension {
                expected: self.n_cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows()).map(|r| self.row(r).map(|(c, w)| w * v[c]).sum()).collect())
    }

    /// Applies the operator to every column of `m` (`N x k` to `M x k`).
    pub fn apply_matrix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.n_cols {
            return Err(Error::Dimension {
                expected: self.n_cols,
                got: m.nrows(),
            });
        }
        let mut out = DMatrix::zeros(self.rows(), m.ncols());
        for j in 0..m.ncols() {
            let col = m.column(j);
            for r in 0..self.rows() {
                out[(r, j)] = self.row(r).map(|(c, w)| w * col[c]).sum();
            }
        }
        Ok(out)
    }

    /// `Delta' u` for `u` of length `M`.
    pub fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.rows() {
            return Err(Error::Dimension {
                expected: self.rows(),
                got: u.len(),
            });
        }
        let mut out = vec![0.0; self.n_cols];
        for (r, &ur) in u.iter().enumerate() {
            for (c, w) in self.row(r) {
                out[c] += w * ur;
            }
        }
        Ok(out)
    }

    /// `Delta' m` for `m` of shape `M x k`.
    pub fn apply_transpose_matrix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.rows() {
            return Err(Error::Dimension {
                expected: self.rows(),
                got: m.nrows(),
            });
        }
        let mut out = DMatrix::zeros(self.n_cols, m.ncols());
        for j in 0..m.ncols() {
            for r in 0..self.rows() {
                let ur = m[(r, j)];
                for (c, w) in self.row(r) {
                    out[(c, j)] += w * ur;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows(), self.n_cols);
        for r in 0..self.rows() {
            for (c, w) in self.row(r) {
                d[(r, c)] += w;
            }
        }
        d
    }

    /// Writes `row,col,weight` triples; `col` is the column index within the
    /// selected subsample.
    pub fn write_triplets(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "row,col,weight")?;
        for r in 0..self.rows() {
            for (c, w) in self.row(r) {
                writeln!(out, "{r},{c},{w}")?;
            }
        }
        Ok(())
    }

    pub fn write_triplets_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        self.write_triplets(&mut f).map_err(io_err)?;
        f.flush().map_err(io_err)
    }
}
