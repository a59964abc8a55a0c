//! Sparse origin-destination migration matrices.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordered list of zone ids addressing matrix rows or columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Registry {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate registry id {id}")));
            }
        }
        Ok(Registry { ids, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

fn same_registry(a: &Arc<Registry>, b: &Arc<Registry>) -> bool {
    Arc::ptr_eq(a, b) || a.ids == b.ids
}

/// Nonnegative real-valued flows stored row-compressed (CSR).
#[derive(Debug, Clone, PartialEq)]
pub struct MigrationMatrix<S> {
    origins: Arc<Registry>,
    dests: Arc<Registry>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<S>,
}

impl<S: Scalar> MigrationMatrix<S> {
    pub fn zeros(origins: Arc<Registry>, dests: Arc<Registry>) -> Self {
        let row_ptr = vec![0; origins.len() + 1];
        MigrationMatrix {
            origins,
            dests,
            row_ptr,
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Builds from per-origin `(dest, value)` lists. Zero entries are dropped;
    /// repeated destinations within a row are summed.
    pub fn from_rows(
        origins: Arc<Registry>,
        dests: Arc<Registry>,
        rows: Vec<Vec<(usize, S)>>,
    ) -> Result<Self> {
        if rows.len() != origins.len() {
            return Err(Error::invalid(format!(
                "{} rows given for {} origins",
                rows.len(),
                origins.len()
            )));
        }
        let nnz = rows.iter().map(Vec::len).sum();
        let mut m = MigrationMatrix {
            origins,
            dests,
            row_ptr: Vec::with_capacity(rows.len() + 1),
            cols: Vec::with_capacity(nnz),
            vals: Vec::with_capacity(nnz),
        };
        m.row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|e| e.0);
            for (j, v) in row {
                if j >= m.dests.len() {
                    return Err(Error::invalid(format!("row {i}: destination {j} out of range")));
                }
                if !(v >= S::zero()) || !v.is_finite() {
                    return Err(Error::invalid(format!("entry ({i}, {j}) = {v} is not a finite nonnegative flow")));
                }
                if v == S::zero() {
                    continue;
                }
                let start = m.row_ptr[i];
                if m.cols.len() > start && *m.cols.last().unwrap() as usize == j {
                    *m.vals.last_mut().unwrap() += v;
                } else {
                    m.cols.push(j as u32);
                    m.vals.push(v);
                }
            }
            m.row_ptr.push(m.cols.len());
        }
        Ok(m)
    }

    /// Builds from `(origin, dest, value)` triplets in any order.
    pub fn from_triplets(
        origins: Arc<Registry>,
        dests: Arc<Registry>,
        triplets: impl IntoIterator<Item = (usize, usize, S)>,
    ) -> Result<Self> {
        let mut rows = vec![Vec::new(); origins.len()];
        for (i, j, v) in triplets {
            rows.get_mut(i)
                .ok_or_else(|| Error::invalid(format!("origin {i} out of range")))?
                .push((j, v));
        }
        Self::from_rows(origins, dests, rows)
    }

    pub fn origins(&self) -> &Arc<Registry> {
        &self.origins
    }

    pub fn dests(&self) -> &Arc<Registry> {
        &self.dests
    }

    pub fn n_origins(&self) -> usize {
        self.origins.len()
    }

    pub fn n_dests(&self) -> usize {
        self.dests.len()
    }

    /// Stored (nonzero) entries.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        let (cols, vals) = self.row_slices(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => S::zero(),
        }
    }

    fn row_slices(&self, i: usize) -> (&[u32], &[S]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    /// Nonzero `(dest, value)` pairs of one row, ascending by destination.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let (cols, vals) = self.row_slices(i);
        cols.iter().zip(vals).map(|(&j, &v)| (j as usize, v))
    }

    pub fn dense_row(&self, i: usize) -> Vec<S> {
        let mut out = vec![S::zero(); self.n_dests()];
        for (j, v) in self.row(i) {
            out[j] = v;
        }
        out
    }

    /// All nonzero entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, S)> + '_ {
        (0..self.n_origins()).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn row_sum(&self, i: usize) -> S {
        self.row_slices(i).1.iter().copied().sum()
    }

    pub fn row_sums(&self) -> Vec<S> {
        (0..self.n_origins()).map(|i| self.row_sum(i)).collect()
    }

    /// Column sums accumulated in row-major order.
    pub fn col_sums(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.n_dests()];
        for (_, j, v) in self.entries() {
            out[j] += v;
        }
        out
    }

    pub fn total(&self) -> S {
        self.row_sums().into_iter().sum()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if !same_registry(&self.origins, &other.origins) || !same_registry(&self.dests, &other.dests) {
            return Err(Error::RegistryMismatch("cannot add matrices over different registries".into()));
        }
        let rows = (0..self.n_origins())
            .map(|i| {
                let mut row: Vec<(usize, S)> = self.row(i).collect();
                row.extend(other.row(i));
                row
            })
            .collect();
        Self::from_rows(self.origins.clone(), self.dests.clone(), rows)
    }

    pub fn scale(&self, c: S) -> Result<Self> {
        let rows = (0..self.n_origins())
            .map(|i| self.row(i).map(|(j, v)| (j, v * c)).collect())
            .collect();
        Self::from_rows(self.origins.clone(), self.dests.clone(), rows)
    }

    /// Copy with every row outside `keep` emptied.
    pub fn keep_rows(&self, keep: &[usize]) -> Self {
        let mut mask = vec![false; self.n_origins()];
        for &i in keep {
            mask[i] = true;
        }
        let rows = (0..self.n_origins())
            .map(|i| if mask[i] { self.row(i).collect() } else { Vec::new() })
            .collect();
        Self::from_rows(self.origins.clone(), self.dests.clone(), rows).expect("subset of a valid matrix")
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        same_registry(&self.origins, &other.origins) && same_registry(&self.dests, &other.dests)
    }

    /// Raw bit pattern of every stored value, for determinism checks.
    pub fn bit_fingerprint(&self) -> Vec<(u32, u32, u64)> {
        self.entries()
            .map(|(i, j, v)| (i as u32, j as u32, v.as_f64().to_bits()))
            .collect()
    }
}
