/// Contiguous row groups: segment `s` covers rows `offsets[s]..offsets[s + 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    /// Builds segments from per-segment lengths.
    pub fn from_lengths<I: IntoIterator<Item = usize>>(lengths: I) -> Self {
        let mut offsets = vec![0];
        let mut acc = 0;
        for len in lengths {
            acc += len;
            offsets.push(acc);
        }
        Self { offsets }
    }

    pub fn from_offsets(offsets: Vec<usize>) -> Self {
        assert!(
            !offsets.is_empty() && offsets[0] == 0,
            "offsets must start at 0"
        );
        assert!(
            offsets.windows(2).all(|w| w[0] <= w[1]),
            "offsets must be non-decreasing"
        );
        Self { offsets }
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total number of rows covered.
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn len_of(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }
}

/// Constant sparse matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for &(c, v) in row {
                assert!(c < cols, "column {c} out of range {cols}");
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// Row-normalized adjacency: each row averages its listed columns.
    /// Empty rows stay empty, so they aggregate to zero.
    pub fn mean_adjacency(cols: usize, neighbors: &[Vec<usize>]) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = neighbors
            .iter()
            .map(|ns| {
                let w = if ns.is_empty() {
                    0.0
                } else {
                    1.0 / ns.len() as f64
                };
                ns.iter().map(|&c| (c, w)).collect()
            })
            .collect();
        Self::from_rows(cols, &rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }
}
