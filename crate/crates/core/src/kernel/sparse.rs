/// Compressed sparse row adjacency. Structure only; treated as a constant by
/// the tape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Csr {
    pub fn empty(n: usize) -> Self {
        Self {
            offsets: vec![0; n + 1],
            targets: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Mean of neighbor rows; rows of isolated nodes are zero.
    pub fn mean_rows(&self, x: &[f64], cols: usize) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n * cols];
        for v in 0..n {
            let nbrs = self.neighbors(v);
            if nbrs.is_empty() {
                continue;
            }
            let orow = &mut out[v * cols..(v + 1) * cols];
            for &u in nbrs {
                for (o, &xv) in orow.iter_mut().zip(&x[u * cols..(u + 1) * cols]) {
                    *o += xv;
                }
            }
            let inv = 1.0 / nbrs.len() as f64;
            orow.iter_mut().for_each(|o| *o *= inv);
        }
        out
    }

    /// Adjoint of [`Csr::mean_rows`].
    pub fn mean_rows_adjoint(&self, g: &[f64], cols: usize) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n * cols];
        for v in 0..n {
            let nbrs = self.neighbors(v);
            if nbrs.is_empty() {
                continue;
            }
            let inv = 1.0 / nbrs.len() as f64;
            let grow = &g[v * cols..(v + 1) * cols];
            for &u in nbrs {
                for (o, &gv) in out[u * cols..(u + 1) * cols].iter_mut().zip(grow) {
                    *o += gv * inv;
                }
            }
        }
        out
    }
}
