//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, SVD};

/// SVD with a full right basis (`v` is `cols x cols`), obtained by padding
/// wide matrices with zero rows. Singular values come back in descending
/// order, matched column-for-column with `v`.
pub struct FullSvd {
    pub u: DMatrix<f64>,
    pub singular: Vec<f64>,
    pub v: DMatrix<f64>,
    rows: usize,
}

impl FullSvd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (r, c) = m.shape();
        if c == 0 {
            return FullSvd {
                u: DMatrix::zeros(r, 0),
                singular: Vec::new(),
                v: DMatrix::zeros(0, 0),
                rows: r,
            };
        }
        let padded = if r < c {
            let mut p = DMatrix::zeros(c, c);
            p.view_mut((0, 0), (r, c)).copy_from(m);
            p
        } else {
            m.clone()
        };
        let svd = SVD::new(padded, true, true);
        let u = svd.u.expect("u requested");
        let vt = svd.v_t.expect("v_t requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let singular = order.iter().map(|&i| svd.singular_values[i]).collect();
        let u = DMatrix::from_fn(u.nrows(), order.len(), |row, col| u[(row, order[col])]);
        let v = DMatrix::from_fn(c, order.len(), |row, col| vt[(order[col], row)]);
        FullSvd {
            u,
            singular,
            v,
            rows: r,
        }
    }

    pub fn max_singular(&self) -> f64 {
        self.singular.first().copied().unwrap_or(0.0)
    }

    /// Number of singular values above `rel_tol * sigma_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let cut = rel_tol * self.max_singular();
        self.singular.iter().filter(|&&s| s > cut && s > 0.0).count()
    }

    /// Orthonormal basis of the null space (columns).
    pub fn null_space(&self, rel_tol: f64) -> DMatrix<f64> {
        let r = self.rank(rel_tol);
        self.v.columns(r, self.v.ncols() - r).into_owned()
    }

    /// Minimum-norm least-squares solution of `m x = rhs`.
    pub fn solve(&self, rhs: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
        let r = self.rank(rel_tol);
        let mut padded = DMatrix::zeros(self.u.nrows(), rhs.ncols());
        padded.view_mut((0, 0), (self.rows, rhs.ncols())).copy_from(rhs);
        let mut out = DMatrix::zeros(self.v.nrows(), rhs.ncols());
        for k in 0..r {
            let coeff = self.u.column(k).transpose() * &padded / self.singular[k];
            out += self.v.column(k) * coeff;
        }
        out
    }
}

/// Ratio of the largest to the smallest pivot magnitude of an LU
/// factorization; a cheap stand-in for the condition number.
pub fn pivot_ratio(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let u = lu.u();
    let d = u.diagonal();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for x in d.iter() {
        lo = lo.min(x.abs());
        hi = hi.max(x.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_matrix_null_space() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let svd = FullSvd::new(&m);
        assert_eq!(svd.rank(1e-12), 1);
        let z = svd.null_space(1e-12);
        assert_eq!(z.shape(), (3, 2));
        assert!((&m * &z).amax() < 1e-14);
    }

    #[test]
    fn min_norm_solution() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let svd = FullSvd::new(&m);
        let x = svd.solve(&DMatrix::from_row_slice(1, 1, &[2.0]), 1e-12);
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14 && (x[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tall_least_squares() {
        // fit y = a + b x to three points
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 3.0, 5.0]);
        let x = FullSvd::new(&m).solve(&y, 1e-12);
        assert!((x[(0, 0)] - 1.0).abs() < 1e-13 && (x[(1, 0)] - 2.0).abs() < 1e-13);
    }
}
