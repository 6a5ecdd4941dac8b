use crate::error::{Error, Result};

/// Dense row-major matrix. Feature tensors are `[tokens][dim]`; projection
/// weights are `[dim][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// A `[tokens][dim]` feature map.
pub type FeatureTensor = Matrix;

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("tensor dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("tensor has non-finite entries"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Alias of [`rows`](Self::rows) for feature tensors.
    pub fn tokens(&self) -> usize {
        self.rows
    }

    /// Alias of [`cols`](Self::cols) for feature tensors.
    pub fn dim(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        Self::from_fn(self.rows, other.rows, |i, j| {
            self.row(i).iter().zip(other.row(j)).map(|(a, b)| a * b).sum()
        })
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for (i, a) in arow.iter().enumerate() {
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(brow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Column means: pools a `[tokens][dim]` tensor to `[dim]`.
    pub fn mean_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, x) in out.iter_mut().zip(self.row(r)) {
                *o += x;
            }
        }
        let n = self.rows as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Concatenates along the feature dimension: `[t][d1] ⊕ [t][d2] → [t][d1 + d2]`.
pub fn fuse(f_lq: &FeatureTensor, x_hq: &FeatureTensor) -> Result<FeatureTensor> {
    if f_lq.tokens() != x_hq.tokens() {
        return Err(Error::invalid(format!(
            "cannot fuse tensors with {} and {} tokens",
            f_lq.tokens(),
            x_hq.tokens()
        )));
    }
    let (d1, d2) = (f_lq.dim(), x_hq.dim());
    Ok(Matrix::from_fn(f_lq.tokens(), d1 + d2, |t, c| {
        if c < d1 {
            f_lq.get(t, c)
        } else {
            x_hq.get(t, c - d1)
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn products_agree() {
        let a = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = m(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        assert_eq!(a.matmul(&b).data(), &[58.0, 64.0, 139.0, 154.0]);
        assert_eq!(a.matmul_t(&b.transpose()), a.matmul(&b));
        assert_eq!(a.transpose().t_matmul(&b), a.matmul(&b));
    }

    #[test]
    fn fuse_shapes_and_order() {
        let a = Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64);
        let b = Matrix::from_fn(4, 5, |r, c| -((r * 5 + c) as f64) - 1.0);
        let ab = fuse(&a, &b).unwrap();
        assert_eq!(ab.shape(), (4, 8));
        let az = fuse(&a, &Matrix::zeros(4, 5)).unwrap();
        for r in 0..4 {
            assert_eq!(&az.row(r)[..3], a.row(r));
        }
        let b3 = Matrix::from_fn(4, 3, |r, c| (r + c) as f64 * 0.5 + 7.0);
        assert_ne!(fuse(&a, &b3).unwrap(), fuse(&b3, &a).unwrap());
        assert!(fuse(&a, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Matrix::new(0, 2, vec![]).is_err());
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
    }
}
