//! Small dense linear algebra: a row-major matrix type and Householder QR
//! least squares.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Least-squares solution of `design · β ≈ y` and its residual sum of squares.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub rss: f64,
}

/// Solves least squares by Householder QR. Rank deficiency is detected from
/// the diagonal of R relative to its largest entry.
pub fn lstsq(design: &Matrix, y: &[f64]) -> Result<LeastSquares> {
    let (n, k) = (design.rows(), design.cols());
    if y.len() != n {
        return Err(Error::Shape(format!("{} responses for {n} rows", y.len())));
    }
    if n <= k || k == 0 {
        return Err(Error::InvalidInput(format!(
            "need more rows than columns, got {n}x{k}"
        )));
    }
    let mut a = design.clone();
    let mut b = y.to_vec();
    let mut r_diag = vec![0.0; k];

    for j in 0..k {
        let norm = (j..n).map(|i| a[(i, j)].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::SingularDesign);
        }
        let alpha = if a[(j, j)] > 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored in column j below the diagonal
        a[(j, j)] -= alpha;
        let v_norm2: f64 = (j..n).map(|i| a[(i, j)].powi(2)).sum();
        if v_norm2 > 0.0 {
            for c in (j + 1)..k {
                let dot: f64 = (j..n).map(|i| a[(i, j)] * a[(i, c)]).sum();
                let f = 2.0 * dot / v_norm2;
                for i in j..n {
                    a[(i, c)] -= f * a[(i, j)];
                }
            }
            let dot: f64 = (j..n).map(|i| a[(i, j)] * b[i]).sum();
            let f = 2.0 * dot / v_norm2;
            for i in j..n {
                b[i] -= f * a[(i, j)];
            }
        }
        r_diag[j] = alpha;
    }

    let scale = r_diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if r_diag.iter().any(|d| d.abs() <= 1e-12 * scale) {
        return Err(Error::SingularDesign);
    }

    let mut coef = vec![0.0; k];
    for j in (0..k).rev() {
        let mut s = b[j];
        for c in (j + 1)..k {
            s -= a[(j, c)] * coef[c];
        }
        coef[j] = s / r_diag[j];
    }
    let rss = b[k..].iter().map(|v| v * v).sum();
    Ok(LeastSquares {
        coefficients: coef,
        rss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_recovers_exact_line() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 2.0 + 3.0 * i as f64).collect();
        let fit = lstsq(&Matrix::from_rows(&rows).unwrap(), &y).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-10);
        assert!((fit.coefficients[1] - 3.0).abs() < 1e-10);
        assert!(fit.rss < 1e-18);
    }

    #[test]
    fn lstsq_rss_matches_residuals() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![1.0, i as f64, (i * i) as f64 % 5.0])
            .collect();
        let y = [1.0, -2.0, 0.5, 4.0, 3.0, -1.0];
        let x = Matrix::from_rows(&rows).unwrap();
        let fit = lstsq(&x, &y).unwrap();
        let rss: f64 = rows
            .iter()
            .zip(&y)
            .map(|(r, yi)| {
                let pred: f64 = r.iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum();
                (yi - pred).powi(2)
            })
            .sum();
        assert!((rss - fit.rss).abs() < 1e-10);
    }

    #[test]
    fn lstsq_rejects_collinear_columns() {
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![1.0, i as f64, 2.0 * i as f64])
            .collect();
        let y = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            lstsq(&Matrix::from_rows(&rows).unwrap(), &y),
            Err(Error::SingularDesign)
        );
    }
}
