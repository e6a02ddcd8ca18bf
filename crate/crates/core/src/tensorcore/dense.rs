use serde::{Deserialize, Serialize};

use super::{NumError, NORM_EPS};

/// A non-empty vector of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vec64(Vec<f64>);

impl Vec64 {
    pub fn new(data: Vec<f64>) -> Result<Self, NumError> {
        if data.is_empty() {
            return Err(NumError::Empty);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite);
        }
        Ok(Self(data))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl TryFrom<Vec<f64>> for Vec64 {
    type Error = NumError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Vec64> for Vec<f64> {
    fn from(v: Vec64) -> Self {
        v.0
    }
}

impl std::ops::Deref for Vec64 {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumError> {
        let cols = rows.first().map(|r| r.as_ref().len()).ok_or(NumError::Empty)?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NumError::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, NumError> {
        if x.len() != self.cols {
            return Err(NumError::DimensionMismatch {
                expected: self.cols,
                found: x.len(),
            });
        }
        Ok(self.iter_rows().map(|r| dot(r, x)).collect())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn mul_transpose(&self, other: &Matrix) -> Result<Matrix, NumError> {
        if self.cols != other.cols {
            return Err(NumError::DimensionMismatch {
                expected: self.cols,
                found: other.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(self.row(i), other.row(j));
            }
        }
        Ok(out)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit vector in the direction of `a`.
pub fn normalize(a: &[f64]) -> Result<Vec<f64>, NumError> {
    let n = norm(a);
    if !(n > NORM_EPS) {
        return Err(NumError::DegenerateNorm { norm: n });
    }
    Ok(a.iter().map(|v| v / n).collect())
}

/// `⟨u,v⟩ / (‖u‖·‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, NumError> {
    if u.len() != v.len() {
        return Err(NumError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let nu = norm(u);
    let nv = norm(v);
    for n in [nu, nv] {
        if !(n > NORM_EPS) {
            return Err(NumError::DegenerateNorm { norm: n });
        }
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Returns `(−log softmax(logits)[target], softmax(logits) − onehot(target))`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>), NumError> {
    if target >= logits.len() {
        return Err(NumError::IndexOutOfRange {
            index: target,
            len: logits.len(),
        });
    }
    // log-sum-exp as max + ln(1 + Σ_{i≠argmax} e^{l_i − max}), so the
    // saturated case keeps full relative precision
    let top = argmax(logits).ok_or(NumError::Empty)?;
    let max = logits[top];
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != top)
        .map(|(_, l)| (l - max).exp())
        .sum();
    let loss = (max - logits[target]) + rest.ln_1p();
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Solves `A X = B` for symmetric positive-definite `A` (n×n) and `B` (n×k)
/// by Cholesky factorisation.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix, NumError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(NumError::DimensionMismatch {
            expected: n,
            found: a.cols(),
        });
    }
    if b.rows() != n {
        return Err(NumError::DimensionMismatch {
            expected: n,
            found: b.rows(),
        });
    }
    // Lower-triangular factor, stored densely.
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.row(i)[j];
            for k in 0..j {
                s -= l.row(i)[k] * l.row(j)[k];
            }
            if i == j {
                // relative pivot tolerance: round-off alone must not pass
                // a singular matrix as positive definite
                if !(s > 1e-12 * a.row(i)[i].abs()) {
                    return Err(NumError::NotPositiveDefinite);
                }
                l.row_mut(i)[i] = s.sqrt();
            } else {
                l.row_mut(i)[j] = s / l.row(j)[j];
            }
        }
    }
    let k = b.cols();
    let mut x = b.clone();
    for col in 0..k {
        // forward: L y = b
        for i in 0..n {
            let mut s = x.row(i)[col];
            for j in 0..i {
                s -= l.row(i)[j] * x.row(j)[col];
            }
            x.row_mut(i)[col] = s / l.row(i)[i];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x.row(i)[col];
            for j in i + 1..n {
                s -= l.row(j)[i] * x.row(j)[col];
            }
            x.row_mut(i)[col] = s / l.row(i)[i];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_identical_and_orthogonal() {
        assert!((cosine_sim(&[1.0, 2.0, 2.0], &[1.0, 2.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_scale_invariant() {
        let u = [0.3, -1.2, 0.7];
        let v = [1.1, 0.4, -0.2];
        let u3: Vec<f64> = u.iter().map(|x| 3.0 * x).collect();
        let a = cosine_sim(&u3, &v).unwrap();
        let b = cosine_sim(&u, &v).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(NumError::DegenerateNorm { .. })
        ));
        assert!(matches!(
            cosine_sim(&[1.0, 0.0], &[1e-13, 0.0]),
            Err(NumError::DegenerateNorm { .. })
        ));
    }

    #[test]
    fn cross_entropy_values() {
        let (l, _) = softmax_cross_entropy(&[0.0, 0.0, 0.0], 0).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);

        let (l, _) = softmax_cross_entropy(&[10.0, -10.0], 0).unwrap();
        let expected = (-20f64).exp().ln_1p();
        assert!((l - expected).abs() < 1e-20);
        assert!((l - 2.06e-9).abs() < 1e-11);

        let (_, g) = softmax_cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert_eq!(g, vec![-0.5, 0.5]);

        assert_eq!(
            softmax_cross_entropy(&[0.0, 1.0], 2),
            Err(NumError::IndexOutOfRange { index: 2, len: 2 })
        );
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn vec64_rejects_nan_and_empty() {
        assert_eq!(Vec64::new(vec![]), Err(NumError::Empty));
        assert_eq!(Vec64::new(vec![1.0, f64::NAN]), Err(NumError::NonFinite));
    }

    #[test]
    fn cholesky_solves_small_system() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let b = Matrix::from_rows(&[[2.0], [1.0]]).unwrap();
        let x = cholesky_solve(&a, &b).unwrap();
        let back = a.matvec(&[x.row(0)[0], x.row(1)[0]]).unwrap();
        assert!((back[0] - 2.0).abs() < 1e-14 && (back[1] - 1.0).abs() < 1e-14);
        let singular = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(
            cholesky_solve(&singular, &b),
            Err(NumError::NotPositiveDefinite)
        );
    }
}
