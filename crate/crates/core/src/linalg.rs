//! Small dense helpers shared across modules. Stacked state vectors are plain
//! `Vec<f64>`; anything needing factorizations goes through nalgebra.

use nalgebra::DMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Moore-Penrose pseudoinverse of a symmetric matrix via its eigendecomposition.
/// Eigenvalues below `rel_tol · max|λ|` are treated as zero.
pub fn symmetric_pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    let cutoff = rel_tol * scale.max(f64::MIN_POSITIVE);
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    out
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |r, z| r.max(z.norm()))
}

/// A 2×2 real matrix, row-major. The scattering maps are `B ⊗ I_N` for such
/// blocks, so all per-link algebra reduces to these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d.abs() < 1e-300 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2([
            [m[1][1] / d, -m[0][1] / d],
            [-m[1][0] / d, m[0][0] / d],
        ]))
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        let mut r = [[0.0; 2]; 2];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(r)
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        let mut r = self.0;
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell += o.0[i][j];
            }
        }
        Mat2(r)
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        let mut r = self.0;
        for row in r.iter_mut() {
            for cell in row.iter_mut() {
                *cell *= s;
            }
        }
        Mat2(r)
    }

    /// Applies `self ⊗ I_N` to a stacked `[top; bottom]` vector of length `2N`.
    pub fn apply_lifted(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len() / 2;
        let (top, bot) = v.split_at(n);
        let m = &self.0;
        let mut out = vec![0.0; v.len()];
        for k in 0..n {
            out[k] = m[0][0] * top[k] + m[0][1] * bot[k];
            out[n + k] = m[1][0] * top[k] + m[1][1] * bot[k];
        }
        out
    }

    /// Eigenvalue moduli of the 2×2 block (the lifted matrix has the same spectrum).
    pub fn spectral_radius(&self) -> f64 {
        let m = &self.0;
        let tr = m[0][0] + m[1][1];
        let det = self.det();
        let disc = tr * tr / 4.0 - det;
        if disc >= 0.0 {
            let s = disc.sqrt();
            (tr / 2.0 + s).abs().max((tr / 2.0 - s).abs())
        } else {
            // complex pair: |λ|² = det
            det.abs().sqrt()
        }
    }

    /// Dense `self ⊗ I_N`.
    pub fn lifted(&self, n: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.0[0][0], self.0[0][1], self.0[1][0], self.0[1][1]])
            .kronecker(&DMatrix::identity(n, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_path_laplacian() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let p = symmetric_pinv(&l, 1e-12);
        // pinv of [[1,-1],[-1,1]] is [[1,-1],[-1,1]] / 4
        for (a, b) in p.iter().zip([0.25, -0.25, -0.25, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mat2_inverse_and_lift_agree_with_dense() {
        let m = Mat2([[2.0, -3.0], [3.0, 1.0]]);
        let inv = m.inverse().unwrap();
        let prod = m.mul(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((prod.0[i][j] - e).abs() < 1e-15);
            }
        }
        let v = vec![1.0, -2.0, 0.5, 4.0];
        let dense = m.lifted(2) * nalgebra::DVector::from_vec(v.clone());
        let lifted = m.apply_lifted(&v);
        for k in 0..4 {
            assert!((dense[k] - lifted[k]).abs() < 1e-15);
        }
        assert!((m.spectral_radius() - spectral_radius(&m.lifted(3))).abs() < 1e-12);
    }
}
