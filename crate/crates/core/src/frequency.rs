//! Orthonormal 2D DCT-II of model weights and low-frequency fingerprints.
//!
//! All of a model's parameters are laid row-major into one zero-padded
//! `N x N` matrix with `N = ceil(sqrt(len))`. The fingerprint keeps the
//! coefficients `(i, j)` with `i + j <= floor(N / 2)`, in row-major order.

use crate::error::{Error, Result};
use crate::model::ParameterVector;

/// Dense square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    entries: Vec<f64>,
}

/// DCT coefficients of a packed model.
pub type CoefficientMatrix = SquareMatrix;

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.0; n * n],
        }
    }

    pub fn from_rows(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} entries do not form a {n}x{n} matrix",
                entries.len()
            )));
        }
        Ok(Self { n, entries })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    fn ensure_finite(&self) -> Result<()> {
        if self.entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DCT input"));
        }
        Ok(())
    }
}

/// Low-frequency coefficients of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyFingerprint {
    pub coeffs: Vec<f64>,
    pub source_n: usize,
}

impl FrequencyFingerprint {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

pub fn square_side(len: usize) -> usize {
    let mut n = (len as f64).sqrt() as usize;
    while n * n < len {
        n += 1;
    }
    while n > 0 && (n - 1) * (n - 1) >= len {
        n -= 1;
    }
    n
}

pub fn pack_values(values: &[f64]) -> SquareMatrix {
    let n = square_side(values.len());
    let mut m = SquareMatrix::zeros(n);
    m.entries[..values.len()].copy_from_slice(values);
    m
}

pub fn pack_to_square(params: &ParameterVector) -> SquareMatrix {
    pack_values(params.values())
}

/// Inverse of [`pack_values`]: the first `len` cells in row-major order.
pub fn unpack_from_square(m: &SquareMatrix, len: usize) -> Result<Vec<f64>> {
    if len > m.entries.len() {
        return Err(Error::DimensionMismatch(format!(
            "cannot unpack {len} values from a {0}x{0} matrix",
            m.n
        )));
    }
    Ok(m.entries[..len].to_vec())
}

/// Cutoff `h = floor(N / 2)` of the kept triangle.
pub fn low_frequency_cutoff(n: usize) -> usize {
    n / 2
}

/// Kept `(i, j)` positions, in fingerprint order.
pub fn low_frequency_indices(n: usize) -> Vec<(usize, usize)> {
    let h = low_frequency_cutoff(n);
    let mut out = Vec::with_capacity((h + 1) * (h + 2) / 2);
    for i in 0..=h {
        for j in 0..=h {
            if i + j <= h {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn fingerprint_len(n: usize) -> usize {
    let h = low_frequency_cutoff(n);
    (h + 1) * (h + 2) / 2
}

/// Orthonormal DCT-II basis: row `k` holds `c(k) cos(pi k (2m + 1) / 2N)`.
#[derive(Debug, Clone)]
pub struct DctBasis {
    n: usize,
    c: Vec<f64>,
}

impl DctBasis {
    pub fn new(n: usize) -> Self {
        let mut c = vec![0.0; n * n];
        if n > 0 {
            let nf = n as f64;
            for k in 0..n {
                let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                for m in 0..n {
                    let angle = std::f64::consts::PI * k as f64 * (2 * m + 1) as f64 / (2.0 * nf);
                    c[k * n + m] = scale * angle.cos();
                }
            }
        }
        Self { n, c }
    }

    pub fn side(&self) -> usize {
        self.n
    }

    #[inline]
    fn row(&self, k: usize) -> &[f64] {
        &self.c[k * self.n..(k + 1) * self.n]
    }

    /// `C[0..rows] * x`, an `rows x N` row-major product.
    fn left_multiply(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; rows * n];
        for k in 0..rows {
            let dst = &mut out[k * n..(k + 1) * n];
            for (m, &ckm) in self.row(k).iter().enumerate() {
                let src = &x[m * n..(m + 1) * n];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += ckm * s;
                }
            }
        }
        out
    }

    /// Forward transform `C x C^T`.
    pub fn forward(&self, x: &SquareMatrix) -> SquareMatrix {
        debug_assert_eq!(x.n, self.n);
        let n = self.n;
        let tmp = self.left_multiply(&x.entries, n);
        let mut out = SquareMatrix::zeros(n);
        for k in 0..n {
            let t = &tmp[k * n..(k + 1) * n];
            for l in 0..n {
                out.entries[k * n + l] = dot(t, self.row(l));
            }
        }
        out
    }

    /// Inverse transform `C^T X C`.
    pub fn inverse(&self, coeffs: &SquareMatrix) -> SquareMatrix {
        debug_assert_eq!(coeffs.n, self.n);
        let n = self.n;
        // tmp[m][l] = sum_k C[k][m] X[k][l]
        let mut tmp = vec![0.0; n * n];
        for k in 0..n {
            let xk = coeffs.row(k);
            let ck = self.row(k);
            for m in 0..n {
                let ckm = ck[m];
                let dst = &mut tmp[m * n..(m + 1) * n];
                for (d, &s) in dst.iter_mut().zip(xk) {
                    *d += ckm * s;
                }
            }
        }
        let mut out = SquareMatrix::zeros(n);
        for m in 0..n {
            let dst = &mut out.entries[m * n..(m + 1) * n];
            for l in 0..n {
                let t = tmp[m * n + l];
                for (d, &s) in dst.iter_mut().zip(self.row(l)) {
                    *d += t * s;
                }
            }
        }
        out
    }

    /// Low-frequency coefficients of `x` without computing the full transform.
    /// Each kept entry is evaluated with the same operations as [`forward`].
    ///
    /// [`forward`]: DctBasis::forward
    pub fn forward_low(&self, x: &SquareMatrix) -> Vec<f64> {
        let n = self.n;
        let h = low_frequency_cutoff(n);
        let tmp = self.left_multiply(&x.entries, (h + 1).min(n));
        low_frequency_indices(n)
            .into_iter()
            .map(|(k, l)| dot(&tmp[k * n..(k + 1) * n], self.row(l)))
            .collect()
    }

    /// Adjoint of [`forward_low`]: maps a fingerprint-space vector back to an
    /// `N x N` matrix. Since the basis is orthonormal this equals the inverse
    /// transform of the zero-filled coefficient matrix.
    ///
    /// [`forward_low`]: DctBasis::forward_low
    pub fn adjoint_low(&self, g: &[f64]) -> SquareMatrix {
        let n = self.n;
        let h = low_frequency_cutoff(n);
        let w = (h + 1).min(n);
        let mut coeffs = vec![0.0; w * w];
        for (&(k, l), &v) in low_frequency_indices(n).iter().zip(g) {
            coeffs[k * w + l] = v;
        }
        // tmp[m][l] = sum_k C[k][m] G[k][l], l < w
        let mut tmp = vec![0.0; n * w];
        for k in 0..w {
            let gk = &coeffs[k * w..(k + 1) * w];
            let ck = self.row(k);
            for m in 0..n {
                let ckm = ck[m];
                let dst = &mut tmp[m * w..(m + 1) * w];
                for (d, &s) in dst.iter_mut().zip(gk) {
                    *d += ckm * s;
                }
            }
        }
        let mut out = SquareMatrix::zeros(n);
        for m in 0..n {
            let dst = &mut out.entries[m * n..(m + 1) * n];
            for l in 0..w {
                let t = tmp[m * w + l];
                for (d, &s) in dst.iter_mut().zip(self.row(l)) {
                    *d += t * s;
                }
            }
        }
        out
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dct2(x: &SquareMatrix) -> Result<CoefficientMatrix> {
    x.ensure_finite()?;
    Ok(DctBasis::new(x.n).forward(x))
}

pub fn idct2(coeffs: &CoefficientMatrix) -> Result<SquareMatrix> {
    coeffs.ensure_finite()?;
    Ok(DctBasis::new(coeffs.n).inverse(coeffs))
}

pub fn extract_low_frequency(v: &CoefficientMatrix) -> FrequencyFingerprint {
    let coeffs = low_frequency_indices(v.n)
        .into_iter()
        .map(|(i, j)| v.get(i, j))
        .collect();
    FrequencyFingerprint {
        coeffs,
        source_n: v.n,
    }
}

/// Fingerprinting as a reusable linear map for vectors of one fixed length.
#[derive(Debug, Clone)]
pub struct FingerprintMap {
    len: usize,
    basis: DctBasis,
}

impl FingerprintMap {
    pub fn new(param_len: usize) -> Self {
        Self {
            len: param_len,
            basis: DctBasis::new(square_side(param_len)),
        }
    }

    pub fn param_len(&self) -> usize {
        self.len
    }

    pub fn fingerprint_len(&self) -> usize {
        fingerprint_len(self.basis.side())
    }

    pub fn apply(&self, values: &[f64]) -> Result<FrequencyFingerprint> {
        if values.len() != self.len {
            return Err(Error::DimensionMismatch(format!(
                "fingerprint map built for {} values, got {}",
                self.len,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DCT input"));
        }
        Ok(FrequencyFingerprint {
            coeffs: self.basis.forward_low(&pack_values(values)),
            source_n: self.basis.side(),
        })
    }

    /// Transpose of [`apply`](FingerprintMap::apply): pulls a gradient with
    /// respect to the fingerprint back to the parameters.
    pub fn adjoint(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.fingerprint_len() {
            return Err(Error::DimensionMismatch(format!(
                "expected fingerprint gradient of length {}, got {}",
                self.fingerprint_len(),
                g.len()
            )));
        }
        unpack_from_square(&self.basis.adjoint_low(g), self.len)
    }
}

/// `extract_low_frequency(dct2(pack_to_square(params)))`.
pub fn fingerprint(params: &ParameterVector) -> Result<FrequencyFingerprint> {
    FingerprintMap::new(params.len()).apply(params.values())
}
