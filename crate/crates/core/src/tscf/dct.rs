//! Orthonormal DCT-II as a dense matrix, for the short lengths used here
//! (a few dozen scans, at most a few dozen cluster members).

/// `X = D x` with `D[k][j] = s_k cos(π (j + ½) k / n)`, `s_0 = √(1/n)`,
/// `s_k = √(2/n)`. `D` is orthogonal, so the inverse is `Dᵀ`.
#[derive(Debug, Clone)]
pub struct Dct {
    n: usize,
    matrix: Vec<f64>,
}

impl Dct {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "DCT length must be >= 1");
        let mut matrix = vec![0.0; n * n];
        let nf = n as f64;
        for k in 0..n {
            let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            for j in 0..n {
                matrix[k * n + j] = s * (std::f64::consts::PI * (j as f64 + 0.5) * k as f64 / nf).cos();
            }
        }
        Self { n, matrix }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[k * self.n..(k + 1) * self.n];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn inverse_into(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.n);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = &self.matrix[k * self.n..(k + 1) * self.n];
            for (o, a) in out.iter_mut().zip(row) {
                *o += c * a;
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.forward_into(x, &mut out);
        out
    }

    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.inverse_into(coeffs, &mut out);
        out
    }

    /// Transforms along the row axis of a row-major `n × width` matrix:
    /// `out = D · m`.
    pub(crate) fn forward_columns(&self, m: &[f64], width: usize, out: &mut [f64]) {
        self.apply_columns(m, width, out, false);
    }

    /// `out = Dᵀ · m`.
    pub(crate) fn inverse_columns(&self, m: &[f64], width: usize, out: &mut [f64]) {
        self.apply_columns(m, width, out, true);
    }

    fn apply_columns(&self, m: &[f64], width: usize, out: &mut [f64], transpose: bool) {
        let n = self.n;
        debug_assert_eq!(m.len(), n * width);
        out[..n * width].iter_mut().for_each(|o| *o = 0.0);
        for u in 0..n {
            let dst = &mut out[u * width..(u + 1) * width];
            for j in 0..n {
                let a = if transpose { self.matrix[j * n + u] } else { self.matrix[u * n + j] };
                if a == 0.0 {
                    continue;
                }
                let src = &m[j * width..(j + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }
}
