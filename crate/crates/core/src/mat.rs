use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// Dense row-major matrix of f64.
///
/// Paper formulas are written 1-based ((v)_{i+r-1,j+s-1}); everything here is
/// 0-based, so that index pattern appears as `x[i+r][j+s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("matrix dimensions must be >= 1, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("matrix contains a non-finite entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn random_uniform(rows: usize, cols: usize, rng: &mut SplitRng) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.next_f64())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Side length of a square matrix.
    pub fn side(&self) -> Result<usize> {
        if !self.is_square() {
            return Err(Error::Shape(format!("expected square matrix, got {}x{}", self.rows, self.cols)));
        }
        Ok(self.rows)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "elementwise op on {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Sum of entrywise products.
    pub fn dot(&self, other: &Mat) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "dot of {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Squared Frobenius norm.
    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Standard matrix product.
pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul of {}x{} with {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += aik * b.get(k, j);
            }
        }
    }
    Ok(out)
}

/// Per-map pre-scale for a chain of `n` square maps of side `nv`.
///
/// Raw chain products of [0,1] maps reach nv^(n-1); scaling each factor by
/// nv^(-(n-1)/n) bounds the product entries by 1, which keeps the sigmoid
/// treatment of the multiplicative unit well-posed.
pub fn chain_scale(side: usize, n: usize) -> f64 {
    (side as f64).powf(-((n - 1) as f64) / n as f64)
}

/// Multiplicative unit: scaled matrix chain product of time-adjacent maps.
pub fn chain_product(maps: &[Mat]) -> Result<Mat> {
    if maps.len() < 2 {
        return Err(Error::Shape(format!("chain product needs >= 2 maps, got {}", maps.len())));
    }
    let side = maps[0].side()?;
    for (i, m) in maps.iter().enumerate() {
        if m.side()? != side {
            return Err(Error::Shape(format!(
                "chain map {i} is {}x{}, expected side {side}",
                m.rows(),
                m.cols()
            )));
        }
    }
    let s = chain_scale(side, maps.len());
    let mut acc = maps[0].scale(s);
    for m in &maps[1..] {
        acc = matmul(&acc, &m.scale(s))?;
    }
    Ok(acc)
}

/// Valid cross-correlation: out side = x.side - k.side + 1.
///
/// This is the index pattern the formulas use under the name "convolution".
pub fn valid_correlate(x: &Mat, k: &Mat) -> Result<Mat> {
    if k.rows > x.rows || k.cols > x.cols {
        return Err(Error::Shape(format!(
            "kernel {}x{} larger than input {}x{}",
            k.rows, k.cols, x.rows, x.cols
        )));
    }
    let out_rows = x.rows - k.rows + 1;
    let out_cols = x.cols - k.cols + 1;
    let mut out = Mat::zeros(out_rows, out_cols);
    for i in 0..out_rows {
        for j in 0..out_cols {
            let mut acc = 0.0;
            for r in 0..k.rows {
                for s in 0..k.cols {
                    acc += k.get(r, s) * x.get(i + r, j + s);
                }
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// Full convolution of `h` with the 180-degree-rotated kernel: the adjoint of
/// `valid_correlate` in its first argument. Out side = h.side + k.side - 1.
pub fn full_convolve_flipped(h: &Mat, k: &Mat) -> Result<Mat> {
    let out_rows = h.rows + k.rows - 1;
    let out_cols = h.cols + k.cols - 1;
    let mut out = Mat::zeros(out_rows, out_cols);
    for p in 0..out_rows {
        for q in 0..out_cols {
            let mut acc = 0.0;
            for r in 0..k.rows {
                for s in 0..k.cols {
                    if p >= r && q >= s {
                        let (hi, hj) = (p - r, q - s);
                        if hi < h.rows && hj < h.cols {
                            acc += k.get(r, s) * h.get(hi, hj);
                        }
                    }
                }
            }
            out.set(p, q, acc);
        }
    }
    Ok(out)
}

/// Relative cutoff for discarding singular values in the least-squares solve.
pub const LSTSQ_SV_CUTOFF: f64 = 1e-10;

/// Minimum-norm least squares: among X minimizing ||A X - B||_F, the one of
/// least norm. Rank deficiency is handled by dropping singular values below
/// `LSTSQ_SV_CUTOFF` times the largest.
pub fn lstsq_solve(a: &Mat, b: &Mat) -> Result<Mat> {
    lstsq_solve_cut(a, b, LSTSQ_SV_CUTOFF)
}

/// [`lstsq_solve`] with a caller-chosen relative singular-value cutoff;
/// a stiffer cutoff bounds how much the inversion can amplify noise.
pub fn lstsq_solve_cut(a: &Mat, b: &Mat, rel_cutoff: f64) -> Result<Mat> {
    if a.rows != b.rows {
        return Err(Error::Shape(format!(
            "lstsq row mismatch: A is {}x{}, B is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let na = nalgebra::DMatrix::from_fn(a.rows, a.cols, |i, j| a.get(i, j));
    let nb = nalgebra::DMatrix::from_fn(b.rows, b.cols, |i, j| b.get(i, j));
    let svd = na.svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = if sigma_max > 0.0 { rel_cutoff * sigma_max } else { f64::MAX };
    let x = svd
        .solve(&nb, eps)
        .map_err(|e| Error::Numeric(format!("lstsq solve failed: {e}")))?;
    let mut data = Vec::with_capacity(x.nrows() * x.ncols());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            data.push(x[(i, j)]);
        }
    }
    Mat::new(x.nrows(), x.ncols(), data)
        .map_err(|_| Error::Numeric("lstsq produced a non-finite solution".into()))
}

/// Elementwise logistic function.
pub fn sigmoid_map(x: &Mat) -> Mat {
    x.map(sigmoid)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable log(1 + e^x).
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Entrywise Bernoulli draw; entries of `p` must lie in [0,1].
pub fn bernoulli_sample(p: &Mat, rng: &mut SplitRng) -> Result<Mat> {
    let mut out = Mat::zeros(p.rows, p.cols);
    for i in 0..p.rows {
        for j in 0..p.cols {
            let pv = p.get(i, j);
            if !(0.0..=1.0).contains(&pv) {
                return Err(Error::Domain(format!(
                    "bernoulli probability {pv} at ({i},{j}) outside [0,1]"
                )));
            }
            out.set(i, j, if rng.bernoulli(pv)? { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_mat(rows: usize, cols: usize, rng: &mut SplitRng) -> Mat {
        Mat::random_uniform(rows, cols, rng)
    }

    // entry-by-entry triple loop, kept independent of matmul
    fn matmul_oracle(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let mut rng = SplitRng::new(1);
        let x = random_mat(3, 3, &mut rng);
        let out = matmul(&Mat::identity(3), &x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn matmul_annihilator() {
        let a = Mat::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let z = Mat::zeros(2, 2);
        assert_eq!(matmul(&a, &z).unwrap(), Mat::zeros(2, 2));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SplitRng::new(2);
        let a = random_mat(4, 4, &mut rng);
        let b = random_mat(4, 4, &mut rng);
        assert_eq!(matmul(&a, &b).unwrap(), matmul_oracle(&a, &b));
    }

    #[test]
    fn matmul_shape_error() {
        let a = Mat::zeros(2, 3);
        let b = Mat::zeros(2, 2);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("2x2"), "{err}");
    }

    #[test]
    fn matmul_associativity() {
        let mut rng = SplitRng::new(3);
        for _ in 0..20 {
            let a = random_mat(4, 4, &mut rng);
            let b = random_mat(4, 4, &mut rng);
            let c = random_mat(4, 4, &mut rng);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.frob_sq().sqrt().max(1.0);
            assert!(left.max_abs_diff(&right) / scale < 1e-10);
        }
    }

    #[test]
    fn chain_two_identities() {
        let out = chain_product(&[Mat::identity(2), Mat::identity(2)]).unwrap();
        // s = 2^{-1/2}, s^2 = 0.5
        assert!(out.max_abs_diff(&Mat::identity(2).scale(0.5)) < 1e-15);
    }

    #[test]
    fn chain_with_zero_map() {
        let mut rng = SplitRng::new(4);
        let maps = vec![random_mat(3, 3, &mut rng), Mat::zeros(3, 3), random_mat(3, 3, &mut rng)];
        assert_eq!(chain_product(&maps).unwrap(), Mat::zeros(3, 3));
    }

    #[test]
    fn chain_matches_sequential_oracle_and_stays_bounded() {
        let mut rng = SplitRng::new(5);
        let maps: Vec<Mat> = (0..3).map(|_| random_mat(3, 3, &mut rng)).collect();
        let s = chain_scale(3, 3);
        let raw = matmul_oracle(&matmul_oracle(&maps[0], &maps[1]), &maps[2]);
        let expected = raw.scale(s * s * s);
        let out = chain_product(&maps).unwrap();
        assert!(out.max_abs_diff(&expected) < 1e-12);
        assert!(out.data().iter().all(|&v| v <= 1.0 + 1e-12));
    }

    #[test]
    fn chain_rejects_short_or_ragged() {
        assert!(chain_product(&[Mat::identity(2)]).is_err());
        assert!(chain_product(&[Mat::identity(2), Mat::identity(3)]).is_err());
        assert!(chain_product(&[Mat::zeros(2, 3), Mat::zeros(3, 2)]).is_err());
    }

    // four-loop brute force, independent of valid_correlate
    fn correlate_oracle(x: &Mat, k: &Mat) -> Mat {
        let mut out = Mat::zeros(x.rows() - k.rows() + 1, x.cols() - k.cols() + 1);
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                let mut acc = 0.0;
                for r in 0..k.rows() {
                    for s in 0..k.cols() {
                        acc += k.get(r, s) * x.get(i + r, j + s);
                    }
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn correlate_ones() {
        let x = Mat::filled(3, 3, 1.0);
        let k = Mat::filled(2, 2, 1.0);
        assert_eq!(valid_correlate(&x, &k).unwrap(), Mat::filled(2, 2, 4.0));
    }

    #[test]
    fn correlate_scalar_kernel() {
        let mut rng = SplitRng::new(6);
        let x = random_mat(4, 4, &mut rng);
        let k = Mat::new(1, 1, vec![3.5]).unwrap();
        assert_eq!(valid_correlate(&x, &k).unwrap(), x.scale(3.5));
    }

    #[test]
    fn correlate_matches_brute_force() {
        let mut rng = SplitRng::new(7);
        let x = random_mat(5, 5, &mut rng);
        let k = random_mat(3, 3, &mut rng);
        assert_eq!(valid_correlate(&x, &k).unwrap(), correlate_oracle(&x, &k));
    }

    #[test]
    fn correlate_kernel_too_large() {
        assert!(valid_correlate(&Mat::zeros(2, 2), &Mat::zeros(3, 3)).is_err());
    }

    #[test]
    fn full_conv_delta_reproduces_kernel() {
        let h = Mat::new(1, 1, vec![1.0]).unwrap();
        let k = Mat::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = full_convolve_flipped(&h, &k).unwrap();
        // delta at origin reproduces the kernel laid out by its own indices
        assert_eq!(out, k);
    }

    #[test]
    fn full_conv_zero_hidden() {
        let out = full_convolve_flipped(&Mat::zeros(3, 3), &Mat::filled(2, 2, 1.0)).unwrap();
        assert_eq!(out, Mat::zeros(4, 4));
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = SplitRng::new(8);
        for _ in 0..100 {
            let x = random_mat(5, 5, &mut rng);
            let k = random_mat(3, 3, &mut rng);
            let h = random_mat(3, 3, &mut rng);
            let lhs = valid_correlate(&x, &k).unwrap().dot(&h).unwrap();
            let rhs = x.dot(&full_convolve_flipped(&h, &k).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "lhs={lhs} rhs={rhs}");
        }
    }

    #[test]
    fn lstsq_identity_lhs() {
        let mut rng = SplitRng::new(9);
        let b = random_mat(4, 4, &mut rng);
        let x = lstsq_solve(&Mat::identity(4), &b).unwrap();
        assert!(x.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn lstsq_projection_mean() {
        let a = Mat::new(2, 1, vec![1.0, 1.0]).unwrap();
        let b = Mat::new(2, 1, vec![1.0, 3.0]).unwrap();
        let x = lstsq_solve(&a, &b).unwrap();
        assert!((x.get(0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lstsq_recovers_constructed_solution() {
        let mut rng = SplitRng::new(10);
        let a = Mat::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.3 * rng.next_f64() });
        let x0 = random_mat(4, 4, &mut rng);
        let b = matmul(&a, &x0).unwrap();
        let x = lstsq_solve(&a, &b).unwrap();
        assert!(x.max_abs_diff(&x0) < 1e-8);
    }

    #[test]
    fn lstsq_row_mismatch() {
        assert!(lstsq_solve(&Mat::zeros(3, 2), &Mat::zeros(4, 2)).is_err());
    }

    #[test]
    fn lstsq_local_optimality_probe() {
        let mut rng = SplitRng::new(11);
        // rank-deficient A: rank 2 out of 4
        let u = random_mat(4, 2, &mut rng);
        let v = random_mat(2, 4, &mut rng);
        let a = matmul(&u, &v).unwrap();
        let b = random_mat(4, 3, &mut rng);
        let x = lstsq_solve(&a, &b).unwrap();
        let base = matmul(&a, &x).unwrap().sub(&b).unwrap().frob_sq();
        for _ in 0..100 {
            let pert = Mat::from_fn(x.rows(), x.cols(), |_, _| 0.01 * (rng.next_f64() - 0.5));
            let xp = x.add(&pert).unwrap();
            let res = matmul(&a, &xp).unwrap().sub(&b).unwrap().frob_sq();
            assert!(base <= res + 1e-12);
        }
    }

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid_map(&Mat::zeros(2, 2)), Mat::filled(2, 2, 0.5));
        let x = Mat::new(1, 1, vec![3f64.ln()]).unwrap();
        assert!((sigmoid_map(&x).get(0, 0) - 0.75).abs() < 1e-12);
        let mut rng = SplitRng::new(12);
        let m = Mat::from_fn(3, 3, |_, _| 4.0 * (rng.next_f64() - 0.5));
        let sum = sigmoid_map(&m).add(&sigmoid_map(&m.scale(-1.0))).unwrap();
        assert!(sum.max_abs_diff(&Mat::filled(3, 3, 1.0)) < 1e-12);
    }

    #[test]
    fn bernoulli_endpoints() {
        let mut rng = SplitRng::new(13);
        assert_eq!(bernoulli_sample(&Mat::zeros(3, 3), &mut rng).unwrap(), Mat::zeros(3, 3));
        assert_eq!(
            bernoulli_sample(&Mat::filled(3, 3, 1.0), &mut rng).unwrap(),
            Mat::filled(3, 3, 1.0)
        );
        assert!(bernoulli_sample(&Mat::filled(1, 1, 1.2), &mut rng).is_err());
    }

    #[test]
    fn bernoulli_law_of_large_numbers() {
        let mut rng = SplitRng::new(14);
        let p = Mat::filled(100, 100, 0.3);
        let draw = bernoulli_sample(&p, &mut rng).unwrap();
        let mean = draw.sum() / 10_000.0;
        assert!((mean - 0.3).abs() < 0.02, "mean={mean}");
    }
}
