//! Complex-vector primitives: DFT pair, linear convolution, small dense
//! least-squares, and reproducible random streams.
//!
//! Transform convention: the forward DFT is unnormalized and the inverse
//! carries the `1/N` factor, so that `idft(dft(x)) == x`.

use std::cell::RefCell;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::{Error, Result};

pub type ComplexVec = Vec<Complex64>;

/// Largest number of unknowns accepted by [`lstsq_small`].
pub const MAX_LSTSQ_COLUMNS: usize = 8;

/// Equilibrated normal matrices with a larger 1-norm condition number are
/// reported as rank deficient.
pub const MAX_NORMAL_CONDITION: f64 = 1e12;

// Products of lengths below this are convolved directly.
const DIRECT_CONVOLUTION_LIMIT: usize = 1024;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalized forward FFT in place.
pub fn fft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    fft.process(buf);
}

/// Unnormalized inverse FFT in place (no `1/N`).
pub fn ifft_in_place_unnormalized(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    fft.process(buf);
}

/// `X_k = sum_n x_n exp(-j 2 pi k n / N)`.
pub fn dft(x: &[Complex64]) -> ComplexVec {
    let mut out = x.to_vec();
    fft_in_place(&mut out);
    out
}

/// Inverse of [`dft`], including the `1/N` factor.
pub fn idft(x: &[Complex64]) -> ComplexVec {
    let mut out = x.to_vec();
    ifft_in_place_unnormalized(&mut out);
    let scale = 1.0 / out.len().max(1) as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Full linear convolution, `c_k = sum_i a_i b_{k-i}`, of length `|a|+|b|-1`.
///
/// Short inputs are summed directly; longer ones go through a zero-padded
/// FFT. Returns an empty vector if either input is empty.
pub fn linear_convolve(a: &[Complex64], b: &[Complex64]) -> ComplexVec {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    if a.len() * b.len() <= DIRECT_CONVOLUTION_LIMIT {
        let mut out = vec![Complex64::new(0.0, 0.0); out_len];
        for (i, &ai) in a.iter().enumerate() {
            for (j, &bj) in b.iter().enumerate() {
                out[i + j] += ai * bj;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut fa = a.to_vec();
    fa.resize(n, Complex64::new(0.0, 0.0));
    let mut fb = b.to_vec();
    fb.resize(n, Complex64::new(0.0, 0.0));
    fft_in_place(&mut fa);
    fft_in_place(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft_in_place_unnormalized(&mut fa);
    let scale = 1.0 / n as f64;
    fa.truncate(out_len);
    fa.iter_mut().for_each(|v| *v *= scale);
    fa
}

/// Inner product `<a, b> = sum a_i conj(b_i)`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

pub fn energy(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

pub fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        energy(x) / x.len() as f64
    }
}

/// Small dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Builds a matrix whose `j`-th column is `columns[j]`.
    ///
    /// # Panics
    ///
    /// Panics if the columns have different lengths.
    pub fn from_columns(columns: &[Vec<Complex64>]) -> Self {
        let rows = columns.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), rows, "ragged columns");
            for (i, &v) in col.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> ComplexVec {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `A^H x`.
    pub fn adjoint_mul_vec(&self, x: &[Complex64]) -> ComplexVec {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * x[i];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Minimizes `||A x - b||^2` through the conjugate-transpose normal equations
/// `A^H A x = A^H b`.
///
/// Columns are equilibrated to unit norm before forming the normal matrix,
/// which leaves the minimizer unchanged but keeps columns of very different
/// magnitude (the distortion bases of successive orders differ by many
/// decades) from masquerading as rank deficiency. The equilibrated normal
/// matrix is Cholesky-factored; a vanishing pivot or a condition estimate
/// above [`MAX_NORMAL_CONDITION`] yields [`Error::RankDeficient`] naming the
/// offending column.
pub fn lstsq_small(a: &CMatrix, b: &[Complex64]) -> Result<ComplexVec> {
    let (rows, cols) = (a.rows(), a.cols());
    if b.len() != rows {
        return Err(Error::LengthMismatch {
            expected: rows,
            got: b.len(),
        });
    }
    if cols == 0 {
        return Ok(Vec::new());
    }
    if cols > MAX_LSTSQ_COLUMNS {
        return Err(Error::InvalidParameter(format!(
            "lstsq_small supports at most {MAX_LSTSQ_COLUMNS} columns, got {cols}"
        )));
    }
    if rows < cols {
        return Err(Error::RankDeficient {
            column: rows,
            condition: f64::INFINITY,
        });
    }

    let norms: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|i| a[(i, j)].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    if let Some(j) = norms.iter().position(|&n| !(n > 0.0 && n.is_finite())) {
        return Err(Error::RankDeficient {
            column: j,
            condition: f64::INFINITY,
        });
    }

    let mut gram = CMatrix::zeros(cols, cols);
    let mut rhs = vec![Complex64::new(0.0, 0.0); cols];
    for i in 0..rows {
        for j in 0..cols {
            let aij = a[(i, j)] / norms[j];
            rhs[j] += aij.conj() * b[i];
            for k in j..cols {
                gram[(j, k)] += aij.conj() * a[(i, k)] / norms[k];
            }
        }
    }
    for j in 0..cols {
        for k in 0..j {
            gram[(j, k)] = gram[(k, j)].conj();
        }
    }

    let chol = cholesky(&gram)?;

    let inverse_columns: Vec<ComplexVec> = (0..cols)
        .map(|j| {
            let mut e = vec![Complex64::new(0.0, 0.0); cols];
            e[j] = Complex64::new(1.0, 0.0);
            cholesky_solve(&chol, &e)
        })
        .collect();
    let condition = one_norm(&gram) * one_norm(&CMatrix::from_columns(&inverse_columns));
    if !(condition <= MAX_NORMAL_CONDITION) {
        let column = (0..cols)
            .min_by(|&x, &y| chol[(x, x)].re.total_cmp(&chol[(y, y)].re))
            .unwrap_or(0);
        return Err(Error::RankDeficient { column, condition });
    }

    let y = cholesky_solve(&chol, &rhs);
    Ok(y.iter().zip(&norms).map(|(v, n)| v / n).collect())
}

fn one_norm(m: &CMatrix) -> f64 {
    (0..m.cols())
        .map(|j| (0..m.rows()).map(|i| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

// Lower-triangular L with G = L L^H.
fn cholesky(g: &CMatrix) -> Result<CMatrix> {
    let n = g.rows();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = g[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        // Diagonal of the equilibrated Gram matrix is 1.
        if !(d > 1e-14) {
            return Err(Error::RankDeficient {
                column: j,
                condition: f64::INFINITY,
            });
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = g[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &CMatrix, b: &[Complex64]) -> ComplexVec {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)].conj() * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Identifies an independent, reproducible random sequence.
///
/// Each `(seed, stream_id)` pair selects a distinct ChaCha8 stream, so trials
/// can be drawn in any order and on any thread without changing their samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Derives a stream for a nested index, e.g. a packet within a sweep point.
    pub fn substream(&self, index: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0x5851_f42d))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Circular complex Gaussian sample with `E|w|^2 = variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}
