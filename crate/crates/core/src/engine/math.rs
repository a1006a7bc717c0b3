//! Dense float kernels shared by the forward pass.

use rayon::prelude::*;

use super::EngineError;

/// Element count above which dense matvec fans out across the rayon pool.
const PAR_MIN_ELEMS: usize = 1 << 16;

/// Row-major dense `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, EngineError> {
        if data.len() != rows * cols {
            return Err(EngineError::Corrupt(format!(
                "dense tensor expects {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..][..self.cols]
    }

    /// `out = W * x`, f64 accumulation, one worker per output row chunk.
    pub fn matvec_into(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        let cols = self.cols;
        let kernel = |(row, slot): (&[f32], &mut f32)| {
            *slot = dot_f64(row, x) as f32;
        };
        if self.rows * cols >= PAR_MIN_ELEMS {
            self.data
                .par_chunks(cols)
                .zip(out.par_iter_mut())
                .for_each(kernel);
        } else {
            self.data.chunks(cols).zip(out.iter_mut()).for_each(kernel);
        }
    }
}

#[inline]
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0f64;
    for (x, y) in a.iter().zip(b) {
        acc += *x as f64 * *y as f64;
    }
    acc
}

/// RMS normalization: `y_i = x_i / sqrt(mean(x^2) + eps) * w_i`.
pub fn rmsnorm_into(x: &[f32], w: &[f32], eps: f32, out: &mut [f32]) -> Result<(), EngineError> {
    if x.len() != w.len() || x.len() != out.len() || x.is_empty() {
        return Err(EngineError::Corrupt(format!(
            "rmsnorm length mismatch: x={}, w={}, out={}",
            x.len(),
            w.len(),
            out.len()
        )));
    }
    let mean_sq = x.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / x.len() as f64;
    let inv = (1.0 / (mean_sq + eps as f64).sqrt()) as f32;
    for ((y, &v), &wi) in out.iter_mut().zip(x).zip(w) {
        *y = v * inv * wi;
    }
    Ok(())
}

/// Allocating convenience wrapper over [`rmsnorm_into`].
pub fn rmsnorm(x: &[f32], w: &[f32], eps: f32) -> Result<Vec<f32>, EngineError> {
    let mut out = vec![0f32; x.len()];
    rmsnorm_into(x, w, eps, &mut out)?;
    Ok(out)
}

/// In-place numerically stable softmax; the normalizer is summed in f64.
pub fn softmax_in_place(x: &mut [f32]) {
    if x.is_empty() {
        return;
    }
    let max = x.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0f64;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v as f64;
    }
    let inv = (1.0 / sum) as f32;
    for v in x.iter_mut() {
        *v *= inv;
    }
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax(x: &[f32]) -> usize {
    let mut best = 0;
    let mut best_val = f32::NEG_INFINITY;
    for (i, &v) in x.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmsnorm_of_uniform_ones_is_identity() {
        let y = rmsnorm(&[1.0; 4], &[1.0; 4], 0.0).unwrap();
        assert_eq!(y, vec![1.0; 4]);
    }

    #[test]
    fn rmsnorm_matches_hand_arithmetic() {
        // rms([3, 4]) = sqrt(12.5)
        let y = rmsnorm(&[3.0, 4.0], &[1.0, 1.0], 0.0).unwrap();
        assert!((y[0] - 0.84853).abs() < 1e-5);
        assert!((y[1] - 1.13137).abs() < 1e-5);
    }

    #[test]
    fn rmsnorm_is_scale_invariant() {
        let x = [0.3f32, -1.7, 2.4, 0.01];
        let w = [1.0f32, 0.5, -2.0, 3.0];
        let scaled: Vec<f32> = x.iter().map(|v| v * 37.5).collect();
        let a = rmsnorm(&x, &w, 0.0).unwrap();
        let b = rmsnorm(&scaled, &w, 0.0).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0));
        }
    }

    #[test]
    fn rmsnorm_rejects_length_mismatch() {
        assert!(rmsnorm(&[1.0, 2.0], &[1.0], 1e-5).is_err());
    }

    #[test]
    fn softmax_normalizes_and_orders() {
        let mut x = vec![1.0f32, 2.0, 3.0];
        softmax_in_place(&mut x);
        let sum: f64 = x.iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(x[2] > x[1] && x[1] > x[0]);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 1.0, 1.0, 0.1]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }

    #[test]
    fn dense_matvec_matches_scalar_reference() {
        let w = DenseMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut out = vec![0f32; 3];
        w.matvec_into(&[10.0, 100.0], &mut out);
        assert_eq!(out, vec![210.0, 430.0, 650.0]);
    }

    #[test]
    fn dense_matvec_is_bitwise_stable_across_pool_sizes() {
        let (rows, cols) = (128, 640);
        let data: Vec<f32> = (0..rows * cols)
            .map(|i| ((i * 37 % 101) as f32 - 50.0) / 17.0)
            .collect();
        let x: Vec<f32> = (0..cols)
            .map(|i| ((i * 13 % 29) as f32 - 14.0) / 7.0)
            .collect();
        let w = DenseMatrix::new(rows, cols, data).unwrap();

        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let mut out = vec![0f32; rows];
                    w.matvec_into(&x, &mut out);
                    out
                })
        };
        let single = run(1);
        assert_eq!(single, run(4));
    }
}
