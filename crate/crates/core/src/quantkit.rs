//! Weight quantization and pre-quantized rotary embeddings.
//!
//! Weights are stored as signed 4-bit codes in 4x4 blocks with one f32
//! scale per block (symmetric absmax scaling, code range [-7, 7]).
//! Rotary sin/cos tables can additionally be pre-quantized to INT8 with a
//! single per-table maximum, using floor-based rounding
//! `floor(x / max * 127 + 1/2)`.

use rayon::prelude::*;
use thiserror::Error;

/// Block edge length of the quantization groups.
pub const Q4_BLOCK: usize = 4;
/// Largest representable 4-bit code magnitude.
pub const Q4_MAX_CODE: i8 = 7;

/// Element count above which matvec fans out across the rayon pool.
const PAR_MIN_ELEMS: usize = 1 << 16;

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
    #[error("{context}: expected length {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("head_dim must be positive and even, got {0}")]
    OddHeadDim(usize),
    #[error("context_len must be positive")]
    EmptyTable,
    #[error("position {position} is outside the table context {context_len}")]
    PositionOutOfRange { position: usize, context_len: usize },
    #[error("4-bit code at element {0} is outside [-7, 7]")]
    CodeOutOfRange(usize),
}

/// A matrix stored as 4x4 blocks of signed 4-bit codes with per-block scales.
///
/// Codes are kept unpacked (one `i8` per code) in block-row-major order:
/// blocks laid out row-major over the padded grid, 16 row-major codes per
/// block. Rows and columns are zero-padded up to multiples of 4; padding
/// codes are zero and contribute nothing to matvec. Dequantized value is
/// `code * scale` elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Q4BlockTensor {
    rows: usize,
    cols: usize,
    block_rows: usize,
    block_cols: usize,
    scales: Vec<f32>,
    codes: Vec<i8>,
}

impl Q4BlockTensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Block grid shape `(ceil(rows/4), ceil(cols/4))`.
    pub fn block_shape(&self) -> (usize, usize) {
        (self.block_rows, self.block_cols)
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scale_at(&self, block_row: usize, block_col: usize) -> f32 {
        self.scales[block_row * self.block_cols + block_col]
    }

    /// Rebuilds a tensor from raw parts, checking every container invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        scales: Vec<f32>,
        codes: Vec<i8>,
    ) -> Result<Self, QuantError> {
        let block_rows = rows.div_ceil(Q4_BLOCK);
        let block_cols = cols.div_ceil(Q4_BLOCK);
        if scales.len() != block_rows * block_cols {
            return Err(QuantError::ShapeMismatch {
                context: "q4 scale array",
                expected: block_rows * block_cols,
                got: scales.len(),
            });
        }
        if codes.len() != block_rows * block_cols * Q4_BLOCK * Q4_BLOCK {
            return Err(QuantError::ShapeMismatch {
                context: "q4 code array",
                expected: block_rows * block_cols * Q4_BLOCK * Q4_BLOCK,
                got: codes.len(),
            });
        }
        for (i, &s) in scales.iter().enumerate() {
            if !(s.is_finite() && s >= 0.0) {
                return Err(QuantError::NonFinite(i));
            }
        }
        let tensor = Self {
            rows,
            cols,
            block_rows,
            block_cols,
            scales,
            codes,
        };
        for (i, &c) in tensor.codes.iter().enumerate() {
            if c == i8::MIN || c.abs() > Q4_MAX_CODE {
                return Err(QuantError::CodeOutOfRange(i));
            }
        }
        Ok(tensor)
    }

    /// Writes logical row `r` (dequantized) into `out`.
    pub fn row_into(&self, r: usize, out: &mut [f32]) {
        debug_assert!(r < self.rows);
        debug_assert_eq!(out.len(), self.cols);
        let br = r / Q4_BLOCK;
        let lr = r % Q4_BLOCK;
        for bc in 0..self.block_cols {
            let scale = self.scales[br * self.block_cols + bc];
            let blk = &self.codes[(br * self.block_cols + bc) * 16..][..16];
            let base = bc * Q4_BLOCK;
            let width = Q4_BLOCK.min(self.cols - base);
            for c in 0..width {
                out[base + c] = blk[lr * Q4_BLOCK + c] as f32 * scale;
            }
        }
    }

    /// `out = W * x` with `len(x) == cols`, `len(out) == rows`.
    ///
    /// Products are rounded to f32 exactly as [`dequantize_q4`] produces
    /// them, then accumulated in f64, so the result matches a dense matvec
    /// over the dequantized matrix. Work is split by output block row, so
    /// each element has a fixed reduction order regardless of worker count.
    pub fn matvec_into(&self, x: &[f32], out: &mut [f32]) -> Result<(), QuantError> {
        if x.len() != self.cols {
            return Err(QuantError::ShapeMismatch {
                context: "q4 matvec input",
                expected: self.cols,
                got: x.len(),
            });
        }
        if out.len() != self.rows {
            return Err(QuantError::ShapeMismatch {
                context: "q4 matvec output",
                expected: self.rows,
                got: out.len(),
            });
        }
        if self.rows * self.cols >= PAR_MIN_ELEMS {
            out.par_chunks_mut(Q4_BLOCK)
                .enumerate()
                .for_each(|(br, chunk)| self.block_row_matvec(br, x, chunk));
        } else {
            for (br, chunk) in out.chunks_mut(Q4_BLOCK).enumerate() {
                self.block_row_matvec(br, x, chunk);
            }
        }
        Ok(())
    }

    fn block_row_matvec(&self, br: usize, x: &[f32], out: &mut [f32]) {
        let mut acc = [0f64; Q4_BLOCK];
        let row_scales = &self.scales[br * self.block_cols..][..self.block_cols];
        let row_codes = &self.codes[br * self.block_cols * 16..][..self.block_cols * 16];

        let full_cols = self.cols / Q4_BLOCK;
        for bc in 0..full_cols {
            let scale = row_scales[bc];
            if scale == 0.0 {
                continue;
            }
            let blk = &row_codes[bc * 16..][..16];
            let xv = &x[bc * Q4_BLOCK..][..Q4_BLOCK];
            for r in 0..Q4_BLOCK {
                let mut sum = 0f64;
                for c in 0..Q4_BLOCK {
                    sum += (blk[r * Q4_BLOCK + c] as f32 * scale) as f64 * xv[c] as f64;
                }
                acc[r] += sum;
            }
        }
        if !self.cols.is_multiple_of(Q4_BLOCK) {
            let bc = full_cols;
            let scale = row_scales[bc];
            if scale != 0.0 {
                let blk = &row_codes[bc * 16..][..16];
                let base = bc * Q4_BLOCK;
                for r in 0..Q4_BLOCK {
                    for c in 0..self.cols - base {
                        acc[r] +=
                            (blk[r * Q4_BLOCK + c] as f32 * scale) as f64 * x[base + c] as f64;
                    }
                }
            }
        }
        for (r, slot) in out.iter_mut().enumerate() {
            *slot = acc[r] as f32;
        }
    }
}

/// Quantizes a row-major `rows x cols` matrix into 4x4 blocks.
///
/// Per block, `scale = absmax / 7` and `code = round(value / scale)` with
/// ties away from zero; an all-zero block gets scale 0. Elementwise
/// reconstruction error is at most `scale / 2`.
pub fn quantize_q4(rows: usize, cols: usize, data: &[f32]) -> Result<Q4BlockTensor, QuantError> {
    if data.len() != rows * cols {
        return Err(QuantError::ShapeMismatch {
            context: "quantize input",
            expected: rows * cols,
            got: data.len(),
        });
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(QuantError::NonFinite(i));
    }

    let block_rows = rows.div_ceil(Q4_BLOCK);
    let block_cols = cols.div_ceil(Q4_BLOCK);
    let mut scales = vec![0f32; block_rows * block_cols];
    let mut codes = vec![0i8; block_rows * block_cols * 16];

    for br in 0..block_rows {
        let height = Q4_BLOCK.min(rows - br * Q4_BLOCK);
        for bc in 0..block_cols {
            let width = Q4_BLOCK.min(cols - bc * Q4_BLOCK);
            let mut absmax = 0f32;
            for r in 0..height {
                for c in 0..width {
                    absmax = absmax.max(data[(br * Q4_BLOCK + r) * cols + bc * Q4_BLOCK + c].abs());
                }
            }
            if absmax == 0.0 {
                continue;
            }
            // The extra multiply/divide pins the scale to the fixed point of
            // s -> (7s)/7, so requantizing a dequantized block reproduces the
            // same scale bit for bit.
            let scale = (absmax / Q4_MAX_CODE as f32 * Q4_MAX_CODE as f32) / Q4_MAX_CODE as f32;
            scales[br * block_cols + bc] = scale;
            let blk = &mut codes[(br * block_cols + bc) * 16..][..16];
            for r in 0..height {
                for c in 0..width {
                    let v = data[(br * Q4_BLOCK + r) * cols + bc * Q4_BLOCK + c];
                    let code = (v / scale).round() as i32;
                    debug_assert!(code.unsigned_abs() <= Q4_MAX_CODE as u32);
                    blk[r * Q4_BLOCK + c] = code as i8;
                }
            }
        }
    }

    Ok(Q4BlockTensor {
        rows,
        cols,
        block_rows,
        block_cols,
        scales,
        codes,
    })
}

/// Reconstructs the logical `rows x cols` matrix, `code * scale` per element.
pub fn dequantize_q4(t: &Q4BlockTensor) -> Vec<f32> {
    let mut out = vec![0f32; t.rows * t.cols];
    for (r, row) in out.chunks_mut(t.cols).enumerate() {
        t.row_into(r, row);
    }
    out
}

/// `W * x` over the quantized tensor; see [`Q4BlockTensor::matvec_into`].
pub fn q4_matvec(x: &[f32], w: &Q4BlockTensor) -> Result<Vec<f32>, QuantError> {
    let mut out = vec![0f32; w.rows()];
    w.matvec_into(x, &mut out)?;
    Ok(out)
}

/// Full-precision rotary tables: `cos/sin(p * theta^(-2k/head_dim))` for
/// position `p` and frequency index `k` in `[0, head_dim/2)`.
#[derive(Debug, Clone)]
pub struct RopeTables {
    context_len: usize,
    head_dim: usize,
    cos: Vec<f32>,
    sin: Vec<f32>,
}

impl RopeTables {
    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn half_dim(&self) -> usize {
        self.head_dim / 2
    }

    pub fn cos(&self) -> &[f32] {
        &self.cos
    }

    pub fn sin(&self) -> &[f32] {
        &self.sin
    }

    pub fn cos_row(&self, position: usize) -> &[f32] {
        &self.cos[position * self.half_dim()..][..self.half_dim()]
    }

    pub fn sin_row(&self, position: usize) -> &[f32] {
        &self.sin[position * self.half_dim()..][..self.half_dim()]
    }
}

/// Precomputes float rotary tables for all positions of a context.
pub fn build_rope_tables(
    context_len: usize,
    head_dim: usize,
    theta: f64,
) -> Result<RopeTables, QuantError> {
    if head_dim == 0 || !head_dim.is_multiple_of(2) {
        return Err(QuantError::OddHeadDim(head_dim));
    }
    if context_len == 0 {
        return Err(QuantError::EmptyTable);
    }
    let half = head_dim / 2;
    let mut cos = Vec::with_capacity(context_len * half);
    let mut sin = Vec::with_capacity(context_len * half);
    for p in 0..context_len {
        for k in 0..half {
            let freq = theta.powf(-2.0 * k as f64 / head_dim as f64);
            let angle = p as f64 * freq;
            cos.push(angle.cos() as f32);
            sin.push(angle.sin() as f32);
        }
    }
    Ok(RopeTables {
        context_len,
        head_dim,
        cos,
        sin,
    })
}

/// Rotary tables quantized to INT8 with per-table absolute maxima.
///
/// Codes are `floor(x / max * 127 + 1/2)`, the floor form rather than
/// round-to-nearest-even; for negative half-ties this rounds upward.
/// Reconstruction at use time is `code * max / 127`.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeTableQ8 {
    context_len: usize,
    head_dim: usize,
    cos_codes: Vec<i8>,
    sin_codes: Vec<i8>,
    cos_max: f32,
    sin_max: f32,
}

impl RopeTableQ8 {
    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn half_dim(&self) -> usize {
        self.head_dim / 2
    }

    pub fn cos_max(&self) -> f32 {
        self.cos_max
    }

    pub fn sin_max(&self) -> f32 {
        self.sin_max
    }

    pub fn cos_codes(&self) -> &[i8] {
        &self.cos_codes
    }

    pub fn sin_codes(&self) -> &[i8] {
        &self.sin_codes
    }

    pub fn cos_code_row(&self, position: usize) -> &[i8] {
        &self.cos_codes[position * self.half_dim()..][..self.half_dim()]
    }

    pub fn sin_code_row(&self, position: usize) -> &[i8] {
        &self.sin_codes[position * self.half_dim()..][..self.half_dim()]
    }

    /// Dequantizes one position's cos/sin rows into the provided buffers.
    pub fn row_into(&self, position: usize, cos_out: &mut [f32], sin_out: &mut [f32]) {
        let cs = self.cos_max / 127.0;
        let ss = self.sin_max / 127.0;
        for (out, &code) in cos_out.iter_mut().zip(self.cos_code_row(position)) {
            *out = code as f32 * cs;
        }
        for (out, &code) in sin_out.iter_mut().zip(self.sin_code_row(position)) {
            *out = code as f32 * ss;
        }
    }
}

fn q8_code(value: f32, max: f32) -> i8 {
    if max == 0.0 {
        return 0;
    }
    let code = (value as f64 / max as f64 * 127.0 + 0.5).floor();
    debug_assert!((-127.0..=127.0).contains(&code));
    code as i8
}

/// Quantizes float rotary tables to INT8 with per-table maxima.
pub fn quantize_rope(tables: &RopeTables) -> RopeTableQ8 {
    let absmax = |v: &[f32]| v.iter().fold(0f32, |m, x| m.max(x.abs()));
    let cos_max = absmax(&tables.cos);
    let sin_max = absmax(&tables.sin);
    let cos_codes = tables.cos.iter().map(|&v| q8_code(v, cos_max)).collect();
    let sin_codes = tables.sin.iter().map(|&v| q8_code(v, sin_max)).collect();
    RopeTableQ8 {
        context_len: tables.context_len,
        head_dim: tables.head_dim,
        cos_codes,
        sin_codes,
        cos_max,
        sin_max,
    }
}

/// Either rotary table representation, as used by the forward pass.
#[derive(Debug, Clone, Copy)]
pub enum RopeKind<'a> {
    Float(&'a RopeTables),
    Int8(&'a RopeTableQ8),
}

impl RopeKind<'_> {
    pub fn context_len(&self) -> usize {
        match self {
            RopeKind::Float(t) => t.context_len(),
            RopeKind::Int8(t) => t.context_len(),
        }
    }

    pub fn head_dim(&self) -> usize {
        match self {
            RopeKind::Float(t) => t.head_dim(),
            RopeKind::Int8(t) => t.head_dim(),
        }
    }

    /// Fills one position's cos/sin rows (`head_dim/2` entries each).
    pub fn row_into(&self, position: usize, cos_out: &mut [f32], sin_out: &mut [f32]) {
        match self {
            RopeKind::Float(t) => {
                cos_out.copy_from_slice(t.cos_row(position));
                sin_out.copy_from_slice(t.sin_row(position));
            }
            RopeKind::Int8(t) => t.row_into(position, cos_out, sin_out),
        }
    }
}

/// Rotates consecutive pairs `(x[2i], x[2i+1])` by the angles encoded in
/// `cos_row`/`sin_row`.
pub fn rotate_pairs(x: &mut [f32], cos_row: &[f32], sin_row: &[f32]) {
    debug_assert_eq!(x.len(), cos_row.len() * 2);
    for k in 0..cos_row.len() {
        let (c, s) = (cos_row[k], sin_row[k]);
        let a = x[2 * k];
        let b = x[2 * k + 1];
        x[2 * k] = a * c - b * s;
        x[2 * k + 1] = a * s + b * c;
    }
}

/// Applies the rotary embedding for `position` to one query/key head pair.
///
/// Both vectors must have the table's `head_dim` length. The float path is
/// an exact per-pair rotation and preserves every pair's L2 norm up to
/// machine epsilon; the INT8 path reconstructs `code * max / 127` first.
pub fn apply_rope(
    q: &mut [f32],
    k: &mut [f32],
    rope: RopeKind<'_>,
    position: usize,
) -> Result<(), QuantError> {
    let head_dim = rope.head_dim();
    if q.len() != head_dim {
        return Err(QuantError::ShapeMismatch {
            context: "rope query head",
            expected: head_dim,
            got: q.len(),
        });
    }
    if k.len() != head_dim {
        return Err(QuantError::ShapeMismatch {
            context: "rope key head",
            expected: head_dim,
            got: k.len(),
        });
    }
    if position >= rope.context_len() {
        return Err(QuantError::PositionOutOfRange {
            position,
            context_len: rope.context_len(),
        });
    }
    let half = head_dim / 2;
    let mut cos_row = vec![0f32; half];
    let mut sin_row = vec![0f32; half];
    rope.row_into(position, &mut cos_row, &mut sin_row);
    rotate_pairs(q, &cos_row, &sin_row);
    rotate_pairs(k, &cos_row, &sin_row);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_zero_block_has_zero_scale_and_codes() {
        let t = quantize_q4(4, 4, &[0.0; 16]).unwrap();
        assert_eq!(t.scales(), &[0.0]);
        assert!(t.codes().iter().all(|&c| c == 0));
        assert_eq!(dequantize_q4(&t), vec![0.0; 16]);
    }

    #[test]
    fn absmax_maps_to_code_seven_exactly() {
        let mut data = [0f32; 16];
        data[5] = 0.7;
        let t = quantize_q4(4, 4, &data).unwrap();
        assert_eq!(t.scales(), &[0.7f32 / 7.0]);
        assert_eq!(t.codes()[5], 7);
        assert_eq!(dequantize_q4(&t)[5], 0.7);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut data = [1.0f32; 16];
        data[3] = f32::NAN;
        assert_eq!(quantize_q4(4, 4, &data), Err(QuantError::NonFinite(3)));
        data[3] = f32::INFINITY;
        assert_eq!(quantize_q4(4, 4, &data), Err(QuantError::NonFinite(3)));
    }

    #[test]
    fn reconstruction_respects_half_scale_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (rows, cols) = (8, 8);
        let data: Vec<f32> = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let t = quantize_q4(rows, cols, &data).unwrap();
        let deq = dequantize_q4(&t);
        for r in 0..rows {
            for c in 0..cols {
                let bound = t.scale_at(r / 4, c / 4) / 2.0;
                let err = (deq[r * cols + c] - data[r * cols + c]).abs();
                assert!(err <= bound + 1e-9, "err {err} exceeds {bound}");
            }
        }
    }

    #[test]
    fn requantizing_dequantized_output_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f32> = (0..144).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t = quantize_q4(12, 12, &data).unwrap();
        let again = quantize_q4(12, 12, &dequantize_q4(&t)).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn matvec_extracts_columns_on_basis_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (rows, cols) = (6, 10);
        let data: Vec<f32> = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let t = quantize_q4(rows, cols, &data).unwrap();
        let deq = dequantize_q4(&t);
        for j in 0..cols {
            let mut e = vec![0f32; cols];
            e[j] = 1.0;
            let y = q4_matvec(&e, &t).unwrap();
            for r in 0..rows {
                assert_eq!(y[r], deq[r * cols + j]);
            }
        }
    }

    #[test]
    fn matvec_on_zero_tensor_is_zero() {
        let t = quantize_q4(8, 8, &[0.0; 64]).unwrap();
        let x = vec![1.0; 8];
        assert_eq!(q4_matvec(&x, &t).unwrap(), vec![0.0; 8]);
    }

    #[test]
    fn matvec_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(rows, cols) in &[(16usize, 16usize), (33, 19), (64, 128)] {
            let data: Vec<f32> = (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let x: Vec<f32> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = quantize_q4(rows, cols, &data).unwrap();
            let deq = dequantize_q4(&t);
            let y = q4_matvec(&x, &t).unwrap();
            for r in 0..rows {
                let mut acc = 0f64;
                for c in 0..cols {
                    acc += deq[r * cols + c] as f64 * x[c] as f64;
                }
                let reference = acc as f32;
                let tol = 1e-6 * reference.abs().max(1.0);
                assert!(
                    (y[r] - reference).abs() <= tol,
                    "row {r}: {} vs {reference}",
                    y[r]
                );
            }
        }
    }

    #[test]
    fn matvec_rejects_bad_shapes() {
        let t = quantize_q4(4, 4, &[1.0; 16]).unwrap();
        assert!(matches!(
            q4_matvec(&[1.0; 5], &t),
            Err(QuantError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn matvec_is_bitwise_stable_across_pool_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // Large enough to cross the parallel threshold.
        let (rows, cols) = (96, 768);
        let data: Vec<f32> = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let x: Vec<f32> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = quantize_q4(rows, cols, &data).unwrap();

        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| q4_matvec(&x, &t).unwrap())
        };
        let single = run(1);
        assert_eq!(single, run(3));
        assert_eq!(single, run(8));
    }

    #[test]
    fn rope_position_zero_is_unit_cos() {
        let t = build_rope_tables(8, 6, 10_000.0).unwrap();
        assert!(t.cos_row(0).iter().all(|&c| c == 1.0));
        assert!(t.sin_row(0).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn rope_first_frequency_is_one_radian_per_position() {
        let t = build_rope_tables(4, 8, 10_000.0).unwrap();
        assert!((t.cos_row(1)[0] - 1f32.cos()).abs() < 1e-7);
        assert!((t.sin_row(1)[0] - 1f32.sin()).abs() < 1e-7);
    }

    #[test]
    fn rope_entries_stay_in_unit_interval() {
        let t = build_rope_tables(64, 10, 10_000.0).unwrap();
        assert!(t.cos().iter().chain(t.sin()).all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn rope_rejects_odd_head_dim() {
        assert_eq!(
            build_rope_tables(8, 5, 10_000.0).unwrap_err(),
            QuantError::OddHeadDim(5)
        );
        assert_eq!(
            build_rope_tables(0, 4, 10_000.0).unwrap_err(),
            QuantError::EmptyTable
        );
    }

    #[test]
    fn q8_maximum_maps_to_127() {
        let t = build_rope_tables(16, 8, 10_000.0).unwrap();
        let q = quantize_rope(&t);
        assert_eq!(q.cos_max(), 1.0);
        assert!(q.cos_code_row(0).iter().all(|&c| c == 127));
        // sin(0) == 0 encodes as 0.
        assert!(q.sin_code_row(0).iter().all(|&c| c == 0));
    }

    #[test]
    fn q8_codes_stay_in_range_and_meet_error_bound() {
        let t = build_rope_tables(256, 16, 10_000.0).unwrap();
        let q = quantize_rope(&t);
        for (codes, max, table) in [
            (q.cos_codes(), q.cos_max(), t.cos()),
            (q.sin_codes(), q.sin_max(), t.sin()),
        ] {
            let bound = max as f64 / 254.0 + 1e-12;
            for (&code, &orig) in codes.iter().zip(table) {
                assert!((-127..=127).contains(&code));
                let recon = code as f64 * max as f64 / 127.0;
                assert!((recon - orig as f64).abs() <= bound);
            }
        }
    }

    #[test]
    fn q8_uses_floor_rounding_on_negative_half_ties() {
        // -0.5 exactly: floor(-63.5 + 0.5) = -63, not -64.
        assert_eq!(q8_code(-0.5, 1.0), -63);
        assert_eq!(q8_code(0.5, 1.0), 64);
    }

    #[test]
    fn float_rope_at_position_zero_is_identity() {
        let t = build_rope_tables(8, 6, 10_000.0).unwrap();
        let mut q = vec![0.3, -0.7, 1.2, 0.0, -2.5, 0.4];
        let mut k = q.clone();
        let (q0, k0) = (q.clone(), k.clone());
        apply_rope(&mut q, &mut k, RopeKind::Float(&t), 0).unwrap();
        assert_eq!(q, q0);
        assert_eq!(k, k0);
    }

    #[test]
    fn float_rope_preserves_pair_norms() {
        let t = build_rope_tables(128, 8, 10_000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for pos in [1, 17, 127] {
            let mut q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut k: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q0 = q.clone();
            apply_rope(&mut q, &mut k, RopeKind::Float(&t), pos).unwrap();
            for i in 0..4 {
                let before = q0[2 * i].hypot(q0[2 * i + 1]);
                let after = q[2 * i].hypot(q[2 * i + 1]);
                assert!((before - after).abs() <= 1e-6 * before.max(1.0));
            }
        }
    }

    #[test]
    fn int8_rope_tracks_float_path() {
        let t = build_rope_tables(64, 8, 10_000.0).unwrap();
        let q8 = quantize_rope(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for pos in [0, 1, 31, 63] {
            let base_q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let base_k: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();

            let (mut qf, mut kf) = (base_q.clone(), base_k.clone());
            apply_rope(&mut qf, &mut kf, RopeKind::Float(&t), pos).unwrap();
            let (mut qi, mut ki) = (base_q.clone(), base_k.clone());
            apply_rope(&mut qi, &mut ki, RopeKind::Int8(&q8), pos).unwrap();

            // Each rotated component mixes one cos and one sin entry, so the
            // deviation is bounded by the two table reconstruction errors
            // times the pair magnitude.
            let table_err = (q8.cos_max() + q8.sin_max()) / 254.0 * 1.001 + 1e-6;
            for i in 0..8 {
                let pair_mag = base_q[2 * (i / 2)].abs() + base_q[2 * (i / 2) + 1].abs();
                let bound = table_err * pair_mag;
                assert!(
                    (qf[i] - qi[i]).abs() <= bound,
                    "pos {pos} component {i}: {} vs {}",
                    qf[i],
                    qi[i]
                );
            }
            let _ = (ki, kf);
        }
    }

    #[test]
    fn rope_rejects_out_of_range_position() {
        let t = build_rope_tables(8, 4, 10_000.0).unwrap();
        let mut q = vec![0.0; 4];
        let mut k = vec![0.0; 4];
        assert!(matches!(
            apply_rope(&mut q, &mut k, RopeKind::Float(&t), 8),
            Err(QuantError::PositionOutOfRange { .. })
        ));
    }
}
