//! Numeric kernels: matmul, temporal conv1d, max pooling, softmax, init.
//!
//! Every reduction runs in a fixed order (ascending over the reduced index,
//! starting from zero), and work is only split across independent output
//! rows, so results are bitwise identical for any thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{sc, Scalar, Tensor};

/// Below this many multiply-adds a matmul stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 18;
const COL_BLOCK: usize = 512;

/// `c[m×n] += a[m×k] · b[k×n]` on raw row-major slices.
///
/// Each `c[i][j]` receives its `k` products in ascending order, which makes
/// the result identical to the textbook triple loop when `c` starts at zero.
pub(crate) fn gemm_acc<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 || m == 0 {
        return;
    }
    let row = |(i, c_row): (usize, &mut [F])| {
        let a_row = &a[i * k..(i + 1) * k];
        let mut j0 = 0;
        while j0 < n {
            let j1 = (j0 + COL_BLOCK).min(n);
            let c_blk = &mut c_row[j0..j1];
            for (p, &a_ip) in a_row.iter().enumerate() {
                let b_blk = &b[p * n + j0..p * n + j1];
                for (cv, &bv) in c_blk.iter_mut().zip(b_blk) {
                    *cv += a_ip * bv;
                }
            }
            j0 = j1;
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
}

/// Matrix product of `a[m×k]` and `b[k×n]`.
pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let [m, k] = a.dims2()?;
    let [k2, n] = b.dims2()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut c = vec![F::zero(); m * n];
    gemm_acc(m, k, n, a.data(), b.data(), &mut c);
    Tensor::new(vec![m, n], c)
}

/// Output length of a 1-D convolution or pooling window.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    let padded = len + 2 * padding;
    if kernel == 0 || kernel > padded {
        return Err(Error::Dimension(format!(
            "kernel {kernel} does not fit padded length {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Geometry shared by the conv forward and backward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub len_out: usize,
}

impl ConvGeom {
    pub fn new(input_shape: [usize; 3], kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let [batch, c_in, len] = input_shape;
        let len_out = conv_out_len(len, kernel, stride, padding)?;
        Ok(Self {
            batch,
            c_in,
            len,
            kernel,
            stride,
            padding,
            len_out,
        })
    }

    fn cols(&self) -> usize {
        self.batch * self.len_out
    }
}

/// Unfold `[n, c_in, L]` into a `[c_in·k, n·L_out]` column matrix, row index
/// `ci·k + kk`. Padded taps are zero.
pub(crate) fn im2col<F: Scalar>(input: &[F], g: &ConvGeom) -> Vec<F> {
    let ncols = g.cols();
    let mut cols = vec![F::zero(); g.c_in * g.kernel * ncols];
    for ci in 0..g.c_in {
        for kk in 0..g.kernel {
            let row = &mut cols[(ci * g.kernel + kk) * ncols..(ci * g.kernel + kk + 1) * ncols];
            for b in 0..g.batch {
                let src = &input[(b * g.c_in + ci) * g.len..(b * g.c_in + ci + 1) * g.len];
                let dst = &mut row[b * g.len_out..(b + 1) * g.len_out];
                for (o, d) in dst.iter_mut().enumerate() {
                    let pos = (o * g.stride + kk) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < g.len {
                        *d = src[pos as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back onto `[n, c_in, L]`.
pub(crate) fn col2im<F: Scalar>(cols: &[F], g: &ConvGeom) -> Vec<F> {
    let ncols = g.cols();
    let mut out = vec![F::zero(); g.batch * g.c_in * g.len];
    for ci in 0..g.c_in {
        for kk in 0..g.kernel {
            let row = &cols[(ci * g.kernel + kk) * ncols..(ci * g.kernel + kk + 1) * ncols];
            for b in 0..g.batch {
                let dst = &mut out[(b * g.c_in + ci) * g.len..(b * g.c_in + ci + 1) * g.len];
                let src = &row[b * g.len_out..(b + 1) * g.len_out];
                for (o, &v) in src.iter().enumerate() {
                    let pos = (o * g.stride + kk) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < g.len {
                        dst[pos as usize] += v;
                    }
                }
            }
        }
    }
    out
}

/// `[c_out, n·L_out]` (gemm layout) to `[n, c_out, L_out]`.
pub(crate) fn unfold_output<F: Scalar>(y: &[F], c_out: usize, g: &ConvGeom) -> Vec<F> {
    let mut out = vec![F::zero(); y.len()];
    for co in 0..c_out {
        for b in 0..g.batch {
            let src = &y[co * g.cols() + b * g.len_out..co * g.cols() + (b + 1) * g.len_out];
            out[(b * c_out + co) * g.len_out..(b * c_out + co + 1) * g.len_out].copy_from_slice(src);
        }
    }
    out
}

/// `[n, c_out, L_out]` to `[c_out, n·L_out]`.
pub(crate) fn fold_output<F: Scalar>(y: &[F], c_out: usize, g: &ConvGeom) -> Vec<F> {
    let mut out = vec![F::zero(); y.len()];
    for b in 0..g.batch {
        for co in 0..c_out {
            let src = &y[(b * c_out + co) * g.len_out..(b * c_out + co + 1) * g.len_out];
            out[co * g.cols() + b * g.len_out..co * g.cols() + (b + 1) * g.len_out].copy_from_slice(src);
        }
    }
    out
}

fn check_kernel<F: Scalar>(input: &Tensor<F>, kernel: &Tensor<F>) -> Result<([usize; 3], [usize; 3])> {
    let ishape = input.dims3()?;
    let kshape = kernel.dims3()?;
    if ishape[1] != kshape[1] {
        return Err(Error::Dimension(format!(
            "conv1d input {:?} has {} channels but kernel {:?} expects {}",
            input.shape(),
            ishape[1],
            kernel.shape(),
            kshape[1]
        )));
    }
    Ok((ishape, kshape))
}

/// 1-D cross-correlation of `input[n×c_in×L]` with `kernel[c_out×c_in×k]`,
/// zero padding on both sides. Each output sums over `ci` then `kk`.
pub fn conv1d<F: Scalar>(input: &Tensor<F>, kernel: &Tensor<F>, stride: usize, padding: usize) -> Result<Tensor<F>> {
    let (ishape, kshape) = check_kernel(input, kernel)?;
    let g = ConvGeom::new(ishape, kshape[2], stride, padding)?;
    let cols = im2col(input.data(), &g);
    let c_out = kshape[0];
    let mut y = vec![F::zero(); c_out * g.cols()];
    gemm_acc(c_out, g.c_in * g.kernel, g.cols(), kernel.data(), &cols, &mut y);
    Tensor::new(vec![g.batch, c_out, g.len_out], unfold_output(&y, c_out, &g))
}

/// Gradients of [`conv1d`] given the upstream gradient `[n×c_out×L_out]`.
/// Returns `(grad_input, grad_kernel)`.
pub fn conv1d_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (ishape, kshape) = check_kernel(input, kernel)?;
    let g = ConvGeom::new(ishape, kshape[2], stride, padding)?;
    let cols = im2col(input.data(), &g);
    conv1d_backward_cols(grad_out, &cols, kernel, &g).map(|(gi, gk, _)| (gi, gk))
}

/// Backward pass reusing a cached column matrix. Also returns the per-channel
/// sum of `grad_out`, which is the bias gradient.
pub(crate) fn conv1d_backward_cols<F: Scalar>(
    grad_out: &Tensor<F>,
    cols: &[F],
    kernel: &Tensor<F>,
    g: &ConvGeom,
) -> Result<(Tensor<F>, Tensor<F>, Vec<F>)> {
    let [c_out, _, k] = kernel.dims3()?;
    let expected = [g.batch, c_out, g.len_out];
    if grad_out.shape() != expected {
        return Err(Error::Dimension(format!(
            "conv1d gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            expected
        )));
    }
    let gy = fold_output(grad_out.data(), c_out, g);
    let ncols = g.cols();
    let rows = g.c_in * k;

    // grad_kernel[c_out × rows] = gy[c_out × ncols] · cols^T[ncols × rows]
    let cols_t = Tensor::new(vec![rows, ncols], cols.to_vec())?.transpose2()?;
    let mut gk = vec![F::zero(); c_out * rows];
    gemm_acc(c_out, ncols, rows, &gy, cols_t.data(), &mut gk);

    // grad_cols[rows × ncols] = kernel^T[rows × c_out] · gy[c_out × ncols]
    let k_t = Tensor::new(vec![c_out, rows], kernel.data().to_vec())?.transpose2()?;
    let mut gcols = vec![F::zero(); rows * ncols];
    gemm_acc(rows, c_out, ncols, k_t.data(), &gy, &mut gcols);
    let gi = col2im(&gcols, g);

    let gb = gy
        .chunks(ncols)
        .map(|r| r.iter().fold(F::zero(), |a, &v| a + v))
        .collect();
    Ok((
        Tensor::new(vec![g.batch, g.c_in, g.len], gi)?,
        Tensor::new(kernel.shape().to_vec(), gk)?,
        gb,
    ))
}

/// Max pooling over the last axis of `input[n×c×L]`. Indices are positions
/// along `L`; ties go to the lowest position.
pub fn maxpool1d<F: Scalar>(input: &Tensor<F>, window: usize, stride: usize) -> Result<(Tensor<F>, Vec<usize>)> {
    let [n, c, len] = input.dims3()?;
    if window > len {
        return Err(Error::Dimension(format!("pool window {window} exceeds length {len}")));
    }
    let len_out = conv_out_len(len, window, stride, 0)?;
    let mut out = Vec::with_capacity(n * c * len_out);
    let mut idx = Vec::with_capacity(n * c * len_out);
    for row in input.data().chunks(len) {
        for o in 0..len_out {
            let start = o * stride;
            let mut best = start;
            for p in start + 1..start + window {
                if row[p] > row[best] {
                    best = p;
                }
            }
            out.push(row[best]);
            idx.push(best);
        }
    }
    Ok((Tensor::new(vec![n, c, len_out], out)?, idx))
}

/// Route `grad_out` back to the argmax positions recorded by [`maxpool1d`].
pub fn maxpool1d_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    indices: &[usize],
    input_shape: [usize; 3],
) -> Result<Tensor<F>> {
    let [n, c, len] = input_shape;
    if grad_out.len() != indices.len() || grad_out.rank() != 3 || grad_out.shape()[..2] != [n, c] {
        return Err(Error::Dimension(format!(
            "pool gradient {:?} does not match recorded indices for input {:?}",
            grad_out.shape(),
            input_shape
        )));
    }
    let len_out = grad_out.shape()[2];
    let mut gi = vec![F::zero(); n * c * len];
    for (r, (g_row, i_row)) in grad_out.data().chunks(len_out).zip(indices.chunks(len_out)).enumerate() {
        for (&gv, &p) in g_row.iter().zip(i_row) {
            gi[r * len + p] += gv;
        }
    }
    Tensor::new(input_shape.to_vec(), gi)
}

/// Row-wise softmax of `input[n×k]`, shifted by the row max.
pub fn softmax_rows<F: Scalar>(input: &Tensor<F>) -> Result<Tensor<F>> {
    let [_, k] = input.dims2()?;
    if !input.all_finite() {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    let mut out = input.data().to_vec();
    if k == 0 {
        return Tensor::new(input.shape().to_vec(), out);
    }
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// Uniform Kaiming init in `[-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn init_kaiming<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Result<Tensor<F>> {
    if fan_in == 0 {
        return Err(Error::Argument("fan_in must be at least 1".into()));
    }
    let bound = (6.0 / fan_in as f64).sqrt();
    Ok(Tensor::from_fn(shape, |_| sc(rng.uniform(-bound, bound))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_projector() {
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let m = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(matmul(&eye, &m).unwrap(), m);
        let proj = t(&[2, 2], &[1., 0., 0., 0.]);
        let b = t(&[2, 2], &[5., 6., 7., 8.]);
        assert_eq!(matmul(&proj, &b).unwrap().data(), &[5., 6., 0., 0.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 2]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn conv1d_identity_and_box() {
        let x = t(&[1, 1, 3], &[1., 2., 3.]);
        let id = t(&[1, 1, 1], &[1.]);
        assert_eq!(conv1d(&x, &id, 1, 0).unwrap().data(), &[1., 2., 3.]);
        let boxk = t(&[1, 1, 3], &[1., 1., 1.]);
        let y = conv1d(&x, &boxk, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[6.]);
    }

    #[test]
    fn conv1d_rejects_oversized_kernel() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3]);
        let k = Tensor::<f32>::zeros(&[1, 1, 6]);
        assert!(matches!(conv1d(&x, &k, 1, 1), Err(Error::Dimension(_))));
        assert!(conv1d(&x, &k, 1, 2).is_ok());
    }

    #[test]
    fn maxpool_examples() {
        let x = t(&[1, 1, 4], &[1., 3., 2., 4.]);
        let (y, idx) = maxpool1d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[3., 4.]);
        assert_eq!(idx, vec![1, 3]);

        let c = t(&[1, 1, 6], &[2.; 6]);
        let (y, idx) = maxpool1d(&c, 3, 3).unwrap();
        assert_eq!(y.data(), &[2., 2.]);
        assert_eq!(idx, vec![0, 3]);

        assert!(matches!(maxpool1d(&x, 5, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = t(&[1, 1, 4], &[1., 3., 2., 4.]);
        let (_, idx) = maxpool1d(&x, 2, 2).unwrap();
        let g = maxpool1d_backward(&t(&[1, 1, 2], &[10., 20.]), &idx, [1, 1, 4]).unwrap();
        assert_eq!(g.data(), &[0., 10., 0., 20.]);
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let s = softmax_rows(&t(&[1, 3], &[0., 0., 0.])).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let s = softmax_rows(&Tensor::<f32>::from_rows(&[&[1000., 0., 0.]]).unwrap()).unwrap();
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-6 && s.data()[1] < 1e-30);
    }

    #[test]
    fn kaiming_bounds_and_determinism() {
        let a: Tensor<f32> = init_kaiming(&[1000], 6, &mut SeededRng::new(5)).unwrap();
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
        let b: Tensor<f32> = init_kaiming(&[1000], 6, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a, b);
        assert!(init_kaiming::<f32>(&[3], 0, &mut SeededRng::new(5)).is_err());
    }
}
