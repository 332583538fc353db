//! Layer kernels on flat channel-major (`[C][H][W]`) buffers.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive};

/// Floating-point element type the network can run in.
pub trait Real: Float + FromPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + 'static {
    /// `c = alpha * a * b + beta * c` on strided row-major views.
    ///
    /// # Safety
    /// Pointers and strides must describe in-bounds `m x k`, `k x n` and
    /// `m x n` matrices, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `c = op(a) * op(b) + beta * c` where `op(a)` is `m x k` and `op(b)` is
/// `k x n`. With `ta`, `a` is stored `k x m`; with `tb`, `b` is stored `n x k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], ta: bool, b: &[T], tb: bool, beta: T, c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: sizes checked above; `c` is a distinct mutable borrow.
    unsafe { T::gemm_raw(m, k, n, T::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1) }
}

/// Geometry of one stride-1 zero-padded convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.ph + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pw + 1 - self.kw
    }

    /// Rows of the unfolded input (`c_in * kh * kw`).
    pub fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    /// Columns of the unfolded input (output pixels).
    pub fn n(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unfolds `input` (`[c_in][h][w]`) into `cols` (`[k][n]`).
pub fn im2col<T: Real>(g: &ConvGeom, input: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut cols[((c * g.kh + i) * g.kw + j) * n..][..n];
                for y in 0..oh {
                    let dst = &mut row[y * ow..(y + 1) * ow];
                    let sy = y as isize + i as isize - g.ph as isize;
                    if sy < 0 || sy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * g.w..(sy as usize + 1) * g.w];
                    // output x reads source x + j - pw
                    let shift = j as isize - g.pw as isize;
                    let x0 = (-shift).max(0) as usize;
                    let x1 = ((g.w as isize - shift).min(ow as isize)).max(x0 as isize) as usize;
                    dst[..x0].fill(T::zero());
                    dst[x1..].fill(T::zero());
                    let s0 = (x0 as isize + shift) as usize;
                    dst[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `input_grad`.
pub fn col2im<T: Real>(g: &ConvGeom, cols: &[T], input_grad: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    input_grad.fill(T::zero());
    for c in 0..g.c_in {
        let plane = &mut input_grad[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &cols[((c * g.kh + i) * g.kw + j) * n..][..n];
                for y in 0..oh {
                    let sy = y as isize + i as isize - g.ph as isize;
                    if sy < 0 || sy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * g.w..(sy as usize + 1) * g.w];
                    let shift = j as isize - g.pw as isize;
                    let x0 = (-shift).max(0) as usize;
                    let x1 = ((g.w as isize - shift).min(ow as isize)).max(x0 as isize) as usize;
                    let s0 = (x0 as isize + shift) as usize;
                    for (d, &v) in dst[s0..s0 + (x1 - x0)].iter_mut().zip(&row[y * ow + x0..y * ow + x1]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// `out[c_out][n] = weight[c_out][k] * cols[k][n] + bias[c_out]`.
pub fn conv_forward<T: Real>(g: &ConvGeom, c_out: usize, weight: &[T], bias: &[T], cols: &[T], out: &mut [T]) {
    let n = g.n();
    for (o, b) in bias.iter().enumerate() {
        out[o * n..(o + 1) * n].fill(*b);
    }
    gemm(c_out, g.k(), n, weight, false, cols, false, T::one(), out);
}

/// Accumulates weight/bias gradients and, when requested, writes the unfolded
/// input gradient into `dcols`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    g: &ConvGeom,
    c_out: usize,
    weight: &[T],
    cols: &[T],
    dout: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    dcols: Option<&mut [T]>,
) {
    let n = g.n();
    let k = g.k();
    gemm(c_out, n, k, dout, false, cols, true, T::one(), dweight);
    for (o, db) in dbias.iter_mut().enumerate() {
        *db += dout[o * n..(o + 1) * n].iter().copied().sum::<T>();
    }
    if let Some(dcols) = dcols {
        gemm(k, c_out, n, weight, true, dout, false, T::zero(), dcols);
    }
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries whose (post-ReLU) activation is not positive.
pub fn relu_backward<T: Real>(activation: &[T], grad: &mut [T]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Non-overlapping max pooling with floor semantics: trailing rows/columns
/// that do not fill a whole window are dropped. Returns pooled values and
/// the flat input index of each maximum.
pub fn maxpool_forward<T: Real>(input: &[T], c: usize, h: usize, w: usize, pool: [usize; 2]) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / pool[0], w / pool[1]);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + y * pool[0] * w + x * pool[1];
                for dy in 0..pool[0] {
                    let row = base + (y * pool[0] + dy) * w + x * pool[1];
                    for p in row..row + pool[1] {
                        if input[p] > input[best] {
                            best = p;
                        }
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub fn maxpool_backward<T: Real>(dout: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut din = vec![T::zero(); input_len];
    for (g, &i) in dout.iter().zip(argmax) {
        din[i as usize] += *g;
    }
    din
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy on the logit, computed stably.
pub fn bce_with_logit<T: Real>(z: T, target: T) -> T {
    z.max(T::zero()) - z * target + (-(z.abs())).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    fn naive_conv(g: &ConvGeom, input: &[f64], weight: &[f64], c_out: usize) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![0.0; c_out * oh * ow];
        for o in 0..c_out {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..g.c_in {
                        for i in 0..g.kh {
                            for j in 0..g.kw {
                                let sy = y as isize + i as isize - g.ph as isize;
                                let sx = x as isize + j as isize - g.pw as isize;
                                if sy >= 0 && sx >= 0 && (sy as usize) < g.h && (sx as usize) < g.w {
                                    acc += weight[((o * g.c_in + c) * g.kh + i) * g.kw + j]
                                        * input[(c * g.h + sy as usize) * g.w + sx as usize];
                                }
                            }
                        }
                    }
                    out[(o * oh + y) * ow + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        for g in [
            ConvGeom { c_in: 2, h: 4, w: 7, kh: 3, kw: 3, ph: 1, pw: 1 },
            ConvGeom { c_in: 3, h: 2, w: 11, kh: 1, kw: 5, ph: 0, pw: 2 },
            ConvGeom { c_in: 1, h: 3, w: 5, kh: 3, kw: 3, ph: 0, pw: 0 },
        ] {
            let input: Vec<f64> = (0..g.c_in * g.h * g.w).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            let weight: Vec<f64> = (0..4 * g.k()).map(|i| ((i * 104729) % 11) as f64 * 0.1 - 0.5).collect();
            let mut cols = vec![0.0; g.k() * g.n()];
            im2col(&g, &input, &mut cols);
            let mut out = vec![0.0; 4 * g.n()];
            conv_forward(&g, 4, &weight, &[0.0; 4], &cols, &mut out);
            let want = naive_conv(&g, &input, &weight, 4);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom { c_in: 2, h: 3, w: 9, kh: 3, kw: 5, ph: 1, pw: 2 };
        let x: Vec<f64> = (0..g.c_in * g.h * g.w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.k() * g.n()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; g.k() * g.n()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pooling_floors_and_routes_gradient() {
        let input: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let (out, idx) = maxpool_forward(&input, 1, 1, 11, [1, 5]);
        assert_eq!(out, vec![4.0, 9.0]);
        let din = maxpool_backward(&[1.0, 2.0], &idx, 11);
        assert_eq!(din[4], 1.0);
        assert_eq!(din[9], 2.0);
        assert_eq!(din.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn stable_loss() {
        assert!((bce_with_logit(0.0f64, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!(bce_with_logit(800.0f64, 1.0) < 1e-300);
        assert!((bce_with_logit(-800.0f64, 1.0) - 800.0).abs() < 1e-9);
        assert_eq!(sigmoid(0.0f64), 0.5);
    }
}
