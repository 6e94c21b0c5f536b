//! Batched kernels for the layer types. Activations are NHWC; kernels use the
//! Keras layouts (`kh, kw, in, out` for convolutions, `kh, kw, out, in` for
//! transposed convolutions, `in, out` for dense).

use super::config::Padding;
use super::tensor::gemm;

/// Upper bound on im2col buffer size, in floats.
const COLS_BUDGET: usize = 1 << 22;

/// Geometry of a strided convolution from an `hi x wi x ci` input to an
/// `ho x wo x co` output. A transposed convolution is described by the
/// geometry of the convolution it is the adjoint of.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub hi: usize,
    pub wi: usize,
    pub ci: usize,
    pub ho: usize,
    pub wo: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

fn pad_before(len_in: usize, len_out: usize, k: usize, s: usize, padding: Padding) -> usize {
    match padding {
        Padding::Valid => 0,
        Padding::Same => ((len_out - 1) * s + k).saturating_sub(len_in) / 2,
    }
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        input: [usize; 3],
        output: [usize; 3],
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
    ) -> Self {
        let [hi, wi, ci] = input;
        let [ho, wo, co] = output;
        ConvGeom {
            hi,
            wi,
            ci,
            ho,
            wo,
            co,
            kh: kernel[0],
            kw: kernel[1],
            sh: stride[0],
            sw: stride[1],
            ph: pad_before(hi, ho, kernel[0], stride[0], padding),
            pw: pad_before(wi, wo, kernel[1], stride[1], padding),
        }
    }

    /// Columns of the unfolded input: `kh * kw * ci`.
    pub fn k(&self) -> usize {
        self.kh * self.kw * self.ci
    }

    fn in_len(&self) -> usize {
        self.hi * self.wi * self.ci
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn chunk(&self, batch: usize) -> usize {
        (COLS_BUDGET / (self.out_pixels() * self.k()).max(1)).clamp(1, batch.max(1))
    }

    /// Unfolds one sample into `out_pixels x k` rows.
    fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let k = self.k();
        let ci = self.ci;
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &mut cols[(oy * self.wo + ox) * k..][..k];
                for ky in 0..self.kh {
                    let iy = (oy * self.sh + ky) as isize - self.ph as isize;
                    let dst = &mut row[ky * self.kw * ci..][..self.kw * ci];
                    if iy < 0 || iy >= self.hi as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = iy as usize * self.wi;
                    for kx in 0..self.kw {
                        let ix = (ox * self.sw + kx) as isize - self.pw as isize;
                        let d = &mut dst[kx * ci..][..ci];
                        if ix < 0 || ix >= self.wi as isize {
                            d.fill(0.0);
                        } else {
                            d.copy_from_slice(&x[(src_row + ix as usize) * ci..][..ci]);
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]; accumulates into `x`.
    fn col2im(&self, cols: &[f32], x: &mut [f32]) {
        let k = self.k();
        let ci = self.ci;
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &cols[(oy * self.wo + ox) * k..][..k];
                for ky in 0..self.kh {
                    let iy = (oy * self.sh + ky) as isize - self.ph as isize;
                    if iy < 0 || iy >= self.hi as isize {
                        continue;
                    }
                    let dst_row = iy as usize * self.wi;
                    for kx in 0..self.kw {
                        let ix = (ox * self.sw + kx) as isize - self.pw as isize;
                        if ix < 0 || ix >= self.wi as isize {
                            continue;
                        }
                        let d = &mut x[(dst_row + ix as usize) * ci..][..ci];
                        let s = &row[(ky * self.kw + kx) * ci..][..ci];
                        for (a, b) in d.iter_mut().zip(s) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias(out: &mut [f32], bias: &[f32]) {
    for row in out.chunks_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn accumulate_bias_grad(dout: &[f32], dbias: &mut [f32]) {
    for row in dout.chunks(dbias.len()) {
        for (g, d) in dbias.iter_mut().zip(row) {
            *g += d;
        }
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeom,
    batch: usize,
    x: &[f32],
    kernel: &[f32],
    bias: Option<&[f32]>,
    out: &mut [f32],
) {
    let (k, p, per_out) = (g.k(), g.out_pixels(), g.out_pixels() * g.co);
    let chunk = g.chunk(batch);
    let mut cols = vec![0.0f32; chunk * p * k];
    let mut start = 0;
    while start < batch {
        let nb = chunk.min(batch - start);
        for s in 0..nb {
            g.im2col(
                &x[(start + s) * g.in_len()..][..g.in_len()],
                &mut cols[s * p * k..][..p * k],
            );
        }
        let dst = &mut out[start * per_out..][..nb * per_out];
        gemm(nb * p, k, g.co, &cols, false, kernel, false, dst, false);
        start += nb;
    }
    if let Some(b) = bias {
        add_bias(out, b);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    g: &ConvGeom,
    batch: usize,
    x: &[f32],
    kernel: &[f32],
    dout: &[f32],
    mut dkernel: Option<&mut [f32]>,
    dbias: Option<&mut [f32]>,
    mut dx: Option<&mut [f32]>,
) {
    let (k, p, per_out) = (g.k(), g.out_pixels(), g.out_pixels() * g.co);
    if let Some(db) = dbias {
        accumulate_bias_grad(dout, db);
    }
    if dkernel.is_none() && dx.is_none() {
        return;
    }
    let chunk = g.chunk(batch);
    let mut cols = vec![0.0f32; chunk * p * k];
    let mut start = 0;
    while start < batch {
        let nb = chunk.min(batch - start);
        let m = nb * p;
        let dy = &dout[start * per_out..][..nb * per_out];
        if let Some(dk) = dkernel.as_deref_mut() {
            for s in 0..nb {
                g.im2col(
                    &x[(start + s) * g.in_len()..][..g.in_len()],
                    &mut cols[s * p * k..][..p * k],
                );
            }
            gemm(k, m, g.co, &cols, true, dy, false, dk, true);
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(m, g.co, k, dy, false, kernel, true, &mut cols, false);
            for s in 0..nb {
                g.col2im(
                    &cols[s * p * k..][..p * k],
                    &mut dx[(start + s) * g.in_len()..][..g.in_len()],
                );
            }
        }
        start += nb;
    }
}

/// Transposed convolution. `g` is the geometry of the adjoint convolution,
/// whose input is this layer's output.
pub(crate) fn deconv_forward(
    g: &ConvGeom,
    batch: usize,
    x: &[f32],
    kernel: &[f32],
    bias: Option<&[f32]>,
    out: &mut [f32],
) {
    let (k, p) = (g.k(), g.out_pixels());
    let per_x = p * g.co;
    let chunk = g.chunk(batch);
    let mut cols = vec![0.0f32; chunk * p * k];
    out.fill(0.0);
    let mut start = 0;
    while start < batch {
        let nb = chunk.min(batch - start);
        let src = &x[start * per_x..][..nb * per_x];
        gemm(nb * p, g.co, k, src, false, kernel, true, &mut cols, false);
        for s in 0..nb {
            g.col2im(
                &cols[s * p * k..][..p * k],
                &mut out[(start + s) * g.in_len()..][..g.in_len()],
            );
        }
        start += nb;
    }
    if let Some(b) = bias {
        add_bias(out, b);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn deconv_backward(
    g: &ConvGeom,
    batch: usize,
    x: &[f32],
    kernel: &[f32],
    dout: &[f32],
    mut dkernel: Option<&mut [f32]>,
    dbias: Option<&mut [f32]>,
    mut dx: Option<&mut [f32]>,
) {
    let (k, p) = (g.k(), g.out_pixels());
    let per_x = p * g.co;
    if let Some(db) = dbias {
        accumulate_bias_grad(dout, db);
    }
    if dkernel.is_none() && dx.is_none() {
        return;
    }
    let chunk = g.chunk(batch);
    let mut cols = vec![0.0f32; chunk * p * k];
    let mut start = 0;
    while start < batch {
        let nb = chunk.min(batch - start);
        let m = nb * p;
        for s in 0..nb {
            g.im2col(
                &dout[(start + s) * g.in_len()..][..g.in_len()],
                &mut cols[s * p * k..][..p * k],
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                m,
                k,
                g.co,
                &cols,
                false,
                kernel,
                false,
                &mut dx[start * per_x..][..m * g.co],
                false,
            );
        }
        if let Some(dk) = dkernel.as_deref_mut() {
            gemm(
                k,
                m,
                g.co,
                &cols,
                true,
                &x[start * per_x..][..m * g.co],
                false,
                dk,
                true,
            );
        }
        start += nb;
    }
}

pub(crate) fn dense_forward(
    batch: usize,
    din: usize,
    dout_len: usize,
    x: &[f32],
    kernel: &[f32],
    bias: Option<&[f32]>,
    out: &mut [f32],
) {
    gemm(batch, din, dout_len, x, false, kernel, false, out, false);
    if let Some(b) = bias {
        add_bias(out, b);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    batch: usize,
    din: usize,
    dout_len: usize,
    x: &[f32],
    kernel: &[f32],
    dout: &[f32],
    dkernel: Option<&mut [f32]>,
    dbias: Option<&mut [f32]>,
    dx: Option<&mut [f32]>,
) {
    if let Some(db) = dbias {
        accumulate_bias_grad(dout, db);
    }
    if let Some(dk) = dkernel {
        gemm(din, batch, dout_len, x, true, dout, false, dk, true);
    }
    if let Some(dx) = dx {
        gemm(batch, dout_len, din, dout, false, kernel, true, dx, false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-loop convolution used as an independent reference.
    fn conv_reference(g: &ConvGeom, x: &[f32], kernel: &[f32], bias: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; g.ho * g.wo * g.co];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                for co in 0..g.co {
                    let mut acc = bias[co];
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                            let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                            if iy < 0 || ix < 0 || iy >= g.hi as isize || ix >= g.wi as isize {
                                continue;
                            }
                            for ci in 0..g.ci {
                                let xv = x[(iy as usize * g.wi + ix as usize) * g.ci + ci];
                                let kv = kernel[((ky * g.kw + kx) * g.ci + ci) * g.co + co];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[(oy * g.wo + ox) * g.co + co] = acc;
                }
            }
        }
        out
    }

    fn wave(n: usize, f: f32) -> Vec<f32> {
        (0..n).map(|i| (i as f32 * f).sin()).collect()
    }

    #[test]
    fn conv_matches_direct_loops() {
        let g = ConvGeom::new([6, 8, 3], [3, 4, 5], [4, 4], [2, 2], Padding::Same);
        assert_eq!((g.ph, g.pw), (1, 1));
        let x = wave(2 * 6 * 8 * 3, 0.7);
        let kernel = wave(g.k() * 5, 0.3);
        let bias = wave(5, 1.1);
        let mut out = vec![0.0; 2 * 3 * 4 * 5];
        conv_forward(&g, 2, &x, &kernel, Some(&bias), &mut out);
        for s in 0..2 {
            let want = conv_reference(&g, &x[s * 144..][..144], &kernel, &bias);
            for (a, b) in out[s * 60..][..60].iter().zip(&want) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    /// <conv(x), y> == <x, deconv(y)> for the same kernel.
    #[test]
    fn deconv_is_adjoint_of_conv() {
        let g = ConvGeom::new([8, 12, 2], [4, 6, 3], [4, 4], [2, 2], Padding::Same);
        let x = wave(8 * 12 * 2, 0.37);
        let y = wave(4 * 6 * 3, 0.53);
        let kernel = wave(g.k() * 3, 0.29);
        let mut cx = vec![0.0; y.len()];
        conv_forward(&g, 1, &x, &kernel, None, &mut cx);
        let mut dy = vec![0.0; x.len()];
        deconv_forward(&g, 1, &y, &kernel, None, &mut dy);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = x.iter().zip(&dy).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4 * lhs.abs().max(1.0));
    }

    #[test]
    fn chunked_and_whole_batches_agree() {
        let g = ConvGeom::new([4, 4, 1], [2, 2, 2], [4, 4], [2, 2], Padding::Same);
        let batch = 5;
        let x = wave(batch * 16, 0.9);
        let kernel = wave(g.k() * 2, 0.4);
        let mut whole = vec![0.0; batch * 8];
        conv_forward(&g, batch, &x, &kernel, None, &mut whole);
        for s in 0..batch {
            let mut one = vec![0.0; 8];
            conv_forward(&g, 1, &x[s * 16..][..16], &kernel, None, &mut one);
            assert_eq!(&whole[s * 8..][..8], &one[..]);
        }
    }
}
