//! Residual and depthwise-separable building blocks.
//!
//! The forward/backward kernels work on borrowed parameter slices so that the
//! network can keep all parameters in one flat array; the owning block types
//! below wrap the same kernels.

use crate::error::{Error, Result};

#[inline]
pub(crate) fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// `out = W x + b` with `W` row-major `out.len() × x.len()`.
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulate gradients of `out = W x + b` given `d_out`; adds `W^T d_out`
/// into `d_x` when provided.
pub(crate) fn affine_backward(
    w: &[f64],
    x: &[f64],
    d_out: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
    d_x: Option<&mut [f64]>,
) {
    let cols = x.len();
    for (r, &g) in d_out.iter().enumerate() {
        d_b[r] += g;
        if g == 0.0 {
            continue;
        }
        for (dw, xv) in d_w[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *dw += g * xv;
        }
    }
    if let Some(d_x) = d_x {
        for (r, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (dx, wv) in d_x.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *dx += g * wv;
            }
        }
    }
}

/// Borrowed parameters of one residual block: `F(x) = W2 relu(W1 x + b1) + b2`.
#[derive(Clone, Copy)]
pub(crate) struct ResidualView<'a> {
    pub width: usize,
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
}

impl ResidualView<'_> {
    pub const fn param_count(width: usize) -> usize {
        2 * (width * width + width)
    }

    pub fn from_slice(width: usize, p: &[f64]) -> ResidualView<'_> {
        let ww = width * width;
        ResidualView {
            width,
            w1: &p[..ww],
            b1: &p[ww..ww + width],
            w2: &p[ww + width..2 * ww + width],
            b2: &p[2 * ww + width..2 * ww + 2 * width],
        }
    }

    /// Returns `(pre_activation, output)`.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut pre = vec![0.0; self.width];
        affine(self.w1, self.b1, x, &mut pre);
        let hidden: Vec<f64> = pre.iter().map(|&v| relu(v)).collect();
        let mut out = vec![0.0; self.width];
        affine(self.w2, self.b2, &hidden, &mut out);
        for (o, xv) in out.iter_mut().zip(x) {
            *o += xv;
        }
        (pre, out)
    }

    /// Backward through `F(x) + x`. `grad` is laid out like the parameter
    /// slice; returns `dL/dx`.
    pub fn backward(&self, x: &[f64], pre: &[f64], d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (ww, w) = (self.width * self.width, self.width);
        let (g_w1, rest) = grad.split_at_mut(ww);
        let (g_b1, rest) = rest.split_at_mut(w);
        let (g_w2, g_b2) = rest.split_at_mut(ww);

        let hidden: Vec<f64> = pre.iter().map(|&v| relu(v)).collect();
        let mut d_hidden = vec![0.0; w];
        affine_backward(self.w2, &hidden, d_out, g_w2, g_b2, Some(&mut d_hidden));
        for (dh, &p) in d_hidden.iter_mut().zip(pre) {
            if p <= 0.0 {
                *dh = 0.0;
            }
        }
        let mut d_x = d_out.to_vec();
        affine_backward(self.w1, x, &d_hidden, g_w1, g_b1, Some(&mut d_x));
        d_x
    }
}

/// Residual unit computing `F(x) + x`, where `F` is two affine layers with a
/// rectifier between them.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub width: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ResidualBlock {
    pub fn zeros(width: usize) -> Self {
        ResidualBlock {
            width,
            w1: vec![0.0; width * width],
            b1: vec![0.0; width],
            w2: vec![0.0; width * width],
            b2: vec![0.0; width],
        }
    }

    pub(crate) fn view(&self) -> ResidualView<'_> {
        ResidualView {
            width: self.width,
            w1: &self.w1,
            b1: &self.b1,
            w2: &self.w2,
            b2: &self.b2,
        }
    }

    /// The inner transform `F(x)` alone.
    pub fn inner(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.forward(x)?;
        for (o, xv) in out.iter_mut().zip(x) {
            *o -= xv;
        }
        Ok(out)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.width {
            return Err(Error::mismatch("residual block input", self.width, x.len()));
        }
        Ok(self.view().forward(x).1)
    }
}

/// Channel-major `channels × height × width` feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Grid {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::mismatch("grid data", channels * height * width, data.len()));
        }
        Ok(Grid {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }
}

/// Spatial output size of a stride-1 convolution.
pub fn conv_output_size(input: usize, kernel: usize, padding: usize) -> Option<usize> {
    (input + 2 * padding).checked_sub(kernel).map(|v| v + 1)
}

/// Borrowed depthwise-separable parameters: `depthwise` is `M × k × k`,
/// `pointwise` is `N × M`.
#[derive(Clone, Copy)]
pub(crate) struct DwsView<'a> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub padding: usize,
    pub depthwise: &'a [f64],
    pub pointwise: &'a [f64],
}

impl DwsView<'_> {
    pub fn depthwise_forward(&self, x: &Grid) -> Grid {
        let k = self.kernel;
        let p = self.padding as isize;
        let oh = conv_output_size(x.height, k, self.padding).unwrap_or(0);
        let ow = conv_output_size(x.width, k, self.padding).unwrap_or(0);
        let mut out = Grid::zeros(self.in_ch, oh, ow);
        for m in 0..self.in_ch {
            let filt = &self.depthwise[m * k * k..(m + 1) * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        let iy = oy as isize + ky as isize - p;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ox as isize + kx as isize - p;
                            if ix < 0 || ix >= x.width as isize {
                                continue;
                            }
                            acc += filt[ky * k + kx] * x.at(m, iy as usize, ix as usize);
                        }
                    }
                    let i = out.idx(m, oy, ox);
                    out.data[i] = acc;
                }
            }
        }
        out
    }

    pub fn pointwise_forward(&self, d: &Grid) -> Grid {
        let plane = d.height * d.width;
        let mut out = Grid::zeros(self.out_ch, d.height, d.width);
        for n in 0..self.out_ch {
            let dst = &mut out.data[n * plane..(n + 1) * plane];
            for m in 0..self.in_ch {
                let w = self.pointwise[n * self.in_ch + m];
                if w == 0.0 {
                    continue;
                }
                for (o, v) in dst.iter_mut().zip(&d.data[m * plane..(m + 1) * plane]) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Backward through pointwise∘depthwise given `dL/d(pointwise out)`.
    /// `grad` holds depthwise then pointwise gradients; returns `dL/dx`.
    pub fn backward(&self, x: &Grid, d: &Grid, d_out: &Grid, grad: &mut [f64]) -> Grid {
        let k = self.kernel;
        let p = self.padding as isize;
        let plane = d.height * d.width;
        let (g_dw, g_pw) = grad.split_at_mut(self.in_ch * k * k);

        let mut d_d = Grid::zeros(self.in_ch, d.height, d.width);
        for n in 0..self.out_ch {
            let go = &d_out.data[n * plane..(n + 1) * plane];
            for m in 0..self.in_ch {
                let dm = &d.data[m * plane..(m + 1) * plane];
                g_pw[n * self.in_ch + m] += go.iter().zip(dm).map(|(a, b)| a * b).sum::<f64>();
                let w = self.pointwise[n * self.in_ch + m];
                for (acc, g) in d_d.data[m * plane..(m + 1) * plane].iter_mut().zip(go) {
                    *acc += w * g;
                }
            }
        }

        let mut d_x = Grid::zeros(x.channels, x.height, x.width);
        for m in 0..self.in_ch {
            let filt = &self.depthwise[m * k * k..(m + 1) * k * k];
            for oy in 0..d.height {
                for ox in 0..d.width {
                    let g = d_d.at(m, oy, ox);
                    if g == 0.0 {
                        continue;
                    }
                    for ky in 0..k {
                        let iy = oy as isize + ky as isize - p;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ox as isize + kx as isize - p;
                            if ix < 0 || ix >= x.width as isize {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            g_dw[m * k * k + ky * k + kx] += g * x.at(m, iy, ix);
                            let i = d_x.idx(m, iy, ix);
                            d_x.data[i] += g * filt[ky * k + kx];
                        }
                    }
                }
            }
        }
        d_x
    }
}

/// Per-channel `D_k × D_k` filtering followed by `1 × 1` mixing from `M` to
/// `N` channels, stride 1, zero padding `padding`. No biases: the parameter
/// count is `D_k·D_k·M + M·N`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseSeparableBlock {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub padding: usize,
    pub depthwise: Vec<f64>,
    pub pointwise: Vec<f64>,
}

impl DepthwiseSeparableBlock {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, padding: usize) -> Self {
        DepthwiseSeparableBlock {
            in_ch,
            out_ch,
            kernel,
            padding,
            depthwise: vec![0.0; in_ch * kernel * kernel],
            pointwise: vec![0.0; out_ch * in_ch],
        }
    }

    pub fn param_count(&self) -> usize {
        Self::count_for(self.in_ch, self.out_ch, self.kernel)
    }

    pub const fn count_for(in_ch: usize, out_ch: usize, kernel: usize) -> usize {
        kernel * kernel * in_ch + in_ch * out_ch
    }

    /// Weight count of a standard convolution with the same shape.
    pub const fn standard_count_for(in_ch: usize, out_ch: usize, kernel: usize) -> usize {
        kernel * kernel * in_ch * out_ch
    }

    pub(crate) fn view(&self) -> DwsView<'_> {
        DwsView {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kernel: self.kernel,
            padding: self.padding,
            depthwise: &self.depthwise,
            pointwise: &self.pointwise,
        }
    }

    pub fn forward(&self, x: &Grid) -> Result<Grid> {
        if x.channels != self.in_ch {
            return Err(Error::mismatch("depthwise-separable input channels", self.in_ch, x.channels));
        }
        if conv_output_size(x.height, self.kernel, self.padding).is_none()
            || conv_output_size(x.width, self.kernel, self.padding).is_none()
        {
            return Err(Error::mismatch("grid smaller than kernel", self.kernel, x.height.min(x.width)));
        }
        let v = self.view();
        Ok(v.pointwise_forward(&v.depthwise_forward(x)))
    }
}
