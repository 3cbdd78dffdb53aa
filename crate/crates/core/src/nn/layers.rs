//! Layer descriptors and their per-sample forward/backward kernels.
//!
//! All kernels work on a single sample laid out row-major as `[C, H, W]` (conv,
//! pooling, upsampling) or flat `[D]` (dense). Batching happens one level up.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    /// Nearest-neighbour upsampling by an integer factor.
    Upsample {
        factor: usize,
    },
    Flatten,
    Dense {
        out_dim: usize,
    },
}

impl LayerSpec {
    /// `k`×`k` convolution, stride 1, "same" padding for odd `k`.
    pub fn conv(filters: usize, k: usize) -> Self {
        LayerSpec::Conv2d {
            filters,
            kernel_h: k,
            kernel_w: k,
            stride: 1,
            padding: k / 2,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    /// Per-sample output shape, or a message describing why `input` does not fit.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let spatial = |what: &str| -> std::result::Result<(usize, usize, usize), String> {
            match *input {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(format!("{what} needs a [C, H, W] input, got {input:?}")),
            }
        };
        match *self {
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let (_, h, w) = spatial("conv2d")?;
                if filters == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 {
                    return Err("conv2d filters, kernel and stride must be positive".into());
                }
                if h + 2 * padding < kernel_h || w + 2 * padding < kernel_w {
                    return Err(format!(
                        "kernel {kernel_h}x{kernel_w} larger than padded input {h}x{w}"
                    ));
                }
                Ok(vec![
                    filters,
                    (h + 2 * padding - kernel_h) / stride + 1,
                    (w + 2 * padding - kernel_w) / stride + 1,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool { size } => {
                let (c, h, w) = spatial("maxpool")?;
                if size == 0 || h < size || w < size {
                    return Err(format!("pool size {size} does not fit {h}x{w}"));
                }
                Ok(vec![c, h / size, w / size])
            }
            LayerSpec::Upsample { factor } => {
                let (c, h, w) = spatial("upsample")?;
                if factor == 0 {
                    return Err("upsample factor must be positive".into());
                }
                Ok(vec![c, h * factor, w * factor])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { out_dim } => {
                if out_dim == 0 {
                    return Err("dense out_dim must be positive".into());
                }
                Ok(vec![out_dim])
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => write!(f, "conv2d({filters},{kernel_h},{kernel_w},{stride},{padding})"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool { size } => write!(f, "maxpool({size})"),
            LayerSpec::Upsample { factor } => write!(f, "upsample({factor})"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Dense { out_dim } => write!(f, "dense({out_dim})"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = String;

    /// Parses the compact form used in manifests: `conv2d(8,3)`,
    /// `conv2d(8,3,3,1,1)`, `relu`, `maxpool(2)`, `upsample(2)`, `flatten`,
    /// `dense(64)`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                let close = s
                    .strip_suffix(')')
                    .ok_or_else(|| format!("missing ')' in layer `{s}`"))?;
                let args = close[open + 1..]
                    .split(',')
                    .map(|a| {
                        a.trim()
                            .parse::<usize>()
                            .map_err(|_| format!("bad argument `{}` in layer `{s}`", a.trim()))
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                (s[..open].trim(), args)
            }
            None => (s, Vec::new()),
        };
        let spec = match (name.to_ascii_lowercase().as_str(), args.as_slice()) {
            ("conv2d", &[f, k]) => LayerSpec::conv(f, k),
            ("conv2d", &[filters, kernel_h, kernel_w, stride, padding]) => LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                stride,
                padding,
            },
            ("relu", []) => LayerSpec::Relu,
            ("maxpool", &[size]) => LayerSpec::MaxPool { size },
            ("upsample", &[factor]) => LayerSpec::Upsample { factor },
            ("flatten", []) => LayerSpec::Flatten,
            ("dense", &[out_dim]) => LayerSpec::Dense { out_dim },
            _ => return Err(format!("unrecognised layer `{s}`")),
        };
        Ok(spec)
    }
}

/// A layer bound to concrete input/output shapes, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T = f32> {
    pub(crate) spec: LayerSpec,
    pub(crate) in_shape: Vec<usize>,
    pub(crate) out_shape: Vec<usize>,
    /// Conv: `[F, C, kh, kw]`; dense: `[out, in]`.
    pub(crate) weight: Option<Tensor<T>>,
    pub(crate) bias: Option<Tensor<T>>,
}

impl<T: Scalar> Layer<T> {
    /// Builds the layer for `in_shape`, drawing fan-in scaled (He) uniform
    /// weights from `rng`. Biases start at zero.
    pub fn new<R: Rng + ?Sized>(
        index: usize,
        spec: LayerSpec,
        in_shape: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let out_shape = spec
            .output_shape(in_shape)
            .map_err(|message| Error::Config {
                layer: index,
                message,
            })?;
        let (weight_shape, fan_in) = match spec {
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                ..
            } => {
                let c = in_shape[0];
                (
                    Some(vec![filters, c, kernel_h, kernel_w]),
                    c * kernel_h * kernel_w,
                )
            }
            LayerSpec::Dense { out_dim } => {
                let d: usize = in_shape.iter().product();
                (Some(vec![out_dim, d]), d)
            }
            _ => (None, 0),
        };
        let (weight, bias) = match weight_shape {
            Some(shape) => {
                let limit = (6.0 / fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| T::from_f64_lossy(rng.random_range(-limit..limit)))
                    .collect();
                let out = shape[0];
                (
                    Some(Tensor::new(shape, data)?),
                    Some(Tensor::zeros(vec![out])),
                )
            }
            None => (None, None),
        };
        Ok(Self {
            spec,
            in_shape: in_shape.to_vec(),
            out_shape,
            weight,
            bias,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub(crate) fn scale_weights(&mut self, factor: T) {
        if let Some(w) = self.weight.as_mut() {
            w.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn weight(&self) -> Option<&Tensor<T>> {
        self.weight.as_ref()
    }

    pub fn bias(&self) -> Option<&Tensor<T>> {
        self.bias.as_ref()
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_len());
        match self.spec {
            LayerSpec::Conv2d { .. } => {
                let g = self.conv_geometry();
                let col = g.im2col(x);
                let w = self.weight.as_ref().expect("conv weight").data();
                let b = self.bias.as_ref().expect("conv bias").data();
                let p = g.out_pixels();
                let ck = g.col_rows();
                let mut out = vec![T::zero(); g.filters * p];
                for f in 0..g.filters {
                    let out_f = &mut out[f * p..(f + 1) * p];
                    out_f.fill(b[f]);
                    let w_f = &w[f * ck..(f + 1) * ck];
                    for (r, &wv) in w_f.iter().enumerate() {
                        if wv == T::zero() {
                            continue;
                        }
                        axpy(wv, &col[r * p..(r + 1) * p], out_f);
                    }
                }
                out
            }
            LayerSpec::Relu => x
                .iter()
                .map(|&v| if v > T::zero() { v } else { T::zero() })
                .collect(),
            LayerSpec::MaxPool { size } => {
                let (c, h, w) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (h / size, w / size);
                let mut out = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    let plane = &x[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let idx = pool_argmax(plane, w, oy, ox, size);
                            out.push(plane[idx]);
                        }
                    }
                }
                out
            }
            LayerSpec::Upsample { factor } => {
                let (c, h, w) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (h * factor, w * factor);
                let mut out = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for oy in 0..oh {
                        let row = &x[ch * h * w + (oy / factor) * w..][..w];
                        for ox in 0..ow {
                            out.push(row[ox / factor]);
                        }
                    }
                }
                out
            }
            LayerSpec::Flatten => x.to_vec(),
            LayerSpec::Dense { out_dim } => {
                let w = self.weight.as_ref().expect("dense weight").data();
                let b = self.bias.as_ref().expect("dense bias").data();
                let d = x.len();
                (0..out_dim)
                    .map(|o| b[o] + dot(&w[o * d..(o + 1) * d], x))
                    .collect()
            }
        }
    }

    /// Accumulates parameter gradients into `gw`/`gb` (ignored for
    /// parameter-free layers) and returns the input gradient when `need_dx`.
    pub fn backward(
        &self,
        x: &[T],
        dy: &[T],
        gw: &mut [T],
        gb: &mut [T],
        need_dx: bool,
    ) -> Option<Vec<T>> {
        debug_assert_eq!(dy.len(), self.out_len());
        match self.spec {
            LayerSpec::Conv2d { .. } => {
                let g = self.conv_geometry();
                let col = g.im2col(x);
                let w = self.weight.as_ref().expect("conv weight").data();
                let p = g.out_pixels();
                let ck = g.col_rows();
                for f in 0..g.filters {
                    let dy_f = &dy[f * p..(f + 1) * p];
                    gb[f] += dy_f.iter().copied().sum::<T>();
                    let gw_f = &mut gw[f * ck..(f + 1) * ck];
                    for (r, gwv) in gw_f.iter_mut().enumerate() {
                        *gwv += dot(dy_f, &col[r * p..(r + 1) * p]);
                    }
                }
                if !need_dx {
                    return None;
                }
                let mut dcol = vec![T::zero(); ck * p];
                for f in 0..g.filters {
                    let dy_f = &dy[f * p..(f + 1) * p];
                    for r in 0..ck {
                        let wv = w[f * ck + r];
                        if wv == T::zero() {
                            continue;
                        }
                        axpy(wv, dy_f, &mut dcol[r * p..(r + 1) * p]);
                    }
                }
                Some(g.col2im(&dcol))
            }
            LayerSpec::Relu => need_dx.then(|| {
                x.iter()
                    .zip(dy)
                    .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                    .collect()
            }),
            LayerSpec::MaxPool { size } => need_dx.then(|| {
                let (c, h, w) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (h / size, w / size);
                let mut dx = vec![T::zero(); x.len()];
                for ch in 0..c {
                    let plane = &x[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let idx = pool_argmax(plane, w, oy, ox, size);
                            dx[ch * h * w + idx] += dy[ch * oh * ow + oy * ow + ox];
                        }
                    }
                }
                dx
            }),
            LayerSpec::Upsample { factor } => need_dx.then(|| {
                let (c, h, w) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (h * factor, w * factor);
                let mut dx = vec![T::zero(); x.len()];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            dx[ch * h * w + (oy / factor) * w + ox / factor] +=
                                dy[ch * oh * ow + oy * ow + ox];
                        }
                    }
                }
                dx
            }),
            LayerSpec::Flatten => need_dx.then(|| dy.to_vec()),
            LayerSpec::Dense { out_dim } => {
                let d = x.len();
                for o in 0..out_dim {
                    gb[o] += dy[o];
                    axpy(dy[o], x, &mut gw[o * d..(o + 1) * d]);
                }
                need_dx.then(|| {
                    let w = self.weight.as_ref().expect("dense weight").data();
                    let mut dx = vec![T::zero(); d];
                    for o in 0..out_dim {
                        axpy(dy[o], &w[o * d..(o + 1) * d], &mut dx);
                    }
                    dx
                })
            }
        }
    }

    fn conv_geometry(&self) -> ConvGeometry {
        match self.spec {
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => ConvGeometry {
                channels: self.in_shape[0],
                height: self.in_shape[1],
                width: self.in_shape[2],
                filters,
                kernel_h,
                kernel_w,
                stride,
                padding,
                out_h: self.out_shape[1],
                out_w: self.out_shape[2],
            },
            _ => unreachable!("conv geometry requested for {}", self.spec),
        }
    }
}

/// Index (within one channel plane) of the first maximum in a pooling window.
fn pool_argmax<T: Scalar>(plane: &[T], w: usize, oy: usize, ox: usize, size: usize) -> usize {
    let mut best = oy * size * w + ox * size;
    for dy in 0..size {
        for dx in 0..size {
            let idx = (oy * size + dy) * w + ox * size + dx;
            if plane[idx] > plane[best] {
                best = idx;
            }
        }
    }
    best
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Four partial sums so the optimizer can vectorize; fixed order keeps it deterministic.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for (l, accl) in acc.iter_mut().enumerate() {
            *accl += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    /// Maps (row, output pixel) to the source input index, if inside the image.
    #[inline]
    fn source(&self, c: usize, ky: usize, kx: usize, oy: usize, ox: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.height && ix < self.width)
            .then(|| c * self.height * self.width + iy * self.width + ix)
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let p = self.out_pixels();
        let mut col = vec![T::zero(); self.col_rows() * p];
        let mut r = 0;
        for c in 0..self.channels {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = &mut col[r * p..(r + 1) * p];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some(src) = self.source(c, ky, kx, oy, ox) {
                                row[oy * self.out_w + ox] = x[src];
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
        col
    }

    fn col2im<T: Scalar>(&self, dcol: &[T]) -> Vec<T> {
        let p = self.out_pixels();
        let mut dx = vec![T::zero(); self.channels * self.height * self.width];
        let mut r = 0;
        for c in 0..self.channels {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = &dcol[r * p..(r + 1) * p];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some(src) = self.source(c, ky, kx, oy, ox) {
                                dx[src] += row[oy * self.out_w + ox];
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
        dx
    }
}
