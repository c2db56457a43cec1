//! Valid cross-correlation kernels (no kernel flip, zero padding).
//!
//! Every output element accumulates `bias + Σ x·w` in `(ci, kd, kh, kw)`
//! lexicographic order, so results are reproducible bit-for-bit against a
//! plain sliding-window loop that walks the kernel in the same order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

pub(crate) fn out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::ConvGeometry(
            "stride and kernel must be positive".into(),
        ));
    }
    let padded = input + 2 * padding;
    if kernel > padded {
        return Err(Error::ConvGeometry(format!(
            "kernel {kernel} exceeds padded extent {padded}"
        )));
    }
    if !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::ConvGeometry(format!(
            "non-integral output extent: ({padded} - {kernel}) / {stride}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

impl Conv2dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kh: usize, kw: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kh,
            kw,
            stride: 1,
            padding: 0,
        }
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kh, self.kw]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        if input.len() != 3 || input[0] != self.in_channels {
            return Err(Error::shape(
                "conv2d input",
                input,
                &[self.in_channels, 0, 0],
            ));
        }
        Ok([
            self.out_channels,
            out_extent(input[1], self.kh, self.stride, self.padding)?,
            out_extent(input[2], self.kw, self.stride, self.padding)?,
        ])
    }
}

impl Conv3dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kd: usize, kh: usize, kw: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kd,
            kh,
            kw,
            stride: 1,
            padding: 0,
        }
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        [
            self.out_channels,
            self.in_channels,
            self.kd,
            self.kh,
            self.kw,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kd * self.kh * self.kw
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 4]> {
        if input.len() != 4 || input[0] != self.in_channels {
            return Err(Error::shape(
                "conv3d input",
                input,
                &[self.in_channels, 0, 0, 0],
            ));
        }
        Ok([
            self.out_channels,
            out_extent(input[1], self.kd, self.stride, self.padding)?,
            out_extent(input[2], self.kh, self.stride, self.padding)?,
            out_extent(input[3], self.kw, self.stride, self.padding)?,
        ])
    }
}

/// Output positions `o` in `lo..hi` for which `o*stride + k - padding` lands
/// inside `0..input`.
#[inline]
fn valid_range(
    k: usize,
    padding: usize,
    stride: usize,
    input: usize,
    output: usize,
) -> (usize, usize) {
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if input + padding > k {
        ((input + padding - k - 1) / stride + 1).min(output)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[inline]
fn src(o: usize, k: usize, stride: usize, padding: usize) -> usize {
    o * stride + k - padding
}

pub(crate) fn conv2d_forward(
    x: &[f64],
    x_shape: &[usize],
    w: &[f64],
    b: &[f64],
    spec: &Conv2dSpec,
    out_shape: &[usize; 3],
) -> Vec<f64> {
    let (h, wd) = (x_shape[1], x_shape[2]);
    let [co_n, ho, wo] = *out_shape;
    let (s, p) = (spec.stride, spec.padding);
    let mut out = vec![0.0; co_n * ho * wo];
    for co in 0..co_n {
        let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        plane.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..spec.in_channels {
            let xin = &x[ci * h * wd..(ci + 1) * h * wd];
            for ki in 0..spec.kh {
                let (oh_lo, oh_hi) = valid_range(ki, p, s, h, ho);
                for kj in 0..spec.kw {
                    let wv = w[((co * spec.in_channels + ci) * spec.kh + ki) * spec.kw + kj];
                    let (ow_lo, ow_hi) = valid_range(kj, p, s, wd, wo);
                    for oh in oh_lo..oh_hi {
                        let row = &xin[src(oh, ki, s, p) * wd..];
                        let orow = &mut plane[oh * wo..(oh + 1) * wo];
                        for ow in ow_lo..ow_hi {
                            orow[ow] += row[src(ow, kj, s, p)] * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)` for upstream gradient `g`.
pub(crate) fn conv2d_backward(
    x: &[f64],
    x_shape: &[usize],
    w: &[f64],
    g: &[f64],
    spec: &Conv2dSpec,
    out_shape: &[usize; 3],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (h, wd) = (x_shape[1], x_shape[2]);
    let [co_n, ho, wo] = *out_shape;
    let (s, p) = (spec.stride, spec.padding);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; co_n];
    for co in 0..co_n {
        let gplane = &g[co * ho * wo..(co + 1) * ho * wo];
        db[co] = gplane.iter().sum();
        for ci in 0..spec.in_channels {
            let base = ci * h * wd;
            for ki in 0..spec.kh {
                let (oh_lo, oh_hi) = valid_range(ki, p, s, h, ho);
                for kj in 0..spec.kw {
                    let widx = ((co * spec.in_channels + ci) * spec.kh + ki) * spec.kw + kj;
                    let wv = w[widx];
                    let (ow_lo, ow_hi) = valid_range(kj, p, s, wd, wo);
                    let mut acc = 0.0;
                    for oh in oh_lo..oh_hi {
                        let roff = base + src(oh, ki, s, p) * wd;
                        let grow = &gplane[oh * wo..(oh + 1) * wo];
                        for ow in ow_lo..ow_hi {
                            let xi = roff + src(ow, kj, s, p);
                            acc += grow[ow] * x[xi];
                            dx[xi] += grow[ow] * wv;
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn conv3d_forward(
    x: &[f64],
    x_shape: &[usize],
    w: &[f64],
    b: &[f64],
    spec: &Conv3dSpec,
    out_shape: &[usize; 4],
) -> Vec<f64> {
    let (d, h, wd) = (x_shape[1], x_shape[2], x_shape[3]);
    let [co_n, dout, ho, wo] = *out_shape;
    let (s, p) = (spec.stride, spec.padding);
    let vol = dout * ho * wo;
    let mut out = vec![0.0; co_n * vol];
    for co in 0..co_n {
        let cube = &mut out[co * vol..(co + 1) * vol];
        cube.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..spec.in_channels {
            let xin = &x[ci * d * h * wd..(ci + 1) * d * h * wd];
            for kz in 0..spec.kd {
                let (od_lo, od_hi) = valid_range(kz, p, s, d, dout);
                for ki in 0..spec.kh {
                    let (oh_lo, oh_hi) = valid_range(ki, p, s, h, ho);
                    for kj in 0..spec.kw {
                        let wv = w[(((co * spec.in_channels + ci) * spec.kd + kz) * spec.kh + ki)
                            * spec.kw
                            + kj];
                        let (ow_lo, ow_hi) = valid_range(kj, p, s, wd, wo);
                        for od in od_lo..od_hi {
                            let slab = &xin[src(od, kz, s, p) * h * wd..];
                            for oh in oh_lo..oh_hi {
                                let row = &slab[src(oh, ki, s, p) * wd..];
                                let o = (od * ho + oh) * wo;
                                let orow = &mut cube[o..o + wo];
                                for ow in ow_lo..ow_hi {
                                    orow[ow] += row[src(ow, kj, s, p)] * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv3d_backward(
    x: &[f64],
    x_shape: &[usize],
    w: &[f64],
    g: &[f64],
    spec: &Conv3dSpec,
    out_shape: &[usize; 4],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (d, h, wd) = (x_shape[1], x_shape[2], x_shape[3]);
    let [co_n, dout, ho, wo] = *out_shape;
    let (s, p) = (spec.stride, spec.padding);
    let vol = dout * ho * wo;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; co_n];
    for co in 0..co_n {
        let gcube = &g[co * vol..(co + 1) * vol];
        db[co] = gcube.iter().sum();
        for ci in 0..spec.in_channels {
            let base = ci * d * h * wd;
            for kz in 0..spec.kd {
                let (od_lo, od_hi) = valid_range(kz, p, s, d, dout);
                for ki in 0..spec.kh {
                    let (oh_lo, oh_hi) = valid_range(ki, p, s, h, ho);
                    for kj in 0..spec.kw {
                        let widx = (((co * spec.in_channels + ci) * spec.kd + kz) * spec.kh + ki)
                            * spec.kw
                            + kj;
                        let wv = w[widx];
                        let (ow_lo, ow_hi) = valid_range(kj, p, s, wd, wo);
                        let mut acc = 0.0;
                        for od in od_lo..od_hi {
                            let zoff = base + src(od, kz, s, p) * h * wd;
                            for oh in oh_lo..oh_hi {
                                let roff = zoff + src(oh, ki, s, p) * wd;
                                let grow = &gcube[(od * ho + oh) * wo..(od * ho + oh + 1) * wo];
                                for ow in ow_lo..ow_hi {
                                    let xi = roff + src(ow, kj, s, p);
                                    acc += grow[ow] * x[xi];
                                    dx[xi] += grow[ow] * wv;
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}
