//! Feature maps and the layer primitives of the 1-D CNN.

use super::ShapeError;

/// `channels x length` feature map, row-major (one row per channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor1d {
    channels: usize,
    length: usize,
    data: Vec<f32>,
}

impl Tensor1d {
    pub fn new(channels: usize, length: usize, data: Vec<f32>) -> Result<Self, ShapeError> {
        if channels == 0 || length == 0 || data.len() != channels * length {
            return Err(ShapeError::new(format!(
                "tensor {channels}x{length} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { channels, length, data })
    }

    pub fn from_signal(values: &[f32]) -> Result<Self, ShapeError> {
        Self::new(1, values.len(), values.to_vec())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, c: usize) -> &[f32] {
        &self.data[c * self.length..(c + 1) * self.length]
    }
}

/// Running f32 sum with Neumaier compensation, so long dot products do not
/// lose precision with their length.
#[derive(Clone, Copy, Default)]
struct CompensatedSum {
    sum: f32,
    carry: f32,
}

impl CompensatedSum {
    fn new(start: f32) -> Self {
        Self { sum: start, carry: 0.0 }
    }

    #[inline]
    fn add(&mut self, x: f32) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f32 {
        self.sum + self.carry
    }
}

fn window_count(length: usize, window: usize, stride: usize) -> usize {
    (length - window) / stride + 1
}

/// Valid (unpadded) cross-correlation with flat weights laid out as
/// `[out][in][k]`.
pub(crate) fn conv1d_flat(
    x: &Tensor1d,
    weights: &[f32],
    bias: &[f32],
    kernel: usize,
    stride: usize,
) -> Result<Tensor1d, ShapeError> {
    let out_ch = bias.len();
    let in_ch = x.channels;
    if out_ch == 0 || kernel == 0 || stride == 0 || weights.len() != out_ch * in_ch * kernel {
        return Err(ShapeError::new(format!(
            "conv weights of {} values do not form [{out_ch}][{in_ch}][{kernel}] for input {}x{}",
            weights.len(),
            x.channels,
            x.length
        )));
    }
    if x.length < kernel {
        return Err(ShapeError::new(format!(
            "input {}x{} shorter than kernel {kernel}",
            x.channels, x.length
        )));
    }
    let out_len = window_count(x.length, kernel, stride);
    let mut out = Vec::with_capacity(out_ch * out_len);
    for o in 0..out_ch {
        let w_o = &weights[o * in_ch * kernel..(o + 1) * in_ch * kernel];
        for t in 0..out_len {
            let start = t * stride;
            let mut acc = CompensatedSum::new(bias[o]);
            for (i, w) in w_o.chunks_exact(kernel).enumerate() {
                for (a, b) in x.row(i)[start..start + kernel].iter().zip(w) {
                    acc.add(a * b);
                }
            }
            out.push(acc.value());
        }
    }
    Tensor1d::new(out_ch, out_len, out)
}

/// Valid cross-correlation; `weights[out][in][k]`.
pub fn conv1d(x: &Tensor1d, weights: &[Vec<Vec<f32>>], bias: &[f32], stride: usize) -> Result<Tensor1d, ShapeError> {
    let kernel = weights.first().and_then(|w| w.first()).map_or(0, Vec::len);
    let mismatch = || {
        ShapeError::new(format!(
            "weights are not [{}][{}][{kernel}] matching input {}x{}",
            bias.len(),
            x.channels,
            x.channels,
            x.length
        ))
    };
    if weights.len() != bias.len() {
        return Err(mismatch());
    }
    let mut flat = Vec::with_capacity(bias.len() * x.channels * kernel);
    for per_out in weights {
        if per_out.len() != x.channels {
            return Err(mismatch());
        }
        for k in per_out {
            if k.len() != kernel {
                return Err(mismatch());
            }
            flat.extend_from_slice(k);
        }
    }
    conv1d_flat(x, &flat, bias, kernel, stride)
}

pub fn leaky_relu(x: &Tensor1d, alpha: f32) -> Tensor1d {
    let mut y = x.clone();
    leaky_relu_in_place(&mut y.data, alpha);
    y
}

pub(crate) fn leaky_relu_in_place(v: &mut [f32], alpha: f32) {
    for e in v {
        if *e < 0.0 {
            *e *= alpha;
        }
    }
}

pub fn max_pool1d(x: &Tensor1d, size: usize, stride: usize) -> Result<Tensor1d, ShapeError> {
    if size == 0 || stride == 0 || x.length < size {
        return Err(ShapeError::new(format!(
            "pool size {size} stride {stride} invalid for input {}x{}",
            x.channels, x.length
        )));
    }
    let out_len = window_count(x.length, size, stride);
    let mut out = Vec::with_capacity(x.channels * out_len);
    for c in 0..x.channels {
        let row = x.row(c);
        out.extend((0..out_len).map(|t| {
            row[t * stride..t * stride + size]
                .iter()
                .copied()
                .fold(f32::NEG_INFINITY, f32::max)
        }));
    }
    Tensor1d::new(x.channels, out_len, out)
}

/// `y = W x + b` with flat row-major `W` of shape `[bias.len()][x.len()]`.
pub(crate) fn dense_flat(x: &[f32], weights: &[f32], bias: &[f32]) -> Result<Vec<f32>, ShapeError> {
    if weights.len() != bias.len() * x.len() {
        return Err(ShapeError::new(format!(
            "dense weights of {} values do not form [{}][{}]",
            weights.len(),
            bias.len(),
            x.len()
        )));
    }
    Ok(weights
        .chunks_exact(x.len().max(1))
        .zip(bias)
        .map(|(row, b)| {
            let mut acc = CompensatedSum::new(*b);
            for (w, v) in row.iter().zip(x) {
                acc.add(w * v);
            }
            acc.value()
        })
        .collect())
}

pub fn dense(x: &[f32], weights: &[Vec<f32>], bias: &[f32]) -> Result<Vec<f32>, ShapeError> {
    if weights.len() != bias.len() || weights.iter().any(|r| r.len() != x.len()) {
        return Err(ShapeError::new(format!(
            "dense weights are not [{}][{}]",
            bias.len(),
            x.len()
        )));
    }
    let flat: Vec<f32> = weights.iter().flatten().copied().collect();
    dense_flat(x, &flat, bias)
}

/// Max-subtracted exponential normalization.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
