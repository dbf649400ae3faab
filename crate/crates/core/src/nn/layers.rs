//! Layers with explicit backward passes. Activations are `[batch, ...]`
//! tensors; samples in a batch are processed in parallel and parameter
//! gradients are reduced in sample order, so results do not depend on the
//! number of worker threads.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::tensor::{Parameters, Tensor};

const K: usize = 3;

/// Sum of per-sample gradient vectors, in sample order.
fn ordered_sum(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

/// Fan-in scaled uniform init, `U(−b, b)` with `b = sqrt(6 / fan_in)`.
fn kaiming_uniform<R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// 3×3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Conv2d { weight: Tensor::zeros(&[out_channels, in_channels, K, K]), bias: Tensor::zeros(&[out_channels]) }
    }

    pub fn init<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let n = out_channels * in_channels * K * K;
        let weight = Tensor::from_vec(&[out_channels, in_channels, K, K], kaiming_uniform(n, in_channels * K * K, rng))
            .expect("consistent shape");
        Conv2d { weight, bias: Tensor::zeros(&[out_channels]) }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize, usize)> {
        input.expect_rank(4, "conv2d")?;
        let s = input.shape();
        if s[1] != self.in_channels() {
            return Err(Error::shape(format!("conv2d expects {} input channels, got {}", self.in_channels(), s[1])));
        }
        Ok((s[0], s[2], s[3]))
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (b, h, w) = self.check_input(input)?;
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let mut out = vec![0.0; b * cout * h * w];
        let wt = self.weight.data();
        let bias = self.bias.data();
        out.par_chunks_mut(cout * h * w)
            .zip(input.data().par_chunks(cin * h * w))
            .for_each(|(o, x)| conv_sample(x, wt, bias, o, cin, cout, h, w));
        Tensor::from_vec(&[b, cout, h, w], out)
    }

    /// Returns the input gradient and the parameter gradients.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Conv2d)> {
        let (b, h, w) = self.check_input(input)?;
        let (cin, cout) = (self.in_channels(), self.out_channels());
        if grad_out.shape() != [b, cout, h, w] {
            return Err(Error::shape(format!("conv2d upstream gradient shape {:?}", grad_out.shape())));
        }
        let wt = self.weight.data();
        let plane_in = cin * h * w;
        let plane_out = cout * h * w;
        let nparam = wt.len() + cout;
        let mut grad_in = vec![0.0; b * plane_in];
        let parts: Vec<Vec<f64>> = grad_in
            .par_chunks_mut(plane_in)
            .zip(input.data().par_chunks(plane_in))
            .zip(grad_out.data().par_chunks(plane_out))
            .map(|((gx, x), g)| {
                let mut gp = vec![0.0; nparam];
                conv_sample_backward(x, wt, g, gx, &mut gp, cin, cout, h, w);
                gp
            })
            .collect();
        let gp = ordered_sum(parts, nparam);
        let grads = Conv2d {
            weight: Tensor::from_vec(self.weight.shape(), gp[..wt.len()].to_vec())?,
            bias: Tensor::from_vec(&[cout], gp[wt.len()..].to_vec())?,
        };
        Ok((Tensor::from_vec(input.shape(), grad_in)?, grads))
    }
}

/// Valid output range `lo..hi` for offset `d` ∈ {−1, 0, 1} on an axis of length n.
#[inline]
fn span(d: isize, n: usize) -> (usize, usize) {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { n.saturating_sub(1) } else { n };
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
fn conv_sample(x: &[f64], wt: &[f64], bias: &[f64], out: &mut [f64], cin: usize, cout: usize, h: usize, w: usize) {
    let plane = h * w;
    for o in 0..cout {
        let op = &mut out[o * plane..(o + 1) * plane];
        op.fill(bias[o]);
        for c in 0..cin {
            let xp = &x[c * plane..(c + 1) * plane];
            for ky in 0..K {
                let dy = ky as isize - 1;
                let (y0, y1) = span(dy, h);
                for kx in 0..K {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(dx, w);
                    let wv = wt[((o * cin + c) * K + ky) * K + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut op[y * w + x0..y * w + x1];
                        let srow = &xp[sy * w + (x0 as isize + dx) as usize..];
                        for (ov, sv) in orow.iter_mut().zip(srow) {
                            *ov += wv * sv;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_sample_backward(
    x: &[f64],
    wt: &[f64],
    g: &[f64],
    gx: &mut [f64],
    gp: &mut [f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
) {
    let plane = h * w;
    let nw = wt.len();
    for o in 0..cout {
        let gop = &g[o * plane..(o + 1) * plane];
        gp[nw + o] += gop.iter().sum::<f64>();
        for c in 0..cin {
            let xp = &x[c * plane..(c + 1) * plane];
            let gxp = &mut gx[c * plane..(c + 1) * plane];
            for ky in 0..K {
                let dy = ky as isize - 1;
                let (y0, y1) = span(dy, h);
                for kx in 0..K {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(dx, w);
                    let widx = ((o * cin + c) * K + ky) * K + kx;
                    let wv = wt[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = sy * w + (x0 as isize + dx) as usize;
                        let grow = &gop[y * w + x0..y * w + x1];
                        let n = grow.len();
                        let srow = &xp[sx0..sx0 + n];
                        let gxrow = &mut gxp[sx0..sx0 + n];
                        for ((gv, sv), gxv) in grow.iter().zip(srow).zip(gxrow.iter_mut()) {
                            acc += gv * sv;
                            *gxv += wv * gv;
                        }
                    }
                    gp[widx] += acc;
                }
            }
        }
    }
}

impl Parameters for Conv2d {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// Passes the upstream gradient where the input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu gradient shape mismatch"));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Output of a 2×2/stride-2 max pool together with the flat input index each
/// output value came from.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// 2×2 max pooling with stride 2; a trailing odd row/column is dropped.
/// Ties resolve to the first element of the window in row-major order.
pub fn maxpool2(input: &Tensor) -> Result<Pooled> {
    input.expect_rank(4, "maxpool2")?;
    let s = input.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("maxpool2 needs spatial size >= 2, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..b * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled { output: Tensor::from_vec(&[b, c, oh, ow], out)?, argmax })
}

pub fn maxpool2_backward(input_shape: &[usize], pooled: &Pooled, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != pooled.output.shape() {
        return Err(Error::shape("maxpool2 gradient shape mismatch"));
    }
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&idx, &v) in pooled.argmax.iter().zip(grad_out.data()) {
        gd[idx] += v;
    }
    Ok(g)
}

/// Global average pooling `[b, c, h, w] → [b, c]`.
pub fn gap(input: &Tensor) -> Result<Tensor> {
    input.expect_rank(4, "gap")?;
    let s = input.shape();
    let plane = s[2] * s[3];
    let data = input.data().chunks_exact(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
    Tensor::from_vec(&[s[0], s[1]], data)
}

pub fn gap_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if input_shape.len() != 4 || grad_out.shape() != [input_shape[0], input_shape[1]] {
        return Err(Error::shape("gap gradient shape mismatch"));
    }
    let plane = input_shape[2] * input_shape[3];
    let data = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / plane as f64, plane))
        .collect();
    Tensor::from_vec(input_shape, data)
}

/// Fully connected layer `y = W x + b`, `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear { weight: Tensor::zeros(&[outputs, inputs]), bias: Tensor::zeros(&[outputs]) }
    }

    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let weight = Tensor::from_vec(&[outputs, inputs], kaiming_uniform(outputs * inputs, inputs, rng))
            .expect("consistent shape");
        Linear { weight, bias: Tensor::zeros(&[outputs]) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        input.expect_rank(2, "linear")?;
        if input.shape()[1] != self.inputs() {
            return Err(Error::shape(format!("linear expects {} features, got {}", self.inputs(), input.shape()[1])));
        }
        Ok(input.shape()[0])
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let b = self.check_input(input)?;
        let (ni, no) = (self.inputs(), self.outputs());
        let w = self.weight.data();
        let mut out = Vec::with_capacity(b * no);
        for x in input.data().chunks_exact(ni) {
            for o in 0..no {
                let row = &w[o * ni..(o + 1) * ni];
                out.push(self.bias.data()[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        Tensor::from_vec(&[b, no], out)
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Linear)> {
        let b = self.check_input(input)?;
        let (ni, no) = (self.inputs(), self.outputs());
        if grad_out.shape() != [b, no] {
            return Err(Error::shape(format!("linear upstream gradient shape {:?}", grad_out.shape())));
        }
        let w = self.weight.data();
        let mut gx = vec![0.0; b * ni];
        let mut gw = vec![0.0; no * ni];
        let mut gb = vec![0.0; no];
        for ((x, g), gxs) in input.data().chunks_exact(ni).zip(grad_out.data().chunks_exact(no)).zip(gx.chunks_exact_mut(ni)) {
            for o in 0..no {
                let go = g[o];
                gb[o] += go;
                let row = &w[o * ni..(o + 1) * ni];
                let grow = &mut gw[o * ni..(o + 1) * ni];
                for i in 0..ni {
                    grow[i] += go * x[i];
                    gxs[i] += go * row[i];
                }
            }
        }
        let grads = Linear { weight: Tensor::from_vec(&[no, ni], gw)?, bias: Tensor::from_vec(&[no], gb)? };
        Ok((Tensor::from_vec(&[b, ni], gx)?, grads))
    }
}

impl Parameters for Linear {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}
