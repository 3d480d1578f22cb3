use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Architecture description of one layer; stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Flatten,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    Dense(Dense),
    Relu,
    Flatten,
}

/// `[B, Cin, L] -> [B, Cout, (L - K) / S + 1]`, no padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    /// `[Cout, Cin, K]`
    pub weight: Tensor,
    /// `[Cout]`
    pub bias: Tensor,
    pub stride: usize,
}

/// `[B, in] -> [B, out]`
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

impl Layer {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(spec: &LayerSpec, rng: &mut impl Rng) -> Result<Self> {
        Ok(match *spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::Config(format!("degenerate conv1d {spec:?}")));
                }
                let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
                Layer::Conv1d(Conv1d {
                    weight: uniform(&[out_channels, in_channels, kernel], bound, rng),
                    bias: uniform(&[out_channels], bound, rng),
                    stride,
                })
            }
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::Config(format!("degenerate dense {spec:?}")));
                }
                let bound = 1.0 / (inputs as f64).sqrt();
                Layer::Dense(Dense {
                    weight: uniform(&[outputs, inputs], bound, rng),
                    bias: uniform(&[outputs], bound, rng),
                })
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Flatten => Layer::Flatten,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv1d(c) => LayerSpec::Conv1d {
                in_channels: c.weight.shape()[1],
                out_channels: c.weight.shape()[0],
                kernel: c.weight.shape()[2],
                stride: c.stride,
            },
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.weight.shape()[1],
                outputs: d.weight.shape()[0],
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Flatten => LayerSpec::Flatten,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Relu | Layer::Flatten => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Relu | Layer::Flatten => vec![],
        }
    }

    /// Output shape for an input shape, or the expected input shape on
    /// mismatch.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            Layer::Conv1d(c) => {
                let (cout, cin, k) = (c.weight.shape()[0], c.weight.shape()[1], c.weight.shape()[2]);
                if input.len() != 3 || input[1] != cin || input[2] < k {
                    return Err(format!("[B, {cin}, >= {k}]"));
                }
                Ok(vec![input[0], cout, (input[2] - k) / c.stride + 1])
            }
            Layer::Dense(d) => {
                let (out, inp) = (d.weight.shape()[0], d.weight.shape()[1]);
                if input.len() != 2 || input[1] != inp {
                    return Err(format!("[B, {inp}]"));
                }
                Ok(vec![input[0], out])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input[0], input[1..].iter().product()]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv1d(c) => conv_forward(c, x),
            Layer::Dense(d) => dense_forward(d, x),
            Layer::Relu => {
                let data = x.data().iter().map(|v| v.max(0.0)).collect();
                Tensor::new(x.shape(), data).expect("same shape")
            }
            Layer::Flatten => {
                let b = x.batch();
                x.clone().reshape(&[b, x.row_len()]).expect("same length")
            }
        }
    }

    /// Returns (input gradient, parameter gradients in [`Layer::params`] order).
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> (Tensor, Vec<Tensor>) {
        match self {
            Layer::Conv1d(c) => conv_backward(c, x, grad_out),
            Layer::Dense(d) => dense_backward(d, x, grad_out),
            Layer::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(xi, g)| if *xi > 0.0 { *g } else { 0.0 })
                    .collect();
                (Tensor::new(x.shape(), data).expect("same shape"), vec![])
            }
            Layer::Flatten => (
                grad_out.clone().reshape(x.shape()).expect("same length"),
                vec![],
            ),
        }
    }
}

fn dense_forward(d: &Dense, x: &Tensor) -> Tensor {
    let (out, inp) = (d.weight.shape()[0], d.weight.shape()[1]);
    let b = x.batch();
    let w = d.weight.data();
    let mut y = Vec::with_capacity(b * out);
    for r in 0..b {
        let xr = x.row_slice(r);
        for o in 0..out {
            let wr = &w[o * inp..(o + 1) * inp];
            let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
            y.push(dot + d.bias.data()[o]);
        }
    }
    Tensor::new(&[b, out], y).expect("dense output shape")
}

fn dense_backward(d: &Dense, x: &Tensor, g: &Tensor) -> (Tensor, Vec<Tensor>) {
    let (out, inp) = (d.weight.shape()[0], d.weight.shape()[1]);
    let w = d.weight.data();
    let mut gw = Tensor::zeros(&[out, inp]);
    let mut gb = Tensor::zeros(&[out]);
    let mut gx = Tensor::zeros(x.shape());
    for r in 0..x.batch() {
        let xr = x.row_slice(r);
        let gr = g.row_slice(r);
        let gxr = &mut gx.data_mut()[r * inp..(r + 1) * inp];
        for o in 0..out {
            let go = gr[o];
            if go == 0.0 {
                continue;
            }
            gb.data_mut()[o] += go;
            let wr = &w[o * inp..(o + 1) * inp];
            for i in 0..inp {
                gxr[i] += go * wr[i];
            }
            let gwr = &mut gw.data_mut()[o * inp..(o + 1) * inp];
            for i in 0..inp {
                gwr[i] += go * xr[i];
            }
        }
    }
    (gx, vec![gw, gb])
}

fn conv_forward(c: &Conv1d, x: &Tensor) -> Tensor {
    let (cout, cin, k) = (c.weight.shape()[0], c.weight.shape()[1], c.weight.shape()[2]);
    let (b, len) = (x.shape()[0], x.shape()[2]);
    let lout = (len - k) / c.stride + 1;
    let w = c.weight.data();
    let xd = x.data();
    let mut y = vec![0.0; b * cout * lout];
    for r in 0..b {
        for co in 0..cout {
            let yrow = &mut y[(r * cout + co) * lout..(r * cout + co + 1) * lout];
            yrow.iter_mut().for_each(|v| *v = c.bias.data()[co]);
            for ci in 0..cin {
                let xrow = &xd[(r * cin + ci) * len..(r * cin + ci + 1) * len];
                let wk = &w[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                for (t, yv) in yrow.iter_mut().enumerate() {
                    let base = t * c.stride;
                    *yv += wk.iter().zip(&xrow[base..base + k]).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }
    Tensor::new(&[b, cout, lout], y).expect("conv output shape")
}

fn conv_backward(c: &Conv1d, x: &Tensor, g: &Tensor) -> (Tensor, Vec<Tensor>) {
    let (cout, cin, k) = (c.weight.shape()[0], c.weight.shape()[1], c.weight.shape()[2]);
    let (b, len) = (x.shape()[0], x.shape()[2]);
    let lout = g.shape()[2];
    let w = c.weight.data();
    let xd = x.data();
    let gd = g.data();
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; cout];
    let mut gx = vec![0.0; xd.len()];
    for r in 0..b {
        for co in 0..cout {
            let grow = &gd[(r * cout + co) * lout..(r * cout + co + 1) * lout];
            gb[co] += grow.iter().sum::<f64>();
            for ci in 0..cin {
                let xoff = (r * cin + ci) * len;
                let woff = (co * cin + ci) * k;
                for (t, gv) in grow.iter().enumerate() {
                    let base = xoff + t * c.stride;
                    for j in 0..k {
                        gw[woff + j] += gv * xd[base + j];
                        gx[base + j] += gv * w[woff + j];
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape(), gx).expect("input shape"),
        vec![
            Tensor::new(c.weight.shape(), gw).expect("weight shape"),
            Tensor::new(&[cout], gb).expect("bias shape"),
        ],
    )
}
