use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{layer_params, Activation, LayerSpec, NetworkSpec, Shape};
use crate::error::{check_len, invalid, Result};

#[derive(Debug, Clone, Copy)]
enum Op {
    Dense {
        n_in: usize,
        n_out: usize,
        act: Activation,
    },
    Conv {
        c_in: usize,
        c_out: usize,
        ny: usize,
        nx: usize,
        k: usize,
        act: Activation,
    },
    Identity,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    op: Op,
    offset: usize,
    n_params: usize,
}

/// A validated spec with its parameter layout.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    n_params: usize,
    n_in: usize,
    n_out: usize,
}

impl Network {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut prev = Shape::Field(spec.input);
        let mut offset = 0;
        let mut layers = Vec::with_capacity(shapes.len());
        for (l, &shape) in spec.layers.iter().zip(&shapes) {
            let n_params = layer_params(l, prev);
            let op = match (*l, prev, shape) {
                (LayerSpec::Dense { activation, .. }, p, s) => Op::Dense {
                    n_in: p.size(),
                    n_out: s.size(),
                    act: activation,
                },
                (
                    LayerSpec::Conv2d {
                        kernel, activation, ..
                    },
                    Shape::Field((c_in, ny, nx)),
                    Shape::Field((c_out, _, _)),
                ) => Op::Conv {
                    c_in,
                    c_out,
                    ny,
                    nx,
                    k: kernel,
                    act: activation,
                },
                _ => Op::Identity,
            };
            layers.push(Layer { op, offset, n_params });
            offset += n_params;
            prev = shape;
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
            n_params: offset,
            n_in: Shape::Field(spec.input).size(),
            n_out: Shape::Field(spec.output).size(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    pub fn input_size(&self) -> usize {
        self.n_in
    }

    pub fn output_size(&self) -> usize {
        self.n_out
    }

    /// `(weights, biases)` ranges into the flat parameter vector per layer.
    pub fn layer_slices(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        self.layers
            .iter()
            .map(|l| {
                let n_bias = match l.op {
                    Op::Dense { n_out, .. } => n_out,
                    Op::Conv { c_out, .. } => c_out,
                    Op::Identity => 0,
                };
                let w_end = l.offset + l.n_params - n_bias;
                (l.offset..w_end, w_end..l.offset + l.n_params)
            })
            .collect()
    }

    /// Uniform fan-scaled weights `U(±√(6 / (fan_in + fan_out)))`, zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.n_params];
        for (layer, (w, _)) in self.layers.iter().zip(self.layer_slices()) {
            let (fan_in, fan_out) = match layer.op {
                Op::Dense { n_in, n_out, .. } => (n_in, n_out),
                Op::Conv { c_in, c_out, k, .. } => (c_in * k * k, c_out * k * k),
                Op::Identity => continue,
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p[w] {
                *v = rng.random_range(-limit..limit);
            }
        }
        p
    }

    /// Post-activation outputs of every layer, input first.
    fn activations(&self, params: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.layers {
            let x = acts.last().unwrap();
            let p = &params[layer.offset..layer.offset + layer.n_params];
            let y = match layer.op {
                Op::Dense { n_in, n_out, act } => {
                    let (w, b) = p.split_at(n_in * n_out);
                    let mut y = b.to_vec();
                    for (o, yo) in y.iter_mut().enumerate() {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    }
                    activate(&mut y, act);
                    y
                }
                Op::Conv {
                    c_in,
                    c_out,
                    ny,
                    nx,
                    k,
                    act,
                } => {
                    let mut y = conv_forward(x, p, c_in, c_out, ny, nx, k);
                    activate(&mut y, act);
                    y
                }
                Op::Identity => x.clone(),
            };
            acts.push(y);
        }
        acts
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_params, params.len())?;
        check_len(self.n_in, input.len())?;
        Ok(self.activations(params, input).pop().unwrap())
    }

    /// Adds the gradient of `½‖f(x) − t‖² · scale` to `grad` and returns the
    /// squared error.
    fn accumulate(&self, params: &[f64], input: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let acts = self.activations(params, input);
        let out = acts.last().unwrap();
        let mut delta: Vec<f64> = out.iter().zip(target).map(|(o, t)| o - t).collect();
        let sq = delta.iter().map(|d| d * d).sum::<f64>();
        delta.iter_mut().for_each(|d| *d *= scale);
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts[k];
            let y = &acts[k + 1];
            let p = &params[layer.offset..layer.offset + layer.n_params];
            let g = &mut grad[layer.offset..layer.offset + layer.n_params];
            delta = match layer.op {
                Op::Dense { n_in, n_out, act } => {
                    deactivate(&mut delta, y, act);
                    let (w, _) = p.split_at(n_in * n_out);
                    let (gw, gb) = g.split_at_mut(n_in * n_out);
                    let mut dx = vec![0.0; n_in];
                    for o in 0..n_out {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        let row = &w[o * n_in..(o + 1) * n_in];
                        let grow = &mut gw[o * n_in..(o + 1) * n_in];
                        for i in 0..n_in {
                            grow[i] += d * x[i];
                            dx[i] += d * row[i];
                        }
                    }
                    dx
                }
                Op::Conv {
                    c_in,
                    c_out,
                    ny,
                    nx,
                    k,
                    act,
                } => {
                    deactivate(&mut delta, y, act);
                    conv_backward(x, p, &delta, g, c_in, c_out, ny, nx, k)
                }
                Op::Identity => delta,
            };
        }
        sq
    }

    /// Mean squared error over all samples and components, and its gradient.
    pub fn loss_and_grads(&self, params: &[f64], inputs: &[&[f64]], targets: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
        check_len(self.n_params, params.len())?;
        check_len(inputs.len(), targets.len())?;
        if inputs.is_empty() {
            return Err(invalid("batch", "must not be empty"));
        }
        let denom = (inputs.len() * self.n_out) as f64;
        let mut grad = vec![0.0; self.n_params];
        let mut sq = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            check_len(self.n_in, x.len())?;
            check_len(self.n_out, t.len())?;
            sq += self.accumulate(params, x, t, 2.0 / denom, &mut grad);
        }
        Ok((sq / denom, grad))
    }

    pub fn loss(&self, params: &[f64], inputs: &[&[f64]], targets: &[&[f64]]) -> Result<f64> {
        check_len(inputs.len(), targets.len())?;
        if inputs.is_empty() {
            return Err(invalid("batch", "must not be empty"));
        }
        let mut sq = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            check_len(self.n_out, t.len())?;
            let y = self.forward(params, x)?;
            sq += y.iter().zip(*t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        Ok(sq / (inputs.len() * self.n_out) as f64)
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

fn activate(y: &mut [f64], act: Activation) {
    if act == Activation::Relu {
        y.iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

fn deactivate(delta: &mut [f64], y: &[f64], act: Activation) {
    if act == Activation::Relu {
        for (d, v) in delta.iter_mut().zip(y) {
            if *v <= 0.0 {
                *d = 0.0;
            }
        }
    }
}

/// Source column and row for kernel tap `(ky, kx)` at output `(j, i)`;
/// `None` in the zero padding beyond the y edges.
#[inline]
fn tap(j: usize, i: usize, ky: usize, kx: usize, half: usize, ny: usize, nx: usize) -> Option<(usize, usize)> {
    let jj = j + ky;
    if jj < half || jj - half >= ny {
        return None;
    }
    let ii = (i + nx + kx - half) % nx;
    Some((jj - half, ii))
}

fn conv_forward(x: &[f64], p: &[f64], c_in: usize, c_out: usize, ny: usize, nx: usize, k: usize) -> Vec<f64> {
    let half = k / 2;
    let n_w = c_out * c_in * k * k;
    let (w, b) = p.split_at(n_w);
    let plane = ny * nx;
    let mut y = vec![0.0; c_out * plane];
    for f in 0..c_out {
        let out = &mut y[f * plane..(f + 1) * plane];
        out.iter_mut().for_each(|v| *v = b[f]);
        for c in 0..c_in {
            let src = &x[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((f * c_in + c) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for j in 0..ny {
                        for i in 0..nx {
                            if let Some((sj, si)) = tap(j, i, ky, kx, half, ny, nx) {
                                out[j * nx + i] += wv * src[sj * nx + si];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    p: &[f64],
    delta: &[f64],
    g: &mut [f64],
    c_in: usize,
    c_out: usize,
    ny: usize,
    nx: usize,
    k: usize,
) -> Vec<f64> {
    let half = k / 2;
    let n_w = c_out * c_in * k * k;
    let (w, _) = p.split_at(n_w);
    let (gw, gb) = g.split_at_mut(n_w);
    let plane = ny * nx;
    let mut dx = vec![0.0; c_in * plane];
    for f in 0..c_out {
        let d = &delta[f * plane..(f + 1) * plane];
        gb[f] += d.iter().sum::<f64>();
        for c in 0..c_in {
            let src = &x[c * plane..(c + 1) * plane];
            let dsrc = &mut dx[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wi = ((f * c_in + c) * k + ky) * k + kx;
                    let wv = w[wi];
                    let mut acc = 0.0;
                    for j in 0..ny {
                        for i in 0..nx {
                            if let Some((sj, si)) = tap(j, i, ky, kx, half, ny, nx) {
                                let dv = d[j * nx + i];
                                acc += dv * src[sj * nx + si];
                                dsrc[sj * nx + si] += wv * dv;
                            }
                        }
                    }
                    gw[wi] += acc;
                }
            }
        }
    }
    dx
}
