//! Fully connected layers over a shared flat parameter buffer.
//!
//! Every layer stores its weights row-major (`output x input`) followed by
//! its bias at a fixed offset, so a whole model is one `Vec<f64>` and its
//! gradient is another vector of the same length.

use rand::{Rng, RngCore};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub offset: usize,
}

impl Dense {
    pub fn param_count(&self) -> usize {
        self.output * (self.input + 1)
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.output * self.input
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.output * self.input;
        start..start + self.output
    }

    /// `y[r] = W x[r] + b` for each of `rows` inputs.
    fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64], rows: usize) {
        let w = &p[self.weight_range()];
        let b = &p[self.bias_range()];
        for r in 0..rows {
            let xr = &x[r * self.input..(r + 1) * self.input];
            let yr = &mut y[r * self.output..(r + 1) * self.output];
            for (o, y) in yr.iter_mut().enumerate() {
                let row = &w[o * self.input..(o + 1) * self.input];
                *y = b[o] + dot(row, xr);
            }
        }
    }

    /// Accumulates parameter gradients into `g` and, if given, writes the
    /// input gradient into `dx`.
    fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        x: &[f64],
        dy: &[f64],
        dx: Option<&mut [f64]>,
        rows: usize,
    ) {
        let (gw, gb) = g[self.offset..self.offset + self.param_count()]
            .split_at_mut(self.output * self.input);
        for r in 0..rows {
            let xr = &x[r * self.input..(r + 1) * self.input];
            let dyr = &dy[r * self.output..(r + 1) * self.output];
            for (o, &d) in dyr.iter().enumerate() {
                if d != 0.0 {
                    gb[o] += d;
                    axpy(d, xr, &mut gw[o * self.input..(o + 1) * self.input]);
                }
            }
        }
        if let Some(dx) = dx {
            let w = &p[self.weight_range()];
            dx.fill(0.0);
            for r in 0..rows {
                let dyr = &dy[r * self.output..(r + 1) * self.output];
                let dxr = &mut dx[r * self.input..(r + 1) * self.input];
                for (o, &d) in dyr.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, &w[o * self.input..(o + 1) * self.input], dxr);
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Rectified hidden layers; the output layer is linear unless `relu_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub relu_out: bool,
}

/// Activations of a batched forward pass; `acts[0]` is the input.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    pub rows: usize,
    pub acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds the input at least")
    }
}

impl Mlp {
    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers.last().expect("non-empty").output
    }

    fn rectified(&self, k: usize) -> bool {
        k + 1 < self.layers.len() || self.relu_out
    }

    pub fn forward(&self, p: &[f64], x: Vec<f64>, rows: usize) -> MlpCache {
        debug_assert_eq!(x.len(), rows * self.input());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; rows * layer.output];
            layer.forward(p, &acts[k], &mut y, rows);
            if self.rectified(k) {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        MlpCache { rows, acts }
    }

    /// Backpropagates `dout` (consumed as scratch) and returns the input gradient.
    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &MlpCache, mut dout: Vec<f64>) -> Vec<f64> {
        for (k, layer) in self.layers.iter().enumerate().rev() {
            if self.rectified(k) {
                for (d, &a) in dout.iter_mut().zip(&cache.acts[k + 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let mut dx = vec![0.0; cache.rows * layer.input];
            layer.backward(p, g, &cache.acts[k], &dout, Some(&mut dx), cache.rows);
            dout = dx;
        }
        dout
    }

    /// Fan-in scaled uniform weights, zero biases; the last layer is zeroed
    /// when `zero_last`.
    pub fn init(&self, p: &mut [f64], rng: &mut dyn RngCore, zero_last: bool) {
        for (k, layer) in self.layers.iter().enumerate() {
            let last = k + 1 == self.layers.len();
            let bound = (6.0 / layer.input.max(1) as f64).sqrt();
            for w in &mut p[layer.weight_range()] {
                *w = if last && zero_last {
                    0.0
                } else {
                    rng.gen_range(-bound..=bound)
                };
            }
            p[layer.bias_range()].fill(0.0);
        }
    }
}

/// Hands out consecutive parameter ranges.
#[derive(Debug, Default)]
pub struct Layout {
    size: usize,
}

impl Layout {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dense(&mut self, input: usize, output: usize) -> Dense {
        let d = Dense {
            input,
            output,
            offset: self.size,
        };
        self.size += d.param_count();
        d
    }

    /// `dims = [input, hidden..., output]`.
    pub fn mlp(&mut self, dims: &[usize], relu_out: bool) -> Mlp {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims.windows(2).map(|w| self.dense(w[0], w[1])).collect();
        Mlp { layers, relu_out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(m: &Mlp, p: &[f64], x: &[f64], rows: usize, c: &[f64]) -> f64 {
        let out = m.forward(p, x.to_vec(), rows);
        out.output().iter().zip(c).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn batched_gradient_matches_finite_differences() {
        let mut layout = Layout::default();
        let m = layout.mlp(&[3, 5, 4, 2], false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = vec![0.0; layout.size()];
        m.init(&mut p, &mut rng, false);
        for v in p.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
        let rows = 3;
        let x: Vec<f64> = (0..rows * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..rows * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cache = m.forward(&p, x.clone(), rows);
        let mut g = vec![0.0; p.len()];
        let dx = m.backward(&p, &mut g, &cache, c.clone());
        let h = 1e-6;
        for k in 0..p.len() {
            let mut q = p.clone();
            q[k] += h;
            let up = loss(&m, &q, &x, rows, &c);
            q[k] -= 2.0 * h;
            let down = loss(&m, &q, &x, rows, &c);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
        for k in 0..x.len() {
            let mut y = x.clone();
            y[k] += h;
            let up = loss(&m, &p, &y, rows, &c);
            y[k] -= 2.0 * h;
            let down = loss(&m, &p, &y, rows, &c);
            assert!(((up - down) / (2.0 * h) - dx[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_last_layer_gives_zero_output() {
        let mut layout = Layout::default();
        let m = layout.mlp(&[4, 8, 3], false);
        let mut p = vec![0.0; layout.size()];
        m.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0), true);
        let out = m.forward(&p, vec![1.0, -2.0, 0.5, 3.0], 1);
        assert_eq!(out.output(), &[0.0, 0.0, 0.0]);
    }
}
