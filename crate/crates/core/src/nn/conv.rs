use serde::{Deserialize, Serialize};

use super::{join, Activation, Module, Param};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::gemm;

/// Unit-stride 3-D convolution with odd kernel and "same" padding over
/// volumes stored `[C, T, H, W]`. Time is edge-replicated, so inputs that
/// are constant in time stay constant; space is zero-padded.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: [usize; 3],
    /// `out x (in · kt · kh · kw)`
    pub weight: Param,
    pub bias: Param,
}

pub struct Conv3dCache {
    cols: Vec<f64>,
    dims: [usize; 3],
}

impl Conv3d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: [usize; 3], rng: &mut Rng) -> Self {
        let fan_in = in_ch * kernel.iter().product::<usize>();
        Conv3d {
            in_ch,
            out_ch,
            kernel,
            weight: Param::normal(&[out_ch, fan_in], 1.0 / (fan_in as f64).sqrt(), rng),
            bias: Param::zeros(&[out_ch]),
        }
    }

    pub fn zeroed(in_ch: usize, out_ch: usize, kernel: [usize; 3]) -> Self {
        let fan_in = in_ch * kernel.iter().product::<usize>();
        Conv3d {
            in_ch,
            out_ch,
            kernel,
            weight: Param::zeros(&[out_ch, fan_in]),
            bias: Param::zeros(&[out_ch]),
        }
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel.iter().product::<usize>()
    }

    fn im2col(&self, x: &[f64], [t, h, w]: [usize; 3]) -> Vec<f64> {
        let [kt, kh, kw] = self.kernel;
        let (pt, ph, pw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
        let vol = t * h * w;
        let mut cols = vec![0.0; self.patch_len() * vol];
        let mut row = 0;
        for c in 0..self.in_ch {
            let src = &x[c * vol..(c + 1) * vol];
            for dt in 0..kt as isize {
                for di in 0..kh as isize {
                    for dj in 0..kw as isize {
                        let dst = &mut cols[row * vol..(row + 1) * vol];
                        for ot in 0..t as isize {
                            let it = (ot + dt - pt).clamp(0, t as isize - 1);
                            for oi in 0..h as isize {
                                let ii = oi + di - ph;
                                if ii < 0 || ii >= h as isize {
                                    continue;
                                }
                                let obase = ((ot as usize * h) + oi as usize) * w;
                                let ibase = ((it as usize * h) + ii as usize) * w;
                                let j0 = (pw - dj).max(0) as usize;
                                let j1 = (w as isize + pw - dj).min(w as isize) as usize;
                                for oj in j0..j1 {
                                    dst[obase + oj] = src[ibase + (oj as isize + dj - pw) as usize];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], [t, h, w]: [usize; 3]) -> Vec<f64> {
        let [kt, kh, kw] = self.kernel;
        let (pt, ph, pw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
        let vol = t * h * w;
        let mut x = vec![0.0; self.in_ch * vol];
        let mut row = 0;
        for c in 0..self.in_ch {
            for dt in 0..kt as isize {
                for di in 0..kh as isize {
                    for dj in 0..kw as isize {
                        let src = &cols[row * vol..(row + 1) * vol];
                        let dst = &mut x[c * vol..(c + 1) * vol];
                        for ot in 0..t as isize {
                            let it = (ot + dt - pt).clamp(0, t as isize - 1);
                            for oi in 0..h as isize {
                                let ii = oi + di - ph;
                                if ii < 0 || ii >= h as isize {
                                    continue;
                                }
                                let obase = ((ot as usize * h) + oi as usize) * w;
                                let ibase = ((it as usize * h) + ii as usize) * w;
                                let j0 = (pw - dj).max(0) as usize;
                                let j1 = (w as isize + pw - dj).min(w as isize) as usize;
                                for oj in j0..j1 {
                                    dst[ibase + (oj as isize + dj - pw) as usize] += src[obase + oj];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
        x
    }

    fn conv(&self, cols: &[f64], vol: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.out_ch * vol];
        for (o, chunk) in y.chunks_mut(vol).enumerate() {
            chunk.fill(self.bias.value[o]);
        }
        gemm(self.out_ch, self.patch_len(), vol, 1.0, &self.weight.value, false, cols, false, 1.0, &mut y);
        y
    }

    pub fn apply(&self, x: &[f64], dims: [usize; 3]) -> Vec<f64> {
        let cols = self.im2col(x, dims);
        self.conv(&cols, dims.iter().product())
    }

    pub fn forward(&self, x: &[f64], dims: [usize; 3]) -> (Vec<f64>, Conv3dCache) {
        let cols = self.im2col(x, dims);
        let y = self.conv(&cols, dims.iter().product());
        (y, Conv3dCache { cols, dims })
    }

    pub fn backward(&mut self, cache: Conv3dCache, dy: &[f64]) -> Vec<f64> {
        let vol: usize = cache.dims.iter().product();
        let pl = self.patch_len();
        gemm(self.out_ch, vol, pl, 1.0, dy, false, &cache.cols, true, 1.0, &mut self.weight.grad);
        for (o, chunk) in dy.chunks(vol).enumerate() {
            self.bias.grad[o] += chunk.iter().sum::<f64>();
        }
        let mut dcols = vec![0.0; pl * vol];
        gemm(pl, self.out_ch, vol, 1.0, &self.weight.value, true, dy, false, 0.0, &mut dcols);
        self.col2im(&dcols, cache.dims)
    }
}

impl Module for Conv3d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Shape of a convolution stack: `widths[0]` input channels, then one
/// output width per layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStackSpec {
    pub kernel: [usize; 3],
    pub widths: Vec<usize>,
}

impl ConvStackSpec {
    /// `layers` convolutions from `input` to `output` channels through `hidden`.
    pub fn uniform(layers: usize, input: usize, hidden: usize, output: usize) -> Self {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
        widths.push(output);
        ConvStackSpec {
            kernel: [3, 3, 3],
            widths,
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers() == 0 || self.kernel.iter().any(|k| k % 2 == 0) || self.widths.contains(&0) {
            return Err(Error::Config(format!("invalid conv stack {self:?}")));
        }
        Ok(())
    }
}

/// Convolutions with SiLU between layers and a zero-initialized last layer,
/// so a fresh stack maps every input to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack {
    pub spec: ConvStackSpec,
    pub layers: Vec<Conv3d>,
}

pub struct ConvStackCache {
    convs: Vec<Conv3dCache>,
    pre_act: Vec<Vec<f64>>,
}

impl ConvStack {
    pub fn new(spec: ConvStackSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let n = spec.layers();
        let layers = (0..n)
            .map(|l| {
                let (i, o) = (spec.widths[l], spec.widths[l + 1]);
                if l + 1 == n {
                    Conv3d::zeroed(i, o, spec.kernel)
                } else {
                    Conv3d::new(i, o, spec.kernel, rng)
                }
            })
            .collect();
        Ok(ConvStack { spec, layers })
    }

    pub fn in_ch(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn out_ch(&self) -> usize {
        *self.spec.widths.last().unwrap()
    }

    pub fn apply(&self, x: &[f64], dims: [usize; 3]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = self.layers.len();
        for (l, conv) in self.layers.iter().enumerate() {
            h = conv.apply(&h, dims);
            if l + 1 < n {
                h = Activation::Silu.forward(&h);
            }
        }
        h
    }

    pub fn forward(&self, x: &[f64], dims: [usize; 3]) -> (Vec<f64>, ConvStackCache) {
        let mut h = x.to_vec();
        let n = self.layers.len();
        let mut convs = Vec::with_capacity(n);
        let mut pre_act = Vec::with_capacity(n);
        for (l, conv) in self.layers.iter().enumerate() {
            let (y, c) = conv.forward(&h, dims);
            convs.push(c);
            if l + 1 < n {
                h = Activation::Silu.forward(&y);
                pre_act.push(y);
            } else {
                h = y;
            }
        }
        (h, ConvStackCache { convs, pre_act })
    }

    pub fn backward(&mut self, cache: ConvStackCache, dy: &[f64]) -> Vec<f64> {
        let mut g = dy.to_vec();
        let mut pre_act = cache.pre_act;
        for (l, c) in cache.convs.into_iter().enumerate().rev() {
            if l + 1 < self.layers.len() {
                let y = pre_act.pop().expect("one pre-activation per hidden layer");
                g = Activation::Silu.backward(&y, &g);
            }
            g = self.layers[l].backward(c, &g);
        }
        g
    }
}

impl Module for ConvStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("conv{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("conv{i}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Direct convolution straight from the definition.
    fn direct(conv: &Conv3d, x: &[f64], [t, h, w]: [usize; 3]) -> Vec<f64> {
        let [kt, kh, kw] = conv.kernel;
        let mut y = vec![0.0; conv.out_ch * t * h * w];
        for o in 0..conv.out_ch {
            for ot in 0..t {
                for oi in 0..h {
                    for oj in 0..w {
                        let mut s = conv.bias.value[o];
                        for c in 0..conv.in_ch {
                            for dt in 0..kt {
                                for di in 0..kh {
                                    for dj in 0..kw {
                                        let it = (ot as isize + dt as isize - (kt / 2) as isize).clamp(0, t as isize - 1);
                                        let ii = oi as isize + di as isize - (kh / 2) as isize;
                                        let ij = oj as isize + dj as isize - (kw / 2) as isize;
                                        if ii < 0 || ij < 0 || ii >= h as isize || ij >= w as isize {
                                            continue;
                                        }
                                        let widx = ((c * kt + dt) * kh + di) * kw + dj;
                                        let xv = x[((c * t + it as usize) * h + ii as usize) * w + ij as usize];
                                        s += conv.weight.value[o * conv.patch_len() + widx] * xv;
                                    }
                                }
                            }
                        }
                        y[((o * t + ot) * h + oi) * w + oj] = s;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn im2col_conv_matches_direct_definition() {
        let mut r = rng::seeded(4);
        let mut conv = Conv3d::new(2, 3, [3, 3, 3], &mut r);
        crate::rng::fill_normal(&mut r, &mut conv.bias.value);
        let dims = [3, 4, 5];
        let mut x = vec![0.0; 2 * 60];
        crate::rng::fill_normal(&mut r, &mut x);
        let a = conv.apply(&x, dims);
        let b = direct(&conv, &x, dims);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_input_gradient_matches_finite_differences() {
        let mut r = rng::seeded(5);
        let mut conv = Conv3d::new(2, 2, [3, 3, 3], &mut r);
        let dims = [2, 3, 3];
        let mut x = vec![0.0; 2 * 18];
        crate::rng::fill_normal(&mut r, &mut x);
        let mut wts = vec![0.0; 2 * 18];
        crate::rng::fill_normal(&mut r, &mut wts);
        let loss = |c: &Conv3d, x: &[f64]| -> f64 {
            c.apply(x, dims).iter().zip(&wts).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = conv.forward(&x, dims);
        let dx = conv.backward(cache, &wts);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn fresh_stack_outputs_zero() {
        let mut r = rng::seeded(6);
        let stack = ConvStack::new(ConvStackSpec::uniform(8, 1, 4, 1), &mut r).unwrap();
        assert_eq!(stack.layers.len(), 8);
        let x: Vec<f64> = (0..2 * 9).map(|i| i as f64).collect();
        assert!(stack.apply(&x, [2, 3, 3]).iter().all(|&v| v == 0.0));
    }
}
