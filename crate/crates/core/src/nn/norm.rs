use super::{join, Module, Param};

const EPS: f64 = 1e-6;

/// Row-wise layer normalization with a learned affine.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub dim: usize,
    pub gamma: Param,
    pub beta: Param,
}

pub struct LayerNormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            dim,
            gamma: Param::filled(&[dim], 1.0),
            beta: Param::zeros(&[dim]),
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let d = self.dim;
        let rows = x.len() / d;
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + EPS).sqrt();
            rstd[r] = s;
            for c in 0..d {
                let xh = (row[c] - mean) * s;
                xhat[r * d + c] = xh;
                y[r * d + c] = self.gamma.value[c] * xh + self.beta.value[c];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&mut self, cache: LayerNormCache, dy: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let rows = cache.rstd.len();
        let mut dx = vec![0.0; dy.len()];
        let mut dxhat = vec![0.0; d];
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let g = &dy[r * d..(r + 1) * d];
            let mut mean_dxh = 0.0;
            let mut mean_dxh_xh = 0.0;
            for c in 0..d {
                self.gamma.grad[c] += g[c] * xh[c];
                self.beta.grad[c] += g[c];
                dxhat[c] = g[c] * self.gamma.value[c];
                mean_dxh += dxhat[c];
                mean_dxh_xh += dxhat[c] * xh[c];
            }
            mean_dxh /= d as f64;
            mean_dxh_xh /= d as f64;
            for c in 0..d {
                dx[r * d + c] = cache.rstd[r] * (dxhat[c] - mean_dxh - xh[c] * mean_dxh_xh);
            }
        }
        dx
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}
