use super::{join, Module, Param};
use crate::rng::Rng;
use crate::tensor::gemm;

/// Low-rank update `ΔW = scale · B A` with `scale = α / r`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lora {
    /// `r x in`
    pub a: Param,
    /// `out x r`, zero at attachment so the layer is unchanged.
    pub b: Param,
    pub rank: usize,
    pub scale: f64,
}

/// Affine map `y = x Wᵀ + b (+ scale · x Aᵀ Bᵀ)` over rows of `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out x in`
    pub weight: Param,
    pub bias: Option<Param>,
    pub lora: Option<Lora>,
}

pub struct LinearCache {
    x: Vec<f64>,
    xa: Option<Vec<f64>>,
    rows: usize,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: Param::normal(&[out_dim, in_dim], 1.0 / (in_dim as f64).sqrt(), rng),
            bias: Some(Param::zeros(&[out_dim])),
            lora: None,
        }
    }

    pub fn zeroed(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: Param::zeros(&[out_dim, in_dim]),
            bias: Some(Param::zeros(&[out_dim])),
            lora: None,
        }
    }

    /// Same as [`new`](Self::new) without a bias term.
    pub fn unbiased(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Linear {
            bias: None,
            ..Linear::new(in_dim, out_dim, rng)
        }
    }

    pub fn attach_lora(&mut self, rank: usize, alpha: f64, rng: &mut Rng) {
        let a = Param::normal(&[rank, self.in_dim], 1.0 / (self.in_dim as f64).sqrt(), rng);
        self.lora = Some(Lora {
            a,
            b: Param::zeros(&[self.out_dim, rank]),
            rank,
            scale: alpha / rank as f64,
        });
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, LinearCache) {
        let y = self.apply(x, rows);
        let xa = self.lora.as_ref().map(|l| {
            let mut xa = vec![0.0; rows * l.rank];
            gemm(rows, self.in_dim, l.rank, 1.0, x, false, &l.a.value, true, 0.0, &mut xa);
            xa
        });
        (
            y,
            LinearCache {
                x: x.to_vec(),
                xa,
                rows,
            },
        )
    }

    /// Forward pass without keeping a cache.
    pub fn apply(&self, x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.in_dim);
        let mut y = vec![0.0; rows * self.out_dim];
        if let Some(b) = &self.bias {
            for r in 0..rows {
                y[r * self.out_dim..(r + 1) * self.out_dim].copy_from_slice(&b.value);
            }
        }
        gemm(rows, self.in_dim, self.out_dim, 1.0, x, false, &self.weight.value, true, 1.0, &mut y);
        if let Some(l) = &self.lora {
            let mut xa = vec![0.0; rows * l.rank];
            gemm(rows, self.in_dim, l.rank, 1.0, x, false, &l.a.value, true, 0.0, &mut xa);
            gemm(rows, l.rank, self.out_dim, l.scale, &xa, false, &l.b.value, true, 1.0, &mut y);
        }
        y
    }

    pub fn backward(&mut self, cache: LinearCache, dy: &[f64]) -> Vec<f64> {
        let rows = cache.rows;
        let (i, o) = (self.in_dim, self.out_dim);
        gemm(o, rows, i, 1.0, dy, true, &cache.x, false, 1.0, &mut self.weight.grad);
        if let Some(b) = &mut self.bias {
            for r in 0..rows {
                for (g, d) in b.grad.iter_mut().zip(&dy[r * o..(r + 1) * o]) {
                    *g += d;
                }
            }
        }
        let mut dx = vec![0.0; rows * i];
        gemm(rows, o, i, 1.0, dy, false, &self.weight.value, false, 0.0, &mut dx);
        if let (Some(l), Some(xa)) = (self.lora.as_mut(), cache.xa) {
            // dB = s dyᵀ (x Aᵀ), d(xAᵀ) = s dy B, dA = d(xAᵀ)ᵀ x
            gemm(o, rows, l.rank, l.scale, dy, true, &xa, false, 1.0, &mut l.b.grad);
            let mut dxa = vec![0.0; rows * l.rank];
            gemm(rows, o, l.rank, l.scale, dy, false, &l.b.value, false, 0.0, &mut dxa);
            gemm(l.rank, rows, i, 1.0, &dxa, true, &cache.x, false, 1.0, &mut l.a.grad);
            gemm(rows, l.rank, i, 1.0, &dxa, false, &l.a.value, false, 1.0, &mut dx);
        }
        dx
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
        if let Some(l) = &self.lora {
            f(&join(prefix, "lora_a"), &l.a);
            f(&join(prefix, "lora_b"), &l.b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
        if let Some(l) = &mut self.lora {
            f(&join(prefix, "lora_a"), &mut l.a);
            f(&join(prefix, "lora_b"), &mut l.b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_b_lora_leaves_output_unchanged() {
        let mut r = rng::seeded(1);
        let mut lin = Linear::new(5, 3, &mut r);
        let x: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let base = lin.apply(&x, 2);
        lin.attach_lora(2, 4.0, &mut r);
        assert_eq!(lin.apply(&x, 2), base);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng::seeded(2);
        let mut lin = Linear::new(4, 3, &mut r);
        lin.attach_lora(2, 2.0, &mut r);
        crate::rng::fill_normal(&mut r, &mut lin.lora.as_mut().unwrap().b.value);
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).cos()).collect();
        let w: Vec<f64> = (0..6).map(|i| (i as f64 * 0.9).sin()).collect();
        let loss = |l: &Linear, x: &[f64]| -> f64 {
            l.apply(x, 2).iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = lin.forward(&x, 2);
        let dx = lin.backward(cache, &w);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&lin, &xp) - loss(&lin, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-8);
        }
        let grads = {
            let l = lin.lora.as_ref().unwrap();
            l.a.grad.clone()
        };
        for i in 0..grads.len() {
            let mut lp = lin.clone();
            lp.lora.as_mut().unwrap().a.value[i] += h;
            let mut lm = lin.clone();
            lm.lora.as_mut().unwrap().a.value[i] -= h;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-8);
        }
    }
}
