use super::{join, Linear, LinearCache, Module, Param};
use crate::rng::Rng;
use crate::tensor::gemm;

/// Multi-head self-attention over a token matrix `n x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub width: usize,
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

pub struct AttentionCache {
    n: usize,
    q: (Vec<f64>, LinearCache),
    k: (Vec<f64>, LinearCache),
    v: (Vec<f64>, LinearCache),
    o: LinearCache,
    /// Softmax probabilities per head, `heads x n x n`.
    probs: Vec<f64>,
}

fn gather_head(x: &[f64], n: usize, width: usize, head: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dh);
    for r in 0..n {
        out.extend_from_slice(&x[r * width + head * dh..r * width + (head + 1) * dh]);
    }
    out
}

fn scatter_head(dst: &mut [f64], src: &[f64], n: usize, width: usize, head: usize, dh: usize) {
    for r in 0..n {
        dst[r * width + head * dh..r * width + (head + 1) * dh]
            .copy_from_slice(&src[r * dh..(r + 1) * dh]);
    }
}

impl Attention {
    pub fn new(width: usize, heads: usize, rng: &mut Rng) -> Self {
        assert!(heads > 0 && width % heads == 0, "width must split into heads");
        Attention {
            width,
            heads,
            q: Linear::new(width, width, rng),
            // A key bias shifts every logit of a query equally and cannot
            // change the softmax, so it is omitted.
            k: Linear::unbiased(width, width, rng),
            v: Linear::new(width, width, rng),
            o: Linear::new(width, width, rng),
        }
    }

    pub fn linears_mut(&mut self) -> [&mut Linear; 4] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o]
    }

    fn mix(&self, q: &[f64], k: &[f64], v: &[f64], n: usize, probs: Option<&mut Vec<f64>>) -> Vec<f64> {
        let (w, dh) = (self.width, self.width / self.heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; n * w];
        let mut all = Vec::new();
        for h in 0..self.heads {
            let qh = gather_head(q, n, w, h, dh);
            let kh = gather_head(k, n, w, h, dh);
            let vh = gather_head(v, n, w, h, dh);
            let mut s = vec![0.0; n * n];
            gemm(n, dh, n, scale, &qh, false, &kh, true, 0.0, &mut s);
            for row in s.chunks_mut(n) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for e in row.iter_mut() {
                    *e = (*e - m).exp();
                    z += *e;
                }
                for e in row.iter_mut() {
                    *e /= z;
                }
            }
            let mut oh = vec![0.0; n * dh];
            gemm(n, n, dh, 1.0, &s, false, &vh, false, 0.0, &mut oh);
            scatter_head(&mut out, &oh, n, w, h, dh);
            if probs.is_some() {
                all.extend_from_slice(&s);
            }
        }
        if let Some(p) = probs {
            *p = all;
        }
        out
    }

    pub fn apply(&self, x: &[f64], n: usize) -> Vec<f64> {
        let q = self.q.apply(x, n);
        let k = self.k.apply(x, n);
        let v = self.v.apply(x, n);
        let mixed = self.mix(&q, &k, &v, n, None);
        self.o.apply(&mixed, n)
    }

    pub fn forward(&self, x: &[f64], n: usize) -> (Vec<f64>, AttentionCache) {
        let q = self.q.forward(x, n);
        let k = self.k.forward(x, n);
        let v = self.v.forward(x, n);
        let mut probs = Vec::new();
        let mixed = self.mix(&q.0, &k.0, &v.0, n, Some(&mut probs));
        let (y, o) = self.o.forward(&mixed, n);
        (
            y,
            AttentionCache {
                n,
                q,
                k,
                v,
                o,
                probs,
            },
        )
    }

    pub fn backward(&mut self, cache: AttentionCache, dy: &[f64]) -> Vec<f64> {
        let n = cache.n;
        let (w, dh) = (self.width, self.width / self.heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let dmixed = self.o.backward(cache.o, dy);
        let mut dq = vec![0.0; n * w];
        let mut dk = vec![0.0; n * w];
        let mut dv = vec![0.0; n * w];
        for h in 0..self.heads {
            let p = &cache.probs[h * n * n..(h + 1) * n * n];
            let qh = gather_head(&cache.q.0, n, w, h, dh);
            let kh = gather_head(&cache.k.0, n, w, h, dh);
            let vh = gather_head(&cache.v.0, n, w, h, dh);
            let doh = gather_head(&dmixed, n, w, h, dh);
            let mut dvh = vec![0.0; n * dh];
            gemm(n, n, dh, 1.0, p, true, &doh, false, 0.0, &mut dvh);
            let mut dp = vec![0.0; n * n];
            gemm(n, dh, n, 1.0, &doh, false, &vh, true, 0.0, &mut dp);
            for r in 0..n {
                let pr = &p[r * n..(r + 1) * n];
                let dr = &mut dp[r * n..(r + 1) * n];
                let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                for (d, &pv) in dr.iter_mut().zip(pr) {
                    *d = pv * (*d - dot);
                }
            }
            let mut dqh = vec![0.0; n * dh];
            gemm(n, n, dh, scale, &dp, false, &kh, false, 0.0, &mut dqh);
            let mut dkh = vec![0.0; n * dh];
            gemm(n, n, dh, scale, &dp, true, &qh, false, 0.0, &mut dkh);
            scatter_head(&mut dq, &dqh, n, w, h, dh);
            scatter_head(&mut dk, &dkh, n, w, h, dh);
            scatter_head(&mut dv, &dvh, n, w, h, dh);
        }
        let mut dx = self.q.backward(cache.q.1, &dq);
        for (a, b) in dx.iter_mut().zip(self.k.backward(cache.k.1, &dk)) {
            *a += b;
        }
        for (a, b) in dx.iter_mut().zip(self.v.backward(cache.v.1, &dv)) {
            *a += b;
        }
        dx
    }
}

impl Module for Attention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.q.visit(&join(prefix, "q"), f);
        self.k.visit(&join(prefix, "k"), f);
        self.v.visit(&join(prefix, "v"), f);
        self.o.visit(&join(prefix, "o"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.q.visit_mut(&join(prefix, "q"), f);
        self.k.visit_mut(&join(prefix, "k"), f);
        self.v.visit_mut(&join(prefix, "v"), f);
        self.o.visit_mut(&join(prefix, "o"), f);
    }
}
