//! Dense row-major `f64` tensors and the handful of kernels the models need.

use crate::error::{Error, Result};

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                format!("{n} elements for shape {shape:?}"),
                data.len(),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(
                format!("{} elements", self.data.len()),
                format!("shape {shape:?}"),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Shape as `[d0, d1, d2, d3]`, or a dimension error.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [a, b, c, d] => Ok([a, b, c, d]),
            _ => Err(Error::dim("rank-4 tensor", format!("{:?}", self.shape))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Swap the first two axes of a rank-4 tensor (`[a,b,h,w]` -> `[b,a,h,w]`).
    pub fn swap01(&self) -> Tensor {
        let [a, b, h, w] = self.dims4().expect("swap01 needs rank 4");
        let plane = h * w;
        let mut out = vec![0.0; self.data.len()];
        for i in 0..a {
            for j in 0..b {
                let src = (i * b + j) * plane;
                let dst = (j * a + i) * plane;
                out[dst..dst + plane].copy_from_slice(&self.data[src..src + plane]);
            }
        }
        Tensor {
            shape: vec![b, a, h, w],
            data: out,
        }
    }

    /// Concatenate rank-4 `[k, c_i, h, w]` tensors along axis 1.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Empty("concat inputs"))?;
        let [k, _, h, w] = first.dims4()?;
        let mut total = 0;
        for p in parts {
            let [pk, pc, ph, pw] = p.dims4()?;
            if (pk, ph, pw) != (k, h, w) {
                return Err(Error::dim(
                    format!("[{k}, _, {h}, {w}]"),
                    format!("{:?}", p.shape),
                ));
            }
            total += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(k * total * plane);
        for f in 0..k {
            for p in parts {
                let c = p.shape[1];
                data.extend_from_slice(&p.data[f * c * plane..(f + 1) * c * plane]);
            }
        }
        Ok(Tensor {
            shape: vec![k, total, h, w],
            data,
        })
    }

    /// Channels `start..start+len` of a rank-4 `[k, c, h, w]` tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let [k, c, h, w] = self.dims4()?;
        if start + len > c {
            return Err(Error::dim(
                format!("channel range within {c}"),
                format!("{start}..{}", start + len),
            ));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(k * len * plane);
        for f in 0..k {
            let base = (f * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Tensor {
            shape: vec![k, len, h, w],
            data,
        })
    }

    /// Add `src` into channels `start..` of `self`.
    pub fn add_into_channels(&mut self, start: usize, src: &Tensor) -> Result<()> {
        let [k, c, h, w] = self.dims4()?;
        let [sk, sc, sh, sw] = src.dims4()?;
        if sk != k || sh != h || sw != w || start + sc > c {
            return Err(Error::dim(
                format!("[{k}, <= {}, {h}, {w}]", c - start.min(c)),
                format!("{:?}", src.shape),
            ));
        }
        let plane = h * w;
        for f in 0..k {
            let dst = (f * c + start) * plane;
            let s = f * sc * plane;
            for i in 0..sc * plane {
                self.data[dst + i] += src.data[s + i];
            }
        }
        Ok(())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is `m x k` and
/// `op(b)` is `k x n`. A transposed operand is stored in its untransposed
/// row-major layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm lhs size");
    assert_eq!(b.len(), k * n, "gemm rhs size");
    assert_eq!(c.len(), m * n, "gemm out size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices were checked against the logical dimensions above
    // and the strides address exactly those elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
