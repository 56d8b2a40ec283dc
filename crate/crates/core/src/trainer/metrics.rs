//! Video fidelity and hand-pose metrics.

use crate::error::{Error, Result};
use crate::geom::{norm, sub};
use crate::motion::HandJointSet;
use crate::tensor::Tensor;

/// Reported when the images are numerically identical.
pub const PSNR_CAP: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("{:?}", b.shape()), format!("{:?}", a.shape())));
    }
    if a.is_empty() {
        return Err(Error::Empty("image"));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for values in `[0, 1]`.
pub fn psnr(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    same_shape(pred, gt)?;
    let mse = crate::diffusion::mse(pred, gt);
    if mse < MSE_FLOOR {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM over every valid 8x8 window of every frame and channel.
/// Accepts `[H, W, C]` images or `[k, H, W, C]` clips with unit data range.
pub fn ssim(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    same_shape(pred, gt)?;
    let (frames, h, w, c) = match *pred.shape() {
        [h, w, c] => (1, h, w, c),
        [k, h, w, c] => (k, h, w, c),
        _ => return Err(Error::dim("[H, W, C] or [k, H, W, C]", format!("{:?}", pred.shape()))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Precondition(format!("images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (x, y) = (pred.data(), gt.data());
    let (mut total, mut count) = (0.0, 0usize);
    for f in 0..frames {
        for ch in 0..c {
            let at = |i: usize, j: usize| ((f * h + i) * w + j) * c + ch;
            for i0 in 0..=h - SSIM_WINDOW {
                for j0 in 0..=w - SSIM_WINDOW {
                    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in i0..i0 + SSIM_WINDOW {
                        for j in j0..j0 + SSIM_WINDOW {
                            let (a, b) = (x[at(i, j)], y[at(i, j)]);
                            sx += a;
                            sy += b;
                            sxx += a * a;
                            syy += b * b;
                            sxy += a * b;
                        }
                    }
                    let (mx, my) = (sx / n, sy / n);
                    let vx = sxx / n - mx * mx;
                    let vy = syy / n - my * my;
                    let cov = sxy / n - mx * my;
                    total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

/// Root-relative mean per-joint position error over both hands.
pub fn mpjpe(pred: &HandJointSet, gt: &HandJointSet) -> Result<f64> {
    if !pred.same_topology(gt) {
        return Err(Error::Precondition("hand joint sets differ in topology".into()));
    }
    let hand = |p: &[[f64; 3]], pr: usize, g: &[[f64; 3]], gr: usize| -> f64 {
        p.iter()
            .zip(g)
            .map(|(&a, &b)| norm(sub(sub(a, p[pr]), sub(b, g[gr]))))
            .sum()
    };
    let sum = hand(&pred.left, pred.left_root, &gt.left, gt.left_root)
        + hand(&pred.right, pred.right_root, &gt.right, gt.right_root);
    Ok(sum / (pred.left.len() + pred.right.len()) as f64)
}

/// Error of the left-to-right hand root vector.
pub fn mrrpe(pred: &HandJointSet, gt: &HandJointSet) -> f64 {
    let lr = |s: &HandJointSet| sub(s.left[s.left_root], s.right[s.right_root]);
    norm(sub(lr(pred), lr(gt)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_known_mse() {
        let a = Tensor::full(&[4, 4, 3], 0.5);
        let b = Tensor::full(&[4, 4, 3], 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!(psnr(&a, &Tensor::zeros(&[4, 4, 2])).is_err());
    }

    #[test]
    fn ssim_of_identical_and_inverted_images() {
        let data: Vec<f64> = (0..64).map(|i| ((i / 8 + i % 8) % 2) as f64).collect();
        let x = Tensor::from_vec(&[8, 8, 1], data).unwrap();
        let inv = x.map(|v| 1.0 - v);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&x, &inv).unwrap() < 0.0);
        assert!(ssim(&Tensor::zeros(&[4, 4, 1]), &Tensor::zeros(&[4, 4, 1])).is_err());
    }
}
