//! Finite-difference check of the denoiser's analytic gradients on a
//! miniature float64 model.

use egosim::codec::ChannelLayout;
use egosim::diffusion::{Denoiser, DenoiserSpec};
use egosim::nn::Module;
use egosim::{rng, Tensor};

const STEP: f64 = 1e-5;

fn micro() -> Denoiser {
    let mut r = rng::seeded(11);
    let spec = DenoiserSpec {
        depth: 2,
        width: 12,
        heads: 2,
        patch: [1, 2, 2],
        mlp_ratio: 2,
    };
    let mut d = Denoiser::new(spec, ChannelLayout::new(2, 2, 2), &mut r).unwrap();
    d.attach_lora(1, 2.0, &mut r).unwrap();
    // Move every zero-initialized parameter off zero so all paths carry signal.
    d.visit_mut("", &mut |name, p| {
        if name.ends_with("lora_b") || name.starts_with("gate") || name.starts_with("mix") || name.ends_with("bias") || name.ends_with("beta") {
            let mut rr = rng::substream(5, name, 0);
            rng::fill_normal(&mut rr, &mut p.value);
            p.value.iter_mut().for_each(|v| *v *= 0.3);
        }
    });
    d
}

fn input() -> (Tensor, Tensor) {
    let mut r = rng::seeded(3);
    let mut x = Tensor::zeros(&[2, 9, 4, 4]);
    rng::fill_normal(&mut r, x.data_mut());
    let mut target = Tensor::zeros(&[2, 6, 4, 4]);
    rng::fill_normal(&mut r, target.data_mut());
    (x, target)
}

fn loss(d: &Denoiser, x: &Tensor, target: &Tensor) -> f64 {
    let y = d.predict(x, 0.37, 2).unwrap();
    0.5 * y.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut d = micro();
    assert!(d.num_params() <= 5000, "{} parameters", d.num_params());
    let (x, target) = input();
    let (y, cache) = d.forward(&x, 0.37, 2).unwrap();
    let mut dy = y.clone();
    for (g, t) in dy.data_mut().iter_mut().zip(target.data()) {
        *g -= t;
    }
    d.zero_grad();
    let dx = d.backward(cache, &dy).unwrap();

    let mut analytic = Vec::new();
    d.visit("", &mut |name, p| analytic.push((name.to_string(), p.grad.clone())));
    for (name, grad) in &analytic {
        let mut numeric = vec![0.0; grad.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let nudged = |delta: f64| {
                let mut probe = d.clone();
                probe.visit_mut("", &mut |n, p| {
                    if n == name {
                        p.value[i] += delta;
                    }
                });
                loss(&probe, &x, &target)
            };
            let (up, down) = (nudged(STEP), nudged(-STEP));
            *slot = (up - down) / (2.0 * STEP);
        }
        let err = rel(grad, &numeric);
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }

    let mut numeric = vec![0.0; x.len()];
    for (i, slot) in numeric.iter_mut().enumerate() {
        let mut xp = x.clone();
        xp.data_mut()[i] += STEP;
        let up = loss(&d, &xp, &target);
        xp.data_mut()[i] -= 2.0 * STEP;
        let down = loss(&d, &xp, &target);
        *slot = (up - down) / (2.0 * STEP);
    }
    let err = rel(dx.x.data(), &numeric);
    assert!(err < 1e-4, "input: relative error {err:e}");
}

#[test]
fn zero_output_head_predicts_zero() {
    let mut d = micro();
    d.zero_output();
    let (x, _) = input();
    assert!(d.predict(&x, 0.5, 0).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn identical_inputs_give_identical_predictions() {
    let d = micro();
    let (x, _) = input();
    let batch = [x.clone(), x];
    let out: Vec<_> = batch.iter().map(|b| d.predict(b, 0.2, 1).unwrap()).collect();
    assert_eq!(out[0], out[1]);
}
