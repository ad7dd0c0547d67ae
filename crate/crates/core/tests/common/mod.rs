//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use edgesynth::rng::seeded;
use edgesynth::tensor::{Tape, Tensor, Var};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-7;

/// Worst-case disagreement between the tape gradient and central finite
/// differences, over `coords` coordinates sampled (with replacement) from every input.
#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

fn eval(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).item()
}

/// Relative error with the denominator floored at `FD_ABS_FLOOR`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_ABS_FLOOR)
}

/// Compares analytic and central-difference gradients of a scalar-valued
/// graph.
pub fn check_gradients(
    inputs: &[Tensor],
    build: &dyn Fn(&mut Tape, &[Var]) -> Var,
    coords: usize,
    seed: u64,
) -> GradReport {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).expect("backward");
    let mut rng = seeded(seed);
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[i]).unwrap_or_else(|| Tensor::zeros(input.shape()));
        let n = input.numel();
        let picks: Vec<usize> = (0..coords).map(|_| rng.random_range(0..n)).collect();
        for j in picks {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * FD_STEP);
            max_rel_err = max_rel_err.max(rel_err(analytic.data()[j], numeric));
            checked += 1;
        }
    }
    GradReport { max_rel_err, checked }
}

/// Reduces any tensor to a scalar through a fixed random projection so that
/// every output element contributes a distinct weight.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = seeded(seed ^ 0xABCD);
    let weights = Tensor::uniform(&shape, -1.0, 1.0, &mut rng);
    let w = tape.constant(weights);
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod).unwrap()
}

/// Random values kept at least `margin` away from zero (avoids relu kinks
/// being crossed by the finite-difference step).
pub fn randn_away_from_zero(shape: &[usize], margin: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::randn(shape, 1.0, rng);
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin } * (1.0 + rng.random::<f64>());
        }
    }
    t
}

/// Naive direct correlation: out[n][co][y][x] = b[co] + Σ w·x over the window.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, cin, h, wd] = x.dims4().unwrap();
    let [cout, _, k, _] = w.dims4().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for s in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((s * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin + ci) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((s * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out).unwrap()
}

/// Naive full 2-D convolution (kernel flipped, zero extension) of a single
/// channel, producing an (H+k−1)×(W+k−1) map.
pub fn naive_full_convolution(x: &[f64], h: usize, w: usize, kernel: &[f64], k: usize) -> Vec<f64> {
    let (oh, ow) = (h + k - 1, w + k - 1);
    let mut out = vec![0.0; oh * ow];
    for y in 0..h {
        for xx in 0..w {
            for ky in 0..k {
                for kx in 0..k {
                    out[(y + ky) * ow + xx + kx] += x[y * w + xx] * kernel[ky * k + kx];
                }
            }
        }
    }
    out
}
