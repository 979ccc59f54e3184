//! Small FFT helpers shared by the simulator and the correlation baselines.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub(crate) fn next_fft_len(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Forward and inverse plans of size `n`, cached per thread.
pub(crate) fn fft_pair(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

pub(crate) fn to_complex(x: &[f64], n: usize) -> Vec<Complex<f64>> {
    let mut out: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    out.resize(n, Complex::new(0.0, 0.0));
    out
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Linear convolution of `a` and `b`, truncated to `out_len` samples.
pub fn convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0; out_len];
    }
    // Direct form is faster for short kernels.
    if a.len().min(b.len()) <= 64 {
        let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
        let mut out = vec![0.0; out_len];
        for (i, o) in out.iter_mut().enumerate() {
            let lo = i.saturating_sub(long.len() - 1);
            let hi = i.min(short.len() - 1);
            *o = (lo..=hi).map(|k| short[k] * long[i - k]).sum();
        }
        return out;
    }
    let full = a.len() + b.len() - 1;
    let n = next_fft_len(full);
    let (fwd, inv) = fft_pair(n);
    let mut fa = to_complex(a, n);
    let mut fb = to_complex(b, n);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    (0..out_len)
        .map(|i| if i < full { fa[i].re * scale } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
        (0..out_len)
            .map(|i| {
                (0..a.len())
                    .filter(|&k| i >= k && i - k < b.len())
                    .map(|k| a[k] * b[i - k])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_direct_sum() {
        let a: Vec<f64> = (0..300)
            .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
            .collect();
        for blen in [1usize, 5, 64, 65, 200] {
            let b: Vec<f64> = (0..blen)
                .map(|i| ((i * 31) % 17) as f64 / 8.0 - 1.0)
                .collect();
            for out_len in [10, 300, 600] {
                let fast = convolve(&a, &b, out_len);
                let slow = brute(&a, &b, out_len);
                for (x, y) in fast.iter().zip(&slow) {
                    assert!((x - y).abs() < 1e-9, "blen={blen} out={out_len}");
                }
            }
        }
    }
}
