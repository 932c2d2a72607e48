use num_complex::Complex;
use rustfft::FftPlanner;

use super::{ImpulseResponse, Waveform};
use crate::error::{arg, Result};
use crate::scalar::Real;

/// Below this many multiply-adds the direct sum is cheaper than two FFTs.
const DIRECT_WORK_LIMIT: usize = 1 << 16;

/// Smallest 2^a·3^b·5^c that is ≥ `n`.
pub(crate) fn fast_fft_len(n: usize) -> usize {
    let n = n.max(1);
    let mut best = n.next_power_of_two();
    let mut p5 = 1usize;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut v = p35;
            while v < n {
                v *= 2;
            }
            best = best.min(v);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

fn direct<T: Real>(x: &[T], h: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len() + h.len() - 1];
    for (i, &xv) in x.iter().enumerate() {
        if xv.is_zero() {
            continue;
        }
        for (o, &hv) in out[i..].iter_mut().zip(h) {
            *o += xv * hv;
        }
    }
    out
}

/// Full linear convolution of two sequences (length `x + h - 1`).
pub fn convolve_slices<T: Real>(x: &[T], h: &[T]) -> Vec<T> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    if x.len().min(h.len()) <= 32 || x.len() * h.len() <= DIRECT_WORK_LIMIT {
        return direct(x, h);
    }
    let n = fast_fft_len(out_len);
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex<T>> = Vec::with_capacity(n);
    a.extend(x.iter().map(|&v| Complex::new(v, T::zero())));
    a.resize(n, Complex::new(T::zero(), T::zero()));
    let mut b: Vec<Complex<T>> = Vec::with_capacity(n);
    b.extend(h.iter().map(|&v| Complex::new(v, T::zero())));
    b.resize(n, Complex::new(T::zero(), T::zero()));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (av, bv) in a.iter_mut().zip(&b) {
        *av = *av * *bv;
    }
    inv.process(&mut a);
    let scale = T::one() / T::from_usize_lossy(n);
    a.truncate(out_len);
    a.into_iter().map(|c| c.re * scale).collect()
}

/// Convolves a waveform with an impulse response of the same sample rate.
pub fn convolve<T: Real>(w: &Waveform<T>, ir: &ImpulseResponse<T>) -> Result<Waveform<T>> {
    if w.sample_rate() != ir.sample_rate() {
        return Err(arg(format!(
            "sample rate mismatch: waveform {} Hz, impulse response {} Hz",
            w.sample_rate(),
            ir.sample_rate()
        )));
    }
    Waveform::new(convolve_slices(w.samples(), ir.taps()), w.sample_rate())
}
