//! FIR building blocks shared by the DAC interpolator, the ADC decimator and
//! the inverse-sinc equalizer.
//!
//! All filters here are linear phase and applied centered, so stage outputs
//! stay time-aligned with their inputs. Stream edges are extended by
//! repeating the first/last sample, which keeps DC exact across the whole
//! stream.

use std::sync::OnceLock;

use num_complex::Complex;

use crate::scalar::Scalar;

/// Half length of the half-band prototype (taps = 2 * HALF + 1).
const HALFBAND_HALF: usize = 31;
const HALFBAND_BETA: f64 = 8.0;

/// Zeroth-order modified Bessel function of the first kind.
pub fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser window value at offset `n` from the center of a `2*half+1` window.
pub fn kaiser(n: isize, half: usize, beta: f64) -> f64 {
    let r = n as f64 / half as f64;
    if r.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - r * r).sqrt()) / bessel_i0(beta)
}

/// Symmetric FIR stored as its center tap plus one side.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricFir {
    /// `taps[k]` is the coefficient at offsets +k and -k.
    pub taps: Vec<f64>,
}

impl SymmetricFir {
    pub fn half_len(&self) -> usize {
        self.taps.len() - 1
    }

    /// Real frequency response at `f` cycles per sample.
    pub fn response(&self, f: f64) -> f64 {
        let w = std::f64::consts::TAU * f;
        self.taps[0]
            + self.taps[1..]
                .iter()
                .enumerate()
                .map(|(k, &h)| 2.0 * h * (w * (k + 1) as f64).cos())
                .sum::<f64>()
    }

    /// Centered convolution with edge replication. Output length equals input length.
    pub fn apply<T: Scalar>(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let taps: Vec<T> = self.taps.iter().map(|&h| T::of(h)).collect();
        let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
        (0..n as isize)
            .map(|m| {
                let mut acc = at(m) * taps[0];
                for (k, &h) in taps.iter().enumerate().skip(1) {
                    let k = k as isize;
                    acc += (at(m - k) + at(m + k)) * h;
                }
                acc
            })
            .collect()
    }
}

/// Kaiser-windowed half-band lowpass, cutoff at a quarter of the sample rate.
///
/// Odd-offset taps are renormalized to sum to exactly one half so that both
/// polyphase branches have unit DC gain.
pub fn halfband() -> &'static SymmetricFir {
    static HB: OnceLock<SymmetricFir> = OnceLock::new();
    HB.get_or_init(|| {
        let half = HALFBAND_HALF;
        let mut taps = vec![0.0; half + 1];
        taps[0] = 0.5;
        for (k, tap) in taps.iter_mut().enumerate().skip(1) {
            if k % 2 == 1 {
                let x = std::f64::consts::PI * k as f64;
                *tap = (x / 2.0).sin() / x * kaiser(k as isize, half, HALFBAND_BETA);
            }
        }
        let odd_sum: f64 = 2.0 * taps[1..].iter().sum::<f64>();
        for tap in taps[1..].iter_mut() {
            *tap *= 0.5 / odd_sum;
        }
        SymmetricFir { taps }
    })
}

/// Upsample by two: zero-stuff and filter with gain 2.
pub fn interpolate_x2<T: Scalar>(x: &[Complex<T>]) -> Vec<Complex<T>> {
    let hb = halfband();
    let n = x.len() as isize;
    let at = |i: isize| x[i.clamp(0, n - 1) as usize];
    // odd taps only contribute to the odd output phase
    let odd: Vec<(isize, T)> = hb
        .taps
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(k, _)| k % 2 == 1)
        .map(|(k, &h)| (k as isize, T::of(2.0 * h)))
        .collect();
    let mut out = Vec::with_capacity(2 * x.len());
    for m in 0..n {
        out.push(x[m as usize]);
        // output index 2m+1; stuffed input sample j sits at index 2j
        let mut acc = Complex::new(T::zero(), T::zero());
        for &(k, h) in &odd {
            let left = (2 * m + 1 - k) / 2;
            let right = (2 * m + 1 + k) / 2;
            acc += (at(left) + at(right)) * h;
        }
        out.push(acc);
    }
    out
}

/// Filter with the half-band and keep every second sample.
pub fn decimate_x2<T: Scalar>(x: &[Complex<T>]) -> Vec<Complex<T>> {
    let hb = halfband();
    let n = x.len() as isize;
    if n == 0 {
        return Vec::new();
    }
    let taps: Vec<(isize, T)> = hb
        .taps
        .iter()
        .enumerate()
        .filter(|(k, &h)| *k == 0 || h != 0.0)
        .map(|(k, &h)| (k as isize, T::of(h)))
        .collect();
    let at = |i: isize| x[i.clamp(0, n - 1) as usize];
    (0..n)
        .step_by(2)
        .map(|m| {
            let mut acc = at(m) * taps[0].1;
            for &(k, h) in &taps[1..] {
                acc += (at(m - k) + at(m + k)) * h;
            }
            acc
        })
        .collect()
}

/// Linear-phase FIR approximating `gain(f)` for `f` in [0, 0.5] cycles/sample,
/// by windowed inverse DTFT.
pub fn design_from_response(gain: impl Fn(f64) -> f64, half: usize, beta: f64) -> SymmetricFir {
    const GRID: usize = 8192;
    let df = 0.5 / GRID as f64;
    let samples: Vec<f64> = (0..=GRID).map(|j| gain(j as f64 * df)).collect();
    let taps = (0..=half)
        .map(|n| {
            let w = std::f64::consts::TAU * n as f64;
            // trapezoid rule for 2 * integral_0^0.5 G(f) cos(2 pi f n) df
            let integral: f64 = samples
                .iter()
                .enumerate()
                .map(|(j, &g)| {
                    let weight = if j == 0 || j == GRID { 0.5 } else { 1.0 };
                    weight * g * (w * j as f64 * df).cos()
                })
                .sum::<f64>()
                * df;
            2.0 * integral * kaiser(n as isize, half, beta)
        })
        .collect();
    SymmetricFir { taps }
}
