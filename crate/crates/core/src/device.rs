//! Two-level qubit and dispersive readout, simulated on the Bloch sphere in
//! the frame rotating at the drive frequency.
//!
//! Conventions: ground is z = +1, P1 = (1 - z) / 2. The rotation vector is
//! (Omega I, Omega Q, Delta) with Delta = 2 pi (f_q - f_frame), and
//! dr/dt = omega x r plus relaxation.

use std::f64::consts::TAU;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{gaussian_envelope, IqStream, SampleRate, Waveform};

/// Longest RK4 sub-step.
pub const MAX_STEP_NS: f64 = 1.0;
const CONVERGENCE_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitParams {
    pub f_q_hz: f64,
    pub t1_us: f64,
    pub t2_us: f64,
    /// Rabi frequency in Hz at unit drive amplitude.
    #[serde(default = "QubitParams::default_kappa")]
    pub kappa: f64,
}

impl QubitParams {
    pub fn new(f_q_hz: f64, t1_us: f64, t2_us: f64, kappa: f64) -> Result<Self> {
        let p = QubitParams { f_q_hz, t1_us, t2_us, kappa };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_q_hz > 0.0 && self.t1_us > 0.0 && self.t2_us > 0.0 && self.kappa > 0.0) {
            return Err(Error::invalid(format!("qubit parameters must be positive: {self:?}")));
        }
        if self.t2_us > 2.0 * self.t1_us {
            return Err(Error::invalid(format!(
                "T2 = {} us exceeds 2 T1 = {} us",
                self.t2_us,
                2.0 * self.t1_us
            )));
        }
        Ok(())
    }

    /// First device: 4.2 GHz, T1 30.5 us, T2 6.25 us.
    pub fn d1() -> Self {
        QubitParams { f_q_hz: 4.2e9, t1_us: 30.5, t2_us: 6.25, kappa: Self::default_kappa() }
    }

    /// Second device: 4.7 GHz, T1 57 us, T2 60 us.
    pub fn d2() -> Self {
        QubitParams { f_q_hz: 4.7e9, t1_us: 57.0, t2_us: 60.0, kappa: Self::default_kappa() }
    }

    /// kappa making a unit-amplitude 260 ns, sigma 65 ns Gaussian at the fabric rate an X_pi.
    pub fn default_kappa() -> f64 {
        let rate = SampleRate::fabric_default();
        let g = gaussian_envelope::<f64>(260.0, 65.0, rate).expect("valid pulse");
        let area_s: f64 = g.samples().iter().sum::<f64>() * rate.period_s();
        1.0 / (2.0 * area_s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QubitState {
    pub bloch: [f64; 3],
    /// Frequency of the rotating frame the state is expressed in.
    pub frame_hz: f64,
}

impl QubitState {
    pub fn ground(frame_hz: f64) -> Self {
        QubitState { bloch: [0.0, 0.0, 1.0], frame_hz }
    }

    pub fn excited(frame_hz: f64) -> Self {
        QubitState { bloch: [0.0, 0.0, -1.0], frame_hz }
    }

    pub fn p_excited(&self) -> f64 {
        ((1.0 - self.bloch[2]) / 2.0).clamp(0.0, 1.0)
    }

    pub fn norm(&self) -> f64 {
        self.bloch.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

type Vec3 = [f64; 3];

fn derivative(r: Vec3, w: Vec3, g1: f64, g2: f64) -> Vec3 {
    [
        w[1] * r[2] - w[2] * r[1] - g2 * r[0],
        w[2] * r[0] - w[0] * r[2] - g2 * r[1],
        w[0] * r[1] - w[1] * r[0] + g1 * (1.0 - r[2]),
    ]
}

fn rk4(r: Vec3, w: Vec3, g1: f64, g2: f64, h: f64) -> Vec3 {
    let add = |a: Vec3, b: Vec3, s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    let k1 = derivative(r, w, g1, g2);
    let k2 = derivative(add(r, k1, h / 2.0), w, g1, g2);
    let k3 = derivative(add(r, k2, h / 2.0), w, g1, g2);
    let k4 = derivative(add(r, k3, h), w, g1, g2);
    [
        r[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        r[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        r[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ]
}

fn integrate(
    start: Vec3,
    drive: &[(f64, f64)],
    dt_s: f64,
    substeps: usize,
    delta: f64,
    p: &QubitParams,
) -> Vec3 {
    let g1 = 1.0 / (p.t1_us * 1e-6);
    let g2 = 1.0 / (p.t2_us * 1e-6);
    let h = dt_s / substeps as f64;
    let scale = TAU * p.kappa;
    let mut r = start;
    for &(a_i, a_q) in drive {
        let w = [scale * a_i, scale * a_q, delta];
        for _ in 0..substeps {
            r = rk4(r, w, g1, g2, h);
        }
    }
    r
}

/// Drive with a real (in-phase) envelope.
pub fn apply_drive<T: Scalar>(
    state: QubitState,
    envelope: &Waveform<T>,
    drive_f_hz: f64,
    p: &QubitParams,
) -> Result<QubitState> {
    apply_drive_iq(state, &envelope.to_iq(), drive_f_hz, p)
}

/// Drive with an IQ envelope; each sample is held for one sample period.
pub fn apply_drive_iq<T: Scalar>(
    state: QubitState,
    envelope: &IqStream<T>,
    drive_f_hz: f64,
    p: &QubitParams,
) -> Result<QubitState> {
    p.validate()?;
    let drive: Vec<(f64, f64)> = envelope
        .samples()
        .iter()
        .map(|c| (c.re.f64(), c.im.f64()))
        .collect();
    if let Some((k, _)) = drive
        .iter()
        .enumerate()
        .find(|(_, (i, q))| i.abs() > 1.0 || q.abs() > 1.0)
    {
        return Err(Error::Range { index: k, value: drive[k].0.abs().max(drive[k].1.abs()) });
    }
    let state = reframe(state, drive_f_hz);
    let dt_s = envelope.rate().period_s();
    if drive.iter().all(|&(i, q)| i == 0.0 && q == 0.0) {
        return Ok(free_evolve(state, dt_s * 1e9 * drive.len() as f64, p));
    }
    let delta = TAU * (p.f_q_hz - drive_f_hz);
    let substeps = ((dt_s * 1e9) / MAX_STEP_NS).ceil().max(1.0) as usize;
    let coarse = integrate(state.bloch, &drive, dt_s, substeps, delta, p);
    let fine = integrate(state.bloch, &drive, dt_s, 2 * substeps, delta, p);
    let err = (0..3).map(|j| (coarse[j] - fine[j]).abs()).fold(0.0, f64::max);
    if !err.is_finite() || err > CONVERGENCE_TOL {
        return Err(Error::Numerical(format!(
            "drive integration did not converge: step-halving changed the state by {err:.3e}"
        )));
    }
    Ok(QubitState { bloch: fine, frame_hz: drive_f_hz })
}

/// Express the state in a frame at `frame_hz`, assuming phase-continuous references.
fn reframe(state: QubitState, frame_hz: f64) -> QubitState {
    QubitState { bloch: state.bloch, frame_hz }
}

/// Undriven evolution for `t_ns`, solved analytically.
pub fn free_evolve(state: QubitState, t_ns: f64, p: &QubitParams) -> QubitState {
    let t = t_ns.max(0.0) * 1e-9;
    if t == 0.0 {
        return state;
    }
    let [x, y, z] = state.bloch;
    let delta = TAU * (p.f_q_hz - state.frame_hz);
    let decay = (-t / (p.t2_us * 1e-6)).exp();
    let xy = Complex::new(x, y) * Complex::from_polar(decay, delta * t);
    let z = 1.0 + (z - 1.0) * (-t / (p.t1_us * 1e-6)).exp();
    QubitState { bloch: [xy.re, xy.im, z], frame_hz: state.frame_hz }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutParams {
    pub cavity_f_hz: f64,
    pub iq_ground: (f64, f64),
    pub iq_excited: (f64, f64),
    pub noise_sigma: f64,
}

impl Default for ReadoutParams {
    fn default() -> Self {
        ReadoutParams {
            cavity_f_hz: 5.995e9,
            iq_ground: (0.25, -0.1),
            iq_excited: (-0.05, 0.3),
            noise_sigma: 0.05,
        }
    }
}

impl ReadoutParams {
    pub fn validate(&self) -> Result<()> {
        if self.iq_ground == self.iq_excited {
            return Err(Error::invalid("ground and excited IQ points coincide"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub mean_iq: Complex<f64>,
    pub p_excited: f64,
    pub shots: usize,
}

/// Projective single-shot readout repeated `shots` times.
pub fn measure(state: &QubitState, r: &ReadoutParams, shots: usize, seed: u64) -> Result<Measurement> {
    if shots == 0 {
        return Err(Error::invalid("measure needs at least one shot"));
    }
    r.validate()?;
    let p1 = state.p_excited();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, r.noise_sigma)
        .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
    let (mut ni, mut nq) = (0.0, 0.0);
    let mut excited = 0usize;
    for _ in 0..shots {
        if rng.random::<f64>() < p1 {
            excited += 1;
        }
        if r.noise_sigma > 0.0 {
            ni += noise.sample(&mut rng);
            nq += noise.sample(&mut rng);
        }
    }
    let n = shots as f64;
    let frac = excited as f64 / n;
    let g = Complex::new(r.iq_ground.0, r.iq_ground.1);
    let e = Complex::new(r.iq_excited.0, r.iq_excited.1);
    Ok(Measurement {
        mean_iq: g + (e - g) * frac + Complex::new(ni / n, nq / n),
        p_excited: frac,
        shots,
    })
}

/// Per-point seed used by sweeps.
pub fn point_seed(seed: u64, point_index: usize) -> u64 {
    seed ^ point_index as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ideal(f_q: f64) -> QubitParams {
        QubitParams { f_q_hz: f_q, t1_us: 1e12, t2_us: 1e12, kappa: QubitParams::default_kappa() }
    }

    #[test]
    fn calibrated_pi_pulse() {
        let g = gaussian_envelope::<f64>(260.0, 65.0, SampleRate::fabric_default()).unwrap();
        let p = ideal(4.2e9);
        let s = apply_drive(QubitState::ground(p.f_q_hz), &g, p.f_q_hz, &p).unwrap();
        assert!(s.p_excited() >= 1.0 - 1e-9, "{}", s.p_excited());
    }

    #[test]
    fn half_pi_rectangle() {
        let p = ideal(4.2e9);
        let rate = SampleRate::fabric_default();
        let n = 100.0;
        let amp = (PI / 2.0) / (TAU * p.kappa * n * rate.period_s());
        let w = Waveform::new(vec![amp; 100], rate).unwrap();
        let s = apply_drive(QubitState::ground(p.f_q_hz), &w, p.f_q_hz, &p).unwrap();
        assert!((s.p_excited() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn rectangle_matches_closed_form() {
        let p = ideal(4.7e9);
        let rate = SampleRate::fabric_default();
        for n in [10usize, 57, 200, 333] {
            let amp = 0.8;
            let w = Waveform::new(vec![amp; n], rate).unwrap();
            let s = apply_drive(QubitState::ground(p.f_q_hz), &w, p.f_q_hz, &p).unwrap();
            let theta = TAU * p.kappa * amp * n as f64 * rate.period_s();
            assert!((s.p_excited() - (theta / 2.0).sin().powi(2)).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_drive_is_free_decay() {
        let p = QubitParams::d1();
        let w = Waveform::new(vec![0.0; 768], SampleRate::fabric_default()).unwrap();
        let start = QubitState::excited(p.f_q_hz);
        let s = apply_drive(start, &w, p.f_q_hz, &p).unwrap();
        let expect = free_evolve(start, 1000.0, &p);
        assert!((s.bloch[2] - expect.bloch[2]).abs() < 1e-12);
    }

    #[test]
    fn free_evolve_examples() {
        let p = QubitParams::d1();
        let s = QubitState { bloch: [0.3, -0.2, 0.5], frame_hz: 4.2e9 };
        assert_eq!(free_evolve(s, 0.0, &p), s);
        let e = free_evolve(QubitState::excited(4.2e9), p.t1_us * 1e3, &p);
        assert!((e.p_excited() - (-1.0f64).exp()).abs() < 1e-6);
        let p = QubitParams { t2_us: 1e9, t1_us: 1e9, ..p };
        let eq = QubitState { bloch: [1.0, 0.0, 0.0], frame_hz: p.f_q_hz - 0.8e6 };
        let h = free_evolve(eq, 625.0, &p);
        assert!((h.bloch[0] + 1.0).abs() < 1e-9 && h.bloch[1].abs() < 1e-9);
    }

    #[test]
    fn params_validation() {
        assert!(QubitParams::new(4.2e9, 10.0, 21.0, 1e6).is_err());
        assert!(QubitParams::new(4.2e9, 10.0, 20.0, 1e6).is_ok());
        assert!(QubitParams::new(4.2e9, -1.0, 1.0, 1e6).is_err());
        let k = QubitParams::default_kappa();
        assert!(k > 2e6 && k < 5e6, "{k}");
    }

    #[test]
    fn measure_examples() {
        let r = ReadoutParams { noise_sigma: 0.0, ..Default::default() };
        let m = measure(&QubitState::ground(0.0), &r, 100, 1).unwrap();
        assert_eq!(m.mean_iq, Complex::new(r.iq_ground.0, r.iq_ground.1));
        assert_eq!(m.p_excited, 0.0);

        let sup = QubitState { bloch: [1.0, 0.0, 0.0], frame_hz: 0.0 };
        let m = measure(&sup, &ReadoutParams::default(), 50_000, 7).unwrap();
        assert!((m.p_excited - 0.5).abs() <= 0.011);

        let m = measure(&QubitState::excited(0.0), &ReadoutParams::default(), 1, 3).unwrap();
        assert_eq!(m.p_excited, 1.0);
        assert!(measure(&sup, &r, 0, 1).is_err());
    }

    #[test]
    fn measure_is_reproducible() {
        let s = QubitState { bloch: [0.0, 0.6, 0.8], frame_hz: 0.0 };
        let r = ReadoutParams::default();
        assert_eq!(measure(&s, &r, 500, 42).unwrap(), measure(&s, &r, 500, 42).unwrap());
        assert_ne!(measure(&s, &r, 500, 42).unwrap(), measure(&s, &r, 500, 43).unwrap());
    }
}
