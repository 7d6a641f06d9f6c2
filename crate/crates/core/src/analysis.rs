//! Curve fitting for relaxation, Ramsey and Rabi data, plus simple statistics.
//!
//! Time axes are in microseconds and frequencies in MHz, so that t * Delta
//! is in cycles. Rabi fits use whatever unit the sweep axis has and report
//! Omega in cycles per axis unit.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sync::{histogram, Histogram};

pub const MAX_ITERATIONS: usize = 200;
pub const STEP_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitModel {
    /// A + B exp(-t / T1)
    Exponential,
    /// A + B cos(2 pi Delta t + phi) exp(-t / T2R)
    Ramsey,
    /// A + B cos(2 pi Omega x + phi), optionally times exp(-x / tau)
    Rabi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    MaxIterations,
    /// No usable signal; parameters are not identifiable.
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitWarning {
    /// Fewer than one oscillation period in the span, or the peak sits at the grid Nyquist.
    Undersampled,
    /// Dominant frequency is at the Nyquist limit of the sample grid.
    NyquistAmbiguous,
    /// Ramsey data showed no fringe; fitted as a pure decay with Delta = 0.
    PureDecay,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult<T> {
    pub model: FitModel,
    pub params: Vec<(&'static str, T)>,
    pub rms_residual: T,
    pub converged: bool,
    pub iterations: usize,
    pub status: FitStatus,
    pub warnings: Vec<FitWarning>,
    /// Cost after each accepted step, starting with the initial guess.
    pub cost_history: Vec<T>,
}

impl<T: Scalar> FitResult<T> {
    pub fn param(&self, name: &str) -> Option<T> {
        self.params.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    /// Evaluate the fitted curve at `x`.
    pub fn eval(&self, x: T) -> T {
        let p: Vec<T> = self.params.iter().map(|(_, v)| *v).collect();
        let mut scratch = vec![T::zero(); p.len()];
        match self.model {
            FitModel::Exponential => exp_model(x, &p, &mut scratch),
            FitModel::Ramsey => ramsey_model(x, &p, &mut scratch),
            FitModel::Rabi => rabi_model(x, &p, &mut scratch),
        }
    }
}

impl<T: Scalar> fmt::Display for FitResult<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model={:?}", self.model)?;
        for (name, v) in &self.params {
            writeln!(f, "{name}={v}")?;
        }
        writeln!(f, "rms_residual={}", self.rms_residual)?;
        writeln!(f, "converged={}", self.converged)?;
        writeln!(f, "iterations={}", self.iterations)?;
        writeln!(f, "status={:?}", self.status)?;
        if !self.warnings.is_empty() {
            let w: Vec<String> = self.warnings.iter().map(|w| format!("{w:?}")).collect();
            writeln!(f, "warnings={}", w.join(","))?;
        }
        Ok(())
    }
}

type ModelFn<T> = fn(T, &[T], &mut [T]) -> T;

fn exp_model<T: Scalar>(t: T, p: &[T], g: &mut [T]) -> T {
    let e = (-t / p[2]).exp();
    g[0] = T::one();
    g[1] = e;
    g[2] = p[1] * e * t / (p[2] * p[2]);
    p[0] + p[1] * e
}

fn ramsey_model<T: Scalar>(t: T, p: &[T], g: &mut [T]) -> T {
    // p = [A, B, T2, Delta, phi]
    let e = (-t / p[2]).exp();
    let arg = T::TAU() * p[3] * t + p[4];
    let (s, c) = arg.sin_cos();
    g[0] = T::one();
    g[1] = c * e;
    g[2] = p[1] * c * e * t / (p[2] * p[2]);
    g[3] = -p[1] * s * e * T::TAU() * t;
    g[4] = -p[1] * s * e;
    p[0] + p[1] * c * e
}

fn rabi_model<T: Scalar>(x: T, p: &[T], g: &mut [T]) -> T {
    // p = [A, B, Omega, phi] or [A, B, Omega, phi, tau]
    let e = if p.len() > 4 { (-x / p[4]).exp() } else { T::one() };
    let arg = T::TAU() * p[2] * x + p[3];
    let (s, c) = arg.sin_cos();
    g[0] = T::one();
    g[1] = c * e;
    g[2] = -p[1] * s * e * T::TAU() * x;
    g[3] = -p[1] * s * e;
    if p.len() > 4 {
        g[4] = p[1] * c * e * x / (p[4] * p[4]);
    }
    p[0] + p[1] * c * e
}

/// Result of the damped least-squares loop.
#[derive(Clone, Debug, PartialEq)]
pub struct LmOutcome<T> {
    pub params: Vec<T>,
    pub cost_history: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

fn cost<T: Scalar>(x: &[T], y: &[T], p: &[T], f: ModelFn<T>, scratch: &mut [T]) -> T {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = yi - f(xi, p, scratch);
            r * r
        })
        .fold(T::zero(), |a, b| a + b)
}

/// Solve a small dense system by Gaussian elimination with partial pivoting.
pub fn solve_dense<T: Scalar>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if !(a[pivot][col].abs() > T::zero()) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= factor * v;
            }
            let v = b[col];
            b[row] -= factor * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Levenberg-damped Gauss-Newton. Only cost-decreasing steps are accepted.
pub fn levenberg_marquardt<T: Scalar>(
    x: &[T],
    y: &[T],
    p0: Vec<T>,
    f: ModelFn<T>,
    valid: impl Fn(&[T]) -> bool,
) -> LmOutcome<T> {
    let n = p0.len();
    let tol = T::of(STEP_TOLERANCE).max(T::epsilon() * T::of(10.0));
    let mut p = p0;
    let mut g = vec![T::zero(); n];
    let mut current = cost(x, y, &p, f, &mut g);
    let mut history = vec![current];
    let mut lambda = T::of(1e-3);
    let mut converged = current == T::zero();
    let mut iterations = 0;
    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = vec![vec![T::zero(); n]; n];
        let mut jtr = vec![T::zero(); n];
        for (&xi, &yi) in x.iter().zip(y) {
            let r = yi - f(xi, &p, &mut g);
            for a in 0..n {
                jtr[a] += g[a] * r;
                for b in 0..=a {
                    jtj[a][b] += g[a] * g[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                jtj[b][a] = jtj[a][b];
            }
        }
        loop {
            let mut m = jtj.clone();
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(T::min_positive_value());
            }
            let step = match solve_dense(m, jtr.clone()) {
                Some(s) => s,
                None => {
                    lambda *= T::of(10.0);
                    if lambda > T::of(1e16) {
                        break;
                    }
                    continue;
                }
            };
            let step_norm = step.iter().map(|v| *v * *v).fold(T::zero(), |a, b| a + b).sqrt();
            let p_norm = p.iter().map(|v| *v * *v).fold(T::zero(), |a, b| a + b).sqrt();
            let small = step_norm <= tol * (p_norm + tol);
            let trial: Vec<T> = p.iter().zip(&step).map(|(a, b)| *a + *b).collect();
            let trial_cost = if valid(&trial) {
                cost(x, y, &trial, f, &mut g)
            } else {
                T::infinity()
            };
            if trial_cost.is_finite() && trial_cost <= current {
                p = trial;
                current = trial_cost;
                history.push(current);
                lambda = (lambda / T::of(10.0)).max(T::of(1e-12));
                converged = small || current == T::zero();
                break;
            }
            if small {
                converged = true;
                break;
            }
            lambda *= T::of(10.0);
            if lambda > T::of(1e16) {
                // no descent direction left at working precision
                converged = true;
                break;
            }
        }
    }
    LmOutcome { params: p, cost_history: history, iterations, converged }
}

fn check_series<T: Scalar>(x: &[T], y: &[T], min_points: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("x has {} points, y has {}", x.len(), y.len())));
    }
    if x.len() < min_points {
        return Err(Error::invalid(format!("need at least {min_points} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contain non-finite values"));
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("axis must be strictly increasing"));
    }
    Ok(())
}

fn mean<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, b| a + *b) / T::of(v.len() as f64)
}

fn is_flat<T: Scalar>(y: &[T]) -> bool {
    let lo = y.iter().copied().fold(T::infinity(), T::min);
    let hi = y.iter().copied().fold(T::neg_infinity(), T::max);
    let scale = lo.abs().max(hi.abs()).max(T::one());
    hi - lo <= T::of(1e3) * T::epsilon() * scale
}

fn rms<T: Scalar>(c: T, n: usize) -> T {
    (c / T::of(n as f64)).sqrt()
}

/// Linear least squares on basis columns; returns coefficients and residual cost.
fn linear_fit<T: Scalar>(cols: &[Vec<T>], y: &[T]) -> Option<(Vec<T>, T)> {
    let n = cols.len();
    let mut a = vec![vec![T::zero(); n]; n];
    let mut b = vec![T::zero(); n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = cols[i].iter().zip(&cols[j]).fold(T::zero(), |s, (u, v)| s + *u * *v);
        }
        b[i] = cols[i].iter().zip(y).fold(T::zero(), |s, (u, v)| s + *u * *v);
    }
    let c = solve_dense(a, b)?;
    let res = y
        .iter()
        .enumerate()
        .map(|(k, &yk)| {
            let m = (0..n).fold(T::zero(), |s, i| s + c[i] * cols[i][k]);
            (yk - m) * (yk - m)
        })
        .fold(T::zero(), |a, b| a + b);
    Some((c, res))
}

fn log_grid<T: Scalar>(lo: T, hi: T, n: usize) -> impl Iterator<Item = T> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(move |k| (a + (b - a) * T::of(k as f64 / (n - 1) as f64)).exp())
}

fn degenerate<T: Scalar>(model: FitModel, names: &[&'static str], y: &[T]) -> FitResult<T> {
    let a = mean(y);
    let params = names
        .iter()
        .map(|&n| match n {
            "A" => (n, a),
            "B" => (n, T::zero()),
            _ => (n, T::nan()),
        })
        .collect();
    let c = y.iter().map(|v| (*v - a) * (*v - a)).fold(T::zero(), |s, v| s + v);
    FitResult {
        model,
        params,
        rms_residual: rms(c, y.len()),
        converged: false,
        iterations: 0,
        status: FitStatus::Degenerate,
        warnings: vec![],
        cost_history: vec![c],
    }
}

fn finish<T: Scalar>(
    model: FitModel,
    names: &[&'static str],
    out: LmOutcome<T>,
    n: usize,
    warnings: Vec<FitWarning>,
) -> FitResult<T> {
    let last = *out.cost_history.last().unwrap_or(&T::nan());
    FitResult {
        model,
        params: names.iter().copied().zip(out.params.iter().copied()).collect(),
        rms_residual: rms(last, n),
        converged: out.converged,
        iterations: out.iterations,
        status: if out.converged { FitStatus::Converged } else { FitStatus::MaxIterations },
        warnings,
        cost_history: out.cost_history,
    }
}

/// Best (A, B, tau) for A + B exp(-t/tau) over a grid of tau plus a log-linear guess.
fn exp_initial<T: Scalar>(t: &[T], y: &[T]) -> Vec<T> {
    let span = t[t.len() - 1] - t[0];
    let ones = vec![T::one(); t.len()];
    let mut candidates: Vec<T> = log_grid(span / T::of(100.0), span * T::of(20.0), 80).collect();
    // log-linear regression on the distance from the last point
    let a0 = y[y.len() - 1];
    let pts: Vec<(T, T)> = t
        .iter()
        .zip(y)
        .filter(|(_, v)| (**v - a0).abs() > T::zero())
        .map(|(ti, v)| (*ti, (*v - a0).abs().ln()))
        .collect();
    if pts.len() >= 2 {
        let xs: Vec<T> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<T> = pts.iter().map(|p| p.1).collect();
        if let Ok(lf) = linear_regression(&xs, &ys) {
            if lf.slope < T::zero() {
                candidates.push(-T::one() / lf.slope);
            }
        }
    }
    let mut best: Option<(T, Vec<T>)> = None;
    for tau in candidates {
        let e: Vec<T> = t.iter().map(|ti| (-(*ti) / tau).exp()).collect();
        if let Some((c, res)) = linear_fit(&[ones.clone(), e], y) {
            if best.as_ref().is_none_or(|b| res < b.0) {
                best = Some((res, vec![c[0], c[1], tau]));
            }
        }
    }
    best.map(|b| b.1).unwrap_or_else(|| vec![a0, y[0] - a0, span])
}

/// Fit A + B exp(-t / T1), t in microseconds.
pub fn fit_exponential<T: Scalar>(t_us: &[T], y: &[T]) -> Result<FitResult<T>> {
    check_series(t_us, y, 4)?;
    let names = ["A", "B", "T1"];
    if is_flat(y) {
        return Ok(degenerate(FitModel::Exponential, &names, y));
    }
    let p0 = exp_initial(t_us, y);
    let out = levenberg_marquardt(t_us, y, p0, exp_model, |p| p[2] > T::zero());
    let mut r = finish(FitModel::Exponential, &names, out, y.len(), vec![]);
    if r.param("B").is_some_and(|b| b.abs() <= T::of(1e-9) * r.param("A").unwrap().abs().max(T::one())) {
        r.status = FitStatus::Degenerate;
        r.converged = false;
    }
    Ok(r)
}

/// Frequency (cycles per axis unit) of the largest DFT peak of the mean-removed data.
fn dominant_frequency<T: Scalar>(x: &[T], y: &[T]) -> (T, T) {
    let n = x.len();
    let span = x[n - 1] - x[0];
    let dx = span / T::of((n - 1) as f64);
    let nyquist = T::of(0.5) / dx;
    let m = mean(y);
    let steps = (T::of(8.0) * span * nyquist).ceil().to_usize().unwrap_or(1).max(1);
    let mut best = (T::zero(), T::zero());
    for j in 0..=steps {
        let f = nyquist * T::of(j as f64 / steps as f64);
        let (mut re, mut im) = (T::zero(), T::zero());
        for (&xi, &yi) in x.iter().zip(y) {
            let (s, c) = (T::TAU() * f * (xi - x[0])).sin_cos();
            re += (yi - m) * c;
            im -= (yi - m) * s;
        }
        let mag = (re * re + im * im).sqrt();
        if mag > best.1 {
            best = (f, mag);
        }
    }
    (best.0, nyquist)
}

fn wrap_phase<T: Scalar>(phi: T) -> T {
    let tau = T::TAU();
    let mut p = phi % tau;
    if p > T::PI() {
        p -= tau;
    } else if p <= -T::PI() {
        p += tau;
    }
    p
}

/// Make amplitude and frequency non-negative and wrap the phase.
fn normalize_oscillation<T: Scalar>(p: &mut [T], freq: usize, phase: usize) {
    if p[1] < T::zero() {
        p[1] = -p[1];
        p[phase] += T::PI();
    }
    if p[freq] < T::zero() {
        p[freq] = -p[freq];
        p[phase] = -p[phase];
    }
    p[phase] = wrap_phase(p[phase]);
}

/// Best (A, B, decay, f, phi) at a fixed frequency, scanning the decay constant.
fn oscillation_initial<T: Scalar>(x: &[T], y: &[T], f: T, decay: bool) -> Vec<T> {
    let span = x[x.len() - 1] - x[0];
    let ones = vec![T::one(); x.len()];
    let taus: Vec<T> = if decay {
        log_grid(span / T::of(20.0), span * T::of(50.0), 40).collect()
    } else {
        vec![T::infinity()]
    };
    let mut best: Option<(T, Vec<T>)> = None;
    for tau in taus {
        let e = |xi: T| if decay { (-xi / tau).exp() } else { T::one() };
        let c: Vec<T> = x.iter().map(|&xi| e(xi) * (T::TAU() * f * xi).cos()).collect();
        let s: Vec<T> = x.iter().map(|&xi| e(xi) * (T::TAU() * f * xi).sin()).collect();
        if let Some((k, res)) = linear_fit(&[ones.clone(), c, s], y) {
            if best.as_ref().is_none_or(|b| res < b.0) {
                // C cos + S sin = B cos(arg + phi) with B = hypot, phi = atan2(-S, C)
                let b = (k[1] * k[1] + k[2] * k[2]).sqrt();
                let phi = (-k[2]).atan2(k[1]);
                best = Some((res, vec![k[0], b, tau, f, phi]));
            }
        }
    }
    best.map(|b| b.1).unwrap_or_else(|| vec![mean(y), T::zero(), span, f, T::zero()])
}

/// Fit A + B cos(2 pi Delta t + phi) exp(-t / T2R), t in microseconds, Delta in MHz.
pub fn fit_ramsey<T: Scalar>(t_us: &[T], y: &[T]) -> Result<FitResult<T>> {
    check_series(t_us, y, 8)?;
    let names = ["A", "B", "T2R", "Delta", "phi"];
    if is_flat(y) {
        return Ok(degenerate(FitModel::Ramsey, &names, y));
    }
    let span = t_us[t_us.len() - 1] - t_us[0];
    let (f_peak, nyquist) = dominant_frequency(t_us, y);
    let mut warnings = vec![];
    if f_peak >= T::of(0.95) * nyquist {
        warnings.push(FitWarning::NyquistAmbiguous);
    }
    if f_peak * span < T::one() {
        // no full fringe: fit the envelope alone
        let decay = fit_exponential(t_us, y)?;
        let mut params = decay.params.clone();
        params[2].0 = "T2R";
        params.push(("Delta", T::zero()));
        params.push(("phi", T::zero()));
        let mut r = FitResult { model: FitModel::Ramsey, params, ..decay };
        normalize_oscillation_params(&mut r);
        r.warnings.push(FitWarning::PureDecay);
        return Ok(r);
    }
    let p0 = oscillation_initial(t_us, y, f_peak, true);
    let p0 = vec![p0[0], p0[1], p0[2], p0[3], p0[4]];
    let out = levenberg_marquardt(t_us, y, p0, ramsey_model, |p| p[2] > T::zero());
    let mut r = finish(FitModel::Ramsey, &names, out, y.len(), warnings);
    normalize_oscillation_params(&mut r);
    Ok(r)
}

fn normalize_oscillation_params<T: Scalar>(r: &mut FitResult<T>) {
    let mut p: Vec<T> = r.params.iter().map(|(_, v)| *v).collect();
    let (freq, phase) = match r.model {
        FitModel::Ramsey => (3, 4),
        FitModel::Rabi => (2, 3),
        FitModel::Exponential => return,
    };
    normalize_oscillation(&mut p, freq, phase);
    for (slot, v) in r.params.iter_mut().zip(p) {
        slot.1 = v;
    }
}

/// Fit A + B cos(2 pi Omega x + phi), with an exp(-x / tau) envelope when `damped`.
pub fn fit_rabi<T: Scalar>(x: &[T], y: &[T], damped: bool) -> Result<FitResult<T>> {
    check_series(x, y, 8)?;
    let names: &[&'static str] = if damped {
        &["A", "B", "Omega", "phi", "tau"]
    } else {
        &["A", "B", "Omega", "phi"]
    };
    if is_flat(y) {
        return Ok(degenerate(FitModel::Rabi, names, y));
    }
    let span = x[x.len() - 1] - x[0];
    let (f_peak, nyquist) = dominant_frequency(x, y);
    let mut warnings = vec![];
    if f_peak * span < T::one() || f_peak >= T::of(0.95) * nyquist {
        warnings.push(FitWarning::Undersampled);
    }
    let g = oscillation_initial(x, y, f_peak, damped);
    let p0 = if damped {
        vec![g[0], g[1], g[3], g[4], g[2]]
    } else {
        vec![g[0], g[1], g[3], g[4]]
    };
    let out = levenberg_marquardt(x, y, p0, rabi_model, |p| p.len() < 5 || p[4] > T::zero());
    let mut r = finish(FitModel::Rabi, names, out, y.len(), warnings);
    normalize_oscillation_params(&mut r);
    Ok(r)
}

/// Histogram of T1 values from converged fits.
pub fn t1_repeatability<T: Scalar>(results: &[FitResult<T>]) -> Result<Histogram> {
    let t1: Vec<f64> = results
        .iter()
        .filter(|r| r.converged)
        .filter_map(|r| r.param("T1"))
        .map(|v| v.f64())
        .collect();
    if t1.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 converged T1 fits, got {}",
            t1.len()
        )));
    }
    let bins = (t1.len() as f64).sqrt().ceil() as usize;
    histogram(&t1, bins)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit<T> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
}

/// Ordinary least squares y = slope x + intercept.
pub fn linear_regression<T: Scalar>(x: &[T], y: &[T]) -> Result<LinearFit<T>> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("linear regression needs two equal-length series of >= 2 points"));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx = x.iter().map(|v| (*v - mx) * (*v - mx)).fold(T::zero(), |a, b| a + b);
    if !(sxx > T::zero()) {
        return Err(Error::invalid("x values are all equal"));
    }
    let sxy = x.iter().zip(y).map(|(a, b)| (*a - mx) * (*b - my)).fold(T::zero(), |a, b| a + b);
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot = y.iter().map(|v| (*v - my) * (*v - my)).fold(T::zero(), |a, b| a + b);
    let ss_res = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = *b - (slope * *a + intercept);
            r * r
        })
        .fold(T::zero(), |a, b| a + b);
    let r_squared = if ss_tot > T::zero() { T::one() - ss_res / ss_tot } else { T::one() };
    Ok(LinearFit { slope, intercept, r_squared })
}

/// Response linearity in dB-dB space.
pub fn linearity<T: Scalar>(x_db: &[T], y_db: &[T]) -> Result<LinearFit<T>> {
    if x_db.len() < 3 {
        return Err(Error::invalid(format!("linearity needs >= 3 points, got {}", x_db.len())));
    }
    linear_regression(x_db, y_db)
}
