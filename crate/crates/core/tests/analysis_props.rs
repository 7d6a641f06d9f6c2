use proptest::prelude::*;

use qcars_core::analysis::{fit_exponential, fit_rabi, fit_ramsey, FitResult};

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn monotone(r: &FitResult<f64>) -> bool {
    r.cost_history.windows(2).all(|w| w[1] <= w[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exponential_recovers_parameters(a in -0.5f64..0.5, b in 0.1f64..1.0, t1 in 5.0f64..80.0) {
        let t = grid(0.0, 5.0 * t1, 40);
        let y: Vec<f64> = t.iter().map(|t| a + b * (-t / t1).exp()).collect();
        let r = fit_exponential(&t, &y).unwrap();
        prop_assert!(r.converged);
        prop_assert!(monotone(&r));
        prop_assert!(rel(r.param("T1").unwrap(), t1) < 1e-6);
        prop_assert!(rel(r.param("B").unwrap(), b) < 1e-6);
    }

    #[test]
    fn ramsey_recovers_parameters(t2 in 2.0f64..20.0, delta in 0.3f64..2.0, b in 0.2f64..0.5) {
        let n = ((2.0 * t2 * delta * 8.0).ceil() as usize).max(120);
        let t = grid(0.0, 2.0 * t2, n);
        let y: Vec<f64> = t.iter().map(|t| 0.5 + b * (std::f64::consts::TAU * delta * t).cos() * (-t / t2).exp()).collect();
        let r = fit_ramsey(&t, &y).unwrap();
        prop_assert!(r.converged);
        prop_assert!(monotone(&r));
        prop_assert!(rel(r.param("T2R").unwrap(), t2) < 1e-6);
        prop_assert!(rel(r.param("Delta").unwrap(), delta) < 1e-6);
    }

    #[test]
    fn rabi_recovers_parameters(omega in 0.002f64..0.02, phi in -3.0f64..3.0, b in 0.2f64..0.5) {
        let x = grid(0.0, 4.0 / omega, 100);
        let y: Vec<f64> = x.iter().map(|x| 0.5 + b * (std::f64::consts::TAU * omega * x + phi).cos()).collect();
        let r = fit_rabi(&x, &y, false).unwrap();
        prop_assert!(r.converged);
        prop_assert!(monotone(&r));
        prop_assert!(rel(r.param("Omega").unwrap(), omega) < 1e-6);
        prop_assert!(rel(r.param("B").unwrap(), b) < 1e-6);
    }
}
