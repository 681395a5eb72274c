//! One-step methods (forward Euler, implicit midpoint) and the
//! high-accuracy adaptive reference solver that stands in for the exact
//! flow.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy, norm2, sub};
use crate::problems::OscillatoryProblem;

/// Forward Euler or implicit midpoint. Midpoint solves its fixed point by
/// damped iteration; h * Lipschitz stays below 1 in all experiments so no
/// Jacobians are needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneStepMethod {
    pub kind: MethodKind,
    /// Fixed-point tolerance for implicit steps.
    pub fp_tol: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    ForwardEuler,
    Midpoint,
}

impl OneStepMethod {
    pub fn forward_euler() -> Self {
        Self {
            kind: MethodKind::ForwardEuler,
            fp_tol: 1e-12,
            max_iterations: 100,
        }
    }

    pub fn midpoint() -> Self {
        Self {
            kind: MethodKind::Midpoint,
            fp_tol: 1e-12,
            max_iterations: 100,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "euler" => Ok(Self::forward_euler()),
            "midpoint" => Ok(Self::midpoint()),
            other => Err(Error::InvalidArgument(format!(
                "unknown method '{other}', expected euler or midpoint"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            MethodKind::ForwardEuler => "euler",
            MethodKind::Midpoint => "midpoint",
        }
    }

    pub fn order(&self) -> usize {
        match self.kind {
            MethodKind::ForwardEuler => 1,
            MethodKind::Midpoint => 2,
        }
    }

    /// One step of size `h` from `(t, y)` on a time-dependent field.
    /// Midpoint evaluates the field at `t + h/2` and the state average.
    pub fn step<F>(&self, field: F, t: f64, h: f64, y: &[f64]) -> Result<Vec<f64>>
    where
        F: Fn(f64, &[f64]) -> Vec<f64>,
    {
        match self.kind {
            MethodKind::ForwardEuler => Ok(axpy(y, h, &field(t, y))),
            MethodKind::Midpoint => {
                // predictor: one Euler step
                let mut current = axpy(y, h, &field(t, y));
                let tm = t + 0.5 * h;
                let mut residual = f64::INFINITY;
                for _ in 0..self.max_iterations {
                    let mid: Vec<f64> =
                        y.iter().zip(&current).map(|(a, b)| 0.5 * (a + b)).collect();
                    let next = axpy(y, h, &field(tm, &mid));
                    residual = norm2(&sub(&next, &current));
                    current = next;
                    if residual <= self.fp_tol {
                        return Ok(current);
                    }
                }
                Err(Error::FixedPointDiverged {
                    residual,
                    iterations: self.max_iterations,
                })
            }
        }
    }
}

/// Time grid plus states; micro-macro integration also records the
/// `(v, w)` internals.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub macro_states: Option<Vec<Vec<f64>>>,
    pub micro_states: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Fixed-step path `y_{n+1} = Phi_{t_n, h}(y_n)` from t = 0 to T.
/// A non-integer T/h shortens the last step.
pub fn integrate_path<F>(
    method: &OneStepMethod,
    field: F,
    y0: &[f64],
    horizon: f64,
    h: f64,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    if h <= 0.0 || horizon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step {h} and horizon {horizon} must be positive"
        )));
    }
    let steps = (horizon / h).round();
    let exact_split = (horizon - steps * h).abs() <= 1e-12 && steps >= 1.0;
    let n_full = if exact_split {
        steps as usize
    } else {
        (horizon / h).floor() as usize
    };
    let mut times = vec![0.0];
    let mut states = vec![y0.to_vec()];
    let mut t = 0.0;
    let mut y = y0.to_vec();
    for _ in 0..n_full {
        y = method.step(&field, t, h, &y)?;
        t += h;
        times.push(t);
        states.push(y.clone());
    }
    if !exact_split && horizon - t > 1e-12 {
        let last = horizon - t;
        y = method.step(&field, t, last, &y)?;
        times.push(horizon);
        states.push(y);
    }
    Ok(Trajectory {
        times,
        states,
        macro_states: None,
        micro_states: None,
    })
}

/// Tolerances for the adaptive reference integrator. The internal step
/// never exceeds `max_step_frac * eps` so every oscillation is resolved.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceSolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_step_frac: f64,
}

impl Default for ReferenceSolverConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_step_frac: 0.1,
        }
    }
}

impl ReferenceSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rtol <= 0.0 || self.atol <= 0.0 {
            return Err(Error::InvalidArgument(
                "reference tolerances must be positive".into(),
            ));
        }
        if !(self.max_step_frac > 0.0 && self.max_step_frac <= 1.0) {
            return Err(Error::InvalidArgument(
                "max step fraction must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// High-accuracy approximation of the exact flow of `y' = f(t/eps, y)`
/// from `t0` over a duration `h`.
pub fn reference_flow(
    problem: OscillatoryProblem,
    eps: f64,
    t0: f64,
    h: f64,
    y0: &[f64],
    cfg: &ReferenceSolverConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must lie in (0, 1], got {eps}"
        )));
    }
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "flow duration must be positive, got {h}"
        )));
    }
    let field = |t: f64, y: &[f64]| {
        problem
            .eval_field(t / eps, y)
            .unwrap_or_else(|_| vec![f64::NAN; y.len()])
    };
    adaptive_flow(field, t0, h, y0, cfg.rtol, cfg.atol, cfg.max_step_frac * eps)
}

// Dormand-Prince 5(4) Butcher tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Embedded Dormand-Prince 5(4) pair with a hard cap on the internal step.
pub fn adaptive_flow<F>(
    field: F,
    t0: f64,
    duration: f64,
    y0: &[f64],
    rtol: f64,
    atol: f64,
    hmax: f64,
) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let d = y0.len();
    let t_end = t0 + duration;
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = hmax.min(duration);
    loop {
        if t >= t_end - 1e-14 * t_end.abs().max(1.0) {
            return Ok(y);
        }
        h = h.min(t_end - t);
        if h < 1e-14 {
            return Err(Error::StepSizeUnderflow { t, step: h });
        }
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        for stage in 0..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = DP_A[stage][j];
                if a != 0.0 {
                    for i in 0..d {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            k.push(field(t + DP_C[stage] * h, &ys));
        }
        let mut y5 = y.clone();
        let mut err = 0.0f64;
        for i in 0..d {
            let mut dy5 = 0.0;
            let mut dy4 = 0.0;
            for s in 0..7 {
                dy5 += DP_B5[s] * k[s][i];
                dy4 += DP_B4[s] * k[s][i];
            }
            y5[i] += h * dy5;
            let scale = atol + rtol * y[i].abs().max(y5[i].abs());
            let e = h * (dy5 - dy4) / scale;
            err += e * e;
        }
        err = (err / d as f64).sqrt();
        if !err.is_finite() || !all_finite(&y5) {
            return Err(Error::StepSizeUnderflow { t, step: h });
        }
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err > 0.0 {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h = (h * factor).min(hmax);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm2, sub};
    use crate::problems::OscillatoryProblem;

    fn zero_field(_t: f64, y: &[f64]) -> Vec<f64> {
        vec![0.0; y.len()]
    }

    // brute-force fixed-step RK4, independent of the adaptive path
    fn rk4<F: Fn(f64, &[f64]) -> Vec<f64>>(
        field: F,
        t0: f64,
        duration: f64,
        y0: &[f64],
        h: f64,
    ) -> Vec<f64> {
        let n = (duration / h).ceil() as usize;
        let h = duration / n as f64;
        let mut t = t0;
        let mut y = y0.to_vec();
        let d = y.len();
        for _ in 0..n {
            let k1 = field(t, &y);
            let y2: Vec<f64> = (0..d).map(|i| y[i] + 0.5 * h * k1[i]).collect();
            let k2 = field(t + 0.5 * h, &y2);
            let y3: Vec<f64> = (0..d).map(|i| y[i] + 0.5 * h * k2[i]).collect();
            let k3 = field(t + 0.5 * h, &y3);
            let y4: Vec<f64> = (0..d).map(|i| y[i] + h * k3[i]).collect();
            let k4 = field(t + h, &y4);
            for i in 0..d {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            t += h;
        }
        y
    }

    #[test]
    fn euler_zero_field_is_identity() {
        let m = OneStepMethod::forward_euler();
        let y = m.step(zero_field, 0.0, 0.5, &[1.0, -2.0]).unwrap();
        assert_eq!(y, vec![1.0, -2.0]);
    }

    #[test]
    fn midpoint_linear_scalar_closed_form() {
        // y' = -y: midpoint gives (1 - h/2)/(1 + h/2)
        let m = OneStepMethod::midpoint();
        let y = m
            .step(|_t, y: &[f64]| vec![-y[0]], 0.0, 0.1, &[1.0])
            .unwrap();
        assert!((y[0] - 0.95 / 1.05).abs() < 1e-11);
    }

    #[test]
    fn euler_on_pendulum_average() {
        let p = OscillatoryProblem::InvertedPendulum;
        let m = OneStepMethod::forward_euler();
        let field = |_t: f64, y: &[f64]| p.eval_average_field(y).unwrap();
        let y = m.step(field, 0.0, 0.01, &[0.0, 1.0]).unwrap();
        assert!((y[0] - 0.01).abs() < 1e-15);
        assert!((y[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn path_zero_field() {
        let m = OneStepMethod::forward_euler();
        let traj = integrate_path(&m, zero_field, &[0.3, 0.4], 1.0, 0.1).unwrap();
        assert_eq!(traj.times.len(), 11);
        for s in &traj.states {
            assert_eq!(s, &vec![0.3, 0.4]);
        }
    }

    #[test]
    fn path_compound_growth() {
        let m = OneStepMethod::forward_euler();
        let traj = integrate_path(&m, |_t, y: &[f64]| vec![y[0]], &[1.0], 1.0, 0.1).unwrap();
        assert!((traj.final_state()[0] - 1.1f64.powi(10)).abs() < 1e-12);
    }

    #[test]
    fn midpoint_path_matches_reference_on_average_field() {
        let p = OscillatoryProblem::InvertedPendulum;
        let m = OneStepMethod::midpoint();
        let field = |_t: f64, y: &[f64]| p.eval_average_field(y).unwrap();
        let h = 0.01;
        let traj = integrate_path(&m, field, &[0.5, -0.5], 1.0, h).unwrap();
        let exact = adaptive_flow(field, 0.0, 1.0, &[0.5, -0.5], 1e-12, 1e-14, 0.05).unwrap();
        let err = norm2(&sub(traj.final_state(), &exact));
        assert!(err < 10.0 * h * h, "midpoint error {err} not O(h^2)");
    }

    #[test]
    fn convergence_orders_on_average_field() {
        let p = OscillatoryProblem::InvertedPendulum;
        let field = |_t: f64, y: &[f64]| p.eval_average_field(y).unwrap();
        let exact = adaptive_flow(field, 0.0, 1.0, &[0.5, -0.5], 1e-12, 1e-14, 0.05).unwrap();
        for (method, expected) in [
            (OneStepMethod::forward_euler(), 1.0),
            (OneStepMethod::midpoint(), 2.0),
        ] {
            let mut logs = Vec::new();
            for k in 4..=10 {
                let h = 2f64.powi(-k);
                let traj = integrate_path(&method, field, &[0.5, -0.5], 1.0, h).unwrap();
                logs.push((h.ln(), norm2(&sub(traj.final_state(), &exact)).ln()));
            }
            let slope = least_squares_slope(&logs);
            assert!(
                (slope - expected).abs() < 0.1,
                "{} slope {slope}, expected {expected}",
                method.name()
            );
        }
    }

    fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn midpoint_symmetric() {
        let p = OscillatoryProblem::InvertedPendulum;
        let m = OneStepMethod::midpoint();
        let field = |t: f64, y: &[f64]| p.eval_field(t / 0.1, y).unwrap();
        let y0 = [0.5, -0.5];
        let fwd = m.step(&field, 0.0, 0.01, &y0).unwrap();
        let back = m.step(&field, 0.01, -0.01, &fwd).unwrap();
        assert!(norm2(&sub(&back, &y0)) < 10.0 * m.fp_tol);
    }

    #[test]
    fn reference_zero_field_fixed() {
        let y = adaptive_flow(zero_field, 0.0, 1.0, &[1.0, 2.0], 1e-10, 1e-12, 0.01).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn reference_matches_tiny_step_rk4() {
        let p = OscillatoryProblem::InvertedPendulum;
        let eps = 0.05;
        let cfg = ReferenceSolverConfig::default();
        let y = reference_flow(p, eps, 0.0, 0.01, &[0.5, -0.5], &cfg).unwrap();
        let oracle = rk4(
            |t, y| p.eval_field(t / eps, y).unwrap(),
            0.0,
            0.01,
            &[0.5, -0.5],
            eps / 1000.0,
        );
        assert!(norm2(&sub(&y, &oracle)) < 1e-8);
    }

    #[test]
    fn reference_pure_rotation_period_return() {
        // y' = J y / eps returns to y0 after one period 2*pi*eps
        let eps = 0.02;
        let field = |_t: f64, y: &[f64]| vec![-y[1] / eps, y[0] / eps];
        let y = adaptive_flow(
            field,
            0.0,
            std::f64::consts::TAU * eps,
            &[0.3, 0.4],
            1e-10,
            1e-12,
            eps / 10.0,
        )
        .unwrap();
        assert!(norm2(&sub(&y, &[0.3, 0.4])) < 1e-8);
    }

    #[test]
    fn reference_self_consistency_under_tolerance_halving() {
        let p = OscillatoryProblem::InvertedPendulum;
        let coarse = ReferenceSolverConfig::default();
        let fine = ReferenceSolverConfig {
            rtol: 5e-11,
            atol: 5e-13,
            max_step_frac: 0.1,
        };
        let a = reference_flow(p, 0.05, 0.0, 0.01, &[0.5, -0.5], &coarse).unwrap();
        let b = reference_flow(p, 0.05, 0.0, 0.01, &[0.5, -0.5], &fine).unwrap();
        assert!(norm2(&sub(&a, &b)) < coarse.rtol);
    }

    #[test]
    fn reference_rejects_bad_eps() {
        let p = OscillatoryProblem::InvertedPendulum;
        let cfg = ReferenceSolverConfig::default();
        assert!(reference_flow(p, 0.0, 0.0, 0.01, &[0.5, -0.5], &cfg).is_err());
        assert!(reference_flow(p, 1.5, 0.0, 0.01, &[0.5, -0.5], &cfg).is_err());
    }
}
