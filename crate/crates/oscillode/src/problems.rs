//! Benchmark oscillatory systems `y' = f(t/eps, y)` with `f` 2pi-periodic
//! in the phase, their analytic average fields, and the Van der Pol
//! rotation change of variables.

use crate::error::{Error, Result};
use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Reduce an unreduced phase `tau = t/eps` into [0, 2pi). `t/eps` grows to
/// 1e3 at eps = 1e-3, so trig arguments are reduced before evaluation.
pub fn reduce_phase(tau: f64) -> f64 {
    tau.rem_euclid(TWO_PI)
}

/// One of the benchmark systems. All fields are 2pi-periodic in the phase
/// by trigonometric construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OscillatoryProblem {
    /// Unstable pendulum under fast forced oscillations.
    InvertedPendulum,
    /// Van der Pol oscillator after the rotation change of variables,
    /// which puts it in the classical highly oscillatory form.
    VanDerPol,
}

impl OscillatoryProblem {
    /// Catalog lookup by CLI identifier.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "inverted-pendulum" => Ok(Self::InvertedPendulum),
            "van-der-pol" => Ok(Self::VanDerPol),
            other => Err(Error::UnknownProblem(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::InvertedPendulum => "inverted-pendulum",
            Self::VanDerPol => "van-der-pol",
        }
    }

    pub fn catalog() -> &'static [&'static str] {
        &["inverted-pendulum", "van-der-pol"]
    }

    pub fn dimension(&self) -> usize {
        2
    }

    /// Evaluate `f(tau, y)`. `tau` may be unreduced.
    pub fn eval_field(&self, tau: f64, y: &[f64]) -> Result<Vec<f64>> {
        if !tau.is_finite() || !crate::linalg::all_finite(y) {
            return Err(Error::NonFinite(format!("eval_field(tau={tau}, y={y:?})")));
        }
        let tau = reduce_phase(tau);
        let (s, c) = tau.sin_cos();
        Ok(match self {
            Self::InvertedPendulum => {
                let (y1, y2) = (y[0], y[1]);
                vec![
                    y2 + s * y1.sin(),
                    y1.sin() - 0.5 * s * s * (2.0 * y1).sin() - s * y1.cos() * y2,
                ]
            }
            Self::VanDerPol => {
                let (y1, y2) = (y[0], y[1]);
                let q = y1 * c + y2 * s;
                let p = -y1 * s + y2 * c;
                let damping = (0.25 - q * q) * p;
                vec![-s * damping, c * damping]
            }
        })
    }

    /// Analytic average `<f>(y) = (1/2pi) int_0^{2pi} f(tau, y) dtau`.
    pub fn eval_average_field(&self, y: &[f64]) -> Result<Vec<f64>> {
        if !crate::linalg::all_finite(y) {
            return Err(Error::NonFinite(format!("eval_average_field(y={y:?})")));
        }
        Ok(match self {
            Self::InvertedPendulum => {
                vec![y[1], y[0].sin() - 0.25 * (2.0 * y[0]).sin()]
            }
            Self::VanDerPol => {
                let r2 = y[0] * y[0] + y[1] * y[1];
                vec![0.125 * (1.0 - r2) * y[0], 0.125 * (1.0 - r2) * y[1]]
            }
        })
    }

    /// Analytic Jacobian of the average field, row-major d x d. Used by
    /// reverse-mode differentiation of the structured networks.
    pub fn average_field_jacobian(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Self::InvertedPendulum => {
                vec![0.0, 1.0, y[0].cos() - 0.5 * (2.0 * y[0]).cos(), 0.0]
            }
            Self::VanDerPol => {
                let r2 = y[0] * y[0] + y[1] * y[1];
                vec![
                    0.125 * (1.0 - r2) - 0.25 * y[0] * y[0],
                    -0.25 * y[0] * y[1],
                    -0.25 * y[0] * y[1],
                    0.125 * (1.0 - r2) - 0.25 * y[1] * y[1],
                ]
            }
        }
    }

    /// The autonomous split `u' = (1/eps) A u + g(u)` where it exists.
    /// Only the Van der Pol system carries one; the transformed field then
    /// satisfies `f(tau, y) = e^{-tau A} g(e^{tau A} y)` with
    /// `e^{tau A} = S(tau)^T`.
    pub fn autonomous_split(&self) -> Option<AutonomousSplit> {
        match self {
            Self::InvertedPendulum => None,
            Self::VanDerPol => Some(AutonomousSplit {
                a: [0.0, 1.0, -1.0, 0.0],
            }),
        }
    }
}

/// The `(A, g)` split of an autonomous highly oscillatory system.
#[derive(Debug, Clone, Copy)]
pub struct AutonomousSplit {
    /// Row-major 2x2 matrix with eigenvalues +-i.
    pub a: [f64; 4],
}

impl AutonomousSplit {
    /// Nonlinear part; Van der Pol: `g(q, p) = (0, (1/4 - q^2) p)`.
    pub fn g(&self, u: &[f64]) -> Vec<f64> {
        vec![0.0, (0.25 - u[0] * u[0]) * u[1]]
    }

    /// `e^{tau A} u`; for `A = [[0,1],[-1,0]]` this is `S(tau)^T u`.
    pub fn exp_a(&self, tau: f64, u: &[f64]) -> Vec<f64> {
        rotation(-tau, u)
    }

    pub fn exp_neg_a(&self, tau: f64, u: &[f64]) -> Vec<f64> {
        rotation(tau, u)
    }
}

/// Apply the rotation `S(tau) = [[cos, -sin], [sin, cos]]`.
pub fn rotation(tau: f64, v: &[f64]) -> Vec<f64> {
    let (s, c) = tau.sin_cos();
    vec![c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeDirection {
    Forward,
    Inverse,
}

/// Rotation change of variables bridging the autonomous `(q, p)` form of
/// the Van der Pol oscillator and its transformed classical form:
/// forward maps `(q, p)` to `S(t/eps)(q, p)`, inverse applies the
/// transpose.
pub fn vdp_change_of_variables(
    direction: ChangeDirection,
    t: f64,
    eps: f64,
    state: &[f64],
) -> Result<Vec<f64>> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let tau = reduce_phase(t / eps);
    Ok(match direction {
        ChangeDirection::Forward => rotation(tau, state),
        ChangeDirection::Inverse => rotation(-tau, state),
    })
}
