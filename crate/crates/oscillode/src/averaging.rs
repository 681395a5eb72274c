//! Classical stroboscopic-averaging machinery: Gauss quadrature,
//! finite-difference derivatives, the order-0/1 truncations of the high
//! oscillation generator and averaged field, and the exact micro-macro
//! defect field.

use crate::error::{Error, Result};
use crate::linalg;
use crate::problems::{reduce_phase, OscillatoryProblem, TWO_PI};

/// 10-point Gauss-Legendre rule on (-1, 1).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: [f64; 10],
    pub weights: [f64; 10],
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_legendre_10()
    }
}

impl QuadratureRule {
    pub fn gauss_legendre_10() -> Self {
        const N: [f64; 5] = [
            0.148_874_338_981_631_21,
            0.433_395_394_129_247_19,
            0.679_409_568_299_024_42,
            0.865_063_366_688_984_51,
            0.973_906_528_517_171_72,
        ];
        const W: [f64; 5] = [
            0.295_524_224_714_752_87,
            0.269_266_719_309_996_35,
            0.219_086_362_515_982_04,
            0.149_451_349_150_580_59,
            0.066_671_344_308_688_14,
        ];
        let mut nodes = [0.0; 10];
        let mut weights = [0.0; 10];
        for i in 0..5 {
            nodes[2 * i] = -N[i];
            nodes[2 * i + 1] = N[i];
            weights[2 * i] = W[i];
            weights[2 * i + 1] = W[i];
        }
        Self { nodes, weights }
    }
}

/// 10-point Gauss-Legendre approximation of the integral of a
/// vector-valued `g` over `[a, b]`, applied on panels no longer than
/// pi/2. Exact for polynomials through degree 19; a single panel over a
/// full 2pi period leaves ~1e-8 on trig integrands, which the panels
/// bring below 1e-13.
pub fn gauss_integral<F>(g: F, a: f64, b: f64) -> Vec<f64>
where
    F: Fn(f64) -> Vec<f64>,
{
    let rule = QuadratureRule::gauss_legendre_10();
    let length = b - a;
    if length == 0.0 {
        return g(a).iter().map(|_| 0.0).collect();
    }
    let panels = ((length.abs() / std::f64::consts::FRAC_PI_2).ceil() as usize).max(1);
    let panel_len = length / panels as f64;
    let mut acc: Option<Vec<f64>> = None;
    for p in 0..panels {
        let lo = a + panel_len * p as f64;
        let mid = lo + 0.5 * panel_len;
        let half = 0.5 * panel_len;
        for (node, weight) in rule.nodes.iter().zip(&rule.weights) {
            let v = g(mid + half * node);
            let w = weight * half;
            match &mut acc {
                None => acc = Some(linalg::scale(&v, w)),
                Some(sum) => {
                    for (s, x) in sum.iter_mut().zip(&v) {
                        *s += w * x;
                    }
                }
            }
        }
    }
    acc.expect("rule has nodes")
}

/// Central finite-difference Jacobian, row-major d x d, O(eta^2).
pub fn jacobian_fd<F>(g: F, y: &[f64], eta: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let d = y.len();
    let mut jac = vec![0.0; d * d];
    for j in 0..d {
        let mut yp = y.to_vec();
        let mut ym = y.to_vec();
        yp[j] += eta;
        ym[j] -= eta;
        let gp = g(&yp);
        let gm = g(&ym);
        for i in 0..d {
            jac[i * d + j] = (gp[i] - gm[i]) / (2.0 * eta);
        }
    }
    jac
}

/// Central finite-difference directional derivative `(dg/dy)(y) v`.
pub fn directional_derivative_fd<F>(g: F, y: &[f64], v: &[f64], eta: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let yp = linalg::axpy(y, eta, v);
    let ym = linalg::axpy(y, -eta, v);
    let gp = g(&yp);
    let gm = g(&ym);
    gp.iter()
        .zip(&gm)
        .map(|(p, m)| (p - m) / (2.0 * eta))
        .collect()
}

/// Default finite-difference increment.
pub const DEFAULT_FD_ETA: f64 = 1e-5;

/// The averaging series cut at order `eps^k`, k in {0, 1}, together with
/// the data needed to evaluate it.
#[derive(Debug, Clone)]
pub struct TruncatedAveraging {
    pub order: usize,
    pub problem: OscillatoryProblem,
    pub eps: f64,
    pub eta: f64,
}

impl TruncatedAveraging {
    pub fn new(order: usize, problem: OscillatoryProblem, eps: f64) -> Result<Self> {
        if order > 1 {
            return Err(Error::UnsupportedOrder(order));
        }
        Ok(Self {
            order,
            problem,
            eps,
            eta: DEFAULT_FD_ETA,
        })
    }

    /// The truncated generator `phi^[k]_tau(y)`. Order 0 is the identity;
    /// order 1 uses the recursion with `phi^[0] = Id`:
    /// `y + eps * int_0^tau (f(sigma, y) - <f>(y)) dsigma`.
    ///
    /// Subtracting the average keeps the map 2pi-periodic in tau
    /// (stroboscopic convention), so the phase is reduced first.
    pub fn phi(&self, tau: f64, y: &[f64]) -> Result<Vec<f64>> {
        match self.order {
            0 => Ok(y.to_vec()),
            1 => {
                let tau = reduce_phase(tau);
                let avg = self.problem.eval_average_field(y)?;
                let integral = gauss_integral(
                    |sigma| {
                        let f = self
                            .problem
                            .eval_field(sigma, y)
                            .expect("finite inputs inside quadrature");
                        linalg::sub(&f, &avg)
                    },
                    0.0,
                    tau,
                );
                Ok(linalg::axpy(y, self.eps, &integral))
            }
            k => Err(Error::UnsupportedOrder(k)),
        }
    }

    /// `d/dtau phi^[k]_tau(y)`, analytic. For k = 1 this is
    /// `eps * (f(tau, y) - <f>(y))` straight from the integral form.
    pub fn phi_dtau(&self, tau: f64, y: &[f64]) -> Result<Vec<f64>> {
        match self.order {
            0 => Ok(vec![0.0; y.len()]),
            1 => {
                let f = self.problem.eval_field(tau, y)?;
                let avg = self.problem.eval_average_field(y)?;
                Ok(linalg::scale(&linalg::sub(&f, &avg), self.eps))
            }
            k => Err(Error::UnsupportedOrder(k)),
        }
    }

    /// The truncated averaged field `F^[k](y)`. Order 0 is `<f>`;
    /// order 1 inverts the Jacobian of the tau-average of `phi^[1]` against
    /// the tau-average of `f(., phi^[1]_.(y))`, all by Gauss quadrature.
    pub fn averaged_field(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self.order {
            0 => self.problem.eval_average_field(y),
            1 => {
                let d = y.len();
                let rhs = linalg::scale(
                    &gauss_integral(
                        |tau| {
                            let phi = self.phi(tau, y).expect("phi evaluation");
                            self.problem
                                .eval_field(tau, &phi)
                                .expect("finite inputs inside quadrature")
                        },
                        0.0,
                        TWO_PI,
                    ),
                    1.0 / TWO_PI,
                );
                let mean_phi = |z: &[f64]| {
                    linalg::scale(
                        &gauss_integral(|tau| self.phi(tau, z).expect("phi evaluation"), 0.0, TWO_PI),
                        1.0 / TWO_PI,
                    )
                };
                let jac = jacobian_fd(mean_phi, y, self.eta);
                linalg::solve(&jac, &rhs, d)
            }
            k => Err(Error::UnsupportedOrder(k)),
        }
    }

    /// Defect (micro) field of the micro-macro system:
    /// `g(tau, w, v) = f(tau, phi(v) + w) - (1/eps) d_tau phi(v)
    ///  - d_y phi(v) F(v)`.
    ///
    /// At order 0 this reduces to `f(tau, v + w) - <f>(v)`.
    /// Callers on a hot path pass a precomputed `F(v)` to avoid repeating
    /// the quadrature per fixed-point iteration.
    pub fn micro_defect_field_with(
        &self,
        tau: f64,
        w: &[f64],
        v: &[f64],
        averaged_at_v: &[f64],
    ) -> Result<Vec<f64>> {
        let phi_v = self.phi(tau, v)?;
        let f = self.problem.eval_field(tau, &linalg::add(&phi_v, w))?;
        match self.order {
            0 => Ok(linalg::sub(&f, averaged_at_v)),
            1 => {
                let dtau = self.phi_dtau(tau, v)?;
                let dy_phi_f = directional_derivative_fd(
                    |z| self.phi(tau, z).expect("phi evaluation"),
                    v,
                    averaged_at_v,
                    self.eta,
                );
                let mut out = f;
                for i in 0..out.len() {
                    out[i] -= dtau[i] / self.eps + dy_phi_f[i];
                }
                Ok(out)
            }
            k => Err(Error::UnsupportedOrder(k)),
        }
    }

    pub fn micro_defect_field(&self, tau: f64, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let avg = self.averaged_field(v)?;
        self.micro_defect_field_with(tau, w, v, &avg)
    }
}
