//! Inference-time integrators assembled from a slow-fast decomposition:
//! the plain slow-fast scheme, its micro-macro defect correction, and the
//! alternative scheme for problems with an autonomous splitting.
//!
//! The decomposition can come from trained networks or from the exact
//! truncated expansions, behind one provider interface.

use crate::averaging::{directional_derivative_fd, TruncatedAveraging, DEFAULT_FD_ETA};
use crate::error::{Error, Result};
use crate::integrators::{integrate_path, OneStepMethod, Trajectory};
use crate::linalg;
use crate::neuralnet::{NetMode, PhaseSign, StructuredNetSet};
use crate::problems::OscillatoryProblem;

/// Where the maps F and phi come from.
#[derive(Debug, Clone)]
pub enum DecompositionProvider {
    Learned(StructuredNetSet),
    Exact(TruncatedAveraging),
}

impl DecompositionProvider {
    pub fn problem(&self) -> OscillatoryProblem {
        match self {
            Self::Learned(model) => model.problem,
            Self::Exact(trunc) => trunc.problem,
        }
    }

    pub fn variant_name(&self) -> String {
        match self {
            Self::Learned(model) => format!("learned-{}", model.mode.name()),
            Self::Exact(trunc) => format!("exact-{}", trunc.order),
        }
    }

    fn check_eps(&self, eps: f64) -> Result<()> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eps {eps} must lie in (0, 1]"
            )));
        }
        if let Self::Exact(trunc) = self {
            if trunc.eps != eps {
                return Err(Error::InvalidArgument(format!(
                    "exact provider built for eps {} but asked about eps {eps}",
                    trunc.eps
                )));
            }
        }
        Ok(())
    }

    /// The macro field F(y, h, eps).
    pub fn averaged_field(&self, y: &[f64], h: f64, eps: f64) -> Result<Vec<f64>> {
        match self {
            Self::Learned(model) => model.averaged_field(y, h, eps),
            Self::Exact(trunc) => trunc.averaged_field(y),
        }
    }

    /// The oscillatory reconstruction map phi_plus(tau, y, eps).
    pub fn phi_plus(&self, tau: f64, y: &[f64], eps: f64) -> Result<Vec<f64>> {
        match self {
            Self::Learned(model) => model.phase_map(PhaseSign::Plus, tau, y, eps),
            Self::Exact(trunc) => trunc.phi(tau, y),
        }
    }

    /// `(d_tau phi_plus, d_y phi_plus . F(v,0,eps))`, analytic where the
    /// truncation admits it and central finite differences otherwise.
    pub fn phase_derivatives(&self, tau: f64, v: &[f64], eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let f0 = self.averaged_field(v, 0.0, eps)?;
        self.phase_derivatives_with(tau, v, eps, &f0)
    }

    fn phase_derivatives_with(
        &self,
        tau: f64,
        v: &[f64],
        eps: f64,
        f0: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Self::Exact(trunc) => {
                if trunc.order == 0 {
                    // identity map: no tau dependence, Jacobian is I
                    return Ok((vec![0.0; v.len()], f0.to_vec()));
                }
                let dtau = trunc.phi_dtau(tau, v)?;
                let dy_f = directional_derivative_fd(
                    |z| trunc.phi(tau, z).expect("phi evaluation"),
                    v,
                    f0,
                    trunc.eta,
                );
                Ok((dtau, dy_f))
            }
            Self::Learned(model) => {
                let eta = DEFAULT_FD_ETA;
                let plus = model.phase_map(PhaseSign::Plus, tau + eta, v, eps)?;
                let minus = model.phase_map(PhaseSign::Plus, tau - eta, v, eps)?;
                let dtau = plus
                    .iter()
                    .zip(&minus)
                    .map(|(a, b)| (a - b) / (2.0 * eta))
                    .collect();
                let dy_f = directional_derivative_fd(
                    |z| {
                        model
                            .phase_map(PhaseSign::Plus, tau, z, eps)
                            .expect("phase map evaluation")
                    },
                    v,
                    f0,
                    eta,
                );
                Ok((dtau, dy_f))
            }
        }
    }

    /// Defect field of the micro-macro system,
    /// `g(tau, w, v) = f(tau, phi_plus(v) + w) - (1/eps) d_tau phi_plus(v)
    ///  - d_y phi_plus(v) . F(v, 0, eps)`,
    /// with a precomputed `f0 = F(v, 0, eps)`.
    pub fn micro_defect(&self, tau: f64, w: &[f64], v: &[f64], f0: &[f64], eps: f64) -> Result<Vec<f64>> {
        match self {
            Self::Exact(trunc) => trunc.micro_defect_field_with(tau, w, v, f0),
            Self::Learned(model) => {
                let phi_v = model.phase_map(PhaseSign::Plus, tau, v, eps)?;
                let f = self
                    .problem()
                    .eval_field(tau, &linalg::add(&phi_v, w))?;
                let (dtau, dy_f) = self.phase_derivatives_with(tau, v, eps, f0)?;
                let mut out = f;
                for i in 0..out.len() {
                    out[i] -= dtau[i] / eps + dy_f[i];
                }
                Ok(out)
            }
        }
    }
}

fn check_horizon(horizon: f64, h: f64) -> Result<()> {
    if !(horizon > 0.0 && h > 0.0 && h <= horizon) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < h <= horizon, got h = {h}, horizon = {horizon}"
        )));
    }
    Ok(())
}

/// Slow-fast scheme: iterate the one-step method on the autonomous macro
/// field y -> F(y, h, eps), then map each macro state through phi_plus at
/// phase t_n / eps. The macro chain starts from y0 directly (phi at phase 0
/// is the identity by structure).
pub fn integrate_slow_fast(
    provider: &DecompositionProvider,
    y0: &[f64],
    horizon: f64,
    h: f64,
    eps: f64,
    method: &OneStepMethod,
) -> Result<Trajectory> {
    provider.check_eps(eps)?;
    check_horizon(horizon, h)?;
    let d = y0.len();
    let macro_path = integrate_path(
        method,
        |_, y| {
            provider
                .averaged_field(y, h, eps)
                .unwrap_or_else(|_| vec![f64::NAN; d])
        },
        y0,
        horizon,
        h,
    )?;
    let mut states = Vec::with_capacity(macro_path.times.len());
    for (t, v) in macro_path.times.iter().zip(&macro_path.states) {
        if !linalg::all_finite(v) {
            return Err(Error::NonFinite(format!("macro state at t = {t}")));
        }
        states.push(provider.phi_plus(t / eps, v, eps)?);
    }
    Ok(Trajectory {
        times: macro_path.times,
        macro_states: Some(macro_path.states),
        micro_states: None,
        states,
    })
}

/// Micro-macro scheme: the slow-fast macro chain plus a defect variable w
/// integrated against g with v frozen over each step; outputs
/// y_n = phi_plus(t_n/eps, v_n) + w_n.
pub fn integrate_micro_macro(
    provider: &DecompositionProvider,
    y0: &[f64],
    horizon: f64,
    h: f64,
    eps: f64,
    method: &OneStepMethod,
) -> Result<Trajectory> {
    provider.check_eps(eps)?;
    check_horizon(horizon, h)?;
    let d = y0.len();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut macros = Vec::new();
    let mut micros = Vec::new();

    let mut t = 0.0;
    let mut v = y0.to_vec();
    let mut w = vec![0.0; d];
    let mut n = 0usize;
    loop {
        let y = linalg::add(&provider.phi_plus(t / eps, &v, eps)?, &w);
        times.push(t);
        states.push(y);
        macros.push(v.clone());
        micros.push(w.clone());

        if t >= horizon - 1e-12 * horizon.max(1.0) {
            break;
        }
        let step = h.min(horizon - t);
        // the macro field keeps the nominal h even on a shortened last step,
        // so the v-chain matches the slow-fast one exactly
        let v_next = method.step(
            |_, z| {
                provider
                    .averaged_field(z, h, eps)
                    .unwrap_or_else(|_| vec![f64::NAN; d])
            },
            t,
            step,
            &v,
        )?;
        if !linalg::all_finite(&v_next) {
            return Err(Error::NonFinite(format!("macro state after step {n}")));
        }
        // the w-step sees v at the scheme's evaluation point — v_n for the
        // Euler step, the step midpoint for the midpoint step — which is the
        // one-step method applied to the coupled (v, w) system and keeps the
        // defect chain at the scheme's full order
        let v_defect: Vec<f64> = match method.kind {
            crate::integrators::MethodKind::ForwardEuler => v.clone(),
            crate::integrators::MethodKind::Midpoint => v
                .iter()
                .zip(&v_next)
                .map(|(a, b)| (a + b) / 2.0)
                .collect(),
        };
        let f0 = provider.averaged_field(&v_defect, 0.0, eps)?;
        let w_next = method.step(
            |tt, ww| {
                provider
                    .micro_defect(tt / eps, ww, &v_defect, &f0, eps)
                    .unwrap_or_else(|_| vec![f64::NAN; d])
            },
            t,
            step,
            &w,
        )?;
        if !linalg::all_finite(&w_next) {
            return Err(Error::NonFiniteMicroState { step: n });
        }
        v = v_next;
        w = w_next;
        t = if t + step >= horizon - 1e-12 * horizon.max(1.0) {
            horizon
        } else {
            t + step
        };
        n += 1;
    }

    Ok(Trajectory {
        times,
        states,
        macro_states: Some(macros),
        micro_states: Some(micros),
    })
}

/// Alternative scheme for autonomous splittings: iterate the learned flow
/// map, then apply the learned periodic map at phase t_n / eps.
pub fn integrate_autonomous_alt(
    model: &StructuredNetSet,
    y0: &[f64],
    horizon: f64,
    h: f64,
    eps: f64,
) -> Result<Trajectory> {
    if model.mode != NetMode::Autonomous {
        return Err(Error::ModeMismatch(
            "alternative scheme needs an autonomous-mode model".into(),
        ));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eps {eps} must lie in (0, 1]"
        )));
    }
    check_horizon(horizon, h)?;

    let mut times = vec![0.0];
    let mut macros = vec![y0.to_vec()];
    let mut t = 0.0;
    while t < horizon - 1e-12 * horizon.max(1.0) {
        let step = h.min(horizon - t);
        let next = model.flow_map(macros.last().unwrap(), step, eps)?;
        if !linalg::all_finite(&next) {
            return Err(Error::NonFinite(format!("flow state at t = {t}")));
        }
        t = if t + step >= horizon - 1e-12 * horizon.max(1.0) {
            horizon
        } else {
            t + step
        };
        times.push(t);
        macros.push(next);
    }
    let mut states = Vec::with_capacity(times.len());
    for (t, u) in times.iter().zip(&macros) {
        states.push(model.auto_phase_map(t / eps, u, eps)?);
    }
    Ok(Trajectory {
        times,
        states,
        macro_states: Some(macros),
        micro_states: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::{reference_flow, ReferenceSolverConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exact(order: usize, problem: OscillatoryProblem, eps: f64) -> DecompositionProvider {
        DecompositionProvider::Exact(TruncatedAveraging::new(order, problem, eps).unwrap())
    }

    /// Reference states at the nodes of a fixed grid, computed by chaining
    /// the adaptive solver segment by segment.
    fn reference_on_grid(
        problem: OscillatoryProblem,
        eps: f64,
        y0: &[f64],
        times: &[f64],
    ) -> Vec<Vec<f64>> {
        let cfg = ReferenceSolverConfig::default();
        let mut states = vec![y0.to_vec()];
        for pair in times.windows(2) {
            let y = reference_flow(
                problem,
                eps,
                pair[0],
                pair[1] - pair[0],
                states.last().unwrap(),
                &cfg,
            )
            .unwrap();
            states.push(y);
        }
        states
    }

    fn max_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| linalg::norm2(&linalg::sub(x, y)))
            .fold(0.0, f64::max)
    }

    #[test]
    fn slow_fast_order_zero_is_plain_averaged_path() {
        let problem = OscillatoryProblem::InvertedPendulum;
        let provider = exact(0, problem, 0.1);
        let method = OneStepMethod::forward_euler();
        let y0 = [0.5, -0.5];
        let traj = integrate_slow_fast(&provider, &y0, 1.0, 0.01, 0.1, &method).unwrap();
        let plain = integrate_path(
            &method,
            |_, y| problem.eval_average_field(y).unwrap(),
            &y0,
            1.0,
            0.01,
        )
        .unwrap();
        assert_eq!(traj.states, plain.states);
        assert_eq!(traj.times, plain.times);
    }

    #[test]
    fn zero_perturbation_nets_match_order_zero_bitwise() {
        let problem = OscillatoryProblem::InvertedPendulum;
        let learned = DecompositionProvider::Learned(StructuredNetSet::zeros(
            problem,
            NetMode::Classical,
            &[8],
        ));
        let exact0 = exact(0, problem, 0.05);
        let method = OneStepMethod::midpoint();
        let y0 = [0.8, 0.4];
        let a = integrate_slow_fast(&learned, &y0, 0.5, 0.02, 0.05, &method).unwrap();
        let b = integrate_slow_fast(&exact0, &y0, 0.5, 0.02, 0.05, &method).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn slow_fast_order_one_tracks_reference() {
        let problem = OscillatoryProblem::InvertedPendulum;
        let eps = 1e-3;
        let y0 = [0.5, -0.5];
        let method = OneStepMethod::forward_euler();
        let mut bounds = Vec::new();
        for h in [0.01, 0.005] {
            let provider = exact(1, problem, eps);
            let traj = integrate_slow_fast(&provider, &y0, 1.0, h, eps, &method).unwrap();
            let reference = reference_on_grid(problem, eps, &y0, &traj.times);
            bounds.push(max_err(&traj.states, &reference) / (h + eps));
        }
        // the error constant of the h + eps bound stays of one size when h
        // is halved
        for c in &bounds {
            assert!(*c < 5.0, "error constants {bounds:?}");
        }
        assert!(bounds[1] < 3.0 * bounds[0], "error constants {bounds:?}");
    }

    #[test]
    fn micro_macro_order_zero_defect_shape() {
        // at order 0 the defect is f(tau, v + w) - <f>(v)
        let problem = OscillatoryProblem::InvertedPendulum;
        let provider = exact(0, problem, 1.0);
        let v = [0.5, -0.5];
        let w = [0.1, 0.2];
        let f0 = provider.averaged_field(&v, 0.0, 1.0).unwrap();
        let g = provider.micro_defect(0.7, &w, &v, &f0, 1.0).unwrap();
        let expected = linalg::sub(
            &problem.eval_field(0.7, &linalg::add(&v, &w)).unwrap(),
            &problem.eval_average_field(&v).unwrap(),
        );
        assert_eq!(g, expected);
    }

    #[test]
    fn micro_macro_order_zero_eps_one_tracks_reference() {
        let problem = OscillatoryProblem::InvertedPendulum;
        let provider = exact(0, problem, 1.0);
        let y0 = [0.5, -0.5];
        let method = OneStepMethod::forward_euler();
        let traj = integrate_micro_macro(&provider, &y0, 1.0, 0.1, 1.0, &method).unwrap();
        let reference = reference_on_grid(problem, 1.0, &y0, &traj.times);
        let err = max_err(&traj.states, &reference);
        assert!(err < 0.5, "err {err}");
        let w_sup = traj
            .micro_states
            .as_ref()
            .unwrap()
            .iter()
            .map(|w| linalg::norm2(w))
            .fold(0.0, f64::max);
        assert!(w_sup < 2.0, "|w| reached {w_sup}");
    }

    #[test]
    fn micro_macro_macro_chain_matches_slow_fast() {
        let problem = OscillatoryProblem::InvertedPendulum;
        let eps = 5e-2;
        let y0 = [0.5, -0.5];
        for method in [OneStepMethod::forward_euler(), OneStepMethod::midpoint()] {
            let provider = exact(1, problem, eps);
            let mm = integrate_micro_macro(&provider, &y0, 0.5, 0.05, eps, &method).unwrap();
            let sf = integrate_slow_fast(&provider, &y0, 0.5, 0.05, eps, &method).unwrap();
            assert_eq!(mm.macro_states, sf.macro_states);
            // states differ from the slow-fast ones exactly by w
            for ((y_mm, y_sf), w) in mm
                .states
                .iter()
                .zip(&sf.states)
                .zip(mm.micro_states.as_ref().unwrap())
            {
                for i in 0..2 {
                    assert!((y_mm[i] - y_sf[i] - w[i]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn micro_macro_order_one_euler_first_order_in_h() {
        let problem = OscillatoryProblem::InvertedPendulum;
        let eps = 5e-2;
        let y0 = [0.5, -0.5];
        let method = OneStepMethod::forward_euler();
        let provider = exact(1, problem, eps);
        let mut errs = Vec::new();
        for h in [0.04, 0.02, 0.01] {
            let traj = integrate_micro_macro(&provider, &y0, 1.0, h, eps, &method).unwrap();
            let reference = reference_on_grid(problem, eps, &y0, &traj.times);
            errs.push(max_err(&traj.states, &reference));
        }
        let slope = (errs[0] / errs[2]).ln() / 4.0f64.ln();
        assert!((slope - 1.0).abs() < 0.15, "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn micro_defect_start_shrinks_with_eps() {
        // |w_1| after one step decreases with eps for the order-1 provider
        let problem = OscillatoryProblem::InvertedPendulum;
        let y0 = [0.5, -0.5];
        let method = OneStepMethod::forward_euler();
        let mut w1 = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3] {
            let provider = exact(1, problem, eps);
            let traj = integrate_micro_macro(&provider, &y0, 0.02, 0.01, eps, &method).unwrap();
            w1.push(linalg::norm2(&traj.micro_states.as_ref().unwrap()[1]));
        }
        assert!(w1[1] < w1[0] && w1[2] < w1[1], "|w1| sequence {w1:?}");
    }

    #[test]
    fn phase_derivative_examples() {
        let problem = OscillatoryProblem::InvertedPendulum;
        let v = [0.5, -0.5];

        let p0 = exact(0, problem, 0.1);
        let (dtau, dyf) = p0.phase_derivatives(1.0, &v, 0.1).unwrap();
        assert_eq!(dtau, vec![0.0, 0.0]);
        assert_eq!(dyf, problem.eval_average_field(&v).unwrap());

        let learned = DecompositionProvider::Learned(StructuredNetSet::zeros(
            problem,
            NetMode::Classical,
            &[8],
        ));
        let (dtau, dyf) = learned.phase_derivatives(1.0, &v, 0.1).unwrap();
        let f = problem.eval_average_field(&v).unwrap();
        assert!(linalg::norm2(&dtau) < 1e-9);
        assert!(linalg::norm2(&linalg::sub(&dyf, &f)) < 1e-9);

        // FD in tau of the order-1 map agrees with its analytic derivative
        let p1 = TruncatedAveraging::new(1, problem, 0.1).unwrap();
        let eta = 1e-5;
        let plus = p1.phi(1.0 + eta, &v).unwrap();
        let minus = p1.phi(1.0 - eta, &v).unwrap();
        let fd: Vec<f64> = plus
            .iter()
            .zip(&minus)
            .map(|(a, b)| (a - b) / (2.0 * eta))
            .collect();
        let analytic = p1.phi_dtau(1.0, &v).unwrap();
        assert!(linalg::norm2(&linalg::sub(&fd, &analytic)) < 1e-8);
    }

    #[test]
    fn uniform_accuracy_across_eps_midpoint() {
        let problem = OscillatoryProblem::InvertedPendulum;
        let y0 = [0.5, -0.5];
        let method = OneStepMethod::midpoint();
        let h = 1e-2;
        let mut errs = Vec::new();
        for eps in [1e-3, 1e-2, 1e-1, 1.0] {
            let provider = exact(1, problem, eps);
            let traj = integrate_micro_macro(&provider, &y0, 0.5, h, eps, &method).unwrap();
            let reference = reference_on_grid(problem, eps, &y0, &traj.times);
            errs.push(max_err(&traj.states, &reference));
        }
        let lo = errs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = errs.iter().cloned().fold(0.0, f64::max);
        assert!(hi / lo < 5.0, "errors across eps: {errs:?}");
    }

    #[test]
    fn autonomous_alt_zero_nets_constant() {
        let model = StructuredNetSet::zeros(
            OscillatoryProblem::VanDerPol,
            NetMode::Autonomous,
            &[8],
        );
        let y0 = [0.4, -0.6];
        let traj = integrate_autonomous_alt(&model, &y0, 0.5, 0.05, 0.1).unwrap();
        assert!(traj.states.iter().all(|y| y == &y0.to_vec()));
    }

    #[test]
    fn autonomous_alt_periodic_phase_is_bare_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model =
            StructuredNetSet::autonomous(OscillatoryProblem::VanDerPol, &[10], &mut rng);
        let eps = 0.1;
        let h = std::f64::consts::TAU * eps; // every t_n is a whole period
        let y0 = [0.4, -0.6];
        let traj = integrate_autonomous_alt(&model, &y0, 4.0 * h, h, eps).unwrap();
        let macros = traj.macro_states.as_ref().unwrap();
        for (y, u) in traj.states.iter().zip(macros) {
            assert!(linalg::norm2(&linalg::sub(y, u)) < 1e-12);
        }
    }

    #[test]
    fn autonomous_alt_rejects_classical_model() {
        let model = StructuredNetSet::zeros(
            OscillatoryProblem::VanDerPol,
            NetMode::Classical,
            &[8],
        );
        assert!(integrate_autonomous_alt(&model, &[0.1, 0.1], 0.5, 0.05, 0.1).is_err());
    }

    #[test]
    fn eps_mismatch_rejected() {
        let provider = exact(1, OscillatoryProblem::InvertedPendulum, 0.1);
        let method = OneStepMethod::forward_euler();
        assert!(integrate_slow_fast(&provider, &[0.1, 0.1], 0.5, 0.05, 0.2, &method).is_err());
    }
}
