//! Identity-perturbation networks: every learned map is the identity (or a
//! known averaged field) plus a small correction net, so the maps are exact
//! where the structure demands it — the phase maps reduce to the identity at
//! zero phase by construction.

use crate::error::{Error, Result};
use crate::neuralnet::mlp::{Mlp, MlpGrads};
use crate::problems::OscillatoryProblem;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetMode {
    /// Averaged field net plus forward/inverse phase maps.
    Classical,
    /// Macro flow net plus a single phase map for the autonomous splitting.
    Autonomous,
}

impl NetMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Classical => "classical",
            Self::Autonomous => "autonomous",
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "classical" => Ok(Self::Classical),
            "autonomous" => Ok(Self::Autonomous),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

/// Which phase map of a classical set: `Plus` maps slow to oscillatory
/// coordinates, `Minus` is its learned approximate inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSign {
    Plus,
    Minus,
}

// Net ordering inside `StructuredNetSet::nets`.
const F_NET: usize = 0;
const PLUS_NET: usize = 1;
const MINUS_NET: usize = 2;
const FLOW_NET: usize = 0;
const PHASE_NET: usize = 1;

/// The trainable model: a problem (for its known averaged field) plus the
/// correction networks for one of the two parameterizations.
#[derive(Debug, Clone)]
pub struct StructuredNetSet {
    pub problem: OscillatoryProblem,
    pub mode: NetMode,
    nets: Vec<Mlp>,
}

/// Gradient accumulator mirroring the networks of a `StructuredNetSet`.
#[derive(Debug, Clone)]
pub struct StructuredGrads {
    pub per_net: Vec<MlpGrads>,
}

impl StructuredGrads {
    pub fn zeros_like(model: &StructuredNetSet) -> Self {
        Self {
            per_net: model.nets.iter().map(MlpGrads::zeros_like).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &StructuredGrads) {
        for (a, b) in self.per_net.iter_mut().zip(&other.per_net) {
            a.accumulate(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.per_net.iter_mut() {
            g.scale(s);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.per_net {
            out.extend(g.to_flat());
        }
        out
    }
}

fn hidden_widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

impl StructuredNetSet {
    /// Correction nets for the averaged field (input `[y, h, eps]`) and the
    /// two phase maps (input `[cos tau, sin tau, y, eps]`).
    pub fn classical<R: Rng>(problem: OscillatoryProblem, hidden: &[usize], rng: &mut R) -> Self {
        let d = problem.dimension();
        let nets = vec![
            Mlp::init(&hidden_widths(d + 2, hidden, d), rng),
            Mlp::init(&hidden_widths(d + 3, hidden, d), rng),
            Mlp::init(&hidden_widths(d + 3, hidden, d), rng),
        ];
        Self {
            problem,
            mode: NetMode::Classical,
            nets,
        }
    }

    /// Correction nets for the macro flow map (input `[y, h, eps]`) and the
    /// shared phase map (input `[cos tau, sin tau, y, eps]`).
    pub fn autonomous<R: Rng>(problem: OscillatoryProblem, hidden: &[usize], rng: &mut R) -> Self {
        let d = problem.dimension();
        let nets = vec![
            Mlp::init(&hidden_widths(d + 2, hidden, d), rng),
            Mlp::init(&hidden_widths(d + 3, hidden, d), rng),
        ];
        Self {
            problem,
            mode: NetMode::Autonomous,
            nets,
        }
    }

    /// With all corrections zero the maps collapse to their structural
    /// skeletons; mostly useful in tests.
    pub fn zeros(problem: OscillatoryProblem, mode: NetMode, hidden: &[usize]) -> Self {
        let d = problem.dimension();
        let nets = match mode {
            NetMode::Classical => vec![
                Mlp::zeros(&hidden_widths(d + 2, hidden, d)),
                Mlp::zeros(&hidden_widths(d + 3, hidden, d)),
                Mlp::zeros(&hidden_widths(d + 3, hidden, d)),
            ],
            NetMode::Autonomous => vec![
                Mlp::zeros(&hidden_widths(d + 2, hidden, d)),
                Mlp::zeros(&hidden_widths(d + 3, hidden, d)),
            ],
        };
        Self {
            problem,
            mode,
            nets,
        }
    }

    pub fn from_nets(
        problem: OscillatoryProblem,
        mode: NetMode,
        nets: Vec<Mlp>,
    ) -> Result<Self> {
        let d = problem.dimension();
        let expected_inputs: &[usize] = match mode {
            NetMode::Classical => &[2, 3, 3],
            NetMode::Autonomous => &[2, 3],
        };
        if nets.len() != expected_inputs.len() {
            return Err(Error::DimensionMismatch {
                expected: expected_inputs.len(),
                got: nets.len(),
            });
        }
        for (net, extra) in nets.iter().zip(expected_inputs) {
            if net.input_width() != d + extra {
                return Err(Error::DimensionMismatch {
                    expected: d + extra,
                    got: net.input_width(),
                });
            }
            if net.output_width() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: net.output_width(),
                });
            }
        }
        Ok(Self {
            problem,
            mode,
            nets,
        })
    }

    pub fn nets(&self) -> &[Mlp] {
        &self.nets
    }

    pub fn num_params(&self) -> usize {
        self.nets.iter().map(Mlp::num_params).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for net in &self.nets {
            out.extend(net.to_flat());
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for net in self.nets.iter_mut() {
            let n = net.num_params();
            net.set_from_flat(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn require(&self, mode: NetMode, what: &str) -> Result<()> {
        if self.mode != mode {
            return Err(Error::ModeMismatch(format!(
                "{what} requires a {} model, this one is {}",
                mode.name(),
                self.mode.name()
            )));
        }
        Ok(())
    }

    fn phase_net_index(&self, sign: PhaseSign) -> usize {
        match sign {
            PhaseSign::Plus => PLUS_NET,
            PhaseSign::Minus => MINUS_NET,
        }
    }

    // --- classical parameterization -------------------------------------

    /// Learned averaged field: known average of the problem plus correction.
    pub fn averaged_field(&self, y: &[f64], h: f64, eps: f64) -> Result<Vec<f64>> {
        self.require(NetMode::Classical, "averaged_field")?;
        let mut out = self.problem.eval_average_field(y)?;
        let r = self.nets[F_NET].forward(&field_input(y, h, eps))?;
        for (o, v) in out.iter_mut().zip(&r) {
            *o += v;
        }
        Ok(out)
    }

    /// Gradient of `upstream . averaged_field` with respect to the field-net
    /// parameters (accumulated into `grads`) and to `y` (returned).  The
    /// known-average term contributes its analytic Jacobian transpose.
    pub fn averaged_field_vjp(
        &self,
        y: &[f64],
        h: f64,
        eps: f64,
        upstream: &[f64],
        grads: &mut StructuredGrads,
    ) -> Result<Vec<f64>> {
        self.require(NetMode::Classical, "averaged_field_vjp")?;
        let d = y.len();
        let net = &self.nets[F_NET];
        let trace = net.forward_trace(&field_input(y, h, eps))?;
        let (g, input_grad) = net.backward(&trace, upstream);
        grads.per_net[F_NET].accumulate(&g);
        let jac = self.problem.average_field_jacobian(y);
        let mut y_grad = input_grad[..d].to_vec();
        for r in 0..d {
            for c in 0..d {
                y_grad[c] += jac[r * d + c] * upstream[r];
            }
        }
        Ok(y_grad)
    }

    /// Phase map `y + eps * (R(cos,sin,y,eps) - R(1,0,y,eps))`; at phases
    /// that are exact multiples of 2*pi the two net terms cancel bit for bit.
    pub fn phase_map(&self, sign: PhaseSign, tau: f64, y: &[f64], eps: f64) -> Result<Vec<f64>> {
        self.require(NetMode::Classical, "phase_map")?;
        let net = &self.nets[self.phase_net_index(sign)];
        perturbed_identity(net, tau, y, eps, eps)
    }

    pub fn phase_map_vjp(
        &self,
        sign: PhaseSign,
        tau: f64,
        y: &[f64],
        eps: f64,
        upstream: &[f64],
        grads: &mut StructuredGrads,
    ) -> Result<Vec<f64>> {
        self.require(NetMode::Classical, "phase_map_vjp")?;
        let idx = self.phase_net_index(sign);
        perturbed_identity_vjp(&self.nets[idx], tau, y, eps, eps, upstream, &mut grads.per_net[idx])
    }

    // --- autonomous parameterization ------------------------------------

    /// Learned macro flow over one step: `y + h * R(y, h, eps)`.
    pub fn flow_map(&self, y: &[f64], h: f64, eps: f64) -> Result<Vec<f64>> {
        self.require(NetMode::Autonomous, "flow_map")?;
        let r = self.nets[FLOW_NET].forward(&field_input(y, h, eps))?;
        Ok(y.iter().zip(&r).map(|(a, b)| a + h * b).collect())
    }

    pub fn flow_map_vjp(
        &self,
        y: &[f64],
        h: f64,
        eps: f64,
        upstream: &[f64],
        grads: &mut StructuredGrads,
    ) -> Result<Vec<f64>> {
        self.require(NetMode::Autonomous, "flow_map_vjp")?;
        let d = y.len();
        let net = &self.nets[FLOW_NET];
        let trace = net.forward_trace(&field_input(y, h, eps))?;
        let scaled: Vec<f64> = upstream.iter().map(|u| h * u).collect();
        let (g, input_grad) = net.backward(&trace, &scaled);
        grads.per_net[FLOW_NET].accumulate(&g);
        Ok((0..d).map(|c| upstream[c] + input_grad[c]).collect())
    }

    /// Autonomous phase map `y + R(cos,sin,y,eps) - R(1,0,y,eps)`; identity
    /// at zero phase by the same cancellation as the classical maps.
    pub fn auto_phase_map(&self, tau: f64, y: &[f64], eps: f64) -> Result<Vec<f64>> {
        self.require(NetMode::Autonomous, "auto_phase_map")?;
        perturbed_identity(&self.nets[PHASE_NET], tau, y, eps, 1.0)
    }

    pub fn auto_phase_map_vjp(
        &self,
        tau: f64,
        y: &[f64],
        eps: f64,
        upstream: &[f64],
        grads: &mut StructuredGrads,
    ) -> Result<Vec<f64>> {
        self.require(NetMode::Autonomous, "auto_phase_map_vjp")?;
        perturbed_identity_vjp(
            &self.nets[PHASE_NET],
            tau,
            y,
            eps,
            1.0,
            upstream,
            &mut grads.per_net[PHASE_NET],
        )
    }
}

fn field_input(y: &[f64], h: f64, eps: f64) -> Vec<f64> {
    let mut x = y.to_vec();
    x.push(h);
    x.push(eps);
    x
}

fn phase_input(tau: f64, y: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    // reduce before the trig calls: tau = t/eps grows to 1e3 and exact
    // reduction makes 2pi-periodicity hold to the bit for representable sums
    let tau = crate::problems::reduce_phase(tau);
    let mut at = vec![tau.cos(), tau.sin()];
    at.extend_from_slice(y);
    at.push(eps);
    let mut base = vec![1.0, 0.0];
    base.extend_from_slice(y);
    base.push(eps);
    (at, base)
}

fn perturbed_identity(net: &Mlp, tau: f64, y: &[f64], eps: f64, scale: f64) -> Result<Vec<f64>> {
    let (at, base) = phase_input(tau, y, eps);
    let ra = net.forward(&at)?;
    let rb = net.forward(&base)?;
    Ok(y.iter()
        .zip(ra.iter().zip(&rb))
        .map(|(yi, (a, b))| yi + scale * (a - b))
        .collect())
}

fn perturbed_identity_vjp(
    net: &Mlp,
    tau: f64,
    y: &[f64],
    eps: f64,
    scale: f64,
    upstream: &[f64],
    grads: &mut MlpGrads,
) -> Result<Vec<f64>> {
    let d = y.len();
    let (at, base) = phase_input(tau, y, eps);
    let trace_a = net.forward_trace(&at)?;
    let trace_b = net.forward_trace(&base)?;
    let pos: Vec<f64> = upstream.iter().map(|u| scale * u).collect();
    let neg: Vec<f64> = upstream.iter().map(|u| -scale * u).collect();
    let (ga, ia) = net.backward(&trace_a, &pos);
    let (gb, ib) = net.backward(&trace_b, &neg);
    grads.accumulate(&ga);
    grads.accumulate(&gb);
    // y occupies input slots 2..2+d of both evaluations
    Ok((0..d)
        .map(|c| upstream[c] + ia[2 + c] + ib[2 + c])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::TWO_PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn classical_model(seed: u64) -> StructuredNetSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StructuredNetSet::classical(OscillatoryProblem::InvertedPendulum, &[12, 12], &mut rng)
    }

    fn autonomous_model(seed: u64) -> StructuredNetSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StructuredNetSet::autonomous(OscillatoryProblem::VanDerPol, &[12], &mut rng)
    }

    #[test]
    fn zero_correction_reduces_to_skeleton() {
        let model = StructuredNetSet::zeros(
            OscillatoryProblem::InvertedPendulum,
            NetMode::Classical,
            &[8],
        );
        let y = [0.7, -0.3];
        let f = model.averaged_field(&y, 0.01, 0.05).unwrap();
        assert_eq!(f, model.problem.eval_average_field(&y).unwrap());
        for sign in [PhaseSign::Plus, PhaseSign::Minus] {
            assert_eq!(model.phase_map(sign, 1.3, &y, 0.05).unwrap(), y.to_vec());
        }
    }

    #[test]
    fn phase_map_identity_at_zero_phase_exactly() {
        let model = classical_model(7);
        let y = [1.2, -0.8];
        for sign in [PhaseSign::Plus, PhaseSign::Minus] {
            assert_eq!(model.phase_map(sign, 0.0, &y, 0.3).unwrap(), y.to_vec());
        }
        let auto = autonomous_model(8);
        assert_eq!(auto.auto_phase_map(0.0, &y, 0.3).unwrap(), y.to_vec());
    }

    #[test]
    fn phase_map_periodic() {
        let model = classical_model(9);
        let y = [0.4, 0.9];
        let a = model.phase_map(PhaseSign::Plus, 1.1, &y, 0.2).unwrap();
        let b = model
            .phase_map(PhaseSign::Plus, 1.1 + TWO_PI, &y, 0.2)
            .unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_map_perturbation_scales_with_eps() {
        let model = classical_model(10);
        let y = [0.4, 0.9];
        let d1: f64 = model
            .phase_map(PhaseSign::Minus, 2.0, &y, 1e-2)
            .unwrap()
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .sum();
        let d2: f64 = model
            .phase_map(PhaseSign::Minus, 2.0, &y, 1e-3)
            .unwrap()
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .sum();
        // amplitude prefactor is eps itself; the net also sees eps as an
        // input, so the ratio is close to 10 but not exact
        assert!(d1 / d2 > 5.0 && d1 / d2 < 20.0);
    }

    #[test]
    fn mode_mismatch_rejected() {
        let model = classical_model(11);
        assert!(model.flow_map(&[0.0, 0.0], 0.01, 0.1).is_err());
        let auto = autonomous_model(12);
        assert!(auto.averaged_field(&[0.0, 0.0], 0.01, 0.1).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let model = classical_model(13);
        let flat = model.to_flat();
        let mut other = StructuredNetSet::zeros(
            OscillatoryProblem::InvertedPendulum,
            NetMode::Classical,
            &[12, 12],
        );
        other.set_from_flat(&flat).unwrap();
        assert_eq!(other.to_flat(), flat);
        let y = [0.3, 0.5];
        assert_eq!(
            other.averaged_field(&y, 0.02, 0.4).unwrap(),
            model.averaged_field(&y, 0.02, 0.4).unwrap()
        );
    }

    fn fd_check<F: Fn(&StructuredNetSet, &[f64]) -> f64>(
        model: &StructuredNetSet,
        y: &[f64],
        scalar: F,
        flat_grads: &[f64],
        y_grad: &[f64],
    ) {
        let eta = 1e-6;
        let flat = model.to_flat();
        let mut probe = model.clone();
        for idx in (0..flat.len()).step_by(13) {
            let mut fp = flat.clone();
            let mut fm = flat.clone();
            fp[idx] += eta;
            fm[idx] -= eta;
            probe.set_from_flat(&fp).unwrap();
            let lp = scalar(&probe, y);
            probe.set_from_flat(&fm).unwrap();
            let lm = scalar(&probe, y);
            let fd = (lp - lm) / (2.0 * eta);
            let denom = fd.abs().max(flat_grads[idx].abs()).max(1e-8);
            assert!(
                ((flat_grads[idx] - fd) / denom).abs() < 1e-5,
                "param {idx}: {} vs {fd}",
                flat_grads[idx]
            );
        }
        probe.set_from_flat(&flat).unwrap();
        for j in 0..y.len() {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[j] += eta;
            ym[j] -= eta;
            let fd = (scalar(&probe, &yp) - scalar(&probe, &ym)) / (2.0 * eta);
            let denom = fd.abs().max(y_grad[j].abs()).max(1e-8);
            assert!(((y_grad[j] - fd) / denom).abs() < 1e-5);
        }
    }

    #[test]
    fn averaged_field_vjp_matches_fd() {
        let model = classical_model(20);
        let y = [0.8, -0.5];
        let upstream = [1.3, -0.4];
        let mut grads = StructuredGrads::zeros_like(&model);
        let y_grad = model
            .averaged_field_vjp(&y, 0.02, 0.3, &upstream, &mut grads)
            .unwrap();
        fd_check(
            &model,
            &y,
            |m, y| {
                m.averaged_field(y, 0.02, 0.3)
                    .unwrap()
                    .iter()
                    .zip(&upstream)
                    .map(|(o, u)| o * u)
                    .sum()
            },
            &grads.to_flat(),
            &y_grad,
        );
    }

    #[test]
    fn phase_map_vjp_matches_fd() {
        let model = classical_model(21);
        let y = [0.2, 1.1];
        let upstream = [-0.7, 0.9];
        for sign in [PhaseSign::Plus, PhaseSign::Minus] {
            let mut grads = StructuredGrads::zeros_like(&model);
            let y_grad = model
                .phase_map_vjp(sign, 2.4, &y, 0.15, &upstream, &mut grads)
                .unwrap();
            fd_check(
                &model,
                &y,
                |m, y| {
                    m.phase_map(sign, 2.4, y, 0.15)
                        .unwrap()
                        .iter()
                        .zip(&upstream)
                        .map(|(o, u)| o * u)
                        .sum()
                },
                &grads.to_flat(),
                &y_grad,
            );
        }
    }

    #[test]
    fn autonomous_vjps_match_fd() {
        let model = autonomous_model(22);
        let y = [0.6, -0.9];
        let upstream = [0.5, 1.5];
        let mut grads = StructuredGrads::zeros_like(&model);
        let y_grad = model
            .flow_map_vjp(&y, 0.04, 0.2, &upstream, &mut grads)
            .unwrap();
        fd_check(
            &model,
            &y,
            |m, y| {
                m.flow_map(y, 0.04, 0.2)
                    .unwrap()
                    .iter()
                    .zip(&upstream)
                    .map(|(o, u)| o * u)
                    .sum()
            },
            &grads.to_flat(),
            &y_grad,
        );

        let mut grads = StructuredGrads::zeros_like(&model);
        let y_grad = model
            .auto_phase_map_vjp(1.9, &y, 0.2, &upstream, &mut grads)
            .unwrap();
        fd_check(
            &model,
            &y,
            |m, y| {
                m.auto_phase_map(1.9, y, 0.2)
                    .unwrap()
                    .iter()
                    .zip(&upstream)
                    .map(|(o, u)| o * u)
                    .sum()
            },
            &grads.to_flat(),
            &y_grad,
        );
    }
}
