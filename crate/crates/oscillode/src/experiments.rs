//! Measurement campaigns: learning-error grids over epsilon, global-error
//! curves over step size, uniform-accuracy sweeps, and a two-scale training
//! comparison. Tables are emitted as CSV, charts as best-effort SVG.

use crate::averaging::TruncatedAveraging;
use crate::datagen::{build_dataset, Dataset, SamplingDomains};
use crate::error::{Error, Result};
use crate::integrators::{reference_flow, OneStepMethod, ReferenceSolverConfig, Trajectory};
use crate::linalg;
use crate::micromacro::{
    integrate_autonomous_alt, integrate_micro_macro, integrate_slow_fast, DecompositionProvider,
};
use crate::neuralnet::StructuredNetSet;
use crate::problems::{OscillatoryProblem, TWO_PI};
use crate::training::{train, TrainConfig};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Environment variable pointing at the reference-trajectory cache directory.
pub const CACHE_DIR_ENV: &str = "OSCILLODE_CACHE_DIR";

#[derive(Debug, Clone)]
pub struct GridSpec {
    /// Per-axis node counts over the box.
    pub nodes_per_axis: Vec<usize>,
    pub omega: Vec<(f64, f64)>,
    /// Phase nodes over [0, 2*pi], endpoints included.
    pub tau_nodes: usize,
    pub eps_list: Vec<f64>,
    pub h_list: Vec<f64>,
}

impl GridSpec {
    /// 31 x 31 state nodes over [-2,2]^2 and 31 phase nodes.
    pub fn standard(eps_list: Vec<f64>, h_list: Vec<f64>) -> Self {
        Self {
            nodes_per_axis: vec![31, 31],
            omega: vec![(-2.0, 2.0), (-2.0, 2.0)],
            tau_nodes: 31,
            eps_list,
            h_list,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.nodes_per_axis.len() != self.omega.len() {
            problems.push("node counts and box axes differ in length".to_string());
        }
        if self.nodes_per_axis.iter().any(|&n| n < 2) || self.tau_nodes < 2 {
            problems.push("every axis needs at least 2 nodes".to_string());
        }
        for (name, list) in [("eps", &self.eps_list), ("h", &self.h_list)] {
            if list.is_empty() {
                problems.push(format!("{name} list is empty"));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                problems.push(format!("{name} list must be strictly increasing"));
            }
            if list.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                problems.push(format!("{name} list must be positive and finite"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Cartesian product of equispaced per-axis nodes, in row-major order.
    pub fn state_nodes(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .nodes_per_axis
            .iter()
            .zip(&self.omega)
            .map(|(&n, &(lo, hi))| {
                (0..n)
                    .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                    .collect()
            })
            .collect();
        let mut nodes = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(nodes.len() * axis.len());
            for prefix in &nodes {
                for &v in axis {
                    let mut p = prefix.clone();
                    p.push(v);
                    next.push(p);
                }
            }
            nodes = next;
        }
        nodes
    }

    pub fn phase_nodes(&self) -> Vec<f64> {
        (0..self.tau_nodes)
            .map(|j| TWO_PI * j as f64 / (self.tau_nodes - 1) as f64)
            .collect()
    }
}

/// Max-norm errors on a (row axis) x (column axis) grid; `None` marks a cell
/// whose computation failed.
#[derive(Debug, Clone)]
pub struct ErrorTable {
    pub row_label: String,
    pub col_labels: Vec<String>,
    pub row_values: Vec<f64>,
    pub cells: Vec<Vec<Option<f64>>>,
    pub metadata: Vec<(String, String)>,
}

impl ErrorTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "{},{}", self.row_label, self.col_labels.join(","));
        for (value, row) in self.row_values.iter().zip(&self.cells) {
            let cols: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Some(v) => format!("{v:.16e}"),
                    None => "failed".to_string(),
                })
                .collect();
            let _ = writeln!(out, "{value:.16e},{}", cols.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_csv())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// One polyline per column, log-log axes; plotting is plumbing, so any
    /// failure is reported but carries no numerical meaning.
    pub fn write_svg(&self, path: &Path, title: &str) -> Result<()> {
        let (width, height, margin) = (640.0, 480.0, 60.0);
        let finite: Vec<(f64, f64)> = self
            .row_values
            .iter()
            .zip(&self.cells)
            .flat_map(|(x, row)| row.iter().flatten().map(move |y| (*x, *y)))
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .collect();
        if finite.is_empty() {
            return Err(Error::InvalidArgument("nothing to plot".into()));
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (x, y) in &finite {
            x0 = x0.min(x.log10());
            x1 = x1.max(x.log10());
            y0 = y0.min(y.log10());
            y1 = y1.max(y.log10());
        }
        let spanx = (x1 - x0).max(1e-12);
        let spany = (y1 - y0).max(1e-12);
        let px = |x: f64| margin + (x.log10() - x0) / spanx * (width - 2.0 * margin);
        let py = |y: f64| height - margin - (y.log10() - y0) / spany * (height - 2.0 * margin);

        let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\">{title}</text>\n",
            width / 2.0
        );
        for (c, label) in self.col_labels.iter().enumerate() {
            let color = palette[c % palette.len()];
            let points: Vec<String> = self
                .row_values
                .iter()
                .zip(&self.cells)
                .filter_map(|(x, row)| row[c].map(|y| (x, y)))
                .filter(|(x, y)| **x > 0.0 && *y > 0.0)
                .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(y)))
                .collect();
            if points.is_empty() {
                continue;
            }
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                points.join(" ")
            );
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{label}</text>",
                width - margin + 4.0,
                margin + 14.0 * c as f64
            );
        }
        svg.push_str("</svg>\n");
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, svg)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn cache_key(problem: OscillatoryProblem, eps: f64, y0: &[f64], times: &[f64]) -> u64 {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(problem.name().as_bytes());
    bytes.extend_from_slice(&eps.to_bits().to_le_bytes());
    for v in y0.iter().chain(times) {
        bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fnv1a(&bytes)
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from)
}

/// Reference states at the given times, chained segment by segment with the
/// adaptive solver and cached on disk when the cache directory is set.
pub fn reference_states(
    problem: OscillatoryProblem,
    eps: f64,
    y0: &[f64],
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let cache_path = cache_dir().map(|dir| {
        dir.join(format!(
            "ref-{}-{:016x}.csv",
            problem.name(),
            cache_key(problem, eps, y0, times)
        ))
    });
    if let Some(path) = &cache_path {
        if let Ok(text) = std::fs::read_to_string(path) {
            let mut states = Vec::new();
            for line in text.lines() {
                let row: std::result::Result<Vec<f64>, _> =
                    line.split(',').map(str::parse).collect();
                match row {
                    Ok(r) if r.len() == y0.len() => states.push(r),
                    _ => {
                        states.clear();
                        break;
                    }
                }
            }
            if states.len() == times.len() {
                return Ok(states);
            }
        }
    }

    let cfg = ReferenceSolverConfig::default();
    let mut states = vec![y0.to_vec()];
    for pair in times.windows(2) {
        let next = reference_flow(
            problem,
            eps,
            pair[0],
            pair[1] - pair[0],
            states.last().unwrap(),
            &cfg,
        )?;
        states.push(next);
    }

    if let Some(path) = &cache_path {
        if let Some(dir) = path.parent() {
            let _ = std::fs::create_dir_all(dir);
        }
        let mut text = String::new();
        for row in &states {
            let cols: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(text, "{}", cols.join(","));
        }
        let tmp = path.with_extension("tmp");
        if std::fs::write(&tmp, text).is_ok() {
            let _ = std::fs::rename(&tmp, path);
        }
    }
    Ok(states)
}

/// Max over the state grid of |F_theta(y,0,eps) - F^[k](y)| and max over the
/// (state, phase) grid of |phi_theta_plus(tau,y,eps) - phi^[k]_tau(y)|, one
/// row per eps.
pub fn learning_error_vs_eps(
    model: &StructuredNetSet,
    grid: &GridSpec,
    truncation_order: usize,
) -> Result<ErrorTable> {
    grid.validate()?;
    let states = grid.state_nodes();
    let phases = grid.phase_nodes();
    let problem = model.problem;

    let mut cells = Vec::with_capacity(grid.eps_list.len());
    for &eps in &grid.eps_list {
        let trunc = TruncatedAveraging::new(truncation_order, problem, eps)?;
        let (f_err, phi_err) = states
            .par_iter()
            .map(|y| {
                let fe = linalg::norm2(&linalg::sub(
                    &model.averaged_field(y, 0.0, eps)?,
                    &trunc.averaged_field(y)?,
                ));
                let mut pe = 0.0f64;
                for &tau in &phases {
                    let gap = linalg::norm2(&linalg::sub(
                        &model.phase_map(crate::neuralnet::PhaseSign::Plus, tau, y, eps)?,
                        &trunc.phi(tau, y)?,
                    ));
                    pe = pe.max(gap);
                }
                Ok((fe, pe))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold((0.0f64, 0.0f64), |(a, b), (fe, pe)| (a.max(fe), b.max(pe)));
        cells.push(vec![Some(f_err), Some(phi_err)]);
    }

    Ok(ErrorTable {
        row_label: "eps".to_string(),
        col_labels: vec!["field_error".to_string(), "phase_map_error".to_string()],
        row_values: grid.eps_list.clone(),
        cells,
        metadata: vec![
            ("problem".to_string(), problem.name().to_string()),
            ("truncation".to_string(), truncation_order.to_string()),
        ],
    })
}

/// Which inference-time integrator a sweep exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    SlowFast,
    MicroMacro,
    AutonomousAlt,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SlowFast => "slowfast",
            Self::MicroMacro => "micromacro",
            Self::AutonomousAlt => "auto-alt",
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "slowfast" => Ok(Self::SlowFast),
            "micromacro" => Ok(Self::MicroMacro),
            "auto-alt" => Ok(Self::AutonomousAlt),
            other => Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Dispatches one integration run to the scheme's implementation.
pub fn run_scheme(
    provider: &DecompositionProvider,
    scheme: Scheme,
    y0: &[f64],
    horizon: f64,
    h: f64,
    eps: f64,
    method: &OneStepMethod,
) -> Result<Trajectory> {
    match scheme {
        Scheme::SlowFast => integrate_slow_fast(provider, y0, horizon, h, eps, method),
        Scheme::MicroMacro => integrate_micro_macro(provider, y0, horizon, h, eps, method),
        Scheme::AutonomousAlt => match provider {
            DecompositionProvider::Learned(model) => {
                integrate_autonomous_alt(model, y0, horizon, h, eps)
            }
            DecompositionProvider::Exact(_) => Err(Error::InvalidArgument(
                "the alternative scheme needs a trained autonomous model".into(),
            )),
        },
    }
}

/// Builds an exact provider matching `provider`'s family for each eps in a
/// sweep: learned providers are eps-independent, exact ones are rebuilt.
fn provider_for_eps(provider: &DecompositionProvider, eps: f64) -> Result<DecompositionProvider> {
    Ok(match provider {
        DecompositionProvider::Learned(model) => DecompositionProvider::Learned(model.clone()),
        DecompositionProvider::Exact(trunc) => DecompositionProvider::Exact(
            TruncatedAveraging::new(trunc.order, trunc.problem, eps)?,
        ),
    })
}

/// Max-over-time Euclidean error against the reference flow for every
/// (h, eps) pair; failed cells are recorded and the sweep continues.
pub fn global_error_curve(
    provider: &DecompositionProvider,
    scheme: Scheme,
    y0: &[f64],
    horizon: f64,
    h_list: &[f64],
    eps_list: &[f64],
    method: &OneStepMethod,
) -> Result<ErrorTable> {
    if h_list.is_empty() || eps_list.is_empty() {
        return Err(Error::Validation(vec![
            "h and eps lists must be nonempty".to_string()
        ]));
    }
    let problem = provider.problem();
    let mut cells = vec![vec![None; eps_list.len()]; h_list.len()];
    for (j, &eps) in eps_list.iter().enumerate() {
        let sweep_provider = provider_for_eps(provider, eps)?;
        // the reference is computed (or cache-loaded) once per eps on the
        // union grid of the finest h, then sampled per h
        let columns: Vec<Option<f64>> = h_list
            .par_iter()
            .map(|&h| {
                let traj = run_scheme(&sweep_provider, scheme, y0, horizon, h, eps, method).ok()?;
                let reference = reference_states(problem, eps, y0, &traj.times).ok()?;
                let err = traj
                    .states
                    .iter()
                    .zip(&reference)
                    .map(|(a, b)| linalg::norm2(&linalg::sub(a, b)))
                    .fold(0.0, f64::max);
                err.is_finite().then_some(err)
            })
            .collect();
        for (i, cell) in columns.into_iter().enumerate() {
            cells[i][j] = cell;
        }
    }
    Ok(ErrorTable {
        row_label: "h".to_string(),
        col_labels: eps_list.iter().map(|e| format!("eps={e}")).collect(),
        row_values: h_list.to_vec(),
        cells,
        metadata: vec![
            ("problem".to_string(), problem.name().to_string()),
            ("scheme".to_string(), scheme.name().to_string()),
            ("provider".to_string(), provider.variant_name()),
            ("method".to_string(), format!("order-{}", method.order())),
            ("horizon".to_string(), format!("{horizon}")),
        ],
    })
}

/// Same computation as `global_error_curve`, organized eps-major for
/// error-vs-eps plots at fixed h.
pub fn ua_sweep(
    provider: &DecompositionProvider,
    scheme: Scheme,
    y0: &[f64],
    horizon: f64,
    h_list: &[f64],
    eps_list: &[f64],
    method: &OneStepMethod,
) -> Result<ErrorTable> {
    let curve = global_error_curve(provider, scheme, y0, horizon, h_list, eps_list, method)?;
    let mut cells = vec![vec![None; h_list.len()]; eps_list.len()];
    for (i, row) in curve.cells.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            cells[j][i] = *cell;
        }
    }
    Ok(ErrorTable {
        row_label: "eps".to_string(),
        col_labels: h_list.iter().map(|h| format!("h={h}")).collect(),
        row_values: eps_list.to_vec(),
        cells,
        metadata: curve.metadata,
    })
}

/// One arm of the training-scale comparison.
#[derive(Debug, Clone)]
pub struct ScaleArm {
    pub record_count: usize,
    pub hidden: Vec<usize>,
    pub train_config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct ScaleStudy {
    pub coarse: ErrorTable,
    pub fine: ErrorTable,
    /// Cells where the fine arm is at least as accurate, over comparable
    /// cells.
    pub fine_wins: usize,
    pub comparable_cells: usize,
}

/// Trains two models of different size/data budgets from the same sampling
/// domains, then compares micro-macro sweeps on both checkpoints.
pub fn training_scale_study(
    problem: OscillatoryProblem,
    domains: &SamplingDomains,
    coarse: &ScaleArm,
    fine: &ScaleArm,
    y0: &[f64],
    horizon: f64,
    h_list: &[f64],
    eps_list: &[f64],
) -> Result<ScaleStudy> {
    let solver = ReferenceSolverConfig::default();
    let mut tables = Vec::with_capacity(2);
    for arm in [coarse, fine] {
        let dataset: Dataset = build_dataset(problem, domains, arm.record_count, &solver)?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
            arm.train_config.seed,
        );
        let model = StructuredNetSet::classical(problem, &arm.hidden, &mut rng);
        let (trained, _) = train(model, &dataset, &arm.train_config)?;
        let provider = DecompositionProvider::Learned(trained);
        tables.push(ua_sweep(
            &provider,
            Scheme::MicroMacro,
            y0,
            horizon,
            h_list,
            eps_list,
            &arm.train_config.method,
        )?);
    }
    let fine_table = tables.pop().unwrap();
    let coarse_table = tables.pop().unwrap();
    let mut fine_wins = 0usize;
    let mut comparable = 0usize;
    for (rc, rf) in coarse_table.cells.iter().zip(&fine_table.cells) {
        for (c, f) in rc.iter().zip(rf) {
            if let (Some(c), Some(f)) = (c, f) {
                comparable += 1;
                if f <= c {
                    fine_wins += 1;
                }
            }
        }
    }
    Ok(ScaleStudy {
        coarse: coarse_table,
        fine: fine_table,
        fine_wins,
        comparable_cells: comparable,
    })
}
