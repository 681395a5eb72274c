//! Training-corpus construction: sampled (t0, y0, h, eps) tuples with
//! reference-integrated targets y1, persisted as a versioned CSV file.

use crate::error::{Error, Result};
use crate::integrators::{reference_flow, ReferenceSolverConfig};
use crate::problems::{OscillatoryProblem, TWO_PI};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const DATASET_FORMAT: &str = "oscillode-data-v1";

/// How the initial time of each record is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialTimeMode {
    /// t0 uniform on [0, 2*pi].
    UniformPhase,
    /// t0 = 0 for every record (autonomous-splitting datasets).
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingDomains {
    /// Axis-aligned sampling box: per-component (low, high).
    pub omega: Vec<(f64, f64)>,
    pub h_range: (f64, f64),
    pub eps_range: (f64, f64),
    pub t0_mode: InitialTimeMode,
    pub seed: u64,
}

impl SamplingDomains {
    /// The step/parameter ranges the reference experiments use.
    pub fn standard(dimension: usize, t0_mode: InitialTimeMode, seed: u64) -> Self {
        Self {
            omega: vec![(-2.0, 2.0); dimension],
            h_range: (1e-3, 1e-1),
            eps_range: (1e-3, 1.0),
            t0_mode,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.omega.is_empty() {
            problems.push("sampling box has no components".to_string());
        }
        for (i, (lo, hi)) in self.omega.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                problems.push(format!("sampling box component {i} is degenerate: [{lo}, {hi}]"));
            }
        }
        let (hl, hu) = self.h_range;
        if !(0.0 < hl && hl <= hu) {
            problems.push(format!("step range [{hl}, {hu}] must satisfy 0 < low <= high"));
        }
        let (el, eu) = self.eps_range;
        if !(0.0 < el && el <= eu && eu <= 1.0) {
            problems.push(format!(
                "epsilon range [{el}, {eu}] must satisfy 0 < low <= high <= 1"
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub t0: f64,
    pub y0: Vec<f64>,
    pub h: f64,
    pub eps: f64,
    pub y1: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub problem: OscillatoryProblem,
    pub records: Vec<SampleRecord>,
    /// Index prefix length used for training; the rest is held out.
    pub train_count: usize,
    pub seed: u64,
    /// Present on freshly generated datasets; files do not persist it.
    pub domains: Option<SamplingDomains>,
}

impl Dataset {
    pub fn dimension(&self) -> usize {
        self.problem.dimension()
    }

    pub fn train_records(&self) -> &[SampleRecord] {
        &self.records[..self.train_count]
    }

    pub fn test_records(&self) -> &[SampleRecord] {
        &self.records[self.train_count..]
    }
}

/// One draw of generation inputs: y0 uniform on the box, t0 uniform on its
/// range, h and eps log-uniform.
pub fn sample_inputs<R: Rng>(domains: &SamplingDomains, rng: &mut R) -> (f64, Vec<f64>, f64, f64) {
    let t0 = match domains.t0_mode {
        InitialTimeMode::UniformPhase => rng.gen_range(0.0..TWO_PI),
        InitialTimeMode::Zero => 0.0,
    };
    let y0 = domains
        .omega
        .iter()
        .map(|(lo, hi)| rng.gen_range(*lo..*hi))
        .collect();
    let h = log_uniform(domains.h_range, rng);
    let eps = log_uniform(domains.eps_range, rng);
    (t0, y0, h, eps)
}

fn log_uniform<R: Rng>((lo, hi): (f64, f64), rng: &mut R) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

const MAX_ATTEMPTS_PER_RECORD: usize = 64;

/// Generates K records in parallel under per-record RNG streams, so thread
/// scheduling never changes the output. Records whose reference solve fails
/// are resampled from the same stream; a failure rate above 1% aborts.
pub fn build_dataset(
    problem: OscillatoryProblem,
    domains: &SamplingDomains,
    k: usize,
    solver: &ReferenceSolverConfig,
) -> Result<Dataset> {
    domains.validate()?;
    solver.validate()?;
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 records, got {k}"
        )));
    }

    let results: Vec<Result<(SampleRecord, usize)>> = (0..k)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(domains.seed);
            rng.set_stream(index as u64);
            let mut failures = 0usize;
            loop {
                let (t0, y0, h, eps) = sample_inputs(domains, &mut rng);
                match reference_flow(problem, eps, t0, h, &y0, solver) {
                    Ok(y1) if crate::linalg::all_finite(&y1) => {
                        return Ok((SampleRecord { t0, y0, h, eps, y1 }, failures));
                    }
                    _ => {
                        failures += 1;
                        if failures >= MAX_ATTEMPTS_PER_RECORD {
                            return Err(Error::GenerationFailureRate { failed: failures, total: k });
                        }
                    }
                }
            }
        })
        .collect();

    let mut records = Vec::with_capacity(k);
    let mut failed = 0usize;
    for r in results {
        let (record, failures) = r?;
        failed += failures;
        records.push(record);
    }
    if failed * 100 > k {
        return Err(Error::GenerationFailureRate { failed, total: k });
    }

    // seeded shuffle, then the index prefix is the training split
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(domains.seed);
    shuffle_rng.set_stream(u64::MAX);
    records.shuffle(&mut shuffle_rng);

    Ok(Dataset {
        problem,
        train_count: k * 4 / 5,
        records,
        seed: domains.seed,
        domains: Some(domains.clone()),
    })
}

/// Header line with format metadata, then one CSV row per record with every
/// value at 17 significant digits, which round-trips f64 exactly.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let d = dataset.dimension();
    let mut out = String::new();
    out.push_str(&format!(
        "{},{},{},{},{},{}\n",
        DATASET_FORMAT,
        dataset.problem.name(),
        d,
        dataset.records.len(),
        dataset.train_count,
        dataset.seed
    ));
    for record in &dataset.records {
        let mut fields = Vec::with_capacity(2 * d + 3);
        fields.push(fmt_f64(record.t0));
        fields.extend(record.y0.iter().copied().map(fmt_f64));
        fields.push(fmt_f64(record.h));
        fields.push(fmt_f64(record.eps));
        fields.extend(record.y1.iter().copied().map(fmt_f64));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::DatasetParse {
        line: 1,
        message: "empty file".to_string(),
    })?;
    let head: Vec<&str> = header.split(',').collect();
    if head.len() != 6 {
        return Err(Error::DatasetParse {
            line: 1,
            message: format!("expected 6 header fields, got {}", head.len()),
        });
    }
    if head[0] != DATASET_FORMAT {
        return Err(Error::FormatVersion {
            found: head[0].to_string(),
            expected: DATASET_FORMAT.to_string(),
        });
    }
    let problem = OscillatoryProblem::by_name(head[1])?;
    let parse_usize = |field: &str, line: usize| {
        field.parse::<usize>().map_err(|e| Error::DatasetParse {
            line,
            message: format!("bad integer `{field}`: {e}"),
        })
    };
    let d = parse_usize(head[2], 1)?;
    let k = parse_usize(head[3], 1)?;
    let train_count = parse_usize(head[4], 1)?;
    let seed = head[5].parse::<u64>().map_err(|e| Error::DatasetParse {
        line: 1,
        message: format!("bad seed `{}`: {e}", head[5]),
    })?;
    if d != problem.dimension() {
        return Err(Error::DatasetParse {
            line: 1,
            message: format!(
                "dimension {d} does not match problem `{}` (d={})",
                problem.name(),
                problem.dimension()
            ),
        });
    }
    if k == 0 {
        return Err(Error::DatasetParse {
            line: 1,
            message: "no records".to_string(),
        });
    }
    if train_count > k {
        return Err(Error::DatasetParse {
            line: 1,
            message: format!("training count {train_count} exceeds record count {k}"),
        });
    }

    let mut records = Vec::with_capacity(k);
    for (idx, row) in lines {
        let line = idx + 1;
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 2 * d + 3 {
            return Err(Error::DatasetParse {
                line,
                message: format!("expected {} fields, got {}", 2 * d + 3, fields.len()),
            });
        }
        let parse = |field: &str| {
            field.parse::<f64>().map_err(|e| Error::DatasetParse {
                line,
                message: format!("bad number `{field}`: {e}"),
            })
        };
        let t0 = parse(fields[0])?;
        let y0 = fields[1..1 + d].iter().map(|f| parse(f)).collect::<Result<Vec<_>>>()?;
        let h = parse(fields[1 + d])?;
        let eps = parse(fields[2 + d])?;
        let y1 = fields[3 + d..].iter().map(|f| parse(f)).collect::<Result<Vec<_>>>()?;
        records.push(SampleRecord { t0, y0, h, eps, y1 });
    }
    if records.len() != k {
        return Err(Error::DatasetParse {
            line: records.len() + 1,
            message: format!("header promises {k} records, file has {}", records.len()),
        });
    }
    for (i, record) in records.iter().enumerate() {
        if !record.t0.is_finite()
            || !record.h.is_finite()
            || !record.eps.is_finite()
            || !crate::linalg::all_finite(&record.y0)
            || !crate::linalg::all_finite(&record.y1)
        {
            return Err(Error::Validation(vec![format!(
                "record {i} contains a non-finite value"
            )]));
        }
    }
    Ok(Dataset {
        problem,
        records,
        train_count,
        seed,
        domains: None,
    })
}

/// Flags records whose target moved further than a crude one-step growth
/// bound allows: |y1 - y0| <= sup_bound * h * exp(lipschitz * h).
pub fn sanity_flags(dataset: &Dataset, sup_bound: f64, lipschitz: f64) -> Vec<usize> {
    dataset
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            let moved = crate::linalg::norm2(&crate::linalg::sub(&r.y1, &r.y0));
            moved > sup_bound * r.h * (lipschitz * r.h).exp()
        })
        .map(|(i, _)| i)
        .collect()
}
