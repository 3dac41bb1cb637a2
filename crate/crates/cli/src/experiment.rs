//! Turning a spec into solver runs and CSV records.
//!
//! Every (sweep point, realization) pair is an independent job. Realization
//! `r` always draws from stream `r` of the master seed, so a user drop is
//! shared by all sweep points and algorithms, and the output does not depend
//! on how jobs are spread over workers.

use crate::output::Record;
use crate::spec::{ExperimentKind, ExperimentSpec, LinkMode};
use crate::HarnessError;
use rayon::prelude::*;
use ris_bc::drivers::{predict_complexity, run_algorithm, Algorithm, ComplexityParams, Instance, RunTrace, SubIteration};
use ris_bc::model::sum_rate;
use ris_bc::rng::SeededRng;
use ris_bc::scenario::{apply_blockage, apply_csi_error, ChannelSet, PlacementSpec, SystemConfig};

/// Offsets that keep the blockage and CSI-error draws on streams disjoint
/// from the channel streams.
const BLOCKAGE_STREAM: u64 = 1 << 40;
const CSI_STREAM: u64 = 2 << 40;

/// Reference counters `(K, T, I)` for AO, `(T, I, I_Θ)` for approximate AO
/// and `(I_S, I_Θ)` for APGM at `N_t = 8`, `N_r = 2`, `N_ris = 225`, with the
/// direct links present and blocked.
pub const REFERENCE_COUNTERS: [(&str, u64, [u64; 2], [u64; 3], [u64; 2]); 6] = [
    ("present", 2, [24, 3], [21, 3, 1], [4, 1]),
    ("present", 6, [26, 8], [23, 8, 1], [4, 1]),
    ("present", 12, [27, 14], [24, 14, 1], [5, 1]),
    ("blocked", 2, [24, 3], [21, 3, 1], [3, 1]),
    ("blocked", 6, [26, 7], [23, 7, 1], [3, 1]),
    ("blocked", 12, [27, 13], [24, 13, 1], [3, 2]),
];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Perturbation {
    None,
    Csi(f64),
    Blockage(f64),
}

/// One point of the sweep, shared by all realizations.
#[derive(Debug, Clone)]
struct Point {
    experiment: String,
    value: f64,
    config: SystemConfig,
    placement: PlacementSpec,
    link: LinkMode,
    perturbation: Perturbation,
}

fn points(spec: &ExperimentSpec) -> Vec<Point> {
    let base = |experiment: String, value: f64, config: SystemConfig, placement: PlacementSpec, link, perturbation| Point {
        experiment,
        value,
        config,
        placement,
        link,
        perturbation,
    };
    let label = |link: LinkMode| format!("{}:{}", spec.kind.label(), link.label());
    let mut out = Vec::new();
    match spec.kind {
        ExperimentKind::Convergence => {
            for &link in &spec.sweep.links {
                out.push(base(label(link), 0.0, spec.system.clone(), PlacementSpec::default(), link, Perturbation::None));
            }
        }
        ExperimentKind::SweepNt | ExperimentKind::SweepK | ExperimentKind::ComplexityTable => {
            for &link in &spec.sweep.links {
                for &v in &spec.sweep.values {
                    let mut config = spec.system.clone();
                    if spec.kind == ExperimentKind::SweepNt {
                        config.tx_antennas = v as usize;
                    } else {
                        config.users = v as usize;
                    }
                    out.push(base(label(link), v, config, PlacementSpec::default(), link, Perturbation::None));
                }
            }
        }
        ExperimentKind::Csi => {
            for &link in &spec.sweep.links {
                for &v in &spec.sweep.values {
                    out.push(base(label(link), v, spec.system.clone(), PlacementSpec::default(), link, Perturbation::Csi(v)));
                }
            }
        }
        ExperimentKind::Blockage => {
            for &link in &spec.sweep.links {
                for &v in &spec.sweep.values {
                    out.push(base(
                        label(link),
                        v,
                        spec.system.clone(),
                        PlacementSpec::default(),
                        link,
                        Perturbation::Blockage(v),
                    ));
                }
            }
        }
        ExperimentKind::MultiRisDistance | ExperimentKind::MultiRisBudget => {
            for set in &spec.sweep.surface_sets {
                let tag: Vec<String> = set.iter().map(|i| (i + 1).to_string()).collect();
                let experiment = format!("{}:ris{}", spec.kind.label(), tag.join("+"));
                for &d in &spec.sweep.values {
                    let mut config = spec.system.clone();
                    config.surfaces = set.len();
                    if spec.kind == ExperimentKind::MultiRisBudget {
                        config.elements_per_surface = spec.sweep.total_elements / set.len();
                    }
                    let placement = PlacementSpec::four_surfaces(d, spec.sweep.distance_m).with_surfaces(set);
                    out.push(base(experiment.clone(), d, config, placement, LinkMode::DirectRis, Perturbation::None));
                }
            }
        }
    }
    out
}

fn restrict(channels: &ChannelSet, link: LinkMode) -> ChannelSet {
    match link {
        LinkMode::DirectRis => channels.clone(),
        LinkMode::DirectOnly => channels.direct_only(),
        LinkMode::RisOnly => channels.ris_only(),
    }
}

/// The instance the optimizer sees and, under CSI errors, the true channels
/// used to score its output.
fn build_instance(spec: &ExperimentSpec, point: &Point, r: u64) -> Result<(Instance, Option<ChannelSet>), HarnessError> {
    let drawn = Instance::random_with(&point.config, &point.placement, spec.seed, r, spec.solver.init)?;
    let channels = restrict(&drawn.channels, point.link);
    let (channels, truth) = match point.perturbation {
        Perturbation::None => (channels, None),
        Perturbation::Blockage(p) => {
            let mut rng = SeededRng::new(spec.seed, BLOCKAGE_STREAM + r);
            (apply_blockage(&channels, p, &mut rng)?, None)
        }
        Perturbation::Csi(var) => {
            let mut rng = SeededRng::new(spec.seed, CSI_STREAM + r);
            let pair = apply_csi_error(&channels, var, &mut rng)?;
            (pair.estimate, Some(pair.truth))
        }
    };
    let instance = Instance::new(channels, drawn.theta0, drawn.cov0, drawn.power)?;
    Ok((instance, truth))
}

fn empty_record(spec: &ExperimentSpec, point: &Point, algo: Algorithm, seed: u64, subiter: String) -> Record {
    Record {
        experiment: point.experiment.clone(),
        algo: algo.label().to_string(),
        seed,
        sweep_var: spec.kind.sweep_var().to_string(),
        sweep_value: point.value,
        subiter,
        objective_bits: None,
        wall_ms: None,
        t: None,
        i: None,
        i_s: None,
        i_theta: None,
        predicted_mults: None,
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Averages of the counters over the first `limit` outer iterations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CounterMeans {
    pub t: Option<f64>,
    pub i: Option<f64>,
    pub i_s: Option<f64>,
    pub i_theta: Option<f64>,
    pub predicted_mults: Option<f64>,
}

pub fn counter_means(trace: &RunTrace, limit: usize) -> CounterMeans {
    let early = || trace.records.iter().filter(move |r| r.outer <= limit);
    let line = |sub: SubIteration| mean(early().filter(|r| r.sub == sub).filter_map(|r| r.line_search.map(|v| v as f64)));
    CounterMeans {
        t: mean(early().filter_map(|r| r.t.map(|v| v as f64))),
        i: mean(early().filter_map(|r| r.i)),
        i_s: line(SubIteration::Covariance),
        i_theta: line(SubIteration::Phase),
        predicted_mults: mean(early().filter_map(|r| r.predicted_mults.map(|v| v as f64))),
    }
}

fn trace_records(spec: &ExperimentSpec, point: &Point, trace: &RunTrace, seed: u64) -> Vec<Record> {
    let mut out = Vec::with_capacity(trace.records.len() + 1);
    let mut init = empty_record(spec, point, trace.algo, seed, "0/init".into());
    init.objective_bits = Some(trace.initial_objective_bits);
    init.wall_ms = Some(0.0);
    out.push(init);
    for r in &trace.records {
        let mut row = empty_record(spec, point, trace.algo, seed, format!("{}/{}", r.outer, r.sub));
        row.objective_bits = Some(r.objective_bits);
        row.wall_ms = Some(r.wall_ms);
        row.t = r.t.map(|v| v as f64);
        row.i = r.i;
        match (trace.algo, r.sub) {
            (Algorithm::Apgm, SubIteration::Covariance) => row.i_s = r.line_search.map(|v| v as f64),
            _ => row.i_theta = r.line_search.map(|v| v as f64),
        }
        row.predicted_mults = r.predicted_mults;
        out.push(row);
    }
    out
}

fn final_record(spec: &ExperimentSpec, point: &Point, trace: &RunTrace, seed: u64, truth: Option<&ChannelSet>) -> Result<Record, HarnessError> {
    let mut row = empty_record(spec, point, trace.algo, seed, "final".into());
    row.objective_bits = Some(match truth {
        Some(ch) => sum_rate(ch, &trace.theta, &trace.cov)?,
        None => trace.final_objective_bits(),
    });
    row.wall_ms = trace.records.last().map(|r| r.wall_ms);
    let c = counter_means(trace, usize::MAX);
    row.t = c.t;
    row.i = c.i;
    row.i_s = if trace.algo == Algorithm::Apgm { c.i_s } else { None };
    row.i_theta = if trace.algo == Algorithm::Ao { None } else { c.i_theta };
    row.predicted_mults = c.predicted_mults.map(|v| v.round() as u64);
    Ok(row)
}

fn counters_record(spec: &ExperimentSpec, point: &Point, trace: &RunTrace, seed: u64) -> Record {
    let limit = spec.complexity.average_over;
    let mut row = empty_record(spec, point, trace.algo, seed, format!("first_{limit}"));
    row.objective_bits = Some(trace.final_objective_bits());
    let c = counter_means(trace, limit);
    match trace.algo {
        Algorithm::Ao => {
            row.t = c.t;
            row.i = c.i;
        }
        Algorithm::ApproxAo => {
            row.t = c.t;
            row.i = c.i;
            row.i_theta = c.i_theta;
        }
        Algorithm::Apgm => {
            row.i_s = c.i_s;
            row.i_theta = c.i_theta;
        }
    }
    row.predicted_mults = c.predicted_mults.map(|v| v.round() as u64);
    row
}

fn run_job(spec: &ExperimentSpec, point: &Point, r: u64) -> Result<Vec<Record>, HarnessError> {
    let (instance, truth) = build_instance(spec, point, r)?;
    let opts = spec.solver.driver_options();
    let mut out = Vec::new();
    for &algo in &spec.algos {
        let trace = run_algorithm(algo, &instance, &opts)?;
        match spec.kind {
            ExperimentKind::Convergence => out.extend(trace_records(spec, point, &trace, r)),
            ExperimentKind::ComplexityTable => out.push(counters_record(spec, point, &trace, r)),
            _ => out.push(final_record(spec, point, &trace, r, truth.as_ref())?),
        }
    }
    Ok(out)
}

fn rounded(x: Option<f64>) -> u64 {
    x.map_or(0, |v| v.round() as u64)
}

/// Per-point averages of measured counters with the resulting predictions.
fn measured_table(spec: &ExperimentSpec, rows: &[Record]) -> Result<Vec<Record>, HarnessError> {
    let mut out = Vec::new();
    let mut keys: Vec<(String, u64, String)> = Vec::new();
    for r in rows {
        let key = (r.experiment.clone(), r.sweep_value.to_bits(), r.algo.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (experiment, value_bits, algo) in keys {
        let group: Vec<&Record> = rows
            .iter()
            .filter(|r| r.experiment == experiment && r.sweep_value.to_bits() == value_bits && r.algo == algo)
            .collect();
        let avg = |f: fn(&Record) -> Option<f64>| mean(group.iter().filter_map(|r| f(r)));
        let first = group[0];
        let algorithm: Algorithm = algo.parse()?;
        let params = ComplexityParams {
            k: spec.system.users as u64,
            nt: spec.system.tx_antennas as u64,
            nr: spec.system.user_antennas().into_iter().max().unwrap_or(0) as u64,
            ns: spec.system.surfaces as u64,
            nris: spec.system.elements_per_surface as u64,
            t: rounded(avg(|r| r.t)),
            i: rounded(avg(|r| r.i)),
            i_s: rounded(avg(|r| r.i_s)),
            i_theta: rounded(avg(|r| r.i_theta)),
        };
        let params = ComplexityParams {
            k: f64::from_bits(value_bits) as u64,
            ..params
        };
        out.push(Record {
            subiter: "table".into(),
            seed: 0,
            objective_bits: avg(|r| r.objective_bits),
            wall_ms: None,
            t: avg(|r| r.t),
            i: avg(|r| r.i),
            i_s: avg(|r| r.i_s),
            i_theta: avg(|r| r.i_theta),
            predicted_mults: Some(predict_complexity(algorithm, &params)?),
            ..first.clone()
        });
    }
    Ok(out)
}

/// Rows of the reference complexity table for the dimensions in `system`.
pub fn reference_table(system: &SystemConfig) -> Result<Vec<Record>, HarnessError> {
    let mut out = Vec::new();
    for (links, k, ao, aao, apgm) in REFERENCE_COUNTERS {
        let dims = ComplexityParams {
            k,
            nt: system.tx_antennas as u64,
            nr: system.rx_antennas as u64,
            ns: system.surfaces as u64,
            nris: system.elements_per_surface as u64,
            ..ComplexityParams::default()
        };
        let cases = [
            (Algorithm::Ao, ComplexityParams { t: ao[0], i: ao[1], ..dims }),
            (
                Algorithm::ApproxAo,
                ComplexityParams {
                    t: aao[0],
                    i: aao[1],
                    i_theta: aao[2],
                    ..dims
                },
            ),
            (
                Algorithm::Apgm,
                ComplexityParams {
                    i_s: apgm[0],
                    i_theta: apgm[1],
                    ..dims
                },
            ),
        ];
        for (algo, p) in cases {
            let used = |v: u64, on: bool| on.then_some(v as f64);
            out.push(Record {
                experiment: format!("complexity_table:{links}"),
                algo: algo.label().into(),
                seed: 0,
                sweep_var: "users".into(),
                sweep_value: k as f64,
                subiter: "table".into(),
                objective_bits: None,
                wall_ms: None,
                t: used(p.t, algo != Algorithm::Apgm),
                i: used(p.i, algo != Algorithm::Apgm),
                i_s: used(p.i_s, algo == Algorithm::Apgm),
                i_theta: used(p.i_theta, algo != Algorithm::Ao),
                predicted_mults: Some(predict_complexity(algo, &p)?),
            });
        }
    }
    Ok(out)
}

/// Runs every job of `spec` on `workers` threads (all cores when `None`).
pub fn run_experiment(spec: &ExperimentSpec, workers: Option<usize>) -> Result<Vec<Record>, HarnessError> {
    spec.validate()?;
    if spec.kind == ExperimentKind::ComplexityTable && !spec.complexity.measure {
        return reference_table(&spec.system);
    }
    let points = points(spec);
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| (0..spec.realizations as u64).map(move |r| (p, r)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    let per_job: Vec<Vec<Record>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, r)| run_job(spec, &points[p], r))
            .collect::<Result<_, _>>()
    })?;
    let rows: Vec<Record> = per_job.into_iter().flatten().collect();
    if spec.kind == ExperimentKind::ComplexityTable {
        let mut table = measured_table(spec, &rows)?;
        let mut all = rows;
        all.append(&mut table);
        return Ok(all);
    }
    Ok(rows)
}
