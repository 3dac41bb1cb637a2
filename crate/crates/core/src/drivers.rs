//! The three top-level solvers, their traces and the complexity model.
//!
//! Every driver alternates a covariance sub-iteration with a phase
//! sub-iteration and records the objective after each one. Step sizes of the
//! gradient updates carry over from one outer iteration to the next.

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::mac_covariance::{dual_decomposition_with, InnerStop, DEFAULT_EPSILON};
use crate::model::{composite_channel, grad_covariance_cached, CovarianceSet, Domain, PhaseVector};
use crate::projections::project_feasible_covariances;
use crate::ris_phase::{sequential_sweep, theta_gradient_step, SurrogateParams, MAX_BACKTRACKS};
use crate::rng::SeededRng;
use crate::scenario::{build_geometry, sample_channels, ChannelSet, PlacementSpec, SystemConfig};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "ao")]
    Ao,
    #[serde(rename = "aao", alias = "approx_ao")]
    ApproxAo,
    #[serde(rename = "apgm")]
    Apgm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ao, Algorithm::ApproxAo, Algorithm::Apgm];

    /// Short name used on the command line and in CSV files.
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Ao => "ao",
            Algorithm::ApproxAo => "aao",
            Algorithm::Apgm => "apgm",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ao" => Ok(Algorithm::Ao),
            "aao" | "a-ao" | "approx_ao" => Ok(Algorithm::ApproxAo),
            "apgm" => Ok(Algorithm::Apgm),
            other => Err(Error::InvalidParameter(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Solver settings shared by all drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverOptions {
    /// Relative objective gain per outer iteration below which a run stops.
    pub tol: f64,
    pub max_outer: usize,
    /// Initial phase step `mu_0`.
    pub mu0: f64,
    /// Initial covariance step, APGM only.
    pub mu_bar0: f64,
    pub rho: f64,
    /// Bisection accuracy of the dual decomposition.
    pub epsilon: f64,
    pub inner: InnerStop,
}

impl Default for DriverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_outer: 30,
            mu0: 1e4,
            mu_bar0: 1e4,
            rho: 0.5,
            epsilon: DEFAULT_EPSILON,
            inner: InnerStop::default(),
        }
    }
}

impl DriverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 0.0) || self.max_outer == 0 || !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("need tol >= 0, max_outer >= 1 and epsilon > 0".into()));
        }
        SurrogateParams::new(self.mu0, self.rho)?;
        SurrogateParams::new(self.mu_bar0, self.rho)?;
        Ok(())
    }
}

/// How the starting covariances are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceInit {
    /// `P / (K n_k) I` for every user.
    #[default]
    Uniform,
    /// Random full-rank PSD matrices on the budget.
    Random,
}

/// One problem instance: channels, starting point and power budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub channels: ChannelSet,
    pub theta0: PhaseVector,
    pub cov0: CovarianceSet,
    pub power: f64,
}

impl Instance {
    pub fn new(channels: ChannelSet, theta0: PhaseVector, cov0: CovarianceSet, power: f64) -> Result<Self> {
        channels.check()?;
        if theta0.len() != channels.elements() {
            return Err(Error::Dimension("initial phases do not match the number of elements".into()));
        }
        if cov0.domain() != Domain::Mac || cov0.dims() != channels.user_antennas() {
            return Err(Error::Dimension("initial covariances do not match the users".into()));
        }
        if !(power > 0.0) {
            return Err(Error::InvalidParameter("power must be positive".into()));
        }
        cov0.check_budget(power)?;
        Ok(Self {
            channels,
            theta0,
            cov0,
            power,
        })
    }

    /// Random phases and the requested covariance start on given channels.
    pub fn from_channels(channels: ChannelSet, power: f64, init: CovarianceInit, rng: &mut SeededRng) -> Result<Self> {
        let theta0 = PhaseVector::random(channels.elements(), rng);
        let dims = channels.user_antennas();
        let cov0 = match init {
            CovarianceInit::Uniform => CovarianceSet::uniform(Domain::Mac, &dims, power),
            CovarianceInit::Random => CovarianceSet::random(Domain::Mac, &dims, power, rng),
        };
        Self::new(channels, theta0, cov0, power)
    }

    /// Draws geometry, channels and starting phases from stream `stream` of
    /// seed `master`.
    pub fn random(config: &SystemConfig, placement: &PlacementSpec, master: u64, stream: u64) -> Result<Self> {
        Self::random_with(config, placement, master, stream, CovarianceInit::Uniform)
    }

    pub fn random_with(
        config: &SystemConfig,
        placement: &PlacementSpec,
        master: u64,
        stream: u64,
        init: CovarianceInit,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(master, stream);
        let geometry = build_geometry(config, placement, &mut rng)?;
        let channels = sample_channels(config, &geometry, &mut rng)?;
        Self::from_channels(channels, config.power_w, init, &mut rng)
    }

    fn complexity_dims(&self) -> ComplexityParams {
        let ch = &self.channels;
        let per_surface = ch.meta.elements_per_surface.max(1);
        ComplexityParams {
            k: ch.users() as u64,
            nt: ch.tx_antennas() as u64,
            nr: ch.user_antennas().into_iter().max().unwrap_or(0) as u64,
            ns: ch.elements().div_ceil(per_surface) as u64,
            nris: per_surface as u64,
            ..ComplexityParams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubIteration {
    Covariance,
    Phase,
}

impl fmt::Display for SubIteration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubIteration::Covariance => "covariance",
            SubIteration::Phase => "phase",
        })
    }
}

/// One sub-iteration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub algo: Algorithm,
    /// Outer iteration, starting at 1.
    pub outer: usize,
    pub sub: SubIteration,
    pub objective_bits: f64,
    /// Wall-clock time since the start of the run.
    pub wall_ms: f64,
    /// Candidate points evaluated by a backtracking step (`I_S` or `I_Θ`).
    pub line_search: Option<usize>,
    /// Bisection steps of the dual decomposition.
    pub t: Option<usize>,
    /// Average block updates per bisection step.
    pub i: Option<f64>,
    /// Final multiplier of the dual decomposition.
    pub mu: Option<f64>,
    /// Multiplications predicted for this outer iteration from its counters;
    /// set on the phase record that closes the iteration.
    pub predicted_mults: Option<u64>,
    /// The sub-iteration's candidate was worse and the previous iterate was kept.
    pub kept_previous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub algo: Algorithm,
    pub initial_objective_bits: f64,
    pub records: Vec<TraceRecord>,
    pub converged: bool,
    pub theta: PhaseVector,
    pub cov: CovarianceSet,
}

impl RunTrace {
    pub fn final_objective_bits(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_objective_bits, |r| r.objective_bits)
    }

    pub fn outer_iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.outer)
    }

    /// Initial objective followed by the objective after every sub-iteration.
    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective_bits)
            .chain(self.records.iter().map(|r| r.objective_bits))
            .collect()
    }

    /// Initial objective followed by the objective at the end of each outer iteration.
    pub fn outer_objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective_bits)
            .chain(
                self.records
                    .iter()
                    .filter(|r| r.sub == SubIteration::Phase)
                    .map(|r| r.objective_bits),
            )
            .collect()
    }

    /// Largest drop between consecutive sub-iterations (0 for a monotone trace).
    pub fn max_decrease(&self) -> f64 {
        self.objectives()
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Converged,
    MaxOuter,
}

/// Decides whether to stop after the last entry of `outer_objectives`
/// (initial objective followed by one value per finished outer iteration).
pub fn stopping_check(outer_objectives: &[f64], tol: f64, max_outer: usize) -> StopDecision {
    let n = outer_objectives.len().saturating_sub(1);
    if n == 0 {
        return StopDecision::Continue;
    }
    let prev = outer_objectives[n - 1];
    let gain = (outer_objectives[n] - prev) / prev.abs().max(f64::MIN_POSITIVE);
    if gain < tol {
        StopDecision::Converged
    } else if n >= max_outer {
        StopDecision::MaxOuter
    } else {
        StopDecision::Continue
    }
}

/// Dimensions and measured counters entering the complexity model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ComplexityParams {
    pub k: u64,
    pub nt: u64,
    pub nr: u64,
    pub ns: u64,
    pub nris: u64,
    pub t: u64,
    pub i: u64,
    pub i_s: u64,
    pub i_theta: u64,
}

impl ComplexityParams {
    pub fn validate(&self) -> Result<()> {
        if [self.k, self.nt, self.nr, self.ns, self.nris].contains(&0) {
            return Err(Error::InvalidParameter("complexity dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Complex multiplications of one outer iteration of `algo`.
pub fn predict_complexity(algo: Algorithm, p: &ComplexityParams) -> Result<u64> {
    p.validate()?;
    let ComplexityParams {
        k,
        nt,
        nr,
        ns,
        nris,
        t,
        i,
        i_s,
        i_theta,
    } = *p;
    let dual = t * i * k * (nt * nr * nr + nt * nt * nr + nr * nr * nr);
    let phase_gradient = i_theta * k * ns * nris * nt * nr;
    Ok(match algo {
        Algorithm::Ao => dual + ns * nris * (k * nt * nr * nr + k * nt * nt * nr + nt * nt * nt),
        Algorithm::ApproxAo => dual + phase_gradient,
        Algorithm::Apgm => i_s * (k * nt * nr * nr + k * nt * nt * nr + nt * nt * nt + k * k * nr * nr) + phase_gradient,
    })
}

/// Outcome of one backtracking covariance step.
#[derive(Debug, Clone)]
pub struct CovarianceStep {
    pub cov: CovarianceSet,
    /// Objective (nats) at the returned covariances.
    pub objective: f64,
    pub mu: f64,
    /// Candidate points evaluated, at least 1.
    pub trials: usize,
    pub accepted: bool,
}

/// Projected gradient ascent step on the covariances with backtracking on
/// `f(S̄) + sum_k tr(grad_k (S̄'_k - S̄_k)) - ||S̄' - S̄||^2 / (2 mu_bar)`.
pub fn covariance_gradient_step(
    cov: &CovarianceSet,
    theta: &PhaseVector,
    channels: &ChannelSet,
    power: f64,
    params: &mut SurrogateParams,
) -> Result<CovarianceStep> {
    let h = composite_channel(channels, theta)?;
    let cache = h.cache(cov)?;
    let f_n = cache.ln_det;
    let grads: Vec<CMat> = (0..h.users()).map(|k| grad_covariance_cached(&h, &cache, k)).collect();
    if grads.iter().all(|g| g.iter().all(|z| z.norm() == 0.0)) {
        return Ok(CovarianceStep {
            cov: cov.clone(),
            objective: f_n,
            mu: params.mu,
            trials: 1,
            accepted: true,
        });
    }
    let mut trials = 0;
    loop {
        trials += 1;
        let moved: Vec<CMat> = cov
            .matrices()
            .iter()
            .zip(&grads)
            .map(|(s, g)| s + g.scale(params.mu))
            .collect();
        let candidate = CovarianceSet::from_trusted(Domain::Mac, project_feasible_covariances(&moved, power)?);
        let f = h.cache(&candidate)?.ln_det;
        let mut linear = 0.0;
        let mut dist = 0.0;
        for ((new, old), g) in candidate.matrices().iter().zip(cov.matrices()).zip(&grads) {
            let d = new - old;
            linear += (g * &d).trace().re;
            dist += d.norm_squared();
        }
        let q = f_n + linear - dist / (2.0 * params.mu);
        if f >= q && f >= f_n {
            return Ok(CovarianceStep {
                cov: candidate,
                objective: f,
                mu: params.mu,
                trials,
                accepted: true,
            });
        }
        if trials > MAX_BACKTRACKS {
            return Ok(CovarianceStep {
                cov: cov.clone(),
                objective: f_n,
                mu: params.mu,
                trials,
                accepted: false,
            });
        }
        params.mu *= params.rho;
    }
}

fn nats_to_bits(x: f64) -> f64 {
    x / LN_2
}

struct Recorder {
    algo: Algorithm,
    start: Instant,
    records: Vec<TraceRecord>,
}

impl Recorder {
    fn push(&mut self, outer: usize, sub: SubIteration, objective_nats: f64) -> &mut TraceRecord {
        self.records.push(TraceRecord {
            algo: self.algo,
            outer,
            sub,
            objective_bits: nats_to_bits(objective_nats),
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
            line_search: None,
            t: None,
            i: None,
            mu: None,
            predicted_mults: None,
            kept_previous: false,
        });
        self.records.last_mut().expect("just pushed")
    }
}

enum PhaseUpdate {
    Sweep,
    Gradient,
}

fn run_alternating(instance: &Instance, opts: &DriverOptions, algo: Algorithm, phase: PhaseUpdate) -> Result<RunTrace> {
    opts.validate()?;
    let ch = &instance.channels;
    let mut theta = instance.theta0.clone();
    let mut cov = instance.cov0.clone();
    let mut h = composite_channel(ch, &theta)?;
    let mut f = h.cache(&cov)?.ln_det;
    let initial = nats_to_bits(f);
    let mut outer_values = vec![initial];
    let mut params = SurrogateParams::new(opts.mu0, opts.rho)?;
    let mut rec = Recorder {
        algo,
        start: Instant::now(),
        records: Vec::new(),
    };
    let dims = instance.complexity_dims();
    let mut converged = false;
    for n in 1..=opts.max_outer {
        let (candidate, state) = dual_decomposition_with(&h, instance.power, opts.epsilon, &cov, &opts.inner)?;
        let f_candidate = h.cache(&candidate)?.ln_det;
        // the bisection stops eps short of the optimum and may land below a
        // previous iterate that was already closer
        let kept = f_candidate < f;
        if !kept {
            cov = candidate;
            f = f_candidate;
        }
        let i_avg = state.avg_inner;
        let r = rec.push(n, SubIteration::Covariance, f);
        r.t = Some(state.t);
        r.i = Some(i_avg);
        r.mu = Some(state.mu);
        r.kept_previous = kept;

        let (line_search, predicted) = match phase {
            PhaseUpdate::Sweep => {
                theta = sequential_sweep(ch, &theta, &cov)?;
                h = composite_channel(ch, &theta)?;
                f = h.cache(&cov)?.ln_det;
                let p = ComplexityParams {
                    t: state.t as u64,
                    i: i_avg.round() as u64,
                    ..dims
                };
                (None, predict_complexity(Algorithm::Ao, &p).ok())
            }
            PhaseUpdate::Gradient => {
                let step = theta_gradient_step(&theta, &cov, ch, &mut params)?;
                theta = step.theta;
                f = step.objective;
                h = composite_channel(ch, &theta)?;
                let p = ComplexityParams {
                    t: state.t as u64,
                    i: i_avg.round() as u64,
                    i_theta: step.trials as u64,
                    ..dims
                };
                (Some(step.trials), predict_complexity(Algorithm::ApproxAo, &p).ok())
            }
        };
        let r = rec.push(n, SubIteration::Phase, f);
        r.line_search = line_search;
        r.predicted_mults = predicted;
        outer_values.push(nats_to_bits(f));
        match stopping_check(&outer_values, opts.tol, opts.max_outer) {
            StopDecision::Continue => {}
            StopDecision::Converged => {
                converged = true;
                break;
            }
            StopDecision::MaxOuter => break,
        }
    }
    Ok(RunTrace {
        algo,
        initial_objective_bits: initial,
        records: rec.records,
        converged,
        theta,
        cov,
    })
}

/// Alternating optimization: exact covariance update by dual decomposition
/// and an exact element-by-element phase sweep.
pub fn run_ao(instance: &Instance, opts: &DriverOptions) -> Result<RunTrace> {
    run_alternating(instance, opts, Algorithm::Ao, PhaseUpdate::Sweep)
}

/// As [`run_ao`], with the phase sweep replaced by one projected gradient step.
pub fn run_approx_ao(instance: &Instance, opts: &DriverOptions) -> Result<RunTrace> {
    run_alternating(instance, opts, Algorithm::ApproxAo, PhaseUpdate::Gradient)
}

/// Alternating projected gradient steps on the covariances and the phases.
pub fn run_apgm(instance: &Instance, opts: &DriverOptions) -> Result<RunTrace> {
    opts.validate()?;
    let ch = &instance.channels;
    let mut theta = instance.theta0.clone();
    let mut cov = instance.cov0.clone();
    let initial = nats_to_bits(composite_channel(ch, &theta)?.cache(&cov)?.ln_det);
    let mut outer_values = vec![initial];
    let mut cov_params = SurrogateParams::new(opts.mu_bar0, opts.rho)?;
    let mut phase_params = SurrogateParams::new(opts.mu0, opts.rho)?;
    let mut rec = Recorder {
        algo: Algorithm::Apgm,
        start: Instant::now(),
        records: Vec::new(),
    };
    let dims = instance.complexity_dims();
    let mut converged = false;
    for n in 1..=opts.max_outer {
        let cstep = covariance_gradient_step(&cov, &theta, ch, instance.power, &mut cov_params)?;
        cov = cstep.cov;
        rec.push(n, SubIteration::Covariance, cstep.objective).line_search = Some(cstep.trials);

        let pstep = theta_gradient_step(&theta, &cov, ch, &mut phase_params)?;
        theta = pstep.theta;
        let p = ComplexityParams {
            i_s: cstep.trials as u64,
            i_theta: pstep.trials as u64,
            ..dims
        };
        let r = rec.push(n, SubIteration::Phase, pstep.objective);
        r.line_search = Some(pstep.trials);
        r.predicted_mults = predict_complexity(Algorithm::Apgm, &p).ok();
        outer_values.push(nats_to_bits(pstep.objective));
        match stopping_check(&outer_values, opts.tol, opts.max_outer) {
            StopDecision::Continue => {}
            StopDecision::Converged => {
                converged = true;
                break;
            }
            StopDecision::MaxOuter => break,
        }
    }
    Ok(RunTrace {
        algo: Algorithm::Apgm,
        initial_objective_bits: initial,
        records: rec.records,
        converged,
        theta,
        cov,
    })
}

pub fn run_algorithm(algo: Algorithm, instance: &Instance, opts: &DriverOptions) -> Result<RunTrace> {
    match algo {
        Algorithm::Ao => run_ao(instance, opts),
        Algorithm::ApproxAo => run_approx_ao(instance, opts),
        Algorithm::Apgm => run_apgm(instance, opts),
    }
}
