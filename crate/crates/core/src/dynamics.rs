//! Closed-system dynamics: Schrödinger propagation under time-dependent
//! parameters, the W-state generation protocol and its named parameter sets,
//! least-time searches, and mode-count independence checks.
//!
//! Times exposed here are in cycles of the (common) mode frequency; the
//! integrator works in internal units where one cycle is 2π.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hilbert::{build_space, PureState, SpaceSpec};
use crate::models::{bogoliubov_frame, ModelAction, ModelParams};
use crate::num::{ComplexMod, Real, C};
use crate::ode::{Integrator, IntegrationStats, SolverConfig};
use crate::schedule::{cycles_to_internal, PiecewiseLinear, Schedule};

/// Named parameter sets for the W-state generation protocol. Each fixes a
/// ramp duration (cycles), a mode count, per-mode coupling ratios, the total
/// final coupling Σ_i g_i², and the Stark pair (U₁, U₂) shared by all modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryName {
    Fig1Rabi,
    Fig2Stark,
    Fig3StarkAsym,
    FigS2a,
    FigS2c,
    FigS2e,
    FigS2g,
}

impl TrajectoryName {
    pub const ALL: [TrajectoryName; 7] = [
        TrajectoryName::Fig1Rabi,
        TrajectoryName::Fig2Stark,
        TrajectoryName::Fig3StarkAsym,
        TrajectoryName::FigS2a,
        TrajectoryName::FigS2c,
        TrajectoryName::FigS2e,
        TrajectoryName::FigS2g,
    ];

    pub fn token(self) -> &'static str {
        match self {
            TrajectoryName::Fig1Rabi => "fig1_rabi",
            TrajectoryName::Fig2Stark => "fig2_stark",
            TrajectoryName::Fig3StarkAsym => "fig3_stark_asym",
            TrajectoryName::FigS2a => "fig_s2a",
            TrajectoryName::FigS2c => "fig_s2c",
            TrajectoryName::FigS2e => "fig_s2e",
            TrajectoryName::FigS2g => "fig_s2g",
        }
    }
}

impl std::str::FromStr for TrajectoryName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrajectoryName::ALL
            .iter()
            .copied()
            .find(|n| n.token() == s)
            .ok_or_else(|| Error::UnknownTrajectory(s.into()))
    }
}

/// Optional deviations from a named trajectory's defaults.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryOverrides<T: Real> {
    /// Ramp duration in cycles.
    pub duration: Option<T>,
    /// Number of modes (coupling ratios reset to equal unless given).
    pub n_modes: Option<usize>,
    /// Per-mode coupling ratios (length must match the mode count).
    pub g_ratios: Option<Vec<T>>,
    /// Total final coupling Σ_i g_i².
    pub sum_g_sq: Option<T>,
}

/// Build the W-generation ramp: over `duration` cycles, Δ₁ runs
/// ω → (ω − U₁ + U₂)/2 and Δ₂ runs 0 → (ω + U₁ − U₂)/2, every coupling
/// rises linearly from zero to its final value (equal on both qubits),
/// mode frequencies stay at ω = 1 and Stark shifts stay constant at
/// (U₁, U₂) for every mode.
///
/// The detuning endpoints keep Δ₁ + Δ₂ = ω throughout (so the protected
/// level stays pinned at E = ω) and close Δ₁ − Δ₂ + U₁ − U₂ → 0 at the
/// end, which rotates the protected state into the pure single-photon
/// singlet branch.  For U₁ = U₂ both detunings end at ω/2.
pub fn w_generation_schedule<T: Real>(
    duration: T,
    g_final: &[T],
    u_pair: (T, T),
) -> Result<Schedule<T>> {
    let m = g_final.len();
    if m == 0 {
        return Err(Error::Shape("at least one mode is required".into()));
    }
    let half = T::of(0.5);
    let d1_end = half * (T::one() - u_pair.0 + u_pair.1);
    let d2_end = half * (T::one() + u_pair.0 - u_pair.1);
    let delta = vec![
        PiecewiseLinear::new(vec![(T::zero(), T::one()), (duration, d1_end)])?,
        PiecewiseLinear::new(vec![(T::zero(), T::zero()), (duration, d2_end)])?,
    ];
    let omega = vec![PiecewiseLinear::constant(T::one()); m];
    let mut g = Vec::with_capacity(2 * m);
    let mut u = Vec::with_capacity(2 * m);
    for i in 0..m {
        for uj in [u_pair.0, u_pair.1] {
            g.push(PiecewiseLinear::new(vec![
                (T::zero(), T::zero()),
                (duration, g_final[i]),
            ])?);
            u.push(PiecewiseLinear::constant(uj));
        }
    }
    Schedule::new(duration, delta, omega, g, u)
}

/// Equal-weight or custom coupling ratios scaled so that Σ_i g_i² = total.
fn scale_ratios<T: Real>(ratios: &[T], sum_g_sq: T) -> Result<Vec<T>> {
    let mut ssq = T::zero();
    for &r in ratios {
        ssq += r * r;
    }
    if !(ssq > T::zero()) {
        return Err(Error::Condition("coupling ratios must not all vanish".into()));
    }
    let scale = (sum_g_sq / ssq).sqrt();
    Ok(ratios.iter().map(|&r| r * scale).collect())
}

/// Resolve a named trajectory (with optional overrides) into a schedule.
pub fn standard_trajectory<T: Real>(
    name: TrajectoryName,
    overrides: &TrajectoryOverrides<T>,
) -> Result<Schedule<T>> {
    let third = T::one() / T::of(3.0);
    let (duration, n_modes, base_ratios, sum_g_sq, u_pair): (f64, usize, Vec<T>, f64, (T, T)) =
        match name {
            TrajectoryName::Fig1Rabi => {
                (11.0, 2, vec![T::one(); 2], 0.18, (T::zero(), T::zero()))
            }
            TrajectoryName::Fig2Stark | TrajectoryName::FigS2c => {
                (1.86, 2, vec![T::one(); 2], 0.98, (T::of(0.5), T::of(0.5)))
            }
            TrajectoryName::Fig3StarkAsym => (
                1.55,
                2,
                vec![T::one(); 2],
                1.9,
                (T::of(2.0) * third, third),
            ),
            TrajectoryName::FigS2a => (
                3.18,
                2,
                vec![T::one(); 2],
                0.65,
                (T::of(0.5), T::of(0.5)),
            ),
            TrajectoryName::FigS2e => (
                1.55,
                3,
                vec![T::one(); 3],
                1.9,
                (T::of(2.0) * third, third),
            ),
            TrajectoryName::FigS2g => (
                1.86,
                2,
                vec![T::of(2.0), T::one()],
                0.98,
                (T::of(0.5), T::of(0.5)),
            ),
        };
    let duration = overrides.duration.unwrap_or_else(|| T::of(duration));
    let n_modes = overrides.n_modes.unwrap_or(n_modes);
    let ratios = match &overrides.g_ratios {
        Some(r) => {
            if r.len() != n_modes {
                return Err(Error::Shape(format!(
                    "{} coupling ratios for {} modes",
                    r.len(),
                    n_modes
                )));
            }
            r.clone()
        }
        None => {
            if overrides.n_modes.is_some() {
                vec![T::one(); n_modes]
            } else {
                base_ratios
            }
        }
    };
    let sum_g_sq = overrides.sum_g_sq.unwrap_or_else(|| T::of(sum_g_sq));
    let g_final = scale_ratios(&ratios, sum_g_sq)?;
    w_generation_schedule(duration, &g_final, u_pair)
}

/// Integration options for Schrödinger propagation.
#[derive(Clone, Copy, Debug)]
pub struct PropagateOptions<T: Real> {
    /// Local error tolerance per unit internal time.
    pub tol: T,
    /// Optional step ceiling (internal units).
    pub max_step: Option<T>,
    /// Allowed drift of the state norm from one.
    pub norm_tol: T,
}

impl<T: Real> Default for PropagateOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::of(1e-10),
            max_step: None,
            norm_tol: T::of(1e-8),
        }
    }
}

impl<T: Real> PropagateOptions<T> {
    pub fn with_tolerance(tol: T) -> Self {
        Self {
            tol,
            ..Default::default()
        }
    }
}

/// Propagate iψ̇ = H(t)ψ along a schedule, calling the observer at each
/// sample time (cycles, ascending, within the schedule). Integration splits
/// at schedule breakpoints so ramp kinks never hide inside a step. Returns
/// the state at the last sample (normalized after a drift check) and the
/// accumulated integrator statistics.
pub fn propagate<T: Real, F>(
    space: SpaceSpec,
    schedule: &Schedule<T>,
    initial: &PureState<T>,
    samples: &[T],
    options: &PropagateOptions<T>,
    mut observer: F,
) -> Result<(PureState<T>, IntegrationStats)>
where
    F: FnMut(T, &PureState<T>) -> Result<()>,
{
    if space.n_qubits != schedule.n_qubits() || space.n_modes != schedule.n_modes() {
        return Err(Error::Shape("space and schedule shapes differ".into()));
    }
    if initial.space() != space {
        return Err(Error::Shape("initial state lives on a different space".into()));
    }
    if samples.is_empty() {
        return Err(Error::Shape("at least one sample time is required".into()));
    }
    let mut prev = T::zero();
    for &s in samples {
        if s < prev || s > schedule.duration {
            return Err(Error::Shape(
                "sample times must ascend within the schedule duration".into(),
            ));
        }
        prev = s;
    }

    let action = ModelAction::new(space)?;
    let dim = space.dim();
    let mut params = schedule.make_params();
    let mut scratch = vec![C::new(T::zero(), T::zero()); dim];
    let minus_i = C::new(T::zero(), -T::one());

    let mut integrator = Integrator::new(dim);
    let cfg = SolverConfig {
        mode: crate::ode::StepMode::Adaptive { tol: options.tol },
        max_step: options.max_step,
    };
    let mut y: DVector<C<T>> = initial.amplitudes().clone();
    let mut stats = IntegrationStats::default();
    let breaks = schedule.breakpoints();

    let mut rhs = |t: T, state: &DVector<C<T>>, out: &mut DVector<C<T>>| {
        schedule.params_into(crate::schedule::internal_to_cycles(t), &mut params);
        action.apply(&params, state.as_slice(), out.as_mut_slice(), &mut scratch);
        for v in out.iter_mut() {
            *v *= minus_i;
        }
    };

    let mut t_now = T::zero();
    let mut final_state: Option<PureState<T>> = None;
    for &target in samples {
        // Split at any schedule breakpoints inside (t_now, target).
        let mut legs: Vec<T> = breaks
            .iter()
            .copied()
            .filter(|&b| b > t_now && b < target)
            .collect();
        legs.push(target);
        for leg in legs {
            if leg > t_now {
                let s = integrator.integrate(
                    &mut rhs,
                    &mut y,
                    cycles_to_internal(t_now),
                    cycles_to_internal(leg),
                    &cfg,
                )?;
                stats.steps_accepted += s.steps_accepted;
                stats.steps_rejected += s.steps_rejected;
                stats.rhs_evaluations += s.rhs_evaluations;
                t_now = leg;
            }
        }
        let norm = y.norm();
        if (norm - T::one()).abs() > options.norm_tol {
            return Err(Error::Numerical(format!(
                "state norm drifted to {} at t = {} cycles",
                norm.as_f64(),
                target.as_f64()
            )));
        }
        let snapshot = PureState::normalized(space, y.clone())?;
        observer(target, &snapshot)?;
        final_state = Some(snapshot);
    }
    Ok((final_state.expect("samples is non-empty"), stats))
}

/// Tolerance for classifying a W′ denominator as vanishing when taking the
/// end-of-ramp limit of the instantaneous dark state.
fn limit_tol<T: Real>(scale: T) -> T {
    T::of(1e-9) * (T::one() + scale.abs())
}

/// The W-state generation target: the end-of-ramp limit of the instantaneous
/// dark state. With denominators d_i = Δ₁ − Δ₂ + U_i1 − U_i2, modes whose
/// d_i vanish dominate the normalized limit, leaving the pure W superposition
/// weighted by the couplings; otherwise the vacuum component survives with
/// mode weights g_i/d_i. The result is certified as an E = ω eigenstate.
pub fn w_target<T: Real>(space: SpaceSpec, params: &ModelParams<T>) -> Result<PureState<T>> {
    params.validate(space)?;
    if space.n_qubits != 2 {
        return Err(Error::Condition("the W target is a two-qubit state".into()));
    }
    let omega = params.omega[0];
    let m = space.n_modes;
    let tol = limit_tol(omega);
    let mut d = Vec::with_capacity(m);
    for i in 0..m {
        d.push(params.delta[0] - params.delta[1] + params.u[(i, 0)] - params.u[(i, 1)]);
    }
    let diverging: Vec<usize> = (0..m)
        .filter(|&i| d[i].abs() <= tol && params.g[(i, 0)].abs() > tol)
        .collect();

    let mut amps = DVector::zeros(space.dim());
    let zero_photons = vec![0usize; m];
    if diverging.is_empty() {
        amps[space.index_of(&[0, 0], &zero_photons)?] = C::new(T::one(), T::zero());
    }
    for i in 0..m {
        let w = if diverging.is_empty() {
            if d[i].abs() <= tol {
                continue; // decoupled mode (g_i = 0)
            }
            params.g[(i, 0)] / d[i]
        } else if diverging.contains(&i) {
            params.g[(i, 0)]
        } else {
            continue;
        };
        let mut photons = vec![0usize; m];
        photons[i] = 1;
        amps[space.index_of(&[1, 0], &photons)?] += C::new(w, T::zero());
        amps[space.index_of(&[0, 1], &photons)?] -= C::new(w, T::zero());
    }
    let cert = crate::darkstates::certify(space, params, amps, omega)?.require(T::of(1e-8))?;
    Ok(cert.state)
}

/// One converged W-generation run.
#[derive(Clone, Debug)]
pub struct WGenerationRun<T: Real> {
    /// |⟨target | ψ(T)⟩|².
    pub fidelity: T,
    /// Cutoff at which the run converged.
    pub cutoff: usize,
    /// Fidelity change from the previous (smaller) cutoff.
    pub fidelity_drift: T,
    pub final_state: PureState<T>,
    pub target: PureState<T>,
    pub stats: IntegrationStats,
}

/// Run the generation ramp from |0, ↑↑⟩ at one cutoff.
fn w_generation_at_cutoff<T: Real>(
    schedule: &Schedule<T>,
    cutoff: usize,
    tol: T,
) -> Result<(T, PureState<T>, PureState<T>, IntegrationStats)> {
    let space = build_space(2, schedule.n_modes(), cutoff)?;
    let initial = PureState::basis_state(space, &[0, 0], &vec![0usize; schedule.n_modes()])?;
    let (final_state, stats) = propagate(
        space,
        schedule,
        &initial,
        &[schedule.duration],
        &PropagateOptions::with_tolerance(tol),
        |_, _| Ok(()),
    )?;
    let target = w_target(space, &schedule.params_at(schedule.duration))?;
    let fidelity = target.fidelity(&final_state)?;
    Ok((fidelity, final_state, target, stats))
}

/// W-generation fidelity with automatic cutoff escalation: the cutoff rises
/// in steps of two until the fidelity moves by less than `gate` between
/// consecutive cutoffs (an `Unconverged` error reports failure to settle by
/// `max_cutoff`).
pub fn w_generation_fidelity<T: Real>(
    schedule: &Schedule<T>,
    start_cutoff: usize,
    max_cutoff: usize,
    gate: T,
    tol: T,
) -> Result<WGenerationRun<T>> {
    let mut prev: Option<T> = None;
    let mut cutoff = start_cutoff;
    loop {
        let (fidelity, final_state, target, stats) =
            w_generation_at_cutoff(schedule, cutoff, tol)?;
        if let Some(pf) = prev {
            let drift = (fidelity - pf).abs();
            if drift < gate {
                return Ok(WGenerationRun {
                    fidelity,
                    cutoff,
                    fidelity_drift: drift,
                    final_state,
                    target,
                    stats,
                });
            }
        }
        prev = Some(fidelity);
        cutoff += 2;
        if cutoff > max_cutoff {
            return Err(Error::Unconverged(format!(
                "W-generation fidelity still drifting at cutoff {max_cutoff}"
            )));
        }
    }
}

/// Search settings for the least generation time.
#[derive(Clone, Debug)]
pub struct LeastTimeOptions<T: Real> {
    /// Stark pair (U₁, U₂) shared by all modes.
    pub u_pair: (T, T),
    pub n_modes: usize,
    /// Candidate total couplings √(Σ_i g_i²) (equal per-mode ratios).
    pub g_grid: Vec<T>,
    /// Search window for the ramp duration, cycles: (low, high].
    pub t_range: (T, T),
    /// Coarse scan step (cycles).
    pub coarse_step: T,
    /// Bisection stops when the bracket is this narrow (cycles).
    pub refine_to: T,
    /// Target fidelity.
    pub threshold: T,
    /// Photon cutoff for probe runs.
    pub cutoff: usize,
    /// Integration tolerance for probe runs.
    pub probe_tol: T,
    /// Integration tolerance for the final verification run.
    pub verify_tol: T,
    /// Worker threads for scanning the coupling grid (1 = sequential with
    /// early exit; more threads probe speculatively in parallel).
    pub threads: usize,
}

impl<T: Real> LeastTimeOptions<T> {
    /// Defaults used by the protocol studies: total couplings 0.05..1.2 in
    /// steps of 0.05, fidelity threshold 0.99, probe at 1e-8, verify at
    /// 1e-10.
    pub fn new(u_pair: (T, T), n_modes: usize, t_range: (T, T)) -> Self {
        let g_grid = (1..=24).map(|k| T::of(0.05) * T::of(k as f64)).collect();
        Self {
            u_pair,
            n_modes,
            g_grid,
            t_range,
            coarse_step: T::of(0.1),
            refine_to: T::of(0.02),
            threshold: T::of(0.99),
            cutoff: 6,
            probe_tol: T::of(1e-8),
            verify_tol: T::of(1e-10),
            threads: 1,
        }
    }
}

/// Outcome of a least-time search.
#[derive(Clone, Debug)]
pub struct LeastTimeResult<T: Real> {
    /// Whether any duration in the window reached the threshold.
    pub found: bool,
    /// Shortest feasible duration (cycles), bracketed to `refine_to`.
    pub t_min: Option<T>,
    /// Total coupling achieving it.
    pub g_total: Option<T>,
    /// Verified fidelity at (t_min, g_total).
    pub fidelity: Option<T>,
    /// Number of propagation probes spent.
    pub probes: usize,
}

/// Find the shortest ramp duration whose best-over-couplings fidelity reaches
/// the threshold: a coarse upward scan brackets the boundary, bisection
/// narrows it, and the result is re-verified at the tighter tolerance.
/// Within the window, feasibility is treated as monotone in the duration.
pub fn least_time_search<T: Real>(options: &LeastTimeOptions<T>) -> Result<LeastTimeResult<T>> {
    if options.g_grid.is_empty() {
        return Err(Error::Shape("the coupling grid is empty".into()));
    }
    if !(options.t_range.0 < options.t_range.1) {
        return Err(Error::Shape("the duration window is empty".into()));
    }
    let mut probes = 0usize;

    let probe_one = |duration: T, g_total: T| -> Result<T> {
        let g_final = scale_ratios(&vec![T::one(); options.n_modes], g_total * g_total)?;
        let schedule = w_generation_schedule(duration, &g_final, options.u_pair)?;
        let (fidelity, _, _, _) =
            w_generation_at_cutoff(&schedule, options.cutoff, options.probe_tol)?;
        Ok(fidelity)
    };
    let workers = options.threads.max(1);
    let probe_ref = &probe_one;
    let feasible = |duration: T, probes: &mut usize| -> Result<Option<(T, T)>> {
        if workers == 1 {
            for &g_total in &options.g_grid {
                *probes += 1;
                let fidelity = probe_ref(duration, g_total)?;
                if fidelity >= options.threshold {
                    return Ok(Some((g_total, fidelity)));
                }
            }
            return Ok(None);
        }
        // Parallel scan in grid-ordered batches; each batch checks `workers`
        // candidates speculatively and stops at the first feasible one.
        for batch in options.g_grid.chunks(workers) {
            *probes += batch.len();
            let results: Vec<Result<T>> = std::thread::scope(|scope| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|&g_total| scope.spawn(move || probe_ref(duration, g_total)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("probe thread panicked"))
                    .collect()
            });
            for (&g_total, fidelity) in batch.iter().zip(results) {
                let fidelity = fidelity?;
                if fidelity >= options.threshold {
                    return Ok(Some((g_total, fidelity)));
                }
            }
        }
        Ok(None)
    };

    // Coarse scan: first feasible duration going up, always probing the top.
    let mut coarse: Vec<T> = Vec::new();
    let mut t = options.t_range.0 + options.coarse_step;
    while t < options.t_range.1 {
        coarse.push(t);
        t += options.coarse_step;
    }
    coarse.push(options.t_range.1);

    let mut bracket: Option<(T, T, T)> = None; // (infeasible, feasible, g_total)
    let mut lower = options.t_range.0;
    for t in coarse {
        if let Some((g_total, _)) = feasible(t, &mut probes)? {
            bracket = Some((lower, t, g_total));
            break;
        }
        lower = t;
    }
    let Some((mut bad, mut good, mut g_best)) = bracket else {
        return Ok(LeastTimeResult {
            found: false,
            t_min: None,
            g_total: None,
            fidelity: None,
            probes,
        });
    };

    while good - bad > options.refine_to {
        let mid = (good + bad) * T::of(0.5);
        match feasible(mid, &mut probes)? {
            Some((g_total, _)) => {
                good = mid;
                g_best = g_total;
            }
            None => bad = mid,
        }
    }

    // Re-verify the found point at the tighter tolerance.
    let g_final = scale_ratios(&vec![T::one(); options.n_modes], g_best * g_best)?;
    let schedule = w_generation_schedule(good, &g_final, options.u_pair)?;
    let (fidelity, _, _, _) =
        w_generation_at_cutoff(&schedule, options.cutoff + 2, options.verify_tol)?;
    probes += 1;
    if fidelity < options.threshold - T::of(1e-3) {
        return Err(Error::Unconverged(format!(
            "probe-level feasibility at {} cycles did not verify: fidelity {}",
            good.as_f64(),
            fidelity.as_f64()
        )));
    }
    Ok(LeastTimeResult {
        found: true,
        t_min: Some(good),
        g_total: Some(g_best),
        fidelity: Some(fidelity),
        probes,
    })
}

/// Mode-count independence evidence for the generation protocol.
#[derive(Clone, Debug)]
pub struct MIndependence<T: Real> {
    pub m_values: Vec<usize>,
    /// Generation fidelity for each mode count.
    pub fidelities: Vec<T>,
    /// Largest fidelity deviation from the single-mode run.
    pub fidelity_spread: T,
    /// Largest deviation of any collective-frame coefficient c_{q,n} from
    /// the single-mode run (global phases aligned).
    pub coefficient_spread: T,
}

/// Run the same ramp (duration, Σg², Stark pair, equal per-mode ratios) at
/// several mode counts and compare both the fidelities and the final states'
/// collective-mode coefficients c_{q,n} = ⟨q, n_{b₁}|ψ(T)⟩. With equal
/// frequencies the free-mode quanta are conserved, so every mode count must
/// reproduce the single-mode state in the collective frame.
pub fn m_independence_check<T: Real>(
    duration: T,
    sum_g_sq: T,
    u_pair: (T, T),
    m_values: &[usize],
    cutoff: usize,
    tol: T,
) -> Result<MIndependence<T>> {
    if m_values.is_empty() {
        return Err(Error::Shape("at least one mode count is required".into()));
    }
    let mut fidelities = Vec::with_capacity(m_values.len());
    let mut coefficient_sets: Vec<Vec<C<T>>> = Vec::with_capacity(m_values.len());

    for &m in m_values {
        if m == 0 {
            return Err(Error::Shape("mode counts must be positive".into()));
        }
        let g_final = scale_ratios(&vec![T::one(); m], sum_g_sq)?;
        let schedule = w_generation_schedule(duration, &g_final, u_pair)?;
        let space = build_space(2, m, cutoff)?;
        let initial = PureState::basis_state(space, &[0, 0], &vec![0usize; m])?;
        let (final_state, _) = propagate(
            space,
            &schedule,
            &initial,
            &[duration],
            &PropagateOptions::with_tolerance(tol),
            |_, _| Ok(()),
        )?;
        let params_end = schedule.params_at(duration);
        let target = w_target(space, &params_end)?;
        fidelities.push(target.fidelity(&final_state)?);

        // Collective-frame coefficients c_{q,n} via the lifted number basis
        // w_n = (b₁†)ⁿ|0⟩/√n!.
        let frame = bogoliubov_frame(&params_end)?;
        let row0 = frame.row(0);
        let mode_dim = space.mode_dim();
        let mut w_n = vec![C::new(T::zero(), T::zero()); mode_dim];
        w_n[0] = C::new(T::one(), T::zero());
        let mut tmp = vec![C::new(T::zero(), T::zero()); mode_dim];
        let mut coeffs: Vec<C<T>> = Vec::with_capacity(space.qubit_dim() * (cutoff + 1));
        for n in 0..=cutoff {
            if n > 0 {
                crate::darkstates::mode_combo_creation(space, &row0, &w_n, &mut tmp);
                let scale = C::new(T::one() / crate::num::sqrt_usize::<T>(n), T::zero());
                for (b, t) in w_n.iter_mut().zip(tmp.iter()) {
                    *b = *t * scale;
                }
            }
            for q in 0..space.qubit_dim() {
                let block = q * mode_dim;
                let mut acc = C::new(T::zero(), T::zero());
                for (off, wv) in w_n.iter().enumerate() {
                    if wv.norm_sqr() != T::zero() {
                        acc += wv.conj() * final_state.amplitudes()[block + off];
                    }
                }
                coeffs.push(acc);
            }
        }
        // Align the global phase on the largest coefficient.
        let mut best = (T::zero(), C::new(T::one(), T::zero()));
        for c in &coeffs {
            if c.cmod() > best.0 {
                best = (c.cmod(), *c);
            }
        }
        if best.0 > T::zero() {
            let phase = best.1 / C::new(best.0, T::zero());
            let fix = phase.conj();
            for c in coeffs.iter_mut() {
                *c *= fix;
            }
        }
        coefficient_sets.push(coeffs);
    }

    let mut fidelity_spread = T::zero();
    for &f in &fidelities[1..] {
        fidelity_spread = fidelity_spread.max((f - fidelities[0]).abs());
    }
    let mut coefficient_spread = T::zero();
    for set in &coefficient_sets[1..] {
        for (a, b) in set.iter().zip(coefficient_sets[0].iter()) {
            coefficient_spread = coefficient_spread.max((*a - *b).cmod());
        }
    }
    Ok(MIndependence {
        m_values: m_values.to_vec(),
        fidelities,
        fidelity_spread,
        coefficient_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuum_rabi_oscillation_matches_the_two_level_rate() {
        // Resonant weak coupling: qubit gap 2Δ = ω, g ≪ ω. The excitation
        // swaps |0,↑⟩ ↔ |1,↓⟩ with probability sin²(gt) up to O(g/ω)
        // corrections.
        let space = build_space(1, 1, 4).unwrap();
        let g = 0.01;
        let params = ModelParams::rabi(
            vec![0.5],
            vec![1.0],
            nalgebra::DMatrix::from_element(1, 1, g),
        );
        // Quarter flip: g·t = π/4 at t = π/(4g) internal units.
        let t_cycles = crate::schedule::internal_to_cycles(std::f64::consts::PI / (4.0 * g));
        let schedule = Schedule::hold(&params, t_cycles).unwrap();
        let initial = PureState::basis_state(space, &[0], &[0]).unwrap();
        let flipped = PureState::basis_state(space, &[1], &[1]).unwrap();
        let (state, _) = propagate(
            space,
            &schedule,
            &initial,
            &[t_cycles],
            &PropagateOptions::default(),
            |_, _| Ok(()),
        )
        .unwrap();
        let p_flip = flipped.fidelity(&state).unwrap();
        assert!(
            (p_flip - 0.5).abs() < 1e-3,
            "flip probability {p_flip} vs 0.5"
        );
    }

    #[test]
    fn named_trajectories_resolve_and_roundtrip() {
        for name in TrajectoryName::ALL {
            assert_eq!(name.token().parse::<TrajectoryName>().unwrap(), name);
            let schedule = standard_trajectory::<f64>(name, &Default::default()).unwrap();
            // Protocol shape: Δ ramps from (ω, 0) to endpoints that keep
            // Δ₁ + Δ₂ = ω and close Δ₁ − Δ₂ + U₁ − U₂ → 0; couplings end on
            // both qubits equally with the advertised total.
            let p0 = schedule.params_at(0.0);
            assert!((p0.delta[0] - 1.0).abs() < 1e-14);
            assert!(p0.delta[1].abs() < 1e-14);
            assert!(p0.g.iter().all(|v| v.abs() < 1e-14));
            let pt = schedule.params_at(schedule.duration);
            assert!((pt.delta[0] + pt.delta[1] - 1.0).abs() < 1e-14);
            assert!(
                (pt.delta[0] - pt.delta[1] + pt.u[(0, 0)] - pt.u[(0, 1)]).abs() < 1e-14
            );
            let want = match name {
                TrajectoryName::Fig1Rabi => 0.18,
                TrajectoryName::Fig2Stark
                | TrajectoryName::FigS2c
                | TrajectoryName::FigS2g => 0.98,
                TrajectoryName::Fig3StarkAsym | TrajectoryName::FigS2e => 1.9,
                _ => 0.65,
            };
            let total: f64 = (0..pt.n_modes()).map(|i| pt.g[(i, 0)].powi(2)).sum();
            assert!((total - want).abs() < 1e-12, "{name:?}: Σg² = {total}");
            for i in 0..pt.n_modes() {
                assert!((pt.g[(i, 0)] - pt.g[(i, 1)]).abs() < 1e-14);
            }
        }
        assert!("nonsense".parse::<TrajectoryName>().is_err());
    }

    #[test]
    fn trajectory_overrides_scale_modes_and_coupling() {
        let overrides = TrajectoryOverrides {
            n_modes: Some(3),
            sum_g_sq: Some(0.48),
            ..Default::default()
        };
        let schedule =
            standard_trajectory::<f64>(TrajectoryName::Fig2Stark, &overrides).unwrap();
        assert_eq!(schedule.n_modes(), 3);
        let pt = schedule.params_at(schedule.duration);
        for i in 0..3 {
            assert!((pt.g[(i, 0)] - 0.4).abs() < 1e-14);
        }
    }

    #[test]
    fn w_target_follows_the_denominator_limit() {
        // Equal Stark shifts: denominators vanish, the target is the pure W
        // superposition with amplitudes ∝ g_i.
        let space = build_space(2, 2, 3).unwrap();
        let params = ModelParams::stark(
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            nalgebra::DMatrix::from_row_slice(2, 2, &[0.2, 0.2, 0.4, 0.4]),
            nalgebra::DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
        );
        let target = w_target::<f64>(space, &params).unwrap();
        let vac = space.index_of(&[0, 0], &[0, 0]).unwrap();
        assert!(target.amplitudes()[vac].norm() < 1e-12);
        let a1 = target.amplitudes()[space.index_of(&[1, 0], &[1, 0]).unwrap()];
        let a2 = target.amplitudes()[space.index_of(&[1, 0], &[0, 1]).unwrap()];
        assert!((a2.norm() / a1.norm() - 2.0).abs() < 1e-10);

        // Distinct Stark shifts: the vacuum component survives with mode
        // weights g_i/d_i.
        let params = ModelParams::stark(
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            nalgebra::DMatrix::from_row_slice(2, 2, &[0.2, 0.2, 0.4, 0.4]),
            nalgebra::DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0]),
        );
        let target = w_target::<f64>(space, &params).unwrap();
        assert!(target.amplitudes()[vac].norm() > 0.1);
    }
}
