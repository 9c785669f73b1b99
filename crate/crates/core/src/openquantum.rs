//! Open-system dynamics: Lindblad master equation with intrinsic photon
//! loss, a switchable output coupler, qubit relaxation and dephasing, plus a
//! dressed-basis master equation for constant Hamiltonian segments, and the
//! catch-and-release protocol built from both.
//!
//! Density matrices are stored dense; the Liouvillian is applied without
//! forming any dim² × dim² matrix. The commutator uses the Hamiltonian's
//! matrix-free action column by column (−i[H, ρ] = −i(A − A†) with A = Hρ
//! for Hermitian ρ), and every dissipator reduces to strided or elementwise
//! passes over ρ.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hilbert::{build_space, strict_tol, PureState, SpaceSpec};
use crate::models::{ModelAction, ModelParams};
use crate::num::{ComplexMod, Real, C};
use crate::ode::{Integrator, IntegrationStats, SolverConfig, StepMode};
use crate::schedule::{cycles_to_internal, internal_to_cycles, PiecewiseConstant, Schedule};
use crate::spectra::{eigensystem, Sector};

/// Largest Hilbert-space dimension accepted for master-equation runs (the
/// integrator keeps nine dim²-sized working buffers).
pub const MASTER_DIM_LIMIT: usize = 1600;

/// Dense density matrix with validated invariants.
#[derive(Clone, Debug)]
pub struct DensityMatrix<T: Real> {
    space: SpaceSpec,
    matrix: DMatrix<C<T>>,
}

impl<T: Real> DensityMatrix<T> {
    /// Validate Hermiticity and unit trace.
    pub fn new(space: SpaceSpec, matrix: DMatrix<C<T>>) -> Result<Self> {
        let dim = space.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::Shape(format!(
                "density matrix is {}x{}, space dimension is {}",
                matrix.nrows(),
                matrix.ncols(),
                dim
            )));
        }
        let tol = strict_tol::<T>() * T::of(1e3);
        let mut herm_dev = T::zero();
        for r in 0..dim {
            for c in r..dim {
                let d = (matrix[(r, c)] - matrix[(c, r)].conj()).cmod();
                herm_dev = herm_dev.max(d);
            }
        }
        if herm_dev > tol {
            return Err(Error::Numerical(format!(
                "density matrix is not Hermitian: deviation {}",
                herm_dev.as_f64()
            )));
        }
        let mut trace = T::zero();
        for k in 0..dim {
            trace += matrix[(k, k)].re;
        }
        if (trace - T::one()).abs() > tol {
            return Err(Error::Numerical(format!(
                "density matrix trace is {}",
                trace.as_f64()
            )));
        }
        Ok(Self { space, matrix })
    }

    /// Pure-state projector |ψ⟩⟨ψ|.
    pub fn from_pure(state: &PureState<T>) -> Self {
        let amps = state.amplitudes();
        let dim = amps.len();
        let mut matrix = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            let bc = amps[c].conj();
            for r in 0..dim {
                matrix[(r, c)] = amps[r] * bc;
            }
        }
        Self {
            space: state.space(),
            matrix,
        }
    }

    /// Internal: accept integrator output, restoring exact Hermiticity.
    fn from_evolved(space: SpaceSpec, data: &[C<T>]) -> Self {
        let dim = space.dim();
        let mut matrix = DMatrix::zeros(dim, dim);
        let half = T::of(0.5);
        for c in 0..dim {
            for r in 0..dim {
                let a = data[r + c * dim];
                let b = data[c + r * dim].conj();
                matrix[(r, c)] = (a + b) * C::new(half, T::zero());
            }
        }
        Self { space, matrix }
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    pub fn matrix(&self) -> &DMatrix<C<T>> {
        &self.matrix
    }

    pub fn trace(&self) -> T {
        let mut t = T::zero();
        for k in 0..self.matrix.nrows() {
            t += self.matrix[(k, k)].re;
        }
        t
    }

    pub fn purity(&self) -> T {
        let mut p = T::zero();
        for v in self.matrix.iter() {
            p += v.norm_sqr();
        }
        p
    }

    /// ⟨ψ|ρ|ψ⟩.
    pub fn fidelity(&self, state: &PureState<T>) -> Result<T> {
        if state.space() != self.space {
            return Err(Error::Shape("state and density matrix spaces differ".into()));
        }
        let v = state.amplitudes();
        let rv = &self.matrix * v;
        let mut acc = C::new(T::zero(), T::zero());
        for (a, b) in v.iter().zip(rv.iter()) {
            acc += a.conj() * *b;
        }
        Ok(acc.re)
    }

    /// tr(ρ n_i) for mode `i`.
    pub fn mode_population(&self, i: usize) -> Result<T> {
        if i >= self.space.n_modes {
            return Err(Error::Index {
                what: "mode",
                index: i,
                len: self.space.n_modes,
            });
        }
        let mut acc = T::zero();
        for k in 0..self.matrix.nrows() {
            let (_, photons) = self.space.decode(k);
            acc += T::of(photons[i] as f64) * self.matrix[(k, k)].re;
        }
        Ok(acc)
    }

    /// tr(ρ |↑⟩⟨↑|_j) for qubit `j`.
    pub fn excited_population(&self, j: usize) -> Result<T> {
        if j >= self.space.n_qubits {
            return Err(Error::Index {
                what: "qubit",
                index: j,
                len: self.space.n_qubits,
            });
        }
        let mut acc = T::zero();
        for k in 0..self.matrix.nrows() {
            let (bits, _) = self.space.decode(k);
            if bits[j] == 0 {
                acc += self.matrix[(k, k)].re;
            }
        }
        Ok(acc)
    }
}

/// Dissipation rates, all in units of the mode frequency. Photon loss acts
/// on every mode: an always-on intrinsic rate κ_in plus a switchable output
/// coupling κ_c(t) (piecewise constant in cycles). Relaxation γ_j acts
/// through σ⁻_j; pure dephasing acts as (γφ_j/2) D[σz_j], so a lone qubit's
/// coherence decays at rate γφ_j.
#[derive(Clone, Debug)]
pub struct DissipationRates<T: Real> {
    pub kappa_in: T,
    pub kappa_c: PiecewiseConstant<T>,
    pub gamma: Vec<T>,
    pub gamma_phi: Vec<T>,
}

impl<T: Real> DissipationRates<T> {
    /// Closed system (all rates zero).
    pub fn none(n_qubits: usize) -> Self {
        Self {
            kappa_in: T::zero(),
            kappa_c: PiecewiseConstant::constant(T::zero()),
            gamma: vec![T::zero(); n_qubits],
            gamma_phi: vec![T::zero(); n_qubits],
        }
    }

    pub fn validate(&self, space: SpaceSpec) -> Result<()> {
        if self.gamma.len() != space.n_qubits || self.gamma_phi.len() != space.n_qubits {
            return Err(Error::Shape(format!(
                "qubit rate vectors have lengths {} and {}, space has {} qubits",
                self.gamma.len(),
                self.gamma_phi.len(),
                space.n_qubits
            )));
        }
        let nonneg = |v: T| v >= T::zero() && v.finite();
        if !nonneg(self.kappa_in)
            || !self.gamma.iter().all(|&v| nonneg(v))
            || !self.gamma_phi.iter().all(|&v| nonneg(v))
        {
            return Err(Error::Condition("rates must be nonnegative and finite".into()));
        }
        Ok(())
    }

    /// Total photon-loss rate at a time (cycles).
    pub fn kappa_total(&self, t_cycles: T) -> T {
        self.kappa_in + self.kappa_c.value(t_cycles)
    }
}

/// Which master-equation engine integrates a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MasterEngine {
    /// Bare-basis Lindblad generator (valid during parameter ramps).
    Lindblad,
    /// Eigenbasis (dressed) generator with frequency-weighted downward
    /// jump rates; requires piecewise-constant parameters and no dephasing.
    Dressed,
}

impl std::str::FromStr for MasterEngine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lindblad" => Ok(MasterEngine::Lindblad),
            "dressed" => Ok(MasterEngine::Dressed),
            _ => Err(Error::Condition(format!(
                "unknown engine '{s}'; expected lindblad or dressed"
            ))),
        }
    }
}

/// Integration and invariant-checking options for master-equation runs.
#[derive(Clone, Copy, Debug)]
pub struct MasterOptions<T: Real> {
    pub tol: T,
    pub max_step: Option<T>,
    /// Allowed trace drift at any sample.
    pub trace_tol: T,
    /// Allowed Hermiticity deviation at any sample.
    pub herm_tol: T,
    /// Check positive semidefiniteness at this many evenly spaced samples
    /// (0 disables).
    pub positivity_checks: usize,
    /// Eigenvalue floor for the positivity check.
    pub positivity_tol: T,
}

impl<T: Real> Default for MasterOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::of(1e-8),
            max_step: None,
            trace_tol: T::of(1e-7),
            herm_tol: T::of(1e-7),
            positivity_checks: 10,
            positivity_tol: T::of(1e-8),
        }
    }
}

/// Per-basis-index digit tables used by the dissipator loops.
struct BasisTables {
    /// mode_n[i][k]: photon number of mode i in basis state k.
    mode_n: Vec<Vec<u32>>,
    /// qubit_up[j][k]: qubit j is ↑ in basis state k.
    qubit_up: Vec<Vec<bool>>,
}

impl BasisTables {
    fn build(space: SpaceSpec) -> Self {
        let dim = space.dim();
        let mut mode_n = vec![vec![0u32; dim]; space.n_modes];
        let mut qubit_up = vec![vec![false; dim]; space.n_qubits];
        for k in 0..dim {
            let (bits, photons) = space.decode(k);
            for i in 0..space.n_modes {
                mode_n[i][k] = photons[i] as u32;
            }
            for j in 0..space.n_qubits {
                qubit_up[j][k] = bits[j] == 0;
            }
        }
        Self { mode_n, qubit_up }
    }
}

/// Lindblad right-hand side on vec(ρ) (column-major, length dim²).
struct LindbladRhs<'a, T: Real> {
    space: SpaceSpec,
    action: ModelAction<T>,
    schedule: &'a Schedule<T>,
    rates: &'a DissipationRates<T>,
    tables: BasisTables,
    params: ModelParams<T>,
    a_buf: Vec<C<T>>,
    scratch: Vec<C<T>>,
}

impl<'a, T: Real> LindbladRhs<'a, T> {
    fn new(space: SpaceSpec, schedule: &'a Schedule<T>, rates: &'a DissipationRates<T>) -> Result<Self> {
        let dim = space.dim();
        Ok(Self {
            space,
            action: ModelAction::new(space)?,
            schedule,
            rates,
            tables: BasisTables::build(space),
            params: schedule.make_params(),
            a_buf: vec![C::new(T::zero(), T::zero()); dim * dim],
            scratch: vec![C::new(T::zero(), T::zero()); dim],
        })
    }

    fn eval(&mut self, t_internal: T, y: &DVector<C<T>>, out: &mut DVector<C<T>>) {
        let dim = self.space.dim();
        let t_cycles = internal_to_cycles(t_internal);
        self.schedule.params_into(t_cycles, &mut self.params);

        // A = Hρ, column by column.
        let ys = y.as_slice();
        for c in 0..dim {
            self.action.apply(
                &self.params,
                &ys[c * dim..(c + 1) * dim],
                &mut self.a_buf[c * dim..(c + 1) * dim],
                &mut self.scratch,
            );
        }
        // −i[H, ρ] = −i(A − A†) for Hermitian ρ.
        let outs = out.as_mut_slice();
        for c in 0..dim {
            for r in 0..dim {
                let a = self.a_buf[r + c * dim];
                let b = self.a_buf[c + r * dim].conj();
                let d = a - b;
                outs[r + c * dim] = C::new(d.im, -d.re); // −i d
            }
        }

        let kappa = self.rates.kappa_total(t_cycles);
        let cutoff = self.space.cutoff as u32;

        // Photon loss on every mode: κ (a_i ρ a_i† − ½{n_i, ρ}).
        if kappa > T::zero() {
            for i in 0..self.space.n_modes {
                let stride = self.space.mode_stride(i);
                let n = &self.tables.mode_n[i];
                for c in 0..dim {
                    let nc = n[c];
                    for r in 0..dim {
                        let nr = n[r];
                        let mut acc = C::new(T::zero(), T::zero());
                        if nr < cutoff && nc < cutoff {
                            let w = (T::of((nr + 1) as f64) * T::of((nc + 1) as f64)).sqrt();
                            acc += ys[(r + stride) + (c + stride) * dim] * C::new(w, T::zero());
                        }
                        let anti = T::of(0.5) * (T::of(nr as f64) + T::of(nc as f64));
                        acc -= ys[r + c * dim] * C::new(anti, T::zero());
                        outs[r + c * dim] += acc * C::new(kappa, T::zero());
                    }
                }
            }
        }

        // Qubit relaxation: γ_j (σ⁻ρσ⁺ − ½{|↑⟩⟨↑|, ρ}), with |↓⟩ = |↑⟩ + stride.
        for j in 0..self.space.n_qubits {
            let gamma = self.rates.gamma[j];
            if gamma == T::zero() {
                continue;
            }
            let stride = self.space.qubit_stride(j);
            let up = &self.tables.qubit_up[j];
            for c in 0..dim {
                for r in 0..dim {
                    let mut acc = C::new(T::zero(), T::zero());
                    if !up[r] && !up[c] {
                        acc += ys[(r - stride) + (c - stride) * dim];
                    }
                    let occ = T::of(0.5)
                        * (T::of(up[r] as u8 as f64) + T::of(up[c] as u8 as f64));
                    acc -= ys[r + c * dim] * C::new(occ, T::zero());
                    outs[r + c * dim] += acc * C::new(gamma, T::zero());
                }
            }
        }

        // Pure dephasing: (γφ_j/2)(σzρσz − ρ) = −γφ_j ρ_rc when the j-bits
        // of r and c differ.
        for j in 0..self.space.n_qubits {
            let gphi = self.rates.gamma_phi[j];
            if gphi == T::zero() {
                continue;
            }
            let up = &self.tables.qubit_up[j];
            for c in 0..dim {
                for r in 0..dim {
                    if up[r] != up[c] {
                        outs[r + c * dim] -= ys[r + c * dim] * C::new(gphi, T::zero());
                    }
                }
            }
        }
    }
}

/// Dressed-basis generator for one constant-parameter segment.
pub struct DressedEngine<T: Real> {
    space: SpaceSpec,
    energies: Vec<T>,
    vectors: DMatrix<C<T>>,
    /// gamma_table[(a, k)] for a < k: downward jump rate k → a.
    gamma_table: DMatrix<T>,
    /// Total outgoing rate per level: S_a = Σ_{j<a} Γ_ja.
    s_out: Vec<T>,
}

impl<T: Real> DressedEngine<T> {
    /// Build the engine from constant parameters and rates: jump operators
    /// |a⟩⟨k| (E_k > E_a) with Ohmic frequency weighting,
    ///   Γ_ak = Σ_i κ (Δ_ka/ω_i) |⟨a|a_i + a_i†|k⟩|²
    ///        + Σ_j γ_j (Δ_ka/2Δ_j) |⟨a|σx_j|k⟩|².
    /// Degenerate pairs get zero rate (Δ_ka = 0). Dephasing is not modeled.
    pub fn build(
        space: SpaceSpec,
        params: &ModelParams<T>,
        kappa: T,
        gamma: &[T],
    ) -> Result<Self> {
        params.validate(space)?;
        if gamma.len() != space.n_qubits {
            return Err(Error::Shape("one relaxation rate per qubit is required".into()));
        }
        let action = ModelAction::new(space)?;
        let eig = eigensystem(&action.to_dense(params)?, Sector::Full)?;
        let dim = space.dim();
        let v = eig.vectors();

        let mut gamma_table: DMatrix<T> = DMatrix::zeros(dim, dim);
        let mut channel = |op: &DMatrix<C<T>>, rate: T, omega_ch: T| {
            // M = V† op V; accumulate rate(Δ/ω)|M[a,k]|² for E_k > E_a.
            let m = v.ad_mul(&(op * v));
            for k in 0..dim {
                for a in 0..k {
                    let gap = eig.energy(k) - eig.energy(a);
                    if gap > T::zero() {
                        gamma_table[(a, k)] +=
                            rate * (gap / omega_ch) * m[(a, k)].norm_sqr();
                    }
                }
            }
        };
        if kappa > T::zero() {
            for i in 0..space.n_modes {
                let x = crate::hilbert::annihilator::<T>(space, i)?;
                let pos = x.matrix() + x.matrix().adjoint();
                channel(&pos, kappa, params.omega[i]);
            }
        }
        for j in 0..space.n_qubits {
            if gamma[j] > T::zero() {
                let wq = T::of(2.0) * params.delta[j];
                if !(wq > T::zero()) {
                    return Err(Error::Condition(format!(
                        "qubit {} has no positive transition frequency for its relaxation channel",
                        j + 1
                    )));
                }
                let sx =
                    crate::hilbert::pauli::<T>(space, j, crate::hilbert::PauliAxis::X)?;
                channel(sx.matrix(), gamma[j], wq);
            }
        }

        let mut s_out = vec![T::zero(); dim];
        for k in 0..dim {
            let mut s = T::zero();
            for a in 0..k {
                s += gamma_table[(a, k)];
            }
            s_out[k] = s;
        }
        Ok(Self {
            space,
            energies: eig.energies().to_vec(),
            vectors: v.clone(),
            gamma_table,
            s_out,
        })
    }

    pub fn energies(&self) -> &[T] {
        &self.energies
    }

    /// Downward rate from level `k` into level `a` (a < k).
    pub fn rate(&self, a: usize, k: usize) -> T {
        self.gamma_table[(a, k)]
    }

    fn to_eigenbasis(&self, rho: &DMatrix<C<T>>) -> DMatrix<C<T>> {
        self.vectors.ad_mul(&(rho * &self.vectors))
    }

    fn from_eigenbasis(&self, rho_e: &DMatrix<C<T>>) -> DMatrix<C<T>> {
        &self.vectors * rho_e * self.vectors.adjoint()
    }

    /// RHS on vec(ρ′) in the eigenbasis.
    fn eval(&self, y: &DVector<C<T>>, out: &mut DVector<C<T>>) {
        let dim = self.space.dim();
        let ys = y.as_slice();
        let outs = out.as_mut_slice();
        for b in 0..dim {
            for a in 0..dim {
                let phase = self.energies[a] - self.energies[b];
                let damp = T::of(0.5) * (self.s_out[a] + self.s_out[b]);
                let v = ys[a + b * dim];
                // (−i phase − damp) v
                outs[a + b * dim] = C::new(
                    phase * v.im - damp * v.re,
                    -phase * v.re - damp * v.im,
                );
            }
        }
        for a in 0..dim {
            let mut feed = C::new(T::zero(), T::zero());
            for k in (a + 1)..dim {
                let g = self.gamma_table[(a, k)];
                if g != T::zero() {
                    feed += ys[k + k * dim] * C::new(g, T::zero());
                }
            }
            outs[a + a * dim] += feed;
        }
    }
}

fn check_invariants<T: Real>(
    data: &[C<T>],
    dim: usize,
    t: T,
    options: &MasterOptions<T>,
    check_positivity: bool,
) -> Result<()> {
    let mut trace = T::zero();
    for k in 0..dim {
        trace += data[k + k * dim].re;
    }
    if (trace - T::one()).abs() > options.trace_tol {
        return Err(Error::Numerical(format!(
            "trace drifted to {} at t = {} cycles",
            trace.as_f64(),
            t.as_f64()
        )));
    }
    let mut herm = T::zero();
    for c in 0..dim {
        for r in c..dim {
            let d = (data[r + c * dim] - data[c + r * dim].conj()).cmod();
            herm = herm.max(d);
        }
    }
    if herm > options.herm_tol {
        return Err(Error::Numerical(format!(
            "Hermiticity drifted to {} at t = {} cycles",
            herm.as_f64(),
            t.as_f64()
        )));
    }
    if check_positivity {
        // λ_min(ρ) ≥ −tol ⇔ ρ + tol·I admits a Cholesky factorization
        // (up to roundoff); cheaper than an eigendecomposition.
        let mut shifted = DMatrix::zeros(dim, dim);
        let half = T::of(0.5);
        for c in 0..dim {
            for r in 0..dim {
                let a = data[r + c * dim];
                let b = data[c + r * dim].conj();
                shifted[(r, c)] = (a + b) * C::new(half, T::zero());
            }
        }
        for k in 0..dim {
            shifted[(k, k)] += C::new(options.positivity_tol * T::of(10.0), T::zero());
        }
        if nalgebra::Cholesky::new(shifted).is_none() {
            return Err(Error::Numerical(format!(
                "density matrix lost positivity at t = {} cycles",
                t.as_f64()
            )));
        }
    }
    Ok(())
}

/// Propagate a density matrix along a schedule with the chosen engine,
/// calling the observer at each sample time (cycles, ascending). Trace and
/// Hermiticity are enforced at every sample; positive semidefiniteness is
/// spot-checked at evenly spaced samples. The dressed engine additionally
/// requires piecewise-constant parameters (it rebuilds its eigenbasis at
/// rate and schedule breakpoints) and no dephasing.
pub fn propagate_master<T: Real, F>(
    space: SpaceSpec,
    schedule: &Schedule<T>,
    rates: &DissipationRates<T>,
    initial: &DensityMatrix<T>,
    samples: &[T],
    engine: MasterEngine,
    options: &MasterOptions<T>,
    mut observer: F,
) -> Result<(DensityMatrix<T>, IntegrationStats)>
where
    F: FnMut(T, &DensityMatrix<T>) -> Result<()>,
{
    let dim = space.dim();
    if dim > MASTER_DIM_LIMIT {
        return Err(Error::Capacity {
            what: "master-equation state",
            dim,
            limit: MASTER_DIM_LIMIT,
        });
    }
    if space.n_qubits != schedule.n_qubits() || space.n_modes != schedule.n_modes() {
        return Err(Error::Shape("space and schedule shapes differ".into()));
    }
    if initial.space() != space {
        return Err(Error::Shape("initial state lives on a different space".into()));
    }
    rates.validate(space)?;
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

    // Segment boundaries: schedule breakpoints plus κ_c switch times.
    let mut breaks = schedule.breakpoints();
    for b in rates.kappa_c.breakpoints() {
        if b > T::zero() && b < schedule.duration {
            breaks.push(b);
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    breaks.dedup_by(|a, b| (*a - *b).abs() <= T::default_epsilon() * T::of(64.0));

    if engine == MasterEngine::Dressed {
        if rates.gamma_phi.iter().any(|&v| v != T::zero()) {
            return Err(Error::Condition(
                "the dressed engine does not model pure dephasing".into(),
            ));
        }
        // Parameters must be constant between consecutive breakpoints.
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let eps = (b - a) * T::of(1e-9);
            let pa = schedule.params_at(a + eps);
            let pm = schedule.params_at((a + b) * T::of(0.5));
            let pb = schedule.params_at(b - eps);
            if pa != pm || pm != pb {
                return Err(Error::Condition(
                    "the dressed engine needs piecewise-constant parameters; use the Lindblad engine for ramps"
                        .into(),
                ));
            }
        }
    }

    let mut y = DVector::from_column_slice(initial.matrix().as_slice());
    let mut integrator = Integrator::new(dim * dim);
    let cfg = SolverConfig {
        mode: StepMode::Adaptive { tol: options.tol },
        max_step: options.max_step,
    };
    let mut stats = IntegrationStats::default();

    // Positivity check points: evenly spaced sample indices.
    let pos_every = if options.positivity_checks == 0 {
        usize::MAX
    } else {
        (samples.len() / options.positivity_checks).max(1)
    };

    let mut lindblad = match engine {
        MasterEngine::Lindblad => Some(LindbladRhs::new(space, schedule, rates)?),
        MasterEngine::Dressed => None,
    };
    // Dressed state: engine for the current segment plus ρ′ in its basis.
    let mut dressed: Option<(DressedEngine<T>, usize)> = None; // (engine, segment)

    let segment_of = |t: T| -> usize {
        let mut seg = 0;
        for (k, w) in breaks.windows(2).enumerate() {
            if t >= w[0] {
                seg = k;
            }
        }
        seg
    };

    let mut t_now = T::zero();
    let mut final_state: Option<DensityMatrix<T>> = None;
    for (s_idx, &target) in samples.iter().enumerate() {
        let mut legs: Vec<T> = breaks
            .iter()
            .copied()
            .filter(|&b| b > t_now && b < target)
            .collect();
        legs.push(target);
        for leg in legs {
            if leg <= t_now {
                continue;
            }
            match engine {
                MasterEngine::Lindblad => {
                    let rhs_state = lindblad.as_mut().expect("lindblad engine");
                    let mut rhs = |t: T, y: &DVector<C<T>>, out: &mut DVector<C<T>>| {
                        rhs_state.eval(t, y, out);
                    };
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
                }
                MasterEngine::Dressed => {
                    let seg = segment_of(t_now);
                    let rebuild = match &dressed {
                        Some((_, s)) => *s != seg,
                        None => true,
                    };
                    if rebuild {
                        // Return to the bare basis before switching engines.
                        if let Some((old, _)) = dressed.take() {
                            let rho_e = DMatrix::from_column_slice(dim, dim, y.as_slice());
                            let rho = old.from_eigenbasis(&rho_e);
                            y.copy_from_slice(rho.as_slice());
                        }
                        let mid = (breaks[seg] + breaks[seg + 1]) * T::of(0.5);
                        let params = schedule.params_at(mid);
                        let eng = DressedEngine::build(
                            space,
                            &params,
                            rates.kappa_total(mid),
                            &rates.gamma,
                        )?;
                        let rho = DMatrix::from_column_slice(dim, dim, y.as_slice());
                        let rho_e = eng.to_eigenbasis(&rho);
                        y.copy_from_slice(rho_e.as_slice());
                        dressed = Some((eng, seg));
                    }
                    let eng = &dressed.as_ref().expect("dressed engine").0;
                    let mut rhs = |_t: T, y: &DVector<C<T>>, out: &mut DVector<C<T>>| {
                        eng.eval(y, out);
                    };
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
                }
            }
            t_now = leg;
        }

        // Snapshot in the bare basis.
        let bare: Vec<C<T>> = match (&engine, &dressed) {
            (MasterEngine::Dressed, Some((eng, _))) => {
                let rho_e = DMatrix::from_column_slice(dim, dim, y.as_slice());
                eng.from_eigenbasis(&rho_e).as_slice().to_vec()
            }
            _ => y.as_slice().to_vec(),
        };
        let check_pos = options.positivity_checks > 0
            && (s_idx % pos_every == 0 || s_idx + 1 == samples.len());
        check_invariants(&bare, dim, target, options, check_pos)?;
        let snapshot = DensityMatrix::from_evolved(space, &bare);
        observer(target, &snapshot)?;
        final_state = Some(snapshot);
    }
    Ok((final_state.expect("samples is non-empty"), stats))
}

/// Catch-and-release protocol settings. Times are cycles; rates are in units
/// of the mode frequency.
#[derive(Clone, Debug)]
pub struct CatchReleaseOptions<T: Real> {
    /// Per-mode coupling ratios (the W weights will follow their squares).
    pub g_ratios: Vec<T>,
    /// Total final coupling Σ_i g_i².
    pub sum_g_sq: T,
    /// Stark pair (U₁, U₂) shared by all modes.
    pub u_pair: (T, T),
    /// End of the generation ramp.
    pub t_generation: T,
    /// Release instant (output coupler switches on here).
    pub t_release: T,
    /// End of the run.
    pub t_end: T,
    pub kappa_in: T,
    /// Output-coupler rate after release.
    pub kappa_c_on: T,
    pub gamma: T,
    pub gamma_phi: T,
    pub cutoff: usize,
    pub tol: T,
    /// Observer sample spacing (cycles).
    pub sample_step: T,
}

impl<T: Real> Default for CatchReleaseOptions<T> {
    fn default() -> Self {
        Self {
            g_ratios: vec![T::one(), T::of(2.0), T::of(3.0)],
            sum_g_sq: T::of(0.98),
            u_pair: (T::of(0.5), T::of(0.5)),
            t_generation: T::of(1.86),
            t_release: T::of(3.0),
            t_end: T::of(6.0),
            kappa_in: T::of(1e-4),
            kappa_c_on: T::of(0.1),
            gamma: T::of(1e-5),
            gamma_phi: T::of(2e-5),
            cutoff: 4,
            tol: T::of(1e-8),
            sample_step: T::of(0.02),
        }
    }
}

/// Catch-and-release outcome.
#[derive(Clone, Debug)]
pub struct CatchReleaseReport<T: Real> {
    /// ⟨W|ρ|W⟩ at the end of the generation ramp.
    pub generation_fidelity: T,
    /// Fidelity lost between generation and release (the hold phase).
    pub hold_fidelity_drop: T,
    /// Per-mode emitted quanta ∫ κ_c ⟨n_i⟩ dt (internal time).
    pub emitted: Vec<T>,
    /// emitted / Σ emitted.
    pub emitted_fractions: Vec<T>,
    /// Total mode population lost during the release window in a κ_c = 0
    /// control run (intrinsic loss only).
    pub control_release_loss: T,
    /// Sample times (cycles).
    pub times: Vec<T>,
    /// ⟨W|ρ(t)|W⟩ at each sample.
    pub fidelity_series: Vec<T>,
    /// Per-mode ⟨n_i⟩ at each sample (mode-major: populations[i][sample]).
    pub mode_populations: Vec<Vec<T>>,
}

/// Run the catch-and-release protocol: generate the W state through the
/// standard ramp, hold it as a dark eigenstate of the frozen Hamiltonian,
/// then open the output coupler and integrate the emission from each mode.
/// A control run with the coupler kept closed quantifies the intrinsic loss
/// over the same release window.
pub fn catch_and_release<T: Real>(
    options: &CatchReleaseOptions<T>,
) -> Result<CatchReleaseReport<T>> {
    if !(T::zero() < options.t_generation
        && options.t_generation <= options.t_release
        && options.t_release < options.t_end)
    {
        return Err(Error::Condition(
            "times must satisfy 0 < generation ≤ release < end".into(),
        ));
    }
    let m = options.g_ratios.len();
    let mut ssq = T::zero();
    for &r in &options.g_ratios {
        ssq += r * r;
    }
    if !(ssq > T::zero()) {
        return Err(Error::Condition("coupling ratios must not all vanish".into()));
    }
    let scale = (options.sum_g_sq / ssq).sqrt();
    let g_final: Vec<T> = options.g_ratios.iter().map(|&r| r * scale).collect();

    // Schedule: generation ramp, then frozen parameters to the end.
    let half = T::of(0.5);
    let t_gen = options.t_generation;
    let t_end = options.t_end;
    let delta = vec![
        crate::schedule::PiecewiseLinear::new(vec![
            (T::zero(), T::one()),
            (t_gen, half),
            (t_end, half),
        ])?,
        crate::schedule::PiecewiseLinear::new(vec![
            (T::zero(), T::zero()),
            (t_gen, half),
            (t_end, half),
        ])?,
    ];
    let omega = vec![crate::schedule::PiecewiseLinear::constant(T::one()); m];
    let mut g = Vec::with_capacity(2 * m);
    let mut u = Vec::with_capacity(2 * m);
    for i in 0..m {
        for uj in [options.u_pair.0, options.u_pair.1] {
            g.push(crate::schedule::PiecewiseLinear::new(vec![
                (T::zero(), T::zero()),
                (t_gen, g_final[i]),
                (t_end, g_final[i]),
            ])?);
            u.push(crate::schedule::PiecewiseLinear::constant(uj));
        }
    }
    let schedule = Schedule::new(t_end, delta, omega, g, u)?;

    let space = build_space(2, m, options.cutoff)?;
    let initial = DensityMatrix::from_pure(&PureState::basis_state(
        space,
        &[0, 0],
        &vec![0usize; m],
    )?);
    let target = crate::dynamics::w_target(space, &schedule.params_at(t_end))?;

    // Sample grid: regular spacing plus the protocol's corner times.
    let mut samples: Vec<T> = Vec::new();
    let mut t = T::zero();
    while t < t_end {
        samples.push(t);
        t += options.sample_step;
    }
    samples.push(t_end);
    for corner in [t_gen, options.t_release] {
        if !samples.iter().any(|&s| (s - corner).abs() < T::of(1e-12)) {
            samples.push(corner);
        }
    }
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));

    let run = |kappa_c_on: T| -> Result<(Vec<T>, Vec<T>, Vec<Vec<T>>)> {
        let rates = DissipationRates {
            kappa_in: options.kappa_in,
            kappa_c: PiecewiseConstant::new(vec![
                (T::zero(), T::zero()),
                (options.t_release, kappa_c_on),
            ])?,
            gamma: vec![options.gamma; 2],
            gamma_phi: vec![options.gamma_phi; 2],
        };
        let mut times = Vec::with_capacity(samples.len());
        let mut fidelities = Vec::with_capacity(samples.len());
        let mut populations = vec![Vec::with_capacity(samples.len()); m];
        propagate_master(
            space,
            &schedule,
            &rates,
            &initial,
            &samples,
            MasterEngine::Lindblad,
            &MasterOptions {
                tol: options.tol,
                ..Default::default()
            },
            |t, rho| {
                times.push(t);
                fidelities.push(rho.fidelity(&target)?);
                for (i, series) in populations.iter_mut().enumerate() {
                    series.push(rho.mode_population(i)?);
                }
                Ok(())
            },
        )?;
        Ok((times, fidelities, populations))
    };

    let (times, fidelity_series, mode_populations) = run(options.kappa_c_on)?;
    let (_, _, control_populations) = run(T::zero())?;

    let at = |series: &[T], t: T| -> T {
        let mut best = (T::of(f64::INFINITY), T::zero());
        for (k, &tk) in times.iter().enumerate() {
            let d = (tk - t).abs();
            if d < best.0 {
                best = (d, series[k]);
            }
        }
        best.1
    };

    let generation_fidelity = at(&fidelity_series, t_gen);
    let hold_fidelity_drop = generation_fidelity - at(&fidelity_series, options.t_release);

    // Emission per mode: ∫ κ_c(t) ⟨n_i⟩ dt over internal time (trapezoid).
    let kappa_c_of = |t: T| -> T {
        if t >= options.t_release {
            options.kappa_c_on
        } else {
            T::zero()
        }
    };
    let mut emitted = vec![T::zero(); m];
    for w in 0..times.len() - 1 {
        let (t0, t1) = (times[w], times[w + 1]);
        let dt = cycles_to_internal(t1 - t0);
        for i in 0..m {
            let f0 = kappa_c_of(t0) * mode_populations[i][w];
            let f1 = kappa_c_of(t1) * mode_populations[i][w + 1];
            emitted[i] += (f0 + f1) * half * dt;
        }
    }
    let mut total = T::zero();
    for &e in &emitted {
        total += e;
    }
    let emitted_fractions = if total > T::zero() {
        emitted.iter().map(|&e| e / total).collect()
    } else {
        vec![T::zero(); m]
    };

    // Control: mode population lost between release and end with the
    // coupler closed.
    let mut control_release_loss = T::zero();
    {
        let total_at = |t: T| -> T {
            let mut sum = T::zero();
            for series in control_populations.iter() {
                sum += at(series, t);
            }
            sum
        };
        control_release_loss = control_release_loss
            .max(total_at(options.t_release) - total_at(t_end));
    }

    Ok(CatchReleaseReport {
        generation_fidelity,
        hold_fidelity_drop,
        emitted,
        emitted_fractions,
        control_release_loss,
        times,
        fidelity_series,
        mode_populations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::PiecewiseLinear;

    fn hold_schedule(params: &ModelParams<f64>, duration: f64) -> Schedule<f64> {
        Schedule::hold(params, duration).unwrap()
    }

    #[test]
    fn closed_lindblad_matches_pure_state_propagation() {
        let space = build_space(1, 1, 4).unwrap();
        let duration: f64 = 2.0;
        let delta = vec![PiecewiseLinear::new(vec![(0.0, 0.8), (duration, 0.3)]).unwrap()];
        let omega = vec![PiecewiseLinear::constant(1.0)];
        let g = vec![PiecewiseLinear::new(vec![(0.0, 0.0), (duration, 0.4)]).unwrap()];
        let u = vec![PiecewiseLinear::constant(0.0)];
        let schedule = Schedule::new(duration, delta, omega, g, u).unwrap();

        let psi0 = PureState::basis_state(space, &[0], &[0]).unwrap();
        let (psi_t, _) = crate::dynamics::propagate(
            space,
            &schedule,
            &psi0,
            &[duration],
            &crate::dynamics::PropagateOptions::default(),
            |_, _| Ok(()),
        )
        .unwrap();

        let rho0 = DensityMatrix::from_pure(&psi0);
        let rates = DissipationRates::none(1);
        let (rho_t, _) = propagate_master(
            space,
            &schedule,
            &rates,
            &rho0,
            &[duration],
            MasterEngine::Lindblad,
            &MasterOptions::default(),
            |_, _| Ok(()),
        )
        .unwrap();
        let f = rho_t.fidelity(&psi_t).unwrap();
        assert!((f - 1.0).abs() < 1e-6, "fidelity to closed evolution {f}");
        assert!((rho_t.purity() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn photon_number_decays_at_the_loss_rate() {
        let space = build_space(1, 1, 4).unwrap();
        let params = ModelParams::rabi(vec![0.0], vec![1.0], nalgebra::DMatrix::zeros(1, 1));
        let duration = 3.0;
        let schedule = hold_schedule(&params, duration);
        let kappa = 0.05;
        let rates = DissipationRates {
            kappa_in: kappa,
            kappa_c: PiecewiseConstant::constant(0.0),
            gamma: vec![0.0],
            gamma_phi: vec![0.0],
        };
        let rho0 = DensityMatrix::from_pure(
            &PureState::basis_state(space, &[0], &[2]).unwrap(),
        );
        let (rho_t, _) = propagate_master(
            space,
            &schedule,
            &rates,
            &rho0,
            &[duration],
            MasterEngine::Lindblad,
            &MasterOptions::default(),
            |_, _| Ok(()),
        )
        .unwrap();
        let want = 2.0 * (-kappa * cycles_to_internal(duration)).exp();
        let got = rho_t.mode_population(0).unwrap();
        assert!(
            (got - want).abs() < 1e-6 * want,
            "⟨n⟩ = {got}, expected {want}"
        );
    }

    #[test]
    fn relaxation_and_dephasing_rates_are_calibrated() {
        // γ empties the excited state at rate γ; γφ kills coherence at γφ.
        let space = build_space(1, 1, 1).unwrap();
        let params = ModelParams::rabi(vec![0.3], vec![1.0], nalgebra::DMatrix::zeros(1, 1));
        let duration = 4.0;
        let schedule = hold_schedule(&params, duration);
        let gamma = 0.02;
        let gphi = 0.03;
        let rates = DissipationRates {
            kappa_in: 0.0,
            kappa_c: PiecewiseConstant::constant(0.0),
            gamma: vec![gamma],
            gamma_phi: vec![gphi],
        };
        let i_up = space.index_of(&[0], &[0]).unwrap();
        let i_dn = space.index_of(&[1], &[0]).unwrap();
        let mut v = DVector::zeros(space.dim());
        v[i_up] = C::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        v[i_dn] = C::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let plus = PureState::new(space, v).unwrap();
        let rho0 = DensityMatrix::from_pure(&plus);
        let (rho_t, _) = propagate_master(
            space,
            &schedule,
            &rates,
            &rho0,
            &[duration],
            MasterEngine::Lindblad,
            &MasterOptions::default(),
            |_, _| Ok(()),
        )
        .unwrap();
        let t = cycles_to_internal(duration);
        let p_up = rho_t.excited_population(0).unwrap();
        let want_up = 0.5 * (-gamma * t).exp();
        assert!((p_up - want_up).abs() < 1e-6, "P↑ = {p_up} vs {want_up}");
        // Coherence decays at γφ + γ/2 (relaxation contributes γ/2).
        let coh = rho_t.matrix()[(i_up, i_dn)].norm();
        let want_coh = 0.5 * (-(gphi + 0.5 * gamma) * t).exp();
        assert!(
            (coh - want_coh).abs() < 1e-6,
            "|ρ01| = {coh} vs {want_coh}"
        );
    }

    #[test]
    fn dressed_engine_tracks_lindblad_for_weak_loss() {
        let space = build_space(1, 1, 3).unwrap();
        let params = ModelParams::rabi(
            vec![0.5],
            vec![1.0],
            nalgebra::DMatrix::from_element(1, 1, 0.2),
        );
        let duration = 20.0;
        let schedule = hold_schedule(&params, duration);
        let rates = DissipationRates {
            kappa_in: 1e-3,
            kappa_c: PiecewiseConstant::constant(0.0),
            gamma: vec![1e-4],
            gamma_phi: vec![0.0],
        };
        let rho0 = DensityMatrix::from_pure(
            &PureState::basis_state(space, &[0], &[1]).unwrap(),
        );
        let mut finals = Vec::new();
        for engine in [MasterEngine::Lindblad, MasterEngine::Dressed] {
            let (rho_t, _) = propagate_master(
                space,
                &schedule,
                &rates,
                &rho0,
                &[duration],
                engine,
                &MasterOptions::default(),
                |_, _| Ok(()),
            )
            .unwrap();
            finals.push(rho_t);
        }
        let n_l = finals[0].mode_population(0).unwrap();
        let n_d = finals[1].mode_population(0).unwrap();
        assert!(
            (n_l - n_d).abs() < 0.02,
            "mode populations diverge: {n_l} vs {n_d}"
        );
        let p_l = finals[0].excited_population(0).unwrap();
        let p_d = finals[1].excited_population(0).unwrap();
        assert!(
            (p_l - p_d).abs() < 0.02,
            "qubit populations diverge: {p_l} vs {p_d}"
        );
    }

    #[test]
    fn dressed_engine_rejects_ramps_and_dephasing() {
        let space = build_space(1, 1, 2).unwrap();
        let duration = 1.0;
        let delta = vec![PiecewiseLinear::new(vec![(0.0, 0.5), (duration, 0.2)]).unwrap()];
        let omega = vec![PiecewiseLinear::constant(1.0)];
        let g = vec![PiecewiseLinear::constant(0.1)];
        let u = vec![PiecewiseLinear::constant(0.0)];
        let ramp = Schedule::new(duration, delta, omega, g, u).unwrap();
        let rho0 = DensityMatrix::from_pure(
            &PureState::basis_state(space, &[0], &[0]).unwrap(),
        );
        let rates = DissipationRates::none(1);
        let err = propagate_master(
            space,
            &ramp,
            &rates,
            &rho0,
            &[duration],
            MasterEngine::Dressed,
            &MasterOptions::default(),
            |_, _| Ok(()),
        );
        assert!(matches!(err, Err(Error::Condition(_))));

        let params = ModelParams::rabi(
            vec![0.5],
            vec![1.0],
            nalgebra::DMatrix::from_element(1, 1, 0.1),
        );
        let hold = hold_schedule(&params, duration);
        let mut rates = DissipationRates::none(1);
        rates.gamma_phi[0] = 1e-4;
        let err = propagate_master(
            space,
            &hold,
            &rates,
            &rho0,
            &[duration],
            MasterEngine::Dressed,
            &MasterOptions::default(),
            |_, _| Ok(()),
        );
        assert!(matches!(err, Err(Error::Condition(_))));
    }
}
