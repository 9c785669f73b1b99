//! Closed-form dark eigenstates of the multiqubit multimode Rabi and
//! Rabi–Stark models, each returned with a machine-checked certificate, plus
//! a numerical one-photon nullspace finder that rediscovers them.
//!
//! Every constructor validates its parameter conditions first (returning a
//! condition error naming the violated constraint), assembles the closed-form
//! amplitudes, and certifies the state against the full Hamiltonian via the
//! matrix-free action: residual ‖(H − E)ψ‖, parity purity, and photon-number
//! support bounds.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hilbert::{strict_tol, PureState, SpaceSpec};
use crate::models::{bogoliubov_frame, ModelAction, ModelParams};
use crate::num::{ComplexMod, Real, C};

/// Inclusive bounds on the total photon number carried by a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhotonBound {
    pub min: usize,
    pub max: usize,
}

/// A state together with the evidence that it is the claimed eigenstate.
#[derive(Clone, Debug)]
pub struct Certificate<T: Real> {
    pub state: PureState<T>,
    /// Claimed eigenvalue (analytic, not fitted).
    pub energy: T,
    /// ‖(H − E)ψ‖ for the normalized state.
    pub residual: T,
    /// Parity sector, +1 or −1 (certified pure to 1e-10).
    pub parity: i8,
    /// Support bounds in total photon number.
    pub photon_bound: PhotonBound,
}

impl<T: Real> Certificate<T> {
    /// Enforce a residual ceiling, consuming and returning the certificate.
    pub fn require(self, max_residual: T) -> Result<Self> {
        if self.residual > max_residual {
            return Err(Error::Numerical(format!(
                "certificate residual {} exceeds {}",
                self.residual.as_f64(),
                max_residual.as_f64()
            )));
        }
        Ok(self)
    }
}

/// Tolerance for validating closed-form parameter conditions.
fn cond_tol<T: Real>(scale: T) -> T {
    strict_tol::<T>() * T::of(1e2) * (T::one() + scale.abs())
}

/// Normalize, fix the global phase, and certify (residual, parity, support)
/// against H(params) at the claimed energy.
pub fn certify<T: Real>(
    space: SpaceSpec,
    params: &ModelParams<T>,
    amplitudes: DVector<C<T>>,
    energy: T,
) -> Result<Certificate<T>> {
    params.validate(space)?;
    let mut state = PureState::normalized(space, amplitudes)?;
    state.fix_global_phase();

    let action = ModelAction::new(space)?;
    let dim = space.dim();
    let mut image = vec![C::new(T::zero(), T::zero()); dim];
    let mut scratch = vec![C::new(T::zero(), T::zero()); dim];
    action.apply(params, state.amplitudes().as_slice(), &mut image, &mut scratch);
    let mut residual_sq = T::zero();
    for (k, a) in state.amplitudes().iter().enumerate() {
        let r = image[k] - *a * C::new(energy, T::zero());
        residual_sq += r.norm_sqr();
    }
    let residual = residual_sq.sqrt();

    // Parity purity: ⟨P⟩ = Σ sign(k) |ψ_k|² must be ±1.
    let mut p = T::zero();
    for (k, a) in state.amplitudes().iter().enumerate() {
        let w = a.norm_sqr();
        if space.parity_sign(k) == 1 {
            p += w;
        } else {
            p -= w;
        }
    }
    if (p.abs() - T::one()).abs() > T::of(1e-10) {
        return Err(Error::Numerical(format!(
            "state is not parity pure: ⟨P⟩ = {}",
            p.as_f64()
        )));
    }
    let parity = if p > T::zero() { 1 } else { -1 };

    // Photon support bounds over amplitudes above the support threshold.
    let support_tol = strict_tol::<T>() * T::of(10.0);
    let mut min_n = usize::MAX;
    let mut max_n = 0usize;
    for (k, a) in state.amplitudes().iter().enumerate() {
        if a.cmod() > support_tol {
            let n = space.total_photons(k);
            min_n = min_n.min(n);
            max_n = max_n.max(n);
        }
    }
    if min_n == usize::MAX {
        return Err(Error::Singular("state has no support".into()));
    }

    Ok(Certificate {
        state,
        energy,
        residual,
        parity,
        photon_bound: PhotonBound { min: min_n, max: max_n },
    })
}

fn require_two_qubits(space: SpaceSpec) -> Result<()> {
    if space.n_qubits != 2 {
        return Err(Error::Condition(format!(
            "this family needs exactly 2 qubits, space has {}",
            space.n_qubits
        )));
    }
    Ok(())
}

fn require_equal_frequencies<T: Real>(params: &ModelParams<T>) -> Result<T> {
    let w0 = params.omega[0];
    for &w in &params.omega {
        if (w - w0).abs() > cond_tol(w0) {
            return Err(Error::Condition(
                "all mode frequencies must be equal for this family".into(),
            ));
        }
    }
    Ok(w0)
}

fn require_balanced_couplings<T: Real>(params: &ModelParams<T>) -> Result<()> {
    for i in 0..params.n_modes() {
        let (a, b) = (params.g[(i, 0)], params.g[(i, 1)]);
        if (a - b).abs() > cond_tol(a.abs() + b.abs()) {
            return Err(Error::Condition(format!(
                "couplings of mode {} must be equal on both qubits (g1 = g2)",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Two-qubit single-mode Rabi dark state
/// ψ_d ∝ (Δ₁−Δ₂)|0,↑↑⟩ + g|1,(↓↑−↑↓)⟩ at E = ω, valid when U = 0,
/// Δ₁+Δ₂ = ω and both couplings are equal.
pub fn psi_d<T: Real>(space: SpaceSpec, params: &ModelParams<T>) -> Result<Certificate<T>> {
    if space.n_modes != 1 {
        return Err(Error::Condition(format!(
            "this family needs exactly 1 mode, space has {}",
            space.n_modes
        )));
    }
    if !params.is_rabi() {
        return Err(Error::Condition(
            "this family requires all Stark shifts U to vanish".into(),
        ));
    }
    psi_2plus(space, params)
}

/// Multimode generalization of ψ_d: the one-photon part becomes a W-like
/// superposition with amplitudes proportional to the couplings g_i,
///   ψ_2+ ∝ (Δ₁−Δ₂)|0_M,↑↑⟩ + Σ_i g_i |1_i,(↓↑−↑↓)⟩,  E = ω,
/// valid when U = 0, all ω_i = ω, Δ₁+Δ₂ = ω, and g_i1 = g_i2 per mode.
pub fn psi_2plus<T: Real>(space: SpaceSpec, params: &ModelParams<T>) -> Result<Certificate<T>> {
    params.validate(space)?;
    require_two_qubits(space)?;
    if !params.is_rabi() {
        return Err(Error::Condition(
            "this family requires all Stark shifts U to vanish".into(),
        ));
    }
    let omega = require_equal_frequencies(params)?;
    let dsum = params.delta[0] + params.delta[1];
    if (dsum - omega).abs() > cond_tol(omega) {
        return Err(Error::Condition("the dark condition Δ₁ + Δ₂ = ω must hold".into()));
    }
    require_balanced_couplings(params)?;

    let m = space.n_modes;
    let mut amps = DVector::zeros(space.dim());
    let ddiff = params.delta[0] - params.delta[1];
    let zero_photons = vec![0usize; m];
    amps[space.index_of(&[0, 0], &zero_photons)?] = C::new(ddiff, T::zero());
    for i in 0..m {
        let mut photons = vec![0usize; m];
        photons[i] = 1;
        let gi = params.g[(i, 0)];
        amps[space.index_of(&[1, 0], &photons)?] += C::new(gi, T::zero());
        amps[space.index_of(&[0, 1], &photons)?] -= C::new(gi, T::zero());
    }
    certify(space, params, amps, omega)?.require(T::of(1e-10))
}

/// Single-mode Rabi–Stark dark state
/// ψ_ds ∝ (Δ₁−Δ₂+U₁−U₂)|0,↑↑⟩ + g|1,(↓↑−↑↓)⟩ at E = ω, valid when
/// Δ₁+Δ₂ = ω and both couplings are equal (U₁, U₂ arbitrary).
pub fn psi_ds<T: Real>(space: SpaceSpec, params: &ModelParams<T>) -> Result<Certificate<T>> {
    params.validate(space)?;
    require_two_qubits(space)?;
    if space.n_modes != 1 {
        return Err(Error::Condition(format!(
            "this family needs exactly 1 mode, space has {}",
            space.n_modes
        )));
    }
    let omega = params.omega[0];
    let dsum = params.delta[0] + params.delta[1];
    if (dsum - omega).abs() > cond_tol(omega) {
        return Err(Error::Condition("the dark condition Δ₁ + Δ₂ = ω must hold".into()));
    }
    require_balanced_couplings(params)?;

    let mut amps = DVector::zeros(space.dim());
    let front = params.delta[0] - params.delta[1] + params.u[(0, 0)] - params.u[(0, 1)];
    let g = params.g[(0, 0)];
    amps[space.index_of(&[0, 0], &[0])?] = C::new(front, T::zero());
    amps[space.index_of(&[1, 0], &[1])?] = C::new(g, T::zero());
    amps[space.index_of(&[0, 1], &[1])?] = C::new(-g, T::zero());
    certify(space, params, amps, omega)?.require(T::of(1e-10))
}

/// Multimode Rabi–Stark dark state: the W′ superposition weights each mode by
/// g_i/(Δ₁−Δ₂+U_i1−U_i2),
///   ψ_2s+ ∝ |0_M,↑↑⟩ + Σ_i [g_i/(Δ₁−Δ₂+U_i1−U_i2)] |1_i,(↓↑−↑↓)⟩,  E = ω,
/// valid when all ω_i = ω, Δ₁+Δ₂ = ω, and g_i1 = g_i2 per mode. Vanishing
/// denominators are singular configurations.
pub fn psi_2splus<T: Real>(space: SpaceSpec, params: &ModelParams<T>) -> Result<Certificate<T>> {
    params.validate(space)?;
    require_two_qubits(space)?;
    let omega = require_equal_frequencies(params)?;
    let dsum = params.delta[0] + params.delta[1];
    if (dsum - omega).abs() > cond_tol(omega) {
        return Err(Error::Condition("the dark condition Δ₁ + Δ₂ = ω must hold".into()));
    }
    require_balanced_couplings(params)?;

    let m = space.n_modes;
    let mut amps = DVector::zeros(space.dim());
    let zero_photons = vec![0usize; m];
    amps[space.index_of(&[0, 0], &zero_photons)?] = C::new(T::one(), T::zero());
    for i in 0..m {
        let den = params.delta[0] - params.delta[1] + params.u[(i, 0)] - params.u[(i, 1)];
        let gi = params.g[(i, 0)];
        if den.abs() <= cond_tol(omega) {
            if gi.abs() <= cond_tol(omega) {
                continue; // Decoupled mode contributes nothing.
            }
            return Err(Error::Singular(format!(
                "W′ denominator Δ₁−Δ₂+U_{m}1−U_{m}2 vanishes for mode {}",
                i + 1,
                m = i + 1
            )));
        }
        let mut photons = vec![0usize; m];
        photons[i] = 1;
        let w = gi / den;
        amps[space.index_of(&[1, 0], &photons)?] += C::new(w, T::zero());
        amps[space.index_of(&[0, 1], &photons)?] -= C::new(w, T::zero());
    }
    certify(space, params, amps, omega)?.require(T::of(1e-10))
}

/// Odd-parity Rabi–Stark dark states. Variant A lives at ω = Δ₁−Δ₂ with
/// zero-photon part |0,↑↓⟩; variant B at ω = Δ₂−Δ₁ with |0,↓↑⟩. Both carry
///   |W″(↓↓−↑↑)⟩, W″ = Σ_i g_i/(Δ₁+Δ₂+U_i1+U_i2)|1_i⟩,  E = ω,
/// and need all ω_i = ω and g_i1 = g_i2 per mode.
pub fn psi_2s_odd<T: Real>(
    space: SpaceSpec,
    params: &ModelParams<T>,
    variant_b: bool,
) -> Result<Certificate<T>> {
    params.validate(space)?;
    require_two_qubits(space)?;
    let omega = require_equal_frequencies(params)?;
    let want = if variant_b {
        params.delta[1] - params.delta[0]
    } else {
        params.delta[0] - params.delta[1]
    };
    if (want - omega).abs() > cond_tol(omega) {
        return Err(Error::Condition(if variant_b {
            "the dark condition Δ₂ − Δ₁ = ω must hold".into()
        } else {
            "the dark condition Δ₁ − Δ₂ = ω must hold".into()
        }));
    }
    require_balanced_couplings(params)?;

    let m = space.n_modes;
    let mut amps = DVector::zeros(space.dim());
    let zero_photons = vec![0usize; m];
    let head = if variant_b { [1u8, 0u8] } else { [0u8, 1u8] };
    amps[space.index_of(&head, &zero_photons)?] = C::new(T::one(), T::zero());
    for i in 0..m {
        let den = params.delta[0] + params.delta[1] + params.u[(i, 0)] + params.u[(i, 1)];
        let gi = params.g[(i, 0)];
        if den.abs() <= cond_tol(omega) {
            if gi.abs() <= cond_tol(omega) {
                continue;
            }
            return Err(Error::Singular(format!(
                "W″ denominator Δ₁+Δ₂+U_{m}1+U_{m}2 vanishes for mode {}",
                i + 1,
                m = i + 1
            )));
        }
        let mut photons = vec![0usize; m];
        photons[i] = 1;
        let w = gi / den;
        amps[space.index_of(&[1, 1], &photons)?] += C::new(w, T::zero());
        amps[space.index_of(&[0, 0], &photons)?] -= C::new(w, T::zero());
    }
    certify(space, params, amps, omega)?.require(T::of(1e-10))
}

/// Three-qubit Rabi–Stark dark state at E⁻ = ω, valid when every Δ_j = ω,
/// all ω_i = ω, per-mode couplings satisfy g_i1 = g_i2 + g_i3 with a common
/// ratio g_i2/g_i3, and the Stark columns are mode-independent. The
/// zero-photon amplitudes are fixed by the first coupling row; the one-photon
/// part is W-weighted over modes with the qubit pattern ↑↓↓−↓↑↓−↓↓↑+↑↑↑.
pub fn psi_3s_minus<T: Real>(space: SpaceSpec, params: &ModelParams<T>) -> Result<Certificate<T>> {
    params.validate(space)?;
    if space.n_qubits != 3 {
        return Err(Error::Condition(format!(
            "this family needs exactly 3 qubits, space has {}",
            space.n_qubits
        )));
    }
    let omega = require_equal_frequencies(params)?;
    for (j, &d) in params.delta.iter().enumerate() {
        if (d - omega).abs() > cond_tol(omega) {
            return Err(Error::Condition(format!(
                "the dark condition Δ_{} = ω must hold",
                j + 1
            )));
        }
    }
    let m = space.n_modes;
    for i in 0..m {
        let (g1, g2, g3) = (params.g[(i, 0)], params.g[(i, 1)], params.g[(i, 2)]);
        if (g1 - g2 - g3).abs() > cond_tol(g1.abs() + g2.abs() + g3.abs()) {
            return Err(Error::Condition(format!(
                "the coupling condition g_{i}1 = g_{i}2 + g_{i}3 must hold",
                i = i + 1
            )));
        }
        // Common ratio across modes: row i proportional to row 0.
        let cross = params.g[(0, 1)] * g3 - params.g[(0, 2)] * g2;
        if cross.abs() > cond_tol(params.g[(0, 1)].abs() + g3.abs()) {
            return Err(Error::Condition(
                "the coupling ratio g_i2/g_i3 must not depend on the mode".into(),
            ));
        }
        for j in 0..3 {
            if (params.u[(i, j)] - params.u[(0, j)]).abs() > cond_tol(omega) {
                return Err(Error::Condition(
                    "Stark shifts must not depend on the mode (equal U columns)".into(),
                ));
            }
        }
    }
    let (g11, g12, g13) = (params.g[(0, 0)], params.g[(0, 1)], params.g[(0, 2)]);
    if g12.abs() <= cond_tol(omega) || g13.abs() <= cond_tol(omega) {
        return Err(Error::Singular(
            "the closed form needs nonzero couplings g_12 and g_13".into(),
        ));
    }
    let (u1, u2, u3) = (params.u[(0, 0)], params.u[(0, 1)], params.u[(0, 2)]);

    let a_uud = (omega * g13 - g12 * u1 + g11 * u2) / g12;
    let a_udu = (omega * g12 - g13 * u1 + g11 * u3) / g13;
    let a_duu = -g11 * (omega * g11 + g13 * u2 + g12 * u3) / (g12 * g13);

    let mut amps = DVector::zeros(space.dim());
    let zero_photons = vec![0usize; m];
    amps[space.index_of(&[0, 0, 1], &zero_photons)?] = C::new(a_uud, T::zero());
    amps[space.index_of(&[0, 1, 0], &zero_photons)?] = C::new(a_udu, T::zero());
    amps[space.index_of(&[1, 0, 0], &zero_photons)?] = C::new(a_duu, T::zero());
    for i in 0..m {
        let mut photons = vec![0usize; m];
        photons[i] = 1;
        let w = params.g[(i, 0)];
        amps[space.index_of(&[0, 1, 1], &photons)?] += C::new(w, T::zero());
        amps[space.index_of(&[1, 0, 1], &photons)?] -= C::new(w, T::zero());
        amps[space.index_of(&[1, 1, 0], &photons)?] -= C::new(w, T::zero());
        amps[space.index_of(&[0, 0, 0], &photons)?] += C::new(w, T::zero());
    }
    certify(space, params, amps, omega)?.require(T::of(1e-10))
}

/// Composite dark state: a two-qubit dark state on qubits 1–2 tensored with
/// singlet pairs on qubits (3,4), (5,6), ... Each appended pair must have
/// equal splittings, equal coupling columns, and equal Stark columns (the
/// singlet then decouples from every mode), leaving E = ω unchanged.
pub fn psi_n_composite<T: Real>(
    space: SpaceSpec,
    params: &ModelParams<T>,
    n_bell: usize,
) -> Result<Certificate<T>> {
    params.validate(space)?;
    if n_bell == 0 {
        return Err(Error::Condition("at least one singlet pair is required".into()));
    }
    if space.n_qubits != 2 + 2 * n_bell {
        return Err(Error::Condition(format!(
            "{} singlet pairs need {} qubits, space has {}",
            n_bell,
            2 + 2 * n_bell,
            space.n_qubits
        )));
    }
    let omega = require_equal_frequencies(params)?;
    for k in 0..n_bell {
        let (ja, jb) = (2 + 2 * k, 3 + 2 * k);
        if (params.delta[ja] - params.delta[jb]).abs() > cond_tol(omega) {
            return Err(Error::Condition(format!(
                "singlet pair ({}, {}) needs equal splittings",
                ja + 1,
                jb + 1
            )));
        }
        for i in 0..space.n_modes {
            if (params.g[(i, ja)] - params.g[(i, jb)]).abs() > cond_tol(omega) {
                return Err(Error::Condition(format!(
                    "singlet pair ({}, {}) needs equal coupling columns",
                    ja + 1,
                    jb + 1
                )));
            }
            if (params.u[(i, ja)] - params.u[(i, jb)]).abs() > cond_tol(omega) {
                return Err(Error::Condition(format!(
                    "singlet pair ({}, {}) needs equal Stark columns",
                    ja + 1,
                    jb + 1
                )));
            }
        }
    }

    // Base dark state on the first two qubits (same modes and cutoff).
    let base_space = crate::hilbert::build_space(2, space.n_modes, space.cutoff)?;
    let base_params = ModelParams {
        delta: params.delta[..2].to_vec(),
        omega: params.omega.clone(),
        g: params.g.columns(0, 2).into_owned(),
        u: params.u.columns(0, 2).into_owned(),
    };
    let base = if base_params.is_rabi() {
        psi_2plus(base_space, &base_params)?
    } else {
        psi_2splus(base_space, &base_params)?
    };

    // Tensor the base amplitudes with the singlet chain.
    let mut amps = DVector::zeros(space.dim());
    let inv_sqrt2 = T::one() / T::of(2.0).sqrt();
    let base_amps = base.state.amplitudes();
    let mut bits = vec![0u8; space.n_qubits];
    for (k, amp) in base_amps.iter().enumerate() {
        if amp.cmod() == T::zero() {
            continue;
        }
        let (bq, photons) = base_space.decode(k);
        bits[0] = bq[0];
        bits[1] = bq[1];
        // Singlet (|↑↓⟩ − |↓↑⟩)/√2 on each appended pair.
        for pattern in 0..(1usize << n_bell) {
            let mut sign = T::one();
            let mut weight = T::one();
            for (kpair, bitpair) in (0..n_bell).map(|p| (p, (pattern >> p) & 1)) {
                let (ja, jb) = (2 + 2 * kpair, 3 + 2 * kpair);
                if bitpair == 0 {
                    bits[ja] = 0;
                    bits[jb] = 1;
                } else {
                    bits[ja] = 1;
                    bits[jb] = 0;
                    sign = -sign;
                }
                weight *= inv_sqrt2;
            }
            let idx = space.index_of(&bits, &photons)?;
            amps[idx] += *amp * C::new(sign * weight, T::zero());
        }
    }
    certify(space, params, amps, base.energy)?.require(T::of(1e-10))
}

/// Apply Σ_i row_i a_i† to a mode-register vector (length mode_dim of the
/// space), writing into `out` (which is zeroed first).
pub(crate) fn mode_combo_creation<T: Real>(
    space: SpaceSpec,
    row: &DVector<T>,
    input: &[C<T>],
    out: &mut [C<T>],
) {
    for v in out.iter_mut() {
        *v = C::new(T::zero(), T::zero());
    }
    let fdim = space.fock_dim();
    for (idx, amp) in input.iter().enumerate() {
        if amp.norm_sqr() == T::zero() {
            continue;
        }
        // Photon digits of the mode register, mode 0 slowest.
        for i in 0..space.n_modes {
            let stride = fdim.pow((space.n_modes - 1 - i) as u32);
            let n = (idx / stride) % fdim;
            if n < space.cutoff && row[i] != T::zero() {
                let factor = C::new(row[i] * crate::num::sqrt_usize::<T>(n + 1), T::zero());
                out[idx + stride] += factor * *amp;
            }
        }
    }
}

/// Free-mode lifted eigenstate: take an eigenstate of the single-mode model
/// in the collective-mode frame and add `k` quanta to the first free mode b₂,
///   φ_K = (b₂†)^K/√(K!) · lift(ψ_single),  E = E_single + K ω.
/// Exact whenever the lifted support fits below the cutoff.
pub fn phi_k_state<T: Real>(
    space: SpaceSpec,
    params: &ModelParams<T>,
    single: &Certificate<T>,
    k: usize,
) -> Result<Certificate<T>> {
    params.validate(space)?;
    if space.n_modes < 2 {
        return Err(Error::Condition(
            "free-mode lifting needs at least two modes".into(),
        ));
    }
    if k == 0 {
        return Err(Error::Condition("the lift must add at least one photon".into()));
    }
    let omega = require_equal_frequencies(params)?;
    let single_space = single.state.space();
    if single_space.n_qubits != space.n_qubits
        || single_space.n_modes != 1
        || single_space.cutoff != space.cutoff
    {
        return Err(Error::Shape(
            "the source certificate must live on the single-mode space with the same qubits and cutoff"
                .into(),
        ));
    }
    let n_max = single.photon_bound.max;
    if n_max + k > space.cutoff {
        return Err(Error::Capacity {
            what: "lifted photon support",
            dim: n_max + k,
            limit: space.cutoff,
        });
    }
    let frame = bogoliubov_frame(params)?;

    // Mode-register vectors m_n = (b₁†)ⁿ (b₂†)^k |0⟩ / √(n! k!).
    let mode_dim = space.mode_dim();
    let mut base = vec![C::new(T::zero(), T::zero()); mode_dim];
    base[0] = C::new(T::one(), T::zero());
    let mut tmp = vec![C::new(T::zero(), T::zero()); mode_dim];
    let b2 = frame.row(1);
    for q in 0..k {
        mode_combo_creation(space, &b2, &base, &mut tmp);
        let scale = C::new(T::one() / crate::num::sqrt_usize::<T>(q + 1), T::zero());
        for (b, t) in base.iter_mut().zip(tmp.iter()) {
            *b = *t * scale;
        }
    }
    let b1 = frame.row(0);
    let mut amps = DVector::zeros(space.dim());
    let fdim = space.fock_dim();
    let mut m_n = base;
    for n in 0..=n_max {
        if n > 0 {
            mode_combo_creation(space, &b1, &m_n, &mut tmp);
            let scale = C::new(T::one() / crate::num::sqrt_usize::<T>(n), T::zero());
            for (b, t) in m_n.iter_mut().zip(tmp.iter()) {
                *b = *t * scale;
            }
        }
        for q in 0..space.qubit_dim() {
            let c = single.state.amplitudes()[q * fdim + n];
            if c.norm_sqr() == T::zero() {
                continue;
            }
            let block = q * mode_dim;
            for (off, mv) in m_n.iter().enumerate() {
                if mv.norm_sqr() != T::zero() {
                    amps[block + off] += c * *mv;
                }
            }
        }
    }
    let energy = single.energy + T::of(k as f64) * omega;
    certify(space, params, amps, energy)?.require(T::of(1e-10))
}

/// Inverse hyperbolic tangent (for the squeezing default).
fn artanh<T: Real>(x: T) -> T {
    (((T::one() + x) / (T::one() - x)).ln()) * T::of(0.5)
}

/// Squeezed-type dark state |↓...↓⟩ ⊗ Π_i Σ_m (−tanh ξ)^m √((2m)!)/(2^m m!) |2m⟩
/// at E = −Σ_j Δ_j, valid when every mode satisfies ω_i = Σ_j U_ij. The
/// infinite-squeezing limit is an exact eigenvector of the truncated model
/// but keeps a cutoff-independent residual against the untruncated ladder;
/// the default ξ grows with the cutoff (tanh ξ = c/(c+2)) so the reported
/// residual shrinks as the cutoff increases. Pass an explicit ξ to override;
/// the residual field reports the finite-ξ mismatch rather than gating it.
pub fn squeezed_dark_state<T: Real>(
    space: SpaceSpec,
    params: &ModelParams<T>,
    xi: Option<T>,
) -> Result<Certificate<T>> {
    params.validate(space)?;
    if space.cutoff % 2 != 0 || space.cutoff < 20 {
        return Err(Error::Condition(
            "the squeezed family needs an even cutoff of at least 20".into(),
        ));
    }
    for i in 0..space.n_modes {
        let mut usum = T::zero();
        for j in 0..space.n_qubits {
            usum += params.u[(i, j)];
        }
        if (params.omega[i] - usum).abs() > cond_tol(params.omega[i]) {
            return Err(Error::Condition(format!(
                "the squeezing condition ω_{i} = Σ_j U_{i}j must hold",
                i = i + 1
            )));
        }
    }
    let c = space.cutoff;
    let tanh_xi = match xi {
        Some(x) => x.tanh(),
        None => T::of(c as f64) / T::of((c + 2) as f64),
    };

    // Per-mode amplitude profile on even photon numbers.
    let mut profile = vec![T::zero(); c + 1];
    let mut coeff = T::one(); // √((2m)!)/(2^m m!) at m = 0
    let mut sign_pow = T::one();
    for m in 0..=(c / 2) {
        if m > 0 {
            let two_m = T::of((2 * m) as f64);
            coeff *= ((two_m - T::one()) / two_m).sqrt();
            sign_pow *= -tanh_xi;
        }
        profile[2 * m] = sign_pow * coeff;
    }

    let mut amps = DVector::zeros(space.dim());
    let all_down = vec![1u8; space.n_qubits];
    let mut photons = vec![0usize; space.n_modes];
    // Tensor product over modes of the even-photon profile.
    fn fill<T: Real>(
        space: SpaceSpec,
        profile: &[T],
        photons: &mut Vec<usize>,
        mode: usize,
        weight: T,
        all_down: &[u8],
        amps: &mut DVector<C<T>>,
    ) {
        if mode == space.n_modes {
            let idx = space
                .index_of(all_down, photons)
                .expect("even photons below cutoff");
            amps[idx] = C::new(weight, T::zero());
            return;
        }
        for m in 0..=(space.cutoff / 2) {
            let w = weight * profile[2 * m];
            if w != T::zero() {
                photons[mode] = 2 * m;
                fill(space, profile, photons, mode + 1, w, all_down, amps);
            }
        }
        photons[mode] = 0;
    }
    fill(space, &profile, &mut photons, 0, T::one(), &all_down, &mut amps);

    let mut energy = T::zero();
    for &d in &params.delta {
        energy -= d;
    }
    certify(space, params, amps, energy)
}

/// Default squeezing parameter used when none is given: tanh ξ = c/(c+2).
pub fn default_squeezing<T: Real>(cutoff: usize) -> T {
    artanh(T::of(cutoff as f64) / T::of((cutoff + 2) as f64))
}

/// Named dark-state family, used by the construction dispatcher and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DarkFamily {
    TwoQubitRabi,
    TwoQubitRabiMultimode,
    TwoQubitStark,
    TwoQubitStarkMultimode,
    TwoQubitStarkOddA,
    TwoQubitStarkOddB,
    ThreeQubitStark,
    SingletPadded,
    LiftedFreeMode,
    SqueezedDown,
}

impl DarkFamily {
    pub const ALL: [DarkFamily; 10] = [
        DarkFamily::TwoQubitRabi,
        DarkFamily::TwoQubitRabiMultimode,
        DarkFamily::TwoQubitStark,
        DarkFamily::TwoQubitStarkMultimode,
        DarkFamily::TwoQubitStarkOddA,
        DarkFamily::TwoQubitStarkOddB,
        DarkFamily::ThreeQubitStark,
        DarkFamily::SingletPadded,
        DarkFamily::LiftedFreeMode,
        DarkFamily::SqueezedDown,
    ];

    pub fn token(self) -> &'static str {
        match self {
            DarkFamily::TwoQubitRabi => "two-qubit-rabi",
            DarkFamily::TwoQubitRabiMultimode => "two-qubit-rabi-multimode",
            DarkFamily::TwoQubitStark => "two-qubit-stark",
            DarkFamily::TwoQubitStarkMultimode => "two-qubit-stark-multimode",
            DarkFamily::TwoQubitStarkOddA => "two-qubit-stark-odd-a",
            DarkFamily::TwoQubitStarkOddB => "two-qubit-stark-odd-b",
            DarkFamily::ThreeQubitStark => "three-qubit-stark",
            DarkFamily::SingletPadded => "singlet-padded",
            DarkFamily::LiftedFreeMode => "lifted-free-mode",
            DarkFamily::SqueezedDown => "squeezed-down",
        }
    }
}

impl std::str::FromStr for DarkFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DarkFamily::ALL
            .iter()
            .copied()
            .find(|f| f.token() == s)
            .ok_or_else(|| {
                Error::Condition(format!(
                    "unknown dark-state family '{s}'; known families: {}",
                    DarkFamily::ALL.map(|f| f.token()).join(", ")
                ))
            })
    }
}

/// Construction request: family plus the knobs some families need.
#[derive(Clone, Debug)]
pub struct DarkStateSpec<T: Real> {
    pub family: DarkFamily,
    /// Squeezing parameter override (squeezed family only).
    pub xi: Option<T>,
    /// Number of appended singlet pairs (composite family only).
    pub n_bell: usize,
    /// Photons added to the first free mode (lifted family only).
    pub lift_photons: usize,
}

impl<T: Real> DarkStateSpec<T> {
    pub fn family(family: DarkFamily) -> Self {
        Self {
            family,
            xi: None,
            n_bell: 1,
            lift_photons: 1,
        }
    }
}

/// Construct the requested dark state on the given space and parameters.
///
/// The lifted family sources its single-mode eigenstate from the dark state
/// of the collective-mode reduction (which must itself satisfy the two-qubit
/// dark conditions).
pub fn construct_dark_state<T: Real>(
    spec: &DarkStateSpec<T>,
    space: SpaceSpec,
    params: &ModelParams<T>,
) -> Result<Certificate<T>> {
    match spec.family {
        DarkFamily::TwoQubitRabi => psi_d(space, params),
        DarkFamily::TwoQubitRabiMultimode => psi_2plus(space, params),
        DarkFamily::TwoQubitStark => psi_ds(space, params),
        DarkFamily::TwoQubitStarkMultimode => psi_2splus(space, params),
        DarkFamily::TwoQubitStarkOddA => psi_2s_odd(space, params, false),
        DarkFamily::TwoQubitStarkOddB => psi_2s_odd(space, params, true),
        DarkFamily::ThreeQubitStark => psi_3s_minus(space, params),
        DarkFamily::SingletPadded => psi_n_composite(space, params, spec.n_bell),
        DarkFamily::SqueezedDown => squeezed_dark_state(space, params, spec.xi),
        DarkFamily::LiftedFreeMode => {
            // Stark shifts couple σ_jz to the total photon number when the
            // U columns are mode-independent, so quanta added to a free
            // mode would shift each dark-state component by a different
            // energy: the free-mode ladder is exact only without them.
            if !params.is_rabi() {
                return Err(Error::Condition(
                    "the free-mode ladder requires vanishing Stark shifts".into(),
                ));
            }
            let (reduced_space, reduced_params) = collective_mode_reduction(space, params)?;
            let source = psi_d(reduced_space, &reduced_params)?;
            phi_k_state(space, params, &source, spec.lift_photons)
        }
    }
}

/// Single-mode reduction in the collective-mode frame: couplings become the
/// column norms (with the common sign), frequencies must be equal and Stark
/// columns mode-independent.
pub fn collective_mode_reduction<T: Real>(
    space: SpaceSpec,
    params: &ModelParams<T>,
) -> Result<(SpaceSpec, ModelParams<T>)> {
    params.validate(space)?;
    let omega = require_equal_frequencies(params)?;
    for i in 0..space.n_modes {
        for j in 0..space.n_qubits {
            if (params.u[(i, j)] - params.u[(0, j)]).abs() > cond_tol(omega) {
                return Err(Error::Condition(
                    "the collective-mode reduction needs mode-independent Stark columns".into(),
                ));
            }
        }
    }
    let frame = bogoliubov_frame(params)?;
    let row0 = frame.row(0);
    let mut g = DMatrix::zeros(1, space.n_qubits);
    for j in 0..space.n_qubits {
        let mut dot = T::zero();
        for i in 0..space.n_modes {
            dot += row0[i] * params.g[(i, j)];
        }
        g[(0, j)] = dot;
    }
    let mut u = DMatrix::zeros(1, space.n_qubits);
    for j in 0..space.n_qubits {
        u[(0, j)] = params.u[(0, j)];
    }
    let reduced_space = crate::hilbert::build_space(space.n_qubits, 1, space.cutoff)?;
    let reduced = ModelParams {
        delta: params.delta.clone(),
        omega: vec![omega],
        g,
        u,
    };
    Ok((reduced_space, reduced))
}

/// One eigenvalue's worth of numerically found one-photon dark states.
#[derive(Clone, Debug)]
pub struct NullspaceFinding<T: Real> {
    pub energy: T,
    pub certificates: Vec<Certificate<T>>,
}

/// Search the ≤1-photon ansatz space of one parity sector for eigenstates at
/// each candidate energy: build the (H − E) block matrix from the ansatz
/// columns to the ≤2-photon rows, extract its SVD kernel (singular values
/// below 1e-10 relative to the largest), and certify every kernel vector
/// against the full Hamiltonian.
pub fn one_photon_nullspace<T: Real>(
    space: SpaceSpec,
    params: &ModelParams<T>,
    sector: i8,
    extra_energies: &[T],
) -> Result<Vec<NullspaceFinding<T>>> {
    params.validate(space)?;
    if sector != 1 && sector != -1 {
        return Err(Error::Condition("parity sector must be +1 or -1".into()));
    }

    // Candidate energies: the closed-form family energies plus user extras.
    let mut energies: Vec<T> = Vec::new();
    if space.n_qubits == 2 {
        energies.push(params.delta[0] + params.delta[1]);
        energies.push(params.delta[0] - params.delta[1]);
        energies.push(params.delta[1] - params.delta[0]);
    }
    energies.push(params.omega[0]);
    energies.extend_from_slice(extra_energies);
    energies.retain(|e| e.finite());
    energies.sort_by(|a, b| a.partial_cmp(b).expect("finite energies"));
    energies.dedup_by(|a, b| (*a - *b).abs() <= T::of(1e-12));

    // Ansatz columns: zero-photon kets with qubit parity = sector and
    // one-photon kets with qubit parity = −sector.
    let mut columns: Vec<usize> = Vec::new();
    let mut rows: Vec<usize> = Vec::new();
    for idx in 0..space.dim() {
        let n = space.total_photons(idx);
        if space.parity_sign(idx) != sector {
            continue;
        }
        if n <= 1 {
            columns.push(idx);
        }
        if n <= 2 {
            rows.push(idx);
        }
    }
    if columns.is_empty() {
        return Ok(Vec::new());
    }
    let row_pos: std::collections::HashMap<usize, usize> =
        rows.iter().enumerate().map(|(p, &idx)| (idx, p)).collect();

    // H action on each ansatz column (computed once, reused for every E).
    let action = ModelAction::new(space)?;
    let dim = space.dim();
    let mut h_cols: DMatrix<C<T>> = DMatrix::zeros(rows.len(), columns.len());
    let mut unit = vec![C::new(T::zero(), T::zero()); dim];
    let mut image = vec![C::new(T::zero(), T::zero()); dim];
    let mut scratch = vec![C::new(T::zero(), T::zero()); dim];
    for (cpos, &cidx) in columns.iter().enumerate() {
        unit[cidx] = C::new(T::one(), T::zero());
        action.apply(params, &unit, &mut image, &mut scratch);
        unit[cidx] = C::new(T::zero(), T::zero());
        for (k, v) in image.iter().enumerate() {
            if v.norm_sqr() != T::zero() {
                match row_pos.get(&k) {
                    Some(&rpos) => h_cols[(rpos, cpos)] = *v,
                    None => {
                        return Err(Error::Numerical(
                            "Hamiltonian leaks outside the two-photon row space".into(),
                        ))
                    }
                }
            }
        }
    }

    let mut findings = Vec::new();
    for &e in &energies {
        let mut block = h_cols.clone();
        for (cpos, &cidx) in columns.iter().enumerate() {
            let rpos = row_pos[&cidx];
            block[(rpos, cpos)] -= C::new(e, T::zero());
        }
        let svd = block.svd(false, true);
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let smax = svd.singular_values.iter().cloned().fold(T::zero(), |a, b| a.max(b));
        let tol = T::of(1e-10) * (T::one() + smax);
        let mut certs = Vec::new();
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s < tol {
                let mut amps = DVector::zeros(dim);
                for (cpos, &cidx) in columns.iter().enumerate() {
                    amps[cidx] = v_t[(k, cpos)].conj();
                }
                let cert = certify(space, params, amps, e)?.require(T::of(1e-8))?;
                certs.push(cert);
            }
        }
        if !certs.is_empty() {
            findings.push(NullspaceFinding {
                energy: e,
                certificates: certs,
            });
        }
    }
    Ok(findings)
}
