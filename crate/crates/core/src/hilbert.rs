//! Composite Hilbert space of N qubits and M truncated bosonic modes.
//!
//! Basis ordering: qubit factors first, then mode factors, each row-major.
//! Qubit 0 is the slowest digit; within one qubit the first basis state is
//! |↑⟩ (so σz = diag(+1, −1)). Mode digits run over photon numbers
//! 0..=cutoff, mode 0 slower than mode 1. The flattened index is
//!
//! `index = q_index · (cutoff+1)^M + n_index`,
//!
//! with `q_index = Σ_j bit_j · 2^(N−1−j)` (bit 0 for ↑, 1 for ↓) and
//! `n_index = Σ_i n_i · (cutoff+1)^(M−1−i)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::num::{sqrt_usize, ComplexMod, Real, C};

/// Default ceiling on the total Hilbert-space dimension.
pub const DEFAULT_DIM_LIMIT: usize = 1 << 20;

/// Ceiling on dimensions for which dense operators may be materialized.
pub const DENSE_DIM_LIMIT: usize = 8192;

/// Tolerance used for Hermiticity detection and state-norm validation,
/// widened for scalars whose epsilon is coarser than f64's.
pub fn strict_tol<T: Real>() -> T {
    let floor = T::of(1e-12);
    let eps_based = T::default_epsilon() * T::of(32.0);
    if eps_based > floor {
        eps_based
    } else {
        floor
    }
}

/// Shape of a composite space: qubit count, mode count, per-mode Fock cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpaceSpec {
    pub n_qubits: usize,
    pub n_modes: usize,
    pub cutoff: usize,
}

impl SpaceSpec {
    /// Local dimension of one mode factor (cutoff + 1).
    pub fn fock_dim(&self) -> usize {
        self.cutoff + 1
    }

    /// Dimension of the qubit register, 2^N.
    pub fn qubit_dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// Dimension of the mode register, (cutoff+1)^M.
    pub fn mode_dim(&self) -> usize {
        self.fock_dim().pow(self.n_modes as u32)
    }

    /// Total dimension 2^N (cutoff+1)^M.
    pub fn dim(&self) -> usize {
        self.qubit_dim() * self.mode_dim()
    }

    /// Stride of qubit `j` in the flattened index (qubit 0 slowest).
    pub fn qubit_stride(&self, j: usize) -> usize {
        (1 << (self.n_qubits - 1 - j)) * self.mode_dim()
    }

    /// Stride of mode `i` in the flattened index (mode 0 slowest among modes).
    pub fn mode_stride(&self, i: usize) -> usize {
        self.fock_dim().pow((self.n_modes - 1 - i) as u32)
    }

    /// Flattened index of the product basis state with the given qubit bits
    /// (0 = ↑, 1 = ↓) and photon numbers.
    pub fn index_of(&self, qubit_bits: &[u8], photons: &[usize]) -> Result<usize> {
        if qubit_bits.len() != self.n_qubits {
            return Err(Error::Shape(format!(
                "expected {} qubit labels, got {}",
                self.n_qubits,
                qubit_bits.len()
            )));
        }
        if photons.len() != self.n_modes {
            return Err(Error::Shape(format!(
                "expected {} photon numbers, got {}",
                self.n_modes,
                photons.len()
            )));
        }
        let mut idx = 0usize;
        for (j, &b) in qubit_bits.iter().enumerate() {
            if b > 1 {
                return Err(Error::Shape(format!("qubit label must be 0 or 1, got {b}")));
            }
            idx += (b as usize) * self.qubit_stride(j);
        }
        for (i, &n) in photons.iter().enumerate() {
            if n > self.cutoff {
                return Err(Error::Index {
                    what: "photon number",
                    index: n,
                    len: self.cutoff + 1,
                });
            }
            idx += n * self.mode_stride(i);
        }
        Ok(idx)
    }

    /// Inverse of [`index_of`](Self::index_of): qubit bits and photon numbers.
    pub fn decode(&self, index: usize) -> (Vec<u8>, Vec<usize>) {
        let mut qubits = vec![0u8; self.n_qubits];
        let mut photons = vec![0usize; self.n_modes];
        let mut rest = index;
        for j in 0..self.n_qubits {
            let s = self.qubit_stride(j);
            qubits[j] = (rest / s) as u8;
            rest %= s;
        }
        for i in 0..self.n_modes {
            let s = self.mode_stride(i);
            photons[i] = rest / s;
            rest %= s;
        }
        (qubits, photons)
    }

    /// Total photon number of a basis state.
    pub fn total_photons(&self, index: usize) -> usize {
        let mode_part = index % self.mode_dim();
        let mut rest = mode_part;
        let mut total = 0;
        for i in 0..self.n_modes {
            let s = self.mode_stride(i);
            total += rest / s;
            rest %= s;
        }
        total
    }

    /// Parity sign (±1) of a basis state: (−1)^(total photons) · Π_j σz sign.
    pub fn parity_sign(&self, index: usize) -> i8 {
        let q_part = index / self.mode_dim();
        let down_count = (q_part as u32).count_ones() as usize;
        let flips = self.total_photons(index) + down_count;
        if flips % 2 == 0 {
            1
        } else {
            -1
        }
    }
}

/// Validate and build a space under the default dimension limit.
pub fn build_space(n_qubits: usize, n_modes: usize, cutoff: usize) -> Result<SpaceSpec> {
    build_space_with_limit(n_qubits, n_modes, cutoff, DEFAULT_DIM_LIMIT)
}

/// Validate and build a space under an explicit dimension limit.
pub fn build_space_with_limit(
    n_qubits: usize,
    n_modes: usize,
    cutoff: usize,
    limit: usize,
) -> Result<SpaceSpec> {
    if n_qubits == 0 {
        return Err(Error::Condition("at least one qubit is required".into()));
    }
    if n_modes == 0 {
        return Err(Error::Condition("at least one mode is required".into()));
    }
    if cutoff == 0 {
        return Err(Error::Condition("the Fock cutoff must be at least 1".into()));
    }
    let spec = SpaceSpec {
        n_qubits,
        n_modes,
        cutoff,
    };
    // Overflow-safe dimension estimate before trusting `dim()`.
    let mut dim = 1usize << n_qubits;
    for _ in 0..n_modes {
        dim = dim
            .checked_mul(cutoff + 1)
            .ok_or(Error::Capacity {
                what: "Hilbert space",
                dim: usize::MAX,
                limit,
            })?;
        if dim > limit {
            return Err(Error::Capacity {
                what: "Hilbert space",
                dim,
                limit,
            });
        }
    }
    Ok(spec)
}

/// Dense operator on a composite space with a cached Hermiticity flag.
#[derive(Clone, Debug)]
pub struct Operator<T: Real> {
    space: SpaceSpec,
    matrix: DMatrix<C<T>>,
    hermitian: bool,
}

impl<T: Real> Operator<T> {
    /// Wrap a dense matrix, validating its shape against the space and
    /// detecting Hermiticity (‖A − A†‖_max below [`strict_tol`]).
    pub fn from_dense(space: SpaceSpec, matrix: DMatrix<C<T>>) -> Result<Self> {
        let dim = space.dim();
        if dim > DENSE_DIM_LIMIT {
            return Err(Error::Capacity {
                what: "dense operator",
                dim,
                limit: DENSE_DIM_LIMIT,
            });
        }
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::Shape(format!(
                "operator is {}x{}, space dimension is {}",
                matrix.nrows(),
                matrix.ncols(),
                dim
            )));
        }
        let tol = strict_tol::<T>();
        let mut max_dev = T::zero();
        for r in 0..dim {
            for c in r..dim {
                let dev = (matrix[(r, c)] - matrix[(c, r)].conj()).cmod();
                if dev > max_dev {
                    max_dev = dev;
                }
            }
        }
        Ok(Self {
            space,
            matrix,
            hermitian: max_dev <= tol,
        })
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    pub fn matrix(&self) -> &DMatrix<C<T>> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C<T>> {
        self.matrix
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Adjoint (conjugate transpose).
    pub fn adjoint(&self) -> Self {
        Self {
            space: self.space,
            matrix: self.matrix.adjoint(),
            hermitian: self.hermitian,
        }
    }

    /// Apply to a pure state, returning the (unnormalized) image vector.
    pub fn apply_vec(&self, state: &PureState<T>) -> Result<DVector<C<T>>> {
        if state.space() != self.space {
            return Err(Error::Shape("state and operator spaces differ".into()));
        }
        Ok(&self.matrix * state.amplitudes())
    }

    /// Expectation value ⟨ψ|A|ψ⟩ (complex in general).
    pub fn expectation(&self, state: &PureState<T>) -> Result<C<T>> {
        let image = self.apply_vec(state)?;
        Ok(state.amplitudes().dotc(&image))
    }
}

/// Normalized pure state on a composite space.
#[derive(Clone, Debug)]
pub struct PureState<T: Real> {
    space: SpaceSpec,
    amplitudes: DVector<C<T>>,
}

impl<T: Real> PureState<T> {
    /// Wrap an amplitude vector that is already normalized (within
    /// [`strict_tol`] of unit norm).
    pub fn new(space: SpaceSpec, amplitudes: DVector<C<T>>) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::Shape(format!(
                "state has {} amplitudes, space dimension is {}",
                amplitudes.len(),
                space.dim()
            )));
        }
        let norm = amplitudes.norm();
        if (norm - T::one()).abs() > strict_tol::<T>() * T::of(1e3) {
            return Err(Error::Numerical(format!(
                "state norm {} is not 1 within tolerance",
                norm.as_f64()
            )));
        }
        Ok(Self { space, amplitudes })
    }

    /// Normalize an arbitrary nonzero amplitude vector.
    pub fn normalized(space: SpaceSpec, mut amplitudes: DVector<C<T>>) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::Shape(format!(
                "state has {} amplitudes, space dimension is {}",
                amplitudes.len(),
                space.dim()
            )));
        }
        let norm = amplitudes.norm();
        if norm <= T::zero() || !norm.finite() {
            return Err(Error::Singular("cannot normalize a zero state".into()));
        }
        amplitudes /= C::new(norm, T::zero());
        Ok(Self { space, amplitudes })
    }

    /// Product basis state with the given qubit bits (0 = ↑) and photons.
    pub fn basis_state(space: SpaceSpec, qubit_bits: &[u8], photons: &[usize]) -> Result<Self> {
        let idx = space.index_of(qubit_bits, photons)?;
        let mut amplitudes = DVector::zeros(space.dim());
        amplitudes[idx] = C::new(T::one(), T::zero());
        Ok(Self { space, amplitudes })
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    pub fn amplitudes(&self) -> &DVector<C<T>> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> DVector<C<T>> {
        self.amplitudes
    }

    pub fn norm(&self) -> T {
        self.amplitudes.norm()
    }

    /// Inner product ⟨self|other⟩.
    pub fn overlap(&self, other: &Self) -> Result<C<T>> {
        if self.space != other.space {
            return Err(Error::Shape("states live on different spaces".into()));
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// Fidelity |⟨self|other⟩|².
    pub fn fidelity(&self, other: &Self) -> Result<T> {
        let ov = self.overlap(other)?;
        Ok(ov.norm_sqr())
    }

    /// Fix the global phase so the largest-magnitude amplitude is real
    /// and positive.
    pub fn fix_global_phase(&mut self) {
        let mut best = 0usize;
        let mut best_mag = T::zero();
        for (k, a) in self.amplitudes.iter().enumerate() {
            let m = a.norm_sqr();
            if m > best_mag {
                best_mag = m;
                best = k;
            }
        }
        let pivot = self.amplitudes[best];
        let mag = pivot.cmod();
        if mag > T::zero() {
            let phase = pivot / C::new(mag, T::zero());
            let correction = phase.conj();
            for a in self.amplitudes.iter_mut() {
                *a *= correction;
            }
        }
    }
}

/// Local (single-factor) matrices used to assemble composite operators.
pub(crate) fn local_annihilator<T: Real>(fock_dim: usize) -> DMatrix<C<T>> {
    let mut m = DMatrix::zeros(fock_dim, fock_dim);
    for n in 1..fock_dim {
        m[(n - 1, n)] = C::new(sqrt_usize::<T>(n), T::zero());
    }
    m
}

pub(crate) fn local_number<T: Real>(fock_dim: usize) -> DVector<C<T>> {
    DVector::from_fn(fock_dim, |n, _| C::new(T::of(n as f64), T::zero()))
}

pub(crate) fn local_position<T: Real>(fock_dim: usize) -> DMatrix<C<T>> {
    let a = local_annihilator::<T>(fock_dim);
    let at = a.adjoint();
    a + at
}

/// Axis label for single-qubit Pauli operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

pub(crate) fn local_pauli<T: Real>(axis: PauliAxis) -> DMatrix<C<T>> {
    let zero = C::new(T::zero(), T::zero());
    let one = C::new(T::one(), T::zero());
    let i = C::new(T::zero(), T::one());
    match axis {
        // Basis order (↑, ↓): σx swaps, σz = diag(+1, −1).
        PauliAxis::X => DMatrix::from_row_slice(2, 2, &[zero, one, one, zero]),
        PauliAxis::Y => DMatrix::from_row_slice(2, 2, &[zero, -i, i, zero]),
        PauliAxis::Z => DMatrix::from_row_slice(2, 2, &[one, zero, zero, -one]),
    }
}

/// Embed a local matrix acting on one tensor factor with the given stride.
pub(crate) fn embed_local<T: Real>(
    dim: usize,
    stride: usize,
    local: &DMatrix<C<T>>,
) -> DMatrix<C<T>> {
    let d = local.nrows();
    let block = d * stride;
    let mut out = DMatrix::zeros(dim, dim);
    for base in (0..dim).step_by(block) {
        for off in 0..stride {
            for k in 0..d {
                for l in 0..d {
                    let v = local[(k, l)];
                    if v != C::new(T::zero(), T::zero()) {
                        out[(base + off + k * stride, base + off + l * stride)] = v;
                    }
                }
            }
        }
    }
    out
}

fn check_mode<T: Real>(space: SpaceSpec, mode: usize) -> Result<()> {
    let _ = std::marker::PhantomData::<T>;
    if mode >= space.n_modes {
        return Err(Error::Index {
            what: "mode",
            index: mode,
            len: space.n_modes,
        });
    }
    Ok(())
}

fn check_qubit(space: SpaceSpec, qubit: usize) -> Result<()> {
    if qubit >= space.n_qubits {
        return Err(Error::Index {
            what: "qubit",
            index: qubit,
            len: space.n_qubits,
        });
    }
    Ok(())
}

fn dense_guard(space: SpaceSpec) -> Result<()> {
    if space.dim() > DENSE_DIM_LIMIT {
        return Err(Error::Capacity {
            what: "dense operator",
            dim: space.dim(),
            limit: DENSE_DIM_LIMIT,
        });
    }
    Ok(())
}

/// Annihilation operator a_i for one mode.
pub fn annihilator<T: Real>(space: SpaceSpec, mode: usize) -> Result<Operator<T>> {
    check_mode::<T>(space, mode)?;
    dense_guard(space)?;
    let local = local_annihilator::<T>(space.fock_dim());
    let matrix = embed_local(space.dim(), space.mode_stride(mode), &local);
    Operator::from_dense(space, matrix)
}

/// Creation operator a_i† for one mode.
pub fn creator<T: Real>(space: SpaceSpec, mode: usize) -> Result<Operator<T>> {
    check_mode::<T>(space, mode)?;
    dense_guard(space)?;
    let local = local_annihilator::<T>(space.fock_dim()).adjoint();
    let matrix = embed_local(space.dim(), space.mode_stride(mode), &local);
    Operator::from_dense(space, matrix)
}

/// Number operator a_i†a_i for one mode.
pub fn number_operator<T: Real>(space: SpaceSpec, mode: usize) -> Result<Operator<T>> {
    check_mode::<T>(space, mode)?;
    dense_guard(space)?;
    let local = DMatrix::from_diagonal(&local_number::<T>(space.fock_dim()));
    let matrix = embed_local(space.dim(), space.mode_stride(mode), &local);
    Operator::from_dense(space, matrix)
}

/// Pauli operator on one qubit.
pub fn pauli<T: Real>(space: SpaceSpec, qubit: usize, axis: PauliAxis) -> Result<Operator<T>> {
    check_qubit(space, qubit)?;
    dense_guard(space)?;
    let local = local_pauli::<T>(axis);
    let matrix = embed_local(space.dim(), space.qubit_stride(qubit), &local);
    Operator::from_dense(space, matrix)
}

/// Qubit lowering operator σ⁻ = |↓⟩⟨↑| on one qubit.
pub fn qubit_lowering<T: Real>(space: SpaceSpec, qubit: usize) -> Result<Operator<T>> {
    check_qubit(space, qubit)?;
    dense_guard(space)?;
    let zero = C::new(T::zero(), T::zero());
    let one = C::new(T::one(), T::zero());
    // Basis order (↑, ↓): σ⁻|↑⟩ = |↓⟩ puts the 1 in row ↓, column ↑.
    let local = DMatrix::from_row_slice(2, 2, &[zero, zero, one, zero]);
    let matrix = embed_local(space.dim(), space.qubit_stride(qubit), &local);
    Operator::from_dense(space, matrix)
}

/// Global parity operator P = (−1)^(Σ n_i) Π_j σ_jz (diagonal, ±1).
pub fn parity_operator<T: Real>(space: SpaceSpec) -> Result<Operator<T>> {
    dense_guard(space)?;
    let dim = space.dim();
    let mut matrix = DMatrix::zeros(dim, dim);
    for idx in 0..dim {
        let s = space.parity_sign(idx);
        matrix[(idx, idx)] = C::new(T::of(s as f64), T::zero());
    }
    Operator::from_dense(space, matrix)
}

/// Basis indices of the even (+1) and odd (−1) parity sectors.
pub fn parity_indices(space: SpaceSpec) -> (Vec<usize>, Vec<usize>) {
    let mut even = Vec::new();
    let mut odd = Vec::new();
    for idx in 0..space.dim() {
        if space.parity_sign(idx) == 1 {
            even.push(idx);
        } else {
            odd.push(idx);
        }
    }
    (even, odd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions_match_hand_counts() {
        // 1 qubit, 1 mode, cutoff 3 -> 2 * 4 = 8.
        assert_eq!(build_space(1, 1, 3).unwrap().dim(), 8);
        // 2 qubits, 2 modes, cutoff 3 -> 4 * 16 = 64.
        assert_eq!(build_space(2, 2, 3).unwrap().dim(), 64);
        // 3 qubits, 3 modes, cutoff 5 -> 8 * 216 = 1728.
        assert_eq!(build_space(3, 3, 5).unwrap().dim(), 1728);
    }

    #[test]
    fn capacity_guard_rejects_oversized_spaces() {
        let err = build_space(10, 4, 31).unwrap_err();
        match err {
            Error::Capacity { what, .. } => assert_eq!(what, "Hilbert space"),
            other => panic!("expected capacity error, got {other}"),
        }
        // The same shape passes with a raised limit.
        assert!(build_space_with_limit(10, 4, 31, usize::MAX).is_ok());
    }

    #[test]
    fn index_roundtrip_and_ordering() {
        let space = build_space(2, 2, 3).unwrap();
        // Qubit 0 is the slowest digit, mode 1 the fastest.
        let idx = space.index_of(&[1, 0], &[2, 3]).unwrap();
        assert_eq!(idx, 1 * 2 * 16 + 0 * 16 + 2 * 4 + 3);
        let (q, n) = space.decode(idx);
        assert_eq!(q, vec![1, 0]);
        assert_eq!(n, vec![2, 3]);
        // All-up vacuum is index 0.
        assert_eq!(space.index_of(&[0, 0], &[0, 0]).unwrap(), 0);
    }

    #[test]
    fn commutator_of_a_and_adjoint_is_identity_below_cutoff() {
        let space = build_space(1, 2, 7).unwrap();
        for mode in 0..2 {
            let a = annihilator::<f64>(space, mode).unwrap();
            let at = creator::<f64>(space, mode).unwrap();
            let comm = a.matrix() * at.matrix() - at.matrix() * a.matrix();
            // [a, a†] = 1 on every basis state that stays below the cutoff.
            for idx in 0..space.dim() {
                let (_, photons) = space.decode(idx);
                if photons[mode] < space.cutoff {
                    let dev = (comm[(idx, idx)] - C::new(1.0, 0.0)).norm();
                    assert!(dev < 1e-12, "diagonal deviates by {dev}");
                }
            }
        }
    }

    #[test]
    fn pauli_algebra_on_chosen_qubit() {
        let space = build_space(2, 1, 2).unwrap();
        for qubit in 0..2 {
            let x = pauli::<f64>(space, qubit, PauliAxis::X).unwrap();
            let y = pauli::<f64>(space, qubit, PauliAxis::Y).unwrap();
            let z = pauli::<f64>(space, qubit, PauliAxis::Z).unwrap();
            // Anticommutation {σx, σz} = 0 and σx σy = i σz.
            let anti = x.matrix() * z.matrix() + z.matrix() * x.matrix();
            assert!(anti.norm() < 1e-14);
            let xy = x.matrix() * y.matrix();
            let dev = (&xy - z.matrix().map(|v| v * C::new(0.0, 1.0))).norm();
            assert!(dev < 1e-14);
            // σz on |↑⟩ (index 0) is +1.
            assert_eq!(z.matrix()[(0, 0)], C::new(1.0, 0.0));
        }
    }

    #[test]
    fn parity_operator_squares_to_identity_and_labels_flips() {
        let space = build_space(2, 1, 3).unwrap();
        let p = parity_operator::<f64>(space).unwrap();
        let sq = p.matrix() * p.matrix();
        assert!((&sq - DMatrix::<C<f64>>::identity(space.dim(), space.dim())).norm() < 1e-14);
        // |0, ↑↑⟩ is even; one photon or one flipped qubit is odd.
        assert_eq!(space.parity_sign(space.index_of(&[0, 0], &[0]).unwrap()), 1);
        assert_eq!(space.parity_sign(space.index_of(&[0, 1], &[0]).unwrap()), -1);
        assert_eq!(space.parity_sign(space.index_of(&[0, 0], &[1]).unwrap()), -1);
        assert_eq!(space.parity_sign(space.index_of(&[1, 1], &[2]).unwrap()), 1);
        let (even, odd) = parity_indices(space);
        assert_eq!(even.len() + odd.len(), space.dim());
        assert_eq!(even.len(), odd.len());
    }

    #[test]
    fn hermiticity_flag_detects_both_cases() {
        let space = build_space(1, 1, 2).unwrap();
        let n = number_operator::<f64>(space, 0).unwrap();
        assert!(n.is_hermitian());
        let a = annihilator::<f64>(space, 0).unwrap();
        assert!(!a.is_hermitian());
    }

    #[test]
    fn state_normalization_and_phase_fixing() {
        let space = build_space(1, 1, 1).unwrap();
        let v = DVector::from_vec(vec![
            C::new(0.0, 0.0),
            C::new(0.0, -2.0),
            C::new(1.0, 0.0),
            C::new(0.0, 0.0),
        ]);
        let mut s = PureState::<f64>::normalized(space, v).unwrap();
        assert!((s.norm() - 1.0).abs() < 1e-15);
        s.fix_global_phase();
        // Largest amplitude becomes real positive.
        let a = s.amplitudes()[1];
        assert!(a.im.abs() < 1e-15 && a.re > 0.0);
        // Unit-norm constructor rejects unnormalized input.
        let bad = DVector::from_vec(vec![
            C::new(2.0, 0.0),
            C::new(0.0, 0.0),
            C::new(0.0, 0.0),
            C::new(0.0, 0.0),
        ]);
        assert!(PureState::new(space, bad).is_err());
    }
}
