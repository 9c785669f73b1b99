//! Multiqubit, multimode quantum Rabi and Rabi–Stark Hamiltonians.
//!
//! H = Σ_j Δ_j σ_jz + Σ_i ω_i a_i†a_i + Σ_ij g_ij σ_jx (a_i + a_i†)
//!     + Σ_ij U_ij σ_jz a_i†a_i,
//!
//! with mode index i (1..M) and qubit index j (1..N); U = 0 recovers the
//! plain multiqubit multimode Rabi model. The Hamiltonian is kept as a list
//! of product terms keyed by the parameter that scales each term, so the same
//! structure serves matrix-free application, dense materialization, and
//! time-derivative application (same terms, slope coefficients).

use nalgebra::{DMatrix, DVector};

use crate::action::{LocalMat, ProductTerm, Site};
use crate::error::{Error, Result};
use crate::hilbert::{
    local_annihilator, local_number, local_pauli, local_position, Operator, PauliAxis, SpaceSpec,
};
use crate::num::{Real, C};

/// Model parameters: qubit splittings Δ_j, mode frequencies ω_i, couplings
/// g[(i, j)] and Stark shifts U[(i, j)] indexed (mode, qubit).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Real> {
    pub delta: Vec<T>,
    pub omega: Vec<T>,
    pub g: DMatrix<T>,
    pub u: DMatrix<T>,
}

impl<T: Real> ModelParams<T> {
    /// Rabi–Stark parameter set (full model).
    pub fn stark(delta: Vec<T>, omega: Vec<T>, g: DMatrix<T>, u: DMatrix<T>) -> Self {
        Self { delta, omega, g, u }
    }

    /// Plain Rabi parameter set (U = 0).
    pub fn rabi(delta: Vec<T>, omega: Vec<T>, g: DMatrix<T>) -> Self {
        let u = DMatrix::zeros(g.nrows(), g.ncols());
        Self { delta, omega, g, u }
    }

    pub fn n_qubits(&self) -> usize {
        self.delta.len()
    }

    pub fn n_modes(&self) -> usize {
        self.omega.len()
    }

    /// Check shapes against a space and basic sanity (ω_i > 0, finite).
    pub fn validate(&self, space: SpaceSpec) -> Result<()> {
        if self.delta.len() != space.n_qubits {
            return Err(Error::Shape(format!(
                "{} qubit splittings for {} qubits",
                self.delta.len(),
                space.n_qubits
            )));
        }
        if self.omega.len() != space.n_modes {
            return Err(Error::Shape(format!(
                "{} mode frequencies for {} modes",
                self.omega.len(),
                space.n_modes
            )));
        }
        for m in [&self.g, &self.u] {
            if m.nrows() != space.n_modes || m.ncols() != space.n_qubits {
                return Err(Error::Shape(format!(
                    "coupling matrix is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    space.n_modes,
                    space.n_qubits
                )));
            }
        }
        for &w in &self.omega {
            if !(w > T::zero()) || !w.finite() {
                return Err(Error::Condition(
                    "mode frequencies must be positive and finite".into(),
                ));
            }
        }
        let finite = self.delta.iter().all(|v| v.finite())
            && self.g.iter().all(|v| v.finite())
            && self.u.iter().all(|v| v.finite());
        if !finite {
            return Err(Error::Condition("parameters must be finite".into()));
        }
        Ok(())
    }

    /// True when every Stark shift vanishes.
    pub fn is_rabi(&self) -> bool {
        self.u.iter().all(|v| *v == T::zero())
    }

    /// Zero-valued parameter set with the same shape (used for slopes).
    pub fn zeros_like(&self) -> Self {
        Self {
            delta: vec![T::zero(); self.delta.len()],
            omega: vec![T::zero(); self.omega.len()],
            g: DMatrix::zeros(self.g.nrows(), self.g.ncols()),
            u: DMatrix::zeros(self.u.nrows(), self.u.ncols()),
        }
    }
}

/// Which parameter scales a Hamiltonian term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKey {
    Delta(usize),
    Omega(usize),
    G { mode: usize, qubit: usize },
    U { mode: usize, qubit: usize },
}

impl ParamKey {
    pub fn value<T: Real>(self, p: &ModelParams<T>) -> T {
        match self {
            ParamKey::Delta(j) => p.delta[j],
            ParamKey::Omega(i) => p.omega[i],
            ParamKey::G { mode, qubit } => p.g[(mode, qubit)],
            ParamKey::U { mode, qubit } => p.u[(mode, qubit)],
        }
    }
}

/// Parameter-keyed term list for H(params); one structure serves matrix-free
/// application, dense materialization, and derivative (slope) application.
#[derive(Clone, Debug)]
pub struct ModelAction<T: Real> {
    space: SpaceSpec,
    terms: Vec<(ParamKey, ProductTerm<T>)>,
}

impl<T: Real> ModelAction<T> {
    pub fn new(space: SpaceSpec) -> Result<Self> {
        let fdim = space.fock_dim();
        let mut terms = Vec::new();
        let sz_diag = || {
            LocalMat::Diagonal(DVector::from_vec(vec![
                C::new(T::one(), T::zero()),
                C::new(-T::one(), T::zero()),
            ]))
        };
        for j in 0..space.n_qubits {
            terms.push((
                ParamKey::Delta(j),
                ProductTerm::new(space, vec![(Site::Qubit(j), sz_diag())])?,
            ));
        }
        for i in 0..space.n_modes {
            terms.push((
                ParamKey::Omega(i),
                ProductTerm::new(
                    space,
                    vec![(Site::Mode(i), LocalMat::Diagonal(local_number::<T>(fdim)))],
                )?,
            ));
        }
        for i in 0..space.n_modes {
            for j in 0..space.n_qubits {
                terms.push((
                    ParamKey::G { mode: i, qubit: j },
                    ProductTerm::new(
                        space,
                        vec![
                            (Site::Qubit(j), LocalMat::Dense(local_pauli::<T>(PauliAxis::X))),
                            (Site::Mode(i), LocalMat::Dense(local_position::<T>(fdim))),
                        ],
                    )?,
                ));
                terms.push((
                    ParamKey::U { mode: i, qubit: j },
                    ProductTerm::new(
                        space,
                        vec![
                            (Site::Qubit(j), sz_diag()),
                            (Site::Mode(i), LocalMat::Diagonal(local_number::<T>(fdim))),
                        ],
                    )?,
                ));
            }
        }
        Ok(Self { space, terms })
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    pub fn terms(&self) -> &[(ParamKey, ProductTerm<T>)] {
        &self.terms
    }

    /// y = H(params) x, matrix-free.
    pub fn apply(&self, params: &ModelParams<T>, x: &[C<T>], y: &mut [C<T>], scratch: &mut [C<T>]) {
        for v in y.iter_mut() {
            *v = C::new(T::zero(), T::zero());
        }
        self.apply_add(params, x, y, scratch);
    }

    /// y += H(params) x. `params` may also hold slope values, in which case
    /// this applies dH/dt.
    pub fn apply_add(
        &self,
        params: &ModelParams<T>,
        x: &[C<T>],
        y: &mut [C<T>],
        scratch: &mut [C<T>],
    ) {
        for (key, term) in &self.terms {
            let c = key.value(params);
            if c != T::zero() {
                term.apply_add(C::new(c, T::zero()), x, y, scratch);
            }
        }
    }

    /// Dense Hamiltonian (guarded by the dense capacity limit).
    pub fn to_dense(&self, params: &ModelParams<T>) -> Result<Operator<T>> {
        let dim = self.space.dim();
        if dim > crate::hilbert::DENSE_DIM_LIMIT {
            return Err(Error::Capacity {
                what: "dense operator",
                dim,
                limit: crate::hilbert::DENSE_DIM_LIMIT,
            });
        }
        let mut out = DMatrix::zeros(dim, dim);
        for (key, term) in &self.terms {
            let c = key.value(params);
            if c != T::zero() {
                term.add_to_dense(C::new(c, T::zero()), &mut out);
            }
        }
        Operator::from_dense(self.space, out)
    }

    /// Expectation ⟨x|H(params)|x⟩ (real part; H is Hermitian by shape).
    pub fn expectation(
        &self,
        params: &ModelParams<T>,
        x: &[C<T>],
        work: &mut [C<T>],
        scratch: &mut [C<T>],
    ) -> T {
        self.apply(params, x, work, scratch);
        let mut acc = C::new(T::zero(), T::zero());
        for (a, b) in x.iter().zip(work.iter()) {
            acc += a.conj() * *b;
        }
        acc.re
    }
}

/// Multiqubit multimode quantum Rabi Hamiltonian (requires U = 0).
pub fn hamiltonian_mqrm<T: Real>(space: SpaceSpec, params: &ModelParams<T>) -> Result<Operator<T>> {
    params.validate(space)?;
    if !params.is_rabi() {
        return Err(Error::Condition(
            "the Rabi model requires all Stark shifts U to vanish".into(),
        ));
    }
    ModelAction::new(space)?.to_dense(params)
}

/// Multiqubit multimode Rabi–Stark Hamiltonian.
pub fn hamiltonian_rabi_stark<T: Real>(
    space: SpaceSpec,
    params: &ModelParams<T>,
) -> Result<Operator<T>> {
    params.validate(space)?;
    ModelAction::new(space)?.to_dense(params)
}

/// Orthogonal mode transformation b = R a built from a coupling direction:
/// the first row is g_i / ‖g‖, the remaining rows complete it so that modes
/// b_2..b_M decouple when all mode frequencies are equal and the coupling
/// columns are proportional.
#[derive(Clone, Debug)]
pub struct BogoliubovFrame<T: Real> {
    coeffs: DMatrix<T>,
}

impl<T: Real> BogoliubovFrame<T> {
    pub fn coeffs(&self) -> &DMatrix<T> {
        &self.coeffs
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.nrows()
    }

    /// Row `r` as a vector (b_r = Σ_i coeffs[(r, i)] a_i).
    pub fn row(&self, r: usize) -> DVector<T> {
        self.coeffs.row(r).transpose()
    }
}

/// Build the frame from model parameters. The coupling columns must share a
/// common direction (each column proportional to the others); when every
/// coupling vanishes the frame falls back to the identity.
pub fn bogoliubov_frame<T: Real>(params: &ModelParams<T>) -> Result<BogoliubovFrame<T>> {
    let m = params.n_modes();
    // Direction: the largest-norm column of g.
    let mut dir: Option<DVector<T>> = None;
    let mut best = T::zero();
    for j in 0..params.n_qubits() {
        let col = params.g.column(j).into_owned();
        let n = col.norm();
        if n > best {
            best = n;
            dir = Some(col);
        }
    }
    let tol = crate::hilbert::strict_tol::<T>();
    if best <= tol {
        return bogoliubov_frame_from_direction(&DVector::zeros(m));
    }
    let d = dir.expect("a nonzero column exists when best > 0");
    // Every column must be parallel to the chosen direction.
    let unit = &d / best;
    for j in 0..params.n_qubits() {
        let col = params.g.column(j).into_owned();
        let proj = unit.dot(&col);
        let residual = (&col - &unit * proj).norm();
        if residual > tol * T::of(1e2) * (T::one() + best) {
            return Err(Error::Condition(
                "coupling columns are not proportional; no common mode frame exists".into(),
            ));
        }
    }
    bogoliubov_frame_from_direction(&d)
}

/// Build the frame from an explicit coupling direction g (length M). A zero
/// direction yields the identity frame.
pub fn bogoliubov_frame_from_direction<T: Real>(g: &DVector<T>) -> Result<BogoliubovFrame<T>> {
    let m = g.len();
    if m == 0 {
        return Err(Error::Shape("the coupling direction is empty".into()));
    }
    let total = g.norm();
    let mut coeffs = DMatrix::<T>::zeros(m, m);
    if total == T::zero() {
        coeffs.fill_with_identity();
        return Ok(BogoliubovFrame { coeffs });
    }
    for i in 0..m {
        coeffs[(0, i)] = g[i] / total;
    }
    // Row r (r >= 1): combine a_r with the preceding modes.
    //   b_r ∝ Σ_{i<r} g_i g_r a_i − (Σ_{i<r} g_i²) a_r,
    // normalized by sqrt((Σ_{i<=r} g_i²)(Σ_{i<r} g_i²)); degenerate rows are
    // completed by Gram–Schmidt against the rows built so far.
    let mut prefix = g[0] * g[0];
    for r in 1..m {
        let with_r = prefix + g[r] * g[r];
        let den = (with_r * prefix).sqrt();
        let mut row = DVector::<T>::zeros(m);
        if den > T::default_epsilon() * T::of(16.0) * (T::one() + total * total) {
            for i in 0..r {
                row[i] = g[i] * g[r] / den;
            }
            row[r] = -prefix / den;
        } else {
            // Gram–Schmidt against the rows built so far, trying the bare
            // mode axes e_r, e_0, e_1, ... until one survives projection.
            let mut done = false;
            for seed in std::iter::once(r).chain(0..m) {
                row.fill(T::zero());
                row[seed] = T::one();
                for prev in 0..r {
                    let mut dot = T::zero();
                    for i in 0..m {
                        dot += coeffs[(prev, i)] * row[i];
                    }
                    for i in 0..m {
                        row[i] -= dot * coeffs[(prev, i)];
                    }
                }
                // The best basis seed keeps residual norm at least 1/sqrt(M).
                let n = row.norm();
                if n > T::of(0.1) {
                    row /= n;
                    done = true;
                    break;
                }
            }
            if !done {
                return Err(Error::Numerical("mode frame completion degenerated".into()));
            }
        }
        // Sign convention: first nonzero entry of each completion row >= 0.
        let lead = row.iter().find(|v| **v != T::zero()).copied();
        if let Some(l) = lead {
            if l < T::zero() {
                row = -row;
            }
        }
        for i in 0..m {
            coeffs[(r, i)] = row[i];
        }
        prefix = with_r;
    }
    // Orthogonality invariant.
    let gram = &coeffs * coeffs.transpose();
    let mut dev = T::zero();
    for r in 0..m {
        for c in 0..m {
            let want = if r == c { T::one() } else { T::zero() };
            let d = (gram[(r, c)] - want).abs();
            if d > dev {
                dev = d;
            }
        }
    }
    if dev > T::of(1e-12).max(T::default_epsilon() * T::of(1e3)) {
        return Err(Error::Numerical(format!(
            "mode frame is not orthogonal: deviation {}",
            dev.as_f64()
        )));
    }
    Ok(BogoliubovFrame { coeffs })
}

/// Term list for the transformed-mode number operator
/// n_{b_r} = b_r† b_r = Σ_{i,i'} c_ri c_ri' a_i† a_i'.
pub fn b_number_terms<T: Real>(
    space: SpaceSpec,
    frame: &BogoliubovFrame<T>,
    r: usize,
) -> Result<Vec<(C<T>, ProductTerm<T>)>> {
    if frame.n_modes() != space.n_modes {
        return Err(Error::Shape("frame and space mode counts differ".into()));
    }
    if r >= frame.n_modes() {
        return Err(Error::Index {
            what: "frame row",
            index: r,
            len: frame.n_modes(),
        });
    }
    let fdim = space.fock_dim();
    let a = local_annihilator::<T>(fdim);
    let at = a.adjoint();
    let mut terms = Vec::new();
    for i in 0..space.n_modes {
        let ci = frame.coeffs()[(r, i)];
        if ci == T::zero() {
            continue;
        }
        for ip in 0..space.n_modes {
            let cip = frame.coeffs()[(r, ip)];
            if cip == T::zero() {
                continue;
            }
            let coeff = C::new(ci * cip, T::zero());
            if i == ip {
                terms.push((
                    coeff,
                    ProductTerm::new(
                        space,
                        vec![(Site::Mode(i), LocalMat::Diagonal(local_number::<T>(fdim)))],
                    )?,
                ));
            } else {
                terms.push((
                    coeff,
                    ProductTerm::new(
                        space,
                        vec![
                            (Site::Mode(i), LocalMat::Dense(at.clone())),
                            (Site::Mode(ip), LocalMat::Dense(a.clone())),
                        ],
                    )?,
                ));
            }
        }
    }
    Ok(terms)
}

/// Dense transformed-mode number operator n_{b_r}.
pub fn b_number_operator<T: Real>(
    space: SpaceSpec,
    frame: &BogoliubovFrame<T>,
    r: usize,
) -> Result<Operator<T>> {
    let dim = space.dim();
    if dim > crate::hilbert::DENSE_DIM_LIMIT {
        return Err(Error::Capacity {
            what: "dense operator",
            dim,
            limit: crate::hilbert::DENSE_DIM_LIMIT,
        });
    }
    let terms = b_number_terms(space, frame, r)?;
    let mut out = DMatrix::zeros(dim, dim);
    for (coeff, term) in &terms {
        term.add_to_dense(*coeff, &mut out);
    }
    Operator::from_dense(space, out)
}

/// How a multimode level maps onto the collective single-mode spectrum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EquivalenceKind<T: Real> {
    /// No free-mode quanta: the level is a copy of a single-mode level.
    Primary { single_level: usize, deviation: T },
    /// `k` quanta in the free modes on top of a single-mode level:
    /// E ≈ E_single + kω.
    Lifted {
        k: usize,
        single_level: usize,
        deviation: T,
    },
}

/// One classified multimode level.
#[derive(Clone, Copy, Debug)]
pub struct EquivalenceEntry<T: Real> {
    pub level: usize,
    pub energy: T,
    /// Total free-mode occupation Σ_{r≥2} ⟨n_{b_r}⟩.
    pub nb_free: T,
    pub kind: EquivalenceKind<T>,
}

/// Classification of the low multimode spectrum against the single-mode
/// model it collapses to in the collective frame.
#[derive(Clone, Debug)]
pub struct EquivalenceReport<T: Real> {
    pub entries: Vec<EquivalenceEntry<T>>,
    pub n_primaries: usize,
    /// Worst |E_multi − E_single| over primaries.
    pub max_primary_deviation: T,
    /// Worst |E_multi − kω − E_single| over lifted levels.
    pub max_lifted_deviation: T,
}

/// Verify that the low spectrum of a multimode model is the single-mode
/// spectrum plus free-mode ladders. Requires equal mode frequencies,
/// mode-independent Stark columns matching the single-mode row, matching
/// splittings, and collective couplings g_single_j² = Σ_i g_ij².
///
/// The lowest `n_levels` multimode levels (in `sector`) are split by their
/// free-mode occupation: below one half they are matched in order, within
/// each parity label, to the single-mode levels of the same parity;
/// otherwise they carry k = round(Σ⟨n_b⟩) free quanta and are matched to the
/// nearest single-mode level of parity flipped k times at energy E − kω.
pub fn spectrum_equivalence_report<T: Real>(
    multi_space: SpaceSpec,
    multi_params: &ModelParams<T>,
    single_space: SpaceSpec,
    single_params: &ModelParams<T>,
    sector: crate::spectra::Sector,
    n_levels: usize,
) -> Result<EquivalenceReport<T>> {
    multi_params.validate(multi_space)?;
    single_params.validate(single_space)?;
    if single_space.n_modes != 1 {
        return Err(Error::Shape("the reference model must have one mode".into()));
    }
    if single_space.n_qubits != multi_space.n_qubits {
        return Err(Error::Shape("qubit counts differ".into()));
    }
    let n = multi_space.n_qubits;
    let m = multi_space.n_modes;
    let scale = {
        let mut s = T::one();
        for &w in &multi_params.omega {
            s = s.max(w.abs());
        }
        s
    };
    let tol = crate::hilbert::strict_tol::<T>() * T::of(1e3) * scale;
    let omega = single_params.omega[0];
    for i in 0..m {
        if (multi_params.omega[i] - omega).abs() > tol {
            return Err(Error::Condition(
                "all mode frequencies must match the reference frequency".into(),
            ));
        }
    }
    for j in 0..n {
        if (multi_params.delta[j] - single_params.delta[j]).abs() > tol {
            return Err(Error::Condition("qubit splittings differ".into()));
        }
        let mut gsq = T::zero();
        for i in 0..m {
            gsq += multi_params.g[(i, j)] * multi_params.g[(i, j)];
            if (multi_params.u[(i, j)] - single_params.u[(0, j)]).abs() > tol {
                return Err(Error::Condition(
                    "Stark columns must be mode-independent and match the reference".into(),
                ));
            }
        }
        let gs = single_params.g[(0, j)];
        if (gsq - gs * gs).abs() > tol * (T::one() + gs * gs) {
            return Err(Error::Condition(format!(
                "collective coupling mismatch on qubit {}: Σg² = {}, reference g² = {}",
                j + 1,
                gsq.as_f64(),
                (gs * gs).as_f64()
            )));
        }
    }

    let multi_action = ModelAction::new(multi_space)?;
    let eig_multi = crate::spectra::eigensystem(&multi_action.to_dense(multi_params)?, sector)?;
    let single_action = ModelAction::new(single_space)?;
    let eig_single = crate::spectra::eigensystem(
        &single_action.to_dense(single_params)?,
        crate::spectra::Sector::Full,
    )?;

    let frame = bogoliubov_frame(multi_params)?;
    let mut nb_sums = Vec::with_capacity(m.saturating_sub(1));
    for r in 1..m {
        nb_sums.push(b_number_terms(multi_space, &frame, r)?);
    }

    let count = n_levels.min(eig_multi.len());
    let dim = multi_space.dim();
    let mut work = vec![C::new(T::zero(), T::zero()); dim];
    let mut scratch = vec![C::new(T::zero(), T::zero()); dim];

    // Single-mode levels per parity label, in ascending order.
    let levels_with_parity = |p: Option<i8>| -> Vec<usize> {
        (0..eig_single.len())
            .filter(|&k| match p {
                Some(s) => eig_single.parity(k) == Some(s),
                None => true,
            })
            .collect()
    };

    let mut entries = Vec::with_capacity(count);
    let mut used_per_parity: std::collections::HashMap<Option<i8>, usize> =
        std::collections::HashMap::new();
    let mut max_primary = T::zero();
    let mut max_lifted = T::zero();
    let mut n_primaries = 0;
    let half = T::of(0.5);
    for level in 0..count {
        let vec_l = eig_multi.vectors().column(level);
        let mut nb_free = T::zero();
        for terms in &nb_sums {
            for s in work.iter_mut() {
                *s = C::new(T::zero(), T::zero());
            }
            for (coeff, term) in terms {
                term.apply_add(*coeff, vec_l.as_slice(), &mut work, &mut scratch);
            }
            let mut acc = C::new(T::zero(), T::zero());
            for (a, b) in vec_l.iter().zip(work.iter()) {
                acc += a.conj() * *b;
            }
            nb_free += acc.re;
        }
        let energy = eig_multi.energy(level);
        let parity = eig_multi.parity(level);
        let kind = if nb_free < half {
            let pool = levels_with_parity(parity);
            let used = used_per_parity.entry(parity).or_insert(0);
            let Some(&single_level) = pool.get(*used) else {
                return Err(Error::Condition(format!(
                    "reference spectrum exhausted while matching level {level}"
                )));
            };
            *used += 1;
            let deviation = (energy - eig_single.energy(single_level)).abs();
            max_primary = max_primary.max(deviation);
            n_primaries += 1;
            EquivalenceKind::Primary {
                single_level,
                deviation,
            }
        } else {
            let k = nb_free.round().as_f64() as usize;
            let target = energy - T::of(k as f64) * omega;
            let flipped = parity.map(|p| if k % 2 == 0 { p } else { -p });
            let pool = levels_with_parity(flipped);
            if pool.is_empty() {
                return Err(Error::Condition(format!(
                    "no reference levels with the parity required by level {level}"
                )));
            }
            let mut best = (T::of(f64::INFINITY), 0usize);
            for &s in &pool {
                let d = (target - eig_single.energy(s)).abs();
                if d < best.0 {
                    best = (d, s);
                }
            }
            max_lifted = max_lifted.max(best.0);
            EquivalenceKind::Lifted {
                k,
                single_level: best.1,
                deviation: best.0,
            }
        };
        entries.push(EquivalenceEntry {
            level,
            energy,
            nb_free,
            kind,
        });
    }
    Ok(EquivalenceReport {
        entries,
        n_primaries,
        max_primary_deviation: max_primary,
        max_lifted_deviation: max_lifted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::build_space;
    use nalgebra::SymmetricEigen;

    fn dvec(vals: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(vals)
    }

    #[test]
    fn dense_and_matrix_free_applications_agree() {
        let space = build_space(2, 2, 4).unwrap();
        let params = ModelParams::stark(
            vec![0.8, 0.2],
            vec![1.0, 1.3],
            DMatrix::from_row_slice(2, 2, &[0.3, 0.25, 0.15, 0.4]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, 0.3]),
        );
        let action = ModelAction::new(space).unwrap();
        let dense = action.to_dense(&params).unwrap();
        assert!(dense.is_hermitian());
        let dim = space.dim();
        let mut s = 41u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64) / (u32::MAX as f64) - 0.5
        };
        let x = DVector::from_fn(dim, |_, _| C::new(next(), next()));
        let mut y = vec![C::new(0.0, 0.0); dim];
        let mut scratch = vec![C::new(0.0, 0.0); dim];
        action.apply(&params, x.as_slice(), &mut y, &mut scratch);
        let want = dense.matrix() * &x;
        for k in 0..dim {
            assert!((y[k] - want[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn decoupled_spectrum_enumerates_exactly() {
        // g = 0, U = 0: eigenvalues are Σ_j (±Δ_j) + Σ_i n_i ω_i.
        let space = build_space(2, 1, 3).unwrap();
        let params = ModelParams::rabi(vec![0.8, 0.2], vec![1.0], DMatrix::zeros(1, 2));
        let h = hamiltonian_mqrm(space, &params).unwrap();
        let eig = SymmetricEigen::new(h.matrix().clone());
        let mut got: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = Vec::new();
        for s1 in [1.0f64, -1.0] {
            for s2 in [1.0f64, -1.0] {
                for n in 0..=3 {
                    want.push(s1 * 0.8 + s2 * 0.2 + n as f64);
                }
            }
        }
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn displaced_oscillator_ground_energy() {
        // Single qubit with Δ = 0: H = ω n + g σx (a + a†) factorizes over
        // σx eigenspaces into displaced oscillators, ground energy −g²/ω.
        let space = build_space(1, 1, 30).unwrap();
        for g in [0.2, 0.5, 0.8] {
            let params = ModelParams::rabi(vec![0.0], vec![1.0], DMatrix::from_element(1, 1, g));
            let h = hamiltonian_mqrm(space, &params).unwrap();
            let eig = SymmetricEigen::new(h.matrix().clone());
            let ground = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                (ground + g * g).abs() < 1e-6,
                "g = {g}: ground {ground} vs {}",
                -g * g
            );
        }
    }

    #[test]
    fn rabi_builder_rejects_stark_shifts_and_matches_at_zero() {
        let space = build_space(1, 1, 4).unwrap();
        let with_u = ModelParams::stark(
            vec![0.5],
            vec![1.0],
            DMatrix::from_element(1, 1, 0.2),
            DMatrix::from_element(1, 1, 0.3),
        );
        assert!(matches!(
            hamiltonian_mqrm(space, &with_u),
            Err(Error::Condition(_))
        ));
        let no_u = ModelParams::rabi(vec![0.5], vec![1.0], DMatrix::from_element(1, 1, 0.2));
        let h1 = hamiltonian_mqrm(space, &no_u).unwrap();
        let h2 = hamiltonian_rabi_stark(space, &no_u).unwrap();
        assert!((h1.matrix() - h2.matrix()).norm() < 1e-14);
    }

    #[test]
    fn frame_matches_hand_built_cases() {
        // Equal couplings on two modes.
        let f = bogoliubov_frame_from_direction(&dvec(&[0.3, 0.3])).unwrap();
        let r = 1.0 / 2.0f64.sqrt();
        let want = DMatrix::from_row_slice(2, 2, &[r, r, r, -r]);
        assert!((f.coeffs() - &want).norm() < 1e-14);
        // Coupling concentrated on the first mode: permutation frame.
        let f = bogoliubov_frame_from_direction(&dvec(&[0.7, 0.0, 0.0])).unwrap();
        let want = DMatrix::<f64>::identity(3, 3);
        assert!((f.coeffs() - &want).norm() < 1e-14);
        // Generic three-mode direction stays orthogonal.
        let f = bogoliubov_frame_from_direction(&dvec(&[0.1, 0.2, 0.3])).unwrap();
        let gram = f.coeffs() * f.coeffs().transpose();
        assert!((&gram - DMatrix::<f64>::identity(3, 3)).norm() < 1e-13);
        assert!((f.coeffs()[(0, 2)] - 0.3 / (0.14f64).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn transformed_numbers_are_conserved_exactly_when_frequencies_match() {
        // Equal mode frequencies and proportional columns: [H, n_b2] = 0 on
        // every matrix element away from the Fock truncation boundary (the
        // truncated a† spoils the commutator only where some n_i hits the
        // cutoff).
        let space = build_space(2, 2, 4).unwrap();
        let interior_max = |m: &DMatrix<C<f64>>| -> f64 {
            let mut worst = 0.0f64;
            for r in 0..space.dim() {
                let (_, pr) = space.decode(r);
                if pr.iter().any(|&n| n >= space.cutoff) {
                    continue;
                }
                for c in 0..space.dim() {
                    let (_, pc) = space.decode(c);
                    if pc.iter().all(|&n| n < space.cutoff) {
                        worst = worst.max(m[(r, c)].norm());
                    }
                }
            }
            worst
        };
        let g = DMatrix::from_row_slice(2, 2, &[0.3, 0.15, 0.2, 0.1]);
        let params = ModelParams::rabi(vec![0.8, 0.2], vec![1.0, 1.0], g.clone());
        let frame = bogoliubov_frame(&params).unwrap();
        let h = hamiltonian_mqrm(space, &params).unwrap();
        let nb2 = b_number_operator(space, &frame, 1).unwrap();
        let comm = h.matrix() * nb2.matrix() - nb2.matrix() * h.matrix();
        let worst = interior_max(&comm);
        assert!(worst < 1e-13, "interior commutator element {worst}");

        // Negative control: detuned second mode breaks the conservation
        // in the interior, not just at the boundary.
        let bad = ModelParams::rabi(vec![0.8, 0.2], vec![1.0, 1.2], g);
        let hb = hamiltonian_mqrm(space, &bad).unwrap();
        let comm = hb.matrix() * nb2.matrix() - nb2.matrix() * hb.matrix();
        let worst = interior_max(&comm);
        assert!(worst > 1e-3, "interior commutator unexpectedly small");
    }

    #[test]
    fn frame_rejects_non_proportional_columns() {
        let params = ModelParams::rabi(
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.2, 0.4]),
        );
        assert!(matches!(
            bogoliubov_frame(&params),
            Err(Error::Condition(_))
        ));
    }
}
