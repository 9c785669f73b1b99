//! Piecewise-linear parameter schedules for adiabatic protocols.
//!
//! User-facing times are measured in cycles of the (common) mode frequency:
//! one cycle is 2π/ω. Values interpolate linearly between knots and clamp
//! outside the knot range. Slopes are reported with respect to internal time
//! (units 1/ω), i.e. the per-cycle slope divided by 2π, because they feed
//! time-derivative operators and adiabaticity ratios.

use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::num::Real;

/// One cycle of a mode with frequency ω lasts 2π/ω in internal units.
pub fn cycles_to_internal<T: Real>(cycles: T) -> T {
    cycles * T::two_pi()
}

pub fn internal_to_cycles<T: Real>(t: T) -> T {
    t / T::two_pi()
}

/// Piecewise-linear function of time (knot times in cycles, strictly
/// increasing; values clamp outside the knot range).
#[derive(Clone, Debug)]
pub struct PiecewiseLinear<T: Real> {
    knots: Vec<(T, T)>,
}

impl<T: Real> PiecewiseLinear<T> {
    pub fn new(knots: Vec<(T, T)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Shape("a schedule needs at least one knot".into()));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Shape(
                    "schedule knot times must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self { knots })
    }

    pub fn constant(value: T) -> Self {
        Self {
            knots: vec![(T::zero(), value)],
        }
    }

    pub fn knots(&self) -> &[(T, T)] {
        &self.knots
    }

    /// Value at time `t` (cycles), clamped to the knot range.
    pub fn value(&self, t: T) -> T {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        if t >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        // Linear search: knot lists are short.
        for w in k.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t < t1 {
                let f = (t - t0) / (t1 - t0);
                return v0 + (v1 - v0) * f;
            }
        }
        k[k.len() - 1].1
    }

    /// Right-sided slope at time `t`, per cycle. Zero outside the knot range.
    pub fn slope_per_cycle(&self, t: T) -> T {
        let k = &self.knots;
        if t < k[0].0 || t >= k[k.len() - 1].0 {
            return T::zero();
        }
        for w in k.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t >= t0 && t < t1 {
                return (v1 - v0) / (t1 - t0);
            }
        }
        T::zero()
    }

    /// Knot times, used to split integrations at slope discontinuities.
    pub fn breakpoints(&self) -> impl Iterator<Item = T> + '_ {
        self.knots.iter().map(|(t, _)| *t)
    }
}

/// Piecewise-constant function of time (left-closed segments: the value at a
/// knot time is the value that starts there).
#[derive(Clone, Debug)]
pub struct PiecewiseConstant<T: Real> {
    knots: Vec<(T, T)>,
}

impl<T: Real> PiecewiseConstant<T> {
    pub fn new(knots: Vec<(T, T)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Shape("a schedule needs at least one knot".into()));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Shape(
                    "schedule knot times must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self { knots })
    }

    pub fn constant(value: T) -> Self {
        Self {
            knots: vec![(T::zero(), value)],
        }
    }

    pub fn value(&self, t: T) -> T {
        let mut v = self.knots[0].1;
        for &(tk, vk) in &self.knots {
            if t >= tk {
                v = vk;
            } else {
                break;
            }
        }
        v
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = T> + '_ {
        self.knots.iter().map(|(t, _)| *t)
    }
}

/// Time-dependent model parameters: one piecewise-linear curve per entry of
/// [`ModelParams`]. Couplings and Stark shifts are stored mode-major
/// (index i·N + j for mode i, qubit j).
#[derive(Clone, Debug)]
pub struct Schedule<T: Real> {
    pub duration: T,
    n_qubits: usize,
    n_modes: usize,
    delta: Vec<PiecewiseLinear<T>>,
    omega: Vec<PiecewiseLinear<T>>,
    g: Vec<PiecewiseLinear<T>>,
    u: Vec<PiecewiseLinear<T>>,
}

impl<T: Real> Schedule<T> {
    pub fn new(
        duration: T,
        delta: Vec<PiecewiseLinear<T>>,
        omega: Vec<PiecewiseLinear<T>>,
        g: Vec<PiecewiseLinear<T>>,
        u: Vec<PiecewiseLinear<T>>,
    ) -> Result<Self> {
        let n_qubits = delta.len();
        let n_modes = omega.len();
        if n_qubits == 0 || n_modes == 0 {
            return Err(Error::Shape("schedule needs qubits and modes".into()));
        }
        if g.len() != n_modes * n_qubits || u.len() != n_modes * n_qubits {
            return Err(Error::Shape(format!(
                "expected {} coupling curves, got g: {}, u: {}",
                n_modes * n_qubits,
                g.len(),
                u.len()
            )));
        }
        if !(duration > T::zero()) {
            return Err(Error::Shape("schedule duration must be positive".into()));
        }
        Ok(Self {
            duration,
            n_qubits,
            n_modes,
            delta,
            omega,
            g,
            u,
        })
    }

    /// Time-independent schedule holding fixed parameters for a duration.
    pub fn hold(params: &ModelParams<T>, duration: T) -> Result<Self> {
        let delta = params
            .delta
            .iter()
            .map(|v| PiecewiseLinear::constant(*v))
            .collect();
        let omega = params
            .omega
            .iter()
            .map(|v| PiecewiseLinear::constant(*v))
            .collect();
        let g = params.g.transpose().iter().map(|v| PiecewiseLinear::constant(*v)).collect();
        let u = params.u.transpose().iter().map(|v| PiecewiseLinear::constant(*v)).collect();
        Self::new(duration, delta, omega, g, u)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Fresh parameter buffer with the schedule's shape.
    pub fn make_params(&self) -> ModelParams<T> {
        ModelParams {
            delta: vec![T::zero(); self.n_qubits],
            omega: vec![T::one(); self.n_modes],
            g: nalgebra::DMatrix::zeros(self.n_modes, self.n_qubits),
            u: nalgebra::DMatrix::zeros(self.n_modes, self.n_qubits),
        }
    }

    /// Fill `out` with the parameter values at time `t` (cycles).
    pub fn params_into(&self, t: T, out: &mut ModelParams<T>) {
        for (j, curve) in self.delta.iter().enumerate() {
            out.delta[j] = curve.value(t);
        }
        for (i, curve) in self.omega.iter().enumerate() {
            out.omega[i] = curve.value(t);
        }
        for i in 0..self.n_modes {
            for j in 0..self.n_qubits {
                out.g[(i, j)] = self.g[i * self.n_qubits + j].value(t);
                out.u[(i, j)] = self.u[i * self.n_qubits + j].value(t);
            }
        }
    }

    pub fn params_at(&self, t: T) -> ModelParams<T> {
        let mut p = self.make_params();
        self.params_into(t, &mut p);
        p
    }

    /// Fill `out` with parameter slopes at time `t`, with respect to
    /// internal time (per-cycle slopes divided by 2π).
    pub fn slopes_into(&self, t: T, out: &mut ModelParams<T>) {
        let scale = T::one() / T::two_pi();
        for (j, curve) in self.delta.iter().enumerate() {
            out.delta[j] = curve.slope_per_cycle(t) * scale;
        }
        for (i, curve) in self.omega.iter().enumerate() {
            out.omega[i] = curve.slope_per_cycle(t) * scale;
        }
        for i in 0..self.n_modes {
            for j in 0..self.n_qubits {
                out.g[(i, j)] = self.g[i * self.n_qubits + j].slope_per_cycle(t) * scale;
                out.u[(i, j)] = self.u[i * self.n_qubits + j].slope_per_cycle(t) * scale;
            }
        }
    }

    pub fn slopes_at(&self, t: T) -> ModelParams<T> {
        let mut p = self.make_params();
        self.slopes_into(t, &mut p);
        p
    }

    /// Sorted, deduplicated knot times of every curve inside (0, duration),
    /// plus the endpoints — the integration segment boundaries.
    pub fn breakpoints(&self) -> Vec<T> {
        let mut pts = vec![T::zero(), self.duration];
        let mut push = |t: T| {
            if t > T::zero() && t < self.duration {
                pts.push(t);
            }
        };
        for c in self.delta.iter().chain(&self.omega).chain(&self.g).chain(&self.u) {
            for t in c.breakpoints() {
                push(t);
            }
        }
        pts.sort_by(|a, b| a.partial_cmp(b).expect("finite knot times"));
        pts.dedup_by(|a, b| (*a - *b).abs() <= T::default_epsilon() * T::of(64.0));
        pts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_interpolation_clamps_and_slopes() {
        let c = PiecewiseLinear::<f64>::new(vec![(0.0, 1.0), (2.0, 0.0), (3.0, 0.0)]).unwrap();
        assert_eq!(c.value(-1.0), 1.0);
        assert!((c.value(0.5) - 0.75).abs() < 1e-15);
        assert_eq!(c.value(2.5), 0.0);
        assert_eq!(c.value(9.0), 0.0);
        assert!((c.slope_per_cycle(1.0) + 0.5).abs() < 1e-15);
        assert_eq!(c.slope_per_cycle(2.5), 0.0);
        // Right-sided at an interior knot.
        assert_eq!(c.slope_per_cycle(2.0), 0.0);
        assert!((c.slope_per_cycle(0.0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn piecewise_constant_switches_at_knots() {
        let c = PiecewiseConstant::new(vec![(0.0, 0.0), (3.0, 0.1)]).unwrap();
        assert_eq!(c.value(2.999), 0.0);
        assert_eq!(c.value(3.0), 0.1);
        assert_eq!(c.value(5.0), 0.1);
    }

    #[test]
    fn schedule_fills_params_and_reports_breakpoints() {
        let sched = Schedule::<f64>::new(
            2.0,
            vec![
                PiecewiseLinear::new(vec![(0.0, 1.0), (2.0, 0.5)]).unwrap(),
                PiecewiseLinear::new(vec![(0.0, 0.0), (2.0, 0.5)]).unwrap(),
            ],
            vec![PiecewiseLinear::constant(1.0)],
            vec![
                PiecewiseLinear::new(vec![(0.0, 0.0), (1.0, 0.4), (2.0, 0.4)]).unwrap(),
                PiecewiseLinear::new(vec![(0.0, 0.0), (1.0, 0.4), (2.0, 0.4)]).unwrap(),
            ],
            vec![PiecewiseLinear::constant(0.5), PiecewiseLinear::constant(0.5)],
        )
        .unwrap();
        let p = sched.params_at(1.0);
        assert!((p.delta[0] - 0.75).abs() < 1e-15);
        assert!((p.delta[1] - 0.25).abs() < 1e-15);
        assert!((p.g[(0, 0)] - 0.4).abs() < 1e-15);
        assert_eq!(p.u[(0, 1)], 0.5);
        let s = sched.slopes_at(0.5);
        assert!((s.delta[0] + 0.25 / std::f64::consts::TAU).abs() < 1e-15);
        assert!((s.g[(0, 1)] - 0.4 / std::f64::consts::TAU).abs() < 1e-15);
        let bps = sched.breakpoints();
        assert_eq!(bps, vec![0.0, 1.0, 2.0]);
    }
}
