//! Scalar abstraction: every numerical routine in this crate is generic over
//! the real field, so the same code runs at `f64` (production tolerances) and
//! `f32` (smoke-level).

use num_complex::Complex;

/// Real scalar type the crate is generic over.
///
/// `nalgebra::RealField` supplies transcendentals and the `Complex<T>`
/// linear-algebra impls; `FromPrimitive` supplies literal conversion.
pub trait Real: nalgebra::RealField + num_traits::FromPrimitive + Copy + Send + Sync + 'static {
    /// Convert an `f64` literal (tolerances, physical constants).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 literal")
    }

    /// Widen to `f64` for reporting and export.
    fn as_f64(self) -> f64;

    /// Finite (neither NaN nor infinite).
    fn finite(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl Real for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}

/// Complex amplitude over the generic real scalar.
pub type C<T> = Complex<T>;

/// `sqrt(n)` for a ladder-operator matrix element, computed in `T`.
pub fn sqrt_usize<T: Real>(n: usize) -> T {
    T::of(n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_roundtrip_both_scalars() {
        assert_eq!(<f64 as Real>::of(0.25), 0.25);
        assert_eq!(<f32 as Real>::of(0.25), 0.25_f32);
        assert_eq!(sqrt_usize::<f64>(4), 2.0);
    }
}

/// Complex magnitude for generic real scalars. The inherent `norm` on
/// `Complex<T>` needs `num_traits::Float`, which a generic real field does
/// not provide, so magnitude goes through this extension instead.
pub trait ComplexMod<T> {
    fn cmod(&self) -> T;
}

impl<T: Real> ComplexMod<T> for C<T> {
    fn cmod(&self) -> T {
        (self.re * self.re + self.im * self.im).sqrt()
    }
}
