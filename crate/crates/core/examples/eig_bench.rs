//! Timing probe for dense complex Hermitian eigendecomposition.

use nalgebra::DMatrix;
use num_complex::Complex;
use std::time::Instant;

fn main() {
    for &n in &[200usize, 400, 800, 1200] {
        let mut b = DMatrix::<Complex<f64>>::zeros(n, n);
        let mut s = 1234567u64;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64) / ((1u64 << 31) as f64) - 1.0
        };
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = Complex::new(rnd(), rnd());
            }
        }
        let h = (&b + b.adjoint()).scale(0.5);
        let t0 = Instant::now();
        let eig = h.clone().symmetric_eigen();
        let dt = t0.elapsed();
        // residual check ||H V - V diag(E)||_max
        let v = &eig.eigenvectors;
        let mut hv = &h * v;
        for (k, e) in eig.eigenvalues.iter().enumerate() {
            let mut col = hv.column_mut(k);
            let vcol = v.column(k);
            for i in 0..n {
                col[i] -= vcol[i].scale(*e);
            }
        }
        let resid = hv.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        println!("n={n:5}  t={dt:?}  resid={resid:.3e}");
    }
}
