use std::f64::consts::TAU;

use num_complex::Complex64;

use super::LatticeFunction;
use crate::error::{BthError, Result};
use crate::scalar::Scalar;

/// Relative magnitude below which a Fourier eigenvalue counts as zero.
const SINGULAR_REL: f64 = 1e-10;

/// The circulant operator Σ_j c_j Λ^{s_j} on a P-site periodic lattice,
/// diagonalized by the discrete Fourier transform.
#[derive(Debug, Clone)]
pub struct ShiftSum {
    size: usize,
    eigen: Vec<Complex64>,
    scale: f64,
}

impl ShiftSum {
    pub fn new(terms: &[(Complex64, i64)], size: usize) -> Self {
        let scale = terms.iter().map(|(c, _)| c.norm()).sum::<f64>().max(f64::MIN_POSITIVE);
        let eigen = (0..size)
            .map(|k| {
                terms
                    .iter()
                    .map(|&(c, s)| {
                        let m = (k as i64 * s).rem_euclid(size as i64) as f64;
                        c * Complex64::from_polar(1.0, TAU * m / size as f64)
                    })
                    .sum()
            })
            .collect();
        Self { size, eigen, scale }
    }

    /// Σ_{j=0}^{n−1} Λ^{sign·j}.
    pub fn orbit_sum(n: usize, sign: i64, size: usize) -> Self {
        let terms: Vec<_> = (0..n as i64).map(|j| (Complex64::new(1.0, 0.0), sign * j)).collect();
        Self::new(&terms, size)
    }

    /// Eigenvalue on the Fourier mode x ↦ ω^{kx}, ω = e^{2πi/P}.
    pub fn eigenvalue(&self, k: usize) -> Complex64 {
        self.eigen[k]
    }

    fn singular(&self, k: usize) -> bool {
        self.eigen[k].norm() < SINGULAR_REL * self.scale
    }

    /// Full eigenvalue scan; reports the first singular mode.
    pub fn check_invertible(&self) -> Result<()> {
        match (0..self.size).find(|&k| self.singular(k)) {
            Some(mode) => Err(BthError::SingularShiftSum { mode, magnitude: self.eigen[mode].norm() }),
            None => Ok(()),
        }
    }

    pub fn is_invertible(&self) -> bool {
        self.check_invertible().is_ok()
    }

    fn dft(&self, v: &[Complex64], sign: f64) -> Vec<Complex64> {
        let n = self.size;
        (0..n)
            .map(|k| {
                v.iter()
                    .enumerate()
                    .map(|(x, &f)| {
                        let m = (k * x) % n;
                        f * Complex64::from_polar(1.0, sign * TAU * m as f64 / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    fn solve_modes<T: Scalar>(
        &self,
        f: &LatticeFunction<T>,
        skip: impl Fn(usize) -> bool,
    ) -> Result<LatticeFunction<T>> {
        if !f.grid().is_periodic() {
            return Err(BthError::WindowedUnsupported("invert_shift_sum"));
        }
        if f.grid().size() != self.size {
            return Err(BthError::GridMismatch(format!(
                "shift-sum built for {} sites, function has {}",
                self.size,
                f.grid().size()
            )));
        }
        let v: Vec<Complex64> = f.values().iter().map(|x| x.to_c64()).collect();
        let mut hat = self.dft(&v, -1.0);
        for (k, h) in hat.iter_mut().enumerate() {
            *h = if skip(k) { Complex64::new(0.0, 0.0) } else { *h / self.eigen[k] };
        }
        let n = self.size as f64;
        let g = self.dft(&hat, 1.0);
        LatticeFunction::new(f.grid().clone(), g.into_iter().map(|z| T::from_c64(z / n)).collect())
    }

    /// Solves Σ_j c_j g(x + s_j ε) = f(x).
    pub fn solve<T: Scalar>(&self, f: &LatticeFunction<T>) -> Result<LatticeFunction<T>> {
        self.check_invertible()?;
        self.solve_modes(f, |_| false)
    }

    /// Solves on the mean-zero subspace when the constants are the only kernel.
    ///
    /// The mean of `f` is discarded and the returned solution has mean zero.
    pub fn solve_mean_zero<T: Scalar>(&self, f: &LatticeFunction<T>) -> Result<LatticeFunction<T>> {
        if let Some(mode) = (1..self.size).find(|&k| self.singular(k)) {
            return Err(BthError::SingularShiftSum { mode, magnitude: self.eigen[mode].norm() });
        }
        self.solve_modes(f, |k| k == 0)
    }
}

/// Returns g with Σ_j c_j · shift(g, s_j) = f on a periodic grid.
pub fn invert_shift_sum<T: Scalar>(
    c: &[(T, i64)],
    f: &LatticeFunction<T>,
) -> Result<LatticeFunction<T>> {
    if !f.grid().is_periodic() {
        return Err(BthError::WindowedUnsupported("invert_shift_sum"));
    }
    let terms: Vec<_> = c.iter().map(|&(a, s)| (a.to_c64(), s)).collect();
    ShiftSum::new(&terms, f.grid().size()).solve(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{Coeff, LatticeGrid};

    fn forward(c: &[(f64, i64)], g: &LatticeFunction<f64>) -> LatticeFunction<f64> {
        let mut out = LatticeFunction::zeros(g.grid().clone());
        for &(a, s) in c {
            out = out.add(&g.shifted(s).scale(&a));
        }
        out
    }

    #[test]
    fn constant_is_eigenvector() {
        let grid = LatticeGrid::periodic(5, 1, 1).unwrap();
        let f = LatticeFunction::constant(grid, 6.0f64);
        let g = invert_shift_sum(&[(1.0, 0), (1.0, -1)], &f).unwrap();
        assert!(g.values().iter().all(|v| (v - 3.0).abs() < 1e-13));
    }

    #[test]
    fn even_lattice_is_singular_at_half_mode() {
        let grid = LatticeGrid::periodic(4, 1, 1).unwrap();
        let f = LatticeFunction::constant(grid, 1.0);
        match invert_shift_sum(&[(1.0, 0), (1.0, -1)], &f) {
            Err(BthError::SingularShiftSum { mode, .. }) => assert_eq!(mode, 2),
            other => panic!("expected singular mode 2, got {other:?}"),
        }
    }

    #[test]
    fn delta_against_dense_solve() {
        let grid = LatticeGrid::periodic(5, 1, 1).unwrap();
        let delta = LatticeFunction::<f64>::delta(grid, 0);
        let c = [(1.0, 0), (1.0, -1)];
        let g = invert_shift_sum(&c, &delta).unwrap();
        // dense circulant: (1 + Λ^{-1}) g (x) = g(x) + g(x-1)
        let n = 5;
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            a[(x, x)] += 1.0;
            a[(x, (x + n - 1) % n)] += 1.0;
        }
        let b = nalgebra::DVector::from_vec(delta.values().to_vec());
        let dense = a.lu().solve(&b).unwrap();
        for x in 0..n {
            assert!((dense[x] - g.values()[x]).abs() < 1e-12);
        }
        assert!(forward(&c, &g).dist(&delta) < 1e-12);
    }

    #[test]
    fn orbit_sum_invertibility_matches_gcd() {
        for p in [5usize, 6, 7, 9, 31] {
            for m in 1..=4usize {
                let gcd = num::integer::gcd(m, p);
                assert_eq!(ShiftSum::orbit_sum(m, -1, p).is_invertible(), gcd == 1, "m={m} p={p}");
            }
        }
    }

    #[test]
    fn mean_zero_solve_of_difference() {
        let grid = LatticeGrid::periodic(7, 1, 1).unwrap();
        let f = LatticeFunction::<f64>::from_fn(grid, |s| (s as f64 * 0.9).sin()).unwrap();
        let f: LatticeFunction<f64> = f.sub(&LatticeFunction::constant(f.grid().clone(), f.mean()));
        let op = ShiftSum::new(&[(Complex64::new(1.0, 0.0), 0), (Complex64::new(-1.0, 0.0), 2)], 7);
        assert!(op.solve(&f).is_err());
        let g = op.solve_mean_zero(&f).unwrap();
        assert!(g.mean().abs() < 1e-14_f64);
        assert!(forward(&[(1.0, 0), (-1.0, 2)], &g).dist(&f) < 1e-12);
    }
}
