//! Seeded smooth random fields and Lax operators built from them.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coeff::{LatticeFunction, LatticeGrid};
use crate::dressing::LaxOperator;
use crate::error::{BthError, Result};

/// Fourier cutoff and amplitude of random fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSpec {
    pub modes: usize,
    pub amplitude: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self { modes: 3, amplitude: 0.2 }
    }
}

impl FieldSpec {
    pub fn validate(&self, sites: usize) -> Result<()> {
        if self.modes == 0 || 2 * self.modes >= sites {
            return Err(BthError::Invalid(format!(
                "field modes {} must lie in [1, {}] for {sites} sites",
                self.modes,
                (sites - 1) / 2
            )));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(BthError::Invalid(format!("field amplitude {} is not a finite nonnegative number", self.amplitude)));
        }
        Ok(())
    }
}

/// Σ_{k=1}^{modes} a_k cos(2πks/P) + b_k sin(2πks/P) (+ c when `mean`), all
/// coefficients uniform in [−amplitude, amplitude] scaled by 1/modes.
fn fourier_field(grid: &Arc<LatticeGrid>, spec: FieldSpec, mean: bool, rng: &mut ChaCha8Rng) -> Result<LatticeFunction<f64>> {
    let scale = spec.amplitude / spec.modes as f64;
    let mut draw = || if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 };
    let c = if mean { draw() } else { 0.0 };
    let coeffs: Vec<(f64, f64)> = (0..spec.modes).map(|_| (draw(), draw())).collect();
    let p = grid.size() as f64;
    LatticeFunction::from_fn(grid.clone(), |s| {
        let mut v = c;
        for (k, (a, b)) in coeffs.iter().enumerate() {
            let th = TAU * (k + 1) as f64 * s as f64 / p;
            v += a * th.cos() + b * th.sin();
        }
        v
    })
}

/// Random fields u_{−M}, …, u_{N−1}; u_{−M} = exp(f) with f free of the zero mode.
pub fn random_fields(grid: &Arc<LatticeGrid>, n: usize, m: usize, spec: FieldSpec, seed: u64) -> Result<Vec<LatticeFunction<f64>>> {
    spec.validate(grid.size())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fields = vec![fourier_field(grid, spec, false, &mut rng)?.exp()?];
    for _ in 1..n + m {
        fields.push(fourier_field(grid, spec, true, &mut rng)?);
    }
    Ok(fields)
}

/// A Lax operator with seeded random fields.
pub fn random_lax(grid: &Arc<LatticeGrid>, n: usize, m: usize, spec: FieldSpec, seed: u64) -> Result<LaxOperator<LatticeFunction<f64>>> {
    LaxOperator::from_fields(grid, n, m, random_fields(grid, n, m, spec, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_positive() {
        let g = LatticeGrid::periodic(31, 1, 1).unwrap();
        let a = random_fields(&g, 2, 1, FieldSpec::default(), 7).unwrap();
        let b = random_fields(&g, 2, 1, FieldSpec::default(), 7).unwrap();
        let c = random_fields(&g, 2, 1, FieldSpec::default(), 8).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.iter().zip(&b).all(|(x, y)| x.values() == y.values()));
        assert!(a[1].values() != c[1].values());
        assert!(a[0].values().iter().all(|v| *v > 0.0));
        assert!(a[0].log().unwrap().mean().abs() < 1e-14);
    }

    #[test]
    fn bandlimited() {
        let g = LatticeGrid::periodic(31, 1, 1).unwrap();
        let f = &random_fields(&g, 1, 1, FieldSpec { modes: 2, amplitude: 0.3 }, 1).unwrap()[1];
        let p = 31.0;
        for k in 3..=15 {
            let (mut re, mut im) = (0.0, 0.0);
            for (s, v) in f.values().iter().enumerate() {
                let th = TAU * k as f64 * s as f64 / p;
                re += v * th.cos();
                im += v * th.sin();
            }
            assert!(re.hypot(im) < 1e-12, "mode {k}");
        }
        assert!(FieldSpec { modes: 16, amplitude: 0.1 }.validate(31).is_err());
    }
}
