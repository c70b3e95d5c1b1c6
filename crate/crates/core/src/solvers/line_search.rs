//! Bounded scalar minimization by golden-section search with parabolic
//! interpolation (Brent's method, the algorithm behind MATLAB's
//! `fminbnd`), applied to `phi(mu) = L(f - mu * direction)`.

use num_complex::Complex64;

use crate::forward::{DiffractionStack, PtychoOperator};
use crate::image::ComplexImage;
use crate::loss::amplitude_loss;
use crate::metrics::FftCounter;
use crate::{Error, Result};

/// `(3 - sqrt(5)) / 2`
const GOLDEN: f64 = 0.381_966_011_250_105_1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchSettings {
    /// Upper end of the bracket as a multiple of the fixed step.
    pub bracket_scale: f64,
    pub rel_tol: f64,
    pub max_evals: usize,
}

impl Default for LineSearchSettings {
    fn default() -> Self {
        Self {
            bracket_scale: 10.0,
            rel_tol: 1e-3,
            max_evals: 20,
        }
    }
}

impl LineSearchSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.bracket_scale > 0.0 && self.bracket_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "line-search bracket scale {} must be > 0",
                self.bracket_scale
            )));
        }
        if !(self.rel_tol > 0.0) || self.max_evals == 0 {
            return Err(Error::InvalidArgument(
                "line search needs rel_tol > 0 and max_evals >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchResult {
    pub step: f64,
    pub value: f64,
    pub evals: usize,
}

/// Brent minimization of `phi` on `[lo, hi]`. Returns the best evaluated
/// point; stops after `max_evals` evaluations or when the bracket shrinks
/// below the tolerance.
pub fn brent_minimize(
    mut phi: impl FnMut(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    max_evals: usize,
) -> Result<LineSearchResult> {
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let abs_tol = 1e-10 * (b - a).max(f64::MIN_POSITIVE);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = phi(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let mut evals = 1;
    let (mut d, mut e) = (0.0f64, 0.0f64);

    while evals < max_evals {
        let m = 0.5 * (a + b);
        let tol1 = rel_tol * x.abs() + abs_tol;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            // Parabola through (v, fv), (w, fw), (x, fx).
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = phi(u)?;
        evals += 1;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok(LineSearchResult {
        step: x,
        value: fx,
        evals,
    })
}

/// Approximately minimizes `L(f - mu * direction)` over `[0, upper]`.
/// Every evaluation applies the operator once (K transforms).
pub fn line_search(
    op: &PtychoOperator,
    b: &DiffractionStack,
    f: &ComplexImage,
    direction: &ComplexImage,
    upper: f64,
    settings: &LineSearchSettings,
    counter: &FftCounter,
) -> Result<LineSearchResult> {
    settings.validate()?;
    f.ensure_dims(direction, "line-search direction")?;
    if !(upper > 0.0 && upper.is_finite()) {
        return Err(Error::InvalidArgument(format!("bracket upper {upper} must be > 0")));
    }
    if direction.norm() == 0.0 {
        // phi is constant; one evaluation settles it.
        return Ok(LineSearchResult {
            step: 0.0,
            value: amplitude_loss(op, b, f, counter)?,
            evals: 1,
        });
    }
    let mut trial = f.clone();
    brent_minimize(
        |mu| {
            trial.data_mut().copy_from_slice(f.data());
            trial.axpy(Complex64::new(-mu, 0.0), direction);
            amplitude_loss(op, b, &trial, counter)
        },
        0.0,
        upper,
        settings.rel_tol,
        settings.max_evals,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::ScanPattern;
    use crate::loss::wirtinger_gradient;

    fn scalar_op() -> PtychoOperator {
        let probe = ComplexImage::filled(1, 1, Complex64::new(1.0, 0.0));
        PtychoOperator::new(probe, ScanPattern::new(vec![(0, 0)]), 1, 1).unwrap()
    }

    #[test]
    fn brent_finds_quadratic_minimum() {
        let r = brent_minimize(|x| Ok((x - 2.7).powi(2) + 1.0), 0.0, 10.0, 1e-6, 50).unwrap();
        assert!((r.step - 2.7).abs() < 1e-5);
        assert!(r.evals <= 50);
    }

    #[test]
    fn brent_respects_budget_and_bounds() {
        let mut n = 0;
        let r = brent_minimize(
            |x| {
                n += 1;
                Ok((x * 7.0).sin() + 0.1 * x)
            },
            0.0,
            10.0,
            1e-12,
            20,
        )
        .unwrap();
        assert!(r.evals <= 20 && n == r.evals);
        assert!((0.0..=10.0).contains(&r.step));
    }

    #[test]
    fn matches_grid_search_on_single_bin() {
        let op = scalar_op();
        let counter = FftCounter::new();
        for (f0, b0) in [(1.0, 2.0), (0.5, 3.0), (-0.3, 0.8), (2.0, 0.5)] {
            let f = ComplexImage::filled(1, 1, Complex64::new(f0, 0.2));
            let b = DiffractionStack::from_vec(1, 1, vec![b0]).unwrap();
            let g = wirtinger_gradient(&op, &b, &f, &counter).unwrap().gradient;
            let upper = 10.0;
            let before = counter.get();
            let r = line_search(&op, &b, &f, &g, upper, &LineSearchSettings::default(), &counter).unwrap();
            assert!(r.evals <= 20);
            assert_eq!(counter.get() - before, r.evals as u64);

            let phi = |mu: f64| {
                let z = f.data()[0] - g.data()[0] * mu;
                (z.norm() - b0).powi(2)
            };
            let (grid_mu, grid_val) = (0..1000)
                .map(|i| i as f64 * upper / 999.0)
                .map(|mu| (mu, phi(mu)))
                .fold(
                    (0.0, f64::INFINITY),
                    |best, cur| if cur.1 < best.1 { cur } else { best },
                );
            assert!(
                (r.step - grid_mu).abs() <= upper / 1000.0,
                "f0 {f0}: brent {} grid {grid_mu}",
                r.step
            );
            assert!(r.value <= grid_val + 1e-9);
        }
    }

    #[test]
    fn direction_at_solution_gives_zero_cost() {
        let op = scalar_op();
        let f = ComplexImage::filled(1, 1, Complex64::new(0.0, 2.0));
        let b = DiffractionStack::from_vec(1, 1, vec![2.0]).unwrap();
        let counter = FftCounter::new();
        let g = wirtinger_gradient(&op, &b, &f, &counter).unwrap().gradient;
        assert!(g.norm() < 1e-15);
        let r = line_search(&op, &b, &f, &g, 1.0, &LineSearchSettings::default(), &counter).unwrap();
        assert_eq!((r.value, r.evals), (0.0, 1));
        let tiny = ComplexImage::filled(1, 1, Complex64::new(0.0, 1e-300));
        let r = line_search(&op, &b, &f, &tiny, 1.0, &LineSearchSettings::default(), &counter).unwrap();
        assert_eq!(r.value, 0.0);
    }
}
