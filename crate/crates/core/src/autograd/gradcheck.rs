//! Central-difference gradient checking in 64-bit precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tol: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    /// Seeds the output projection and coordinate sampling.
    pub seed: u64,
    /// Explicit coordinates to check per input; overrides `max_coords` for
    /// inputs where it is `Some`.
    pub coords: Vec<Option<Vec<usize>>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
            max_coords: None,
            seed: 0,
            coords: Vec::new(),
        }
    }
}

impl GradCheckOptions {
    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn max_coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn coords(mut self, coords: Vec<Option<Vec<usize>>>) -> Self {
        self.coords = coords;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub inputs: Vec<InputReport>,
    pub tol: f64,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.tol
    }

    /// `Ok(self)` when within tolerance, else a validation error naming the
    /// worst coordinate.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let (which, worst) = self
            .inputs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.max_rel_err.total_cmp(&b.1.max_rel_err))
            .expect("non-empty");
        Err(Error::Validation(format!(
            "gradient check failed: input {which} coordinate {} rel err {:.3e} > {:.1e} (analytic {:.6e}, numeric {:.6e})",
            worst.worst_index, worst.max_rel_err, self.tol, worst.analytic, worst.numeric
        )))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Compare the tape's gradient of `f` with central differences for every
/// input. Non-scalar outputs are contracted with a fixed random weighting
/// into a scalar first.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut projection: Option<Tensor<f64>> = None;

    let mut eval = |values: &[Tensor<f64>], grads: bool| -> Result<(f64, Vec<Option<Tensor<f64>>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone(), grads)).collect();
        let out = f(&mut tape, &vars)?;
        let loss = if tape.value(out).numel() == 1 {
            out
        } else {
            let shape = tape.shape(out).to_vec();
            let w = projection
                .get_or_insert_with(|| Tensor::uniform(&shape, -1.0, 1.0, &mut rng))
                .clone();
            let w = tape.constant(w);
            let prod = tape.mul(out, w)?;
            tape.sum_all(prod)
        };
        let value = tape.value(loss).item();
        if !grads {
            return Ok((value, Vec::new()));
        }
        tape.backward(loss)?;
        Ok((value, vars.iter().map(|&v| tape.grad(v).cloned()).collect()))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut coord_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut reports = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match (opts.coords.get(k).cloned().flatten(), opts.max_coords) {
            (Some(explicit), _) => explicit,
            (None, Some(m)) if m < n => {
                let mut c = sample(&mut coord_rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        if coords.is_empty() {
            reports.push(InputReport {
                max_rel_err: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
                checked: 0,
            });
            continue;
        }
        let mut rep = InputReport {
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: coords.len(),
        };
        for &i in &coords {
            let orig = input.data()[i];
            work[k].data_mut()[i] = orig + opts.step;
            let (plus, _) = eval(&work, false)?;
            work[k].data_mut()[i] = orig - opts.step;
            let (minus, _) = eval(&work, false)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[k].as_ref().map_or(0.0, |g| g.data()[i]);
            let err = relative_error(a, numeric);
            if err > rep.max_rel_err || i == coords[0] {
                rep.max_rel_err = err;
                rep.worst_index = i;
                rep.analytic = a;
                rep.numeric = numeric;
            }
        }
        reports.push(rep);
    }
    Ok(GradReport {
        inputs: reports,
        tol: opts.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sigmoid_check_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::uniform(&[3, 3], -2.0, 2.0, &mut rng);
        let rep = grad_check(|t, v| Ok(t.sigmoid(v[0])), &[x], &GradCheckOptions::default()).unwrap();
        assert!(rep.max_rel_err() <= 1e-6, "{rep:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        // relu at exactly zero has a one-sided derivative; central
        // differences see 0.5 while the tape reports 0.
        let x = Tensor::<f64>::zeros(&[1]);
        let rep = grad_check(|t, v| Ok(t.relu(v[0])), &[x], &GradCheckOptions::default()).unwrap();
        assert!(!rep.passed());
        assert!(rep.into_result().is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 0.5) - 1.0 / 3.0).abs() < 1e-15);
    }
}
