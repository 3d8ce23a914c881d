//! Central-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::numeric::graph::{Graph, Var};
use crate::numeric::param::{ParamId, ParamSet};
use crate::Rng;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Relative probe step: entry `x` is moved by `h * max(1, |x|)`.
    pub h: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Denominator floor so vanishing gradients compare absolutely.
    pub floor: f64,
    /// Probe at most this many entries per tensor (seeded choice).
    pub per_tensor: Option<usize>,
    /// Failing probes are repeated this many times, each with a step 100x
    /// smaller, so a kink inside the probe interval is not reported as a
    /// wrong gradient. A genuinely wrong gradient fails at every step.
    pub retries: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            per_tensor: None,
            retries: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Parameter and entry where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub probes: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} {:>5} probes  max rel err {:.3e}  {}",
            self.name,
            self.probes,
            self.max_rel_error,
            if self.passed() { "ok" } else { "FAIL" }
        )?;
        match &self.worst {
            Some((param, entry)) if !self.passed() => write!(f, " at {param}[{entry}]"),
            _ => Ok(()),
        }
    }
}

/// Compares the reverse-mode gradient of the scalar `loss(graph)` with
/// respect to every tensor in `params` against central differences.
pub fn grad_check<F>(
    name: &str,
    params: &ParamSet<f64>,
    loss: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let root = loss(&mut g)?;
        if g.value(root).numel() != 1 {
            return Err(Error::InvalidArgument("grad_check needs a scalar loss".into()));
        }
        let back = g.backward(root)?;
        g.param_gradients(&back)
    };
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new(p).no_grad();
        let root = loss(&mut g)?;
        let v = g.value(root).data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite {
                op: "grad_check probe",
            });
        }
        Ok(v)
    };

    let mut rng = Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        name: name.to_string(),
        max_rel_error: 0.0,
        worst: None,
        probes: 0,
        tol: opts.tol,
    };
    for pi in 0..params.len() {
        let id = ParamId(pi);
        let n = params.value(id).numel();
        let entries: Vec<usize> = match opts.per_tensor {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for e in entries {
            let x = params.value(id).data()[e];
            let exact = analytic.get(id).data()[e];
            let mut step = opts.h * x.abs().max(1.0);
            let mut rel = f64::INFINITY;
            for _ in 0..=opts.retries {
                probe.value_mut(id).data_mut()[e] = x + step;
                let up = eval(&probe)?;
                probe.value_mut(id).data_mut()[e] = x - step;
                let down = eval(&probe)?;
                probe.value_mut(id).data_mut()[e] = x;
                let numeric = (up - down) / (2.0 * step);
                let denom = exact.abs().max(numeric.abs()).max(opts.floor);
                rel = rel.min((exact - numeric).abs() / denom);
                if rel <= opts.tol {
                    break;
                }
                step /= 100.0;
            }
            report.probes += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.get(id).name.clone(), e));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tensor::Tensor;

    #[test]
    fn sum_of_squares_matches_analytic() {
        let mut p = ParamSet::new();
        let id = p
            .add("x", Tensor::from_f64(&[4], &[0.3, -1.2, 2.5, 0.01]).unwrap())
            .unwrap();
        let report = grad_check(
            "sum(x^2)",
            &p,
            |g| {
                let x = g.param(id);
                let sq = g.mul(x, x)?;
                g.sum(sq)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report}");
        assert_eq!(report.probes, 4);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at exactly zero has a one-sided derivative of 0 but a
        // central difference of 0.5.
        let mut p = ParamSet::new();
        let id = p.add("x", Tensor::from_f64(&[1], &[0.0]).unwrap()).unwrap();
        let report = grad_check(
            "relu kink",
            &p,
            |g| {
                let x = g.param(id);
                let r = g.relu(x)?;
                g.sum(r)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed());
    }
}
