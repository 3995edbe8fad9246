//! Finite-difference verification of reverse-mode gradients (64-bit only).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamSet;
use super::tensor::Tensor;
use super::NumError;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor for the relative error, so coordinates with vanishing
    /// gradients are judged on absolute error instead.
    pub floor: f64,
    /// Check at most this many coordinates per tensor (sampled); `None` checks all.
    pub coords_per_tensor: Option<usize>,
    /// Slope jump (relative to `max(1, |central|)`) above which a coordinate is
    /// declared non-differentiable.
    pub kink_tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            floor: 1e-3,
            coords_per_tensor: None,
            kink_tolerance: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Max relative error between reverse-mode and central-difference gradients of
/// a scalar function of a single tensor.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, step: f64) -> Result<f64, NumError>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var, NumError>,
{
    let mut set = ParamSet::new();
    set.push("x", point.clone());
    let opts = GradCheckOptions {
        step,
        ..GradCheckOptions::default()
    };
    let report = grad_check_params(&set, |g, vars| f(g, vars[0]), &opts)?;
    Ok(report.max_rel_error)
}

/// Checks the gradient of a scalar function with respect to every tensor in `params`.
pub fn grad_check_params<F>(
    params: &ParamSet<f64>,
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumError>,
{
    let eval = |p: &ParamSet<f64>| -> Result<f64, NumError> {
        let mut g = Graph::new();
        let vars = g.bind(p);
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };

    let mut g = Graph::new();
    let vars = g.bind(params);
    let out = f(&mut g, &vars)?;
    let f0 = g.scalar(out);
    if !f0.is_finite() {
        return Err(NumError::NonFinite("grad_check objective"));
    }
    let analytic = g.backward(out)?.param_grads(&vars, params);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let h = opts.step;
    for ti in 0..params.len() {
        let n = params.get(ti).numel();
        let coords: Vec<usize> = match opts.coords_per_tensor {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for j in coords {
            let orig = params.get(ti).data()[j];
            probe.get_mut(ti).data_mut()[j] = orig + h;
            let fp = eval(&probe)?;
            probe.get_mut(ti).data_mut()[j] = orig - h;
            let fm = eval(&probe)?;
            probe.get_mut(ti).data_mut()[j] = orig;

            let central = (fp - fm) / (2.0 * h);
            let forward = (fp - f0) / h;
            let backward = (f0 - fm) / h;
            if (forward - backward).abs() > opts.kink_tolerance * central.abs().max(1.0) {
                return Err(NumError::NonDifferentiable {
                    tensor: params.names()[ti].clone(),
                    index: j,
                });
            }
            let a = analytic.get(ti)[j];
            let rel = (a - central).abs() / a.abs().max(central.abs()).max(opts.floor);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((ti, j));
            }
        }
    }
    Ok(report)
}
