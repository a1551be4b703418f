//! Central finite-difference gradient checks.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamId, Params};

#[derive(Debug, Clone)]
pub struct GradientSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Absolute differences are divided by at least this much, so parameters
/// with a vanishing gradient compare on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

fn loss_value<F>(params: &Params, loss: &F) -> f64
where
    F: Fn(&mut Graph, &Bound) -> Var,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = loss(&mut g, &bound);
    g.value(out).data()[0]
}

/// Compares backprop gradients of `loss` against central differences at
/// `samples` parameter entries drawn uniformly over all scalars.
pub fn check_gradients<F, R>(
    params: &mut Params,
    loss: F,
    samples: usize,
    step: f64,
    rng: &mut R,
) -> Vec<GradientSample>
where
    F: Fn(&mut Graph, &Bound) -> Var,
    R: Rng,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = loss(&mut g, &bound);
    let grads = g.backward(out);

    let total = params.num_scalars();
    let mut results = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut flat = rng.gen_range(0..total);
        let mut id = ParamId(0);
        while flat >= params.get(id).len() {
            flat -= params.get(id).len();
            id = ParamId(id.0 + 1);
        }
        let analytic = grads.get(bound[id]).map_or(0.0, |gr| gr[flat]);
        let original = params.get(id).data()[flat];
        params.get_mut(id).data_mut()[flat] = original + step;
        let plus = loss_value(params, &loss);
        params.get_mut(id).data_mut()[flat] = original - step;
        let minus = loss_value(params, &loss);
        params.get_mut(id).data_mut()[flat] = original;
        let numeric = (plus - minus) / (2.0 * step);
        results.push(GradientSample {
            param: params.name(id).to_string(),
            index: flat,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    results
}
