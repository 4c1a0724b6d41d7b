//! Central finite-difference gradient checking in `f64`.

use crate::error::NnError;
use crate::graph::{Graph, Var};
use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Tensor;

/// Worst relative error found by [`check_params`] / [`check_inputs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Relative error with an absolute floor: gradients that are both below
/// `1e-7` in magnitude compare on absolute difference instead.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares the tape gradient of `loss` with respect to every parameter
/// scalar in `store` against `(L(p + h) - L(p - h)) / 2h`.
pub fn check_params<F>(
    store: &mut ParamStore<f64>,
    step: f64,
    loss: F,
) -> Result<GradCheck, NnError>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, NnError>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    let mut grads = ParamGrads::for_store(store);
    g.backward(l).accumulate_params(&g, &mut grads);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for id in store.ids().collect::<Vec<_>>() {
        for j in 0..store.get(id).shape().len() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + step;
            let plus = eval(store, &loss)?;
            store.get_mut(id).data_mut()[j] = orig - step;
            let minus = eval(store, &loss)?;
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[j]);
            worst = worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}

fn eval<F>(store: &ParamStore<f64>, loss: &F) -> Result<f64, NnError>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, NnError>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    Ok(g.value(l).item())
}

/// Same check with respect to constant inputs: `build` receives the input
/// handles (created from `inputs`) and returns the loss.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], step: f64, build: F) -> Result<GradCheck, NnError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NnError>,
{
    let run = |ins: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var), NnError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let l = build(&mut g, &vars)?;
        Ok((g, vars, l))
    };
    let (g, vars, l) = run(inputs)?;
    let grads = g.backward(l);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        for j in 0..inputs[k].shape().len() {
            let orig = work[k].data()[j];
            work[k].data_mut()[j] = orig + step;
            let (gp, _, lp) = run(&work)?;
            work[k].data_mut()[j] = orig - step;
            let (gm, _, lm) = run(&work)?;
            work[k].data_mut()[j] = orig;
            let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * step);
            let analytic = grads.wrt(*v).map_or(0.0, |t| t.data()[j]);
            worst = worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}
