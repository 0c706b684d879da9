//! Central finite-difference verification of tape gradients.

use indexmap::IndexMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Default perturbation step.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Default acceptance threshold on the relative error.
pub const DEFAULT_TOL: f64 = 1e-3;

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct CheckReport {
    /// Worst relative error over every checked element.
    pub max_rel_err: f64,
    /// Number of scalar elements checked.
    pub checked: usize,
    /// Location and values of the worst element.
    pub worst: String,
}

impl CheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with an absolute floor so near-zero gradients compare
/// absolutely.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / f64::max(1e-6, a.abs().max(n.abs()))
}

/// Compare `analytic` gradients against central differences of `loss_fn`
/// for every element of every named parameter. `store` is perturbed in
/// place and restored before returning.
pub fn check_gradients(
    store: &mut ParamStore,
    analytic: &IndexMap<String, Tensor>,
    loss_fn: impl Fn(&ParamStore) -> Result<f64>,
    step: f64,
) -> Result<CheckReport> {
    let mut report = CheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: String::from("nothing checked"),
    };
    for (name, ga) in analytic {
        for idx in 0..ga.data.len() {
            let old = store.get(name)?.data[idx];
            store.get_mut(name)?.data[idx] = old + step;
            let plus = loss_fn(store)?;
            store.get_mut(name)?.data[idx] = old - step;
            let minus = loss_fn(store)?;
            store.get_mut(name)?.data[idx] = old;

            let numeric = (plus - minus) / (2.0 * step);
            let a = ga.data[idx];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = format!("{name}[{idx}]: analytic {a}, numeric {numeric}");
            }
        }
    }
    Ok(report)
}

/// Build-and-check helper: seeds uniform(-0.9, 0.9) leaves with the given
/// shapes, runs `build` to a tensor that is reduced to a scalar by `mean`,
/// and sweeps every leaf element. Intended for per-op gradient suites.
pub fn check_graph(
    seed: u64,
    shapes: &[(&str, usize, usize)],
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for &(name, r, c) in shapes {
        store.insert(name, Tensor::uniform(r, c, -0.9, 0.9, &mut rng))?;
    }

    let eval = |st: &ParamStore| -> Result<(f64, IndexMap<String, Tensor>)> {
        let mut tape = Tape::new();
        let mut vars = Vec::with_capacity(shapes.len());
        for &(name, _, _) in shapes {
            vars.push(tape.leaf(st.get(name)?.clone())?);
        }
        let out = build(&mut tape, &vars)?;
        let loss = tape.mean(out)?;
        let grads = tape.backward(loss)?;
        let mut analytic = IndexMap::new();
        for (&(name, _, _), &v) in shapes.iter().zip(&vars) {
            analytic.insert(name.to_string(), grads.of(v, st.get(name)?));
        }
        Ok((tape.value(loss).item(), analytic))
    };

    let (_, analytic) = eval(&store)?;
    check_gradients(
        &mut store,
        &analytic,
        |st| eval(st).map(|(l, _)| l),
        DEFAULT_STEP,
    )
}
