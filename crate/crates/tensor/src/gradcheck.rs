//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes, so it is independent of the
//! backward rules it validates. Differences are formed in `f64` from the actual
//! perturbed `f32` values.

use crate::error::Result;
use crate::param::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Parameter name, flat index, analytic, numeric for the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let out = f(&tape, store)?;
    Ok(out.to_vec()[0] as f64)
}

/// Compares backward gradients of the scalar built by `f` against central
/// differences with step `h` for every element of every parameter in `store`.
pub fn check<F>(store: &mut ParamStore, h: f32, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    {
        let tape = Tape::new();
        let out = f(&tape, store)?;
        tape.backward(out, store)?;
    }
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    let mut probe = store.clone();
    for id in ids {
        let len = store.get(id).value().len();
        for j in 0..len {
            let orig = store.get(id).value().data()[j];
            let plus = orig + h;
            let minus = orig - h;
            probe.get_mut(id).value_mut().data_mut()[j] = plus;
            let fp = eval(&probe, &f)?;
            probe.get_mut(id).value_mut().data_mut()[j] = minus;
            let fm = eval(&probe, &f)?;
            probe.get_mut(id).value_mut().data_mut()[j] = orig;
            let numeric = (fp - fm) / (plus as f64 - minus as f64);
            let analytic = store.get(id).grad().data()[j] as f64;
            let err = rel_err(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((store.get(id).name().to_string(), j, analytic, numeric));
                }
            }
        }
    }
    Ok(report)
}

type CaseFn = Box<dyn for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>>;

/// A named scalar-valued function over its own parameter store.
pub struct GradCase {
    pub name: &'static str,
    pub store: ParamStore,
    pub f: CaseFn,
}

impl GradCase {
    pub fn run(mut self, h: f32) -> Result<GradCheckReport> {
        check(&mut self.store, h, self.f)
    }
}

/// One randomized instance of every differentiable tape op, each reduced to a
/// scalar through a fixed random weighting so no gradient is trivially uniform.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    use crate::init::uniform_with;
    use crate::tape::Bag;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::rc::Rc;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Keeps inputs of kinked ops (relu, abs) away from the kink by more than h.
    fn away_from_zero(t: Tensor) -> Tensor {
        let shape = t.shape().to_vec();
        let data = t
            .into_data()
            .into_iter()
            .map(|v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v })
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }
    let labels: Vec<f32> = (0..6).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    let mut rand_t = |shape: &[usize]| uniform_with(shape, 1.0, &mut rng);

    let mut cases = Vec::new();
    let mut unary = |name: &'static str, x: Tensor, w: Tensor, op: fn(Var<'_>) -> Result<Var<'_>>| {
        let mut store = ParamStore::new();
        let xi = store.add("x", x);
        let f: CaseFn = Box::new(move |tape, s| {
            let y = op(tape.param(s, xi))?;
            y.mul(tape.constant(w.clone()))?.sum()
        });
        cases.push(GradCase { name, store, f });
    };

    let shape = [3, 4];
    unary("relu", away_from_zero(rand_t(&shape)), rand_t(&shape), |x| x.relu());
    unary("sigmoid", rand_t(&shape), rand_t(&shape), |x| x.sigmoid());
    unary("tanh", rand_t(&shape), rand_t(&shape), |x| x.tanh());
    unary("exp", rand_t(&shape), rand_t(&shape), |x| x.exp());
    let pos = {
        let t = rand_t(&shape);
        let d = t.data().iter().map(|v| 1.25 + 0.75 * v).collect();
        Tensor::from_vec(shape.to_vec(), d).unwrap()
    };
    unary("ln", pos, rand_t(&shape), |x| x.ln());
    unary("sin", rand_t(&shape), rand_t(&shape), |x| x.sin());
    unary("cos", rand_t(&shape), rand_t(&shape), |x| x.cos());
    unary("abs", away_from_zero(rand_t(&shape)), rand_t(&shape), |x| x.abs());
    unary("scale", rand_t(&shape), rand_t(&shape), |x| x.scale(-1.7));
    unary("add_scalar", rand_t(&shape), rand_t(&shape), |x| x.add_scalar(0.3));
    unary("reshape", rand_t(&shape), rand_t(&[2, 6]), |x| x.reshape(&[2, 6]));
    unary("sum_last_axis", rand_t(&[2, 3, 4]), rand_t(&[2, 3]), |x| x.sum_last_axis());

    let mut binary = |name: &'static str,
                      a: Tensor,
                      b: Tensor,
                      w: Tensor,
                      op: for<'a> fn(Var<'a>, Var<'a>) -> Result<Var<'a>>| {
        let mut store = ParamStore::new();
        let ai = store.add("a", a);
        let bi = store.add("b", b);
        let f: CaseFn = Box::new(move |tape, s| {
            let y = op(tape.param(s, ai), tape.param(s, bi))?;
            y.mul(tape.constant(w.clone()))?.sum()
        });
        cases.push(GradCase { name, store, f });
    };
    binary("matmul", rand_t(&[3, 4]), rand_t(&[4, 5]), rand_t(&[3, 5]), |a, b| a.matmul(b));
    binary("add", rand_t(&shape), rand_t(&shape), rand_t(&shape), |a, b| a.add(b));
    binary("sub", rand_t(&shape), rand_t(&shape), rand_t(&shape), |a, b| a.sub(b));
    binary("mul", rand_t(&shape), rand_t(&shape), rand_t(&shape), |a, b| a.mul(b));
    binary("add_row", rand_t(&shape), rand_t(&[4]), rand_t(&shape), |a, b| a.add_row(b));
    binary("concat_axis0", rand_t(&[2, 3]), rand_t(&[1, 3]), rand_t(&[3, 3]), |a, b| {
        a.tape().concat(&[a, b], 0)
    });
    binary("concat_axis1", rand_t(&[2, 3]), rand_t(&[2, 2]), rand_t(&[2, 8]), |a, b| {
        a.tape().concat(&[a, b, a], 1)
    });
    binary("concat_3d_axis1", rand_t(&[2, 1, 3]), rand_t(&[2, 2, 3]), rand_t(&[2, 3, 3]), |a, b| {
        a.tape().concat(&[a, b], 1)
    });
    binary("outer_hadamard", rand_t(&[2, 3, 4]), rand_t(&[2, 2, 4]), rand_t(&[2, 6, 4]), |a, b| {
        a.outer_hadamard(b)
    });
    binary("mix_rows", rand_t(&[3, 5]), rand_t(&[2, 5, 4]), rand_t(&[2, 3, 4]), |w, z| w.mix_rows(z));

    // Reductions to scalar, embedding bags and the loss get bespoke wiring.
    {
        let mut store = ParamStore::new();
        let xi = store.add("x", rand_t(&shape));
        let w = rand_t(&shape);
        let f: CaseFn = Box::new(move |tape, s| {
            let x = tape.param(s, xi).mul(tape.constant(w.clone()))?;
            x.sum()?.add(x.mean()?.scale(3.0)?)
        });
        cases.push(GradCase { name: "sum_mean", store, f });
    }
    {
        let mut store = ParamStore::new();
        let ti = store.add("table", rand_t(&[5, 3]));
        let w = rand_t(&[4, 3]);
        let bag = Rc::new(Bag::new(vec![0, 2, 2, 5, 6], vec![1, 4, 0, 0, 3, 2]));
        let f: CaseFn = Box::new(move |tape, s| {
            let e = tape.embedding_bag(tape.param(s, ti), bag.clone())?;
            e.mul(tape.constant(w.clone()))?.sum()
        });
        cases.push(GradCase { name: "embedding_bag", store, f });
    }
    {
        let mut store = ParamStore::new();
        let zi = store.add("logits", rand_t(&[6]));
        let f: CaseFn = Box::new(move |tape, s| tape.param(s, zi).scale(2.0)?.bce_with_logits(&labels));
        cases.push(GradCase { name: "bce_with_logits", store, f });
    }
    cases
}
