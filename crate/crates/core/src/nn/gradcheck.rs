//! Central finite-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Mlp, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Coordinates probed per tensor (evenly strided when the tensor is larger).
    pub max_coords: usize,
    /// Denominator floor: `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    pub train: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h: 1e-5, max_coords: 16, floor: 1e-3, train: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates left out because a discrete branch (a mask or class
    /// decision) flipped within ±h, where the loss has no derivative.
    pub skipped: usize,
    /// Where the largest error occurred.
    pub worst: String,
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn probe(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|k| k * len / max + (k * 7) % (len / max).max(1)).collect()
    }
}

/// Compares backpropagated gradients of `f` (which must return a scalar)
/// against central differences, over every trainable parameter in `store`
/// and every tensor in `inputs`.
pub fn grad_check<F>(store: &ParamStore, inputs: &[Tensor], opts: &GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new(store, opts.train);
    g.record_stats = false;
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars);
    let base_branches = g.branches().to_vec();
    let (grads, all) = g.backward_full(loss)?;
    // Central difference, or None when the perturbation changes a branch.
    let eval = |s: &ParamStore, xs: &[Tensor]| -> Result<Option<f64>> {
        let mut g = Graph::new(s, opts.train);
        g.record_stats = false;
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let l = f(&mut g, &vars);
        g.check()?;
        Ok((g.branches() == base_branches.as_slice()).then(|| g.value(l).item()))
    };
    let mut report = GradCheckReport { max_rel_err: 0.0, checked: 0, skipped: 0, worst: String::new() };
    let note = |where_: String, a: f64, n: Option<f64>, report: &mut GradCheckReport| {
        let Some(n) = n else {
            report.skipped += 1;
            return;
        };
        let e = rel_err(a, n, opts.floor);
        report.checked += 1;
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = e.max(report.max_rel_err);
            report.worst = format!("{where_}: analytic {a:.6e}, numeric {n:.6e}");
        }
    };
    for i in 0..store.len() {
        let e = store.entry(i);
        if !e.requires_grad {
            continue;
        }
        let analytic = grads.grads.get(i).and_then(Option::as_ref);
        for k in probe(e.value.len(), opts.max_coords) {
            let mut s = store.clone();
            let base = e.value.data[k];
            s.value_mut(i).data[k] = base + opts.h;
            let up = eval(&s, inputs)?;
            s.value_mut(i).data[k] = base - opts.h;
            let down = eval(&s, inputs)?;
            let n = up.zip(down).map(|(u, d)| (u - d) / (2.0 * opts.h));
            let a = analytic.map_or(0.0, |t| t.data[k]);
            note(format!("{}[{k}]", e.name), a, n, &mut report);
        }
    }
    for (j, t) in inputs.iter().enumerate() {
        let analytic = all.get(vars[j].index()).and_then(Option::as_ref);
        for k in probe(t.len(), opts.max_coords) {
            let mut xs = inputs.to_vec();
            xs[j].data[k] = t.data[k] + opts.h;
            let up = eval(store, &xs)?;
            xs[j].data[k] = t.data[k] - opts.h;
            let down = eval(store, &xs)?;
            let n = up.zip(down).map(|(u, d)| (u - d) / (2.0 * opts.h));
            let a = analytic.map_or(0.0, |g| g.data[k]);
            note(format!("input{j}[{k}]"), a, n, &mut report);
        }
    }
    if report.checked == 0 {
        return Err(Error::Contract("gradient check found nothing to probe".into()));
    }
    Ok(report)
}

fn rand_t<R: Rng + ?Sized>(r: usize, c: usize, rng: &mut R) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

type Case = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

/// Checks every differentiable graph op (each composed with a smooth
/// reduction) plus a normalized MLP on random inputs drawn from `seed`.
pub fn op_suite(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = ParamStore::new();
    let o = GradCheckOptions::default();
    let (a, b) = (rand_t(5, 3, &mut rng), rand_t(5, 3, &mut rng));
    let w = rand_t(3, 4, &mut rng);
    let row = rand_t(1, 3, &mut rng);
    let cases: Vec<(&str, Vec<Tensor>, Case)> = vec![
        ("matmul", vec![a.clone(), w.clone()], Box::new(|g, v| { let y = g.matmul(v[0], v[1]); let y = g.sin(y); g.sum(y) })),
        ("add_bias", vec![a.clone(), row.clone()], Box::new(|g, v| { let y = g.add_bias(v[0], v[1]); let y = g.mul(y, y); g.sum(y) })),
        ("mul_row", vec![a.clone(), row.clone()], Box::new(|g, v| { let y = g.mul_row(v[0], v[1]); let y = g.sin(y); g.sum(y) })),
        ("add_sub_mul_scale", vec![a.clone(), b.clone()], Box::new(|g, v| {
            let s = g.add(v[0], v[1]); let d = g.sub(v[0], v[1]); let m = g.mul(s, d); let m = g.scale(m, 1.7); g.sum(m)
        })),
        ("relu", vec![a.clone()], Box::new(|g, v| { let y = g.relu(v[0]); let y = g.mul(y, y); g.sum(y) })),
        ("sin_cos", vec![a.clone()], Box::new(|g, v| { let s = g.sin(v[0]); let c = g.cos(v[0]); let m = g.mul(s, c); g.mean(m) })),
        ("sqrt", vec![a.map(|x| x.abs() + 0.2)], Box::new(|g, v| { let y = g.sqrt(v[0], 1e-12); g.sum(y) })),
        ("feature_norm", vec![a.clone(), b.clone()], Box::new(|g, v| { let y = g.feature_norm(v[0], "n"); let y = g.mul(y, v[1]); g.sum(y) })),
        ("segment_max", vec![a.clone()], Box::new(|g, v| { let y = g.segment_max(v[0], &[0, 2, 5]); let y = g.mul(y, y); g.sum(y) })),
        ("segment_mean", vec![a.clone()], Box::new(|g, v| { let y = g.segment_mean(v[0], &[0, 3, 5]); let y = g.sin(y); g.sum(y) })),
        ("gather", vec![a.clone()], Box::new(|g, v| { let y = g.gather(v[0], &[4, 0, 0, 2]); let y = g.sin(y); g.sum(y) })),
        ("concat", vec![a.clone(), b.clone()], Box::new(|g, v| {
            let c = g.concat_cols(&[v[0], v[1]]); let r = g.concat_rows(&[c, c]); let s = g.slice_cols(r, 1, 5); let s = g.sin(s); g.sum(s)
        })),
        ("cross_entropy", vec![a.clone()], Box::new(|g, v| { let y = g.cross_entropy(v[0], &[0, 2, 1, 1, 0]); g.mean(y) })),
        ("huber", vec![a.map(|x| 3.0 * x)], Box::new(|g, v| { let y = g.huber(v[0], 1.0); let y = g.row_mean(y); g.sum(y) })),
    ];
    let mut out = Vec::new();
    for (name, inputs, f) in cases {
        out.push((name.to_string(), grad_check(&s, &inputs, &o, |g, v| f(g, v))?));
    }
    let m = Mlp::new("mlp", 4, &[6, 5, 2], true);
    let mut store = ParamStore::new();
    m.init(&mut store, &mut rng);
    let x = rand_t(8, 4, &mut rng);
    for norm in [false, true] {
        let rep = grad_check(&store, std::slice::from_ref(&x), &o, |g, v| {
            let y = m.forward(g, v[0], norm);
            let y = g.huber(y, 1.0);
            g.mean(y)
        })?;
        out.push((format!("mlp(norm={norm})"), rep));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_and_a_normalized_mlp_pass() {
        let reps = op_suite(10).unwrap();
        assert!(reps.len() > 15);
        for (name, rep) in reps {
            assert!(rep.max_rel_err < 1e-4, "{name}: {rep:?}");
        }
    }

    #[test]
    fn flipped_branches_are_skipped_not_compared() {
        // y = x + [x > 0]: the jump at 0 has no derivative.
        let f = |g: &mut Graph, v: &[Var]| {
            let x = g.value(v[0]).clone();
            let step: Vec<f64> = x.data.iter().map(|&a| (a > 0.0) as u8 as f64).collect();
            g.note_branch(step.iter().map(|&s| s as usize));
            let c = g.constant(Tensor::from_vec(x.rows, x.cols, step));
            let y = g.add(v[0], c);
            g.sum(y)
        };
        let s = ParamStore::new();
        let near = Tensor::from_vec(1, 3, vec![1e-6, 0.5, -0.5]);
        let rep = grad_check(&s, &[near], &GradCheckOptions::default(), f).unwrap();
        assert_eq!((rep.checked, rep.skipped), (2, 1));
        assert!(rep.max_rel_err < 1e-9, "{rep:?}");
    }
}
