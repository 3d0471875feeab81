#![allow(dead_code)]

use ssfg::autodiff::{ParamStore, Phase, Tape, Tensor, Var};
use ssfg::graphnet::{Graph, GraphNet, ModelConfig, Regularization, Task};
use ssfg::rng::RngStream;

pub const FD_STEP: f64 = 1e-5;

/// Max over coordinates of `|ad − fd| / max(1e-8, |fd|)`.
pub fn rel_err(ad: &[f64], fd: &[f64]) -> f64 {
    assert_eq!(ad.len(), fd.len());
    ad.iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / f.abs().max(1e-8))
        .fold(0.0, f64::max)
}

pub fn random(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

/// `sum(v ⊙ r)` for a fixed random `r`, so every output coordinate matters.
pub fn project(tape: &mut Tape<f64>, v: Var, r: &Tensor<f64>) -> Var {
    let c = tape.constant(r.clone());
    let p = tape.mul(v, c).unwrap();
    tape.sum(p)
}

/// Checks gradients of `f` with respect to every input tensor by central
/// differences. Returns the worst relative error.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.input(x.clone())).collect();
        let root = f(&mut tape, &vars);
        tape.value(root).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone())).collect();
    let root = f(&mut tape, &vars);
    tape.backward(root, &mut ParamStore::new()).unwrap();
    let mut ad = Vec::new();
    let mut fd = Vec::new();
    for (k, x) in inputs.iter().enumerate() {
        let g = tape
            .grad(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape()));
        ad.extend_from_slice(g.data());
        for i in 0..x.numel() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += FD_STEP;
            let up = eval(&xs);
            xs[k].data_mut()[i] -= 2.0 * FD_STEP;
            let down = eval(&xs);
            fd.push((up - down) / (2.0 * FD_STEP));
        }
    }
    rel_err(&ad, &fd)
}

/// Checks gradients of `f` with respect to every parameter in `store`.
pub fn check_params<F>(store: &mut ParamStore<f64>, mut f: F) -> f64
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Var,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let root = f(&mut tape, store);
    tape.backward(root, store).unwrap();
    let ids: Vec<_> = store.ids().collect();
    let mut ad = Vec::new();
    let mut fd = Vec::new();
    for &id in &ids {
        ad.extend_from_slice(store.grad(id).data());
        for i in 0..store.value(id).numel() {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + FD_STEP;
            let mut t = Tape::new();
            let r = f(&mut t, store);
            let up = t.value(r).item().unwrap();
            store.get_mut(id).value.data_mut()[i] = orig - FD_STEP;
            let mut t = Tape::new();
            let r = f(&mut t, store);
            let down = t.value(r).item().unwrap();
            store.get_mut(id).value.data_mut()[i] = orig;
            fd.push((up - down) / (2.0 * FD_STEP));
        }
    }
    rel_err(&ad, &fd)
}

/// Connected random graph: a random spanning tree plus extra random pairs.
pub fn random_connected_pairs(n: usize, extra: usize, rng: &mut RngStream) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 1..n {
        pairs.push((rng.below(i), i));
    }
    while pairs.len() < n - 1 + extra {
        let (a, b) = (rng.below(n), rng.below(n));
        if a != b && !pairs.contains(&(a, b)) && !pairs.contains(&(b, a)) {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Dense `m[dst][src]` adjacency counts from a directed edge list.
pub fn dense_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for &(s, d) in edges {
        m[d][s] += 1.0;
    }
    m
}

pub fn random_graph(n: usize, extra: usize, dim: usize, rng: &mut RngStream) -> Graph<f64> {
    let pairs = random_connected_pairs(n, extra, rng);
    Graph::undirected(n, &pairs, random(&[n, dim], rng)).unwrap()
}

/// Worst relative error between backprop and central differences over every
/// parameter of a model built from `cfg`, on small random graphs.
pub fn model_gradient_error(cfg: ModelConfig, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let graphs: Vec<Graph<f64>> = (0..2).map(|_| random_graph(10, 6, cfg.input_dim, &mut rng)).collect();
    let refs: Vec<&Graph<f64>> = match cfg.task {
        Task::NodeClass => vec![&graphs[0]],
        _ => graphs.iter().collect(),
    };
    let mut model = GraphNet::<f64>::new(cfg.clone(), &rng).unwrap();
    let batch = model.batch(&refs).unwrap();
    let targets: Vec<usize> = (0..10).map(|i| i % cfg.outputs).collect();
    let reg_target = Tensor::from_rows(&[&[0.3], &[-0.4]]);
    let loss = |model: &mut GraphNet<f64>, tape: &mut Tape<f64>| -> Var {
        let mut reg = Regularization::none(model.config());
        let out = model.forward(tape, &batch, &mut reg, Phase::Train).unwrap().output;
        match model.config().task {
            Task::NodeClass => tape.softmax_cross_entropy(out, &targets, None).unwrap(),
            Task::GraphClass => tape.softmax_cross_entropy(out, &[0, 1], None).unwrap(),
            Task::GraphRegress => {
                let c = tape.constant(reg_target.clone());
                let d = tape.sub(out, c).unwrap();
                let sq = tape.mul(d, d).unwrap();
                tape.mean(sq)
            }
        }
    };
    model.store.zero_grad();
    let mut tape = Tape::new();
    let root = loss(&mut model, &mut tape);
    let mut store = std::mem::take(&mut model.store);
    tape.backward(root, &mut store).unwrap();
    model.store = store;
    let ids: Vec<_> = model.store.ids().collect();
    let mut ad = Vec::new();
    let mut fd = Vec::new();
    for id in ids {
        ad.extend_from_slice(model.store.grad(id).data());
        for i in 0..model.store.value(id).numel() {
            let orig = model.store.value(id).data()[i];
            let eval = |v: f64, model: &mut GraphNet<f64>| {
                model.store.get_mut(id).value.data_mut()[i] = v;
                let mut t = Tape::new();
                let r = loss(model, &mut t);
                t.value(r).item().unwrap()
            };
            let up = eval(orig + FD_STEP, &mut model);
            let down = eval(orig - FD_STEP, &mut model);
            model.store.get_mut(id).value.data_mut()[i] = orig;
            fd.push((up - down) / (2.0 * FD_STEP));
        }
    }
    rel_err(&ad, &fd)
}
