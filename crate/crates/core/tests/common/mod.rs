//! Fixtures shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use koopflow::extensions::{ExtensionNet, ExtensionSpec, ExtensionVariant};
use koopflow::flows::{
    build_architecture, ActNorm, ArchName, ArchitectureSpec, CouplingLayer, CouplingMode, FlowStack, Partition,
    SpectralResidualBlock, SplitResidualLayer,
};
use koopflow::gridsim::Trajectory;
use koopflow::koopman::{ModelSpec, WindowBatch};
use koopflow::numcore::{
    finite_diff_grad, finite_diff_param, seeded, Activation, Backend, Linear, Mlp, SeededRng, Tape, Var,
};
use koopflow::{KoopmanModel, ParamStore, Result, Tensor};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut SeededRng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new([rows, cols], data).unwrap()
}

pub fn uniform(rng: &mut SeededRng, rows: usize, cols: usize, a: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new([rows, cols], data).unwrap()
}

/// A named architecture with every parameter replaced by random values.
pub fn random_flow(name: ArchName, dim: usize, depth: usize, hidden: &[usize], seed: u64) -> (FlowStack, ParamStore) {
    let mut store = ParamStore::new();
    let mut spec = ArchitectureSpec::new(name, dim, depth, hidden.to_vec());
    spec.seed = seed;
    let flow = build_architecture(&mut store, "flow", &spec).unwrap();
    flow.randomize(&mut store, &mut seeded(seed ^ 0xF10E), 0.5);
    flow.power_iterate(&mut store, 200);
    (flow, store)
}

/// Central-difference Jacobian of the flow at one point, `J[i][j] = ∂y_i/∂x_j`.
pub fn fd_jacobian(flow: &FlowStack, store: &ParamStore, x: &[f64], h: f64) -> DMatrix<f64> {
    let d = x.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut probe = x.to_vec();
    for j in 0..d {
        probe[j] = x[j] + h;
        let plus = flow.forward_values(store, &Tensor::row(&probe)).unwrap();
        probe[j] = x[j] - h;
        let minus = flow.forward_values(store, &Tensor::row(&probe)).unwrap();
        probe[j] = x[j];
        for i in 0..d {
            jac[(i, j)] = (plus.data()[i] - minus.data()[i]) / (2.0 * h);
        }
    }
    jac
}

/// `|exp(logdet) - |det J_fd|| / |det J_fd|` over the rows of `xs`.
pub fn worst_log_det_error(flow: &FlowStack, store: &ParamStore, xs: &Tensor) -> f64 {
    let (_, ld) = flow.forward_log_det(store, xs).unwrap();
    (0..xs.rows())
        .map(|r| {
            let det = fd_jacobian(flow, store, xs.row_slice(r), 1e-5).determinant().abs();
            (ld[r].exp() - det).abs() / det
        })
        .fold(0.0, f64::max)
}

type LossFn = Box<dyn for<'s> Fn(&mut Tape<'s>, &Var) -> Result<Var>>;

/// A scalar function of one input batch and the trainable parameters of a store.
pub struct GradCase {
    pub name: &'static str,
    pub store: ParamStore,
    pub input: Tensor,
    loss: LossFn,
}

impl GradCase {
    fn new<F>(name: &'static str, store: ParamStore, input: Tensor, loss: F) -> Self
    where
        F: for<'s> Fn(&mut Tape<'s>, &Var) -> Result<Var> + 'static,
    {
        Self {
            name,
            store,
            input,
            loss: Box::new(loss),
        }
    }

    fn value(&self, store: &ParamStore, x: &Tensor) -> Result<f64> {
        let mut tape = Tape::new(store);
        let xv = tape.input(x.clone());
        let l = (self.loss)(&mut tape, &xv)?;
        Ok(tape.value(&l).item())
    }

    /// Worst norm-wise relative error between tape and central-difference
    /// gradients, over the input and each trainable parameter tensor.
    pub fn check(&self, h: f64) -> Result<f64> {
        let (analytic_params, analytic_x) = {
            let mut tape = Tape::new(&self.store);
            let xv = tape.input(self.input.clone());
            let l = (self.loss)(&mut tape, &xv)?;
            let g = tape.backward(l)?;
            let gx = g
                .wrt(xv)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(self.input.shape().to_vec()));
            (g.params().to_vec(), gx)
        };
        let x = self.input.clone();
        let fd_x = finite_diff_grad(|xp| self.value(&self.store, xp), &x, h)?;
        let mut worst = rel_err(&analytic_x, &fd_x);
        let ids: Vec<_> = self.store.ids().filter(|&id| self.store.entry(id).trainable).collect();
        let mut store = self.store.clone();
        for id in ids {
            let fd = finite_diff_param(&mut store, id, |s| self.value(s, &x), h)?;
            let an = analytic_params
                .iter()
                .find(|(p, _)| *p == id)
                .map(|(_, g)| g.clone())
                .unwrap_or_else(|| Tensor::zeros(fd.shape().to_vec()));
            worst = worst.max(rel_err(&an, &fd));
        }
        Ok(worst)
    }
}

fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    let scale = a.norm_sq().sqrt().max(b.norm_sq().sqrt()).max(1e-8);
    diff.sqrt() / scale
}

/// `sum(out ⊙ weights)` for a fixed random weight pattern.
fn contract<'s>(tape: &mut Tape<'s>, out: &Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, &w)?;
    tape.sum(&prod)
}

fn randomize_all(store: &mut ParamStore, rng: &mut SeededRng, scale: f64) {
    let ids: Vec<_> = store.ids().filter(|&id| store.entry(id).trainable).collect();
    for id in ids {
        let t = store.get(id).map(|_| rng.random_range(-scale..scale));
        store.set(id, t).unwrap();
    }
}

/// One instance of every trainable layer type, with sizes and parameters
/// drawn from `seed`.
pub fn grad_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = seeded(seed);
    let mut cases = Vec::new();
    let rows = rng.random_range(2..5);
    let act = if rng.random_bool(0.5) {
        Activation::Silu
    } else {
        Activation::Tanh
    };

    macro_rules! case {
        ($name:expr, $store:expr, $input:expr, $out_cols:expr, $layer:expr, |$b:ident, $l:ident, $x:ident| $body:expr) => {{
            let weights = gaussian(&mut rng, $input.rows(), $out_cols);
            let $l = $layer;
            cases.push(GradCase::new($name, $store, $input, move |$b, $x| {
                let out = $body?;
                contract($b, &out, &weights)
            }));
        }};
    }

    {
        let (i, o) = (rng.random_range(1..6), rng.random_range(1..6));
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, "lin", i, o, &mut rng, false);
        randomize_all(&mut store, &mut rng, 1.0);
        let x = gaussian(&mut rng, rows, i);
        case!("linear", store, x, o, layer, |b, l, x| l.forward(b, x));
    }
    {
        let sizes = [
            rng.random_range(1..5),
            rng.random_range(2..7),
            rng.random_range(2..7),
            rng.random_range(1..5),
        ];
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "mlp", &sizes, act, &mut rng, false);
        randomize_all(&mut store, &mut rng, 1.0);
        let x = gaussian(&mut rng, rows, sizes[0]);
        case!("mlp", store, x, sizes[3], mlp, |b, l, x| l.forward(b, x));
    }
    for mode in [CouplingMode::Additive, CouplingMode::Affine] {
        let d = rng.random_range(2..9);
        let clamp = rng.random_range(0.5..3.0);
        let mut store = ParamStore::new();
        let hidden = [rng.random_range(2..9)];
        let part = Partition::halves(d, rng.random_bool(0.5)).unwrap();
        let layer = CouplingLayer::new(&mut store, "cp", mode, part, &hidden, act, clamp, &mut rng);
        layer.randomize(&mut store, &mut rng, 0.7);
        let x = gaussian(&mut rng, rows, d);
        let name = match mode {
            CouplingMode::Additive => "additive_coupling",
            CouplingMode::Affine => "affine_coupling",
        };
        case!(name, store, x, d, layer, |b, l, x| l.forward(b, x));
    }
    {
        let d = rng.random_range(1..8);
        let mut store = ParamStore::new();
        let layer = ActNorm::new(&mut store, "an", d);
        layer.randomize(&mut store, &mut rng);
        let x = gaussian(&mut rng, rows, d);
        case!("actnorm", store, x, d, layer, |b, l, x| l.forward(b, x));
    }
    {
        let d = rng.random_range(2..8);
        let mut store = ParamStore::new();
        let hidden = [rng.random_range(2..9)];
        let layer = SpectralResidualBlock::new(&mut store, "ir", d, &hidden, 0.9, 1e-12, 500, 4, &mut rng);
        layer.randomize(&mut store, &mut rng, 1.0);
        layer.power_iterate(&mut store, 200);
        let x = gaussian(&mut rng, rows, d);
        case!("spectral_residual", store, x, d, layer, |b, l, x| l.forward(b, x));
    }
    {
        let d = rng.random_range(2..9);
        let mut store = ParamStore::new();
        let hidden = [rng.random_range(2..9)];
        let part = Partition::halves(d, rng.random_bool(0.5)).unwrap();
        let layer = SplitResidualLayer::new(&mut store, "rev", part, &hidden, act, &mut rng);
        layer.randomize(&mut store, &mut rng, 0.7);
        let x = gaussian(&mut rng, rows, d);
        case!("split_residual", store, x, d, layer, |b, l, x| l.forward(b, x));
    }
    {
        let d = rng.random_range(2..7);
        let (flow, store) = random_flow(ArchName::Allinone, d, 2, &[6], rng.random());
        let x = gaussian(&mut rng, rows, d);
        case!("allinone_stack", store, x, d, flow, |b, l, x| l.forward(b, x));
    }
    for variant in ExtensionVariant::ALL {
        let p = rng.random_range(3..8);
        let mut spec = ExtensionSpec::new(variant);
        spec.dim = Some(rng.random_range(1..6));
        spec.residual_width = rng.random_range(2..9);
        spec.residual_blocks = rng.random_range(1..3);
        spec.conv_activation = act;
        let mut store = ParamStore::new();
        let ext = ExtensionNet::build(&mut store, "ext", &spec, p, rng.random()).unwrap();
        let x = gaussian(&mut rng, rows, p);
        ext.setup(&mut store, &gaussian(&mut rng, 12, p), &mut rng).unwrap();
        if variant != ExtensionVariant::RbfKernel {
            randomize_all(&mut store, &mut rng, 0.8);
        }
        let m = ext.out_dim();
        let name = variant.as_str();
        case!(name, store, x, m, ext, |b, l, x| l.forward(b, x));
    }
    {
        // Full Koopman loss over a window batch; the "input" is a trajectory.
        let p = rng.random_range(2..5);
        let mut spec_flow = ArchitectureSpec::new(ArchName::Realnvp, p, 2, vec![6]);
        spec_flow.seed = rng.random();
        let mut ext = ExtensionSpec::new(ExtensionVariant::RbfKernel);
        ext.dim = Some(2);
        let spec = ModelSpec {
            flow: spec_flow,
            extension: Some(ext),
            seed: rng.random(),
        };
        let mut store = ParamStore::new();
        let model = KoopmanModel::build(&mut store, &spec).unwrap();
        model.encoder.flow.randomize(&mut store, &mut rng, 0.5);
        let q = model.latent_dim();
        store.set(model.k, uniform(&mut rng, q, q, 0.5)).unwrap();
        let traj = gaussian(&mut rng, 6, p);
        // Centers drawn from the data, as in training.
        model
            .encoder
            .extension
            .as_ref()
            .unwrap()
            .setup(&mut store, &traj, &mut rng)
            .unwrap();
        let horizon = 3;
        let starts = WindowBatch::all_starts(std::slice::from_ref(&traj), horizon);
        let lambda = rng.random_range(0.1..2.0);
        let batch = WindowBatch::gather(std::slice::from_ref(&traj), &starts, horizon).unwrap();
        // The batch is data, so the input slot carries no gradient here.
        cases.push(GradCase::new("koopman_loss", store, traj, move |b, _| {
            let (pred, koop) = model.losses(b, &batch)?;
            model.total(b, &pred, &koop, lambda)
        }));
    }
    cases
}

/// `y_{t+1} = A y_t` for a damped rotation `A`, observed through
/// `x = (y1, y2 + c·y1²)`.
pub fn planted_trajectories(n: usize, len: usize, seed: u64, c: f64) -> Vec<Trajectory> {
    let (r, th) = (0.97f64, 0.2f64);
    let a = [[r * th.cos(), -r * th.sin()], [r * th.sin(), r * th.cos()]];
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| {
            let mut y = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let mut rows = Vec::with_capacity(len);
            for _ in 0..len {
                rows.push([y[0], y[1] + c * y[0] * y[0]]);
                y = [a[0][0] * y[0] + a[0][1] * y[1], a[1][0] * y[0] + a[1][1] * y[1]];
            }
            Trajectory {
                id: format!("p{i}"),
                dt: 0.1,
                states: Tensor::from_rows(&rows).unwrap(),
                fault: None,
            }
        })
        .collect()
}
