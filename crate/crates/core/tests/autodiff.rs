use logicvae::autodiff::nn::{gaussian_kl, standard_normal, GatedSum, GruCell, Linear, Mlp};
use logicvae::autodiff::{grad_check, GradCheckReport, ModelParams, NdArray, ParamId, Tape, Var, GRAD_CHECK_STEP};
use logicvae::rng::stream_rng;
use logicvae::Result;

const TOL: f64 = 1e-4;

/// Parameters `x` (len `a`) and `y` (len `b`) drawn from a normal.
fn two_params(seed: u64, a: usize, b: usize) -> ModelParams {
    let mut rng = stream_rng(seed, 0);
    let mut p = ModelParams::new();
    p.register("x", NdArray::vector(standard_normal(&mut rng, a))).unwrap();
    p.register("y", NdArray::vector(standard_normal(&mut rng, b))).unwrap();
    p
}

fn check(p: &ModelParams, f: impl Fn(&mut Tape<'_>) -> Result<Var>) -> GradCheckReport {
    let r = grad_check(p, GRAD_CHECK_STEP, f).unwrap();
    assert!(r.passes(TOL), "max relative error {} at {:?}", r.max_rel_error, r.worst);
    r
}

/// Reduces a vector to a scalar with non-uniform weights so every entry's
/// gradient differs.
fn weighted_sum(t: &mut Tape<'_>, v: Var) -> Result<Var> {
    let len = t.value(v).len();
    let w = t.constant(NdArray::vector((0..len).map(|i| 0.3 + 0.7 * i as f64).collect()));
    let m = t.mul(v, w)?;
    t.sum(m)
}

#[test]
fn elementwise_ops_pass_grad_check() {
    type Op = fn(&mut Tape<'_>, Var, Var) -> Result<Var>;
    let ops: Vec<(&str, Op)> = vec![
        ("add", |t, x, y| t.add(x, y)),
        ("sub", |t, x, y| t.sub(x, y)),
        ("mul", |t, x, y| t.mul(x, y)),
        ("tanh", |t, x, _| t.tanh(x)),
        ("sigmoid", |t, x, _| t.sigmoid(x)),
        ("relu", |t, x, _| t.relu(x)),
        ("leaky_relu", |t, x, _| t.leaky_relu(x, 0.2)),
        ("exp", |t, x, _| t.exp(x)),
        ("softmax", |t, x, _| t.softmax(x)),
        ("log_softmax", |t, x, _| t.log_softmax(x)),
        ("affine", |t, x, _| t.affine(x, -1.7, 0.3)),
        ("concat", |t, x, y| t.concat(&[x, y, x])),
        ("slice", |t, x, _| t.slice(x, 1, 2)),
        ("add_n", |t, x, y| t.add_n(&[x, y, x])),
        ("mul_scalar", |t, x, y| {
            let s = t.pick(y, 0)?;
            t.mul_scalar(x, s)
        }),
        ("mean", |t, x, _| t.mean(x)),
        ("l2_norm", |t, x, _| t.l2_norm(x)),
    ];
    for (name, op) in ops {
        for seed in 0..5 {
            let p = two_params(seed, 4, 4);
            let r = grad_check(&p, GRAD_CHECK_STEP, |t| {
                let x = t.param(ParamId(0));
                let y = t.param(ParamId(1));
                let out = op(t, x, y)?;
                weighted_sum(t, out)
            })
            .unwrap();
            assert!(r.passes(TOL), "{name} seed {seed}: {}", r.max_rel_error);
        }
    }
}

#[test]
fn matmul_passes_grad_check() {
    for seed in 0..5 {
        let mut rng = stream_rng(seed, 1);
        let mut p = ModelParams::new();
        p.register("a", NdArray::from_vec(3, 4, standard_normal(&mut rng, 12)).unwrap()).unwrap();
        p.register("b", NdArray::from_vec(4, 2, standard_normal(&mut rng, 8)).unwrap()).unwrap();
        check(&p, |t| {
            let a = t.param(ParamId(0));
            let b = t.param(ParamId(1));
            let c = t.matmul(a, b)?;
            let c = t.tanh(c)?;
            t.sum(c)
        });
    }
}

#[test]
fn cross_entropy_passes_grad_check() {
    for seed in 0..5 {
        let p = two_params(seed, 6, 1);
        let mask = [true, false, true, true, false, true];
        check(&p, |t| {
            let x = t.param(ParamId(0));
            t.cross_entropy(x, [0, 2, 3, 5][seed as usize % 4], Some(&mask))
        });
        check(&p, |t| {
            let x = t.param(ParamId(0));
            t.cross_entropy(x, 1, None)
        });
    }
}

#[test]
fn gaussian_kl_passes_grad_check() {
    for seed in 0..5 {
        let mut rng = stream_rng(seed, 2);
        let mut p = ModelParams::new();
        for name in ["mq", "lq", "mp", "lp"] {
            p.register(name, NdArray::vector(standard_normal(&mut rng, 3))).unwrap();
        }
        check(&p, |t| {
            let v: Vec<Var> = (0..4).map(|i| t.param(ParamId(i))).collect();
            gaussian_kl(t, v[0], v[1], v[2], v[3])
        });
    }
}

#[test]
fn linear_layer_is_exact() {
    let mut p = ModelParams::new();
    let mut rng = stream_rng(3, 0);
    let lin = Linear::new(&mut p, "lin", 5, 3, &mut rng).unwrap();
    let x = standard_normal(&mut rng, 5);
    let r = grad_check(&p, GRAD_CHECK_STEP, |t| {
        let xv = t.vector(x.clone());
        let y = lin.forward(t, xv)?;
        weighted_sum(t, y)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-7, "{}", r.max_rel_error);
}

#[test]
fn gru_cell_gated_sum_and_mlp_pass_grad_check() {
    for seed in 0..5 {
        let mut p = ModelParams::new();
        let mut rng = stream_rng(seed, 4);
        let gru = GruCell::new(&mut p, "gru", 3, 4, &mut rng).unwrap();
        let gs = GatedSum::new(&mut p, "gs", 4, 4, &mut rng).unwrap();
        let mlp = Mlp::new(&mut p, "mlp", 4, 5, 2, &mut rng).unwrap();
        let x = standard_normal(&mut rng, 3);
        let h1 = standard_normal(&mut rng, 4);
        let h2 = standard_normal(&mut rng, 4);
        check(&p, |t| {
            let xv = t.vector(x.clone());
            let a = t.vector(h1.clone());
            let b = t.vector(h2.clone());
            let m = gs.forward(t, &[a, b])?;
            let h = gru.forward(t, xv, m)?;
            let o = mlp.forward(t, h)?;
            weighted_sum(t, o)
        });
    }
}

#[test]
fn gru_cell_gate_convention() {
    // all-zero weights: r = u = 1/2, candidate 0, so h' = h / 2
    let mut p = ModelParams::new();
    let gru = GruCell::new(&mut p, "gru", 2, 3, &mut stream_rng(0, 0)).unwrap();
    p.zero_all();
    let mut t = Tape::with_params(&p);
    let x = t.vector(vec![1.0, -1.0]);
    let h = t.vector(vec![0.4, -0.2, 1.0]);
    let out = gru.forward(&mut t, x, h).unwrap();
    assert_eq!(t.value(out).data(), &[0.2, -0.1, 0.5]);
}

#[test]
fn determinism_of_gradients() {
    let p = two_params(11, 5, 5);
    let run = || {
        let mut t = Tape::with_params(&p);
        let x = t.param(ParamId(0));
        let y = t.param(ParamId(1));
        let s = t.mul(x, y).unwrap();
        let s = t.softmax(s).unwrap();
        let l = t.l2_norm(s).unwrap();
        let mut g = logicvae::autodiff::Gradients::zeros_like(&p);
        t.backward(l, &mut g).unwrap();
        (t.scalar(l).to_bits(), g)
    };
    assert_eq!(run(), run());
}
