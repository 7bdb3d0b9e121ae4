//! Finite-difference checks of every backward pass over many seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use meg::model::{EvidenceMatcher, ModelConfig, SummaryVariant};
use meg::numeric::{
    conv1d_backward, conv1d_forward, dot, grad_check, Activation, Dense, GradCheckConfig, GradCheckReport, GruCell,
    LstmCell, ParamId, ParamRegistry, Tensor,
};
use meg::verify::{micro_gradcheck, micro_model_config, MicroShape};

const SEEDS: u64 = 20;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn input(reg: &mut ParamRegistry, rng: &mut ChaCha8Rng, name: &str, n: usize) -> ParamId {
    reg.register(name, Tensor::vector(random_vec(rng, n))).unwrap()
}

fn add_grad(reg: &mut ParamRegistry, id: ParamId, g: &[f64]) {
    for (a, b) in reg.grad_mut(id).data_mut().iter_mut().zip(g) {
        *a += b;
    }
}

fn assert_passes(report: &GradCheckReport, what: &str) {
    assert!(
        report.passed,
        "{what}: max rel. error {:e} at {:?}",
        report.max_rel_error, report.worst
    );
}

#[test]
fn dense_all_activations() {
    for act in [Activation::Identity, Activation::Relu, Activation::Sigmoid, Activation::Tanh] {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut reg = ParamRegistry::new();
            let layer = Dense::register(&mut reg, "d", 5, 4, act, &mut rng).unwrap();
            let x = input(&mut reg, &mut rng, "x", 5);
            let probe = random_vec(&mut rng, 4);

            let (values, grads) = reg.split_mut();
            let (_, cache) = layer.forward(values, values[x.index()].data()).unwrap();
            let dx = layer.backward(values, grads, &cache, &probe);
            add_grad(&mut reg, x, &dx);

            let report = grad_check(
                |r| dot(&layer.forward(r.values(), r.value(x).data()).unwrap().0, &probe),
                &mut reg,
                &GradCheckConfig::default(),
            );
            assert_passes(&report, &format!("dense {act:?} seed {seed}"));
        }
    }
}

#[test]
fn conv1d_random_cases() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, l, o, k) = (2, 7, 3, [1, 3, 5][seed as usize % 3]);
        let mut reg = ParamRegistry::new();
        let x = reg.register("x", Tensor::new(vec![c, l], random_vec(&mut rng, c * l)).unwrap()).unwrap();
        let kern = reg.register("k", Tensor::new(vec![o, c, k], random_vec(&mut rng, o * c * k)).unwrap()).unwrap();
        let bias = reg.register("b", Tensor::vector(random_vec(&mut rng, o))).unwrap();
        let probe = Tensor::new(vec![o, l], random_vec(&mut rng, o * l)).unwrap();

        let (values, grads) = reg.split_mut();
        let (_, cache) = conv1d_forward(&values[x.index()], &values[kern.index()], &values[bias.index()]).unwrap();
        // kernels and bias are registered last, in that order
        let (lo, hi) = grads.split_at_mut(bias.index());
        let dx = conv1d_backward(&cache, &probe, &values[kern.index()], &mut lo[kern.index()], &mut hi[0]);
        add_grad(&mut reg, x, dx.data());

        let report = grad_check(
            |r| {
                let (y, _) = conv1d_forward(r.value(x), r.value(kern), r.value(bias)).unwrap();
                dot(y.data(), probe.data())
            },
            &mut reg,
            &GradCheckConfig::default(),
        );
        assert_passes(&report, &format!("conv width {k} seed {seed}"));
    }
}

#[test]
fn gru_cell_random_cases() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = ParamRegistry::new();
        let cell = GruCell::register(&mut reg, "gru", 4, 5, &mut rng).unwrap();
        let h = input(&mut reg, &mut rng, "h", 5);
        let a = input(&mut reg, &mut rng, "a", 4);
        let probe = random_vec(&mut rng, 5);

        let (values, grads) = reg.split_mut();
        let (_, cache) = cell.forward(values, values[h.index()].data(), values[a.index()].data());
        let (dh, da) = cell.backward(values, grads, &cache, &probe);
        add_grad(&mut reg, h, &dh);
        add_grad(&mut reg, a, &da);

        let report = grad_check(
            |r| dot(&cell.forward(r.values(), r.value(h).data(), r.value(a).data()).0, &probe),
            &mut reg,
            &GradCheckConfig::default(),
        );
        assert_passes(&report, &format!("gru seed {seed}"));
    }
}

#[test]
fn lstm_cell_random_cases() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = ParamRegistry::new();
        let cell = LstmCell::register(&mut reg, "lstm", 3, 4, &mut rng).unwrap();
        // non-zero gate biases so the bias gradient is exercised
        let b = cell.b;
        let init = random_vec(&mut rng, 16);
        reg.value_mut(b).data_mut().copy_from_slice(&init);
        let h = input(&mut reg, &mut rng, "h", 4);
        let c = input(&mut reg, &mut rng, "c", 4);
        let x = input(&mut reg, &mut rng, "x", 3);
        let ph = random_vec(&mut rng, 4);
        let pc = random_vec(&mut rng, 4);

        let (values, grads) = reg.split_mut();
        let (_, _, cache) = cell.forward(values, values[h.index()].data(), values[c.index()].data(), values[x.index()].data());
        let (dh, dc, dx) = cell.backward(values, grads, &cache, &ph, &pc);
        add_grad(&mut reg, h, &dh);
        add_grad(&mut reg, c, &dc);
        add_grad(&mut reg, x, &dx);

        let report = grad_check(
            |r| {
                let (h1, c1, _) = cell.forward(r.values(), r.value(h).data(), r.value(c).data(), r.value(x).data());
                dot(&h1, &ph) + dot(&c1, &pc)
            },
            &mut reg,
            &GradCheckConfig::default(),
        );
        assert_passes(&report, &format!("lstm seed {seed}"));
    }
}

#[test]
fn evidence_matcher_random_cases() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = ParamRegistry::new();
        let m = EvidenceMatcher::register(&mut reg, "image.match", 4, 3, 3, &mut rng).unwrap();
        let q = input(&mut reg, &mut rng, "q", 4);
        let r = input(&mut reg, &mut rng, "r", 4);
        let probe = random_vec(&mut rng, 3);

        let (values, grads) = reg.split_mut();
        let (_, cache) = m.forward(values, values[q.index()].data(), values[r.index()].data()).unwrap();
        let (dq, dr) = m.backward(values, grads, &cache, &probe);
        add_grad(&mut reg, q, &dq);
        add_grad(&mut reg, r, &dr);

        let report = grad_check(
            |reg| dot(&m.forward(reg.values(), reg.value(q).data(), reg.value(r).data()).unwrap().0, &probe),
            &mut reg,
            &GradCheckConfig::default(),
        );
        assert_passes(&report, &format!("matcher seed {seed}"));
    }
}

#[test]
fn full_model_all_variants() {
    for v in SummaryVariant::ALL {
        for seed in 0..SEEDS {
            let r = micro_gradcheck(&micro_model_config().with_variant(v), &MicroShape::default(), seed, &GradCheckConfig::default())
                .unwrap();
            assert!(r.deterministic);
            assert_passes(&r, &format!("{v} seed {seed}"));
        }
    }
}

#[test]
fn full_model_configuration_paths() {
    let configs = [
        ModelConfig {
            node_dim: 5,
            ..micro_model_config()
        },
        ModelConfig {
            cross_modal: false,
            ..micro_model_config()
        },
        ModelConfig {
            timesteps: 2,
            ..micro_model_config()
        },
    ];
    for (i, cfg) in configs.iter().enumerate() {
        for k in [1, 4] {
            // Without neighbours the aggregate is b / eps, far too steep for
            // central differences at h = 1e-5.
            if !cfg.cross_modal && k == 1 {
                continue;
            }
            let shape = MicroShape {
                k,
                ..MicroShape::default()
            };
            for seed in 0..5 {
                let r = micro_gradcheck(cfg, &shape, seed, &GradCheckConfig::default()).unwrap();
                assert_passes(&r, &format!("config {i} k {k} seed {seed}"));
            }
        }
    }
}

#[test]
fn three_modalities_uneven_dims() {
    let shape = MicroShape {
        modalities: vec![("image".into(), 8), ("location".into(), 3), ("text".into(), 6)],
        k: 3,
    };
    for v in SummaryVariant::ALL {
        let r = micro_gradcheck(&micro_model_config().with_variant(v), &shape, 9, &GradCheckConfig::default()).unwrap();
        assert_passes(&r, &format!("{v} three modalities"));
    }
}
