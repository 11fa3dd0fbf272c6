use mrm_net::model::attention::{ChannelAttention, Head, SpatialAttention};
use mrm_net::model::layers::{BaseBlock, Builder, Ctx};
use mrm_net::model::loss::total_loss;
use mrm_net::model::ms_conv::{MultiScaleFusion, Stem};
use mrm_net::{EvalBranch, Model, ModelConfig, Output, VariantKind};
use mrm_tensor::{AdamConfig, AdamState, Graph, Mode, ParamStore, RunningStats, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Stats = Vec<(String, RunningStats<f64>)>;

/// Parameters, stats and a graph with the parameters bound, for testing one
/// block in isolation.
struct Harness {
    params: ParamStore<f64>,
    stats: Stats,
}

impl Harness {
    fn build<T>(f: impl FnOnce(&mut Builder<f64>) -> mrm_net::Result<T>) -> (Self, T) {
        let (mut params, mut stats) = (ParamStore::new(), Vec::new());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = f(&mut Builder::new(&mut params, &mut stats, &mut rng)).unwrap();
        (Harness { params, stats }, block)
    }

    fn zero(&mut self, name_part: &str) {
        for i in 0..self.params.len() {
            if self.params.name(i).contains(name_part) {
                self.params.value_mut(i).data_mut().fill(0.0);
            }
        }
    }

    fn run(&mut self, x: Tensor<f64>, f: impl FnOnce(&mut Ctx<f64>, mrm_tensor::Var) -> mrm_net::Result<mrm_tensor::Var>) -> Tensor<f64> {
        let mut g = Graph::new();
        let p: Vec<_> = self.params.values().iter().map(|t| g.constant(t.clone())).collect();
        let xv = g.constant(x);
        let mut cx = Ctx::new(&mut g, &p, &mut self.stats, Mode::Train, 0, 0);
        let y = f(&mut cx, xv).unwrap();
        g.value(y).clone()
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn tiny() -> ModelConfig {
    ModelConfig {
        num_leads: 3,
        input_length: 64,
        low_channels: 4,
        high_channels: 8,
        stem_channels: vec![4, 4],
        stem_kernels: vec![5, 3],
        fusion_kernels: vec![3, 5, 7],
        num_classes: 3,
        attention_reduction: 2,
        ..ModelConfig::default()
    }
}

#[test]
fn stem_channel_progression_and_length() {
    let cfg = ModelConfig::default();
    let (mut h, stem) = Harness::build(|b| Stem::new(b, &cfg));
    let shapes: Vec<Vec<usize>> =
        (1..=4).map(|i| h.params.get(&format!("stem.block{i}.conv.weight")).unwrap().shape().to_vec()).collect();
    assert_eq!(shapes, vec![vec![32, 12, 11], vec![64, 32, 7], vec![128, 64, 5], vec![128, 128, 3]]);
    assert_eq!(cfg.lengths().unwrap().stem, 1004);
    let y = h.run(Tensor::zeros([1, 12, 1000]), |cx, x| stem.forward(cx, x));
    assert_eq!(y.shape(), &[1, 128, 1004]);
    assert!(y.is_finite());
}

#[test]
fn fusion_mix_starts_as_plain_mean() {
    let cfg = tiny();
    let (mut h, fusion) = Harness::build(|b| MultiScaleFusion::new(b, "fusion1", &cfg, 4, 1));
    let x = random(&[2, 4, 20], 1);
    let mixed = h.run(x.clone(), |cx, x| fusion.mixed(cx, x));
    let paths: Vec<Tensor<f64>> = fusion.paths.iter().map(|c| h.run(x.clone(), |cx, x| c.forward(cx, x))).collect();
    for (i, &v) in mixed.data().iter().enumerate() {
        let mean = paths.iter().map(|p| p.data()[i]).sum::<f64>() / paths.len() as f64;
        assert!((v - mean).abs() < 1e-12);
    }
}

#[test]
fn all_ones_kernel_gives_moving_sums() {
    let cfg = ModelConfig {
        num_leads: 1,
        stem_channels: vec![1],
        stem_kernels: vec![3],
        fusion_kernels: vec![3],
        ..tiny()
    };
    let (mut h, fusion) = Harness::build(|b| MultiScaleFusion::new(b, "f", &cfg, 1, 1));
    let w = h.params.id("f.path1.weight").unwrap();
    h.params.value_mut(w).data_mut().fill(1.0);
    let x = Tensor::new([1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let y = h.run(x, |cx, x| fusion.mixed(cx, x));
    assert_eq!(y.data(), &[3.0, 6.0, 9.0, 12.0, 9.0]);
}

#[test]
fn branch_shapes_pair_up() {
    let cfg = tiny();
    let mut model = Model::<f64>::new(cfg.clone(), VariantKind::Mrm, 0).unwrap();
    let n = model.lengths().n;
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let x = g.constant(random(&[2, 3, 64], 2));
    let Output::Dual(a) = model.forward(&mut g, &p, x, Mode::Train, 0, 0).unwrap() else {
        panic!("mrm is dual")
    };
    assert_eq!(g.shape(a.z1), &[2, 4, 2 * n]);
    assert_eq!(g.shape(a.z2), &[2, 8, n]);
    assert_eq!(g.shape(a.z3), g.shape(a.z1));
    assert_eq!(g.shape(a.z4), g.shape(a.z2));
    assert_eq!(g.shape(a.out1), &[2, 3]);
    assert_eq!(g.shape(a.out2), &[2, 3]);
}

#[test]
fn default_config_pairs_channel_length_products() {
    let cfg = ModelConfig::default();
    let n = cfg.lengths().unwrap().n;
    assert_eq!(cfg.low_channels * 2 * n, cfg.high_channels * n);
}

#[test]
fn zeroed_attention_gates_are_one_half() {
    let (mut h, ca) = Harness::build(|b| ChannelAttention::new(b, 4, 2));
    h.zero("ca.");
    let y = h.run(random(&[2, 4, 9], 3), |cx, z| ca.forward(cx, z));
    assert_eq!(y.shape(), &[2, 4, 1]);
    assert!(y.data().iter().all(|&v| v == 0.5));

    let (mut h, sa) = Harness::build(|b| SpatialAttention::new(b, 3));
    h.zero("sa.");
    let y = h.run(random(&[2, 4, 9], 4), |cx, z| sa.forward(cx, z));
    assert_eq!(y.shape(), &[2, 1, 9]);
    assert!(y.data().iter().all(|&v| v == 0.5));
}

#[test]
fn attention_gates_stay_in_open_unit_interval() {
    let (mut h, ca) = Harness::build(|b| ChannelAttention::new(b, 6, 3));
    let y = h.run(random(&[3, 6, 11], 5), |cx, z| ca.forward(cx, z));
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let (mut h, sa) = Harness::build(|b| SpatialAttention::new(b, 5));
    let y = h.run(random(&[3, 6, 11], 6), |cx, z| sa.forward(cx, z));
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn channel_attention_matches_matrix_arithmetic() {
    let (mut h, ca) = Harness::build(|b| ChannelAttention::new(b, 2, 1));
    let set = |h: &mut Harness, name: &str, v: &[f64]| {
        let id = h.params.id(name).unwrap();
        h.params.value_mut(id).data_mut().copy_from_slice(v);
    };
    set(&mut h, "ca.fc1.weight", &[0.5, -1.0]);
    set(&mut h, "ca.fc1.bias", &[0.1]);
    set(&mut h, "ca.fc2.weight", &[2.0, -0.5]);
    set(&mut h, "ca.fc2.bias", &[0.0, 0.3]);
    let x = Tensor::new([1, 2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, -2.0]).unwrap();
    let y = h.run(x, |cx, z| ca.forward(cx, z));
    let mlp = |v: [f64; 2]| {
        let hidden = (0.5 * v[0] - 1.0 * v[1] + 0.1).max(0.0);
        [2.0 * hidden, -0.5 * hidden + 0.3]
    };
    let (a, m) = (mlp([2.0, -1.0]), mlp([3.0, 0.0]));
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    assert!((y.data()[0] - sig(a[0] + m[0])).abs() < 1e-12);
    assert!((y.data()[1] - sig(a[1] + m[1])).abs() < 1e-12);
}

#[test]
fn base_block_with_zero_convs_is_relu_of_input() {
    let (mut h, block) = Harness::build(|b| BaseBlock::new(b, "bb", 3, 3));
    h.zero("conv");
    let x = random(&[2, 3, 7], 7);
    let y = h.run(x.clone(), |cx, x| block.forward(cx, x));
    assert_eq!(y.shape(), x.shape());
    for (a, b) in y.data().iter().zip(x.data()) {
        assert_eq!(*a, b.max(0.0));
    }
}

#[test]
fn projecting_base_block_keeps_length() {
    let (mut h, block) = Harness::build(|b| BaseBlock::new(b, "bb", 4, 2));
    let y = h.run(random(&[1, 4, 10], 8), |cx, x| block.forward(cx, x));
    assert_eq!(y.shape(), &[1, 2, 10]);
}

#[test]
fn head_on_constant_map_returns_bias() {
    let (mut h, head) = Harness::build(|b| Head::new(b, "head", 4, 2));
    let bias = h.params.id("head.fc.bias").unwrap();
    h.params.value_mut(bias).data_mut().copy_from_slice(&[0.25, -1.5]);
    let y = h.run(Tensor::full([3, 4, 6], 2.5), |cx, z| head.forward(cx, z));
    assert_eq!(y.shape(), &[3, 2]);
    for row in y.data().chunks(2) {
        assert!((row[0] - 0.25).abs() < 1e-12 && (row[1] + 1.5).abs() < 1e-12);
    }
}

#[test]
fn single_branch_variants_are_smaller() {
    let mrm = Model::<f32>::new(tiny(), VariantKind::Mrm, 0).unwrap().num_params();
    for kind in [VariantKind::LowRs, VariantKind::HighRs] {
        assert!(Model::<f32>::new(tiny(), kind, 0).unwrap().num_params() < mrm);
    }
}

#[test]
fn fused_variants_emit_one_logits_tensor() {
    for kind in [VariantKind::FAddition, VariantKind::FConcat, VariantKind::LowRs, VariantKind::HighRs] {
        let mut model = Model::<f64>::new(tiny(), kind, 0).unwrap();
        let mut g = Graph::new();
        let p = model.bind(&mut g, false);
        let x = g.constant(random(&[2, 3, 64], 9));
        match model.forward(&mut g, &p, x, Mode::Eval, 0, 0).unwrap() {
            Output::Single { logits } => assert_eq!(g.shape(logits), &[2, 3], "{kind}"),
            Output::Dual(_) => panic!("{kind} should have one head"),
        }
    }
}

#[test]
fn every_variant_lowers_loss_in_twenty_steps() {
    let x: Tensor<f32> = random(&[4, 3, 64], 10).cast();
    let y = Tensor::new([4, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 1., 1., 0.]).unwrap();
    for kind in VariantKind::ALL {
        let mut model = Model::<f32>::new(tiny(), kind, 1).unwrap();
        let mut adam = AdamState::new(
            AdamConfig {
                lr: 0.01,
                ..Default::default()
            },
            &model.params,
        );
        let mut losses = Vec::new();
        for step in 0..20 {
            let (lb, grads) = model.train_step(&x, &y, 1, step).unwrap();
            assert!(lb.l_total.is_finite());
            adam.step(&mut model.params, &grads).unwrap();
            losses.push(lb.l_total);
        }
        assert!(losses[19] < losses[0], "{kind}: {losses:?}");
    }
}

#[test]
fn zero_weights_leave_detection_loss_only() {
    let cfg = ModelConfig {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        ..tiny()
    };
    let mut model = Model::<f64>::new(cfg.clone(), VariantKind::Mrm, 0).unwrap();
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let x = g.constant(random(&[2, 3, 64], 11));
    let out = model.forward(&mut g, &p, x, Mode::Train, 0, 0).unwrap();
    let y = Tensor::new([2, 3], vec![1., 0., 1., 0., 1., 0.]).unwrap();
    let (_, lb) = total_loss(&mut g, &out, &y, &cfg).unwrap();
    assert!(lb.l_m_z12 > 0.0 && lb.l_m_out > 0.0);
    assert_eq!(lb.l_total, lb.l_detect);
}

#[test]
fn eval_is_deterministic_and_ensemble_averages_branches() {
    let mut model = Model::<f32>::new(tiny(), VariantKind::Mrm, 3).unwrap();
    let x: Tensor<f32> = random(&[3, 3, 64], 12).cast();
    let a = model.predict(&x).unwrap();
    let b = model.predict(&x).unwrap();
    assert_eq!(a, b);
    let (p1, p2) = (a.select(EvalBranch::Branch1).unwrap(), a.select(EvalBranch::Branch2).unwrap());
    for ((e, u), v) in a.ensemble.data().iter().zip(p1.data()).zip(p2.data()) {
        assert!((e - (u + v) / 2.0).abs() < 1e-7);
    }
    let mut single = Model::<f32>::new(tiny(), VariantKind::LowRs, 3).unwrap();
    assert!(single.predict(&x).unwrap().select(EvalBranch::Branch1).is_err());
}

#[test]
fn cast_to_f64_preserves_predictions() {
    let mut m32 = Model::<f32>::new(tiny(), VariantKind::Mrm, 4).unwrap();
    let mut m64 = m32.cast::<f64>();
    let x = random(&[2, 3, 64], 13);
    let a = m32.predict(&x.cast()).unwrap().ensemble;
    let b = m64.predict(&x).unwrap().ensemble;
    assert!(a.cast::<f64>().max_abs_diff(&b) < 1e-5);
}
