mod common;

use common::{tiny_config, uniform};
use frmamba::fno::{fourier_layer, Activation, Fno2d, FnoStack};
use frmamba::model::{fuse, FrMamba, ModelConfig};
use frmamba::nn::ParamStore;
use frmamba::rng::SplitRng;
use frmamba::{Tape, Tensor};

fn stack(modes: usize, width: usize, layers: usize) -> (ParamStore, FnoStack) {
    let mut store = ParamStore::new();
    let s = FnoStack::new(&mut store, "fno", layers, modes, width, true, Activation::Silu, &mut SplitRng::new(5));
    (store, s)
}

#[test]
fn lift_is_pointwise_affine() {
    let (store, s) = stack(2, 3, 1);
    let x = uniform(1, &[2, 2, 4], -1.0, 1.0);
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let v = s.lift(&p, tape.constant(x.clone())).unwrap().value();
    assert_eq!(v.shape(), [4, 4, 3]);
    let w = store.by_name("fno.proj_in.weight").unwrap().data();
    let b = store.by_name("fno.proj_in.bias").unwrap().data();
    for (i, &xi) in x.data().iter().enumerate() {
        for c in 0..3 {
            assert!((v.data()[i * 3 + c] - (xi * w[c] + b[c])).abs() < 1e-15);
        }
    }
}

#[test]
fn shapes_and_time_independence() {
    // B=2, L=5, M=12, d=8, m=4.
    let (store, s) = stack(4, 8, 2);
    let x = uniform(2, &[2, 5, 12], -1.0, 1.0);
    let run = |x: &Tensor| {
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        s.forward(&p, tape.constant(x.clone())).unwrap().value()
    };
    let y = run(&x);
    assert_eq!(y.shape(), [2, 5, 12]);

    // Perturbing one time step changes that step only.
    let mut bumped = x.to_vec();
    bumped[3 * 12 + 7] += 0.5;
    let y2 = run(&Tensor::new(&[2, 5, 12], bumped).unwrap());
    for (i, (a, b)) in y.data().iter().zip(y2.data()).enumerate() {
        let step = (i / 12) % 5;
        let batch = i / 60;
        if (batch, step) == (0, 3) {
            continue;
        }
        assert_eq!(a.to_bits(), b.to_bits(), "element {i}");
    }
    assert!(y.max_abs_diff(&y2) > 0.0);
}

#[test]
fn zero_weights_give_zero_branch_and_identity_refine() {
    let (mut store, s) = stack(3, 4, 2);
    store.zero_all();
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let y = s.forward(&p, tape.constant(uniform(3, &[1, 4, 6], -1.0, 1.0))).unwrap().value();
    assert!(y.data().iter().all(|&v| v == 0.0));

    let mut store = ParamStore::new();
    let f = Fno2d::new(&mut store, "r", 1, 2, (2, 2), 4, true, Activation::Gelu, &mut SplitRng::new(1));
    store.zero_all();
    let u = uniform(4, &[2, 6, 5, 1], -1.0, 1.0);
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let out = f.refine(&p, tape.constant(u.clone())).unwrap().value();
    assert!(out.bit_eq(&u));
}

#[test]
fn constant_signal_sees_only_the_dc_weight() {
    // A signal constant along the mode axis has only a DC component, so the
    // spectral path reduces to multiplication by Re(W_0).
    let (mut store, s) = stack(3, 3, 1);
    let layer = &s.layers[0];
    store.set(layer.local.weight, Tensor::zeros(&[3, 3])).unwrap();
    store.set(layer.local.bias.unwrap(), Tensor::zeros(&[3])).unwrap();
    let re = uniform(6, &[3, 3, 3], -1.0, 1.0);
    store.set(layer.modes_re, re.clone()).unwrap();
    store.set(layer.modes_im, uniform(7, &[3, 3, 3], -1.0, 1.0)).unwrap();
    let c = [0.3, -1.2, 0.7];
    let m = 8;
    let v = Tensor::from_fn(&[1, m, 3], |i| c[i % 3]);
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let out = fourier_layer(&p, tape.constant(v), layer, 3, Activation::Identity).unwrap().value();
    for pos in 0..m {
        for o in 0..3 {
            let want: f64 = (0..3).map(|i| c[i] * re.data()[i * 3 + o]).sum();
            assert!((out.data()[pos * 3 + o] - want).abs() < 1e-13);
        }
    }
}

#[test]
fn fusion_examples() {
    let tape = Tape::new();
    let k = |v: f64| tape.constant(Tensor::full(&[1, 1, 2], v));
    let both = fuse(k(2.0), Some(k(4.0)), k(0.5), k(1.0)).unwrap().value();
    assert_eq!(both.data(), [4.0, 4.0]);
    let temporal = fuse(k(2.0), None, k(0.5), k(1.0)).unwrap().value();
    assert_eq!(temporal.data(), [2.0, 2.0]);
    let closed = fuse(k(2.0), Some(k(4.0)), k(0.0), k(-3.0)).unwrap().value();
    assert_eq!(closed.data(), [-3.0, -3.0]);
}

fn zeroed(cfg: ModelConfig) -> FrMamba {
    let mut model = FrMamba::new(cfg).unwrap();
    model.params.zero_all();
    model
}

#[test]
fn zero_init_blocks_are_identities() {
    for (fno1d, fno2d, prenorm) in [(true, true, false), (false, true, false), (true, false, true)] {
        let cfg = ModelConfig {
            n_layer: 3,
            fno1d,
            fno2d,
            prenorm,
            ..tiny_config()
        };
        let model = zeroed(cfg);
        let e = uniform(8, &[2, 5, 4], -3.0, 3.0);
        let tape = Tape::new();
        let p = model.params.bind(&tape, false);
        for i in 0..3 {
            let out = model.block_forward(&p, i, tape.constant(e.clone())).unwrap().value();
            assert!(out.bit_eq(&e), "block {i}");
        }
        let y = model.forward(&uniform(9, &[2, 5, 3], -1.0, 1.0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn head_shape_and_last_step_decoding() {
    let cfg = ModelConfig {
        height: 4,
        width: 5,
        ..tiny_config()
    };
    let model = FrMamba::new(cfg).unwrap();
    let tape = Tape::new();
    let p = model.params.bind(&tape, false);
    let u = model.head(&p, tape.constant(uniform(1, &[2, 3, 4], -1.0, 1.0))).unwrap();
    assert_eq!(u.shape(), [2, 3, 4, 5, 1]);

    let x = uniform(2, &[2, 6, 3], -1.0, 1.0);
    let full = model.forward(&x).unwrap();
    let last = model.forward_last(&x).unwrap();
    assert_eq!(last.shape(), [2, 1, 4, 5, 1]);
    let n = 20;
    for b in 0..2 {
        let want = &full.data()[(b * 6 + 5) * n..][..n];
        assert_eq!(&last.data()[b * n..][..n], want);
    }
}

#[test]
fn outputs_are_causal_in_time() {
    let model = FrMamba::new(tiny_config()).unwrap();
    let x = uniform(3, &[1, 7, 3], -1.0, 1.0);
    let mut later = x.to_vec();
    later[4 * 3 + 1] += 1.0;
    let a = model.forward(&x).unwrap();
    let b = model.forward(&Tensor::new(&[1, 7, 3], later).unwrap()).unwrap();
    let n = 16;
    assert_eq!(&a.data()[..4 * n], &b.data()[..4 * n]);
    assert!(a.max_abs_diff(&b) > 0.0);
}

#[test]
fn construction_is_deterministic() {
    let x = uniform(4, &[2, 5, 3], -1.0, 1.0);
    let a = FrMamba::new(tiny_config()).unwrap();
    let b = FrMamba::new(tiny_config()).unwrap();
    assert!(a.forward(&x).unwrap().bit_eq(&b.forward(&x).unwrap()));
    let c = FrMamba::new(ModelConfig { seed: 1, ..tiny_config() }).unwrap();
    assert!(!a.forward(&x).unwrap().bit_eq(&c.forward(&x).unwrap()));
}

#[test]
fn parameter_count_matches_closed_form() {
    let variants = [
        tiny_config(),
        ModelConfig::default(),
        ModelConfig { fno1d: false, ..Default::default() },
        ModelConfig { fno2d: false, bias: false, ..tiny_config() },
        ModelConfig { prenorm: true, n_layer: 3, ..tiny_config() },
    ];
    for cfg in variants {
        let model = FrMamba::new(cfg.clone()).unwrap();
        let counted: usize = model.params.tensors().map(|t| t.numel()).sum();
        assert_eq!(counted, FrMamba::param_count(&cfg), "{cfg:?}");
    }
    // Hand count for the tiny model: stem 16, SSM 96, FNO1d 97, head 352,
    // refine 161.
    assert_eq!(FrMamba::param_count(&tiny_config()), 16 + 96 + 97 + 352 + 161);
}
