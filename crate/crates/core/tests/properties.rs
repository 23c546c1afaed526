use proptest::prelude::*;

use frmamba::data::{decode_archive, encode_archive, make_split, FieldSnapshot, SensorLayout};
use frmamba::spectral::{dft1d, energy, idft1d, real_part};
use frmamba::ssm::zoh_gain;
use frmamba::traineval::{mae, max_ae};
use frmamba::{Tape, Tensor};

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

fn tensor(shape: &'static [usize]) -> impl Strategy<Value = Tensor> {
    vec_of(shape.iter().product()).prop_map(move |v| Tensor::new(shape, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn broadcast_add_commutes_and_associates(
        a in tensor(&[2, 3, 4]),
        b in tensor(&[4]),
        c in tensor(&[3, 1]),
    ) {
        let tape = Tape::new();
        let (va, vb, vc) = (tape.constant(a), tape.constant(b), tape.constant(c));
        let ab = va.add(vb).unwrap().value();
        let ba = vb.add(va).unwrap().value();
        prop_assert!(ab.bit_eq(&ba));
        let left = va.add(vb).unwrap().add(vc).unwrap().value();
        let right = va.add(vb.add(vc).unwrap()).unwrap().value();
        prop_assert_eq!(left.shape(), &[2, 3, 4]);
        prop_assert!(left.max_abs_diff(&right) < 1e-12);
    }

    #[test]
    fn dft_parseval_linearity_roundtrip(
        (x, y) in (1usize..40).prop_flat_map(|n| (vec_of(n), vec_of(n))),
        alpha in -3.0f64..3.0,
    ) {
        let n = x.len();
        let tx = Tensor::new(&[n], x.clone()).unwrap();
        let sx = dft1d(&tx).unwrap();
        let scale = 1.0 + energy(&tx);
        prop_assert!((energy(&tx) - energy(&sx.coeffs) / n as f64).abs() < 1e-10 * scale);
        prop_assert!(real_part(&idft1d(&sx, n).unwrap()).max_abs_diff(&tx) < 1e-11);

        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + alpha * b).collect();
        let sy = dft1d(&Tensor::new(&[n], y).unwrap()).unwrap();
        let sz = dft1d(&Tensor::new(&[n], z).unwrap()).unwrap();
        for ((p, q), r) in sx.coeffs.cdata().iter().zip(sy.coeffs.cdata()).zip(sz.coeffs.cdata()) {
            prop_assert!((p + q * alpha - r).norm() < 1e-9);
        }
    }

    #[test]
    fn causal_conv_ignores_the_future(
        x in tensor(&[1, 9, 2]),
        k in tensor(&[2, 3]),
        t in 0usize..8,
        bump in 0.5f64..5.0,
    ) {
        let tape = Tape::new();
        let base = tape.constant(x.clone()).conv1d_causal(tape.constant(k.clone())).unwrap().value();
        let mut later = x.to_vec();
        later[(t + 1) * 2] += bump;
        let moved = tape
            .constant(Tensor::new(&[1, 9, 2], later).unwrap())
            .conv1d_causal(tape.constant(k))
            .unwrap()
            .value();
        prop_assert_eq!(&base.data()[..(t + 1) * 2], &moved.data()[..(t + 1) * 2]);
    }

    #[test]
    fn zoh_transition_and_gain_are_bounded(a in -50.0f64..-1e-9, delta in 1e-6f64..5.0) {
        let a_bar = (delta * a).exp();
        prop_assert!(a_bar > 0.0 && a_bar < 1.0);
        let g = zoh_gain(a, delta);
        // (e^{aΔ} − 1)/a lies in (0, Δ] for a < 0.
        prop_assert!(g > 0.0 && g <= delta * (1.0 + 1e-12));
    }

    #[test]
    fn max_error_dominates_mean_error((p, t) in (1usize..50).prop_flat_map(|n| (vec_of(n), vec_of(n)))) {
        let m = mae(&p, &t).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert!(max_ae(&p, &t).unwrap() >= m);
    }

    #[test]
    fn splits_partition_the_steps(k in 1usize..400, a in 1usize..6, b in 1usize..3) {
        let total = 5 * k;
        if let Ok(s) = make_split(total, (a, b)) {
            prop_assert_eq!(s.train.start, 0);
            prop_assert_eq!(s.train.end, s.test.start);
            prop_assert_eq!(s.test.end, total);
            prop_assert_eq!(s.intervals.first().unwrap().start, s.test.start);
            prop_assert_eq!(s.intervals.last().unwrap().end, s.test.end);
            for w in s.intervals.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
                prop_assert_eq!(w[0].len(), w[1].len());
            }
        }
    }

    #[test]
    fn sensor_lattices_fit_the_grid(h in 1usize..64, w in 1usize..64, r in 1usize..8, c in 1usize..8) {
        match SensorLayout::uniform(h, w, r, c) {
            Ok(l) => {
                prop_assert_eq!(l.len(), r * c);
                prop_assert!(l.validate(h, w).is_ok());
            }
            Err(e) => prop_assert!(e.is_config() && (r > h || c > w)),
        }
    }

    #[test]
    fn archives_roundtrip(h in 1usize..6, w in 1usize..6, frames in prop::collection::vec(any::<u64>(), 0..4)) {
        let snaps: Vec<FieldSnapshot> = frames
            .iter()
            .enumerate()
            .map(|(t, &bits)| FieldSnapshot {
                t_index: t,
                field: Tensor::from_fn(&[h, w], |i| f64::from_bits(bits.rotate_left(i as u32) & !(0x7ff << 52)) ),
            })
            .collect();
        let bytes = encode_archive(&snaps).unwrap();
        let back = decode_archive(&bytes).unwrap();
        prop_assert_eq!(back.len(), snaps.len());
        prop_assert_eq!(encode_archive(&back).unwrap(), bytes);
    }
}
