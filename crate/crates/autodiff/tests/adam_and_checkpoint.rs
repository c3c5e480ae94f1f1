use partforge_autodiff::{adam_step, AdamConfig, AdamState, Checkpoint, ParamSet, Tensor};
use proptest::prelude::*;

/// Plain scalar Adam, written independently of the tensor implementation.
fn scalar_adam_trace(w0: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        w -= lr * mh / (vh.sqrt() + eps);
        out.push(w);
    }
    out
}

#[test]
fn ten_steps_on_square_match_scalar_reference() {
    let expected = scalar_adam_trace(1.0, 0.1, 10);
    let mut p = ParamSet::new();
    p.push("w", Tensor::row(&[1.0]));
    let mut s = AdamState::new(&p);
    for (i, want) in expected.iter().enumerate() {
        let g = Tensor::row(&[2.0 * p.tensor(0).item()]);
        adam_step(&mut p, &[g], &mut s, 0.1, &AdamConfig::default()).unwrap();
        let got = p.tensor(0).item();
        assert!((got - want).abs() < 1e-12, "step {i}: {got} vs {want}");
    }
    // The trace moves toward the minimum.
    assert!(p.tensor(0).item() < 1.0);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = ParamSet::new();
    p.push(
        "enc.w0",
        Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, f64::MIN_POSITIVE, 0.0, -0.0]).unwrap(),
    );
    p.push("head.b", Tensor::row(&[42.0]));
    let ck = Checkpoint::new(r#"{"dataset":"abc","version":1}"#, p);
    let path = dir.path().join("f.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), ck.to_bytes());
}

proptest! {
    #[test]
    fn checkpoint_bytes_round_trip(
        tensors in prop::collection::vec(
            (1usize..4, 1usize..5).prop_flat_map(|(r, c)| {
                (Just(vec![r, c]), prop::collection::vec(any::<f64>(), r * c))
            }),
            0..5,
        ),
        meta in ".{0,40}",
    ) {
        let mut p = ParamSet::new();
        for (i, (shape, data)) in tensors.into_iter().enumerate() {
            p.push(format!("t{i}"), Tensor::new(shape, data).unwrap());
        }
        let ck = Checkpoint::new(meta, p);
        let bytes = ck.to_bytes();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}
