use partforge::geometry::{recenter, Frame, PointCloud};
use partforge::losses::{contrastive_tape, gmm_nll_tape, placement_loss_tape, MARGIN};
use partforge::nn::{cloud_tensor, EmbeddingNet, EncoderConfig, NetConfig, NetError, PlacementNet, RetrievalNet};
use partforge_autodiff::{check_gradients, ops, GradCheckConfig, ParamSet, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> NetConfig {
    NetConfig {
        encoder: EncoderConfig {
            point_mlp: vec![8, 12],
            post_mlp: vec![10],
        },
        n_points: 24,
        embed_dim: 5,
        n_modes: 3,
        sigma_cap: 0.05,
        placement_head: vec![9],
    }
}

fn small() -> NetConfig {
    NetConfig {
        n_points: 128,
        ..NetConfig::compact()
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    PointCloud::object(pts).unwrap()
}

fn centered_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    recenter(&random_cloud(rng, n)).0
}

fn shuffled(rng: &mut ChaCha8Rng, pc: &PointCloud) -> PointCloud {
    let mut pts = pc.points().to_vec();
    pts.shuffle(rng);
    PointCloud::new(pts, pc.frame()).unwrap()
}

fn tensor<'a>(p: &'a ParamSet, name: &str) -> &'a Tensor {
    p.tensor(p.index_of(name).unwrap_or_else(|| panic!("missing {name}")))
}

fn oracle_dense(p: &ParamSet, name: &str, x: &Tensor) -> Tensor {
    ops::add(
        &ops::matmul(x, tensor(p, &format!("{name}.w"))).unwrap(),
        tensor(p, &format!("{name}.b")),
    )
    .unwrap()
}

/// Encoder forward pass written directly against the eager kernels.
fn oracle_encoder(p: &ParamSet, prefix: &str, cfg: &EncoderConfig, x: &Tensor) -> Tensor {
    let mut h = x.clone();
    for i in 0..cfg.point_mlp.len() {
        h = ops::relu(&oracle_dense(p, &format!("{prefix}.point{i}"), &h));
    }
    h = ops::max_over_axis(&h, 0).unwrap().0;
    for i in 0..cfg.post_mlp.len() {
        h = ops::relu(&oracle_dense(p, &format!("{prefix}.post{i}"), &h));
    }
    h
}

#[test]
fn embedding_is_permutation_invariant_and_matches_oracle() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = EmbeddingNet::new(&cfg, 7);
    for _ in 0..10 {
        let c = centered_cloud(&mut rng, cfg.n_points);
        let e = f.embed(&c).unwrap();
        assert_eq!(e.len(), 50);
        assert_eq!(f.embed(&shuffled(&mut rng, &c)).unwrap(), e);
        let x = cloud_tensor(&c, cfg.n_points).unwrap();
        let feat = oracle_encoder(f.params(), "f.enc", &cfg.encoder, &x);
        let oracle = oracle_dense(f.params(), "f.head", &feat);
        assert_eq!(oracle.data(), &e[..]);
    }
}

#[test]
fn duplicated_point_leaves_outputs_unchanged() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = EmbeddingNet::new(&cfg, 3);
    let c = centered_cloud(&mut rng, cfg.n_points);
    // Replace the last point by a copy of the first: the multiset maximum of
    // features over {p0, p0, ...} equals that over the original minus pN.
    let mut pts = c.points().to_vec();
    let dropped = PointCloud::new(pts[..cfg.n_points - 1].to_vec(), Frame::Centered);
    pts[cfg.n_points - 1] = pts[0];
    let dup = PointCloud::new(pts, Frame::Centered).unwrap();
    let x = cloud_tensor(&dup, cfg.n_points).unwrap();
    let oracle_feat = oracle_encoder(
        f.params(),
        "f.enc",
        &cfg.encoder,
        &cloud_tensor(&dropped.unwrap(), cfg.n_points - 1).unwrap(),
    );
    let feat = oracle_encoder(f.params(), "f.enc", &cfg.encoder, &x);
    assert_eq!(feat, oracle_feat);
}

#[test]
fn zero_parameters_give_zero_outputs() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = centered_cloud(&mut rng, cfg.n_points);
    assert!(EmbeddingNet::zeros(&cfg).embed(&c).unwrap().iter().all(|&v| v == 0.0));

    let mut h = PlacementNet::new(&cfg, 5);
    let (_, out) = h.head();
    for i in [out.weight_index(), out.bias_index()] {
        h.params_mut().tensor_mut(i).data_mut().fill(0.0);
    }
    let a = random_cloud(&mut rng, cfg.n_points);
    assert_eq!(h.place(&a, &c).unwrap(), [0.0, 0.0, 0.0]);
}

#[test]
fn mixture_head_invariants_and_oracle() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = RetrievalNet::new(&cfg, 11);
    for _ in 0..50 {
        let x = random_cloud(&mut rng, cfg.n_points);
        let m = g.predict(&x).unwrap();
        assert_eq!((m.n_modes(), m.dim()), (8, 50));
        assert!((m.phi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(m.sigma.iter().flatten().all(|&s| s > 0.0 && s <= 0.05));
        assert_eq!(g.predict(&shuffled(&mut rng, &x)).unwrap(), m);

        let feat = oracle_encoder(
            g.params(),
            "g.enc",
            &cfg.encoder,
            &cloud_tensor(&x, cfg.n_points).unwrap(),
        );
        let logits = oracle_dense(g.params(), "g.phi", &feat);
        assert_eq!(ops::softmax(&logits).unwrap().data(), &m.phi[..]);
        let mu = oracle_dense(g.params(), "g.mu", &feat);
        assert_eq!(mu.data(), &m.mu.concat()[..]);
        let sigma = ops::clamp_max(&ops::exp(&oracle_dense(g.params(), "g.sigma", &feat)), 0.05);
        assert_eq!(sigma.data(), &m.sigma.concat()[..]);
    }
}

#[test]
fn placement_is_permutation_invariant_and_matches_oracle() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = PlacementNet::new(&cfg, 13);
    for _ in 0..10 {
        let a = random_cloud(&mut rng, cfg.n_points);
        let c = centered_cloud(&mut rng, cfg.n_points);
        let p = h.place(&a, &c).unwrap();
        assert_eq!(h.place(&shuffled(&mut rng, &a), &shuffled(&mut rng, &c)).unwrap(), p);

        let fa = oracle_encoder(
            h.params(),
            "h.asm",
            &cfg.encoder,
            &cloud_tensor(&a, cfg.n_points).unwrap(),
        );
        let fc = oracle_encoder(
            h.params(),
            "h.cmp",
            &cfg.encoder,
            &cloud_tensor(&c, cfg.n_points).unwrap(),
        );
        let mut z = ops::concat(&[&fa, &fc], 1).unwrap();
        for i in 0..cfg.placement_head.len() {
            z = ops::relu(&oracle_dense(h.params(), &format!("h.mlp{i}"), &z));
        }
        let out = oracle_dense(h.params(), "h.out", &z);
        assert_eq!(out.data(), &p[..]);
    }
}

#[test]
fn wrong_point_count_is_rejected() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = centered_cloud(&mut rng, cfg.n_points + 1);
    assert!(matches!(
        EmbeddingNet::new(&cfg, 1).embed(&c),
        Err(NetError::PointCount {
            expected: 128,
            got: 129
        })
    ));
    assert!(RetrievalNet::new(&cfg, 1).predict(&c).is_err());
    let ok = centered_cloud(&mut rng, cfg.n_points);
    assert!(PlacementNet::new(&cfg, 1).place(&c, &ok).is_err());
    assert!(PlacementNet::new(&cfg, 1).place(&ok, &c).is_err());
}

#[test]
fn checkpoints_round_trip() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let f = EmbeddingNet::new(&cfg, 1);
    let path = dir.path().join("f.ckpt");
    f.save(&path, "unit").unwrap();
    let (back, meta) = EmbeddingNet::load(&path).unwrap();
    assert_eq!(back, f);
    assert_eq!(meta.stamp, "unit");
    assert!(RetrievalNet::load(&path).is_err());
    let wrong = RetrievalNet::new(&cfg, 2);
    assert!(EmbeddingNet::from_params(&cfg, wrong.params().clone()).is_err());
}

fn inputs(rng: &mut ChaCha8Rng, n: usize) -> (Tensor, Tensor, Tensor) {
    let x = cloud_tensor(&random_cloud(rng, n), n).unwrap();
    let y = cloud_tensor(&centered_cloud(rng, n), n).unwrap();
    let z = cloud_tensor(&centered_cloud(rng, n), n).unwrap();
    (x, y, z)
}

/// Gradient checks of every network through the losses they are trained
/// with, on tiny configurations so every parameter entry is checked.
#[test]
fn full_network_gradients_match_finite_differences() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let gc = GradCheckConfig::default();
    for instance in 0..20 {
        let (x, y, z) = inputs(&mut rng, cfg.n_points);
        let target = Tensor::row(&[rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.1]);
        let f = EmbeddingNet::new(&cfg, 100 + instance);
        let g = RetrievalNet::new(&cfg, 200 + instance);
        let h = PlacementNet::new(&cfg, 300 + instance);

        // f alone, projected onto random weights.
        let proj = Tensor::new(
            vec![cfg.embed_dim, 1],
            (0..cfg.embed_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let r = check_gradients(f.params(), &gc, |tape, p| {
            let xv = tape.constant(y.clone());
            let e = f.forward(tape, p, xv).map_err(to_tensor_err)?;
            let w = tape.constant(proj.clone());
            tape.matmul(e, w)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "f #{instance}: {r:?}");

        // g with f frozen: energy of a fixed embedding.
        let ey = f
            .embed(
                &PointCloud::new(
                    y.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
                    Frame::Centered,
                )
                .unwrap(),
            )
            .unwrap();
        let r = check_gradients(g.params(), &gc, |tape, p| {
            let xv = tape.constant(x.clone());
            let m = g.forward(tape, p, xv).map_err(to_tensor_err)?;
            let yv = tape.constant(Tensor::row(&ey));
            gmm_nll_tape(tape, &m, yv)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "g #{instance}: {r:?}");

        // Joint contrastive objective with respect to f's parameters. The
        // margin is set from the unperturbed energies so the hinge stays active
        // without inflating the loss magnitude.
        let mix = g
            .predict(&PointCloud::new(x.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect(), Frame::Object).unwrap())
            .unwrap();
        let ez = f
            .embed(
                &PointCloud::new(
                    z.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
                    Frame::Centered,
                )
                .unwrap(),
            )
            .unwrap();
        let margin = (mix.nll(&ez).unwrap() - mix.nll(&ey).unwrap()).max(0.0) + MARGIN;
        let r = check_gradients(f.params(), &gc, |tape, p| {
            let gp = g.params().bind_frozen(tape);
            let xv = tape.constant(x.clone());
            let m = g.forward(tape, &gp, xv).map_err(to_tensor_err)?;
            let yv = tape.constant(y.clone());
            let zv = tape.constant(z.clone());
            let fy = f.forward(tape, p, yv).map_err(to_tensor_err)?;
            let fz = f.forward(tape, p, zv).map_err(to_tensor_err)?;
            let ep = gmm_nll_tape(tape, &m, fy)?;
            let en = gmm_nll_tape(tape, &m, fz)?;
            contrastive_tape(tape, ep, en, margin)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "joint #{instance}: {r:?}");

        let r = check_gradients(h.params(), &gc, |tape, p| {
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let out = h.forward(tape, p, xv, yv).map_err(to_tensor_err)?;
            let t = tape.constant(target.clone());
            placement_loss_tape(tape, out, t)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "h #{instance}: {r:?}");
    }
}

fn to_tensor_err(e: NetError) -> partforge_autodiff::TensorError {
    match e {
        NetError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

#[test]
fn initial_outputs_are_finite_on_unit_ball_inputs() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (f, g, h) = (
        EmbeddingNet::new(&cfg, 1),
        RetrievalNet::new(&cfg, 2),
        PlacementNet::new(&cfg, 3),
    );
    for _ in 0..10 {
        let x = random_cloud(&mut rng, cfg.n_points);
        let c = centered_cloud(&mut rng, cfg.n_points);
        assert!(f.embed(&c).unwrap().iter().all(|v| v.is_finite()));
        let m = g.predict(&x).unwrap();
        assert!(m.mu.iter().flatten().all(|v| v.is_finite()));
        assert!(h.place(&x, &c).unwrap().iter().all(|v| v.is_finite()));
    }
}
