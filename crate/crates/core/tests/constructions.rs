use precise_ls::autodiff::{loss_and_grad, NamedTensors};
use precise_ls::constructions::*;
use precise_ls::models::{baseconv_layer_forward, checkpoint, BaseConvLayerParams, ReadRows, Supervised};
use precise_ls::numerics::{gaussian, ops};
use precise_ls::tasks::*;
use precise_ls::{Error, Scalar, SeededRng, Tensor};

fn data<T: Scalar>(rng: &mut SeededRng, n: usize, d: usize) -> Tensor<T> {
    gaussian(rng, &[n, d], 1.0)
}

fn direct_read<T: Scalar>(u: &Tensor<T>, i: usize, j: usize, a: usize, b: usize) -> Tensor<T> {
    let mut y = u.clone();
    for c in a..b {
        y.set2(j, c, u.at2(i, c));
    }
    y
}

#[test]
fn read_copies_a_row() {
    let c = build_read(0, 2, 0, 2, 3, 2).unwrap();
    let u = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
    let y = c.predict(&c.params, &u).unwrap();
    assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0]);
    assert!(c.spec.causal);
    assert!(!build_read(2, 0, 0, 2, 3, 2).unwrap().spec.causal);
}

#[test]
fn read_leaves_other_rows_bit_identical() {
    let mut rng = SeededRng::new(1, 0);
    for (i, j, a, b) in [(1, 4, 0, 3), (4, 1, 1, 3), (0, 5, 2, 3), (5, 0, 0, 1)] {
        let c = build_read(i, j, a, b, 6, 3).unwrap();
        let p = c.params_as::<f32>();
        for _ in 0..50 {
            let u: Tensor<f32> = data(&mut rng, 6, 3);
            let y = c.predict(&p, &u).unwrap();
            for r in (0..6).filter(|&r| r != j) {
                assert_eq!(y.row(r), u.row(r));
            }
            for col in (0..3).filter(|c| !(a..b).contains(c)) {
                assert_eq!(y.at2(j, col), u.at2(j, col));
            }
        }
    }
}

#[test]
fn read_matches_direct_within_roundoff() {
    let (n, d) = (10, 4);
    let mut rng = SeededRng::new(2, 0);
    for _ in 0..10 {
        let i = rng.below(n);
        let j = (i + 1 + rng.below(n - 1)) % n;
        let c = build_read(i, j, 0, d, n, d).unwrap();
        let p = c.params_as::<f32>();
        for _ in 0..100 {
            let u: Tensor<f32> = data(&mut rng, n, d);
            let y = c.predict(&p, &u).unwrap();
            let scale = u.max_abs();
            assert!(y.max_abs_diff(&direct_read(&u, i, j, 0, d)) <= 4.0 * f32::EPSILON as f64 * scale);
        }
    }
}

#[test]
fn read_rejects_bad_indices() {
    assert!(matches!(build_read(1, 1, 0, 2, 4, 2), Err(Error::Config(_))));
    assert!(matches!(build_read(0, 4, 0, 2, 4, 2), Err(Error::Config(_))));
    assert!(matches!(build_read(0, 1, 2, 2, 4, 2), Err(Error::Config(_))));
}

#[test]
fn linear_identity_and_scaling() {
    let mut rng = SeededRng::new(3, 0);
    let u: Tensor<f64> = data(&mut rng, 5, 3);
    let eye = build_linear(&Tensor::eye(3), 5).unwrap();
    assert_eq!(eye.predict(&eye.params, &u).unwrap(), u);
    let two = build_linear(&Tensor::<f64>::eye(3).map(|v| 2.0 * v), 5).unwrap();
    assert_eq!(two.predict(&two.params, &u).unwrap(), u.map(|v| 2.0 * v));
}

#[test]
fn linear_matches_matmul() {
    let mut rng = SeededRng::new(4, 0);
    let h: Tensor<f64> = gaussian(&mut rng, &[4, 2], 3f64.sqrt());
    let c = build_linear(&h, 8).unwrap();
    let p = c.params_as::<f32>();
    let hf = h.cast::<f32>();
    for _ in 0..1000 {
        let u: Tensor<f32> = data(&mut rng, 8, 4);
        let y = c.predict(&p, &u).unwrap();
        let want = ops::matmul(&u, &hf).unwrap();
        let scale = u.max_abs() * hf.max_abs() * 4.0;
        assert!(y.max_abs_diff(&want) <= 4.0 * f32::EPSILON as f64 * scale);
    }
}

#[test]
fn multiply_examples() {
    let c = build_multiply(0, 2, 2, 1, 4).unwrap();
    let row = Tensor::<f64>::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]);
    assert_eq!(c.predict(&c.params, &row).unwrap().data(), &[3.0, 8.0]);

    let sq = build_multiply(1, 1, 2, 1, 4).unwrap();
    assert_eq!(sq.predict(&sq.params, &row).unwrap().data(), &[4.0, 9.0]);

    // The same weights driven through the bare layer put the product in the
    // designated channels.
    let w = |name: &str| c.params.get(&format!("l0.{name}")).unwrap().clone();
    let p = BaseConvLayerParams {
        w_gate: w("w_gate"),
        b_gate: w("b_gate"),
        w_in: w("w_in"),
        b_in: w("b_in"),
        h: w("h"),
        b_conv: w("b_conv"),
        w_out: w("w_out"),
        b_out: w("b_out"),
    };
    let u = Tensor::<f64>::from_rows(&[vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0]]);
    let y = baseconv_layer_forward(&p, &u).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0, 0.0, 0.0, 3.0, 8.0]);
}

#[test]
fn multiply_matches_direct() {
    let c = build_multiply(0, 3, 3, 6, 6).unwrap();
    let task = Task::Multiply {
        n: 6,
        d: 6,
        a: 0,
        b: 3,
        d_out: 3,
    };
    let r = verify_construction::<f32>(&c, &SeededRng::new(5, 0), 1000, |rng| {
        let u = data(rng, 6, 6);
        let y = primitive_target(&task, &u)?;
        Ok((u, y))
    })
    .unwrap();
    assert!(r.mse <= 1e-12, "{r:?}");
    assert!(r.max_abs_err <= 4.0 * f32::EPSILON as f64 * 25.0, "{r:?}");
    assert!(matches!(build_multiply(3, 0, 2, 4, 4), Err(Error::Config(_))));
}

#[test]
fn verifier_self_check_is_zero() {
    let r = verify_batched::<f64>(
        &SeededRng::new(0, 0),
        300,
        |rng| {
            let u = data(rng, 3, 2);
            Ok((u.clone(), u))
        },
        |u| Ok(u.clone()),
    )
    .unwrap();
    assert_eq!((r.mse, r.max_abs_err, r.samples), (0.0, 0.0, 300));
}

fn shaped_inst<T: Scalar>(seed: u64) -> LeastSquaresInstance<T> {
    sample_instance(&DistributionSpec::shaped(20, 5), &mut SeededRng::new(seed, 0)).unwrap()
}

#[test]
fn noncausal_gd_one_step_single() {
    let c = build_gd_noncausal(0.04, 1, 20, 5, false).unwrap();
    assert_eq!(c.spec.layers, 3);
    let p = c.params_as::<f32>();
    for seed in 0..50 {
        let inst = shaped_inst::<f32>(seed);
        let y = c.run(&p, &inst).unwrap();
        let want = gd_oracle(&inst.a, &inst.b, &inst.x0, 0.04, 1).unwrap();
        assert!(y.cast::<f64>().max_abs_diff(&want.cast()) <= 1e-6, "seed {seed}");
    }
}

#[test]
fn zero_step_returns_start_exactly() {
    let c = build_gd_noncausal(0.0, 4, 20, 5, false).unwrap();
    let p = c.params_as::<f32>();
    let inst = shaped_inst::<f32>(3);
    let y = c.run(&p, &inst).unwrap();
    assert_eq!(y.data(), inst.x0.data());
}

#[test]
fn noncausal_trajectory_tracks_oracle() {
    let k = 10;
    let c = build_gd_noncausal(0.04, k, 20, 5, false).unwrap();
    let p = c.params_as::<f32>();
    for seed in 0..10 {
        let inst = shaped_inst::<f32>(seed);
        let its = c.iterates(&p, &c.prompt(&inst).unwrap()).unwrap();
        assert_eq!(its.len(), k + 1);
        let scale = inst.x0.max_abs().max(inst.x_star.max_abs());
        let mut t = 0;
        gd_trajectory(&inst.a, &inst.b, &inst.x0, 0.04, k, |step, x| {
            let err = its[step].cast::<f64>().max_abs_diff(&x.cast());
            assert!(
                err <= (step as f64).max(1.0) * 1e-5 * scale,
                "seed {seed} step {step}: {err:e}"
            );
            t += 1;
        })
        .unwrap();
        assert_eq!(t, k + 1);
    }
}

#[test]
fn normalized_flag_divides_step() {
    let raw = build_gd_noncausal(0.04, 2, 20, 5, true).unwrap();
    let inst = shaped_inst::<f64>(1);
    let y = raw.run(&raw.params, &inst).unwrap();
    let want = gd_oracle(&inst.a, &inst.b, &inst.x0, 0.04 / 20.0, 2).unwrap();
    assert!(y.max_abs_diff(&want) < 1e-13);
}

#[test]
fn causal_gram_block_after_preparation() {
    let c = build_gd_causal(0.04, 1, 20, 5, false).unwrap();
    let gram_blk = c.block("gram").unwrap().clone();
    let p = c.params_as::<f32>();
    for seed in 0..20 {
        let inst = shaped_inst::<f32>(seed);
        let states = precise_ls::models::residual_states(&c.spec, &p, &c.prompt(&inst).unwrap()).unwrap();
        let s = &states[2];
        let (n, e) = (s.dims()[1], s.dims()[2]);
        let row = &s.data()[(n - 1) * e..n * e];
        let a = inst.a.cast::<f64>();
        for pq in 0..25 {
            let (pi, qi) = (pq / 5, pq % 5);
            let (mut exact, mut scale) = (0.0, 0.0);
            for i in 0..20 {
                let v = a.at2(i, pi) * a.at2(i, qi);
                exact += v;
                scale += v.abs();
            }
            let got = row[gram_blk.start + pq] as f64;
            assert!(
                (got - exact).abs() <= 8.0 * f32::EPSILON as f64 * scale,
                "seed {seed} ({pi},{qi})"
            );
        }
    }
}

#[test]
fn causal_gd_one_step_single() {
    let c = build_gd_causal(0.04, 1, 20, 5, false).unwrap();
    assert_eq!(c.spec.layers, 3);
    let p = c.params_as::<f32>();
    for seed in 0..50 {
        let inst = shaped_inst::<f32>(seed);
        let y = c.run(&p, &inst).unwrap();
        let want = gd_oracle(&inst.a, &inst.b, &inst.x0, 0.04, 1).unwrap();
        assert!(y.cast::<f64>().max_abs_diff(&want.cast()) <= 1e-5, "seed {seed}");
    }
}

#[test]
fn causal_construction_respects_causality() {
    let c = build_gd_causal(0.04, 3, 6, 2, false).unwrap();
    let inst = sample_instance::<f64>(&DistributionSpec::shaped(6, 2), &mut SeededRng::new(0, 0)).unwrap();
    let u = c.prompt(&inst).unwrap();
    let base = precise_ls::models::predict(&c.spec, &c.params, &u).unwrap();
    for t in 0..u.rows() {
        let mut v = u.clone();
        v.set2(t, 0, v.at2(t, 0) + 0.37);
        let out = precise_ls::models::predict(&c.spec, &c.params, &v).unwrap();
        for r in 0..t {
            assert_eq!(out.row(r), base.row(r), "perturbing {t} moved {r}");
        }
    }
}

#[test]
fn gradient_model_reads_out_gradient() {
    for normalized in [false, true] {
        let c = build_gradient_model(20, 5, normalized).unwrap();
        assert_eq!(c.spec.layers, 3);
        for seed in 0..20 {
            let inst = shaped_inst::<f64>(seed);
            let y = c.run(&c.params, &inst).unwrap();
            let want = grad_oracle(&inst.a, &inst.b, &inst.x0, normalized).unwrap();
            assert!(y.max_abs_diff(&want) <= 1e-12 * want.max_abs().max(1.0));
        }
    }
}

/// Every construction in double precision against its oracle on 10⁴ inputs.
#[test]
fn double_precision_exactness() {
    let root = SeededRng::new(77, 0);
    let lim = 1e-12;
    let (n, d) = (8, 4);

    let read = build_read(5, 2, 0, d, n, d).unwrap();
    let r = verify_construction::<f64>(&read, &root, 10_000, |rng| {
        let u = data(rng, n, d);
        Ok((u.clone(), direct_read(&u, 5, 2, 0, d)))
    })
    .unwrap();
    assert!(r.max_abs_err <= lim, "read {r:?}");

    let h: Tensor<f64> = gaussian(&mut SeededRng::new(1, 1), &[d, 2], 3f64.sqrt());
    let lin = build_linear(&h, n).unwrap();
    let r = verify_construction::<f64>(&lin, &root, 10_000, |rng| {
        let u = data(rng, n, d);
        let y = ops::matmul(&u, &h)?;
        Ok((u, y))
    })
    .unwrap();
    assert!(r.max_abs_err <= lim, "linear {r:?}");

    let dist = DistributionSpec::shaped(n, d);
    for c in [
        build_gd_noncausal(0.04, 3, n, d, false).unwrap(),
        build_gd_causal(0.04, 3, n, d, false).unwrap(),
    ] {
        let r = verify_construction::<f64>(&c, &root, 10_000, |rng| {
            let inst = sample_instance::<f64>(&dist, rng)?;
            let y = gd_oracle(&inst.a, &inst.b, &inst.x0, 0.04, 3)?.reshape(&[1, d])?;
            Ok((c.prompt(&inst)?, y))
        })
        .unwrap();
        assert!(r.max_abs_err <= lim, "{:?} {r:?}", c.kind);
    }
}

/// At exact Multiply weights the loss is identically zero, so the averaged
/// minibatch gradient is pure roundoff and shrinks like `1/√S`.
#[test]
fn multiply_weights_have_zero_population_gradient() {
    let (n, d) = (4, 4);
    let c = build_multiply(0, 2, 2, n, d).unwrap();
    let task = Task::Multiply {
        n,
        d,
        a: 0,
        b: 2,
        d_out: 2,
    };
    let p = c.params_as::<f32>();
    let avg_grad_norm = |samples: usize, seed: u64| {
        let batch = 1000;
        let mut total: Option<NamedTensors<f64>> = None;
        for s in 0..samples / batch {
            let mut rng = SeededRng::new(seed, s as u64);
            let mut inputs = Vec::new();
            let mut targets = Vec::new();
            for _ in 0..batch {
                let u: Tensor<f32> = data(&mut rng, n, d);
                targets.extend_from_slice(primitive_target(&task, &u).unwrap().data());
                inputs.extend_from_slice(u.data());
            }
            let inputs = Tensor::new(&[batch, n, d], inputs).unwrap();
            let targets = Tensor::new(&[batch, n, 2], targets).unwrap();
            let obj = Supervised {
                spec: &c.spec,
                inputs: &inputs,
                targets: &targets,
                rows: ReadRows::All,
                cols: 2,
            };
            let (_, g) = loss_and_grad(&obj, &p).unwrap();
            let g = g.cast::<f64>();
            total = Some(match total {
                None => g,
                Some(t) => t.add(&g).unwrap(),
            });
        }
        total.unwrap().norm2() / (samples / batch) as f64
    };
    let small = 1_000;
    let c_fit = avg_grad_norm(small, 1) * (small as f64).sqrt();
    let big = 100_000;
    let norm = avg_grad_norm(big, 2);
    assert!(
        norm <= c_fit.max(f32::EPSILON as f64) / (big as f64).sqrt(),
        "{norm:e} vs c={c_fit:e}"
    );
}

/// Max abs error of the k-iterate stack against the oracle grows at most
/// linearly in depth (log-log slope of the running maximum ≤ 1).
#[test]
fn roundoff_grows_at_most_linearly_with_depth() {
    let k = 100;
    let c = build_gd_noncausal(0.04, k, 20, 5, false).unwrap();
    let p = c.params_as::<f32>();
    let mut worst = vec![0.0f64; k + 1];
    for seed in 0..10 {
        let inst = shaped_inst::<f32>(seed);
        let its = c.iterates(&p, &c.prompt(&inst).unwrap()).unwrap();
        let inst64 = inst.cast::<f64>();
        gd_trajectory(&inst64.a, &inst64.b, &inst64.x0, inst.eta as f32 as f64, k, |t, x| {
            worst[t] = worst[t].max(its[t].cast::<f64>().max_abs_diff(x));
        })
        .unwrap();
    }
    let mut run = 0.0f64;
    let pts: Vec<(f64, f64)> = (1..=k)
        .map(|t| {
            run = run.max(worst[t]);
            ((t as f64).ln(), run.max(1e-30).ln())
        })
        .collect();
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = num / den;
    assert!(slope <= 1.0, "slope {slope}, errors {:?}", &worst[..10]);
    assert!(run < 1e-4);
}

#[test]
fn capacity_and_widening() {
    let spec = ConstructionSpec {
        construction: ConstructionKind::Read {
            n: 5,
            d: 3,
            i: 1,
            j: 3,
            a: None,
            b: None,
        },
        emb: Some(6),
        dtype: precise_ls::DType::Double,
    };
    assert!(matches!(
        build(&spec),
        Err(Error::Capacity {
            required: 8,
            available: 6
        })
    ));
    let wide = build(&ConstructionSpec {
        emb: Some(13),
        ..spec.clone()
    })
    .unwrap();
    assert_eq!(wide.spec.emb, 13);
    let narrow = build(&ConstructionSpec { emb: None, ..spec }).unwrap();
    let u: Tensor<f64> = data(&mut SeededRng::new(0, 0), 5, 3);
    assert_eq!(
        wide.predict(&wide.params, &u).unwrap(),
        narrow.predict(&narrow.params, &u).unwrap()
    );

    let gd = ConstructionSpec {
        construction: ConstructionKind::GdCausal {
            n: 6,
            d: 2,
            eta: 0.04,
            k: 2,
            normalized: false,
        },
        emb: Some(40),
        dtype: precise_ls::DType::Single,
    };
    let w = build(&gd).unwrap();
    let inst = sample_instance::<f64>(&DistributionSpec::shaped(6, 2), &mut SeededRng::new(0, 0)).unwrap();
    let y = w.run(&w.params, &inst).unwrap();
    let want = gd_oracle(&inst.a, &inst.b, &inst.x0, 0.04, 2).unwrap();
    assert!(y.max_abs_diff(&want) < 1e-13);
    let json = serde_json::to_string(&gd).unwrap();
    assert_eq!(serde_json::from_str::<ConstructionSpec>(&json).unwrap(), gd);
}

#[test]
fn constructions_export_as_checkpoints() {
    let c = build_gd_noncausal(0.04, 2, 20, 5, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gd.pls");
    checkpoint::save(&path, &c.params_as::<f32>()).unwrap();
    let back = checkpoint::load::<f32>(&path).unwrap();
    let inst = shaped_inst::<f32>(0);
    let u = c.prompt(&inst).unwrap();
    assert_eq!(
        c.predict(&back, &u).unwrap(),
        c.predict(&c.params_as::<f32>(), &u).unwrap()
    );
    assert!(c.layout_table().contains("resid"));
}
