mod common;

use common::{houston_param_oracle, random_tensor, rng};
use dcmnet::encoders::{EncoderConfig, EncoderSpec, Encoders, ProjectorSpec, Stream};
use dcmnet::model::{Dcmnet, ModelConfig};
use dcmnet::numerics::{finite_diff_grad, max_relative_error, ParamStore, Tape, Tensor};
use dcmnet::Error;
use proptest::prelude::*;

fn build(cfg: &EncoderConfig, c: usize, s: usize) -> (ParamStore, Encoders) {
    let spec = EncoderSpec::build(cfg, s).unwrap();
    let proj = ProjectorSpec::build(&spec, c, s, &[0, 1, 2]).unwrap();
    let mut store = ParamStore::new();
    let enc = Encoders::new(&mut store, spec, proj, &mut rng(3));
    (store, enc)
}

fn small() -> EncoderConfig {
    EncoderConfig {
        bands: 6,
        components: 4,
        patch: 9,
        lidar_channels: 2,
        hsi_channels: [2, 2, 2],
        lidar_features: [2, 3, 3],
    }
}

#[test]
fn houston_level_shapes() {
    let cfg = ModelConfig::houston2013().encoder;
    let (store, enc) = build(&cfg, 128, 3);
    let mut r = rng(1);
    let hsi = random_tensor(&[30, 11, 11], &mut r);
    let lidar = random_tensor(&[1, 11, 11], &mut r);
    let mut tape = Tape::new();
    let vars = store.register(&mut tape, false);
    let h = tape.constant(&hsi);
    let l = tape.constant(&lidar);
    let fh = enc.encode_hsi(&mut tape, h, &vars).unwrap();
    let fl = enc.encode_lidar(&mut tape, l, &vars).unwrap();
    let shapes_h: Vec<&[usize]> = fh.iter().map(|&v| tape.shape(v)).collect();
    assert_eq!(
        shapes_h,
        vec![&[8, 22, 9, 9][..], &[16, 16, 7, 7], &[32, 12, 5, 5]]
    );
    let shapes_l: Vec<&[usize]> = fl.iter().map(|&v| tape.shape(v)).collect();
    assert_eq!(shapes_l, vec![&[64, 9, 9][..], &[128, 7, 7], &[128, 3, 3]]);
    for level in 0..3 {
        let ph = enc
            .project(&mut tape, fh[level], level, Stream::Hsi, &vars)
            .unwrap();
        let pl = enc
            .project(&mut tape, fl[level], level, Stream::Lidar, &vars)
            .unwrap();
        assert_eq!(tape.shape(ph), &[128, 3, 3]);
        assert_eq!(tape.shape(pl), &[128, 3, 3]);
    }
}

#[test]
fn projector_kernel_is_extent_minus_two() {
    let spec = EncoderSpec::build(&ModelConfig::houston2013().encoder, 3).unwrap();
    let proj = ProjectorSpec::build(&spec, 128, 3, &[0, 1, 2]).unwrap();
    for (level, p) in proj.levels.iter().zip(&proj.hsi) {
        let extent = spec.projector_input(Stream::Hsi, *level)[1];
        assert_eq!(
            (p.kh, p.kw, p.stride, p.padding),
            (extent - 2, extent - 2, 1, 0)
        );
    }
    for (level, p) in proj.levels.iter().zip(&proj.lidar) {
        let extent = spec.projector_input(Stream::Lidar, *level)[1];
        assert_eq!(p.kh, extent - 2);
    }
}

#[test]
fn zero_input_zero_bias_gives_zero_features() {
    let (mut store, enc) = build(&small(), 8, 3);
    for t in store.tensors_mut() {
        if t.rank() == 1 {
            t.data_mut().fill(0.0);
        }
    }
    let hsi = Tensor::zeros(&[4, 9, 9]);
    let lidar = Tensor::zeros(&[2, 9, 9]);
    let mut tape = Tape::new();
    let vars = store.register(&mut tape, false);
    let (h, l) = (tape.constant(&hsi), tape.constant(&lidar));
    let out = enc.forward(&mut tape, h, l, &vars).unwrap();
    let fh = enc.encode_hsi(&mut tape, h, &vars).unwrap();
    let fl = enc.encode_lidar(&mut tape, l, &vars).unwrap();
    for v in fh.iter().chain(&fl).chain(&out.hsi).chain(&out.lidar) {
        assert!(tape.value(*v).data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn shape_mismatch_is_reported() {
    let (store, enc) = build(&small(), 8, 3);
    let bad = Tensor::zeros(&[5, 9, 9]);
    let mut tape = Tape::new();
    let vars = store.register(&mut tape, false);
    let x = tape.constant(&bad);
    assert!(matches!(
        enc.encode_hsi(&mut tape, x, &vars),
        Err(Error::ShapeMismatch { .. })
    ));
    assert!(matches!(
        enc.encode_lidar(&mut tape, x, &vars),
        Err(Error::ShapeMismatch { .. })
    ));
}

/// Scalar probe `Σ_k ⟨R_k, F_k⟩` over all three levels of one stream.
fn probe_grad_error(stream: Stream, seed: u64) -> f64 {
    let cfg = small();
    let (store, enc) = build(&cfg, 8, 3);
    let mut r = rng(seed);
    let input = match stream {
        Stream::Hsi => random_tensor(&[4, 9, 9], &mut r),
        Stream::Lidar => random_tensor(&[2, 9, 9], &mut r),
    };
    let shapes: Vec<Vec<usize>> = match stream {
        Stream::Hsi => enc.spec.hsi_shapes.iter().map(|s| s.to_vec()).collect(),
        Stream::Lidar => enc.spec.lidar_shapes.iter().map(|s| s.to_vec()).collect(),
    };
    let weights: Vec<Tensor> = shapes.iter().map(|s| random_tensor(s, &mut r)).collect();
    let probe = |store: &ParamStore, x: &Tensor, track: bool| {
        let mut tape = Tape::new();
        let vars = store.register(&mut tape, track);
        let xv = tape.leaf(x, true);
        let levels = match stream {
            Stream::Hsi => enc.encode_hsi(&mut tape, xv, &vars).unwrap(),
            Stream::Lidar => enc.encode_lidar(&mut tape, xv, &vars).unwrap(),
        };
        let terms: Vec<_> = levels
            .iter()
            .zip(&weights)
            .map(|(&f, w)| {
                let wv = tape.constant(w);
                let m = tape.mul(f, wv).unwrap();
                tape.sum(m).unwrap()
            })
            .collect();
        let total = tape.add_all(&terms).unwrap();
        let value = tape.value(total).data()[0];
        let grads = tape.backward(total).unwrap();
        (
            value,
            grads.wrt(xv),
            vars.iter().map(|&v| grads.wrt(v)).collect::<Vec<_>>(),
        )
    };
    let (_, dx, dparams) = probe(&store, &input, true);
    let numeric_x = finite_diff_grad(|x| probe(&store, x, false).0, &input, 1e-5);
    let mut worst = max_relative_error(dx.data(), numeric_x.data()).0;
    let prefix = match stream {
        Stream::Hsi => "hsi.",
        Stream::Lidar => "lidar.",
    };
    for (id, analytic) in store.ids().zip(dparams) {
        if !store.name(id).starts_with(prefix) {
            continue;
        }
        let numeric = finite_diff_grad(
            |p| {
                let mut s = store.clone();
                s.get_mut(id).data_mut().copy_from_slice(p.data());
                probe(&s, &input, false).0
            },
            store.get(id),
            1e-5,
        );
        worst = worst.max(max_relative_error(analytic.data(), numeric.data()).0);
    }
    worst
}

#[test]
fn hsi_encoder_gradient_check() {
    for seed in 0..3 {
        let err = probe_grad_error(Stream::Hsi, seed);
        assert!(err <= 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn lidar_encoder_gradient_check() {
    for seed in 0..3 {
        let err = probe_grad_error(Stream::Lidar, seed);
        assert!(err <= 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn houston_param_count_matches_closed_form() {
    let model = Dcmnet::new(ModelConfig::houston2013(), 0).unwrap();
    assert_eq!(model.cost().params, houston_param_oracle());
    assert_eq!(model.store.scalar_count(), houston_param_oracle());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The builder either yields a consistent pipeline or refuses the config.
    #[test]
    fn builder_never_produces_inconsistent_shapes(k in 1usize..40, half in 3usize..9, s in 1usize..4) {
        let cfg = EncoderConfig {
            bands: 40,
            components: k,
            patch: 2 * half + 1,
            lidar_channels: 1,
            hsi_channels: [2, 2, 2],
            lidar_features: [2, 2, 2],
        };
        let Ok(spec) = EncoderSpec::build(&cfg, s) else { return Ok(()) };
        let Ok(proj) = ProjectorSpec::build(&spec, 4, s, &[0, 1, 2]) else { return Ok(()) };
        let mut store = ParamStore::new();
        let enc = Encoders::new(&mut store, spec, proj, &mut rng(0));
        let hsi = Tensor::zeros(&[k, cfg.patch, cfg.patch]);
        let lidar = Tensor::zeros(&[1, cfg.patch, cfg.patch]);
        let mut tape = Tape::new();
        let vars = store.register(&mut tape, false);
        let (h, l) = (tape.constant(&hsi), tape.constant(&lidar));
        let out = enc.forward(&mut tape, h, l, &vars).unwrap();
        for v in out.hsi.iter().chain(&out.lidar) {
            prop_assert_eq!(tape.shape(*v), &[4, s, s][..]);
        }
    }
}
