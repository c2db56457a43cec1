#![allow(dead_code)]

use dcmnet::model::Dcmnet;
use dcmnet::numerics::{relative_error, Tensor};
use dcmnet::preprocessing::PatchPair;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn random_sample(model: &Dcmnet, rng: &mut ChaCha8Rng) -> PatchPair {
    let enc = &model.config.encoder;
    PatchPair {
        hsi: random_tensor(&[enc.components, enc.patch, enc.patch], rng),
        lidar: random_tensor(&[enc.lidar_channels, enc.patch, enc.patch], rng),
        label: rng.random_range(1..=model.config.classes as u16),
        center: (0, 0),
    }
}

pub struct GradcheckResult {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares the tape gradient of the sample loss against a central
/// difference for every scalar parameter.
pub fn model_gradcheck(model: &mut Dcmnet, sample: &PatchPair) -> GradcheckResult {
    let (_, grads, vars) = model.loss_and_grads(sample).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    let ids: Vec<_> = model.store.ids().collect();
    let mut result = GradcheckResult {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (id, a) in ids.into_iter().zip(analytic) {
        for j in 0..a.len() {
            let orig = model.store.get(id).data()[j];
            model.store.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let up = model.loss(sample).unwrap();
            model.store.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let down = model.loss(sample).unwrap();
            model.store.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(a.data()[j], numeric);
            result.checked += 1;
            if err > result.max_rel_err {
                result.max_rel_err = err;
                result.worst = format!(
                    "{}[{j}] analytic {} numeric {numeric}",
                    model.store.name(id),
                    a.data()[j]
                );
            }
        }
    }
    result
}

use dcmnet::numerics::Tape;
use dcmnet::routing::{Block, ForwardOptions, GatePins};

/// Pins every gate of a soft-routed model so that only the chain
/// `chain[0] → chain[1] → …` carries signal, and the head reads only the
/// last block of the chain.
pub fn one_hot_chain(chain: &[usize]) -> ForwardOptions {
    let layers = chain.len();
    let mut pins: GatePins = vec![[[Some(0.0); 3]; 3]; layers];
    for k in 0..layers.saturating_sub(1) {
        pins[k][chain[k]][chain[k + 1]] = Some(1.0);
    }
    ForwardOptions {
        pins: Some(pins),
        head_blocks: Some(vec![Block::ALL[chain[layers - 1]]]),
    }
}

/// Logits of the chain composed by hand from the individual units.
pub fn manual_chain_logits(model: &Dcmnet, sample: &PatchPair, chain: &[usize]) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = model.store.register(&mut tape, false);
    let h = tape.constant(&sample.hsi);
    let l = tape.constant(&sample.lidar);
    let levels = model.encoders.forward(&mut tape, h, l, &vars).unwrap();
    let kind = model.config.routing.attention;
    let mut x = None;
    for (k, &b) in chain.iter().enumerate() {
        let unit = model.routing.unit(k, Block::ALL[b]).unwrap();
        x = Some(
            unit.forward(&mut tape, levels.hsi[k], levels.lidar[k], x, kind, &vars)
                .unwrap(),
        );
    }
    let out = x.unwrap();
    let n = tape.value(out).len();
    let flat = tape.reshape(out, &[n]).unwrap();
    let logits = model.routing.head.forward(&mut tape, flat, &vars).unwrap();
    tape.value(logits).data().to_vec()
}

pub fn logits_with(model: &Dcmnet, sample: &PatchPair, opts: &ForwardOptions) -> Vec<f64> {
    model.predict_with(sample, opts).unwrap().logits
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

use dcmnet::model::ModelConfig;
use dcmnet::preprocessing::{generate_synthetic, SyntheticSpec};
use dcmnet::training::PreparedData;

/// A small scene matching the `tiny` preset: 3 classes, 6 bands, 1 LiDAR
/// channel.
pub fn tiny_data(seed: u64) -> PreparedData {
    let spec = SyntheticSpec {
        classes: 3,
        height: 24,
        width: 24,
        bands: 6,
        tile: 8,
        train_per_class: 8,
        seed,
        ..SyntheticSpec::default()
    };
    PreparedData::new(&generate_synthetic(&spec).unwrap(), &ModelConfig::tiny()).unwrap()
}

/// Closed-form parameter count of the Houston 2013 preset, written out
/// kernel by kernel without the shape builder.
pub fn houston_param_oracle() -> usize {
    let conv = |cin: usize, k: usize, cout: usize| (cin * k + 1) * cout;
    let hsi = conv(1, 9 * 9, 8) + conv(8, 7 * 9, 16) + conv(16, 5 * 9, 32);
    let lidar = conv(1, 9, 64) + conv(64, 9, 128) + conv(128, 25, 128);
    let proj_h = conv(8 * 22, 49, 128) + conv(16 * 16, 25, 128) + conv(32 * 12, 9, 128);
    let proj_l = conv(64, 49, 128) + conv(128, 25, 128) + conv(128, 1, 128);
    let (c, d) = (128, 9);
    let attention = 6 * (d * d + d);
    let block_conv = conv(c, 9, c);
    let gate = (c * d + 1) * 256 + (256 + 1) * 3;
    let layer = 2 * (attention + block_conv) + block_conv + 3 * gate;
    let head = (c * d + 1) * 15;
    hsi + lidar + proj_h + proj_l + 3 * layer + head
}

/// Independent scoring: kappa via the count form
/// `(N Σ n_ii − Σ r_k c_k) / (N² − Σ r_k c_k)`.
pub fn metrics_oracle(counts: &[Vec<usize>]) -> (f64, f64, f64) {
    let c = counts.len();
    let n: f64 = counts.iter().flatten().sum::<usize>() as f64;
    let diag: f64 = (0..c).map(|i| counts[i][i] as f64).sum();
    let rows: Vec<f64> = counts
        .iter()
        .map(|r| r.iter().sum::<usize>() as f64)
        .collect();
    let cols: Vec<f64> = (0..c)
        .map(|k| counts.iter().map(|r| r[k]).sum::<usize>() as f64)
        .collect();
    let mut recall_sum = 0.0;
    let mut present = 0.0;
    for i in 0..c {
        if rows[i] > 0.0 {
            recall_sum += counts[i][i] as f64 / rows[i];
            present += 1.0;
        }
    }
    let chance: f64 = rows.iter().zip(&cols).map(|(r, c)| r * c).sum();
    let kappa = if n * n == chance {
        1.0
    } else {
        (n * diag - chance) / (n * n - chance)
    };
    (diag / n, recall_sum / present, kappa)
}
