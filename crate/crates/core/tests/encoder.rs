//! Contract tests for the pyramid encoder, instance normalization and
//! pre-modulation.

use latentfill_core::encoder::{
    encode, instance_normalize, invert, layer_to_scale, premodulate, EncoderConfig,
    EncoderWeights, IN_EPSILON,
};
use latentfill_core::generator::{ChannelSchedule, LATENT_DIM};
use latentfill_core::imaging::random_image;
use latentfill_core::nn::Params;
use latentfill_core::rng::{normal_vec, stream_rng, Stream};
use latentfill_core::tensor::Tensor;

fn config(resolution: usize) -> EncoderConfig {
    EncoderConfig {
        resolution,
        schedule: ChannelSchedule { base: 256, cap: 32 },
    }
}

/// Reference instance normalization written independently of the tensor ops.
fn in_oracle(v: &[f64], eps: f64) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let denom = (var + eps).sqrt();
    v.iter().map(|x| (x - mean) / denom).collect()
}

#[test]
fn encode_is_deterministic_with_expected_shapes() {
    let weights = EncoderWeights::<f32>::new(config(32), 5).unwrap();
    let img = random_image(3, 32, 1);
    let a = encode(&img, &weights).unwrap();
    let b = encode(&img, &weights).unwrap();
    assert_eq!(a.w_prime, b.w_prime);
    assert_eq!(a.w_prime.len(), 3 * LATENT_DIM);
    assert_eq!(
        [a.recon[0].side(), a.recon[1].side(), a.recon[2].side()],
        [8, 16, 32]
    );
    for r in &a.recon {
        assert!(r.data().iter().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn recon_scales_at_256() {
    let weights = EncoderWeights::<f32>::new(config(256), 6).unwrap();
    let img = random_image(3, 256, 2);
    let out = encode(&img, &weights).unwrap();
    assert_eq!(
        [out.recon[0].side(), out.recon[1].side(), out.recon[2].side()],
        [64, 128, 256]
    );
    let (style, _) = invert(&img, &weights).unwrap();
    assert_eq!(style.layers(), 14);
}

#[test]
fn each_w_prime_row_depends_on_the_input() {
    let weights = EncoderWeights::<f64>::new(config(16), 7).unwrap();
    let mut rng = stream_rng(8, Stream::LatentSamples, 0);
    let x = Tensor::<f64>::randn(&[1, 3, 16, 16], 0.5, &mut rng);
    let x = Tensor::leaf(x.shape(), x.to_vec());
    let feats = weights.encode_batch(&x);
    for r in 0..3 {
        let row = feats
            .w_prime
            .reshape(&[1, 3, LATENT_DIM, 1])
            .slice_channels(r, r + 1);
        let grads = row.square().sum_all().backward();
        let g = grads.get_or_zeros(&x);
        let norm: f64 = g.data().iter().map(|v| v * v).sum();
        assert!(norm > 0.0, "w' row {r} ignores the input");
    }
}

#[test]
fn map2structure_is_deterministic_and_zeroable() {
    let mut weights = EncoderWeights::<f32>::new(config(16), 9).unwrap();
    let img = random_image(3, 16, 3);
    let feats = weights.encode_batch(&img.to_tensor());
    let s1 = weights.map2structure_batch(&feats.recon);
    let s2 = weights.map2structure_batch(&feats.recon);
    assert_eq!(s1.data(), s2.data());
    assert_eq!(s1.shape(), &[1, 3, LATENT_DIM]);

    // Zero the final conv of every map2structure head: all structure rows
    // must collapse to exactly zero, whatever the input.
    let mut last_conv_names: Vec<String> = Vec::new();
    weights.visit(&mut |name, _| {
        if name.starts_with("map2structure") {
            last_conv_names.push(name.to_string());
        }
    });
    let zero_targets: Vec<String> = (0..3)
        .map(|head| {
            let prefix = format!("map2structure{head}.conv");
            let max_idx = last_conv_names
                .iter()
                .filter(|n| n.starts_with(&prefix))
                .filter_map(|n| {
                    n.strip_prefix(&prefix)
                        .and_then(|rest| rest.split('.').next())
                        .and_then(|i| i.parse::<usize>().ok())
                })
                .max()
                .unwrap();
            format!("{prefix}{max_idx}.")
        })
        .collect();
    weights.visit_mut(&mut |name, t| {
        if zero_targets.iter().any(|p| name.starts_with(p.as_str())) {
            *t = Tensor::leaf(t.shape(), vec![0.0; t.numel()]);
        }
    });
    let s3 = weights.map2structure_batch(&feats.recon);
    assert!(s3.data().iter().all(|v| *v == 0.0));
}

#[test]
fn instance_normalization_statistics() {
    // constant vector -> zero output (epsilon-dominated)
    let constant = vec![3.25f64; LATENT_DIM];
    let out = instance_normalize(&constant, IN_EPSILON);
    assert!(out.iter().all(|v| v.abs() < 1e-9));

    // alternating +-1 is already zero-mean unit-variance
    let alt: Vec<f64> = (0..LATENT_DIM).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let out = instance_normalize(&alt, IN_EPSILON);
    for (a, b) in alt.iter().zip(&out) {
        assert!((a - b).abs() < 1e-4);
    }

    // random vectors: tight statistics and agreement with the oracle
    let mut rng = stream_rng(11, Stream::LatentSamples, 1);
    for _ in 0..100 {
        let v: Vec<f64> = normal_vec(&mut rng, LATENT_DIM);
        let out = instance_normalize(&v, IN_EPSILON);
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        let var = out.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / out.len() as f64;
        assert!(mean.abs() <= 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() <= 1e-4, "var {var}");
        for (a, b) in out.iter().zip(in_oracle(&v, IN_EPSILON)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn premodulation_matches_affine_oracle() {
    let mut weights = EncoderWeights::<f64>::new(config(16), 12).unwrap();
    let mut rng = stream_rng(13, Stream::LatentSamples, 2);
    let w: Vec<f64> = normal_vec(&mut rng, LATENT_DIM);
    let s: Vec<f64> = normal_vec(&mut rng, LATENT_DIM);

    // Identity initialization: gamma = 1, beta = 0, so the output is exactly
    // the instance-normalized row.
    let out = premodulate(&w, &s, 0, &weights).unwrap();
    for (a, b) in out.iter().zip(in_oracle(&w, IN_EPSILON)) {
        assert!((a - b).abs() < 1e-12);
    }

    // Randomize the affine heads, then recover gamma and beta through
    // probes: IN(0) = 0 gives beta; a probe row gives gamma elementwise.
    weights.visit_mut(&mut |name, t| {
        if name.contains(".gamma.") || name.contains(".beta.") {
            let mut r = stream_rng(99, Stream::WeightInit, t.numel() as u64);
            *t = Tensor::leaf(t.shape(), normal_vec(&mut r, t.numel()));
        }
    });
    let layer = 3;
    let beta = premodulate(&vec![0.0; LATENT_DIM], &s, layer, &weights).unwrap();
    let probe: Vec<f64> = normal_vec(&mut rng, LATENT_DIM);
    let probe_out = premodulate(&probe, &s, layer, &weights).unwrap();
    let probe_in = in_oracle(&probe, IN_EPSILON);
    let gamma: Vec<f64> = probe_out
        .iter()
        .zip(&beta)
        .zip(&probe_in)
        .map(|((o, b), i)| (o - b) / i)
        .collect();

    // Fresh row must satisfy gamma * IN(w) + beta elementwise.
    let out = premodulate(&w, &s, layer, &weights).unwrap();
    let w_in = in_oracle(&w, IN_EPSILON);
    for i in 0..LATENT_DIM {
        let expect = gamma[i] * w_in[i] + beta[i];
        assert!(
            (out[i] - expect).abs() < 1e-10,
            "entry {i}: {} vs {expect}",
            out[i]
        );
    }

    // Linearity in beta: output(gamma, beta) - output(gamma, 0) == beta.
    // Forcing gamma to zero makes the output equal beta regardless of w'.
    weights.visit_mut(&mut |name, t| {
        if name.contains(".gamma.") {
            let data = if name.ends_with("bias") {
                vec![-1.0; t.numel()] // dgamma = -1 => gamma = 0
            } else {
                vec![0.0; t.numel()]
            };
            *t = Tensor::leaf(t.shape(), data);
        }
    });
    let beta = premodulate(&vec![0.0; LATENT_DIM], &s, layer, &weights).unwrap();
    let out = premodulate(&w, &s, layer, &weights).unwrap();
    for i in 0..LATENT_DIM {
        assert!((out[i] - beta[i]).abs() < 1e-12, "gamma=0 must return beta");
    }

    assert!(premodulate(&w, &s, 99, &weights).is_err());
}

#[test]
fn layer_to_scale_grouping() {
    // L = 14: layers 0-2 coarse, 3-6 middle, 7-13 fine (1-based: 1-3 / 4-7 / 8-14)
    let groups: Vec<usize> = (0..14).map(|l| layer_to_scale(l, 14)).collect();
    assert_eq!(groups[..3], [0, 0, 0]);
    assert_eq!(groups[3..7], [1, 1, 1, 1]);
    assert!(groups[7..].iter().all(|g| *g == 2));

    for layers in [4usize, 6, 10, 14, 18] {
        let groups: Vec<usize> = (0..layers).map(|l| layer_to_scale(l, layers)).collect();
        // monotone non-decreasing and surjective onto {0, 1, 2}
        assert!(groups.windows(2).all(|w| w[0] <= w[1]), "L={layers}");
        for g in 0..3 {
            assert!(groups.contains(&g), "L={layers} missing group {g}");
        }
    }
}

#[test]
fn invert_produces_layer_rows_and_premod_changes_them() {
    let weights = EncoderWeights::<f32>::new(config(16), 14).unwrap();
    let img = random_image(3, 16, 4);
    let (style, out) = invert(&img, &weights).unwrap();
    assert_eq!(style.layers(), 6);
    let (style2, _) = invert(&img, &weights).unwrap();
    assert_eq!(style, style2);

    // With the identity-initialized affine nets, each w* row equals the
    // instance-normalized w' row of its group — and therefore differs from
    // the raw w' row.
    let x = img.to_tensor::<f32>();
    let (raw, _) = weights.invert_batch(&x, false);
    for l in 0..style.layers() {
        let starred = style.row(l);
        let plain = &raw.data()[l * LATENT_DIM..(l + 1) * LATENT_DIM];
        assert!(
            starred.iter().zip(plain).any(|(a, b)| (a - b).abs() > 1e-4),
            "row {l} unchanged by pre-modulation"
        );
        let oracle = in_oracle(&plain.iter().map(|v| *v as f64).collect::<Vec<_>>(), IN_EPSILON);
        for (a, b) in starred.iter().zip(oracle) {
            assert!((*a as f64 - b).abs() < 1e-4);
        }
        assert_eq!(plain.len(), LATENT_DIM);
        assert_eq!(out.w_prime.len(), 3 * LATENT_DIM);
    }
}

#[test]
fn inversion_gradients_match_finite_differences() {
    let weights = EncoderWeights::<f64>::new(config(8), 15).unwrap();
    let mut rng = stream_rng(16, Stream::LatentSamples, 3);
    let x = Tensor::<f64>::randn(&[1, 3, 8, 8], 0.5, &mut rng);

    // Scalar loss over the full inversion.
    let loss_of = |w: &EncoderWeights<f64>| -> f64 {
        let (star, feats) = w.invert_batch(&x, true);
        let l = star.square().mean_all().add(&feats.recon[2].square().mean_all());
        l.item()
    };

    let (star, feats) = weights.invert_batch(&x, true);
    let loss = star.square().mean_all().add(&feats.recon[2].square().mean_all());
    let grads = loss.backward();

    // Probe a handful of parameters from distinct groups.
    let mut checked = 0;
    let mut names: Vec<String> = Vec::new();
    weights.visit(&mut |name, _| names.push(name.to_string()));
    let probes: Vec<&str> = vec![
        "stem.weight",
        "stage0.conv1.weight",
        "lateral8.weight",
        "td0.smooth.weight",
        "rgb2.weight",
        "map2style0.conv0.weight",
        "map2structure2.conv0.weight",
        "premod0.hidden.weight",
        "premod3.gamma.bias",
    ];
    for probe in probes {
        assert!(names.iter().any(|n| n == probe), "missing parameter {probe}");
        let mut auto = None;
        weights.visit(&mut |name, t| {
            if name == probe {
                auto = Some(grads.get_or_zeros(t).to_vec());
            }
        });
        let auto = auto.unwrap();
        // central difference on the first few elements
        for idx in 0..3.min(auto.len()) {
            let eps = 1e-4;
            let mut perturbed = clone_weights(&weights);
            bump(&mut perturbed, probe, idx, eps);
            let plus = loss_of(&perturbed);
            let mut perturbed = clone_weights(&weights);
            bump(&mut perturbed, probe, idx, -eps);
            let minus = loss_of(&perturbed);
            let numeric = (plus - minus) / (2.0 * eps);
            let denom = auto[idx].abs().max(numeric.abs()).max(1e-6);
            assert!(
                ((auto[idx] - numeric) / denom).abs() < 1e-3,
                "{probe}[{idx}]: autodiff {} vs numeric {numeric}",
                auto[idx]
            );
            checked += 1;
        }
    }
    assert!(checked >= 20);
}

fn clone_weights(w: &EncoderWeights<f64>) -> EncoderWeights<f64> {
    // Rebuild from the same seedless path: copy tensors by name.
    let mut fresh = EncoderWeights::<f64>::new(*w.config(), 15).unwrap();
    let mut source: Vec<(String, Tensor<f64>)> = Vec::new();
    w.visit(&mut |name, t| source.push((name.to_string(), t.clone())));
    let mut i = 0;
    fresh.visit_mut(&mut |name, t| {
        assert_eq!(name, source[i].0);
        *t = Tensor::leaf(source[i].1.shape(), source[i].1.to_vec());
        i += 1;
    });
    fresh
}

fn bump(w: &mut EncoderWeights<f64>, target: &str, idx: usize, eps: f64) {
    w.visit_mut(&mut |name, t| {
        if name == target {
            let mut data = t.to_vec();
            data[idx] += eps;
            *t = Tensor::leaf(t.shape(), data);
        }
    });
}
