//! Metric oracles: closed-form SSIM/PSNR cases, analytic Frechet cases,
//! sampled-Gaussian agreement, and the evaluation protocol contract.

use latentfill_core::imaging::{apply_mask, generate_mask, random_image, Image, MaskKind};
use latentfill_core::losses::{FeatureExtractor, FeatureMapper};
use latentfill_core::metrics::{
    evaluate, frechet_distance, lpips_distance, psnr, psnr_from_mse, ssim, FeatureAccumulator,
    FeatureStats, PSNR_SENTINEL,
};
use latentfill_core::rng::{next_normal, normal_vec, stream_rng, Stream};
use latentfill_core::tensor::Tensor;

#[test]
fn ssim_identity_is_exactly_one() {
    let img = random_image(3, 16, 1);
    assert_eq!(ssim(&img, &img).unwrap(), 1.0);
}

#[test]
fn ssim_constant_patch_closed_form() {
    // raw values map into [0,1]: v = (raw + 1) / 2
    let a = Image::constant(1, 16, 0.2).unwrap(); // v1 = 0.6
    let b = Image::constant(1, 16, -0.4).unwrap(); // v2 = 0.3
    let (v1, v2) = (0.6, 0.3);
    let c1 = 0.01f64 * 0.01;
    let expect = (2.0 * v1 * v2 + c1) / (v1 * v1 + v2 * v2 + c1);
    let got = ssim(&a, &b).unwrap();
    assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
}

#[test]
fn ssim_matches_windowed_brute_force() {
    let a = random_image(2, 16, 2);
    let b = random_image(2, 16, 3);
    let got = ssim(&a, &b).unwrap();

    // full brute force: direct Gaussian-weighted window statistics
    let n = 11usize;
    let sigma = 1.5f64;
    let half = (n / 2) as f64;
    let mut k1: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - half) * (i as f64 - half)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s1: f64 = k1.iter().sum();
    k1.iter_mut().for_each(|v| *v /= s1);
    let w2d: Vec<f64> = (0..n * n).map(|i| k1[i / n] * k1[i % n]).collect();

    let unit = |img: &Image, c: usize, y: usize, x: usize| (img.get(c, y, x) as f64 + 1.0) / 2.0;
    let mut acc = 0.0;
    let mut count = 0;
    for c in 0..2 {
        for y0 in 0..=(16 - n) {
            for x0 in 0..=(16 - n) {
                let (mut ma, mut mb) = (0.0, 0.0);
                for dy in 0..n {
                    for dx in 0..n {
                        let w = w2d[dy * n + dx];
                        ma += w * unit(&a, c, y0 + dy, x0 + dx);
                        mb += w * unit(&b, c, y0 + dy, x0 + dx);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..n {
                    for dx in 0..n {
                        let w = w2d[dy * n + dx];
                        let da = unit(&a, c, y0 + dy, x0 + dx) - ma;
                        let db = unit(&b, c, y0 + dy, x0 + dx) - mb;
                        va += w * da * da;
                        vb += w * db * db;
                        cov += w * da * db;
                    }
                }
                let c1 = 0.01f64 * 0.01;
                let c2 = 0.03f64 * 0.03;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    let oracle = acc / count as f64;
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    assert!((-1.0..=1.0).contains(&got));
}

#[test]
fn ssim_rejects_images_smaller_than_the_window() {
    let a = random_image(1, 8, 4);
    assert!(ssim(&a, &a).is_err());
}

#[test]
fn psnr_examples() {
    let a = random_image(3, 16, 5);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_SENTINEL);
    assert_eq!(psnr_from_mse(0.01), 20.0);
    let b = random_image(3, 16, 6);
    assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
}

#[test]
fn frechet_identity_symmetry_and_rejection() {
    let mut rng = stream_rng(7, Stream::LatentSamples, 0);
    let d = 6;
    let mut acc = FeatureAccumulator::new(d);
    for _ in 0..200 {
        acc.push(&normal_vec::<f64, _>(&mut rng, d));
    }
    let p = acc.finalize().unwrap();
    assert!(frechet_distance(&p, &p).unwrap().abs() <= 1e-6);

    let mut acc2 = FeatureAccumulator::new(d);
    for _ in 0..200 {
        let mut v: Vec<f64> = normal_vec(&mut rng, d);
        v[0] += 1.0;
        acc2.push(&v);
    }
    let q = acc2.finalize().unwrap();
    let pq = frechet_distance(&p, &q).unwrap();
    let qp = frechet_distance(&q, &p).unwrap();
    assert!((pq - qp).abs() < 1e-8);

    let bad = FeatureStats::new(vec![0.0; 2], vec![1.0, 0.5, 0.0, 1.0], 10);
    assert!(bad.is_err(), "asymmetric covariance must be rejected");
}

#[test]
fn frechet_analytic_gaussian_cases() {
    let d = 4;
    let eye = |scale: &[f64]| -> Vec<f64> {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = scale[i];
        }
        m
    };
    // N(0, I) vs N(m, I): distance = |m|^2
    let p = FeatureStats::new(vec![0.0; d], eye(&[1.0; 4]), 100).unwrap();
    let m = vec![0.5, -1.0, 2.0, 0.25];
    let q = FeatureStats::new(m.clone(), eye(&[1.0; 4]), 100).unwrap();
    let expect: f64 = m.iter().map(|v| v * v).sum();
    let got = frechet_distance(&p, &q).unwrap();
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");

    // diagonal covariances, equal means: sum (sqrt(a) - sqrt(b))^2
    let a = [1.0, 2.0, 0.5, 3.0];
    let b = [2.0, 1.0, 0.25, 3.0];
    let p = FeatureStats::new(vec![0.0; d], eye(&a), 100).unwrap();
    let q = FeatureStats::new(vec![0.0; d], eye(&b), 100).unwrap();
    let expect: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x.sqrt() - y.sqrt()) * (x.sqrt() - y.sqrt()))
        .sum();
    let got = frechet_distance(&p, &q).unwrap();
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
}

#[test]
fn frechet_matches_analytic_within_one_percent_on_sampled_gaussians() {
    // 10^4 samples from two correlated Gaussians with known moments.
    let d = 4;
    let n = 10_000;
    let mut rng = stream_rng(8, Stream::LatentSamples, 1);
    // p: mean 0, covariance L L^T with L lower-triangular
    let l_p = [1.0, 0.0, 0.0, 0.0, 0.3, 0.9, 0.0, 0.0, -0.2, 0.1, 0.8, 0.0, 0.0, 0.4, 0.0, 0.6];
    let mean_q = [2.0, -1.5, 1.0, 0.5];
    let l_q = [0.7, 0.0, 0.0, 0.0, -0.1, 1.1, 0.0, 0.0, 0.2, 0.0, 0.9, 0.0, 0.3, -0.2, 0.1, 0.5];

    let sample = |l: &[f64; 16], mean: &[f64; 4], rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let z: Vec<f64> = (0..d).map(|_| next_normal::<f64, _>(rng)).collect();
        (0..d)
            .map(|i| mean[i] + (0..=i).map(|j| l[i * 4 + j] * z[j]).sum::<f64>())
            .collect()
    };
    let mut acc_p = FeatureAccumulator::new(d);
    let mut acc_q = FeatureAccumulator::new(d);
    for _ in 0..n {
        acc_p.push(&sample(&l_p, &[0.0; 4], &mut rng));
        acc_q.push(&sample(&l_q, &mean_q, &mut rng));
    }
    let got = frechet_distance(&acc_p.finalize().unwrap(), &acc_q.finalize().unwrap()).unwrap();

    // analytic distance from the true moments
    let cov_of = |l: &[f64; 16]| -> Vec<f64> {
        let mut c = vec![0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    c[i * 4 + j] += l[i * 4 + k] * l[j * 4 + k];
                }
            }
        }
        c
    };
    let p_true = FeatureStats::new(vec![0.0; 4], cov_of(&l_p), n).unwrap();
    let q_true = FeatureStats::new(mean_q.to_vec(), cov_of(&l_q), n).unwrap();
    let expect = frechet_distance(&p_true, &q_true).unwrap();
    assert!(
        (got - expect).abs() / expect <= 0.01,
        "sampled {got} vs analytic {expect}"
    );
}

#[test]
fn accumulator_merge_is_associative() {
    let mut rng = stream_rng(9, Stream::LatentSamples, 2);
    let d = 3;
    let samples: Vec<Vec<f64>> = (0..90).map(|_| normal_vec(&mut rng, d)).collect();
    let mut whole = FeatureAccumulator::new(d);
    for s in &samples {
        whole.push(s);
    }
    let mut a = FeatureAccumulator::new(d);
    let mut b = FeatureAccumulator::new(d);
    let mut c = FeatureAccumulator::new(d);
    for (i, s) in samples.iter().enumerate() {
        [&mut a, &mut b, &mut c][i % 3].push(s);
    }
    let mut bc = b.clone();
    bc.merge(&c);
    let mut abc = a.clone();
    abc.merge(&bc);
    let w = whole.finalize().unwrap();
    let m = abc.finalize().unwrap();
    assert_eq!(w.count(), m.count());
    for (x, y) in w.mean().iter().zip(m.mean()) {
        assert!((x - y).abs() < 1e-12);
    }
    for (x, y) in w.covariance().iter().zip(m.covariance()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn lpips_zero_symmetric_and_oracle() {
    let e = FeatureExtractor::<f64>::new(FeatureExtractor::<f64>::DEFAULT_SEED);
    let a = random_image(3, 16, 10);
    let b = random_image(3, 16, 11);
    assert_eq!(lpips_distance(&e, &a, &a).unwrap(), 0.0);
    let ab = lpips_distance(&e, &a, &b).unwrap();
    let ba = lpips_distance(&e, &b, &a).unwrap();
    assert!((ab - ba).abs() < 1e-12);
    assert!(ab > 0.0);

    // 1-tap identity-style oracle: a single 1x1 conv extractor where the
    // features are just the channels; brute-force the normalized difference.
    struct Lift(Tensor<f64>);
    impl FeatureMapper<f64> for Lift {
        fn features(&self, x: &Tensor<f64>) -> Vec<Tensor<f64>> {
            vec![x.conv2d(&self.0, 1, 0)]
        }
        fn num_taps(&self) -> usize {
            1
        }
    }
    let mut rng = stream_rng(12, Stream::WeightInit, 0);
    let w = Tensor::<f64>::randn(&[4, 3, 1, 1], 0.5, &mut rng);
    let lift = Lift(w.clone());
    let got = lpips_distance(&lift, &a, &b).unwrap();

    let feats = |img: &Image, o: usize, y: usize, x: usize| -> f64 {
        (0..3)
            .map(|c| img.get(c, y, x) as f64 * w.data()[o * 3 + c])
            .sum()
    };
    let mut acc = 0.0;
    for y in 0..16 {
        for x in 0..16 {
            let fa: Vec<f64> = (0..4).map(|o| feats(&a, o, y, x)).collect();
            let fb: Vec<f64> = (0..4).map(|o| feats(&b, o, y, x)).collect();
            let na = (fa.iter().map(|v| v * v).sum::<f64>() + 1e-10).sqrt();
            let nb = (fb.iter().map(|v| v * v).sum::<f64>() + 1e-10).sqrt();
            for o in 0..4 {
                let d = fa[o] / na - fb[o] / nb;
                acc += d * d;
            }
        }
    }
    let oracle = acc / 256.0;
    assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
}

#[test]
fn evaluate_identity_model_and_copy_baseline() {
    let e = FeatureExtractor::<f32>::new(FeatureExtractor::<f32>::DEFAULT_SEED);
    let images: Vec<Image> = (0..40).map(|i| random_image(3, 16, 100 + i)).collect();
    let masks: Vec<_> = (0..40)
        .map(|i| generate_mask(MaskKind::Freeform, 0.75, 16, 200 + i).unwrap())
        .collect();
    let originals = images.clone();

    // identity oracle: the model returns the original image
    let mut idx = 0usize;
    let mut identity = |_corrupted: &Image, _mask: &latentfill_core::imaging::Mask| {
        let out = originals[idx].clone();
        idx += 1;
        Ok(out)
    };
    let report = evaluate(&images, &masks, &mut identity, &e, "test").unwrap();
    let level = &report.levels[0];
    assert_eq!(level.n_images, 40);
    assert_eq!(level.ssim, 1.0);
    assert_eq!(level.psnr, PSNR_SENTINEL);
    assert_eq!(level.lpips, 0.0);
    assert!(level.fid.unwrap().abs() < 1e-6);
    assert!(report.failures.is_empty());

    // copy baseline: return the corrupted image itself
    let mut copy = |corrupted: &Image, _mask: &latentfill_core::imaging::Mask| Ok(corrupted.clone());
    let copy_report = evaluate(&images, &masks, &mut copy, &e, "test").unwrap();
    let c = &copy_report.levels[0];
    assert!(c.ssim < level.ssim);
    assert!(c.psnr < level.psnr);
    assert!(c.lpips > level.lpips);
    assert!(c.fid.unwrap() > level.fid.unwrap());

    // empty dataset is rejected
    let mut nop = |c: &Image, _m: &latentfill_core::imaging::Mask| Ok(c.clone());
    assert!(evaluate(&[], &[], &mut nop, &e, "x").is_err());
}

#[test]
fn evaluate_records_failures_and_skips_them() {
    let e = FeatureExtractor::<f32>::new(FeatureExtractor::<f32>::DEFAULT_SEED);
    let images: Vec<Image> = (0..4).map(|i| random_image(3, 16, 300 + i)).collect();
    let masks: Vec<_> = (0..4)
        .map(|i| generate_mask(MaskKind::Box, 0.55, 16, 400 + i).unwrap())
        .collect();
    let mut calls = 0usize;
    let mut flaky = |corrupted: &Image, mask: &latentfill_core::imaging::Mask| {
        calls += 1;
        if calls == 2 {
            Err(latentfill_core::Error::RejectedInput("synthetic model failure".into()))
        } else {
            Ok(apply_mask(corrupted, mask)?)
        }
    };
    let report = evaluate(&images, &masks, &mut flaky, &e, "t").unwrap();
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].0, 1);
    assert_eq!(report.levels.iter().map(|l| l.n_images).sum::<usize>(), 3);
}
