//! Evaluation metrics and the dataset evaluation protocol.
//!
//! All pixel metrics map images from [-1, 1] into [0, 1] first. SSIM uses
//! the standard 11x11 Gaussian window (sigma 1.5) over valid positions with
//! stabilizers C1 = 0.01^2 and C2 = 0.03^2. The feature-distribution
//! distance is a Frechet distance between Gaussian moment fits of features
//! from a frozen extractor — internally comparable across runs and
//! ablations, but not the canonical pretrained-network FID.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math comes from the trait in no_std builds
use num_traits::Float;

use crate::error::reject;
use crate::imaging::{apply_mask, classify_mask, compose, DifficultyLevel, Image, Mask};
use crate::losses::FeatureMapper;
use crate::tensor::Tensor;
use crate::Result;

/// PSNR value reported when the mean squared error is exactly zero.
pub const PSNR_SENTINEL: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn to_unit(img: &Image) -> Vec<f64> {
    img.data().iter().map(|v| (*v as f64 + 1.0) / 2.0).collect()
}

fn check_same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.side() != b.side() || a.channels() != b.channels() {
        return reject("metric inputs must share dimensions");
    }
    Ok(())
}

/// Mean local SSIM over all valid 11x11 window positions and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same_shape(a, b)?;
    let s = a.side();
    if s < SSIM_WINDOW {
        return reject(format!("ssim needs images of side >= {SSIM_WINDOW}, got {s}"));
    }
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let ua = to_unit(a);
    let ub = to_unit(b);
    let mut acc = 0.0;
    let mut count = 0usize;
    let out = s - SSIM_WINDOW + 1;
    for c in 0..a.channels() {
        let pa = &ua[c * s * s..(c + 1) * s * s];
        let pb = &ub[c * s * s..(c + 1) * s * s];
        // separable window means for a, b, a^2, b^2, ab
        let mu_a = window_filter(pa, s, &kernel);
        let mu_b = window_filter(pb, s, &kernel);
        let sq = |x: &[f64]| x.iter().map(|v| v * v).collect::<Vec<f64>>();
        let aa = window_filter(&sq(pa), s, &kernel);
        let bb = window_filter(&sq(pb), s, &kernel);
        let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();
        let ab = window_filter(&ab, s, &kernel);
        for i in 0..out * out {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            let v = ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            acc += v;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

fn gaussian_kernel(n: usize, sigma: f64) -> Vec<f64> {
    let half = (n / 2) as f64;
    let mut k: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - half) * (i as f64 - half)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode windowed weighted mean over an s x s plane.
fn window_filter(plane: &[f64], s: usize, kernel: &[f64]) -> Vec<f64> {
    let n = kernel.len();
    let out = s - n + 1;
    // horizontal pass
    let mut tmp = vec![0.0f64; s * out];
    for y in 0..s {
        for x in 0..out {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += plane[y * s + x + i] * k;
            }
            tmp[y * out + x] = acc;
        }
    }
    // vertical pass
    let mut res = vec![0.0f64; out * out];
    for y in 0..out {
        for x in 0..out {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += tmp[(y + i) * out + x] * k;
            }
            res[y * out + x] = acc;
        }
    }
    res
}

/// `10 * log10(1 / mse)` on [0, 1]-mapped images; identical images report
/// the sentinel.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_same_shape(a, b)?;
    let ua = to_unit(a);
    let ub = to_unit(b);
    let mse = ua
        .iter()
        .zip(&ub)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / ua.len() as f64;
    Ok(psnr_from_mse(mse))
}

/// PSNR for a given MSE at dynamic range 1.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_SENTINEL
    } else {
        -10.0 * mse.log10()
    }
}

/// Mergeable accumulator of feature moments.
#[derive(Clone, Debug)]
pub struct FeatureAccumulator {
    dim: usize,
    n: usize,
    sum: Vec<f64>,
    /// Sum of outer products, row-major d x d.
    outer: Vec<f64>,
}

impl FeatureAccumulator {
    pub fn new(dim: usize) -> Self {
        FeatureAccumulator {
            dim,
            n: 0,
            sum: vec![0.0; dim],
            outer: vec![0.0; dim * dim],
        }
    }

    pub fn push(&mut self, features: &[f64]) {
        assert_eq!(features.len(), self.dim);
        self.n += 1;
        for i in 0..self.dim {
            self.sum[i] += features[i];
            for j in 0..self.dim {
                self.outer[i * self.dim + j] += features[i] * features[j];
            }
        }
    }

    /// Associative merge of two partial accumulations.
    pub fn merge(&mut self, other: &FeatureAccumulator) {
        assert_eq!(self.dim, other.dim);
        self.n += other.n;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.outer.iter_mut().zip(&other.outer) {
            *a += b;
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Gaussian moment fit (Bessel-corrected covariance); needs n >= 2.
    pub fn finalize(&self) -> Result<FeatureStats> {
        if self.n < 2 {
            return reject(format!("feature statistics need n >= 2, got {}", self.n));
        }
        let n = self.n as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let d = self.dim;
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] = (self.outer[i * d + j] - n * mean[i] * mean[j]) / (n - 1.0);
            }
        }
        // enforce exact symmetry against accumulation round-off
        for i in 0..d {
            for j in 0..i {
                let v = 0.5 * (cov[i * d + j] + cov[j * d + i]);
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        FeatureStats::new(mean, cov, self.n)
    }
}

/// Gaussian moments of a feature distribution.
#[derive(Clone, Debug)]
pub struct FeatureStats {
    mean: Vec<f64>,
    covariance: Vec<f64>, // row-major d x d
    n: usize,
}

impl FeatureStats {
    /// Validates dimensions and symmetry (within 1e-8).
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>, n: usize) -> Result<FeatureStats> {
        let d = mean.len();
        if covariance.len() != d * d {
            return reject("covariance must be d x d");
        }
        if n < 2 {
            return reject("feature statistics need n >= 2");
        }
        for i in 0..d {
            for j in 0..i {
                if (covariance[i * d + j] - covariance[j * d + i]).abs() > 1e-8 {
                    return reject("covariance is not symmetric within 1e-8");
                }
            }
        }
        Ok(FeatureStats {
            mean,
            covariance,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn count(&self) -> usize {
        self.n
    }
}

/// Frechet distance between two Gaussian moment fits:
/// `|m_p - m_q|^2 + tr(C_p + C_q - 2 (C_p C_q)^{1/2})`.
///
/// The cross term is computed through the symmetric form
/// `tr((S C_q S)^{1/2})` with `S = C_p^{1/2}`, using eigendecomposition and
/// clipping negative eigenvalues at zero.
pub fn frechet_distance(p: &FeatureStats, q: &FeatureStats) -> Result<f64> {
    if p.dim() != q.dim() {
        return reject("feature statistics dimensions differ");
    }
    let d = p.dim();
    let mean_term: f64 = p
        .mean
        .iter()
        .zip(&q.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let trace = |m: &[f64]| (0..d).map(|i| m[i * d + i]).sum::<f64>();

    let s = sqrtm_psd(&p.covariance, d);
    let inner = mat_mul(&mat_mul(&s, &q.covariance, d), &s, d);
    let inner = symmetrize(&inner, d);
    let (eigs, _) = jacobi_eigh(&inner, d);
    let cross: f64 = eigs.iter().map(|l| l.max(0.0).sqrt()).sum();

    Ok(mean_term + trace(&p.covariance) + trace(&q.covariance) - 2.0 * cross)
}

fn mat_mul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

fn symmetrize(m: &[f64], d: usize) -> Vec<f64> {
    let mut out = m.to_vec();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (m[i * d + j] + m[j * d + i]);
            out[i * d + j] = v;
            out[j * d + i] = v;
        }
    }
    out
}

/// Symmetric PSD square root via eigendecomposition with negative
/// eigenvalues clipped at zero.
fn sqrtm_psd(m: &[f64], d: usize) -> Vec<f64> {
    let (eigs, vecs) = jacobi_eigh(m, d);
    // out = V diag(sqrt(max(l,0))) V^T ; vecs stores eigenvectors as columns
    let mut out = vec![0.0; d * d];
    for k in 0..d {
        let s = eigs[k].max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..d {
            let vik = vecs[i * d + k];
            if vik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += s * vik * vecs[j * d + k];
            }
        }
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvectors as columns of a row-major matrix).
fn jacobi_eigh(m: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = m.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += a[i * d + j] * a[i * d + j];
                }
            }
        }
        s
    };
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    for _sweep in 0..100 {
        if off(&a) <= 1e-24 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rotate rows/columns p and q
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigs = (0..d).map(|i| a[i * d + i]).collect();
    (eigs, v)
}

/// Learned-perceptual-style distance: per tap, unit-normalize each pixel's
/// feature vector across channels, then average the squared difference over
/// space and sum over taps.
pub fn lpips_distance<T: crate::tensor::Element>(
    extractor: &dyn FeatureMapper<T>,
    a: &Image,
    b: &Image,
) -> Result<f64> {
    check_same_shape(a, b)?;
    let fa = extractor.features(&a.to_tensor::<T>());
    let fb = extractor.features(&b.to_tensor::<T>());
    let mut total = 0.0;
    for (x, y) in fa.iter().zip(&fb) {
        total += normalized_sq_diff(x, y);
    }
    Ok(total)
}

fn normalized_sq_diff<T: crate::tensor::Element>(x: &Tensor<T>, y: &Tensor<T>) -> f64 {
    let (c, h, w) = (x.dim(1), x.dim(2), x.dim(3));
    let hw = h * w;
    let eps = 1e-10;
    let unit = |t: &Tensor<T>, ci: usize, pi: usize, norms: &[f64]| -> f64 {
        crate::tensor::Element::to_f64(t.data()[ci * hw + pi]) / norms[pi]
    };
    let norms = |t: &Tensor<T>| -> Vec<f64> {
        (0..hw)
            .map(|pi| {
                let mut s = 0.0;
                for ci in 0..c {
                    let v = crate::tensor::Element::to_f64(t.data()[ci * hw + pi]);
                    s += v * v;
                }
                (s + eps).sqrt()
            })
            .collect()
    };
    let na = norms(x);
    let nb = norms(y);
    let mut acc = 0.0;
    for pi in 0..hw {
        for ci in 0..c {
            let d = unit(x, ci, pi, &na) - unit(y, ci, pi, &nb);
            acc += d * d;
        }
    }
    acc / hw as f64
}

/// Global-average-pooled features of the last tap: the vector fed into the
/// Frechet statistics.
pub fn pooled_features<T: crate::tensor::Element>(
    extractor: &dyn FeatureMapper<T>,
    image: &Image,
) -> Vec<f64> {
    let taps = extractor.features(&image.to_tensor::<T>());
    let last = taps.last().expect("extractor must expose at least one tap");
    let (c, h, w) = (last.dim(1), last.dim(2), last.dim(3));
    let hw = (h * w) as f64;
    (0..c)
        .map(|ci| {
            last.data()[ci * h * w..(ci + 1) * h * w]
                .iter()
                .map(|v| crate::tensor::Element::to_f64(*v))
                .sum::<f64>()
                / hw
        })
        .collect()
}

/// Minimum per-level sample count before a Frechet distance is reported.
pub const FID_MIN_GROUP: usize = 32;

/// Per-difficulty-level metric aggregates.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LevelReport {
    pub level: DifficultyLevel,
    pub n_images: usize,
    pub ssim: f64,
    pub psnr: f64,
    pub lpips: f64,
    /// Absent when the group has fewer than [`FID_MIN_GROUP`] members.
    pub fid: Option<f64>,
}

/// Evaluation outcome over a dataset.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub levels: Vec<LevelReport>,
    /// Items whose model call failed, with the error message.
    pub failures: Vec<(usize, String)>,
    /// Items whose mask fell outside every difficulty band.
    pub unclassified: usize,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn level(&self, level: DifficultyLevel) -> Option<&LevelReport> {
        self.levels.iter().find(|l| l.level == level)
    }
}

/// Run the full evaluation protocol.
///
/// For each (image, mask) pair: corrupt, run the model, compose under the
/// hard constraint, and measure SSIM/PSNR/LPIPS plus pooled features for the
/// per-group Frechet distance. Items group by their mask's narrowest
/// difficulty band. Model failures are recorded and excluded.
pub fn evaluate<T: crate::tensor::Element>(
    dataset: &[Image],
    masks: &[Mask],
    model: &mut dyn FnMut(&Image, &Mask) -> Result<Image>,
    extractor: &dyn FeatureMapper<T>,
    config_fingerprint: &str,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return reject("evaluation needs a nonempty dataset");
    }
    if dataset.len() != masks.len() {
        return reject("evaluation needs one mask per image");
    }

    struct Group {
        n: usize,
        ssim: f64,
        psnr: f64,
        lpips: f64,
        real: FeatureAccumulator,
        fake: FeatureAccumulator,
    }
    let dim = pooled_features(extractor, &dataset[0]).len();
    let mut groups: Vec<(DifficultyLevel, Group)> = Vec::new();
    let mut failures = Vec::new();
    let mut unclassified = 0usize;

    for (idx, (image, mask)) in dataset.iter().zip(masks).enumerate() {
        let corrupted = apply_mask(image, mask)?;
        let generated = match model(&corrupted, mask) {
            Ok(g) => g,
            Err(e) => {
                failures.push((idx, format!("{e}")));
                continue;
            }
        };
        let composed = compose(image, &generated, mask)?;
        // Hard constraint: visible pixels are bit-identical to the original.
        for c in 0..image.channels() {
            for y in 0..image.side() {
                for x in 0..image.side() {
                    if mask.get(y, x) == 0 {
                        assert_eq!(
                            composed.get(c, y, x).to_bits(),
                            image.get(c, y, x).to_bits(),
                            "hard constraint violated at ({c},{y},{x})"
                        );
                    }
                }
            }
        }
        let Some(level) = classify_mask(mask) else {
            unclassified += 1;
            continue;
        };
        let entry = match groups.iter_mut().find(|(l, _)| *l == level) {
            Some((_, g)) => g,
            None => {
                groups.push((
                    level,
                    Group {
                        n: 0,
                        ssim: 0.0,
                        psnr: 0.0,
                        lpips: 0.0,
                        real: FeatureAccumulator::new(dim),
                        fake: FeatureAccumulator::new(dim),
                    },
                ));
                &mut groups.last_mut().unwrap().1
            }
        };
        entry.n += 1;
        entry.ssim += ssim(&composed, image)?;
        entry.psnr += psnr(&composed, image)?;
        entry.lpips += lpips_distance(extractor, &composed, image)?;
        entry.real.push(&pooled_features(extractor, image));
        entry.fake.push(&pooled_features(extractor, &composed));
    }

    let mut levels = Vec::new();
    for (level, g) in groups {
        let n = g.n as f64;
        let fid = if g.n >= FID_MIN_GROUP {
            Some(frechet_distance(&g.real.finalize()?, &g.fake.finalize()?)?)
        } else {
            None
        };
        levels.push(LevelReport {
            level,
            n_images: g.n,
            ssim: g.ssim / n,
            psnr: g.psnr / n,
            lpips: g.lpips / n,
            fid,
        });
    }
    levels.sort_by_key(|l| match l.level {
        DifficultyLevel::Hard => 0,
        DifficultyLevel::Extreme => 1,
        DifficultyLevel::All => 2,
    });
    Ok(EvalReport {
        levels,
        failures,
        unclassified,
        config_fingerprint: String::from(config_fingerprint),
    })
}
