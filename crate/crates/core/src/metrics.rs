//! Volume quality metrics: NRMSE in percent (normalized by the ground-truth
//! dynamic range), PSNR in dB over a stated data range, and windowed SSIM in
//! percent. SSIM uses uniform (unweighted) cubic windows over all fully
//! interior positions, with population moments per window.

use crate::error::{Error, Result};
use crate::volume::{check_same_shape, Volume3D};

/// One metrics row; `psnr_db` is +infinity iff the volumes are identical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub nrmse_pct: f64,
    pub psnr_db: f64,
    pub ssim_pct: f64,
}

/// SSIM parameters exposed for completeness; the defaults are the canonical
/// ones.
#[derive(Debug, Clone, Copy)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

/// Root-mean-square error normalized by the ground-truth dynamic range, in
/// percent. Errors on constant ground truth (undefined normalization).
pub fn nrmse(pred: &Volume3D, gt: &Volume3D) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let range = gt.max_value() - gt.min_value();
    if range <= 0.0 {
        return Err(Error::invalid(
            "NRMSE is undefined for constant ground truth",
        ));
    }
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(100.0 * mse.sqrt() / range)
}

/// Peak signal-to-noise ratio in dB; +infinity when the volumes coincide.
pub fn psnr(pred: &Volume3D, gt: &Volume3D, data_range: f64) -> Result<f64> {
    check_same_shape(pred, gt)?;
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::invalid("data_range must be positive"));
    }
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

/// Mean SSIM over all fully interior cubic windows, in percent.
pub fn ssim(pred: &Volume3D, gt: &Volume3D, cfg: &SsimConfig) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let w = cfg.window;
    if w == 0 || w % 2 == 0 {
        return Err(Error::invalid("SSIM window must be odd and positive"));
    }
    let (nx, ny, nz) = pred.shape();
    if nx < w || ny < w || nz < w {
        return Err(Error::invalid(format!(
            "every dimension must be >= the SSIM window ({w}), got {:?}",
            pred.shape()
        )));
    }
    let c1 = (cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range);
    let c2 = (cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range);
    let wn = (w * w * w) as f64;

    let mut total = 0.0;
    let mut windows = 0usize;
    for z0 in 0..=(nz - w) {
        for y0 in 0..=(ny - w) {
            for x0 in 0..=(nx - w) {
                let mut sp = 0.0;
                let mut sg = 0.0;
                let mut spp = 0.0;
                let mut sgg = 0.0;
                let mut spg = 0.0;
                for z in z0..z0 + w {
                    for y in y0..y0 + w {
                        for x in x0..x0 + w {
                            let p = pred.at(x, y, z);
                            let g = gt.at(x, y, z);
                            sp += p;
                            sg += g;
                            spp += p * p;
                            sgg += g * g;
                            spg += p * g;
                        }
                    }
                }
                let mp = sp / wn;
                let mg = sg / wn;
                let vp = spp / wn - mp * mp;
                let vg = sgg / wn - mg * mg;
                let cov = spg / wn - mp * mg;
                let index = ((2.0 * mp * mg + c1) * (2.0 * cov + c2))
                    / ((mp * mp + mg * mg + c1) * (vp + vg + c2));
                total += index;
                windows += 1;
            }
        }
    }
    Ok(100.0 * total / windows as f64)
}

/// All three metrics for one (prediction, ground truth) pair.
pub fn report(pred: &Volume3D, gt: &Volume3D, ssim_cfg: &SsimConfig) -> Result<MetricsReport> {
    Ok(MetricsReport {
        nrmse_pct: nrmse(pred, gt)?,
        psnr_db: psnr(pred, gt, ssim_cfg.data_range)?,
        ssim_pct: ssim(pred, gt, ssim_cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(shape: (usize, usize, usize), seed: u64) -> Volume3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.0 * shape.1 * shape.2;
        let data = (0..n).map(|_| rng.random::<f64>()).collect();
        Volume3D::from_vec(data, shape, (1.0, 1.0, 1.0)).unwrap()
    }

    /// Two-pass SSIM oracle: gathers each window and computes moments from
    /// explicit deviations, a different accumulation route than the
    /// implementation's running sums.
    fn ssim_oracle(pred: &Volume3D, gt: &Volume3D, w: usize) -> f64 {
        let (nx, ny, nz) = pred.shape();
        let c1 = 0.01f64 * 0.01;
        let c2 = 0.03f64 * 0.03;
        let mut values = Vec::new();
        for z0 in 0..=(nz - w) {
            for y0 in 0..=(ny - w) {
                for x0 in 0..=(nx - w) {
                    let mut ps = Vec::new();
                    let mut gs = Vec::new();
                    for z in z0..z0 + w {
                        for y in y0..y0 + w {
                            for x in x0..x0 + w {
                                ps.push(pred.at(x, y, z));
                                gs.push(gt.at(x, y, z));
                            }
                        }
                    }
                    let n = ps.len() as f64;
                    let mp = ps.iter().sum::<f64>() / n;
                    let mg = gs.iter().sum::<f64>() / n;
                    let vp = ps.iter().map(|p| (p - mp) * (p - mp)).sum::<f64>() / n;
                    let vg = gs.iter().map(|g| (g - mg) * (g - mg)).sum::<f64>() / n;
                    let cov = ps
                        .iter()
                        .zip(&gs)
                        .map(|(p, g)| (p - mp) * (g - mg))
                        .sum::<f64>()
                        / n;
                    values.push(
                        ((2.0 * mp * mg + c1) * (2.0 * cov + c2))
                            / ((mp * mp + mg * mg + c1) * (vp + vg + c2)),
                    );
                }
            }
        }
        100.0 * values.iter().sum::<f64>() / values.len() as f64
    }

    #[test]
    fn identical_volumes_score_perfectly() {
        let v = random_volume((8, 8, 8), 1);
        assert_eq!(nrmse(&v, &v).unwrap(), 0.0);
        assert_eq!(psnr(&v, &v, 1.0).unwrap(), f64::INFINITY);
        assert!((ssim(&v, &v, &SsimConfig::default()).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn nrmse_constant_offset() {
        let mut gt = random_volume((8, 8, 8), 2);
        // Pin the range to exactly [0, 1].
        gt.data_mut()[0] = 0.0;
        gt.data_mut()[1] = 1.0;
        let pred = gt
            .with_data(gt.data().iter().map(|x| x + 0.1).collect())
            .unwrap();
        assert!((nrmse(&pred, &gt).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn nrmse_rejects_constant_ground_truth() {
        let gt = Volume3D::new((4, 4, 4), (1.0, 1.0, 1.0), 0.5).unwrap();
        let pred = random_volume((4, 4, 4), 3);
        assert!(nrmse(&pred, &gt).is_err());
        // But a constant prediction against varying ground truth is fine.
        assert!(nrmse(&gt, &pred).is_ok());
    }

    #[test]
    fn psnr_closed_forms() {
        let gt = random_volume((8, 8, 8), 4);
        let off1 = gt
            .with_data(gt.data().iter().map(|x| x + 0.1).collect())
            .unwrap();
        assert!((psnr(&off1, &gt, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let off2 = gt
            .with_data(gt.data().iter().map(|x| x + 0.05).collect())
            .unwrap();
        let expected = 10.0 * 400.0f64.log10();
        assert!((psnr(&off2, &gt, 1.0).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 26.0206).abs() < 1e-4);
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = random_volume((6, 6, 6), 5);
        let b = random_volume((6, 6, 6), 6);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn nrmse_asymmetry_is_the_defined_one() {
        // The denominator is the ground-truth range, so swapping arguments
        // changes the answer exactly by the range ratio.
        let mut a = random_volume((6, 6, 6), 7);
        let b = a
            .with_data(a.data().iter().map(|x| 0.5 * x).collect())
            .unwrap();
        a.data_mut()[0] = 0.0;
        a.data_mut()[1] = 1.0;
        let ab = nrmse(&a, &b).unwrap();
        let ba = nrmse(&b, &a).unwrap();
        let range_a = a.max_value() - a.min_value();
        let range_b = b.max_value() - b.min_value();
        assert!((ab * range_b - ba * range_a).abs() < 1e-9);
        assert!(ab != ba);
    }

    #[test]
    fn ssim_matches_bruteforce_oracle() {
        let a = random_volume((12, 12, 12), 8);
        let b = random_volume((12, 12, 12), 9);
        let got = ssim(&a, &b, &SsimConfig::default()).unwrap();
        let expected = ssim_oracle(&a, &b, 7);
        assert!(
            (got - expected).abs() < 1e-9,
            "ssim {got} vs oracle {expected}"
        );
    }

    #[test]
    fn inverted_phantom_scores_poorly() {
        use crate::synth::{make_phantom, PhantomSpec};
        let gt = make_phantom(&PhantomSpec::new((8, 8, 8), 10)).unwrap();
        let inv = gt
            .with_data(gt.data().iter().map(|x| 1.0 - x).collect())
            .unwrap();
        let got = ssim(&inv, &gt, &SsimConfig::default()).unwrap();
        let expected = ssim_oracle(&inv, &gt, 7);
        assert!((got - expected).abs() < 1e-9);
        assert!(got < 30.0, "inverted phantom SSIM is {got}");
    }

    #[test]
    fn ssim_rejects_small_volumes_and_even_windows() {
        let v = random_volume((6, 6, 6), 11);
        assert!(ssim(&v, &v, &SsimConfig::default()).is_err());
        let v = random_volume((8, 8, 8), 11);
        let cfg = SsimConfig {
            window: 4,
            ..SsimConfig::default()
        };
        assert!(ssim(&v, &v, &cfg).is_err());
    }

    #[test]
    fn voxelwise_metrics_are_permutation_invariant() {
        let a = random_volume((4, 4, 4), 12);
        let b = random_volume((4, 4, 4), 13);
        // Reverse both volumes with the same permutation.
        let rev = |v: &Volume3D| {
            let mut data = v.data().to_vec();
            data.reverse();
            v.with_data(data).unwrap()
        };
        assert!((nrmse(&a, &b).unwrap() - nrmse(&rev(&a), &rev(&b)).unwrap()).abs() < 1e-12);
        assert_eq!(
            psnr(&a, &b, 1.0).unwrap(),
            psnr(&rev(&a), &rev(&b), 1.0).unwrap()
        );
    }
}
