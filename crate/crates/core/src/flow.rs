//! Rectified-flow mechanics: straight-path interpolation, velocity targets,
//! seeded Gaussian noise, and the Euler sampler that runs enhancement by
//! integrating the learned velocity field from noise (t = 1) to data (t = 0).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::task::FieldTask;
use crate::volume::{check_same_shape, Volume3D};

/// Latent state along the flow path at time `t` in [0, 1]; t = 0 is clean
/// data, t = 1 is noise.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub z: Volume3D,
    pub t: f64,
}

/// Euler sampler settings.
#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    pub steps: usize,
    /// Seed for the initial noise draw.
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 20, seed: 0 }
    }
}

/// A time-dependent velocity field conditioned on the degraded input and the
/// enhancement task. Implementations must be pure in their arguments.
pub trait VelocityField {
    fn velocity(
        &self,
        z: &Volume3D,
        x_lf: &Volume3D,
        task: &FieldTask,
        t: f64,
    ) -> Result<Volume3D>;
}

/// Volume <-> latent codec. The engine runs with the identity codec; the
/// trait exists so a learned encoder/decoder pair can be swapped in without
/// touching the sampler.
pub trait LatentCodec {
    fn encode(&self, x: &Volume3D) -> Result<Volume3D>;
    fn decode(&self, z: &Volume3D) -> Result<Volume3D>;
}

/// The default codec: latents are image-space volumes.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn encode(&self, x: &Volume3D) -> Result<Volume3D> {
        Ok(x.clone())
    }

    fn decode(&self, z: &Volume3D) -> Result<Volume3D> {
        Ok(z.clone())
    }
}

/// Linear path state `z_t = (1 - t) * z0 + t * z1`; exact at both endpoints.
pub fn interpolate(z0: &Volume3D, z1: &Volume3D, t: f64) -> Result<FlowState> {
    check_same_shape(z0, z1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("time {t} outside [0, 1]")));
    }
    let z = if t == 0.0 {
        z0.clone()
    } else if t == 1.0 {
        z1.clone()
    } else {
        z0.with_data(
            z0.data()
                .iter()
                .zip(z1.data())
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect(),
        )?
    };
    Ok(FlowState { z, t })
}

/// Velocity of the straight path, `v = z1 - z0`; constant in t.
pub fn velocity_target(z0: &Volume3D, z1: &Volume3D) -> Result<Volume3D> {
    check_same_shape(z0, z1)?;
    z0.with_data(
        z0.data()
            .iter()
            .zip(z1.data())
            .map(|(a, b)| b - a)
            .collect(),
    )
}

/// I.i.d. standard normal volume from a seeded generator; the same seed
/// always produces the same volume. Spacing defaults to 1 mm isotropic.
pub fn sample_noise(shape: (usize, usize, usize), seed: u64) -> Result<Volume3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape
        .0
        .checked_mul(shape.1)
        .and_then(|v| v.checked_mul(shape.2))
        .ok_or_else(|| Error::invalid("noise shape overflows"))?;
    let data = (0..n)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Volume3D::from_vec(data, shape, (1.0, 1.0, 1.0))
}

/// Runs enhancement with the identity codec: integrate the velocity field
/// from t = 1 to t = 0 with uniform Euler steps, then clamp to [0, 1].
pub fn euler_enhance<M: VelocityField>(
    model: &M,
    x_lf: &Volume3D,
    task: &FieldTask,
    cfg: &SamplerConfig,
) -> Result<Volume3D> {
    euler_enhance_with_codec(model, x_lf, task, cfg, &IdentityCodec)
}

/// Euler sampler with an explicit latent codec.
pub fn euler_enhance_with_codec<M: VelocityField, C: LatentCodec>(
    model: &M,
    x_lf: &Volume3D,
    task: &FieldTask,
    cfg: &SamplerConfig,
    codec: &C,
) -> Result<Volume3D> {
    if cfg.steps == 0 {
        return Err(Error::invalid("sampler needs at least one step"));
    }
    let x_latent = codec.encode(x_lf)?;
    let mut z = sample_noise(x_latent.shape(), cfg.seed)?.with_spacing(x_lf.spacing())?;
    let h = 1.0 / cfg.steps as f64;
    for step in 0..cfg.steps {
        let t = 1.0 - step as f64 * h;
        let v = model.velocity(&z, &x_latent, task, t)?;
        check_same_shape(&z, &v)?;
        for (zi, vi) in z.data_mut().iter_mut().zip(v.data()) {
            *zi -= h * vi;
        }
        if !z.all_finite() {
            return Err(Error::SamplerDiverged { step });
        }
    }
    let mut out = codec.decode(&z)?;
    out.clamp_in_place(0.0, 1.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{FieldStrength, Modality};

    fn task() -> FieldTask {
        FieldTask::new(Modality::T1, FieldStrength::B64mT, FieldStrength::B3T).unwrap()
    }

    fn vol(shape: (usize, usize, usize), fill: f64) -> Volume3D {
        Volume3D::new(shape, (1.0, 1.0, 1.0), fill).unwrap()
    }

    /// Test model: ignores all inputs and returns a fixed constant field.
    struct ConstantVelocity(f64);

    impl VelocityField for ConstantVelocity {
        fn velocity(
            &self,
            z: &Volume3D,
            _x_lf: &Volume3D,
            _task: &FieldTask,
            _t: f64,
        ) -> Result<Volume3D> {
            Ok(z.with_data(vec![self.0; z.len()]).unwrap())
        }
    }

    struct NanVelocity;

    impl VelocityField for NanVelocity {
        fn velocity(
            &self,
            z: &Volume3D,
            _x_lf: &Volume3D,
            _task: &FieldTask,
            _t: f64,
        ) -> Result<Volume3D> {
            Ok(z.with_data(vec![f64::NAN; z.len()]).unwrap())
        }
    }

    #[test]
    fn interpolate_endpoints_are_exact() {
        let z0 = sample_noise((3, 3, 3), 1).unwrap();
        let z1 = sample_noise((3, 3, 3), 2).unwrap();
        assert_eq!(interpolate(&z0, &z1, 0.0).unwrap().z.data(), z0.data());
        assert_eq!(interpolate(&z0, &z1, 1.0).unwrap().z.data(), z1.data());
        assert!(interpolate(&z0, &z1, 1.5).is_err());
        assert!(interpolate(&z0, &z1, -0.1).is_err());
    }

    #[test]
    fn interpolate_blends_linearly() {
        let z0 = vol((2, 2, 2), 0.0);
        let z1 = vol((2, 2, 2), 1.0);
        let st = interpolate(&z0, &z1, 0.25).unwrap();
        assert!(st.z.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn velocity_target_cases() {
        let z0 = vol((2, 2, 2), 0.0);
        let z1 = vol((2, 2, 2), 1.0);
        assert!(velocity_target(&z0, &z0)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(velocity_target(&z0, &z1)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
    }

    #[test]
    fn path_identity_holds_numerically() {
        // z_t - t * v = z0 for the straight path.
        let z0 = sample_noise((3, 4, 2), 5).unwrap();
        let z1 = sample_noise((3, 4, 2), 6).unwrap();
        let v = velocity_target(&z0, &z1).unwrap();
        for &t in &[0.3, 0.7] {
            let st = interpolate(&z0, &z1, t).unwrap();
            let worst = st
                .z
                .data()
                .iter()
                .zip(v.data())
                .zip(z0.data())
                .map(|((z, vi), a)| (z - t * vi - a).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-12, "t = {t}: {worst}");
        }
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let a = sample_noise((4, 4, 4), 9).unwrap();
        let b = sample_noise((4, 4, 4), 9).unwrap();
        let c = sample_noise((4, 4, 4), 10).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(crate::volume::linf_distance(&a, &c).unwrap() > 0.0);
    }

    #[test]
    fn noise_moments_look_standard_normal() {
        // Law-of-large-numbers bounds computed for 32^3 samples.
        for seed in 0..10u64 {
            let v = sample_noise((32, 32, 32), seed).unwrap();
            let n = v.len() as f64;
            let mean = v.data().iter().sum::<f64>() / n;
            let var = v.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 0.05, "seed {seed}: mean {mean}");
            assert!((var - 1.0).abs() < 0.1, "seed {seed}: var {var}");
        }
    }

    #[test]
    fn zero_velocity_returns_clamped_noise() {
        let x = vol((4, 4, 4), 0.5);
        let cfg = SamplerConfig { steps: 7, seed: 3 };
        let out = euler_enhance(&ConstantVelocity(0.0), &x, &task(), &cfg).unwrap();
        let mut expected = sample_noise((4, 4, 4), 3).unwrap();
        expected.clamp_in_place(0.0, 1.0);
        assert_eq!(out.data(), expected.data());
    }

    #[test]
    fn constant_velocity_integrates_exactly_for_any_step_count() {
        let x = vol((4, 4, 4), 0.5);
        let c = 0.37;
        let noise = sample_noise((4, 4, 4), 11).unwrap();
        for steps in [1usize, 5, 20] {
            let cfg = SamplerConfig { steps, seed: 11 };
            let out = euler_enhance(&ConstantVelocity(c), &x, &task(), &cfg).unwrap();
            let worst = out
                .data()
                .iter()
                .zip(noise.data())
                .map(|(o, n)| (o - (n - c).clamp(0.0, 1.0)).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-12, "steps {steps}: {worst}");
        }
    }

    #[test]
    fn diverging_model_reports_step() {
        let x = vol((2, 2, 2), 0.5);
        let cfg = SamplerConfig { steps: 4, seed: 0 };
        match euler_enhance(&NanVelocity, &x, &task(), &cfg) {
            Err(Error::SamplerDiverged { step }) => assert_eq!(step, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
