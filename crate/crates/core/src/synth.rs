//! Seeded phantom generation and field-specific degradation.
//!
//! A phantom is a union of soft-edged ellipsoids with distinct intensity
//! plateaus plus optional band-limited texture. Low-field inputs are
//! simulated with Gaussian blur and additive noise; ultra-high-field targets
//! carry a smooth multiplicative shading field whose energy sits in the low
//! end of the spectrum, mimicking transmit-field (B1) inhomogeneity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::task::{FieldStrength, FieldTask};
use crate::volume::Volume3D;

/// Phantom generation parameters. Generated volumes use 1 mm spacing.
#[derive(Debug, Clone, Copy)]
pub struct PhantomSpec {
    pub shape: (usize, usize, usize),
    pub n_ellipsoids: usize,
    /// Amplitude of the additive band-limited texture, in [0, 0.3].
    pub texture_amp: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(shape: (usize, usize, usize), seed: u64) -> Self {
        Self {
            shape,
            n_ellipsoids: 6,
            texture_amp: 0.1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let (nx, ny, nz) = self.shape;
        if nx < 8 || ny < 8 || nz < 8 {
            return Err(Error::invalid(format!(
                "phantom shape must be at least (8, 8, 8), got {:?}",
                self.shape
            )));
        }
        if !(0.0..=0.3).contains(&self.texture_amp) {
            return Err(Error::invalid("texture_amp must lie in [0, 0.3]"));
        }
        Ok(())
    }
}

/// Degradation parameters for one task. Defaults depend on the source field:
/// the 64 mT simulation blurs and corrupts much harder than the 3 T one.
#[derive(Debug, Clone, Copy)]
pub struct DegradeSpec {
    pub task: FieldTask,
    pub blur_sigma_vox: f64,
    pub noise_sigma: f64,
    /// Multiplicative shading amplitude for ultra-high-field targets.
    pub bias_amp: f64,
    /// Minimum wavelength of the shading modes in voxels; 0 selects a
    /// quarter of the smallest volume extent.
    pub bias_scale_vox: f64,
    pub seed: u64,
}

impl DegradeSpec {
    pub fn for_task(task: FieldTask, seed: u64) -> Self {
        let (blur, noise) = match task.source() {
            FieldStrength::B64mT => (1.5, 0.05),
            _ => (0.6, 0.02),
        };
        Self {
            task,
            blur_sigma_vox: blur,
            noise_sigma: noise,
            bias_amp: 0.15,
            bias_scale_vox: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.blur_sigma_vox < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::invalid("blur and noise sigmas must be nonnegative"));
        }
        if !(0.0..=0.5).contains(&self.bias_amp) {
            return Err(Error::invalid("bias_amp must lie in [0, 0.5]"));
        }
        if self.bias_scale_vox < 0.0 {
            return Err(Error::invalid("bias_scale_vox must be nonnegative"));
        }
        Ok(())
    }
}

/// Structured test volume: soft ellipsoids with distinct plateaus in
/// [0.2, 0.9] plus band-limited texture, clamped to [0, 1].
pub fn make_phantom(spec: &PhantomSpec) -> Result<Volume3D> {
    spec.validate()?;
    let (nx, ny, nz) = spec.shape;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut vol = Volume3D::new(spec.shape, (1.0, 1.0, 1.0), 0.0)?;

    for e in 0..spec.n_ellipsoids {
        let center = (
            (0.2 + 0.6 * rng.random::<f64>()) * nx as f64,
            (0.2 + 0.6 * rng.random::<f64>()) * ny as f64,
            (0.2 + 0.6 * rng.random::<f64>()) * nz as f64,
        );
        let semi = (
            (0.12 + 0.23 * rng.random::<f64>()) * nx as f64,
            (0.12 + 0.23 * rng.random::<f64>()) * ny as f64,
            (0.12 + 0.23 * rng.random::<f64>()) * nz as f64,
        );
        let level =
            0.2 + 0.7 * (e as f64 + rng.random::<f64>()) / spec.n_ellipsoids as f64;
        // Soft edge of roughly one voxel in normalized radius units.
        let softness = 0.08;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let dx = (x as f64 - center.0) / semi.0;
                    let dy = (y as f64 - center.1) / semi.1;
                    let dz = (z as f64 - center.2) / semi.2;
                    let d = (dx * dx + dy * dy + dz * dz).sqrt();
                    let s = 0.5 * (1.0 - ((d - 1.0) / softness).tanh());
                    let value = level * s;
                    let i = vol.index(x, y, z);
                    if value > vol.data()[i] {
                        vol.data_mut()[i] = value;
                    }
                }
            }
        }
    }

    if spec.texture_amp > 0.0 {
        let texture = cosine_field(spec.shape, &mut rng, 8, 2, |n| (n / 4).max(2));
        for (v, t) in vol.data_mut().iter_mut().zip(&texture) {
            *v += spec.texture_amp * t;
        }
    }
    vol.clamp_in_place(0.0, 1.0);
    Ok(vol)
}

/// Sum of `modes` random cosine modes with per-axis integer frequencies in
/// `[f_lo, f_hi(n)]`, normalized to max |value| = 1 (zeros if degenerate).
fn cosine_field(
    shape: (usize, usize, usize),
    rng: &mut ChaCha8Rng,
    modes: usize,
    f_lo: usize,
    f_hi: impl Fn(usize) -> usize,
) -> Vec<f64> {
    let (nx, ny, nz) = shape;
    let mut field = vec![0.0f64; nx * ny * nz];
    for _ in 0..modes {
        let pick = |n: usize, rng: &mut ChaCha8Rng| -> f64 {
            let hi = f_hi(n).max(f_lo);
            let f = rng.random_range(f_lo..=hi) as f64;
            if rng.random::<bool>() {
                f
            } else {
                -f
            }
        };
        let fx = pick(nx, rng);
        let fy = pick(ny, rng);
        let fz = pick(nz, rng);
        let phase = rng.random::<f64>() * 2.0 * PI;
        let amp = 0.5 + 0.5 * rng.random::<f64>();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let arg = 2.0
                        * PI
                        * (fx * x as f64 / nx as f64
                            + fy * y as f64 / ny as f64
                            + fz * z as f64 / nz as f64)
                        + phase;
                    field[x + nx * (y + ny * z)] += amp * arg.cos();
                }
            }
        }
    }
    let max = field.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if max > 1e-12 {
        for v in &mut field {
            *v /= max;
        }
    }
    field
}

/// Separable Gaussian blur, truncated at 3 sigma, with per-position
/// renormalization at the borders so constants are preserved exactly.
pub fn gaussian_blur(v: &Volume3D, sigma_vox: f64) -> Result<Volume3D> {
    if sigma_vox < 0.0 || !sigma_vox.is_finite() {
        return Err(Error::invalid("blur sigma must be nonnegative and finite"));
    }
    let radius = (3.0 * sigma_vox).floor() as usize;
    if radius == 0 {
        return Ok(v.clone());
    }
    let weights: Vec<f64> = (0..=radius)
        .map(|o| (-((o * o) as f64) / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();

    let (nx, ny, nz) = v.shape();
    let blur_axis = |src: &[f64], axis: usize| -> Vec<f64> {
        let dims = [nx, ny, nz];
        let n_axis = dims[axis];
        let mut dst = vec![0.0; src.len()];
        let index = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let pos = [x, y, z][axis];
                    let mut acc = 0.0;
                    let mut wsum = 0.0;
                    let lo = pos.saturating_sub(radius);
                    let hi = (pos + radius).min(n_axis - 1);
                    for q in lo..=hi {
                        let w = weights[pos.abs_diff(q)];
                        let idx = match axis {
                            0 => index(q, y, z),
                            1 => index(x, q, z),
                            _ => index(x, y, q),
                        };
                        acc += w * src[idx];
                        wsum += w;
                    }
                    dst[index(x, y, z)] = acc / wsum;
                }
            }
        }
        dst
    };

    let mut data = v.data().to_vec();
    for axis in 0..3 {
        data = blur_axis(&data, axis);
    }
    v.with_data(data)
}

/// Simulated low-field acquisition: blur, then additive seeded Gaussian
/// noise, then clamp to [0, 1].
pub fn degrade_lowfield(x_hf: &Volume3D, spec: &DegradeSpec) -> Result<Volume3D> {
    spec.validate()?;
    let mut out = gaussian_blur(x_hf, spec.blur_sigma_vox)?;
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for v in out.data_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise_sigma * n;
        }
    }
    out.clamp_in_place(0.0, 1.0);
    Ok(out)
}

/// The smooth shading field g used by [`apply_b1_bias`], normalized to
/// max |g| = 1. Exposed so its spectral content can be inspected directly.
pub fn b1_bias_field(shape: (usize, usize, usize), spec: &DegradeSpec) -> Result<Volume3D> {
    spec.validate()?;
    let (nx, ny, nz) = shape;
    let min_extent = nx.min(ny).min(nz);
    let scale = if spec.bias_scale_vox > 0.0 {
        spec.bias_scale_vox
    } else {
        (min_extent as f64 / 4.0).max(1.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Integer frequencies keep every mode on an exact DFT bin; wavelengths
    // stay at or above the configured scale.
    let field = cosine_field(shape, &mut rng, 3, 0, |n| {
        ((n as f64 / scale).floor() as usize).clamp(1, 2)
    });
    Volume3D::from_vec(field, shape, (1.0, 1.0, 1.0))
}

/// Multiplies by `1 + bias_amp * g` and clamps to [0, 1]; identity when
/// `bias_amp` is zero.
pub fn apply_b1_bias(x: &Volume3D, spec: &DegradeSpec) -> Result<Volume3D> {
    spec.validate()?;
    if spec.bias_amp == 0.0 {
        return Ok(x.clone());
    }
    let bias = b1_bias_field(x.shape(), spec)?;
    let mut out = x.with_data(
        x.data()
            .iter()
            .zip(bias.data())
            .map(|(v, g)| v * (1.0 + spec.bias_amp * g))
            .collect(),
    )?;
    out.clamp_in_place(0.0, 1.0);
    Ok(out)
}

/// One generated pair plus its task.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub id: usize,
    pub x_lf: Volume3D,
    pub x_hf: Volume3D,
    pub task: FieldTask,
}

/// A generated dataset with its train/test split (test count
/// `max(1, round(0.2 n))`, taken from the tail).
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub samples: Vec<PairedSample>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Deterministically generates `n` paired volumes, cycling through `tasks`.
/// For 64mT->3T items the target is the clean phantom; for 3T->7T items the
/// target additionally carries the shading field, giving the low-frequency
/// band down-weighting something real to ignore.
pub fn make_paired_dataset(
    n: usize,
    shape: (usize, usize, usize),
    tasks: &[FieldTask],
    seed: u64,
) -> Result<PairedDataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be >= 1"));
    }
    if tasks.is_empty() {
        return Err(Error::invalid("at least one task is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for id in 0..n {
        let task = tasks[id % tasks.len()];
        let phantom_seed: u64 = rng.random();
        let degrade_seed: u64 = rng.random();
        let bias_seed: u64 = rng.random();

        let clean = make_phantom(&PhantomSpec::new(shape, phantom_seed))?;
        let degrade = DegradeSpec {
            seed: degrade_seed,
            ..DegradeSpec::for_task(task, degrade_seed)
        };
        let x_lf = degrade_lowfield(&clean, &degrade)?;
        let x_hf = match task.source() {
            FieldStrength::B64mT => clean,
            _ => apply_b1_bias(
                &clean,
                &DegradeSpec {
                    seed: bias_seed,
                    ..degrade
                },
            )?,
        };
        samples.push(PairedSample {
            id,
            x_lf,
            x_hf,
            task,
        });
    }
    let test_count = (((n as f64) * 0.2).round() as usize).max(1).min(n);
    let train_count = n - test_count;
    Ok(PairedDataset {
        samples,
        train_indices: (0..train_count).collect(),
        test_indices: (train_count..n).collect(),
    })
}
