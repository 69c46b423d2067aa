//! Orthonormal 3D discrete Fourier transforms.
//!
//! Every 1D stage carries a 1/sqrt(n) factor in both directions, so Parseval's
//! identity holds exactly and forward-then-inverse is the identity. Power-of-two
//! axis lengths take an iterative radix-2 path; other lengths fall back to
//! direct per-axis summation. [`naive_dft3`] is a separate O(N^2) realization
//! of the transform definition, kept as the oracle the test suites compare
//! against. The full complex spectrum is stored; no half-spectrum packing.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::volume::{Spectrum3D, Volume3D};

/// Size guard for the naive oracle, which is quadratic in the voxel count.
pub const NAIVE_DFT_MAX_VOXELS: usize = 32768;

/// Precomputed per-axis transform data for one volume shape.
///
/// The normalization is always orthonormal; the plan is immutable after
/// creation and safe to share across threads.
pub struct FftPlan {
    shape: (usize, usize, usize),
    axes: [AxisPlan; 3],
}

struct AxisPlan {
    radix2: bool,
    // roots[m] = exp(-2*pi*i*m/n); inverse transforms use the conjugate.
    forward_roots: Vec<Complex64>,
    inverse_roots: Vec<Complex64>,
    scale: f64,
}

impl AxisPlan {
    fn new(n: usize) -> Self {
        let mut forward_roots = Vec::with_capacity(n);
        let mut inverse_roots = Vec::with_capacity(n);
        for m in 0..n {
            let theta = -2.0 * PI * (m as f64) / (n as f64);
            let w = Complex64::new(theta.cos(), theta.sin());
            forward_roots.push(w);
            inverse_roots.push(w.conj());
        }
        Self {
            radix2: n.is_power_of_two(),
            forward_roots,
            inverse_roots,
            scale: 1.0 / (n as f64).sqrt(),
        }
    }

    fn transform_line(&self, line: &mut [Complex64], scratch: &mut Vec<Complex64>, inverse: bool) {
        let roots = if inverse {
            &self.inverse_roots
        } else {
            &self.forward_roots
        };
        if self.radix2 {
            radix2_line(line, roots);
        } else {
            naive_line(line, roots, scratch);
        }
        for v in line.iter_mut() {
            *v *= self.scale;
        }
    }
}

/// Iterative radix-2 decimation-in-time FFT of one line (length power of two).
fn radix2_line(buf: &mut [Complex64], roots: &[Complex64]) {
    let n = buf.len();
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = roots[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Direct summation transform of one line, used for non-power-of-two lengths.
fn naive_line(buf: &mut [Complex64], roots: &[Complex64], scratch: &mut Vec<Complex64>) {
    let n = buf.len();
    scratch.clear();
    scratch.extend_from_slice(buf);
    for (k, out) in buf.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &x) in scratch.iter().enumerate() {
            acc += x * roots[(j * k) % n];
        }
        *out = acc;
    }
}

impl FftPlan {
    pub fn new(shape: (usize, usize, usize)) -> Self {
        Self {
            shape,
            axes: [
                AxisPlan::new(shape.0),
                AxisPlan::new(shape.1),
                AxisPlan::new(shape.2),
            ],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    /// Orthonormal forward DFT.
    pub fn forward(&self, v: &Volume3D) -> Result<Spectrum3D> {
        self.check(v.shape())?;
        let mut data: Vec<Complex64> = v
            .data()
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect();
        self.transform(&mut data, false);
        Spectrum3D::from_vec(data, self.shape)
    }

    /// Orthonormal inverse DFT; the (tiny, for Hermitian input) imaginary
    /// residue is discarded.
    pub fn inverse(&self, s: &Spectrum3D) -> Result<Volume3D> {
        let full = self.inverse_complex(s)?;
        let data = full.data().iter().map(|c| c.re).collect();
        Volume3D::from_vec(data, self.shape, (1.0, 1.0, 1.0))
    }

    /// Orthonormal inverse DFT with the complex result retained.
    pub fn inverse_complex(&self, s: &Spectrum3D) -> Result<Spectrum3D> {
        self.check(s.shape())?;
        let mut data = s.data().to_vec();
        self.transform(&mut data, true);
        Spectrum3D::from_vec(data, self.shape)
    }

    fn check(&self, got: (usize, usize, usize)) -> Result<()> {
        if got != self.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                got,
            });
        }
        Ok(())
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let (nx, ny, nz) = self.shape;
        let mut scratch = Vec::new();

        // Axis 0: lines are contiguous.
        let ax = &self.axes[0];
        for z in 0..nz {
            for y in 0..ny {
                let start = nx * (y + ny * z);
                ax.transform_line(&mut data[start..start + nx], &mut scratch, inverse);
            }
        }

        // Axis 1: gather/scatter with stride nx.
        let ay = &self.axes[1];
        let mut line = vec![Complex64::new(0.0, 0.0); ny];
        for z in 0..nz {
            for x in 0..nx {
                for y in 0..ny {
                    line[y] = data[x + nx * (y + ny * z)];
                }
                ay.transform_line(&mut line, &mut scratch, inverse);
                for y in 0..ny {
                    data[x + nx * (y + ny * z)] = line[y];
                }
            }
        }

        // Axis 2: gather/scatter with stride nx*ny.
        let az = &self.axes[2];
        let mut line = vec![Complex64::new(0.0, 0.0); nz];
        for y in 0..ny {
            for x in 0..nx {
                for z in 0..nz {
                    line[z] = data[x + nx * (y + ny * z)];
                }
                az.transform_line(&mut line, &mut scratch, inverse);
                for z in 0..nz {
                    data[x + nx * (y + ny * z)] = line[z];
                }
            }
        }
    }
}

/// Orthonormal forward 3D DFT of a real volume.
pub fn dft3_forward(v: &Volume3D) -> Spectrum3D {
    FftPlan::new(v.shape())
        .forward(v)
        .expect("plan built for this shape")
}

/// Orthonormal inverse 3D DFT, real part.
pub fn dft3_inverse(s: &Spectrum3D) -> Volume3D {
    FftPlan::new(s.shape())
        .inverse(s)
        .expect("plan built for this shape")
}

/// Orthonormal inverse 3D DFT with the complex result retained.
pub fn dft3_inverse_complex(s: &Spectrum3D) -> Spectrum3D {
    FftPlan::new(s.shape())
        .inverse_complex(s)
        .expect("plan built for this shape")
}

fn naive_guard(len: usize) -> Result<()> {
    if len > NAIVE_DFT_MAX_VOXELS {
        return Err(Error::invalid(format!(
            "naive DFT limited to {NAIVE_DFT_MAX_VOXELS} voxels, got {len}"
        )));
    }
    Ok(())
}

/// Direct-summation orthonormal 3D DFT of a real volume (the test oracle).
///
/// O(N^2); guarded to [`NAIVE_DFT_MAX_VOXELS`] voxels.
pub fn naive_dft3(v: &Volume3D, inverse: bool) -> Result<Spectrum3D> {
    naive_guard(v.len())?;
    let input: Vec<Complex64> = v
        .data()
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .collect();
    naive_dft3_impl(&input, v.shape(), inverse)
}

/// Direct-summation orthonormal 3D DFT of a complex field.
pub fn naive_dft3_complex(s: &Spectrum3D, inverse: bool) -> Result<Spectrum3D> {
    naive_guard(s.len())?;
    naive_dft3_impl(s.data(), s.shape(), inverse)
}

fn naive_dft3_impl(
    input: &[Complex64],
    shape: (usize, usize, usize),
    inverse: bool,
) -> Result<Spectrum3D> {
    let (nx, ny, nz) = shape;
    let sign = if inverse { 1.0 } else { -1.0 };
    let root = |n: usize| -> Vec<Complex64> {
        (0..n)
            .map(|m| {
                let theta = sign * 2.0 * PI * (m as f64) / (n as f64);
                Complex64::new(theta.cos(), theta.sin())
            })
            .collect()
    };
    let rx = root(nx);
    let ry = root(ny);
    let rz = root(nz);
    let norm = 1.0 / ((nx * ny * nz) as f64).sqrt();

    let mut out = vec![Complex64::new(0.0, 0.0); input.len()];
    for kz in 0..nz {
        for ky in 0..ny {
            for kx in 0..nx {
                let mut acc = Complex64::new(0.0, 0.0);
                for z in 0..nz {
                    for y in 0..ny {
                        let wyz = ry[(ky * y) % ny] * rz[(kz * z) % nz];
                        let row = nx * (y + ny * z);
                        for x in 0..nx {
                            acc += input[row + x] * (rx[(kx * x) % nx] * wyz);
                        }
                    }
                }
                out[kx + nx * (ky + ny * kz)] = acc * norm;
            }
        }
    }
    Spectrum3D::from_vec(out, shape)
}
