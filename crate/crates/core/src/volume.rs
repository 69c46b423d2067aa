//! Dense 3D scalar volumes and complex spectra.
//!
//! Storage order is x-fastest: `index = x + nx * (y + ny * z)`, matching the
//! NIfTI voxel layout so file I/O needs no transposition. All math runs in
//! f64; file I/O narrows to f32 at the boundary.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense real scalar field with shape and voxel spacing in millimeters.
///
/// Values are immutable from a reader's perspective once constructed; the
/// mutating accessors (`data_mut`, `clamp_in_place`) require exclusive access
/// by construction, so shared references are safe across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    data: Vec<f64>,
    shape: (usize, usize, usize),
    spacing: (f64, f64, f64),
}

fn check_shape(shape: (usize, usize, usize)) -> Result<()> {
    if shape.0 == 0 || shape.1 == 0 || shape.2 == 0 {
        return Err(Error::invalid(format!(
            "volume shape components must be >= 1, got {shape:?}"
        )));
    }
    Ok(())
}

fn check_spacing(spacing: (f64, f64, f64)) -> Result<()> {
    let ok = |s: f64| s > 0.0 && s.is_finite();
    if !(ok(spacing.0) && ok(spacing.1) && ok(spacing.2)) {
        return Err(Error::invalid(format!(
            "voxel spacing must be strictly positive and finite, got {spacing:?}"
        )));
    }
    Ok(())
}

impl Volume3D {
    /// Volume of the given shape with every voxel set to `fill`.
    pub fn new(shape: (usize, usize, usize), spacing: (f64, f64, f64), fill: f64) -> Result<Self> {
        check_shape(shape)?;
        check_spacing(spacing)?;
        Ok(Self {
            data: vec![fill; shape.0 * shape.1 * shape.2],
            shape,
            spacing,
        })
    }

    /// Wraps an existing buffer; `data.len()` must equal the voxel count.
    pub fn from_vec(
        data: Vec<f64>,
        shape: (usize, usize, usize),
        spacing: (f64, f64, f64),
    ) -> Result<Self> {
        check_shape(shape)?;
        check_spacing(spacing)?;
        let n = shape.0 * shape.1 * shape.2;
        if data.len() != n {
            return Err(Error::invalid(format!(
                "data length {} does not match shape {:?} ({} voxels)",
                data.len(),
                shape,
                n
            )));
        }
        Ok(Self {
            data,
            shape,
            spacing,
        })
    }

    /// Zero volume with the same shape and spacing as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![0.0; self.data.len()],
            shape: self.shape,
            spacing: self.spacing,
        }
    }

    /// New volume with the same shape and spacing but different contents.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(data, self.shape, self.spacing)
    }

    /// Consumes the volume and replaces its spacing metadata.
    pub fn with_spacing(mut self, spacing: (f64, f64, f64)) -> Result<Self> {
        check_spacing(spacing)?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.spacing
    }

    /// Total voxel count.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat index of voxel (x, y, z).
    #[inline(always)]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape.0 * (y + self.shape.1 * z)
    }

    /// Inverse of [`index`](Self::index).
    #[inline(always)]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let (nx, ny, _) = self.shape;
        (index % nx, (index / nx) % ny, index / (nx * ny))
    }

    #[inline(always)]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    #[inline(always)]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn clamp_in_place(&mut self, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Fails with [`Error::ShapeMismatch`] unless both volumes share a shape.
pub fn check_same_shape(a: &Volume3D, b: &Volume3D) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape(),
            got: b.shape(),
        });
    }
    Ok(())
}

/// Maximum absolute voxel difference; zero iff the volumes are identical.
pub fn linf_distance(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    check_same_shape(a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Dense complex frequency-domain field. The full spectrum is stored (no
/// half-spectrum packing); its shape always equals the originating volume's.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum3D {
    data: Vec<Complex64>,
    shape: (usize, usize, usize),
}

impl Spectrum3D {
    pub fn zeros(shape: (usize, usize, usize)) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self {
            data: vec![Complex64::new(0.0, 0.0); shape.0 * shape.1 * shape.2],
            shape,
        })
    }

    pub fn from_vec(data: Vec<Complex64>, shape: (usize, usize, usize)) -> Result<Self> {
        check_shape(shape)?;
        let n = shape.0 * shape.1 * shape.2;
        if data.len() != n {
            return Err(Error::invalid(format!(
                "spectrum length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { data, shape })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline(always)]
    pub fn index(&self, kx: usize, ky: usize, kz: usize) -> usize {
        kx + self.shape.0 * (ky + self.shape.1 * kz)
    }

    #[inline(always)]
    pub fn at(&self, kx: usize, ky: usize, kz: usize) -> Complex64 {
        self.data[self.index(kx, ky, kz)]
    }

    /// Largest deviation from Hermitian symmetry, `max_k |S(k) - conj(S(-k))|`
    /// with negative indices taken modulo the shape. Zero (to rounding) for
    /// spectra of real volumes.
    pub fn max_hermitian_asymmetry(&self) -> f64 {
        let (nx, ny, nz) = self.shape;
        let mut worst = 0.0f64;
        for kz in 0..nz {
            for ky in 0..ny {
                for kx in 0..nx {
                    let mx = (nx - kx) % nx;
                    let my = (ny - ky) % ny;
                    let mz = (nz - kz) % nz;
                    let d = (self.at(kx, ky, kz) - self.at(mx, my, mz).conj()).norm();
                    worst = worst.max(d);
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_volume_constant_fill() {
        let v = Volume3D::new((2, 2, 2), (1.0, 1.0, 1.0), 0.0).unwrap();
        assert_eq!(v.len(), 8);
        assert!(v.data().iter().all(|&x| x == 0.0));

        let one = Volume3D::new((1, 1, 1), (1.0, 1.0, 1.0), 0.5).unwrap();
        assert_eq!(one.data(), &[0.5]);

        let tall = Volume3D::new((4, 4, 160), (1.0, 1.0, 1.0), 1.0).unwrap();
        assert_eq!(tall.len(), 2560);
        assert_eq!(tall.data().iter().sum::<f64>(), 2560.0);
    }

    #[test]
    fn new_volume_rejects_bad_arguments() {
        assert!(Volume3D::new((0, 2, 2), (1.0, 1.0, 1.0), 0.0).is_err());
        assert!(Volume3D::new((2, 2, 2), (0.0, 1.0, 1.0), 0.0).is_err());
        assert!(Volume3D::new((2, 2, 2), (-1.0, 1.0, 1.0), 0.0).is_err());
        assert!(Volume3D::new((2, 2, 2), (f64::NAN, 1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn linf_distance_trivial_cases() {
        let a = Volume3D::new((3, 3, 3), (1.0, 1.0, 1.0), 0.0).unwrap();
        let b = Volume3D::new((3, 3, 3), (1.0, 1.0, 1.0), 0.25).unwrap();
        assert_eq!(linf_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(linf_distance(&a, &b).unwrap(), 0.25);

        let c = Volume3D::new((3, 3, 2), (1.0, 1.0, 1.0), 0.0).unwrap();
        assert!(matches!(
            linf_distance(&a, &c),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn linf_distance_matches_exhaustive_scan() {
        // Brute-force oracle: scan every voxel explicitly.
        let mut a = Volume3D::new((4, 4, 4), (1.0, 1.0, 1.0), 0.0).unwrap();
        let mut b = a.clone();
        let mut state = 0x1234_5678_u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..a.len() {
            a.data_mut()[i] = next();
            b.data_mut()[i] = next();
        }
        let mut expected = 0.0f64;
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    let d = (a.at(x, y, z) - b.at(x, y, z)).abs();
                    if d > expected {
                        expected = d;
                    }
                }
            }
        }
        assert_eq!(linf_distance(&a, &b).unwrap(), expected);
    }

    #[test]
    fn indexing_round_trips() {
        let v = Volume3D::new((3, 5, 7), (1.0, 1.0, 1.0), 0.0).unwrap();
        for i in 0..v.len() {
            let (x, y, z) = v.coords(i);
            assert_eq!(v.index(x, y, z), i);
        }
    }
}
