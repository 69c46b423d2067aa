//! Intensity and geometry conditioning: percentile normalization, z-axis
//! resampling to a target slice spacing, and corner-aligned trilinear resize.
//! The pipeline order is normalize -> resample_z -> resize.

use crate::error::{Error, Result};
use crate::volume::Volume3D;

/// Percentile of `sorted` (ascending) by linear interpolation between order
/// statistics at rank `p/100 * (N - 1)`.
pub fn percentile_of_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = (p / 100.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor().clamp(0.0, (sorted.len() - 1) as f64) as usize;
    let frac = rank - lo as f64;
    if frac <= 0.0 || lo + 1 >= sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// The (lo, hi) clip bounds used by [`percentile_normalize`].
pub fn percentile_bounds(v: &Volume3D, p_lo: f64, p_hi: f64) -> Result<(f64, f64)> {
    if !(p_lo < p_hi && (0.0..=100.0).contains(&p_lo) && (0.0..=100.0).contains(&p_hi)) {
        return Err(Error::invalid(format!(
            "percentiles must satisfy 0 <= p_lo < p_hi <= 100, got ({p_lo}, {p_hi})"
        )));
    }
    let mut sorted = v.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((
        percentile_of_sorted(&sorted, p_lo),
        percentile_of_sorted(&sorted, p_hi),
    ))
}

/// Clips to the [p_lo, p_hi] percentile bounds and maps affinely to [0, 1].
/// A degenerate volume (hi = lo) maps to all zeros.
pub fn percentile_normalize(v: &Volume3D, p_lo: f64, p_hi: f64) -> Result<Volume3D> {
    let (lo, hi) = percentile_bounds(v, p_lo, p_hi)?;
    if hi <= lo {
        return Ok(v.zeros_like());
    }
    let scale = 1.0 / (hi - lo);
    v.with_data(
        v.data()
            .iter()
            .map(|&x| (x.clamp(lo, hi) - lo) * scale)
            .collect(),
    )
}

/// Linear resampling along z onto positions 0, s, 2s, ... covering the
/// original extent; x and y are untouched and the output z-spacing is
/// `target_sz_mm`.
pub fn resample_z(v: &Volume3D, target_sz_mm: f64) -> Result<Volume3D> {
    if !(target_sz_mm > 0.0 && target_sz_mm.is_finite()) {
        return Err(Error::invalid("target z spacing must be positive"));
    }
    let (nx, ny, nz) = v.shape();
    if nz < 2 {
        return Err(Error::invalid(
            "resample_z needs at least 2 slices to interpolate",
        ));
    }
    let sz = v.spacing().2;
    let extent = (nz - 1) as f64 * sz;
    // Tiny epsilon so exactly-on-boundary sample counts are not lost to
    // rounding.
    let n_out = ((extent / target_sz_mm) * (1.0 + 1e-12) + 1e-12).floor() as usize + 1;

    let mut data = vec![0.0; nx * ny * n_out];
    for k in 0..n_out {
        let pos = k as f64 * target_sz_mm / sz;
        let j = (pos.floor() as usize).min(nz - 2);
        let frac = (pos - j as f64).clamp(0.0, 1.0);
        for y in 0..ny {
            for x in 0..nx {
                let a = v.at(x, y, j);
                let value = if frac == 0.0 {
                    a
                } else {
                    a + frac * (v.at(x, y, j + 1) - a)
                };
                data[x + nx * (y + ny * k)] = value;
            }
        }
    }
    Volume3D::from_vec(
        data,
        (nx, ny, n_out),
        (v.spacing().0, v.spacing().1, target_sz_mm),
    )
}

/// Corner-aligned trilinear resize: output index i maps to input coordinate
/// `i * (n_in - 1) / (n_out - 1)`; spacing is rescaled to preserve the
/// physical extent.
pub fn resize_trilinear(v: &Volume3D, target_shape: (usize, usize, usize)) -> Result<Volume3D> {
    let (tx, ty, tz) = target_shape;
    if tx == 0 || ty == 0 || tz == 0 {
        return Err(Error::invalid("target shape components must be >= 1"));
    }
    let (nx, ny, nz) = v.shape();

    struct AxisMap {
        idx0: Vec<usize>,
        idx1: Vec<usize>,
        frac: Vec<f64>,
    }
    let axis_map = |n_in: usize, n_out: usize| -> AxisMap {
        let mut idx0 = Vec::with_capacity(n_out);
        let mut idx1 = Vec::with_capacity(n_out);
        let mut frac = Vec::with_capacity(n_out);
        let scale = if n_out > 1 && n_in > 1 {
            (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            0.0
        };
        for i in 0..n_out {
            let coord = (i as f64 * scale).clamp(0.0, (n_in - 1) as f64);
            let lo = (coord.floor() as usize).min(n_in.saturating_sub(2).max(0));
            let f = (coord - lo as f64).clamp(0.0, 1.0);
            idx0.push(lo);
            idx1.push((lo + 1).min(n_in - 1));
            frac.push(f);
        }
        AxisMap { idx0, idx1, frac }
    };
    let mx = axis_map(nx, tx);
    let my = axis_map(ny, ty);
    let mz = axis_map(nz, tz);

    let mut data = vec![0.0; tx * ty * tz];
    for z in 0..tz {
        let (z0, z1, fz) = (mz.idx0[z], mz.idx1[z], mz.frac[z]);
        for y in 0..ty {
            let (y0, y1, fy) = (my.idx0[y], my.idx1[y], my.frac[y]);
            for x in 0..tx {
                let (x0, x1, fx) = (mx.idx0[x], mx.idx1[x], mx.frac[x]);
                let c000 = v.at(x0, y0, z0);
                let c100 = v.at(x1, y0, z0);
                let c010 = v.at(x0, y1, z0);
                let c110 = v.at(x1, y1, z0);
                let c001 = v.at(x0, y0, z1);
                let c101 = v.at(x1, y0, z1);
                let c011 = v.at(x0, y1, z1);
                let c111 = v.at(x1, y1, z1);
                let c00 = c000 + fx * (c100 - c000);
                let c10 = c010 + fx * (c110 - c010);
                let c01 = c001 + fx * (c101 - c001);
                let c11 = c011 + fx * (c111 - c011);
                let c0 = c00 + fy * (c10 - c00);
                let c1 = c01 + fy * (c11 - c01);
                data[x + tx * (y + ty * z)] = c0 + fz * (c1 - c0);
            }
        }
    }

    let respace = |s: f64, n_in: usize, n_out: usize| {
        if n_in > 1 && n_out > 1 {
            s * (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            s * n_in as f64 / n_out as f64
        }
    };
    let (sx, sy, sz) = v.spacing();
    Volume3D::from_vec(
        data,
        target_shape,
        (respace(sx, nx, tx), respace(sy, ny, ty), respace(sz, nz, tz)),
    )
}
