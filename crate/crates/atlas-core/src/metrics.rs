//! Evaluation metrics: mask overlap, head segmentation and volume,
//! reference volume curve, local sharpness, and structural similarity.

use crate::error::{Error, Result};
use crate::kernels;
use crate::volume::{Dims, Mask, Volume};

/// Dice overlap 2|a∩b| / (|a|+|b|); two empty masks agree vacuously (1).
pub fn dsc(a: &Mask, b: &Mask) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::dims(format!("dsc: {} vs {}", a.dims, b.dims)));
    }
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// 1D squared Euclidean distance transform (lower envelope of parabolas).
/// `f` holds per-cell seed costs (0 at seeds, +inf elsewhere).
fn dt1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let finite: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if finite.is_empty() {
        d[..n].fill(f64::INFINITY);
        return;
    }
    let mut v = vec![0usize; finite.len()];
    let mut z = vec![0.0f64; finite.len() + 1];
    let mut k = 0usize;
    v[0] = finite[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for &q in &finite[1..] {
        let fq = f[q] + (q * q) as f64;
        loop {
            let p = v[k];
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        d[q] = (q as f64 - p as f64) * (q as f64 - p as f64) + f[p];
    }
}

/// Squared Euclidean distance to the nearest seed voxel, separable over axes.
fn edt_sq(dims: Dims, seed: &[bool]) -> Vec<f64> {
    let mut d: Vec<f64> = seed
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let mut line = vec![0.0f64; nx.max(ny).max(nz)];
    let mut out = vec![0.0f64; line.len()];
    // x lines
    for z in 0..nz {
        for y in 0..ny {
            let base = dims.idx(0, y, z);
            line[..nx].copy_from_slice(&d[base..base + nx]);
            dt1d(&line[..nx], &mut out[..nx]);
            d[base..base + nx].copy_from_slice(&out[..nx]);
        }
    }
    // y lines
    for z in 0..nz {
        for x in 0..nx {
            for y in 0..ny {
                line[y] = d[dims.idx(x, y, z)];
            }
            dt1d(&line[..ny], &mut out[..ny]);
            for y in 0..ny {
                d[dims.idx(x, y, z)] = out[y];
            }
        }
    }
    // z lines
    for y in 0..ny {
        for x in 0..nx {
            for z in 0..nz {
                line[z] = d[dims.idx(x, y, z)];
            }
            dt1d(&line[..nz], &mut out[..nz]);
            for z in 0..nz {
                d[dims.idx(x, y, z)] = out[z];
            }
        }
    }
    d
}

/// Dilation by the Euclidean ball of radius `r` (outside the grid is
/// background, so nothing grows in from the boundary).
pub fn dilate(mask: &Mask, r: u32) -> Mask {
    let fg: Vec<bool> = mask.data.clone();
    let d = edt_sq(mask.dims, &fg);
    let r2 = (r * r) as f64;
    Mask { dims: mask.dims, data: d.iter().map(|&v| v <= r2).collect() }
}

/// Erosion by the Euclidean ball of radius `r`; the grid boundary counts as
/// background, so foreground touching a face is shaved like any other edge.
pub fn erode(mask: &Mask, r: u32) -> Mask {
    let bg: Vec<bool> = mask.data.iter().map(|&v| !v).collect();
    let mut d = edt_sq(mask.dims, &bg);
    let dims = mask.dims;
    let mut i = 0usize;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let bx = (x + 1).min(dims.nx - x) as f64;
                let by = (y + 1).min(dims.ny - y) as f64;
                let bz = (z + 1).min(dims.nz - z) as f64;
                let face = bx.min(by).min(bz);
                d[i] = d[i].min(face * face);
                i += 1;
            }
        }
    }
    let r2 = (r * r) as f64;
    Mask { dims, data: d.iter().map(|&v| v > r2).collect() }
}

pub fn opening(mask: &Mask, r: u32) -> Mask {
    dilate(&erode(mask, r), r)
}

pub fn closing(mask: &Mask, r: u32) -> Mask {
    erode(&dilate(mask, r), r)
}

/// Morphology radius for a grid with side `n`: 10 voxels at 128³, scaled
/// down proportionally and never below 1.
pub fn head_mask_radius(n: usize) -> u32 {
    ((10.0 * n as f64 / 128.0).round() as u32).max(1)
}

/// Head segmentation of an atlas frame: threshold at 0.1, then binary
/// opening and closing with a ball scaled to the grid side.
pub fn atlas_head_mask(vol: &Volume) -> Mask {
    let raw = Mask {
        dims: vol.dims,
        data: vol.data.iter().map(|&v| v >= 0.1).collect(),
    };
    let n = vol.dims.nx.min(vol.dims.ny).min(vol.dims.nz);
    let r = head_mask_radius(n);
    closing(&opening(&raw, r), r)
}

/// Mask volume in cm³ at an isotropic voxel spacing in mm.
pub fn head_volume_cm3(mask: &Mask, spacing_mm: f64) -> f64 {
    mask.count() as f64 * spacing_mm.powi(3) / 1000.0
}

/// Reference head-volume curve (cm³) over gestational days; defined only
/// where the base is positive.
pub fn hv_reference(day: i32) -> Result<f64> {
    let base = -1.0947 + 0.0315 * day as f64;
    if base <= 0.0 {
        return Err(Error::DayOutOfRange { day, lo: 35, hi: i32::MAX });
    }
    Ok(base.powi(4))
}

/// Relative head-volume error in percent against the reference curve.
pub fn hv_error_pct(volume_cm3: f64, day: i32) -> Result<f64> {
    let r = hv_reference(day)?;
    Ok(100.0 * (volume_cm3 - r).abs() / r)
}

/// Mean over mask voxels of (local std / local mean) in a `j`³ neighborhood
/// clipped at the volume boundary; windows with near-zero mean contribute 0.
/// Population std, no Bessel correction.
pub fn sharpness(vol: &Volume, mask: &Mask, j: usize) -> Result<f64> {
    if vol.dims != mask.dims {
        return Err(Error::dims(format!("sharpness: {} vs {}", vol.dims, mask.dims)));
    }
    if j == 0 || j % 2 == 0 {
        return Err(Error::invalid("sharpness window must be odd and positive"));
    }
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let dims = vol.dims;
    let r = j / 2;
    let v: Vec<f64> = vol.data.iter().map(|&x| x as f64).collect();
    let v2: Vec<f64> = v.iter().map(|x| x * x).collect();
    let ones = vec![1.0f64; dims.len()];
    let s = kernels::box_sum3(dims, &v, r);
    let s2 = kernels::box_sum3(dims, &v2, r);
    let cnt = kernels::box_sum3(dims, &ones, r);
    let mut acc = 0.0;
    for i in 0..dims.len() {
        if !mask.data[i] {
            continue;
        }
        let c = cnt[i];
        let mean = s[i] / c;
        if mean < 1e-6 {
            continue;
        }
        let var = (s2[i] / c - mean * mean).max(0.0);
        acc += var.sqrt() / mean;
    }
    Ok(acc / n as f64)
}

/// Mean local structural similarity over sliding windows (side `window`)
/// clipped at the boundary; stabilizers C1=(0.01·L)², C2=(0.03·L)², L=1.
pub fn ssim(a: &Volume, b: &Volume, window: usize) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::dims(format!("ssim: {} vs {}", a.dims, b.dims)));
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid("ssim window must be odd and positive"));
    }
    let dims = a.dims;
    let r = window / 2;
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let av: Vec<f64> = a.data.iter().map(|&x| x as f64).collect();
    let bv: Vec<f64> = b.data.iter().map(|&x| x as f64).collect();
    let aa: Vec<f64> = av.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = bv.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x * y).collect();
    let ones = vec![1.0f64; dims.len()];
    let sa = kernels::box_sum3(dims, &av, r);
    let sb = kernels::box_sum3(dims, &bv, r);
    let saa = kernels::box_sum3(dims, &aa, r);
    let sbb = kernels::box_sum3(dims, &bb, r);
    let sab = kernels::box_sum3(dims, &ab, r);
    let cnt = kernels::box_sum3(dims, &ones, r);
    let mut acc = 0.0;
    for i in 0..dims.len() {
        let c = cnt[i];
        let ma = sa[i] / c;
        let mb = sb[i] / c;
        let va = saa[i] / c - ma * ma;
        let vb = sbb[i] / c - mb * mb;
        let cov = sab[i] / c - ma * mb;
        let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        acc += s;
    }
    Ok(acc / dims.len() as f64)
}

/// Per-image registration quality.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ImageRow {
    pub subject_id: String,
    pub day: i32,
    pub dsc: f64,
    pub pct_nonpos_jacobian: f64,
}

/// Per-day atlas quality.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DayRow {
    pub day: i32,
    pub hv_cm3: f64,
    /// Percent error against the reference curve; absent when the day lies
    /// outside the curve's validity.
    pub hv_error_pct: Option<f64>,
    pub sharpness: f64,
    /// Similarity of the fitted atlas frame to the initial one.
    pub ssim_vs_initial: f64,
}

/// Evaluation summary: per-image rows plus per-day rows.
#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageRow>,
    pub days: Vec<DayRow>,
}

/// Mean and population standard deviation; (0, 0) on empty input.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricReport {
    pub fn dsc_mean_std(&self) -> (f64, f64) {
        mean_std(&self.images.iter().map(|r| r.dsc).collect::<Vec<_>>())
    }

    pub fn nonpos_jacobian_mean_std(&self) -> (f64, f64) {
        mean_std(&self.images.iter().map(|r| r.pct_nonpos_jacobian).collect::<Vec<_>>())
    }

    pub fn sharpness_mean_std(&self) -> (f64, f64) {
        mean_std(&self.days.iter().map(|r| r.sharpness).collect::<Vec<_>>())
    }
}
