//! Scalar volumes, displacement fields, and binary masks on regular 3-D grids.
//!
//! Data is stored x-fastest (`index = x + nx*(y + ny*z)`). Displacements are
//! in voxel units. Sampling outside the grid reads zero, so warped content
//! fades to zero at the boundary instead of clamping.

use crate::error::{Error, Result};
use crate::kernels;

/// Grid extents of a volume or field.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    /// Cubic grid of side `n`.
    pub fn cube(n: usize) -> Self {
        Dims { nx: n, ny: n, nz: n }
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of voxel (x, y, z); x runs fastest.
    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Scalar volume: one f32 per voxel plus isotropic spacing in millimetres.
///
/// The gestational day is carried when known; file formats do not persist it,
/// so it is populated from manifests.
#[derive(Clone, Debug)]
pub struct Volume {
    pub dims: Dims,
    pub spacing: f64,
    pub day: Option<i32>,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: f64, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dims(format!(
                "volume data length {} does not match dims {dims}",
                data.len()
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing}")));
        }
        Ok(Volume { dims, spacing, day: None, data })
    }

    pub fn zeros(dims: Dims, spacing: f64) -> Self {
        Volume { dims, spacing, day: None, data: vec![0.0; dims.len()] }
    }

    /// Builds a volume by evaluating `f` at every voxel.
    pub fn from_fn(dims: Dims, spacing: f64, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume { dims, spacing, day: None, data }
    }

    pub fn with_day(mut self, day: i32) -> Self {
        self.day = Some(day);
        self
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.idx(x, y, z)]
    }

    /// Data promoted to f64 (exact).
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Rebuilds a volume from f64 working data, rounding to f32.
    pub fn from_f64(dims: Dims, spacing: f64, data: &[f64]) -> Self {
        Volume { dims, spacing, day: None, data: data.iter().map(|&v| v as f32).collect() }
    }
}

/// Dense displacement or velocity field: one 3-vector per voxel, components
/// interleaved (x, y, z), voxel units. f64 so exact gradients survive the
/// finite-difference checks the optimizer is validated against.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl VectorField {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * dims.len() {
            return Err(Error::dims(format!(
                "field data length {} does not match 3x dims {dims}",
                data.len()
            )));
        }
        Ok(VectorField { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        VectorField { dims, data: vec![0.0; 3 * dims.len()] }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let v = f(x, y, z);
                    data.extend_from_slice(&v);
                }
            }
        }
        VectorField { dims, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let i = 3 * self.dims.idx(x, y, z);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: [f64; 3]) {
        let i = 3 * self.dims.idx(x, y, z);
        self.data[i..i + 3].copy_from_slice(&v);
    }

    /// Largest per-voxel Euclidean norm.
    pub fn max_norm(&self) -> f64 {
        self.data
            .chunks_exact(3)
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Mean per-voxel Euclidean norm.
    pub fn mean_norm(&self) -> f64 {
        if self.dims.is_empty() {
            return 0.0;
        }
        let s: f64 = self
            .data
            .chunks_exact(3)
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .sum();
        s / self.dims.len() as f64
    }

    /// Scales every component in place.
    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

/// Binary mask over a grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub dims: Dims,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(dims: Dims, data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dims(format!(
                "mask data length {} does not match dims {dims}",
                data.len()
            )));
        }
        Ok(Mask { dims, data })
    }

    pub fn filled(dims: Dims, value: bool) -> Self {
        Mask { dims, data: vec![value; dims.len()] }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Mask { dims, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.dims.idx(x, y, z)]
    }

    /// Number of set voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Mask as a 0/1 indicator volume.
    pub fn to_volume(&self, spacing: f64) -> Volume {
        Volume {
            dims: self.dims,
            spacing,
            day: None,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Trilinear sample of `vol` at continuous voxel coordinate `p`; zero outside.
///
/// Voxel centers sit at integer coordinates, so `p = (x, y, z)` returns the
/// stored value exactly.
pub fn trilinear_sample(vol: &Volume, p: [f64; 3]) -> f64 {
    kernels::sample_scalar_f32(vol.dims, &vol.data, p)
}

/// Pull-back warp: `out(x) = vol(x + u(x))`, trilinear, zero outside.
pub fn warp(vol: &Volume, u: &VectorField) -> Result<Volume> {
    if vol.dims != u.dims {
        return Err(Error::dims(format!("warp: volume {} vs field {}", vol.dims, u.dims)));
    }
    let dims = vol.dims;
    let mut out = vec![0.0f32; dims.len()];
    let mut i = 0usize;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let d = &u.data[3 * i..3 * i + 3];
                let p = [x as f64 + d[0], y as f64 + d[1], z as f64 + d[2]];
                out[i] = kernels::sample_scalar_f32(dims, &vol.data, p) as f32;
                i += 1;
            }
        }
    }
    Ok(Volume { dims, spacing: vol.spacing, day: vol.day, data: out })
}

/// Warps a binary mask: trilinear on the 0/1 indicator, then threshold at 0.5.
pub fn warp_mask(mask: &Mask, u: &VectorField) -> Result<Mask> {
    if mask.dims != u.dims {
        return Err(Error::dims(format!("warp_mask: mask {} vs field {}", mask.dims, u.dims)));
    }
    let dims = mask.dims;
    let indicator: Vec<f32> = mask.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut out = vec![false; dims.len()];
    let mut i = 0usize;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let d = &u.data[3 * i..3 * i + 3];
                let p = [x as f64 + d[0], y as f64 + d[1], z as f64 + d[2]];
                out[i] = kernels::sample_scalar_f32(dims, &indicator, p) >= 0.5;
                i += 1;
            }
        }
    }
    Ok(Mask { dims, data: out })
}

/// Resamples to a new isotropic spacing, preserving the physical field of
/// view within one voxel. Output extents are `round(n * old / new)` per axis.
pub fn resample_to_spacing(vol: &Volume, new_spacing: f64) -> Result<Volume> {
    if !(new_spacing.is_finite() && new_spacing > 0.0) {
        return Err(Error::invalid(format!("target spacing must be positive, got {new_spacing}")));
    }
    let ratio = vol.spacing / new_spacing;
    let nd = |n: usize| ((n as f64 * ratio).round() as usize).max(1);
    let dims = Dims::new(nd(vol.dims.nx), nd(vol.dims.ny), nd(vol.dims.nz));
    let mut out = Vec::with_capacity(dims.len());
    // Voxel centers at (i + 0.5) * spacing from the volume corner.
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let p = [
                    (x as f64 + 0.5) / ratio - 0.5,
                    (y as f64 + 0.5) / ratio - 0.5,
                    (z as f64 + 0.5) / ratio - 0.5,
                ];
                out.push(kernels::sample_scalar_f32(vol.dims, &vol.data, p) as f32);
            }
        }
    }
    Ok(Volume { dims, spacing: new_spacing, day: vol.day, data: out })
}

/// Center-crops or zero-pads to `target`, same convention in both directions
/// so pad-then-crop round-trips exactly.
pub fn center_crop_pad(vol: &Volume, target: Dims) -> Volume {
    let dims = vol.dims;
    // Signed start of the source window inside the input, per axis.
    let start = |n_in: usize, n_out: usize| (n_in as i64 - n_out as i64).div_euclid(2);
    let (sx, sy, sz) = (
        start(dims.nx, target.nx),
        start(dims.ny, target.ny),
        start(dims.nz, target.nz),
    );
    let mut out = vec![0.0f32; target.len()];
    for z in 0..target.nz {
        let zi = z as i64 + sz;
        if zi < 0 || zi >= dims.nz as i64 {
            continue;
        }
        for y in 0..target.ny {
            let yi = y as i64 + sy;
            if yi < 0 || yi >= dims.ny as i64 {
                continue;
            }
            for x in 0..target.nx {
                let xi = x as i64 + sx;
                if xi < 0 || xi >= dims.nx as i64 {
                    continue;
                }
                out[target.idx(x, y, z)] = vol.data[dims.idx(xi as usize, yi as usize, zi as usize)];
            }
        }
    }
    Volume { dims: target, spacing: vol.spacing, day: vol.day, data: out }
}

/// Acquisition-matched atlas voxel spacing (mm) for a gestational day.
///
/// Linear in day: `-0.3606 + 0.0084 * day`, valid for days 56..=90
/// (0.1098 mm at day 56 up to 0.3954 mm at day 90).
pub fn spacing_for_day(day: i32) -> Result<f64> {
    const LO: i32 = 56;
    const HI: i32 = 90;
    if !(LO..=HI).contains(&day) {
        return Err(Error::DayOutOfRange { day, lo: LO, hi: HI });
    }
    Ok(-0.3606 + 0.0084 * day as f64)
}
