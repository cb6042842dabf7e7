//! Shared f64 grid kernels: trilinear sampling with analytic derivatives,
//! their scatter adjoints, separable box sums, and Gaussian smoothing.
//!
//! Everything here treats coordinates in voxel units with voxel centers at
//! integers and reads zero outside the grid. Vector fields are interleaved
//! (x, y, z per voxel). These kernels are the hot path of both the forward
//! objective and its hand-written reverse pass, so the pair of them must
//! mirror each other exactly.

use crate::volume::Dims;

/// Floor/fraction split of a sample position.
#[inline]
pub fn cell(p: [f64; 3]) -> ([i64; 3], [f64; 3]) {
    let b = [p[0].floor(), p[1].floor(), p[2].floor()];
    ([b[0] as i64, b[1] as i64, b[2] as i64], [p[0] - b[0], p[1] - b[1], p[2] - b[2]])
}

/// True when all 8 cell corners are inside the grid.
#[inline]
pub fn cell_inside(dims: Dims, b: [i64; 3]) -> bool {
    b[0] >= 0
        && b[1] >= 0
        && b[2] >= 0
        && b[0] + 1 < dims.nx as i64
        && b[1] + 1 < dims.ny as i64
        && b[2] + 1 < dims.nz as i64
}

/// The 8 trilinear corner weights for fractional offset `f`.
#[inline]
pub fn corner_weights(f: [f64; 3]) -> [f64; 8] {
    let (fx, fy, fz) = (f[0], f[1], f[2]);
    let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
    [
        gx * gy * gz, // 000
        fx * gy * gz, // 100
        gx * fy * gz, // 010
        fx * fy * gz, // 110
        gx * gy * fz, // 001
        fx * gy * fz, // 101
        gx * fy * fz, // 011
        fx * fy * fz, // 111
    ]
}

/// Corner flat-index offsets (x, y, z, then combinations), in voxels.
#[inline]
pub(crate) fn corner_offsets(dims: Dims) -> [usize; 8] {
    let sx = 1usize;
    let sy = dims.nx;
    let sz = dims.nx * dims.ny;
    [0, sx, sy, sx + sy, sz, sx + sz, sy + sz, sx + sy + sz]
}

/// Gathers the 8 corner values of a scalar grid, zero outside.
#[inline]
fn gather_scalar<T: Copy + Into<f64>>(dims: Dims, data: &[T], b: [i64; 3]) -> [f64; 8] {
    let mut c = [0.0f64; 8];
    if cell_inside(dims, b) {
        let base = dims.idx(b[0] as usize, b[1] as usize, b[2] as usize);
        let offs = corner_offsets(dims);
        for (k, &o) in offs.iter().enumerate() {
            // Bounds proven by cell_inside: base + o < data.len().
            c[k] = unsafe { (*data.get_unchecked(base + o)).into() };
        }
        return c;
    }
    let mut k = 0;
    for dz in 0..2i64 {
        for dy in 0..2i64 {
            for dx in 0..2i64 {
                let (x, y, z) = (b[0] + dx, b[1] + dy, b[2] + dz);
                if x >= 0
                    && y >= 0
                    && z >= 0
                    && x < dims.nx as i64
                    && y < dims.ny as i64
                    && z < dims.nz as i64
                {
                    c[k] = data[dims.idx(x as usize, y as usize, z as usize)].into();
                }
                k += 1;
            }
        }
    }
    c
}

#[inline]
pub(crate) fn lerp8(c: [f64; 8], f: [f64; 3]) -> f64 {
    let c00 = c[0] + f[0] * (c[1] - c[0]);
    let c10 = c[2] + f[0] * (c[3] - c[2]);
    let c01 = c[4] + f[0] * (c[5] - c[4]);
    let c11 = c[6] + f[0] * (c[7] - c[6]);
    let c0 = c00 + f[1] * (c10 - c00);
    let c1 = c01 + f[1] * (c11 - c01);
    c0 + f[2] * (c1 - c0)
}

/// Spatial derivative of the trilinear interpolant from its 8 corner values.
#[inline]
pub(crate) fn lerp8_grad(c: [f64; 8], f: [f64; 3]) -> [f64; 3] {
    let (fx, fy, fz) = (f[0], f[1], f[2]);
    let (gy, gz) = (1.0 - fy, 1.0 - fz);
    let dx = ((c[1] - c[0]) * gy + (c[3] - c[2]) * fy) * gz
        + ((c[5] - c[4]) * gy + (c[7] - c[6]) * fy) * fz;
    let gx = 1.0 - fx;
    let dy = ((c[2] - c[0]) * gx + (c[3] - c[1]) * fx) * gz
        + ((c[6] - c[4]) * gx + (c[7] - c[5]) * fx) * fz;
    let dz = ((c[4] - c[0]) * gx + (c[5] - c[1]) * fx) * gy
        + ((c[6] - c[2]) * gx + (c[7] - c[3]) * fx) * fy;
    [dx, dy, dz]
}

/// Trilinear sample of an f32 scalar grid (promoted to f64), zero outside.
pub fn sample_scalar_f32(dims: Dims, data: &[f32], p: [f64; 3]) -> f64 {
    let (b, f) = cell(p);
    lerp8(gather_scalar(dims, data, b), f)
}

/// Trilinear sample of an f64 scalar grid, zero outside.
pub fn sample_scalar(dims: Dims, data: &[f64], p: [f64; 3]) -> f64 {
    let (b, f) = cell(p);
    lerp8(gather_scalar(dims, data, b), f)
}

/// Sample plus spatial gradient of an f64 scalar grid.
pub fn sample_scalar_with_grad(dims: Dims, data: &[f64], p: [f64; 3]) -> (f64, [f64; 3]) {
    let (b, f) = cell(p);
    let c = gather_scalar(dims, data, b);
    (lerp8(c, f), lerp8_grad(c, f))
}

/// Gathers the 8 corner 3-vectors of an interleaved field, zero outside.
#[inline]
fn gather_vec3(dims: Dims, data: &[f64], b: [i64; 3]) -> [[f64; 8]; 3] {
    let mut c = [[0.0f64; 8]; 3];
    if cell_inside(dims, b) {
        let base = 3 * dims.idx(b[0] as usize, b[1] as usize, b[2] as usize);
        let offs = corner_offsets(dims);
        for (k, &o) in offs.iter().enumerate() {
            // Bounds proven by cell_inside: base + 3*o + 2 < data.len().
            let i = base + 3 * o;
            unsafe {
                c[0][k] = *data.get_unchecked(i);
                c[1][k] = *data.get_unchecked(i + 1);
                c[2][k] = *data.get_unchecked(i + 2);
            }
        }
        return c;
    }
    let mut k = 0;
    for dz in 0..2i64 {
        for dy in 0..2i64 {
            for dx in 0..2i64 {
                let (x, y, z) = (b[0] + dx, b[1] + dy, b[2] + dz);
                if x >= 0
                    && y >= 0
                    && z >= 0
                    && x < dims.nx as i64
                    && y < dims.ny as i64
                    && z < dims.nz as i64
                {
                    let i = 3 * dims.idx(x as usize, y as usize, z as usize);
                    c[0][k] = data[i];
                    c[1][k] = data[i + 1];
                    c[2][k] = data[i + 2];
                }
                k += 1;
            }
        }
    }
    c
}

/// Trilinear sample of an interleaved 3-vector field, zero outside.
pub fn sample_vec3(dims: Dims, data: &[f64], p: [f64; 3]) -> [f64; 3] {
    let (b, f) = cell(p);
    let c = gather_vec3(dims, data, b);
    [lerp8(c[0], f), lerp8(c[1], f), lerp8(c[2], f)]
}

/// Sample plus Jacobian (rows: components, columns: position axes) of an
/// interleaved 3-vector field.
pub fn sample_vec3_with_jac(dims: Dims, data: &[f64], p: [f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let (b, f) = cell(p);
    let c = gather_vec3(dims, data, b);
    let v = [lerp8(c[0], f), lerp8(c[1], f), lerp8(c[2], f)];
    let j = [lerp8_grad(c[0], f), lerp8_grad(c[1], f), lerp8_grad(c[2], f)];
    (v, j)
}

/// Adjoint of `sample_scalar`: adds `g * weight` to the 8 corners of `grad`.
pub fn scatter_scalar(dims: Dims, grad: &mut [f64], p: [f64; 3], g: f64) {
    let (b, f) = cell(p);
    let w = corner_weights(f);
    if cell_inside(dims, b) {
        let base = dims.idx(b[0] as usize, b[1] as usize, b[2] as usize);
        let offs = corner_offsets(dims);
        for (k, &o) in offs.iter().enumerate() {
            // Bounds proven by cell_inside: base + o < grad.len().
            unsafe { *grad.get_unchecked_mut(base + o) += g * w[k] };
        }
        return;
    }
    let mut k = 0;
    for dz in 0..2i64 {
        for dy in 0..2i64 {
            for dx in 0..2i64 {
                let (x, y, z) = (b[0] + dx, b[1] + dy, b[2] + dz);
                if x >= 0
                    && y >= 0
                    && z >= 0
                    && x < dims.nx as i64
                    && y < dims.ny as i64
                    && z < dims.nz as i64
                {
                    grad[dims.idx(x as usize, y as usize, z as usize)] += g * w[k];
                }
                k += 1;
            }
        }
    }
}

/// Adjoint of `sample_vec3`: adds `g[c] * weight` per component.
pub fn scatter_vec3(dims: Dims, grad: &mut [f64], p: [f64; 3], g: [f64; 3]) {
    let (b, f) = cell(p);
    let w = corner_weights(f);
    if cell_inside(dims, b) {
        let base = 3 * dims.idx(b[0] as usize, b[1] as usize, b[2] as usize);
        let offs = corner_offsets(dims);
        for (k, &o) in offs.iter().enumerate() {
            let i = base + 3 * o;
            // Bounds proven by cell_inside: i + 2 < grad.len().
            unsafe {
                *grad.get_unchecked_mut(i) += g[0] * w[k];
                *grad.get_unchecked_mut(i + 1) += g[1] * w[k];
                *grad.get_unchecked_mut(i + 2) += g[2] * w[k];
            }
        }
        return;
    }
    let mut k = 0;
    for dz in 0..2i64 {
        for dy in 0..2i64 {
            for dx in 0..2i64 {
                let (x, y, z) = (b[0] + dx, b[1] + dy, b[2] + dz);
                if x >= 0
                    && y >= 0
                    && z >= 0
                    && x < dims.nx as i64
                    && y < dims.ny as i64
                    && z < dims.nz as i64
                {
                    let i = 3 * dims.idx(x as usize, y as usize, z as usize);
                    grad[i] += g[0] * w[k];
                    grad[i + 1] += g[1] * w[k];
                    grad[i + 2] += g[2] * w[k];
                }
                k += 1;
            }
        }
    }
}

/// One separable pass of a sliding-window sum (radius `r`, zero padding)
/// along `axis` (0 = x, 1 = y, 2 = z).
fn box_sum_axis(dims: Dims, src: &[f64], dst: &mut [f64], r: usize, axis: usize) {
    let (n, stride, lines): (usize, usize, Vec<usize>) = match axis {
        0 => {
            let mut starts = Vec::with_capacity(dims.ny * dims.nz);
            for z in 0..dims.nz {
                for y in 0..dims.ny {
                    starts.push(dims.idx(0, y, z));
                }
            }
            (dims.nx, 1, starts)
        }
        1 => {
            let mut starts = Vec::with_capacity(dims.nx * dims.nz);
            for z in 0..dims.nz {
                for x in 0..dims.nx {
                    starts.push(dims.idx(x, 0, z));
                }
            }
            (dims.ny, dims.nx, starts)
        }
        _ => {
            let mut starts = Vec::with_capacity(dims.nx * dims.ny);
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    starts.push(dims.idx(x, y, 0));
                }
            }
            (dims.nz, dims.nx * dims.ny, starts)
        }
    };
    for start in lines {
        let mut acc = 0.0;
        for i in 0..n.min(r + 1) {
            acc += src[start + i * stride];
        }
        for i in 0..n {
            dst[start + i * stride] = acc;
            let add = i + r + 1;
            if add < n {
                acc += src[start + add * stride];
            }
            if i >= r {
                acc -= src[start + (i - r) * stride];
            }
        }
    }
}

/// Full-window box sum: `out(x) = sum of src over the (2r+1)^3 window at x`,
/// zero padded, computed separably.
pub fn box_sum3(dims: Dims, src: &[f64], r: usize) -> Vec<f64> {
    let mut a = vec![0.0; src.len()];
    let mut b = vec![0.0; src.len()];
    box_sum_axis(dims, src, &mut a, r, 0);
    box_sum_axis(dims, &a, &mut b, r, 1);
    box_sum_axis(dims, &b, &mut a, r, 2);
    a
}

/// Separable Gaussian smoothing with kernel radius `ceil(3*sigma)`; tap
/// weights renormalized over the in-bounds support at the boundary so
/// constants stay constant.
pub fn gaussian_smooth(dims: Dims, src: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut taps = Vec::with_capacity((2 * r + 1) as usize);
    for k in -r..=r {
        taps.push((-((k * k) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    let mut cur = src.to_vec();
    for axis in 0..3 {
        let (n, stride, lines): (usize, usize, Vec<usize>) = match axis {
            0 => {
                let mut s = Vec::with_capacity(dims.ny * dims.nz);
                for z in 0..dims.nz {
                    for y in 0..dims.ny {
                        s.push(dims.idx(0, y, z));
                    }
                }
                (dims.nx, 1, s)
            }
            1 => {
                let mut s = Vec::with_capacity(dims.nx * dims.nz);
                for z in 0..dims.nz {
                    for x in 0..dims.nx {
                        s.push(dims.idx(x, 0, z));
                    }
                }
                (dims.ny, dims.nx, s)
            }
            _ => {
                let mut s = Vec::with_capacity(dims.nx * dims.ny);
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        s.push(dims.idx(x, y, 0));
                    }
                }
                (dims.nz, dims.nx * dims.ny, s)
            }
        };
        let mut next = vec![0.0; cur.len()];
        for start in lines {
            for i in 0..n as i64 {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for k in -r..=r {
                    let j = i + k;
                    if j >= 0 && j < n as i64 {
                        let w = taps[(k + r) as usize];
                        acc += w * cur[start + j as usize * stride];
                        wsum += w;
                    }
                }
                next[start + i as usize * stride] = acc / wsum;
            }
        }
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_sum_matches_naive() {
        let dims = Dims::new(5, 4, 3);
        let src: Vec<f64> = (0..dims.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let r = 2usize;
        let got = box_sum3(dims, &src, r);
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let mut want = 0.0;
                    for dz in -(r as i64)..=r as i64 {
                        for dy in -(r as i64)..=r as i64 {
                            for dx in -(r as i64)..=r as i64 {
                                let (cx, cy, cz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                                if cx >= 0
                                    && cy >= 0
                                    && cz >= 0
                                    && cx < dims.nx as i64
                                    && cy < dims.ny as i64
                                    && cz < dims.nz as i64
                                {
                                    want += src[dims.idx(cx as usize, cy as usize, cz as usize)];
                                }
                            }
                        }
                    }
                    let got = got[dims.idx(x, y, z)];
                    assert!((got - want).abs() < 1e-9, "({x},{y},{z}): {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn sample_grad_matches_finite_differences() {
        let dims = Dims::cube(6);
        let data: Vec<f64> = (0..dims.len()).map(|i| ((i * 37 % 101) as f64) / 101.0).collect();
        let p = [2.3, 1.7, 3.1];
        let (_, g) = sample_scalar_with_grad(dims, &data, p);
        let h = 1e-6;
        for d in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[d] += h;
            pm[d] -= h;
            let fd = (sample_scalar(dims, &data, pp) - sample_scalar(dims, &data, pm)) / (2.0 * h);
            assert!((g[d] - fd).abs() < 1e-6, "axis {d}: {} vs {fd}", g[d]);
        }
    }

    #[test]
    fn scatter_is_adjoint_of_sample() {
        // <scatter(g at p), v> == g * sample(v at p) for any v.
        let dims = Dims::cube(5);
        let v: Vec<f64> = (0..dims.len()).map(|i| ((i * 13 % 29) as f64) * 0.1).collect();
        for &p in &[[1.2, 2.7, 3.3], [-0.4, 1.0, 4.6], [4.8, 0.1, 0.0]] {
            let mut scat = vec![0.0; dims.len()];
            scatter_scalar(dims, &mut scat, p, 1.0);
            let dot: f64 = scat.iter().zip(&v).map(|(a, b)| a * b).sum();
            let s = sample_scalar(dims, &v, p);
            assert!((dot - s).abs() < 1e-12, "p {p:?}: {dot} vs {s}");
        }
    }

    #[test]
    fn vec3_jacobian_matches_finite_differences() {
        let dims = Dims::cube(6);
        let data: Vec<f64> =
            (0..3 * dims.len()).map(|i| (((i * 23) % 97) as f64) / 97.0 - 0.5).collect();
        let p = [2.6, 3.2, 1.4];
        let (_, jac) = sample_vec3_with_jac(dims, &data, p);
        let h = 1e-6;
        for d in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[d] += h;
            pm[d] -= h;
            let vp = sample_vec3(dims, &data, pp);
            let vm = sample_vec3(dims, &data, pm);
            for c in 0..3 {
                let fd = (vp[c] - vm[c]) / (2.0 * h);
                assert!((jac[c][d] - fd).abs() < 1e-6, "comp {c} axis {d}");
            }
        }
    }

    #[test]
    fn gaussian_smooth_preserves_constants() {
        let dims = Dims::cube(8);
        let src = vec![0.42; dims.len()];
        let sm = gaussian_smooth(dims, &src, 2.0);
        for v in sm {
            assert!((v - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_smooth_reduces_variance_keeps_mean() {
        let dims = Dims::cube(10);
        let src: Vec<f64> = (0..dims.len()).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let sm = gaussian_smooth(dims, &src, 1.5);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        assert!(var(&sm) < 0.05 * var(&src));
        // Interior mean is preserved; boundary renormalization only reweights.
        assert!((mean(&sm) - mean(&src)).abs() < 0.02);
    }
}
