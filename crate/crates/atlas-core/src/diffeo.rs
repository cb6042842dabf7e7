//! Stationary-velocity-field deformations.
//!
//! A velocity field `v` integrates to a displacement by scaling and squaring:
//! start from `v / 2^T` and self-compose T times, where composition is
//! `(a . b)(x) = b(x) + a(x + b(x))`. Integrating `-v` gives the inverse
//! deformation, so forward/inverse pairs come from one parameterization.
//! The squaring tape is kept so reverse mode can push gradients through the
//! integration exactly; the optimizer's finite-difference validation depends
//! on the adjoint mirroring the forward arithmetic.

use crate::error::{Error, Result};
use crate::kernels;
use crate::volume::{Dims, Mask, VectorField, Volume};

/// Integration settings for scaling and squaring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SvfConfig {
    /// Number of squaring steps T; displacement starts at `v / 2^T`.
    pub squaring_steps: u32,
}

impl Default for SvfConfig {
    fn default() -> Self {
        SvfConfig { squaring_steps: 7 }
    }
}

impl SvfConfig {
    pub const MAX_STEPS: u32 = 16;

    pub fn new(squaring_steps: u32) -> Result<Self> {
        let cfg = SvfConfig { squaring_steps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.squaring_steps > Self::MAX_STEPS {
            return Err(Error::invalid(format!(
                "squaring steps {} exceed maximum {}",
                self.squaring_steps,
                Self::MAX_STEPS
            )));
        }
        Ok(())
    }
}

/// `out(x) = b(x) + a(x + b(x))` on raw interleaved data.
///
/// Voxels whose interpolation cell lies fully inside the grid (nearly all of
/// them) take an inlined unchecked gather; the rest fall back to the
/// zero-padded sampler. This loop dominates integration time.
pub(crate) fn compose_into(dims: Dims, a: &[f64], b: &[f64], out: &mut [f64]) {
    let offs = kernels::corner_offsets(dims);
    let mut i3 = 0usize;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let (bx, by, bz) = (b[i3], b[i3 + 1], b[i3 + 2]);
                let p = [x as f64 + bx, y as f64 + by, z as f64 + bz];
                let (c, f) = kernels::cell(p);
                let s = if kernels::cell_inside(dims, c) {
                    let base = 3 * dims.idx(c[0] as usize, c[1] as usize, c[2] as usize);
                    let mut cv = [[0.0f64; 8]; 3];
                    for (k, &o) in offs.iter().enumerate() {
                        let i = base + 3 * o;
                        // Bounds proven by cell_inside: i + 2 < a.len().
                        unsafe {
                            cv[0][k] = *a.get_unchecked(i);
                            cv[1][k] = *a.get_unchecked(i + 1);
                            cv[2][k] = *a.get_unchecked(i + 2);
                        }
                    }
                    [
                        kernels::lerp8(cv[0], f),
                        kernels::lerp8(cv[1], f),
                        kernels::lerp8(cv[2], f),
                    ]
                } else {
                    kernels::sample_vec3(dims, a, p)
                };
                out[i3] = bx + s[0];
                out[i3 + 1] = by + s[1];
                out[i3 + 2] = bz + s[2];
                i3 += 3;
            }
        }
    }
}

/// Adjoint of one squaring step `out = u . u`: accumulates all three
/// dependency paths (identity, sampled values, sample position) into the
/// gradient with respect to `u`.
///
/// The interior fast path shares one cell/weight computation between the
/// scatter (sampled-value path) and the corner gather that feeds the
/// position-path Jacobian, instead of paying for both separately.
pub(crate) fn squaring_adjoint(dims: Dims, u: &[f64], gbar_out: &[f64]) -> Vec<f64> {
    let mut gbar_u = vec![0.0f64; u.len()];
    let offs = kernels::corner_offsets(dims);
    let mut i3 = 0usize;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let g = [gbar_out[i3], gbar_out[i3 + 1], gbar_out[i3 + 2]];
                let (ux, uy, uz) = (u[i3], u[i3 + 1], u[i3 + 2]);
                let p = [x as f64 + ux, y as f64 + uy, z as f64 + uz];
                let (c, f) = kernels::cell(p);
                let jac = if kernels::cell_inside(dims, c) {
                    let base = 3 * dims.idx(c[0] as usize, c[1] as usize, c[2] as usize);
                    let w = kernels::corner_weights(f);
                    let mut cv = [[0.0f64; 8]; 3];
                    for (k, &o) in offs.iter().enumerate() {
                        let i = base + 3 * o;
                        // Bounds proven by cell_inside: i + 2 < len.
                        unsafe {
                            cv[0][k] = *u.get_unchecked(i);
                            cv[1][k] = *u.get_unchecked(i + 1);
                            cv[2][k] = *u.get_unchecked(i + 2);
                            *gbar_u.get_unchecked_mut(i) += g[0] * w[k];
                            *gbar_u.get_unchecked_mut(i + 1) += g[1] * w[k];
                            *gbar_u.get_unchecked_mut(i + 2) += g[2] * w[k];
                        }
                    }
                    [
                        kernels::lerp8_grad(cv[0], f),
                        kernels::lerp8_grad(cv[1], f),
                        kernels::lerp8_grad(cv[2], f),
                    ]
                } else {
                    kernels::scatter_vec3(dims, &mut gbar_u, p, g);
                    let (_, jac) = kernels::sample_vec3_with_jac(dims, u, p);
                    jac
                };
                // Identity path plus position path: g + J^T g.
                for d in 0..3 {
                    gbar_u[i3 + d] +=
                        g[d] + g[0] * jac[0][d] + g[1] * jac[1][d] + g[2] * jac[2][d];
                }
                i3 += 3;
            }
        }
    }
    gbar_u
}

/// Scaling-and-squaring forward pass that keeps the intermediate fields
/// (`tape[k]` is the displacement before squaring step k).
pub(crate) fn integrate_with_tape(
    dims: Dims,
    nu: &[f64],
    steps: u32,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let scale = 0.5f64.powi(steps as i32);
    let mut u: Vec<f64> = nu.iter().map(|&v| v * scale).collect();
    let mut tape = Vec::with_capacity(steps as usize);
    let mut out = vec![0.0f64; u.len()];
    for _ in 0..steps {
        compose_into(dims, &u, &u, &mut out);
        tape.push(std::mem::replace(&mut u, std::mem::take(&mut out)));
        out = vec![0.0f64; u.len()];
    }
    (u, tape)
}

/// Reverse-mode pass through the squaring tape; returns the gradient with
/// respect to the velocity field.
pub(crate) fn integrate_adjoint(dims: Dims, tape: &[Vec<f64>], gbar_u: &[f64]) -> Vec<f64> {
    let mut g = gbar_u.to_vec();
    for u_k in tape.iter().rev() {
        g = squaring_adjoint(dims, u_k, &g);
    }
    let scale = 0.5f64.powi(tape.len() as i32);
    for v in &mut g {
        *v *= scale;
    }
    g
}

/// Integrates a velocity field to a displacement field.
pub fn integrate_svf(nu: &VectorField, cfg: &SvfConfig) -> Result<VectorField> {
    cfg.validate()?;
    let (u, _) = integrate_with_tape(nu.dims, &nu.data, cfg.squaring_steps);
    Ok(VectorField { dims: nu.dims, data: u })
}

/// Forward and inverse displacements from one velocity field
/// (`integrate(v)`, `integrate(-v)`).
pub fn inverse_pair(nu: &VectorField, cfg: &SvfConfig) -> Result<(VectorField, VectorField)> {
    cfg.validate()?;
    let fwd = integrate_svf(nu, cfg)?;
    let neg: Vec<f64> = nu.data.iter().map(|&v| -v).collect();
    let (inv, _) = integrate_with_tape(nu.dims, &neg, cfg.squaring_steps);
    Ok((fwd, VectorField { dims: nu.dims, data: inv }))
}

/// Displacement of the composed map `a(b(x))`: `b(x) + a(x + b(x))`.
pub fn compose(a: &VectorField, b: &VectorField) -> Result<VectorField> {
    if a.dims != b.dims {
        return Err(Error::dims(format!("compose: {} vs {}", a.dims, b.dims)));
    }
    let mut out = vec![0.0f64; a.data.len()];
    compose_into(a.dims, &a.data, &b.data, &mut out);
    Ok(VectorField { dims: a.dims, data: out })
}

/// Jacobian determinant of `x + u(x)` per voxel; central differences inside,
/// one-sided at the boundary.
pub fn jacobian_det(u: &VectorField) -> Volume {
    let dims = u.dims;
    let n = [dims.nx, dims.ny, dims.nz];
    let mut out = vec![0.0f32; dims.len()];
    let diff = |u: &VectorField, c: usize, pos: [usize; 3], d: usize| -> f64 {
        let i = pos[d];
        let get = |j: usize| {
            let mut q = pos;
            q[d] = j;
            u.at(q[0], q[1], q[2])[c]
        };
        if n[d] < 2 {
            0.0
        } else if i == 0 {
            get(1) - get(0)
        } else if i == n[d] - 1 {
            get(i) - get(i - 1)
        } else {
            (get(i + 1) - get(i - 1)) / 2.0
        }
    };
    let mut i = 0usize;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let pos = [x, y, z];
                let mut m = [[0.0f64; 3]; 3];
                for c in 0..3 {
                    for d in 0..3 {
                        m[c][d] = diff(u, c, pos, d);
                    }
                    m[c][c] += 1.0;
                }
                let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
                out[i] = det as f32;
                i += 1;
            }
        }
    }
    Volume { dims, spacing: 1.0, day: None, data: out }
}

/// Percentage of mask voxels whose Jacobian determinant is non-positive.
pub fn frac_nonpos_jacobian(u: &VectorField, mask: &Mask) -> Result<f64> {
    if u.dims != mask.dims {
        return Err(Error::dims(format!("frac_nonpos_jacobian: {} vs {}", u.dims, mask.dims)));
    }
    let total = mask.count();
    if total == 0 {
        return Err(Error::EmptyMask);
    }
    let jac = jacobian_det(u);
    let bad = mask
        .data
        .iter()
        .zip(&jac.data)
        .filter(|&(&m, &j)| m && j <= 0.0)
        .count();
    Ok(100.0 * bad as f64 / total as f64)
}
