//! Registration objective: local squared normalized cross-correlation plus
//! deformation and atlas regularizers, with exact reverse-mode gradients.
//!
//! Per image i acquired on day t, with atlas A_t = A0_t + Ag_t warped by the
//! inverse displacement:
//!
//! `L_i = sim(A_t . inv, I_i) + lc * constraint(u of day t)
//!        + ld * (magnitude(u_inv) + diffusion(u_inv)) + la * magnitude(Ag_t)`
//!
//! All terms are voxel means so values are resolution independent. The
//! similarity is `-mean(NCC^2)` over dense windows; the constraint is the
//! squared norm of the day's mean forward displacement, pulling the average
//! deformation toward identity. Gradients are hand-derived adjoints of the
//! exact forward arithmetic (warp, squaring tape, window sums), which is what
//! lets them pass central-difference validation at 1e-4.

use crate::diffeo::{self, SvfConfig};
use crate::error::{Error, Result};
use crate::kernels;
use crate::volume::{Dims, VectorField, Volume};

/// Loss weights and similarity settings.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_constraint: f64,
    pub lambda_deformation: f64,
    pub lambda_atlas: f64,
    /// Full edge length of the NCC window (odd).
    pub ncc_window: usize,
    /// Stabilizer added to the variance product in the NCC denominator.
    pub ncc_epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_constraint: 10.0,
            lambda_deformation: 0.01,
            lambda_atlas: 1.0,
            ncc_window: 9,
            ncc_epsilon: 1e-5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.ncc_window % 2 == 0 || self.ncc_window == 0 {
            return Err(Error::invalid(format!("NCC window must be odd, got {}", self.ncc_window)));
        }
        if !(self.ncc_epsilon > 0.0) {
            return Err(Error::invalid("NCC epsilon must be positive"));
        }
        for (name, l) in [
            ("lambda_constraint", self.lambda_constraint),
            ("lambda_deformation", self.lambda_deformation),
            ("lambda_atlas", self.lambda_atlas),
        ] {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Per-image loss decomposition; `total` recombines the parts under the
/// weights used to produce it.
#[derive(Clone, Copy, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub similarity: f64,
    pub constraint: f64,
    pub magnitude: f64,
    pub diffusion: f64,
    pub atlas_magnitude: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub(crate) fn combine(&mut self, w: &LossWeights) {
        self.total = self.similarity
            + w.lambda_constraint * self.constraint
            + w.lambda_deformation * (self.magnitude + self.diffusion)
            + w.lambda_atlas * self.atlas_magnitude;
    }
}

// ---------------------------------------------------------------------------
// Windowed squared NCC.

pub(crate) struct LnccForward {
    pub loss: f64,
    m_a: Vec<f64>,
    m_b: Vec<f64>,
    c: Vec<f64>,
    va: Vec<f64>,
    vb: Vec<f64>,
    cnt: Vec<f64>,
}

/// Per-voxel in-bounds window sizes; separable, so a product of three 1D
/// clip lengths.
fn window_counts(dims: Dims, r: usize) -> Vec<f64> {
    let line = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|x| ((x + r).min(n - 1) - x.saturating_sub(r) + 1) as f64)
            .collect()
    };
    let (cx, cy, cz) = (line(dims.nx), line(dims.ny), line(dims.nz));
    let mut out = Vec::with_capacity(dims.len());
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            let cyz = cy[y] * cz[z];
            for x in 0..dims.nx {
                out.push(cx[x] * cyz);
            }
        }
    }
    out
}

/// Dense windowed `-mean(NCC^2)`; window statistics are taken over the
/// in-bounds part of each window (out-of-grid voxels contribute nothing),
/// which keeps NCC affine-invariant at the boundary.
pub(crate) fn lncc_forward(
    dims: Dims,
    a: &[f64],
    b: &[f64],
    window: usize,
    eps: f64,
) -> LnccForward {
    let r = window / 2;
    let n = dims.len();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let mut m_a = kernels::box_sum3(dims, a, r);
    let mut m_b = kernels::box_sum3(dims, b, r);
    let mut c = kernels::box_sum3(dims, &ab, r);
    let mut va = kernels::box_sum3(dims, &aa, r);
    let mut vb = kernels::box_sum3(dims, &bb, r);
    let cnt = window_counts(dims, r);
    let mut acc = 0.0;
    for i in 0..n {
        let inv = 1.0 / cnt[i];
        m_a[i] *= inv;
        m_b[i] *= inv;
        c[i] = c[i] * inv - m_a[i] * m_b[i];
        va[i] = va[i] * inv - m_a[i] * m_a[i];
        vb[i] = vb[i] * inv - m_b[i] * m_b[i];
        acc += c[i] * c[i] / (va[i] * vb[i] + eps);
    }
    LnccForward { loss: -acc / n as f64, m_a, m_b, c, va, vb, cnt }
}

/// Gradient of the windowed loss with respect to the first argument.
pub(crate) fn lncc_backward_a(
    dims: Dims,
    a: &[f64],
    b: &[f64],
    fwd: &LnccForward,
    window: usize,
    eps: f64,
) -> Vec<f64> {
    let r = window / 2;
    let n = dims.len() as f64;
    let len = dims.len();
    // P = dL/dc, Q = dL/dva at each window center (loss already has -1/n);
    // the per-window 1/cnt from the moment derivatives folds in here.
    let mut p = vec![0.0f64; len];
    let mut pmb = vec![0.0f64; len];
    let mut q = vec![0.0f64; len];
    let mut qma = vec![0.0f64; len];
    for i in 0..len {
        let den = fwd.va[i] * fwd.vb[i] + eps;
        p[i] = -2.0 * fwd.c[i] / (den * n * fwd.cnt[i]);
        q[i] = fwd.c[i] * fwd.c[i] * fwd.vb[i] / (den * den * n * fwd.cnt[i]);
        pmb[i] = p[i] * fwd.m_b[i];
        qma[i] = q[i] * fwd.m_a[i];
    }
    let box_p = kernels::box_sum3(dims, &p, r);
    let box_pmb = kernels::box_sum3(dims, &pmb, r);
    let box_q = kernels::box_sum3(dims, &q, r);
    let box_qma = kernels::box_sum3(dims, &qma, r);
    let mut grad = vec![0.0f64; len];
    for j in 0..len {
        grad[j] = b[j] * box_p[j] - box_pmb[j] + 2.0 * a[j] * box_q[j] - 2.0 * box_qma[j];
    }
    grad
}

/// `-mean(NCC^2)` between two volumes over dense `window^3` patches.
pub fn lncc_sq_loss(a: &Volume, b: &Volume, window: usize, epsilon: f64) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::dims(format!("lncc: {} vs {}", a.dims, b.dims)));
    }
    if window % 2 == 0 || window == 0 {
        return Err(Error::invalid(format!("NCC window must be odd, got {window}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("NCC epsilon must be positive"));
    }
    let af = a.to_f64();
    let bf = b.to_f64();
    Ok(lncc_forward(a.dims, &af, &bf, window, epsilon).loss)
}

// ---------------------------------------------------------------------------
// Regularizers.

/// Mean over voxels of the squared Euclidean norm of a vector field.
pub fn magnitude_loss(u: &VectorField) -> f64 {
    if u.dims.is_empty() {
        return 0.0;
    }
    let s: f64 = u.data.iter().map(|v| v * v).sum();
    s / u.dims.len() as f64
}

/// Mean over voxels of the squared value of a scalar volume.
pub fn scalar_magnitude_loss(v: &Volume) -> f64 {
    if v.dims.is_empty() {
        return 0.0;
    }
    let s: f64 = v.data.iter().map(|&x| (x as f64) * (x as f64)).sum();
    s / v.dims.len() as f64
}

pub(crate) fn mean_sqnorm_raw(n_voxels: usize, data: &[f64]) -> f64 {
    if n_voxels == 0 {
        return 0.0;
    }
    data.iter().map(|v| v * v).sum::<f64>() / n_voxels as f64
}

/// Mean over voxels and components of the squared forward-difference
/// gradient (zero gradient at the high boundary).
pub(crate) fn diffusion_loss_raw(dims: Dims, u: &[f64]) -> f64 {
    let n = dims.len();
    if n == 0 {
        return 0.0;
    }
    let (sx, sy, sz) = (3usize, 3 * dims.nx, 3 * dims.nx * dims.ny);
    let mut acc = 0.0;
    let mut i3 = 0usize;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                for c in 0..3 {
                    let v = u[i3 + c];
                    if x + 1 < dims.nx {
                        let d = u[i3 + sx + c] - v;
                        acc += d * d;
                    }
                    if y + 1 < dims.ny {
                        let d = u[i3 + sy + c] - v;
                        acc += d * d;
                    }
                    if z + 1 < dims.nz {
                        let d = u[i3 + sz + c] - v;
                        acc += d * d;
                    }
                }
                i3 += 3;
            }
        }
    }
    acc / (3 * n) as f64
}

/// Adds `scale * d(diffusion)/du` to `gbar`.
pub(crate) fn diffusion_backward_raw(dims: Dims, u: &[f64], scale: f64, gbar: &mut [f64]) {
    let n = dims.len();
    if n == 0 {
        return;
    }
    let k = scale * 2.0 / (3 * n) as f64;
    let (sx, sy, sz) = (3usize, 3 * dims.nx, 3 * dims.nx * dims.ny);
    let mut i3 = 0usize;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                for c in 0..3 {
                    let v = u[i3 + c];
                    if x + 1 < dims.nx {
                        let g = k * (u[i3 + sx + c] - v);
                        gbar[i3 + sx + c] += g;
                        gbar[i3 + c] -= g;
                    }
                    if y + 1 < dims.ny {
                        let g = k * (u[i3 + sy + c] - v);
                        gbar[i3 + sy + c] += g;
                        gbar[i3 + c] -= g;
                    }
                    if z + 1 < dims.nz {
                        let g = k * (u[i3 + sz + c] - v);
                        gbar[i3 + sz + c] += g;
                        gbar[i3 + c] -= g;
                    }
                }
                i3 += 3;
            }
        }
    }
}

/// Diffusion regularizer of a displacement field.
pub fn diffusion_loss(u: &VectorField) -> f64 {
    diffusion_loss_raw(u.dims, &u.data)
}

/// Voxelwise mean of a set of equally shaped fields.
pub(crate) fn mean_field_raw(fields: &[&[f64]]) -> Vec<f64> {
    let len = fields[0].len();
    let mut m = vec![0.0f64; len];
    for f in fields {
        for (mi, fi) in m.iter_mut().zip(f.iter()) {
            *mi += fi;
        }
    }
    let inv = 1.0 / fields.len() as f64;
    for mi in &mut m {
        *mi *= inv;
    }
    m
}

/// Squared-norm voxel mean of the average of the given displacement fields;
/// zero exactly when the deformations average to identity.
pub fn constraint_loss(fields: &[&VectorField]) -> Result<f64> {
    if fields.is_empty() {
        return Err(Error::invalid("constraint over an empty set of fields"));
    }
    let dims = fields[0].dims;
    for f in fields {
        if f.dims != dims {
            return Err(Error::dims(format!("constraint: {} vs {}", f.dims, dims)));
        }
    }
    let raw: Vec<&[f64]> = fields.iter().map(|f| f.data.as_slice()).collect();
    let m = mean_field_raw(&raw);
    Ok(mean_sqnorm_raw(dims.len(), &m))
}

/// Full per-image loss from precomputed pieces.
pub fn total_loss(
    atlas_warped: &Volume,
    image: &Volume,
    u_inv: &VectorField,
    day_fields: &[&VectorField],
    atlas_deviation: &Volume,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    if atlas_warped.dims != image.dims
        || atlas_warped.dims != u_inv.dims
        || atlas_warped.dims != atlas_deviation.dims
    {
        return Err(Error::dims("total_loss arguments disagree"));
    }
    let mut b = LossBreakdown {
        similarity: lncc_sq_loss(atlas_warped, image, weights.ncc_window, weights.ncc_epsilon)?,
        constraint: constraint_loss(day_fields)?,
        magnitude: magnitude_loss(u_inv),
        diffusion: diffusion_loss(u_inv),
        atlas_magnitude: scalar_magnitude_loss(atlas_deviation),
        total: 0.0,
    };
    b.combine(weights);
    Ok(b)
}

// ---------------------------------------------------------------------------
// Warp with adjoint.

/// `out(x) = sample(vol, x + u(x))` on raw f64 data.
pub(crate) fn warp_scalar_raw(dims: Dims, vol: &[f64], u: &[f64], out: &mut [f64]) {
    let mut i = 0usize;
    let mut i3 = 0usize;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let p = [x as f64 + u[i3], y as f64 + u[i3 + 1], z as f64 + u[i3 + 2]];
                out[i] = kernels::sample_scalar(dims, vol, p);
                i += 1;
                i3 += 3;
            }
        }
    }
}

/// Adjoint of `warp_scalar_raw`: scatters into the volume gradient and adds
/// the position-path term to the displacement gradient.
pub(crate) fn warp_scalar_adjoint(
    dims: Dims,
    vol: &[f64],
    u: &[f64],
    gbar_out: &[f64],
    gbar_vol: &mut [f64],
    gbar_u: &mut [f64],
) {
    let mut i = 0usize;
    let mut i3 = 0usize;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let g = gbar_out[i];
                if g != 0.0 {
                    let p = [x as f64 + u[i3], y as f64 + u[i3 + 1], z as f64 + u[i3 + 2]];
                    let (_, sg) = kernels::sample_scalar_with_grad(dims, vol, p);
                    kernels::scatter_scalar(dims, gbar_vol, p, g);
                    gbar_u[i3] += g * sg[0];
                    gbar_u[i3 + 1] += g * sg[1];
                    gbar_u[i3 + 2] += g * sg[2];
                }
                i += 1;
                i3 += 3;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Per-image forward + reverse pass.

pub(crate) struct ImagePass {
    pub similarity: f64,
    pub magnitude: f64,
    pub diffusion: f64,
    /// Gradient of this image's (weighted) terms with respect to its velocity
    /// field, including the constraint seed when one was supplied.
    pub grad_nu: Vec<f64>,
    /// Gradient of the similarity with respect to the (unwarped) atlas.
    pub gbar_atlas: Vec<f64>,
}

/// Runs one image's forward terms and their exact reverse pass.
///
/// `constraint_seed`, when present, is dL/du for the forward displacement
/// (the constraint contribution, already weighted); it is pushed through the
/// forward integration tape.
pub(crate) fn image_pass(
    dims: Dims,
    atlas: &[f64],
    image: &[f64],
    nu: &[f64],
    weights: &LossWeights,
    svf: SvfConfig,
    constraint_seed: Option<&[f64]>,
) -> Result<ImagePass> {
    let n = dims.len();
    let neg: Vec<f64> = nu.iter().map(|v| -v).collect();
    let (u_inv, tape_inv) = diffeo::integrate_with_tape(dims, &neg, svf.squaring_steps);
    let mut warped = vec![0.0f64; n];
    warp_scalar_raw(dims, atlas, &u_inv, &mut warped);
    let lf = lncc_forward(dims, &warped, image, weights.ncc_window, weights.ncc_epsilon);
    let similarity = lf.loss;
    let magnitude = mean_sqnorm_raw(n, &u_inv);
    let diffusion = diffusion_loss_raw(dims, &u_inv);
    for (name, v) in [("similarity", similarity), ("magnitude", magnitude), ("diffusion", diffusion)]
    {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name.into() });
        }
    }

    // Reverse: similarity -> warped, then through the warp into the atlas
    // and the inverse displacement; regularizers add directly to u_inv.
    let gbar_warped = lncc_backward_a(dims, &warped, image, &lf, weights.ncc_window, weights.ncc_epsilon);
    let mut gbar_atlas = vec![0.0f64; n];
    let mut gbar_uinv = vec![0.0f64; 3 * n];
    warp_scalar_adjoint(dims, atlas, &u_inv, &gbar_warped, &mut gbar_atlas, &mut gbar_uinv);
    let mscale = weights.lambda_deformation * 2.0 / n as f64;
    for (g, v) in gbar_uinv.iter_mut().zip(&u_inv) {
        *g += mscale * v;
    }
    diffusion_backward_raw(dims, &u_inv, weights.lambda_deformation, &mut gbar_uinv);
    // u_inv integrates -nu, so the chain picks up a sign flip.
    let g_neg = diffeo::integrate_adjoint(dims, &tape_inv, &gbar_uinv);
    let mut grad_nu: Vec<f64> = g_neg.iter().map(|v| -v).collect();
    if let Some(seed) = constraint_seed {
        let (_, tape_fwd) = diffeo::integrate_with_tape(dims, nu, svf.squaring_steps);
        let g_fwd = diffeo::integrate_adjoint(dims, &tape_fwd, seed);
        for (a, b) in grad_nu.iter_mut().zip(&g_fwd) {
            *a += b;
        }
    }
    Ok(ImagePass { similarity, magnitude, diffusion, grad_nu, gbar_atlas })
}

// ---------------------------------------------------------------------------
// Day batch objective.

/// One gestational day's batch objective: the per-image losses of every image
/// acquired that day, sharing the day's atlas deviation and the exact
/// constraint over the day's forward displacements. Differentiated jointly
/// with respect to all velocity fields and the deviation.
pub struct DayObjective<'a> {
    pub dims: Dims,
    pub atlas0: &'a [f64],
    pub images: Vec<&'a [f64]>,
    pub weights: LossWeights,
    pub svf: SvfConfig,
}

/// Joint loss and gradients for a day batch.
pub struct DayEval {
    pub breakdowns: Vec<LossBreakdown>,
    pub total: f64,
    pub grad_nu: Vec<Vec<f64>>,
    pub grad_atlas_dev: Vec<f64>,
}

impl<'a> DayObjective<'a> {
    fn validate(&self, nus: &[Vec<f64>], a_g: &[f64]) -> Result<()> {
        self.weights.validate()?;
        self.svf.validate()?;
        let n = self.dims.len();
        if self.atlas0.len() != n || a_g.len() != n {
            return Err(Error::dims("day objective: atlas buffers"));
        }
        if self.images.is_empty() || self.images.len() != nus.len() {
            return Err(Error::invalid("day objective: image/field count mismatch"));
        }
        for img in &self.images {
            if img.len() != n {
                return Err(Error::dims("day objective: image buffer"));
            }
        }
        for nu in nus {
            if nu.len() != 3 * n {
                return Err(Error::dims("day objective: velocity buffer"));
            }
        }
        Ok(())
    }

    /// The atlas used by the loss: base plus deviation, unclamped so the
    /// objective stays differentiable (clamping happens on materialization).
    fn atlas(&self, a_g: &[f64]) -> Vec<f64> {
        self.atlas0.iter().zip(a_g).map(|(a, d)| a + d).collect()
    }

    /// Forward displacements and the day constraint value.
    fn constraint(&self, nus: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
        let mut us = Vec::with_capacity(nus.len());
        for nu in nus {
            let (u, _) = diffeo::integrate_with_tape(self.dims, nu, self.svf.squaring_steps);
            us.push(u);
        }
        let refs: Vec<&[f64]> = us.iter().map(|u| u.as_slice()).collect();
        let m = mean_field_raw(&refs);
        (us, mean_sqnorm_raw(self.dims.len(), &m))
    }

    /// Total batch loss (sum of per-image totals) without gradients.
    pub fn loss(&self, nus: &[Vec<f64>], a_g: &[f64]) -> Result<f64> {
        Ok(self.eval_forward(nus, a_g)?.1)
    }

    /// Per-image breakdowns plus the batch total.
    pub fn eval_forward(&self, nus: &[Vec<f64>], a_g: &[f64]) -> Result<(Vec<LossBreakdown>, f64)> {
        self.validate(nus, a_g)?;
        let n = self.dims.len();
        let atlas = self.atlas(a_g);
        let constraint = if self.weights.lambda_constraint != 0.0 {
            self.constraint(nus).1
        } else {
            0.0
        };
        let atlas_magnitude = mean_sqnorm_raw(n, a_g);
        let mut out = Vec::with_capacity(nus.len());
        let mut total = 0.0;
        for (img, nu) in self.images.iter().zip(nus) {
            let neg: Vec<f64> = nu.iter().map(|v| -v).collect();
            let (u_inv, _) = diffeo::integrate_with_tape(self.dims, &neg, self.svf.squaring_steps);
            let mut warped = vec![0.0f64; n];
            warp_scalar_raw(self.dims, &atlas, &u_inv, &mut warped);
            let lf = lncc_forward(self.dims, &warped, img, self.weights.ncc_window, self.weights.ncc_epsilon);
            let mut b = LossBreakdown {
                similarity: lf.loss,
                constraint,
                magnitude: mean_sqnorm_raw(n, &u_inv),
                diffusion: diffusion_loss_raw(self.dims, &u_inv),
                atlas_magnitude,
                total: 0.0,
            };
            b.combine(&self.weights);
            if !b.total.is_finite() {
                return Err(Error::NonFinite { term: "total loss".into() });
            }
            total += b.total;
            out.push(b);
        }
        Ok((out, total))
    }

    /// Loss plus exact gradients with respect to every velocity field and the
    /// day's atlas deviation.
    pub fn loss_and_grad(&self, nus: &[Vec<f64>], a_g: &[f64]) -> Result<DayEval> {
        self.validate(nus, a_g)?;
        let n = self.dims.len();
        let k = nus.len();
        let atlas = self.atlas(a_g);
        let atlas_magnitude = mean_sqnorm_raw(n, a_g);

        // Constraint value and per-image seed: the day loss counts the
        // constraint once per image, so dL/du_i = k * lc * 2 M / (N k).
        let (constraint, seed) = if self.weights.lambda_constraint != 0.0 {
            let (us, c) = self.constraint(nus);
            let refs: Vec<&[f64]> = us.iter().map(|u| u.as_slice()).collect();
            let mut m = mean_field_raw(&refs);
            let s = self.weights.lambda_constraint * 2.0 / n as f64;
            for v in &mut m {
                *v *= s;
            }
            (c, Some(m))
        } else {
            (0.0, None)
        };

        let mut breakdowns = Vec::with_capacity(k);
        let mut grad_nu = Vec::with_capacity(k);
        let mut grad_atlas_dev = vec![0.0f64; n];
        let mut total = 0.0;
        for (img, nu) in self.images.iter().zip(nus) {
            let pass = image_pass(
                self.dims,
                &atlas,
                img,
                nu,
                &self.weights,
                self.svf,
                seed.as_deref(),
            )?;
            let mut b = LossBreakdown {
                similarity: pass.similarity,
                constraint,
                magnitude: pass.magnitude,
                diffusion: pass.diffusion,
                atlas_magnitude,
                total: 0.0,
            };
            b.combine(&self.weights);
            total += b.total;
            breakdowns.push(b);
            grad_nu.push(pass.grad_nu);
            for (g, p) in grad_atlas_dev.iter_mut().zip(&pass.gbar_atlas) {
                *g += p;
            }
        }
        // Atlas deviation magnitude appears in each of the k image losses.
        let ascale = k as f64 * self.weights.lambda_atlas * 2.0 / n as f64;
        for (g, d) in grad_atlas_dev.iter_mut().zip(a_g) {
            *g += ascale * d;
        }
        for g in grad_nu.iter().flat_map(|v| v.iter()).chain(grad_atlas_dev.iter()) {
            if !g.is_finite() {
                return Err(Error::NonFinite { term: "gradient".into() });
            }
        }
        Ok(DayEval { breakdowns, total, grad_nu, grad_atlas_dev })
    }
}
