//! Time-dependent atlas construction and joint fitting.
//!
//! The initial atlas is a per-day voxelwise median over a day window. The
//! fit then jointly optimizes per-image stationary velocity fields and
//! per-day atlas deviations under the registration objective, batching all
//! images of one gestational day per step so the groupwise constraint is
//! exact. Held-out images register against the frozen result.

use std::collections::VecDeque;

use crate::diffeo::{self, integrate_svf, SvfConfig};
use crate::error::{Error, Result};
use crate::metrics;
use crate::objective::{
    image_pass, DayObjective, LossBreakdown, LossWeights,
};
use crate::volume::{warp_mask, Dims, Mask, VectorField, Volume};

/// One preprocessed cohort image with its metadata.
#[derive(Clone, Debug)]
pub struct CohortEntry {
    pub subject_id: String,
    /// Gestational day.
    pub day: i32,
    /// Optional group label for downstream group comparison.
    pub group: Option<String>,
    pub volume: Volume,
    pub head_mask: Mask,
}

impl CohortEntry {
    pub fn validate(&self) -> Result<()> {
        if self.volume.dims != self.head_mask.dims {
            return Err(Error::dims(format!(
                "entry {}: volume {} vs mask {}",
                self.subject_id, self.volume.dims, self.head_mask.dims
            )));
        }
        if self.volume.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "entry {} day {}: intensities outside [0,1]",
                self.subject_id, self.day
            )));
        }
        Ok(())
    }
}

/// Half-width of the initial-atlas day window; `Infinite` pools every image
/// into one time-independent median.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeltaWindow {
    Days(u32),
    Infinite,
}

impl DeltaWindow {
    pub fn contains(&self, center: i32, day: i32) -> bool {
        match self {
            DeltaWindow::Days(d) => (day - center).unsigned_abs() <= *d,
            DeltaWindow::Infinite => true,
        }
    }
}

impl std::fmt::Display for DeltaWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DeltaWindow::Days(d) => write!(f, "{d}"),
            DeltaWindow::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for DeltaWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinite" | "infinity" => Ok(DeltaWindow::Infinite),
            other => other
                .parse::<u32>()
                .map(DeltaWindow::Days)
                .map_err(|_| Error::invalid(format!("bad day window {other:?}"))),
        }
    }
}

impl serde::Serialize for DeltaWindow {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DeltaWindow::Days(d) => s.serialize_u32(*d),
            DeltaWindow::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> serde::Deserialize<'de> for DeltaWindow {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = DeltaWindow;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a non-negative integer or \"inf\"")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<DeltaWindow, E> {
                u32::try_from(v)
                    .map(DeltaWindow::Days)
                    .map_err(|_| E::custom("day window too large"))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<DeltaWindow, E> {
                v.parse().map_err(|_| E::custom(format!("bad day window {v:?}")))
            }
        }
        d.deserialize_any(V)
    }
}

/// How the groupwise constraint is reduced during fitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Exact mean over all same-day fields; one optimization step per day.
    ExactPerDay,
    /// Replay images one at a time in age order, constraining against the
    /// running mean of the last `kappa` fields (compatibility with
    /// stochastic single-image training).
    RunningWindow { kappa: usize },
}

/// Fit settings; the snapshot is stored with the model.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub delta: DeltaWindow,
    pub weights: LossWeights,
    pub iterations: usize,
    pub step_size: f64,
    pub svf: SvfConfig,
    pub constraint_mode: ConstraintMode,
    /// Fixed reduction order; kept in the config snapshot even though the
    /// implementation is single-threaded and always deterministic.
    pub determinism: bool,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            delta: DeltaWindow::Days(3),
            weights: LossWeights::default(),
            iterations: 500,
            step_size: 1e-2,
            svf: SvfConfig::default(),
            constraint_mode: ConstraintMode::ExactPerDay,
            determinism: true,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.svf.validate()?;
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::invalid("step size must be positive"));
        }
        if let ConstraintMode::RunningWindow { kappa } = self.constraint_mode {
            if kappa == 0 {
                return Err(Error::invalid("running window needs kappa >= 1"));
            }
        }
        Ok(())
    }
}

/// A fitted per-image velocity field and its provenance.
#[derive(Clone, Debug)]
pub struct FittedField {
    pub subject_id: String,
    pub day: i32,
    pub group: Option<String>,
    pub nu: VectorField,
}

/// The fitted spatiotemporal atlas.
#[derive(Clone, Debug)]
pub struct AtlasModel {
    /// Inclusive gestational-day range covered by the atlas.
    pub day_range: (i32, i32),
    /// Per-day initial atlas (median).
    pub initial: Vec<Volume>,
    /// Per-day fitted deviation, unclamped.
    pub deviation: Vec<Volume>,
    /// Per-day voxel spacing in mm.
    pub spacing: Vec<f64>,
    /// One fitted velocity field per cohort image.
    pub fields: Vec<FittedField>,
    pub config: FitConfig,
    /// Total loss per iteration, evaluated before each update.
    pub loss_trace: Vec<f64>,
}

impl AtlasModel {
    pub fn days(&self) -> impl Iterator<Item = i32> {
        self.day_range.0..=self.day_range.1
    }

    fn day_index(&self, day: i32) -> Result<usize> {
        if day < self.day_range.0 || day > self.day_range.1 {
            return Err(Error::DayOutOfRange { day, lo: self.day_range.0, hi: self.day_range.1 });
        }
        Ok((day - self.day_range.0) as usize)
    }

    /// Materialized atlas frame: initial plus deviation, clamped to [0,1].
    pub fn atlas_at(&self, day: i32) -> Result<Volume> {
        let i = self.day_index(day)?;
        let a0 = &self.initial[i];
        let ag = &self.deviation[i];
        let data: Vec<f32> =
            a0.data.iter().zip(&ag.data).map(|(a, d)| (a + d).clamp(0.0, 1.0)).collect();
        Ok(Volume { dims: a0.dims, spacing: self.spacing[i], day: Some(day), data })
    }

    /// The initial (median) frame for a day.
    pub fn initial_atlas_at(&self, day: i32) -> Result<&Volume> {
        Ok(&self.initial[self.day_index(day)?])
    }

    pub fn deviation_at(&self, day: i32) -> Result<&Volume> {
        Ok(&self.deviation[self.day_index(day)?])
    }

    pub fn spacing_at(&self, day: i32) -> Result<f64> {
        Ok(self.spacing[self.day_index(day)?])
    }

    pub fn field_for(&self, subject_id: &str, day: i32) -> Option<&FittedField> {
        self.fields.iter().find(|f| f.subject_id == subject_id && f.day == day)
    }

    /// Mean absolute deviation intensity across all days (diagnostic for the
    /// atlas-magnitude weight).
    pub fn mean_abs_deviation(&self) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for d in &self.deviation {
            acc += d.data.iter().map(|v| v.abs() as f64).sum::<f64>();
            n += d.data.len();
        }
        if n == 0 {
            0.0
        } else {
            acc / n as f64
        }
    }
}

fn validate_cohort(cohort: &[CohortEntry]) -> Result<Dims> {
    let first = cohort.first().ok_or_else(|| Error::invalid("empty cohort"))?;
    let dims = first.volume.dims;
    for e in cohort {
        e.validate()?;
        if e.volume.dims != dims {
            return Err(Error::dims(format!(
                "entry {}: {} vs cohort {}",
                e.subject_id, e.volume.dims, dims
            )));
        }
    }
    Ok(dims)
}

fn day_range(cohort: &[CohortEntry]) -> (i32, i32) {
    let lo = cohort.iter().map(|e| e.day).min().unwrap();
    let hi = cohort.iter().map(|e| e.day).max().unwrap();
    (lo, hi)
}

/// Voxelwise lower-median over the images within `delta` of each day in the
/// cohort's day range; errors if any day's window is empty.
pub fn build_initial_atlas(cohort: &[CohortEntry], delta: DeltaWindow) -> Result<Vec<Volume>> {
    let dims = validate_cohort(cohort)?;
    let (lo, hi) = day_range(cohort);
    if delta == DeltaWindow::Infinite {
        let all: Vec<&Volume> = cohort.iter().map(|e| &e.volume).collect();
        let global = median_volume(dims, &all);
        return Ok((lo..=hi).map(|d| global.clone().with_day(d)).collect());
    }
    let mut out = Vec::with_capacity((hi - lo + 1) as usize);
    for day in lo..=hi {
        let window: Vec<&Volume> = cohort
            .iter()
            .filter(|e| delta.contains(day, e.day))
            .map(|e| &e.volume)
            .collect();
        if window.is_empty() {
            return Err(Error::EmptyWindow { day });
        }
        out.push(median_volume(dims, &window).with_day(day));
    }
    Ok(out)
}

/// Voxelwise lower median (element `(k-1)/2` of the sorted values).
fn median_volume(dims: Dims, vols: &[&Volume]) -> Volume {
    let k = vols.len();
    let mid = (k - 1) / 2;
    let mut out = Volume::zeros(dims, vols[0].spacing);
    let mut buf = vec![0.0f32; k];
    for i in 0..dims.len() {
        for (b, v) in buf.iter_mut().zip(vols) {
            *b = v.data[i];
        }
        let (_, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
        out.data[i] = *m;
    }
    out
}

/// Adam optimizer state for one parameter tensor.
struct Adam {
    lr: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(len: usize, lr: f64) -> Self {
        Adam { lr, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_B1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_B2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_B1 * self.m[i] + (1.0 - ADAM_B1) * g;
            self.v[i] = ADAM_B2 * self.v[i] + (1.0 - ADAM_B2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// Per-day spacing for the atlas: unit-spacing cohorts (phantoms) keep 1 mm;
/// anything else is assumed to follow the day-dependent clinical spacing.
fn atlas_spacing(cohort: &[CohortEntry], lo: i32, hi: i32) -> Vec<f64> {
    let unit = cohort.iter().all(|e| (e.volume.spacing - 1.0).abs() < 1e-12);
    (lo..=hi)
        .map(|d| {
            if unit {
                1.0
            } else {
                crate::volume::spacing_for_day(d).unwrap_or(cohort[0].volume.spacing)
            }
        })
        .collect()
}

/// Jointly fits per-image velocity fields and per-day atlas deviations.
pub fn fit(cohort: &[CohortEntry], config: &FitConfig) -> Result<AtlasModel> {
    config.validate()?;
    let dims = validate_cohort(cohort)?;
    let (lo, hi) = day_range(cohort);
    let n_days = (hi - lo + 1) as usize;
    let initial = build_initial_atlas(cohort, config.delta)?;
    let n = dims.len();

    // Process entries in age order (ties by subject id); day batches are
    // then contiguous index ranges.
    let mut order: Vec<usize> = (0..cohort.len()).collect();
    order.sort_by(|&a, &b| {
        (cohort[a].day, cohort[a].subject_id.as_str())
            .cmp(&(cohort[b].day, cohort[b].subject_id.as_str()))
    });
    let images: Vec<Vec<f64>> = order.iter().map(|&i| cohort[i].volume.to_f64()).collect();
    let slot_of: Vec<usize> = order.iter().map(|&i| (cohort[i].day - lo) as usize).collect();

    // Contiguous (day slot, index range) batches over the sorted order.
    let mut batches: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
    let mut start = 0usize;
    for i in 1..=order.len() {
        if i == order.len() || slot_of[i] != slot_of[start] {
            batches.push((slot_of[start], start..i));
            start = i;
        }
    }

    let atlas0: Vec<Vec<f64>> = initial.iter().map(|v| v.to_f64()).collect();
    let mut nus = vec![vec![0.0f64; 3 * n]; order.len()];
    let mut a_g = vec![vec![0.0f64; n]; n_days];
    let mut adam_nu: Vec<Adam> =
        (0..order.len()).map(|_| Adam::new(3 * n, config.step_size)).collect();
    let mut adam_ag: Vec<Adam> = (0..n_days).map(|_| Adam::new(n, config.step_size)).collect();

    let mut trace = Vec::with_capacity(config.iterations);
    // Running-window state persists across iterations, like the stream of
    // recent fields it models.
    let mut window: VecDeque<Vec<f64>> = VecDeque::new();

    for it in 0..config.iterations {
        let mut epoch_total = 0.0;
        match config.constraint_mode {
            ConstraintMode::ExactPerDay => {
                for (slot, range) in &batches {
                    let obj = DayObjective {
                        dims,
                        atlas0: &atlas0[*slot],
                        images: images[range.clone()].iter().map(|v| v.as_slice()).collect(),
                        weights: config.weights,
                        svf: config.svf,
                    };
                    let ev = obj
                        .loss_and_grad(&nus[range.clone()], &a_g[*slot])
                        .map_err(|e| at_iteration(e, it))?;
                    epoch_total += ev.total;
                    for (j, gi) in range.clone().enumerate() {
                        adam_nu[gi].step(&mut nus[gi], &ev.grad_nu[j]);
                    }
                    adam_ag[*slot].step(&mut a_g[*slot], &ev.grad_atlas_dev);
                }
            }
            ConstraintMode::RunningWindow { kappa } => {
                let lc = config.weights.lambda_constraint;
                let la = config.weights.lambda_atlas;
                for gi in 0..order.len() {
                    let slot = slot_of[gi];
                    let atlas: Vec<f64> =
                        atlas0[slot].iter().zip(&a_g[slot]).map(|(a, d)| a + d).collect();
                    let (u, _) =
                        diffeo::integrate_with_tape(dims, &nus[gi], config.svf.squaring_steps);
                    window.push_back(u);
                    if window.len() > kappa {
                        window.pop_front();
                    }
                    let w = window.len() as f64;
                    let mut mean = vec![0.0f64; 3 * n];
                    for f in &window {
                        for (m, v) in mean.iter_mut().zip(f) {
                            *m += v;
                        }
                    }
                    for m in &mut mean {
                        *m /= w;
                    }
                    let c = crate::objective::mean_sqnorm_raw(n, &mean);
                    let seed: Vec<f64> =
                        mean.iter().map(|m| m * 2.0 * lc / (n as f64 * w)).collect();
                    let pass = image_pass(
                        dims,
                        &atlas,
                        &images[gi],
                        &nus[gi],
                        &config.weights,
                        config.svf,
                        Some(&seed),
                    )
                    .map_err(|e| at_iteration(e, it))?;
                    let mut b = LossBreakdown {
                        similarity: pass.similarity,
                        constraint: c,
                        magnitude: pass.magnitude,
                        diffusion: pass.diffusion,
                        atlas_magnitude: crate::objective::mean_sqnorm_raw(n, &a_g[slot]),
                        total: 0.0,
                    };
                    b.combine(&config.weights);
                    epoch_total += b.total;
                    let mut g_ag = pass.gbar_atlas;
                    let ascale = la * 2.0 / n as f64;
                    for (g, d) in g_ag.iter_mut().zip(&a_g[slot]) {
                        *g += ascale * d;
                    }
                    adam_nu[gi].step(&mut nus[gi], &pass.grad_nu);
                    adam_ag[slot].step(&mut a_g[slot], &g_ag);
                }
            }
        }
        if !epoch_total.is_finite() {
            return Err(Error::Diverged { iteration: it, term: "total loss".into() });
        }
        trace.push(epoch_total);
    }

    let spacing = atlas_spacing(cohort, lo, hi);
    let deviation: Vec<Volume> = a_g
        .iter()
        .enumerate()
        .map(|(i, d)| Volume {
            dims,
            spacing: spacing[i],
            day: Some(lo + i as i32),
            data: d.iter().map(|&v| v as f32).collect(),
        })
        .collect();
    let fields: Vec<FittedField> = order
        .iter()
        .zip(nus)
        .map(|(&i, data)| FittedField {
            subject_id: cohort[i].subject_id.clone(),
            day: cohort[i].day,
            group: cohort[i].group.clone(),
            nu: VectorField { dims, data },
        })
        .collect();
    let mut initial = initial;
    for (i, v) in initial.iter_mut().enumerate() {
        v.spacing = spacing[i];
    }
    Ok(AtlasModel {
        day_range: (lo, hi),
        initial,
        deviation,
        spacing,
        fields,
        config: config.clone(),
        loss_trace: trace,
    })
}

fn at_iteration(e: Error, it: usize) -> Error {
    match e {
        Error::NonFinite { term } => Error::Diverged { iteration: it, term },
        other => other,
    }
}

/// Result of registering one image to a frozen atlas.
#[derive(Clone, Debug)]
pub struct Registration {
    pub nu: VectorField,
    /// Forward displacement (image toward atlas frame).
    pub u: VectorField,
    /// Inverse displacement (atlas toward image).
    pub u_inv: VectorField,
    pub breakdown: LossBreakdown,
    /// Overlap between the image's head mask and the warped atlas head mask.
    pub dsc: f64,
    pub loss_trace: Vec<f64>,
}

/// Optimizes a velocity field registering `entry` to the atlas at its day;
/// the atlas is frozen and no groupwise term applies.
pub fn register_to_atlas(
    model: &AtlasModel,
    entry: &CohortEntry,
    config: &FitConfig,
) -> Result<Registration> {
    config.validate()?;
    entry.validate()?;
    let atlas_vol = model.atlas_at(entry.day)?;
    if atlas_vol.dims != entry.volume.dims {
        return Err(Error::dims(format!(
            "register: atlas {} vs image {}",
            atlas_vol.dims, entry.volume.dims
        )));
    }
    let dims = atlas_vol.dims;
    let n = dims.len();
    let mut weights = config.weights;
    weights.lambda_constraint = 0.0;
    let atlas = atlas_vol.to_f64();
    let image = entry.volume.to_f64();
    let mut nu = vec![0.0f64; 3 * n];
    let mut adam = Adam::new(3 * n, config.step_size);
    let mut trace = Vec::with_capacity(config.iterations);
    let mut last = None;
    for it in 0..config.iterations {
        let pass = image_pass(dims, &atlas, &image, &nu, &weights, config.svf, None)
            .map_err(|e| at_iteration(e, it))?;
        let mut b = LossBreakdown {
            similarity: pass.similarity,
            constraint: 0.0,
            magnitude: pass.magnitude,
            diffusion: pass.diffusion,
            atlas_magnitude: 0.0,
            total: 0.0,
        };
        b.combine(&weights);
        if !b.total.is_finite() {
            return Err(Error::Diverged { iteration: it, term: "total loss".into() });
        }
        trace.push(b.total);
        last = Some(b);
        adam.step(&mut nu, &pass.grad_nu);
    }
    let nu = VectorField { dims, data: nu };
    let u = integrate_svf(&nu, &config.svf)?;
    let neg = VectorField { dims, data: nu.data.iter().map(|v| -v).collect() };
    let u_inv = integrate_svf(&neg, &config.svf)?;
    let atlas_mask = metrics::atlas_head_mask(&atlas_vol);
    let warped_mask = warp_mask(&atlas_mask, &u_inv)?;
    let dsc = metrics::dsc(&entry.head_mask, &warped_mask)?;
    Ok(Registration { nu, u, u_inv, breakdown: last.unwrap(), dsc, loss_trace: trace })
}

/// Per-day statistics of the average forward deformation over the atlas
/// head mask.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DayResidual {
    pub day: i32,
    pub n_images: usize,
    pub mean_norm: f64,
    pub std_norm: f64,
    pub mean_component: [f64; 3],
    pub std_component: [f64; 3],
}

/// Statistics of the voxelwise mean of a set of deformation fields over a
/// mask: opposite fields cancel, a single field passes through.
pub fn deformation_residual(
    day: i32,
    fields: &[&VectorField],
    mask: &Mask,
) -> Result<DayResidual> {
    if fields.is_empty() {
        return Err(Error::invalid("deformation residual needs at least one field"));
    }
    let dims = fields[0].dims;
    for f in fields {
        if f.dims != dims || mask.dims != dims {
            return Err(Error::dims("deformation residual: field/mask grids differ"));
        }
    }
    let n = dims.len();
    let mut mean = vec![0.0f64; 3 * n];
    for f in fields {
        for (m, v) in mean.iter_mut().zip(&f.data) {
            *m += v;
        }
    }
    let k = fields.len() as f64;
    for m in &mut mean {
        *m /= k;
    }
    let mut norms = Vec::new();
    let mut comps: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..n {
        if !mask.data[i] {
            continue;
        }
        let v = [mean[3 * i], mean[3 * i + 1], mean[3 * i + 2]];
        norms.push((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt());
        for c in 0..3 {
            comps[c].push(v[c]);
        }
    }
    if norms.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (mean_norm, std_norm) = metrics::mean_std(&norms);
    let mut mean_component = [0.0; 3];
    let mut std_component = [0.0; 3];
    for c in 0..3 {
        let (m, s) = metrics::mean_std(&comps[c]);
        mean_component[c] = m;
        std_component[c] = s;
    }
    Ok(DayResidual {
        day,
        n_images: fields.len(),
        mean_norm,
        std_norm,
        mean_component,
        std_component,
    })
}

/// Average deformation per day: integrates each of that day's fitted
/// forward fields and summarizes their voxelwise mean over the day's atlas
/// head mask.
pub fn groupwise_residual(model: &AtlasModel) -> Result<Vec<DayResidual>> {
    let mut out = Vec::new();
    for day in model.days() {
        let day_fields: Vec<&FittedField> =
            model.fields.iter().filter(|f| f.day == day).collect();
        if day_fields.is_empty() {
            continue;
        }
        let mut deformations = Vec::with_capacity(day_fields.len());
        for f in &day_fields {
            deformations.push(integrate_svf(&f.nu, &model.config.svf)?);
        }
        let refs: Vec<&VectorField> = deformations.iter().collect();
        let mask = metrics::atlas_head_mask(&model.atlas_at(day)?);
        out.push(deformation_residual(day, &refs, &mask)?);
    }
    Ok(out)
}

/// Scores a cohort against a fitted model: per-image registration quality
/// (reusing fitted fields when the image was part of the fit, registering
/// fresh otherwise) plus per-day atlas quality.
pub fn evaluate(model: &AtlasModel, cohort: &[CohortEntry]) -> Result<metrics::MetricReport> {
    let mut report = metrics::MetricReport::default();
    for e in cohort {
        let nu = match model.field_for(&e.subject_id, e.day) {
            Some(f) => f.nu.clone(),
            None => register_to_atlas(model, e, &model.config)?.nu,
        };
        let neg = VectorField { dims: nu.dims, data: nu.data.iter().map(|v| -v).collect() };
        let u_inv = integrate_svf(&neg, &model.config.svf)?;
        let atlas_mask = metrics::atlas_head_mask(&model.atlas_at(e.day)?);
        let warped = warp_mask(&atlas_mask, &u_inv)?;
        let dsc = metrics::dsc(&e.head_mask, &warped)?;
        let pct = diffeo::frac_nonpos_jacobian(&u_inv, &e.head_mask)?;
        report.images.push(metrics::ImageRow {
            subject_id: e.subject_id.clone(),
            day: e.day,
            dsc,
            pct_nonpos_jacobian: pct,
        });
    }
    for day in model.days() {
        let atlas = model.atlas_at(day)?;
        let initial = model.initial_atlas_at(day)?;
        let mask = metrics::atlas_head_mask(&atlas);
        let spacing = model.spacing_at(day)?;
        let hv = metrics::head_volume_cm3(&mask, spacing);
        let hv_error_pct = metrics::hv_error_pct(hv, day).ok();
        let sharpness = if mask.count() == 0 {
            0.0
        } else {
            metrics::sharpness(&atlas, &mask, 5)?
        };
        let ssim_vs_initial = metrics::ssim(&atlas, initial, 7)?;
        report.days.push(metrics::DayRow { day, hv_cm3: hv, hv_error_pct, sharpness, ssim_vs_initial });
    }
    Ok(report)
}
