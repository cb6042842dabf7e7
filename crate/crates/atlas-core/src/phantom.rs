//! Deterministic synthetic cohorts with known geometry.
//!
//! Each subject is a smoothly deformed copy of a growing ellipsoidal "head"
//! carrying hypo-intense internal cavities, one late-appearing bright
//! structure (with a linear ramp-in over a few days), an optional group
//! effect (a scaled region in group B), and multiplicative speckle. Ground
//! truth (masks, labels, analytic volumes, generating deformations) is
//! returned alongside the images, so registration, atlas, and group-analysis
//! claims can be scored against construction rather than consensus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::atlas::CohortEntry;
use crate::diffeo::{integrate_svf, SvfConfig};
use crate::error::{Error, Result};
use crate::kernels;
use crate::volume::{warp, warp_mask, Dims, Mask, VectorField, Volume};

/// Integer label volume for designated structures.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub dims: Dims,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn zeros(dims: Dims) -> Self {
        LabelMap { dims, data: vec![0; dims.len()] }
    }

    /// Binary mask of one label.
    pub fn mask_of(&self, label: u8) -> Mask {
        Mask { dims: self.dims, data: self.data.iter().map(|&v| v == label).collect() }
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }
}

/// Label ids used by the generator.
pub const LABEL_VENTRICLE_L: u8 = 1;
pub const LABEL_VENTRICLE_R: u8 = 2;
pub const LABEL_LATE_STRUCTURE: u8 = 3;
pub const LABEL_EFFECT_REGION: u8 = 4;

/// Acquisition-day assignment for the cohort.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Schedule {
    /// Stratified sweep over the day range; guarantees every day is covered
    /// once the cohort has at least as many images as days.
    Spread,
    /// Session-style acquisition around cluster centers with uniform jitter.
    Clustered { centers: Vec<i32>, jitter: i32 },
}

/// Generator settings; fully determines the cohort together with `seed`.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub grid: usize,
    pub day_range: (i32, i32),
    pub subjects_per_group: usize,
    pub scans_per_subject: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Head base radius as a fraction of the grid side.
    pub head_radius_frac: f64,
    /// Relative radius growth per day.
    pub growth_per_day: f64,
    /// Max norm of the per-subject deformation, voxels.
    pub deform_max_voxels: f64,
    /// Smoothing sigma of the subject deformation, fraction of the grid side.
    pub deform_smooth_frac: f64,
    /// Multiplicative speckle strength.
    pub speckle: f64,
    /// Late structure appears at `day_range.0 + appearance_offset`.
    pub appearance_offset: i32,
    /// Days over which the late structure ramps to full intensity.
    pub appearance_ramp_days: i32,
    /// Linear scale applied to the effect region in group B.
    pub effect_scale: f64,
    /// Effect-region radius as a fraction of the head semi-axes.
    pub effect_region_frac: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            grid: 48,
            day_range: (56, 90),
            subjects_per_group: 10,
            scans_per_subject: 3,
            schedule: Schedule::Clustered { centers: vec![60, 73, 86], jitter: 4 },
            seed: 1,
            head_radius_frac: 0.22,
            growth_per_day: 0.012,
            deform_max_voxels: 1.5,
            deform_smooth_frac: 0.125,
            speckle: 0.05,
            appearance_offset: 9,
            appearance_ramp_days: 3,
            effect_scale: 0.9,
            effect_region_frac: 0.30,
        }
    }
}

/// Head semi-axis ratios relative to the day's base radius.
const AXIS_RATIOS: [f64; 3] = [1.0, 0.85, 0.75];
const TISSUE: f64 = 0.55;
/// Hypo-intense but above the 0.1 head-mask threshold, so cavities read as
/// dark interior structure without punching holes in the segmented head.
const CAVITY: f64 = 0.15;
const BRIGHT: f64 = 0.85;
/// Voxel margin that must stay clear between anatomy and the grid boundary.
const MARGIN: f64 = 4.0;

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 16 {
            return Err(Error::invalid("phantom grid must be at least 16"));
        }
        if self.day_range.0 > self.day_range.1 {
            return Err(Error::invalid("phantom day range is empty"));
        }
        if self.subjects_per_group == 0 || self.scans_per_subject == 0 {
            return Err(Error::invalid("phantom needs at least one subject and one scan"));
        }
        if !(self.effect_scale > 0.0 && self.effect_scale <= 1.5) {
            return Err(Error::invalid("effect scale must be in (0, 1.5]"));
        }
        if self.deform_max_voxels < 0.0 || self.speckle < 0.0 {
            return Err(Error::invalid("deformation and speckle strengths must be non-negative"));
        }
        let r_max = self.base_radius() * (1.0 + self.growth_per_day * self.span() as f64);
        let reach = r_max * AXIS_RATIOS[0] + self.deform_max_voxels + MARGIN;
        if reach > self.grid as f64 / 2.0 {
            return Err(Error::invalid(format!(
                "anatomy reaches {reach:.1} voxels from center; grid {} leaves no {MARGIN}-voxel margin",
                self.grid
            )));
        }
        Ok(())
    }

    fn base_radius(&self) -> f64 {
        self.head_radius_frac * self.grid as f64
    }

    fn span(&self) -> i32 {
        self.day_range.1 - self.day_range.0
    }

    /// Head semi-axes (voxels) at a day.
    pub fn head_axes(&self, day: i32) -> [f64; 3] {
        let r = self.base_radius()
            * (1.0 + self.growth_per_day * (day - self.day_range.0) as f64);
        [r * AXIS_RATIOS[0], r * AXIS_RATIOS[1], r * AXIS_RATIOS[2]]
    }

    /// Day the late structure first appears.
    pub fn appearance_day(&self) -> i32 {
        self.day_range.0 + self.appearance_offset
    }
}

/// Ground truth accompanying a generated cohort, aligned with its entries.
#[derive(Clone, Debug)]
pub struct PhantomTruth {
    /// Analytic head volume per image (cm^3, before subject deformation).
    pub analytic_volume_cm3: Vec<f64>,
    /// Structure labels per image, in subject space.
    pub labels: Vec<LabelMap>,
    /// Per-subject generating velocity field, keyed by subject id.
    pub subject_fields: Vec<(String, VectorField)>,
    pub effect_label: u8,
    pub appearance_day: i32,
}

/// Smooth random vector field: white noise per component, Gaussian-blurred
/// with `sigma`, rescaled to `max_norm`.
pub fn smooth_random_field(dims: Dims, max_norm: f64, sigma: f64, seed: u64) -> VectorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comps = Vec::with_capacity(3);
    for _ in 0..3 {
        let noise: Vec<f64> = (0..dims.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        comps.push(kernels::gaussian_smooth(dims, &noise, sigma));
    }
    let mut f = VectorField::zeros(dims);
    for i in 0..dims.len() {
        f.data[3 * i] = comps[0][i];
        f.data[3 * i + 1] = comps[1][i];
        f.data[3 * i + 2] = comps[2][i];
    }
    let m = f.max_norm();
    if m > 0.0 && max_norm > 0.0 {
        f.scale(max_norm / m);
    } else if max_norm == 0.0 {
        f.scale(0.0);
    }
    f
}

/// Stable seed derivation (order-independent of generation sequence).
fn derive_seed(base: u64, kind: u64, a: u64, b: u64) -> u64 {
    let mut h = base ^ kind.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h = (h ^ a.wrapping_mul(0xbf58_476d_1ce4_e5b9)).rotate_left(27);
    h = (h ^ b.wrapping_mul(0x94d0_49bb_1331_11eb)).wrapping_mul(0x2545_f491_4f6c_dd1d);
    h ^ (h >> 31)
}

/// One internal ellipsoidal structure in canonical (head-relative) space.
struct Structure {
    label: u8,
    /// Center offset in units of the head semi-axes.
    center: [f64; 3],
    /// Radii in units of the head semi-axes.
    radii: [f64; 3],
    intensity: f64,
}

fn structures(cfg: &PhantomConfig, group_b: bool, day: i32) -> Vec<Structure> {
    let e = cfg.effect_region_frac;
    let mut s = vec![
        Structure {
            label: LABEL_VENTRICLE_L,
            center: [-0.33, 0.10, 0.08],
            radii: [0.22, 0.26, 0.24],
            intensity: CAVITY,
        },
        Structure {
            label: LABEL_VENTRICLE_R,
            center: [0.33, 0.10, 0.08],
            radii: [0.22, 0.26, 0.24],
            intensity: CAVITY,
        },
        Structure {
            label: LABEL_EFFECT_REGION,
            center: [0.0, 0.38, -0.18],
            radii: [e, e, e],
            intensity: BRIGHT,
        },
    ];
    if group_b {
        for st in &mut s {
            if st.label == LABEL_EFFECT_REGION {
                for r in &mut st.radii {
                    *r *= cfg.effect_scale;
                }
            }
        }
    }
    let t_app = cfg.appearance_day();
    if day >= t_app {
        s.push(Structure {
            label: LABEL_LATE_STRUCTURE,
            center: [0.0, -0.35, 0.15],
            radii: [0.18, 0.18, 0.18],
            intensity: BRIGHT,
        });
    }
    s
}

/// Intensity weight of the late structure: 1/ramp at its first day, full
/// after `ramp` days.
fn appearance_weight(cfg: &PhantomConfig, day: i32) -> f64 {
    let t_app = cfg.appearance_day();
    if day < t_app {
        return 0.0;
    }
    let ramp = cfg.appearance_ramp_days.max(1) as f64;
    (((day - t_app + 1) as f64) / ramp).min(1.0)
}

/// Linear edge profile: 0 outside, 1 inside, transition of width `w` voxels
/// centered `d0` voxels inside the analytic surface.
#[inline]
fn edge(d: f64, w: f64, d0: f64) -> f64 {
    ((d - d0) / w + 0.5).clamp(0.0, 1.0)
}

/// Closed-form ellipsoid volume in cm³ for semi-axes in voxels at an
/// isotropic spacing in mm.
pub fn ellipsoid_volume_cm3(axes: [f64; 3], spacing_mm: f64) -> f64 {
    std::f64::consts::PI * 4.0 / 3.0 * axes[0] * axes[1] * axes[2] * spacing_mm.powi(3) / 1000.0
}

/// Canonical (undeformed) template, head mask, and labels for one day/group.
pub fn canonical_template(cfg: &PhantomConfig, group_b: bool, day: i32) -> (Volume, Mask, LabelMap) {
    canonical(cfg, group_b, day)
}

fn canonical(cfg: &PhantomConfig, group_b: bool, day: i32) -> (Volume, Mask, LabelMap) {
    let dims = Dims::cube(cfg.grid);
    let c = (cfg.grid as f64 - 1.0) / 2.0;
    let axes = cfg.head_axes(day);
    let r_min = axes[2];
    // Transition tuned so intensity crosses the head-mask threshold 0.1 at
    // the analytic surface: 0.55 * edge(0) = 0.1 needs d0 = 0.318 * w.
    let (w_head, d0_head) = (1.2, 0.318 * 1.2);
    let structs = structures(cfg, group_b, day);
    let late_w = appearance_weight(cfg, day);
    let mut vol = Volume::zeros(dims, 1.0);
    let mut mask = Mask::filled(dims, false);
    let mut labels = LabelMap::zeros(dims);
    let mut i = 0usize;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let p = [x as f64 - c, y as f64 - c, z as f64 - c];
                let rho = ((p[0] / axes[0]).powi(2)
                    + (p[1] / axes[1]).powi(2)
                    + (p[2] / axes[2]).powi(2))
                .sqrt();
                let d = (1.0 - rho) * r_min;
                let mut v = TISSUE * edge(d, w_head, d0_head);
                mask.data[i] = rho <= 1.0;
                if rho < 1.2 {
                    for st in &structs {
                        let sc = [st.center[0] * axes[0], st.center[1] * axes[1], st.center[2] * axes[2]];
                        let sr = [st.radii[0] * axes[0], st.radii[1] * axes[1], st.radii[2] * axes[2]];
                        let srho = (((p[0] - sc[0]) / sr[0]).powi(2)
                            + ((p[1] - sc[1]) / sr[1]).powi(2)
                            + ((p[2] - sc[2]) / sr[2]).powi(2))
                        .sqrt();
                        let sd = (1.0 - srho) * sr[2].min(sr[0]).min(sr[1]);
                        let blend = edge(sd, 1.0, 0.0);
                        if blend > 0.0 {
                            let mut target = st.intensity;
                            if st.label == LABEL_LATE_STRUCTURE {
                                target = TISSUE + late_w * (BRIGHT - TISSUE);
                            }
                            v += blend * (target - v);
                        }
                        if srho <= 1.0 && labels.data[i] == 0 {
                            labels.data[i] = st.label;
                        }
                    }
                }
                vol.data[i] = v.clamp(0.0, 1.0) as f32;
                i += 1;
            }
        }
    }
    (vol.with_day(day), mask, labels)
}

/// Acquisition day for one (subject, scan) slot.
fn scan_day(cfg: &PhantomConfig, subject_idx: usize, scan: usize) -> i32 {
    let (lo, hi) = cfg.day_range;
    match &cfg.schedule {
        Schedule::Spread => {
            let total = (2 * cfg.subjects_per_group * cfg.scans_per_subject) as f64;
            let slot = (subject_idx + scan * 2 * cfg.subjects_per_group) as f64;
            let span = (hi - lo + 1) as f64;
            lo + ((slot + 0.5) * span / total).floor() as i32
        }
        Schedule::Clustered { centers, jitter } => {
            let center = centers[scan % centers.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                2,
                subject_idx as u64,
                scan as u64,
            ));
            let j = if *jitter > 0 { rng.gen_range(-jitter..=*jitter) } else { 0 };
            (center + j).clamp(lo, hi)
        }
    }
}

/// Analytic head volume (cm^3) for each day in the configured range, at the
/// phantom's unit (1 mm) spacing.
pub fn analytic_volume_curve(cfg: &PhantomConfig) -> Vec<(i32, f64)> {
    (cfg.day_range.0..=cfg.day_range.1)
        .map(|day| (day, ellipsoid_volume_cm3(cfg.head_axes(day), 1.0)))
        .collect()
}

/// Generates the cohort: entries sorted by (day, subject id), plus ground
/// truth aligned with the entries.
pub fn generate_cohort(cfg: &PhantomConfig) -> Result<(Vec<CohortEntry>, PhantomTruth)> {
    cfg.validate()?;
    let dims = Dims::cube(cfg.grid);
    let sigma = cfg.deform_smooth_frac * cfg.grid as f64;
    let svf = SvfConfig::default();

    struct Generated {
        entry: CohortEntry,
        analytic_cm3: f64,
        labels: LabelMap,
    }
    let mut items: Vec<Generated> = Vec::new();
    let mut subject_fields = Vec::new();
    let mut canon_cache: std::collections::HashMap<(bool, i32), (Volume, Mask, LabelMap)> =
        std::collections::HashMap::new();

    for (gi, group) in ["A", "B"].iter().enumerate() {
        for s in 0..cfg.subjects_per_group {
            let subject_idx = gi * cfg.subjects_per_group + s;
            let subject_id = format!("{group}{:02}", s + 1);
            let nu = smooth_random_field(
                dims,
                cfg.deform_max_voxels,
                sigma,
                derive_seed(cfg.seed, 1, subject_idx as u64, 0),
            );
            let neg = VectorField {
                dims,
                data: nu.data.iter().map(|v| -v).collect(),
            };
            let u_inv = integrate_svf(&neg, &svf)?;
            subject_fields.push((subject_id.clone(), nu));

            for scan in 0..cfg.scans_per_subject {
                let day = scan_day(cfg, subject_idx, scan);
                let (tpl, tmask, tlabels) = canon_cache
                    .entry((gi == 1, day))
                    .or_insert_with(|| canonical(cfg, gi == 1, day))
                    .clone();
                let mut img = warp(&tpl, &u_inv)?;
                let head_mask = warp_mask(&tmask, &u_inv)?;
                let labels = warp_labels(&tlabels, &u_inv)?;
                if cfg.speckle > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        cfg.seed,
                        3,
                        subject_idx as u64,
                        day as u64,
                    ));
                    let noise: Vec<f64> =
                        (0..dims.len()).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
                    let mut eta = kernels::gaussian_smooth(dims, &noise, 1.2);
                    let mean = eta.iter().sum::<f64>() / eta.len() as f64;
                    let var =
                        eta.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / eta.len() as f64;
                    let sd = var.sqrt().max(1e-12);
                    for e in &mut eta {
                        *e = (*e - mean) / sd;
                    }
                    for (v, e) in img.data.iter_mut().zip(&eta) {
                        *v = ((*v as f64) * (1.0 + cfg.speckle * e)).clamp(0.0, 1.0) as f32;
                    }
                }
                let analytic_cm3 = ellipsoid_volume_cm3(cfg.head_axes(day), 1.0);
                items.push(Generated {
                    entry: CohortEntry {
                        subject_id: subject_id.clone(),
                        day,
                        group: Some(group.to_string()),
                        volume: img.with_day(day),
                        head_mask,
                    },
                    analytic_cm3,
                    labels,
                });
            }
        }
    }

    items.sort_by(|a, b| {
        (a.entry.day, a.entry.subject_id.as_str()).cmp(&(b.entry.day, b.entry.subject_id.as_str()))
    });
    let mut entries = Vec::with_capacity(items.len());
    let mut analytic = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for g in items {
        entries.push(g.entry);
        analytic.push(g.analytic_cm3);
        labels.push(g.labels);
    }
    Ok((
        entries,
        PhantomTruth {
            analytic_volume_cm3: analytic,
            labels,
            subject_fields,
            effect_label: LABEL_EFFECT_REGION,
            appearance_day: cfg.appearance_day(),
        },
    ))
}

/// Warps each label's mask and recomposes; errors if warped labels overlap
/// (they cannot, short of exact interpolation ties, since the indicator
/// interpolants of disjoint labels sum to at most one).
fn warp_labels(labels: &LabelMap, u: &VectorField) -> Result<LabelMap> {
    let mut out = LabelMap::zeros(labels.dims);
    let present: Vec<u8> = {
        let mut seen = [false; 256];
        for &v in &labels.data {
            seen[v as usize] = true;
        }
        (1..=255u8).filter(|&l| seen[l as usize]).collect()
    };
    for label in present {
        let warped = warp_mask(&labels.mask_of(label), u)?;
        for (o, &w) in out.data.iter_mut().zip(&warped.data) {
            if w {
                if *o != 0 {
                    return Err(Error::invalid(format!(
                        "warped labels {o} and {label} overlap"
                    )));
                }
                *o = label;
            }
        }
    }
    Ok(out)
}
