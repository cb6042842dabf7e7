//! Voxel-based morphometry over fitted deformations: log-Jacobian
//! descriptor maps, Gaussian smoothing, windowed Welch tests between two
//! groups, pooled false-discovery-rate control, and per-structure summaries.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::atlas::{AtlasModel, CohortEntry};
use crate::diffeo::{integrate_svf, jacobian_det};
use crate::error::{Error, Result};
use crate::kernels;
use crate::metrics;
use crate::phantom::LabelMap;
use crate::volume::{Mask, VectorField, Volume};

/// Group-analysis settings.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct VbmConfig {
    /// Gaussian smoothing sigma in voxels.
    pub sigma: f64,
    /// Window length in days (2*delta+1 convention; any length >= 1 works).
    pub window_days: usize,
    /// False-discovery-rate level.
    pub q: f64,
    /// Smooth the Jacobian before taking the log instead of after.
    pub smooth_before_log: bool,
}

impl Default for VbmConfig {
    fn default() -> Self {
        VbmConfig { sigma: 2.0, window_days: 7, q: 0.05, smooth_before_log: false }
    }
}

impl VbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("smoothing sigma must be positive"));
        }
        if self.window_days == 0 {
            return Err(Error::invalid("window must cover at least one day"));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::invalid("FDR level must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Floor for nonpositive Jacobians before the log transform.
const JACOBIAN_FLOOR: f64 = 1e-3;

/// Smoothed log-Jacobian descriptor of a displacement field, zeroed outside
/// the mask; the second return value counts in-mask voxels whose Jacobian
/// was nonpositive and had to be clamped.
pub fn descriptor_map(u: &VectorField, mask: &Mask, cfg: &VbmConfig) -> Result<(Volume, usize)> {
    cfg.validate()?;
    if u.dims != mask.dims {
        return Err(Error::dims(format!("descriptor: {} vs {}", u.dims, mask.dims)));
    }
    let dims = u.dims;
    let jac = jacobian_det(u);
    let mut tally = 0usize;
    let mut field: Vec<f64> = jac
        .data
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            if j <= 0.0 {
                if mask.data[i] {
                    tally += 1;
                }
                JACOBIAN_FLOOR
            } else {
                j as f64
            }
        })
        .collect();
    if cfg.smooth_before_log {
        field = kernels::gaussian_smooth(dims, &field, cfg.sigma);
        for v in &mut field {
            *v = v.max(JACOBIAN_FLOOR).ln();
        }
    } else {
        for v in &mut field {
            *v = v.ln();
        }
        field = kernels::gaussian_smooth(dims, &field, cfg.sigma);
    }
    let data: Vec<f32> = field
        .iter()
        .zip(&mask.data)
        .map(|(&v, &m)| if m { v as f32 } else { 0.0 })
        .collect();
    Ok((Volume { dims, spacing: 1.0, day: None, data }, tally))
}

/// Per-voxel two-sided Welch t-test between two sets of descriptor maps;
/// voxels outside the mask (and voxels where both groups have zero
/// variance) get p = 1.
pub fn group_test(maps_a: &[Volume], maps_b: &[Volume], mask: &Mask) -> Result<Volume> {
    if maps_a.len() < 2 || maps_b.len() < 2 {
        return Err(Error::invalid("group test needs at least two maps per group"));
    }
    let dims = mask.dims;
    for m in maps_a.iter().chain(maps_b) {
        if m.dims != dims {
            return Err(Error::dims(format!("group test: {} vs {}", m.dims, dims)));
        }
    }
    let na = maps_a.len() as f64;
    let nb = maps_b.len() as f64;
    let mut p = vec![1.0f32; dims.len()];
    for i in 0..dims.len() {
        if !mask.data[i] {
            continue;
        }
        let (ma, va) = sample_mean_var(maps_a, i);
        let (mb, vb) = sample_mean_var(maps_b, i);
        let se2 = va / na + vb / nb;
        if se2 == 0.0 {
            continue; // both variances zero: p stays 1
        }
        let t = (ma - mb) / se2.sqrt();
        let df = se2 * se2
            / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
        let dist = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::invalid(format!("degenerate t distribution: {e}")))?;
        p[i] = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0) as f32;
    }
    Ok(Volume { dims, spacing: 1.0, day: None, data: p })
}

/// Sample mean and unbiased variance of one voxel across maps.
fn sample_mean_var(maps: &[Volume], i: usize) -> (f64, f64) {
    let n = maps.len() as f64;
    let mean = maps.iter().map(|m| m.data[i] as f64).sum::<f64>() / n;
    let var = maps
        .iter()
        .map(|m| {
            let d = m.data[i] as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / (n - 1.0);
    (mean, var)
}

/// Benjamini–Hochberg step-up: returns the rejection threshold p* (0 when
/// nothing is rejected) and per-input rejection flags.
pub fn fdr_bh(p: &[f64], q: f64) -> Result<(f64, Vec<bool>)> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid("FDR level must lie in (0, 1)"));
    }
    let m = p.len();
    if m == 0 {
        return Ok((0.0, Vec::new()));
    }
    let mut sorted: Vec<f64> = p.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut p_star = 0.0;
    for (k, &pk) in sorted.iter().enumerate().rev() {
        if pk <= (k + 1) as f64 * q / m as f64 {
            p_star = pk;
            break;
        }
    }
    let flags = p.iter().map(|&v| p_star > 0.0 && v <= p_star).collect();
    Ok((p_star, flags))
}

/// One analysis window's outputs.
#[derive(Clone, Debug)]
pub struct WindowResult {
    pub start_day: i32,
    pub end_day: i32,
    /// Day whose atlas head mask scoped the window's statistics.
    pub mask_day: i32,
    pub n_a: usize,
    pub n_b: usize,
    pub p_values: Volume,
    pub significant: Mask,
}

/// Per-structure share of significant voxels in one window.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct StructurePct {
    pub label: u8,
    pub start_day: i32,
    pub end_day: i32,
    pub percent: f64,
}

/// Full group-analysis output.
#[derive(Clone, Debug)]
pub struct VbmResult {
    pub windows: Vec<WindowResult>,
    /// Pooled rejection threshold across every window and in-mask voxel.
    pub p_star: f64,
    pub total_significant: usize,
    /// In-mask voxels whose Jacobian was clamped before the log.
    pub clamp_tally: usize,
    pub structures: Vec<StructurePct>,
    pub warnings: Vec<String>,
}

/// Runs the windowed group comparison over a fitted model: descriptor maps
/// per image (one image per subject per window, earliest day), Welch tests
/// per window, pooled FDR across all in-mask voxels, and per-label
/// percentages of significant voxels.
pub fn run_vbm(
    model: &AtlasModel,
    cohort: &[CohortEntry],
    labels: Option<&LabelMap>,
    cfg: &VbmConfig,
) -> Result<VbmResult> {
    cfg.validate()?;
    let mut groups: Vec<String> =
        cohort.iter().filter_map(|e| e.group.clone()).collect();
    groups.sort();
    groups.dedup();
    if groups.len() != 2 {
        return Err(Error::invalid(format!(
            "group comparison needs exactly two group labels, found {groups:?}"
        )));
    }
    let (lo, hi) = (
        cohort.iter().map(|e| e.day).min().ok_or_else(|| Error::invalid("empty cohort"))?,
        cohort.iter().map(|e| e.day).max().unwrap(),
    );

    let mut warnings = Vec::new();
    let mut clamp_tally = 0usize;
    let mut windows = Vec::new();
    let mut pooled: Vec<f64> = Vec::new();
    // (window index, voxel index) for each pooled p-value, to map the global
    // FDR decision back onto per-window masks.
    let mut pooled_loc: Vec<(usize, usize)> = Vec::new();

    let len = cfg.window_days as i32;
    let mut start = lo;
    while start <= hi {
        let end = (start + len - 1).min(hi);
        let mask_day = (start + (len - 1) / 2).clamp(model.day_range.0, model.day_range.1);
        let selected = select_window_entries(cohort, start, end);
        let mut maps_by_group: [Vec<Volume>; 2] = [Vec::new(), Vec::new()];
        let mask = metrics::atlas_head_mask(&model.atlas_at(mask_day)?);
        for &idx in &selected {
            let e = &cohort[idx];
            let g = match &e.group {
                Some(g) if *g == groups[0] => 0usize,
                Some(g) if *g == groups[1] => 1usize,
                _ => continue,
            };
            let field = model.field_for(&e.subject_id, e.day).ok_or_else(|| {
                Error::invalid(format!(
                    "no fitted field for {} day {}; fit the cohort before group analysis",
                    e.subject_id, e.day
                ))
            })?;
            let u = integrate_svf(&field.nu, &model.config.svf)?;
            let (map, tally) = descriptor_map(&u, &mask, cfg)?;
            clamp_tally += tally;
            maps_by_group[g].push(map);
        }
        if maps_by_group[0].len() < 2 || maps_by_group[1].len() < 2 {
            warnings.push(format!(
                "window {start}-{end}: skipped ({} vs {} usable images)",
                maps_by_group[0].len(),
                maps_by_group[1].len()
            ));
            start += len;
            continue;
        }
        let p = group_test(&maps_by_group[0], &maps_by_group[1], &mask)?;
        let widx = windows.len();
        for i in 0..mask.data.len() {
            if mask.data[i] {
                pooled.push(p.data[i] as f64);
                pooled_loc.push((widx, i));
            }
        }
        windows.push(WindowResult {
            start_day: start,
            end_day: end,
            mask_day,
            n_a: maps_by_group[0].len(),
            n_b: maps_by_group[1].len(),
            significant: Mask::filled(p.dims, false),
            p_values: p,
        });
        start += len;
    }

    let (p_star, flags) = fdr_bh(&pooled, cfg.q)?;
    let mut total_significant = 0usize;
    for (&(widx, vi), &reject) in pooled_loc.iter().zip(&flags) {
        if reject {
            windows[widx].significant.data[vi] = true;
            total_significant += 1;
        }
    }

    let mut structures = Vec::new();
    if let Some(lm) = labels {
        let mut present: Vec<u8> = lm.data.iter().copied().filter(|&l| l != 0).collect();
        present.sort_unstable();
        present.dedup();
        for w in &windows {
            if lm.dims != w.significant.dims {
                return Err(Error::dims(format!(
                    "labels {} vs analysis grid {}",
                    lm.dims, w.significant.dims
                )));
            }
            for &label in &present {
                let mut total = 0usize;
                let mut sig = 0usize;
                for (i, &l) in lm.data.iter().enumerate() {
                    if l == label {
                        total += 1;
                        sig += w.significant.data[i] as usize;
                    }
                }
                structures.push(StructurePct {
                    label,
                    start_day: w.start_day,
                    end_day: w.end_day,
                    percent: 100.0 * sig as f64 / total.max(1) as f64,
                });
            }
        }
    }

    Ok(VbmResult {
        windows,
        p_star,
        total_significant,
        clamp_tally,
        structures,
        warnings,
    })
}

/// One entry per subject within [start, end]: the earliest day, ties broken
/// by cohort order.
fn select_window_entries(cohort: &[CohortEntry], start: i32, end: i32) -> Vec<usize> {
    let mut best: Vec<(usize, i32, &str)> = Vec::new();
    for (i, e) in cohort.iter().enumerate() {
        if e.day < start || e.day > end {
            continue;
        }
        match best.iter_mut().find(|(_, _, id)| *id == e.subject_id) {
            Some(slot) => {
                if e.day < slot.1 {
                    *slot = (i, e.day, &e.subject_id);
                }
            }
            None => best.push((i, e.day, &e.subject_id)),
        }
    }
    best.into_iter().map(|(i, _, _)| i).collect()
}
