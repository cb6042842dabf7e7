//! Subcommand surface and implementations.

use std::path::{Path, PathBuf};

use atlas_core::atlas::{self, CohortEntry, DeltaWindow, FitConfig};
use atlas_core::io;
use atlas_core::objective::LossWeights;
use atlas_core::phantom::{self, LabelMap, PhantomConfig};
use atlas_core::vbm::{self, VbmConfig};
use atlas_core::volume::Volume;
use atlas_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

use crate::record::RunRecord;

#[derive(Parser)]
#[command(name = "atlas", version, about = "Spatiotemporal ultrasound atlas toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with ground-truth labels and volumes.
    PhantomGen {
        /// JSON generator settings; missing fields take defaults.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the spatiotemporal atlas and per-image deformations to a cohort.
    BuildAtlas(BuildArgs),
    /// Register a single volume to a day of a fitted atlas.
    Register {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        /// Head mask of the input volume.
        #[arg(long)]
        mask: PathBuf,
        /// Gestational day selecting the atlas frame.
        #[arg(long)]
        day: i32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fitted model against a cohort and write the metric report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxelwise two-group comparison of deformation Jacobians.
    Vbm(VbmArgs),
    /// Print a fitted model summary.
    Info {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
pub struct BuildArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Median window half-width in days; "inf" pools all days.
    #[arg(long, default_value = "3")]
    delta: DeltaWindow,
    #[arg(long, default_value_t = 1.0)]
    lambda_atlas: f64,
    #[arg(long, default_value_t = 10.0)]
    lambda_constraint: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_deformation: f64,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct VbmArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Label volume in atlas space for per-structure summaries.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Gaussian smoothing sigma of the Jacobian maps, voxels.
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Temporal window length in days.
    #[arg(long, default_value_t = 7)]
    window: usize,
    /// False-discovery-rate level.
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Maps failures onto the documented exit codes: optimization blow-ups are
/// distinguishable from bad inputs.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } | Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PhantomGen { config, out } => phantom_gen(&config, &out),
        Command::BuildAtlas(args) => build_atlas(&args),
        Command::Register { model, volume, mask, day, out } => {
            register(&model, &volume, &mask, day, &out)
        }
        Command::Eval { model, manifest, out } => eval(&model, &manifest, &out),
        Command::Vbm(args) => run_vbm(&args),
        Command::Info { model } => info(&model),
    }
}

fn phantom_gen(config_path: &Path, out: &Path) -> Result<()> {
    let raw = std::fs::read_to_string(config_path)
        .map_err(|e| Error::Format { path: config_path.display().to_string(), message: e.to_string() })?;
    let cfg: PhantomConfig = serde_json::from_str(&raw)?;
    let mut record = RunRecord::start("phantom-gen", serde_json::to_value(&cfg)?, Some(cfg.seed));
    record.add_input(config_path)?;

    let (entries, truth) = phantom::generate_cohort(&cfg)?;
    std::fs::create_dir_all(out)?;

    let mut manifest = Vec::with_capacity(entries.len());
    for (entry, labels) in entries.iter().zip(&truth.labels) {
        let stem = format!("{}_{:03}", entry.subject_id, entry.day);
        let (vol_name, mask_name, label_name) =
            (format!("img_{stem}.nii"), format!("mask_{stem}.nii"), format!("labels_{stem}.nii"));
        io::write_volume(out.join(&vol_name), &entry.volume)?;
        io::write_mask(out.join(&mask_name), &entry.head_mask)?;
        io::write_volume(out.join(&label_name), &label_volume(labels))?;
        manifest.push(io::ManifestEntry {
            subject_id: entry.subject_id.clone(),
            day: entry.day,
            group: entry.group.clone(),
            volume_path: vol_name,
            mask_path: mask_name,
            label_path: Some(label_name),
        });
    }
    io::write_manifest(out.join("manifest.json"), &manifest)?;

    // Atlas-space labels at the middle of the timeline, for group analysis.
    let mid_day = (cfg.day_range.0 + cfg.day_range.1) / 2;
    let (_, _, template_labels) = phantom::canonical_template(&cfg, false, mid_day);
    io::write_volume(out.join("template_labels.nii"), &label_volume(&template_labels))?;

    let curve = phantom::analytic_volume_curve(&cfg);
    let truth_json = serde_json::json!({
        "appearance_day": truth.appearance_day,
        "effect_label": truth.effect_label,
        "template_labels_day": mid_day,
        "images": entries.iter().zip(&truth.analytic_volume_cm3).map(|(e, cm3)| {
            serde_json::json!({"subject_id": e.subject_id, "day": e.day, "analytic_volume_cm3": cm3})
        }).collect::<Vec<_>>(),
        "volume_curve": curve.iter().map(|(day, cm3)| {
            serde_json::json!({"day": day, "cm3": cm3})
        }).collect::<Vec<_>>(),
    });
    let mut text = serde_json::to_string_pretty(&truth_json)?;
    text.push('\n');
    std::fs::write(out.join("truth.json"), text)?;

    record.write(out)?;
    println!("wrote {} images to {}", entries.len(), out.display());
    Ok(())
}

/// Label ids as a float volume so labels travel in the standard container.
fn label_volume(labels: &LabelMap) -> Volume {
    Volume {
        dims: labels.dims,
        spacing: 1.0,
        day: None,
        data: labels.data.iter().map(|&l| l as f32).collect(),
    }
}

fn label_map(vol: &Volume) -> Result<LabelMap> {
    let mut data = Vec::with_capacity(vol.data.len());
    for &v in &vol.data {
        let r = v.round();
        if !(0.0..=255.0).contains(&r) || (v - r).abs() > 1e-3 {
            return Err(Error::invalid(format!("label volume holds non-label value {v}")));
        }
        data.push(r as u8);
    }
    Ok(LabelMap { dims: vol.dims, data })
}

fn build_atlas(args: &BuildArgs) -> Result<()> {
    let config = FitConfig {
        delta: args.delta,
        weights: LossWeights {
            lambda_atlas: args.lambda_atlas,
            lambda_constraint: args.lambda_constraint,
            lambda_deformation: args.lambda_deformation,
            ..LossWeights::default()
        },
        iterations: args.iters,
        seed: args.seed,
        ..FitConfig::default()
    };
    config.validate()?;
    let mut record =
        RunRecord::start("build-atlas", serde_json::to_value(&config)?, Some(args.seed));
    record.add_manifest_inputs(&args.manifest)?;

    let cohort = io::load_cohort(&args.manifest)?;
    let model = atlas::fit(&cohort, &config)?;
    std::fs::create_dir_all(&args.out)?;
    io::save_model(&args.out, &model)?;
    record.write(&args.out)?;
    println!(
        "fitted {} images over days {}..={} (final loss {:.6})",
        model.fields.len(),
        model.day_range.0,
        model.day_range.1,
        model.loss_trace.last().copied().unwrap_or(f64::NAN),
    );
    Ok(())
}

fn register(model_dir: &Path, volume: &Path, mask: &Path, day: i32, out: &Path) -> Result<()> {
    let model = io::load_model(model_dir)?;
    let mut record = RunRecord::start(
        "register",
        serde_json::json!({"day": day, "fit": serde_json::to_value(&model.config)?}),
        None,
    );
    record.add_dir_inputs(model_dir)?;
    record.add_input(volume)?;
    record.add_input(mask)?;

    let subject_id = volume
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let entry = CohortEntry {
        subject_id,
        day,
        group: None,
        volume: io::read_volume(volume)?.with_day(day),
        head_mask: io::read_mask(mask)?,
    };
    let reg = atlas::register_to_atlas(&model, &entry, &model.config)?;

    std::fs::create_dir_all(out)?;
    io::write_field(out.join("nu.nii"), &reg.nu)?;
    io::write_field(out.join("u.nii"), &reg.u)?;
    io::write_field(out.join("u_inv.nii"), &reg.u_inv)?;
    let summary = serde_json::json!({
        "dsc": reg.dsc,
        "loss": reg.breakdown,
        "loss_trace": reg.loss_trace,
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(out.join("registration.json"), text)?;
    record.write(out)?;
    println!("registered to day {day}: dsc {:.4}", reg.dsc);
    Ok(())
}

fn eval(model_dir: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let model = io::load_model(model_dir)?;
    let mut record = RunRecord::start("eval", serde_json::to_value(&model.config)?, None);
    record.add_dir_inputs(model_dir)?;
    record.add_manifest_inputs(manifest)?;

    let cohort = io::load_cohort(manifest)?;
    let report = atlas::evaluate(&model, &cohort)?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    io::write_metric_report(out, &report)?;
    record.write(dir)?;
    let (dsc, _) = report.dsc_mean_std();
    println!("wrote {} (mean dsc {:.4})", out.display(), dsc);
    Ok(())
}

fn run_vbm(args: &VbmArgs) -> Result<()> {
    let cfg = VbmConfig {
        sigma: args.sigma,
        window_days: args.window,
        q: args.q,
        ..VbmConfig::default()
    };
    cfg.validate()?;
    let model = io::load_model(&args.model)?;
    let mut record = RunRecord::start("vbm", serde_json::to_value(&cfg)?, None);
    record.add_dir_inputs(&args.model)?;
    record.add_manifest_inputs(&args.manifest)?;

    let cohort = io::load_cohort(&args.manifest)?;
    let labels = match &args.labels {
        Some(path) => {
            record.add_input(path)?;
            Some(label_map(&io::read_volume(path)?)?)
        }
        None => None,
    };
    let result = vbm::run_vbm(&model, &cohort, labels.as_ref(), &cfg)?;

    std::fs::create_dir_all(&args.out)?;
    for w in &result.windows {
        let span = format!("{:03}_{:03}", w.start_day, w.end_day);
        io::write_volume(args.out.join(format!("pvalues_{span}.nii")), &w.p_values)?;
        io::write_mask(args.out.join(format!("significant_{span}.nii")), &w.significant)?;
    }
    io::write_structures_csv(args.out.join("structures.csv"), &result.structures)?;
    let summary = serde_json::json!({
        "p_star": result.p_star,
        "total_significant": result.total_significant,
        "clamped_jacobians": result.clamp_tally,
        "warnings": result.warnings,
        "windows": result.windows.iter().map(|w| serde_json::json!({
            "start_day": w.start_day,
            "end_day": w.end_day,
            "mask_day": w.mask_day,
            "n_a": w.n_a,
            "n_b": w.n_b,
            "significant": w.significant.count(),
        })).collect::<Vec<_>>(),
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(args.out.join("vbm.json"), text)?;
    record.write(&args.out)?;
    println!(
        "{} windows, {} significant voxels (p* {:.3e})",
        result.windows.len(),
        result.total_significant,
        result.p_star,
    );
    Ok(())
}

fn info(model_dir: &Path) -> Result<()> {
    let model = io::load_model(model_dir)?;
    let dims = model.initial.first().map(|v| v.dims.to_string()).unwrap_or_else(|| "?".into());
    println!("days: {}..={}", model.day_range.0, model.day_range.1);
    println!("grid: {dims}");
    println!("images: {}", model.fields.len());
    let w = &model.config.weights;
    println!(
        "fit: delta {}, lambda (constraint {}, deformation {}, atlas {}), {} iterations, seed {}",
        model.config.delta,
        w.lambda_constraint,
        w.lambda_deformation,
        w.lambda_atlas,
        model.config.iterations,
        model.config.seed,
    );
    println!(
        "final loss: {:.6}",
        model.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    println!("mean |deviation|: {:.6}", model.mean_abs_deviation());
    Ok(())
}
