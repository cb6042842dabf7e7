//! File formats: a minimal single-file volume container (NIfTI-1 subset,
//! float32 little-endian, x-fastest), JSON cohort manifests, model
//! checkpoint directories, CSV reports, and content hashing.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::atlas::{AtlasModel, CohortEntry, FitConfig, FittedField};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::vbm::StructurePct;
use crate::volume::{Dims, Mask, VectorField, Volume};

const HEADER_LEN: usize = 348;
/// Header plus the 4-byte "no extensions" flag.
const DATA_OFFSET: usize = 352;
const DTYPE_FLOAT32: i16 = 16;
const MAGIC: &[u8; 4] = b"n+1\0";

fn put_i16(buf: &mut [u8], off: usize, v: i16) {
    buf[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_i32(buf: &mut [u8], off: usize, v: i32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], off: usize, v: f32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn get_i16(buf: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([buf[off], buf[off + 1]])
}

fn get_i32(buf: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]])
}

fn get_f32(buf: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]])
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), message: message.into() }
}

/// Serializes one scalar volume (components = 1) or a 3-component vector
/// field as a 4D image with the component axis last.
fn encode(dims: Dims, components: usize, spacing: f64, payload: &[f32]) -> Vec<u8> {
    let mut out = vec![0u8; DATA_OFFSET + payload.len() * 4];
    put_i32(&mut out, 0, HEADER_LEN as i32);
    let ndim: i16 = if components == 1 { 3 } else { 4 };
    let dim: [i16; 8] = [
        ndim,
        dims.nx as i16,
        dims.ny as i16,
        dims.nz as i16,
        if components == 1 { 1 } else { components as i16 },
        1,
        1,
        1,
    ];
    for (i, d) in dim.iter().enumerate() {
        put_i16(&mut out, 40 + 2 * i, *d);
    }
    put_i16(&mut out, 70, DTYPE_FLOAT32);
    put_i16(&mut out, 72, 32); // bits per voxel
    for i in 1..=3 {
        put_f32(&mut out, 76 + 4 * i, spacing as f32);
    }
    if components > 1 {
        put_f32(&mut out, 76 + 4 * 4, 1.0);
    }
    put_f32(&mut out, 108, DATA_OFFSET as f32); // data offset
    out[344..348].copy_from_slice(MAGIC);
    // Bytes 348..352 stay zero: no header extensions.
    for (i, v) in payload.iter().enumerate() {
        put_f32(&mut out, DATA_OFFSET + 4 * i, *v);
    }
    out
}

/// Parses the container; returns dims, component count, spacing, payload.
fn decode(path: &Path, raw: &[u8]) -> Result<(Dims, usize, f64, Vec<f32>)> {
    if raw.len() < DATA_OFFSET {
        return Err(format_err(
            path,
            format!("truncated header: expected at least {DATA_OFFSET} bytes, found {}", raw.len()),
        ));
    }
    if get_i32(raw, 0) != HEADER_LEN as i32 {
        return Err(format_err(path, "bad header size field"));
    }
    if &raw[344..348] != MAGIC {
        return Err(format_err(path, "magic mismatch: not a single-file volume"));
    }
    let dtype = get_i16(raw, 70);
    if dtype != DTYPE_FLOAT32 {
        return Err(format_err(path, format!("unsupported datatype {dtype} (need {DTYPE_FLOAT32})")));
    }
    let ndim = get_i16(raw, 40);
    let components = match ndim {
        3 => 1usize,
        4 => {
            let c = get_i16(raw, 48);
            if c != 3 {
                return Err(format_err(path, format!("expected 3 components, found {c}")));
            }
            3
        }
        other => return Err(format_err(path, format!("unsupported dimensionality {other}"))),
    };
    let nx = get_i16(raw, 42);
    let ny = get_i16(raw, 44);
    let nz = get_i16(raw, 46);
    if nx <= 0 || ny <= 0 || nz <= 0 {
        return Err(format_err(path, "non-positive grid size"));
    }
    let dims = Dims::new(nx as usize, ny as usize, nz as usize);
    let sx = get_f32(raw, 80) as f64;
    let sy = get_f32(raw, 84) as f64;
    let sz = get_f32(raw, 88) as f64;
    let spacing = if sx > 0.0 { sx } else { 1.0 };
    if sx > 0.0 && ((sy - sx).abs() > 1e-5 || (sz - sx).abs() > 1e-5) {
        return Err(format_err(path, "anisotropic spacing is not supported"));
    }
    let offset = get_f32(raw, 108) as usize;
    if offset < HEADER_LEN || offset > raw.len() {
        return Err(format_err(path, format!("bad data offset {offset}")));
    }
    let expected = dims.len() * components * 4;
    let actual = raw.len() - offset;
    if actual != expected {
        return Err(format_err(
            path,
            format!("payload size mismatch: expected {expected} bytes, found {actual}"),
        ));
    }
    let payload: Vec<f32> = raw[offset..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dims, components, spacing, payload))
}

pub fn write_volume(path: impl AsRef<Path>, vol: &Volume) -> Result<()> {
    fs::write(path, encode(vol.dims, 1, vol.spacing, &vol.data))?;
    Ok(())
}

/// Reads a scalar volume; the acquisition day is not part of the container
/// and must be supplied by the surrounding manifest or descriptor.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let raw = fs::read(path)?;
    let (dims, components, spacing, payload) = decode(path, &raw)?;
    if components != 1 {
        return Err(format_err(path, "expected a scalar volume, found a vector field"));
    }
    Ok(Volume { dims, spacing, day: None, data: payload })
}

/// Vector fields are stored with the component axis slowest (three scalar
/// volumes back to back).
pub fn write_field(path: impl AsRef<Path>, field: &VectorField) -> Result<()> {
    let n = field.dims.len();
    let mut payload = vec![0.0f32; 3 * n];
    for c in 0..3 {
        for i in 0..n {
            payload[c * n + i] = field.data[3 * i + c] as f32;
        }
    }
    fs::write(path, encode(field.dims, 3, 1.0, &payload))?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<VectorField> {
    let path = path.as_ref();
    let raw = fs::read(path)?;
    let (dims, components, _, payload) = decode(path, &raw)?;
    if components != 3 {
        return Err(format_err(path, "expected a vector field, found a scalar volume"));
    }
    let n = dims.len();
    let mut data = vec![0.0f64; 3 * n];
    for c in 0..3 {
        for i in 0..n {
            data[3 * i + c] = payload[c * n + i] as f64;
        }
    }
    Ok(VectorField { dims, data })
}

/// Masks travel as 0/1 scalar volumes; reading thresholds at 0.5.
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    write_volume(path, &mask.to_volume(1.0))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let v = read_volume(path)?;
    Ok(Mask { dims: v.dims, data: v.data.iter().map(|&x| x >= 0.5).collect() })
}

/// One cohort image in a manifest; paths are relative to the manifest file.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub day: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub volume_path: String,
    pub mask_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<String>,
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    check_unique(entries)?;
    let json = serde_json::to_string_pretty(entries)?;
    fs::write(path, json)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let raw = fs::read_to_string(&path)?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&raw)?;
    check_unique(&entries)?;
    Ok(entries)
}

fn check_unique(entries: &[ManifestEntry]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for e in entries {
        if !seen.insert((e.subject_id.as_str(), e.day)) {
            return Err(Error::invalid(format!(
                "duplicate manifest entry for subject {} day {}",
                e.subject_id, e.day
            )));
        }
    }
    Ok(())
}

/// Resolves a manifest path relative to the manifest's directory.
fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every manifest entry's volume and mask into cohort entries.
pub fn load_cohort(manifest_path: impl AsRef<Path>) -> Result<Vec<CohortEntry>> {
    let manifest_path = manifest_path.as_ref();
    let entries = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut cohort = Vec::with_capacity(entries.len());
    for e in &entries {
        let volume = read_volume(resolve(&base, &e.volume_path))?.with_day(e.day);
        let head_mask = read_mask(resolve(&base, &e.mask_path))?;
        let entry = CohortEntry {
            subject_id: e.subject_id.clone(),
            day: e.day,
            group: e.group.clone(),
            volume,
            head_mask,
        };
        entry.validate()?;
        cohort.push(entry);
    }
    Ok(cohort)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct FieldRef {
    subject_id: String,
    day: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<String>,
    file: String,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ModelDescriptor {
    day_range: (i32, i32),
    spacing: Vec<f64>,
    config: FitConfig,
    loss_trace: Vec<f64>,
    initial: Vec<String>,
    deviation: Vec<String>,
    fields: Vec<FieldRef>,
}

/// Writes a model checkpoint directory: one volume per initial/deviation
/// frame, one field per image, plus a JSON descriptor.
pub fn save_model(dir: impl AsRef<Path>, model: &AtlasModel) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut initial = Vec::new();
    let mut deviation = Vec::new();
    for (i, day) in model.days().enumerate() {
        let f0 = format!("initial_{day:03}.nii");
        let fg = format!("deviation_{day:03}.nii");
        write_volume(dir.join(&f0), &model.initial[i])?;
        write_volume(dir.join(&fg), &model.deviation[i])?;
        initial.push(f0);
        deviation.push(fg);
    }
    let mut fields = Vec::new();
    for f in &model.fields {
        let name = format!("field_{}_{:03}.nii", f.subject_id, f.day);
        write_field(dir.join(&name), &f.nu)?;
        fields.push(FieldRef {
            subject_id: f.subject_id.clone(),
            day: f.day,
            group: f.group.clone(),
            file: name,
        });
    }
    let desc = ModelDescriptor {
        day_range: model.day_range,
        spacing: model.spacing.clone(),
        config: model.config.clone(),
        loss_trace: model.loss_trace.clone(),
        initial,
        deviation,
        fields,
    };
    fs::write(dir.join("model.json"), serde_json::to_string_pretty(&desc)?)?;
    Ok(())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<AtlasModel> {
    let dir = dir.as_ref();
    let raw = fs::read_to_string(dir.join("model.json"))?;
    let desc: ModelDescriptor = serde_json::from_str(&raw)?;
    let (lo, hi) = desc.day_range;
    let n_days = (hi - lo + 1) as usize;
    if desc.initial.len() != n_days || desc.deviation.len() != n_days || desc.spacing.len() != n_days
    {
        return Err(format_err(dir, "descriptor day count mismatch"));
    }
    let mut initial = Vec::with_capacity(n_days);
    let mut deviation = Vec::with_capacity(n_days);
    for (i, (f0, fg)) in desc.initial.iter().zip(&desc.deviation).enumerate() {
        let day = lo + i as i32;
        initial.push(read_volume(dir.join(f0))?.with_day(day));
        deviation.push(read_volume(dir.join(fg))?.with_day(day));
    }
    let mut fields = Vec::with_capacity(desc.fields.len());
    for fr in &desc.fields {
        fields.push(FittedField {
            subject_id: fr.subject_id.clone(),
            day: fr.day,
            group: fr.group.clone(),
            nu: read_field(dir.join(&fr.file))?,
        });
    }
    Ok(AtlasModel {
        day_range: desc.day_range,
        initial,
        deviation,
        spacing: desc.spacing,
        fields,
        config: desc.config,
        loss_trace: desc.loss_trace,
    })
}

/// Column set of the evaluation CSV, in emission order.
pub const METRIC_CSV_COLUMNS: [&str; 9] = [
    "row_type",
    "day",
    "subject_id",
    "dsc",
    "pct_nonpos_jacobian",
    "hv_cm3",
    "hv_error_pct",
    "sharpness",
    "ssim_vs_initial",
];

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes the evaluation report: image rows sorted by (day, subject), then
/// day rows sorted by day; inapplicable cells stay empty.
pub fn write_metric_report(path: impl AsRef<Path>, report: &MetricReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())
        .map_err(|e| format_err(path.as_ref(), e.to_string()))?;
    let io_err = |e: csv::Error| format_err(path.as_ref(), e.to_string());
    w.write_record(METRIC_CSV_COLUMNS).map_err(io_err)?;
    let mut images = report.images.clone();
    images.sort_by(|a, b| (a.day, a.subject_id.as_str()).cmp(&(b.day, b.subject_id.as_str())));
    for r in &images {
        w.write_record([
            "image",
            &r.day.to_string(),
            &r.subject_id,
            &fmt(r.dsc),
            &fmt(r.pct_nonpos_jacobian),
            "",
            "",
            "",
            "",
        ])
        .map_err(io_err)?;
    }
    let mut days = report.days.clone();
    days.sort_by_key(|d| d.day);
    for d in &days {
        w.write_record([
            "day",
            &d.day.to_string(),
            "",
            "",
            "",
            &fmt(d.hv_cm3),
            &d.hv_error_pct.map(fmt).unwrap_or_default(),
            &fmt(d.sharpness),
            &fmt(d.ssim_vs_initial),
        ])
        .map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-structure significant-voxel percentages.
pub fn write_structures_csv(path: impl AsRef<Path>, rows: &[StructurePct]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())
        .map_err(|e| format_err(path.as_ref(), e.to_string()))?;
    let io_err = |e: csv::Error| format_err(path.as_ref(), e.to_string());
    w.write_record(["label", "start_day", "end_day", "percent"]).map_err(io_err)?;
    for r in rows {
        w.write_record([
            &r.label.to_string(),
            &r.start_day.to_string(),
            &r.end_day.to_string(),
            &fmt(r.percent),
        ])
        .map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_hex(path: impl AsRef<Path>) -> Result<String> {
    let raw = fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&raw);
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn random_volume(dims: Dims, seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume {
            dims,
            spacing: 0.25,
            day: None,
            data: (0..dims.len()).map(|_| rng.gen_range(0.0..1.0f32)).collect(),
        }
    }

    #[test]
    fn volume_round_trip_is_bit_identical() {
        let dir = tmpdir();
        let v = random_volume(Dims::cube(16), 1);
        let path = dir.path().join("v.nii");
        write_volume(&path, &v).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back.dims, v.dims);
        assert_eq!(back.data, v.data);
        assert!((back.spacing - 0.25).abs() < 1e-6);
    }

    #[test]
    fn field_round_trip_preserves_f32_payload() {
        let dir = tmpdir();
        let dims = Dims::new(5, 6, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = VectorField {
            dims,
            data: (0..3 * dims.len()).map(|_| rng.gen_range(-2.0..2.0f32) as f64).collect(),
        };
        let path = dir.path().join("f.nii");
        write_field(&path, &f).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back.dims, dims);
        for (a, b) in back.data.iter().zip(&f.data) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn mask_round_trip() {
        let dir = tmpdir();
        let dims = Dims::cube(8);
        let m = Mask { dims, data: (0..dims.len()).map(|i| i % 3 == 0).collect() };
        let path = dir.path().join("m.nii");
        write_mask(&path, &m).unwrap();
        assert_eq!(read_mask(&path).unwrap().data, m.data);
    }

    #[test]
    fn rejects_bad_magic_datatype_and_truncation() {
        let dir = tmpdir();
        let v = random_volume(Dims::cube(4), 3);
        let path = dir.path().join("v.nii");
        write_volume(&path, &v).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[344] = b'x';
        fs::write(dir.path().join("magic.nii"), &bad).unwrap();
        let err = read_volume(dir.path().join("magic.nii")).unwrap_err();
        assert!(err.to_string().contains("magic"));

        let mut bad = good.clone();
        put_i16(&mut bad, 70, 4); // 16-bit integer payload: unsupported
        fs::write(dir.path().join("dtype.nii"), &bad).unwrap();
        let err = read_volume(dir.path().join("dtype.nii")).unwrap_err();
        assert!(err.to_string().contains("unsupported datatype 4"));

        let bad = &good[..good.len() - 10];
        fs::write(dir.path().join("trunc.nii"), bad).unwrap();
        let err = read_volume(dir.path().join("trunc.nii")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 256 bytes, found 246"), "{msg}");
    }

    #[test]
    fn manifest_round_trip_and_duplicate_detection() {
        let dir = tmpdir();
        let entries = vec![
            ManifestEntry {
                subject_id: "A01".into(),
                day: 60,
                group: Some("A".into()),
                volume_path: "a01.nii".into(),
                mask_path: "a01_mask.nii".into(),
                label_path: None,
            },
            ManifestEntry {
                subject_id: "B01".into(),
                day: 61,
                group: Some("B".into()),
                volume_path: "b01.nii".into(),
                mask_path: "b01_mask.nii".into(),
                label_path: Some("b01_labels.nii".into()),
            },
        ];
        let path = dir.path().join("manifest.json");
        write_manifest(&path, &entries).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].label_path.as_deref(), Some("b01_labels.nii"));

        let mut dup = entries.clone();
        dup[1].subject_id = "A01".into();
        dup[1].day = 60;
        assert!(write_manifest(dir.path().join("dup.json"), &dup).is_err());
    }

    #[test]
    fn cohort_loads_relative_to_manifest() {
        let dir = tmpdir();
        let dims = Dims::cube(6);
        let v = Volume::from_fn(dims, 1.0, |x, _, _| if x < 3 { 0.8 } else { 0.0 });
        let m = Mask { dims, data: v.data.iter().map(|&x| x >= 0.1).collect() };
        fs::create_dir(dir.path().join("sub")).unwrap();
        write_volume(dir.path().join("sub/v.nii"), &v).unwrap();
        write_mask(dir.path().join("sub/m.nii"), &m).unwrap();
        let entries = vec![ManifestEntry {
            subject_id: "A01".into(),
            day: 62,
            group: None,
            volume_path: "sub/v.nii".into(),
            mask_path: "sub/m.nii".into(),
            label_path: None,
        }];
        let path = dir.path().join("manifest.json");
        write_manifest(&path, &entries).unwrap();
        let cohort = load_cohort(&path).unwrap();
        assert_eq!(cohort.len(), 1);
        assert_eq!(cohort[0].day, 62);
        assert_eq!(cohort[0].volume.day, Some(62));
        assert_eq!(cohort[0].volume.data, v.data);
        assert_eq!(cohort[0].head_mask.data, m.data);
    }

    #[test]
    fn model_checkpoint_round_trip() {
        use crate::atlas::{fit, FitConfig};
        let dir = tmpdir();
        let dims = Dims::cube(10);
        let v = Volume::from_fn(dims, 1.0, |x, y, z| {
            let d = ((x as f64 - 4.5).powi(2) + (y as f64 - 4.5).powi(2)
                + (z as f64 - 4.5).powi(2))
            .sqrt();
            ((3.0 - d) * 0.3).clamp(0.0, 0.8) as f32
        });
        let mask = Mask { dims, data: v.data.iter().map(|&x| x >= 0.1).collect() };
        let cohort = vec![
            CohortEntry {
                subject_id: "A01".into(),
                day: 60,
                group: Some("A".into()),
                volume: v.clone().with_day(60),
                head_mask: mask.clone(),
            },
            CohortEntry {
                subject_id: "A02".into(),
                day: 61,
                group: Some("B".into()),
                volume: v.with_day(61),
                head_mask: mask,
            },
        ];
        let cfg = FitConfig { iterations: 2, ..Default::default() };
        let model = fit(&cohort, &cfg).unwrap();
        let mdir = dir.path().join("model");
        save_model(&mdir, &model).unwrap();
        let back = load_model(&mdir).unwrap();
        assert_eq!(back.day_range, model.day_range);
        assert_eq!(back.loss_trace, model.loss_trace);
        assert_eq!(back.spacing, model.spacing);
        assert_eq!(back.fields.len(), model.fields.len());
        for (a, b) in back.initial.iter().zip(&model.initial) {
            assert_eq!(a.data, b.data);
        }
        for (a, b) in back.deviation.iter().zip(&model.deviation) {
            assert_eq!(a.data, b.data);
        }
        for (a, b) in back.fields.iter().zip(&model.fields) {
            assert_eq!(a.subject_id, b.subject_id);
            assert_eq!(a.day, b.day);
            assert_eq!(a.group, b.group);
            for (x, y) in a.nu.data.iter().zip(&b.nu.data) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert_eq!(back.config.delta, model.config.delta);
        assert_eq!(back.config.iterations, model.config.iterations);
    }

    #[test]
    fn metric_csv_schema_and_order() {
        use crate::metrics::{DayRow, ImageRow};
        let dir = tmpdir();
        let report = MetricReport {
            images: vec![
                ImageRow { subject_id: "B01".into(), day: 61, dsc: 0.9, pct_nonpos_jacobian: 0.5 },
                ImageRow { subject_id: "A01".into(), day: 60, dsc: 0.8, pct_nonpos_jacobian: 1.5 },
            ],
            days: vec![DayRow {
                day: 60,
                hv_cm3: 1.25,
                hv_error_pct: None,
                sharpness: 0.2,
                ssim_vs_initial: 0.99,
            }],
        };
        let path = dir.path().join("report.csv");
        write_metric_report(&path, &report).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRIC_CSV_COLUMNS.join(","));
        let first = lines.next().unwrap();
        assert!(first.starts_with("image,60,A01,"), "{first}");
        let second = lines.next().unwrap();
        assert!(second.starts_with("image,61,B01,"), "{second}");
        let third = lines.next().unwrap();
        assert!(third.starts_with("day,60,,,,1.250000,,0.200000,0.990000"), "{third}");
    }

    #[test]
    fn sha256_known_vector() {
        let dir = tmpdir();
        let path = dir.path().join("abc.txt");
        fs::write(&path, b"abc").unwrap();
        assert_eq!(
            sha256_hex(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
