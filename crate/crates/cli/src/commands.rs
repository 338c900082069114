use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use sambx_core::baseline::run_baseline;
use sambx_core::evaluation::{fmt3, CategoryAggregate};
use sambx_core::{
    aggregate, confusion, emit_report, extract as run_pipeline, make_phantom, metrics, read_mask, read_volume,
    resample, resample_mask, write_mask, write_volume, GridSpec, Interpolation, Mask3D, MetricReport, PhantomSpec,
    PromptFile, ReportFormat, Volume,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{sha256_file, GroundTruth, RunConfig, Target};

/// Files written so far; removed again unless the run completes.
struct Outputs {
    written: Vec<PathBuf>,
    keep: bool,
}

impl Outputs {
    fn new() -> Self {
        Self {
            written: Vec::new(),
            keep: false,
        }
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        self.written.push(path.clone());
        std::fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))
    }

    fn mask(&mut self, path: PathBuf, mask: &Mask3D) -> Result<()> {
        self.written.push(path.clone());
        write_mask(&path, mask).with_context(|| format!("cannot write {}", path.display()))
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.keep {
            for p in &self.written {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

fn template_grid(cfg: &RunConfig) -> Result<Option<(Volume, GridSpec)>> {
    match &cfg.target {
        Target::Native => Ok(None),
        Target::Template(p) => {
            let t = read_volume(p).with_context(|| format!("cannot load template {}", p.display()))?;
            let g = t.grid().clone();
            Ok(Some((t, g)))
        }
    }
}

fn onto_target(vol: Volume, template: &Option<(Volume, GridSpec)>) -> Result<Volume> {
    match template {
        None => Ok(vol),
        Some((_, g)) if g == vol.grid() => Ok(vol),
        Some((_, g)) => Ok(resample(&vol, g, Interpolation::Trilinear)?),
    }
}

/// Loads a ground truth and brings it onto `grid` with nearest sampling.
fn load_ground_truth(gt: &GroundTruth, template: &Option<(Volume, GridSpec)>, grid: &GridSpec) -> Result<Mask3D> {
    let mask = match gt {
        GroundTruth::TemplateMask => {
            let (t, _) = template
                .as_ref()
                .ok_or_else(|| anyhow!("ground truth \"template-mask\" needs a template target"))?;
            Mask3D::threshold(t, 0.0)
        }
        GroundTruth::Path(p) => read_mask(p).with_context(|| format!("cannot load ground truth {}", p.display()))?,
    };
    if mask.grid() == grid {
        Ok(mask)
    } else {
        Ok(resample_mask(&mask, grid)?)
    }
}

fn load_input(cfg: &RunConfig) -> Result<(Volume, Option<Mask3D>, Option<String>)> {
    if let Some(spec) = &cfg.phantom {
        let (v, gt) = make_phantom(spec)?;
        return Ok((v, Some(gt), None));
    }
    let path = cfg.input.as_ref().ok_or_else(|| anyhow!("no input volume"))?;
    let vol = read_volume(path).with_context(|| format!("cannot load input {}", path.display()))?;
    Ok((vol, None, Some(sha256_file(path)?)))
}

pub fn extract(cfg: &RunConfig) -> Result<()> {
    cfg.validate(true)?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display()))?;
    let mut outputs = Outputs::new();

    let template = template_grid(cfg)?;
    let (vol, phantom_gt, input_hash) = load_input(cfg)?;
    let native_dims = vol.dims();
    let vol = onto_target(vol, &template)?;
    let manual: Option<PromptFile> = match &cfg.manual_prompts {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("invalid prompt file {}", p.display()))?)
        }
        None => None,
    };
    let gt = match (&cfg.ground_truth, phantom_gt) {
        (Some(g), _) => Some(load_ground_truth(g, &template, vol.grid())?),
        (None, Some(m)) if m.grid() == vol.grid() => Some(m),
        (None, Some(m)) => Some(resample_mask(&m, vol.grid())?),
        (None, None) => None,
    };

    let result = run_pipeline(&vol, &cfg.pipeline, manual.as_ref())?;
    let scores: Option<MetricReport> = match &gt {
        Some(g) => Some(metrics(&confusion(&result.mask, g)?)),
        None => None,
    };

    outputs.mask(cfg.out.join("mask.nii.gz"), &result.mask)?;
    outputs.write(
        cfg.out.join("prompts.json"),
        serde_json::to_string_pretty(&result.prompts)?.as_bytes(),
    )?;
    let run = json!({
        "command": "extract",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg.canonical(),
        "config_hash": cfg.hash(),
        "seeds": { "phantom": cfg.phantom.as_ref().map(|p| p.seed) },
        "input_sha256": input_hash,
        "backend": result.backend_identity,
        "prompt_source": if manual.is_some() { "manual" } else { "generated" },
        "native_dims": native_dims,
        "grid_dims": vol.dims(),
        "window": result.window,
        "segmented_slices": result.segmented,
        "mask_voxels": result.mask.count(),
        "timings": result.timings,
        "metrics": scores,
    });
    outputs.write(cfg.out.join("run.json"), serde_json::to_string_pretty(&run)?.as_bytes())?;
    outputs.keep = true;

    eprintln!(
        "wrote {} ({} voxels, {} slices segmented in {:.2}s)",
        cfg.out.join("mask.nii.gz").display(),
        result.mask.count(),
        result.segmented,
        result.timings.total_s
    );
    if let Some(m) = scores {
        eprintln!("{}", metric_line(&m));
    }
    Ok(())
}

fn metric_line(m: &MetricReport) -> String {
    format!(
        "dice {}  iou {}  accuracy {}  recall {}  precision {}",
        fmt3(m.dice),
        fmt3(m.iou),
        fmt3(m.accuracy),
        fmt3(m.recall),
        fmt3(m.precision)
    )
}

pub fn evaluate(
    pred: &Path,
    gt: &Path,
    resample_gt: bool,
    as_json: bool,
    category: Option<String>,
    tool: Option<String>,
) -> Result<ExitCode> {
    let p = read_mask(pred).with_context(|| format!("cannot load prediction {}", pred.display()))?;
    let mut g = read_mask(gt).with_context(|| format!("cannot load ground truth {}", gt.display()))?;
    if resample_gt && g.grid() != p.grid() {
        g = resample_mask(&g, p.grid())?;
    }
    if g.dims() != p.dims() {
        bail!(
            "prediction is {:?} but ground truth is {:?}; pass --resample-gt to resample it",
            p.dims(),
            g.dims()
        );
    }
    let m = metrics(&confusion(&p, &g)?);
    if as_json {
        let out = json!({
            "category": category,
            "tool": tool,
            "pred": pred,
            "gt": gt,
            "dice": m.dice,
            "iou": m.iou,
            "accuracy": m.accuracy,
            "recall": m.recall,
            "precision": m.precision,
            "counts": m.counts,
            "undefined": m.undefined,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        let label = [category, tool].into_iter().flatten().collect::<Vec<_>>().join(" / ");
        if label.is_empty() {
            println!("{}", metric_line(&m));
        } else {
            println!("{label}: {}", metric_line(&m));
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ManifestEntry {
    pub category: String,
    pub scan: PathBuf,
    pub gt: GroundTruth,
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
    let mut entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for e in &mut entries {
        if e.scan.is_relative() {
            e.scan = base.join(&e.scan);
        }
        if let GroundTruth::Path(p) = &mut e.gt {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    if entries.is_empty() {
        bail!("manifest {} lists no scans", path.display());
    }
    Ok(entries)
}

#[derive(Default)]
struct Arm {
    reports: Vec<MetricReport>,
    failures: Vec<String>,
}

impl Arm {
    fn finish(self, category: &str, tool: &str, note: String) -> CategoryAggregate {
        let mut row = match aggregate(&self.reports, category, tool) {
            Ok(mut row) => {
                row.failures = self.failures;
                row
            }
            Err(_) => CategoryAggregate::failed(category, tool, self.failures),
        };
        row.notes.push(note);
        row
    }
}

pub fn compare(cfg: &RunConfig, manifest: &Path) -> Result<ExitCode> {
    cfg.validate(false)?;
    let entries = load_manifest(manifest)?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display()))?;
    let template = template_grid(cfg)?;
    let baseline_tool = "baseline";
    let pipeline_tool = cfg.pipeline.backend.tool_label();

    let mut order: Vec<String> = Vec::new();
    let mut arms: BTreeMap<(String, &str), Arm> = BTreeMap::new();
    let mut scans = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        if !order.contains(&e.category) {
            order.push(e.category.clone());
        }
        let name = e.scan.display().to_string();
        let loaded = (|| -> Result<(Volume, Mask3D)> {
            let vol = read_volume(&e.scan).with_context(|| format!("cannot load {name}"))?;
            let vol = onto_target(vol, &template)?;
            let gt = load_ground_truth(&e.gt, &template, vol.grid())?;
            Ok((vol, gt))
        })();
        let mut record = json!({ "category": e.category, "scan": name });
        let (vol, gt) = match loaded {
            Ok(x) => x,
            Err(err) => {
                let msg = format!("{name}: {err:#}");
                eprintln!("scan failed: {msg}");
                for tool in [baseline_tool, pipeline_tool] {
                    arms.entry((e.category.clone(), tool))
                        .or_default()
                        .failures
                        .push(msg.clone());
                }
                record["error"] = json!(msg);
                scans.push(record);
                continue;
            }
        };

        let native = matches!(cfg.target, Target::Native).then_some(e.scan.as_path());
        let workdir = cfg.out.join("work").join(format!("scan{i:03}"));
        let base = run_baseline(&vol, native, &cfg.baseline, &workdir)
            .map_err(anyhow::Error::from)
            .and_then(|m| Ok(metrics(&confusion(&m, &gt)?)));
        let pipe = run_pipeline(&vol, &cfg.pipeline, None)
            .map_err(anyhow::Error::from)
            .and_then(|x| Ok(metrics(&confusion(&x.mask, &gt)?)));
        for (tool, outcome) in [(baseline_tool, base), (pipeline_tool, pipe)] {
            let arm = arms.entry((e.category.clone(), tool)).or_default();
            match outcome {
                Ok(m) => {
                    record[tool] = json!(m);
                    arm.reports.push(m);
                }
                Err(err) => {
                    let msg = format!("{name}: {err:#}");
                    eprintln!("{tool} failed: {msg}");
                    record[tool] = json!({ "error": msg });
                    arm.failures.push(msg);
                }
            }
        }
        scans.push(record);
    }

    let mut rows = Vec::new();
    let mut empty_categories = Vec::new();
    for cat in &order {
        let b = arms.remove(&(cat.clone(), baseline_tool)).unwrap_or_default();
        let p = arms.remove(&(cat.clone(), pipeline_tool)).unwrap_or_default();
        if b.reports.is_empty() && p.reports.is_empty() {
            empty_categories.push(cat.clone());
        }
        rows.push(b.finish(cat, baseline_tool, cfg.baseline.describe()));
        rows.push(p.finish(cat, pipeline_tool, cfg.pipeline.backend.identity()));
    }

    let mut outputs = Outputs::new();
    outputs.write(
        cfg.out.join("report.csv"),
        emit_report(&rows, ReportFormat::Csv).as_bytes(),
    )?;
    outputs.write(
        cfg.out.join("report.md"),
        emit_report(&rows, ReportFormat::Markdown).as_bytes(),
    )?;
    let run = json!({
        "command": "compare",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg.canonical(),
        "config_hash": cfg.hash(),
        "manifest": manifest,
        "manifest_sha256": sha256_file(manifest)?,
        "backend": cfg.pipeline.backend.identity(),
        "baseline": cfg.baseline.describe(),
        "scans": scans,
        "rows": rows,
    });
    outputs.write(cfg.out.join("run.json"), serde_json::to_string_pretty(&run)?.as_bytes())?;
    outputs.keep = true;
    print!("{}", emit_report(&rows, ReportFormat::Markdown));

    if empty_categories.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: no scan succeeded in: {}", empty_categories.join(", "));
        Ok(ExitCode::FAILURE)
    }
}

pub fn phantom(spec: &PhantomSpec, out: &Path) -> Result<()> {
    let (vol, gt) = make_phantom(spec)?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut outputs = Outputs::new();
    outputs.written.push(out.join("phantom.nii.gz"));
    write_volume(out.join("phantom.nii.gz"), &vol)?;
    outputs.mask(out.join("phantom_gt.nii.gz"), &gt)?;
    outputs.write(out.join("phantom.json"), serde_json::to_string_pretty(spec)?.as_bytes())?;
    outputs.keep = true;
    eprintln!(
        "wrote {} ({} brain voxels)",
        out.join("phantom.nii.gz").display(),
        gt.count()
    );
    Ok(())
}
