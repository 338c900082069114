use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sambx_core::{make_phantom, read_mask, write_mask, write_volume, GridSpec, Mask3D, PhantomSpec, PromptFile};
use serde_json::Value;

fn sambx() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sambx"))
}

fn run(args: &[&str]) -> Output {
    sambx().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_spec() -> PhantomSpec {
    PhantomSpec {
        dims: [48, 52, 44],
        semi_axes: [15.0, 18.0, 13.0],
        ..Default::default()
    }
}

/// Writes a phantom and its ground truth; returns their paths.
fn phantom_files(dir: &Path, name: &str, spec: &PhantomSpec) -> (PathBuf, PathBuf) {
    let (vol, gt) = make_phantom(spec).unwrap();
    let v = dir.join(format!("{name}.nii.gz"));
    let g = dir.join(format!("{name}_gt.nii.gz"));
    write_volume(&v, &vol).unwrap();
    write_mask(&g, &gt).unwrap();
    (v, g)
}

fn json_file(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn extract_default_phantom() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["extract", "--phantom", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mask = read_mask(out.join("mask.nii.gz")).unwrap();
    assert_eq!(mask.dims(), [96, 96, 96]);
    let run = json_file(&out.join("run.json"));
    assert_eq!(run["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(run["seeds"]["phantom"], 0);
    assert!(run["backend"].as_str().unwrap().starts_with("reference"));
    assert!(run["metrics"]["dice"].as_f64().unwrap() >= 0.95);
    let prompts: PromptFile = serde_json::from_value(json_file(&out.join("prompts.json"))).unwrap();
    assert_eq!(prompts.prompts.len() as u64, run["segmented_slices"].as_u64().unwrap());
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["extract", "--input", "/no/such/scan.nii.gz", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/scan.nii.gz"), "{}", stderr(&o));
    assert!(!out.join("mask.nii.gz").exists());
}

#[test]
fn parallel_and_repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PhantomSpec {
        noise_sigma: 4.0,
        seed: 17,
        ..small_spec()
    };
    let (vol, _) = phantom_files(dir.path(), "p", &spec);
    let mut masks = Vec::new();
    for (i, par) in ["1", "4", "1"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o = run(&["extract", "--input", s(&vol), "--parallelism", par, "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        masks.push(std::fs::read(out.join("mask.nii.gz")).unwrap());
    }
    assert_eq!(masks[0], masks[1]);
    assert_eq!(masks[0], masks[2]);
    let a = json_file(&dir.path().join("run0/run.json"));
    let c = json_file(&dir.path().join("run2/run.json"));
    assert_eq!(a["config_hash"], c["config_hash"]);
    assert_eq!(a["input_sha256"], c["input_sha256"]);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (vol, _) = phantom_files(dir.path(), "p", &small_spec());
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"input": "{}", "axis": "coronal", "parallelism": 2, "prompt": {{"margin": 6}}}}"#,
            s(&vol)
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["extract", "--config", s(&cfg), "--axis", "sagittal", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = json_file(&out.join("run.json"));
    assert_eq!(run["config"]["axis"], "sagittal");
    assert_eq!(run["config"]["parallelism"], 2);
    assert_eq!(run["config"]["prompt"]["margin"], 6);
    assert_eq!(run["config"]["prompt"]["k_inc"], 5);
}

#[test]
fn manual_prompts_confine_the_mask() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec().with_surface_lesion();
    let (vol, _) = phantom_files(dir.path(), "lesion", &spec);
    let lesion = spec.lesion.unwrap();
    let [cx, cy, cz] = lesion.center.map(|v| v.round() as usize);
    let r = lesion.semi_axes[0].ceil() as usize;
    let seeds = dir.path().join("seeds.json");
    let mut prompts = serde_json::Map::new();
    for k in [cz - 1, cz, cz + 1] {
        prompts.insert(
            k.to_string(),
            serde_json::json!({
                "box": [cx - r, cy - r, cx + r, cy + r],
                "inclusions": [[cx, cy]],
                "exclusions": []
            }),
        );
    }
    std::fs::write(
        &seeds,
        serde_json::json!({"axis": "axial", "prompts": prompts}).to_string(),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "extract",
        "--input",
        s(&vol),
        "--manual-prompts",
        s(&seeds),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mask = read_mask(out.join("mask.nii.gz")).unwrap();
    assert!(mask.count() > 0);
    let [nx, ny, nz] = mask.dims();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if mask.get(i, j, k) {
                    assert!(
                        (cz - 1..=cz + 1).contains(&k),
                        "voxel {i},{j},{k} on an unprompted slice"
                    );
                    assert!(
                        i + r >= cx && i <= cx + r && j + r >= cy && j <= cy + r,
                        "voxel {i},{j},{k} outside box"
                    );
                }
            }
        }
    }
    assert_eq!(json_file(&out.join("run.json"))["prompt_source"], "manual");
}

fn micro_masks(dir: &Path) -> (PathBuf, PathBuf) {
    // tp = 2, fp = 1, fn = 2, tn = 3 on a 2x2x2 grid
    let grid = GridSpec::isotropic([2, 2, 2], 1.0);
    let pred = Mask3D::from_bits(grid.clone(), vec![1, 1, 1, 0, 0, 0, 0, 0]).unwrap();
    let gt = Mask3D::from_bits(grid, vec![1, 1, 0, 1, 1, 0, 0, 0]).unwrap();
    let (p, g) = (dir.join("pred.nii"), dir.join("gt.nii"));
    write_mask(&p, &pred).unwrap();
    write_mask(&g, &gt).unwrap();
    (p, g)
}

#[test]
fn evaluate_identity_and_micro_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (p, g) = micro_masks(dir.path());
    let o = run(&["evaluate", "--pred", s(&g), "--gt", s(&g)]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o).trim(),
        "dice 1.000  iou 1.000  accuracy 1.000  recall 1.000  precision 1.000"
    );
    let o = run(&["evaluate", "--pred", s(&p), "--gt", s(&g), "--json"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(format!("{:.3}", v["dice"].as_f64().unwrap()), "0.571");
    assert_eq!(v["counts"]["fn"], 2);
    assert_eq!(v["counts"]["tp"], 2);
}

#[test]
fn evaluate_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (p, _) = micro_masks(dir.path());
    let big = dir.path().join("big.nii");
    let g = Mask3D::from_fn(GridSpec::isotropic([4, 4, 4], 0.5), |i, _, _| i < 2);
    write_mask(&big, &g).unwrap();
    let o = run(&["evaluate", "--pred", s(&p), "--gt", s(&big)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--resample-gt"));
    let o = run(&["evaluate", "--pred", s(&p), "--gt", s(&big), "--resample-gt"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn manifest(dir: &Path) -> PathBuf {
    let mut entries = Vec::new();
    for (cat, seeds) in [("clean", [1u64, 2]), ("noisy", [3, 4])] {
        for seed in seeds {
            let spec = PhantomSpec {
                noise_sigma: if cat == "noisy" { 5.0 } else { 0.0 },
                seed,
                ..small_spec()
            };
            let name = format!("{cat}{seed}");
            phantom_files(dir, &name, &spec);
            entries.push(serde_json::json!({
                "category": cat,
                "scan": format!("{name}.nii.gz"),
                "gt": format!("{name}_gt.nii.gz"),
            }));
        }
    }
    let m = dir.join("manifest.json");
    std::fs::write(&m, Value::Array(entries).to_string()).unwrap();
    m
}

#[test]
fn compare_two_categories() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let out = dir.path().join("report");
    let o = run(&["compare", "--manifest", s(&m), "--out", s(&out), "--parallelism", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "category,tool,n,dice,iou,accuracy,recall,precision");
    assert_eq!(lines.len(), 5, "{csv}");
    assert!(lines[1].starts_with("clean,baseline,2,"));
    assert!(lines[2].starts_with("clean,reference-pipeline,2,"));
    assert!(lines[3].starts_with("noisy,baseline,2,"));
    assert!(lines[4].starts_with("noisy,reference-pipeline,2,"));
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(
        md.starts_with("| Category | Tool | n | Dice | IoU | Acc | Recall | Prec |"),
        "{md}"
    );
    assert!(md.contains("builtin threshold baseline, f=0.5"));
}

#[test]
fn compare_missing_bet_flags_only_baseline_rows() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let out = dir.path().join("report");
    let o = run(&[
        "compare",
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "--bet",
        "/no/such/bet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[1], "clean,baseline,0,,,,,");
    assert_eq!(lines[3], "noisy,baseline,0,,,,,");
    assert!(lines[2].starts_with("clean,reference-pipeline,2,0."), "{csv}");
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("not found"), "{md}");
}

#[cfg(unix)]
fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let p = dir.join(name);
    std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    p
}

#[cfg(unix)]
#[test]
fn compare_with_stub_bet() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let failing = script(dir.path(), "bet_fail", "echo 'bet: licence expired' >&2; exit 1");
    let out = dir.path().join("r1");
    let o = run(&["compare", "--manifest", s(&m), "--out", s(&out), "--bet", s(&failing)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("licence expired"), "{md}");

    // a stub that answers with the scan's own ground truth
    let copying = script(
        dir.path(),
        "bet_copy",
        r#"cp "${1%.nii.gz}_gt.nii.gz" "$2_mask.nii.gz""#,
    );
    let out = dir.path().join("r2");
    let o = run(&[
        "compare",
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "--bet",
        s(&copying),
        "--f",
        "0.3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.contains("clean,baseline,2,1.000,1.000,1.000,1.000,1.000"), "{csv}");
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("f=0.3"), "{md}");
}

#[test]
fn compare_fails_when_a_category_has_no_success() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    std::fs::write(
        &m,
        r#"[{"category": "ghost", "scan": "absent.nii.gz", "gt": "absent_gt.nii.gz"}]"#,
    )
    .unwrap();
    let out = dir.path().join("r");
    let o = run(&["compare", "--manifest", s(&m), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn external_echo_backend() {
    let dir = tempfile::tempdir().unwrap();
    let (vol, _) = phantom_files(dir.path(), "p", &small_spec());
    let out = dir.path().join("out");
    let cmd = format!("{} echo-backend --threshold 100", env!("CARGO_BIN_EXE_sambx"));
    let o = run(&[
        "extract",
        "--input",
        s(&vol),
        "--backend-command",
        &cmd,
        "--parallelism",
        "3",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = json_file(&out.join("run.json"));
    assert!(run["backend"].as_str().unwrap().starts_with("external-process("));
    assert!(read_mask(out.join("mask.nii.gz")).unwrap().count() > 0);
}

#[test]
fn external_backend_failures_exit_1_and_clean_up() {
    let dir = tempfile::tempdir().unwrap();
    let (vol, _) = phantom_files(dir.path(), "p", &small_spec());
    let cases = [
        (
            r#"sh -c while:read:l;do:echo:'{"id":424242,"candidates":[]}';done"#,
            "424242",
        ),
        ("sh -c echo:no:gpu>&2;exit:3", "no gpu"),
    ];
    for (i, (cmd, needle)) in cases.iter().enumerate() {
        // arguments are whitespace-split, so the scripts use ':' for spaces
        let script = cmd.splitn(3, ' ').nth(2).unwrap().replace(':', " ");
        let cfg = dir.path().join(format!("cfg{i}.json"));
        std::fs::write(
            &cfg,
            serde_json::json!({
                "input": vol,
                "backend": {"kind": "external-process", "command": ["sh", "-c", script], "timeout_secs": 10}
            })
            .to_string(),
        )
        .unwrap();
        let out = dir.path().join(format!("out{i}"));
        let o = run(&["extract", "--config", s(&cfg), "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
        assert!(stderr(&o).contains(needle), "{}", stderr(&o));
        for f in ["mask.nii.gz", "prompts.json", "run.json"] {
            assert!(!out.join(f).exists(), "{f} left behind");
        }
    }
}

#[test]
fn phantom_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ph");
    let o = run(&[
        "phantom",
        "--size",
        "64",
        "--lesion",
        "--noise",
        "2",
        "--seed",
        "9",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let gt = read_mask(out.join("phantom_gt.nii.gz")).unwrap();
    assert_eq!(gt.dims(), [64, 64, 64]);
    let spec: PhantomSpec = serde_json::from_value(json_file(&out.join("phantom.json"))).unwrap();
    assert_eq!(make_phantom(&spec).unwrap().1, gt);
}

#[test]
fn help_lists_subcommands() {
    let o = run(&["--help"]);
    let text = stdout(&o);
    for sub in ["extract", "evaluate", "compare", "phantom"] {
        assert!(text.contains(sub));
    }
    assert!(!text.contains("echo-backend"));
}
