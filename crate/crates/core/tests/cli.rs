use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn tbir(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbir")).current_dir(dir).args(args).output().expect("spawn tbir")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tbir(dir, args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn header(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    let end = bytes.iter().position(|&b| b == b'\n').unwrap();
    String::from_utf8(bytes[..end].to_vec()).unwrap()
}

fn summary(path: &Path) -> Vec<(String, String)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('=').expect("key=value");
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn value(s: &[(String, String)], key: &str) -> f64 {
    s.iter().find(|(k, _)| k == key).unwrap().1.parse().unwrap()
}

#[test]
fn phantom_forward_geometry() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["phantom", "--kind", "disk_pair", "--m", "128"]);
    assert_eq!(header(&d.join("template.tbir")), "TBIR-F 2 128");
    ok(d, &["forward", "target.tbir", "--angles", "5@0:90", "-o", "s.tbir"]);
    let h = header(&d.join("s.tbir"));
    let parts: Vec<&str> = h.split_whitespace().collect();
    assert_eq!(&parts[..3], &["TBIR-S", "5", "192"]);
}

#[test]
fn ssim_of_a_file_with_itself() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["phantom", "--kind", "affine_warp", "--m", "32"]);
    assert_eq!(ok(d, &["ssim", "target.tbir", "target.tbir"]).trim(), "1.0");
    let s: f64 = ok(d, &["ssim", "template.tbir", "target.tbir"]).trim().parse().unwrap();
    assert!(s < 1.0);
}

#[test]
fn noise_fbp_and_pgm() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["phantom", "--kind", "blob_warp", "--m", "32"]);
    ok(d, &["forward", "target.tbir", "--angles", "12@0:165", "-o", "s.tbir"]);
    ok(d, &["noise", "s.tbir", "--level", "0.05", "--seed", "4", "-o", "n1.tbir"]);
    ok(d, &["noise", "s.tbir", "--level", "0.05", "--seed", "4", "-o", "n2.tbir"]);
    assert_eq!(std::fs::read(d.join("n1.tbir")).unwrap(), std::fs::read(d.join("n2.tbir")).unwrap());
    ok(d, &["fbp", "n1.tbir", "-o", "f.tbir"]);
    assert_eq!(header(&d.join("f.tbir")), "TBIR-F 2 32");
    ok(d, &["export-pgm", "f.tbir", "-o", "f.pgm"]);
    ok(d, &["export-pgm", "n1.tbir", "-o", "s.pgm"]);
    let pgm = std::fs::read(d.join("f.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n65535\n"));
    assert_eq!(pgm.len(), 15 + 2 * 32 * 32);
    assert!(std::fs::read(d.join("s.pgm")).unwrap().starts_with(b"P5\n12 48\n65535\n"));
}

#[test]
fn usage_and_format_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(tbir(d, &["no-such-command"]).status.code(), Some(2));
    assert_eq!(tbir(d, &["phantom", "--kind", "teapot"]).status.code(), Some(2));

    ok(d, &["phantom", "--m", "16"]);
    let mut bytes = std::fs::read(d.join("target.tbir")).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(d.join("short.tbir"), &bytes).unwrap();
    let out = tbir(d, &["ssim", "short.tbir", "target.tbir"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("short.tbir") && err.contains(&format!("byte {}", bytes.len())), "{err}");

    std::fs::write(d.join("bad.tbir"), b"TBIR-F 2 x\n").unwrap();
    let err = String::from_utf8_lossy(&tbir(d, &["fbp", "bad.tbir", "-o", "x"]).stderr).to_string();
    assert!(err.contains("bad.tbir") && err.contains("byte"), "{err}");
    let out = tbir(d, &["ssim", "missing.tbir", "target.tbir"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.tbir"));
}

#[test]
fn degenerate_data_exit_3() {
    // NCC against an all-zero sinogram is undefined.
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["phantom", "--m", "16"]);
    std::fs::write(d.join("zero.tbir"), {
        let mut b = b"TBIR-F 2 16\n".to_vec();
        b.extend(std::iter::repeat_n(0u8, 16 * 16 * 8));
        b
    })
    .unwrap();
    ok(d, &["forward", "zero.tbir", "--angles", "4@0:135", "-o", "s.tbir"]);
    let out = tbir(
        d,
        &["reconstruct", "--template", "template.tbir", "--data", "s.tbir", "--kmin", "3", "-o", "run"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reconstruct_is_deterministic_and_logs() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["phantom", "--kind", "blob_warp", "--m", "32"]);
    ok(d, &["forward", "target.tbir", "--angles", "6@0:150", "-o", "s.tbir"]);
    for run in ["a", "b"] {
        ok(
            d,
            &[
                "reconstruct", "--template", "template.tbir", "--data", "s.tbir", "--pde", "transport", "--distance", "ssd",
                "--reg", "curvature", "--gamma-s", "1e-2", "--kmin", "3", "--max-iters", "5", "-o", run,
            ],
        );
    }
    let a = summary(&d.join("a/summary.txt"));
    let b = summary(&d.join("b/summary.txt"));
    assert_eq!(a, b);
    for key in ["J", "D", "R", "grad_norm"] {
        assert!(value(&a, key).is_finite());
    }
    let log = std::fs::read_to_string(d.join("a/log.txt")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), "level iter J D R |grad| mu pcg");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split_whitespace().collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 8));
    assert_eq!(rows[0][0], "3");
    assert_eq!(rows.last().unwrap()[0], "5");
    assert_eq!(header(&d.join("a/result.tbir")), "TBIR-F 2 32");
    assert!(header(&d.join("a/velocity.tbir")).starts_with("TBIR-V 2 32 "));
}

#[test]
fn disk_pair_recipe_gains_over_template() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["phantom", "--kind", "disk_pair", "--m", "128"]);
    ok(d, &["forward", "target.tbir", "--angles", "5@0:90", "-o", "clean.tbir"]);
    ok(d, &["noise", "clean.tbir", "--level", "0.05", "--seed", "1", "-o", "s.tbir"]);
    ok(
        d,
        &[
            "reconstruct", "--template", "template.tbir", "--data", "s.tbir", "--pde", "continuity", "--distance", "ncc",
            "--reg", "third-order", "--gamma-s", "1e-5", "--kmin", "5", "-o", "run",
        ],
    );
    let base: f64 = ok(d, &["ssim", "template.tbir", "target.tbir"]).trim().parse().unwrap();
    let got: f64 = ok(d, &["ssim", "run/result.tbir", "target.tbir"]).trim().parse().unwrap();
    assert!(got >= base + 0.15, "result {got} vs template {base}");
    let s = summary(&d.join("run/summary.txt"));
    let rel = (value(&s, "mass_result") - value(&s, "mass_template")).abs() / value(&s, "mass_template");
    assert!(rel < 1e-12, "{rel}");
}
