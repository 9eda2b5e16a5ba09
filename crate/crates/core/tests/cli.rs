use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use segthresh::dataset::{read_mask, read_pmap, write_mask, write_pmap};
use segthresh::{BinaryMask, ProbabilityMap};

fn segthresh(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segthresh"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = segthresh(dir, args);
    assert!(
        out.status.success(),
        "segthresh {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const PUBLISHED: &str = "threshold,dice,iou,pixel_accuracy
0.11,0.7788,0.6957,0.9507
0.12,0.7793,0.6982,0.9533
0.13,0.7809,0.7002,0.9556
0.14,0.7812,0.7015,0.9576
0.15,0.7803,0.7024,0.9593
";

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn eval_replays_published_row() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("curve.csv"), PUBLISHED).unwrap();
    let stdout = ok(
        dir.path(),
        &["eval", "--from-csv", "curve.csv", "--threshold", "0.14", "--out", "out"],
    );
    assert!(stdout.contains("dice 0.781200"), "{stdout}");
    let s = json(&dir.path().join("out/summary.json"));
    assert_eq!(s["mean_dice"], 0.7812);
    assert_eq!(s["mean_iou"], 0.7015);
    assert_eq!(s["mean_pixel_accuracy"], 0.9576);
}

#[test]
fn optimize_picks_threshold_per_weighting() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("curve.csv"), PUBLISHED).unwrap();
    let dice_only = ok(
        dir.path(),
        &["optimize", "--from-csv", "curve.csv", "--weights", "1,0,0", "--out", "a"],
    );
    assert!(dice_only.starts_with("optimal_threshold 0.140000"), "{dice_only}");
    let equal = ok(
        dir.path(),
        &["optimize", "--from-csv", "curve.csv", "--weights", "1,1,1", "--out", "b"],
    );
    assert!(equal.starts_with("optimal_threshold 0.150000"), "{equal}");
}

#[test]
fn sweep_writes_curve_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("curve.csv"), PUBLISHED).unwrap();
    ok(dir.path(), &["sweep", "--from-csv", "curve.csv", "--weights", "1,0,0", "--out", "out"]);
    let curve = fs::read_to_string(dir.path().join("out/curve.csv")).unwrap();
    assert!(curve.starts_with("threshold,dice,iou,pixel_accuracy,objective\n"));
    assert!(curve.contains("0.140000,0.781200,0.701500,0.957600,0.781200"), "{curve}");
    let s = json(&dir.path().join("out/sweep.json"));
    assert_eq!(s["optimal_threshold"], 0.14);
    assert!(dir.path().join("out/run.json").exists());
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "synth", "--n", "20", "--width", "48", "--height", "48", "--seed", "3", "--plant", "0.4",
        "--out", "data",
    ];
    ok(a.path(), &args);
    ok(b.path(), &[&args[..], &["--workers", "4"]].concat());
    let (ta, tb) = (tree(&a.path().join("data")), tree(&b.path().join("data")));
    assert_eq!(ta.len(), 20 * 2 + 3);
    let differing: Vec<_> = ta
        .keys()
        .filter(|k| k.as_str() != "run.json" && ta.get(*k) != tb.get(*k))
        .collect();
    assert!(differing.is_empty(), "{differing:?}");

    // The generated dataset optimizes back to its plant.
    let out = ok(a.path(), &["optimize", "--root", "data", "--weights", "1,0,0", "--out", "opt"]);
    assert!(out.starts_with("optimal_threshold 0.4"), "{out}");
}

#[test]
fn split_reassigns_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--n", "30", "--width", "16", "--height", "16", "--out", "data"]);
    let stdout = ok(
        dir.path(),
        &["split", "--root", "data", "--seed", "9", "--out", "resplit"],
    );
    assert_eq!(stdout.trim(), "train 24 validation 3 test 3");
    let text = fs::read_to_string(dir.path().join("resplit/manifest.tsv")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 30);
}

#[test]
fn eval_on_split_and_empty_split() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--n", "30", "--width", "16", "--height", "16", "--out", "data"]);
    ok(
        dir.path(),
        &["eval", "--root", "data", "--split", "test", "--threshold", "0.5", "--out", "ev"],
    );
    let per_image = fs::read_to_string(dir.path().join("ev/per_image.csv")).unwrap();
    assert_eq!(per_image.lines().count(), 1 + 3);

    // Two images have no validation or test share.
    let tiny = dir.path().join("tiny");
    fs::create_dir(&tiny).unwrap();
    let manifest = fs::read_to_string(dir.path().join("data/manifest.tsv")).unwrap();
    let rows: Vec<String> = manifest
        .lines()
        .filter(|l| !l.starts_with('#'))
        .take(2)
        .map(|l| {
            let mut cols: Vec<&str> = l.split('\t').collect();
            cols[3] = "train";
            cols.join("\t")
        })
        .collect();
    for row in &rows {
        let cols: Vec<&str> = row.split('\t').collect();
        for rel in &cols[1..3] {
            let dest = tiny.join(rel);
            fs::create_dir_all(dest.parent().unwrap()).unwrap();
            fs::copy(dir.path().join("data").join(rel), dest).unwrap();
        }
    }
    fs::write(tiny.join("manifest.tsv"), rows.join("\n") + "\n").unwrap();
    let out = segthresh(
        dir.path(),
        &["eval", "--root", "tiny", "--split", "test", "--threshold", "0.5", "--out", "ev2"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn perfect_predictions_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut manifest = String::new();
    for i in 0..4 {
        let mask = BinaryMask::from_fn(8, 8, |x, y| (x + y + i) % 3 == 0).unwrap();
        let probs = (0..64)
            .map(|k| if mask.get(k % 8, k / 8) { 0.9 } else { 0.1 })
            .collect();
        let map = ProbabilityMap::new(8, 8, probs).unwrap();
        write_pmap(&map, &data.join(format!("p{i}.pmap"))).unwrap();
        write_mask(&mask, &data.join(format!("m{i}.png"))).unwrap();
        manifest.push_str(&format!("img{i}\tp{i}.pmap\tm{i}.png\ttest\n"));
    }
    fs::write(data.join("manifest.tsv"), manifest).unwrap();
    ok(dir.path(), &["eval", "--root", "data", "--threshold", "0.5", "--out", "ev"]);
    let s = json(&dir.path().join("ev/summary.json"));
    assert_eq!(s["mean_dice"], 1.0);
    assert_eq!(s["mean_iou"], 1.0);
    assert_eq!(s["mean_pixel_accuracy"], 1.0);
}

#[test]
fn preprocess_resizes_to_target() {
    let dir = tempfile::tempdir().unwrap();
    let (imgs, masks) = (dir.path().join("imgs"), dir.path().join("masks"));
    fs::create_dir_all(&imgs).unwrap();
    fs::create_dir_all(&masks).unwrap();
    let gray = image::GrayImage::from_fn(512, 512, |x, y| image::Luma([((x + y) % 256) as u8]));
    gray.save(imgs.join("a.png")).unwrap();
    let mask = image::GrayImage::from_fn(512, 512, |x, _| image::Luma([if x < 256 { 255 } else { 0 }]));
    mask.save(masks.join("a.png")).unwrap();

    let stdout = ok(
        dir.path(),
        &["preprocess", "--images", "imgs", "--masks", "masks", "--augment", "2", "--out", "pp"],
    );
    assert_eq!(stdout.trim(), "images 1 masks 1 augmented 2");
    let map = read_pmap(&dir.path().join("pp/images/a.pmap")).unwrap();
    assert_eq!((map.width(), map.height()), (256, 256));
    assert!(map.values().iter().all(|v| (0.0..=1.0).contains(v)));
    let m = read_mask(&dir.path().join("pp/masks/a.png")).unwrap();
    assert_eq!((m.width(), m.height()), (256, 256));
    assert_eq!(m.foreground_count(), 128 * 256);
    assert!(dir.path().join("pp/augmented/a_aug1.png").exists());
}

#[test]
fn postprocess_removes_speckle() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let mask = BinaryMask::from_fn(12, 12, |x, y| (x, y) == (1, 1) || (4..9).contains(&x) && (4..9).contains(&y)).unwrap();
    write_mask(&mask, &input.join("m.png")).unwrap();
    let stdout = ok(
        dir.path(),
        &["postprocess", "--input", "in", "--se", "square3", "--out", "clean"],
    );
    assert_eq!(stdout.trim(), "cleaned 1 masks");
    let cleaned = read_mask(&dir.path().join("clean/m.png")).unwrap();
    assert!(!cleaned.get(1, 1));
    assert_eq!(cleaned.foreground_count(), 25);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = segthresh(dir.path(), &["sweep", "--grid", "0.5:0.1:0.1", "--out", "x"]);
    assert!(!out.status.success());
    let out = segthresh(dir.path(), &["eval", "--root", "missing", "--threshold", "0.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
