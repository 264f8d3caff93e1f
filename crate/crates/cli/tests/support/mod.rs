#![allow(dead_code)]

#[path = "../../../core/tests/support/oracle.rs"]
pub mod oracle;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oracle::{max_matching, RawSpan};

pub fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn gforge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gforge"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GFORGE_API_KEY")
        .env_remove("RUST_LOG")
        .output()
        .expect("gforge binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Annotation spans per document read straight from PubTator lines, with
/// categories numbered in order of first appearance across `label_ids`.
pub fn raw_spans(path: &Path, label_ids: &mut BTreeMap<String, u8>) -> BTreeMap<String, Vec<RawSpan>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut out: BTreeMap<String, Vec<RawSpan>> = BTreeMap::new();
    for line in text.lines() {
        if let Some((id, _)) = line.split_once("|t|") {
            out.entry(id.to_string()).or_default();
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 5 {
            continue;
        }
        let next = label_ids.len() as u8;
        let cat = *label_ids.entry(f[4].to_string()).or_insert(next);
        out.entry(f[0].to_string())
            .or_default()
            .push((f[1].parse().unwrap(), f[2].parse().unwrap(), cat));
    }
    out
}

pub fn half_up(x: f64) -> String {
    format!("{:.2}", ((x * 100.0) + 0.5 + 1e-9).floor() / 100.0)
}

/// The twelve overall cells (P, R, F1 for each criterion, in table order) for
/// `pred` against `gold`, from micro-summed brute-force matchings.
pub fn oracle_overall_row(gold: &Path, pred: &Path) -> Vec<String> {
    let mut labels = BTreeMap::new();
    let g = raw_spans(gold, &mut labels);
    let p = raw_spans(pred, &mut labels);
    let mut cells = Vec::new();
    for (strict, cat) in [(true, true), (true, false), (false, true), (false, false)] {
        let (mut m, mut np, mut ng) = (0usize, 0usize, 0usize);
        for (id, gs) in &g {
            let ps = p.get(id).map(Vec::as_slice).unwrap_or(&[]);
            m += max_matching(ps, gs, strict, cat);
            np += ps.len();
            ng += gs.len();
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        cells.push(half_up(ratio(m, np)));
        cells.push(half_up(ratio(m, ng)));
        cells.push(half_up(ratio(2 * m, np + ng)));
    }
    cells
}
