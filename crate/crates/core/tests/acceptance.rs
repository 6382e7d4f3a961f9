//! Runs `reproduce-paper --seed 42` twice through the built binary, prints one
//! line per acceptance criterion and fails if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use serde_json::Value;
use symsde::suite::{time_limit, NAMES};

fn run(out: &Path) -> (i32, f64) {
    let _ = fs::remove_dir_all(out);
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_symsde"))
        .args(["reproduce-paper", "--seed", "42", "--out"])
        .arg(out)
        .status()
        .expect("spawn symsde");
    (status.code().unwrap_or(-1), start.elapsed().as_secs_f64())
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display())))
        .unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn main() {
    let base = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let (first, second) = (base.join("run1"), base.join("run2"));
    let (code1, secs1) = run(&first);
    let (code2, _) = run(&second);
    eprintln!("reproduce-paper exit codes {code1}, {code2}; first run {secs1:.1} s");

    let report = read_json(&first.join("reproduce-paper.json"));
    let timings = read_json(&first.join("timings.json"));
    let criteria = report["report"]["criteria"]
        .as_array()
        .expect("criteria array");
    let mut failures = 0;
    for (i, name) in NAMES.iter().enumerate().take(10) {
        let id = i as u64 + 1;
        let c = criteria.iter().find(|c| c["id"] == id);
        let (mut pass, mut note) = match c {
            Some(c) => (
                c["pass"] == true,
                c["summary"].as_str().unwrap_or_default().to_string(),
            ),
            None => (false, "missing from report".to_string()),
        };
        if let Some(limit) = time_limit(id as u32) {
            let secs = timings["criteria"]
                .as_array()
                .and_then(|v| v.iter().find(|t| t["id"] == id))
                .and_then(|t| t["seconds"].as_f64())
                .unwrap_or(f64::INFINITY);
            note.push_str(&format!("; {secs:.2} s (limit {limit} s)"));
            pass &= secs < limit;
        }
        failures += usize::from(!pass);
        println!(
            "criterion {id:>2} {name}: {} | {note}",
            if pass { "PASS" } else { "FAIL" }
        );
    }

    let same = |f: &str| match (fs::read(first.join(f)), fs::read(second.join(f))) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    let json_same = same("reproduce-paper.json");
    let csv_same = same("reproduce-paper.csv");
    let deterministic = json_same && csv_same && code1 == code2;
    failures += usize::from(!deterministic);
    println!(
        "criterion 11 {}: {} | json identical: {json_same}, csv identical: {csv_same}, exit codes {code1}/{code2}",
        NAMES[10],
        if deterministic { "PASS" } else { "FAIL" }
    );

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
