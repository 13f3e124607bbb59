//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 1-6 call the library oracles directly; 7 and 8 drive the
//! `cresp-lab` binary end to end. The process exits 0 after reporting so the
//! rest of the test suite still runs; set `CRESP_ACCEPTANCE_STRICT=1` to exit
//! nonzero when any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cresp_core::evaluation::bound_sweep;
use cresp_core::par::Exec;
use cresp_core::suite::{self, CheckResult};

const SEED: u64 = 7;

struct Line {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn checks_line(id: u32, name: &'static str, checks: &[CheckResult], elapsed: Duration, limit: Option<f64>) -> Line {
    let mut passed = checks.iter().all(|c| c.passed);
    let mut parts: Vec<String> =
        checks.iter().map(|c| format!("{} {:.3e} (tol {:.1e})", c.name, c.measured, c.tolerance)).collect();
    let secs = elapsed.as_secs_f64();
    match limit {
        Some(l) => {
            passed &= secs < l;
            parts.push(format!("{secs:.1}s of {l}s"));
        }
        None => parts.push(format!("{secs:.1}s")),
    }
    Line { id, name, passed, detail: parts.join("; ") }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed())
}

fn cresp_lab(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cresp-lab"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "`{}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn library_criteria() -> Vec<Line> {
    let mut lines = Vec::new();
    let fail = |id, name, e: cresp_core::Error| Line { id, name, passed: false, detail: e.to_string() };

    let (r, t) = timed(|| suite::cf_agreement(SEED, None));
    lines.push(match r {
        Ok(c) => checks_line(1, "cf oracle agreement", &[c], t, Some(10.0)),
        Err(e) => fail(1, "cf oracle agreement", e),
    });
    let (r, t) = timed(|| suite::cf_identities(SEED, None));
    lines.push(match r {
        Ok(c) => checks_line(2, "cf identities", &c, t, None),
        Err(e) => fail(2, "cf identities", e),
    });
    let (r, t) = timed(|| suite::observation_invariance(SEED));
    lines.push(match r {
        Ok(c) => checks_line(3, "same-state invariance", &c, t, None),
        Err(e) => fail(3, "same-state invariance", e),
    });
    let (r, t) = timed(|| suite::upper_bound(SEED));
    lines.push(match r {
        Ok(c) => checks_line(4, "sampled loss upper bound", &c, t, None),
        Err(e) => fail(4, "sampled loss upper bound", e),
    });

    let (r, t) = timed(|| bound_sweep(50, SEED, Exec::default()));
    lines.push(match r {
        Ok(s) => {
            let secs = t.as_secs_f64();
            Line {
                id: 5,
                name: "value bound sweep",
                passed: s.passed() && s.cases.len() == 50 && secs < 60.0,
                detail: format!(
                    "{} instances; violations {}, identity failures {}, monotonicity failures {}; max gap/bound {:.4}; {secs:.1}s of 60s",
                    s.cases.len(),
                    s.violations,
                    s.identity_failures,
                    s.monotonicity_failures,
                    s.max_ratio
                ),
            }
        }
        Err(e) => fail(5, "value bound sweep", e),
    });

    let (r, t) = timed(|| suite::gradient_checks(SEED));
    lines.push(match r {
        Ok(c) => checks_line(6, "gradient correctness", &c, t, None),
        Err(e) => fail(6, "gradient correctness", e),
    });
    lines
}

const FIG_SEEDS: usize = 3;
const FIG_TRAIN: &[&str] = &[
    "--T",
    "5",
    "--kappa",
    "16",
    "--batch-size",
    "32",
    "--steps",
    "5000",
    "--initial-steps",
    "500",
    "--train-envs",
    "0,1",
];

fn probe_orderings(dir: &Path) -> Result<(bool, String), String> {
    cresp_lab(dir, &["gen", "--gridworld", "5x5", "--envs", "4", "--seed", "7", "-o", "grid.json"])?;
    let mut cks: [Vec<String>; 2] = Default::default();
    for (k, objective) in ["cresp", "rdp"].into_iter().enumerate() {
        for seed in 0..FIG_SEEDS {
            let out = format!("{objective}_{seed}");
            let seed = seed.to_string();
            let mut args =
                vec!["train", "--instance", "grid.json", "--objective", objective, "--seed", &seed, "--out-dir", &out];
            args.extend_from_slice(FIG_TRAIN);
            cresp_lab(dir, &args)?;
            cks[k].push(format!("{out}/checkpoint.json"));
        }
    }
    let seeds = FIG_SEEDS.to_string();
    let mut args = vec!["probe", "--instance", "grid.json", "--seeds", &seeds, "--out-dir", "probe"];
    for c in &cks[0] {
        args.extend(["--checkpoint", c.as_str()]);
    }
    for c in &cks[1] {
        args.extend(["--compare", c.as_str()]);
    }
    cresp_lab(dir, &args)?;
    let text = std::fs::read_to_string(dir.join("probe/probe_report.json")).map_err(|e| e.to_string())?;
    let rep: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let o = &rep["ordering"];
    let env_ok = o["env_ce_not_lower"].as_u64().unwrap_or(0);
    let state_ok = o["state_ce_not_higher"].as_u64().unwrap_or(0);
    let acc = o["min_state_accuracy"].as_f64().unwrap_or(0.0);
    let pairs = |key: &str| {
        let vals = |fam: &str| -> Vec<String> {
            rep[fam]
                .as_array()
                .map(|a| a.iter().map(|r| format!("{:.4}", r[key].as_f64().unwrap_or(f64::NAN))).collect())
                .unwrap_or_default()
        };
        format!("cresp [{}] vs rdp [{}]", vals("runs").join(", "), vals("compare").join(", "))
    };
    let need = 2;
    let passed = env_ok >= need && state_ok >= need && acc >= 0.9;
    Ok((
        passed,
        format!(
            "(a) env ce cresp >= rdp in {env_ok}/{FIG_SEEDS}: {}; (b) state ce cresp <= rdp in {state_ok}/{FIG_SEEDS}: {}; min cresp state accuracy {acc:.4}",
            pairs("env_ce"),
            pairs("state_ce")
        ),
    ))
}

fn determinism(dir: &Path) -> Result<(bool, String), String> {
    cresp_lab(dir, &["gen", "--gridworld", "4x4", "--envs", "2", "--seed", "3", "-o", "det.json"])?;
    let mut mismatched = Vec::new();
    for objective in ["cresp", "rdp"] {
        for run in ["a", "b"] {
            let out = format!("det_{objective}_{run}");
            cresp_lab(
                dir,
                &[
                    "train",
                    "--instance",
                    "det.json",
                    "--objective",
                    objective,
                    "--seed",
                    "11",
                    "--T",
                    "3",
                    "--kappa",
                    "32",
                    "--batch-size",
                    "64",
                    "--steps",
                    "200",
                    "--initial-steps",
                    "100",
                    "--out-dir",
                    &out,
                    "--checkpoint-every",
                    "100",
                ],
            )?;
        }
        for f in ["metrics.csv", "checkpoint.json", "checkpoint_100.json", "config.json"] {
            let a = std::fs::read(dir.join(format!("det_{objective}_a/{f}"))).map_err(|e| e.to_string())?;
            let b = std::fs::read(dir.join(format!("det_{objective}_b/{f}"))).map_err(|e| e.to_string())?;
            if a != b {
                mismatched.push(format!("train {objective} {f}"));
            }
        }
    }
    let va = cresp_lab(dir, &["verify", "--seed", "7", "--report", "verify_a.json"])?;
    let vb = cresp_lab(dir, &["verify", "--seed", "7", "--report", "verify_b.json"])?;
    let ra = std::fs::read(dir.join("verify_a.json")).map_err(|e| e.to_string())?;
    let rb = std::fs::read(dir.join("verify_b.json")).map_err(|e| e.to_string())?;
    if ra != rb {
        mismatched.push("verify report".into());
    }
    if va != vb {
        mismatched.push("verify stdout".into());
    }
    let detail = if mismatched.is_empty() {
        "train metrics/checkpoints (cresp, rdp) and verify report byte-identical across two runs".to_string()
    } else {
        format!("differs: {}", mismatched.join(", "))
    };
    Ok((mismatched.is_empty(), detail))
}

fn binary_criterion(
    id: u32,
    name: &'static str,
    limit: Option<f64>,
    f: impl FnOnce(&Path) -> Result<(bool, String), String>,
) -> Line {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return Line { id, name, passed: false, detail: e.to_string() },
    };
    let (r, t) = timed(|| f(dir.path()));
    let secs = t.as_secs_f64();
    match r {
        Ok((passed, detail)) => match limit {
            Some(l) => Line { id, name, passed: passed && secs < l, detail: format!("{detail}; {secs:.0}s of {l}s") },
            None => Line { id, name, passed, detail: format!("{detail}; {secs:.0}s") },
        },
        Err(e) => Line { id, name, passed: false, detail: e },
    }
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters come through here too.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    if args.iter().any(|a| !a.starts_with('-') && !"acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }

    let report = |l: &Line| {
        println!("{} {}. {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.id, l.name, l.detail);
    };
    let mut lines = Vec::new();
    for l in library_criteria() {
        report(&l);
        lines.push(l);
    }
    let l = binary_criterion(7, "probe orderings", Some(1200.0), probe_orderings);
    report(&l);
    lines.push(l);
    let l = binary_criterion(8, "determinism", None, determinism);
    report(&l);
    lines.push(l);

    let passed = lines.iter().filter(|l| l.passed).count();
    println!("acceptance: {passed}/{} criteria passed", lines.len());
    let strict = std::env::var("CRESP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < lines.len() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
