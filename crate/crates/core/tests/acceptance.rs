//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use intractl::controller::{preallocate, read_decision_log, replay_log, write_decision_log};
use intractl::frame_model::{sa8d_block, Block8, HADAMARD_8};
use intractl::harness::{mean_te_pct, sweep, write_sweep, ControlSetup, SweepConfig};
use intractl::preset_catalog::{default_catalog, Preset};
use intractl::tc_model::fit;
use intractl::{CtuWeight, FitSample, SimBackend, SimParams, TcModel};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within_time(o: Outcome, elapsed: Duration, limit: Duration) -> Outcome {
    let detail = format!(
        "{}; {:.3} s (limit {} s)",
        o.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    outcome(o.pass && elapsed < limit, detail)
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Sylvester construction by repeated doubling, H_{2n} = [[H, H], [H, -H]].
fn sylvester8() -> [[i64; 8]; 8] {
    let mut h = vec![vec![1i64]];
    while h.len() < 8 {
        let n = h.len();
        let mut next = vec![vec![0i64; 2 * n]; 2 * n];
        for i in 0..n {
            for j in 0..n {
                next[i][j] = h[i][j];
                next[i][j + n] = h[i][j];
                next[i + n][j] = h[i][j];
                next[i + n][j + n] = -h[i][j];
            }
        }
        h = next;
    }
    let mut out = [[0i64; 8]; 8];
    for i in 0..8 {
        out[i].copy_from_slice(&h[i]);
    }
    out
}

fn matmul(a: &[[i64; 8]; 8], b: &[[i64; 8]; 8]) -> [[i64; 8]; 8] {
    let mut c = [[0i64; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            c[i][j] = (0..8).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn dense_sa8d(h: &[[i64; 8]; 8], block: &Block8) -> u64 {
    let b = block.map(|row| row.map(i64::from));
    matmul(&matmul(h, &b), h)
        .iter()
        .flatten()
        .map(|v| v.unsigned_abs())
        .sum()
}

fn c1_hadamard() -> Outcome {
    let t0 = Instant::now();
    let h = sylvester8();
    let table = HADAMARD_8.map(|row| row.map(i64::from));
    let mut fails = Vec::new();
    if table != h {
        fails.push("table differs from Sylvester H8".to_string());
    }
    let hh = matmul(&h, &h);
    for (i, row) in hh.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v != if i == j { 8 } else { 0 } {
                fails.push(format!("H*H[{i}][{j}] = {v}"));
            }
        }
    }
    let constant = [[100; 8]; 8];
    let mut impulse = [[0; 8]; 8];
    impulse[0][0] = 1;
    for (name, block, want) in [("constant-100", constant, 6400), ("impulse", impulse, 64)] {
        let got = sa8d_block(&block);
        if got != want || dense_sa8d(&h, &block) != want {
            fails.push(format!("{name}: sa8d {got}, expected {want}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    let n = 4_000;
    for i in 0..n {
        let mut b: Block8 = [[0; 8]; 8];
        for v in b.iter_mut().flatten() {
            *v = match i % 3 {
                0 => rng.random_range(0..=255),
                1 => rng.random_range(-255..=255),
                _ => {
                    if rng.random_bool(0.5) {
                        255
                    } else {
                        -255
                    }
                }
            };
        }
        mismatches += usize::from(sa8d_block(&b) != dense_sa8d(&h, &b));
    }
    if mismatches > 0 {
        fails.push(format!(
            "{mismatches}/{n} random blocks differ from dense oracle"
        ));
    }
    let o = outcome(
        fails.is_empty(),
        if fails.is_empty() {
            format!("H*H = 8I, 6400 / 64 exact, {n} random blocks bit-exact")
        } else {
            fails.join("; ")
        },
    );
    within_time(o, t0.elapsed(), Duration::from_secs(1))
}

fn fit_samples(p: &SimParams) -> Vec<FitSample> {
    let catalog = default_catalog();
    SimBackend::new(p.clone())
        .unwrap()
        .trace_rows(&catalog.presets()[0])
        .iter()
        .map(|r| FitSample::new(r.planar_cost, r.luma_time_ms).unwrap())
        .collect()
}

fn c2_fit_recovery() -> Outcome {
    let t0 = Instant::now();
    let clean = SimParams {
        alpha_true: 0.5,
        beta_true: 0.8,
        machine_factor: 1.3,
        noise_sigma: 0.0,
        ctus: 50,
        ..SimParams::default()
    };
    let noisy = SimParams {
        alpha_true: 2.0,
        beta_true: 0.9,
        machine_factor: 1.0,
        noise_sigma: 0.1,
        ctus: 500,
        ..SimParams::default()
    };
    let m0 = fit(&fit_samples(&clean)).unwrap();
    let m1 = fit(&fit_samples(&noisy)).unwrap();
    let elapsed = t0.elapsed();
    let spread = (1..=100u64)
        .filter(|&s| {
            let m = fit(&fit_samples(&noisy.with_seed(s))).unwrap();
            rel(m.alpha(), 2.0) <= 0.05 && rel(m.beta(), 0.9) <= 0.05
        })
        .count();
    let e0 = (
        rel(m0.alpha(), clean.alpha_true * clean.machine_factor),
        rel(m0.beta(), clean.beta_true),
    );
    let e1 = (
        rel(m1.alpha(), noisy.alpha_true * noisy.machine_factor),
        rel(m1.beta(), noisy.beta_true),
    );
    let pass = e0.0 <= 1e-9 && e0.1 <= 1e-9 && e1.0 <= 0.05 && e1.1 <= 0.05;
    let o = outcome(
        pass,
        format!(
            "noiseless rel err alpha {:.2e} beta {:.2e} (tol 1e-9); sigma 0.1 x500 alpha {:.2}% beta {:.2}% (tol 5%); seeds 1..100 within tol: {spread}/100",
            e0.0,
            e0.1,
            e1.0 * 100.0,
            e1.1 * 100.0
        ),
    );
    within_time(o, elapsed, Duration::from_secs(1))
}

fn calibrated_r_cpu(seed: u64) -> (f64, bool) {
    let p = SimParams {
        machine_factor: 1.5,
        noise_sigma: 0.05,
        ctus: 50,
        seed,
        ..SimParams::default()
    };
    let setup = ControlSetup::new(TcModel::new(p.alpha_true, p.beta_true).unwrap());
    // a generous budget keeps every CTU unaccelerated
    let (report, _) = setup.run_simulated(&p, 10.0).unwrap();
    let all_p0 = report.records.iter().all(|r| r.preset_id == 0);
    (report.final_model.r_cpu(), all_p0)
}

fn c3_calibration() -> Outcome {
    let t0 = Instant::now();
    let (r, all_p0) = calibrated_r_cpu(SimParams::default().seed);
    let elapsed = t0.elapsed();
    let spread = (1..=100u64)
        .filter(|&s| rel(calibrated_r_cpu(s).0, 1.5) <= 0.01)
        .count();
    let o = outcome(
        all_p0 && rel(r, 1.5) <= 0.01,
        format!(
            "r_cpu {r:.5} after 50 preset-0 CTUs, rel err {:.3}% (tol 1%); seeds 1..100 within tol: {spread}/100",
            rel(r, 1.5) * 100.0
        ),
    );
    within_time(o, elapsed, Duration::from_secs(1))
}

fn c4_budget_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=2000);
        let hi: u64 = match rng.random_range(0..3) {
            0 => 10,
            1 => 1_000_000,
            _ => 1 << 40,
        };
        let weights: Vec<CtuWeight> = (0..n)
            .map(|i| CtuWeight {
                ctu_index: i,
                weight: rng.random_range(1..=hi),
            })
            .collect();
        let budget = 10f64.powf(rng.random_range(-2.0..6.0));
        let tb = preallocate(&weights, budget).unwrap();
        worst = worst.max(rel(tb.iter().sum::<f64>(), budget));
    }
    outcome(
        worst <= 1e-6,
        format!("1000 weight vectors, worst relative gap {worst:.2e} (tol 1e-6)"),
    )
}

/// Model fitted on a separate training picture, as a user would.
fn trained_model() -> TcModel {
    let train = SimParams {
        ctus: 500,
        seed: 1000,
        ..SimParams::default()
    };
    fit(&fit_samples(&train)).unwrap()
}

fn c5_convergence() -> Outcome {
    let t0 = Instant::now();
    let setup = ControlSetup::new(trained_model());
    let p = SimParams {
        ctus: 510,
        noise_sigma: 0.05,
        ..SimParams::default()
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for target in [0.4, 0.6, 0.8] {
        let (report, _) = setup.run_simulated(&p, target).unwrap();
        let series: Vec<f64> = report
            .running_errors()
            .iter()
            .map(|r| r.mean_overspend_ms)
            .collect();
        let n = series.len();
        let peak = series[..n / 4].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let late = series[n / 2..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ok = late <= 0.1 * peak;
        pass &= ok && n == 510;
        parts.push(format!(
            "{:.0}%: late {:.4} / early peak {:.4} ms = {:.1}%",
            target * 100.0,
            late,
            peak,
            late / peak * 100.0
        ));
    }
    let o = outcome(pass, format!("{} (tol 10%)", parts.join(", ")));
    within_time(o, t0.elapsed(), Duration::from_secs(5))
}

fn sweep_config(targets: Vec<f64>, repeats: usize) -> SweepConfig {
    SweepConfig {
        targets,
        repeats,
        base_seed: 1,
        params: SimParams::default(),
        setup: ControlSetup::new(trained_model()),
    }
}

fn c6_picture_te() -> Outcome {
    let t0 = Instant::now();
    let targets = (3..=9).map(|k| f64::from(k) / 10.0).collect();
    let rows = sweep(&sweep_config(targets, 20)).unwrap();
    let mean = mean_te_pct(&rows);
    let high_ok = rows
        .iter()
        .filter(|r| r.target_ratio_pct >= 40.0 - 1e-9)
        .all(|r| r.te_pct <= 4.0);
    let per: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.0}%:{:.2}", r.target_ratio_pct, r.te_pct))
        .collect();
    let o = outcome(
        mean <= 4.0 && high_ok && rows.len() == 7,
        format!(
            "mean TE {mean:.2}% (tol 4%), TE by target [{}], 240 CTUs x 20 seeds",
            per.join(" ")
        ),
    );
    within_time(o, t0.elapsed(), Duration::from_secs(30))
}

fn c7_saturation() -> Outcome {
    let setup = ControlSetup::new(trained_model());
    let (report, summary) = setup.run_simulated(&SimParams::default(), 0.2).unwrap();
    let fastest = setup.catalog.fastest().id;
    let share = report
        .records
        .iter()
        .filter(|r| r.preset_id == fastest)
        .count() as f64
        / report.records.len() as f64;
    outcome(
        share >= 0.95 && summary.saturated,
        format!(
            "preset {fastest} share {:.1}% (tol >= 95%), saturation flag {}",
            share * 100.0,
            summary.saturated
        ),
    )
}

fn brute_force(presets: &[Preset], r: f64) -> u8 {
    let r = r.clamp(0.0, 1.0);
    let mut best = presets[0];
    for p in presets {
        if (p.time_ratio() - r).abs() < (best.time_ratio() - r).abs() {
            best = *p;
        }
    }
    best.id
}

fn c8_selection() -> Outcome {
    let catalog = default_catalog();
    let grid: Vec<f64> = (0..1000).map(|i| 1.5 * f64::from(i) / 999.0).collect();
    let ids: Vec<u8> = grid
        .iter()
        .map(|&r| catalog.select(r).unwrap().id)
        .collect();
    let mismatches = grid
        .iter()
        .zip(&ids)
        .filter(|(&r, &id)| brute_force(catalog.presets(), r) != id)
        .count();
    // ratio goes down as we walk the grid backwards
    let monotone = ids.windows(2).all(|w| w[0] >= w[1]);
    outcome(
        mismatches == 0 && monotone,
        format!("{mismatches}/1000 grid points differ from brute force, monotone {monotone}"),
    )
}

fn c9_accounting() -> Outcome {
    let setup = ControlSetup::new(trained_model());
    let mut checked = 0;
    let mut fails = Vec::new();
    for seed in 1..=5u64 {
        for target in [0.3, 0.5, 0.7, 0.9] {
            let p = SimParams::default().with_seed(seed);
            let (report, _) = setup.run_simulated(&p, target).unwrap();
            let mut bytes = Vec::new();
            write_decision_log(&mut bytes, &report.records).unwrap();
            let records = read_decision_log(bytes.as_slice(), "log").unwrap();
            let totals = replay_log(&records).unwrap();
            let mut sum = 0.0;
            for r in &records {
                sum += r.real_ms - r.allocated_ms;
            }
            if totals.accumulated_error_ms.to_bits() != report.accumulated_error_ms.to_bits()
                || sum.to_bits() != report.accumulated_error_ms.to_bits()
            {
                fails.push(format!("seed {seed} target {target}"));
            }
            checked += 1;
        }
    }
    outcome(
        fails.is_empty(),
        format!(
            "{} of {checked} logs replay to the live accumulated error bit-for-bit{}",
            checked - fails.len(),
            if fails.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", fails.join(", "))
            }
        ),
    )
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.txt");
    trained_model().write(&model).unwrap();
    let run = |name: &str, repeats: &str| -> Vec<u8> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_intractl"))
            .args([
                "sweep",
                "--seed",
                "7",
                "--targets",
                "30:90:10",
                "--repeats",
                repeats,
            ])
            .arg("--model")
            .arg(&model)
            .arg("--out-dir")
            .arg(&out)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("sweep.csv")).unwrap()
    };
    let a1 = run("a", "1");
    let b1 = run("b", "1");
    let a5 = run("c", "5");
    let b5 = run("d", "5");
    let cfg = sweep_config(vec![0.4, 0.8], 3);
    let mut l1 = Vec::new();
    let mut l2 = Vec::new();
    write_sweep(&mut l1, &sweep(&cfg).unwrap()).unwrap();
    write_sweep(&mut l2, &sweep(&cfg).unwrap()).unwrap();
    outcome(
        a1 == b1 && a5 == b5 && l1 == l2 && !a1.is_empty(),
        format!(
            "CLI sweep repeats=1: {} bytes identical {}; repeats=5 identical {}; library identical {}",
            a1.len(),
            a1 == b1,
            a5 == b5,
            l1 == l2
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("hadamard correctness", c1_hadamard),
        ("fit recovery", c2_fit_recovery),
        ("calibration", c3_calibration),
        ("budget conservation", c4_budget_conservation),
        ("convergence", c5_convergence),
        ("picture TE", c6_picture_te),
        ("saturation", c7_saturation),
        ("selection oracle", c8_selection),
        ("accounting identity", c9_accounting),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} criterion {:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
