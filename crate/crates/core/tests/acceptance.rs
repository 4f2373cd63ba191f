//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use zrp_core::harness::experiments::{balance_sweep, drift_oracle_sweep};
use zrp_core::harness::{neumann_mass_preset, preset, run_experiment, ExperimentKind, ModelConfig, Report};
use zrp_core::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

fn from_report(report: &Report, names: &[&str]) -> Outcome {
    let mut passed = true;
    let mut detail = Vec::new();
    for name in names {
        match report.criterion(name) {
            Some(c) => {
                passed &= c.passed;
                detail.push(format!("{}: {}", c.name, c.detail));
            }
            None => {
                passed = false;
                detail.push(format!("{name}: missing"));
            }
        }
    }
    Outcome { passed, detail: detail.join(" | ") }
}

fn all_of(report: &Report) -> Outcome {
    let names: Vec<&str> = report.criteria.iter().map(|c| c.name.as_str()).collect();
    from_report(report, &names)
}

fn criterion_1() -> Result<Outcome> {
    Ok(all_of(&balance_sweep(10_000, 1)?))
}

fn criterion_2() -> Result<Outcome> {
    let report = run_experiment(&preset(ExperimentKind::Oracle))?;
    let table = report.table("caps").expect("oracle table");
    let caps = table.column("cap").expect("cap column");
    let direct = table.column("tv_direct").expect("direct column");
    let refined = table.column("tv_refined").expect("refined column");
    let at30 = caps.iter().position(|&k| k == 30.0).expect("cap 30");
    let tv30 = direct[at30].max(refined[at30]);
    let mut out = from_report(&report, &["tv_decreasing"]);
    out.passed &= tv30 <= 1e-6;
    out.detail = format!("TV at K = 30: {tv30:.3e} | {}", out.detail);
    Ok(out)
}

fn criterion_3() -> Result<Outcome> {
    Ok(from_report(&run_experiment(&preset(ExperimentKind::Invariance))?, &["chi_squared"]))
}

fn criterion_4() -> Result<Outcome> {
    let robin = run_experiment(&preset(ExperimentKind::Hydrostatic))?;
    let mut cfg = preset(ExperimentKind::Hydrostatic);
    cfg.model.theta = 2.0;
    let neumann = run_experiment(&cfg)?;
    let a = from_report(&robin, &["profile"]);
    let b = from_report(&neumann, &["profile"]);
    Ok(Outcome {
        passed: a.passed && b.passed,
        detail: format!("theta = 1: {} | theta = 2: {}", a.detail, b.detail),
    })
}

fn criterion_5() -> Result<Outcome> {
    let report = run_experiment(&preset(ExperimentKind::Hydrodynamic))?;
    Ok(from_report(&report, &["l1_decreasing_t0.1", "l1_final_t0.1"]))
}

fn criterion_6() -> Result<Outcome> {
    let report = run_experiment(&neumann_mass_preset())?;
    Ok(from_report(&report, &["mass_drift_n100", "mass_drift_n200", "pde_mass"]))
}

fn criterion_7() -> Result<Outcome> {
    Ok(all_of(&run_experiment(&preset(ExperimentKind::Martingale))?))
}

fn criterion_8() -> Result<Outcome> {
    Ok(all_of(&drift_oracle_sweep(1000, 2)?))
}

fn criterion_9() -> Result<Outcome> {
    let report = run_experiment(&preset(ExperimentKind::PdeConvergence))?;
    Ok(from_report(&report, &["cosine_order", "robin_steady_state"]))
}

fn criterion_10() -> Result<Outcome> {
    Ok(all_of(&run_experiment(&preset(ExperimentKind::Attractiveness))?))
}

fn criterion_11() -> Result<Outcome> {
    Ok(all_of(&run_experiment(&preset(ExperimentKind::Replacement))?))
}

/// The replacement sweep for a nonlinear rate, where the residuals do not
/// vanish identically. Reported, not judged.
fn replacement_nonlinear() -> Result<String> {
    let mut cfg = preset(ExperimentKind::Replacement);
    cfg.model = ModelConfig::specialized(100, 1.0, 0.4, "constant");
    let report = run_experiment(&cfg)?;
    Ok(report.criteria.iter().map(|c| format!("{} {}", if c.passed { "ok" } else { "not ok" }, c.detail)).collect::<Vec<_>>().join(" | "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Outcome>); 11] = [
        ("1 exact stationarity balance", criterion_1),
        ("2 truncated-chain oracle", criterion_2),
        ("3 stationarity under simulation", criterion_3),
        ("4 hydrostatic limit", criterion_4),
        ("5 hydrodynamic comparison", criterion_5),
        ("6 Neumann mass law", criterion_6),
        ("7 martingale identities", criterion_7),
        ("8 drift oracle", criterion_8),
        ("9 PDE convergence", criterion_9),
        ("10 attractiveness", criterion_10),
        ("11 replacement diagnostics", criterion_11),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run().unwrap_or_else(|e| Outcome { passed: false, detail: format!("error: {e}") });
        if !outcome.passed {
            failures += 1;
        }
        println!(
            "{} criterion {name} ({:.1}s): {}",
            if outcome.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    match replacement_nonlinear() {
        Ok(detail) => println!("INFO replacement residuals for g = 1{{k >= 1}}, alpha = 0.4: {detail}"),
        Err(e) => println!("INFO replacement residuals for g = 1{{k >= 1}}: error {e}"),
    }
    println!("acceptance: {} of 11 criteria passed", 11 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
