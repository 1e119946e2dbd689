//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Run with `cargo test -p kirchhoff --test acceptance`. Tolerances are fixed
//! here rather than read from configuration.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use kirchhoff::experiments::{
    run_bounds_check, run_conservation_check, run_identity_check, run_lifespan_sweep, run_oracle_compare,
    run_zero_crossing_check, ConservationKind, OracleSettings, Setup, SweepSettings, Tolerances, Verdict,
};
use kirchhoff::io::default_derivative_grid;
use kirchhoff::spectral::ExplicitMode;
use kirchhoff::{integrate, InitialDataSpec, IntegratorConfig, Nonlinearity};

const POKHOZHAEV_DRIFT: f64 = 1e-6;
const DRIFT_SHRINK: f64 = 10.0;
const FIRST_ORDER_DRIFT: f64 = 1e-8;
const IDENTITY_RESIDUAL: f64 = 1e-6;
const QUADRATURE_GAP: f64 = 1e-8;
const DEGENERATE_DRIFT: f64 = 1e-10;
const ZERO_CROSSING: f64 = 1e-6;
const MIN_EVENTS: usize = 5;
const ORACLE_DIFF: f64 = 1e-6;
const DERIVATIVE_ERR: f64 = 1e-6;
const DERIVATIVE_STEP: f64 = 1e-5;

type Outcome = Result<String, String>;
type Timed<'a> = (&'a str, Outcome, f64);
type Criterion = fn() -> Outcome;

fn tolerances() -> Tolerances {
    Tolerances {
        pokhozhaev: POKHOZHAEV_DRIFT,
        first_order: FIRST_ORDER_DRIFT,
        identity: IDENTITY_RESIDUAL,
        quadrature: QUADRATURE_GAP,
        zero_crossing: ZERO_CROSSING,
        oracle: ORACLE_DIFF,
        derivative: DERIVATIVE_ERR,
        ..Tolerances::default()
    }
}

fn random(cutoff: u32, eps: f64) -> InitialDataSpec {
    InitialDataSpec::random(1, 42, cutoff, 2.0, eps)
}

fn two_modes(eps: f64) -> InitialDataSpec {
    InitialDataSpec::explicit(
        1,
        vec![
            ExplicitMode { k: vec![1], c: 1.0, v: 0.0 },
            ExplicitMode { k: vec![2], c: 0.5, v: 0.3 },
        ],
        eps,
    )
}

fn setup(nl: Nonlinearity, data: InitialDataSpec, rel_tol: f64, t_end: f64) -> Setup {
    Setup {
        nl,
        data,
        integrator: IntegratorConfig::with_tolerances(rel_tol, rel_tol * 1e-2),
        t_end,
    }
}

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn pokhozhaev_conservation() -> Outcome {
    let drift = |rtol: f64| -> Result<f64, String> {
        let s = setup(Nonlinearity::pokhozhaev(1.0, 1.0).unwrap(), random(16, 0.3), rtol, 50.0);
        let r = run_conservation_check(ConservationKind::Pokhozhaev, &s, &tolerances()).map_err(|e| e.to_string())?;
        Ok(r.max_drift)
    };
    let (d10, d12) = (drift(1e-10)?, drift(1e-12)?);
    check(
        d10 <= POKHOZHAEV_DRIFT && d12 * DRIFT_SHRINK <= d10,
        format!("drift {d10:.3e} at rel_tol 1e-10, {d12:.3e} at 1e-12 (shrink {:.1}x)", d10 / d12),
    )
}

fn first_order_conservation() -> Outcome {
    let s = setup(Nonlinearity::affine_plus(1.0).unwrap(), random(16, 0.3), 1e-10, 50.0);
    let r = run_conservation_check(ConservationKind::FirstOrder, &s, &tolerances()).map_err(|e| e.to_string())?;
    check(r.max_drift <= FIRST_ORDER_DRIFT, format!("drift {:.3e}", r.max_drift))
}

fn second_order_identity() -> Outcome {
    let s = setup(Nonlinearity::power_alpha(1.0).unwrap(), random(8, 3.0), 1e-10, 20.0);
    let r = run_identity_check(&s, &tolerances()).map_err(|e| e.to_string())?;
    let gap = r.details["quadrature_gap"].as_f64().unwrap();
    check(
        r.verdict == Verdict::Pass && r.max_drift <= IDENTITY_RESIDUAL && gap <= QUADRATURE_GAP,
        format!("residual {:.3e} (relative), Simpson gap {gap:.3e}", r.max_drift),
    )
}

fn degenerate_families() -> Outcome {
    let s = setup(Nonlinearity::constant(1.0).unwrap(), random(16, 0.3), 1e-12, 50.0);
    let state = s.initial_state().map_err(|e| e.to_string())?;
    let traj = integrate(&state, &s.nl, s.t_end, &s.integrator, &[]).map_err(|e| e.to_string())?;
    let first = *traj.initial();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let (mut de, mut df, mut dh) = (0.0f64, 0.0f64, 0.0f64);
    for x in &traj.samples {
        de = de.max(rel(x.e, first.e));
        df = df.max(rel(x.f, first.f));
        dh = dh.max(rel(x.h1, first.h1));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(42);
    let mut nonzero = 0usize;
    for _ in 0..1000 {
        let c1 = rng.gen_range(0.1..5.0);
        let c2 = rng.gen_range(0.1..5.0);
        let s = rng.gen_range(0.0..10.0);
        let nl = Nonlinearity::pokhozhaev(c1, c2).unwrap();
        if nl.inv_sqrt_derivs(s).map_err(|e| e.to_string())?.1 != 0.0 {
            nonzero += 1;
        }
    }
    let worst = de.max(df).max(dh);
    check(
        worst <= DEGENERATE_DRIFT && nonzero == 0,
        format!("constant(1): E {de:.2e}, F {df:.2e}, H1 {dh:.2e}; pokhozhaev g2 nonzero at {nonzero}/1000 points"),
    )
}

fn bounds_run() -> Result<kirchhoff::experiments::Report, String> {
    let eps: f64 = 0.1;
    let horizon = eps.powi(-4);
    let s = setup(Nonlinearity::affine_plus(1.0).unwrap(), random(16, eps), 1e-10, horizon);
    run_bounds_check(&s, &tolerances(), horizon).map_err(|e| e.to_string())
}

fn sandwich_and_cauchy_schwarz(r: &kirchhoff::experiments::Report) -> Outcome {
    let d = &r.details;
    let count = |k: &str| d[k].as_u64().unwrap();
    let cs = count("cauchy_schwarz_violations");
    let sandwich = count("sandwich_violations");
    check(
        cs == 0 && sandwich == 0 && r.samples.len() > 1,
        format!(
            "{} samples up to t = 1e4: {cs} Cauchy-Schwarz, {sandwich} sandwich violations",
            r.samples.len()
        ),
    )
}

fn lifespan_envelope(bounds: &kirchhoff::experiments::Report) -> Outcome {
    let sup = bounds.details["sup_f_ratio"].as_f64().unwrap();
    let s = setup(Nonlinearity::affine_plus(1.0).unwrap(), random(16, 0.1), 1e-10, 1.0);
    let settings = SweepSettings { eps_list: vec![0.5, 0.4, 0.3], kappa: 2.0, cap_mult: 10.0, ..Default::default() };
    let o = run_lifespan_sweep(&s, &settings).map_err(|e| e.to_string())?;
    let scaling = o.records.iter().all(|r| r.scaling_ok);
    let censored = o.records.iter().filter(|r| r.censored).count();
    check(
        sup <= 4.0 && scaling,
        format!("sup F/F0 = {sup:.6} over t <= 1e4; sweep scaling holds ({censored}/3 censored at the cap)"),
    )
}

fn power_alpha_lifespan() -> Outcome {
    let s = setup(Nonlinearity::power_alpha(1.0).unwrap(), random(16, 0.1), 1e-10, 1.0);
    let settings = SweepSettings { eps_list: vec![0.5, 0.4, 0.3], kappa: 2.0, cap_mult: 10.0, ..Default::default() };
    let o = run_lifespan_sweep(&s, &settings).map_err(|e| e.to_string())?;
    let exponent = o.report.details["exponent"].as_f64().unwrap();
    let scaling = o.records.iter().all(|r| r.scaling_ok);
    let censored = o.records.iter().filter(|r| r.censored).count();
    check(
        exponent == 6.0 && scaling,
        format!("exponent {exponent}, scaling holds: {scaling} ({censored}/3 censored)"),
    )
}

fn zero_crossing() -> Outcome {
    let s = setup(Nonlinearity::power_alpha(1.0).unwrap(), two_modes(0.5), 1e-10, 20.0);
    let r = run_zero_crossing_check(&s, &tolerances()).map_err(|e| e.to_string())?;
    let events = r.details["events"].as_u64().unwrap_or(0) as usize;
    let violations = r.details["groenwall_violations"].as_u64().unwrap_or(u64::MAX);
    check(
        r.verdict == Verdict::Pass && events >= MIN_EVENTS && r.max_drift <= ZERO_CROSSING && violations == 0,
        format!("{events} zeros of s', relation error {:.3e}, {violations} Gronwall violations", r.max_drift),
    )
}

fn oracle_equivalence() -> Outcome {
    let s = setup(Nonlinearity::affine_plus(1.0).unwrap(), two_modes(1.0), 1e-10, 10.0);
    let r = run_oracle_compare(&s, &OracleSettings::default(), &tolerances()).map_err(|e| e.to_string())?;
    let order = r.details["observed_order"].as_f64().unwrap();
    check(
        r.verdict == Verdict::Pass && r.max_drift <= ORACLE_DIFF && (3.7..=4.3).contains(&order),
        format!("sup difference {:.3e}, RK4 order {order:.3}", r.max_drift),
    )
}

fn derivative_gate() -> Outcome {
    let families = [
        Nonlinearity::pokhozhaev(1.0, 1.0),
        Nonlinearity::pokhozhaev(1.0, 2.0),
        Nonlinearity::pokhozhaev(0.0, 1.0),
        Nonlinearity::affine_plus(1.0),
        Nonlinearity::affine_plus(0.5),
        Nonlinearity::power_alpha(1.0),
        Nonlinearity::power_alpha(0.5),
        Nonlinearity::power_alpha(2.0),
        Nonlinearity::constant(1.0),
    ];
    let grid = default_derivative_grid();
    let mut worst = 0.0f64;
    for nl in families {
        let nl = nl.map_err(|e| e.to_string())?;
        let d = nl.check_derivatives(&grid, DERIVATIVE_STEP).map_err(|e| e.to_string())?;
        worst = worst.max(d.max_error());
    }
    check(worst <= DERIVATIVE_ERR, format!("max relative error {worst:.3e} over 9 parameterizations"))
}

fn without_timestamp(path: &Path) -> Result<String, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text.lines().filter(|l| !l.trim_start().starts_with("\"timestamp\"")).collect::<Vec<_>>().join("\n"))
}

fn determinism() -> Outcome {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fixture.json");
    let base = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: [(&[&str], &str); 2] = [(&["simulate"], "simulate"), (&["verify", "--kind", "pokhozhaev"], "pokhozhaev_conservation")];
    let mut compared = 0;
    for (args, stem) in runs {
        let mut outputs = Vec::new();
        for i in 0..2 {
            let dir = base.path().join(format!("{stem}_{i}"));
            let status = Command::new(env!("CARGO_BIN_EXE_kirchhoff"))
                .args(args)
                .arg("--config")
                .arg(&fixture)
                .arg("--out")
                .arg(&dir)
                .output()
                .map_err(|e| e.to_string())?
                .status;
            if !status.success() {
                return Err(format!("{stem} run {i} exited with {status}"));
            }
            let csv = std::fs::read(dir.join(format!("{stem}.csv"))).map_err(|e| e.to_string())?;
            // The CSV path inside the verdict names the output directory.
            let json = without_timestamp(&dir.join(format!("{stem}.json")))?.replace(&format!("{stem}_{i}"), "");
            outputs.push((csv, json));
        }
        if outputs[0] != outputs[1] {
            return Err(format!("{stem}: outputs differ between runs"));
        }
        compared += 2;
    }
    Ok(format!("{compared} file pairs byte-identical"))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let results: Vec<Timed> = std::thread::scope(|scope| {
        let bounds = scope.spawn(|| {
            let t = Instant::now();
            (bounds_run(), t.elapsed().as_secs_f64())
        });
        let jobs: [(&str, Criterion); 9] = [
            ("1 pokhozhaev conservation", pokhozhaev_conservation),
            ("2 first-order conservation", first_order_conservation),
            ("3 second-order identity", second_order_identity),
            ("4 degenerate families", degenerate_families),
            ("7 power_alpha lifespan sweep", power_alpha_lifespan),
            ("8 zero-crossing relation and Gronwall", zero_crossing),
            ("9 oracle equivalence", oracle_equivalence),
            ("10 derivative gate", derivative_gate),
            ("11 determinism", determinism),
        ];
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(name, f)| {
                let handle = scope.spawn(move || {
                    let t = Instant::now();
                    (f(), t.elapsed().as_secs_f64())
                });
                (name, handle)
            })
            .collect();
        let mut results: Vec<Timed> = handles
            .into_iter()
            .map(|(name, h)| {
                let (out, secs) = h.join().unwrap_or_else(|_| (Err("panicked".into()), 0.0));
                (name, out, secs)
            })
            .collect();

        let (report, secs) = bounds.join().unwrap_or_else(|_| (Err("panicked".into()), 0.0));
        let (five, six) = match report {
            Ok(r) => {
                let t = Instant::now();
                let six = lifespan_envelope(&r);
                ((sandwich_and_cauchy_schwarz(&r), secs), (six, secs + t.elapsed().as_secs_f64()))
            }
            Err(e) => ((Err(e.clone()), secs), (Err(e), secs)),
        };
        results.push(("5 sandwich and Cauchy-Schwarz", five.0, five.1));
        results.push(("6 lifespan envelope", six.0, six.1));
        results.sort_by_key(|(name, _, _)| name.split(' ').next().unwrap().parse::<u32>().unwrap());
        results
    });

    let mut failed = 0;
    for (name, outcome, secs) in &results {
        match outcome {
            Ok(msg) => println!("[PASS] {name}: {msg} ({secs:.1} s)"),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {name}: {msg} ({secs:.1} s)");
            }
        }
    }
    println!(
        "{} of {} criteria passed in {:.1} s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
