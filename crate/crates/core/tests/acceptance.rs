//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. The training criteria take a few minutes in release mode.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::thread;
use std::time::Instant;

use eqprop::energy::{relax, RateState, RelaxConfig};
use eqprop::gradcheck::{lambda_check, GradcheckSetup, BETA_GRID};
use eqprop::harness::{
    gradcheck_suite, preset, run, ExperimentConfig, GradcheckOptions, RunSummary, METRICS_FILE,
    WEIGHTS_FILE,
};
use eqprop::lif::{nudging_factor, simulated_rate, PopulationCode, SpikingModel};
use eqprop::network::{init_weights, NetworkParams, NetworkTopology, RngSpec};
use eqprop::nonlinearity::{liffi, DerivativeMode, Nonlinearity};
use eqprop::rate::{
    apply_correlation, contrastive_update, LearningRates, PhaseSchedule, RateModel, UpdateMode,
};
use eqprop::task::{self, make_sample};
use rand::Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

fn fail(e: impl std::fmt::Display) -> Verdict {
    Verdict::new(false, format!("error: {e}"))
}

fn gradient_criteria() -> (Verdict, Verdict) {
    let suite = match gradcheck_suite(&GradcheckOptions::default(), &BETA_GRID) {
        Ok(s) => s,
        Err(e) => return (fail(&e), fail(e)),
    };
    let at = |r: &eqprop::gradcheck::GradReport, beta: f64| {
        r.beta_values.iter().position(|&b| b == beta).unwrap()
    };
    let worst_cos = suite
        .reports
        .iter()
        .map(|r| r.cosine_similarities[at(r, 1e-2)])
        .fold(f64::INFINITY, f64::min);
    let worst_err = suite
        .reports
        .iter()
        .map(|r| r.relative_errors[at(r, 1e-3)])
        .fold(0.0, f64::max);
    let c1 = Verdict::new(
        suite.estimate_ok,
        format!(
            "{} instances, min cosine at 1e-2 = {worst_cos:.6}, max rel. error at 1e-3 = {worst_err:.2e}",
            suite.reports.len()
        ),
    );

    let worst_ratio = suite
        .reports
        .iter()
        .map(|r| r.lambda_residual / r.cost_grad_norm)
        .fold(0.0, f64::max);
    let (scalar_ok, scalar_detail) = scalar_lambda();
    let c2 = Verdict::new(
        suite.lambda_ok && scalar_ok,
        format!("max residual/|dC/ds| = {worst_ratio:.2e}, {scalar_detail}"),
    );
    (c1, c2)
}

// One input, one output, a bias: s* = w·x + b and the Hessian is 1, so
// λ* = ŷ − s*.
fn scalar_lambda() -> (bool, String) {
    let topo = NetworkTopology::build(&[1, 1], true).unwrap();
    let (w, b, x, y) = (0.8, 0.3, 0.5, 0.2);
    let mut p = NetworkParams::zeros(topo.len());
    p.set(1, 0, w);
    p.set(1, 2, b);
    let setup = GradcheckSetup::new(topo, Nonlinearity::relu());
    match lambda_check(&setup, &p, &[x], &[y], 1e-4) {
        Ok(rep) => {
            let expected = y - (w * x + b);
            let rel = (rep.lambda_hat[0] - expected).abs() / expected.abs();
            (rel <= 0.01, format!("scalar λ rel. error = {rel:.2e}"))
        }
        Err(e) => (false, format!("scalar case: {e}")),
    }
}

fn energy_descent() -> Verdict {
    let topo = NetworkTopology::build(&[2, 3, 2], true).unwrap();
    let k = preset("fig3-relu").unwrap().neuron;
    let mut rng = RngSpec::new(11, RngSpec::WEIGHTS).rng();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..100 {
        let act = if i % 2 == 0 {
            Nonlinearity::relu()
        } else {
            Nonlinearity::liffi(k, DerivativeMode::Exact).unwrap()
        };
        let mut p = init_weights(&topo, &mut rng, 1.0).unwrap();
        p.symmetrize(&topo);
        let mut st = RateState::new(&topo, rng.gen_range(0.0..1.0));
        st.set_inputs(&topo, &[rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
            .unwrap();
        let cfg = RelaxConfig {
            record_trace: true,
            ..RelaxConfig::fixed(k.tau / 15.0, 20.0 * k.tau, k.tau)
        };
        let report = match relax(&topo, &p, &act, &mut st, &cfg) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        for w in report.trace.unwrap().windows(2) {
            worst = worst.max(w[1].energy - w[0].energy);
        }
    }
    Verdict::new(
        worst <= 1e-9,
        format!("largest per-step energy increase = {worst:.2e}"),
    )
}

fn rate_correspondence() -> Verdict {
    let k = preset("fig3-relu").unwrap().neuron;
    let mut ok = true;
    let mut detail = Vec::new();
    for (dt, tol) in [(1.0, 0.10), (0.01, 0.01)] {
        let mut worst: f64 = 0.0;
        for v in [25.0, 30.0, 40.0, 60.0] {
            let rel = match simulated_rate(v, &k, dt, 20_000.0) {
                Ok(r) => (r - liffi(v, &k)).abs() / liffi(v, &k),
                Err(e) => return fail(e),
            };
            worst = worst.max(rel);
        }
        ok &= worst <= tol;
        detail.push(format!("dt {dt}: max rel. error {worst:.2e}"));
    }
    Verdict::new(ok, detail.join(", "))
}

fn launch(
    name: &str,
    root: &Path,
    tweak: impl FnOnce(&mut ExperimentConfig),
) -> eqprop::Result<RunSummary> {
    let mut cfg = preset(name)?;
    tweak(&mut cfg);
    cfg.output.dir = root.join(name);
    fs::create_dir_all(&cfg.output.dir).map_err(|e| eqprop::Error::Io {
        path: cfg.output.dir.clone(),
        source: e,
    })?;
    run(&cfg)
}

fn rate_learning(
    relu: &eqprop::Result<RunSummary>,
    nohidden: &eqprop::Result<RunSummary>,
    liffi_run: &eqprop::Result<RunSummary>,
) -> Verdict {
    let (r, n, l) = match (relu, nohidden, liffi_run) {
        (Ok(r), Ok(n), Ok(l)) => (r, n, l),
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return fail(e),
    };
    let a = r.final_eval_error < 0.5 * n.final_eval_error;
    let b = r.final_eval_error * 5.0 <= r.initial_eval_error;
    let b_liffi = l.final_eval_error * 5.0 <= l.initial_eval_error;
    Verdict::new(
        a && b && b_liffi,
        format!(
            "relu {:.4} -> {:.4}, no-hidden {:.4}, liffi {:.4} -> {:.4}",
            r.initial_eval_error,
            r.final_eval_error,
            n.final_eval_error,
            l.initial_eval_error,
            l.final_eval_error
        ),
    )
}

fn spiking_learning(
    hidden: &eqprop::Result<RunSummary>,
    nohidden: &eqprop::Result<RunSummary>,
    seconds: f64,
) -> Verdict {
    let (h, n) = match (hidden, nohidden) {
        (Ok(h), Ok(n)) => (h, n),
        (Err(e), _) | (_, Err(e)) => return fail(e),
    };
    let improved = h.final_eval_error * 2.0 <= h.initial_eval_error;
    let beats = h.final_eval_error < n.final_eval_error;
    Verdict::new(
        improved && beats && seconds <= 600.0,
        format!(
            "hidden {:.4} -> {:.4}, no-hidden {:.4}, {seconds:.0} s",
            h.initial_eval_error, h.final_eval_error, n.final_eval_error
        ),
    )
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    [METRICS_FILE, WEIGHTS_FILE]
        .iter()
        .all(|f| match (fs::read(a.join(f)), fs::read(b.join(f))) {
            (Ok(x), Ok(y)) => x == y,
            _ => false,
        })
}

fn determinism(first: &Path, root: &Path) -> Verdict {
    let again = root.join("rerun");
    if let Err(e) = launch("fig3-nohidden", &again, |_| {}) {
        return fail(e);
    }
    let short = |c: &mut ExperimentConfig| {
        c.n_train_samples = 60;
        c.eval_every = 30;
        c.eval_grid_k = 4;
    };
    let spiking = [root.join("spk-a"), root.join("spk-b")];
    for dir in &spiking {
        if let Err(e) = launch("fig5-spiking-small", dir, short) {
            return fail(e);
        }
    }
    let rate_same = same_bytes(&first.join("fig3-nohidden"), &again.join("fig3-nohidden"));
    let spk_same = same_bytes(
        &spiking[0].join("fig5-spiking-small"),
        &spiking[1].join("fig5-spiking-small"),
    );
    Verdict::new(
        rate_same && spk_same,
        format!("fig3-nohidden identical: {rate_same}, short spiking run identical: {spk_same}"),
    )
}

fn invariants() -> Verdict {
    let mut failures = Vec::new();
    let mut rng = RngSpec::new(5, RngSpec::DATA).rng();

    for _ in 0..10_000 {
        let (ri, drive) = (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
        if !(0.0..=1.0).contains(&nudging_factor(ri, drive)) {
            failures.push(format!("nudging factor out of range at ({ri}, {drive})"));
            break;
        }
    }

    for _ in 0..100_000 {
        let s = task::draw(&mut rng).unwrap();
        if !(0.0..=1.0).contains(&s.x) || !(0.0..=1.0).contains(&s.y) {
            failures.push("task sample outside [0,1]".into());
            break;
        }
    }

    let model = RateModel {
        topology: NetworkTopology::build(&[2, 4, 2], true).unwrap(),
        activation: Nonlinearity::relu(),
        tau: 15.0,
        schedule: PhaseSchedule {
            t_forward: 600.0,
            t_backward: 600.0,
            beta: 1.0,
            dt: 1.0,
        },
        initial_state: 0.5,
    };
    let t = &model.topology;
    let rates = LearningRates::new(t, 0.1).unwrap();
    let rho = |s: &RateState| {
        s.s.iter()
            .map(|&v| model.activation.rho(v))
            .collect::<Vec<_>>()
    };
    let mut worst_gap: f64 = 0.0;
    for seed in 0..50 {
        let p0 = init_weights(t, &mut RngSpec::new(seed, RngSpec::WEIGHTS).rng(), 1.0).unwrap();
        let sample = task::draw(&mut rng).unwrap();
        let free = model.forward_phase(&p0, &sample.input()).unwrap();
        let nudged = model
            .backward_phase(&p0, &free.state, &sample.target())
            .unwrap();
        let mut batched = p0.clone();
        contrastive_update(
            t,
            &mut batched,
            &model.activation,
            &free.state,
            &nudged.state,
            &rates,
        );
        let mut online = p0.clone();
        apply_correlation(t, &mut online, &rho(&free.state), &rates, -1.0);
        apply_correlation(t, &mut online, &rho(&nudged.state), &rates, 1.0);
        for (a, b) in batched.as_slice().iter().zip(online.as_slice()) {
            worst_gap = worst_gap.max((a - b).abs());
        }
        let mut trained = p0.clone();
        model
            .train_sample(&mut trained, &sample, &rates, UpdateMode::Online)
            .unwrap();
        if batched.check_mask(t).is_err() || trained.check_mask(t).is_err() {
            failures.push(format!("rate update left the mask (seed {seed})"));
        }
    }
    if worst_gap > 1e-12 {
        failures.push(format!("online/batched gap {worst_gap:.2e}"));
    }

    let k = preset("fig5-spiking-small").unwrap().neuron;
    let code = PopulationCode::new(2).unwrap();
    let st_topo = NetworkTopology::build(&code.layer_sizes(&[5]), true).unwrap();
    let sched = PhaseSchedule {
        t_forward: 200.0,
        t_backward: 200.0,
        beta: 1.0,
        dt: 1.0,
    };
    let spiking = SpikingModel::new(st_topo.clone(), code, k, sched, false).unwrap();
    let srates = LearningRates::new(&st_topo, 1e-4).unwrap();
    let mut min_gap = f64::INFINITY;
    for seed in 0..20 {
        let mut p = init_weights(
            &st_topo,
            &mut RngSpec::new(seed, RngSpec::WEIGHTS).rng(),
            2.0,
        )
        .unwrap();
        let mut st = spiking.new_state().with_spike_log();
        let sample = make_sample(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)).unwrap();
        spiking
            .run_trial(&mut p, &mut st, &sample, &srates, None)
            .unwrap();
        if p.check_mask(&st_topo).is_err() {
            failures.push(format!("spiking update left the mask (seed {seed})"));
        }
        for times in st.spikes.as_ref().unwrap() {
            for w in times.windows(2) {
                min_gap = min_gap.min(w[1] - w[0]);
            }
        }
    }
    if min_gap < k.delta - 0.5 * sched.dt {
        failures.push(format!(
            "inter-spike interval {min_gap} below refractory period"
        ));
    }

    let passed = failures.is_empty();
    let detail = if passed {
        format!("online/batched gap {worst_gap:.1e}, min inter-spike interval {min_gap} ms")
    } else {
        failures.join("; ")
    };
    Verdict::new(passed, detail)
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let started = Instant::now();

    let (trained, spiking_seconds) = thread::scope(|s| {
        let rate: Vec<_> = ["fig3-relu", "fig3-nohidden", "fig3-liffi"]
            .into_iter()
            .map(|name| s.spawn(move || launch(name, root, |_| {})))
            .collect();
        let spiking: Vec<_> = ["fig5-spiking-small", "fig5-spiking-small-nohidden"]
            .into_iter()
            .map(|name| {
                s.spawn(move || {
                    let t = Instant::now();
                    (launch(name, root, |_| {}), t.elapsed().as_secs_f64())
                })
            })
            .collect();
        let rate: Vec<_> = rate.into_iter().map(|h| h.join().unwrap()).collect();
        let spiking: Vec<_> = spiking.into_iter().map(|h| h.join().unwrap()).collect();
        let seconds = spiking[0].1;
        (
            rate.into_iter()
                .chain(spiking.into_iter().map(|x| x.0))
                .collect::<Vec<_>>(),
            seconds,
        )
    });

    let (c1, c2) = gradient_criteria();
    let verdicts = [
        ("1 gradient estimate vs oracle", c1),
        ("2 lambda identification", c2),
        ("3 energy descent", energy_descent()),
        ("4 LIF rate correspondence", rate_correspondence()),
        (
            "5 rate learning",
            rate_learning(&trained[0], &trained[1], &trained[2]),
        ),
        (
            "6 spiking learning",
            spiking_learning(&trained[3], &trained[4], spiking_seconds),
        ),
        ("7 determinism", determinism(root, root)),
        ("8 invariants", invariants()),
    ];

    let mut all = true;
    for (name, v) in &verdicts {
        all &= v.passed;
        println!(
            "{} criterion {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!(
        "acceptance finished in {:.0} s",
        started.elapsed().as_secs_f64()
    );
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
