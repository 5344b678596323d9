//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on failure.
//! Positional arguments filter criteria by substring.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use prefix_sls::invariants::{
    check_forward, check_injection, check_reverse, check_round_trip, instance_rng, random_instance, Dims,
};
use prefix_sls::sim::row_witness;
use prefix_sls::synth::{
    memoryless_l1, nominal_h2, synth_h2, synth_l1, Formulation, MemorylessOptions, SynthOptions, SynthesisSolution,
};
use prefix_sls::{
    admire_model, fault_language, monte_carlo, simulate, uniform, worst_case_state_norm, AdmireFault, BoundedNoise,
    BoundedSampling, CampaignOptions, CostSpec, Error, Execution, Matrix, NoiseSpec, SwitchedModel, SwitchingLanguage,
};

type Verdict = (bool, String);
type Criterion = (&'static str, fn() -> Verdict);

const ADMIRE_T: usize = 10;

fn admire(fault: AdmireFault) -> (SwitchedModel, SwitchingLanguage) {
    let lang = uniform(&fault_language(ADMIRE_T, false)).expect("fault language is non-empty");
    (admire_model(fault, ADMIRE_T), lang)
}

fn admire_h2_setup() -> (NoiseSpec, CostSpec) {
    let cost = CostSpec::constant(ADMIRE_T, Matrix::identity(3, 3), Matrix::identity(4, 4) * 2.0).unwrap();
    (unit_gaussian(2, 3, 3), cost)
}

fn unit_bounds() -> BoundedNoise {
    BoundedNoise::new(1.0, 1.0).unwrap()
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn peak(states: &[nalgebra::DVector<f64>]) -> f64 {
    states.iter().map(|x| x.amax()).fold(0.0, f64::max)
}

fn prefix_consistency_suite() -> Verdict {
    let started = Instant::now();
    let dims = Dims::default();
    let outcomes = [
        check_forward(200, 1, dims, Execution::Parallel),
        check_reverse(200, 2, dims, Execution::Parallel),
        check_injection(200, 3, dims, Execution::Parallel),
    ];
    let elapsed = started.elapsed();
    let ok = outcomes.iter().all(|o| o.passed()) && elapsed < Duration::from_secs(60);
    let parts: Vec<String> = outcomes
        .iter()
        .map(|o| format!("{} {}/{} worst {:.2e}", o.name, o.instances - o.failures, o.instances, o.worst))
        .collect();
    (ok, format!("{}; {:.1}s", parts.join(", "), elapsed.as_secs_f64()))
}

fn round_trip() -> Verdict {
    let o = check_round_trip(200, 4, Dims::default(), Execution::Parallel);
    (
        o.passed(),
        format!("{}/{} pass, worst {:.2e} (tol {:.0e})", o.instances - o.failures, o.instances, o.worst, o.tolerance),
    )
}

fn formulation_equivalence() -> Verdict {
    let dims = Dims::Random { max_n: 3, max_p: 3, max_m: 3, max_horizon: 4 };
    let explicit = SynthOptions { formulation: Formulation::Explicit, ..SynthOptions::default() };
    let shared = SynthOptions::default();
    let (mut worst, mut failures) = ([0.0f64; 2], Vec::new());
    for i in 0..20 {
        let inst = random_instance(&mut instance_rng(5, i), dims);
        let lang = uniform(&inst.language).unwrap();
        let (n, p, m, t) = (inst.model.n(), inst.model.p(), inst.model.m(), inst.model.horizon());
        let noise = unit_gaussian(2, n, m);
        let cost = identity_cost(t, n, p, 1.0);
        let h2 = |o: &SynthOptions| synth_h2(&inst.model, &lang, &noise, &cost, o).map(|s| s.objective);
        let l1 = |o: &SynthOptions| synth_l1(&inst.model, &lang, &bounded(1.0, 0.5), o).map(|s| s.objective);
        for (k, pair) in [(h2(&shared), h2(&explicit)), (l1(&shared), l1(&explicit))].into_iter().enumerate() {
            match pair {
                (Ok(a), Ok(b)) => {
                    let g = rel_gap(a, b);
                    worst[k] = worst[k].max(g);
                    if g > 1e-6 {
                        failures.push(format!("{}#{i}", ["h2", "l1"][k]));
                    }
                }
                (a, b) => failures.push(format!("{}#{i}: {:?} / {:?}", ["h2", "l1"][k], a.err(), b.err())),
            }
        }
    }
    (
        failures.is_empty(),
        format!("20 H2 + 20 L1, worst rel gap h2 {:.2e} l1 {:.2e}; failures {:?}", worst[0], worst[1], failures),
    )
}

fn h2_correctness() -> Verdict {
    let mut worst = 0.0f64;
    for (a, r) in [(0.5, 1.0), (1.2, 0.3), (-0.8, 2.0), (2.0, 0.1)] {
        let (want, _) = h2_scalar_oracle(a, 1.0, 1.0, r);
        let got = synth_h2(
            &scalar_model(a, 1.0, 1.0, 1),
            &single_signal(1),
            &unit_gaussian(1, 1, 1),
            &identity_cost(1, 1, 1, r),
            &SynthOptions::default(),
        )
        .map(|s| s.objective)
        .unwrap_or(f64::NAN);
        worst = worst.max(rel_gap(got, want)).max(if got.is_nan() { f64::INFINITY } else { 0.0 });
    }

    let (model, lang) = (scalar_model(1.2, 1.0, 1.0, 1), single_signal(1));
    let (noise, cost) = (unit_gaussian(1, 1, 1), identity_cost(1, 1, 1, 0.3));
    let sol = synth_h2(&model, &lang, &noise, &cost, &SynthOptions::default()).unwrap();
    let opts = CampaignOptions { runs: 100_000, seed: 2024, ..CampaignOptions::default() };
    let camp = monte_carlo(&model, &lang, &sol.controller, &noise, Some(&cost), &opts).unwrap();
    let total = camp.per_signal[0].total_cost.expect("cost given");
    let z = (total.mean - sol.objective).abs() / total.std_error();
    (
        worst <= 1e-6 && z <= 3.0,
        format!(
            "oracle worst rel gap {worst:.2e}; MC mean {:.5} vs objective {:.5} ({z:.2} SE, 1e5 runs)",
            total.mean, sol.objective
        ),
    )
}

fn l1_certificate(sol: &SynthesisSolution, model: &SwitchedModel, lang: &SwitchingLanguage) -> (f64, f64) {
    let bounds = unit_bounds();
    let mut sim_max = 0.0f64;
    for (s, sigma) in lang.signals().iter().enumerate() {
        let rows = sol.responses[s].xx.dense().nrows();
        for row in 0..rows {
            let d = row_witness(&sol.responses[s], &bounds, row);
            let tr = simulate(model, sigma, &sol.controller, &d).unwrap();
            sim_max = sim_max.max(peak(&tr.states));
        }
    }
    let witness_max = sim_max;
    let opts = CampaignOptions { runs: 1000, seed: 99, sampling: BoundedSampling::Interior, ..Default::default() };
    let camp = monte_carlo(model, lang, &sol.controller, &NoiseSpec::Bounded(bounds), None, &opts).unwrap();
    for st in &camp.per_signal {
        sim_max = sim_max.max(st.state_inf_norm.max.iter().copied().fold(0.0, f64::max));
    }
    (witness_max, sim_max)
}

fn l1_correctness() -> Verdict {
    let mut worst = 0.0f64;
    for (a, b, c, wb, vb) in [(0.9, 1.0, 1.0, 1.0, 0.5), (1.5, 0.7, 1.2, 0.3, 1.0), (-1.1, 1.0, -0.6, 1.0, 0.1)] {
        let want = l1_scalar_oracle(a, b, c, wb, vb);
        let got = synth_l1(&scalar_model(a, b, c, 2), &single_signal(2), &bounded(wb, vb), &SynthOptions::default())
            .map(|s| s.objective)
            .unwrap_or(f64::INFINITY);
        worst = worst.max((got - want).abs());
    }

    let (model, lang) = admire(AdmireFault::Sensor);
    let sol = synth_l1(&model, &lang, &NoiseSpec::Bounded(unit_bounds()), &SynthOptions::default()).unwrap();
    let (witness_max, sim_max) = l1_certificate(&sol, &model, &lang);
    let bound = sol.objective;
    let ok = worst <= 1e-7 && sim_max <= bound + 1e-6 && witness_max >= bound - 1e-6;
    (
        ok,
        format!(
            "oracle worst abs gap {worst:.2e}; sensor T=10 bound {bound:.10}, max simulated {sim_max:.10}, \
             best witness {witness_max:.10} over {} signals",
            lang.len()
        ),
    )
}

fn drift_h2_ordering() -> Verdict {
    let (model, lang) = admire(AdmireFault::Drift);
    let (noise, cost) = admire_h2_setup();
    let started = Instant::now();
    let sol = synth_h2(&model, &lang, &noise, &cost, &SynthOptions::default()).unwrap();
    let elapsed = started.elapsed();
    let base = nominal_h2(&model, &lang, &noise, &cost, &SynthOptions::default()).unwrap();
    let opts = CampaignOptions { runs: 1000, seed: 7, ..Default::default() };
    let mc = |k| monte_carlo(&model, &lang, k, &noise, Some(&cost), &opts).unwrap().mixture.total_cost_mean.unwrap();
    let (prefix_mc, base_mc) = (mc(&sol.controller), mc(&base.controller));
    let ok = sol.objective < base.objective && prefix_mc < base_mc && elapsed < Duration::from_secs(300);
    (
        ok,
        format!(
            "objective {:.4} < nominal {:.4}; MC mean {prefix_mc:.4} < {base_mc:.4}; synthesis {:.2}s",
            sol.objective,
            base.objective,
            elapsed.as_secs_f64()
        ),
    )
}

fn sensor_l1_ordering() -> Verdict {
    let (model, lang) = admire(AdmireFault::Sensor);
    let bounds = unit_bounds();
    let sol = synth_l1(&model, &lang, &NoiseSpec::Bounded(bounds), &SynthOptions::default()).unwrap();
    let base = memoryless_l1(&model, &lang, &bounds, &MemorylessOptions::default()).unwrap();
    let mut exceed = f64::NEG_INFINITY;
    for (s, sigma) in lang.signals().iter().enumerate() {
        let wc = worst_case_state_norm(&base.responses[s], &bounds);
        let tr = simulate(&model, sigma, &base.controller, &wc.witness).unwrap();
        exceed = exceed.max(peak(&tr.states) - sol.objective);
    }
    let ok = base.converged && sol.objective <= base.objective && exceed > 0.0;
    (
        ok,
        format!(
            "prefix {:.10} <= memoryless {:.10} (converged {}, {} sweeps); memoryless witness exceeds bound by {exceed:.3e}",
            sol.objective, base.objective, base.converged, base.sweeps
        ),
    )
}

fn delay_monotonicity() -> Verdict {
    let (noise, cost) = admire_h2_setup();
    let bounds = NoiseSpec::Bounded(unit_bounds());
    let delays = [0, 1, 2, ADMIRE_T + 1];
    let mut ok = true;
    let mut parts = Vec::new();
    for fault in [AdmireFault::Drift, AdmireFault::Sensor] {
        let (model, lang) = admire(fault);
        for problem in ["h2", "l1"] {
            let values: Vec<f64> = delays
                .iter()
                .map(|&d| {
                    let o = SynthOptions::with_delay(d);
                    let r = match problem {
                        "h2" => synth_h2(&model, &lang, &noise, &cost, &o),
                        _ => synth_l1(&model, &lang, &bounds, &o),
                    };
                    match r {
                        Ok(s) => s.objective,
                        Err(Error::Infeasible(_)) => f64::INFINITY,
                        Err(e) => {
                            eprintln!("{fault:?} {problem} d={d}: {e}");
                            f64::NAN
                        }
                    }
                })
                .collect();
            let monotone = values.windows(2).all(|w| w[1] >= w[0] || w[1] >= w[0] - 1e-6 * w[0].abs().max(1.0));
            ok &= monotone && values.iter().all(|v| !v.is_nan());
            let shown: Vec<String> = values.iter().map(|v| format!("{v:.6}")).collect();
            parts.push(format!("{fault:?}/{problem} [{}]", shown.join(", ")));
        }
    }
    (ok, format!("d in {delays:?}: {}", parts.join("; ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("prefix_consistency_suite", prefix_consistency_suite),
        ("sls_round_trip", round_trip),
        ("formulation_equivalence", formulation_equivalence),
        ("h2_correctness", h2_correctness),
        ("l1_correctness", l1_correctness),
        ("drift_h2_ordering", drift_h2_ordering),
        ("sensor_l1_ordering", sensor_l1_ordering),
        ("delay_monotonicity", delay_monotonicity),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let (ok, detail) = check();
        failed += usize::from(!ok);
        println!("{} {name} ({:.1}s): {detail}", if ok { "PASS" } else { "FAIL" }, started.elapsed().as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
