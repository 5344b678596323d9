mod common;

use common::*;
use prefix_sls::invariants::{instance_rng, random_instance, Dims};
use prefix_sls::solver::Backend;
use prefix_sls::synth::{synth_h2, synth_l1, Formulation, SynthOptions};
use prefix_sls::{admire_model, fault_language, uniform, AdmireFault, Error};

fn opts(backend: Backend) -> SynthOptions {
    SynthOptions { backend, ..SynthOptions::default() }
}

#[test]
fn h2_oracle_terminal_gains_vanish() {
    let (a, r) = (1.3, 0.7);
    let (best, k) = h2_scalar_oracle(a, 1.0, 1.0, r);
    for k10 in [-0.5, -0.1, 0.1, 0.5] {
        for k11 in [-0.5, 0.0, 0.5] {
            assert!(h2_scalar_cost(a, 1.0, 1.0, r, [k[0], k10, k11]) > best);
        }
    }
}

#[test]
fn h2_scalar_matches_oracle() {
    for (a, r) in [(0.5, 1.0), (1.2, 0.3), (-0.8, 2.0), (2.0, 0.1)] {
        let (want, _) = h2_scalar_oracle(a, 1.0, 1.0, r);
        for backend in [Backend::Dense, Backend::Sparse] {
            let sol = synth_h2(
                &scalar_model(a, 1.0, 1.0, 1),
                &single_signal(1),
                &unit_gaussian(1, 1, 1),
                &identity_cost(1, 1, 1, r),
                &opts(backend),
            )
            .unwrap();
            let rel = (sol.objective - want).abs() / want;
            assert!(rel < 1e-6, "a={a} r={r} {backend:?}: {} vs {want}", sol.objective);
        }
    }
}

#[test]
fn l1_scalar_matches_vertex_enumeration() {
    for (a, b, c, wb, vb) in [(0.9, 1.0, 1.0, 1.0, 0.5), (1.5, 0.7, 1.2, 0.3, 1.0), (-1.1, 1.0, -0.6, 1.0, 0.1)] {
        let want = l1_scalar_oracle(a, b, c, wb, vb);
        for backend in [Backend::Dense, Backend::Sparse] {
            let sol = synth_l1(&scalar_model(a, b, c, 2), &single_signal(2), &bounded(wb, vb), &opts(backend)).unwrap();
            assert!((sol.objective - want).abs() < 1e-7, "{backend:?}: {} vs {want}", sol.objective);
        }
    }
}

#[test]
fn formulations_agree_on_random_instances() {
    let dims = Dims::Random { max_n: 2, max_p: 2, max_m: 2, max_horizon: 3 };
    for i in 0..4 {
        let inst = random_instance(&mut instance_rng(11, i), dims);
        let lang = uniform(&inst.language).unwrap();
        let (n, p, m, t) = (inst.model.n(), inst.model.p(), inst.model.m(), inst.model.horizon());
        let noise = unit_gaussian(2, n, m);
        let cost = identity_cost(t, n, p, 1.0);
        let run = |f: Formulation| {
            let o = SynthOptions { formulation: f, ..SynthOptions::default() };
            let h2 = synth_h2(&inst.model, &lang, &noise, &cost, &o).unwrap().objective;
            let l1 = synth_l1(&inst.model, &lang, &bounded(1.0, 0.5), &o).unwrap().objective;
            (h2, l1)
        };
        let (s, e) = (run(Formulation::Shared), run(Formulation::Explicit));
        assert!((s.0 - e.0).abs() <= 1e-6 * s.0.abs().max(1.0), "h2 {s:?} {e:?}");
        assert!((s.1 - e.1).abs() <= 1e-6 * s.1.abs().max(1.0), "l1 {s:?} {e:?}");
    }
}

#[test]
fn backends_agree_on_admire() {
    let model = admire_model(AdmireFault::Sensor, 2);
    let lang = uniform(&fault_language(2, true)).unwrap();
    let dense = synth_l1(&model, &lang, &bounded(1.0, 0.5), &opts(Backend::Dense)).unwrap();
    let sparse = synth_l1(&model, &lang, &bounded(1.0, 0.5), &opts(Backend::Sparse)).unwrap();
    assert!((dense.objective - sparse.objective).abs() < 1e-6 * dense.objective);
    let noise = unit_gaussian(2, 3, 3);
    let cost = identity_cost(2, 3, 4, 1.0);
    let dense = synth_h2(&model, &lang, &noise, &cost, &opts(Backend::Dense)).unwrap();
    let sparse = synth_h2(&model, &lang, &noise, &cost, &opts(Backend::Sparse)).unwrap();
    assert!((dense.objective - sparse.objective).abs() < 1e-6 * dense.objective);
}

#[test]
fn delay_is_monotone_on_sensor_fault() {
    let t = 4;
    let model = admire_model(AdmireFault::Sensor, t);
    let lang = uniform(&fault_language(t, true)).unwrap();
    let mut last = (0.0f64, 0.0f64);
    for d in [0, 1, 2, t + 1] {
        let o = SynthOptions::with_delay(d);
        let h2 = synth_h2(&model, &lang, &unit_gaussian(2, 3, 3), &identity_cost(t, 3, 4, 1.0), &o).unwrap();
        let l1 = synth_l1(&model, &lang, &bounded(1.0, 0.5), &o).unwrap();
        assert!(h2.objective >= last.0 - 1e-6 * last.0.max(1.0), "h2 d={d}");
        assert!(l1.objective >= last.1 - 1e-6 * last.1.max(1.0), "l1 d={d}");
        last = (h2.objective, l1.objective);
    }
}

#[test]
fn drift_with_long_delay_is_infeasible() {
    let t = 3;
    let model = admire_model(AdmireFault::Drift, t);
    let lang = uniform(&fault_language(t, true)).unwrap();
    let err = synth_l1(&model, &lang, &bounded(1.0, 0.5), &SynthOptions::with_delay(2)).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_)), "{err:?}");
}
