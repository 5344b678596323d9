//! Randomized self-checks of the response parametrization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blockmat::{BlockGrid, BlockLTMatrix, Matrix};
use crate::error::Result;
use crate::language::{build_prefix_tree, fault_language, prefixes_equal, SwitchingLanguage};
use crate::par::{map_range, Execution};
use crate::scenario::Scenario;
use crate::sls::{check_affine, closed_loop_response, recover_controller, PrefixController, SystemResponse};
use crate::system::{ModeDynamics, SwitchedModel};

/// Tolerance for equality of truncated maps.
pub const TRUNCATION_TOL: f64 = 1e-8;
/// Tolerance for the round trip and for achievability residuals.
pub const ROUND_TRIP_TOL: f64 = 1e-9;
/// Size of the injected perturbation and the residual that must expose it.
pub const INJECTION_SIZE: f64 = 1e-3;
pub const INJECTION_DETECT: f64 = 1e-6;

/// Instance dimensions: fixed, or drawn uniformly up to the given caps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Dims {
    Fixed { n: usize, p: usize, m: usize, horizon: usize, modes: usize },
    Random { max_n: usize, max_p: usize, max_m: usize, max_horizon: usize },
}

impl Default for Dims {
    fn default() -> Self {
        Dims::Random { max_n: 3, max_p: 3, max_m: 3, max_horizon: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    /// Worst value of the checked quantity over all instances.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// A random switched model and its fault language.
#[derive(Clone, Debug)]
pub struct Instance {
    pub model: SwitchedModel,
    pub language: SwitchingLanguage,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

pub fn instance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn random_instance(rng: &mut ChaCha8Rng, dims: Dims) -> Instance {
    let (n, p, m, horizon, modes) = match dims {
        Dims::Fixed { n, p, m, horizon, modes } => (n, p, m, horizon, modes.max(2)),
        Dims::Random { max_n, max_p, max_m, max_horizon } => (
            rng.random_range(1..=max_n),
            rng.random_range(1..=max_p),
            rng.random_range(1..=max_m),
            rng.random_range(0..=max_horizon),
            2,
        ),
    };
    let modes = (0..modes)
        .map(|_| ModeDynamics {
            a: uniform_matrix(rng, n, n, 0.9 / (n as f64).sqrt()),
            b: uniform_matrix(rng, n, p, 1.0),
            c: uniform_matrix(rng, m, n, 1.0),
        })
        .collect();
    let model = SwitchedModel::new(modes, horizon).expect("random model is well formed");
    let language = fault_language(horizon, rng.random::<bool>());
    Instance { model, language }
}

pub fn random_gain(rng: &mut ChaCha8Rng, horizon: usize, p: usize, m: usize) -> BlockLTMatrix {
    let mut k = BlockLTMatrix::zeros(BlockGrid::uniform(horizon, p, m));
    for t in 0..=horizon {
        for tau in 0..=t {
            k.set_block(t, tau, &uniform_matrix(rng, p, m, 0.5)).expect("block shape");
        }
    }
    k
}

pub fn random_prefix_controller(rng: &mut ChaCha8Rng, inst: &Instance, delay: usize) -> PrefixController {
    let tree = build_prefix_tree(&inst.language, delay).expect("fault language builds a tree");
    let (p, m) = (inst.model.p(), inst.model.m());
    let gains = tree.nodes().iter().map(|node| uniform_matrix(rng, p, m * (node.depth + 1), 0.5)).collect();
    PrefixController::new(tree, p, m, gains).expect("gain shapes match the tree")
}

struct Tally {
    failures: usize,
    worst: f64,
    detail: String,
}

/// `smallest` selects checks whose quantity must stay above the tolerance.
fn collect(name: &str, tolerance: f64, smallest: bool, results: Vec<Result<Tally>>) -> CheckOutcome {
    let instances = results.len();
    let mut out = CheckOutcome {
        name: name.into(),
        instances,
        failures: 0,
        worst: if smallest { f64::INFINITY } else { 0.0 },
        tolerance,
        detail: String::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => {
                out.failures += t.failures;
                out.worst = if smallest { out.worst.min(t.worst) } else { out.worst.max(t.worst) };
                if !t.detail.is_empty() && out.detail.is_empty() {
                    out.detail = format!("instance {i}: {}", t.detail);
                }
            }
            Err(e) => {
                out.failures += 1;
                if out.detail.is_empty() {
                    out.detail = format!("instance {i}: {e}");
                }
            }
        }
    }
    if out.worst.is_infinite() {
        out.worst = 0.0;
    }
    out
}

fn responses(inst: &Instance, ctrl: &PrefixController) -> Result<Vec<SystemResponse>> {
    (0..inst.language.len())
        .map(|s| closed_loop_response(&inst.model, inst.language.signal(s), &ctrl.gain_for_index(s)?))
        .collect()
}

/// Prefix-consistent gains give responses whose truncations agree on shared
/// prefixes, and the truncated controllers recovered from those agree too.
pub fn check_forward(instances: usize, seed: u64, dims: Dims, exec: Execution) -> CheckOutcome {
    let results = map_range(exec, instances, |i| {
        let mut rng = instance_rng(seed, i);
        let inst = random_instance(&mut rng, dims);
        let ctrl = random_prefix_controller(&mut rng, &inst, 0);
        let phis = responses(&inst, &ctrl)?;
        let mut tally = Tally { failures: 0, worst: 0.0, detail: String::new() };
        let lang = &inst.language;
        for a in 0..lang.len() {
            for b in a + 1..lang.len() {
                for t in 0..=inst.model.horizon() {
                    if !prefixes_equal(lang.signal(a), lang.signal(b), t) {
                        break;
                    }
                    let dphi = phis[a].truncate(t)?.max_abs_diff(&phis[b].truncate(t)?);
                    let ka = recover_controller(&phis[a].truncate(t)?)?;
                    let kb = recover_controller(&phis[b].truncate(t)?)?;
                    let dk = ka.max_abs_diff(&kb);
                    let worst = dphi.max(dk);
                    tally.worst = tally.worst.max(worst);
                    if worst > TRUNCATION_TOL {
                        tally.failures += 1;
                        tally.detail = format!("signals {a},{b} at t={t}: deviation {worst:.3e}");
                    }
                }
            }
        }
        Ok(tally)
    });
    collect("prefix consistency: shared gains give shared responses", TRUNCATION_TOL, false, results)
}

/// Gains that differ in block row `t` on a shared prefix give responses whose
/// truncations at `t` differ; `worst` records the smallest such gap.
pub fn check_reverse(instances: usize, seed: u64, dims: Dims, exec: Execution) -> CheckOutcome {
    let results = map_range(exec, instances, |i| {
        let mut rng = instance_rng(seed, i);
        let inst = random_instance(&mut rng, dims);
        let (model, lang) = (&inst.model, &inst.language);
        let horizon = model.horizon();
        let mut tally = Tally { failures: 0, worst: f64::INFINITY, detail: String::new() };
        for a in 0..lang.len() {
            for b in a + 1..lang.len() {
                let Some(shared) =
                    (0..=horizon).take_while(|&t| prefixes_equal(lang.signal(a), lang.signal(b), t)).last()
                else {
                    continue;
                };
                let t = rng.random_range(0..=shared);
                let ka = random_gain(&mut rng, horizon, model.p(), model.m());
                let mut kb = ka.clone();
                let row = rng.random_range(0..=t);
                let bump = uniform_matrix(&mut rng, model.p(), model.m(), 1.0).add_scalar(2.0);
                let block = kb.block(t, row) + bump;
                kb.set_block(t, row, &block)?;
                let pa = closed_loop_response(model, lang.signal(a), &ka)?.truncate(t)?;
                let pb = closed_loop_response(model, lang.signal(b), &kb)?.truncate(t)?;
                let gap = pa.max_abs_diff(&pb);
                tally.worst = tally.worst.min(gap);
                if gap <= TRUNCATION_TOL {
                    tally.failures += 1;
                    tally.detail = format!("signals {a},{b} at t={t}: gains differ but responses agree");
                }
            }
        }
        Ok(tally)
    });
    collect("prefix consistency: differing gains give differing responses", TRUNCATION_TOL, true, results)
}

/// `recover_controller(closed_loop_response(K)) = K` and the responses are
/// achievable.
pub fn check_round_trip(instances: usize, seed: u64, dims: Dims, exec: Execution) -> CheckOutcome {
    let results = map_range(exec, instances, |i| {
        let mut rng = instance_rng(seed, i);
        let inst = random_instance(&mut rng, dims);
        let s = rng.random_range(0..inst.language.len());
        let sigma = inst.language.signal(s);
        let k = random_gain(&mut rng, inst.model.horizon(), inst.model.p(), inst.model.m());
        let phi = closed_loop_response(&inst.model, sigma, &k)?;
        let back = recover_controller(&phi)?.max_abs_diff(&k);
        let affine = check_affine(&phi, &inst.model, sigma)?;
        let worst = back.max(affine);
        Ok(Tally {
            failures: usize::from(worst >= ROUND_TRIP_TOL),
            worst,
            detail: if worst >= ROUND_TRIP_TOL {
                format!("gain error {back:.3e}, affine residual {affine:.3e}")
            } else {
                String::new()
            },
        })
    });
    collect("round trip and achievability", ROUND_TRIP_TOL, false, results)
}

/// A single perturbed response entry must show up in the affine residual.
pub fn check_injection(instances: usize, seed: u64, dims: Dims, exec: Execution) -> CheckOutcome {
    let results = map_range(exec, instances, |i| {
        let mut rng = instance_rng(seed, i);
        let inst = random_instance(&mut rng, dims);
        let sigma = inst.language.signal(0);
        let k = random_gain(&mut rng, inst.model.horizon(), inst.model.p(), inst.model.m());
        let mut phi = closed_loop_response(&inst.model, sigma, &k)?;
        let which = rng.random_range(0..4);
        let map = match which {
            0 => &mut phi.xx,
            1 => &mut phi.xy,
            2 => &mut phi.ux,
            _ => &mut phi.uy,
        };
        let horizon = inst.model.horizon();
        let t = rng.random_range(0..=horizon);
        let tau = rng.random_range(0..=t);
        let mut block = map.block(t, tau).into_owned();
        let (r, c) = (rng.random_range(0..block.nrows()), rng.random_range(0..block.ncols()));
        block[(r, c)] += INJECTION_SIZE;
        map.set_block(t, tau, &block)?;
        let residual = check_affine(&phi, &inst.model, sigma)?;
        Ok(Tally {
            failures: usize::from(residual <= INJECTION_DETECT),
            worst: residual,
            detail: if residual <= INJECTION_DETECT {
                format!("perturbation of map {which} block ({t},{tau}) went unnoticed")
            } else {
                String::new()
            },
        })
    });
    collect("perturbed responses are rejected", INJECTION_DETECT, true, results)
}

pub fn check_scenario_round_trip(scenario: &Scenario) -> CheckOutcome {
    let again = Scenario::from_json(&scenario.to_json());
    let ok = matches!(&again, Ok(s) if s == scenario && s.config_hash() == scenario.config_hash());
    CheckOutcome {
        name: "scenario round trip".into(),
        instances: 1,
        failures: usize::from(!ok),
        worst: 0.0,
        tolerance: 0.0,
        detail: if ok { String::new() } else { "parse of the serialized scenario differs".into() },
    }
}

/// Dimensions of a scenario's model with the horizon capped for speed.
pub fn dims_of(model: &SwitchedModel, max_horizon: usize) -> Dims {
    Dims::Fixed {
        n: model.n(),
        p: model.p(),
        m: model.m(),
        horizon: model.horizon().min(max_horizon),
        modes: model.num_modes(),
    }
}

/// Every check above on `instances` random instances each.
pub fn run_suite(instances: usize, seed: u64, dims: Dims, scenario: Option<&Scenario>) -> Vec<CheckOutcome> {
    let exec = Execution::Parallel;
    let mut out = vec![
        check_forward(instances, seed, dims, exec),
        check_reverse(instances, seed, dims, exec),
        check_round_trip(instances, seed, dims, exec),
        check_injection(instances, seed, dims, exec),
    ];
    if let Some(sc) = scenario {
        out.push(check_scenario_round_trip(sc));
    }
    out
}
