//! Closed-loop rollouts, noise generation, worst-case witnesses and
//! Monte-Carlo campaigns.
//!
//! Random streams come from ChaCha8 (`rand_chacha`): the campaign seed is
//! expanded with `seed_from_u64` and every `(run, signal)` pair gets its own
//! stream id, so results do not depend on scheduling.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blockmat::Matrix;
use crate::error::{Error, Result};
use crate::language::{SwitchingLanguage, SwitchingSignal};
use crate::par::{map_range, Execution};
use crate::sls::{PrefixController, SystemResponse};
use crate::system::{psd_sqrt, BoundedNoise, CostSpec, NoiseSpec, SwitchedModel};

pub type Vector = DVector<f64>;

/// Identifier written to every output file that contains sampled data.
pub const RNG_ALGORITHM: &str = "ChaCha8";

/// Stacked exogenous inputs of one rollout: `w = (x0, w_0, .., w_{T-1})`,
/// `v = (v_0, .., v_T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Disturbance {
    pub w: Vector,
    pub v: Vector,
}

impl Disturbance {
    pub fn zeros(model: &SwitchedModel) -> Self {
        let len = model.horizon() + 1;
        Self { w: Vector::zeros(model.n() * len), v: Vector::zeros(model.m() * len) }
    }

    pub fn stacked(&self) -> Vector {
        let mut out = Vector::zeros(self.w.len() + self.v.len());
        out.rows_mut(0, self.w.len()).copy_from(&self.w);
        out.rows_mut(self.w.len(), self.v.len()).copy_from(&self.v);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    pub signal: SwitchingSignal,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub outputs: Vec<Vector>,
    pub disturbance: Disturbance,
}

impl SimTrace {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    /// `x_t' Q_t x_t + u_t' R_t u_t` for every step.
    pub fn stage_costs(&self, cost: &CostSpec) -> Vec<f64> {
        self.states
            .iter()
            .zip(&self.inputs)
            .enumerate()
            .map(|(t, (x, u))| x.dot(&(cost.q(t) * x)) + u.dot(&(cost.r(t) * u)))
            .collect()
    }

    pub fn state_inf_norms(&self) -> Vec<f64> {
        self.states.iter().map(|x| x.amax()).collect()
    }

    /// `(x; u)` stacked over time, comparable with `response.dense() * (w; v)`.
    pub fn stacked(&self) -> Vector {
        let xs = self.states.iter().flat_map(|x| x.iter().copied());
        let us = self.inputs.iter().flat_map(|u| u.iter().copied());
        Vector::from_iterator(
            self.states.len() * self.states[0].len() + self.inputs.len() * self.inputs[0].len(),
            xs.chain(us),
        )
    }
}

/// Rolls out the closed loop, looking gains up through the controller's
/// prefix tree with the observed (delayed) mode history.
pub fn simulate(
    model: &SwitchedModel,
    sigma: &SwitchingSignal,
    controller: &PrefixController,
    disturbance: &Disturbance,
) -> Result<SimTrace> {
    model.check_signal(sigma)?;
    let (n, p, m, horizon) = (model.n(), model.p(), model.m(), model.horizon());
    if controller.dims() != (p, m) || controller.tree().horizon() != horizon {
        return Err(Error::Dimension("controller does not match the model".into()));
    }
    if disturbance.w.len() != n * (horizon + 1) || disturbance.v.len() != m * (horizon + 1) {
        return Err(Error::Dimension(format!(
            "disturbance lengths ({}, {}) do not match n(T+1)={} and m(T+1)={}",
            disturbance.w.len(),
            disturbance.v.len(),
            n * (horizon + 1),
            m * (horizon + 1)
        )));
    }
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon + 1);
    let mut outputs = Vec::with_capacity(horizon + 1);
    let mut y_hist = Vector::zeros(m * (horizon + 1));
    let mut x = disturbance.w.rows(0, n).into_owned();
    for t in 0..=horizon {
        let dyn_ = model.mode(sigma.mode(t));
        let y = &dyn_.c * &x + disturbance.v.rows(t * m, m);
        y_hist.rows_mut(t * m, m).copy_from(&y);
        let node =
            controller.tree().node_for(sigma, t).ok_or_else(|| Error::UnknownSignal(format!("{sigma} at t={t}")))?;
        let u = controller.node_gain(node) * y_hist.rows(0, m * (t + 1));
        let next = (t < horizon).then(|| &dyn_.a * &x + &dyn_.b * &u + disturbance.w.rows((t + 1) * n, n));
        states.push(std::mem::replace(&mut x, next.unwrap_or_default()));
        inputs.push(u);
        outputs.push(y);
    }
    Ok(SimTrace { signal: sigma.clone(), states, inputs, outputs, disturbance: disturbance.clone() })
}

/// How bounded disturbances are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundedSampling {
    /// Every entry uniform on `[-bar, bar]`.
    #[default]
    Interior,
    /// Every entry `+bar` or `-bar` with equal probability.
    Vertex,
}

/// Stream for one `(run, signal)` pair of a campaign.
pub fn stream_rng(seed: u64, run: usize, signal: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((run as u64) << 20) | signal as u64);
    rng
}

/// Draws disturbances for one signal; Gaussian blocks use cached symmetric
/// square roots of the per-mode covariances.
#[derive(Clone, Debug)]
pub struct NoiseSampler {
    n: usize,
    m: usize,
    horizon: usize,
    kind: SamplerKind,
}

#[derive(Clone, Debug)]
enum SamplerKind {
    Gaussian { x0: Vec<Matrix>, w: Vec<Matrix>, v: Vec<Matrix> },
    Bounded(BoundedNoise, BoundedSampling),
}

impl NoiseSampler {
    pub fn new(model: &SwitchedModel, spec: &NoiseSpec, sampling: BoundedSampling) -> Result<Self> {
        spec.check_model(model)?;
        let kind = match spec {
            NoiseSpec::Gaussian(g) => {
                let modes = 1..=model.num_modes();
                SamplerKind::Gaussian {
                    x0: modes.clone().map(|i| psd_sqrt(g.x0_cov(i))).collect(),
                    w: modes.clone().map(|i| psd_sqrt(g.w_cov(i))).collect(),
                    v: modes.map(|i| psd_sqrt(g.v_cov(i))).collect(),
                }
            }
            NoiseSpec::Bounded(b) => SamplerKind::Bounded(*b, sampling),
        };
        Ok(Self { n: model.n(), m: model.m(), horizon: model.horizon(), kind })
    }

    pub fn sample(&self, sigma: &SwitchingSignal, rng: &mut impl Rng) -> Disturbance {
        let (n, m, len) = (self.n, self.m, self.horizon + 1);
        match &self.kind {
            SamplerKind::Gaussian { x0, w, v } => {
                let mut normal = |k: usize| Vector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                let mut wv = Vector::zeros(n * len);
                let mut vv = Vector::zeros(m * len);
                for t in 0..len {
                    let mode = sigma.mode(t.saturating_sub(1)) - 1;
                    let root = if t == 0 { &x0[sigma.mode(0) - 1] } else { &w[mode] };
                    wv.rows_mut(t * n, n).copy_from(&(root * normal(n)));
                    vv.rows_mut(t * m, m).copy_from(&(&v[sigma.mode(t) - 1] * normal(m)));
                }
                Disturbance { w: wv, v: vv }
            }
            SamplerKind::Bounded(b, sampling) => {
                let mut draw = |bar: f64| match sampling {
                    BoundedSampling::Interior => bar * rng.random_range(-1.0..=1.0),
                    BoundedSampling::Vertex => {
                        if rng.random::<bool>() {
                            bar
                        } else {
                            -bar
                        }
                    }
                };
                let w = Vector::from_fn(n * len, |_, _| draw(b.w_bar));
                let v = Vector::from_fn(m * len, |_, _| draw(b.v_bar));
                Disturbance { w, v }
            }
        }
    }
}

/// One-off draw from a seeded ChaCha8 stream.
pub fn sample_noise(
    model: &SwitchedModel,
    spec: &NoiseSpec,
    sigma: &SwitchingSignal,
    sampling: BoundedSampling,
    seed: u64,
) -> Result<Disturbance> {
    let sampler = NoiseSampler::new(model, spec, sampling)?;
    Ok(sampler.sample(sigma, &mut ChaCha8Rng::seed_from_u64(seed)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstCase {
    pub value: f64,
    /// Row of the stacked state attaining the value.
    pub row: usize,
    pub witness: Disturbance,
}

/// Sign pattern of one row of `[Phi_xx w_bar, Phi_xy v_bar]`, with
/// `sign(0) = +1`.
pub fn row_witness(response: &SystemResponse, bounds: &BoundedNoise, row: usize) -> Disturbance {
    let sign = |x: f64| if x < 0.0 { -1.0 } else { 1.0 };
    let xx = response.xx.dense();
    let xy = response.xy.dense();
    Disturbance {
        w: Vector::from_fn(xx.ncols(), |j, _| bounds.w_bar * sign(xx[(row, j)])),
        v: Vector::from_fn(xy.ncols(), |j, _| bounds.v_bar * sign(xy[(row, j)])),
    }
}

/// Peak state deviation over all admissible disturbances, with the lowest
/// maximizing row and its witness.
pub fn worst_case_state_norm(response: &SystemResponse, bounds: &BoundedNoise) -> WorstCase {
    let xx = response.xx.dense();
    let xy = response.xy.dense();
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..xx.nrows() {
        let s = bounds.w_bar * xx.row(i).abs().sum() + bounds.v_bar * xy.row(i).abs().sum();
        if s > best.1 {
            best = (i, s);
        }
    }
    WorstCase { value: best.1.max(0.0), row: best.0, witness: row_witness(response, bounds, best.0) }
}

/// Per-step ensemble statistics; `std` uses the unbiased estimator (zero for
/// a single run).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub max: Vec<f64>,
    pub max_minus_std: Vec<f64>,
}

impl SeriesStats {
    pub fn from_samples(samples: &[Vec<f64>]) -> Self {
        let len = samples.first().map_or(0, Vec::len);
        let runs = samples.len() as f64;
        let mut out = SeriesStats {
            mean: vec![0.0; len],
            std: vec![0.0; len],
            max: vec![f64::NEG_INFINITY; len],
            max_minus_std: vec![0.0; len],
        };
        for t in 0..len {
            let mean = samples.iter().map(|s| s[t]).sum::<f64>() / runs;
            let ss: f64 = samples.iter().map(|s| (s[t] - mean).powi(2)).sum();
            out.mean[t] = mean;
            out.std[t] = if samples.len() > 1 { (ss / (runs - 1.0)).sqrt() } else { 0.0 };
            out.max[t] = samples.iter().map(|s| s[t]).fold(f64::NEG_INFINITY, f64::max);
            out.max_minus_std[t] = out.max[t] - out.std[t];
        }
        out
    }
}

/// Mean, unbiased standard deviation and maximum of a scalar sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarStats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub runs: usize,
}

impl ScalarStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let runs = samples.len();
        let mean = samples.iter().sum::<f64>() / runs as f64;
        let ss: f64 = samples.iter().map(|s| (s - mean).powi(2)).sum();
        Self {
            mean,
            std: if runs > 1 { (ss / (runs as f64 - 1.0)).sqrt() } else { 0.0 },
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            runs,
        }
    }

    pub fn std_error(&self) -> f64 {
        self.std / (self.runs as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalStats {
    pub signal: usize,
    /// Stage cost per step, when a cost was supplied.
    pub cost: Option<SeriesStats>,
    /// Sum of stage costs over the horizon.
    pub total_cost: Option<ScalarStats>,
    pub state_inf_norm: SeriesStats,
}

/// Ensemble statistics mixed over signal weights: means are weighted, the
/// variance is the mixture variance `sum_s pi_s (var_s + mean_s^2) - mean^2`
/// and the maximum is taken over signals with positive weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureStats {
    pub cost_mean: Option<Vec<f64>>,
    pub cost_std: Option<Vec<f64>>,
    pub total_cost_mean: Option<f64>,
    pub state_inf_norm_mean: Vec<f64>,
    pub state_inf_norm_std: Vec<f64>,
    pub state_inf_norm_max: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CampaignOptions {
    pub runs: usize,
    pub seed: u64,
    pub sampling: BoundedSampling,
    pub execution: Execution,
    pub keep_traces: bool,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        Self {
            runs: 1000,
            seed: 0,
            sampling: BoundedSampling::Interior,
            execution: Execution::Parallel,
            keep_traces: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Campaign {
    pub per_signal: Vec<SignalStats>,
    pub mixture: MixtureStats,
    /// `traces[signal][run]`, when requested.
    pub traces: Option<Vec<Vec<SimTrace>>>,
}

fn mix(weights: &[f64], means: &[&Vec<f64>], stds: &[&Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let len = means[0].len();
    let mut mean = vec![0.0; len];
    let mut second = vec![0.0; len];
    for ((w, m), s) in weights.iter().zip(means).zip(stds) {
        for t in 0..len {
            mean[t] += w * m[t];
            second[t] += w * (s[t] * s[t] + m[t] * m[t]);
        }
    }
    let std = (0..len).map(|t| (second[t] - mean[t] * mean[t]).max(0.0).sqrt()).collect();
    (mean, std)
}

/// Simulates `runs` disturbances for every signal of `lang`. Runs execute
/// independently on their own streams and are aggregated in index order.
pub fn monte_carlo(
    model: &SwitchedModel,
    lang: &SwitchingLanguage,
    controller: &PrefixController,
    spec: &NoiseSpec,
    cost: Option<&CostSpec>,
    opts: &CampaignOptions,
) -> Result<Campaign> {
    if opts.runs == 0 {
        return Err(Error::Config("a campaign needs at least one run".into()));
    }
    let sampler = NoiseSampler::new(model, spec, opts.sampling)?;
    let runs = opts.runs;
    let traces: Vec<SimTrace> = map_range(opts.execution, lang.len() * runs, |k| {
        let (s, run) = (k / runs, k % runs);
        let sigma = lang.signal(s);
        let d = sampler.sample(sigma, &mut stream_rng(opts.seed, run, s));
        simulate(model, sigma, controller, &d)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut per_signal = Vec::with_capacity(lang.len());
    for (s, chunk) in traces.chunks(runs).enumerate() {
        let norms: Vec<Vec<f64>> = chunk.iter().map(SimTrace::state_inf_norms).collect();
        let (cost_stats, total) = match cost {
            Some(c) => {
                let costs: Vec<Vec<f64>> = chunk.iter().map(|tr| tr.stage_costs(c)).collect();
                let totals: Vec<f64> = costs.iter().map(|v| v.iter().sum()).collect();
                (Some(SeriesStats::from_samples(&costs)), Some(ScalarStats::from_samples(&totals)))
            }
            None => (None, None),
        };
        per_signal.push(SignalStats {
            signal: s,
            cost: cost_stats,
            total_cost: total,
            state_inf_norm: SeriesStats::from_samples(&norms),
        });
    }

    let weights: Vec<f64> = match lang.probabilities() {
        Some(p) => p.to_vec(),
        None => vec![1.0 / lang.len() as f64; lang.len()],
    };
    let norm_means: Vec<&Vec<f64>> = per_signal.iter().map(|s| &s.state_inf_norm.mean).collect();
    let norm_stds: Vec<&Vec<f64>> = per_signal.iter().map(|s| &s.state_inf_norm.std).collect();
    let (state_inf_norm_mean, state_inf_norm_std) = mix(&weights, &norm_means, &norm_stds);
    let len = model.horizon() + 1;
    let state_inf_norm_max = (0..len)
        .map(|t| {
            per_signal
                .iter()
                .zip(&weights)
                .filter(|(_, &w)| w > 0.0)
                .map(|(s, _)| s.state_inf_norm.max[t])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let (cost_mean, cost_std, total_cost_mean) = if cost.is_some() {
        let means: Vec<&Vec<f64>> = per_signal.iter().map(|s| &s.cost.as_ref().unwrap().mean).collect();
        let stds: Vec<&Vec<f64>> = per_signal.iter().map(|s| &s.cost.as_ref().unwrap().std).collect();
        let (m, s) = mix(&weights, &means, &stds);
        let total = per_signal.iter().zip(&weights).map(|(s, w)| w * s.total_cost.unwrap().mean).sum();
        (Some(m), Some(s), Some(total))
    } else {
        (None, None, None)
    };

    let traces = opts.keep_traces.then(|| traces.chunks(runs).map(<[SimTrace]>::to_vec).collect());
    Ok(Campaign {
        per_signal,
        mixture: MixtureStats {
            cost_mean,
            cost_std,
            total_cost_mean,
            state_inf_norm_mean,
            state_inf_norm_std,
            state_inf_norm_max,
        },
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockmat::{BlockGrid, BlockLTMatrix};
    use crate::language::{build_prefix_tree, fault_language};
    use crate::sls::closed_loop_response;
    use crate::system::{admire_model, AdmireFault, GaussianNoise};

    fn random_controller(model: &SwitchedModel, lang: &SwitchingLanguage, delay: usize, seed: u64) -> PrefixController {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = build_prefix_tree(lang, delay).unwrap();
        let (p, m) = (model.p(), model.m());
        let gains = tree
            .nodes()
            .iter()
            .map(|node| Matrix::from_fn(p, m * (node.depth + 1), |_, _| rng.random_range(-0.4..0.4)))
            .collect();
        PrefixController::new(tree, p, m, gains).unwrap()
    }

    #[test]
    fn zero_disturbance_gives_zero_trace() {
        let model = admire_model(AdmireFault::Drift, 4);
        let lang = fault_language(4, false);
        let ctrl = random_controller(&model, &lang, 0, 1);
        let tr = simulate(&model, lang.signal(2), &ctrl, &Disturbance::zeros(&model)).unwrap();
        assert!(tr.stacked().amax() == 0.0);
        assert!(tr.outputs.iter().all(|y| y.amax() == 0.0));
    }

    #[test]
    fn rollout_matches_response_map() {
        let model = admire_model(AdmireFault::Sensor, 5);
        let lang = fault_language(5, true);
        for delay in [0, 1] {
            let ctrl = random_controller(&model, &lang, delay, 7 + delay as u64);
            let spec = NoiseSpec::Bounded(BoundedNoise::new(1.0, 0.5).unwrap());
            for s in 0..lang.len() {
                let sigma = lang.signal(s);
                let phi = closed_loop_response(&model, sigma, &ctrl.gain_for_index(s).unwrap()).unwrap();
                let d = sample_noise(&model, &spec, sigma, BoundedSampling::Interior, s as u64).unwrap();
                let tr = simulate(&model, sigma, &ctrl, &d).unwrap();
                let expected = phi.dense() * d.stacked();
                assert!((tr.stacked() - expected).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_controller_is_open_loop() {
        let model = admire_model(AdmireFault::Drift, 3);
        let lang = fault_language(3, false);
        let tree = build_prefix_tree(&lang, 0).unwrap();
        let ctrl =
            PrefixController::from_common_gain(tree, &BlockLTMatrix::zeros(BlockGrid::uniform(3, 4, 3))).unwrap();
        let sigma = lang.signal(1);
        let d = sample_noise(
            &model,
            &NoiseSpec::Bounded(BoundedNoise::new(1.0, 1.0).unwrap()),
            sigma,
            BoundedSampling::Vertex,
            3,
        )
        .unwrap();
        let phi = closed_loop_response(&model, sigma, &BlockLTMatrix::zeros(BlockGrid::uniform(3, 4, 3))).unwrap();
        let tr = simulate(&model, sigma, &ctrl, &d).unwrap();
        let x = Vector::from_iterator(12, tr.states.iter().flat_map(|x| x.iter().copied()));
        assert!((x - phi.xx.dense() * &d.w).amax() < 1e-12);
        assert!(tr.inputs.iter().all(|u| u.amax() == 0.0));
    }

    #[test]
    fn unknown_prefix_is_rejected() {
        let model = admire_model(AdmireFault::Drift, 3);
        let lang = fault_language(3, false);
        let ctrl = random_controller(&model, &lang, 0, 2);
        let nominal = SwitchingSignal::constant(1, 3);
        let err = simulate(&model, &nominal, &ctrl, &Disturbance::zeros(&model)).unwrap_err();
        assert!(matches!(err, Error::UnknownSignal(_)));
    }

    #[test]
    fn vertex_samples_sit_on_the_bounds() {
        let model = admire_model(AdmireFault::Sensor, 4);
        let spec = NoiseSpec::Bounded(BoundedNoise::new(0.3, 2.0).unwrap());
        let sigma = SwitchingSignal::constant(2, 4);
        let d = sample_noise(&model, &spec, &sigma, BoundedSampling::Vertex, 11).unwrap();
        assert!(d.w.iter().all(|x| x.abs() == 0.3));
        assert!(d.v.iter().all(|x| x.abs() == 2.0));
        let d = sample_noise(&model, &spec, &sigma, BoundedSampling::Interior, 11).unwrap();
        assert!(d.w.amax() <= 0.3 && d.v.amax() <= 2.0);
    }

    #[test]
    fn zero_covariance_gives_zero_sample() {
        let model = admire_model(AdmireFault::Drift, 2);
        let spec = NoiseSpec::Gaussian(GaussianNoise::isotropic(2, 3, 3, 0.0).unwrap());
        let d = sample_noise(&model, &spec, &SwitchingSignal::constant(1, 2), BoundedSampling::Interior, 5).unwrap();
        assert_eq!(d.stacked().amax(), 0.0);
    }

    #[test]
    fn gaussian_variance_matches() {
        let model = SwitchedModel::new(
            vec![crate::system::ModeDynamics {
                a: Matrix::from_element(1, 1, 0.5),
                b: Matrix::from_element(1, 1, 1.0),
                c: Matrix::from_element(1, 1, 1.0),
            }],
            0,
        )
        .unwrap();
        let g = GaussianNoise::new(
            vec![Matrix::from_element(1, 1, 2.5)],
            vec![Matrix::from_element(1, 1, 1.0)],
            vec![Matrix::from_element(1, 1, 0.25)],
        )
        .unwrap();
        let sampler = NoiseSampler::new(&model, &NoiseSpec::Gaussian(g), BoundedSampling::Interior).unwrap();
        let sigma = SwitchingSignal::constant(1, 0);
        let n = 100_000;
        let (mut x0, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for run in 0..n {
            let d = sampler.sample(&sigma, &mut stream_rng(9, run, 0));
            x0.push(d.w[0] * d.w[0]);
            v.push(d.v[0] * d.v[0]);
        }
        for (samples, var) in [(x0, 2.5), (v, 0.25)] {
            let st = ScalarStats::from_samples(&samples);
            assert!((st.mean - var).abs() < 3.0 * st.std_error(), "{} vs {var}", st.mean);
        }
    }

    #[test]
    fn witness_attains_worst_case() {
        let model = admire_model(AdmireFault::Sensor, 4);
        let lang = fault_language(4, false);
        let ctrl = random_controller(&model, &lang, 0, 13);
        let bounds = BoundedNoise::new(1.0, 0.7).unwrap();
        for s in 0..lang.len() {
            let sigma = lang.signal(s);
            let phi = closed_loop_response(&model, sigma, &ctrl.gain_for_index(s).unwrap()).unwrap();
            let wc = worst_case_state_norm(&phi, &bounds);
            assert!((wc.value - crate::synth::l1_value(&phi, &bounds)).abs() < 1e-12);
            let tr = simulate(&model, sigma, &ctrl, &wc.witness).unwrap();
            let (t, i) = (wc.row / model.n(), wc.row % model.n());
            assert!((tr.states[t][i].abs() - wc.value).abs() < 1e-9);
            let spec = NoiseSpec::Bounded(bounds);
            for seed in 0..200 {
                let d = sample_noise(&model, &spec, sigma, BoundedSampling::Interior, seed).unwrap();
                let peak =
                    simulate(&model, sigma, &ctrl, &d).unwrap().state_inf_norms().into_iter().fold(0.0, f64::max);
                assert!(peak <= wc.value + 1e-9);
            }
        }
        let zero = worst_case_state_norm(
            &closed_loop_response(&model, lang.signal(0), &ctrl.gain_for_index(0).unwrap()).unwrap(),
            &BoundedNoise::new(0.0, 0.0).unwrap(),
        );
        assert_eq!(zero.value, 0.0);
        assert_eq!(zero.row, 0);
    }

    #[test]
    fn campaign_is_deterministic_and_scheduling_free() {
        let model = admire_model(AdmireFault::Drift, 4);
        let lang = crate::language::uniform(&fault_language(4, false)).unwrap();
        let ctrl = random_controller(&model, &lang, 0, 17);
        let spec = NoiseSpec::Gaussian(GaussianNoise::isotropic(2, 3, 3, 1.0).unwrap());
        let cost = CostSpec::constant(4, Matrix::identity(3, 3), Matrix::identity(4, 4)).unwrap();
        let opts = CampaignOptions { runs: 50, seed: 42, keep_traces: true, ..Default::default() };
        let a = monte_carlo(&model, &lang, &ctrl, &spec, Some(&cost), &opts).unwrap();
        let b = monte_carlo(&model, &lang, &ctrl, &spec, Some(&cost), &opts).unwrap();
        let c = monte_carlo(
            &model,
            &lang,
            &ctrl,
            &spec,
            Some(&cost),
            &CampaignOptions { execution: Execution::Sequential, ..opts },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        // statistics recomputed from the kept traces
        let traces = a.traces.as_ref().unwrap();
        for (s, stats) in a.per_signal.iter().enumerate() {
            let norms: Vec<Vec<f64>> = traces[s].iter().map(SimTrace::state_inf_norms).collect();
            assert_eq!(SeriesStats::from_samples(&norms), stats.state_inf_norm);
        }
        let single =
            monte_carlo(&model, &lang, &ctrl, &spec, Some(&cost), &CampaignOptions { runs: 1, ..opts }).unwrap();
        assert!(single.per_signal.iter().all(|s| s.state_inf_norm.std.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn fault_at_horizon_tracks_nominal() {
        let model = admire_model(AdmireFault::Drift, 4);
        let lang = fault_language(4, true);
        let ctrl = random_controller(&model, &lang, 0, 19);
        let late = lang.signals().iter().position(|s| s.fault_time() == Some(4)).unwrap();
        let nominal = lang.len() - 1;
        let spec = NoiseSpec::Bounded(BoundedNoise::new(1.0, 1.0).unwrap());
        let d = sample_noise(&model, &spec, lang.signal(late), BoundedSampling::Interior, 23).unwrap();
        let a = simulate(&model, lang.signal(late), &ctrl, &d).unwrap();
        let b = simulate(&model, lang.signal(nominal), &ctrl, &d).unwrap();
        for t in 0..4 {
            assert_eq!(a.states[t], b.states[t]);
            assert_eq!(a.inputs[t], b.inputs[t]);
        }
    }
}
