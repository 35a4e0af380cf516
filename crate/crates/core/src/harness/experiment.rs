//! Twin experiments: a truth run observed without noise, a free run, and a
//! roster of filters cycling forecasts and analyses on copies of one initial
//! ensemble.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::config::{
    Basis, ExperimentConfig, FilterSpec, LorenzSetup, ModelConfig, ObservationTemplate, SamplerChoice,
    ShallowWaterSetup, Variant,
};
use crate::analysis::{
    enkf_analysis, sd_analysis_augmented, sd_analysis_few_points, sd_analysis_full_obs, sd_analysis_one_var_full,
    ObservationSpec, PerturbedObservations, Scenario,
};
use crate::dynamics::{make_initial_conditions, InitialCondition, Model, SW_VARIABLES};
use crate::ensemble::{
    sample_covariance, taper_covariance, Ensemble, GaussianSampler, TaperedSnapshotSampler, DENSE_COVARIANCE_LIMIT,
};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::transforms::{BlockTransform, Shape, SpectralTransform};

/// `sqrt(mean((estimate - truth)^2))`.
pub fn rmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::dims("RMSE operands", truth.len(), estimate.len()));
    }
    if truth.is_empty() {
        return Err(Error::invalid("RMSE of empty vectors"));
    }
    let sum: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sum / truth.len() as f64).sqrt())
}

/// RMSE of each variable block.
fn rmse_per_variable(estimate: &[f64], truth: &[f64], variables: usize) -> Result<Vec<f64>> {
    let block = truth.len() / variables;
    estimate
        .chunks_exact(block)
        .zip(truth.chunks_exact(block))
        .map(|(e, t)| rmse(e, t))
        .collect()
}

fn model_of(cfg: &ExperimentConfig) -> Box<dyn Model> {
    match &cfg.model {
        ModelConfig::Lorenz96(l) => Box::new(l.dynamics.clone()),
        ModelConfig::ShallowWater(s) => Box::new(s.grid.clone()),
    }
}

fn cycle_steps(cfg: &ExperimentConfig) -> Result<usize> {
    match &cfg.model {
        ModelConfig::Lorenz96(l) => Ok(l.dynamics.steps_per_cycle),
        ModelConfig::ShallowWater(s) => s.steps(cfg.cycle_length, "cycle_length"),
    }
}

/// Observation of `state` described by the configured template.
pub fn observe_truth(cfg: &ExperimentConfig, state: &[f64]) -> Result<ObservationSpec> {
    let n = cfg.block_len();
    let first = &state[..n];
    match &cfg.observation {
        ObservationTemplate::Full { variance } => {
            ObservationSpec::full_state(DVector::from_column_slice(state), *variance)
        }
        ObservationTemplate::FirstVariable { variance } => {
            ObservationSpec::first_variable(DVector::from_column_slice(first), *variance)
        }
        ObservationTemplate::Points { indices, variance } => {
            let data = DVector::from_iterator(indices.len(), indices.iter().map(|&i| first[i]));
            ObservationSpec::selection(indices, n, *variance, data)
        }
        ObservationTemplate::Region { start, count, variance } => {
            let indices: Vec<usize> = (*start..start + count).collect();
            let data = DVector::from_column_slice(&first[*start..start + count]);
            ObservationSpec::partial_region(indices, n, *variance, data)
        }
    }
}

/// Truth states at the analysis times and the noise-free data taken from them.
#[derive(Clone, Debug)]
pub struct TruthRun {
    /// Truth before spin-up.
    pub initial: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub data: Vec<ObservationSpec>,
}

fn draw_lorenz_state<R: Rng + ?Sized>(setup: &LorenzSetup, rng: &mut R) -> Result<Vec<f64>> {
    let normal = Normal::new(setup.init_mean, setup.init_variance.sqrt())
        .map_err(|e| Error::Config(format!("initial distribution: {e}")))?;
    Ok((0..setup.dynamics.dim).map(|_| normal.sample(rng)).collect())
}

/// Truth trajectory for one realization. Lorenz 96 truths start from an
/// independent draw per realization; the shallow-water truth is the same in
/// every realization.
pub fn generate_truth_and_data(cfg: &ExperimentConfig, realization: usize) -> Result<TruthRun> {
    let model = model_of(cfg);
    let (initial, lead_steps) = match &cfg.model {
        ModelConfig::Lorenz96(l) => {
            let mut rng = substream(cfg.seeds.truth, &[realization as u64]);
            (draw_lorenz_state(l, &mut rng)?, l.spinup_steps)
        }
        ModelConfig::ShallowWater(s) => (
            make_initial_conditions(&s.grid, InitialCondition::Truth).to_vector(),
            s.steps(s.spinup + s.relax, "spinup + relax")?,
        ),
    };
    let steps = cycle_steps(cfg)?;
    let mut state = initial.clone();
    model.advance(&mut state, lead_steps)?;
    let mut states = Vec::with_capacity(cfg.cycles);
    let mut data = Vec::with_capacity(cfg.cycles);
    for c in 0..cfg.cycles {
        if c > 0 {
            model.advance(&mut state, steps)?;
        }
        data.push(observe_truth(cfg, &state)?);
        states.push(state.clone());
    }
    Ok(TruthRun { initial, states, data })
}

fn advance_ensemble(model: &dyn Model, e: &Ensemble, steps: usize) -> Result<Ensemble> {
    let mut m = e.matrix().clone();
    let n = m.nrows();
    m.as_mut_slice()
        .par_chunks_mut(n)
        .try_for_each(|member| model.advance(member, steps))?;
    Ensemble::new(m)
}

/// Members drawn componentwise from the initial distribution and spun up,
/// and a free run started from their sample mean.
pub fn init_lorenz_ensemble<R: Rng + ?Sized>(
    setup: &LorenzSetup,
    size: usize,
    rng: &mut R,
) -> Result<(Ensemble, Vec<f64>)> {
    let columns: Vec<Vec<f64>> = (0..size)
        .map(|_| draw_lorenz_state(setup, rng))
        .collect::<Result<_>>()?;
    let initial = Ensemble::from_columns(&columns)?;
    let mut free: Vec<f64> = initial.mean().iter().copied().collect();
    setup.dynamics.advance(&mut free, setup.spinup_steps)?;
    Ok((advance_ensemble(&setup.dynamics, &initial, setup.spinup_steps)?, free))
}

#[derive(Clone, Debug)]
enum SamplerImpl {
    Dense(GaussianSampler),
    Kronecker(TaperedSnapshotSampler),
}

/// Background state at the end of spin-up and the factorized background
/// covariance `B = C_N o T` estimated from background-run snapshots.
#[derive(Clone, Debug)]
pub struct Background {
    pub state: Vec<f64>,
    pub snapshots: usize,
    sampler: SamplerImpl,
}

impl Background {
    /// `count` draws from `N(0, B)`.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Ensemble> {
        match &self.sampler {
            SamplerImpl::Dense(s) => s.sample(count, rng),
            SamplerImpl::Kronecker(s) => s.sample(count, rng),
        }
    }

    pub fn uses_dense_sampler(&self) -> bool {
        matches!(self.sampler, SamplerImpl::Dense(_))
    }
}

/// Run the background initial condition through the snapshot window.
pub fn shallow_water_background(setup: &ShallowWaterSetup) -> Result<Background> {
    let grid = &setup.grid;
    let spinup = setup.steps(setup.spinup, "spinup")?;
    let start = setup.steps(setup.snapshot_start, "snapshot_start")?;
    let end = setup.steps(setup.snapshot_end, "snapshot_end")?;
    let stride = setup.steps(setup.snapshot_stride, "snapshot_stride")?;
    if stride == 0 || end < start {
        return Err(Error::Config(
            "snapshot window must be nonempty with a positive stride".into(),
        ));
    }
    let mut state = make_initial_conditions(grid, InitialCondition::Background).to_vector();
    let mut at_spinup = None;
    let mut snapshots = Vec::new();
    let last = end.max(spinup);
    for step in 0..=last {
        if step == spinup {
            at_spinup = Some(state.clone());
        }
        if step >= start && step <= end && (step - start) % stride == 0 {
            snapshots.push(state.clone());
        }
        if step < last {
            grid.step(&mut state)?;
        }
    }
    let snapshot_ensemble = Ensemble::from_columns(&snapshots)?;
    let dims = (grid.nx, grid.ny);
    let n = snapshot_ensemble.state_len();
    let dense = match setup.sampler {
        SamplerChoice::Auto => n <= DENSE_COVARIANCE_LIMIT,
        SamplerChoice::Dense => true,
        SamplerChoice::Kronecker => false,
    };
    let sampler = if dense {
        let c = sample_covariance(&snapshot_ensemble)?;
        let b = taper_covariance(&c, &setup.taper, dims, SW_VARIABLES)?;
        SamplerImpl::Dense(GaussianSampler::new(&b)?)
    } else {
        SamplerImpl::Kronecker(TaperedSnapshotSampler::new(
            &snapshot_ensemble,
            &setup.taper,
            dims,
            SW_VARIABLES,
        )?)
    };
    Ok(Background {
        state: at_spinup.expect("spin-up step lies in the simulated range"),
        snapshots: snapshots.len(),
        sampler,
    })
}

/// Background state plus draws from `N(0, B)`, each advanced through the
/// relaxation period; the free run is the unperturbed background advanced
/// the same way.
pub fn init_shallow_water_ensemble<R: Rng + ?Sized>(
    setup: &ShallowWaterSetup,
    background: &Background,
    size: usize,
    rng: &mut R,
) -> Result<(Ensemble, Vec<f64>)> {
    let draws = background.sample(size, rng)?;
    let mut members = draws.into_matrix();
    for mut col in members.column_iter_mut() {
        col += DVector::from_column_slice(&background.state);
    }
    let relax = setup.steps(setup.relax, "relax")?;
    let ensemble = advance_ensemble(&setup.grid, &Ensemble::new(members)?, relax)?;
    let mut free = background.state.clone();
    setup.grid.advance(&mut free, relax)?;
    Ok((ensemble, free))
}

/// RMSE history of one filter in one realization. After divergence every
/// entry is `+inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterTrace {
    /// `[cycle][variable]`
    pub forecast: Vec<Vec<f64>>,
    pub analysis: Vec<Vec<f64>>,
    /// Cycle (zero-based) at which the filter diverged.
    pub diverged_at: Option<usize>,
    /// Wall-clock seconds of each analysis (not part of the deterministic output).
    pub analysis_seconds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RealizationRecord {
    /// Free-run RMSE, `[cycle][variable]`.
    pub free: Vec<Vec<f64>>,
    /// Largest relative change of total water mass along the free run
    /// (shallow water only).
    pub free_mass_drift: Option<f64>,
    /// One trace per roster entry, in roster order.
    pub filters: Vec<FilterTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    pub realizations: Vec<RealizationRecord>,
}

/// Mean and standard error over realizations.
fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 || !mean.is_finite() {
        return (mean, if mean.is_finite() { 0.0 } else { f64::INFINITY });
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl ExperimentRecord {
    pub fn filter_index(&self, label: &str) -> Option<usize> {
        let spec: FilterSpec = label.parse().ok()?;
        self.config.roster.iter().position(|f| *f == spec)
    }

    fn index(&self, label: &str) -> usize {
        self.filter_index(label)
            .unwrap_or_else(|| panic!("filter {label} is not in the roster"))
    }

    /// Mean analysis RMSE of `variable` at `cycle` over realizations, with its standard error.
    pub fn analysis_rmse(&self, label: &str, cycle: usize, variable: usize) -> (f64, f64) {
        let f = self.index(label);
        mean_and_se(self.realizations.iter().map(|r| r.filters[f].analysis[cycle][variable]))
    }

    pub fn forecast_rmse(&self, label: &str, cycle: usize, variable: usize) -> (f64, f64) {
        let f = self.index(label);
        mean_and_se(self.realizations.iter().map(|r| r.filters[f].forecast[cycle][variable]))
    }

    pub fn free_rmse(&self, cycle: usize, variable: usize) -> (f64, f64) {
        mean_and_se(self.realizations.iter().map(|r| r.free[cycle][variable]))
    }

    /// Number of realizations in which the filter diverged at or before `cycle`.
    pub fn diverged_count(&self, label: &str, cycle: usize) -> usize {
        let f = self.index(label);
        self.realizations
            .iter()
            .filter(|r| r.filters[f].diverged_at.is_some_and(|c| c <= cycle))
            .count()
    }

    pub fn max_free_mass_drift(&self) -> Option<f64> {
        self.realizations
            .iter()
            .filter_map(|r| r.free_mass_drift)
            .reduce(f64::max)
    }
}

/// Per-experiment objects shared by all realizations.
struct Context {
    model: Box<dyn Model>,
    steps: usize,
    transforms: Vec<Option<BlockTransform>>,
    background: Option<Background>,
}

fn block_transform(cfg: &ExperimentConfig, basis: Basis) -> Result<BlockTransform> {
    let kind = basis.kind(&cfg.transform);
    let shape = match &cfg.model {
        ModelConfig::Lorenz96(l) => Shape::Line(l.dynamics.dim),
        ModelConfig::ShallowWater(s) => Shape::Grid {
            nx: s.grid.nx,
            ny: s.grid.ny,
        },
    };
    BlockTransform::new(SpectralTransform::new(kind, shape)?, cfg.variables())
}

fn apply_filter(
    filter: FilterSpec,
    transform: Option<&BlockTransform>,
    e: &Ensemble,
    obs: &ObservationSpec,
    perturbed: &PerturbedObservations,
    inflation: f64,
) -> Result<Ensemble> {
    let e = e.inflate(inflation)?;
    let FilterSpec::Spectral { variant, .. } = filter else {
        return enkf_analysis(&e, obs, perturbed);
    };
    let t = transform.expect("spectral filters carry a transform");
    match (variant, obs.scenario()) {
        (Variant::Selection, Scenario::PartialRegion { .. }) => {
            let points = obs.region_as_points()?;
            sd_analysis_few_points(&e, &points, t, &perturbed.explicit_for(obs))
        }
        (_, Scenario::FullState { .. }) => sd_analysis_full_obs(&e, obs, t, perturbed),
        (_, Scenario::FirstVariable { .. }) => sd_analysis_one_var_full(&e, obs, t, perturbed),
        (_, Scenario::FewPoints { .. }) => sd_analysis_few_points(&e, obs, t, perturbed),
        (_, Scenario::PartialRegion { .. }) => sd_analysis_augmented(&e, obs, t, perturbed),
    }
}

fn is_divergence(err: &Error) -> bool {
    matches!(err, Error::Blowup(_) | Error::Cfl(_))
}

struct FilterRun {
    ensemble: Ensemble,
    trace: FilterTrace,
}

impl FilterRun {
    fn diverge(&mut self, cycle: usize, variables: usize) {
        self.trace.diverged_at = Some(cycle);
        let inf = vec![f64::INFINITY; variables];
        self.trace.forecast.truncate(cycle);
        self.trace.analysis.truncate(cycle);
        self.trace.forecast.push(inf.clone());
        self.trace.analysis.push(inf);
    }
}

fn run_realization(cfg: &ExperimentConfig, ctx: &Context, realization: usize) -> Result<RealizationRecord> {
    let variables = cfg.variables();
    let size = cfg.ensemble_size;
    let truth = generate_truth_and_data(cfg, realization)?;
    let mut rng = substream(cfg.seeds.ensemble, &[realization as u64]);
    let (initial, mut free) = match &cfg.model {
        ModelConfig::Lorenz96(l) => init_lorenz_ensemble(l, size, &mut rng)?,
        ModelConfig::ShallowWater(s) => {
            let background = ctx.background.as_ref().expect("background is built for shallow water");
            init_shallow_water_ensemble(s, background, size, &mut rng)?
        }
    };
    let mass = |state: &[f64]| -> f64 { state[..cfg.block_len()].iter().sum() };
    let shallow = matches!(cfg.model, ModelConfig::ShallowWater(_));
    let (reference_mass, mut drift) = match (&cfg.model, &ctx.background) {
        (ModelConfig::ShallowWater(_), Some(b)) => (mass(&b.state), 0.0f64),
        _ => (0.0, 0.0),
    };

    let mut runs: Vec<FilterRun> = cfg
        .roster
        .iter()
        .map(|_| FilterRun {
            ensemble: initial.clone(),
            trace: FilterTrace {
                forecast: Vec::new(),
                analysis: Vec::new(),
                diverged_at: None,
                analysis_seconds: Vec::new(),
            },
        })
        .collect();
    let mut free_trace = Vec::with_capacity(cfg.cycles);

    for cycle in 0..cfg.cycles {
        let truth_state = &truth.states[cycle];
        if cycle > 0 {
            ctx.model.advance(&mut free, ctx.steps)?;
        }
        if shallow {
            drift = drift.max((mass(&free) - reference_mass).abs() / reference_mass);
        }
        let free_rmse = rmse_per_variable(&free, truth_state, variables)?;
        let free_total = rmse(&free, truth_state)?;
        free_trace.push(free_rmse.clone());

        let obs = &truth.data[cycle];
        let shared = obs.perturb(
            size,
            &mut substream(cfg.seeds.perturbations, &[realization as u64, cycle as u64]),
        )?;

        for (fi, (filter, run)) in cfg.roster.iter().zip(runs.iter_mut()).enumerate() {
            if *filter == FilterSpec::Free {
                run.trace.forecast.push(free_rmse.clone());
                run.trace.analysis.push(free_rmse.clone());
                continue;
            }
            if run.trace.diverged_at.is_some() {
                run.trace.forecast.push(vec![f64::INFINITY; variables]);
                run.trace.analysis.push(vec![f64::INFINITY; variables]);
                continue;
            }
            if cycle > 0 {
                match advance_ensemble(ctx.model.as_ref(), &run.ensemble, ctx.steps) {
                    Ok(e) => run.ensemble = e,
                    Err(err) if is_divergence(&err) => {
                        run.diverge(cycle, variables);
                        continue;
                    }
                    Err(err) => return Err(err),
                }
            }
            let forecast_mean: Vec<f64> = run.ensemble.mean().iter().copied().collect();
            run.trace
                .forecast
                .push(rmse_per_variable(&forecast_mean, truth_state, variables)?);

            let own;
            let perturbed = if cfg.shared_perturbations {
                &shared
            } else {
                let path = [realization as u64, cycle as u64, fi as u64 + 1];
                own = obs.perturb(size, &mut substream(cfg.seeds.perturbations, &path))?;
                &own
            };
            let started = Instant::now();
            let result = apply_filter(
                *filter,
                ctx.transforms[fi].as_ref(),
                &run.ensemble,
                obs,
                perturbed,
                cfg.inflation,
            );
            run.trace.analysis_seconds.push(started.elapsed().as_secs_f64());
            let analysis = match result {
                Ok(a) => a,
                Err(err) if is_divergence(&err) => {
                    run.diverge(cycle, variables);
                    continue;
                }
                Err(err) => return Err(err),
            };
            let mean: Vec<f64> = analysis.mean().iter().copied().collect();
            let total = rmse(&mean, truth_state)?;
            if !total.is_finite() || total > cfg.divergence_factor * free_total {
                run.diverge(cycle, variables);
                continue;
            }
            run.trace
                .analysis
                .push(rmse_per_variable(&mean, truth_state, variables)?);
            run.ensemble = analysis;
        }
    }
    Ok(RealizationRecord {
        free: free_trace,
        free_mass_drift: shallow.then_some(drift),
        filters: runs.into_iter().map(|r| r.trace).collect(),
    })
}

/// Run every realization of the configured twin experiment.
pub fn run_twin_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let transforms = cfg
        .roster
        .iter()
        .map(|f| match f {
            FilterSpec::Spectral { basis, .. } => block_transform(cfg, *basis).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    let background = match &cfg.model {
        ModelConfig::ShallowWater(s) => Some(shallow_water_background(s)?),
        ModelConfig::Lorenz96(_) => None,
    };
    let ctx = Context {
        model: model_of(cfg),
        steps: cycle_steps(cfg)?,
        transforms,
        background,
    };
    let realizations = (0..cfg.realizations)
        .into_par_iter()
        .map(|r| run_realization(cfg, &ctx, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentRecord {
        config: cfg.clone(),
        realizations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ShallowWaterConfig;
    use crate::ensemble::TaperSpec;
    use nalgebra::DMatrix;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.7; 5], &[0.0; 5]).unwrap() - 0.7).abs() < 1e-15);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn identity_observation_data_is_the_truth() {
        let cfg = ExperimentConfig {
            cycles: 3,
            ..ExperimentConfig::default()
        };
        let run = generate_truth_and_data(&cfg, 0).unwrap();
        assert_eq!(run.states.len(), 3);
        for (state, data) in run.states.iter().zip(&run.data) {
            assert_eq!(data.data().as_slice(), state.as_slice());
        }
    }

    #[test]
    fn point_observation_data_selects_truth_components() {
        let cfg = ExperimentConfig {
            cycles: 2,
            roster: vec![],
            observation: ObservationTemplate::Points {
                indices: vec![3, 100, 255],
                variance: 0.04,
            },
            ..ExperimentConfig::default()
        };
        let run = generate_truth_and_data(&cfg, 1).unwrap();
        for (state, data) in run.states.iter().zip(&run.data) {
            let expected = [state[3], state[100], state[255]];
            assert_eq!(data.data().as_slice(), &expected);
        }
    }

    #[test]
    fn spin_up_is_one_thousand_steps_of_ten_seconds() {
        let setup = LorenzSetup::default();
        assert_eq!(setup.spinup_steps as f64 * setup.dynamics.dt, 10.0);
    }

    fn tiny_grid() -> ShallowWaterSetup {
        ShallowWaterSetup {
            grid: ShallowWaterConfig {
                nx: 8,
                ny: 8,
                dx: 1.2e6,
                dt: 40.0,
                bump_width: 4.0,
                background_offset: [1.0, 0.0],
                ..ShallowWaterConfig::desk()
            },
            spinup: 1200.0,
            snapshot_start: 1200.0,
            snapshot_end: 4800.0,
            snapshot_stride: 240.0,
            relax: 240.0,
            taper: TaperSpec::default(),
            sampler: SamplerChoice::Dense,
        }
    }

    #[test]
    fn zero_background_covariance_gives_identical_members() {
        let setup = tiny_grid();
        let state = make_initial_conditions(&setup.grid, InitialCondition::Background).to_vector();
        let n = state.len();
        let background = Background {
            state: state.clone(),
            snapshots: 0,
            sampler: SamplerImpl::Dense(GaussianSampler::new(&DMatrix::zeros(n, n)).unwrap()),
        };
        let (e, free) = init_shallow_water_ensemble(&setup, &background, 5, &mut substream(4, &[])).unwrap();
        for member in e.members() {
            assert_eq!(member, free.as_slice());
        }
    }

    #[test]
    fn background_spread_matches_covariance_diagonal() {
        let setup = tiny_grid();
        let background = shallow_water_background(&setup).unwrap();
        assert!(background.uses_dense_sampler());
        assert_eq!(background.snapshots, 16);

        let draws = background.sample(200, &mut substream(9, &[])).unwrap();
        let c = sample_covariance(&draws).unwrap();
        let cells = setup.grid.cell_count();

        let mut states = Vec::new();
        let mut state = make_initial_conditions(&setup.grid, InitialCondition::Background).to_vector();
        for step in 0..=120 {
            if step >= 30 && (step - 30) % 6 == 0 {
                states.push(state.clone());
            }
            setup.grid.step(&mut state).unwrap();
        }
        let b = taper_covariance(
            &sample_covariance(&Ensemble::from_columns(&states).unwrap()).unwrap(),
            &setup.taper,
            (8, 8),
            SW_VARIABLES,
        )
        .unwrap();
        let target: f64 = (0..cells).map(|i| b[(i, i)]).sum::<f64>() / cells as f64;
        let empirical: f64 = (0..cells).map(|i| c[(i, i)]).sum::<f64>() / cells as f64;
        assert!(target > 0.0);
        assert!((empirical / target - 1.0).abs() < 0.2, "{empirical} vs {target}");
    }

    #[test]
    fn kronecker_and_dense_backgrounds_agree_in_distribution() {
        let dense = shallow_water_background(&tiny_grid()).unwrap();
        let kron = shallow_water_background(&ShallowWaterSetup {
            sampler: SamplerChoice::Kronecker,
            ..tiny_grid()
        })
        .unwrap();
        assert!(!kron.uses_dense_sampler());
        assert_eq!(dense.state, kron.state);
        let spread = |b: &Background| {
            let c = sample_covariance(&b.sample(400, &mut substream(5, &[])).unwrap()).unwrap();
            (0..64).map(|i| c[(i, i)]).sum::<f64>()
        };
        let (d, k) = (spread(&dense), spread(&kron));
        assert!((d / k - 1.0).abs() < 0.2, "{d} vs {k}");
    }

    #[test]
    fn free_roster_entry_tracks_the_free_run() {
        let cfg = ExperimentConfig {
            roster: vec![FilterSpec::Free, "DCT".parse().unwrap()],
            cycles: 3,
            realizations: 2,
            ..ExperimentConfig::default()
        };
        let rec = run_twin_experiment(&cfg).unwrap();
        for r in &rec.realizations {
            assert_eq!(r.filters[0].analysis, r.free);
            assert_eq!(r.filters[0].forecast, r.free);
            assert_eq!(r.filters[1].analysis.len(), 3);
            assert!(r.free_mass_drift.is_none());
        }
    }

    #[test]
    fn perfect_observations_pin_the_analysis_mean() {
        let cfg = ExperimentConfig {
            roster: vec!["DCT".parse().unwrap()],
            cycles: 2,
            realizations: 1,
            observation: ObservationTemplate::Full { variance: 1e-12 },
            ..ExperimentConfig::default()
        };
        let rec = run_twin_experiment(&cfg).unwrap();
        for c in 0..2 {
            let (a, _) = rec.analysis_rmse("DCT", c, 0);
            assert!(a < 1e-4, "cycle {c}: {a}");
        }
    }

    #[test]
    fn independent_perturbation_streams_change_the_result() {
        let base = ExperimentConfig {
            roster: vec!["DCT".parse().unwrap(), "DST".parse().unwrap()],
            cycles: 2,
            realizations: 1,
            ..ExperimentConfig::default()
        };
        let shared = run_twin_experiment(&base).unwrap();
        let own = run_twin_experiment(&ExperimentConfig {
            shared_perturbations: false,
            ..base
        })
        .unwrap();
        assert_eq!(shared.realizations[0].free, own.realizations[0].free);
        assert_ne!(
            shared.realizations[0].filters[0].analysis,
            own.realizations[0].filters[0].analysis
        );
    }

    #[test]
    fn divergence_marks_the_remaining_cycles() {
        let cfg = ExperimentConfig {
            roster: vec!["DCT".parse().unwrap()],
            cycles: 3,
            realizations: 1,
            divergence_factor: 1e-9,
            ..ExperimentConfig::default()
        };
        let rec = run_twin_experiment(&cfg).unwrap();
        let trace = &rec.realizations[0].filters[0];
        assert_eq!(trace.diverged_at, Some(0));
        assert!(trace.analysis.iter().all(|v| v[0] == f64::INFINITY));
        assert_eq!(trace.analysis.len(), 3);
        assert_eq!(rec.diverged_count("DCT", 2), 1);
    }
}
