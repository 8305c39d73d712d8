//! Dataset bootstrap and the train → acquire → experiment loop.

use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, ExperimentConfig, PlantTag, RegularizerKind};
use super::metrics::{evaluate, ErrorStats};
use crate::acquisition::{select_input, CandidatePool, PoolProvenance, Selection};
use crate::data::{seeded_rng, Dataset, NeighborhoodSpec, RegPool};
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::model::QlpvModel;
use crate::plants::{make_dataset, random_inputs, OscillatorPlant, Plant};
use crate::sim::Trajectory;
use crate::training::{train, Penalty, RegularizerSpec, TrainLogRecord};

/// The oscillator with the experiment-wide output scaling.
pub fn build_oscillator(cfg: &ExperimentConfig) -> Result<OscillatorPlant> {
    if cfg.plant != PlantTag::Oscillator {
        return Err(Error::Invalid("active learning needs a simulated plant".into()));
    }
    OscillatorPlant::with_pilot_scaler(
        cfg.oscillator_params(),
        cfg.horizon,
        cfg.pilot_size,
        derive_seed(cfg.scaler_seed, "pilot"),
    )
}

#[derive(Debug, Clone)]
pub struct Bootstrap {
    pub plant: OscillatorPlant,
    pub initial: Dataset,
    pub test: Dataset,
    /// Test-set indices kept as the fixed regularization base.
    pub reg_indices: Vec<usize>,
    /// Test-set index of every pool entry, in pool order.
    pub pool_indices: Vec<usize>,
    pub pool: CandidatePool,
    pub theta0: QlpvModel,
}

impl Bootstrap {
    pub fn reg_base(&self) -> Vec<Vec<f64>> {
        self.reg_indices.iter().map(|&i| self.test.trajectories[i].u.clone()).collect()
    }
}

pub fn bootstrap(cfg: &ExperimentConfig, seed: u64) -> Result<Bootstrap> {
    cfg.validate()?;
    let plant = build_oscillator(cfg)?;
    bootstrap_with(cfg, seed, plant)
}

pub(crate) fn bootstrap_with(cfg: &ExperimentConfig, seed: u64, plant: OscillatorPlant) -> Result<Bootstrap> {
    let initial_inputs = random_inputs(&plant, cfg.n_initial, cfg.horizon, &mut seeded_rng(derive_seed(seed, "initial")));
    let test_inputs = random_inputs(&plant, cfg.test_size, cfg.horizon, &mut seeded_rng(derive_seed(seed, "test")));
    let initial = make_dataset(&plant, &initial_inputs)?;
    let test = make_dataset(&plant, &test_inputs)?;
    let mut order: Vec<usize> = (0..cfg.test_size).collect();
    order.shuffle(&mut seeded_rng(derive_seed(seed, "split")));
    let mut reg_indices = order[..cfg.reg_base].to_vec();
    reg_indices.sort_unstable();
    let mut pool_indices = order[cfg.reg_base..cfg.reg_base + cfg.pool_size].to_vec();
    pool_indices.sort_unstable();
    let pool = CandidatePool::new(
        pool_indices.iter().map(|&i| test.trajectories[i].u.clone()).collect(),
        PoolProvenance::TestSet,
        &plant.input_box(),
    )?;
    let theta0 = cfg.train_config(seed).initial_model(cfg.dims()?, cfg.net())?;
    Ok(Bootstrap { plant, initial, test, reg_indices, pool_indices, pool, theta0 })
}

/// Smoothness penalty for the current dataset: the fixed base plus every
/// training input, or neighborhood samples when `epsilon_u < 1`.
pub fn regularizer(cfg: &ExperimentConfig, base: &[Vec<f64>], data: &Dataset, seed: u64) -> Result<RegularizerSpec> {
    if cfg.kappa2 == 0.0 || cfg.regularizer == RegularizerKind::None {
        return Ok(RegularizerSpec { kappa1: cfg.kappa1, kappa2: 0.0, penalty: Penalty::None });
    }
    let base: Vec<Vec<f64>> = if cfg.epsilon_u >= 1.0 {
        base.to_vec()
    } else {
        let nbhd = NeighborhoodSpec::new(cfg.epsilon_u, cfg.input_box()?, true)?;
        let mut rng = seeded_rng(derive_seed(seed, "neighborhood") ^ data.len() as u64);
        nbhd.sample(&data.inputs(), base.len(), &mut rng)?
    };
    let pool = RegPool::dedup(base.into_iter().chain(data.iter().map(|t| t.u.clone())))?;
    let penalty = match cfg.regularizer {
        RegularizerKind::Gradient => Penalty::Gradient(pool),
        RegularizerKind::Manifold => Penalty::Manifold(pool),
        _ => return Err(Error::Invalid("unsupported penalty for the oscillator".into())),
    };
    Ok(RegularizerSpec { kappa1: cfg.kappa1, kappa2: cfg.kappa2, penalty })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub train: f64,
    pub acquire: f64,
    pub experiment: f64,
    pub evaluate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Dataset size the model was trained on.
    pub n: usize,
    /// Parameters training started from.
    pub init_fingerprint: String,
    pub theta_fingerprint: String,
    pub objective: f64,
    /// Undefined (`None`) when every test rollout diverged.
    pub mu_e: Option<f64>,
    pub var_e: Option<f64>,
    pub unstable: usize,
    /// Test-set index of the acquired input.
    pub chosen: Option<usize>,
    pub acquisition_value: Option<f64>,
    /// Whether the plant response to the acquired input left the output box.
    pub violation: Option<bool>,
    pub wall: PhaseTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub config_fingerprint: String,
    pub seed: u64,
    pub acquisition: String,
    pub initial_fingerprint: String,
    pub test_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "state", content = "error")]
pub enum RunStatus {
    Running,
    Complete,
    Aborted(String),
}

/// One line of the run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunLine {
    Header(RunHeader),
    Record(RunRecord),
    Status(RunStatus),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<RunRecord>,
    pub status: RunStatus,
}

impl RunLog {
    /// SHA-256 over the header, the records without wall times, and the
    /// status.
    pub fn fingerprint(&self) -> String {
        let mut view = self.clone();
        for r in &mut view.records {
            r.wall = PhaseTimes::default();
        }
        sha256_hex(serde_json::to_string(&view).expect("run log serializes").as_bytes())
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }

    /// Replays a line-delimited run file.
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut header = None;
        let mut records = Vec::new();
        let mut status = RunStatus::Running;
        for line in file.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<RunLine>(&line)? {
                RunLine::Header(h) => header = Some(h),
                RunLine::Record(r) => records.push(r),
                RunLine::Status(s) => status = s,
            }
        }
        let header = header.ok_or_else(|| Error::Parse(format!("{}: no header line", path.display())))?;
        Ok(RunLog { header, records, status })
    }
}

/// Appends run lines to a file as they are produced.
pub struct RunFile {
    out: std::io::BufWriter<std::fs::File>,
}

impl RunFile {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(RunFile { out: std::io::BufWriter::new(std::fs::File::create(path)?) })
    }

    pub fn append(&mut self, line: &RunLine) -> Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    /// Last trained model.
    pub model: QlpvModel,
    pub data: Dataset,
    /// Optimizer trace per training round, tagged with the dataset size.
    pub train_logs: Vec<(usize, Vec<TrainLogRecord>)>,
}

/// State of one active-learning run between phases.
pub struct Session<'a> {
    pub cfg: &'a ExperimentConfig,
    pub seed: u64,
    pub boot: Bootstrap,
    pub data: Dataset,
    pub pool: CandidatePool,
    pub pool_indices: Vec<usize>,
    pub model: QlpvModel,
    base: Vec<Vec<f64>>,
}

pub struct Trained {
    pub init_fingerprint: String,
    pub objective: f64,
    pub log: Vec<TrainLogRecord>,
}

impl<'a> Session<'a> {
    pub fn new(cfg: &'a ExperimentConfig, seed: u64, boot: Bootstrap) -> Self {
        Session {
            cfg,
            seed,
            data: boot.initial.clone(),
            pool: boot.pool.clone(),
            pool_indices: boot.pool_indices.clone(),
            model: boot.theta0.clone(),
            base: boot.reg_base(),
            boot,
        }
    }

    /// Trains on the current dataset, warm-started from the current model.
    pub fn train(&mut self) -> Result<Trained> {
        let reg = regularizer(self.cfg, &self.base, &self.data, self.seed)?;
        let out = train(&self.data, &reg, &self.cfg.train_config(self.seed), &self.model)?;
        let init_fingerprint = self.model.fingerprint();
        self.model = out.model;
        Ok(Trained { init_fingerprint, objective: out.end.value, log: out.log })
    }

    pub fn evaluate(&self) -> Result<ErrorStats> {
        evaluate(&self.model, &self.boot.test)
    }

    /// Scores the pool with the configured acquisition function.
    pub fn select(&self) -> Result<Selection> {
        let random_seed = derive_seed(self.seed, "random") ^ self.data.len() as u64;
        let kind = self.cfg.acquisition_kind(self.cfg.acquisition, random_seed)?;
        select_input(&self.pool, &kind, &self.model, &self.data, &self.boot.plant.output_box(), self.cfg.aggregation)
    }

    /// Removes pool entry `index`, labels it with the plant and appends it
    /// to the dataset. Returns the test-set index and the violation flag.
    pub fn experiment(&mut self, index: usize) -> Result<(usize, bool)> {
        let u = self.pool.remove(index);
        let test_index = self.pool_indices.remove(index);
        let plant = &self.boot.plant;
        let y = plant.evaluate(&u)?;
        let violated = !plant.output_box().contains_seq(&y);
        self.data.push(Trajectory::new(plant.n_u(), plant.n_y(), u, y)?, violated);
        Ok((test_index, violated))
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn run_active_learning(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    run_active_learning_with(cfg, seed, &mut |_| Ok(()))
}

/// Runs the loop from `N = n_initial` to `N = n_max`, handing every run line
/// to `sink` as soon as it exists. Errors after the bootstrap end the run
/// with an aborted status and the records collected so far.
pub fn run_active_learning_with(
    cfg: &ExperimentConfig,
    seed: u64,
    sink: &mut dyn FnMut(&RunLine) -> Result<()>,
) -> Result<RunOutcome> {
    let boot = bootstrap(cfg, seed)?;
    let header = RunHeader {
        config_fingerprint: cfg.fingerprint(),
        seed,
        acquisition: cfg.acquisition.label().into(),
        initial_fingerprint: boot.initial.fingerprint(),
        test_fingerprint: boot.test.fingerprint(),
    };
    sink(&RunLine::Header(header.clone()))?;
    let mut session = Session::new(cfg, seed, boot);
    let mut records = Vec::new();
    let mut train_logs = Vec::new();
    let status = loop {
        match iteration(&mut session) {
            Ok((record, tlog)) => {
                sink(&RunLine::Record(record.clone()))?;
                let done = record.chosen.is_none();
                train_logs.push((record.n, tlog));
                records.push(record);
                if done {
                    break RunStatus::Complete;
                }
            }
            Err(e) => {
                log::error!("seed {seed}: run aborted at N = {}: {e}", session.data.len());
                break RunStatus::Aborted(e.to_string());
            }
        }
    };
    sink(&RunLine::Status(status.clone()))?;
    Ok(RunOutcome {
        log: RunLog { header, records, status },
        model: session.model,
        data: session.data,
        train_logs,
    })
}

fn iteration(s: &mut Session) -> Result<(RunRecord, Vec<TrainLogRecord>)> {
    let n = s.data.len();
    let mut wall = PhaseTimes::default();
    let t = Instant::now();
    let trained = s.train()?;
    wall.train = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let stats = s.evaluate()?;
    wall.evaluate = t.elapsed().as_secs_f64();
    let mut record = RunRecord {
        n,
        init_fingerprint: trained.init_fingerprint,
        theta_fingerprint: s.model.fingerprint(),
        objective: trained.objective,
        mu_e: finite(stats.mu_e),
        var_e: finite(stats.var_e),
        unstable: stats.unstable,
        chosen: None,
        acquisition_value: None,
        violation: None,
        wall,
    };
    log::info!("seed {} N = {n}: objective {:.6e}, mu_e {:?}", s.seed, record.objective, record.mu_e);
    if n < s.cfg.n_max {
        let t = Instant::now();
        let sel = s.select()?;
        record.wall.acquire = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let (test_index, violated) = s.experiment(sel.index)?;
        record.wall.experiment = t.elapsed().as_secs_f64();
        record.chosen = Some(test_index);
        record.acquisition_value = Some(sel.value);
        record.violation = Some(violated);
    }
    Ok((record, trained.log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::AcquisitionTag;

    pub(crate) fn tiny(acq: AcquisitionTag) -> ExperimentConfig {
        ExperimentConfig {
            n_x: 2,
            n_p: 2,
            net_width: 2,
            horizon: 5,
            n_initial: 3,
            n_max: 5,
            pool_size: 12,
            test_size: 20,
            reg_base: 4,
            path_segments: 3,
            acquisition: acq,
            adam_iters: 20,
            adam_step: 1e-2,
            bfgs_max_iters: 20,
            pilot_size: 10,
            substeps: 200,
            seeds: vec![0, 1],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn bootstrap_is_deterministic_and_disjoint() {
        let cfg = tiny(AcquisitionTag::Ltv);
        let a = bootstrap(&cfg, 3).unwrap();
        let b = bootstrap(&cfg, 3).unwrap();
        assert_eq!(a.initial.fingerprint(), b.initial.fingerprint());
        assert_eq!(a.pool, b.pool);
        assert_eq!(a.initial.len(), 3);
        assert_eq!(a.test.len(), 20);
        assert_eq!(a.pool.len(), 12);
        assert!(a.reg_indices.iter().all(|i| !a.pool_indices.contains(i)));
        for (k, &i) in a.pool_indices.iter().enumerate() {
            assert_eq!(a.pool.entries[k], a.test.trajectories[i].u);
        }
        assert_ne!(bootstrap(&cfg, 4).unwrap().initial.fingerprint(), a.initial.fingerprint());
    }

    #[test]
    fn regularization_pool_is_base_plus_training_inputs() {
        let cfg = tiny(AcquisitionTag::Ltv);
        let boot = bootstrap(&cfg, 0).unwrap();
        let reg = regularizer(&cfg, &boot.reg_base(), &boot.initial, 0).unwrap();
        let Penalty::Manifold(pool) = &reg.penalty else { panic!() };
        assert_eq!(pool.len(), 4 + 3);
        assert_eq!(pool.entries()[..4], boot.reg_base()[..]);
        let off = ExperimentConfig { kappa2: 0.0, ..cfg };
        assert_eq!(regularizer(&off, &boot.reg_base(), &boot.initial, 0).unwrap().penalty, Penalty::None);
    }

    #[test]
    fn no_iterations_when_the_budget_is_spent() {
        let cfg = ExperimentConfig { n_max: 3, ..tiny(AcquisitionTag::Ltv) };
        let out = run_active_learning(&cfg, 0).unwrap();
        assert_eq!(out.log.records.len(), 1);
        assert_eq!(out.log.records[0].chosen, None);
        assert!(out.log.is_complete());
    }

    #[test]
    fn loop_contracts() {
        let cfg = tiny(AcquisitionTag::Ltv);
        let mut lines = Vec::new();
        let out = run_active_learning_with(&cfg, 0, &mut |l| {
            lines.push(l.clone());
            Ok(())
        })
        .unwrap();
        let recs = &out.log.records;
        assert_eq!(recs.iter().map(|r| r.n).collect::<Vec<_>>(), vec![3, 4, 5]);
        assert_eq!(out.data.len(), 5);
        // warm-start lineage
        let boot = bootstrap(&cfg, 0).unwrap();
        assert_eq!(recs[0].init_fingerprint, boot.theta0.fingerprint());
        for w in recs.windows(2) {
            assert_eq!(w[1].init_fingerprint, w[0].theta_fingerprint);
        }
        // acquired inputs come from the pool and stay in the output box
        for r in &recs[..2] {
            let i = r.chosen.unwrap();
            assert!(boot.pool_indices.contains(&i));
            let u = &boot.test.trajectories[i].u;
            assert!(out.data.iter().any(|t| &t.u == u));
        }
        assert_eq!(lines.len(), 1 + 3 + 1);
        assert_eq!(lines[4], RunLine::Status(RunStatus::Complete));
        let replay = run_active_learning(&cfg, 0).unwrap();
        assert_eq!(replay.log.fingerprint(), out.log.fingerprint());
    }

    #[test]
    fn random_runs_depend_on_the_seed_only() {
        let cfg = tiny(AcquisitionTag::Random);
        let chosen = |seed| {
            run_active_learning(&cfg, seed).unwrap().log.records.iter().filter_map(|r| r.chosen).collect::<Vec<_>>()
        };
        let a = chosen(0);
        assert_eq!(a, chosen(0));
        assert_ne!(a, chosen(1));
    }

    #[test]
    fn run_file_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let cfg = ExperimentConfig { n_max: 4, ..tiny(AcquisitionTag::Ideal) };
        let mut file = RunFile::create(&path).unwrap();
        let out = run_active_learning_with(&cfg, 2, &mut |l| file.append(l)).unwrap();
        drop(file);
        let back = RunLog::read(&path).unwrap();
        assert_eq!(back, out.log);
        assert_eq!(back.fingerprint(), out.log.fingerprint());
    }
}
