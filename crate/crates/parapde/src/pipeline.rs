//! End-to-end training: parameter sampling, cached per-sample residual
//! systems, the chain-rule gradient of the loss through the network, the
//! depth-insertion schedule, and the reference/prediction error metrics.
//!
//! The empirical loss of network parameters theta is
//!
//!   L(theta) = (1/N) sum_i q_{p_i}(net(p_i; theta)),
//!
//! where q_p is the per-parameter quadratic residual form. Its gradient is
//! the average of backward passes seeded with the coefficient-space
//! gradients 2 (N_p w - b_p). Samples are evaluated in fixed-size chunks so
//! results are bit-identical regardless of thread count.

use crate::elliptic::{EllipticRhs, FoslsLayout, FoslsProblem};
use crate::error::{Error, Result};
use crate::lbfgs::{lbfgs_minimize, LbfgsOptions};
use crate::mesh::{build_unit_square_hierarchy, MeshHierarchy};
use crate::numerics::SparseMatrix;
use crate::residual::QuadraticResidual;
use crate::resnet::{init_network, HybridNetwork};
use crate::transport::{ConvectionField, DpgLayout, DpgProblem, TransportSource};
use rand::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Elliptic,
    TransportAngle,
    TransportHats,
}

impl ProblemKind {
    pub fn parameter_dim(&self) -> usize {
        match self {
            ProblemKind::Elliptic => 4,
            ProblemKind::TransportAngle => 1,
            ProblemKind::TransportHats => 7,
        }
    }

    pub fn default_box(&self) -> Vec<(f64, f64)> {
        match self {
            ProblemKind::Elliptic => vec![(0.5, 1.5); 4],
            ProblemKind::TransportAngle => vec![(0.0, 0.5)],
            ProblemKind::TransportHats => vec![(0.3, 1.3); 7],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetConfig {
    pub rank: usize,
    /// Total residual layers across all groups after every insertion.
    pub total_layers: usize,
    pub init_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Iteration budget over the whole insertion schedule.
    pub max_iters: usize,
    pub g_tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub level: usize,
    pub param_box: Vec<(f64, f64)>,
    pub n_train: usize,
    pub n_test: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub cache_capacity: usize,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, level: usize) -> Self {
        ProblemSpec {
            kind,
            level,
            param_box: kind.default_box(),
            n_train: 1000,
            n_test: 100,
            train_seed: 1,
            test_seed: 7,
            net: NetConfig {
                rank: 20,
                total_layers: 15,
                init_seed: 7,
            },
            train: TrainConfig {
                max_iters: 2000,
                g_tol: 1e-8,
            },
            cache_capacity: 2048,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.param_box.len() != self.kind.parameter_dim() {
            return Err(Error::ParameterOutOfRange(format!(
                "parameter box has {} entries, kind needs {}",
                self.param_box.len(),
                self.kind.parameter_dim()
            )));
        }
        for (i, (lo, hi)) in self.param_box.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::ParameterOutOfRange(format!(
                    "empty box in coordinate {i}: [{lo}, {hi}]"
                )));
            }
        }
        if self.level < 1 {
            return Err(Error::ParameterOutOfRange(
                "mesh level must be at least 1".into(),
            ));
        }
        if self.net.total_layers < self.level {
            return Err(Error::ParameterOutOfRange(format!(
                "total_layers = {} is below one layer per group ({})",
                self.net.total_layers, self.level
            )));
        }
        Ok(())
    }
}

/// I.i.d. uniform samples from the box, deterministic in the seed.
pub fn sample_parameters(bounds: &[(f64, f64)], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..hi))
                .collect()
        })
        .collect()
}

enum Formulation {
    Fosls(FoslsProblem),
    Dpg(DpgProblem),
}

/// A parametric problem at a fixed mesh level together with the multilevel
/// structure the coefficient network needs and a bounded cache of assembled
/// per-parameter systems.
pub struct Problem {
    pub kind: ProblemKind,
    pub level: usize,
    pub hier: Arc<MeshHierarchy>,
    formulation: Formulation,
    /// Trial dof count per level 1..=level.
    widths: Vec<usize>,
    /// Block trial prolongation into level j for groups j >= 2.
    prolongations: Vec<SparseMatrix>,
    cache: Mutex<SystemCache>,
}

struct SystemCache {
    capacity: usize,
    stamp: u64,
    map: HashMap<Vec<u64>, (Arc<QuadraticResidual>, u64)>,
}

impl SystemCache {
    fn key(p: &[f64]) -> Vec<u64> {
        p.iter().map(|v| v.to_bits()).collect()
    }

    fn get(&mut self, p: &[f64]) -> Option<Arc<QuadraticResidual>> {
        let key = Self::key(p);
        self.stamp += 1;
        let stamp = self.stamp;
        self.map.get_mut(&key).map(|entry| {
            entry.1 = stamp;
            entry.0.clone()
        })
    }

    fn insert(&mut self, p: &[f64], sys: Arc<QuadraticResidual>) {
        if self.capacity == 0 {
            return;
        }
        while self.map.len() >= self.capacity {
            // evict least recently used
            let oldest = self
                .map
                .iter()
                .min_by_key(|(_, (_, stamp))| *stamp)
                .map(|(k, _)| k.clone())
                .expect("non-empty cache");
            self.map.remove(&oldest);
        }
        self.stamp += 1;
        self.map.insert(Self::key(p), (sys, self.stamp));
    }
}

impl Problem {
    pub fn build(spec: &ProblemSpec) -> Result<Problem> {
        spec.validate()?;
        let hier = Arc::new(build_unit_square_hierarchy(spec.level)?);
        let formulation = match spec.kind {
            ProblemKind::Elliptic => Formulation::Fosls(FoslsProblem::new(
                hier.clone(),
                spec.level,
                EllipticRhs::Constant(1.0),
            )),
            ProblemKind::TransportAngle => Formulation::Dpg(DpgProblem::new(
                hier.clone(),
                spec.level,
                ConvectionField::Angle,
                TransportSource::standard(),
            )),
            ProblemKind::TransportHats => Formulation::Dpg(DpgProblem::new(
                hier.clone(),
                spec.level,
                ConvectionField::SpaceHats,
                TransportSource::standard(),
            )),
        };

        let mut widths = Vec::with_capacity(spec.level);
        let mut prolongations = Vec::new();
        match &formulation {
            Formulation::Fosls(_) => {
                let layouts: Vec<FoslsLayout> = (1..=spec.level)
                    .map(|j| FoslsLayout::new(hier.level(j)))
                    .collect();
                for l in &layouts {
                    widths.push(l.n_total());
                }
                for j in 2..=spec.level {
                    let (fine, coarse) = (&layouts[j - 1], &layouts[j - 2]);
                    let sigma = crate::mesh::rt0_prolongation(&hier, j);
                    let u = crate::mesh::p1_prolongation(&hier, j);
                    let u = crate::mesh::restrict_rows(&u, &fine.vertex_dof, fine.n_u);
                    let u = crate::mesh::restrict_columns(&u, &coarse.vertex_dof, coarse.n_u);
                    prolongations.push(SparseMatrix::block_diag(&sigma, &u));
                }
            }
            Formulation::Dpg(dpg) => {
                let layouts: Vec<DpgLayout> = (1..=spec.level)
                    .map(|j| DpgLayout::new(hier.level(j), dpg.field))
                    .collect();
                for l in &layouts {
                    widths.push(l.n_total());
                }
                for j in 2..=spec.level {
                    let (fine, coarse) = (&layouts[j - 1], &layouts[j - 2]);
                    let field = crate::mesh::p0_prolongation(&hier, j);
                    let skel = crate::mesh::skeleton_prolongation(&hier, j);
                    let skel =
                        crate::mesh::restrict_rows(&skel, &fine.vertex_dof, fine.n_skeleton);
                    let skel =
                        crate::mesh::restrict_columns(&skel, &coarse.vertex_dof, coarse.n_skeleton);
                    prolongations.push(SparseMatrix::block_diag(&field, &skel));
                }
            }
        }

        Ok(Problem {
            kind: spec.kind,
            level: spec.level,
            hier,
            formulation,
            widths,
            prolongations,
            cache: Mutex::new(SystemCache {
                capacity: spec.cache_capacity,
                stamp: 0,
                map: HashMap::new(),
            }),
        })
    }

    pub fn dof_counts(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_dofs(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn as_fosls(&self) -> Option<&FoslsProblem> {
        match &self.formulation {
            Formulation::Fosls(p) => Some(p),
            Formulation::Dpg(_) => None,
        }
    }

    pub fn as_dpg(&self) -> Option<&DpgProblem> {
        match &self.formulation {
            Formulation::Dpg(p) => Some(p),
            Formulation::Fosls(_) => None,
        }
    }

    fn assemble(&self, p: &[f64]) -> Result<QuadraticResidual> {
        match &self.formulation {
            Formulation::Fosls(f) => Ok(f.assemble(p)?.quadratic),
            Formulation::Dpg(d) => d.assemble(p),
        }
    }

    /// Assembled residual form for a parameter, cached since it does not
    /// depend on the network parameters.
    pub fn system(&self, p: &[f64]) -> Result<Arc<QuadraticResidual>> {
        if let Some(hit) = self.cache.lock().unwrap().get(p) {
            return Ok(hit);
        }
        let sys = Arc::new(self.assemble(p)?);
        self.cache.lock().unwrap().insert(p, sys.clone());
        Ok(sys)
    }

    /// Cached systems for all samples, aligned with the input order.
    pub fn systems(&self, samples: &[Vec<f64>]) -> Result<Vec<Arc<QuadraticResidual>>> {
        self.prefetch(samples)?;
        let mut cache = self.cache.lock().unwrap();
        samples
            .iter()
            .map(|p| match cache.get(p) {
                Some(sys) => Ok(sys),
                // evicted under pressure: assemble directly
                None => Ok(Arc::new(self.assemble(p)?)),
            })
            .collect()
    }

    /// Assembles any missing systems for the samples in parallel.
    pub fn prefetch(&self, samples: &[Vec<f64>]) -> Result<()> {
        let missing: Vec<&Vec<f64>> = {
            let mut cache = self.cache.lock().unwrap();
            samples
                .iter()
                .filter(|p| cache.get(p).is_none())
                .collect()
        };
        let assembled: Vec<(usize, Result<QuadraticResidual>)> = missing
            .par_iter()
            .enumerate()
            .map(|(i, p)| (i, self.assemble(p)))
            .collect();
        let mut cache = self.cache.lock().unwrap();
        for (i, sys) in assembled {
            cache.insert(missing[i], Arc::new(sys?));
        }
        Ok(())
    }

    /// Finite element reference solution for one parameter.
    pub fn solve_fe(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.system(p)?.minimize(1e-10)
    }

    /// Builds the coefficient network matching this problem's multilevel
    /// trial structure, one residual layer per group.
    pub fn init_network(&self, rank: usize, seed: u64) -> HybridNetwork {
        let d_p = self.kind.parameter_dim();
        let mut prolongs: Vec<Option<SparseMatrix>> = vec![None];
        prolongs.extend(self.prolongations.iter().cloned().map(Some));
        let layers = vec![1usize; self.widths.len()];
        init_network(d_p, &self.widths, prolongs, rank, &layers, seed)
    }
}

/// Samples are processed in fixed chunks so the reduction order never
/// depends on the thread count.
const CHUNK: usize = 64;

/// Mean loss and flat parameter gradient over the samples.
pub fn loss_and_grad(
    net: &HybridNetwork,
    problem: &Problem,
    samples: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    let systems = problem.systems(samples)?;
    let n_params = net.param_count();
    let chunk_results: Vec<Result<(f64, Vec<f64>)>> = samples
        .par_chunks(CHUNK)
        .zip(systems.par_chunks(CHUNK))
        .map(|(chunk, sys_chunk)| {
            let mut loss = 0.0;
            let mut grad = vec![0.0; n_params];
            for (p, sys) in chunk.iter().zip(sys_chunk) {
                let (out, tape) = net.forward(p)?;
                loss += sys.loss(&out)?;
                let cot = sys.loss_gradient(&out)?;
                net.backward_into(&tape, &cot, &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect();
    let inv_n = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for res in chunk_results {
        let (l, g) = res?;
        loss += l;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    loss *= inv_n;
    for g in grad.iter_mut() {
        *g *= inv_n;
    }
    Ok((loss, grad))
}

/// Mean-square relative residual of the per-sample FE solutions.
pub fn eps_ref(problem: &Problem, samples: &[Vec<f64>]) -> Result<f64> {
    let systems = problem.systems(samples)?;
    let terms: Vec<Result<f64>> = systems
        .par_iter()
        .map(|sys| {
            let w = sys.minimize(1e-10)?;
            if sys.constant <= 0.0 {
                return Err(Error::ZeroLoadScale);
            }
            Ok(sys.loss(&w)? / sys.constant)
        })
        .collect();
    let mut acc = 0.0;
    for t in terms {
        acc += t?;
    }
    Ok((acc / samples.len() as f64).sqrt())
}

/// Same metric with the network prediction in place of the FE solution.
pub fn eps_pred(net: &HybridNetwork, problem: &Problem, samples: &[Vec<f64>]) -> Result<f64> {
    let systems = problem.systems(samples)?;
    let terms: Vec<Result<f64>> = samples
        .par_iter()
        .zip(systems.par_iter())
        .map(|(p, sys)| {
            let (out, _) = net.forward(p)?;
            if sys.constant <= 0.0 {
                return Err(Error::ZeroLoadScale);
            }
            Ok(sys.loss(&out)? / sys.constant)
        })
        .collect();
    let mut acc = 0.0;
    for t in terms {
        acc += t?;
    }
    Ok((acc / samples.len() as f64).sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InsertionEvent {
    /// Index into the loss history at which the layer was added.
    pub iteration: usize,
    pub group: usize,
    pub total_layers: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub iterations: usize,
    pub final_loss: f64,
    pub stop: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub spec: ProblemSpec,
    pub loss_history: Vec<f64>,
    pub events: Vec<InsertionEvent>,
    pub stages: Vec<StageReport>,
    pub eps_ref: f64,
    pub eps_pred: f64,
    pub wall_seconds: f64,
    pub param_count: usize,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    /// "iteration,loss,event" rows; insertion rows carry the group index.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iteration,loss,event\n");
        let mut events: HashMap<usize, &InsertionEvent> =
            self.events.iter().map(|e| (e.iteration, e)).collect();
        for (i, loss) in self.loss_history.iter().enumerate() {
            let tag = events
                .remove(&i)
                .map(|e| format!("insert-group-{}", e.group))
                .unwrap_or_default();
            out.push_str(&format!("{i},{loss:e},{tag}\n"));
        }
        out
    }
}

/// Which group receives the next inserted layer: alternate over the two
/// coarsest groups, where extra depth is cheapest; finer groups keep their
/// single layer and a trainable prolongation.
fn insertion_group(n_groups: usize, stage: usize) -> usize {
    stage % n_groups.min(2)
}

/// Runs the staged training loop: L-BFGS between depth insertions, one
/// zero-initialized layer added per stage. Returns the trained network, the
/// problem (with its warm system cache) and the run report.
pub fn train(spec: &ProblemSpec) -> Result<(HybridNetwork, Problem, TrainReport)> {
    spec.validate()?;
    let start = std::time::Instant::now();
    let problem = Problem::build(spec)?;
    let samples = sample_parameters(&spec.param_box, spec.n_train, spec.train_seed);
    let mut net = problem.init_network(spec.net.rank, spec.net.init_seed);

    let n_groups = problem.dof_counts().len();
    let insertions = spec.net.total_layers - n_groups;
    let stages = insertions + 1;
    // short warmup stages while depth grows, the bulk of the budget at full
    // depth (L-BFGS restarts at every insertion, so long early stages waste
    // curvature information on throwaway configurations)
    let warmup = (spec.train.max_iters / (2 * stages)).clamp(1, 60);
    let final_budget = spec.train.max_iters.saturating_sub(warmup * insertions).max(1);

    let mut loss_history: Vec<f64> = Vec::new();
    let mut events = Vec::new();
    let mut stage_reports = Vec::new();

    for stage in 0..stages {
        let theta = net.params_flat();
        let opts = LbfgsOptions {
            history: 9,
            max_iters: if stage < insertions { warmup } else { final_budget },
            g_tol: spec.train.g_tol,
            ..Default::default()
        };
        let mut scratch = net.clone();
        let objective = |t: &[f64]| -> (f64, Vec<f64>) {
            scratch
                .set_params_flat(t)
                .expect("parameter vector of matching length");
            match loss_and_grad(&scratch, &problem, &samples) {
                Ok(pair) => pair,
                Err(e) => panic!("loss evaluation failed: {e}"),
            }
        };
        let report = lbfgs_minimize(objective, &theta, &opts)?;
        net.set_params_flat(&report.x)?;
        let skip = usize::from(!loss_history.is_empty());
        if skip == 1 {
            // zero-initialized insertions leave the loss unchanged
            let boundary = *loss_history.last().unwrap();
            assert_eq!(report.trace[0], boundary, "loss jumped across insertion");
        }
        loss_history.extend_from_slice(&report.trace[skip..]);
        stage_reports.push(StageReport {
            iterations: report.iterations,
            final_loss: report.value,
            stop: format!("{:?}", report.stop),
        });
        if report.value.is_nan() {
            return Err(Error::NonFinite {
                what: "stage loss",
                iter: stage,
            });
        }
        if stage < insertions {
            let group = insertion_group(n_groups, stage);
            net.insert_layer(group);
            events.push(InsertionEvent {
                iteration: loss_history.len() - 1,
                group,
                total_layers: net.total_layers(),
            });
        }
    }

    let test_samples = sample_parameters(&spec.param_box, spec.n_test, spec.test_seed);
    let eref = eps_ref(&problem, &test_samples)?;
    let epred = eps_pred(&net, &problem, &test_samples)?;
    let report = TrainReport {
        spec: spec.clone(),
        loss_history,
        events,
        stages: stage_reports,
        eps_ref: eref,
        eps_pred: epred,
        wall_seconds: start.elapsed().as_secs_f64(),
        param_count: net.param_count(),
    };
    Ok((net, problem, report))
}
