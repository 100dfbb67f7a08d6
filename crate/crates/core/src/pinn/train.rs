//! Hybrid training: mini-batch Adam, then full-batch L-BFGS.

use crate::autodiff::{AutodiffError, DEFAULT_CHUNK};
use crate::rng::{shuffle, stream, stream_rng};

use super::loss::{evaluate, LossBreakdown, LossWeights, Problem};
use super::optim::{lbfgs, staircase_lr, Adam, LbfgsConfig, LbfgsOutcome};
use super::sampling::{CollocationSet, LabeledDataset};
use super::{PinnError, PinnModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Adam,
    Lbfgs,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Adam => "adam",
            Phase::Lbfgs => "lbfgs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Phase::Adam, Phase::Lbfgs]
            .into_iter()
            .find(|p| p.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub phase: Phase,
    /// Adam learning rate, or the accepted L-BFGS step length.
    pub lr: f64,
    pub loss: LossBreakdown,
}

pub const HISTORY_HEADER: &str = "iter,phase,lr,total,data,mom,cont,bc,moment";

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        let l = &r.loss;
        s.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            r.iter,
            r.phase.name(),
            r.lr,
            l.total,
            l.data,
            l.mom,
            l.cont,
            l.bc,
            l.moment
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Adam iterations (one mini-batch each).
    pub adam_iters: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub decay_interval: usize,
    /// Mini-batch sizes; 0 takes the whole set every iteration.
    pub data_batch: usize,
    pub colloc_batch: usize,
    pub boundary_batch: usize,
    pub lbfgs: LbfgsConfig,
    pub weights: LossWeights,
    pub seed: u64,
    pub chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam_iters: 5000,
            learning_rate: 1e-3,
            decay: 0.95,
            decay_interval: 200,
            data_batch: 512,
            colloc_batch: 512,
            boundary_batch: 128,
            lbfgs: LbfgsConfig::default(),
            weights: LossWeights::default(),
            seed: 0,
            chunk: DEFAULT_CHUNK,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PinnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PinnError::Config(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(PinnError::Config(format!(
                "decay factor {} outside (0, 1]",
                self.decay
            )));
        }
        if self.decay_interval == 0 {
            return Err(PinnError::Config("decay interval must be > 0".into()));
        }
        if self.lbfgs.max_iters > 0 && self.lbfgs.history == 0 {
            return Err(PinnError::Config("L-BFGS history must be > 0".into()));
        }
        if !(0.0 < self.lbfgs.c1 && self.lbfgs.c1 < self.lbfgs.c2 && self.lbfgs.c2 < 1.0) {
            return Err(PinnError::Config(format!(
                "line-search constants need 0 < c1 < c2 < 1, got {} and {}",
                self.lbfgs.c1, self.lbfgs.c2
            )));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<HistoryRow>,
    /// Full-batch loss of the returned parameters.
    pub final_loss: LossBreakdown,
    pub lbfgs: Option<LbfgsOutcome>,
}

impl TrainReport {
    pub fn fallbacks(&self) -> usize {
        self.lbfgs.as_ref().map_or(0, |o| o.fallbacks)
    }
}

/// Cycles through shuffled permutations of `0..n`.
struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    size: usize,
}

impl Batcher {
    fn new(n: usize, size: usize) -> Self {
        let size = if size == 0 { n } else { size.min(n) };
        Self {
            order: (0..n).collect(),
            cursor: n,
            size,
        }
    }

    fn next(&mut self, rng: &mut rand_chacha::ChaCha20Rng) -> Vec<usize> {
        let n = self.order.len();
        if self.size == n {
            return self.order.clone();
        }
        let mut out = Vec::with_capacity(self.size);
        while out.len() < self.size {
            if self.cursor == n {
                shuffle(rng, &mut self.order);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn non_finite(err: &PinnError) -> bool {
    matches!(
        err,
        PinnError::SingularDensity { .. } | PinnError::Autodiff(AutodiffError::NonFinite(_))
    )
}

/// Encodes the training sets for `model`.
pub fn build_problem(
    model: &PinnModel,
    dataset: &LabeledDataset,
    colloc: &CollocationSet,
) -> Problem {
    Problem::new(model, &dataset.pairs(), &colloc.interior, &colloc.boundary)
}

/// Trains `model` in place. On a non-finite loss the model keeps the last
/// finite parameters and the error carries them too.
pub fn train(
    model: &mut PinnModel,
    dataset: &LabeledDataset,
    colloc: &CollocationSet,
    cfg: &TrainConfig,
) -> Result<TrainReport, PinnError> {
    cfg.validate()?;
    if dataset.is_empty() && cfg.weights.data > 0.0 {
        return Err(PinnError::Empty("dataset"));
    }
    if colloc.interior.is_empty() && (cfg.weights.physics > 0.0 || cfg.weights.cont > 0.0) {
        return Err(PinnError::Empty("collocation set"));
    }
    let full = build_problem(model, dataset, colloc);
    let width = model.input_width();
    let mut history = Vec::new();

    let mut rng = stream_rng(cfg.seed, stream::SHUFFLE);
    let mut data_b = Batcher::new(full.data_len(), cfg.data_batch);
    let mut coll_b = Batcher::new(full.colloc_len(width), cfg.colloc_batch);
    let mut bnd_b = Batcher::new(full.boundary_len(), cfg.boundary_batch);
    let mut adam = Adam::new(model.params.len());
    let mut last_good = model.params.clone();
    for it in 0..cfg.adam_iters {
        let di = data_b.next(&mut rng);
        let ci = coll_b.next(&mut rng);
        let bi = bnd_b.next(&mut rng);
        let batch = full.subset(width, &di, &ci, &bi);
        let (loss, grad) = match evaluate(model, &batch, &cfg.weights, cfg.chunk) {
            Ok(v) => v,
            Err(e) if non_finite(&e) => {
                model.params = last_good.clone();
                return Err(PinnError::NonFinite {
                    phase: Phase::Adam.name(),
                    iter: it,
                    last_good: Box::new(last_good),
                });
            }
            Err(e) => return Err(e),
        };
        let lr = staircase_lr(cfg.learning_rate, cfg.decay, cfg.decay_interval, it);
        history.push(HistoryRow {
            iter: it,
            phase: Phase::Adam,
            lr,
            loss,
        });
        last_good
            .as_mut_slice()
            .copy_from_slice(model.params.as_slice());
        adam.step(model.params.as_mut_slice(), &grad, lr);
    }
    if !model.params.is_finite() {
        model.params = last_good.clone();
        return Err(PinnError::NonFinite {
            phase: Phase::Adam.name(),
            iter: cfg.adam_iters,
            last_good: Box::new(last_good),
        });
    }

    let mut outcome = None;
    if cfg.lbfgs.max_iters > 0 {
        let offset = cfg.adam_iters;
        let mut x = model.params.as_slice().to_vec();
        let mut probe = model.clone();
        let objective = |p: &[f64]| -> Result<(f64, Vec<f64>, LossBreakdown), PinnError> {
            probe.params.as_mut_slice().copy_from_slice(p);
            match evaluate(&probe, &full, &cfg.weights, cfg.chunk) {
                Ok((l, g)) => Ok((l.total, g, l)),
                Err(e) if non_finite(&e) => Ok((f64::NAN, Vec::new(), LossBreakdown::default())),
                Err(e) => Err(e),
            }
        };
        let start_finite = {
            let mut check = model.clone();
            check.params.as_mut_slice().copy_from_slice(&x);
            evaluate(&check, &full, &cfg.weights, cfg.chunk).is_ok()
        };
        if !start_finite {
            return Err(PinnError::NonFinite {
                phase: Phase::Lbfgs.name(),
                iter: offset,
                last_good: Box::new(model.params.clone()),
            });
        }
        let out = lbfgs(&mut x, objective, &cfg.lbfgs, |k, step, _, loss| {
            history.push(HistoryRow {
                iter: offset + k,
                phase: Phase::Lbfgs,
                lr: step,
                loss: *loss,
            });
            Ok(())
        })?;
        model.params.as_mut_slice().copy_from_slice(&x);
        outcome = Some(out);
    }

    let (final_loss, _) = evaluate(model, &full, &cfg.weights, cfg.chunk)?;
    Ok(TrainReport {
        history,
        final_loss,
        lbfgs: outcome,
    })
}
