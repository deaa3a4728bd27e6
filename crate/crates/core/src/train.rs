//! Shared mini-batch training helpers.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Adam, Graph, ParamStore, Scalar, Var};

/// Loss of one example: the graph node to differentiate plus the number of
/// units (tokens, ratings, ...) it covers, for reporting per-unit averages.
pub struct ExampleLoss {
    pub loss: Var,
    pub units: f64,
}

/// Sum of example losses and units seen by one call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTally {
    pub total: f64,
    pub units: f64,
    pub examples: usize,
}

impl LossTally {
    pub fn add(&mut self, other: LossTally) {
        self.total += other.total;
        self.units += other.units;
        self.examples += other.examples;
    }

    /// Loss per unit; zero when nothing was counted.
    pub fn mean(&self) -> f64 {
        if self.units > 0.0 {
            self.total / self.units
        } else {
            0.0
        }
    }
}

/// Runs forward and backward for each example of `batch`, averages the
/// gradients over the batch, and applies one Adam step.
pub fn minibatch_step<S, T, F>(
    store: &mut ParamStore<S>,
    adam: &mut Adam<S>,
    batch: &[T],
    mut loss: F,
) -> Result<LossTally>
where
    S: Scalar,
    F: FnMut(&mut Graph<S>, &ParamStore<S>, &T) -> Result<ExampleLoss>,
{
    let mut tally = LossTally::default();
    if batch.is_empty() {
        return Ok(tally);
    }
    store.zero_grad();
    for example in batch {
        let mut g = Graph::new();
        let ExampleLoss { loss: l, units } = loss(&mut g, store, example)?;
        let value = g.value(l).item().as_f64();
        if !value.is_finite() {
            return Err(Error::Diverged(format!("loss became {value}")));
        }
        let grads = g.backward(l)?;
        store.accumulate(&g, &grads);
        tally.total += value;
        tally.units += units;
        tally.examples += 1;
    }
    store.scale_grads(S::lit(1.0 / batch.len() as f64));
    adam.step(store)?;
    Ok(tally)
}

/// One pass over `examples` in a shuffled order.
pub fn epoch<S, T, F, R>(
    store: &mut ParamStore<S>,
    adam: &mut Adam<S>,
    examples: &[T],
    batch_size: usize,
    rng: &mut R,
    mut loss: F,
) -> Result<LossTally>
where
    S: Scalar,
    F: FnMut(&mut Graph<S>, &ParamStore<S>, &T) -> Result<ExampleLoss>,
    R: Rng + ?Sized,
{
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<&T> = examples.iter().collect();
    order.shuffle(rng);
    let mut tally = LossTally::default();
    for chunk in order.chunks(batch_size) {
        let t = minibatch_step(store, adam, chunk, |g, s, e| loss(g, s, e))?;
        tally.add(t);
    }
    Ok(tally)
}

/// Evaluates the summed loss of `examples` without building gradients.
pub fn evaluate<S, T, F>(store: &ParamStore<S>, examples: &[T], mut loss: F) -> Result<LossTally>
where
    S: Scalar,
    F: FnMut(&mut Graph<S>, &ParamStore<S>, &T) -> Result<ExampleLoss>,
{
    let mut tally = LossTally::default();
    for example in examples {
        let mut g = Graph::inference();
        let ExampleLoss { loss: l, units } = loss(&mut g, store, example)?;
        tally.total += g.value(l).item().as_f64();
        tally.units += units;
        tally.examples += 1;
    }
    Ok(tally)
}

/// Early-stopping bookkeeping on a validation metric where lower is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    /// Records the metric of `epoch`; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if metric < self.best {
            self.best = metric;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}
