//! Gradient-free refinement of a pre-trained layer: flatten the selected
//! weights into `theta`, search the box `[theta - delta, theta + delta]` with a
//! meta-heuristic scored on validation accuracy, and write the winner back.

use std::cell::Cell;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::metrics::{classify_metrics, ClassificationReport};
use crate::model::{sgd_train, Architecture, EpochRecord, NetworkState, ParamKind, TrainConfig};
use crate::optim::{optimize, Algorithm, Bounds, OptimizationResult, RunBudget};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub tensor: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// Selected parameters flattened tensor by tensor, each row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub layout: Vec<LayoutEntry>,
}

impl ParameterVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Which layers the optimizer may touch. Layers are tensor-name prefixes
/// (`hidden`, `output`, `lstm`, `embedding`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSelector {
    #[serde(default = "default_layers")]
    pub layers: Vec<String>,
    #[serde(default)]
    pub include_biases: bool,
}

fn default_layers() -> Vec<String> {
    vec!["output".to_string()]
}

impl Default for LayerSelector {
    fn default() -> Self {
        Self {
            layers: default_layers(),
            include_biases: false,
        }
    }
}

impl LayerSelector {
    pub fn layers(names: &[&str], include_biases: bool) -> Self {
        Self {
            layers: names.iter().map(|s| s.to_string()).collect(),
            include_biases,
        }
    }

    pub fn validate(&self, state: &NetworkState) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Selector("no layers selected".into()));
        }
        let known = state.layer_names();
        for name in &self.layers {
            if !known.contains(&name.as_str()) {
                return Err(Error::Selector(format!("unknown layer {name:?}; the network has {known:?}")));
            }
        }
        Ok(())
    }

    fn selects(&self, tensor: &crate::model::Tensor) -> bool {
        self.layers.iter().any(|l| l == tensor.layer()) && (self.include_biases || tensor.kind == ParamKind::Weight)
    }
}

/// Half-width of the search box: one value for every weight, or one per weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    Scalar(f64),
    PerDimension(Vec<f64>),
}

impl Default for DeltaSpec {
    fn default() -> Self {
        DeltaSpec::Scalar(0.001)
    }
}

impl DeltaSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: f64| !(d.is_finite() && d > 0.0);
        match self {
            DeltaSpec::Scalar(d) if bad(*d) => Err(Error::Config(format!("delta must be positive, got {d}"))),
            DeltaSpec::PerDimension(v) if v.is_empty() => Err(Error::Config("delta vector is empty".into())),
            DeltaSpec::PerDimension(v) => match v.iter().find(|d| bad(**d)) {
                Some(d) => Err(Error::Config(format!("delta entries must be positive, got {d}"))),
                None => Ok(()),
            },
            DeltaSpec::Scalar(_) => Ok(()),
        }
    }
}

/// Copies out the selected tensors in network order.
pub fn extract_theta(state: &NetworkState, selector: &LayerSelector) -> Result<ParameterVector> {
    selector.validate(state)?;
    let mut values = Vec::new();
    let mut layout = Vec::new();
    for t in state.tensors.iter().filter(|t| selector.selects(t)) {
        layout.push(LayoutEntry {
            tensor: t.name.clone(),
            rows: t.rows,
            cols: t.cols,
            offset: values.len(),
        });
        values.extend_from_slice(&t.data);
    }
    if values.is_empty() {
        return Err(Error::Selector("selection contains no parameters".into()));
    }
    Ok(ParameterVector { values, layout })
}

/// Overwrites the tensors named in `layout` with the matching slices of `values`.
pub fn inject(state: &mut NetworkState, layout: &[LayoutEntry], values: &[f64]) -> Result<()> {
    let expected: usize = layout.iter().map(|e| e.rows * e.cols).sum();
    if values.len() != expected {
        return Err(Error::Dimension(format!(
            "{} values for a layout of {expected} parameters",
            values.len()
        )));
    }
    for e in layout {
        let t = state
            .tensor_mut(&e.tensor)
            .ok_or_else(|| Error::Selector(format!("network has no tensor {:?}", e.tensor)))?;
        if (t.rows, t.cols) != (e.rows, e.cols) {
            return Err(Error::Dimension(format!(
                "tensor {} is {}x{}, layout says {}x{}",
                e.tensor, t.rows, t.cols, e.rows, e.cols
            )));
        }
        t.data.copy_from_slice(&values[e.offset..e.offset + e.rows * e.cols]);
    }
    Ok(())
}

pub fn build_space(theta: &ParameterVector, delta: &DeltaSpec) -> Result<Bounds> {
    delta.validate()?;
    let n = theta.len();
    let widths: Vec<f64> = match delta {
        DeltaSpec::Scalar(d) => vec![*d; n],
        DeltaSpec::PerDimension(v) if v.len() == n => v.clone(),
        DeltaSpec::PerDimension(v) => {
            return Err(Error::Dimension(format!("{} delta entries for {n} parameters", v.len())));
        }
    };
    let lower = theta.values.iter().zip(&widths).map(|(t, d)| t - d).collect();
    let upper = theta.values.iter().zip(&widths).map(|(t, d)| t + d).collect();
    Bounds::new(lower, upper)
}

/// Accuracy, precision, recall and F1 of `state` on `data`.
pub fn evaluate(state: &NetworkState, data: &Dataset) -> Result<ClassificationReport> {
    let predicted = state.predict(data)?;
    let classes = data.class_count().max(state.arch.n_outputs());
    classify_metrics(data.labels(), &predicted, classes)
}

/// `1 - accuracy` on `val` of `state` with `candidate` written into a scratch copy.
pub fn fitness_of(candidate: &[f64], state: &NetworkState, layout: &[LayoutEntry], val: &Dataset) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let mut scratch = state.clone();
    inject(&mut scratch, layout, candidate)?;
    Ok(1.0 - evaluate(&scratch, val)?.accuracy)
}

/// Abstract per-epoch costs of gradient training and of the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Cost of one training epoch.
    pub iota: f64,
    /// Cost of one validation pass.
    pub zeta: f64,
    /// Pre-training epochs.
    pub t_n: f64,
    /// Optimization iterations.
    pub t_o: f64,
    /// Agents.
    pub m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub pretrain: f64,
    pub finetune: f64,
    pub total: f64,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.iota, self.zeta, self.t_n, self.t_o, self.m];
        if fields.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("cost model entries must be non-negative, got {fields:?}")));
        }
        Ok(())
    }
}

pub fn estimate_cost(cm: &CostModel) -> CostEstimate {
    let pretrain = (cm.iota + cm.zeta) * cm.t_n;
    let finetune = cm.zeta * cm.t_o * cm.m;
    CostEstimate {
        pretrain,
        finetune,
        total: pretrain + finetune,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub algorithm: Algorithm,
    pub budget: RunBudget,
    #[serde(default)]
    pub delta: DeltaSpec,
    #[serde(default)]
    pub selector: LayerSelector,
    #[serde(default)]
    pub seed: u64,
    /// Seed one agent exactly at `theta`.
    #[serde(default = "yes")]
    pub anchor: bool,
}

fn yes() -> bool {
    true
}

impl FinetuneConfig {
    pub fn new(algorithm: Algorithm, budget: RunBudget, delta: f64, seed: u64) -> Self {
        Self {
            algorithm,
            budget,
            delta: DeltaSpec::Scalar(delta),
            selector: LayerSelector::default(),
            seed,
            anchor: true,
        }
    }
}

/// Wall-clock seconds; never serialized so reports stay reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub pretrain_secs: f64,
    pub finetune_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub config: FinetuneConfig,
    /// Number of parameters searched.
    pub dimension: usize,
    pub pre_val_accuracy: f64,
    pub post_val_accuracy: f64,
    pub pre_test: ClassificationReport,
    pub post_test: ClassificationReport,
    pub optimization: OptimizationResult,
    /// How often the test split was read; always two.
    pub test_reads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain_trace: Option<Vec<EpochRecord>>,
    #[serde(skip)]
    pub timings: Timings,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub pre_state: NetworkState,
    pub post_state: NetworkState,
    pub report: PipelineReport,
}

/// Counts reads of the held-out split so the search provably never sees it.
struct Audited<'a> {
    splits: &'a Splits,
    test_reads: Cell<usize>,
}

impl<'a> Audited<'a> {
    fn test(&self) -> &'a Dataset {
        self.test_reads.set(self.test_reads.get() + 1);
        &self.splits.test
    }
}

/// Searches around the selected weights of `state` and evaluates both networks on the test split.
pub fn finetune(state: &NetworkState, splits: &Splits, cfg: &FinetuneConfig) -> Result<FinetuneOutcome> {
    let started = Instant::now();
    let audit = Audited {
        splits,
        test_reads: Cell::new(0),
    };
    let val = &splits.val;
    let theta = extract_theta(state, &cfg.selector)?;
    let bounds = build_space(&theta, &cfg.delta)?;
    let layout = theta.layout.clone();

    let pre_val_accuracy = evaluate(state, val)?.accuracy;
    let pre_test = evaluate(state, audit.test())?;

    // fitness_of only fails on malformed candidates; NaN surfaces as an evaluation error
    let fitness = |x: &[f64]| fitness_of(x, state, &layout, val).unwrap_or(f64::NAN);
    let anchor = cfg.anchor.then_some(theta.values.as_slice());
    let optimization = optimize(&fitness, &bounds, &cfg.algorithm, cfg.budget, cfg.seed, anchor)?;

    let mut post_state = state.clone();
    inject(&mut post_state, &layout, &optimization.best_position)?;
    let post_val_accuracy = evaluate(&post_state, val)?.accuracy;
    let post_test = evaluate(&post_state, audit.test())?;

    let report = PipelineReport {
        seed: cfg.seed,
        config: cfg.clone(),
        dimension: theta.len(),
        pre_val_accuracy,
        post_val_accuracy,
        pre_test,
        post_test,
        optimization,
        test_reads: audit.test_reads.get(),
        pretrain_trace: None,
        timings: Timings {
            pretrain_secs: 0.0,
            finetune_secs: started.elapsed().as_secs_f64(),
        },
    };
    Ok(FinetuneOutcome {
        pre_state: state.clone(),
        post_state,
        report,
    })
}

/// Pre-trains `arch` on the training split (validation tracked per epoch), then fine-tunes.
pub fn run_pipeline(
    arch: Architecture,
    splits: &Splits,
    train: &TrainConfig,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    let started = Instant::now();
    let trained = sgd_train(arch, &splits.train, Some(&splits.val), train)?;
    let pretrain_secs = started.elapsed().as_secs_f64();
    let mut outcome = finetune(&trained.state, splits, cfg)?;
    outcome.report.pretrain_trace = Some(trained.trace);
    outcome.report.timings.pretrain_secs = pretrain_secs;
    Ok(outcome)
}
