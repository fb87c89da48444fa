//! Classical EM and the three gradient-descent regimes.
//!
//! `em_step` is the explicit E-step/M-step baseline. The trainers run plain
//! gradient descent (no momentum or adaptive scaling) so that the
//! responsibility weighting of each update stays visible:
//!
//! * unsupervised: mean NLL over a squared-Euclidean bank,
//! * conditional: single-head attention fitted by squared error,
//! * constrained: mean cross-entropy over a logit bank.
//!
//! Every trainer is a deterministic function of its config and dataset.

use serde::{Deserialize, Serialize};

use crate::diagnostics::specialization_entropy;
use crate::distance::{
    accumulate_backprop, backprop_scores, prototype_distances, query_key_scores, AttentionParams,
    BankGradient, PrototypeBank,
};
use crate::error::{Error, Result};
use crate::numeric::{axpy, dot, norm, squared_distance, Matrix, SeededRng};
use crate::objectives::{
    argmax, cross_entropy_distance_gradient, cross_entropy_gradient, cross_entropy_value, nll_gradient,
    nll_value, soft_assign, DistanceVector, Label, SoftAssignment,
};

/// Components whose total responsibility falls below this keep their mean in `em_step`.
pub const EMPTY_COMPONENT_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Unsupervised,
    Conditional,
    Constrained,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Unsupervised => "unsupervised",
            Regime::Conditional => "conditional",
            Regime::Constrained => "constrained",
        }
    }
}

/// Inputs with optional labels aligned one-to-one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Option<Vec<Label>>,
    /// Generator config (including its seed) when the data is synthetic.
    pub provenance: Option<serde_json::Value>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Option<Vec<Label>>) -> Result<Self> {
        let dim = inputs.first().map_or(0, Vec::len);
        for x in &inputs {
            if x.len() != dim {
                return Err(Error::Shape {
                    context: "Dataset inputs",
                    expected: dim,
                    got: x.len(),
                });
            }
        }
        if let Some(l) = &labels {
            if l.len() != inputs.len() {
                return Err(Error::Shape {
                    context: "Dataset labels",
                    expected: inputs.len(),
                    got: l.len(),
                });
            }
        }
        Ok(Self {
            inputs,
            labels,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
}

/// One query over a set of keys; the keys also serve as the value inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingExample {
    pub query: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    /// The slot the ideal head attends to, when known by construction.
    pub correct_slot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDataset {
    pub examples: Vec<RoutingExample>,
}

impl RoutingDataset {
    pub fn new(examples: Vec<RoutingExample>) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::domain("routing dataset is empty"))?;
        let (dim, slots, out) = (first.query.len(), first.keys.len(), first.target.len());
        if slots == 0 {
            return Err(Error::domain("routing examples need at least one key"));
        }
        for ex in &examples {
            let bad = ex.query.len() != dim
                || ex.keys.len() != slots
                || ex.keys.iter().any(|k| k.len() != dim)
                || ex.target.len() != out
                || ex.correct_slot.is_some_and(|s| s >= slots);
            if bad {
                return Err(Error::domain("malformed routing example"));
            }
        }
        Ok(Self { examples })
    }

    pub fn model_dim(&self) -> usize {
        self.examples[0].query.len()
    }

    pub fn slots(&self) -> usize {
        self.examples[0].keys.len()
    }

    pub fn target_dim(&self) -> usize {
        self.examples[0].target.len()
    }

    /// Flattened rows `[query, key_0, …, key_{S−1}, target]` with the correct slot as label.
    pub fn to_rows(&self) -> (Vec<Vec<f64>>, Option<Vec<Label>>) {
        let rows = self
            .examples
            .iter()
            .map(|ex| {
                let mut row = ex.query.clone();
                ex.keys.iter().for_each(|k| row.extend_from_slice(k));
                row.extend_from_slice(&ex.target);
                row
            })
            .collect();
        let labels = self
            .examples
            .iter()
            .map(|ex| ex.correct_slot.map(Label))
            .collect();
        (rows, labels)
    }

    pub fn from_rows(
        rows: &[Vec<f64>],
        labels: Option<&[Label]>,
        model_dim: usize,
        slots: usize,
    ) -> Result<Self> {
        let examples = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let head = model_dim * (slots + 1);
                if row.len() <= head {
                    return Err(Error::Shape {
                        context: "RoutingDataset::from_rows",
                        expected: head + 1,
                        got: row.len(),
                    });
                }
                Ok(RoutingExample {
                    query: row[..model_dim].to_vec(),
                    keys: row[model_dim..head].chunks(model_dim).map(<[f64]>::to_vec).collect(),
                    target: row[head..].to_vec(),
                    correct_slot: labels.map(|l| l[i].0),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(examples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    /// Components (unsupervised), classes (constrained) or key slots (conditional).
    pub k: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// `None` or a value `≥ N` means full batch.
    pub batch_size: Option<usize>,
    pub init_scale: f64,
    pub seed: u64,
    pub weight_decay: f64,
    /// Shared isotropic variance of the mixture baseline.
    pub sigma2: f64,
    /// Attention head dimension; defaults to the model dimension.
    pub head_dim: Option<usize>,
}

impl TrainConfig {
    pub fn new(regime: Regime, k: usize) -> Self {
        let (learning_rate, steps) = match regime {
            Regime::Unsupervised => (1.0, 200),
            Regime::Conditional => (1.0, 1500),
            Regime::Constrained => (0.5, 2000),
        };
        let init_scale = if regime == Regime::Conditional { 0.3 } else { 1.0 };
        Self {
            regime,
            k,
            learning_rate,
            steps,
            batch_size: None,
            init_scale,
            seed: 0,
            weight_decay: 0.0,
            sigma2: 1.0,
            head_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("train.k", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be a non-negative number"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("train.init_scale", "must be a non-negative number"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be a non-negative number"));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::config("train.sigma2", "must be positive"));
        }
        if self.head_dim == Some(0) {
            return Err(Error::config("train.head_dim", "must be positive"));
        }
        Ok(())
    }

    fn expect_regime(&self, regime: Regime) -> Result<()> {
        if self.regime != regime {
            return Err(Error::config(
                "regime",
                format!("expected `{}`, got `{}`", regime.as_str(), self.regime.as_str()),
            ));
        }
        self.validate()
    }
}

/// Per-step record. `loss` and the responsibility statistics are measured
/// on the batch before the update of that step; drifts are the L2 norms of
/// the update itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: f64,
    /// Mean responsibility entropy over the batch (nats).
    pub entropy: f64,
    pub collapse_score: Option<f64>,
    pub score_drift: Option<f64>,
    pub value_drift: Option<f64>,
    /// Mean responsibility on the labeled class or the correct key slot.
    pub r_y_mean: Option<f64>,
    /// Mean responsibility per component over the batch.
    pub component_mass: Vec<f64>,
    /// Mean responsibility per class taken away from the labeled class.
    pub off_target_mass: Option<Vec<f64>>,
    /// `Σ_j` of the batch-mean clamp gradient `r − onehot(y)`.
    pub clamp_gradient_sum: Option<f64>,
    /// Largest `|Σ_j α_j − 1|` over the batch.
    pub weight_sum_error: Option<f64>,
}

impl TraceRecord {
    fn new(step: usize, loss: f64, entropy: f64, component_mass: Vec<f64>) -> Self {
        let collapse = component_mass.iter().copied().fold(0.0, f64::max);
        Self {
            step,
            loss,
            entropy,
            collapse_score: Some(collapse),
            score_drift: None,
            value_drift: None,
            r_y_mean: None,
            component_mass,
            off_target_mass: None,
            clamp_gradient_sum: None,
            weight_sum_error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub regime: Option<Regime>,
    /// Number of components the responsibilities range over, when known.
    pub k: Option<usize>,
    records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn new(regime: Option<Regime>, k: Option<usize>) -> Self {
        Self {
            regime,
            k,
            records: Vec::new(),
        }
    }

    /// Steps must be strictly increasing.
    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::domain(format!(
                    "trace step {} does not follow step {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Full batch, or epoch-wise shuffled mini-batches drawn from the seeded stream.
struct BatchSampler {
    n: usize,
    batch: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: SeededRng,
}

impl BatchSampler {
    fn new(n: usize, batch_size: Option<usize>, seed: u64) -> Self {
        let batch = batch_size.map_or(n, |b| b.min(n));
        Self {
            n,
            batch,
            order: (0..n).collect(),
            cursor: n,
            // distinct stream from the parameter init
            rng: SeededRng::new(seed ^ 0x9E37_79B9_7F4A_7C15),
        }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.batch == self.n {
            return (0..self.n).collect();
        }
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.cursor == self.n {
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// One EM iteration for an isotropic mixture with shared variance `sigma2`
/// and uniform prior.
pub fn em_step(inputs: &[Vec<f64>], means: &[Vec<f64>], sigma2: f64) -> Result<Vec<Vec<f64>>> {
    if inputs.is_empty() {
        return Err(Error::domain("em_step needs at least one data point"));
    }
    if means.is_empty() {
        return Err(Error::domain("em_step needs at least one component"));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::domain(format!("variance must be positive, got {sigma2}")));
    }
    let dim = means[0].len();
    for m in means {
        if m.len() != dim {
            return Err(Error::Shape {
                context: "em_step means",
                expected: dim,
                got: m.len(),
            });
        }
    }
    let k = means.len();
    let mut mass = vec![0.0; k];
    let mut sums = vec![vec![0.0; dim]; k];
    for x in inputs {
        if x.len() != dim {
            return Err(Error::Shape {
                context: "em_step inputs",
                expected: dim,
                got: x.len(),
            });
        }
        // E-step
        let d = DistanceVector::new(
            means
                .iter()
                .map(|m| squared_distance(x, m) / (2.0 * sigma2))
                .collect(),
        )?;
        let r = soft_assign(&d)?.r;
        for j in 0..k {
            mass[j] += r[j];
            axpy(r[j], x, &mut sums[j]);
        }
    }
    // M-step
    Ok((0..k)
        .map(|j| {
            if mass[j] < EMPTY_COMPONENT_MASS {
                means[j].clone()
            } else {
                sums[j].iter().map(|s| s / mass[j]).collect()
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmRun {
    pub means: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Largest coordinate change of the final iteration.
    pub last_shift: f64,
    pub converged: bool,
}

/// Iterate `em_step` until the largest coordinate change is `≤ tol`.
pub fn run_em(
    inputs: &[Vec<f64>],
    init: &[Vec<f64>],
    sigma2: f64,
    tol: f64,
    max_iters: usize,
) -> Result<EmRun> {
    let mut means = init.to_vec();
    let mut last_shift = f64::INFINITY;
    for it in 1..=max_iters {
        let next = em_step(inputs, &means, sigma2)?;
        last_shift = next
            .iter()
            .flatten()
            .zip(means.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        means = next;
        if last_shift <= tol {
            return Ok(EmRun {
                means,
                iterations: it,
                last_shift,
                converged: true,
            });
        }
    }
    Ok(EmRun {
        means,
        iterations: max_iters,
        last_shift,
        converged: false,
    })
}

/// Squared-Euclidean bank whose distances `‖x − μ‖²/(2σ²)` match the EM likelihood.
pub fn mixture_bank(means: Vec<Vec<f64>>, sigma2: f64) -> Result<PrototypeBank> {
    PrototypeBank::squared_euclidean(means, 1.0 / (2.0 * sigma2))
}

/// Batch statistics of a mixture or classification pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub entropy: f64,
    pub component_mass: Vec<f64>,
}

fn add_scaled(acc: &mut [f64], alpha: f64, x: &[f64]) {
    axpy(alpha, x, acc);
}

/// Mean NLL and its bank gradient over `batch`.
pub fn mixture_nll_gradient(batch: &[&[f64]], bank: &PrototypeBank) -> Result<(BatchStats, BankGradient)> {
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let w = 1.0 / batch.len() as f64;
    let mut grad = bank.zero_gradient();
    let mut stats = BatchStats {
        loss: 0.0,
        entropy: 0.0,
        component_mass: vec![0.0; bank.k()],
    };
    for x in batch {
        let d = prototype_distances(bank, x)?;
        stats.loss += w * nll_value(&d)?;
        let r = nll_gradient(&d)?;
        stats.entropy += w * specialization_entropy(&r)?;
        add_scaled(&mut stats.component_mass, w, &r);
        accumulate_backprop(bank, x, &r, w, &mut grad)?;
    }
    Ok((stats, grad))
}

fn require_squared_euclidean(bank: &PrototypeBank) -> Result<()> {
    match bank {
        PrototypeBank::SquaredEuclidean { .. } => Ok(()),
        other => Err(Error::domain(format!(
            "mixture regime needs a squared_euclidean bank, got {}",
            other.kind_name()
        ))),
    }
}

/// One descent step on the mean NLL. Each mean moves by
/// `η/N · Σ_i r_ij (x_i − μ_j)/σ²`.
pub fn gd_mixture_step(batch: &[Vec<f64>], bank: &mut PrototypeBank, lr: f64) -> Result<BatchStats> {
    require_squared_euclidean(bank)?;
    let refs: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
    let (stats, grad) = mixture_nll_gradient(&refs, bank)?;
    bank.apply_gradient(&grad, lr)?;
    Ok(stats)
}

fn add_weight_decay(grad: &mut [f64], params: &[f64], weight_decay: f64) {
    if weight_decay > 0.0 {
        axpy(weight_decay, params, grad);
    }
}

/// Step the bank with optional weight decay; returns the update norm.
fn descend_bank(bank: &mut PrototypeBank, grad: &BankGradient, cfg: &TrainConfig) -> Result<f64> {
    let mut params = bank.flat_params();
    let mut g = grad.flatten();
    add_weight_decay(&mut g, &params, cfg.weight_decay);
    axpy(-cfg.learning_rate, &g, &mut params);
    bank.set_flat_params(&params)?;
    Ok(cfg.learning_rate * norm(&g))
}

/// Seeded initial means for the unsupervised regime.
pub fn init_mixture_bank(cfg: &TrainConfig, dim: usize) -> Result<PrototypeBank> {
    let mut rng = SeededRng::new(cfg.seed);
    PrototypeBank::random_squared_euclidean(&mut rng, cfg.k, dim, cfg.init_scale, 1.0 / (2.0 * cfg.sigma2))
}

pub fn train_unsupervised(cfg: &TrainConfig, data: &Dataset) -> Result<(TrainingTrace, PrototypeBank)> {
    cfg.expect_regime(Regime::Unsupervised)?;
    if data.is_empty() {
        return Err(Error::domain("dataset is empty"));
    }
    let bank = init_mixture_bank(cfg, data.dim())?;
    train_unsupervised_from(cfg, data, bank)
}

/// Train from a given initial bank.
pub fn train_unsupervised_from(
    cfg: &TrainConfig,
    data: &Dataset,
    mut bank: PrototypeBank,
) -> Result<(TrainingTrace, PrototypeBank)> {
    cfg.expect_regime(Regime::Unsupervised)?;
    require_squared_euclidean(&bank)?;
    if data.is_empty() {
        return Err(Error::domain("dataset is empty"));
    }
    if bank.dim() != data.dim() || bank.k() != cfg.k {
        return Err(Error::config(
            "train.k",
            format!(
                "bank has {} components of dimension {}, config/data need {} of dimension {}",
                bank.k(),
                bank.dim(),
                cfg.k,
                data.dim()
            ),
        ));
    }
    let mut trace = TrainingTrace::new(Some(Regime::Unsupervised), Some(cfg.k));
    let mut sampler = BatchSampler::new(data.len(), cfg.batch_size, cfg.seed);
    for step in 0..cfg.steps {
        let batch: Vec<&[f64]> = sampler.next().into_iter().map(|i| data.inputs[i].as_slice()).collect();
        let (stats, grad) = mixture_nll_gradient(&batch, &bank)?;
        let drift = descend_bank(&mut bank, &grad, cfg)?;
        let mut record = TraceRecord::new(step, stats.loss, stats.entropy, stats.component_mass);
        record.score_drift = Some(drift);
        trace.push(record)?;
    }
    Ok((trace, bank))
}

/// Mean NLL of the whole dataset under an isotropic mixture.
pub fn mixture_nll(inputs: &[Vec<f64>], means: &[Vec<f64>], sigma2: f64) -> Result<f64> {
    let bank = mixture_bank(means.to_vec(), sigma2)?;
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    Ok(mixture_nll_gradient(&refs, &bank)?.0.loss)
}

/// Norm of the mean-NLL gradient with respect to the means.
pub fn mixture_gradient_norm(inputs: &[Vec<f64>], means: &[Vec<f64>], sigma2: f64) -> Result<f64> {
    let bank = mixture_bank(means.to_vec(), sigma2)?;
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    Ok(mixture_nll_gradient(&refs, &bank)?.1.norm())
}

/// Attention output together with the responsibilities over keys.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub output: Vec<f64>,
    pub assignment: SoftAssignment,
    /// Projected values `Wv x_j`.
    pub values: Vec<Vec<f64>>,
}

/// `o = Σ_j α_j Wv x_j` with `α = soft_assign(−s)`.
pub fn attention_forward(
    params: &AttentionParams,
    x_query: &[f64],
    x_keys: &[Vec<f64>],
    x_values: &[Vec<f64>],
) -> Result<AttentionOutput> {
    if x_values.len() != x_keys.len() {
        return Err(Error::Shape {
            context: "attention_forward values",
            expected: x_keys.len(),
            got: x_values.len(),
        });
    }
    let scores = query_key_scores(params, x_query, x_keys)?;
    let assignment = soft_assign(&DistanceVector::from_scores(&scores)?)?;
    let values = x_values
        .iter()
        .map(|x| params.wv().matvec(x))
        .collect::<Result<Vec<_>>>()?;
    let mut output = vec![0.0; params.value_dim()];
    for (a, v) in assignment.r.iter().zip(&values) {
        axpy(*a, v, &mut output);
    }
    Ok(AttentionOutput {
        output,
        assignment,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGradient {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

impl AttentionGradient {
    pub fn zeros(params: &AttentionParams) -> Self {
        Self {
            wq: Matrix::zeros(params.head_dim(), params.model_dim()),
            wk: Matrix::zeros(params.head_dim(), params.model_dim()),
            wv: Matrix::zeros(params.value_dim(), params.model_dim()),
        }
    }

    fn accumulate(&mut self, alpha: f64, other: &AttentionGradient) {
        self.wq.axpy(alpha, &other.wq);
        self.wk.axpy(alpha, &other.wk);
        self.wv.axpy(alpha, &other.wv);
    }
}

/// Chain rule for a downstream loss with `∂L/∂o = grad_output`.
///
/// `∂L/∂Wv = Σ_j α_j · grad_output x_jᵀ`, so keys with zero weight contribute
/// nothing. Scores receive `∂L/∂s_j = α_j (grad_output·v_j − grad_output·o)`.
pub fn attention_backward(
    params: &AttentionParams,
    x_query: &[f64],
    x_keys: &[Vec<f64>],
    x_values: &[Vec<f64>],
    forward: &AttentionOutput,
    grad_output: &[f64],
) -> Result<AttentionGradient> {
    if grad_output.len() != params.value_dim() {
        return Err(Error::Shape {
            context: "attention_backward upstream",
            expected: params.value_dim(),
            got: grad_output.len(),
        });
    }
    let alpha = &forward.assignment.r;
    let mut wv = Matrix::zeros(params.value_dim(), params.model_dim());
    for (a, x) in alpha.iter().zip(x_values) {
        wv.add_outer(*a, grad_output, x);
    }
    let g_dot_o = dot(grad_output, &forward.output);
    // d = −s, so ∂L/∂d = −∂L/∂s
    let dl_dd: Vec<f64> = alpha
        .iter()
        .zip(&forward.values)
        .map(|(a, v)| -a * (dot(grad_output, v) - g_dot_o))
        .collect();
    let scores = backprop_scores(params, x_query, x_keys, &dl_dd)?;
    Ok(AttentionGradient {
        wq: scores.wq,
        wk: scores.wk,
        wv,
    })
}

/// Loss `½‖o − target‖²` of one routing example, with its forward pass.
pub fn routing_loss(params: &AttentionParams, ex: &RoutingExample) -> Result<(f64, AttentionOutput)> {
    let fwd = attention_forward(params, &ex.query, &ex.keys, &ex.keys)?;
    if fwd.output.len() != ex.target.len() {
        return Err(Error::Shape {
            context: "routing target",
            expected: fwd.output.len(),
            got: ex.target.len(),
        });
    }
    let loss = 0.5
        * fwd
            .output
            .iter()
            .zip(&ex.target)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>();
    Ok((loss, fwd))
}

pub fn init_attention(cfg: &TrainConfig, data: &RoutingDataset) -> Result<AttentionParams> {
    let mut rng = SeededRng::new(cfg.seed);
    let model_dim = data.model_dim();
    AttentionParams::random(
        &mut rng,
        model_dim,
        cfg.head_dim.unwrap_or(model_dim),
        data.target_dim(),
        cfg.init_scale,
    )
}

/// Mean responsibility on the known correct slot (examples without one are skipped).
pub fn routing_accuracy(params: &AttentionParams, data: &RoutingDataset) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for ex in &data.examples {
        if let Some(s) = ex.correct_slot {
            total += routing_loss(params, ex)?.1.assignment.r[s];
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::domain("no example has a known correct slot"));
    }
    Ok(total / n as f64)
}

pub fn train_conditional(cfg: &TrainConfig, data: &RoutingDataset) -> Result<(TrainingTrace, AttentionParams)> {
    cfg.expect_regime(Regime::Conditional)?;
    if cfg.k != data.slots() {
        return Err(Error::config(
            "train.k",
            format!("conditional regime needs k = number of key slots ({})", data.slots()),
        ));
    }
    let mut params = init_attention(cfg, data)?;
    let n = data.examples.len();
    let mut sampler = BatchSampler::new(n, cfg.batch_size, cfg.seed);
    let mut trace = TrainingTrace::new(Some(Regime::Conditional), Some(data.slots()));
    for step in 0..cfg.steps {
        let batch = sampler.next();
        let w = 1.0 / batch.len() as f64;
        let mut grad = AttentionGradient::zeros(&params);
        let mut loss = 0.0;
        let mut entropy = 0.0;
        let mut mass = vec![0.0; data.slots()];
        let mut correct = 0.0;
        let mut with_slot = 0usize;
        let mut sum_err: f64 = 0.0;
        for &i in &batch {
            let ex = &data.examples[i];
            let (l, fwd) = routing_loss(&params, ex)?;
            let r = &fwd.assignment.r;
            loss += w * l;
            entropy += w * specialization_entropy(r)?;
            add_scaled(&mut mass, w, r);
            sum_err = sum_err.max((r.iter().sum::<f64>() - 1.0).abs());
            if let Some(s) = ex.correct_slot {
                correct += r[s];
                with_slot += 1;
            }
            let g_o: Vec<f64> = fwd.output.iter().zip(&ex.target).map(|(o, t)| o - t).collect();
            let g = attention_backward(&params, &ex.query, &ex.keys, &ex.keys, &fwd, &g_o)?;
            grad.accumulate(w, &g);
        }
        if cfg.weight_decay > 0.0 {
            grad.wq.axpy(cfg.weight_decay, params.wq());
            grad.wk.axpy(cfg.weight_decay, params.wk());
            grad.wv.axpy(cfg.weight_decay, params.wv());
        }
        let lr = cfg.learning_rate;
        params.wq_mut().axpy(-lr, &grad.wq);
        params.wk_mut().axpy(-lr, &grad.wk);
        params.wv_mut().axpy(-lr, &grad.wv);
        let score_drift = lr * (grad.wq.frobenius_norm().powi(2) + grad.wk.frobenius_norm().powi(2)).sqrt();
        let value_drift = lr * grad.wv.frobenius_norm();

        let mut record = TraceRecord::new(step, loss, entropy, mass);
        record.score_drift = Some(score_drift);
        record.value_drift = Some(value_drift);
        record.r_y_mean = (with_slot > 0).then(|| correct / with_slot as f64);
        record.weight_sum_error = Some(sum_err);
        trace.push(record)?;
    }
    Ok((trace, params))
}

pub fn init_logit_bank(cfg: &TrainConfig, dim: usize) -> Result<PrototypeBank> {
    let mut rng = SeededRng::new(cfg.seed);
    PrototypeBank::random_logit(&mut rng, cfg.k, dim, cfg.init_scale)
}

/// Fraction of inputs whose largest responsibility is on the label.
pub fn classification_accuracy(bank: &PrototypeBank, data: &Dataset) -> Result<f64> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::domain("dataset has no labels"))?;
    if data.is_empty() {
        return Err(Error::domain("dataset is empty"));
    }
    let mut hits = 0usize;
    for (x, y) in data.inputs.iter().zip(labels) {
        let r = soft_assign(&prototype_distances(bank, x)?)?.r;
        if argmax(&r) == y.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

pub fn train_supervised(cfg: &TrainConfig, data: &Dataset) -> Result<(TrainingTrace, PrototypeBank)> {
    cfg.expect_regime(Regime::Constrained)?;
    if data.is_empty() {
        return Err(Error::domain("dataset is empty"));
    }
    let bank = init_logit_bank(cfg, data.dim())?;
    train_supervised_from(cfg, data, bank)
}

pub fn train_supervised_from(
    cfg: &TrainConfig,
    data: &Dataset,
    mut bank: PrototypeBank,
) -> Result<(TrainingTrace, PrototypeBank)> {
    cfg.expect_regime(Regime::Constrained)?;
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::config("data.labeled", "constrained regime needs labels"))?;
    if !matches!(bank, PrototypeBank::Logit { .. }) {
        return Err(Error::domain("constrained regime needs a logit bank"));
    }
    if let Some(bad) = labels.iter().find(|l| l.0 >= cfg.k) {
        return Err(Error::config(
            "train.k",
            format!("label {} is out of range for k = {}", bad.0, cfg.k),
        ));
    }
    let k = cfg.k;
    let mut trace = TrainingTrace::new(Some(Regime::Constrained), Some(k));
    let mut sampler = BatchSampler::new(data.len(), cfg.batch_size, cfg.seed);
    for step in 0..cfg.steps {
        let batch = sampler.next();
        let w = 1.0 / batch.len() as f64;
        let mut grad = bank.zero_gradient();
        let mut loss = 0.0;
        let mut entropy = 0.0;
        let mut mass = vec![0.0; k];
        let mut off_target = vec![0.0; k];
        let mut clamp = vec![0.0; k];
        let mut r_y = 0.0;
        for &i in &batch {
            let (x, y) = (&data.inputs[i], labels[i]);
            let d = prototype_distances(&bank, x)?;
            loss += w * cross_entropy_value(&d, y)?;
            let r = soft_assign(&d)?.r;
            entropy += w * specialization_entropy(&r)?;
            add_scaled(&mut mass, w, &r);
            r_y += w * r[y.0];
            for (j, rj) in r.iter().enumerate() {
                if j != y.0 {
                    off_target[j] += w * rj;
                }
            }
            add_scaled(&mut clamp, w, &cross_entropy_gradient(&d, y)?);
            accumulate_backprop(&bank, x, &cross_entropy_distance_gradient(&d, y)?, w, &mut grad)?;
        }
        let drift = descend_bank(&mut bank, &grad, cfg)?;
        let mut record = TraceRecord::new(step, loss, entropy, mass);
        record.score_drift = Some(drift);
        record.r_y_mean = Some(r_y);
        record.off_target_mass = Some(off_target);
        record.clamp_gradient_sum = Some(clamp.iter().sum());
        trace.push(record)?;
    }
    Ok((trace, bank))
}
