//! Progressive residual training.
//!
//! A model is an initial network `f₀` plus stages `(e_i, r̂_i)`: each stage
//! network is fitted to the residual of everything before it, divided by that
//! residual's empirical max `e_i`, and contributes `e_i · r̂_i(x)` to the
//! prediction. Optional local patches (see [`crate::patch`]) add gated
//! corrections on top.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::feynman::Dataset;
use crate::mlp::{loss_and_gradient_with, Mlp, MlpArchitecture, Reduction};
use crate::numeric::{two_prod, CompensatedSum, DenseMatrix, Rng};
use crate::objectives::{mse, residual_weights, LossSpec, Metrics};
use crate::optimizer::{bfgs_minimize, BfgsOptions, BfgsReport, Termination};
use crate::patch::Patch;

/// Residual maxima at or below this are treated as converged: there is
/// nothing left to normalize.
pub const DEGENERATE_THRESHOLD: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Wmse,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Wmse => "wmse",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Some(LossKind::Mse),
            "wmse" => Some(LossKind::Wmse),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Full,
    Weighted,
}

impl Sampling {
    pub fn name(self) -> &'static str {
        match self {
            Sampling::Full => "full",
            Sampling::Weighted => "weighted",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Some(Sampling::Full),
            "weighted" => Some(Sampling::Weighted),
            _ => None,
        }
    }
}

/// How to fit one network.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub hidden_widths: Vec<usize>,
    pub loss: LossKind,
    pub optimizer: BfgsOptions,
    pub sampling: Sampling,
    /// Size of the weighted resample; `None` means the training-set size.
    pub resample_count: Option<usize>,
    pub reduction: Reduction,
}

impl StageConfig {
    /// MSE on the full training set, default optimizer settings.
    pub fn new(hidden_widths: Vec<usize>) -> Self {
        Self {
            hidden_widths,
            loss: LossKind::Mse,
            optimizer: BfgsOptions::default(),
            sampling: Sampling::Full,
            resample_count: None,
            reduction: Reduction::Sequential,
        }
    }

    /// `depth` hidden layers of `width` units.
    pub fn uniform(width: usize, depth: usize) -> Self {
        Self::new(vec![width; depth])
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_optimizer(mut self, opts: BfgsOptions) -> Self {
        self.optimizer = opts;
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.optimizer.max_iterations = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() {
            return Err(Error::InvalidArgument("stage needs at least one hidden layer".into()));
        }
        if self.resample_count == Some(0) {
            return Err(Error::InvalidArgument("resample_count must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    fn architecture(&self, input_dim: usize) -> Result<MlpArchitecture> {
        MlpArchitecture::new(input_dim, self.hidden_widths.clone())
    }
}

/// Per-column affine map `(x − shift) / scale` applied to inputs before any
/// network sees them. Off unless requested.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaling {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if shift.len() != scale.len() {
            return Err(Error::DimensionMismatch {
                context: "input scaling",
                expected: shift.len(),
                got: scale.len(),
            });
        }
        if shift.iter().any(|v| !v.is_finite()) || scale.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidArgument("input scaling must be finite with positive scales".into()));
        }
        Ok(Self { shift, scale })
    }

    /// Column mean and standard deviation; constant columns get scale 1.
    pub fn standardize(x: &DenseMatrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Empty("standardizing zero rows"));
        }
        let n = x.rows() as f64;
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        Self::new(mean, scale)
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "input scaling",
                expected: self.dim(),
                got: x.cols(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, s), c) in out.row_mut(i).iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = (*v - s) / c;
            }
        }
        Ok(out)
    }
}

/// One refinement: `scale · net(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub scale: f64,
    pub net: Mlp,
}

/// The composite predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct HiPreNetModel {
    pub input_scaling: Option<InputScaling>,
    pub initial: Mlp,
    pub stages: Vec<Stage>,
    pub patches: Vec<Patch>,
}

impl HiPreNetModel {
    pub fn new(initial: Mlp) -> Self {
        Self {
            input_scaling: None,
            initial,
            stages: Vec::new(),
            patches: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.initial.input_dim()
    }

    /// Checks the structural invariants; used after loading from disk.
    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        let mismatch = |context, got| Error::DimensionMismatch { context, expected: d, got };
        if let Some(s) = &self.input_scaling {
            if s.dim() != d {
                return Err(mismatch("input scaling", s.dim()));
            }
        }
        for st in &self.stages {
            if st.net.input_dim() != d {
                return Err(mismatch("stage network input", st.net.input_dim()));
            }
            if !(st.scale.is_finite() && st.scale > 0.0) {
                return Err(Error::InvalidArgument(format!("stage scale {} is not positive", st.scale)));
            }
        }
        for p in &self.patches {
            p.validate()?;
            if p.center.len() != d {
                return Err(mismatch("patch center", p.center.len()));
            }
        }
        Ok(())
    }

    /// Copy holding only the first `k` stages and no patches.
    pub fn truncated(&self, k: usize) -> HiPreNetModel {
        HiPreNetModel {
            input_scaling: self.input_scaling.clone(),
            initial: self.initial.clone(),
            stages: self.stages[..k.min(self.stages.len())].to_vec(),
            patches: Vec::new(),
        }
    }

    pub(crate) fn network_inputs(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "model input",
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        match &self.input_scaling {
            Some(s) => s.apply(x),
            None => Ok(x.clone()),
        }
    }

    /// `f₀(x) + Σ e_i r̂_i(x)` plus active patches, accumulated in that order.
    pub fn predict(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        let z = self.network_inputs(x)?;
        let mut out = self.initial.batch_forward(&z)?;
        for st in &self.stages {
            for (o, r) in out.iter_mut().zip(st.net.batch_forward(&z)?) {
                *o += st.scale * r;
            }
        }
        for p in &self.patches {
            for (k, row) in x.iter_rows().enumerate() {
                if p.contains(row) {
                    out[k] += p.scale * p.net.forward(z.row(k))?;
                }
            }
        }
        Ok(out)
    }

    /// `y − model(x)` with every term summed in compensated arithmetic, so
    /// that tiny residuals keep their relative accuracy even when the
    /// prediction itself is large.
    pub fn residuals(&self, x: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                context: "targets",
                expected: x.rows(),
                got: y.len(),
            });
        }
        let z = self.network_inputs(x)?;
        let mut acc: Vec<CompensatedSum> = self
            .initial
            .batch_forward(&z)?
            .into_iter()
            .map(CompensatedSum::new)
            .collect();
        let add_scaled = |a: &mut CompensatedSum, scale: f64, v: f64| {
            let (p, e) = two_prod(scale, v);
            a.add(p);
            a.add(e);
        };
        for st in &self.stages {
            for (a, r) in acc.iter_mut().zip(st.net.batch_forward(&z)?) {
                add_scaled(a, st.scale, r);
            }
        }
        for p in &self.patches {
            for (k, row) in x.iter_rows().enumerate() {
                if p.contains(row) {
                    add_scaled(&mut acc[k], p.scale, p.net.forward(z.row(k))?);
                }
            }
        }
        Ok(acc.iter().zip(y).map(|(a, &t)| a.subtract_from(t)).collect())
    }

    /// RMSE and L∞ of the model over `ds`.
    pub fn metrics(&self, ds: &Dataset) -> Result<Metrics> {
        let r = self.residuals(&ds.x, &ds.y)?;
        residual_metrics(&r)
    }

    pub fn parameter_count(&self) -> usize {
        self.initial.arch().parameter_count()
            + self.stages.iter().map(|s| s.net.arch().parameter_count()).sum::<usize>()
            + self.patches.iter().map(|p| p.net.arch().parameter_count()).sum::<usize>()
    }
}

pub(crate) fn residual_metrics(r: &[f64]) -> Result<Metrics> {
    let zeros = vec![0.0; r.len()];
    Metrics::of(r, &zeros)
}

/// Raw residuals of a model on a dataset, their max `e`, and `raw / e`
/// (absent when `e` is at or below [`DEGENERATE_THRESHOLD`]).
#[derive(Debug, Clone, PartialEq)]
pub struct StageResiduals {
    pub raw: Vec<f64>,
    pub e: f64,
    pub normalized: Option<Vec<f64>>,
}

impl StageResiduals {
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty("residuals over zero samples"));
        }
        if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let e = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let normalized = (e > DEGENERATE_THRESHOLD).then(|| raw.iter().map(|v| v / e).collect());
        Ok(Self { raw, e, normalized })
    }

    pub fn is_degenerate(&self) -> bool {
        self.normalized.is_none()
    }
}

pub fn compute_stage_residuals(model: &HiPreNetModel, ds: &Dataset) -> Result<StageResiduals> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    StageResiduals::from_raw(model.residuals(&ds.x, &ds.y)?)
}

/// `p_k = |r_k| / Σ|r_j|`.
pub fn sampling_distribution(normalized: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = normalized.iter().map(|r| r.abs()).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate { max_abs: 0.0 });
    }
    Ok(normalized.iter().map(|r| r.abs() / total).collect())
}

/// `count` indices drawn i.i.d. with replacement according to `p`, by
/// inverse-CDF lookup on a uniform draw.
pub fn weighted_resample(p: &[f64], count: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::InvalidArgument("resample count must be at least 1".into()));
    }
    if p.is_empty() {
        return Err(Error::Empty("sampling distribution"));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("sampling probabilities must be finite and nonnegative".into()));
    }
    let mut cdf = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for &v in p {
        acc += v;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::Degenerate { max_abs: 0.0 });
    }
    // Never land on a trailing zero-probability entry when rounding leaves
    // the last cumulative value short of the draw.
    let last = p.iter().rposition(|&v| v > 0.0).expect("positive mass");
    Ok((0..count)
        .map(|_| {
            let u = rng.next_f64() * acc;
            cdf.partition_point(|&c| c <= u).min(last)
        })
        .collect())
}

/// Per-network training record.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    /// 0 for the initial network, then 1, 2, … for refinements.
    pub stage_index: usize,
    /// Scale applied to this network's output (1 for the initial network).
    pub e: f64,
    pub train_rmse: f64,
    pub train_linf: f64,
    pub val_rmse: f64,
    pub val_linf: f64,
    /// max |target − net output| over the full training set, in the
    /// network's own (normalized) units.
    pub epsilon_hat: f64,
    pub optimizer: BfgsReport,
    pub seconds: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageOutcome {
    Appended(StageReport),
    /// Residuals already at the degenerate threshold; nothing appended.
    Degenerate { e: f64 },
    /// The optimizer ended in a non-finite state; the model is unchanged.
    Rejected(StageReport),
}

fn fit_network(
    cfg: &StageConfig,
    x: &DenseMatrix,
    y: &[f64],
    loss: &LossSpec,
    rng: &mut Rng,
) -> Result<(Mlp, BfgsReport)> {
    let arch = cfg.architecture(x.cols())?;
    let init = Mlp::init(arch.clone(), rng);
    let n = init.params().len();
    let objective = |p: &[f64]| match loss_and_gradient_with(&arch, p, x, y, loss, cfg.reduction) {
        Ok(v) => v,
        Err(_) => (f64::INFINITY, vec![f64::NAN; n]),
    };
    let (params, report) = match bfgs_minimize(objective, init.params(), &cfg.optimizer) {
        Ok(v) => v,
        Err(Error::NonFiniteStart) => {
            let report = BfgsReport {
                iterations_used: 0,
                final_loss: f64::INFINITY,
                final_gradient_infnorm: f64::INFINITY,
                termination: Termination::NonFinite,
                evaluations: 1,
            };
            return Ok((init, report));
        }
        Err(e) => return Err(e),
    };
    Ok((Mlp::new(arch, params)?, report))
}

/// Fits one refinement network to the current normalized residuals and
/// appends it to `model`.
pub fn train_stage(
    model: &mut HiPreNetModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &StageConfig,
    rng: &mut Rng,
) -> Result<StageOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let res = compute_stage_residuals(model, train)?;
    let Some(target) = res.normalized.as_deref() else {
        return Ok(StageOutcome::Degenerate { e: res.e });
    };
    let z = model.network_inputs(&train.x)?;

    let (fit_x, fit_y) = match cfg.sampling {
        Sampling::Full => (z.clone(), target.to_vec()),
        Sampling::Weighted => {
            let p = sampling_distribution(target)?;
            let count = cfg.resample_count.unwrap_or(train.len());
            let idx = weighted_resample(&p, count, rng)?;
            (z.select_rows(&idx), idx.iter().map(|&i| target[i]).collect())
        }
    };
    let loss = match cfg.loss {
        LossKind::Mse => LossSpec::Mse,
        LossKind::Wmse => LossSpec::Wmse(residual_weights(&fit_y)),
    };
    let (net, opt) = fit_network(cfg, &fit_x, &fit_y, &loss, rng)?;
    let accepted = opt.termination != Termination::NonFinite;

    let out = net.batch_forward(&z)?;
    let epsilon_hat = target
        .iter()
        .zip(&out)
        .fold(0.0_f64, |m, (t, o)| m.max((t - o).abs()));
    if accepted {
        model.stages.push(Stage { scale: res.e, net });
    }
    let train_m = model.metrics(train)?;
    let val_m = model.metrics(val)?;
    let report = StageReport {
        stage_index: model.stages.len() + usize::from(!accepted),
        e: res.e,
        train_rmse: train_m.rmse,
        train_linf: train_m.linf,
        val_rmse: val_m.rmse,
        val_linf: val_m.linf,
        epsilon_hat: if accepted { epsilon_hat } else { f64::NAN },
        optimizer: opt,
        seconds: start.elapsed().as_secs_f64(),
        accepted,
    };
    log::info!(
        "stage {}: e={:.3e} train_rmse={:.3e} val_rmse={:.3e} iters={} ({})",
        report.stage_index,
        report.e,
        report.train_rmse,
        report.val_rmse,
        report.optimizer.iterations_used,
        report.optimizer.termination.name()
    );
    Ok(if accepted {
        StageOutcome::Appended(report)
    } else {
        StageOutcome::Rejected(report)
    })
}

/// Everything that determines one training run besides the data and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    /// The initial network always trains with MSE on the full set; only its
    /// widths, optimizer settings and reduction are read.
    pub initial: StageConfig,
    pub schedule: Vec<StageConfig>,
    /// Stop adding stages once validation MSE is at or below this.
    pub tol: f64,
    pub standardize_inputs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ScheduleExhausted,
    Tolerance,
    Degenerate,
    RepeatedFailure,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::ScheduleExhausted => "schedule_exhausted",
            StopReason::Tolerance => "tolerance",
            StopReason::Degenerate => "degenerate",
            StopReason::RepeatedFailure => "repeated_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub model: HiPreNetModel,
    /// Initial network first, then one entry per attempted stage.
    pub reports: Vec<StageReport>,
    pub stop: StopReason,
}

pub fn train_hiprenet(train: &Dataset, val: &Dataset, plan: &TrainPlan, rng: &mut Rng) -> Result<TrainingRun> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("training or validation set"));
    }
    if train.dim() != val.dim() {
        return Err(Error::DimensionMismatch {
            context: "validation set columns",
            expected: train.dim(),
            got: val.dim(),
        });
    }
    if plan.tol.is_nan() {
        return Err(Error::InvalidArgument("tolerance is NaN".into()));
    }
    plan.initial.validate()?;
    for cfg in &plan.schedule {
        cfg.validate()?;
    }

    let start = Instant::now();
    let scaling = if plan.standardize_inputs {
        Some(InputScaling::standardize(&train.x)?)
    } else {
        None
    };
    let z = match &scaling {
        Some(s) => s.apply(&train.x)?,
        None => train.x.clone(),
    };
    let (net, opt) = fit_network(&plan.initial, &z, &train.y, &LossSpec::Mse, rng)?;
    if opt.termination == Termination::NonFinite {
        return Err(Error::InvalidArgument(
            "initial network training diverged to non-finite values".into(),
        ));
    }
    let mut model = HiPreNetModel {
        input_scaling: scaling,
        initial: net,
        stages: Vec::new(),
        patches: Vec::new(),
    };
    let train_res = model.residuals(&train.x, &train.y)?;
    let train_m = residual_metrics(&train_res)?;
    let val_m = model.metrics(val)?;
    let initial_report = StageReport {
        stage_index: 0,
        e: 1.0,
        train_rmse: train_m.rmse,
        train_linf: train_m.linf,
        val_rmse: val_m.rmse,
        val_linf: val_m.linf,
        epsilon_hat: train_m.linf,
        optimizer: opt,
        seconds: start.elapsed().as_secs_f64(),
        accepted: true,
    };
    log::info!(
        "initial: train_rmse={:.3e} val_rmse={:.3e} iters={}",
        initial_report.train_rmse,
        initial_report.val_rmse,
        initial_report.optimizer.iterations_used
    );
    let mut reports = vec![initial_report];

    let mut failures = 0;
    let mut stop = StopReason::ScheduleExhausted;
    for cfg in &plan.schedule {
        let last = reports.iter().rev().find(|r| r.accepted).expect("initial report");
        if last.val_rmse * last.val_rmse <= plan.tol {
            stop = StopReason::Tolerance;
            break;
        }
        match train_stage(&mut model, train, val, cfg, rng)? {
            StageOutcome::Appended(r) => {
                failures = 0;
                reports.push(r);
            }
            StageOutcome::Degenerate { .. } => {
                stop = StopReason::Degenerate;
                break;
            }
            StageOutcome::Rejected(r) => {
                log::warn!("stage {} rejected: optimizer ended non-finite", r.stage_index);
                reports.push(r);
                failures += 1;
                if failures == 2 {
                    stop = StopReason::RepeatedFailure;
                    break;
                }
            }
        }
    }
    Ok(TrainingRun { model, reports, stop })
}

/// Validation MSE of the model, as compared against the plan tolerance.
pub fn validation_mse(model: &HiPreNetModel, val: &Dataset) -> Result<f64> {
    let r = model.residuals(&val.x, &val.y)?;
    mse(&r, &vec![0.0; r.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feynman::{generate_dataset, Domain, FunctionId};
    use crate::numeric::Rng;
    use proptest::prelude::*;

    fn random_net(d: usize, widths: Vec<usize>, rng: &mut Rng) -> Mlp {
        Mlp::init(MlpArchitecture::new(d, widths).unwrap(), rng)
    }

    fn random_points(n: usize, d: usize, rng: &mut Rng) -> DenseMatrix {
        let data = (0..n * d).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect();
        DenseMatrix::from_row_major(n, d, data).unwrap()
    }

    fn line_dataset(n: usize) -> Dataset {
        let xs: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        let x = DenseMatrix::from_row_major(n, 1, xs.clone()).unwrap();
        Dataset::new(x, xs.iter().map(|v| 2.0 * v).collect()).unwrap()
    }

    #[test]
    fn predict_without_stages_is_the_initial_net() {
        let mut rng = Rng::new(1);
        let net = random_net(2, vec![4, 4], &mut rng);
        let x = random_points(10, 2, &mut rng);
        let model = HiPreNetModel::new(net.clone());
        assert_eq!(model.predict(&x).unwrap(), net.batch_forward(&x).unwrap());

        let mut with_zero = model.clone();
        with_zero.stages.push(Stage {
            scale: 0.3,
            net: Mlp::zeros(MlpArchitecture::new(2, vec![3]).unwrap()),
        });
        assert_eq!(with_zero.predict(&x).unwrap(), net.batch_forward(&x).unwrap());
    }

    #[test]
    fn predict_is_the_term_by_term_sum() {
        let mut rng = Rng::new(2);
        let mut model = HiPreNetModel::new(random_net(3, vec![5, 5], &mut rng));
        for (scale, w) in [(0.5, 4), (0.01, 6), (2e-4, 3)] {
            model.stages.push(Stage { scale, net: random_net(3, vec![w, w], &mut rng) });
        }
        let x = random_points(10, 3, &mut rng);
        let got = model.predict(&x).unwrap();
        for (k, row) in x.iter_rows().enumerate() {
            let mut f = model.initial.forward(row).unwrap();
            for st in &model.stages {
                f += st.scale * st.net.forward(row).unwrap();
            }
            assert_eq!(got[k], f);
        }
        // truncation gives the recursive partial sums
        for k in 0..=3 {
            let t = model.truncated(k).predict(&x).unwrap();
            let prev = if k == 0 {
                model.initial.batch_forward(&x).unwrap()
            } else {
                let p = model.truncated(k - 1).predict(&x).unwrap();
                let r = model.stages[k - 1].net.batch_forward(&x).unwrap();
                p.iter().zip(r).map(|(a, b)| a + model.stages[k - 1].scale * b).collect()
            };
            assert_eq!(t, prev);
        }
        assert!(matches!(model.predict(&random_points(2, 2, &mut rng)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn residual_normalization_examples() {
        let r = StageResiduals::from_raw(vec![0.2, -0.5, 0.1]).unwrap();
        assert_eq!(r.e, 0.5);
        assert_eq!(r.normalized.unwrap(), vec![0.4, -1.0, 0.2]);
        assert!(StageResiduals::from_raw(vec![0.0; 4]).unwrap().is_degenerate());
        assert!(StageResiduals::from_raw(vec![1e-16, -1e-15]).unwrap().is_degenerate());
        assert!(StageResiduals::from_raw(vec![]).is_err());
    }

    #[test]
    fn exact_model_gives_degenerate_residuals() {
        let mut rng = Rng::new(3);
        let net = random_net(2, vec![3], &mut rng);
        let x = random_points(20, 2, &mut rng);
        let y = net.batch_forward(&x).unwrap();
        let ds = Dataset::new(x, y).unwrap();
        let mut model = HiPreNetModel::new(net);
        let res = compute_stage_residuals(&model, &ds).unwrap();
        assert!(res.is_degenerate());
        assert!(res.raw.iter().all(|&v| v == 0.0));
        let out = train_stage(&mut model, &ds, &ds, &StageConfig::new(vec![3]), &mut rng).unwrap();
        assert!(matches!(out, StageOutcome::Degenerate { .. }));
        assert!(model.stages.is_empty());
    }

    #[test]
    fn one_stage_improves_a_poor_linear_fit() {
        let ds = line_dataset(50);
        let mut rng = Rng::new(4);
        let plan = TrainPlan {
            initial: StageConfig::new(vec![2]).with_max_iterations(3),
            schedule: vec![StageConfig::new(vec![4]).with_max_iterations(200)],
            tol: 0.0,
            standardize_inputs: false,
        };
        let run = train_hiprenet(&ds, &ds, &plan, &mut rng).unwrap();
        assert_eq!(run.reports.len(), 2);
        assert!(run.reports[1].train_rmse < run.reports[0].train_rmse);
    }

    #[test]
    fn infinite_tolerance_and_empty_schedule_stop_after_initial() {
        let ds = line_dataset(30);
        let mut plan = TrainPlan {
            initial: StageConfig::new(vec![2]).with_max_iterations(5),
            schedule: vec![StageConfig::new(vec![2]).with_max_iterations(5)],
            tol: f64::INFINITY,
            standardize_inputs: false,
        };
        let run = train_hiprenet(&ds, &ds, &plan, &mut Rng::new(5)).unwrap();
        assert!(run.model.stages.is_empty());
        assert_eq!(run.stop, StopReason::Tolerance);
        plan.tol = 0.0;
        plan.schedule.clear();
        let run = train_hiprenet(&ds, &ds, &plan, &mut Rng::new(5)).unwrap();
        assert!(run.model.stages.is_empty());
        assert_eq!(run.reports.len(), 1);
    }

    #[test]
    fn contraction_identity_holds_stage_by_stage() {
        let id = FunctionId::I13_12;
        let mut rng = Rng::new(6);
        let train = generate_dataset(id, 400, &id.default_domain(), &mut rng).unwrap();
        let val = generate_dataset(id, 100, &id.default_domain(), &mut rng).unwrap();
        let cfg = StageConfig::uniform(4, 2).with_max_iterations(150);
        let plan = TrainPlan {
            initial: cfg.clone(),
            schedule: vec![cfg.clone(), cfg.clone(), cfg.clone().with_loss(LossKind::Wmse)],
            tol: 0.0,
            standardize_inputs: false,
        };
        let run = train_hiprenet(&train, &val, &plan, &mut rng).unwrap();
        assert_eq!(run.model.stages.len(), 3);
        for i in 1..=run.model.stages.len() {
            let before = compute_stage_residuals(&run.model.truncated(i - 1), &train).unwrap();
            let after = compute_stage_residuals(&run.model.truncated(i), &train).unwrap();
            let target = before.normalized.unwrap();
            let out = run.model.stages[i - 1].net.batch_forward(&train.x).unwrap();
            let eps = target.iter().zip(&out).fold(0.0_f64, |m, (t, o)| m.max((t - o).abs()));
            let rhs = eps * before.e;
            assert!((after.e - rhs).abs() <= 1e-12 * rhs, "stage {i}: {} vs {rhs}", after.e);
            assert_eq!(run.model.stages[i - 1].scale, before.e);
            assert_eq!(run.reports[i].epsilon_hat, eps);
        }
    }

    #[test]
    fn sequential_training_is_bit_reproducible() {
        let id = FunctionId::I29_16;
        let dom = id.default_domain();
        let run = || {
            let mut rng = Rng::new(77);
            let train = generate_dataset(id, 200, &dom, &mut rng).unwrap();
            let cfg = StageConfig::uniform(3, 2).with_max_iterations(40);
            let plan = TrainPlan {
                initial: cfg.clone(),
                schedule: vec![cfg.clone().with_sampling(Sampling::Weighted), cfg],
                tol: 0.0,
                standardize_inputs: true,
            };
            train_hiprenet(&train, &train, &plan, &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model, b.model);
        for (x, y) in a.reports.iter().zip(&b.reports) {
            assert_eq!(x.train_rmse.to_bits(), y.train_rmse.to_bits());
            assert_eq!(x.optimizer, y.optimizer);
        }
    }

    #[test]
    fn standardized_inputs_are_used_consistently() {
        let mut rng = Rng::new(8);
        let dom = Domain::cube(10.0, 20.0, 2).unwrap();
        let train = generate_dataset(FunctionId::I13_12, 100, &dom, &mut rng).unwrap();
        let s = InputScaling::standardize(&train.x).unwrap();
        let z = s.apply(&train.x).unwrap();
        let mean0: f64 = (0..z.rows()).map(|i| z.get(i, 0)).sum::<f64>() / z.rows() as f64;
        assert!(mean0.abs() < 1e-12);
        let mut model = HiPreNetModel::new(random_net(2, vec![3], &mut rng));
        model.input_scaling = Some(s);
        let direct = model.initial.batch_forward(&z).unwrap();
        assert_eq!(model.predict(&train.x).unwrap(), direct);
    }

    #[test]
    fn sampling_distribution_examples() {
        assert_eq!(sampling_distribution(&[1.0, 3.0]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(sampling_distribution(&[-0.5; 4]).unwrap(), vec![0.25; 4]);
        assert!(sampling_distribution(&[0.0, 0.0]).is_err());
        assert!(sampling_distribution(&[]).is_err());
    }

    #[test]
    fn resample_examples() {
        let mut rng = Rng::new(9);
        let idx = weighted_resample(&[0.0, 0.0, 0.0, 1.0, 0.0], 50, &mut rng).unwrap();
        assert!(idx.iter().all(|&i| i == 3));
        assert!(weighted_resample(&[0.5, 0.5], 0, &mut rng).is_err());
        let a = weighted_resample(&[0.1, 0.2, 0.7], 100, &mut Rng::new(3)).unwrap();
        let b = weighted_resample(&[0.1, 0.2, 0.7], 100, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);

        let n = 100_000;
        let idx = weighted_resample(&[0.25; 4], n, &mut rng).unwrap();
        for j in 0..4 {
            let freq = idx.iter().filter(|&&i| i == j).count() as f64 / n as f64;
            assert!((freq - 0.25).abs() < 0.01, "{j}: {freq}");
        }
    }

    fn residual_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 1..60).prop_filter("nonzero", |v| v.iter().any(|&x| x != 0.0))
    }

    proptest! {
        #[test]
        fn distribution_is_normalized_and_argmax_aligned(r in residual_vec()) {
            let p = sampling_distribution(&r).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let arg = |v: &[f64], f: &dyn Fn(f64) -> f64| {
                v.iter().enumerate().fold(0, |b, (i, &x)| if f(x) > f(v[b]) { i } else { b })
            };
            prop_assert_eq!(arg(&p, &|x| x), arg(&r, &|x: f64| x.abs()));
        }

        #[test]
        fn normalized_residuals_peak_at_one(r in residual_vec()) {
            let res = StageResiduals::from_raw(r).unwrap();
            if let Some(n) = res.normalized {
                let m = n.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                prop_assert_eq!(m, 1.0);
            }
        }

        #[test]
        fn resampled_indices_stay_in_range(r in residual_vec(), count in 1usize..200, seed in any::<u64>()) {
            let p = sampling_distribution(&r).unwrap();
            let idx = weighted_resample(&p, count, &mut Rng::new(seed)).unwrap();
            prop_assert_eq!(idx.len(), count);
            prop_assert!(idx.iter().all(|&i| i < r.len() && p[i] > 0.0));
        }
    }
}
