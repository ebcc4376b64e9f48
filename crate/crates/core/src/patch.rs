//! Local patching: a small network fitted to the normalized residual in a
//! closed Euclidean ball around the worst validation point, switched on only
//! inside that ball.

use crate::boost::{residual_metrics, HiPreNetModel, DEGENERATE_THRESHOLD};
use crate::error::{Error, Result};
use crate::feynman::Dataset;
use crate::mlp::{loss_and_gradient, Mlp, MlpArchitecture};
use crate::numeric::{DenseMatrix, Rng};
use crate::objectives::{LossSpec, Metrics};
use crate::optimizer::{bfgs_minimize, BfgsOptions, BfgsReport, Termination};

/// `scale · net(x)` wherever `‖x − center‖₂ ≤ radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: Vec<f64>,
    pub radius: f64,
    pub scale: f64,
    pub net: Mlp,
}

impl Patch {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::InvalidArgument(format!("patch radius {} is not positive", self.radius)));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidArgument(format!("patch scale {} is not positive", self.scale)));
        }
        if self.net.input_dim() != self.center.len() || self.center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("patch center does not match its network".into()));
        }
        Ok(())
    }

    /// Closed-ball indicator.
    pub fn contains(&self, x: &[f64]) -> bool {
        in_ball(x, &self.center, self.radius)
    }
}

// Compared squared: sqrt would round distances just past the radius back
// onto it.
fn in_ball(x: &[f64], center: &[f64], radius: f64) -> bool {
    let d2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
    d2 <= radius * radius
}

/// Worst validation sample: `(index, x, |residual|)`, lowest index on ties.
pub fn find_max_error_point(model: &HiPreNetModel, val: &Dataset) -> Result<(usize, Vec<f64>, f64)> {
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let r = model.residuals(&val.x, &val.y)?;
    let (idx, err) = argmax_abs(&r);
    Ok((idx, val.x.row(idx).to_vec(), err))
}

fn argmax_abs(r: &[f64]) -> (usize, f64) {
    r.iter()
        .enumerate()
        .fold((0, r[0].abs()), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) })
}

/// Rows of `x` in the closed ball, ascending.
pub fn neighborhood(x: &DenseMatrix, center: &[f64], radius: f64) -> Result<Vec<usize>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius {radius} is not positive")));
    }
    if x.cols() != center.len() {
        return Err(Error::DimensionMismatch {
            context: "neighborhood center",
            expected: x.cols(),
            got: center.len(),
        });
    }
    Ok((0..x.rows()).filter(|&i| in_ball(x.row(i), center, radius)).collect())
}

/// What [`train_patch`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum PatchOutcome {
    Appended(PatchReport),
    /// Residuals inside the ball are already at the degenerate threshold.
    NotNeeded { center: Vec<f64>, scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchReport {
    pub center_index: usize,
    pub center: Vec<f64>,
    pub neighborhood_size: usize,
    pub scale: f64,
    pub before: Metrics,
    pub after: Metrics,
    pub optimizer: BfgsReport,
}

/// Fits `arch` to the normalized training residuals around the worst
/// validation point and appends the resulting patch to `model`.
pub fn train_patch(
    model: &mut HiPreNetModel,
    train: &Dataset,
    val: &Dataset,
    radius: f64,
    arch: &MlpArchitecture,
    opts: &BfgsOptions,
    rng: &mut Rng,
) -> Result<PatchOutcome> {
    if arch.input_dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "patch network input",
            expected: model.input_dim(),
            got: arch.input_dim(),
        });
    }
    let (center_index, center, _) = find_max_error_point(model, val)?;
    let idx = neighborhood(&train.x, &center, radius)?;
    let required = 10.max(arch.parameter_count() / 4);
    if idx.len() < required {
        return Err(Error::NeighborhoodTooSmall {
            found: idx.len(),
            required,
        });
    }
    let local = train.subset(&idx);
    let raw = model.residuals(&local.x, &local.y)?;
    let scale = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale <= DEGENERATE_THRESHOLD {
        return Ok(PatchOutcome::NotNeeded { center, scale });
    }
    let target: Vec<f64> = raw.iter().map(|v| v / scale).collect();
    let z = model.network_inputs(&local.x)?;

    let init = Mlp::init(arch.clone(), rng);
    let n = init.params().len();
    let objective = |p: &[f64]| match loss_and_gradient(arch, p, &z, &target, &LossSpec::Mse) {
        Ok(v) => v,
        Err(_) => (f64::INFINITY, vec![f64::NAN; n]),
    };
    let (params, optimizer) = bfgs_minimize(objective, init.params(), opts)?;
    if optimizer.termination == Termination::NonFinite {
        return Err(Error::InvalidArgument("patch training diverged to non-finite values".into()));
    }

    let before = model.metrics(val)?;
    model.patches.push(Patch {
        center: center.clone(),
        radius,
        scale,
        net: Mlp::new(arch.clone(), params)?,
    });
    let after = residual_metrics(&model.residuals(&val.x, &val.y)?)?;
    Ok(PatchOutcome::Appended(PatchReport {
        center_index,
        center,
        neighborhood_size: idx.len(),
        scale,
        before,
        after,
        optimizer,
    }))
}
