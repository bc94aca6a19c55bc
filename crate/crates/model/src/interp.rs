use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::params::{ModelConfig, ModelParams, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpolationSpec {
    pub alpha: f64,
    /// Ascending candidate alphas for the search.
    pub grid: Vec<f64>,
    /// Weight of the general-translation score in the search objective;
    /// the task score gets the remainder.
    pub general_weight: f64,
}

impl Default for InterpolationSpec {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            general_weight: 0.5,
        }
    }
}

impl InterpolationSpec {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_grid(&self.grid)?;
        if !(0.0..=1.0).contains(&self.general_weight) {
            return Err(ModelError::Config("general_weight must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn objective(&self, general: f64, task: f64) -> f64 {
        self.general_weight * general + (1.0 - self.general_weight) * task
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ModelError::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(ModelError::Config("alpha grid is empty".into()));
    }
    for &a in grid {
        check_alpha(a)?;
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(ModelError::Config("alpha grid must be sorted ascending".into()));
    }
    Ok(())
}

fn blend(b: &[f64], f: &[f64], alpha: f64, out: &mut [f64]) {
    if alpha == 0.0 {
        out.copy_from_slice(b);
    } else if alpha == 1.0 {
        out.copy_from_slice(f);
    } else {
        for ((o, x), y) in out.iter_mut().zip(b).zip(f) {
            *o = (1.0 - alpha) * x + alpha * y;
        }
    }
}

/// `(1 - alpha) * base + alpha * finetuned` over common parameters. Rows
/// that exist only in the finetuned model (appended by vocabulary
/// expansion) are copied from it, as is the segment token.
pub fn interpolate(base: &ModelParams, finetuned: &ModelParams, alpha: f64) -> Result<ModelParams> {
    check_alpha(alpha)?;
    let shape = |p: &ModelParams| ModelConfig {
        segment_token: None,
        ..p.config().clone()
    };
    if shape(base) != shape(finetuned) {
        return Err(ModelError::Config("base and finetuned architectures differ".into()));
    }
    let mut out = finetuned.clone();
    for (name, b) in base.iter() {
        let f = finetuned.get(name).ok_or_else(|| ModelError::Param {
            name: name.into(),
            msg: "present only in the base model".into(),
        })?;
        let common = common_prefix(name, b, f)?;
        let i = finetuned.names().iter().position(|n| n == name).expect("name present");
        let dst = &mut out.tensors_mut()[i].data[..common];
        blend(&b.data, &f.data[..common], alpha, dst);
    }
    Ok(out)
}

/// Number of leading elements shared by `b` and `f`: all of them for equal
/// shapes, the base rows when `f` only adds rows.
fn common_prefix(name: &str, b: &Tensor, f: &Tensor) -> Result<usize> {
    if b.shape == f.shape {
        return Ok(b.len());
    }
    let grows = b.shape.len() == f.shape.len()
        && !b.shape.is_empty()
        && b.shape[1..] == f.shape[1..]
        && b.shape[0] < f.shape[0];
    if grows {
        Ok(b.len())
    } else {
        Err(ModelError::Param {
            name: name.into(),
            msg: format!("shape {:?} in base vs {:?} in finetuned", b.shape, f.shape),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub best_alpha: f64,
    pub best_perf: f64,
    /// `(alpha, perf)` for every grid point, in grid order.
    pub trace: Vec<(f64, f64)>,
}

/// Evaluate `perf` on every grid interpolation; the maximum wins and ties
/// go to the smaller alpha.
pub fn search_alpha<E: From<ModelError>>(
    base: &ModelParams,
    finetuned: &ModelParams,
    mut perf: impl FnMut(&ModelParams) -> Result<f64, E>,
    grid: &[f64],
) -> Result<AlphaSearch, E> {
    check_grid(grid)?;
    let mut trace = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &alpha in grid {
        let model = interpolate(base, finetuned, alpha)?;
        let score = perf(&model)?;
        if !score.is_finite() {
            return Err(ModelError::Input(format!("performance at alpha {alpha} is {score}")).into());
        }
        trace.push((alpha, score));
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((alpha, score));
        }
    }
    let (best_alpha, best_perf) = best.expect("non-empty grid");
    Ok(AlphaSearch {
        best_alpha,
        best_perf,
        trace,
    })
}
