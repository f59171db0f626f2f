use super::{DiffTensor, GradTape};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// The function is not differentiable within `step` of this element.
    pub excluded: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn excluded(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.excluded)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.excluded && e.rel_error > self.tolerance)
    }
}

fn eval_at<F>(f: &F, point: &DiffTensor, index: usize, delta: f64) -> Result<f64>
where
    F: Fn(&DiffTensor) -> Result<DiffTensor>,
{
    let mut v = point.to_vec();
    v[index] += delta;
    let x = DiffTensor::new(point.shape(), v)?;
    f(&x).and_then(|y| y.item()).map_err(|e| Error::Contract(format!("at element {index}: {e}")))
}

/// Compares reverse-mode gradients of `f` at `point` against central
/// differences.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-12)`.
/// An element is excluded when its one-sided slopes disagree by an amount
/// that does not shrink with the step (a kink or jump within `step`), or when
/// central differences at `step` and `step/2` disagree grossly (a jump between
/// the two).
pub fn grad_check<F>(f: F, point: &DiffTensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&DiffTensor) -> Result<DiffTensor>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::contract(format!("grad_check step must be positive, got {step}")));
    }
    let tape = GradTape::new();
    let x = tape.leaf(&point.detach())?;
    let y = f(&x)?;
    let analytic = match y.backward()?.get(&x) {
        Some(g) => g.to_vec(),
        // Output does not depend on the point.
        None => vec![0.0; point.len()],
    };
    let f0 = f(&point.detach())?.item()?;

    let mut entries = Vec::with_capacity(point.len());
    let mut max_rel: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let fp = eval_at(&f, point, i, step)?;
        let fm = eval_at(&f, point, i, -step)?;
        let numeric = (fp - fm) / (2.0 * step);

        let half = 0.5 * step;
        let fph = eval_at(&f, point, i, half)?;
        let fmh = eval_at(&f, point, i, -half)?;
        let gap = (fp - f0) / step - (f0 - fm) / step;
        let gap_half = (fph - f0) / half - (f0 - fmh) / half;
        let slope_scale = ((fp - f0) / step).abs().max(((f0 - fm) / step).abs());
        let noise = 1e3 * f64::EPSILON * f0.abs().max(1.0) / step;
        let kink = gap.abs() > 1e-6 * slope_scale + noise && gap_half.abs() > 0.75 * gap.abs();
        // a jump in (step/2, step] is invisible at the half step but dominates the full one
        let numeric_half = (fph - fmh) / step;
        let jump = (numeric - numeric_half).abs() > 0.25 * numeric.abs().max(numeric_half.abs()) + 4.0 * noise;
        let excluded = kink || jump;

        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        if !excluded {
            max_rel = max_rel.max(rel);
        }
        entries.push(GradCheckEntry {
            index: i,
            analytic: a,
            numeric,
            rel_error: rel,
            excluded,
        });
    }
    Ok(GradCheckReport {
        entries,
        max_rel_error: max_rel,
        tolerance,
        passed: max_rel <= tolerance,
    })
}
