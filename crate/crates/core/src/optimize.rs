//! Gradient checking and direct gradient descent on a distance map.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cape_loss::{evaluate_plan, plan_paths, CapeConfig, CapeResult, PathPlan};
use crate::error::{CapeError, Result};
use crate::grid::ScalarGrid;
use crate::gt_graph::GroundTruthGraph;
use crate::metrics::{graph_from_prediction, graph_scores, MetricConfig};
use crate::synth::SynthSample;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Cells compared against the analytic gradient.
    pub checked: usize,
    /// Cells whose perturbation changed a selected path or projection.
    pub skipped: usize,
}

fn same_paths(a: &CapeResult, b: &CapeResult) -> bool {
    a.records.len() == b.records.len()
        && a.records
            .iter()
            .zip(&b.records)
            .all(|(x, y)| x.pixel_path.cells == y.pixel_path.cells)
}

// Σ over records of the per-path loss difference; paths untouched by the
// perturbation cancel exactly.
fn loss_difference(plus: &CapeResult, minus: &CapeResult) -> f64 {
    plus.records
        .iter()
        .zip(&minus.records)
        .map(|(p, m)| p.loss - m.loss)
        .sum()
}

/// Compares the analytic gradient with central differences on up to
/// `n_cells` cells drawn from the selected paths. The sampled pairs are
/// frozen; cells where either perturbation changes a pixel path are skipped.
pub fn finite_diff_check(
    g: &GroundTruthGraph,
    pred: &ScalarGrid,
    cfg: &CapeConfig,
    h: f64,
    n_cells: usize,
) -> Result<GradCheck> {
    if !(h > 0.0) {
        return Err(CapeError::InvalidConfig(format!("step must be positive, got {h}")));
    }
    let plan = plan_paths(g, pred.shape(), cfg)?;
    let base = evaluate_plan(&plan, pred, cfg)?;
    let shape = pred.shape();
    let mut cells: Vec<usize> = base
        .records
        .iter()
        .flat_map(|r| r.pixel_path.cells.iter().map(|&c| shape.linear(c)))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    if cells.len() > n_cells {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut keep = sample(&mut rng, cells.len(), n_cells).into_vec();
        keep.sort_unstable();
        cells = keep.into_iter().map(|i| cells[i]).collect();
    }
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = pred.clone();
    for &i in &cells {
        let v = pred.data()[i];
        probe.data_mut()[i] = v + h;
        let plus = evaluate_plan(&plan, &probe, cfg)?;
        probe.data_mut()[i] = v - h;
        let minus = evaluate_plan(&plan, &probe, cfg)?;
        probe.data_mut()[i] = v;
        if !same_paths(&base, &plus) || !same_paths(&base, &minus) {
            out.skipped += 1;
            continue;
        }
        let numeric = loss_difference(&plus, &minus) / (2.0 * h);
        let analytic = base.gradient.data()[i];
        let rel = (numeric - analytic).abs() / analytic.abs().max(1e-6);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.checked += 1;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Weight of the path loss.
    pub alpha: f64,
    /// Weight of the squared pull toward the starting map.
    pub prox_weight: f64,
    pub clamp_min: f64,
    pub resample_paths_every: usize,
}

impl Default for RepairConfig {
    fn default() -> Self {
        RepairConfig {
            steps: 200,
            learning_rate: 0.1,
            alpha: 1.0,
            prox_weight: 0.01,
            clamp_min: 0.0,
            resample_paths_every: 10,
        }
    }
}

impl RepairConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(CapeError::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CapeError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.alpha >= 0.0 && self.prox_weight >= 0.0) {
            return Err(CapeError::InvalidConfig(
                "alpha and prox_weight must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub total: f64,
    pub cape: f64,
    pub apls: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RepairTrace {
    pub rows: Vec<TraceRow>,
}

impl RepairTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,total,cape,apls\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.9},{:.9},{:.6}\n", r.step, r.total, r.cape, r.apls));
        }
        out
    }

    pub fn first(&self) -> &TraceRow {
        &self.rows[0]
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace holds the initial state")
    }
}

fn map_apls(sample: &SynthSample, pred: &ScalarGrid, mcfg: &MetricConfig) -> Result<f64> {
    let pred_graph = graph_from_prediction(pred, mcfg.threshold)?;
    Ok(graph_scores(&sample.graph, &pred_graph, mcfg)?.apls)
}

/// Gradient descent on the corrupted map of `sample` against
/// `prox_weight·‖ŷ−ŷ₀‖² + alpha·L(ŷ)`, clamped below at `clamp_min`.
///
/// Pairs are resampled every `resample_paths_every` steps with seeds
/// derived from `ccfg.seed`. The trace holds the initial state and the
/// state after every step.
pub fn repair(
    sample: &SynthSample,
    rcfg: &RepairConfig,
    ccfg: &CapeConfig,
    mcfg: &MetricConfig,
) -> Result<(ScalarGrid, RepairTrace)> {
    rcfg.validate()?;
    let y0 = &sample.corrupted_map;
    let shape = y0.shape();
    let plan_for = |round: u64| -> Result<PathPlan> {
        let cfg = CapeConfig {
            seed: ccfg.seed.wrapping_add(round),
            ..ccfg.clone()
        };
        plan_paths(&sample.graph, shape, &cfg)
    };
    let objective = |y: &ScalarGrid, plan: &PathPlan| -> Result<(f64, CapeResult)> {
        let cape = evaluate_plan(plan, y, ccfg)?;
        let prox: f64 = y
            .data()
            .iter()
            .zip(y0.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((rcfg.prox_weight * prox + rcfg.alpha * cape.total_loss, cape))
    };

    let mut y = y0.clone();
    let mut plan = plan_for(0)?;
    let mut trace = RepairTrace::default();
    let (initial, mut current) = objective(&y, &plan)?;
    trace.rows.push(TraceRow {
        step: 0,
        total: initial,
        cape: current.total_loss,
        apls: map_apls(sample, &y, mcfg)?,
    });
    for step in 1..=rcfg.steps {
        let lr = rcfg.learning_rate;
        let grad = &current.gradient;
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            let g = 2.0 * rcfg.prox_weight * (*v - y0.data()[i]) + rcfg.alpha * grad.data()[i];
            *v = (*v - lr * g).max(rcfg.clamp_min);
        }
        if rcfg.resample_paths_every > 0 && step % rcfg.resample_paths_every == 0 {
            plan = plan_for((step / rcfg.resample_paths_every) as u64)?;
        }
        let (total, next) = objective(&y, &plan)?;
        if initial > 0.0 && total > 10.0 * initial {
            return Err(CapeError::Divergence {
                step,
                loss: total,
                initial,
            });
        }
        trace.rows.push(TraceRow {
            step,
            total,
            cape: next.total_loss,
            apls: map_apls(sample, &y, mcfg)?,
        });
        current = next;
    }
    Ok((y, trace))
}
