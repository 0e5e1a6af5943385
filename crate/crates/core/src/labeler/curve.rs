use serde::{Deserialize, Serialize};

use crate::error::LabelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub strategy: f64,
    pub nominal_kbps: f64,
    /// `8 · bytes / (1000 · duration)`.
    pub measured_kbps: f64,
    pub quality: f64,
}

/// Points of one strategy, strictly increasing in measured bitrate.
#[derive(Debug, Clone, PartialEq)]
pub struct RDCurve {
    strategy: f64,
    points: Vec<RDPoint>,
}

impl RDCurve {
    /// Sorts by measured bitrate; equal bitrates collapse to the best quality.
    pub fn new(strategy: f64, mut points: Vec<RDPoint>) -> Result<Self, LabelError> {
        if let Some(p) = points.iter().find(|p| p.strategy != strategy) {
            return Err(LabelError::Other(format!(
                "point of strategy {} in curve for {strategy}",
                p.strategy
            )));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !(p.measured_kbps.is_finite() && p.measured_kbps > 0.0) || !p.quality.is_finite())
        {
            return Err(LabelError::Other(format!(
                "invalid RD point at {} kbps with quality {}",
                p.measured_kbps, p.quality
            )));
        }
        points.sort_by(|a, b| a.measured_kbps.total_cmp(&b.measured_kbps));
        let mut out: Vec<RDPoint> = Vec::with_capacity(points.len());
        for p in points {
            match out.last_mut() {
                Some(last) if last.measured_kbps == p.measured_kbps => {
                    if p.quality > last.quality {
                        *last = p;
                    }
                }
                _ => out.push(p),
            }
        }
        if out.len() < 2 {
            return Err(LabelError::DegenerateCurve(out.len()));
        }
        Ok(RDCurve { strategy, points: out })
    }

    pub fn strategy(&self) -> f64 {
        self.strategy
    }

    pub fn points(&self) -> &[RDPoint] {
        &self.points
    }
}

/// Piecewise-linear quality at `target_kbps`, clamped to the end points.
pub fn quality_at_bitrate(curve: &RDCurve, target_kbps: f64) -> f64 {
    let pts = &curve.points;
    let first = pts[0];
    let last = pts[pts.len() - 1];
    if target_kbps <= first.measured_kbps {
        return first.quality;
    }
    if target_kbps >= last.measured_kbps {
        return last.quality;
    }
    let hi = pts.partition_point(|p| p.measured_kbps < target_kbps);
    let (a, b) = (pts[hi - 1], pts[hi]);
    if b.measured_kbps == target_kbps {
        return b.quality;
    }
    let t = (target_kbps - a.measured_kbps) / (b.measured_kbps - a.measured_kbps);
    a.quality + t * (b.quality - a.quality)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyLabel {
    pub alpha: f64,
    pub quality_at_target: f64,
}

/// Strategy with the highest quality at the target. Ties go to the smallest
/// `|α|`, then the smaller `α`. Every strategy in `strategies` needs a curve.
pub fn select_optimal(curves: &[RDCurve], strategies: &[f64], target_kbps: f64) -> Result<StrategyLabel, LabelError> {
    if let Some(&a) = strategies.iter().find(|&&a| !curves.iter().any(|c| c.strategy == a)) {
        return Err(LabelError::MissingStrategy(a));
    }
    let mut best: Option<StrategyLabel> = None;
    for c in curves {
        let q = quality_at_bitrate(c, target_kbps);
        let better = match best {
            None => true,
            Some(b) => {
                q > b.quality_at_target
                    || (q == b.quality_at_target
                        && (c.strategy.abs(), c.strategy) < (b.alpha.abs(), b.alpha))
            }
        };
        if better {
            best = Some(StrategyLabel {
                alpha: c.strategy,
                quality_at_target: q,
            });
        }
    }
    best.ok_or_else(|| LabelError::Other("no RD curves".into()))
}
