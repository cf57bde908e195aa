//! Evaluation-only metrics: Chamfer (reported x1e4), normal consistency,
//! endpoint error and thresholded flow accuracies.

use thiserror::Error;

use crate::geometry::{PointSet, Vec3};
use crate::losses::{self, LossError};

/// Reported Chamfer values are raw values times this factor.
pub const CHAMFER_REPORT_SCALE: f64 = 1e4;
pub const DEFAULT_EVAL_SAMPLES: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("point set is empty")]
    EmptySet,
    #[error("flow field is empty")]
    EmptyFlow,
    #[error("length mismatch: {predicted} predicted vs {ground_truth} ground-truth vectors")]
    LengthMismatch { predicted: usize, ground_truth: usize },
    #[error("non-finite flow vector at {0}")]
    NonFinite(usize),
    #[error("{0}")]
    Other(String),
}

pub type MetricsResult<T> = std::result::Result<T, MetricsError>;

impl From<LossError> for MetricsError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::EmptySet => MetricsError::EmptySet,
            e => MetricsError::Other(e.to_string()),
        }
    }
}

/// Predicted and ground-truth per-point displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    predicted: Vec<Vec3>,
    ground_truth: Vec<Vec3>,
}

impl FlowField {
    pub fn new(predicted: Vec<Vec3>, ground_truth: Vec<Vec3>) -> MetricsResult<Self> {
        if predicted.len() != ground_truth.len() {
            return Err(MetricsError::LengthMismatch {
                predicted: predicted.len(),
                ground_truth: ground_truth.len(),
            });
        }
        if let Some(i) = predicted
            .iter()
            .zip(&ground_truth)
            .position(|(a, b)| !a.iter().chain(b.iter()).all(|v| v.is_finite()))
        {
            return Err(MetricsError::NonFinite(i));
        }
        Ok(Self {
            predicted,
            ground_truth,
        })
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    pub fn predicted(&self) -> &[Vec3] {
        &self.predicted
    }

    pub fn ground_truth(&self) -> &[Vec3] {
        &self.ground_truth
    }
}

/// Absolute (meters) and relative thresholds; a point counts as accurate
/// when either holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyThresholds {
    pub strict_abs: f64,
    pub strict_rel: f64,
    pub relaxed_abs: f64,
    pub relaxed_rel: f64,
}

impl Default for AccuracyThresholds {
    fn default() -> Self {
        Self {
            strict_abs: 0.025,
            strict_rel: 0.025,
            relaxed_abs: 0.05,
            relaxed_rel: 0.05,
        }
    }
}

/// Chamfer distance times [`CHAMFER_REPORT_SCALE`].
pub fn chamfer_metric(x: &[Vec3], y: &[Vec3]) -> MetricsResult<f64> {
    Ok(losses::chamfer_distance(x, y)? * CHAMFER_REPORT_SCALE)
}

/// Average over both directions of the mean `1 - |cos|` between matched normals.
pub fn normal_consistency_metric(x: &PointSet, y: &PointSet) -> MetricsResult<f64> {
    Ok(losses::chamfer_loss(x, y)?.1)
}

/// Mean endpoint error `|pred - gt|`.
pub fn epe(flow: &FlowField) -> MetricsResult<f64> {
    if flow.is_empty() {
        return Err(MetricsError::EmptyFlow);
    }
    let sum: f64 = flow
        .predicted
        .iter()
        .zip(&flow.ground_truth)
        .map(|(p, g)| (p - g).norm())
        .sum();
    Ok(sum / flow.len() as f64)
}

/// Percentage of points with error below `abs` or relative error below `rel`.
pub fn accuracy(flow: &FlowField, abs: f64, rel: f64) -> MetricsResult<f64> {
    if flow.is_empty() {
        return Err(MetricsError::EmptyFlow);
    }
    let hits = flow
        .predicted
        .iter()
        .zip(&flow.ground_truth)
        .filter(|(p, g)| {
            let err = (*p - *g).norm();
            err < abs || err / g.norm().max(1e-12) < rel
        })
        .count();
    Ok(100.0 * hits as f64 / flow.len() as f64)
}

pub fn acc_strict(flow: &FlowField) -> MetricsResult<f64> {
    let t = AccuracyThresholds::default();
    accuracy(flow, t.strict_abs, t.strict_rel)
}

pub fn acc_relaxed(flow: &FlowField) -> MetricsResult<f64> {
    let t = AccuracyThresholds::default();
    accuracy(flow, t.relaxed_abs, t.relaxed_rel)
}

/// One evaluated case. Missing values print as empty fields.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRow {
    pub name: String,
    pub cd: Option<f64>,
    pub n: Option<f64>,
    pub epe: Option<f64>,
    pub acc_s: Option<f64>,
    pub acc_r: Option<f64>,
}

impl MetricsRow {
    fn cells(&self) -> [String; 6] {
        let f = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        [self.name.clone(), f(self.cd), f(self.n), f(self.epe), f(self.acc_s), f(self.acc_r)]
    }
}

const COLUMNS: [&str; 6] = ["name", "cd", "n", "epe", "acc_s", "acc_r"];

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.cells().join(","));
        s.push('\n');
    }
    s
}

/// Whitespace-aligned table with a header line.
pub fn metrics_table(rows: &[MetricsRow]) -> String {
    let cells: Vec<[String; 6]> = rows.iter().map(MetricsRow::cells).collect();
    let mut widths = COLUMNS.map(str::len);
    for c in &cells {
        for (w, v) in widths.iter_mut().zip(c) {
            *w = (*w).max(v.len());
        }
    }
    let line = |vals: [&str; 6]| {
        let parts: Vec<String> = vals
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (v, w))| if i == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut s = line(COLUMNS);
    for c in &cells {
        s.push_str(&line([&c[0], &c[1], &c[2], &c[3], &c[4], &c[5]]));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn flow(pred: Vec<Vec3>, gt: Vec<Vec3>) -> FlowField {
        FlowField::new(pred, gt).unwrap()
    }

    #[test]
    fn chamfer_scale() {
        let x = vec![Vec3::zeros(), Vec3::x()];
        assert_eq!(chamfer_metric(&x, &x).unwrap(), 0.0);
        // one point each, squared distance 1.23e-5 per direction
        let d = (1.23e-5f64).sqrt();
        let v = chamfer_metric(&[Vec3::zeros()], &[Vec3::new(d, 0.0, 0.0)]).unwrap();
        assert!((v - 0.246).abs() < 1e-12, "{v}");
    }

    #[test]
    fn epe_examples() {
        let f = flow(vec![Vec3::zeros(); 4], vec![Vec3::new(0.3, 0.0, 0.0); 4]);
        assert!((epe(&f).unwrap() - 0.3).abs() < 1e-15);
        let same = flow(vec![Vec3::x(); 3], vec![Vec3::x(); 3]);
        assert_eq!(epe(&same).unwrap(), 0.0);
        assert_eq!(acc_strict(&same).unwrap(), 100.0);
        assert_eq!(acc_relaxed(&same).unwrap(), 100.0);
        assert_eq!(epe(&flow(vec![], vec![])).unwrap_err(), MetricsError::EmptyFlow);
        assert!(matches!(
            FlowField::new(vec![Vec3::x()], vec![]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn accuracy_or_rule() {
        let gt = vec![Vec3::new(10.0, 0.0, 0.0); 5];
        let pred: Vec<Vec3> = gt.iter().map(|g| g + Vec3::new(0.0, 0.03, 0.0)).collect();
        assert_eq!(acc_strict(&flow(pred, gt)).unwrap(), 100.0);
        let gt = vec![Vec3::x(); 5];
        let pred: Vec<Vec3> = gt.iter().map(|g| g + Vec3::y()).collect();
        let f = flow(pred, gt);
        assert_eq!(acc_strict(&f).unwrap(), 0.0);
        assert_eq!(acc_relaxed(&f).unwrap(), 0.0);
    }

    #[test]
    fn strict_never_exceeds_relaxed() {
        let mut rng = crate::rng::rng(3);
        for _ in 0..20 {
            let gt: Vec<Vec3> = (0..50)
                .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
                .collect();
            let pred: Vec<Vec3> = gt
                .iter()
                .map(|g| g + Vec3::new(rng.random_range(-0.1..0.1), 0.0, rng.random_range(-0.1..0.1)))
                .collect();
            let f = flow(pred, gt);
            assert!(acc_strict(&f).unwrap() <= acc_relaxed(&f).unwrap());
        }
    }

    #[test]
    fn normal_consistency_examples() {
        let p = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let a = PointSet::new(p.clone(), vec![Vec3::z(); 3]).unwrap();
        assert_eq!(normal_consistency_metric(&a, &a).unwrap(), 0.0);
        let b = PointSet::new(p, vec![Vec3::x(); 3]).unwrap();
        assert_eq!(normal_consistency_metric(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn table_and_csv() {
        let rows = vec![
            MetricsRow {
                name: "sphere_rigid".into(),
                cd: Some(1.5),
                epe: Some(0.01),
                ..Default::default()
            },
            MetricsRow {
                name: "x".into(),
                acc_s: Some(99.0),
                ..Default::default()
            },
        ];
        let csv = metrics_csv(&rows);
        assert!(csv.starts_with("name,cd,n,epe,acc_s,acc_r\nsphere_rigid,1.500000,,0.010000,,\n"));
        let table = metrics_table(&rows);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().next().unwrap().starts_with("name"));
    }
}
