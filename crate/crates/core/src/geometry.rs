//! Velocities and Menger curvature of discrete trajectories.

use serde::Serialize;
use thiserror::Error;

use crate::flow::Flow;

/// Triples whose smallest pairwise distance falls below this fraction of the
/// largest are treated as degenerate (κ = 0, flagged).
pub const DEGENERACY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("flow too short: need at least {needed} points, got {found}")]
    TooShort { needed: usize, found: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("degenerate triple (coincident or collinear points)")]
    DegenerateTriple,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn same_dim(p: &[f64], q: &[f64], r: &[f64]) -> Result<(), GeometryError> {
    if p.len() != q.len() {
        return Err(GeometryError::DimensionMismatch(p.len(), q.len()));
    }
    if p.len() != r.len() {
        return Err(GeometryError::DimensionMismatch(p.len(), r.len()));
    }
    Ok(())
}

/// Δy_t = y_t − y_{t−1} for t = 2..T.
pub fn velocities(flow: &Flow) -> Result<Vec<Vec<f64>>, GeometryError> {
    velocities_of(&flow.points)
}

pub fn velocities_of(points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GeometryError> {
    if points.len() < 2 {
        return Err(GeometryError::TooShort {
            needed: 2,
            found: points.len(),
        });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(GeometryError::DimensionMismatch(dim, p.len()));
    }
    Ok(points.windows(2).map(|w| sub(&w[1], &w[0])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Curvature {
    pub value: f64,
    pub degenerate: bool,
}

/// Menger curvature 2·sin∠(u, v) / ‖r − p‖ with u = q − p, v = r − q.
/// Triples whose shortest side is below [`DEGENERACY_EPS`] times the longest
/// give 0 with `degenerate` set.
pub fn menger_curvature(p: &[f64], q: &[f64], r: &[f64]) -> Result<Curvature, GeometryError> {
    same_dim(p, q, r)?;
    let u = sub(q, p);
    let v = sub(r, q);
    let w = sub(r, p);
    let (a, b, c) = (norm(&u), norm(&v), norm(&w));
    let scale = a.max(b).max(c);
    if scale == 0.0 || a.min(b).min(c) < DEGENERACY_EPS * scale {
        return Ok(Curvature {
            value: 0.0,
            degenerate: true,
        });
    }
    // θ = 2·atan2(‖û − v̂‖, ‖û + v̂‖) keeps small angles accurate where
    // √(1 − cos²θ) loses them to cancellation.
    let uh: Vec<f64> = u.iter().map(|x| x / a).collect();
    let vh: Vec<f64> = v.iter().map(|x| x / b).collect();
    let diff = norm(&sub(&uh, &vh));
    let sum: f64 = uh.iter().zip(&vh).map(|(x, y)| (x + y) * (x + y)).sum::<f64>().sqrt();
    let theta = 2.0 * diff.atan2(sum);
    Ok(Curvature {
        value: (2.0 * theta.sin() / c).max(0.0),
        degenerate: false,
    })
}

/// Circumradius abc / 4Δ with the area Δ taken from the Gram determinant.
/// An independent route to 1/κ.
pub fn circumradius_oracle(p: &[f64], q: &[f64], r: &[f64]) -> Result<f64, GeometryError> {
    same_dim(p, q, r)?;
    let u = sub(q, p);
    let v = sub(r, p);
    let a = norm(&u);
    let b = norm(&sub(r, q));
    let c = norm(&v);
    let gram = dot(&u, &u) * dot(&v, &v) - dot(&u, &v).powi(2);
    if gram <= 0.0 {
        return Err(GeometryError::DegenerateTriple);
    }
    let area = 0.5 * gram.sqrt();
    if area == 0.0 || !(a * b * c).is_normal() {
        return Err(GeometryError::DegenerateTriple);
    }
    let radius = a * b * c / (4.0 * area);
    if !radius.is_finite() {
        return Err(GeometryError::DegenerateTriple);
    }
    Ok(radius)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kinematics {
    /// T − 1 vectors.
    pub velocities: Vec<Vec<f64>>,
    /// T − 2 values, κ_t for interior points t = 2..T−1.
    pub curvatures: Vec<f64>,
    pub degenerate: Vec<bool>,
}

pub fn kinematics(flow: &Flow) -> Result<Kinematics, GeometryError> {
    kinematics_of(&flow.points)
}

pub fn kinematics_of(points: &[Vec<f64>]) -> Result<Kinematics, GeometryError> {
    let velocities = velocities_of(points)?;
    let mut curvatures = Vec::with_capacity(points.len().saturating_sub(2));
    let mut degenerate = Vec::with_capacity(curvatures.capacity());
    for w in points.windows(3) {
        let k = menger_curvature(&w[0], &w[1], &w[2])?;
        curvatures.push(k.value);
        degenerate.push(k.degenerate);
    }
    Ok(Kinematics {
        velocities,
        curvatures,
        degenerate,
    })
}

/// Per-flow mean-centering; for plotting only, never fed into similarities.
pub fn centered(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(first) = points.first() else {
        return Vec::new();
    };
    let n = points.len() as f64;
    let mut mean = vec![0.0; first.len()];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x / n;
        }
    }
    points.iter().map(|p| sub(p, &mean)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k(p: &[f64], q: &[f64], r: &[f64]) -> f64 {
        menger_curvature(p, q, r).unwrap().value
    }

    #[test]
    fn velocity_examples() {
        let flow = Flow::from_points(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 2.0]]);
        assert_eq!(velocities(&flow).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 2.0]]);

        let constant = Flow::from_points(vec![vec![3.0, -1.0]; 4]);
        assert!(velocities(&constant)
            .unwrap()
            .iter()
            .all(|v| v.iter().all(|&x| x == 0.0)));

        let single = Flow::from_points(vec![vec![1.0]]);
        assert_eq!(
            velocities(&single),
            Err(GeometryError::TooShort { needed: 2, found: 1 })
        );
    }

    #[test]
    fn curvature_examples() {
        assert_eq!(k(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]), 0.0);
        assert!((k(&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]) - 1.0).abs() < 1e-15);
        // sides √10, √18, 2 and area 3: 4·3 / (√10·√18·2) = 1/√5
        let expected = 0.447_213_595_499_957_9;
        assert!((k(&[0.0, 0.0], &[2.0, 0.0], &[3.0, 3.0]) - expected).abs() < 1e-12);
    }

    #[test]
    fn oracle_examples() {
        let r = circumradius_oracle(&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        let r = circumradius_oracle(&[0.0, 0.0], &[2.0, 0.0], &[3.0, 3.0]).unwrap();
        assert!((r - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            circumradius_oracle(&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]),
            Err(GeometryError::DegenerateTriple)
        );
    }

    #[test]
    fn coincident_points_are_flagged() {
        let c = menger_curvature(&[1.0, 1.0], &[1.0, 1.0], &[2.0, 0.0]).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.value, 0.0);
        let c = menger_curvature(&[0.0; 3], &[0.0; 3], &[0.0; 3]).unwrap();
        assert!(c.degenerate);
        assert!(matches!(
            menger_curvature(&[0.0], &[0.0, 1.0], &[1.0, 1.0]),
            Err(GeometryError::DimensionMismatch(1, 2))
        ));
    }

    #[test]
    fn kinematics_shapes() {
        let collinear: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let kin = kinematics_of(&collinear).unwrap();
        assert_eq!(kin.velocities.len(), 3);
        assert_eq!(kin.curvatures, vec![0.0, 0.0]);

        let circle: Vec<Vec<f64>> = (0..7)
            .map(|i| {
                let a = 0.7 * i as f64;
                vec![2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        let kin = kinematics_of(&circle).unwrap();
        assert!(kin.curvatures.iter().all(|c| (c - 0.5).abs() < 1e-12));

        let two = kinematics_of(&collinear[..2]).unwrap();
        assert!(two.curvatures.is_empty());
    }

    #[test]
    fn random_flow_matches_oracle() {
        let pts = vec![
            vec![0.3, -1.2, 0.8],
            vec![1.1, 0.4, -0.5],
            vec![-0.7, 2.2, 0.1],
            vec![0.9, -0.3, 1.7],
            vec![2.4, 1.0, -1.1],
        ];
        let kin = kinematics_of(&pts).unwrap();
        for (t, kappa) in kin.curvatures.iter().enumerate() {
            let r = circumradius_oracle(&pts[t], &pts[t + 1], &pts[t + 2]).unwrap();
            assert!((kappa - 1.0 / r).abs() / kappa <= 1e-9);
        }
    }

    #[test]
    fn reversal_reverses_curvatures() {
        let pts: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![(i as f64).sin(), (i * i) as f64 * 0.1, (i as f64).cos()])
            .collect();
        let fwd = kinematics_of(&pts).unwrap().curvatures;
        let mut rev_pts = pts.clone();
        rev_pts.reverse();
        let mut rev = kinematics_of(&rev_pts).unwrap().curvatures;
        rev.reverse();
        for (a, b) in fwd.iter().zip(&rev) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn telescoping(points in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 2..20)) {
            let v = velocities_of(&points).unwrap();
            let last = points.last().unwrap();
            for j in 0..4 {
                let sum: f64 = v.iter().map(|d| d[j]).sum();
                prop_assert!((sum - (last[j] - points[0][j])).abs() <= 1e-10);
            }
        }

        #[test]
        fn curvature_is_nonnegative_and_symmetric(
            p in prop::collection::vec(-10.0f64..10.0, 3),
            q in prop::collection::vec(-10.0f64..10.0, 3),
            r in prop::collection::vec(-10.0f64..10.0, 3),
        ) {
            let a = menger_curvature(&p, &q, &r).unwrap();
            let b = menger_curvature(&r, &q, &p).unwrap();
            prop_assert!(a.value >= 0.0);
            prop_assert!(!a.degenerate || a.value == 0.0);
            prop_assert!((a.value - b.value).abs() <= 1e-9 * a.value.max(1.0));
        }
    }
}
