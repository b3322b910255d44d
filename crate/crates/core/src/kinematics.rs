//! Serial manipulator models, task forward kinematics and Jacobians.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{Axis, TaskKind, TaskSpec};

/// Relative singular-value threshold used by [`pinv_default`].
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// One standard Denavit-Hartenberg row: `Rz(theta + offset) Tz(d) Tx(a) Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

impl DhRow {
    pub const fn new(a: f64, alpha: f64, d: f64, theta_offset: f64) -> Self {
        Self {
            a,
            alpha,
            d,
            theta_offset,
        }
    }

    /// Homogeneous transform contributed by this row at joint angle `q`.
    pub fn transform(&self, q: f64) -> Matrix4<f64> {
        let (st, ct) = (q + self.theta_offset).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        Matrix4::new(
            ct,
            -st * ca,
            st * sa,
            self.a * ct,
            st,
            ct * ca,
            -ct * sa,
            self.a * st,
            0.0,
            sa,
            ca,
            self.d,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Standard DH table of the UR5 arm (manufacturer-published values, meters).
pub const UR5_DH: [DhRow; 6] = [
    DhRow::new(0.0, PI / 2.0, 0.089159, 0.0),
    DhRow::new(-0.425, 0.0, 0.0, 0.0),
    DhRow::new(-0.39225, 0.0, 0.0, 0.0),
    DhRow::new(0.0, PI / 2.0, 0.10915, 0.0),
    DhRow::new(0.0, -PI / 2.0, 0.09465, 0.0),
    DhRow::new(0.0, 0.0, 0.0823, 0.0),
];

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// Revolute planar chain, all joint axes along z.
    Planar {
        link_lengths: Vec<f64>,
    },
    DhChain {
        rows: Vec<DhRow>,
    },
}

impl Geometry {
    fn name(&self) -> &'static str {
        match self {
            Geometry::Planar { .. } => "planar",
            Geometry::DhChain { .. } => "DH-chain",
        }
    }
}

/// Kinematic description of a revolute serial manipulator together with its
/// joint-velocity bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorModel {
    geometry: Geometry,
    qd_upper: DVector<f64>,
    qd_lower: DVector<f64>,
}

impl ManipulatorModel {
    pub fn new(geometry: Geometry, qd_upper: DVector<f64>, qd_lower: DVector<f64>) -> Result<Self> {
        let dof = match &geometry {
            Geometry::Planar { link_lengths } => {
                if let Some(l) = link_lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
                    return Err(Error::InvalidModel(format!(
                        "link lengths must be positive and finite, got {l}"
                    )));
                }
                link_lengths.len()
            }
            Geometry::DhChain { rows } => {
                let finite = rows
                    .iter()
                    .all(|r| [r.a, r.alpha, r.d, r.theta_offset].iter().all(|v| v.is_finite()));
                if !finite {
                    return Err(Error::InvalidModel("DH rows must be finite".into()));
                }
                rows.len()
            }
        };
        if dof == 0 {
            return Err(Error::InvalidModel("a manipulator needs at least one joint".into()));
        }
        for (bound, name) in [(&qd_upper, "qd_upper"), (&qd_lower, "qd_lower")] {
            if bound.len() != dof {
                return Err(Error::InvalidModel(format!(
                    "{name} has {} entries but the robot has {dof} joints",
                    bound.len()
                )));
            }
        }
        for j in 0..dof {
            if !(qd_lower[j] < 0.0 && 0.0 < qd_upper[j]) || !qd_upper[j].is_finite() || !qd_lower[j].is_finite() {
                return Err(Error::InvalidModel(format!(
                    "joint {} velocity bounds must satisfy lower < 0 < upper, got [{}, {}]",
                    j + 1,
                    qd_lower[j],
                    qd_upper[j]
                )));
            }
        }
        Ok(Self {
            geometry,
            qd_upper,
            qd_lower,
        })
    }

    /// Planar chain with symmetric velocity bounds `±qd_limit` on every joint.
    pub fn planar(link_lengths: Vec<f64>, qd_limit: f64) -> Result<Self> {
        let dof = link_lengths.len();
        Self::new(
            Geometry::Planar { link_lengths },
            DVector::from_element(dof, qd_limit),
            DVector::from_element(dof, -qd_limit),
        )
    }

    pub fn dh_chain(rows: Vec<DhRow>, qd_limit: f64) -> Result<Self> {
        let dof = rows.len();
        Self::new(
            Geometry::DhChain { rows },
            DVector::from_element(dof, qd_limit),
            DVector::from_element(dof, -qd_limit),
        )
    }

    pub fn ur5(qd_limit: f64) -> Result<Self> {
        Self::dh_chain(UR5_DH.to_vec(), qd_limit)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dof(&self) -> usize {
        self.qd_upper.len()
    }

    pub fn qd_upper(&self) -> &DVector<f64> {
        &self.qd_upper
    }

    pub fn qd_lower(&self) -> &DVector<f64> {
        &self.qd_lower
    }

    /// Copy of the model with new velocity bounds.
    pub fn with_velocity_bounds(&self, qd_upper: DVector<f64>, qd_lower: DVector<f64>) -> Result<Self> {
        Self::new(self.geometry.clone(), qd_upper, qd_lower)
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                context: "joint vector",
                expected: self.dof(),
                found: q.len(),
            });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("joint vector has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Joint configuration at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub t: f64,
}

impl JointState {
    pub fn new(q: DVector<f64>, t: f64) -> Result<Self> {
        if !t.is_finite() || q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("joint state must be finite".into()));
        }
        Ok(Self { q, t })
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = x.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    r
}

/// Frame transforms of a DH chain: entry `k` is the base-to-frame-`k` transform,
/// entry 0 being the identity.
pub fn dh_frames(rows: &[DhRow], q: &DVector<f64>) -> Vec<Matrix4<f64>> {
    let mut frames = Vec::with_capacity(rows.len() + 1);
    let mut t = Matrix4::identity();
    frames.push(t);
    for (row, &qj) in rows.iter().zip(q.iter()) {
        t *= row.transform(qj);
        frames.push(t);
    }
    frames
}

fn origin(t: &Matrix4<f64>) -> Vector3<f64> {
    Vector3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)])
}

fn z_axis(t: &Matrix4<f64>) -> Vector3<f64> {
    Vector3::new(t[(0, 2)], t[(1, 2)], t[(2, 2)])
}

fn frame_index_checked(frame: usize, rows: &[DhRow]) -> Result<usize> {
    if frame == 0 || frame > rows.len() {
        return Err(Error::InvalidParameter(format!(
            "frame index {frame} outside 1..={}",
            rows.len()
        )));
    }
    Ok(frame)
}

fn mismatch(task: &TaskSpec, model: &ManipulatorModel) -> Error {
    Error::TaskModelMismatch {
        task: task.kind.name(),
        model: model.geometry.name(),
    }
}

/// Current value of a task, `f_i(q)`.
pub fn task_value(model: &ManipulatorModel, task: &TaskSpec, q: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_q(q)?;
    match (&model.geometry, &task.kind) {
        (Geometry::Planar { link_lengths }, TaskKind::PlanarEePosition) => {
            let mut angle = 0.0;
            let (mut x, mut y) = (0.0, 0.0);
            for (l, qj) in link_lengths.iter().zip(q.iter()) {
                angle += qj;
                x += l * angle.cos();
                y += l * angle.sin();
            }
            Ok(DVector::from_vec(vec![x, y]))
        }
        (Geometry::Planar { .. }, TaskKind::PlanarEeOrientation) => Ok(DVector::from_element(1, q.sum())),
        (Geometry::DhChain { rows }, TaskKind::DhFramePosition { frame }) => {
            let k = frame_index_checked(*frame, rows)?;
            let p = origin(&dh_frames(&rows[..k], &q.rows(0, k).into_owned())[k]);
            Ok(DVector::from_column_slice(p.as_slice()))
        }
        (Geometry::DhChain { rows }, TaskKind::DhFrameCoordinate { frame, axis }) => {
            let k = frame_index_checked(*frame, rows)?;
            let p = origin(&dh_frames(&rows[..k], &q.rows(0, k).into_owned())[k]);
            Ok(DVector::from_element(1, p[axis.index()]))
        }
        _ => Err(mismatch(task, model)),
    }
}

/// Analytic Jacobian of [`task_value`] with respect to the joints.
pub fn task_jacobian(model: &ManipulatorModel, task: &TaskSpec, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check_q(q)?;
    let dof = model.dof();
    match (&model.geometry, &task.kind) {
        (Geometry::Planar { link_lengths }, TaskKind::PlanarEePosition) => {
            // Accumulate from the tip: column j sums the links distal to joint j.
            let mut angles = Vec::with_capacity(dof);
            let mut acc = 0.0;
            for qj in q.iter() {
                acc += qj;
                angles.push(acc);
            }
            let mut jac = DMatrix::zeros(2, dof);
            let (mut sx, mut sy) = (0.0, 0.0);
            for j in (0..dof).rev() {
                sx += link_lengths[j] * angles[j].sin();
                sy += link_lengths[j] * angles[j].cos();
                jac[(0, j)] = -sx;
                jac[(1, j)] = sy;
            }
            Ok(jac)
        }
        (Geometry::Planar { .. }, TaskKind::PlanarEeOrientation) => Ok(DMatrix::from_element(1, dof, 1.0)),
        (Geometry::DhChain { rows }, TaskKind::DhFramePosition { frame }) => {
            let k = frame_index_checked(*frame, rows)?;
            Ok(dh_position_jacobian(rows, q, k))
        }
        (Geometry::DhChain { rows }, TaskKind::DhFrameCoordinate { frame, axis }) => {
            let k = frame_index_checked(*frame, rows)?;
            let full = dh_position_jacobian(rows, q, k);
            Ok(full.rows(axis.index(), 1).into_owned())
        }
        _ => Err(mismatch(task, model)),
    }
}

/// Linear-velocity Jacobian (3 x dof) of the origin of frame `k`.
fn dh_position_jacobian(rows: &[DhRow], q: &DVector<f64>, k: usize) -> DMatrix<f64> {
    let frames = dh_frames(rows, q);
    let target = origin(&frames[k]);
    let mut jac = DMatrix::zeros(3, rows.len());
    // joint j+1 turns about the z axis of frame j
    for (j, frame) in frames.iter().take(k).enumerate() {
        let col = z_axis(frame).cross(&(target - origin(frame)));
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&col);
    }
    jac
}

/// Moore-Penrose pseudo-inverse of a full-row-rank `m x n` matrix (`m <= n`).
///
/// Singular values at or below `tol * sigma_max` count as zero; any such value
/// makes the matrix rank deficient, which is reported as an error instead of
/// being damped.
pub fn pinv(j: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let (m, n) = j.shape();
    if m == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    if m > n {
        return Err(Error::RankDeficient {
            level: None,
            rank: n,
            rows: m,
        });
    }
    let svd = j.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = tol * sigma_max;
    let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
    if sigma_max <= 0.0 || rank < m {
        return Err(Error::RankDeficient {
            level: None,
            rank: if sigma_max <= 0.0 { 0 } else { rank },
            rows: m,
        });
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(n, m);
    for (idx, s) in svd.singular_values.iter().enumerate() {
        out += (v_t.row(idx).transpose() / *s) * u.column(idx).transpose();
    }
    Ok(out)
}

pub fn pinv_default(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    pinv(j, DEFAULT_RANK_TOL)
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn planar3() -> ManipulatorModel {
        ManipulatorModel::planar(vec![0.5, 0.3, 0.2], 3.0).unwrap()
    }

    fn pos_task() -> TaskSpec {
        TaskSpec::new(TaskKind::PlanarEePosition, vec![0.0, 0.0]).unwrap()
    }

    fn ori_task() -> TaskSpec {
        TaskSpec::new(TaskKind::PlanarEeOrientation, vec![0.0]).unwrap()
    }

    #[test]
    fn straight_planar_arm_reaches_sum_of_lengths() {
        let v = task_value(&planar3(), &pos_task(), &DVector::zeros(3)).unwrap();
        assert_abs_diff_eq!(v, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn planar_orientation_is_angle_sum() {
        let q = DVector::from_vec(vec![0.3, -0.1, 0.5]);
        let v = task_value(&planar3(), &ori_task(), &q).unwrap();
        assert_abs_diff_eq!(v[0], 0.7, epsilon = 1e-15);
        let jac = task_jacobian(&planar3(), &ori_task(), &q).unwrap();
        assert_eq!(jac, DMatrix::from_element(1, 3, 1.0));
    }

    #[test]
    fn planar_position_jacobian_at_zero() {
        let jac = task_jacobian(&planar3(), &pos_task(), &DVector::zeros(3)).unwrap();
        let expected = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 1.0, 0.5, 0.2]);
        assert_abs_diff_eq!(jac, expected, epsilon = 1e-15);
    }

    #[test]
    fn planar_position_wraps_with_full_turns() {
        let q = DVector::from_vec(vec![0.4, -1.2, 2.0]);
        let shifted = q.add_scalar(2.0 * PI);
        let a = task_value(&planar3(), &pos_task(), &q).unwrap();
        let b = task_value(&planar3(), &pos_task(), &shifted).unwrap();
        assert!((a - b).amax() < 1e-9);
    }

    #[test]
    fn mismatched_task_is_rejected() {
        let task = TaskSpec::new(TaskKind::DhFramePosition { frame: 2 }, vec![0.0; 3]).unwrap();
        let err = task_value(&planar3(), &task, &DVector::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::TaskModelMismatch { .. }));
        let ur5 = ManipulatorModel::ur5(6.0).unwrap();
        let err = task_jacobian(&ur5, &pos_task(), &DVector::zeros(6)).unwrap_err();
        assert!(matches!(err, Error::TaskModelMismatch { .. }));
    }

    #[test]
    fn dh_frame_index_is_validated() {
        let ur5 = ManipulatorModel::ur5(6.0).unwrap();
        for frame in [0, 7] {
            let task = TaskSpec::new(TaskKind::DhFramePosition { frame }, vec![0.0; 3]).unwrap();
            assert!(task_value(&ur5, &task, &DVector::zeros(6)).is_err());
        }
    }

    #[test]
    fn wrong_joint_count_is_rejected() {
        let err = task_value(&planar3(), &pos_task(), &DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn model_rejects_bounds_not_straddling_zero() {
        let err = ManipulatorModel::new(
            Geometry::Planar {
                link_lengths: vec![1.0, 1.0],
            },
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![-1.0, 0.5]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
        assert!(ManipulatorModel::planar(vec![], 1.0).is_err());
        assert!(ManipulatorModel::planar(vec![1.0, -0.2], 1.0).is_err());
    }

    #[test]
    fn pinv_of_scaled_unit_row() {
        let j = DMatrix::from_row_slice(1, 3, &[2.0, 0.0, 0.0]);
        let p = pinv_default(&j).unwrap();
        assert_abs_diff_eq!(p, DMatrix::from_column_slice(3, 1, &[0.5, 0.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn pinv_of_identity() {
        let p = pinv_default(&DMatrix::identity(3, 3)).unwrap();
        assert_abs_diff_eq!(p, DMatrix::identity(3, 3), epsilon = 1e-15);
    }

    #[test]
    fn pinv_matches_right_inverse_formula() {
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -0.3, 0.7, 1.1]);
        let p = pinv_default(&j).unwrap();
        let jjt = &j * j.transpose();
        let formula = j.transpose() * jjt.try_inverse().unwrap();
        assert_abs_diff_eq!(p, formula, epsilon = 1e-12);
    }

    #[test]
    fn pinv_rejects_rank_deficiency() {
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let err = pinv_default(&j).unwrap_err();
        assert_eq!(
            err,
            Error::RankDeficient {
                level: None,
                rank: 1,
                rows: 2
            }
        );
        assert!(pinv_default(&DMatrix::zeros(1, 3)).is_err());
        assert!(pinv_default(&DMatrix::identity(4, 3)).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_abs_diff_eq!(wrap_angle(PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(0.25), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn ur5_last_frame_sits_at_tool_flange_when_zeroed() {
        // at q = 0 the standard UR5 table puts the flange at
        // x = a2 + a3, y = -(d4 + d6), z = d1 - d5
        let ur5 = ManipulatorModel::ur5(6.0).unwrap();
        let task = TaskSpec::new(TaskKind::DhFramePosition { frame: 6 }, vec![0.0; 3]).unwrap();
        let p = task_value(&ur5, &task, &DVector::zeros(6)).unwrap();
        let expected = DVector::from_vec(vec![-0.425 - 0.39225, -(0.10915 + 0.0823), 0.089159 - 0.09465]);
        assert_abs_diff_eq!(p, expected, epsilon = 1e-12);
    }
}
