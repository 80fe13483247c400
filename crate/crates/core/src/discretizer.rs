//! Integer grid/bin coordinates for positions, angles and gripper state.
//!
//! Positions map onto a uniform grid over the workspace (half-open cells, the
//! top face clamps into the last cell). Angles use 72 bins of 5 degrees.
//! Dequantization returns cell and bin centers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demo_store::{wrap_degrees, ObjectRecord, Pose7, Vec3, WorkspaceBounds};

pub const ANGLE_BINS: u32 = 72;
pub const ANGLE_BIN_DEGREES: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RangeError {
    #[error("grid index {index} on axis {axis} outside [0, {max}]")]
    Grid { axis: usize, index: i64, max: u32 },
    #[error("angle bin {0} outside [0, 71]")]
    AngleBin(i64),
    #[error("gripper code {0} is neither 0 nor 1")]
    Gripper(i64),
}

/// `[x, y, z, roll, pitch, yaw, gripper]` in grid/bin units; gripper 1 = open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantizedPose {
    pub grid: [u32; 3],
    pub rpy_bins: [u32; 3],
    pub gripper: u8,
}

impl QuantizedPose {
    pub fn to_array(&self) -> [i64; 7] {
        [
            self.grid[0] as i64,
            self.grid[1] as i64,
            self.grid[2] as i64,
            self.rpy_bins[0] as i64,
            self.rpy_bins[1] as i64,
            self.rpy_bins[2] as i64,
            self.gripper as i64,
        ]
    }

    /// Checked construction from raw integers.
    pub fn from_array(v: [i64; 7], grid_resolution: u32) -> Result<Self, RangeError> {
        let mut grid = [0u32; 3];
        for axis in 0..3 {
            grid[axis] = check_grid(axis, v[axis], grid_resolution)?;
        }
        let mut rpy_bins = [0u32; 3];
        for i in 0..3 {
            let b = v[3 + i];
            if !(0..ANGLE_BINS as i64).contains(&b) {
                return Err(RangeError::AngleBin(b));
            }
            rpy_bins[i] = b as u32;
        }
        if !(0..=1).contains(&v[6]) {
            return Err(RangeError::Gripper(v[6]));
        }
        Ok(QuantizedPose {
            grid,
            rpy_bins,
            gripper: v[6] as u8,
        })
    }

    pub fn is_open(&self) -> bool {
        self.gripper == 1
    }

    pub fn validate(&self, grid_resolution: u32) -> Result<(), RangeError> {
        Self::from_array(self.to_array(), grid_resolution).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedObject {
    pub name: String,
    pub grid: [u32; 3],
}

fn check_grid(axis: usize, index: i64, grid_resolution: u32) -> Result<u32, RangeError> {
    if index < 0 || index >= grid_resolution as i64 {
        return Err(RangeError::Grid {
            axis,
            index,
            max: grid_resolution - 1,
        });
    }
    Ok(index as u32)
}

pub fn quantize_position(p: &Vec3, ws: &WorkspaceBounds) -> [u32; 3] {
    let top = ws.grid_resolution - 1;
    [0, 1, 2].map(|i| {
        let scaled = ((p[i] - ws.min[i]) / ws.extent(i) * f64::from(ws.grid_resolution)).floor();
        if scaled.is_nan() || scaled <= 0.0 {
            0
        } else if scaled >= f64::from(top) {
            top
        } else {
            scaled as u32
        }
    })
}

pub fn dequantize_position(g: &[u32; 3], ws: &WorkspaceBounds) -> Result<Vec3, RangeError> {
    let mut out = [0.0; 3];
    for i in 0..3 {
        check_grid(i, g[i] as i64, ws.grid_resolution)?;
        out[i] = ws.min[i] + (f64::from(g[i]) + 0.5) * ws.cell_size(i);
    }
    Ok(out)
}

pub fn quantize_angle(deg: f64) -> u32 {
    let bin = (wrap_degrees(deg) / ANGLE_BIN_DEGREES).floor();
    if bin.is_nan() {
        return 0;
    }
    (bin as u32).min(ANGLE_BINS - 1)
}

pub fn dequantize_angle(bin: u32) -> Result<f64, RangeError> {
    if bin >= ANGLE_BINS {
        return Err(RangeError::AngleBin(bin as i64));
    }
    Ok(f64::from(bin) * ANGLE_BIN_DEGREES + ANGLE_BIN_DEGREES / 2.0)
}

pub fn quantize_pose(p: &Pose7, ws: &WorkspaceBounds) -> QuantizedPose {
    QuantizedPose {
        grid: quantize_position(&p.position, ws),
        rpy_bins: p.rpy.map(quantize_angle),
        gripper: u8::from(p.gripper_open),
    }
}

pub fn dequantize_pose(q: &QuantizedPose, ws: &WorkspaceBounds) -> Result<Pose7, RangeError> {
    let position = dequantize_position(&q.grid, ws)?;
    let mut rpy = [0.0; 3];
    for i in 0..3 {
        rpy[i] = dequantize_angle(q.rpy_bins[i])?;
    }
    if q.gripper > 1 {
        return Err(RangeError::Gripper(q.gripper as i64));
    }
    Ok(Pose7::new(position, rpy, q.gripper == 1))
}

/// Object centers outside the workspace are clamped into the boundary cells.
pub fn quantize_object(o: &ObjectRecord, ws: &WorkspaceBounds) -> QuantizedObject {
    if !ws.contains(&o.center) {
        log::warn!("object `{}` at {:?} lies outside the workspace; clamping", o.name, o.center);
    }
    QuantizedObject {
        name: o.name.clone(),
        grid: quantize_position(&o.center, ws),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_ws() -> WorkspaceBounds {
        WorkspaceBounds::new([0.0; 3], [1.0; 3], 100).unwrap()
    }

    fn desk_ws() -> WorkspaceBounds {
        WorkspaceBounds::new([0.0, -0.5, 0.0], [1.0, 0.5, 0.5], 100).unwrap()
    }

    #[test]
    fn position_boundaries() {
        let ws = desk_ws();
        assert_eq!(quantize_position(&ws.min, &ws), [0, 0, 0]);
        assert_eq!(quantize_position(&ws.max, &ws), [99, 99, 99]);
        assert_eq!(quantize_position(&ws.midpoint(), &ws), [50, 50, 50]);
        assert_eq!(quantize_position(&[-3.0, 9.0, f64::NAN], &ws), [0, 99, 0]);
    }

    #[test]
    fn position_cell_centers() {
        let p = dequantize_position(&[0, 0, 0], &unit_ws()).unwrap();
        for v in p {
            assert!((v - 0.005).abs() < 1e-15);
        }
        assert!(matches!(
            dequantize_position(&[100, 0, 0], &unit_ws()),
            Err(RangeError::Grid { axis: 0, index: 100, .. })
        ));
    }

    #[test]
    fn angle_bins() {
        assert_eq!(quantize_angle(0.0), 0);
        assert_eq!(quantize_angle(359.9), 71);
        // -5 wraps to 355, floor(355 / 5) = 71
        assert_eq!(quantize_angle(-5.0), 71);
        assert_eq!(quantize_angle(360.0), 0);
        assert_eq!(dequantize_angle(0).unwrap(), 2.5);
        assert_eq!(dequantize_angle(36).unwrap(), 182.5);
        assert_eq!(dequantize_angle(72), Err(RangeError::AngleBin(72)));
    }

    #[test]
    fn pose_field_order() {
        let ws = desk_ws();
        let p = Pose7::new(ws.midpoint(), [0.0, 180.0, 265.0], false);
        let q = quantize_pose(&p, &ws);
        assert_eq!(q.to_array(), [50, 50, 50, 0, 36, 53, 0]);
        assert!(dequantize_pose(&q.with_open(), &ws).unwrap().gripper_open);
    }

    impl QuantizedPose {
        fn with_open(mut self) -> Self {
            self.gripper = 1;
            self
        }
    }

    proptest! {
        #[test]
        fn quantize_inverts_dequantize(
            g in proptest::array::uniform3(0u32..100),
            b in proptest::array::uniform3(0u32..72),
            open in any::<bool>(),
        ) {
            let ws = desk_ws();
            let q = QuantizedPose { grid: g, rpy_bins: b, gripper: u8::from(open) };
            let p = dequantize_pose(&q, &ws).unwrap();
            prop_assert_eq!(quantize_pose(&p, &ws), q);
        }

        #[test]
        fn round_trip_error_bounded(
            x in 0.0f64..1.0, y in -0.5f64..0.5, z in 0.0f64..0.5,
            r in -720.0f64..720.0, pi in 0.0f64..360.0, ya in 0.0f64..360.0,
        ) {
            let ws = desk_ws();
            let p = Pose7::new([x, y, z], [r, pi, ya], true);
            let back = dequantize_pose(&quantize_pose(&p, &ws), &ws).unwrap();
            for i in 0..3 {
                prop_assert!((back.position[i] - p.position[i]).abs() <= ws.cell_size(i) / 2.0 + 1e-12);
                let d = (back.rpy[i] - p.rpy[i]).abs();
                prop_assert!(d.min(360.0 - d) <= 2.5 + 1e-9);
            }
            prop_assert!(back.gripper_open);
        }

        #[test]
        fn monotone_per_axis(a in -0.2f64..1.2, b in -0.2f64..1.2) {
            let ws = unit_ws();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_position(&[lo; 3], &ws)[0] <= quantize_position(&[hi; 3], &ws)[0]);
        }
    }
}
