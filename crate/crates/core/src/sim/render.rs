//! Top-down flat-color rendering of a scene.

use super::scene::SceneState;
use crate::demo_store::{RgbImage, Vec3, WorkspaceBounds};

pub const BACKGROUND: [u8; 3] = [24, 24, 24];
pub const GRIPPER_COLOR: [u8; 3] = [160, 160, 160];
/// Half side of an object square, meters.
const OBJECT_HALF_SIZE: f64 = 0.03;

fn to_pixel(p: &Vec3, ws: &WorkspaceBounds, size: u32) -> (f64, f64) {
    let col = (p[0] - ws.min[0]) / ws.extent(0) * f64::from(size);
    let row = (p[1] - ws.min[1]) / ws.extent(1) * f64::from(size);
    (col, row)
}

fn fill_rect(img: &mut RgbImage, lo: (f64, f64), hi: (f64, f64), color: [u8; 3]) {
    let clamp = |v: f64, n: u32| v.floor().clamp(0.0, f64::from(n)) as u32;
    let (x0, y0) = (clamp(lo.0, img.width), clamp(lo.1, img.height));
    let (mut x1, mut y1) = (clamp(hi.0.ceil(), img.width), clamp(hi.1.ceil(), img.height));
    // always paint at least one pixel when the footprint is inside the image
    if x1 == x0 && x0 < img.width {
        x1 = x0 + 1;
    }
    if y1 == y0 && y0 < img.height {
        y1 = y0 + 1;
    }
    for y in y0..y1 {
        for x in x0..x1 {
            img.set_pixel(x, y, color);
        }
    }
}

fn shade(color: [u8; 3], height: f64) -> [u8; 3] {
    // lifted objects appear brighter
    let gain = 1.0 + (height.max(0.0) * 2.0).min(0.5);
    color.map(|c| (f64::from(c) * gain).min(255.0) as u8)
}

pub fn render(scene: &SceneState, ws: &WorkspaceBounds, size: u32) -> RgbImage {
    let mut img = RgbImage::filled(size, size, BACKGROUND);
    let footprint = |c: &Vec3, half: [f64; 2]| {
        let lo = to_pixel(&[c[0] - half[0], c[1] - half[1], 0.0], ws, size);
        let hi = to_pixel(&[c[0] + half[0], c[1] + half[1], 0.0], ws, size);
        (lo, hi)
    };
    for r in &scene.receptacles {
        let (lo, hi) = footprint(&r.center, [r.half_extent[0], r.half_extent[1]]);
        fill_rect(&mut img, lo, hi, r.color);
    }
    for o in &scene.objects {
        let color = match o.pressed_color {
            Some(c) if scene.pressed.contains(&o.name) => c,
            _ => o.color,
        };
        let (lo, hi) = footprint(&o.center, [OBJECT_HALF_SIZE; 2]);
        fill_rect(&mut img, lo, hi, shade(color, o.center[2] - o.initial[2]));
    }
    let g = to_pixel(&scene.gripper.position, ws, size);
    fill_rect(&mut img, g, (g.0 + 1.0, g.1 + 1.0), GRIPPER_COLOR);
    img
}
