//! Procedural face-like test images with consistent 68-point annotations.
//!
//! These are not photographs: they are smooth, structured blobs with eye,
//! nose and mouth features placed at the annotated landmark positions. Good
//! enough to exercise every pipeline stage (cropping, stitching, heatmap
//! supervision, memorization training) without shipping a dataset.

use crate::face::{FaceImage, Landmarks, HR_SIZE, NUM_LANDMARKS};
use crate::scalar::Scalar;
use ndarray::Array3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::f64::consts::PI;

struct Layout {
    cx: f64,
    cy: f64,
    scale: f64,
    eye_dx: f64,
    eye_y: f64,
    mouth_y: f64,
}

impl Layout {
    fn canonical() -> Layout {
        Layout {
            cx: 64.0,
            cy: 62.0,
            scale: 1.0,
            eye_dx: 18.0,
            eye_y: 58.0,
            mouth_y: 96.0,
        }
    }
}

fn ellipse_points(
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angles_deg: &[f64],
) -> Vec<[f64; 2]> {
    angles_deg
        .iter()
        .map(|a| {
            let r = a.to_radians();
            [cx + rx * r.cos(), cy - ry * r.sin()]
        })
        .collect()
}

fn layout_landmarks(l: &Layout) -> Landmarks {
    let s = l.scale;
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(NUM_LANDMARKS);
    // Jaw 0-16: lower face ellipse from left temple through chin to right.
    let (rx, ry) = (44.0 * s, 55.0 * s);
    for i in 0..17 {
        let t = i as f64 / 16.0;
        let ang = PI + t * PI;
        pts.push([l.cx + rx * ang.cos(), l.cy - ry * ang.sin() + 4.0 * s]);
    }
    // Brows 17-21 (left, lateral to medial) and 22-26 (right).
    let brow_y = l.eye_y - 10.0 * s;
    for i in 0..5 {
        let t = i as f64 / 4.0;
        let x = l.cx - l.eye_dx * s - 11.0 * s + t * 22.0 * s;
        pts.push([x, brow_y - 2.5 * s * (1.0 - (2.0 * t - 1.0).powi(2))]);
    }
    for i in 0..5 {
        let t = i as f64 / 4.0;
        let x = l.cx + l.eye_dx * s - 11.0 * s + t * 22.0 * s;
        pts.push([x, brow_y - 2.5 * s * (1.0 - (2.0 * t - 1.0).powi(2))]);
    }
    // Nose bridge 27-30 and nostril line 31-35.
    for i in 0..4 {
        pts.push([l.cx, l.eye_y + s * (2.0 + 6.0 * i as f64)]);
    }
    for i in 0..5 {
        let t = i as f64 / 4.0;
        let x = l.cx - 10.0 * s + t * 20.0 * s;
        pts.push([x, l.eye_y + 26.0 * s + 2.0 * s * (1.0 - (2.0 * t - 1.0).powi(2))]);
    }
    // Eyes 36-41 (left) and 42-47 (right), six points each.
    let eye_angles = [180.0, 120.0, 60.0, 0.0, -60.0, -120.0];
    pts.extend(ellipse_points(
        l.cx - l.eye_dx * s,
        l.eye_y,
        7.0 * s,
        3.5 * s,
        &eye_angles,
    ));
    pts.extend(ellipse_points(
        l.cx + l.eye_dx * s,
        l.eye_y,
        7.0 * s,
        3.5 * s,
        &eye_angles,
    ));
    // Mouth: outer 48-59, inner 60-67.
    let outer = [
        180.0, 150.0, 120.0, 90.0, 60.0, 30.0, 0.0, -30.0, -60.0, -90.0, -120.0, -150.0,
    ];
    pts.extend(ellipse_points(l.cx, l.mouth_y, 16.0 * s, 7.0 * s, &outer));
    let inner = [180.0, 135.0, 90.0, 45.0, 0.0, -45.0, -90.0, -135.0];
    pts.extend(ellipse_points(l.cx, l.mouth_y, 10.0 * s, 3.5 * s, &inner));
    debug_assert_eq!(pts.len(), NUM_LANDMARKS);
    Landmarks(pts)
}

/// The canonical 68-point layout used when no annotations are available,
/// scaled to an arbitrary square frame.
pub fn mean_layout(size: usize) -> Landmarks {
    let lm = layout_landmarks(&Layout::canonical());
    lm.scaled(size as f64 / HR_SIZE as f64)
}

fn soft_ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64, edge: f64) -> f64 {
    let d = ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2);
    1.0 / (1.0 + ((d - 1.0) / edge).exp())
}

/// Generate one 128x128 synthetic face with matching landmarks.
pub fn toy_face<F: Scalar>(seed: u64) -> (FaceImage<F>, Landmarks) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let layout = Layout {
        cx: 64.0 + rng.random_range(-4.0..4.0),
        cy: 62.0 + rng.random_range(-3.0..3.0),
        scale: rng.random_range(0.92..1.06),
        eye_dx: 18.0 + rng.random_range(-1.5..1.5),
        eye_y: 58.0 + rng.random_range(-2.0..2.0),
        mouth_y: 96.0 + rng.random_range(-2.5..2.5),
    };
    let lm = layout_landmarks(&layout);

    let bg_top = [
        rng.random_range(0.05..0.45),
        rng.random_range(0.05..0.45),
        rng.random_range(0.25..0.65),
    ];
    let bg_bot = [
        rng.random_range(0.05..0.45),
        rng.random_range(0.15..0.55),
        rng.random_range(0.05..0.45),
    ];
    let skin = [
        rng.random_range(0.62..0.85),
        rng.random_range(0.45..0.66),
        rng.random_range(0.34..0.55),
    ];
    let eye_dark = rng.random_range(0.04..0.18);
    let mouth_col = [rng.random_range(0.55..0.8), 0.2, rng.random_range(0.15..0.3)];
    // Low-frequency shading plus a per-face high-frequency stripe pattern:
    // detail that 8x downsampling destroys, so naive upsampling cannot
    // recover it while a memorizing hallucinator can.
    let (fx, fy) = (
        rng.random_range(0.02..0.06),
        rng.random_range(0.02..0.06),
    );
    let phase = rng.random_range(0.0..(2.0 * PI));
    let tex_amp = rng.random_range(0.01..0.05);
    let hf_freq = rng.random_range(0.7..1.1);
    let hf_angle = rng.random_range(0.0..PI);
    let (hf_cos, hf_sin) = (hf_angle.cos(), hf_angle.sin());
    let hf_phase = rng.random_range(0.0..(2.0 * PI));
    let hf_amp = rng.random_range(0.03..0.06);

    let s = layout.scale;
    let mut img = Array3::<F>::zeros((3, HR_SIZE, HR_SIZE));
    for y in 0..HR_SIZE {
        for x in 0..HR_SIZE {
            let (xf, yf) = (x as f64, y as f64);
            let t = yf / (HR_SIZE - 1) as f64;
            let mut px = [
                bg_top[0] * (1.0 - t) + bg_bot[0] * t,
                bg_top[1] * (1.0 - t) + bg_bot[1] * t,
                bg_top[2] * (1.0 - t) + bg_bot[2] * t,
            ];
            let face = soft_ellipse(xf, yf, layout.cx, layout.cy + 4.0, 44.0 * s, 56.0 * s, 0.08);
            for c in 0..3 {
                px[c] = px[c] * (1.0 - face) + skin[c] * face;
            }
            let tex = tex_amp * (fx * xf + fy * yf + phase).sin();
            let hf = hf_amp * (hf_freq * (hf_cos * xf + hf_sin * yf) + hf_phase).sin();
            for comp in px.iter_mut() {
                *comp += (tex + hf) * face;
            }
            // Eyes.
            for side in [-1.0, 1.0] {
                let ex = layout.cx + side * layout.eye_dx * s;
                let e = soft_ellipse(xf, yf, ex, layout.eye_y, 7.5 * s, 4.0 * s, 0.15);
                for comp in px.iter_mut() {
                    *comp = *comp * (1.0 - e) + eye_dark * e;
                }
                // Brow stroke.
                let b = soft_ellipse(xf, yf, ex, layout.eye_y - 10.0 * s, 11.0 * s, 2.0 * s, 0.3);
                for comp in px.iter_mut() {
                    *comp = *comp * (1.0 - 0.7 * b) + 0.15 * 0.7 * b;
                }
            }
            // Nose ridge (brighter) and nostril shadow.
            let ridge = soft_ellipse(xf, yf, layout.cx, layout.eye_y + 14.0 * s, 3.5 * s, 13.0 * s, 0.3);
            for comp in px.iter_mut() {
                *comp = *comp * (1.0 - 0.5 * ridge) + (*comp + 0.18).min(1.0) * 0.5 * ridge;
            }
            let nostril = soft_ellipse(xf, yf, layout.cx, layout.eye_y + 26.0 * s, 9.0 * s, 2.5 * s, 0.25);
            for comp in px.iter_mut() {
                *comp *= 1.0 - 0.45 * nostril;
            }
            // Mouth.
            let m = soft_ellipse(xf, yf, layout.cx, layout.mouth_y, 16.0 * s, 7.0 * s, 0.12);
            for (comp, mc) in px.iter_mut().zip(mouth_col.iter()) {
                *comp = *comp * (1.0 - m) + mc * m;
            }
            let gap = soft_ellipse(xf, yf, layout.cx, layout.mouth_y, 10.0 * s, 1.6 * s, 0.3);
            for comp in px.iter_mut() {
                *comp *= 1.0 - 0.5 * gap;
            }
            for c in 0..3 {
                img[[c, y, x]] = F::from_f64(px[c].clamp(0.0, 1.0));
            }
        }
    }
    (img, lm)
}

/// A batch of distinct toy faces, seeded deterministically from `seed`.
pub fn toy_faces<F: Scalar>(seed: u64, n: usize) -> Vec<(FaceImage<F>, Landmarks)> {
    (0..n).map(|i| toy_face(seed.wrapping_add(i as u64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn landmarks_inside_frame() {
        for seed in 0..8 {
            let (_, lm) = toy_face::<f32>(seed);
            assert!(lm.inside(HR_SIZE, HR_SIZE), "seed {seed}");
        }
    }

    #[test]
    fn deterministic() {
        let (a, _) = toy_face::<f32>(7);
        let (b, _) = toy_face::<f32>(7);
        assert_eq!(a, b);
    }

    #[test]
    fn mean_layout_has_68_points() {
        assert_eq!(mean_layout(HR_SIZE).0.len(), NUM_LANDMARKS);
    }
}
