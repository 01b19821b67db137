//! Core face-domain types: images, 68-point landmarks, facial components.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::Array3;

/// Image tensor in channel-major (C, H, W) layout, values in [0, 1].
pub type FaceImage<F> = Array3<F>;

/// High-resolution face side length.
pub const HR_SIZE: usize = 128;
/// Low-resolution input side length.
pub const LR_SIZE: usize = 16;
/// Upscaling factor between the two.
pub const SCALE: usize = 8;
/// Number of landmark points / heatmap channels.
pub const NUM_LANDMARKS: usize = 68;

/// The four facial components carrying their own appearance priors,
/// in canonical order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum ComponentId {
    LeftEye,
    RightEye,
    Nose,
    Mouth,
}

impl ComponentId {
    pub const ALL: [ComponentId; 4] = [
        ComponentId::LeftEye,
        ComponentId::RightEye,
        ComponentId::Nose,
        ComponentId::Mouth,
    ];

    /// Landmark index range in the standard 68-point annotation (0-based).
    pub fn landmark_range(self) -> std::ops::Range<usize> {
        match self {
            ComponentId::LeftEye => 36..42,
            ComponentId::RightEye => 42..48,
            ComponentId::Nose => 27..36,
            ComponentId::Mouth => 48..68,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ComponentId::LeftEye => "left_eye",
            ComponentId::RightEye => "right_eye",
            ComponentId::Nose => "nose",
            ComponentId::Mouth => "mouth",
        }
    }

    /// Component whose points mirror onto this one under a horizontal flip.
    pub fn mirrored(self) -> ComponentId {
        match self {
            ComponentId::LeftEye => ComponentId::RightEye,
            ComponentId::RightEye => ComponentId::LeftEye,
            other => other,
        }
    }
}

/// Crop window sizes (height, width) per component, in HR pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropSpec {
    pub left_eye: (usize, usize),
    pub right_eye: (usize, usize),
    pub nose: (usize, usize),
    pub mouth: (usize, usize),
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec {
            left_eye: (32, 40),
            right_eye: (32, 40),
            nose: (40, 32),
            mouth: (32, 48),
        }
    }
}

impl CropSpec {
    pub fn get(&self, comp: ComponentId) -> (usize, usize) {
        match comp {
            ComponentId::LeftEye => self.left_eye,
            ComponentId::RightEye => self.right_eye,
            ComponentId::Nose => self.nose,
            ComponentId::Mouth => self.mouth,
        }
    }
}

/// 68 (x, y) points in HR pixel coordinates (x = column, y = row).
#[derive(Clone, Debug, PartialEq)]
pub struct Landmarks(pub Vec<[f64; 2]>);

impl Landmarks {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::invalid(format!(
                "expected {NUM_LANDMARKS} landmarks, got {}",
                points.len()
            )));
        }
        Ok(Landmarks(points))
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.0
    }

    /// Every point inside [0, w) x [0, h)?
    pub fn inside(&self, h: usize, w: usize) -> bool {
        self.0.iter().all(|p| {
            p[0].is_finite()
                && p[1].is_finite()
                && p[0] >= 0.0
                && p[0] < w as f64
                && p[1] >= 0.0
                && p[1] < h as f64
        })
    }

    /// Arithmetic mean (x, y) of a component's points.
    pub fn centroid(&self, comp: ComponentId) -> (f64, f64) {
        let range = comp.landmark_range();
        let n = range.len() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for p in &self.0[range] {
            sx += p[0];
            sy += p[1];
        }
        (sx / n, sy / n)
    }

    /// Uniform rescale between frame sizes (used when supervising heatmaps
    /// at a reduced resolution).
    pub fn scaled(&self, factor: f64) -> Landmarks {
        Landmarks(self.0.iter().map(|p| [p[0] * factor, p[1] * factor]).collect())
    }
}

/// Index permutation mapping each landmark to its horizontally mirrored
/// counterpart in the standard 68-point layout.
pub fn mirror_permutation() -> [usize; NUM_LANDMARKS] {
    let mut p = [0usize; NUM_LANDMARKS];
    // Jaw 0-16 reverses onto itself.
    for i in 0..17 {
        p[i] = 16 - i;
    }
    // Brows 17-21 <-> 26-22.
    for i in 0..5 {
        p[17 + i] = 26 - i;
        p[22 + i] = 21 - i;
    }
    // Nose bridge 27-30 fixed.
    for i in 27..31 {
        p[i] = i;
    }
    // Nostrils 31-35 reverse.
    for i in 0..5 {
        p[31 + i] = 35 - i;
    }
    // Eyes 36-41 <-> 42-47.
    let eye = [(36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46)];
    for (a, b) in eye {
        p[a] = b;
        p[b] = a;
    }
    // Outer mouth 48-59.
    let outer = [(48, 54), (49, 53), (50, 52), (55, 59), (56, 58)];
    for (a, b) in outer {
        p[a] = b;
        p[b] = a;
    }
    p[51] = 51;
    p[57] = 57;
    // Inner mouth 60-67.
    let inner = [(60, 64), (61, 63), (65, 67)];
    for (a, b) in inner {
        p[a] = b;
        p[b] = a;
    }
    p[62] = 62;
    p[66] = 66;
    p
}

/// Landmarks of the horizontally flipped image (width `w`), with indices
/// re-permuted so each semantic point keeps its meaning.
pub fn mirror_landmarks(lm: &Landmarks, w: usize) -> Landmarks {
    let perm = mirror_permutation();
    let mut out = vec![[0.0f64; 2]; NUM_LANDMARKS];
    for (i, &j) in perm.iter().enumerate() {
        out[i] = [(w as f64 - 1.0) - lm.0[j][0], lm.0[j][1]];
    }
    Landmarks(out)
}

/// Validate an image tensor: 3 channels, expected dims, all values in [0,1].
pub fn validate_image<F: Scalar>(img: &FaceImage<F>, h: usize, w: usize, what: &str) -> Result<()> {
    let d = img.dim();
    if d != (3, h, w) {
        return Err(Error::invalid(format!(
            "{what}: expected 3x{h}x{w}, got {}x{}x{}",
            d.0, d.1, d.2
        )));
    }
    if !img.iter().all(|v| *v >= F::zero() && *v <= F::one()) {
        return Err(Error::invalid(format!("{what}: values outside [0,1]")));
    }
    Ok(())
}

/// Convert 8-bit RGB row-major bytes to a [0,1] CHW tensor.
pub fn image_from_u8<F: Scalar>(data: &[u8], h: usize, w: usize) -> FaceImage<F> {
    let mut img = Array3::<F>::zeros((3, h, w));
    let inv = F::from_f64(1.0 / 255.0);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                img[[c, y, x]] = F::from_f64(data[(y * w + x) * 3 + c] as f64) * inv;
            }
        }
    }
    img
}

/// Convert a [0,1] CHW tensor to 8-bit RGB row-major bytes.
pub fn image_to_u8<F: Scalar>(img: &FaceImage<F>) -> Vec<u8> {
    let (_, h, w) = img.dim();
    let mut out = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = img[[c, y, x]].to_f64().clamp(0.0, 1.0);
                out[(y * w + x) * 3 + c] = (v * 255.0).round() as u8;
            }
        }
    }
    out
}
