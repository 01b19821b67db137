//! Paired training data: synthetic degradation of frontal HR faces into
//! unaligned LR inputs, facial component sets, landmark heatmap rendering,
//! and the on-disk dataset format.
//!
//! Layout: `<root>/hr/<id>.png` (128x128 RGB), `<root>/lr/<id>.png`
//! (16x16 RGB), `<root>/landmarks/<id>.txt` (68 lines of "x y"),
//! `<root>/manifest.json` (list of {id, pose_tag}).

use crate::error::{Error, Result};
use crate::face::{
    image_from_u8, image_to_u8, validate_image, ComponentId, CropSpec, FaceImage, Landmarks,
    HR_SIZE, NUM_LANDMARKS, SCALE,
};
use crate::geometry::{crop_component, warp_affine_replicate, AffineParams};
use crate::scalar::Scalar;
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Ranges for the random 2-D degradation that stands in for non-frontal
/// view synthesis: rotation/shift/shear before 8x downsampling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub scale: usize,
    /// Max |rotation| in degrees.
    pub max_rotation: f64,
    /// Max |shift| as a fraction of width.
    pub max_shift: f64,
    /// Max |shear|.
    pub max_shear: f64,
    /// Gaussian blur before downsampling; 0 disables.
    pub blur_sigma: f64,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            scale: SCALE,
            max_rotation: 15.0,
            max_shift: 0.04,
            max_shear: 0.05,
            blur_sigma: 0.0,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self, hr_dims: (usize, usize)) -> Result<()> {
        if self.scale < 2 {
            return Err(Error::config(format!("scale must be >= 2, got {}", self.scale)));
        }
        if hr_dims.0 % self.scale != 0 || hr_dims.1 % self.scale != 0 {
            return Err(Error::config(format!(
                "scale {} does not divide HR dims {}x{}",
                self.scale, hr_dims.0, hr_dims.1
            )));
        }
        if self.max_rotation < 0.0 || self.max_shift < 0.0 || self.max_shear < 0.0 || self.blur_sigma < 0.0
        {
            return Err(Error::config("degradation ranges must be non-negative"));
        }
        Ok(())
    }
}

/// One training example: unaligned non-frontal LR input, frontal HR target,
/// HR-coordinate landmarks, and a pose label kept as metadata.
#[derive(Clone, Debug)]
pub struct FacePair<F: Scalar> {
    pub lr: FaceImage<F>,
    pub hr: FaceImage<F>,
    pub landmarks: Landmarks,
    pub pose_tag: f64,
}

impl<F: Scalar> FacePair<F> {
    pub fn validate(&self) -> Result<()> {
        validate_image(&self.hr, HR_SIZE, HR_SIZE, "hr")?;
        validate_image(&self.lr, HR_SIZE / SCALE, HR_SIZE / SCALE, "lr")?;
        if self.landmarks.0.len() != NUM_LANDMARKS {
            return Err(Error::invalid("landmarks: wrong point count"));
        }
        if !self.landmarks.inside(HR_SIZE, HR_SIZE) {
            return Err(Error::invalid("landmarks outside HR image bounds"));
        }
        Ok(())
    }
}

/// Non-overlapping k x k block averaging (area downsampling).
pub fn block_downsample<F: Scalar>(img: &FaceImage<F>, k: usize) -> FaceImage<F> {
    let (c, h, w) = img.dim();
    assert!(h % k == 0 && w % k == 0, "block_downsample: dims not divisible");
    let inv = F::from_f64(1.0 / (k * k) as f64);
    Array3::from_shape_fn((c, h / k, w / k), |(ci, oy, ox)| {
        let mut s = F::zero();
        for dy in 0..k {
            for dx in 0..k {
                s += img[[ci, oy * k + dy, ox * k + dx]];
            }
        }
        s * inv
    })
}

/// Nearest-neighbour upsampling by k (test helper for the downsampler).
pub fn nearest_upsample<F: Scalar>(img: &FaceImage<F>, k: usize) -> FaceImage<F> {
    let (c, h, w) = img.dim();
    Array3::from_shape_fn((c, h * k, w * k), |(ci, y, x)| img[[ci, y / k, x / k]])
}

/// Separable Gaussian blur with border replication.
pub fn gaussian_blur<F: Scalar>(img: &FaceImage<F>, sigma: f64) -> FaceImage<F> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let v = (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in &mut kernel {
        *v /= sum;
    }
    let (c, h, w) = img.dim();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sx = clamp(x as isize + ki as isize - radius, w);
                    acc += kv * img[[ci, y, sx]].to_f64();
                }
                tmp[[ci, y, x]] = F::from_f64(acc);
            }
        }
    }
    let mut out = Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sy = clamp(y as isize + ki as isize - radius, h);
                    acc += kv * tmp[[ci, sy, x]].to_f64();
                }
                out[[ci, y, x]] = F::from_f64(acc.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Draw a random affine from the config ranges. The draw order (rotation,
/// shift x, shift y, shear) is part of the determinism contract.
pub fn draw_affine<F: Scalar>(cfg: &DegradationConfig, rng: &mut impl Rng) -> (AffineParams<F>, f64) {
    let deg: f64 = if cfg.max_rotation > 0.0 {
        rng.random_range(-cfg.max_rotation..=cfg.max_rotation)
    } else {
        0.0
    };
    let shift_x: f64 = if cfg.max_shift > 0.0 {
        rng.random_range(-cfg.max_shift..=cfg.max_shift)
    } else {
        0.0
    };
    let shift_y: f64 = if cfg.max_shift > 0.0 {
        rng.random_range(-cfg.max_shift..=cfg.max_shift)
    } else {
        0.0
    };
    let shear: f64 = if cfg.max_shear > 0.0 {
        rng.random_range(-cfg.max_shear..=cfg.max_shear)
    } else {
        0.0
    };
    let rad = deg.to_radians();
    let (s, co) = rad.sin_cos();
    // Rotation composed with shear (x' = x + shear*y), in normalized
    // coordinates; a shift fraction f of the width is 2f there.
    let theta = AffineParams::<F>::from_rows(
        [
            F::from_f64(co),
            F::from_f64(co * shear - s),
            F::from_f64(2.0 * shift_x),
        ],
        [
            F::from_f64(s),
            F::from_f64(s * shear + co),
            F::from_f64(2.0 * shift_y),
        ],
    );
    (theta, deg)
}

/// Degrade one frontal HR face into an unaligned LR input.
/// Pure in (hr, landmarks, cfg, rng state): the same state yields the same
/// pair bit-for-bit.
pub fn synth_pair<F: Scalar>(
    hr: &FaceImage<F>,
    landmarks: &Landmarks,
    cfg: &DegradationConfig,
    rng: &mut impl Rng,
) -> Result<FacePair<F>> {
    validate_image(hr, HR_SIZE, HR_SIZE, "hr")?;
    cfg.validate((HR_SIZE, HR_SIZE))?;
    if !landmarks.inside(HR_SIZE, HR_SIZE) {
        return Err(Error::invalid("landmarks outside HR image bounds"));
    }
    let (theta, deg) = draw_affine::<F>(cfg, rng);
    let warped = warp_affine_replicate(hr, &theta, (HR_SIZE, HR_SIZE));
    let blurred = gaussian_blur(&warped, cfg.blur_sigma);
    let lr = block_downsample(&blurred, cfg.scale);
    let pair = FacePair {
        lr,
        hr: hr.clone(),
        landmarks: landmarks.clone(),
        pose_tag: deg,
    };
    pair.validate()?;
    Ok(pair)
}

/// Patch collections for the four facial components, cropped from HR images
/// at their landmark centroids.
#[derive(Clone, Debug)]
pub struct ComponentSet<F: Scalar> {
    pub patches: BTreeMap<ComponentId, Vec<FaceImage<F>>>,
    pub crop_spec: CropSpec,
}

impl<F: Scalar> ComponentSet<F> {
    pub fn len(&self) -> usize {
        self.patches
            .get(&ComponentId::LeftEye)
            .map_or(0, |v| v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Crop every pair's HR image into the four component sets. Crops that had
/// to be zero-padded at the image border are reported in the warnings list.
pub fn build_component_set<F: Scalar>(
    pairs: &[FacePair<F>],
    crop_spec: &CropSpec,
) -> (ComponentSet<F>, Vec<String>) {
    let mut patches: BTreeMap<ComponentId, Vec<FaceImage<F>>> = BTreeMap::new();
    let mut warnings = Vec::new();
    for comp in ComponentId::ALL {
        patches.insert(comp, Vec::with_capacity(pairs.len()));
    }
    for (i, pair) in pairs.iter().enumerate() {
        for comp in ComponentId::ALL {
            let (h, w) = crop_spec.get(comp);
            let (cx, cy) = pair.landmarks.centroid(comp);
            let (top, left) = crate::geometry::window_top_left(cx, cy, (h, w));
            if top < 0
                || left < 0
                || top + h as isize > HR_SIZE as isize
                || left + w as isize > HR_SIZE as isize
            {
                warnings.push(format!(
                    "pair {i}: {} crop clamped to bounds (zero-padded)",
                    comp.name()
                ));
            }
            let patch = crop_component(&pair.hr, &pair.landmarks, comp, crop_spec);
            patches.get_mut(&comp).expect("component key").push(patch);
        }
    }
    (
        ComponentSet {
            patches,
            crop_spec: *crop_spec,
        },
        warnings,
    )
}

/// 68-channel stack of unnormalized Gaussian landmark bumps:
/// channel k holds exp(-((x-x_k)^2 + (y-y_k)^2) / (2 sigma^2)).
pub fn render_heatmaps<F: Scalar>(
    landmarks: &Landmarks,
    size: (usize, usize),
    gauss_sigma: f64,
) -> Result<Array3<F>> {
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::invalid("render_heatmaps: size must be positive"));
    }
    if gauss_sigma <= 0.0 {
        return Err(Error::invalid("render_heatmaps: gauss_sigma must be > 0"));
    }
    let (h, w) = size;
    let inv = 1.0 / (2.0 * gauss_sigma * gauss_sigma);
    let mut out = Array3::<F>::zeros((NUM_LANDMARKS, h, w));
    for (k, p) in landmarks.0.iter().enumerate() {
        let (xk, yk) = (p[0], p[1]);
        for y in 0..h {
            let dy = y as f64 - yk;
            for x in 0..w {
                let dx = x as f64 - xk;
                out[[k, y, x]] = F::from_f64((-(dx * dx + dy * dy) * inv).exp());
            }
        }
    }
    Ok(out)
}

/// Default heatmap sigma at 128x128, scaled proportionally elsewhere.
pub fn heatmap_sigma_for(size: usize) -> f64 {
    2.0 * size as f64 / HR_SIZE as f64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub pose_tag: f64,
}

/// In-memory dataset: an indexable collection of validated [`FacePair`]s.
#[derive(Clone, Debug)]
pub struct Dataset<F: Scalar> {
    pub ids: Vec<String>,
    pub pairs: Vec<FacePair<F>>,
}

impl<F: Scalar> Default for Dataset<F> {
    fn default() -> Self {
        Dataset {
            ids: Vec::new(),
            pairs: Vec::new(),
        }
    }
}

impl<F: Scalar> Dataset<F> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Mean landmark layout across the dataset (the inference-time default
    /// when no annotations accompany an input).
    pub fn mean_landmarks(&self) -> Option<Landmarks> {
        if self.pairs.is_empty() {
            return None;
        }
        let mut acc = vec![[0.0f64; 2]; NUM_LANDMARKS];
        for pair in &self.pairs {
            for (a, p) in acc.iter_mut().zip(pair.landmarks.0.iter()) {
                a[0] += p[0];
                a[1] += p[1];
            }
        }
        let n = self.pairs.len() as f64;
        Some(Landmarks(acc.into_iter().map(|p| [p[0] / n, p[1] / n]).collect()))
    }
}

fn load_png<F: Scalar>(path: &Path) -> Result<FaceImage<F>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(image_from_u8(rgb.as_raw(), h as usize, w as usize))
}

pub fn save_png<F: Scalar>(path: &Path, img: &FaceImage<F>) -> Result<()> {
    let (_, h, w) = img.dim();
    let buf = image_to_u8(img);
    let rgb: image::RgbImage = image::ImageBuffer::from_raw(w as u32, h as u32, buf)
        .expect("buffer size matches dims");
    rgb.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_landmarks(path: &Path) -> Result<Landmarks> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<f64> {
            tok.ok_or_else(|| Error::data(path, format!("line {}: expected \"x y\"", ln + 1)))?
                .parse::<f64>()
                .map_err(|_| Error::data(path, format!("line {}: not a number", ln + 1)))
        };
        let x = parse(it.next())?;
        let y = parse(it.next())?;
        points.push([x, y]);
    }
    if points.len() != NUM_LANDMARKS {
        return Err(Error::data(
            path,
            format!("expected {NUM_LANDMARKS} landmark lines, got {}", points.len()),
        ));
    }
    Ok(Landmarks(points))
}

pub fn save_landmarks(path: &Path, lm: &Landmarks) -> Result<()> {
    let mut text = String::new();
    for p in &lm.0 {
        text.push_str(&format!("{} {}\n", p[0], p[1]));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load and eagerly validate a dataset from the on-disk layout.
/// A root with no manifest and no images is an empty dataset, not an error.
pub fn load_dataset<F: Scalar>(root: &Path) -> Result<Dataset<F>> {
    let manifest_path = root.join("manifest.json");
    if !manifest_path.exists() {
        let hr_dir = root.join("hr");
        let has_images = hr_dir.is_dir()
            && std::fs::read_dir(&hr_dir)
                .map(|mut d| d.next().is_some())
                .unwrap_or(false);
        if has_images {
            return Err(Error::data(manifest_path, "manifest.json missing"));
        }
        return Ok(Dataset::default());
    }
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::data(&manifest_path, format!("invalid manifest: {e}")))?;
    let mut ds = Dataset::default();
    for entry in entries {
        let hr_path = root.join("hr").join(format!("{}.png", entry.id));
        let lr_path = root.join("lr").join(format!("{}.png", entry.id));
        let lm_path = root.join("landmarks").join(format!("{}.txt", entry.id));
        let hr = load_png::<F>(&hr_path)?;
        let lr = load_png::<F>(&lr_path)?;
        let landmarks = load_landmarks(&lm_path)?;
        let pair = FacePair {
            lr,
            hr,
            landmarks,
            pose_tag: entry.pose_tag,
        };
        pair.validate().map_err(|e| match e {
            Error::InvalidInput(msg) => Error::data(&hr_path, msg),
            other => other,
        })?;
        ds.ids.push(entry.id);
        ds.pairs.push(pair);
    }
    Ok(ds)
}

/// Write a dataset in the on-disk layout; creates hr/, lr/, landmarks/.
pub fn write_dataset<F: Scalar>(root: &Path, ids: &[String], pairs: &[FacePair<F>]) -> Result<()> {
    assert_eq!(ids.len(), pairs.len());
    for sub in ["hr", "lr", "landmarks"] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut manifest = Vec::with_capacity(ids.len());
    for (id, pair) in ids.iter().zip(pairs.iter()) {
        save_png(&root.join("hr").join(format!("{id}.png")), &pair.hr)?;
        save_png(&root.join("lr").join(format!("{id}.png")), &pair.lr)?;
        save_landmarks(
            &root.join("landmarks").join(format!("{id}.txt")),
            &pair.landmarks,
        )?;
        manifest.push(ManifestEntry {
            id: id.clone(),
            pose_tag: pair.pose_tag,
        });
    }
    let manifest_path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::data(&manifest_path, e.to_string()))?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

pub fn pair_path(root: &Path, sub: &str, id: &str, ext: &str) -> PathBuf {
    root.join(sub).join(format!("{id}.{ext}"))
}
