//! Forward models (inpainting masks, atmospheric haze) and dataset assembly:
//! toy-family synthesis into the paired / unpaired-clean / unpaired-measure
//! bundle, folder loading, and the image quality metrics.

pub mod metrics;
pub mod toy;

pub use metrics::{psnr, ssim, PSNR_CAP_DB};
pub use toy::{render_scene, sample_face_mask, ToyFamily, ToyScene};

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Prng;

/// Reconstruction task selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Inpaint,
    Dehaze,
}

impl Task {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "inpaint" => Ok(Self::Inpaint),
            "dehaze" => Ok(Self::Dehaze),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Inpaint => "inpaint",
            Self::Dehaze => "dehaze",
        }
    }
}

/// Replaces pixels under the mask with `fill`; everything else is untouched.
pub fn apply_mask(x: &Image, mask: &[u8], fill: f32) -> Result<Image> {
    let (c, h, w) = x.shape();
    if mask.len() != h * w {
        shape_mismatch!("mask has {} entries for a {h}x{w} image", mask.len());
    }
    let mut out = x.clone();
    for y in 0..h {
        for xx in 0..w {
            if mask[y * w + xx] != 0 {
                for ch in 0..c {
                    out.set(ch, y, xx, fill);
                }
            }
        }
    }
    Ok(out)
}

/// Parameters of the dichromatic atmospheric scattering model.
#[derive(Debug, Clone)]
pub struct HazeParams {
    /// Attenuation magnitude; transmission is `exp(-beta * depth)`.
    pub beta: f64,
    /// Atmospheric light per channel, in `[-1, 1]` units.
    pub atmospheric: Vec<f32>,
    /// Per-pixel depth map, row-major `h * w`.
    pub depth: Vec<f32>,
}

impl HazeParams {
    pub fn new(beta: f64, atmospheric: Vec<f32>, depth: Vec<f32>) -> Result<Self> {
        if beta < 0.0 {
            invalid_arg!("haze beta must be nonnegative, got {beta}");
        }
        if atmospheric.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            invalid_arg!("atmospheric light must lie in [-1, 1]");
        }
        if depth.iter().any(|d| !d.is_finite()) {
            invalid_arg!("depth map must be finite");
        }
        Ok(Self {
            beta,
            atmospheric,
            depth,
        })
    }
}

/// Hazy image formation: `I = J * t + A * (1 - t)` with
/// `t = exp(-beta * depth)` per pixel; output clipped to `[-1, 1]`.
pub fn apply_haze(clear: &Image, params: &HazeParams) -> Result<Image> {
    let (c, h, w) = clear.shape();
    if params.depth.len() != h * w {
        shape_mismatch!("depth map has {} entries for {h}x{w}", params.depth.len());
    }
    if params.atmospheric.len() != c {
        shape_mismatch!(
            "atmospheric light has {} channels, image has {c}",
            params.atmospheric.len()
        );
    }
    let mut out = clear.clone();
    for y in 0..h {
        for x in 0..w {
            let t = (-params.beta * params.depth[y * w + x] as f64).exp() as f32;
            for ch in 0..c {
                let a = params.atmospheric[ch];
                let j = clear.get(ch, y, x);
                out.set(ch, y, x, (j * t + a * (1.0 - t)).clamp(-1.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Generation record carried by every bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub params: Vec<(String, String)>,
}

/// The three training sets: a small paired set, unpaired clean images, and
/// unpaired measurements. Toy bundles also keep the ground truth behind each
/// unpaired measurement; it exists because scenes are procedural, and it is
/// used for evaluation only, never for training.
pub struct DatasetBundle {
    pub paired: Vec<(Image, Image)>,
    pub unpaired_clean: Vec<Image>,
    pub unpaired_measure: Vec<Image>,
    pub unpaired_measure_truth: Vec<Image>,
    pub provenance: Provenance,
}

impl DatasetBundle {
    /// Shape shared by every image in the bundle.
    pub fn image_shape(&self) -> Result<(usize, usize, usize)> {
        let first = self
            .paired
            .first()
            .map(|(x, _)| x)
            .or(self.unpaired_clean.first())
            .or(self.unpaired_measure.first())
            .ok_or_else(|| Error::Config("bundle is empty".into()))?;
        Ok(first.shape())
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.image_shape()?;
        let all = self
            .paired
            .iter()
            .flat_map(|(x, y)| [x, y])
            .chain(self.unpaired_clean.iter())
            .chain(self.unpaired_measure.iter())
            .chain(self.unpaired_measure_truth.iter());
        for img in all {
            if img.shape() != shape {
                shape_mismatch!("bundle images disagree: {:?} vs {shape:?}", img.shape());
            }
            if img.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
                invalid_arg!("bundle image outside [-1, 1]");
            }
        }
        if !self.unpaired_measure_truth.is_empty()
            && self.unpaired_measure_truth.len() != self.unpaired_measure.len()
        {
            shape_mismatch!(
                "measurement truth count {} != measurement count {}",
                self.unpaired_measure_truth.len(),
                self.unpaired_measure.len()
            );
        }
        Ok(())
    }

    /// FNV-1a content hash over all pixel data, for the run manifest.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |img: &Image| {
            for v in img.data() {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        };
        for (x, y) in &self.paired {
            eat(x);
            eat(y);
        }
        for img in &self.unpaired_clean {
            eat(img);
        }
        for img in &self.unpaired_measure {
            eat(img);
        }
        h
    }
}

/// Renders a toy dataset: disjoint scenes partitioned into P / U_x / U_y,
/// measurements produced by the task forward model, provenance recorded.
pub fn make_toy_dataset(
    task: Task,
    family: ToyFamily,
    channels: usize,
    (h, w): (usize, usize),
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetBundle> {
    let (n_paired, n_clean, n_measure) = counts;
    if n_paired < 1 {
        invalid_arg!("need at least one paired scene, got {n_paired}");
    }
    let mut rng = Prng::from_seed(seed);
    let mut params: Vec<(String, String)> = vec![
        ("task".into(), task.name().into()),
        ("family".into(), family.name().into()),
        ("channels".into(), channels.to_string()),
        ("height".into(), h.to_string()),
        ("width".into(), w.to_string()),
        ("paired".into(), n_paired.to_string()),
        ("unpaired_clean".into(), n_clean.to_string()),
        ("unpaired_measure".into(), n_measure.to_string()),
    ];

    let measure_of = |scene: &ToyScene, rng: &mut Prng| -> Result<Image> {
        match task {
            Task::Inpaint => {
                let mask = sample_face_mask(h, w, rng);
                apply_mask(&scene.image, &mask, 0.0)
            }
            Task::Dehaze => {
                let depth = scene
                    .depth
                    .clone()
                    .ok_or_else(|| Error::Config("dehaze task needs a depth-bearing family".into()))?;
                let beta = rng.uniform(0.5, 2.0);
                let a = rng.uniform(0.5, 0.9) as f32;
                let haze = HazeParams::new(beta, vec![a; channels], depth)?;
                apply_haze(&scene.image, &haze)
            }
        }
    };

    let mut paired = Vec::with_capacity(n_paired);
    for _ in 0..n_paired {
        let scene = render_scene(family, channels, h, w, &mut rng);
        let y = measure_of(&scene, &mut rng)?;
        paired.push((scene.image, y));
    }
    let mut unpaired_clean = Vec::with_capacity(n_clean);
    for _ in 0..n_clean {
        unpaired_clean.push(render_scene(family, channels, h, w, &mut rng).image);
    }
    let mut unpaired_measure = Vec::with_capacity(n_measure);
    let mut unpaired_measure_truth = Vec::with_capacity(n_measure);
    for _ in 0..n_measure {
        let scene = render_scene(family, channels, h, w, &mut rng);
        unpaired_measure.push(measure_of(&scene, &mut rng)?);
        unpaired_measure_truth.push(scene.image);
    }
    params.push(("scene_disjoint".into(), "true".into()));

    let bundle = DatasetBundle {
        paired,
        unpaired_clean,
        unpaired_measure,
        unpaired_measure_truth,
        provenance: Provenance {
            generator: format!("toy/{}", family.name()),
            seed,
            params,
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Loads every readable image in a folder in lexicographic filename order.
/// Unreadable files are skipped with a warning; an empty result is an error.
pub fn load_image_folder(
    path: &Path,
    channels: usize,
    target: Option<(usize, usize)>,
    normalize: bool,
) -> Result<Vec<Image>> {
    let mut names: Vec<_> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut out = Vec::new();
    for file in names {
        match Image::load(&file, channels, target) {
            Ok(mut img) => {
                if !normalize {
                    // Undo the [-1, 1] mapping back to [0, 1].
                    for v in img.data_mut() {
                        *v = (*v + 1.0) / 2.0;
                    }
                }
                out.push(img);
            }
            Err(err) => {
                eprintln!("warning: skipping {}: {err}", file.display());
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "no readable images in {}",
            path.display()
        )));
    }
    Ok(out)
}

/// Persists a bundle as PNG files under `paired/`, `unpaired_clean/` and
/// `unpaired_measure/` plus a key-value provenance manifest.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    let paired_dir = dir.join("paired");
    let clean_dir = dir.join("unpaired_clean");
    let measure_dir = dir.join("unpaired_measure");
    std::fs::create_dir_all(&paired_dir)?;
    std::fs::create_dir_all(&clean_dir)?;
    std::fs::create_dir_all(&measure_dir)?;
    for (i, (x, y)) in bundle.paired.iter().enumerate() {
        x.save_png(&paired_dir.join(format!("pair_{i:05}_x.png")))?;
        y.save_png(&paired_dir.join(format!("pair_{i:05}_y.png")))?;
    }
    for (i, img) in bundle.unpaired_clean.iter().enumerate() {
        img.save_png(&clean_dir.join(format!("clean_{i:05}.png")))?;
    }
    for (i, img) in bundle.unpaired_measure.iter().enumerate() {
        img.save_png(&measure_dir.join(format!("measure_{i:05}.png")))?;
    }
    for (i, img) in bundle.unpaired_measure_truth.iter().enumerate() {
        img.save_png(&measure_dir.join(format!("truth_{i:05}.png")))?;
    }

    let mut manifest = String::new();
    let _ = writeln!(manifest, "# dataset bundle");
    let _ = writeln!(manifest, "generator = {}", bundle.provenance.generator);
    let _ = writeln!(manifest, "seed = {}", bundle.provenance.seed);
    let _ = writeln!(manifest, "content_hash = {:016x}", bundle.content_hash());
    for (k, v) in &bundle.provenance.params {
        let _ = writeln!(manifest, "{k} = {v}");
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_reference_cases() {
        let mut img = Image::zeros(1, 4, 4);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i as f32 / 15.0) * 2.0 - 1.0;
        }
        let zero_mask = vec![0u8; 16];
        assert_eq!(apply_mask(&img, &zero_mask, 0.5).unwrap(), img);

        let one_mask = vec![1u8; 16];
        let filled = apply_mask(&img, &one_mask, 0.25).unwrap();
        assert!(filled.data().iter().all(|&v| v == 0.25));

        let mut mix = vec![0u8; 16];
        mix[5] = 1;
        let out = apply_mask(&img, &mix, 0.0).unwrap();
        for i in 0..16 {
            if i == 5 {
                assert_eq!(out.data()[i], 0.0);
            } else {
                assert_eq!(out.data()[i].to_bits(), img.data()[i].to_bits());
            }
        }

        assert!(apply_mask(&img, &vec![0u8; 9], 0.0).is_err());
    }

    #[test]
    fn haze_reference_cases() {
        let mut img = Image::zeros(1, 3, 3);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i as f32 / 8.0) - 0.5;
        }
        let depth: Vec<f32> = (0..9).map(|i| i as f32 * 0.3).collect();

        // beta = 0: identity.
        let p = HazeParams::new(0.0, vec![0.8], depth.clone()).unwrap();
        assert_eq!(apply_haze(&img, &p).unwrap(), img);

        // J == A: fixed point for any depth.
        let a = 0.3f32;
        let flat = Image::splat(1, 3, 3, a);
        let p = HazeParams::new(1.3, vec![a], depth.clone()).unwrap();
        let out = apply_haze(&flat, &p).unwrap();
        for v in out.data() {
            assert!((v - a).abs() < 1e-6);
        }

        // Large beta: everything converges to A (depth > 0 required).
        let deep: Vec<f32> = vec![1.0; 9];
        let p = HazeParams::new(50.0, vec![a], deep).unwrap();
        let out = apply_haze(&img, &p).unwrap();
        for v in out.data() {
            assert!((v - a).abs() < 1e-6);
        }
    }

    #[test]
    fn haze_is_monotone_toward_atmospheric_light() {
        let mut rng = Prng::from_seed(2);
        let scene = render_scene(ToyFamily::Rooms, 1, 16, 16, &mut rng);
        let depth = scene.depth.unwrap();
        let a = 0.7f32;
        let mut prev = scene.image.clone();
        for step in 1..=4 {
            let beta = step as f64 * 0.5;
            let p = HazeParams::new(beta, vec![a], depth.clone()).unwrap();
            let out = apply_haze(&scene.image, &p).unwrap();
            // Every pixel moves weakly toward A as beta grows.
            for (o, pv) in out.data().iter().zip(prev.data().iter()) {
                assert!((o - a).abs() <= (pv - a).abs() + 1e-6);
            }
            prev = out;
        }
    }

    #[test]
    fn toy_bundle_construction_and_determinism() {
        let a = make_toy_dataset(
            Task::Inpaint,
            ToyFamily::Blobs,
            1,
            (32, 32),
            (3, 4, 5),
            9,
        )
        .unwrap();
        let b = make_toy_dataset(
            Task::Inpaint,
            ToyFamily::Blobs,
            1,
            (32, 32),
            (3, 4, 5),
            9,
        )
        .unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.paired.len(), 3);
        assert_eq!(a.unpaired_clean.len(), 4);
        assert_eq!(a.unpaired_measure.len(), 5);
        assert_eq!(a.unpaired_measure_truth.len(), 5);

        // Measurements keep unmasked pixels identical to the (hidden) truth.
        for (y, x) in a.unpaired_measure.iter().zip(a.unpaired_measure_truth.iter()) {
            let same = y
                .data()
                .iter()
                .zip(x.data().iter())
                .filter(|(a, b)| a == b)
                .count();
            assert!(same > y.num_elements() / 2);
        }
    }

    #[test]
    fn dehaze_bundle_pulls_measurements_toward_atmosphere() {
        let bundle = make_toy_dataset(
            Task::Dehaze,
            ToyFamily::Rooms,
            1,
            (24, 24),
            (2, 0, 40),
            17,
        )
        .unwrap();
        // A is drawn in [0.5, 0.9]; use the midpoint as reference.
        let a_mid = 0.7f64;
        let mut pulled = 0;
        for (y, x) in bundle
            .unpaired_measure
            .iter()
            .zip(bundle.unpaired_measure_truth.iter())
        {
            if (y.mean() - a_mid).abs() <= (x.mean() - a_mid).abs() {
                pulled += 1;
            }
        }
        let frac = pulled as f64 / bundle.unpaired_measure.len() as f64;
        assert!(frac >= 0.95, "only {frac} of scenes pulled toward A");
    }

    #[test]
    fn bundle_round_trip_via_folder() {
        let bundle =
            make_toy_dataset(Task::Inpaint, ToyFamily::Blobs, 1, (16, 16), (2, 1, 2), 4).unwrap();
        let dir = std::env::temp_dir().join("sud2_bundle_test");
        let _ = std::fs::remove_dir_all(&dir);
        save_bundle(&bundle, &dir).unwrap();
        assert!(dir.join("manifest.txt").exists());

        let loaded = load_image_folder(&dir.join("unpaired_clean"), 1, None, true).unwrap();
        assert_eq!(loaded.len(), 1);
        for (a, b) in loaded[0].data().iter().zip(bundle.unpaired_clean[0].data()) {
            assert!((a - b).abs() < 1.0 / 60_000.0);
        }

        // Re-load keeps lexicographic order.
        let measures = load_image_folder(&dir.join("unpaired_measure"), 1, None, true).unwrap();
        assert_eq!(measures.len(), 4); // 2 measurements + 2 truths
    }

    #[test]
    fn empty_folder_is_an_error() {
        let dir = std::env::temp_dir().join("sud2_empty_folder_test");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        assert!(load_image_folder(&dir, 1, None, true).is_err());
    }
}
