//! Labeled image sources: procedural shapes, class directories, and the
//! stratified label-fraction splitter.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::ppm::decode_ppm;
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<LabeledImage>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for it in &self.items {
            counts[it.label] += 1;
        }
        counts
    }
}

pub const SHAPE_CLASSES: [&str; 4] = ["circle", "square", "triangle", "cross"];

/// Geometry and colors chosen for one rendered shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeMeta {
    pub class: usize,
    pub center: (f64, f64),
    pub size: f64,
    pub color: [u8; 3],
    pub background: [u8; 3],
}

fn inside(class: usize, dx: f64, dy: f64, s: f64) -> bool {
    match class {
        0 => dx * dx + dy * dy <= s * s,
        1 => dx.abs() <= s && dy.abs() <= s,
        2 => {
            // Upward triangle inscribed in the circle of radius s.
            let half = s * 3f64.sqrt() / 2.0;
            let v = [(0.0, -s), (half, s / 2.0), (-half, s / 2.0)];
            let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (dy - a.1) - (b.1 - a.1) * (dx - a.0);
            let (e0, e1, e2) = (edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0]));
            (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
        }
        _ => {
            let bar = (s / 3.0).max(1.0);
            (dx.abs() <= s && dy.abs() <= bar) || (dy.abs() <= s && dx.abs() <= bar)
        }
    }
}

/// Render one shape of `class` on a `side` x `side` canvas.
pub fn render_shape(rng: &mut Rng, class: usize, side: usize) -> (Image, ShapeMeta) {
    let sidef = side as f64;
    let background =
        [rng.range_inclusive(0, 60) as u8, rng.range_inclusive(0, 60) as u8, rng.range_inclusive(0, 60) as u8];
    let color = loop {
        let c = [rng.range(256) as u8, rng.range(256) as u8, rng.range(256) as u8];
        if c.iter().any(|&v| v >= 200) {
            break c;
        }
    };
    let size = rng.uniform(sidef / 6.0, sidef / 3.0);
    let cx = rng.uniform(size, sidef - size);
    let cy = rng.uniform(size, sidef - size);
    let img = Image::from_fn(side, side, |y, x| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        if inside(class, dx, dy, size) {
            color
        } else {
            background
        }
    });
    (img, ShapeMeta { class, center: (cx, cy), size, color, background })
}

/// Four-class synthetic dataset, items interleaved by class. Item `i` is
/// rendered from its own derived stream, so the dataset is a pure function of
/// `seed`.
pub fn generate_shapes(seed: u64, n_per_class: usize, image_side: usize) -> Result<LabeledDataset> {
    if image_side < 16 {
        return Err(Error::InvalidSize(format!("image side {image_side} < 16")));
    }
    if n_per_class == 0 {
        return Err(Error::InvalidSize("n_per_class must be at least 1".into()));
    }
    let n_classes = SHAPE_CLASSES.len();
    let items = (0..n_per_class * n_classes)
        .map(|i| {
            let label = i % n_classes;
            let mut rng = Rng::new(derive_seed(seed, i as u64));
            LabeledImage { image: render_shape(&mut rng, label, image_side).0, label }
        })
        .collect();
    Ok(LabeledDataset { items, class_names: SHAPE_CLASSES.iter().map(|s| s.to_string()).collect() })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Load `<root>/<class>/*.ppm`. Class indices follow the sorted directory
/// names; items are ordered by class, then file name.
pub fn load_labeled_dir(root: impl AsRef<Path>) -> Result<LabeledDataset> {
    let root = root.as_ref();
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    let mut items = Vec::new();
    let mut class_names = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        class_names.push(dir.file_name().unwrap().to_string_lossy().into_owned());
        for path in sorted_entries(dir)? {
            let is_ppm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
            if !path.is_file() || !is_ppm {
                continue;
            }
            let bytes = std::fs::read(&path)?;
            let image =
                decode_ppm(&bytes).map_err(|e| Error::DecodeFailure { path: path.clone(), source: Box::new(e) })?;
            items.push(LabeledImage { image, label });
        }
    }
    if items.is_empty() {
        return Err(Error::EmptyDirectory(root.to_path_buf()));
    }
    Ok(LabeledDataset { items, class_names })
}

/// Stratified split: `ceil(fraction * count)` items per class, chosen by a
/// seeded shuffle. Both halves keep the original item order.
pub fn label_fraction_split(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::BadFraction(fraction));
    }
    let mut chosen = vec![false; ds.len()];
    for class in 0..ds.num_classes() {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.items[i].label == class).collect();
        // Guard against 0.1 * 100 landing a hair above 10.
        let take = ((fraction * idx.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        Rng::new(derive_seed(seed, class as u64)).shuffle(&mut idx);
        for &i in idx.iter().take(take.min(idx.len())) {
            chosen[i] = true;
        }
    }
    let pick = |want: bool| LabeledDataset {
        items: ds.items.iter().zip(&chosen).filter(|(_, &c)| c == want).map(|(it, _)| it.clone()).collect(),
        class_names: ds.class_names.clone(),
    };
    Ok((pick(true), pick(false)))
}
