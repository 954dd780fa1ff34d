//! Deterministic regeneration of the Line-Circle dataset and its on-disk
//! format.
//!
//! 1,500 binary 100×100 images, each holding 1–5 random line segments and
//! 1–5 random circles; the target keeps only the line pixels. Splits are
//! 744 train / 256 validation / 500 test. Sample `i` draws from an RNG
//! stream derived from (seed, i), so generation is order-independent and
//! reproducible.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pgm;
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 100;
pub const TRAIN_SIZE: usize = 744;
pub const VAL_SIZE: usize = 256;
pub const TEST_SIZE: usize = 500;
pub const TOTAL_SIZE: usize = TRAIN_SIZE + VAL_SIZE + TEST_SIZE;

const MIN_LINE_LEN: f64 = 20.0;
const RADIUS_RANGE: (i32, i32) = (5, 45);

/// A strictly binary raster (values 0/1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Raster {
        Raster {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn set(&mut self, x: i32, y: i32) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.data[y as usize * self.width + x as usize] = 1;
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// `[H, W, 1]` float tensor with values {0.0, 1.0}.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            &[self.height, self.width, 1],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("consistent size")
    }
}

/// Generating primitive recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShapeParam {
    Line { p0: (i32, i32), p1: (i32, i32) },
    Circle { center: (i32, i32), radius: i32 },
}

/// One image, its lines-only target, and the generating shapes.
#[derive(Debug, Clone)]
pub struct LineCircleSample {
    pub image: Raster,
    pub target: Raster,
    pub shapes: Vec<ShapeParam>,
}

impl LineCircleSample {
    /// SHA-256 over image then target bytes.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(&self.image.data);
        hasher.update(&self.target.data);
        let digest = hasher.finalize();
        let mut s = String::with_capacity(64);
        for b in digest {
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}

/// Integer line walk (all-octant Bresenham); both endpoints included.
pub fn render_line(raster: &mut Raster, p0: (i32, i32), p1: (i32, i32)) -> Result<()> {
    if p0 == p1 {
        return Err(Error::Config(format!("degenerate line at {p0:?}")));
    }
    let (mut x, mut y) = p0;
    let (x1, y1) = p1;
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        raster.set(x, y);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    Ok(())
}

/// Midpoint circle; arcs outside the raster are clipped.
pub fn render_circle(raster: &mut Raster, center: (i32, i32), radius: i32) -> Result<()> {
    if radius < 1 {
        return Err(Error::Config(format!("circle radius {radius} too small")));
    }
    let (cx, cy) = center;
    let mut x = radius;
    let mut y = 0;
    let mut err = 1 - radius;
    while x >= y {
        for (px, py) in [
            (cx + x, cy + y),
            (cx - x, cy + y),
            (cx + x, cy - y),
            (cx - x, cy - y),
            (cx + y, cy + x),
            (cx - y, cy + x),
            (cx + y, cy - x),
            (cx - y, cy - x),
        ] {
            raster.set(px, py);
        }
        y += 1;
        if err < 0 {
            err += 2 * y + 1;
        } else {
            x -= 1;
            err += 2 * (y - x) + 1;
        }
    }
    Ok(())
}

/// Draws sample `index` of the dataset stream for `seed`.
pub fn generate_sample(seed: u64, index: usize) -> LineCircleSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let side = IMAGE_SIDE as i32;
    let mut image = Raster::new(IMAGE_SIDE, IMAGE_SIDE);
    let mut target = Raster::new(IMAGE_SIDE, IMAGE_SIDE);
    let mut shapes = Vec::new();

    let n_lines = rng.gen_range(1..=5usize);
    let n_circles = rng.gen_range(1..=5usize);
    for _ in 0..n_circles {
        let center = (rng.gen_range(0..side), rng.gen_range(0..side));
        let radius = rng.gen_range(RADIUS_RANGE.0..=RADIUS_RANGE.1);
        render_circle(&mut image, center, radius).expect("radius in range");
        shapes.push(ShapeParam::Circle { center, radius });
    }
    for _ in 0..n_lines {
        let (p0, p1) = loop {
            let p0 = (rng.gen_range(0..side), rng.gen_range(0..side));
            let p1 = (rng.gen_range(0..side), rng.gen_range(0..side));
            let len = (((p1.0 - p0.0).pow(2) + (p1.1 - p0.1).pow(2)) as f64).sqrt();
            if p0 != p1 && len >= MIN_LINE_LEN {
                break (p0, p1);
            }
        };
        render_line(&mut image, p0, p1).expect("degenerate lines resampled");
        render_line(&mut target, p0, p1).expect("degenerate lines resampled");
        shapes.push(ShapeParam::Line { p0, p1 });
    }
    LineCircleSample {
        image,
        target,
        shapes,
    }
}

/// The three dataset splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<LineCircleSample>,
    pub val: Vec<LineCircleSample>,
    pub test: Vec<LineCircleSample>,
}

/// Generates the full 1,500-sample dataset, split 744/256/500.
pub fn generate_dataset(seed: u64) -> Result<Dataset> {
    let all: Vec<LineCircleSample> = (0..TOTAL_SIZE).map(|i| generate_sample(seed, i)).collect();
    let mut hashes = std::collections::HashSet::new();
    for (i, s) in all.iter().enumerate() {
        if !hashes.insert(s.content_hash()) {
            return Err(Error::Data(format!("duplicate sample content at index {i}")));
        }
    }
    let mut it = all.into_iter();
    let train: Vec<_> = it.by_ref().take(TRAIN_SIZE).collect();
    let val: Vec<_> = it.by_ref().take(VAL_SIZE).collect();
    let test: Vec<_> = it.collect();
    Ok(Dataset { train, val, test })
}

fn shape_token(s: &ShapeParam) -> String {
    match s {
        ShapeParam::Line { p0, p1 } => format!("line:{},{},{},{}", p0.0, p0.1, p1.0, p1.1),
        ShapeParam::Circle { center, radius } => {
            format!("circle:{},{},{}", center.0, center.1, radius)
        }
    }
}

fn parse_shape_token(tok: &str) -> Result<ShapeParam> {
    let bad = || Error::Data(format!("malformed shape token '{tok}'"));
    if let Some(rest) = tok.strip_prefix("line:") {
        let v: Vec<i32> = rest
            .split(',')
            .map(|s| s.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if v.len() != 4 {
            return Err(bad());
        }
        Ok(ShapeParam::Line {
            p0: (v[0], v[1]),
            p1: (v[2], v[3]),
        })
    } else if let Some(rest) = tok.strip_prefix("circle:") {
        let v: Vec<i32> = rest
            .split(',')
            .map(|s| s.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if v.len() != 3 {
            return Err(bad());
        }
        Ok(ShapeParam::Circle {
            center: (v[0], v[1]),
            radius: v[2],
        })
    } else {
        Err(bad())
    }
}

fn raster_to_bytes(r: &Raster) -> Vec<u8> {
    r.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect()
}

fn raster_from_bytes(width: usize, height: usize, bytes: &[u8]) -> Raster {
    Raster {
        width,
        height,
        data: bytes.iter().map(|&v| u8::from(v > 127)).collect(),
    }
}

/// Writes one split: `NNNN_img.pgm` / `NNNN_gt.pgm` per sample plus a
/// `manifest.txt` listing filenames, shape parameters, and content hashes.
pub fn save_split(dir: &Path, samples: &[LineCircleSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let img_name = format!("{i:04}_img.pgm");
        let gt_name = format!("{i:04}_gt.pgm");
        pgm::write_pgm(
            &dir.join(&img_name),
            s.image.width,
            s.image.height,
            &raster_to_bytes(&s.image),
        )?;
        pgm::write_pgm(
            &dir.join(&gt_name),
            s.target.width,
            s.target.height,
            &raster_to_bytes(&s.target),
        )?;
        let shapes: Vec<String> = s.shapes.iter().map(shape_token).collect();
        let _ = writeln!(
            manifest,
            "{i:04} {img_name} {gt_name} {} {}",
            s.content_hash(),
            shapes.join(";")
        );
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Loads one split, verifying the per-sample content hashes.
pub fn load_split(dir: &Path) -> Result<Vec<LineCircleSample>> {
    let manifest_path = dir.join("manifest.txt");
    let manifest =
        fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut samples = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(Error::Data(format!(
                "{}: line {} malformed",
                manifest_path.display(),
                lineno + 1
            )));
        }
        let (img_name, gt_name, hash) = (fields[1], fields[2], fields[3]);
        let img_path = dir.join(img_name);
        let (w, h, img_bytes) = pgm::read_pgm(&img_path)?;
        let gt_path = dir.join(gt_name);
        let (gw, gh, gt_bytes) = pgm::read_pgm(&gt_path)?;
        if (w, h) != (gw, gh) {
            return Err(Error::Data(format!(
                "{}: image/target size mismatch",
                gt_path.display()
            )));
        }
        let shapes = match fields.get(4) {
            Some(toks) => toks
                .split(';')
                .filter(|t| !t.is_empty())
                .map(parse_shape_token)
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let sample = LineCircleSample {
            image: raster_from_bytes(w, h, &img_bytes),
            target: raster_from_bytes(w, h, &gt_bytes),
            shapes,
        };
        if sample.content_hash() != hash {
            return Err(Error::Data(format!(
                "{}: content hash mismatch (corrupt file?)",
                img_path.display()
            )));
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "{}: manifest lists no samples",
            manifest_path.display()
        )));
    }
    Ok(samples)
}
