//! Parametric synthetic faces: each subject owns a landmark geometry and a
//! smooth colour texture; captures jitter both, and morphs are generated
//! between subjects with the closest geometry.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{canonical_template, warp_image, LandmarkSet, Point};

use super::image::{FaceImage, DEFAULT_SIZE};
use super::manifest::{Manifest, ManifestRow, SampleKind};
use super::morph::{generate_morph, MorphOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub subjects: usize,
    pub captures: usize,
    pub morphs: usize,
    pub seed: u64,
    pub size: usize,
    /// Std-dev (px) of per-capture per-landmark jitter.
    pub landmark_jitter: f64,
    /// Std-dev (px) of per-capture global face shift.
    pub shift_jitter: f64,
    /// Half-width of the uniform per-capture brightness offset.
    pub brightness_jitter: f64,
    pub morph: MorphOptions,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 20,
            captures: 3,
            morphs: 2,
            seed: 7,
            size: DEFAULT_SIZE,
            landmark_jitter: 0.5,
            shift_jitter: 1.0,
            brightness_jitter: 0.06,
            morph: MorphOptions::default(),
        }
    }
}

/// Identity of one synthetic subject.
#[derive(Clone, Debug)]
pub struct SubjectModel {
    pub landmarks: LandmarkSet,
    pub skin: [f64; 3],
    pub background: [f64; 3],
    /// Zero-mean smooth field per channel, `3 x size x size`.
    pub texture: Vec<f64>,
    pub size: usize,
}

pub fn subject_id(index: usize) -> String {
    format!("s{:03}", index)
}

fn subject_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

impl SubjectModel {
    pub fn sample<R: Rng>(rng: &mut R, size: usize) -> Self {
        let s = size as f64 / 112.0;
        let base = canonical_template(size);
        let center = Point::new(56.0 * s, 60.0 * s);
        let sx = rng.random_range(0.9..1.1);
        let sy = rng.random_range(0.9..1.1);
        let eye_spread = rng.random_range(-3.5..3.5) * s;
        let mouth_scale = rng.random_range(0.85..1.15);
        let nose_drop = rng.random_range(-3.0..3.0) * s;
        let mouth_drop = rng.random_range(-3.0..3.0) * s;
        let noise = Normal::new(0.0, 0.8 * s).expect("valid std");
        let mouth_center = base.points()[48..68]
            .iter()
            .fold(Point::default(), |a, &p| a + p)
            * (1.0 / 20.0);
        let pts: Vec<Point> = base
            .points()
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let mut q = p;
                match i {
                    17..=21 | 36..=41 => q.x -= eye_spread,
                    22..=26 | 42..=47 => q.x += eye_spread,
                    27..=35 => q.y += nose_drop * (i as f64 - 26.0) / 9.0,
                    48..=67 => {
                        q.x = mouth_center.x + (q.x - mouth_center.x) * mouth_scale;
                        q.y += mouth_drop;
                    }
                    _ => {}
                }
                let d = q - center;
                let q = center + Point::new(d.x * sx, d.y * sy);
                q + Point::new(noise.sample(rng), noise.sample(rng))
            })
            .collect();
        let landmarks = LandmarkSet::new(pts).expect("finite landmarks");
        let skin = [
            rng.random_range(0.05..0.6),
            rng.random_range(-0.2..0.35),
            rng.random_range(-0.4..0.2),
        ];
        let background = [
            rng.random_range(-0.9..0.9),
            rng.random_range(-0.9..0.9),
            rng.random_range(-0.9..0.9),
        ];
        let texture = smooth_field(rng, size);
        SubjectModel {
            landmarks,
            skin,
            background,
            texture,
            size,
        }
    }

    /// The subject at its own reference geometry.
    pub fn render(&self) -> FaceImage {
        render_face(self, &self.landmarks)
    }
}

/// Coarse uniform noise, bilinearly upsampled and Gaussian-blurred.
fn smooth_field<R: Rng>(rng: &mut R, size: usize) -> Vec<f64> {
    const GRID: usize = 8;
    let mut out = Vec::with_capacity(3 * size * size);
    for _ in 0..3 {
        let coarse: Vec<f64> = (0..GRID * GRID).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scale = (GRID - 1) as f64 / (size - 1).max(1) as f64;
        let mut plane = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                plane[y * size + x] = super::image::sample_plane(
                    &coarse,
                    GRID,
                    GRID,
                    x as f64 * scale,
                    y as f64 * scale,
                );
            }
        }
        let plane = gaussian_blur(&plane, size, size, 2.0);
        let mean = plane.iter().sum::<f64>() / plane.len() as f64;
        out.extend(plane.into_iter().map(|v| v - mean));
    }
    out
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * plane[y * w + clamp(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

fn mean_of(l: &LandmarkSet, r: std::ops::Range<usize>) -> Point {
    let n = r.len() as f64;
    l.points()[r].iter().fold(Point::default(), |a, &p| a + p) * (1.0 / n)
}

fn render_face(model: &SubjectModel, l: &LandmarkSet) -> FaceImage {
    let size = model.size;
    let jaw_l = l.point(0);
    let jaw_r = l.point(16);
    let chin = l.point(8);
    let brow_y = mean_of(l, 17..27).y;
    let cx = (jaw_l.x + jaw_r.x + 2.0 * chin.x) / 4.0;
    let top = brow_y - 0.25 * (chin.y - brow_y);
    let cy = (top + chin.y) / 2.0;
    let rx = (jaw_r.x - jaw_l.x) / 2.0 + 1.0;
    let ry = (chin.y - top) / 2.0;

    struct Blob {
        c: Point,
        rx: f64,
        ry: f64,
        tint: [f64; 3],
    }
    let mut blobs = Vec::new();
    for eye in [36..42, 42..48] {
        let pts = &l.points()[eye.clone()];
        let c = mean_of(l, eye);
        let w = pts.iter().map(|p| p.x).fold(f64::MIN, f64::max)
            - pts.iter().map(|p| p.x).fold(f64::MAX, f64::min);
        blobs.push(Blob {
            c,
            rx: w / 2.0,
            ry: (w / 4.0).max(2.0),
            tint: [-0.9, -0.9, -0.8],
        });
    }
    for i in 17..27 {
        blobs.push(Blob {
            c: l.point(i),
            rx: 3.0,
            ry: 1.6,
            tint: [-0.6, -0.65, -0.65],
        });
    }
    for i in 31..36 {
        blobs.push(Blob {
            c: l.point(i),
            rx: 1.8,
            ry: 1.8,
            tint: [-0.35, -0.35, -0.3],
        });
    }
    let mouth = &l.points()[48..60];
    let mc = mean_of(l, 48..60);
    let mw = mouth.iter().map(|p| p.x).fold(f64::MIN, f64::max)
        - mouth.iter().map(|p| p.x).fold(f64::MAX, f64::min);
    let mh = mouth.iter().map(|p| p.y).fold(f64::MIN, f64::max)
        - mouth.iter().map(|p| p.y).fold(f64::MAX, f64::min);
    blobs.push(Blob {
        c: mc,
        rx: mw / 2.0,
        ry: (mh / 2.0).max(2.0),
        tint: [0.05, -0.6, -0.55],
    });

    let n = size * size;
    FaceImage::from_fn(size, size, |c, x, y| {
        let p = Point::new(x as f64, y as f64);
        let (dx, dy) = ((p.x - cx) / rx, (p.y - cy) / ry);
        let r = (dx * dx + dy * dy).sqrt();
        let mask = 1.0 / (1.0 + (-(1.0 - r) * 12.0).exp());
        let mut face = model.skin[c] + 0.3 * model.texture[c * n + y * size + x];
        for b in &blobs {
            let (u, v) = ((p.x - b.c.x) / b.rx, (p.y - b.c.y) / b.ry);
            let g = (-(u * u + v * v) * 1.2).exp();
            face += b.tint[c] * g;
        }
        let bg = model.background[c] + 0.1 * model.texture[c * n + x * size + y];
        bg * (1.0 - mask) + face * mask
    })
}

/// One rendered capture of a subject.
#[derive(Clone, Debug)]
pub struct Capture {
    pub image: FaceImage,
    pub landmarks: LandmarkSet,
}

/// Renders `count` captures with geometric and photometric jitter. Images are
/// quantized to 8 bits so they match what is stored on disk.
pub fn render_captures<R: Rng>(
    model: &SubjectModel,
    reference: &FaceImage,
    count: usize,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<Vec<Capture>> {
    let jitter = Normal::new(0.0, cfg.landmark_jitter.max(0.0)).expect("valid std");
    let shift = Normal::new(0.0, cfg.shift_jitter.max(0.0)).expect("valid std");
    let zero = LandmarkSet::zeros(model.landmarks.len());
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let g = Point::new(shift.sample(rng), shift.sample(rng));
        let pts: Vec<Point> = model
            .landmarks
            .points()
            .iter()
            .map(|&p| p + g + Point::new(jitter.sample(rng), jitter.sample(rng)))
            .collect();
        let lms = LandmarkSet::new(pts)?;
        let (warped, _) = warp_image(reference, &model.landmarks, &lms, &zero, 0.0)?;
        let bright = if cfg.brightness_jitter > 0.0 {
            rng.random_range(-cfg.brightness_jitter..cfg.brightness_jitter)
        } else {
            0.0
        };
        let lit = FaceImage::from_fn(model.size, model.size, |c, x, y| warped.get(c, x, y) + bright);
        out.push(Capture {
            image: FaceImage::from_rgb(&lit.to_rgb()),
            landmarks: lms,
        });
    }
    Ok(out)
}

/// Writes a synthetic dataset (PPM images, landmark files, `manifest.csv`)
/// under `out` and returns its manifest.
pub fn synth_dataset(cfg: &SynthConfig, out: &Path) -> Result<Manifest> {
    if cfg.subjects < 2 {
        return Err(Error::invalid("need ≥ 2 subjects"));
    }
    if cfg.captures < 1 {
        return Err(Error::invalid("need ≥ 1 capture per subject"));
    }
    if cfg.size < 16 {
        return Err(Error::invalid("image size must be at least 16"));
    }
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("landmarks"))?;

    let subjects: Vec<(SubjectModel, Vec<Capture>)> = (0..cfg.subjects)
        .into_par_iter()
        .map(|i| {
            let mut rng = subject_rng(cfg.seed, i);
            let model = SubjectModel::sample(&mut rng, cfg.size);
            let reference = model.render();
            let caps = render_captures(&model, &reference, cfg.captures, cfg, &mut rng)?;
            Ok((model, caps))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let real_path = |s: usize, c: usize| format!("images/{}_c{}.ppm", subject_id(s), c);
    for (s, (_, caps)) in subjects.iter().enumerate() {
        for (c, cap) in caps.iter().enumerate() {
            let path = real_path(s, c);
            let lpath = format!("landmarks/{}_c{}.txt", subject_id(s), c);
            cap.image.save_ppm(&out.join(&path))?;
            cap.landmarks.save(&out.join(&lpath))?;
            rows.push(ManifestRow {
                path,
                subject_id: subject_id(s),
                kind: SampleKind::Real,
                source_a: None,
                source_b: None,
                landmarks_path: lpath,
            });
        }
    }

    // partners ranked by reference-geometry distance
    let jobs: Vec<(usize, usize, usize, usize, usize)> = (0..cfg.subjects)
        .flat_map(|a| {
            let mut others: Vec<(f64, usize)> = (0..cfg.subjects)
                .filter(|&b| b != a)
                .map(|b| {
                    let d = subjects[a]
                        .0
                        .landmarks
                        .l2_distance(&subjects[b].0.landmarks)
                        .expect("equal landmark counts");
                    (d, b)
                })
                .collect();
            others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            (0..cfg.morphs)
                .map(move |j| {
                    let b = others[j % others.len()].1;
                    (a, j, b, j % cfg.captures, (j + 1) % cfg.captures)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let morphs: Vec<(FaceImage, LandmarkSet)> = jobs
        .par_iter()
        .map(|&(a, _, b, ca, cb)| {
            let (sa, sb) = (&subjects[a].1[ca], &subjects[b].1[cb]);
            let (img, lms) = generate_morph(&sa.image, &sa.landmarks, &sb.image, &sb.landmarks, &cfg.morph)?;
            Ok((img, lms))
        })
        .collect::<Result<_>>()?;
    for (&(a, j, b, ca, cb), (img, lms)) in jobs.iter().zip(morphs) {
        let path = format!("images/{}_m{}.ppm", subject_id(a), j);
        let lpath = format!("landmarks/{}_m{}.txt", subject_id(a), j);
        img.save_ppm(&out.join(&path))?;
        lms.save(&out.join(&lpath))?;
        rows.push(ManifestRow {
            path,
            subject_id: subject_id(a),
            kind: SampleKind::Morph,
            source_a: Some(real_path(a, ca)),
            source_b: Some(real_path(b, cb)),
            landmarks_path: lpath,
        });
    }

    let manifest = Manifest::new(out, rows);
    manifest.save(&out.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constants() {
        let p = vec![0.25; 30];
        let b = gaussian_blur(&p, 6, 5, 1.5);
        assert!(b.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn subjects_differ_and_are_reproducible() {
        let a = SubjectModel::sample(&mut subject_rng(1, 0), 64);
        let a2 = SubjectModel::sample(&mut subject_rng(1, 0), 64);
        let b = SubjectModel::sample(&mut subject_rng(1, 1), 64);
        assert_eq!(a.landmarks, a2.landmarks);
        assert_eq!(a.render(), a2.render());
        assert!(a.landmarks.l2_distance(&b.landmarks).unwrap() > 1.0);
        let img = a.render();
        assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_single_subject() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            subjects: 1,
            ..SynthConfig::default()
        };
        let err = synth_dataset(&cfg, dir.path()).unwrap_err();
        assert!(err.to_string().contains("need ≥ 2 subjects"));
    }
}
