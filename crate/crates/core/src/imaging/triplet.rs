use rand::Rng;

use crate::error::Result;
use crate::geometry::{nearest_neighbor, sample_perturbation, warp_image, LandmarkSet, MiningNorm};

use super::image::FaceImage;

/// One candidate landmark image for triplet mining.
#[derive(Clone, Copy, Debug)]
pub struct PoolEntry<'a> {
    pub image: &'a FaceImage,
    pub landmarks: &'a LandmarkSet,
    pub class: usize,
}

/// Appearance image, landmark image and the intermediate face carrying the
/// appearance of the first and the geometry of the second.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub appearance: FaceImage,
    pub landmark_image: FaceImage,
    pub intermediate: FaceImage,
    pub appearance_class: usize,
    pub landmark_class: usize,
    pub appearance_landmarks: LandmarkSet,
    pub landmark_landmarks: LandmarkSet,
    pub delta: LandmarkSet,
    /// Landmarks of the intermediate image: `landmark_landmarks + delta`.
    pub intermediate_landmarks: LandmarkSet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletOptions {
    /// Per-coordinate variance of the landmark perturbation.
    pub perturbation_variance: f64,
    pub norm: MiningNorm,
    pub tps_lambda: f64,
}

impl Default for TripletOptions {
    fn default() -> Self {
        TripletOptions {
            perturbation_variance: 3.0,
            norm: MiningNorm::L2,
            tps_lambda: 0.0,
        }
    }
}

/// Index into `pool` of the landmark image for an appearance image.
pub fn mine_landmark_partner(
    landmarks: &LandmarkSet,
    class: usize,
    pool: &[PoolEntry],
    norm: MiningNorm,
) -> Result<usize> {
    let candidates: Vec<(LandmarkSet, usize)> =
        pool.iter().map(|e| (e.landmarks.clone(), e.class)).collect();
    nearest_neighbor(landmarks, &candidates, &class, norm)
}

/// Builds a triplet for an already chosen partner and perturbation.
pub fn assemble_triplet(
    image: &FaceImage,
    landmarks: &LandmarkSet,
    class: usize,
    partner: PoolEntry,
    delta: LandmarkSet,
    tps_lambda: f64,
) -> Result<Triplet> {
    let (intermediate, _) = warp_image(image, landmarks, partner.landmarks, &delta, tps_lambda)?;
    Ok(Triplet {
        appearance: image.clone(),
        landmark_image: partner.image.clone(),
        intermediate,
        appearance_class: class,
        landmark_class: partner.class,
        appearance_landmarks: landmarks.clone(),
        landmark_landmarks: partner.landmarks.clone(),
        intermediate_landmarks: partner.landmarks.offset_by(&delta)?,
        delta,
    })
}

/// Mines the nearest landmark image of another class, draws a landmark
/// perturbation and warps the appearance image onto the perturbed geometry.
pub fn build_triplet<R: Rng + ?Sized>(
    image: &FaceImage,
    landmarks: &LandmarkSet,
    class: usize,
    pool: &[PoolEntry],
    rng: &mut R,
    opts: &TripletOptions,
) -> Result<Triplet> {
    let j = mine_landmark_partner(landmarks, class, pool, opts.norm)?;
    let delta = sample_perturbation(rng, opts.perturbation_variance, landmarks.len());
    assemble_triplet(image, landmarks, class, pool[j], delta, opts.tps_lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{canonical_template, tps_fit, Point};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(v: f64) -> FaceImage {
        FaceImage::from_fn(40, 40, |c, x, y| v * ((x + 2 * y + c) as f64 * 0.1).sin())
    }

    #[test]
    fn identical_geometry_and_no_jitter_reproduces_input() {
        let l = canonical_template(40);
        let (a, b) = (img(0.5), img(-0.4));
        let pool = [PoolEntry {
            image: &b,
            landmarks: &l,
            class: 1,
        }];
        let opts = TripletOptions {
            perturbation_variance: 0.0,
            ..TripletOptions::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = build_triplet(&a, &l, 0, &pool, &mut rng, &opts).unwrap();
        assert_eq!(t.intermediate, a);
        assert_ne!(t.appearance_class, t.landmark_class);
    }

    #[test]
    fn intermediate_landmarks_follow_the_warp() {
        let l = canonical_template(40);
        let lp = l.map(|p| Point::new(p.x + 0.8, p.y * 1.02));
        let (a, b) = (img(0.5), img(-0.4));
        let pool = [PoolEntry {
            image: &b,
            landmarks: &lp,
            class: 3,
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = build_triplet(&a, &l, 0, &pool, &mut rng, &TripletOptions::default()).unwrap();
        let expected = lp.offset_by(&t.delta).unwrap();
        assert_eq!(t.intermediate_landmarks, expected);
        // the backward spline sends the intermediate landmarks back onto l
        let back = tps_fit(&expected, &l, 0.0).unwrap();
        for (m, s) in expected.points().iter().zip(l.points()) {
            assert!(back.apply(*m).dist2(*s).sqrt() < 1e-6);
        }
    }

    #[test]
    fn deterministic_and_class_exclusive() {
        let l = canonical_template(40);
        let l2 = l.translate(Point::new(1.0, 0.0));
        let l3 = l.translate(Point::new(0.2, 0.0));
        let (a, b, c) = (img(0.5), img(-0.4), img(0.1));
        let pool = [
            PoolEntry {
                image: &a,
                landmarks: &l3,
                class: 0,
            },
            PoolEntry {
                image: &b,
                landmarks: &l2,
                class: 1,
            },
            PoolEntry {
                image: &c,
                landmarks: &l,
                class: 0,
            },
        ];
        let t1 = build_triplet(&a, &l, 0, &pool, &mut ChaCha8Rng::seed_from_u64(8), &TripletOptions::default())
            .unwrap();
        let t2 = build_triplet(&a, &l, 0, &pool, &mut ChaCha8Rng::seed_from_u64(8), &TripletOptions::default())
            .unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.landmark_class, 1);
        let only_same = &pool[..1];
        assert!(build_triplet(&a, &l, 0, only_same, &mut ChaCha8Rng::seed_from_u64(8), &TripletOptions::default())
            .is_err());
    }
}
