use super::landmarks::{LandmarkSet, Point};
use super::tps::{tps_fit, TpsTransform};
use crate::error::Result;
use crate::imaging::FaceImage;

/// Resamples `image` so that its `source` landmarks move to `target + delta`.
///
/// The spline is fitted backwards (output landmarks to input landmarks) and
/// every output pixel is filled by a bilinear, edge-clamped lookup in the
/// input. Returns the warped image and the backward transform.
pub fn warp_image(
    image: &FaceImage,
    source: &LandmarkSet,
    target: &LandmarkSet,
    delta: &LandmarkSet,
    lambda: f64,
) -> Result<(FaceImage, TpsTransform)> {
    let moved = target.offset_by(delta)?;
    let backward = tps_fit(&moved, source, lambda)?;
    if &moved == source {
        return Ok((image.clone(), backward));
    }
    Ok((resample(image, |p| backward.apply(p)), backward))
}

/// Output pixel `p` takes the input value at `map(p)`.
pub fn resample(image: &FaceImage, map: impl Fn(Point) -> Point) -> FaceImage {
    let (w, h) = (image.width(), image.height());
    let coords: Vec<Point> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| map(Point::new(x as f64, y as f64)))
        .collect();
    FaceImage::from_fn(w, h, |c, x, y| {
        let q = coords[y * w + x];
        image.sample(c, q.x, q.y)
    })
}
