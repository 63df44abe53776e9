//! Hand-region cropping for the -H metric variants.

use crate::error::EvalError;
use crate::gesture::GestureRecognizerAdapter;
use crate::img::Image;

const MARGIN: f32 = 0.10;

#[derive(Debug, Clone)]
pub struct CropOutcome {
    pub patches: Vec<Image>,
    /// Images that produced no detection.
    pub n_excluded: usize,
}

/// Crops the highest-confidence detection of each image (bbox expanded 10%
/// per side, clipped to the frame) and resizes to `patch_size x patch_size`.
/// Images with no detection are excluded and counted.
pub fn crop_hand_regions(
    images: &[Image],
    detector: &dyn GestureRecognizerAdapter,
    patch_size: usize,
) -> Result<CropOutcome, EvalError> {
    let mut patches = Vec::new();
    let mut n_excluded = 0usize;
    for image in images {
        let detections = detector.detect(image)?;
        let best = detections
            .into_iter()
            .max_by(|a, b| a.confidence.total_cmp(&b.confidence));
        let Some(det) = best else {
            n_excluded += 1;
            continue;
        };
        let [x0, y0, x1, y1] = det.bbox;
        let (bw, bh) = (x1 - x0, y1 - y0);
        let ex0 = (x0 - MARGIN * bw).clamp(0.0, 1.0);
        let ey0 = (y0 - MARGIN * bh).clamp(0.0, 1.0);
        let ex1 = (x1 + MARGIN * bw).clamp(0.0, 1.0);
        let ey1 = (y1 + MARGIN * bh).clamp(0.0, 1.0);
        let (h, w) = (image.height(), image.width());
        let px0 = ((ex0 * w as f32).floor() as usize).min(w - 1);
        let py0 = ((ey0 * h as f32).floor() as usize).min(h - 1);
        let px1 = ((ex1 * w as f32).ceil() as usize).clamp(px0 + 1, w);
        let py1 = ((ey1 * h as f32).ceil() as usize).clamp(py0 + 1, h);
        let patch = image.crop(py0, py1, px0, px1).resize(patch_size, patch_size);
        patches.push(patch);
    }
    Ok(CropOutcome {
        patches,
        n_excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gesture::GlyphOracleRecognizer;
    use crate::glyph::{render_glyph, GlyphPlacement, GlyphShape};
    use crate::rng::rng_for;

    #[test]
    fn full_frame_bbox_is_an_identity_crop() {
        // A fully bright image: one component covering the whole frame.
        let img = Image::filled(1, 12, 12, 0.95);
        let detector = GlyphOracleRecognizer::default();
        let out = crop_hand_regions(std::slice::from_ref(&img), &detector, 12).unwrap();
        assert_eq!(out.patches.len(), 1);
        assert_eq!(out.n_excluded, 0);
        for (a, b) in out.patches[0].data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn blank_images_are_excluded_and_counted() {
        let blank = Image::filled(1, 12, 12, 0.1);
        let detector = GlyphOracleRecognizer::default();
        let out = crop_hand_regions(&[blank.clone(), blank], &detector, 8).unwrap();
        assert_eq!(out.patches.len(), 0);
        assert_eq!(out.n_excluded, 2);
    }

    #[test]
    fn output_plus_exclusions_equals_input_count() {
        let detector = GlyphOracleRecognizer::default();
        let mut images = Vec::new();
        for i in 0..6 {
            if i % 2 == 0 {
                let mut rng = rng_for(400 + i, &["crop-test"]);
                let placement = crate::glyph::random_placement(&mut rng, 16);
                images.push(render_glyph(GlyphShape::Disk, &placement, 16, &mut rng));
            } else {
                images.push(Image::filled(1, 16, 16, 0.05));
            }
        }
        let out = crop_hand_regions(&images, &detector, 8).unwrap();
        assert_eq!(out.patches.len() + out.n_excluded, images.len());
        assert_eq!(out.n_excluded, 3);
    }

    #[test]
    fn patch_mass_center_matches_the_renderer_ground_truth() {
        // Symmetric shape at a known center; patch center of mass (over the
        // thresholded foreground) must land within 2 px of the ground truth
        // mapped through the crop transform, at patch size 64.
        let size = 64usize;
        let placement = GlyphPlacement {
            center_x: 27.0,
            center_y: 38.0,
            side: 30.0,
            foreground: 0.95,
        };
        let mut rng = rng_for(12, &["crop-com"]);
        let img = render_glyph(GlyphShape::Disk, &placement, size, &mut rng);
        let detector = GlyphOracleRecognizer::default();

        let detections = detector.detect(&img).unwrap();
        let det = &detections[0];
        let [x0, y0, x1, y1] = det.bbox;
        let (bw, bh) = (x1 - x0, y1 - y0);
        let ex0 = (x0 - 0.10 * bw).clamp(0.0, 1.0);
        let ey0 = (y0 - 0.10 * bh).clamp(0.0, 1.0);
        let ex1 = (x1 + 0.10 * bw).clamp(0.0, 1.0);
        let ey1 = (y1 + 0.10 * bh).clamp(0.0, 1.0);
        let px0 = (ex0 * size as f32).floor() as f64;
        let py0 = (ey0 * size as f32).floor() as f64;
        let px1 = (ex1 * size as f32).ceil() as f64;
        let py1 = (ey1 * size as f32).ceil() as f64;

        let patch_size = 64usize;
        let out = crop_hand_regions(&[img], &detector, patch_size).unwrap();
        let patch = &out.patches[0];

        // Patch foreground center of mass.
        let (mut mx, mut my, mut mass) = (0.0f64, 0.0f64, 0.0f64);
        for y in 0..patch_size {
            for x in 0..patch_size {
                let v = f64::from(patch.get(0, y, x));
                if v > 0.6 {
                    mx += x as f64 + 0.5;
                    my += y as f64 + 0.5;
                    mass += 1.0;
                }
            }
        }
        mx /= mass;
        my /= mass;

        // Ground-truth center mapped into patch coordinates.
        let (gx, gy) = placement.centroid_px(GlyphShape::Disk);
        let expected_x = (gx - px0) / (px1 - px0) * patch_size as f64;
        let expected_y = (gy - py0) / (py1 - py0) * patch_size as f64;
        assert!(
            (mx - expected_x).abs() < 2.0 && (my - expected_y).abs() < 2.0,
            "center of mass ({mx:.2}, {my:.2}) vs expected ({expected_x:.2}, {expected_y:.2})"
        );
    }
}
