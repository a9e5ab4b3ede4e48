//! Perceptual distance between an image and its reconstruction, measured in
//! the embedding space of a fixed reference extractor. The extractor handle
//! already binds a model and layer, so it fully determines the feature space.

use invlab_core::{Embedder, ImageSample};

use crate::error::EvalError;

/// Euclidean distance between `reference(x)` and `reference(x_hat)`.
pub fn perceptual_distance(
    x: &ImageSample,
    x_hat: &ImageSample,
    reference: &dyn Embedder,
) -> Result<f64, EvalError> {
    if x.shape() != x_hat.shape() {
        return Err(EvalError::ShapeError(format!(
            "image shapes differ: {:?} vs {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    let a = reference.embed(x)?;
    let b = reference.embed(x_hat)?;
    if a.len() != b.len() {
        return Err(EvalError::ShapeError(format!(
            "reference embedding lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use invlab_core::CoreError;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};

    /// Projects an image onto coarse block averages.
    struct BlockEmbedder;

    impl Embedder for BlockEmbedder {
        fn embedder_id(&self) -> String {
            "block@test".into()
        }
        fn embedding_length(&self) -> usize {
            12
        }
        fn embed(&self, image: &ImageSample) -> Result<Vec<f32>, CoreError> {
            let (h, w, c) = image.shape();
            let mut out = Vec::with_capacity(4 * c);
            for ch in 0..c {
                for (bi, bj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let (h2, w2) = (h / 2, w / 2);
                    let mut acc = 0.0;
                    for i in 0..h2 {
                        for j in 0..w2 {
                            acc += image.pixels[[bi * h2 + i, bj * w2 + j, ch]];
                        }
                    }
                    out.push(acc / (h2 * w2) as f32);
                }
            }
            Ok(out)
        }
    }

    fn img(rng: &mut impl Rng) -> ImageSample {
        let px = Array3::from_shape_fn((8, 8, 3), |_| rng.gen::<f32>());
        ImageSample::new(px, "s", "x", "raw").unwrap()
    }

    #[test]
    fn identical_images_have_zero_distance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = img(&mut rng);
        assert_eq!(perceptual_distance(&x, &x, &BlockEmbedder).unwrap(), 0.0);
    }

    #[test]
    fn triangle_inequality_holds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (a, b, c) = (img(&mut rng), img(&mut rng), img(&mut rng));
            let ab = perceptual_distance(&a, &b, &BlockEmbedder).unwrap();
            let bc = perceptual_distance(&b, &c, &BlockEmbedder).unwrap();
            let ac = perceptual_distance(&a, &c, &BlockEmbedder).unwrap();
            assert!(ac <= ab + bc + 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = img(&mut rng);
        let small =
            ImageSample::new(Array3::from_elem((4, 4, 3), 0.5), "s", "y", "raw").unwrap();
        assert!(matches!(
            perceptual_distance(&x, &small, &BlockEmbedder),
            Err(EvalError::ShapeError(_))
        ));
    }
}
