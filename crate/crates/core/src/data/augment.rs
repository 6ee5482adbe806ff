//! Flip augmentation applied identically to query and reference.

use rand::Rng;

use crate::tensor::Tensor;

/// Mirrors a `(n, c, h, w)` tensor along the width axis.
pub fn flip_h(t: &Tensor) -> Tensor {
    let s = t.shape();
    let mut out = t.clone();
    let (src, dst) = (t.data(), out.data_mut());
    for nc in 0..s.n * s.c {
        for y in 0..s.h {
            let row = nc * s.h * s.w + y * s.w;
            for x in 0..s.w {
                dst[row + x] = src[row + s.w - 1 - x];
            }
        }
    }
    out
}

/// Mirrors a `(n, c, h, w)` tensor along the height axis.
pub fn flip_v(t: &Tensor) -> Tensor {
    let s = t.shape();
    let mut out = t.clone();
    let (src, dst) = (t.data(), out.data_mut());
    for nc in 0..s.n * s.c {
        let plane = nc * s.h * s.w;
        for y in 0..s.h {
            let src_row = plane + (s.h - 1 - y) * s.w;
            let dst_row = plane + y * s.w;
            dst[dst_row..dst_row + s.w].copy_from_slice(&src[src_row..src_row + s.w]);
        }
    }
    out
}

/// With probability 1/2 each, applies a horizontal and/or vertical flip, the
/// same pattern to both images. Draws exactly two booleans from `rng`.
pub fn augment_flip<R: Rng>(query: &Tensor, reference: &Tensor, rng: &mut R) -> (Tensor, Tensor) {
    let do_h = rng.gen_bool(0.5);
    let do_v = rng.gen_bool(0.5);
    let apply = |t: &Tensor| {
        let mut t = t.clone();
        if do_h {
            t = flip_h(&t);
        }
        if do_v {
            t = flip_v(&t);
        }
        t
    };
    (apply(query), apply(reference))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn marked() -> Tensor {
        // Zero image with a single marked corner pixel per channel.
        let mut t = Tensor::zeros(Shape::new(1, 3, 4, 4));
        for c in 0..3 {
            t.set(0, c, 0, 0, 1.0 + c as f32);
        }
        t
    }

    #[test]
    fn flips_are_involutions() {
        let t = marked();
        assert_eq!(flip_h(&flip_h(&t)), t);
        assert_eq!(flip_v(&flip_v(&t)), t);
    }

    #[test]
    fn same_pattern_applied_to_both_images() {
        let q = marked();
        let r = marked();
        for seed in 0..16u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let (fq, fr) = augment_flip(&q, &r, &mut rng);
            assert_eq!(fq, fr, "seed {seed}: corner pixel moved differently");
        }
    }

    #[test]
    fn seeded_rng_reproduces_the_augmentation_stream() {
        let q = marked();
        let r = flip_h(&marked());
        let run = |seed: u64| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            (0..8)
                .map(|_| augment_flip(&q, &r, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn double_application_with_same_draws_restores_originals() {
        let q = marked();
        let r = marked();
        for seed in 0..8u64 {
            let mut rng1 = ChaCha12Rng::seed_from_u64(seed);
            let (fq, fr) = augment_flip(&q, &r, &mut rng1);
            let mut rng2 = ChaCha12Rng::seed_from_u64(seed);
            let (bq, br) = augment_flip(&fq, &fr, &mut rng2);
            assert_eq!(bq, q);
            assert_eq!(br, r);
        }
    }
}
