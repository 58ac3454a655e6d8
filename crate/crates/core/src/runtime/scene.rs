use rand::Rng;
use serde::{Deserialize, Serialize};

use super::decode::{BBox, GtBox};
use crate::tensor::Tensor;

pub const CLASS_NAMES: [&str; 3] = ["rectangle", "ellipse", "triangle"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Square image side in pixels; must be a multiple of 32.
    pub size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_side: usize,
    pub max_side: usize,
    /// Background noise amplitude.
    pub noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            size: 64,
            min_objects: 1,
            max_objects: 3,
            min_side: 10,
            max_side: 36,
            noise: 0.3,
        }
    }
}

/// Colored shapes over a noise background, with their boxes.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    /// `[1, 3, size, size]` in `[0, 1]`.
    pub image: Tensor,
    pub objects: Vec<GtBox>,
}

fn inside(class: usize, b: &BBox, x: f64, y: f64) -> bool {
    let (w, h) = (b[2] - b[0], b[3] - b[1]);
    let (u, v) = ((x - b[0]) / w, (y - b[1]) / h);
    match class {
        0 => true,
        1 => (u - 0.5).powi(2) + (v - 0.5).powi(2) <= 0.25,
        // Apex at the top center, base along the bottom edge.
        _ => (u - 0.5).abs() <= 0.5 * v,
    }
}

impl SyntheticScene {
    /// Draws a scene with between `min_objects` and `max_objects`
    /// non-overlapping shapes (at least one is always placed).
    pub fn generate<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> SyntheticScene {
        let n = cfg.size;
        let plane = n * n;
        let mut data = vec![0.0; 3 * plane];
        for c in 0..3 {
            let base = rng.random_range(0.0..0.2);
            for v in &mut data[c * plane..(c + 1) * plane] {
                *v = base + cfg.noise * rng.random::<f64>();
            }
        }
        let want = rng.random_range(cfg.min_objects.max(1)..=cfg.max_objects.max(1));
        let max_side = cfg.max_side.min(n);
        let mut objects: Vec<GtBox> = Vec::new();
        let mut tries = 0;
        while objects.len() < want && tries < 200 {
            tries += 1;
            let w = rng.random_range(cfg.min_side..=max_side);
            let h = rng.random_range(cfg.min_side..=max_side);
            let x = rng.random_range(0..=n - w);
            let y = rng.random_range(0..=n - h);
            let bbox = [x as f64, y as f64, (x + w) as f64, (y + h) as f64];
            let clear = objects.iter().all(|o| {
                let g = 2.0;
                bbox[0] >= o.bbox[2] + g || o.bbox[0] >= bbox[2] + g || bbox[1] >= o.bbox[3] + g || o.bbox[1] >= bbox[3] + g
            });
            if !clear {
                continue;
            }
            let class = rng.random_range(0..CLASS_NAMES.len());
            let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.45..1.0));
            for yy in y..y + h {
                for xx in x..x + w {
                    if inside(class, &bbox, xx as f64 + 0.5, yy as f64 + 0.5) {
                        for (c, &col) in color.iter().enumerate() {
                            data[c * plane + yy * n + xx] = col;
                        }
                    }
                }
            }
            objects.push(GtBox { bbox, class });
        }
        SyntheticScene {
            image: Tensor::new(vec![1, 3, n, n], data).expect("sized above"),
            objects,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn boxes_inside_and_present() {
        let cfg = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s = SyntheticScene::generate(&cfg, &mut rng);
            assert!(!s.objects.is_empty());
            for o in &s.objects {
                let b = o.bbox;
                assert!(b[0] >= 0.0 && b[1] >= 0.0 && b[2] <= 64.0 && b[3] <= 64.0 && b[0] < b[2] && b[1] < b[3]);
            }
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
