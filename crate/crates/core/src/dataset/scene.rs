use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Rng;

pub const COLOR_NAMES: [&str; 6] = ["red", "green", "blue", "orange", "yellow", "gray"];

/// Fill color of each color index.
pub const COLOR_RGB: [[u8; 3]; 6] = [
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 156, 0],
    [255, 255, 0],
    [128, 128, 128],
];

pub const BACKGROUND_RGB: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Square,
    Circle,
}

impl Shape {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Shape> {
        match i {
            0 => Some(Shape::Square),
            1 => Some(Shape::Circle),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub color: u8,
    pub shape: Shape,
    /// Pixel column of the center.
    pub x: u8,
    /// Pixel row of the center.
    pub y: u8,
}

impl SceneObject {
    /// Squared Euclidean distance between centers.
    pub fn dist2(&self, other: &SceneObject) -> u32 {
        let dx = self.x as i32 - other.x as i32;
        let dy = self.y as i32 - other.y as i32;
        (dx * dx + dy * dy) as u32
    }
}

/// Geometry of the synthetic images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub canvas: usize,
    pub square_side: usize,
    pub circle_radius: usize,
    /// Minimum distance from a center to every canvas edge.
    pub margin: usize,
    /// Minimum Euclidean distance between any two centers.
    pub min_separation: usize,
    /// Candidate positions drawn before giving up on a scene.
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            canvas: 75,
            square_side: 10,
            circle_radius: 5,
            margin: 6,
            min_separation: 12,
            max_attempts: 10_000,
        }
    }
}

impl SceneConfig {
    fn check(&self) -> Result<()> {
        if self.canvas > 256 || self.canvas <= 2 * self.margin {
            return Err(Error::Contract(format!(
                "canvas {} with margin {} leaves no room for centers",
                self.canvas, self.margin
            )));
        }
        Ok(())
    }
}

/// One object per color, in color order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn object(&self, color: u8) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.color == color)
    }

    /// Checks one-object-per-color, the edge margin, the separation and that no
/// two objects share a pixel.
    pub fn validate(&self, config: &SceneConfig) -> Result<()> {
        let mut colors: Vec<u8> = self.objects.iter().map(|o| o.color).collect();
        colors.sort_unstable();
        if colors != (0..COLOR_NAMES.len() as u8).collect::<Vec<_>>() {
            return Err(Error::Format(format!("scene colors {:?} are not one per color", colors)));
        }
        let (lo, hi) = (config.margin, config.canvas - 1 - config.margin);
        for o in &self.objects {
            let (x, y) = (o.x as usize, o.y as usize);
            if x < lo || x > hi || y < lo || y > hi {
                return Err(Error::Format(format!("object {:?} violates the edge margin", o)));
            }
        }
        let min2 = (config.min_separation * config.min_separation) as u32;
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if a.dist2(b) < min2 || overlaps(a, b, config) {
                    return Err(Error::Format(format!("objects {:?} and {:?} are too close", a, b)));
                }
            }
        }
        Ok(())
    }
}

/// Draws a scene by rejection sampling: shapes are uniform and each center is
/// redrawn until it keeps the margin and separation from earlier objects and
/// shares no pixel with them.
/// `seed` and `index` only label the error.
pub fn sample_scene(config: &SceneConfig, rng: &mut Rng, seed: u64, index: u64) -> Result<Scene> {
    config.check()?;
    let (lo, hi) = (config.margin, config.canvas - 1 - config.margin);
    let min2 = (config.min_separation * config.min_separation) as u32;
    let mut attempts = 0;
    let mut objects: Vec<SceneObject> = Vec::with_capacity(COLOR_NAMES.len());
    for color in 0..COLOR_NAMES.len() as u8 {
        let shape = if rng.gen_bool(0.5) { Shape::Square } else { Shape::Circle };
        loop {
            if attempts == config.max_attempts {
                return Err(Error::Generation { seed, index, attempts });
            }
            attempts += 1;
            let candidate = SceneObject {
                color,
                shape,
                x: rng.gen_range(lo..=hi) as u8,
                y: rng.gen_range(lo..=hi) as u8,
            };
            if objects.iter().all(|o| o.dist2(&candidate) >= min2 && !overlaps(o, &candidate, config)) {
                objects.push(candidate);
                break;
            }
        }
    }
    Ok(Scene { objects })
}

fn covers(o: &SceneObject, config: &SceneConfig, x: isize, y: isize) -> bool {
    let (cx, cy) = (o.x as isize, o.y as isize);
    match o.shape {
        Shape::Square => {
            let (lo, side) = (config.square_side as isize / 2, config.square_side as isize);
            (cx - lo..cx - lo + side).contains(&x) && (cy - lo..cy - lo + side).contains(&y)
        }
        Shape::Circle => (x - cx).pow(2) + (y - cy).pow(2) <= (config.circle_radius as isize).pow(2),
    }
}

/// On-canvas pixels `(x, y)` painted for `o`.
pub fn footprint(o: &SceneObject, config: &SceneConfig) -> Vec<(isize, isize)> {
    let n = config.canvas as isize;
    let reach = (config.square_side as isize / 2).max(config.circle_radius as isize);
    let (cx, cy) = (o.x as isize, o.y as isize);
    let mut out = Vec::new();
    for y in (cy - reach).max(0)..=(cy + reach).min(n - 1) {
        for x in (cx - reach).max(0)..=(cx + reach).min(n - 1) {
            if covers(o, config, x, y) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Whether two objects would share a pixel. Centers 12 apart do not rule
/// this out: a 10 px square reaches 5 px up-left of its center and a corner
/// pair sits at distance sqrt(8^2 + 9^2) > 12.
pub fn overlaps(a: &SceneObject, b: &SceneObject, config: &SceneConfig) -> bool {
    footprint(a, config).into_iter().any(|(x, y)| covers(b, config, x, y))
}

/// Rasterizes to planar `[3, canvas, canvas]` bytes: white
/// background, squares cover `c - side/2 ..= c + side/2 - 1`, circles every
/// pixel within `radius` of the center. Objects are painted in color order.
pub fn render_bytes(scene: &Scene, config: &SceneConfig) -> Vec<u8> {
    let n = config.canvas;
    let mut img = vec![0u8; 3 * n * n];
    for (c, plane) in img.chunks_exact_mut(n * n).enumerate() {
        plane.fill(BACKGROUND_RGB[c]);
    }
    for o in &scene.objects {
        for (x, y) in footprint(o, config) {
            let p = y as usize * n + x as usize;
            for (c, &v) in COLOR_RGB[o.color as usize].iter().enumerate() {
                img[c * n * n + p] = v;
            }
        }
    }
    img
}

/// Image bytes scaled to `[0, 1]`.
pub fn bytes_to_tensor<T: Scalar>(bytes: &[u8], canvas: usize) -> Tensor<T> {
    let scale = T::of(1.0 / 255.0);
    Tensor::new(&[3, canvas, canvas], bytes.iter().map(|&b| T::of(b as f64) * scale).collect())
        .expect("3 planes of canvas^2 bytes")
}

/// `[3, canvas, canvas]` RGB in `[0, 1]`.
pub fn render<T: Scalar>(scene: &Scene, config: &SceneConfig) -> Tensor<T> {
    bytes_to_tensor(&render_bytes(scene, config), config.canvas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn scene(seed: u64) -> Scene {
        sample_scene(&SceneConfig::default(), &mut Rng::seed_from_u64(seed), seed, 0).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(scene(4), scene(4));
        assert_ne!(scene(4), scene(5));
    }

    #[test]
    fn thousand_scenes_satisfy_invariants() {
        let config = SceneConfig::default();
        let mut squares = 0;
        for s in 0..1000 {
            let sc = scene(s);
            sc.validate(&config).unwrap();
            squares += sc.objects.iter().filter(|o| o.shape == Shape::Square).count();
        }
        let frac = squares as f64 / 6000.0;
        assert!((frac - 0.5).abs() <= 0.05, "square fraction {}", frac);
    }

    #[test]
    fn separated_centers_can_still_touch() {
        let config = SceneConfig::default();
        let sq = |x, y| SceneObject { color: 0, shape: Shape::Square, x, y };
        let ci = |x, y| SceneObject { color: 1, shape: Shape::Circle, x, y };
        assert_eq!(footprint(&sq(20, 20), &config).len(), 100);
        assert_eq!(footprint(&ci(20, 20), &config).len(), 81);
        // both pairs are at least 12 apart
        assert!(overlaps(&sq(20, 20), &sq(28, 29), &config));
        assert!(overlaps(&sq(20, 20), &ci(11, 12), &config));
        assert!(!overlaps(&sq(20, 20), &sq(32, 20), &config));
        assert!(!overlaps(&ci(20, 20), &ci(28, 29), &config));
        let scene = Scene { objects: vec![sq(20, 20), SceneObject { color: 1, ..sq(28, 29) }] };
        assert!(scene.validate(&config).is_err());
    }

    #[test]
    fn exhausted_attempts_report_seed() {
        let config = SceneConfig {
            min_separation: 200,
            max_attempts: 50,
            ..SceneConfig::default()
        };
        let err = sample_scene(&config, &mut Rng::seed_from_u64(1), 77, 3).unwrap_err();
        assert!(matches!(err, Error::Generation { seed: 77, index: 3, attempts: 50 }));
    }

    #[test]
    fn render_fill_rules() {
        let config = SceneConfig::default();
        let sc = Scene {
            objects: vec![
                SceneObject { color: 0, shape: Shape::Square, x: 10, y: 10 },
                SceneObject { color: 2, shape: Shape::Circle, x: 40, y: 40 },
            ],
        };
        let img: Tensor<f32> = render(&sc, &config);
        let px = |c: usize, x: usize, y: usize| img.at(&[c, y, x]);
        assert_eq!([px(0, 10, 10), px(1, 10, 10), px(2, 10, 10)], [1.0, 0.0, 0.0]);
        // 10 columns: 5..=14
        assert_eq!(px(1, 5, 10), 0.0);
        assert_eq!(px(1, 14, 10), 0.0);
        assert_eq!(px(1, 4, 10), 1.0);
        assert_eq!(px(1, 15, 10), 1.0);
        assert_eq!([px(0, 40, 40), px(1, 40, 40), px(2, 40, 40)], [0.0, 0.0, 1.0]);
        assert_eq!(px(0, 45, 40), 0.0);
        assert_eq!(px(0, 44, 44), 1.0);
        assert_eq!([px(0, 70, 2), px(1, 70, 2), px(2, 70, 2)], [1.0, 1.0, 1.0]);
        assert_eq!(render_bytes(&sc, &config), render_bytes(&sc, &config));
    }

    #[test]
    fn center_pixels_keep_their_color() {
        let config = SceneConfig::default();
        for s in 0..200 {
            let sc = scene(s);
            let img = render_bytes(&sc, &config);
            let n = config.canvas;
            for o in &sc.objects {
                let p = o.y as usize * n + o.x as usize;
                let rgb = [img[p], img[n * n + p], img[2 * n * n + p]];
                assert_eq!(rgb, COLOR_RGB[o.color as usize]);
            }
        }
    }
}
