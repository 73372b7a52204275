use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::scene::{Scene, SceneObject, Shape, COLOR_NAMES};
use crate::error::{Error, Result};
use crate::Rng;

pub const QUESTION_DIM: usize = 11;
pub const SUBTYPES: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Relational,
    NonRelational,
}

/// Non-relational subtypes: 0 shape of the target, 1 target in the left half,
/// 2 target in the top half. Relational subtypes: 0 shape of the nearest
/// object, 1 shape of the farthest object, 2 number of objects sharing the
/// target's shape (target included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Question {
    pub color: u8,
    pub family: Family,
    pub subtype: u8,
}

impl Question {
    /// Color one-hot (6), family one-hot (relational, non-relational), subtype
    /// one-hot (3).
    pub fn encode(&self) -> [u8; QUESTION_DIM] {
        let mut v = [0u8; QUESTION_DIM];
        v[self.color as usize] = 1;
        v[6 + self.family as usize] = 1;
        v[8 + self.subtype as usize] = 1;
        v
    }

    pub fn decode(v: &[u8]) -> Result<Question> {
        let one_hot = |part: &[u8]| -> Option<u8> {
            if part.iter().all(|&b| b <= 1) && part.iter().map(|&b| b as u32).sum::<u32>() == 1 {
                part.iter().position(|&b| b == 1).map(|p| p as u8)
            } else {
                None
            }
        };
        if v.len() != QUESTION_DIM {
            return Err(Error::Format(format!("question vector of length {}", v.len())));
        }
        match (one_hot(&v[..6]), one_hot(&v[6..8]), one_hot(&v[8..])) {
            (Some(color), Some(family), Some(subtype)) => Ok(Question {
                color,
                family: if family == 0 {
                    Family::Relational
                } else {
                    Family::NonRelational
                },
                subtype,
            }),
            _ => Err(Error::Format(format!("question vector {:?} is not three one-hots", v))),
        }
    }

    /// All 36 questions, relational family first.
    pub fn all() -> Vec<Question> {
        [Family::Relational, Family::NonRelational]
            .into_iter()
            .flat_map(|family| {
                (0..COLOR_NAMES.len() as u8)
                    .flat_map(move |color| (0..SUBTYPES).map(move |subtype| Question { color, family, subtype }))
            })
            .collect()
    }
}

pub const ANSWER_VOCABULARY: [&str; 10] = ["yes", "no", "square", "circle", "1", "2", "3", "4", "5", "6"];

/// Index into [`ANSWER_VOCABULARY`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Answer(u8);

impl Answer {
    pub const YES: Answer = Answer(0);
    pub const NO: Answer = Answer(1);

    pub fn new(index: u8) -> Result<Answer> {
        if (index as usize) < ANSWER_VOCABULARY.len() {
            Ok(Answer(index))
        } else {
            Err(Error::Format(format!("answer class {} out of range", index)))
        }
    }

    pub fn shape(shape: Shape) -> Answer {
        Answer(2 + shape.index())
    }

    /// Count answer for `1..=6`.
    pub fn count(n: usize) -> Answer {
        assert!((1..=6).contains(&n), "count {} outside 1..=6", n);
        Answer(3 + n as u8)
    }

    pub fn bool(b: bool) -> Answer {
        if b {
            Answer::YES
        } else {
            Answer::NO
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn label(self) -> &'static str {
        ANSWER_VOCABULARY[self.0 as usize]
    }

    pub fn from_label(label: &str) -> Option<Answer> {
        ANSWER_VOCABULARY.iter().position(|&l| l == label).map(|i| Answer(i as u8))
    }
}

/// Nearest (`farthest = false`) or farthest other object by center distance;
/// ties go to the lower color index.
fn extreme_other<'a>(scene: &'a Scene, target: &SceneObject, farthest: bool) -> Option<&'a SceneObject> {
    let mut others: Vec<&SceneObject> = scene.objects.iter().filter(|o| o.color != target.color).collect();
    others.sort_by_key(|o| o.color);
    others.into_iter().fold(None, |best: Option<&SceneObject>, o| match best {
        None => Some(o),
        Some(b) => {
            let (d, db) = (o.dist2(target), b.dist2(target));
            if (farthest && d > db) || (!farthest && d < db) {
                Some(o)
            } else {
                Some(b)
            }
        }
    })
}

/// The geometric ground truth for `q` on `scene` (any object list containing
/// the target color).
pub fn answer_oracle(scene: &Scene, q: &Question, canvas: usize) -> Result<Answer> {
    let target = scene
        .object(q.color)
        .ok_or_else(|| Error::Contract(format!("scene has no object of color {}", q.color)))?;
    let half = canvas as f64 / 2.0;
    match (q.family, q.subtype) {
        (Family::NonRelational, 0) => Ok(Answer::shape(target.shape)),
        (Family::NonRelational, 1) => Ok(Answer::bool((target.x as f64) < half)),
        (Family::NonRelational, 2) => Ok(Answer::bool((target.y as f64) < half)),
        (Family::Relational, s @ (0 | 1)) => extreme_other(scene, target, s == 1)
            .map(|o| Answer::shape(o.shape))
            .ok_or_else(|| Error::Contract("relational question on a single-object scene".into())),
        (Family::Relational, 2) => {
            let n = scene.objects.iter().filter(|o| o.shape == target.shape).count();
            Ok(Answer::count(n.min(6)))
        }
        _ => Err(Error::Contract(format!("question subtype {} out of range", q.subtype))),
    }
}

/// `per_family` distinct (color, subtype) questions of each family, drawn
/// without replacement, relational first, each with its oracle answer.
pub fn generate_questions(scene: &Scene, per_family: usize, canvas: usize, rng: &mut Rng) -> Result<Vec<(Question, Answer)>> {
    let pool = COLOR_NAMES.len() * SUBTYPES as usize;
    if per_family > pool {
        return Err(Error::Contract(format!("{} questions per family requested, only {} exist", per_family, pool)));
    }
    let mut out = Vec::with_capacity(2 * per_family);
    for family in [Family::Relational, Family::NonRelational] {
        let mut candidates: Vec<Question> = Question::all().into_iter().filter(|q| q.family == family).collect();
        candidates.shuffle(rng);
        for q in candidates.into_iter().take(per_family) {
            out.push((q, answer_oracle(scene, &q, canvas)?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::scene::{sample_scene, SceneConfig};
    use rand::SeedableRng;

    fn obj(color: u8, shape: Shape, x: u8, y: u8) -> SceneObject {
        SceneObject { color, shape, x, y }
    }

    #[test]
    fn encoding_layout_and_round_trip() {
        let q = Question { color: 0, family: Family::NonRelational, subtype: 0 };
        assert_eq!(q.encode(), [1, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0]);
        let all = Question::all();
        assert_eq!(all.len(), 36);
        for q in all {
            let v = q.encode();
            assert_eq!(v.iter().map(|&b| b as u32).sum::<u32>(), 3);
            assert_eq!(Question::decode(&v).unwrap(), q);
        }
        assert!(Question::decode(&[1; 11]).is_err());
    }

    #[test]
    fn vocabulary_round_trip() {
        for i in 0..10 {
            let a = Answer::new(i).unwrap();
            assert_eq!(Answer::from_label(a.label()), Some(a));
        }
        assert!(Answer::new(10).is_err());
        assert_eq!(Answer::count(6).label(), "6");
        assert_eq!(Answer::shape(Shape::Circle).label(), "circle");
    }

    #[test]
    fn oracle_examples() {
        let red_square = Scene { objects: vec![obj(0, Shape::Square, 10, 10), obj(1, Shape::Circle, 60, 60)] };
        let q = |family, subtype| Question { color: 0, family, subtype };
        assert_eq!(answer_oracle(&red_square, &q(Family::NonRelational, 0), 75).unwrap().label(), "square");
        assert_eq!(answer_oracle(&red_square, &q(Family::NonRelational, 1), 75).unwrap().label(), "yes");
        assert_eq!(answer_oracle(&red_square, &q(Family::NonRelational, 2), 75).unwrap().label(), "yes");

        let three = Scene {
            objects: vec![obj(0, Shape::Square, 10, 10), obj(2, Shape::Circle, 12, 14), obj(1, Shape::Square, 60, 60)],
        };
        assert_eq!(answer_oracle(&three, &q(Family::Relational, 0), 75).unwrap().label(), "circle");
        assert_eq!(answer_oracle(&three, &q(Family::Relational, 1), 75).unwrap().label(), "square");

        let squares = Scene { objects: (0..6).map(|c| obj(c, Shape::Square, 10 + 10 * c, 20)).collect() };
        assert_eq!(answer_oracle(&squares, &q(Family::Relational, 2), 75).unwrap().label(), "6");
    }

    #[test]
    fn ties_go_to_lower_color() {
        let s = Scene {
            objects: vec![obj(3, Shape::Square, 30, 30), obj(1, Shape::Circle, 50, 30), obj(4, Shape::Square, 10, 30)],
        };
        let q = Question { color: 3, family: Family::Relational, subtype: 0 };
        assert_eq!(answer_oracle(&s, &q, 75).unwrap(), Answer::shape(Shape::Circle));
    }

    #[test]
    fn questions_are_distinct_and_oracle_consistent() {
        let config = SceneConfig::default();
        for seed in 0..100 {
            let mut rng = Rng::seed_from_u64(seed);
            let scene = sample_scene(&config, &mut rng, seed, 0).unwrap();
            let qa = generate_questions(&scene, 10, 75, &mut rng).unwrap();
            assert_eq!(qa.len(), 20);
            assert_eq!(qa.iter().filter(|(q, _)| q.family == Family::Relational).count(), 10);
            let mut seen: Vec<Question> = qa.iter().map(|(q, _)| *q).collect();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 20);
            for (q, a) in &qa {
                assert_eq!(answer_oracle(&scene, q, 75).unwrap(), *a);
            }
        }
    }

    #[test]
    fn nearest_and_farthest_differ_unless_equidistant() {
        let config = SceneConfig::default();
        for seed in 0..300 {
            let scene = sample_scene(&config, &mut Rng::seed_from_u64(seed), seed, 0).unwrap();
            for t in &scene.objects {
                let near = extreme_other(&scene, t, false).unwrap();
                let far = extreme_other(&scene, t, true).unwrap();
                let ds: Vec<u32> = scene.objects.iter().filter(|o| o.color != t.color).map(|o| o.dist2(t)).collect();
                if ds.iter().any(|&d| d != ds[0]) {
                    assert_ne!(near.color, far.color);
                }
            }
        }
    }
}
