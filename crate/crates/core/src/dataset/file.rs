//! Little-endian dataset file:
//!
//! ```text
//! magic[8] version:u32 canvas:u32 square_side:u32 circle_radius:u32 margin:u32
//! min_separation:u32 images:u64 questions_per_family:u32 seed:u64
//! per image: 6 x (color, shape, x, y):u8, 3*canvas^2 pixel bytes,
//!            questions x (11 question bytes, answer byte)
//! split table: for train, val, test: count:u64 then count x id:u64
//! ```
//!
//! Reading re-renders every scene and re-runs the answer oracle on every
//! question, so a file that loads is consistent with the generator.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::question::{answer_oracle, Answer, Question, QUESTION_DIM};
use crate::dataset::scene::{render_bytes, Scene, SceneConfig, SceneObject, Shape, COLOR_NAMES};
use crate::dataset::{Dataset, DatasetConfig, ImageRecord, Splits};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SORTCLVR";
pub const VERSION: u32 = 1;

pub fn write_dataset<W: Write>(w: &mut W, d: &Dataset) -> std::io::Result<()> {
    let c = &d.config;
    w.write_all(MAGIC)?;
    for v in [
        VERSION,
        c.scene.canvas as u32,
        c.scene.square_side as u32,
        c.scene.circle_radius as u32,
        c.scene.margin as u32,
        c.scene.min_separation as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(d.images.len() as u64).to_le_bytes())?;
    w.write_all(&(c.questions_per_family as u32).to_le_bytes())?;
    w.write_all(&c.seed.to_le_bytes())?;
    for rec in &d.images {
        for o in &rec.scene.objects {
            w.write_all(&[o.color, o.shape.index(), o.x, o.y])?;
        }
        w.write_all(&rec.pixels)?;
        for (q, a) in &rec.qa {
            w.write_all(&q.encode())?;
            w.write_all(&[a.index() as u8])?;
        }
    }
    for ids in [&d.splits.train, &d.splits.val, &d.splits.test] {
        w.write_all(&(ids.len() as u64).to_le_bytes())?;
        for &id in ids {
            w.write_all(&(id as u64).to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated dataset: {}", e)))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str, limit: usize) -> Result<usize> {
        let v = self.u64()?;
        if v > limit as u64 {
            return Err(Error::Format(format!("{} {} exceeds {}", what, v, limit)));
        }
        Ok(v as usize)
    }
}

/// Parses and fully re-validates a dataset file.
pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let mut r = Reader { inner: r };
    if r.bytes(8)? != MAGIC {
        return Err(Error::Format("not a Sort-of-CLEVR dataset file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", version)));
    }
    let scene = SceneConfig {
        canvas: r.u32()? as usize,
        square_side: r.u32()? as usize,
        circle_radius: r.u32()? as usize,
        margin: r.u32()? as usize,
        min_separation: r.u32()? as usize,
        ..SceneConfig::default()
    };
    if scene.canvas == 0 || scene.canvas > 256 || scene.canvas <= 2 * scene.margin {
        return Err(Error::Format(format!("implausible canvas {} / margin {}", scene.canvas, scene.margin)));
    }
    let n = r.usize("image count", 1 << 32)?;
    let per_family = r.u32()? as usize;
    if per_family > COLOR_NAMES.len() * 3 {
        return Err(Error::Format(format!("{} questions per family", per_family)));
    }
    let seed = r.u64()?;
    let config = DatasetConfig {
        images: n,
        seed,
        questions_per_family: per_family,
        scene,
    };
    let plane = 3 * config.scene.canvas * config.scene.canvas;
    let mut images = Vec::with_capacity(n.min(1 << 16));
    for index in 0..n {
        let table = r.bytes(4 * COLOR_NAMES.len())?;
        let objects = table
            .chunks_exact(4)
            .map(|b| {
                Ok(SceneObject {
                    color: b[0],
                    shape: Shape::from_index(b[1]).ok_or_else(|| Error::Format(format!("shape tag {}", b[1])))?,
                    x: b[2],
                    y: b[3],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = Scene { objects };
        scene
            .validate(&config.scene)
            .map_err(|e| Error::Format(format!("image {}: {}", index, e)))?;
        let pixels = r.bytes(plane)?;
        if pixels != render_bytes(&scene, &config.scene) {
            return Err(Error::Format(format!("image {}: pixels do not match its scene", index)));
        }
        let mut qa = Vec::with_capacity(config.questions_per_image());
        for k in 0..config.questions_per_image() {
            let raw = r.bytes(QUESTION_DIM + 1)?;
            let q = Question::decode(&raw[..QUESTION_DIM])?;
            let a = Answer::new(raw[QUESTION_DIM])?;
            let truth = answer_oracle(&scene, &q, config.scene.canvas)?;
            if a != truth {
                return Err(Error::Format(format!(
                    "image {} question {}: stored answer {} but the oracle says {}",
                    index,
                    k,
                    a.label(),
                    truth.label()
                )));
            }
            qa.push((q, a));
        }
        images.push(ImageRecord { scene, pixels, qa });
    }
    let mut seen = vec![false; n];
    let mut lists = Vec::with_capacity(3);
    for _ in 0..3 {
        let count = r.usize("split size", n)?;
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let id = r.usize("image id", n.saturating_sub(1))?;
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::Format(format!("image {} appears in more than one split", id)));
            }
            ids.push(id);
        }
        lists.push(ids);
    }
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after the split table".into()));
    }
    let test = lists.pop().expect("three lists");
    let val = lists.pop().expect("three lists");
    let train = lists.pop().expect("three lists");
    Ok(Dataset {
        config,
        images,
        splits: Splits { train, val, test },
    })
}

pub fn save_dataset(path: &Path, d: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, d)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file))
}
