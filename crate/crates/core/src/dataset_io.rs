//! Dataset directories: `images/<frame_id>.png` plus `annotations.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{quantize, Annotation, BBox, Dataset, Frame, Joint, KeypointSet, Split};

pub const DATASET_FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct FileRoot {
    version: u64,
    n_identities: Option<u32>,
    #[serde(default = "default_split")]
    split: Split,
    frames: Vec<FileFrame>,
}

fn default_split() -> Split {
    Split::Train
}

#[derive(Serialize, Deserialize)]
struct FileFrame {
    id: String,
    file: String,
    boxes: Vec<FileBox>,
    keypoints: Vec<FileKeypoints>,
    identity: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct FileBox {
    cls: u32,
    xyxy: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct FileKeypoints {
    joints: Vec<[f64; 3]>,
    area: f64,
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| CoreError::io(&images, e))?;
    let mut frames = Vec::with_capacity(ds.len());
    for (f, a) in ds.iter() {
        let file = format!("images/{}.png", f.id());
        let path = dir.join(&file);
        let bytes: Vec<u8> = f.pixels().iter().map(|&v| quantize(v)).collect();
        image::save_buffer(
            &path,
            &bytes,
            f.width() as u32,
            f.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| CoreError::Image {
            path: path.clone(),
            source,
        })?;
        frames.push(FileFrame {
            id: f.id().to_string(),
            file,
            boxes: a
                .boxes
                .iter()
                .map(|b| FileBox {
                    cls: b.cls,
                    xyxy: b.xyxy(),
                })
                .collect(),
            keypoints: a
                .keypoints
                .iter()
                .map(|k| FileKeypoints {
                    joints: k.joints.iter().map(|j| [j.x, j.y, j.v as f64]).collect(),
                    area: k.area,
                })
                .collect(),
            identity: a.identity,
        });
    }
    let root = FileRoot {
        version: DATASET_FORMAT_VERSION,
        n_identities: ds.n_identities,
        split: ds.split,
        frames,
    };
    let path = dir.join("annotations.json");
    let text = serde_json::to_string_pretty(&root).map_err(|source| CoreError::Json {
        path: path.clone(),
        source,
    })?;
    std::fs::write(&path, text).map_err(|e| CoreError::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("annotations.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| CoreError::Json {
        path: path.clone(),
        source,
    })?;
    let version = value.get("version").and_then(serde_json::Value::as_u64).unwrap_or(0);
    if version != DATASET_FORMAT_VERSION {
        return Err(CoreError::Version {
            what: "dataset",
            found: version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let root: FileRoot = serde_json::from_value(value).map_err(|source| CoreError::Json {
        path: path.clone(),
        source,
    })?;
    let mut frames = Vec::with_capacity(root.frames.len());
    let mut annotations = Vec::with_capacity(root.frames.len());
    for rec in root.frames {
        let img_path = dir.join(&rec.file);
        let img = image::open(&img_path)
            .map_err(|source| CoreError::Image {
                path: img_path.clone(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        let frame = Frame::new(rec.id.clone(), w, h, pixels)?;
        let boxes = rec
            .boxes
            .iter()
            .map(|b| {
                let [x0, y0, x1, y1] = b.xyxy;
                BBox::new(x0, y0, x1, y1, b.cls).map_err(|e| CoreError::record(&rec.id, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let keypoints = rec
            .keypoints
            .iter()
            .map(|k| {
                let joints = k
                    .joints
                    .iter()
                    .map(|&[x, y, v]| {
                        if v == 0.0 || v == 1.0 {
                            Ok(Joint { x, y, v: v as u8 })
                        } else {
                            Err(CoreError::record(&rec.id, format!("joint visibility {v}")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                KeypointSet::new(joints, k.area).map_err(|e| CoreError::record(&rec.id, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        if let (Some(id), Some(n)) = (rec.identity, root.n_identities) {
            if id >= n {
                return Err(CoreError::record(&rec.id, format!("identity {id} >= n_identities {n}")));
            }
        }
        frames.push(frame);
        annotations.push(Annotation {
            frame_id: rec.id,
            boxes,
            keypoints,
            identity: rec.identity,
        });
    }
    Dataset::new(frames, annotations, root.split, root.n_identities)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize) -> Dataset {
        let mut frames = Vec::new();
        let mut anns = Vec::new();
        for i in 0..n {
            let id = format!("f{i}");
            let px = (0..16 * 18 * 3).map(|k| ((k * 31 + i * 7) % 97) as f32 / 96.0).collect();
            frames.push(Frame::new(id.clone(), 18, 16, px).unwrap());
            anns.push(Annotation {
                frame_id: id,
                boxes: vec![BBox::new(1.25, 2.0, 7.5, 9.1, 0).unwrap()],
                keypoints: vec![KeypointSet::new(
                    vec![Joint { x: 3.3, y: 4.1, v: 1 }, Joint { x: 5.0, y: 6.0, v: 0 }],
                    42.5,
                )
                .unwrap()],
                identity: Some(i as u32 % 3),
            });
        }
        Dataset::new(frames, anns, Split::Val, Some(3)).unwrap()
    }

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny(3);
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.split, Split::Val);
        assert_eq!(back.n_identities, Some(3));
        for ((f, a), (g, b)) in ds.iter().zip(back.iter()) {
            assert_eq!(a, b);
            for (x, y) in f.pixels().iter().zip(g.pixels()) {
                assert!((x - y).abs() <= 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(vec![], vec![], Split::Test, None).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert!(dir.path().join("images").is_dir());
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(1), dir.path()).unwrap();
        let p = dir.path().join("annotations.json");
        let text = std::fs::read_to_string(&p).unwrap().replacen("\"version\": 1", "\"version\": 2", 1);
        std::fs::write(&p, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(CoreError::Version { found: 2, .. })));
    }

    #[test]
    fn degenerate_box_names_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(2), dir.path()).unwrap();
        let p = dir.path().join("annotations.json");
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        v["frames"][1]["boxes"][0]["xyxy"] = serde_json::json!([9.0, 0.0, 3.0, 5.0]);
        std::fs::write(&p, v.to_string()).unwrap();
        match load_dataset(dir.path()) {
            Err(CoreError::Record { frame_id, .. }) => assert_eq!(frame_id, "f1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_annotations_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(CoreError::Io { .. })));
    }
}
