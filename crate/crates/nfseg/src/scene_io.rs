//! Scene directories.
//!
//! ```text
//! scene.json            manifest: camera, split, one entry per view
//! images/<id>.png       8-bit RGB
//! masks/<id>.png        8-bit gray: 0 background, 255 label 1, other values are labels
//! features/<id>.nsf     optional feature tensor
//! tokens/<id>.nsf       optional descriptor tokens
//! ```
//!
//! Paths in `scene.json` are relative to the directory. Writing a scene
//! that was just loaded reproduces every file byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use nfseg_core::{CameraModel, FeatureMap, Pose, PosedView, Scene, Split};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io::{self, Image8};
use crate::nsf;

pub const MANIFEST: &str = "scene.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub version: u32,
    pub camera: CameraModel,
    pub split: Split,
    pub views: Vec<ViewEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub id: String,
    pub image: String,
    /// Camera-to-world, 3 rows of 4.
    pub pose: Pose,
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default)]
    pub features: Option<String>,
    #[serde(default)]
    pub tokens: Option<String>,
}

/// Stored gray value for a label.
pub fn encode_mask_label(label: u8) -> u8 {
    if label == 1 {
        255
    } else {
        label
    }
}

pub fn decode_mask_value(v: u8) -> u8 {
    if v == 255 {
        1
    } else {
        v
    }
}

fn read_json(path: &Path) -> Result<SceneManifest> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

fn check_size(path: &Path, img: &Image8, camera: &CameraModel) -> Result<()> {
    if img.width != camera.width || img.height != camera.height {
        return Err(Error::format(
            path,
            format!(
                "image size mismatch: {}x{} but the camera is {}x{}",
                img.width, img.height, camera.width, camera.height
            ),
        ));
    }
    Ok(())
}

fn load_view(dir: &Path, entry: &ViewEntry, camera: &CameraModel) -> Result<PosedView> {
    entry.pose.validate()?;
    let image_path = dir.join(&entry.image);
    let img = image_io::read_png(&image_path)?;
    check_size(&image_path, &img, camera)?;
    let image: Vec<f64> = if img.channels == 3 {
        img.data.iter().map(|&b| b as f64 / 255.0).collect()
    } else {
        img.data.iter().flat_map(|&b| [b as f64 / 255.0; 3]).collect()
    };
    let mask = match &entry.mask {
        Some(rel) => {
            let p = dir.join(rel);
            let m = image_io::read_png(&p)?;
            check_size(&p, &m, camera)?;
            Some(m.data.iter().step_by(m.channels).map(|&v| decode_mask_value(v)).collect())
        }
        None => None,
    };
    let read_nsf = |rel: &Option<String>| -> Result<Option<FeatureMap>> {
        rel.as_ref()
            .map(|r| {
                let p = dir.join(r);
                let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                nsf::decode(&bytes, &entry.id, &p)
            })
            .transpose()
    };
    Ok(PosedView {
        id: entry.id.clone(),
        image,
        pose: entry.pose,
        mask,
        features: read_nsf(&entry.features)?,
        tokens: read_nsf(&entry.tokens)?,
    })
}

/// All views carrying a map must agree on its dimensions.
fn check_consistent_dims(scene: &Scene, dir: &Path) -> Result<()> {
    for (what, get) in [
        ("features", (|v: &PosedView| v.features.as_ref()) as fn(&PosedView) -> Option<&FeatureMap>),
        ("tokens", |v: &PosedView| v.tokens.as_ref()),
    ] {
        let mut dims = None;
        for v in &scene.views {
            if let Some(fm) = get(v) {
                let d = (fm.height, fm.width, fm.channels);
                if *dims.get_or_insert(d) != d {
                    return Err(Error::format(
                        dir,
                        format!("{what} dims mismatch: view {} has {d:?}, expected {:?}", v.id, dims.unwrap()),
                    ));
                }
            }
        }
    }
    Ok(())
}

pub fn load_scene(dir: &Path) -> Result<Scene> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::Missing {
            what: "scene manifest",
            path: manifest_path,
            hint: "create one with `nfseg make-synthetic --out <dir>`",
        });
    }
    let m = read_json(&manifest_path)?;
    if m.version != FORMAT_VERSION {
        return Err(Error::format(&manifest_path, format!("unsupported scene version {}", m.version)));
    }
    m.camera.validate()?;
    let views = m
        .views
        .iter()
        .map(|e| load_view(dir, e, &m.camera))
        .collect::<Result<Vec<_>>>()?;
    let scene = Scene {
        camera: m.camera,
        views,
        split: m.split,
    };
    scene.validate()?;
    check_consistent_dims(&scene, dir)?;
    Ok(scene)
}

/// File names used for a view's payloads.
pub fn view_entry(view: &PosedView) -> ViewEntry {
    ViewEntry {
        id: view.id.clone(),
        image: format!("images/{}.png", view.id),
        pose: view.pose,
        mask: view.mask.as_ref().map(|_| format!("masks/{}.png", view.id)),
        features: view.features.as_ref().map(|_| format!("features/{}.nsf", view.id)),
        tokens: view.tokens.as_ref().map(|_| format!("tokens/{}.nsf", view.id)),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(p: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(p, bytes).map_err(|e| Error::io(p, e))
}

/// Writes `scene` under `dir`, creating it if needed. Returns the written files.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<Vec<PathBuf>> {
    scene.validate()?;
    for v in &scene.views {
        if v.id.is_empty() || v.id.contains(['/', '\\']) || v.id.starts_with('.') {
            return Err(Error::Usage(format!("view id {:?} is not a plain file name", v.id)));
        }
    }
    create_dir(dir)?;
    let (w, h) = (scene.camera.width, scene.camera.height);
    let mut written = Vec::new();
    let mut entries = Vec::with_capacity(scene.views.len());
    for v in &scene.views {
        let e = view_entry(v);
        let p = dir.join(&e.image);
        create_dir(p.parent().unwrap())?;
        write_file(&p, &image_io::encode_png(&p, w, h, 3, &image_io::rgb_bytes(&v.image))?)?;
        written.push(p);
        if let (Some(rel), Some(mask)) = (&e.mask, &v.mask) {
            let p = dir.join(rel);
            create_dir(p.parent().unwrap())?;
            let bytes: Vec<u8> = mask.iter().map(|&l| encode_mask_label(l)).collect();
            write_file(&p, &image_io::encode_png(&p, w, h, 1, &bytes)?)?;
            written.push(p);
        }
        for (rel, fm) in [(&e.features, &v.features), (&e.tokens, &v.tokens)] {
            if let (Some(rel), Some(fm)) = (rel, fm) {
                let p = dir.join(rel);
                create_dir(p.parent().unwrap())?;
                write_file(&p, &nsf::encode(fm)?)?;
                written.push(p);
            }
        }
        entries.push(e);
    }
    let manifest = SceneManifest {
        version: FORMAT_VERSION,
        camera: scene.camera,
        split: scene.split.clone(),
        views: entries,
    };
    let p = dir.join(MANIFEST);
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_file(&p, &json)?;
    written.push(p);
    Ok(written)
}
