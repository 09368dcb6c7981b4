//! Versioned binary containers: checkpoints, feature matrices and packaged
//! datasets share one format (magic, JSON header, raw little-endian data).

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Net;
use crate::scalar::Scalar;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"PXCONT01";

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

pub fn fnv64_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv64(bytes))
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct Header {
    version: u32,
    kind: String,
    config_hash: String,
    step: usize,
    dtype: String,
    arrays: Vec<ArrayEntry>,
    meta: serde_json::Value,
}

/// An in-memory container; array data is held as f64 regardless of the
/// on-disk dtype.
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: String,
    pub config_hash: String,
    pub step: usize,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Container {
    pub fn array(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, shape, data)| (shape.as_slice(), data.as_slice()))
            .ok_or_else(|| Error::Format(format!("container has no array '{name}'")))
    }
}

pub fn write_container<S: Scalar, P: AsRef<Path>>(
    path: P,
    kind: &str,
    config_hash: &str,
    step: usize,
    meta: serde_json::Value,
    arrays: &[(String, Vec<usize>, Vec<S>)],
) -> Result<()> {
    let dtype = if std::mem::size_of::<S>() == 4 { "f32" } else { "f64" };
    let header = Header {
        version: 1,
        kind: kind.into(),
        config_hash: config_hash.into(),
        step,
        dtype: dtype.into(),
        arrays: arrays
            .iter()
            .map(|(name, shape, data)| {
                debug_assert_eq!(shape.iter().product::<usize>(), data.len());
                ArrayEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                }
            })
            .collect(),
        meta,
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    for (_, _, data) in arrays {
        for &v in data {
            if dtype == "f32" {
                file.write_all(&(v.to_f64_() as f32).to_le_bytes())?;
            } else {
                file.write_all(&v.to_f64_().to_le_bytes())?;
            }
        }
    }
    file.flush()?;
    Ok(())
}

pub fn read_container<P: AsRef<Path>>(path: P) -> Result<Container> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a container file (bad magic)".into()));
    }
    let mut len4 = [0u8; 4];
    file.read_exact(&mut len4)?;
    let hlen = u32::from_le_bytes(len4) as usize;
    let mut hbuf = vec![0u8; hlen];
    file.read_exact(&mut hbuf)?;
    let header: Header =
        serde_json::from_slice(&hbuf).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.version != 1 {
        return Err(Error::Format(format!(
            "unsupported container version {}",
            header.version
        )));
    }
    let elem = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Format(format!("unknown dtype '{other}'"))),
    };
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for entry in &header.arrays {
        let n: usize = entry.shape.iter().product();
        let mut buf = vec![0u8; n * elem];
        file.read_exact(&mut buf)?;
        let data: Vec<f64> = if elem == 4 {
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        } else {
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk")))
                .collect()
        };
        arrays.push((entry.name.clone(), entry.shape.clone(), data));
    }
    Ok(Container {
        kind: header.kind,
        config_hash: header.config_hash,
        step: header.step,
        meta: header.meta,
        arrays,
    })
}

/// Hash of a file's full contents; used to tie reports to checkpoints.
pub fn file_hash<P: AsRef<Path>>(path: P) -> Result<String> {
    Ok(fnv64_hex(&std::fs::read(path)?))
}

/// Serialize a network's full state (parameters, batch-norm statistics,
/// spectral-norm vectors).
pub fn save_net<S: Scalar, P: AsRef<Path>>(
    path: P,
    kind: &str,
    net: &Net<S>,
    config_hash: &str,
    step: usize,
    meta: serde_json::Value,
) -> Result<()> {
    let arrays: Vec<(String, Vec<usize>, Vec<S>)> = net
        .state()
        .into_iter()
        .map(|s| (s.name, s.shape, s.data.to_vec()))
        .collect();
    write_container(path, kind, config_hash, step, meta, &arrays)
}

/// Restore a network's state from a container; every array must match an
/// existing state entry by name and shape.
pub fn load_net<S: Scalar>(net: &mut Net<S>, container: &Container) -> Result<()> {
    for state in net.state_mut() {
        let (shape, data) = container.array(&state.name)?;
        if shape != state.shape.as_slice() {
            return Err(Error::Format(format!(
                "array '{}' has shape {shape:?}, expected {:?}",
                state.name, state.shape
            )));
        }
        for (dst, &src) in state.data.iter_mut().zip(data.iter()) {
            *dst = S::fl(src);
        }
    }
    Ok(())
}

/// Pack a dataset into a single file.
pub fn write_packaged_dataset<S: Scalar, P: AsRef<Path>>(path: P, ds: &Dataset<S>) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::InvalidParam("cannot package an empty dataset".into()));
    }
    let (h, w, c) = ds.images[0].dim();
    let mut pixels = Vec::with_capacity(ds.len() * h * w * c);
    for img in &ds.images {
        if img.dim() != (h, w, c) {
            return Err(Error::Shape("packaged datasets need uniform image sizes".into()));
        }
        pixels.extend(img.iter().copied());
    }
    let labels: Vec<S> = ds.labels.iter().map(|&l| S::fl(l as f64)).collect();
    let meta = serde_json::json!({
        "class_names": ds.class_names,
        "image_size": h,
    });
    write_container(
        path,
        "dataset",
        "",
        0,
        meta,
        &[
            ("images".into(), vec![ds.len(), h, w, c], pixels),
            ("labels".into(), vec![ds.len()], labels),
        ],
    )
}

pub fn read_packaged_dataset<S: Scalar, P: AsRef<Path>>(
    path: P,
    expected_size: usize,
) -> Result<Dataset<S>> {
    let container = read_container(path)?;
    if container.kind != "dataset" {
        return Err(Error::Format(format!(
            "expected a dataset container, found '{}'",
            container.kind
        )));
    }
    let (shape, pixels) = container.array("images")?;
    let [n, h, w, c] = shape else {
        return Err(Error::Format("images array must be 4-d".into()));
    };
    if *h != expected_size || *w != expected_size {
        return Err(Error::Format(format!(
            "packaged images are {h}x{w}, config wants {expected_size}"
        )));
    }
    let (_, labels) = container.array("labels")?;
    let class_names: Vec<String> = container
        .meta
        .get("class_names")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_default();
    let per = h * w * c;
    let images: Vec<Array3<S>> = (0..*n)
        .map(|i| {
            Array3::from_shape_vec(
                (*h, *w, *c),
                pixels[i * per..(i + 1) * per].iter().map(|&v| S::fl(v)).collect(),
            )
            .expect("image shape")
        })
        .collect();
    Ok(Dataset {
        images,
        labels: labels.iter().map(|&l| l as usize).collect(),
        class_names,
        skipped: 0,
    })
}
