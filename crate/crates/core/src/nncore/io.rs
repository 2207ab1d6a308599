//! Binary model container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every parameter as little-endian `f32` in traversal order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LayerSpec, ModelGraph, NnError, Tensor};

pub const MAGIC: &[u8; 8] = b"OFFEVMDL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("read failed: {0}")]
    Read(#[from] std::io::Error),
    #[error("not a model file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("parameter {index}: stored shape {stored:?}, layer expects {expected:?}")]
    ParamShape {
        index: usize,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("header lists {stored} parameters, layers define {expected}")]
    ParamCount { stored: usize, expected: usize },
    #[error("trailing bytes after parameters")]
    Trailing,
    #[error(transparent)]
    Graph(#[from] NnError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub architecture: String,
    pub max_len: usize,
    pub layers: Vec<LayerSpec>,
    pub shapes: Vec<Vec<usize>>,
    /// Vocabulary words in index order, including the reserved entries.
    pub vocabulary: Vec<String>,
    pub metadata: serde_json::Value,
}

pub fn write_model<W: Write>(
    mut w: W,
    architecture: &str,
    vocabulary: Vec<String>,
    metadata: serde_json::Value,
    graph: &ModelGraph<f32>,
) -> Result<(), ModelFileError> {
    let params = graph.parameters();
    let header = ModelHeader {
        architecture: architecture.to_string(),
        max_len: graph.max_len(),
        layers: graph.specs(),
        shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
        vocabulary,
        metadata,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in params {
        let mut buf = Vec::with_capacity(p.value.len() * 4);
        for x in p.value.values() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<(ModelHeader, ModelGraph<f32>), ModelFileError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelFileError::BadMagic);
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(ModelFileError::Version(version));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: ModelHeader = serde_json::from_slice(&json)?;

    let mut graph = ModelGraph::<f32>::new(header.layers.clone(), header.max_len, 0)?;
    {
        let params = graph.parameters_mut();
        if params.len() != header.shapes.len() {
            return Err(ModelFileError::ParamCount {
                stored: header.shapes.len(),
                expected: params.len(),
            });
        }
        for (index, (p, shape)) in params.into_iter().zip(&header.shapes).enumerate() {
            if p.shape() != shape.as_slice() {
                return Err(ModelFileError::ParamShape {
                    index,
                    stored: shape.clone(),
                    expected: p.shape().to_vec(),
                });
            }
            let mut bytes = vec![0u8; p.value.len() * 4];
            r.read_exact(&mut bytes)?;
            let values = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            p.value = Tensor::from_vec(shape.clone(), values);
        }
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(ModelFileError::Trailing);
    }
    Ok((header, graph))
}

pub fn save_model(
    path: &Path,
    architecture: &str,
    vocabulary: Vec<String>,
    metadata: serde_json::Value,
    graph: &ModelGraph<f32>,
) -> Result<(), ModelFileError> {
    let io = |source| ModelFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    write_model(BufWriter::new(file), architecture, vocabulary, metadata, graph)
}

pub fn load_model(path: &Path) -> Result<(ModelHeader, ModelGraph<f32>), ModelFileError> {
    let file = File::open(path).map_err(|source| ModelFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_model(BufReader::new(file))
}
