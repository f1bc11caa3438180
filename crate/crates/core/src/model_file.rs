//! Model file: one JSON header line followed by a little-endian `f32` payload.
//!
//! For each learned level, in level order, the payload holds the per-voxel
//! features (hierarchy order, row-major), then every layer's weight matrix
//! (row-major, `out x in`), then every layer's bias.

use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::VoxelHierarchy;
use crate::model::{Activation, DenseLayer, FeatureField, KernelModel, LearnedField, Mlp};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LayerShape {
    #[serde(rename = "in")]
    pub input: usize,
    #[serde(rename = "out")]
    pub output: usize,
    pub activation: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FieldHeader {
    Constant {
        value: Vec<f64>,
    },
    Learned {
        feature_dim: usize,
        voxel_count: usize,
        layers: Vec<LayerShape>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelHeader {
    pub version: u32,
    pub levels: usize,
    pub d: usize,
    #[serde(default)]
    pub concat_position: bool,
    pub fields: Vec<FieldHeader>,
}

/// A parsed model file not yet tied to a hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub header: ModelHeader,
    pub fields: Vec<FeatureField>,
}

impl ModelFile {
    pub fn read(reader: &mut impl BufRead) -> Result<Self> {
        let mut line = Vec::new();
        reader
            .read_until(b'\n', &mut line)
            .map_err(|e| Error::Format(format!("cannot read header: {e}")))?;
        let header: ModelHeader = serde_json::from_slice(&line)
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", header.version)));
        }
        if header.fields.len() != header.levels || header.levels == 0 {
            return Err(Error::Format(format!(
                "header declares {} levels but {} fields",
                header.levels,
                header.fields.len()
            )));
        }
        let mut fields = Vec::with_capacity(header.levels);
        for (i, f) in header.fields.iter().enumerate() {
            fields.push(match f {
                FieldHeader::Constant { value } => {
                    if value.len() != header.d {
                        return Err(Error::Format(format!(
                            "level {} constant has dimension {}, header says {}",
                            i + 1,
                            value.len(),
                            header.d
                        )));
                    }
                    FeatureField::Constant(DVector::from_vec(value.clone()))
                }
                FieldHeader::Learned {
                    feature_dim,
                    voxel_count,
                    layers,
                } => FeatureField::Learned(read_learned(
                    reader,
                    *feature_dim,
                    *voxel_count,
                    layers,
                    header.d,
                )?),
            });
        }
        let mut rest = [0u8; 1];
        match reader.read(&mut rest) {
            Ok(0) => {}
            Ok(_) => return Err(Error::Format("trailing bytes after payload".into())),
            Err(e) => return Err(Error::Format(format!("cannot read payload: {e}"))),
        }
        Ok(Self { header, fields })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut std::io::BufReader::new(file))
    }

    /// Validate against `hierarchy` and build the kernel model.
    pub fn bind(self, hierarchy: Arc<VoxelHierarchy>) -> Result<KernelModel> {
        if self.header.levels != hierarchy.levels() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} levels, hierarchy has {}",
                self.header.levels,
                hierarchy.levels()
            )));
        }
        for (i, f) in self.header.fields.iter().enumerate() {
            if let FieldHeader::Learned { voxel_count, .. } = f {
                if *voxel_count != hierarchy.len(i + 1) {
                    return Err(Error::DimensionMismatch(format!(
                        "level {} carries features for {voxel_count} voxels, hierarchy has {}",
                        i + 1,
                        hierarchy.len(i + 1)
                    )));
                }
            }
        }
        KernelModel::new(hierarchy, self.fields, self.header.concat_position)
    }
}

fn read_f32s(reader: &mut impl Read, count: usize, what: &str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 4];
    reader
        .read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("payload truncated while reading {what}")))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn read_learned(
    reader: &mut impl Read,
    feature_dim: usize,
    voxel_count: usize,
    shapes: &[LayerShape],
    d: usize,
) -> Result<LearnedField> {
    let features = read_f32s(reader, feature_dim * voxel_count, "features")?;
    let mut weights = Vec::with_capacity(shapes.len());
    for s in shapes {
        let w = read_f32s(reader, s.input * s.output, "weights")?;
        weights.push(DMatrix::from_row_slice(s.output, s.input, &w));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (s, weight) in shapes.iter().zip(weights) {
        let bias = DVector::from_vec(read_f32s(reader, s.output, "biases")?);
        let activation = Activation::parse(&s.activation)
            .ok_or_else(|| Error::Format(format!("unknown activation {}", s.activation)))?;
        layers.push(DenseLayer {
            weight,
            bias,
            activation,
        });
    }
    let mlp = Mlp::new(layers)?;
    if mlp.output_dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "MLP emits {} values, header says d = {d}",
            mlp.output_dim()
        )));
    }
    Ok(LearnedField {
        feature_dim,
        features,
        mlp,
    })
}

/// Serialize `model` in the model-file format. Learned parameters are
/// rounded to `f32`.
pub fn write_model(model: &KernelModel, w: &mut impl Write) -> Result<()> {
    let h = model.hierarchy();
    let fields: Vec<FieldHeader> = model
        .fields()
        .iter()
        .enumerate()
        .map(|(i, f)| match f {
            FeatureField::Constant(c) => FieldHeader::Constant {
                value: c.iter().copied().collect(),
            },
            FeatureField::Learned(lf) => FieldHeader::Learned {
                feature_dim: lf.feature_dim,
                voxel_count: h.len(i + 1),
                layers: lf
                    .mlp
                    .layers()
                    .iter()
                    .map(|l| LayerShape {
                        input: l.weight.ncols(),
                        output: l.weight.nrows(),
                        activation: l.activation.name().into(),
                    })
                    .collect(),
            },
        })
        .collect();
    let header = ModelHeader {
        version: FORMAT_VERSION,
        levels: model.levels(),
        d: model.dim(),
        concat_position: model.concat_position(),
        fields,
    };
    let io = |e: std::io::Error| Error::Format(format!("write failed: {e}"));
    let json = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w, "{json}").map_err(io)?;
    let mut put = |v: f64| w.write_all(&(v as f32).to_le_bytes());
    for f in model.fields() {
        if let FeatureField::Learned(lf) = f {
            for &v in &lf.features {
                put(v).map_err(io)?;
            }
            for l in lf.mlp.layers() {
                for r in 0..l.weight.nrows() {
                    for c in 0..l.weight.ncols() {
                        put(l.weight[(r, c)]).map_err(io)?;
                    }
                }
            }
            for l in lf.mlp.layers() {
                for &b in l.bias.iter() {
                    put(b).map_err(io)?;
                }
            }
        }
    }
    Ok(())
}

pub fn save_model(model: &KernelModel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_model(model, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Load a model file and bind it to `hierarchy`.
pub fn load_model(path: &Path, hierarchy: Arc<VoxelHierarchy>) -> Result<KernelModel> {
    ModelFile::load(path)?.bind(hierarchy)
}
