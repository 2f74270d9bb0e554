//! Header-plus-blob container used for tensors, models and samples.
//!
//! ```text
//! CAMSHAP\n
//! {single-line JSON header}\n
//! payload: little-endian f32, row-major, channel-first
//! ```
//!
//! The header always carries `format_version`, `kind` and a `tensors` table
//! of `{name, shape, dtype: "f32le", offset}` records; `offset` counts bytes
//! from the start of the payload. Model headers add the layer list, sample
//! headers the target class and optional bounding box.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{BoundingBox, EvalSample};
use crate::network::{Layer, LayerKind, ModelGraph};
use crate::tensor::Tensor;

pub const MAGIC: &[u8] = b"CAMSHAP\n";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Tensor,
    Model,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weights: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bias: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub padding: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub input_shape: [usize; 3],
    /// Number of frontend layers; layer `split` is the first head layer.
    pub split: usize,
    pub num_classes: usize,
    pub layers: Vec<LayerRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub class: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bbox: Option<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: FileKind,
    pub tensors: Vec<TensorEntry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model: Option<ModelMeta>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sample: Option<SampleMeta>,
}

/// A parsed container: header plus named tensors in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    fn new(kind: FileKind) -> Self {
        Container {
            header: Header {
                format_version: FORMAT_VERSION,
                kind,
                tensors: Vec::new(),
                model: None,
                sample: None,
            },
            tensors: Vec::new(),
        }
    }

    fn push(&mut self, name: impl Into<String>, t: &Tensor) -> String {
        let name = name.into();
        self.tensors.push((name.clone(), t.clone()));
        name
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = self.header.clone();
        let mut offset = 0;
        header.tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    dtype: DTYPE.into(),
                    offset,
                };
                offset += 4 * t.len();
                e
            })
            .collect();
        let json = serde_json::to_string(&header).expect("header serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(json.as_bytes());
        out.push(b'\n');
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// `origin` only labels diagnostics.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::format(origin, "missing CAMSHAP magic line"))?;
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(origin, "unterminated header"))?;
        let header: Header = serde_json::from_slice(&rest[..end])
            .map_err(|e| Error::format(origin, format!("malformed header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::format(
                origin,
                format!(
                    "unsupported format version {} (expected {FORMAT_VERSION})",
                    header.format_version
                ),
            ));
        }
        let payload = &rest[end + 1..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            if e.dtype != DTYPE {
                return Err(Error::format(
                    origin,
                    format!("tensor '{}': unsupported dtype '{}'", e.name, e.dtype),
                ));
            }
            let count: usize = e.shape.iter().product();
            let span = e.offset..e.offset + 4 * count;
            let raw = payload.get(span).ok_or_else(|| {
                Error::format(
                    origin,
                    format!(
                        "tensor '{}': payload truncated ({} bytes needed at offset {}, {} available)",
                        e.name,
                        4 * count,
                        e.offset,
                        payload.len()
                    ),
                )
            })?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(e.shape.clone(), data)
                .map_err(|err| Error::format(origin, format!("tensor '{}': {err}", e.name)))?;
            tensors.push((e.name.clone(), t));
        }
        Ok(Container { header, tensors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn save_tensor(path: &Path, name: &str, t: &Tensor) -> Result<()> {
    let mut c = Container::new(FileKind::Tensor);
    c.push(name, t);
    c.write(path)
}

/// First tensor of a container file, with its name.
pub fn load_tensor(path: &Path) -> Result<(String, Tensor)> {
    Container::read(path)?
        .tensors
        .into_iter()
        .next()
        .ok_or_else(|| Error::format(path, "container holds no tensors"))
}

/// A model plus its optional class-name table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub graph: ModelGraph,
    pub class_names: Option<Vec<String>>,
}

fn layer_record(c: &mut Container, index: usize, layer: &Layer) -> LayerRecord {
    let mut r = LayerRecord {
        kind: layer.kind().as_str().into(),
        weights: None,
        bias: None,
        stride: None,
        padding: None,
        window: None,
    };
    match layer {
        Layer::Conv2d {
            kernels,
            bias,
            stride,
            padding,
        } => {
            r.weights = Some(c.push(format!("layer{index}.weight"), kernels));
            r.bias = Some(c.push(format!("layer{index}.bias"), &Tensor::vector(bias.clone())));
            r.stride = Some(*stride);
            r.padding = Some(*padding);
        }
        Layer::Dense { weights, bias } => {
            r.weights = Some(c.push(format!("layer{index}.weight"), weights));
            r.bias = Some(c.push(format!("layer{index}.bias"), &Tensor::vector(bias.clone())));
        }
        Layer::MaxPool { window, stride } | Layer::AvgPool { window, stride } => {
            r.window = Some(*window);
            r.stride = Some(*stride);
        }
        Layer::Relu | Layer::GlobalAvgPool | Layer::Flatten => {}
    }
    r
}

pub fn encode_model(file: &ModelFile) -> Vec<u8> {
    let g = &file.graph;
    let mut c = Container::new(FileKind::Model);
    let layers = g
        .frontend()
        .iter()
        .chain(g.head())
        .enumerate()
        .map(|(i, l)| layer_record(&mut c, i, l))
        .collect();
    c.header.model = Some(ModelMeta {
        input_shape: g.input_shape(),
        split: g.split_index(),
        num_classes: g.num_classes(),
        layers,
        class_names: file.class_names.clone(),
    });
    c.to_bytes()
}

fn build_layer(c: &Container, origin: &Path, index: usize, r: &LayerRecord) -> Result<Layer> {
    let fail = |reason: String| Error::Layer {
        index,
        kind: r.kind.clone(),
        reason: format!("{}: {reason}", origin.display()),
    };
    let kind = LayerKind::parse(&r.kind).ok_or_else(|| fail("unknown layer kind".into()))?;
    let tensor = |field: &Option<String>, what: &str| -> Result<Tensor> {
        let name = field
            .as_ref()
            .ok_or_else(|| fail(format!("missing {what} reference")))?;
        c.get(name)
            .cloned()
            .ok_or_else(|| fail(format!("{what} tensor '{name}' not found in payload")))
    };
    let need = |v: Option<usize>, what: &str| v.ok_or_else(|| fail(format!("missing {what}")));
    Ok(match kind {
        LayerKind::Conv2d => Layer::Conv2d {
            kernels: tensor(&r.weights, "weights")?,
            bias: tensor(&r.bias, "bias")?.into_data(),
            stride: need(r.stride, "stride")?,
            padding: r.padding.unwrap_or(0),
        },
        LayerKind::Dense => Layer::Dense {
            weights: tensor(&r.weights, "weights")?,
            bias: tensor(&r.bias, "bias")?.into_data(),
        },
        LayerKind::Maxpool => Layer::MaxPool {
            window: need(r.window, "window")?,
            stride: need(r.stride, "stride")?,
        },
        LayerKind::Avgpool => Layer::AvgPool {
            window: need(r.window, "window")?,
            stride: need(r.stride, "stride")?,
        },
        LayerKind::GlobalAvgpool => Layer::GlobalAvgPool,
        LayerKind::Flatten => Layer::Flatten,
        LayerKind::Relu => Layer::Relu,
    })
}

pub fn decode_model(bytes: &[u8], origin: &Path) -> Result<ModelFile> {
    let c = Container::from_bytes(bytes, origin)?;
    if c.header.kind != FileKind::Model {
        return Err(Error::format(origin, format!("expected a model file, found {:?}", c.header.kind)));
    }
    let meta = c
        .header
        .model
        .as_ref()
        .ok_or_else(|| Error::format(origin, "model header section missing"))?;
    if meta.split > meta.layers.len() {
        return Err(Error::format(
            origin,
            format!("split index {} beyond {} layers", meta.split, meta.layers.len()),
        ));
    }
    let layers = meta
        .layers
        .iter()
        .enumerate()
        .map(|(i, r)| build_layer(&c, origin, i, r))
        .collect::<Result<Vec<_>>>()?;
    let mut layers = layers.into_iter();
    let frontend: Vec<Layer> = layers.by_ref().take(meta.split).collect();
    let head: Vec<Layer> = layers.collect();
    let graph = ModelGraph::new(meta.input_shape, frontend, head)?;
    if graph.num_classes() != meta.num_classes {
        return Err(Error::format(
            origin,
            format!(
                "header declares {} classes, layer chain yields {}",
                meta.num_classes,
                graph.num_classes()
            ),
        ));
    }
    if let Some(names) = &meta.class_names {
        if names.len() != meta.num_classes {
            return Err(Error::format(origin, "class-name table length differs from num_classes"));
        }
    }
    Ok(ModelFile {
        graph,
        class_names: meta.class_names.clone(),
    })
}

pub fn save_model_file(file: &ModelFile, path: &Path) -> Result<()> {
    fs::write(path, encode_model(file)).map_err(|e| Error::io(path, e))
}

pub fn load_model_file(path: &Path) -> Result<ModelFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

pub fn save_model(model: &ModelGraph, path: &Path) -> Result<()> {
    save_model_file(
        &ModelFile {
            graph: model.clone(),
            class_names: None,
        },
        path,
    )
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    Ok(load_model_file(path)?.graph)
}

/// An image with its target class, optional box and optional logits
/// recorded by an external reference implementation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFile {
    pub image: Tensor,
    pub class: usize,
    pub bbox: Option<BoundingBox>,
    pub reference_logits: Option<Vec<f32>>,
}

impl SampleFile {
    pub fn into_eval_sample(self, model: &ModelGraph) -> Result<EvalSample> {
        EvalSample::new(model, self.image, self.class, self.bbox)
    }
}

pub fn encode_sample(s: &SampleFile) -> Vec<u8> {
    let mut c = Container::new(FileKind::Sample);
    c.push("image", &s.image);
    if let Some(l) = &s.reference_logits {
        c.push("reference_logits", &Tensor::vector(l.clone()));
    }
    c.header.sample = Some(SampleMeta {
        class: s.class,
        bbox: s.bbox,
    });
    c.to_bytes()
}

pub fn decode_sample(bytes: &[u8], origin: &Path) -> Result<SampleFile> {
    let c = Container::from_bytes(bytes, origin)?;
    let meta = match (&c.header.kind, &c.header.sample) {
        (FileKind::Sample, Some(m)) => m.clone(),
        _ => return Err(Error::format(origin, "expected a sample file")),
    };
    let image = c
        .get("image")
        .cloned()
        .ok_or_else(|| Error::format(origin, "sample has no 'image' tensor"))?;
    if image.rank() != 3 {
        return Err(Error::format(origin, "sample image must be C x H x W"));
    }
    if let Some(b) = meta.bbox {
        b.validate(image.shape()[1], image.shape()[2])
            .map_err(|e| Error::format(origin, e.to_string()))?;
    }
    Ok(SampleFile {
        image,
        class: meta.class,
        bbox: meta.bbox,
        reference_logits: c.get("reference_logits").map(|t| t.data().to_vec()),
    })
}

pub fn save_sample(s: &SampleFile, path: &Path) -> Result<()> {
    fs::write(path, encode_sample(s)).map_err(|e| Error::io(path, e))
}

pub fn load_sample(path: &Path) -> Result<SampleFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sample(&bytes, path)
}
