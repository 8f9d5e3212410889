//! Little-endian binary files for float weights (`HXSR`) and quantized models
//! (`HXQ8`).
//!
//! Both start with a 4-byte magic, a `u32` format version and the network
//! configuration as thirteen `u32` fields, followed by a `u32` layer count and
//! one record per layer in canonical order.
//!
//! `HXSR` layer record: tag `u8`, out/in/kh/kw `u32`, kernel `f32 x out*in*kh*kw`,
//! bias `f32 x out`, trainable `u8`.
//!
//! `HXQ8` layer record: tag `u8`, out/in/kh/kw `u32`, weight scale `f64`,
//! weight zero point `i32`, kernel `u8 x out*in*kh*kw`, bias `i32 x out`,
//! trainable `u8`. The layers are followed by a `u32` edge count and one
//! `(f64 scale, i32 zero_point)` pair per activation edge.
//!
//! Loading parses and validates the whole file before building anything, so
//! a corrupt file never yields a partially filled model.

use std::path::Path;

use xcat_core::model::{
    layer_specs, make_fixed_upsample_kernel, BlockKind, LayerTag, MergeMode, MixMode,
    PostBlockConv, RotateDirection,
};
use xcat_core::ops::ConvWeights;
use xcat_core::quant::{edges, QConv, QModel, QuantParams};
use xcat_core::{Model, XcatConfig};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"HXSR";
pub const QUANT_MAGIC: [u8; 4] = *b"HXQ8";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("file truncated while reading {0}")]
    Truncated(String),
    #[error("layer {layer}: {reason}")]
    Shape { layer: usize, reason: String },
    #[error("config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("{0} trailing bytes after the last record")]
    Trailing(usize),
    #[error("image: {0}")]
    Image(String),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, FormatError>;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| FormatError::Truncated(what.to_string()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array(what)?) as usize)
    }
    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array(what)?))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| FormatError::Truncated(what.into()))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
    fn i32s(&mut self, n: usize, what: &str) -> Result<Vec<i32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| FormatError::Truncated(what.into()))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
    fn finish(&self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

fn header(w: &mut Writer, magic: [u8; 4], cfg: &XcatConfig) {
    w.0.extend_from_slice(&magic);
    w.u32(FORMAT_VERSION as usize);
    w.u32(cfg.blocks);
    w.u32(cfg.split.0);
    w.u32(cfg.split.1);
    w.u32(cfg.branch_kernels.0);
    w.u32(cfg.branch_kernels.1);
    w.u32(match cfg.mix_mode {
        MixMode::CrossConcat => 0,
        MixMode::StraightConcat => 1,
        MixMode::Conv1x1 => 2,
    });
    w.u32(match cfg.rotate_direction {
        RotateDirection::Forward => 0,
        RotateDirection::Backward => 1,
    });
    w.u32(match cfg.block_kind {
        BlockKind::HxBlock => 0,
        BlockKind::PlainConv3x3 => 1,
    });
    w.u32(match cfg.post_block_conv {
        PostBlockConv::Conv3x3 => 0,
        PostBlockConv::Conv1x1 => 1,
        PostBlockConv::None => 2,
    });
    w.u32(match cfg.merge_mode {
        MergeMode::Add => 0,
        MergeMode::Concat => 1,
    });
    w.u32(cfg.scale);
    w.u32(cfg.image_channels);
    w.u32(cfg.hidden_activation as usize);
}

fn enum_field<T>(field: &'static str, v: usize, options: &[T]) -> Result<T>
where
    T: Copy,
{
    options.get(v).copied().ok_or_else(|| FormatError::Config {
        field,
        reason: format!("unknown variant {v}"),
    })
}

fn read_header(r: &mut Reader, magic: [u8; 4]) -> Result<XcatConfig> {
    let found: [u8; 4] = r.array("magic")?;
    if found != magic {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(&magic).into_owned(),
            found: String::from_utf8_lossy(&found).into_owned(),
        });
    }
    let version = r.u32("version")? as u32;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    let blocks = r.u32("config")?;
    let split = (r.u32("config")?, r.u32("config")?);
    let branch_kernels = (r.u32("config")?, r.u32("config")?);
    let mix_mode = enum_field(
        "mix_mode",
        r.u32("config")?,
        &[
            MixMode::CrossConcat,
            MixMode::StraightConcat,
            MixMode::Conv1x1,
        ],
    )?;
    let rotate_direction = enum_field(
        "rotate_direction",
        r.u32("config")?,
        &[RotateDirection::Forward, RotateDirection::Backward],
    )?;
    let block_kind = enum_field(
        "block_kind",
        r.u32("config")?,
        &[BlockKind::HxBlock, BlockKind::PlainConv3x3],
    )?;
    let post_block_conv = enum_field(
        "post_block_conv",
        r.u32("config")?,
        &[
            PostBlockConv::Conv3x3,
            PostBlockConv::Conv1x1,
            PostBlockConv::None,
        ],
    )?;
    let merge_mode = enum_field(
        "merge_mode",
        r.u32("config")?,
        &[MergeMode::Add, MergeMode::Concat],
    )?;
    let scale = r.u32("config")?;
    let image_channels = r.u32("config")?;
    let hidden_activation = enum_field("hidden_activation", r.u32("config")?, &[false, true])?;
    let cfg = XcatConfig {
        blocks,
        split,
        branch_kernels,
        mix_mode,
        rotate_direction,
        block_kind,
        post_block_conv,
        merge_mode,
        scale,
        image_channels,
        hidden_activation,
    };
    match cfg.validate() {
        Err(xcat_core::Error::InvalidConfig { field, reason }) => {
            Err(FormatError::Config { field, reason })
        }
        Err(e) => Err(FormatError::Config {
            field: "config",
            reason: e.to_string(),
        }),
        Ok(()) => Ok(cfg),
    }
}

/// Reads the layer count and checks it against the configuration. A mismatch
/// means the declared block count disagrees with the stored layers.
fn read_layer_count(r: &mut Reader, cfg: &XcatConfig) -> Result<usize> {
    let count = r.u32("layer count")?;
    let expected = layer_specs(cfg).len();
    if count != expected {
        return Err(FormatError::Config {
            field: "blocks",
            reason: format!(
                "{} blocks imply {expected} layers but the file stores {count}",
                cfg.blocks
            ),
        });
    }
    Ok(count)
}

struct LayerHead {
    tag: LayerTag,
    out_channels: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
}

fn read_layer_head(r: &mut Reader, cfg: &XcatConfig, i: usize) -> Result<LayerHead> {
    let what = format!("layer {i} header");
    let tag_byte = r.u8(&what)?;
    let tag = LayerTag::from_u8(tag_byte).ok_or_else(|| FormatError::Shape {
        layer: i,
        reason: format!("unknown layer tag {tag_byte}"),
    })?;
    let h = LayerHead {
        tag,
        out_channels: r.u32(&what)?,
        in_channels: r.u32(&what)?,
        kh: r.u32(&what)?,
        kw: r.u32(&what)?,
    };
    let spec = layer_specs(cfg)[i];
    if spec.tag != h.tag
        || spec.out_channels != h.out_channels
        || spec.in_channels != h.in_channels
        || spec.kernel != h.kh
        || spec.kernel != h.kw
    {
        return Err(FormatError::Shape {
            layer: i,
            reason: format!(
                "stored {:?} {}x{}x{}x{} but the configuration expects {:?} {}x{}x{}x{}",
                h.tag,
                h.out_channels,
                h.in_channels,
                h.kh,
                h.kw,
                spec.tag,
                spec.out_channels,
                spec.in_channels,
                spec.kernel,
                spec.kernel
            ),
        });
    }
    Ok(h)
}

fn read_flag(r: &mut Reader, cfg: &XcatConfig, i: usize) -> Result<bool> {
    let flag = match r.u8(&format!("layer {i} trainable flag"))? {
        0 => false,
        1 => true,
        v => {
            return Err(FormatError::Shape {
                layer: i,
                reason: format!("trainable flag {v} is not 0 or 1"),
            })
        }
    };
    if flag != layer_specs(cfg)[i].trainable {
        return Err(FormatError::Shape {
            layer: i,
            reason: format!("trainable flag {flag} contradicts the layer role"),
        });
    }
    Ok(flag)
}

pub fn encode_weights(model: &Model<f32>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    header(&mut w, WEIGHTS_MAGIC, model.config());
    w.u32(model.layers().len());
    for (l, spec) in model.layers().iter().zip(model.layer_specs()) {
        w.u8(spec.tag as u8);
        w.u32(l.out_channels);
        w.u32(l.in_channels);
        w.u32(l.kh);
        w.u32(l.kw);
        l.kernel.iter().for_each(|&v| w.f32(v));
        l.bias.iter().for_each(|&v| w.f32(v));
        w.u8(l.trainable as u8);
    }
    w.0
}

pub fn decode_weights(buf: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { buf, pos: 0 };
    let cfg = read_header(&mut r, WEIGHTS_MAGIC)?;
    let count = read_layer_count(&mut r, &cfg)?;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let h = read_layer_head(&mut r, &cfg, i)?;
        let n = h.out_channels * h.in_channels * h.kh * h.kw;
        let kernel = r.f32s(n, &format!("layer {i} kernel"))?;
        let bias = r.f32s(h.out_channels, &format!("layer {i} bias"))?;
        let trainable = read_flag(&mut r, &cfg, i)?;
        let conv = ConvWeights::new(
            h.out_channels,
            h.in_channels,
            h.kh,
            h.kw,
            kernel,
            bias,
            trainable,
        )
        .map_err(|e| FormatError::Shape {
            layer: i,
            reason: e.to_string(),
        })?;
        if !trainable && conv != make_fixed_upsample_kernel(cfg.image_channels, cfg.scale) {
            return Err(FormatError::Shape {
                layer: i,
                reason: "fixed upsampling kernel was modified".into(),
            });
        }
        layers.push(conv);
    }
    r.finish()?;
    Model::from_layers(cfg, layers).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn encode_qmodel(qm: &QModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    header(&mut w, QUANT_MAGIC, qm.config());
    w.u32(qm.layers().len());
    for l in qm.layers() {
        w.u8(l.tag as u8);
        w.u32(l.out_channels);
        w.u32(l.in_channels);
        w.u32(l.kh);
        w.u32(l.kw);
        w.f64(l.weight_params.scale);
        w.i32(l.weight_params.zero_point);
        w.0.extend_from_slice(&l.weights);
        l.bias.iter().for_each(|&b| w.i32(b));
        w.u8(l.trainable as u8);
    }
    w.u32(qm.edge_params().len());
    for p in qm.edge_params() {
        w.f64(p.scale);
        w.i32(p.zero_point);
    }
    w.0
}

pub fn decode_qmodel(buf: &[u8]) -> Result<QModel> {
    let mut r = Reader { buf, pos: 0 };
    let cfg = read_header(&mut r, QUANT_MAGIC)?;
    let count = read_layer_count(&mut r, &cfg)?;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let h = read_layer_head(&mut r, &cfg, i)?;
        let what = format!("layer {i} weights");
        let weight_params =
            QuantParams::new(r.f64(&what)?, r.i32(&what)?).map_err(|e| FormatError::Shape {
                layer: i,
                reason: e.to_string(),
            })?;
        let weights = r
            .take(h.out_channels * h.in_channels * h.kh * h.kw, &what)?
            .to_vec();
        let bias = r.i32s(h.out_channels, &format!("layer {i} bias"))?;
        let trainable = read_flag(&mut r, &cfg, i)?;
        layers.push(QConv {
            tag: h.tag,
            out_channels: h.out_channels,
            in_channels: h.in_channels,
            kh: h.kh,
            kw: h.kw,
            weights,
            weight_params,
            bias,
            trainable,
        });
    }
    let n_edges = r.u32("edge count")?;
    let expected = edges(&cfg).len();
    if n_edges != expected {
        return Err(FormatError::Config {
            field: "edges",
            reason: format!(
                "configuration has {expected} activation edges but the file stores {n_edges}"
            ),
        });
    }
    let mut params = Vec::with_capacity(n_edges);
    for e in 0..n_edges {
        let what = format!("edge {e} params");
        let p =
            QuantParams::new(r.f64(&what)?, r.i32(&what)?).map_err(|err| FormatError::Config {
                field: "edges",
                reason: format!("edge {e}: {err}"),
            })?;
        params.push(p);
    }
    r.finish()?;
    QModel::from_parts(cfg, layers, params).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn save_weights(model: &Model<f32>, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, encode_weights(model))?)
}

pub fn load_weights(path: &Path) -> Result<Model<f32>> {
    decode_weights(&std::fs::read(path)?)
}

pub fn save_qmodel(qm: &QModel, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, encode_qmodel(qm))?)
}

pub fn load_qmodel(path: &Path) -> Result<QModel> {
    decode_qmodel(&std::fs::read(path)?)
}
