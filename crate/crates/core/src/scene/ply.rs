//! PLY reader/writer for Gaussian splat files.
//!
//! Field conventions follow the 3DGS/2DGS trainers: `opacity` is stored as a
//! logit, `scale_*` as natural logs, `rot_0..3` as a (w, x, y, z) quaternion
//! and `f_dc_*` as zeroth-band SH coefficients. Instance labels live in an
//! integer `inst_label` property.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{GaussianPrimitive, GaussianScene, SceneError, PLANAR_THIRD_SCALE};

pub const LABEL_FIELD: &str = "inst_label";

const SH_C0: f64 = 0.282_094_791_773_878_14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormatHint {
    #[default]
    Auto,
    /// Three scale fields required.
    ThreeD,
    /// Planar primitives; the third scale is forced to [`PLANAR_THIRD_SCALE`].
    TwoD,
}

impl std::str::FromStr for PlyFormatHint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Self::Auto),
            "3dgs" => Ok(Self::ThreeD),
            "2dgs" => Ok(Self::TwoD),
            other => Err(format!("unknown PLY format hint `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum PropertyKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    unit_scale: Option<f64>,
    body_offset: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header, SceneError> {
    let malformed = |reason: String| SceneError::malformed(path, reason);
    let mut offset = 0;
    let mut next_line = || -> Option<&str> {
        let rest = &bytes[offset..];
        let end = rest.iter().position(|&b| b == b'\n')?;
        offset += end + 1;
        std::str::from_utf8(&rest[..end]).ok().map(|l| l.trim_end_matches('\r'))
    };

    if next_line() != Some("ply") {
        return Err(malformed("missing `ply` magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut unit_scale = None;
    loop {
        let line = next_line().ok_or_else(|| malformed("header not terminated".into()))?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("end_header") => break,
            Some("format") => {
                encoding = Some(match tokens.next() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLe,
                    Some("binary_big_endian") => Encoding::BinaryBe,
                    other => return Err(malformed(format!("unknown format {other:?}"))),
                });
            }
            Some("element") => {
                let name = tokens.next().ok_or_else(|| malformed("element without name".into()))?;
                let count = tokens
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| malformed(format!("bad count for element `{name}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before element".into()))?;
                let first = tokens.next().unwrap_or_default();
                let kind = if first == "list" {
                    let count = tokens.next().and_then(Scalar::parse);
                    let item = tokens.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) => PropertyKind::List { count, item },
                        _ => return Err(malformed(format!("bad list property `{line}`"))),
                    }
                } else {
                    PropertyKind::Scalar(
                        Scalar::parse(first)
                            .ok_or_else(|| malformed(format!("unknown type `{first}`")))?,
                    )
                };
                let name = tokens
                    .next()
                    .ok_or_else(|| malformed(format!("property without name `{line}`")))?;
                element.properties.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            Some("comment") => {
                if tokens.next() == Some("unit_scale") {
                    unit_scale = tokens.next().and_then(|v| v.parse().ok());
                }
            }
            Some("obj_info") | None => {}
            Some(other) => return Err(malformed(format!("unexpected header keyword `{other}`"))),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| malformed("missing format line".into()))?,
        elements,
        unit_scale,
        body_offset: offset,
    })
}

/// Sequential value source over the PLY body.
enum Body<'a> {
    Binary { bytes: &'a [u8], pos: usize, big_endian: bool },
    Ascii { tokens: std::str::SplitAsciiWhitespace<'a> },
}

impl Body<'_> {
    fn read(&mut self, ty: Scalar) -> Option<f64> {
        match self {
            Body::Binary { bytes, pos, big_endian } => {
                let n = ty.size();
                let raw = bytes.get(*pos..*pos + n)?;
                *pos += n;
                let mut buf = [0u8; 8];
                buf[..n].copy_from_slice(raw);
                if *big_endian {
                    buf[..n].reverse();
                }
                Some(match ty {
                    Scalar::I8 => buf[0] as i8 as f64,
                    Scalar::U8 => buf[0] as f64,
                    Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
                    Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
                    Scalar::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
                    Scalar::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
                    Scalar::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
                    Scalar::F64 => f64::from_le_bytes(buf),
                })
            }
            Body::Ascii { tokens } => {
                let tok = tokens.next()?;
                if ty.is_integer() {
                    tok.parse::<i64>().ok().map(|v| v as f64)
                } else {
                    tok.parse::<f64>().ok()
                }
            }
        }
    }
}

struct Columns {
    position: [usize; 3],
    scale: [Option<usize>; 3],
    rotation: [usize; 4],
    opacity: usize,
    dc: Option<[usize; 3]>,
    rgb8: Option<[usize; 3]>,
    label: Option<usize>,
}

fn resolve_columns(path: &Path, vertex: &Element, hint: PlyFormatHint) -> Result<Columns, SceneError> {
    let index: HashMap<&str, usize> = vertex
        .properties
        .iter()
        .enumerate()
        .filter(|(_, p)| matches!(p.kind, PropertyKind::Scalar(_)))
        .map(|(i, p)| (p.name.as_str(), i))
        .collect();
    let require = |name: &str| {
        index.get(name).copied().ok_or_else(|| SceneError::MissingField {
            path: path.to_path_buf(),
            field: name.to_string(),
        })
    };
    let optional3 = |names: [&str; 3]| -> Option<[usize; 3]> {
        Some([
            *index.get(names[0])?,
            *index.get(names[1])?,
            *index.get(names[2])?,
        ])
    };

    let position = [require("x")?, require("y")?, require("z")?];
    let opacity = require("opacity")?;
    let scale0 = require("scale_0")?;
    let scale1 = require("scale_1")?;
    let scale2 = match hint {
        PlyFormatHint::ThreeD => Some(require("scale_2")?),
        PlyFormatHint::TwoD => None,
        PlyFormatHint::Auto => index.get("scale_2").copied(),
    };
    let rotation = [
        require("rot_0")?,
        require("rot_1")?,
        require("rot_2")?,
        require("rot_3")?,
    ];
    Ok(Columns {
        position,
        scale: [Some(scale0), Some(scale1), scale2],
        rotation,
        opacity,
        dc: optional3(["f_dc_0", "f_dc_1", "f_dc_2"]),
        rgb8: optional3(["red", "green", "blue"]),
        label: index.get(LABEL_FIELD).copied(),
    })
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Load a Gaussian scene from an ASCII or binary PLY file.
pub fn load_gaussian_ply(path: impl AsRef<Path>, hint: PlyFormatHint) -> Result<GaussianScene, SceneError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SceneError::io(path, e))?;
    let header = parse_header(path, &bytes)?;
    let mut body = match header.encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(&bytes[header.body_offset..])
                .map_err(|_| SceneError::malformed(path, "ASCII body is not UTF-8"))?;
            Body::Ascii {
                tokens: text.split_ascii_whitespace(),
            }
        }
        enc => Body::Binary {
            bytes: &bytes[header.body_offset..],
            pos: 0,
            big_endian: enc == Encoding::BinaryBe,
        },
    };
    let truncated = || SceneError::malformed(path, "body truncated or unparsable");

    let mut primitives = None;
    for element in &header.elements {
        if element.name != "vertex" {
            // skip foreign elements, honoring list lengths
            for _ in 0..element.count {
                for prop in &element.properties {
                    match prop.kind {
                        PropertyKind::Scalar(ty) => {
                            body.read(ty).ok_or_else(truncated)?;
                        }
                        PropertyKind::List { count, item } => {
                            let n = body.read(count).ok_or_else(truncated)? as usize;
                            for _ in 0..n {
                                body.read(item).ok_or_else(truncated)?;
                            }
                        }
                    }
                }
            }
            continue;
        }

        let cols = resolve_columns(path, element, hint)?;
        let mut row = vec![0.0f64; element.properties.len()];
        let mut out = Vec::with_capacity(element.count);
        for index in 0..element.count {
            for (slot, prop) in row.iter_mut().zip(&element.properties) {
                match prop.kind {
                    PropertyKind::Scalar(ty) => *slot = body.read(ty).ok_or_else(truncated)?,
                    PropertyKind::List { count, item } => {
                        let n = body.read(count).ok_or_else(truncated)? as usize;
                        for _ in 0..n {
                            body.read(item).ok_or_else(truncated)?;
                        }
                    }
                }
            }
            out.push(primitive_from_row(index, &row, &cols)?);
        }
        primitives = Some(out);
    }

    let primitives = primitives.ok_or_else(|| SceneError::MissingField {
        path: path.to_path_buf(),
        field: "vertex".into(),
    })?;
    if primitives.is_empty() {
        return Err(SceneError::EmptyScene {
            path: path.to_path_buf(),
        });
    }
    let scene = GaussianScene {
        primitives,
        unit_scale: header.unit_scale.unwrap_or(1.0),
        source_path: path.display().to_string(),
    };
    scene.validate()?;
    Ok(scene)
}

fn primitive_from_row(index: usize, row: &[f64], cols: &Columns) -> Result<GaussianPrimitive, SceneError> {
    let position = Vector3::new(
        row[cols.position[0]] as f32,
        row[cols.position[1]] as f32,
        row[cols.position[2]] as f32,
    );
    let mut scale = Vector3::repeat(PLANAR_THIRD_SCALE);
    for (axis, col) in cols.scale.iter().enumerate() {
        if let Some(c) = col {
            scale[axis] = row[*c].exp() as f32;
        }
    }
    let q = Quaternion::new(
        row[cols.rotation[0]],
        row[cols.rotation[1]],
        row[cols.rotation[2]],
        row[cols.rotation[3]],
    );
    let rotation = if q.norm() > 0.0 {
        UnitQuaternion::from_quaternion(q).cast::<f32>()
    } else {
        UnitQuaternion::identity()
    };
    let opacity = logistic(row[cols.opacity]) as f32;
    let color = if let Some(dc) = cols.dc {
        dc.map(|c| (0.5 + SH_C0 * row[c]).clamp(0.0, 1.0) as f32)
    } else if let Some(rgb) = cols.rgb8 {
        rgb.map(|c| (row[c] / 255.0).clamp(0.0, 1.0) as f32)
    } else {
        [0.5; 3]
    };
    let instance_label = match cols.label {
        None => 0,
        Some(c) => {
            let v = row[c];
            if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                return Err(SceneError::InvalidPrimitive {
                    index,
                    reason: format!("{LABEL_FIELD} value {v} is not a non-negative integer"),
                });
            }
            v as u32
        }
    };
    Ok(GaussianPrimitive {
        position,
        scale,
        rotation,
        opacity,
        color,
        instance_label,
    })
}

/// Write a binary little-endian PLY carrying an integer `inst_label` per
/// vertex. Output bytes depend only on the scene contents.
pub fn save_labeled_ply(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    let io_err = |e| SceneError::io(PathBuf::from(path), e);
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);

    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("comment unit_scale {}\n", scene.unit_scale));
    header.push_str(&format!("element vertex {}\n", scene.len()));
    for name in [
        "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
        "rot_0", "rot_1", "rot_2", "rot_3",
    ] {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str(&format!("property uint {LABEL_FIELD}\nend_header\n"));
    w.write_all(header.as_bytes()).map_err(io_err)?;

    let mut record = Vec::with_capacity(15 * 4);
    for p in &scene.primitives {
        record.clear();
        let q = p.rotation.quaternion();
        let floats = [
            p.position.x,
            p.position.y,
            p.position.z,
            ((p.color[0] as f64 - 0.5) / SH_C0) as f32,
            ((p.color[1] as f64 - 0.5) / SH_C0) as f32,
            ((p.color[2] as f64 - 0.5) / SH_C0) as f32,
            logit(p.opacity as f64) as f32,
            (p.scale.x as f64).ln() as f32,
            (p.scale.y as f64).ln() as f32,
            (p.scale.z as f64).ln() as f32,
            q.w,
            q.i,
            q.j,
            q.k,
        ];
        for f in floats {
            record.extend_from_slice(&f.to_le_bytes());
        }
        record.extend_from_slice(&p.instance_label.to_le_bytes());
        w.write_all(&record).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
