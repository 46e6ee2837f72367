//! Binary little-endian PLY in the layout written by the reference 3DGS trainer.

use std::collections::HashMap;

use super::GaussianCloud;
use crate::bytes::Reader;
use crate::{Error, Result};

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

fn scalar_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

struct Property {
    name: String,
    ty: String,
    offset: usize,
}

struct Header {
    count: usize,
    stride: usize,
    properties: Vec<Property>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Parse("missing end_header".into()))?;
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Parse("header is not valid UTF-8".into()))?;
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(Error::Parse("missing 'ply' magic line".into()));
    }

    let mut format_seen = false;
    let mut count = None;
    let mut in_vertex = false;
    let mut properties = Vec::new();
    let mut stride = 0;
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", _] => format_seen = true,
            ["format", other, ..] => return Err(Error::UnsupportedEncoding(other.to_string())),
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(Error::Parse("duplicate vertex element".into()));
                }
                count = Some(
                    n.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("bad vertex count '{n}'")))?,
                );
                in_vertex = true;
            }
            ["element", name, _] => {
                if count.is_none() {
                    return Err(Error::Parse(format!(
                        "element '{name}' before vertex is not supported"
                    )));
                }
                // later elements are never read
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::Parse(
                    "list properties on vertex are not supported".into(),
                ));
            }
            ["property", ty, name] if in_vertex => {
                let size = scalar_size(ty)
                    .ok_or_else(|| Error::Parse(format!("unknown property type '{ty}'")))?;
                properties.push(Property {
                    name: name.to_string(),
                    ty: ty.to_string(),
                    offset: stride,
                });
                stride += size;
            }
            ["property", ..] => {}
            _ => return Err(Error::Parse(format!("unrecognized header line '{line}'"))),
        }
    }
    if !format_seen {
        return Err(Error::Parse("missing format line".into()));
    }
    let count = count.ok_or_else(|| Error::Parse("missing vertex element".into()))?;
    Ok(Header {
        count,
        stride,
        properties,
        body_offset: end + END.len(),
    })
}

/// Parses a 3DGS PLY. Property order comes from the header; normals are ignored.
pub fn parse_ply(bytes: &[u8]) -> Result<GaussianCloud> {
    let header = parse_header(bytes)?;
    let by_name: HashMap<&str, &Property> = header
        .properties
        .iter()
        .map(|p| (p.name.as_str(), p))
        .collect();

    let float_offset = |name: &str| -> Result<usize> {
        let p = by_name
            .get(name)
            .ok_or_else(|| Error::Parse(format!("missing required property '{name}'")))?;
        if p.ty != "float" && p.ty != "float32" {
            return Err(Error::Parse(format!(
                "property '{name}' has type '{}', expected float",
                p.ty
            )));
        }
        Ok(p.offset)
    };
    for name in REQUIRED {
        float_offset(name)?;
    }

    let sh_dim = header
        .properties
        .iter()
        .filter(|p| p.name.starts_with("f_rest_"))
        .count();
    if !matches!(sh_dim, 0 | 9 | 24 | 45) {
        return Err(Error::UnsupportedDegree(sh_dim));
    }
    let rest: Vec<usize> = (0..sh_dim)
        .map(|k| float_offset(&format!("f_rest_{k}")))
        .collect::<Result<_>>()?;

    let group =
        |names: &[&str]| -> Result<Vec<usize>> { names.iter().map(|n| float_offset(n)).collect() };
    let pos = group(&["x", "y", "z"])?;
    let dc = group(&["f_dc_0", "f_dc_1", "f_dc_2"])?;
    let opacity = group(&["opacity"])?;
    let scale = group(&["scale_0", "scale_1", "scale_2"])?;
    let rot = group(&["rot_0", "rot_1", "rot_2", "rot_3"])?;

    let mut reader = Reader::new(&bytes[header.body_offset..], "PLY vertex data");
    let body_len = header
        .count
        .checked_mul(header.stride)
        .ok_or_else(|| Error::Parse("vertex count overflows".into()))?;
    let body = reader.take(body_len).map_err(|_| {
        Error::Parse(format!(
            "vertex data truncated: {} vertices x {} bytes needed",
            header.count, header.stride
        ))
    })?;

    let mut cloud = GaussianCloud::with_capacity(header.count, sh_dim);
    let read = |record: &[u8], offsets: &[usize], out: &mut Vec<f32>| {
        for &o in offsets {
            out.push(f32::from_le_bytes([
                record[o],
                record[o + 1],
                record[o + 2],
                record[o + 3],
            ]));
        }
    };
    if header.stride > 0 {
        for record in body.chunks_exact(header.stride) {
            read(record, &pos, &mut cloud.positions);
            read(record, &rot, &mut cloud.quaternions);
            read(record, &scale, &mut cloud.scales);
            read(record, &opacity, &mut cloud.opacities);
            read(record, &dc, &mut cloud.dc);
            read(record, &rest, &mut cloud.sh_rest);
        }
    }
    cloud.count = header.count;
    Ok(cloud)
}

/// Writes the canonical layout: x,y,z, nx,ny,nz (zeros), f_dc_*, f_rest_*, opacity,
/// scale_*, rot_*.
pub fn write_ply(cloud: &GaussianCloud) -> Vec<u8> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", cloud.count));
    let mut names: Vec<String> = [
        "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend((0..cloud.sh_dim).map(|k| format!("f_rest_{k}")));
    names.extend(
        [
            "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    out.reserve(cloud.count * names.len() * 4);
    let mut put = |vals: &[f32]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for i in 0..cloud.count {
        put(cloud.position(i));
        put(&[0.0; 3]);
        put(cloud.dc_of(i));
        put(cloud.sh_row(i));
        put(&[cloud.opacities[i]]);
        put(cloud.scale(i));
        put(cloud.quaternion(i));
    }
    out
}

/// Size of [`write_ply`]'s output for `count` Gaussians with `sh_dim` rest coefficients.
pub fn ply_size(count: usize, sh_dim: usize) -> usize {
    let empty = write_ply(&GaussianCloud::with_capacity(0, sh_dim)).len();
    // the header spells out the vertex count
    empty - 1 + count.to_string().len() + count * (17 + sh_dim) * 4
}
