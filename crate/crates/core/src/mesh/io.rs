//! OBJ (ASCII) and PLY (binary little-endian, ASCII on read) mesh files, plus
//! `.imp` importance sidecars: one float per vertex, same basename.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geom::Vec3;

use super::TriMesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::UnknownFormat(path.display().to_string())),
        }
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("imp")
}

/// Loads a mesh and validates it, including the degenerate-face check. A
/// sidecar `.imp` next to the file is attached as the importance mask.
pub fn load_mesh(path: impl AsRef<Path>, format: Option<MeshFormat>) -> Result<TriMesh> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let mesh = match format {
        MeshFormat::Obj => read_obj(path)?,
        MeshFormat::Ply => read_ply(path)?,
    };
    mesh.validate_areas()?;
    let imp = sidecar_path(path);
    if imp.is_file() {
        let mask = load_importance(&imp)?;
        return mesh.with_importance(mask);
    }
    Ok(mesh)
}

/// Writes a mesh; the importance mask, when present, goes to the sidecar.
pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>, format: Option<MeshFormat>) -> Result<()> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    match format {
        MeshFormat::Obj => write_obj(mesh, path)?,
        MeshFormat::Ply => write_ply(mesh, path)?,
    }
    if let Some(mask) = mesh.importance() {
        save_importance(mask, sidecar_path(path))?;
    }
    Ok(())
}

pub fn load_importance(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| Error::Parse {
            path: path.into(),
            line: i + 1,
            message: format!("expected a number, found `{t}`"),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn save_importance(mask: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in mask {
        writeln!(w, "{v}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_obj(path: &Path) -> Result<TriMesh> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut uv_refs: Vec<(u32, u32)> = Vec::new();
    let mut face_lines: Vec<usize> = Vec::new();

    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = ln + 1;
        let perr = |message: String| Error::Parse {
            path: path.into(),
            line: lineno,
            message,
        };
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        match tag {
            "v" => {
                let mut c = [0.0; 3];
                for (k, slot) in c.iter_mut().enumerate() {
                    let tok = it
                        .next()
                        .ok_or_else(|| perr(format!("vertex is missing coordinate {k}")))?;
                    *slot = tok
                        .parse()
                        .map_err(|_| perr(format!("invalid coordinate `{tok}`")))?;
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            "vt" => {
                let mut c = [0.0; 2];
                for slot in &mut c {
                    let tok = it.next().ok_or_else(|| perr("incomplete vt record".into()))?;
                    *slot = tok
                        .parse()
                        .map_err(|_| perr(format!("invalid texture coordinate `{tok}`")))?;
                }
                texcoords.push(c);
            }
            "f" => {
                let mut poly: Vec<(i64, Option<i64>)> = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let vi: i64 = parts
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|_| perr(format!("invalid face index `{tok}`")))?;
                    let ti = match parts.next() {
                        Some(s) if !s.is_empty() => Some(
                            s.parse()
                                .map_err(|_| perr(format!("invalid texture index `{tok}`")))?,
                        ),
                        _ => None,
                    };
                    poly.push((vi, ti));
                }
                if poly.len() < 3 {
                    return Err(perr("face with fewer than 3 vertices".into()));
                }
                let resolve = |i: i64, n: usize| -> Result<u32> {
                    let r = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        n as i64 + i
                    } else {
                        return Err(perr("face index 0 is invalid in OBJ".into()));
                    };
                    if r < 0 {
                        return Err(perr(format!("face index {i} is out of range")));
                    }
                    Ok(r as u32)
                };
                let mut idx = Vec::with_capacity(poly.len());
                for &(vi, ti) in &poly {
                    let v = resolve(vi, vertices.len())?;
                    if let Some(ti) = ti {
                        uv_refs.push((v, resolve(ti, texcoords.len())?));
                    }
                    idx.push(v);
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                    face_lines.push(lineno);
                }
            }
            _ => {}
        }
    }

    let mesh = TriMesh::new(vertices, faces);
    let mesh = match mesh {
        // Report out-of-range indices with the line they came from.
        Err(Error::IndexOutOfRange {
            face,
            index,
            vertex_count,
        }) => {
            return Err(Error::Parse {
                path: path.into(),
                line: face_lines[face],
                message: Error::IndexOutOfRange {
                    face,
                    index,
                    vertex_count,
                }
                .to_string(),
            })
        }
        other => other?,
    };

    if !uv_refs.is_empty() {
        let mut uv: Vec<Option<[f64; 2]>> = vec![None; mesh.vertex_count()];
        for (v, t) in uv_refs {
            if let Some(tc) = texcoords.get(t as usize) {
                uv[v as usize] = Some(*tc);
            }
        }
        if uv.iter().all(Option::is_some) {
            return mesh.with_uv(uv.into_iter().map(Option::unwrap).collect());
        }
    }
    Ok(mesh)
}

fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z).map_err(io)?;
    }
    if let Some(uv) = mesh.uv() {
        for t in uv {
            writeln!(w, "vt {} {}", t[0], t[1]).map_err(io)?;
        }
        for f in mesh.faces() {
            writeln!(
                w,
                "f {0}/{0} {1}/{1} {2}/{2}",
                f[0] + 1,
                f[1] + 1,
                f[2] + 1
            )
            .map_err(io)?;
        }
    } else {
        for f in mesh.faces() {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn read_ply(path: &Path) -> Result<TriMesh> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut offset: u64 = 0;
    let mut line = String::new();
    let mut lineno = 0usize;
    let mut elements: Vec<Element> = Vec::new();
    let mut ascii = false;
    let herr = |line: usize, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    loop {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::Format {
                path: path.into(),
                offset,
                message: "unexpected end of file in PLY header".into(),
            });
        }
        offset += n as u64;
        lineno += 1;
        let t = line.trim();
        if lineno == 1 {
            if t != "ply" {
                return Err(Error::Format {
                    path: path.into(),
                    offset: 0,
                    message: "missing `ply` magic".into(),
                });
            }
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => match toks.get(1).copied() {
                Some("binary_little_endian") => ascii = false,
                Some("ascii") => ascii = true,
                Some(other) => return Err(herr(lineno, format!("unsupported PLY format `{other}`"))),
                None => return Err(herr(lineno, "incomplete format line".into())),
            },
            Some("element") => {
                if toks.len() != 3 {
                    return Err(herr(lineno, "malformed element line".into()));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| herr(lineno, format!("invalid element count `{}`", toks[2])))?;
                elements.push(Element {
                    name: toks[1].to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| herr(lineno, "property before any element".into()))?;
                if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return Err(herr(lineno, "malformed list property".into()));
                    }
                    let c = Scalar::parse(toks[2])
                        .ok_or_else(|| herr(lineno, format!("unknown type `{}`", toks[2])))?;
                    let i = Scalar::parse(toks[3])
                        .ok_or_else(|| herr(lineno, format!("unknown type `{}`", toks[3])))?;
                    el.props.push(Property::List(toks[4].to_string(), c, i));
                } else {
                    if toks.len() != 3 {
                        return Err(herr(lineno, "malformed property".into()));
                    }
                    let s = Scalar::parse(toks[1])
                        .ok_or_else(|| herr(lineno, format!("unknown type `{}`", toks[1])))?;
                    el.props.push(Property::Scalar(toks[2].to_string(), s));
                }
            }
            Some("end_header") => break,
            _ => {}
        }
    }

    let mut vertices = Vec::new();
    let mut uv: Vec<[f64; 2]> = Vec::new();
    let mut faces = Vec::new();
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;

    let mut cursor = BodyReader {
        ascii,
        data: &body,
        pos: 0,
        base: offset,
        path,
        tokens: None,
    };

    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            let mut st = [f64::NAN; 2];
            for p in &el.props {
                match p {
                    Property::Scalar(name, s) => {
                        let v = cursor.scalar(*s)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            "u" | "s" | "texture_u" => st[0] = v,
                            "v" | "t" | "texture_v" => st[1] = v,
                            _ => {}
                        }
                    }
                    Property::List(name, cs, is) => {
                        let n = cursor.scalar(*cs)? as usize;
                        let at = cursor.offset();
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            let v = cursor.scalar(*is)?;
                            if v < 0.0 {
                                return Err(Error::Format {
                                    path: path.into(),
                                    offset: at,
                                    message: format!("negative vertex index {v}"),
                                });
                            }
                            idx.push(v as u32);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index")
                        {
                            if n < 3 {
                                return Err(Error::Format {
                                    path: path.into(),
                                    offset: at,
                                    message: format!("face with {n} vertices"),
                                });
                            }
                            for k in 1..n - 1 {
                                faces.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                if st[0].is_finite() && st[1].is_finite() {
                    uv.push(st);
                }
            }
        }
    }

    let mesh = TriMesh::new(vertices, faces)?;
    if !uv.is_empty() && uv.len() == mesh.vertex_count() {
        return mesh.with_uv(uv);
    }
    Ok(mesh)
}

struct BodyReader<'a> {
    ascii: bool,
    data: &'a [u8],
    pos: usize,
    base: u64,
    path: &'a Path,
    tokens: Option<std::str::SplitAsciiWhitespace<'a>>,
}

impl<'a> BodyReader<'a> {
    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    fn scalar(&mut self, s: Scalar) -> Result<f64> {
        if self.ascii {
            if self.tokens.is_none() {
                let text = std::str::from_utf8(self.data).map_err(|e| Error::Format {
                    path: self.path.into(),
                    offset: self.base + e.valid_up_to() as u64,
                    message: "invalid UTF-8 in ASCII PLY body".into(),
                })?;
                self.tokens = Some(text.split_ascii_whitespace());
            }
            let tok = self.tokens.as_mut().unwrap().next().ok_or_else(|| Error::Format {
                path: self.path.into(),
                offset: self.base + self.data.len() as u64,
                message: "unexpected end of ASCII PLY body".into(),
            })?;
            return tok.parse().map_err(|_| Error::Format {
                path: self.path.into(),
                offset: self.base,
                message: format!("invalid number `{tok}`"),
            });
        }
        let n = s.size();
        if self.pos + n > self.data.len() {
            return Err(Error::Format {
                path: self.path.into(),
                offset: self.offset(),
                message: format!(
                    "truncated PLY body: needed {n} bytes, {} left",
                    self.data.len() - self.pos
                ),
            });
        }
        let v = s.decode(&self.data[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }
}

fn write_ply(mesh: &TriMesh, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", mesh.vertex_count()));
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if mesh.uv().is_some() {
        header.push_str("property double u\nproperty double v\n");
    }
    header.push_str(&format!("element face {}\n", mesh.face_count()));
    header.push_str("property list uchar uint vertex_indices\nend_header\n");
    w.write_all(header.as_bytes()).map_err(io)?;
    for (i, v) in mesh.vertices().iter().enumerate() {
        for c in [v.x, v.y, v.z] {
            w.write_all(&c.to_le_bytes()).map_err(io)?;
        }
        if let Some(uv) = mesh.uv() {
            w.write_all(&uv[i][0].to_le_bytes()).map_err(io)?;
            w.write_all(&uv[i][1].to_le_bytes()).map_err(io)?;
        }
    }
    for f in mesh.faces() {
        w.write_all(&[3u8]).map_err(io)?;
        for i in f {
            w.write_all(&i.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    const TETRA_OBJ: &str = "# tetrahedron\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n\
f 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n";

    #[test]
    fn loads_tetrahedron_obj() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.obj");
        std::fs::write(&p, TETRA_OBJ).unwrap();
        let m = load_mesh(&p, None).unwrap();
        assert_eq!((m.vertex_count(), m.face_count()), (4, 4));
        assert!(m.importance().is_none());
        assert_eq!(m.importance_of(2), 1.0);
    }

    #[test]
    fn out_of_range_index_names_face_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.obj");
        std::fs::write(&p, TETRA_OBJ.replace("f 2 3 4", "f 2 3 9")).unwrap();
        let err = load_mesh(&p, None).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { line: 9, .. }), "{msg}");
        assert!(msg.contains("face 3"), "{msg}");
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.obj");
        std::fs::write(&p, "v 0 0 0\nv 1 zero 0\n").unwrap();
        assert!(matches!(
            load_mesh(&p, None).unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn degenerate_faces_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("flat.obj");
        std::fs::write(&p, "v 0 0 0\nv 1 0 0\nv 2 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 4\n").unwrap();
        match load_mesh(&p, None).unwrap_err() {
            Error::DegenerateFaces(ids) => assert_eq!(ids, vec![0]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn ply_round_trip_is_exact_and_carries_importance() {
        let dir = tempfile::tempdir().unwrap();
        let m = synthetic::icosphere(0.9, 2);
        let mask: Vec<f64> = (0..m.vertex_count()).map(|i| (i % 7) as f64 / 7.0).collect();
        let m = m.with_importance(mask).unwrap();
        let p = dir.path().join("s.ply");
        save_mesh(&m, &p, None).unwrap();
        assert!(dir.path().join("s.imp").is_file());
        let back = load_mesh(&p, None).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn fifty_thousand_face_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = synthetic::torus(0.6, 0.2, 250, 100);
        assert_eq!(m.face_count(), 50_000);
        for name in ["big.ply", "big.obj"] {
            let p = dir.path().join(name);
            save_mesh(&m, &p, None).unwrap();
            let back = load_mesh(&p, None).unwrap();
            assert_eq!(back.faces(), m.faces());
            let worst = back
                .vertices()
                .iter()
                .zip(m.vertices())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "{name}: {worst}");
        }
    }

    #[test]
    fn truncated_ply_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        save_mesh(&synthetic::cube(1.0), &p, None).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&p, &bytes).unwrap();
        let err = load_mesh(&p, None).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("at byte"));
    }

    #[test]
    fn reads_ascii_ply_with_float_vertices() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ply");
        std::fs::write(
            &p,
            "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\n\
property float z\nelement face 2\nproperty list uchar int vertex_indices\nend_header\n\
0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2\n3 0 2 3\n",
        )
        .unwrap();
        let m = load_mesh(&p, None).unwrap();
        assert_eq!((m.vertex_count(), m.face_count()), (4, 2));
        assert!((m.surface_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn obj_uv_is_carried() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("uv.obj");
        std::fs::write(
            &p,
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n",
        )
        .unwrap();
        let m = load_mesh(&p, None).unwrap();
        assert_eq!(m.uv().unwrap()[1], [1.0, 0.0]);
        let q = dir.path().join("uv2.obj");
        save_mesh(&m, &q, None).unwrap();
        assert_eq!(load_mesh(&q, None).unwrap(), m);
    }
}
