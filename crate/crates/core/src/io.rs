//! On-disk formats: PFM depth maps, PNG images, binary grid and checkpoint
//! containers, binary PLY meshes, and the CSV loss trace.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::eval::Mesh;
use crate::geometry::{Gaussian, Vec3, Vec4};
use crate::optim::{AdamState, TraceRow, TRACE_HEADER};
use crate::raster::{DepthMap, Raster, RgbImage};
use crate::tsdf::{GridSpec, TsdfGrid};

const TSDF_MAGIC: &[u8; 4] = b"TSDF";
const CHECKPOINT_MAGIC: &[u8; 4] = b"BSPT";
const CHECKPOINT_VERSION: u32 = 1;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn malformed(path: &Path, format: &'static str, why: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.into(),
        format,
        why: why.into(),
    }
}

// ---------------------------------------------------------------------------
// PFM depth maps
// ---------------------------------------------------------------------------

/// Writes a grayscale PFM ("Pf", little-endian, scanlines bottom-to-top).
/// Depths are stored as f32.
pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut w = create(path)?;
    let io_err = |e| Error::io(path, e);
    write!(w, "Pf\n{} {}\n-1.0\n", depth.width(), depth.height()).map_err(io_err)?;
    for y in (0..depth.height()).rev() {
        for x in 0..depth.width() {
            w.write_f32::<LE>(depth.get(x, y) as f32).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Reads a little-endian grayscale PFM written by [`write_pfm`].
pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let mut r = open(path)?;
    let io_err = |e| Error::io(path, e);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io_err)?;
    if line.trim_end() != "Pf" {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "Pf".into(),
        });
    }
    line.clear();
    r.read_line(&mut line).map_err(io_err)?;
    let dims: Vec<usize> = line
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| malformed(path, "pfm", format!("bad dimensions line {line:?}")))?;
    let [width, height] = dims[..] else {
        return Err(malformed(path, "pfm", "expected two dimensions"));
    };
    line.clear();
    r.read_line(&mut line).map_err(io_err)?;
    let scale: f64 = line
        .trim()
        .parse()
        .map_err(|_| malformed(path, "pfm", format!("bad scale line {line:?}")))?;
    if scale >= 0.0 {
        return Err(malformed(path, "pfm", "big-endian files are not supported"));
    }
    let mut depth = Raster::zeros(width, height);
    for y in (0..height).rev() {
        for x in 0..width {
            depth.set(x, y, r.read_f32::<LE>().map_err(io_err)? as f64);
        }
    }
    Ok(depth)
}

// ---------------------------------------------------------------------------
// PNG images
// ---------------------------------------------------------------------------

/// Writes an 8-bit RGB PNG; channels are clamped to [0, 1] and rounded.
pub fn write_png(path: &Path, image: &RgbImage) -> Result<()> {
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut bytes = Vec::with_capacity(image.len() * 3);
    for y in 0..image.height() {
        for x in 0..image.width() {
            let c = image.get(x, y);
            bytes.extend_from_slice(&[quant(c.x), quant(c.y), quant(c.z)]);
        }
    }
    let w = create(path)?;
    let mut encoder = png::Encoder::new(w, image.width() as u32, image.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| malformed(path, "png", e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| malformed(path, "png", e.to_string()))
}

/// Reads an 8-bit RGB PNG into unit-range floats.
pub fn read_png(path: &Path) -> Result<RgbImage> {
    let decoder = png::Decoder::new(open(path)?);
    let mut reader = decoder
        .read_info()
        .map_err(|e| malformed(path, "png", e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| malformed(path, "png", e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(malformed(
            path,
            "png",
            format!("expected 8-bit RGB, got {:?}/{:?}", info.color_type, info.bit_depth),
        ));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut image = RgbImage::black(width, height);
    for y in 0..height {
        for x in 0..width {
            let at = 3 * (y * width + x);
            image.set(
                x,
                y,
                Vec3::new(
                    buf[at] as f64 / 255.0,
                    buf[at + 1] as f64 / 255.0,
                    buf[at + 2] as f64 / 255.0,
                ),
            );
        }
    }
    Ok(image)
}

// ---------------------------------------------------------------------------
// Distance-grid container
// ---------------------------------------------------------------------------

/// Writes the grid container: magic "TSDF", 3×u32 dims, 3×f32 origin,
/// f32 voxel size, f32 truncation, then f32 values and f32 weights in
/// x-fastest order. Little-endian throughout.
pub fn write_tsdf(path: &Path, grid: &TsdfGrid) -> Result<()> {
    let mut w = create(path)?;
    let io_err = |e| Error::io(path, e);
    w.write_all(TSDF_MAGIC).map_err(io_err)?;
    for d in grid.spec.dims {
        w.write_u32::<LE>(d).map_err(io_err)?;
    }
    for a in 0..3 {
        w.write_f32::<LE>(grid.spec.origin[a] as f32).map_err(io_err)?;
    }
    w.write_f32::<LE>(grid.spec.voxel_size as f32).map_err(io_err)?;
    w.write_f32::<LE>(grid.truncation as f32).map_err(io_err)?;
    for &v in grid.values() {
        w.write_f32::<LE>(v as f32).map_err(io_err)?;
    }
    for &v in grid.weights() {
        w.write_f32::<LE>(v as f32).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads a grid container written by [`write_tsdf`]. Values come back at f32
/// precision; a read-then-write cycle is bit-exact.
pub fn read_tsdf(path: &Path) -> Result<TsdfGrid> {
    let mut r = open(path)?;
    let io_err = |e| Error::io(path, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != TSDF_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: String::from_utf8_lossy(TSDF_MAGIC).into_owned(),
        });
    }
    let mut dims = [0u32; 3];
    for d in &mut dims {
        *d = r.read_u32::<LE>().map_err(io_err)?;
    }
    let mut origin = Vec3::zeros();
    for a in 0..3 {
        origin[a] = r.read_f32::<LE>().map_err(io_err)? as f64;
    }
    let voxel_size = r.read_f32::<LE>().map_err(io_err)? as f64;
    let truncation = r.read_f32::<LE>().map_err(io_err)? as f64;
    let spec = GridSpec {
        origin,
        voxel_size,
        dims,
    };
    let n = spec.len();
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(r.read_f32::<LE>().map_err(io_err)? as f64);
    }
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        weights.push(r.read_f32::<LE>().map_err(io_err)? as f64);
    }
    TsdfGrid::from_parts(spec, truncation, values, weights)
}

// ---------------------------------------------------------------------------
// Training checkpoints
// ---------------------------------------------------------------------------

fn write_vec3(w: &mut impl Write, v: &Vec3) -> std::io::Result<()> {
    for a in 0..3 {
        w.write_f64::<LE>(v[a])?;
    }
    Ok(())
}

fn read_vec3(r: &mut impl Read) -> std::io::Result<Vec3> {
    let mut v = Vec3::zeros();
    for a in 0..3 {
        v[a] = r.read_f64::<LE>()?;
    }
    Ok(v)
}

fn write_vec4(w: &mut impl Write, v: &Vec4) -> std::io::Result<()> {
    for a in 0..4 {
        w.write_f64::<LE>(v[a])?;
    }
    Ok(())
}

fn read_vec4(r: &mut impl Read) -> std::io::Result<Vec4> {
    let mut v = Vec4::zeros();
    for a in 0..4 {
        v[a] = r.read_f64::<LE>()?;
    }
    Ok(v)
}

fn write_rows(
    w: &mut impl Write,
    grads: &crate::geometry::GaussianGrads,
) -> std::io::Result<()> {
    for i in 0..grads.len() {
        write_vec3(w, &grads.center[i])?;
        write_vec3(w, &grads.log_scale[i])?;
        write_vec4(w, &grads.rotation[i])?;
        w.write_f64::<LE>(grads.opacity_logit[i])?;
        write_vec3(w, &grads.color[i])?;
    }
    Ok(())
}

fn read_rows(r: &mut impl Read, n: usize) -> std::io::Result<crate::geometry::GaussianGrads> {
    let mut grads = crate::geometry::GaussianGrads::zeros(n);
    for i in 0..n {
        grads.center[i] = read_vec3(r)?;
        grads.log_scale[i] = read_vec3(r)?;
        grads.rotation[i] = read_vec4(r)?;
        grads.opacity_logit[i] = r.read_f64::<LE>()?;
        grads.color[i] = read_vec3(r)?;
    }
    Ok(grads)
}

/// Writes a versioned checkpoint: iteration counter, Gaussian parameters,
/// and Adam moments, all f64 little-endian.
pub fn write_checkpoint(
    path: &Path,
    iter: u64,
    gaussians: &[Gaussian],
    state: &AdamState,
) -> Result<()> {
    if state.len() != gaussians.len() {
        return Err(Error::CountMismatch {
            what: "optimizer rows",
            expected: gaussians.len(),
            got: state.len(),
        });
    }
    let mut w = create(path)?;
    let inner = (|| -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LE>(CHECKPOINT_VERSION)?;
        w.write_u64::<LE>(iter)?;
        w.write_u64::<LE>(gaussians.len() as u64)?;
        for g in gaussians {
            write_vec3(&mut w, &g.center)?;
            write_vec3(&mut w, &g.log_scale)?;
            write_vec4(&mut w, &g.rotation)?;
            w.write_f64::<LE>(g.opacity_logit)?;
            write_vec3(&mut w, &g.color)?;
        }
        w.write_u64::<LE>(state.step)?;
        w.write_u64::<LE>(state.skipped_nonfinite)?;
        write_rows(&mut w, &state.m)?;
        write_rows(&mut w, &state.v)?;
        w.flush()
    })();
    inner.map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<(u64, Vec<Gaussian>, AdamState)> {
    let mut r = open(path)?;
    let io_err = |e| Error::io(path, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        });
    }
    let version = r.read_u32::<LE>().map_err(io_err)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion {
            path: path.into(),
            got: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let inner = (|| -> std::io::Result<(u64, Vec<Gaussian>, AdamState)> {
        let iter = r.read_u64::<LE>()?;
        let n = r.read_u64::<LE>()? as usize;
        let mut gaussians = Vec::with_capacity(n);
        for _ in 0..n {
            gaussians.push(Gaussian {
                center: read_vec3(&mut r)?,
                log_scale: read_vec3(&mut r)?,
                rotation: read_vec4(&mut r)?,
                opacity_logit: r.read_f64::<LE>()?,
                color: read_vec3(&mut r)?,
            });
        }
        let mut state = AdamState::new(0);
        state.step = r.read_u64::<LE>()?;
        state.skipped_nonfinite = r.read_u64::<LE>()?;
        state.m = read_rows(&mut r, n)?;
        state.v = read_rows(&mut r, n)?;
        Ok((iter, gaussians, state))
    })();
    inner.map_err(io_err)
}

// ---------------------------------------------------------------------------
// PLY meshes and point clouds
// ---------------------------------------------------------------------------

fn write_ply(path: &Path, vertices: &[Vec3], faces: &[[u32; 3]]) -> Result<()> {
    let mut w = create(path)?;
    let inner = (|| -> std::io::Result<()> {
        write!(
            w,
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            vertices.len(),
            faces.len()
        )?;
        for v in vertices {
            for a in 0..3 {
                w.write_f32::<LE>(v[a] as f32)?;
            }
        }
        for f in faces {
            w.write_u8(3)?;
            for &i in f {
                w.write_i32::<LE>(i as i32)?;
            }
        }
        w.flush()
    })();
    inner.map_err(|e| Error::io(path, e))
}

/// Writes a binary little-endian PLY with positions and faces.
pub fn write_ply_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    write_ply(path, &mesh.vertices, &mesh.faces)
}

/// Writes a vertex-only binary little-endian PLY.
pub fn write_ply_points(path: &Path, points: &[Vec3]) -> Result<()> {
    write_ply(path, points, &[])
}

/// Reads a binary little-endian PLY in the exact layout of [`write_ply_mesh`]
/// (which also covers vertex-only files).
pub fn read_ply_mesh(path: &Path) -> Result<Mesh> {
    let mut r = open(path)?;
    let io_err = |e| Error::io(path, e);
    let mut header = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line).map_err(io_err)? == 0 {
            return Err(malformed(path, "ply", "header has no end_header line"));
        }
        let line = line.trim_end().to_string();
        let done = line == "end_header";
        header.push(line);
        if done {
            break;
        }
        if header.len() > 32 {
            return Err(malformed(path, "ply", "header too long"));
        }
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "ply".into(),
        });
    }
    if !header
        .iter()
        .any(|l| l == "format binary_little_endian 1.0")
    {
        return Err(malformed(path, "ply", "not binary little-endian"));
    }
    let count_after = |key: &str| -> Option<usize> {
        header
            .iter()
            .find_map(|l| l.strip_prefix(key))
            .and_then(|rest| rest.trim().parse().ok())
    };
    let n_vertices = count_after("element vertex")
        .ok_or_else(|| malformed(path, "ply", "missing vertex element"))?;
    let n_faces = count_after("element face").unwrap_or(0);
    let float_props = header
        .iter()
        .filter(|l| l.starts_with("property float"))
        .count();
    if float_props != 3 {
        return Err(malformed(
            path,
            "ply",
            format!("expected 3 float vertex properties, found {float_props}"),
        ));
    }
    if n_faces > 0 && !header.iter().any(|l| l.starts_with("property list uchar int")) {
        return Err(malformed(path, "ply", "unsupported face property layout"));
    }
    let mut mesh = Mesh::default();
    for _ in 0..n_vertices {
        let mut v = Vec3::zeros();
        for a in 0..3 {
            v[a] = r.read_f32::<LE>().map_err(io_err)? as f64;
        }
        mesh.vertices.push(v);
    }
    for _ in 0..n_faces {
        let arity = r.read_u8().map_err(io_err)?;
        if arity != 3 {
            return Err(malformed(path, "ply", format!("non-triangle face of arity {arity}")));
        }
        let mut f = [0u32; 3];
        for slot in &mut f {
            let idx = r.read_i32::<LE>().map_err(io_err)?;
            if idx < 0 || idx as usize >= n_vertices {
                return Err(malformed(path, "ply", format!("vertex index {idx} out of range")));
            }
            *slot = idx as u32;
        }
        mesh.faces.push(f);
    }
    Ok(mesh)
}

// ---------------------------------------------------------------------------
// Loss trace and plain-text artifacts
// ---------------------------------------------------------------------------

/// Writes the loss trace as CSV with a header row.
pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = create(path)?;
    let inner = (|| -> std::io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for row in rows {
            writeln!(w, "{}", row.csv_line())?;
        }
        w.flush()
    })();
    inner.map_err(|e| Error::io(path, e))
}

/// Reads a CSV loss trace written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header.trim_end() == TRACE_HEADER => {}
        other => {
            return Err(malformed(
                path,
                "trace",
                format!("unexpected header {other:?}"),
            ))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(TraceRow::parse_csv)
        .collect()
}

/// Writes plain lines (e.g. the outlier-removal log).
pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a flat JSON object of named scalar metrics.
pub fn write_report(path: &Path, entries: &[(&str, f64)]) -> Result<()> {
    let mut text = String::from("{\n");
    for (i, (key, value)) in entries.iter().enumerate() {
        let comma = if i + 1 == entries.len() { "" } else { "," };
        text.push_str(&format!("  \"{key}\": {value}{comma}\n"));
    }
    text.push_str("}\n");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
