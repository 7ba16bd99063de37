//! On-disk formats: binary maps, dataset directories, checkpoints and PLY
//! export.
//!
//! Dataset layout:
//!
//! ```text
//! root/
//!   cameras.txt          id fx fy cx cy W H m00 m01 ... m33   (camera-to-world, row-major)
//!   depth/<id>.f32       1 channel, meters, <= 0 invalid
//!   normal/<id>.f32      3 channels, camera frame, zero invalid
//!   instance/<id>.u32    optional, 1 channel, 0xFFFFFFFF invalid
//!   meta.json
//! ```
//!
//! Binary maps carry a 16-byte little-endian header (`PSMP`, version, W, H)
//! followed by the row-major, channel-interleaved payload.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraView, Intrinsics, PlanePrimitive, Pose, Quat, Vec3};
use crate::optimizer::{AdamState, OptimState, PlaneInstance};
use crate::renderer::GradientBuffer;
use crate::synthetic::{GtFace, RoomBounds, SyntheticScene};

const MAP_MAGIC: &[u8; 4] = b"PSMP";
const MAP_VERSION: u32 = 1;
const CKPT_MAGIC: &[u8; 4] = b"PSCK";
const CKPT_VERSION: u32 = 1;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn map_bytes(width: u32, height: u32, payload: impl Iterator<Item = [u8; 4]>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + width as usize * height as usize * 4);
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&MAP_VERSION.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    payload.for_each(|b| out.extend_from_slice(&b));
    out
}

fn parse_map(path: &Path, bytes: &[u8], channels: usize) -> Result<(u32, u32, Vec<[u8; 4]>)> {
    if bytes.len() < 16 {
        return Err(Error::format(path, "file shorter than the 16-byte header"));
    }
    if &bytes[..4] != MAP_MAGIC {
        return Err(Error::format(path, "bad magic, expected PSMP"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != MAP_VERSION {
        return Err(Error::format(path, format!("unsupported map version {version}")));
    }
    let (w, h) = (word(8), word(12));
    let expected = w as usize * h as usize * channels * 4;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, expected {expected} for {w}x{h}x{channels}", payload.len()),
        ));
    }
    Ok((w, h, payload.chunks_exact(4).map(|c| c.try_into().unwrap()).collect()))
}

/// Write a float map with `channels` interleaved values per pixel.
pub fn write_map_f32(path: &Path, width: u32, height: u32, data: &[f32]) -> Result<()> {
    assert_eq!(data.len() % (width as usize * height as usize).max(1), 0, "payload size");
    write_file(path, &map_bytes(width, height, data.iter().map(|v| v.to_le_bytes())))
}

pub fn read_map_f32(path: &Path, channels: usize) -> Result<(u32, u32, Vec<f32>)> {
    let bytes = read_file(path)?;
    let (w, h, words) = parse_map(path, &bytes, channels)?;
    Ok((w, h, words.into_iter().map(f32::from_le_bytes).collect()))
}

pub fn write_map_u32(path: &Path, width: u32, height: u32, data: &[u32]) -> Result<()> {
    write_file(path, &map_bytes(width, height, data.iter().map(|v| v.to_le_bytes())))
}

pub fn read_map_u32(path: &Path) -> Result<(u32, u32, Vec<u32>)> {
    let bytes = read_file(path)?;
    let (w, h, words) = parse_map(path, &bytes, 1)?;
    Ok((w, h, words.into_iter().map(u32::from_le_bytes).collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub scene_center: [f64; 3],
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<RoomBounds>,
    #[serde(default)]
    pub gt_planes: Vec<GtFace>,
}

/// A loaded dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub views: Vec<CameraView>,
    /// Per-view instance maps when present on disk.
    pub instances: Option<Vec<Vec<u32>>>,
    pub meta: DatasetMeta,
}

fn depth_path(root: &Path, id: u32) -> PathBuf {
    root.join("depth").join(format!("{id}.f32"))
}

fn normal_path(root: &Path, id: u32) -> PathBuf {
    root.join("normal").join(format!("{id}.f32"))
}

fn instance_path(root: &Path, id: u32) -> PathBuf {
    root.join("instance").join(format!("{id}.u32"))
}

fn camera_line(v: &CameraView) -> String {
    let k = &v.intrinsics;
    let m = v.pose.to_matrix();
    let mut s = format!("{} {} {} {} {} {} {}", v.id, k.fx, k.fy, k.cx, k.cy, v.width, v.height);
    for r in 0..4 {
        for c in 0..4 {
            s.push_str(&format!(" {}", m[(r, c)]));
        }
    }
    s
}

/// Write views (with optional instance maps) and metadata to `root`.
pub fn write_dataset(root: &Path, views: &[CameraView], instances: Option<&[Vec<u32>]>, meta: &DatasetMeta) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut cameras = String::new();
    for (i, v) in views.iter().enumerate() {
        cameras.push_str(&camera_line(v));
        cameras.push('\n');
        let depth: Vec<f32> = v.target_depth.iter().map(|d| *d as f32).collect();
        write_map_f32(&depth_path(root, v.id), v.width, v.height, &depth)?;
        let normal: Vec<f32> = v.target_normal.iter().flat_map(|n| [n.x as f32, n.y as f32, n.z as f32]).collect();
        write_map_f32(&normal_path(root, v.id), v.width, v.height, &normal)?;
        if let Some(inst) = instances {
            write_map_u32(&instance_path(root, v.id), v.width, v.height, &inst[i])?;
        }
    }
    write_file(&root.join("cameras.txt"), cameras.as_bytes())?;
    let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    write_file(&root.join("meta.json"), json.as_bytes())
}

/// Metadata of a synthetic scene.
pub fn synthetic_meta(scene: &SyntheticScene) -> DatasetMeta {
    DatasetMeta {
        scene_center: scene.bounds.center().into(),
        units: "meters".into(),
        room: Some(scene.bounds),
        gt_planes: scene.faces.clone(),
    }
}

fn parse_camera(path: &Path, lineno: usize, line: &str) -> Result<(u32, Intrinsics, u32, u32, Pose)> {
    let bad = |msg: String| Error::format(path, format!("line {}: {msg}", lineno + 1));
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 23 {
        return Err(bad(format!("expected 23 fields, found {}", fields.len())));
    }
    let num = |i: usize| fields[i].parse::<f64>().map_err(|e| bad(format!("field {}: {e}", i + 1)));
    let int = |i: usize| fields[i].parse::<u32>().map_err(|e| bad(format!("field {}: {e}", i + 1)));
    let id = int(0)?;
    let k = Intrinsics {
        fx: num(1)?,
        fy: num(2)?,
        cx: num(3)?,
        cy: num(4)?,
    };
    let (w, h) = (int(5)?, int(6)?);
    let mut m = Matrix4::zeros();
    for r in 0..4 {
        for c in 0..4 {
            m[(r, c)] = num(7 + r * 4 + c)?;
        }
    }
    Ok((id, k, w, h, Pose::from_matrix(&m)))
}

/// Read `meta.json` of a dataset directory.
pub fn load_meta(root: &Path) -> Result<DatasetMeta> {
    let path = root.join("meta.json");
    serde_json::from_slice(&read_file(&path)?).map_err(|e| Error::format(&path, e.to_string()))
}

/// Load every `stride`-th camera of a dataset directory, validating the
/// maps against the camera resolution.
pub fn load_dataset(root: &Path, stride: usize) -> Result<Dataset> {
    if stride < 1 {
        return Err(Error::InvalidInput("stride must be at least 1".into()));
    }
    let cam_path = root.join("cameras.txt");
    let text = String::from_utf8(read_file(&cam_path)?).map_err(|_| Error::format(&cam_path, "not UTF-8"))?;
    let meta = load_meta(root)?;

    let lines: Vec<(usize, &str)> = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).collect();
    let mut views = Vec::new();
    let mut instances: Vec<Vec<u32>> = Vec::new();
    let mut have_instances = true;
    for (lineno, line) in lines.into_iter().step_by(stride) {
        let (id, k, w, h, pose) = parse_camera(&cam_path, lineno, line)?;
        let check = |path: &Path, mw: u32, mh: u32| {
            if (mw, mh) != (w, h) {
                Err(Error::format(path, format!("map is {mw}x{mh}, camera {id} is {w}x{h}")))
            } else {
                Ok(())
            }
        };
        let dp = depth_path(root, id);
        let (dw, dh, depth) = read_map_f32(&dp, 1)?;
        check(&dp, dw, dh)?;
        let np = normal_path(root, id);
        let (nw, nh, normal) = read_map_f32(&np, 3)?;
        check(&np, nw, nh)?;
        let view = CameraView {
            id,
            intrinsics: k,
            width: w,
            height: h,
            pose,
            target_depth: depth.iter().map(|d| *d as f64).collect(),
            target_normal: normal
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
                .collect(),
        };
        view.validate().map_err(|e| Error::format(&cam_path, format!("line {}: {e}", lineno + 1)))?;
        views.push(view);

        let ip = instance_path(root, id);
        if have_instances && ip.exists() {
            let (iw, ih, inst) = read_map_u32(&ip)?;
            check(&ip, iw, ih)?;
            instances.push(inst);
        } else {
            have_instances = false;
        }
    }
    if views.is_empty() {
        return Err(Error::format(&cam_path, "no cameras"));
    }
    Ok(Dataset {
        views,
        instances: have_instances.then_some(instances),
        meta,
    })
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s<const N: usize>(&mut self) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for v in out.iter_mut() {
            *v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        }
        Ok(out)
    }
}

/// Serialize the optimization state together with the hash of the config
/// that produced it.
pub fn checkpoint_bytes(state: &OptimState, config_hash: &[u8; 32]) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CKPT_MAGIC);
    w.u32(CKPT_VERSION);
    w.0.extend_from_slice(config_hash);
    w.u64(state.iteration);
    w.u64(state.next_id);
    w.f64s(state.scene_center.as_slice());
    w.u64(state.grads.steps);
    w.u64(state.primitives.len() as u64);
    for (i, p) in state.primitives.iter().enumerate() {
        w.u64(p.id);
        w.f64s(p.center.as_slice());
        w.f64s(&p.rotation.to_array());
        w.f64s(&p.radii);
        let a = &state.adam[i];
        w.f64s(&a.m);
        w.f64s(&a.v);
        w.u64(a.t);
        w.f64s(&state.grads.radii_abs_sum[i]);
    }
    w.0
}

pub fn save_checkpoint(path: &Path, state: &OptimState, config_hash: &[u8; 32]) -> Result<()> {
    write_file(path, &checkpoint_bytes(state, config_hash))
}

/// Load a checkpoint. With `expected_hash` set, a checkpoint written under a
/// different config is refused.
pub fn load_checkpoint(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<(OptimState, [u8; 32])> {
    let bytes = read_file(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(4)? != CKPT_MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic, expected PSCK", path.display())));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!("{}: unsupported version {version}", path.display())));
    }
    let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    if let Some(expected) = expected_hash {
        if expected != &hash {
            return Err(Error::Checkpoint(format!(
                "{}: config hash mismatch (checkpoint {}, current {})",
                path.display(),
                hex(&hash),
                hex(expected)
            )));
        }
    }
    let iteration = r.u64()?;
    let next_id = r.u64()?;
    let center = r.f64s::<3>()?;
    let steps = r.u64()?;
    let n = r.u64()? as usize;
    if n > bytes.len() / 8 {
        return Err(Error::format(path, format!("implausible primitive count {n}")));
    }
    let mut primitives = Vec::with_capacity(n);
    let mut adam = Vec::with_capacity(n);
    let mut grads = GradientBuffer::new(n);
    grads.steps = steps;
    for i in 0..n {
        let id = r.u64()?;
        let c = r.f64s::<3>()?;
        let q = r.f64s::<4>()?;
        let radii = r.f64s::<4>()?;
        primitives.push(PlanePrimitive::new(id, Vec3::from(c), Quat::from_array(q), radii));
        let m = r.f64s::<11>()?;
        let v = r.f64s::<11>()?;
        let t = r.u64()?;
        adam.push(AdamState { m, v, t });
        grads.radii_abs_sum[i] = r.f64s::<4>()?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    let state = OptimState {
        primitives,
        adam,
        grads,
        iteration,
        next_id,
        scene_center: Vec3::from(center),
    };
    Ok((state, hash))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic, well-spread color for an instance id.
pub fn palette(id: u32) -> [u8; 3] {
    let h = (id as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.65, 0.95);
    let sector = h.floor() as u32;
    let f = h - sector as f64;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PlyOptions {
    pub binary: bool,
    /// Snap member corners onto their instance plane.
    pub project: bool,
}

/// Corners of every primitive with its instance label, as exported.
pub fn export_geometry(
    instances: &[PlaneInstance],
    primitives: &[PlanePrimitive],
    scene_center: &Vec3,
    project: bool,
) -> Vec<([Vec3; 4], u32)> {
    let labels = crate::optimizer::instance_labels(instances, primitives);
    primitives
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            let mut corners = p.corners();
            if project {
                let inst = &instances[l as usize];
                let n = inst.normal();
                let side = if (p.center - scene_center).dot(&n) < 0.0 { -1.0 } else { 1.0 };
                for c in corners.iter_mut() {
                    *c -= n * ((*c - scene_center).dot(&n) - side * inst.offset);
                }
            }
            (corners, l)
        })
        .collect()
}

/// Write the reconstruction as a colored triangle mesh: four corners and two
/// triangles per primitive.
pub fn export_ply(
    path: &Path,
    instances: &[PlaneInstance],
    primitives: &[PlanePrimitive],
    scene_center: &Vec3,
    opts: PlyOptions,
) -> Result<()> {
    if instances.is_empty() {
        return Err(Error::InvalidInput("nothing to export".into()));
    }
    let geometry = export_geometry(instances, primitives, scene_center, opts.project);
    let n = geometry.len();
    let mut out: Vec<u8> = Vec::new();
    let format = if opts.binary { "binary_little_endian" } else { "ascii" };
    let coord = if opts.binary { "float" } else { "double" };
    write!(
        out,
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty {coord} x\nproperty {coord} y\nproperty {coord} z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\n\
         property list uchar int vertex_indices\nend_header\n",
        4 * n,
        2 * n
    )
    .expect("write to memory");
    for (corners, label) in &geometry {
        let [r, g, b] = palette(*label);
        for c in corners {
            if opts.binary {
                for k in 0..3 {
                    out.extend_from_slice(&(c[k] as f32).to_le_bytes());
                }
                out.extend_from_slice(&[r, g, b]);
            } else {
                writeln!(out, "{} {} {} {r} {g} {b}", c.x, c.y, c.z).expect("write to memory");
            }
        }
    }
    for i in 0..n as i32 {
        let base = 4 * i;
        for tri in [[base, base + 1, base + 2], [base, base + 2, base + 3]] {
            if opts.binary {
                out.push(3);
                tri.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            } else {
                writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2]).expect("write to memory");
            }
        }
    }
    write_file(path, &out)
}
