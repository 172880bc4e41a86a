//! COLMAP `cameras` / `images` tables, text or binary.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3};

use super::{CameraView, SceneError};

#[derive(Debug, Clone)]
struct Intrinsics {
    width: u32,
    height: u32,
    focal: (f64, f64),
    principal: (f64, f64),
}

#[derive(Debug, Clone)]
struct Registered {
    image_id: i64,
    qvec: [f64; 4],
    tvec: [f64; 3],
    camera_id: i64,
    name: String,
}

const MODEL_NAMES: [&str; 11] = [
    "SIMPLE_PINHOLE",
    "PINHOLE",
    "SIMPLE_RADIAL",
    "RADIAL",
    "OPENCV",
    "OPENCV_FISHEYE",
    "FULL_OPENCV",
    "FOV",
    "SIMPLE_RADIAL_FISHEYE",
    "RADIAL_FISHEYE",
    "THIN_PRISM_FISHEYE",
];

fn intrinsics_for(model: &str, width: u32, height: u32, params: &[f64]) -> Result<Intrinsics, SceneError> {
    let (focal, principal) = match (model, params) {
        ("SIMPLE_PINHOLE", [f, cx, cy, ..]) => ((*f, *f), (*cx, *cy)),
        ("PINHOLE", [fx, fy, cx, cy, ..]) => ((*fx, *fy), (*cx, *cy)),
        ("SIMPLE_PINHOLE" | "PINHOLE", _) => {
            return Err(SceneError::malformed(
                PathBuf::new(),
                format!("{model} camera with {} parameters", params.len()),
            ))
        }
        (other, _) => {
            return Err(SceneError::UnsupportedCameraModel {
                model: other.to_string(),
            })
        }
    };
    Ok(Intrinsics {
        width,
        height,
        focal,
        principal,
    })
}

fn locate(dir: &Path) -> Option<(PathBuf, bool)> {
    for base in [dir.to_path_buf(), dir.join("sparse").join("0"), dir.join("sparse")] {
        if base.join("cameras.bin").is_file() && base.join("images.bin").is_file() {
            return Some((base, true));
        }
        if base.join("cameras.txt").is_file() && base.join("images.txt").is_file() {
            return Some((base, false));
        }
    }
    None
}

/// Load one [`CameraView`] per registered image, ordered by image id.
///
/// Looks for the tables in `dir`, `dir/sparse/0` and `dir/sparse`, preferring
/// the binary variant. Only `PINHOLE` and `SIMPLE_PINHOLE` are accepted.
pub fn load_colmap_cameras(dir: impl AsRef<Path>) -> Result<Vec<CameraView>, SceneError> {
    let dir = dir.as_ref();
    let (base, binary) = locate(dir).ok_or_else(|| SceneError::MissingField {
        path: dir.to_path_buf(),
        field: "cameras/images tables".into(),
    })?;
    let (cameras, mut images) = if binary {
        (
            read_cameras_bin(&base.join("cameras.bin"))?,
            read_images_bin(&base.join("images.bin"))?,
        )
    } else {
        (
            read_cameras_txt(&base.join("cameras.txt"))?,
            read_images_txt(&base.join("images.txt"))?,
        )
    };
    images.sort_by_key(|im| im.image_id);
    images
        .into_iter()
        .map(|im| {
            let cam = cameras.get(&im.camera_id).ok_or_else(|| {
                SceneError::Inconsistent(format!(
                    "image `{}` references unknown camera {}",
                    im.name, im.camera_id
                ))
            })?;
            let rotation = UnitQuaternion::from_quaternion(Quaternion::new(
                im.qvec[0], im.qvec[1], im.qvec[2], im.qvec[3],
            ))
            .to_rotation_matrix()
            .into_inner();
            let mut w2c = Matrix4::identity();
            w2c.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
            w2c.fixed_view_mut::<3, 1>(0, 3)
                .copy_from(&Vector3::new(im.tvec[0], im.tvec[1], im.tvec[2]));
            CameraView::new(im.name, cam.width, cam.height, cam.focal, cam.principal, w2c)
        })
        .collect()
}

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.trim_start().starts_with('#'))
}

fn parse_fields<T: std::str::FromStr>(path: &Path, tokens: &[&str], what: &str) -> Result<Vec<T>, SceneError> {
    tokens
        .iter()
        .map(|t| {
            t.parse()
                .map_err(|_| SceneError::malformed(path, format!("bad {what} value `{t}`")))
        })
        .collect()
}

fn read_cameras_txt(path: &Path) -> Result<HashMap<i64, Intrinsics>, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| SceneError::io(path, e))?;
    let mut out = HashMap::new();
    for line in data_lines(&text) {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() < 4 {
            return Err(SceneError::malformed(path, format!("short camera line `{line}`")));
        }
        let id: i64 = parse_fields(path, &tokens[..1], "camera id")?[0];
        let dims: Vec<u32> = parse_fields(path, &tokens[2..4], "camera size")?;
        let params: Vec<f64> = parse_fields(path, &tokens[4..], "camera parameter")?;
        out.insert(id, intrinsics_for(tokens[1], dims[0], dims[1], &params)?);
    }
    Ok(out)
}

fn read_images_txt(path: &Path) -> Result<Vec<Registered>, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| SceneError::io(path, e))?;
    let mut lines = data_lines(&text);
    let mut out = Vec::new();
    while let Some(line) = lines.next() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() < 10 {
            return Err(SceneError::malformed(path, format!("short image line `{line}`")));
        }
        let image_id: i64 = parse_fields(path, &tokens[..1], "image id")?[0];
        let pose: Vec<f64> = parse_fields(path, &tokens[1..8], "pose")?;
        let camera_id: i64 = parse_fields(path, &tokens[8..9], "camera id")?[0];
        out.push(Registered {
            image_id,
            qvec: [pose[0], pose[1], pose[2], pose[3]],
            tvec: [pose[4], pose[5], pose[6]],
            camera_id,
            name: tokens[9..].join(" "),
        });
        // observations line, possibly empty
        lines.next();
    }
    Ok(out)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SceneError> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| SceneError::malformed(self.path, "unexpected end of file"))?;
        self.pos += n;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64, SceneError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, SceneError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, SceneError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn cstring(&mut self) -> Result<String, SceneError> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| SceneError::malformed(self.path, "unterminated image name"))?;
        self.pos += end + 1;
        Ok(String::from_utf8_lossy(&rest[..end]).into_owned())
    }
}

fn param_count(model_id: i32) -> Option<usize> {
    Some(match model_id {
        0 => 3,
        1 => 4,
        2 => 4,
        3 => 5,
        4 => 8,
        5 => 8,
        6 => 12,
        7 => 5,
        8 => 4,
        9 => 5,
        10 => 12,
        _ => return None,
    })
}

fn read_cameras_bin(path: &Path) -> Result<HashMap<i64, Intrinsics>, SceneError> {
    let bytes = fs::read(path).map_err(|e| SceneError::io(path, e))?;
    let mut c = Cursor { path, bytes: &bytes, pos: 0 };
    let n = c.u64()?;
    let mut out = HashMap::new();
    for _ in 0..n {
        let id = c.i32()? as i64;
        let model_id = c.i32()?;
        let width = c.u64()? as u32;
        let height = c.u64()? as u32;
        let model = MODEL_NAMES
            .get(model_id as usize)
            .copied()
            .ok_or_else(|| SceneError::UnsupportedCameraModel {
                model: format!("model id {model_id}"),
            })?;
        let count = param_count(model_id).unwrap_or(0);
        let params = (0..count).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
        out.insert(id, intrinsics_for(model, width, height, &params)?);
    }
    Ok(out)
}

fn read_images_bin(path: &Path) -> Result<Vec<Registered>, SceneError> {
    let bytes = fs::read(path).map_err(|e| SceneError::io(path, e))?;
    let mut c = Cursor { path, bytes: &bytes, pos: 0 };
    let n = c.u64()?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let image_id = c.i32()? as i64;
        let qvec = [c.f64()?, c.f64()?, c.f64()?, c.f64()?];
        let tvec = [c.f64()?, c.f64()?, c.f64()?];
        let camera_id = c.i32()? as i64;
        let name = c.cstring()?;
        let points = c.u64()? as usize;
        c.take(points * 24)?;
        out.push(Registered {
            image_id,
            qvec,
            tvec,
            camera_id,
            name,
        });
    }
    Ok(out)
}

/// Write COLMAP text tables (`cameras.txt`, `images.txt`, empty
/// `points3D.txt`) for the given views, one PINHOLE camera per view.
pub fn write_colmap_text(dir: impl AsRef<Path>, views: &[CameraView]) -> Result<(), SceneError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| SceneError::io(dir, e))?;
    let mut cameras = String::from("# Camera list with one line of data per camera:\n");
    let mut images = String::from("# Image list with two lines of data per image:\n");
    for (i, v) in views.iter().enumerate() {
        let id = i + 1;
        cameras.push_str(&format!(
            "{id} PINHOLE {} {} {} {} {} {}\n",
            v.width, v.height, v.focal_x, v.focal_y, v.principal_point.x, v.principal_point.y
        ));
        let q = UnitQuaternion::from_matrix(&v.rotation());
        let t = v.translation();
        images.push_str(&format!(
            "{id} {} {} {} {} {} {} {} {id} {}\n\n",
            q.w, q.i, q.j, q.k, t.x, t.y, t.z, v.view_id
        ));
    }
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| SceneError::io(p, e))
    };
    write("cameras.txt", &cameras)?;
    write("images.txt", &images)?;
    write("points3D.txt", "")
}
