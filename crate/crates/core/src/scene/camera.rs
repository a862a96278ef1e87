use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

/// Pinhole camera. Camera frame: +x right, +y down, +z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation: `x_cam = R x_world + t`.
    pub translation: Vec3,
    /// Ground-truth image location; device-local, never serialized.
    pub image_ref: Option<PathBuf>,
}

impl Camera {
    /// Camera at `eye` looking at `target`, square pixels, principal point at the image center.
    pub fn look_at(
        id: &str,
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Camera {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            // Looking along `up`; pick any perpendicular.
            let alt = if forward.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera {
            id: id.to_string(),
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
            image_ref: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidCamera {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(bad("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(bad("image size must be nonzero"));
        }
        let r = &self.rotation;
        if (r * r.transpose() - Mat3::identity()).abs().max() > 1e-6 {
            return Err(bad("rotation is not orthonormal"));
        }
        if (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(bad("rotation determinant is not +1"));
        }
        if self.id.is_empty() || self.id.chars().any(char::is_whitespace) {
            return Err(bad("id must be nonempty without whitespace"));
        }
        Ok(())
    }

    #[inline]
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing direction (+z of the camera frame) in world coordinates.
    #[inline]
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    #[inline]
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn intrinsics(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn intrinsics_inverse(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a world point to continuous pixel coordinates; `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    /// Unit ray through continuous pixel coordinate `(u, v)`, camera frame.
    #[inline]
    pub fn ray_camera(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }

    /// Unit ray through the center of pixel `(x, y)`, camera frame.
    #[inline]
    pub fn pixel_ray(&self, x: usize, y: usize) -> Vec3 {
        self.ray_camera(x as f64 + 0.5, y as f64 + 0.5)
    }

    #[inline]
    pub fn ray_world(&self, u: f64, v: f64) -> Vec3 {
        self.rotation.transpose() * self.ray_camera(u, v)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn same_geometry(&self, other: &Camera) -> bool {
        self.fx == other.fx
            && self.fy == other.fy
            && self.cx == other.cx
            && self.cy == other.cy
            && self.width == other.width
            && self.height == other.height
            && self.rotation == other.rotation
            && self.translation == other.translation
    }

    /// One `cameras.txt` line: `id fx fy cx cy w h r00..r22 tx ty tz`.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {} {} {} {} {} {}",
            self.id, self.fx, self.fy, self.cx, self.cy, self.width, self.height
        );
        for r in 0..3 {
            for c in 0..3 {
                let _ = write!(s, " {}", self.rotation[(r, c)]);
            }
        }
        for i in 0..3 {
            let _ = write!(s, " {}", self.translation[i]);
        }
        s
    }

    pub fn from_line(line: &str) -> Result<Camera> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 19 {
            return Err(Error::parse("cameras.txt", format!("expected 19 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::parse("cameras.txt", format!("field {i}: {e}")))
        };
        let int = |i: usize| -> Result<u32> {
            fields[i]
                .parse::<u32>()
                .map_err(|e| Error::parse("cameras.txt", format!("field {i}: {e}")))
        };
        let mut rotation = Mat3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                rotation[(r, c)] = num(7 + 3 * r + c)?;
            }
        }
        let cam = Camera {
            id: fields[0].to_string(),
            fx: num(1)?,
            fy: num(2)?,
            cx: num(3)?,
            cy: num(4)?,
            width: int(5)?,
            height: int(6)?,
            rotation,
            translation: Vec3::new(num(16)?, num(17)?, num(18)?),
            image_ref: None,
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// Cameras keyed by id, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CameraSet {
    cameras: Vec<Camera>,
}

impl CameraSet {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        let mut set = CameraSet::default();
        for c in cameras {
            set.insert(c)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, cam: Camera) -> Result<()> {
        if self.contains(&cam.id) {
            return Err(Error::DuplicateCamera(cam.id));
        }
        self.cameras.push(cam);
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.cameras.iter().any(|c| c.id == id)
    }

    pub fn get(&self, id: &str) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Camera> {
        self.cameras.iter()
    }

    pub fn as_slice(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn ids(&self) -> Vec<&str> {
        self.cameras.iter().map(|c| c.id.as_str()).collect()
    }

    /// Members of `self` whose id also appears in `other`.
    pub fn intersection(&self, other: &CameraSet) -> CameraSet {
        self.filter(|c| other.contains(&c.id))
    }

    /// Members of `self` whose id does not appear in `other`.
    pub fn difference(&self, other: &CameraSet) -> CameraSet {
        self.filter(|c| !other.contains(&c.id))
    }

    pub fn filter(&self, mut keep: impl FnMut(&Camera) -> bool) -> CameraSet {
        CameraSet {
            cameras: self.cameras.iter().filter(|c| keep(c)).cloned().collect(),
        }
    }

    /// Copies without image references.
    pub fn stripped(&self) -> CameraSet {
        CameraSet {
            cameras: self
                .cameras
                .iter()
                .map(|c| Camera {
                    image_ref: None,
                    ..c.clone()
                })
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.cameras {
            s.push_str(&c.to_line());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<CameraSet> {
        let cams = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(Camera::from_line)
            .collect::<Result<Vec<_>>>()?;
        CameraSet::new(cams)
    }
}

impl IntoIterator for CameraSet {
    type Item = Camera;
    type IntoIter = std::vec::IntoIter<Camera>;
    fn into_iter(self) -> Self::IntoIter {
        self.cameras.into_iter()
    }
}

impl<'a> IntoIterator for &'a CameraSet {
    type Item = &'a Camera;
    type IntoIter = std::slice::Iter<'a, Camera>;
    fn into_iter(self) -> Self::IntoIter {
        self.cameras.iter()
    }
}

impl FromIterator<Camera> for CameraSet {
    /// Later duplicates of an id are dropped.
    fn from_iter<I: IntoIterator<Item = Camera>>(iter: I) -> Self {
        let mut set = CameraSet::default();
        for c in iter {
            let _ = set.insert(c);
        }
        set
    }
}
