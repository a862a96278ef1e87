//! Directory-based artifact exchange between agents.
//!
//! Each agent publishes one directory holding `artifact.csgs`, `cameras.txt`
//! and `manifest.txt`. Directories are assembled under a temporary name and
//! renamed into place, and readers check the manifest's content hashes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene::{format, Camera, CameraSet, GaussianModel};

pub const ARTIFACT_FILE: &str = "artifact.csgs";
pub const CAMERAS_FILE: &str = "cameras.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    DeviceToEdge,
    EdgeToCloud,
    Cloud,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::DeviceToEdge => "device->edge",
            Stage::EdgeToCloud => "edge->cloud",
            Stage::Cloud => "cloud",
        })
    }
}

impl Stage {
    fn parse(s: &str) -> Option<Stage> {
        match s {
            "device->edge" => Some(Stage::DeviceToEdge),
            "edge->cloud" => Some(Stage::EdgeToCloud),
            "cloud" => Some(Stage::Cloud),
            _ => None,
        }
    }
}

/// Camera geometry without image references. The only constructor strips
/// them, so a list can never carry an image location.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CameraList(CameraSet);

impl CameraList {
    pub fn as_set(&self) -> &CameraSet {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<Camera> {
        self.0.as_slice().to_vec()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<&CameraSet> for CameraList {
    fn from(set: &CameraSet) -> Self {
        CameraList(set.stripped())
    }
}

impl From<&[Camera]> for CameraList {
    fn from(cams: &[Camera]) -> Self {
        CameraList(cams.iter().cloned().collect::<CameraSet>().stripped())
    }
}

/// What one agent hands to the next tier.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentMessage {
    pub sender: String,
    pub stage: Stage,
    /// Serialized model bytes.
    pub model: Vec<u8>,
    pub cameras: CameraList,
    /// Counts and timings, `key=value` in the manifest.
    pub metadata: Vec<(String, String)>,
}

impl AgentMessage {
    pub fn new(sender: &str, stage: Stage, model: &GaussianModel, cameras: CameraList) -> Self {
        AgentMessage {
            sender: sender.to_string(),
            stage,
            model: format::serialize(model),
            cameras,
            metadata: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn decode_model(&self) -> Result<GaussianModel> {
        format::deserialize(&self.model, self.sender.clone())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn manifest_text(msg: &AgentMessage, cameras: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!("sender={}\n", msg.sender));
    s.push_str(&format!("stage={}\n", msg.stage));
    s.push_str(&format!("artifact_sha256={}\n", sha256_hex(&msg.model)));
    s.push_str(&format!("cameras_sha256={}\n", sha256_hex(cameras.as_bytes())));
    s.push_str(&format!("artifact_bytes={}\n", msg.model.len()));
    s.push_str(&format!("camera_count={}\n", msg.cameras.len()));
    for (k, v) in &msg.metadata {
        s.push_str(&format!("meta.{k}={v}\n"));
    }
    s
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str, context: &Path) -> Result<Vec<(String, String)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::SchemaViolation {
                    path: context.to_path_buf(),
                    reason: format!("line without '=': `{l}`"),
                })
        })
        .collect()
}

/// Writes `msg` into `dir` atomically: files go to a sibling temporary
/// directory that is renamed over `dir` once complete.
pub fn write_message(dir: &Path, msg: &AgentMessage) -> Result<()> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("agent");
    let tmp = parent.join(format!(".{name}.partial"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let cams = msg.cameras.as_set().to_text();
    fs::write(tmp.join(ARTIFACT_FILE), &msg.model)?;
    fs::write(tmp.join(CAMERAS_FILE), &cams)?;
    fs::write(tmp.join(MANIFEST_FILE), manifest_text(msg, &cams))?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

/// Reads and verifies the message `sender` published in `dir`.
pub fn read_message(dir: &Path, sender: &str) -> Result<AgentMessage> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingArtifact {
            agent: sender.to_string(),
            path: dir.to_path_buf(),
        });
    }
    let violation = |path: &Path, reason: String| Error::SchemaViolation {
        path: path.to_path_buf(),
        reason,
    };
    let kv = parse_key_values(&fs::read_to_string(&manifest_path)?, &manifest_path)?;
    let get = |k: &str| {
        kv.iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| violation(&manifest_path, format!("missing key `{k}`")))
    };
    let found = get("sender")?;
    if found != sender {
        return Err(violation(&manifest_path, format!("sender `{found}`, expected `{sender}`")));
    }
    let stage_text = get("stage")?;
    let stage = Stage::parse(&stage_text).ok_or_else(|| violation(&manifest_path, format!("unknown stage `{stage_text}`")))?;

    let read = |file: &str| -> Result<Vec<u8>> {
        let p = dir.join(file);
        fs::read(&p).map_err(|_| Error::MissingArtifact {
            agent: sender.to_string(),
            path: p,
        })
    };
    let model = read(ARTIFACT_FILE)?;
    if sha256_hex(&model) != get("artifact_sha256")? {
        return Err(violation(&dir.join(ARTIFACT_FILE), "content hash does not match the manifest".into()));
    }
    let cam_bytes = read(CAMERAS_FILE)?;
    if sha256_hex(&cam_bytes) != get("cameras_sha256")? {
        return Err(violation(&dir.join(CAMERAS_FILE), "content hash does not match the manifest".into()));
    }
    let cam_text = String::from_utf8(cam_bytes).map_err(|_| violation(&dir.join(CAMERAS_FILE), "not UTF-8".into()))?;
    let cameras = CameraList::from(&CameraSet::from_text(&cam_text)?);
    let metadata = kv
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok(AgentMessage {
        sender: sender.to_string(),
        stage,
        model,
        cameras,
        metadata,
    })
}

/// Image container signatures, long enough that model bytes do not match
/// them by chance.
const IMAGE_MAGIC: [(&str, &[u8]); 7] = [
    ("png", b"\x89PNG\r\n\x1a\n"),
    ("jpeg", b"\xff\xd8\xff\xe0\x00\x10JFIF"),
    ("jpeg", b"\xff\xd8\xff\xe1"),
    ("jpeg", b"\xff\xd8\xff\xdb"),
    ("gif", b"GIF87a"),
    ("gif", b"GIF89a"),
    ("raw float image", crate::image::RAW_MAGIC),
];

/// One privacy violation found in an artifact file.
#[derive(Clone, Debug, PartialEq)]
pub struct Finding {
    pub file: PathBuf,
    pub offset: usize,
    pub what: String,
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Scans every file under `roots` for image-format magic bytes and for any
/// of the registered image path strings.
pub fn privacy_scan(roots: &[PathBuf], image_paths: &[String]) -> Result<Vec<Finding>> {
    let mut files = Vec::new();
    for r in roots {
        collect_files(r, &mut files)?;
    }
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let bytes = fs::read(&f)?;
        for (name, magic) in IMAGE_MAGIC {
            if let Some(offset) = find(&bytes, magic) {
                out.push(Finding {
                    file: f.clone(),
                    offset,
                    what: format!("{name} signature"),
                });
            }
        }
        for p in image_paths {
            if let Some(offset) = find(&bytes, p.as_bytes()) {
                out.push(Finding {
                    file: f.clone(),
                    offset,
                    what: format!("image path `{p}`"),
                });
            }
        }
    }
    Ok(out)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    if !dir.is_dir() {
        return Ok(());
    }
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    fn message() -> AgentMessage {
        let mut cam = Camera::look_at("c0", Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y(), 30.0, 16, 16);
        cam.image_ref = Some(PathBuf::from("/private/d0/c0.png"));
        let set = CameraSet::new(vec![cam]).unwrap();
        let mut m = crate::test_util::random_model(1, 5, 1);
        m.canonicalize();
        AgentMessage::new("e0_d0", Stage::DeviceToEdge, &m, CameraList::from(&set)).with("primitives", 5)
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let at = dir.path().join("devices/e0_d0");
        let msg = message();
        write_message(&at, &msg).unwrap();
        let back = read_message(&at, "e0_d0").unwrap();
        assert_eq!(back, msg);
        assert_eq!(back.meta("primitives"), Some("5"));
        assert!(back.cameras.as_set().iter().all(|c| c.image_ref.is_none()));
        assert!(!dir.path().join("devices/.e0_d0.partial").exists());
        // Rewriting replaces the directory.
        write_message(&at, &msg.clone().with("extra", 1)).unwrap();
        assert_eq!(read_message(&at, "e0_d0").unwrap().meta("extra"), Some("1"));
    }

    #[test]
    fn missing_and_tampered_artifacts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let at = dir.path().join("e0_d1");
        assert!(matches!(read_message(&at, "e0_d1"), Err(Error::MissingArtifact { .. })));
        write_message(&at, &message()).unwrap();
        assert!(matches!(read_message(&at, "e0_d1"), Err(Error::SchemaViolation { .. })));
        let mut bytes = fs::read(at.join(ARTIFACT_FILE)).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(at.join(ARTIFACT_FILE), bytes).unwrap();
        assert!(matches!(read_message(&at, "e0_d0"), Err(Error::SchemaViolation { .. })));
    }

    #[test]
    fn scan_flags_image_bytes_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        let at = dir.path().join("d");
        write_message(&at, &message()).unwrap();
        let paths = vec!["/private/d0/c0.png".to_string()];
        assert!(privacy_scan(&[dir.path().to_path_buf()], &paths).unwrap().is_empty());
        fs::write(at.join("leak.bin"), b"xx\x89PNG\r\n\x1a\nyy").unwrap();
        fs::write(at.join("note.txt"), "see /private/d0/c0.png").unwrap();
        let found = privacy_scan(&[dir.path().to_path_buf()], &paths).unwrap();
        assert_eq!(found.len(), 2);
        assert_eq!(found[0].offset, 2);
    }
}
