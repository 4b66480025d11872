//! `VXC1` checkpoints.
//!
//! ```text
//! VXC1
//! arch resolution=10 channels=2 action_dim=5 hidden=128
//! meta epoch 42
//! tensor conv1.weight 4x3x3x3x2 offset=0
//! ...
//! end
//! <payload: row-major little-endian f32, at the listed byte offsets>
//! <CRC32 of everything above, little-endian u32>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{Architecture, PolicyParams, Tensor, PARAM_NAMES};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
}

fn bad(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams<f32>,
    /// Free-form key/value pairs (epoch, seed, ...), kept in order.
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(params: PolicyParams<f32>) -> Self {
        Self { params, meta: Vec::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let a = &self.params.arch;
        let mut header = String::from("VXC1\n");
        let _ = writeln!(
            header,
            "arch resolution={} channels={} action_dim={} hidden={}",
            a.resolution, a.channels, a.action_dim, a.hidden
        );
        for (k, v) in &self.meta {
            let _ = writeln!(header, "meta {k} {v}");
        }
        let mut offset = 0;
        for (name, t) in PARAM_NAMES.iter().zip(&self.params.tensors) {
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            let _ = writeln!(header, "tensor {name} {} offset={offset}", dims.join("x"));
            offset += t.len() * 4;
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.reserve(offset + 4);
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 {
            return Err(bad("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let end = find(body, b"\nend\n").ok_or_else(|| bad("missing end of manifest"))? + 5;
        let header = std::str::from_utf8(&body[..end]).map_err(|_| bad("manifest not utf-8"))?;
        let payload = &body[end..];
        let mut lines = header.lines();
        if lines.next() != Some("VXC1") {
            return Err(bad("missing VXC1 magic"));
        }
        let arch = parse_arch(lines.next().ok_or_else(|| bad("missing arch line"))?)?;
        let mut meta = Vec::new();
        let mut tensors = Vec::new();
        let shapes = arch.shapes();
        let mut expected_offset = 0;
        for line in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["meta", k, v] => meta.push((k.to_string(), v.to_string())),
                ["tensor", name, dims, offset] => {
                    let i = tensors.len();
                    if i >= PARAM_NAMES.len() || *name != PARAM_NAMES[i] {
                        return Err(bad(format!("unexpected tensor {name}")));
                    }
                    let shape: Vec<usize> = dims
                        .split('x')
                        .map(|d| d.parse().map_err(|_| bad(format!("bad shape {dims}"))))
                        .collect::<Result<_, _>>()?;
                    if shape != shapes[i] {
                        return Err(bad(format!("{name} has shape {dims}, expected {:?}", shapes[i])));
                    }
                    let offset: usize = offset
                        .strip_prefix("offset=")
                        .and_then(|o| o.parse().ok())
                        .ok_or_else(|| bad(format!("bad offset for {name}")))?;
                    if offset != expected_offset {
                        return Err(bad(format!("{name} at offset {offset}, expected {expected_offset}")));
                    }
                    let n: usize = shape.iter().product();
                    let raw = payload
                        .get(offset..offset + 4 * n)
                        .ok_or_else(|| bad(format!("payload too short for {name}")))?;
                    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
                    tensors.push(Tensor { shape, data });
                    expected_offset += 4 * n;
                }
                ["end"] => {}
                _ => return Err(bad(format!("unrecognized manifest line {line:?}"))),
            }
        }
        if tensors.len() != PARAM_NAMES.len() {
            return Err(bad(format!("expected {} tensors, found {}", PARAM_NAMES.len(), tensors.len())));
        }
        if payload.len() != expected_offset {
            return Err(bad("trailing payload bytes"));
        }
        Ok(Self { params: PolicyParams { arch, tensors }, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn parse_arch(line: &str) -> Result<Architecture, CheckpointError> {
    let mut f = line.split_whitespace();
    if f.next() != Some("arch") {
        return Err(bad("expected arch line"));
    }
    let mut get = |key: &str| -> Result<usize, CheckpointError> {
        f.next()
            .and_then(|t| t.strip_prefix(key))
            .and_then(|t| t.strip_prefix('='))
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(format!("bad arch field {key}")))
    };
    let (resolution, channels, action_dim, hidden) = (get("resolution")?, get("channels")?, get("action_dim")?, get("hidden")?);
    if resolution == 0 || channels == 0 || hidden == 0 || action_dim != channels + 3 {
        return Err(bad("inconsistent architecture"));
    }
    Ok(Architecture::new(resolution, channels, hidden))
}
