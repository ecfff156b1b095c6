//! `GSVL` binary scene files and the JSON mirror.
//!
//! Layout (little-endian): magic `GSVL`, u32 version, u32 N, u32 d_f,
//! u8 flags (bit0 instance ids, bit1 label table, bit2 scene id), then f32
//! arrays positions N×3, scales N×3, rotations N×4, opacity N, color N×3,
//! features N×d_f; optional u32 instance ids N (`u32::MAX` = none);
//! optional label table (u32 count, then u32 id, u16 length, UTF-8 label);
//! optional scene id (u16 length, UTF-8). A CRC-32 of all preceding bytes
//! closes the file.

use std::collections::BTreeMap;
use std::path::Path;

use super::{GaussianScene, GaussianSplat, SceneError};

pub const SCENE_MAGIC: &[u8; 4] = b"GSVL";
pub const SCENE_VERSION: u32 = 1;

const FLAG_INSTANCES: u8 = 1;
const FLAG_LABELS: u8 = 1 << 1;
const FLAG_SCENE_ID: u8 = 1 << 2;
const NO_INSTANCE: u32 = u32::MAX;

pub fn save_scene(scene: &GaussianScene) -> Vec<u8> {
    let n = scene.splats.len();
    let mut out = Vec::with_capacity(17 + n * (16 + scene.feature_dim) * 4);
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(scene.feature_dim as u32).to_le_bytes());
    let has_instances = scene.splats.iter().any(|s| s.instance_id.is_some());
    let mut flags = 0u8;
    if has_instances {
        flags |= FLAG_INSTANCES;
    }
    if !scene.label_table.is_empty() {
        flags |= FLAG_LABELS;
    }
    if !scene.scene_id.is_empty() {
        flags |= FLAG_SCENE_ID;
    }
    out.push(flags);
    let mut put = |vals: &[f32]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for s in &scene.splats {
        put(&s.position);
    }
    for s in &scene.splats {
        put(&s.scale);
    }
    for s in &scene.splats {
        put(&s.rotation);
    }
    for s in &scene.splats {
        put(&[s.opacity]);
    }
    for s in &scene.splats {
        put(&s.color);
    }
    for s in &scene.splats {
        put(&s.language_feature);
    }
    if has_instances {
        for s in &scene.splats {
            out.extend_from_slice(&s.instance_id.unwrap_or(NO_INSTANCE).to_le_bytes());
        }
    }
    if !scene.label_table.is_empty() {
        out.extend_from_slice(&(scene.label_table.len() as u32).to_le_bytes());
        for (id, label) in &scene.label_table {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&(label.len() as u16).to_le_bytes());
            out.extend_from_slice(label.as_bytes());
        }
    }
    if !scene.scene_id.is_empty() {
        out.extend_from_slice(&(scene.scene_id.len() as u16).to_le_bytes());
        out.extend_from_slice(scene.scene_id.as_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn load_scene(bytes: &[u8]) -> Result<GaussianScene, SceneError> {
    if bytes.len() < 4 || &bytes[..4] != SCENE_MAGIC {
        return Err(SceneError::BadMagic);
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u32()?;
    if version != SCENE_VERSION {
        return Err(SceneError::Version(version));
    }
    if bytes.len() < 4 + 4 + 4 + 4 + 1 + 4 {
        return Err(SceneError::Truncated { needed: 21, available: bytes.len() });
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(SceneError::Checksum { stored, computed });
    }
    r.buf = &bytes[..body_len];

    let n = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let flags = r.u8()?;
    if flags & !(FLAG_INSTANCES | FLAG_LABELS | FLAG_SCENE_ID) != 0 {
        return Err(SceneError::Invalid(format!("unknown flag bits {flags:#04x}")));
    }
    let floats_per_splat = 3 + 3 + 4 + 1 + 3 + dim;
    let needed = n
        .checked_mul(floats_per_splat * 4)
        .ok_or(SceneError::Truncated { needed: usize::MAX, available: r.remaining() })?;
    if needed > r.remaining() {
        return Err(SceneError::Truncated { needed, available: r.remaining() });
    }
    let positions = r.f32s(n * 3)?;
    let scales = r.f32s(n * 3)?;
    let rotations = r.f32s(n * 4)?;
    let opacity = r.f32s(n)?;
    let colors = r.f32s(n * 3)?;
    let features = r.f32s(n * dim)?;
    let instances = if flags & FLAG_INSTANCES != 0 {
        Some((0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?)
    } else {
        None
    };
    let mut label_table = BTreeMap::new();
    if flags & FLAG_LABELS != 0 {
        let count = r.u32()? as usize;
        for _ in 0..count {
            let id = r.u32()?;
            let len = r.u16()? as usize;
            let label = r.utf8(len)?;
            if label_table.insert(id, label).is_some() {
                return Err(SceneError::Invalid(format!("duplicate label id {id}")));
            }
        }
    }
    let scene_id = if flags & FLAG_SCENE_ID != 0 {
        let len = r.u16()? as usize;
        r.utf8(len)?
    } else {
        String::new()
    };
    if r.remaining() != 0 {
        return Err(SceneError::Invalid(format!("{} trailing bytes", r.remaining())));
    }
    let splats = (0..n)
        .map(|i| GaussianSplat {
            position: [positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]],
            scale: [scales[3 * i], scales[3 * i + 1], scales[3 * i + 2]],
            rotation: [rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]],
            opacity: opacity[i],
            color: [colors[3 * i], colors[3 * i + 1], colors[3 * i + 2]],
            language_feature: features[i * dim..(i + 1) * dim].to_vec(),
            instance_id: instances.as_ref().and_then(|ids| (ids[i] != NO_INSTANCE).then_some(ids[i])),
        })
        .collect();
    GaussianScene::new(scene_id, dim, splats, label_table)
}

/// Loads a scene and checks its language-feature width.
pub fn load_scene_with_width(bytes: &[u8], expected: usize) -> Result<GaussianScene, SceneError> {
    let scene = load_scene(bytes)?;
    if scene.feature_dim != expected {
        return Err(SceneError::FeatureWidth { expected, found: scene.feature_dim });
    }
    Ok(scene)
}

pub fn save_scene_json(scene: &GaussianScene) -> Result<String, SceneError> {
    Ok(serde_json::to_string_pretty(scene)?)
}

pub fn load_scene_json(text: &str) -> Result<GaussianScene, SceneError> {
    let raw: GaussianScene = serde_json::from_str(text)?;
    GaussianScene::new(raw.scene_id, raw.feature_dim, raw.splats, raw.label_table)
}

impl GaussianScene {
    /// Reads a `.gsvl` file, or the JSON mirror when the path ends in `.json`.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "json") {
            load_scene_json(&std::fs::read_to_string(path)?)
        } else {
            load_scene(&std::fs::read(path)?)
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "json") {
            std::fs::write(path, save_scene_json(self)?)?;
        } else {
            std::fs::write(path, save_scene(self))?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len().saturating_sub(self.pos)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SceneError> {
        if self.remaining() < n {
            return Err(SceneError::Truncated { needed: n, available: self.remaining() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, SceneError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, SceneError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, SceneError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, SceneError> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn utf8(&mut self, n: usize) -> Result<String, SceneError> {
        let raw = self.take(n)?;
        std::str::from_utf8(raw)
            .map(str::to_string)
            .map_err(|_| SceneError::Invalid("label is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::splat;
    use super::*;

    fn labelled() -> GaussianScene {
        let splats = vec![
            splat([0.0, 0.5, 1.0], vec![0.25, -1.0], Some(1)),
            splat([1.0, 1.5, -1.0], vec![f32::MIN_POSITIVE, 3.5], Some(2)),
            splat([2.0, 2.5, 0.0], vec![-0.0, 1e-30], None),
        ];
        let labels = BTreeMap::from([(1, "chair".to_string()), (2, "lamp".to_string())]);
        GaussianScene::new("scene_a", 2, splats, labels).unwrap()
    }

    #[test]
    fn empty_scene_round_trips() {
        let s = GaussianScene::new("", 4, vec![], BTreeMap::new()).unwrap();
        assert_eq!(load_scene(&save_scene(&s)).unwrap(), s);
    }

    #[test]
    fn labelled_scene_round_trips_bit_exact() {
        let s = labelled();
        let bytes = save_scene(&s);
        let back = load_scene(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(save_scene(&back), bytes);
        assert_eq!(back.splats[2].language_feature[0].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn header_layout() {
        let bytes = save_scene(&labelled());
        assert_eq!(&bytes[..4], b"GSVL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(bytes[16], 0b111);
        assert_eq!(f32::from_le_bytes(bytes[17 + 4..17 + 8].try_into().unwrap()), 0.5);
    }

    #[test]
    fn distinct_errors() {
        let bytes = save_scene(&labelled());
        let mut b = bytes.clone();
        b[1] = b'X';
        assert!(matches!(load_scene(&b), Err(SceneError::BadMagic)));
        let mut b = bytes.clone();
        b[4] = 2;
        assert!(matches!(load_scene(&b), Err(SceneError::Version(2))));
        assert!(matches!(load_scene(&bytes[..10]), Err(SceneError::Truncated { .. })));
        let mut b = bytes.clone();
        b[40] ^= 1;
        assert!(matches!(load_scene(&b), Err(SceneError::Checksum { .. })));
        assert!(matches!(
            load_scene_with_width(&bytes, 8),
            Err(SceneError::FeatureWidth { expected: 8, found: 2 })
        ));
    }

    #[test]
    fn json_mirror_round_trips() {
        let s = labelled();
        let text = save_scene_json(&s).unwrap();
        assert_eq!(load_scene_json(&text).unwrap(), s);
        assert!(text.contains("\"language_feature\""));
    }
}
