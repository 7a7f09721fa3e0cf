//! On-disk datasets: a text manifest (spec echo, format version, scene
//! offsets) plus one binary blob. Images are stored as raw
//! little-endian f64, masks as run-length counts, integers fixed-width
//! little-endian. Reading is the exact inverse of writing.

use std::fs;
use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use super::{generate_scene, InstanceAnnotation, Scene, SceneSpec};
use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::hash::fnv64_hex;
use crate::mask::{decode_rle, encode_rle};
use crate::tensor::Tensor;

const FORMAT: &str = "REGIONLAB-DATASET v1";

#[derive(Debug, Clone)]
pub struct DatasetMeta {
    pub spec: SceneSpec,
    pub count: usize,
    pub start_index: u64,
    pub blob_hash: String,
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn encode_scene(scene: &Scene) -> Vec<u8> {
    let mut buf = Vec::new();
    push_u32(&mut buf, scene.annotations.len() as u32);
    for v in scene.image.data() {
        push_f64(&mut buf, *v);
    }
    for ann in &scene.annotations {
        push_u32(&mut buf, ann.class as u32);
        push_u32(&mut buf, ann.depth as u32);
        for c in [ann.bbox.x1, ann.bbox.y1, ann.bbox.x2, ann.bbox.y2] {
            push_f64(&mut buf, c);
        }
        let runs = encode_rle(&ann.mask);
        push_u32(&mut buf, runs.len() as u32);
        for r in runs {
            push_u32(&mut buf, r);
        }
        push_u32(&mut buf, ann.keypoints.len() as u32);
        for &(x, y, visible) in &ann.keypoints {
            push_f64(&mut buf, x);
            push_f64(&mut buf, y);
            buf.push(u8::from(visible));
        }
    }
    buf
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::parse(format!(
                "dataset: truncated scene record ({} needed at {}, {} available)",
                n,
                self.pos,
                self.data.len()
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

fn decode_scene(bytes: &[u8], spec: &SceneSpec) -> Result<Scene> {
    let (h, w) = (spec.image_h, spec.image_w);
    let mut cur = Cursor { data: bytes, pos: 0 };
    let count = cur.u32()? as usize;
    let mut image_data = Vec::with_capacity(3 * h * w);
    for _ in 0..3 * h * w {
        image_data.push(cur.f64()?);
    }
    let image = Tensor::from_vec(vec![3, h, w], image_data)?;
    let mut annotations = Vec::with_capacity(count);
    for _ in 0..count {
        let class = cur.u32()? as usize;
        let depth = cur.u32()? as usize;
        let (x1, y1, x2, y2) = (cur.f64()?, cur.f64()?, cur.f64()?, cur.f64()?);
        let run_count = cur.u32()? as usize;
        let mut runs = Vec::with_capacity(run_count);
        for _ in 0..run_count {
            runs.push(cur.u32()?);
        }
        let mask = decode_rle(h, w, &runs)?;
        let kp_count = cur.u32()? as usize;
        let mut keypoints = Vec::with_capacity(kp_count);
        for _ in 0..kp_count {
            let x = cur.f64()?;
            let y = cur.f64()?;
            keypoints.push((x, y, cur.u8()? != 0));
        }
        annotations.push(InstanceAnnotation {
            class,
            bbox: BBox::new(x1, y1, x2, y2)?,
            mask,
            keypoints,
            depth,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse(format!(
            "dataset: {} trailing bytes after scene record",
            bytes.len() - cur.pos
        )));
    }
    Ok(Scene { image, annotations })
}

fn spec_lines(spec: &SceneSpec) -> String {
    format!(
        "image_h = {}\nimage_w = {}\nmin_instances = {}\nmax_instances = {}\n\
         min_size = {}\nmax_size = {}\noverlap_bias = {}\nnoise = {}\nseed = {}\n",
        spec.image_h,
        spec.image_w,
        spec.min_instances,
        spec.max_instances,
        spec.min_size,
        spec.max_size,
        spec.overlap_bias,
        spec.noise,
        spec.seed
    )
}

fn parse_spec_line(spec: &mut SceneSpec, key: &str, value: &str) -> Result<()> {
    let bad = |k: &str| Error::parse(format!("dataset manifest: bad value for {k}"));
    match key {
        "image_h" => spec.image_h = value.parse().map_err(|_| bad(key))?,
        "image_w" => spec.image_w = value.parse().map_err(|_| bad(key))?,
        "min_instances" => spec.min_instances = value.parse().map_err(|_| bad(key))?,
        "max_instances" => spec.max_instances = value.parse().map_err(|_| bad(key))?,
        "min_size" => spec.min_size = value.parse().map_err(|_| bad(key))?,
        "max_size" => spec.max_size = value.parse().map_err(|_| bad(key))?,
        "overlap_bias" => spec.overlap_bias = value.parse().map_err(|_| bad(key))?,
        "noise" => spec.noise = value.parse().map_err(|_| bad(key))?,
        "seed" => spec.seed = value.parse().map_err(|_| bad(key))?,
        other => return Err(Error::parse(format!("dataset manifest: unknown key '{other}'"))),
    }
    Ok(())
}

fn manifest_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.manifest"))
}

fn blob_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.blob"))
}

/// Generate scenes [start_index, start_index + count) and write the
/// manifest + blob pair under `dir` as `<name>.manifest` / `<name>.blob`.
pub fn write_dataset(
    dir: &Path,
    name: &str,
    spec: &SceneSpec,
    count: usize,
    start_index: u64,
) -> Result<DatasetMeta> {
    spec.validate()?;
    fs::create_dir_all(dir)?;
    let mut blob: Vec<u8> = Vec::new();
    let mut offsets: Vec<(u64, u64)> = Vec::with_capacity(count);
    for i in 0..count {
        let scene = generate_scene(spec, start_index + i as u64)?;
        let record = encode_scene(&scene);
        offsets.push((blob.len() as u64, record.len() as u64));
        blob.extend_from_slice(&record);
    }
    let blob_hash = fnv64_hex(&blob);
    fs::write(blob_path(dir, name), &blob)?;

    let mut manifest = fs::File::create(manifest_path(dir, name))?;
    writeln!(manifest, "{FORMAT}")?;
    writeln!(manifest, "[spec]")?;
    write!(manifest, "{}", spec_lines(spec))?;
    writeln!(manifest, "[scenes]")?;
    writeln!(manifest, "count = {count}")?;
    writeln!(manifest, "start_index = {start_index}")?;
    writeln!(manifest, "blob_bytes = {}", blob.len())?;
    writeln!(manifest, "blob_hash = {blob_hash}")?;
    for (i, (off, len)) in offsets.iter().enumerate() {
        writeln!(manifest, "scene {i} {off} {len}")?;
    }
    Ok(DatasetMeta { spec: spec.clone(), count, start_index, blob_hash })
}

/// Random-access handle over a written dataset.
pub struct Dataset {
    pub meta: DatasetMeta,
    blob: fs::File,
    offsets: Vec<(u64, u64)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn scene(&self, i: usize) -> Result<Scene> {
        let (off, len) = *self
            .offsets
            .get(i)
            .ok_or_else(|| Error::invalid(format!("dataset: scene {i} of {}", self.len())))?;
        let mut bytes = vec![0u8; len as usize];
        self.blob.read_exact_at(&mut bytes, off).map_err(|e| {
            Error::parse(format!("dataset: truncated blob reading scene {i}: {e}"))
        })?;
        decode_scene(&bytes, &self.meta.spec)
    }
}

/// Open `<name>` under `dir`, validating the format version and blob size.
pub fn read_dataset(dir: &Path, name: &str) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path(dir, name))?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    if first != FORMAT {
        return Err(Error::parse(format!(
            "dataset: format version mismatch: '{first}' (expected '{FORMAT}')"
        )));
    }
    let mut spec = SceneSpec::default();
    let mut count: Option<usize> = None;
    let mut start_index: Option<u64> = None;
    let mut blob_bytes: Option<u64> = None;
    let mut blob_hash = String::new();
    let mut offsets: Vec<(u64, u64)> = Vec::new();
    let mut section = String::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].to_string();
            continue;
        }
        if let Some(rest) = line.strip_prefix("scene ") {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::parse(format!("dataset manifest: bad scene line '{line}'")));
            }
            let off = fields[1].parse().map_err(|_| Error::parse("bad offset".to_string()))?;
            let len = fields[2].parse().map_err(|_| Error::parse("bad length".to_string()))?;
            offsets.push((off, len));
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(format!("dataset manifest: bad line '{line}'")));
        };
        let (key, value) = (key.trim(), value.trim());
        match section.as_str() {
            "spec" => parse_spec_line(&mut spec, key, value)?,
            "scenes" => match key {
                "count" => count = Some(value.parse().map_err(|_| Error::parse("bad count".to_string()))?),
                "start_index" => {
                    start_index =
                        Some(value.parse().map_err(|_| Error::parse("bad start_index".to_string()))?)
                }
                "blob_bytes" => {
                    blob_bytes =
                        Some(value.parse().map_err(|_| Error::parse("bad blob_bytes".to_string()))?)
                }
                "blob_hash" => blob_hash = value.to_string(),
                other => {
                    return Err(Error::parse(format!("dataset manifest: unknown key '{other}'")))
                }
            },
            other => return Err(Error::parse(format!("dataset manifest: unknown section '{other}'"))),
        }
    }
    let count = count.ok_or_else(|| Error::parse("dataset manifest: missing count".to_string()))?;
    if offsets.len() != count {
        return Err(Error::parse(format!(
            "dataset manifest: {} scene lines for count {count}",
            offsets.len()
        )));
    }
    let blob = fs::File::open(blob_path(dir, name))?;
    let actual = blob.metadata()?.len();
    let declared = blob_bytes
        .ok_or_else(|| Error::parse("dataset manifest: missing blob_bytes".to_string()))?;
    if actual != declared {
        return Err(Error::parse(format!(
            "dataset: blob is {actual} bytes, manifest declares {declared} (truncated payload?)"
        )));
    }
    Ok(Dataset {
        meta: DatasetMeta {
            spec,
            count,
            start_index: start_index
                .ok_or_else(|| Error::parse("dataset manifest: missing start_index".to_string()))?,
            blob_hash,
        },
        blob,
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SceneSpec {
        SceneSpec { image_h: 32, image_w: 32, max_size: 16.0, min_size: 10.0, ..SceneSpec::default() }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec();
        let meta = write_dataset(dir.path(), "train", &spec, 5, 0).unwrap();
        let ds = read_dataset(dir.path(), "train").unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.meta.blob_hash, meta.blob_hash);
        for i in 0..5 {
            let orig = generate_scene(&spec, i as u64).unwrap();
            let rt = ds.scene(i).unwrap();
            assert_eq!(orig.image.data(), rt.image.data());
            assert_eq!(orig.annotations.len(), rt.annotations.len());
            for (a, b) in orig.annotations.iter().zip(&rt.annotations) {
                assert_eq!(a.mask, b.mask);
                assert_eq!(a.class, b.class);
                assert_eq!(a.depth, b.depth);
                assert_eq!(a.keypoints, b.keypoints);
                assert_eq!(a.bbox.x1.to_bits(), b.bbox.x1.to_bits());
            }
        }
    }

    #[test]
    fn regeneration_from_manifest_spec_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec();
        let meta = write_dataset(dir.path(), "a", &spec, 4, 10).unwrap();
        let ds = read_dataset(dir.path(), "a").unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let meta2 =
            write_dataset(dir2.path(), "b", &ds.meta.spec, ds.meta.count, ds.meta.start_index)
                .unwrap();
        assert_eq!(meta.blob_hash, meta2.blob_hash);
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "x", &tiny_spec(), 1, 0).unwrap();
        let path = dir.path().join("x.manifest");
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("v1", "v9")).unwrap();
        assert!(read_dataset(dir.path(), "x").is_err());
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "x", &tiny_spec(), 2, 0).unwrap();
        let path = dir.path().join("x.blob");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(read_dataset(dir.path(), "x").is_err());
    }

    #[test]
    fn manifest_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "x", &tiny_spec(), 2, 0).unwrap();
        let path = dir.path().join("x.manifest");
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("count = 2", "count = 3")).unwrap();
        assert!(read_dataset(dir.path(), "x").is_err());
    }
}
