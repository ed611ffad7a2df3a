//! `NFOB` observation bundle container and its JSON sidecar.
//!
//! Layout (little-endian): `"NFOB" | u32 version | u32 frames`, then per
//! frame the camera (`fx fy cx cy: f64`, `width height: u32`, translation
//! `3 x f64`, rotation quaternion `i j k w: f64`), the mask (`width height:
//! u32`, one byte per pixel), the detection box (`u8` flag, `u0 v0 u1 v1:
//! u32`), surface points (`u64` count, `3 x f64` each) and depth pixels (`u64`
//! count, `u v: u32`, `depth: f64`, `tag: u8`). The fused points and the
//! metadata index lists follow the frames.

use std::path::Path;

use nfsdf_core::nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};
use nfsdf_core::render::{
    BBox2, BundleMetadata, CameraModel, DepthPixel, DepthTag, FrameObservation, Mask,
    ObservationBundle,
};
use nfsdf_core::Vec3;
use serde::{Deserialize, Serialize};

use crate::binio::{header, ReadResult, Reader, Writer};
use crate::{io, Error, Result};

pub const MAGIC: &[u8; 4] = b"NFOB";
pub const VERSION: u32 = 1;

pub fn encode_bundle(b: &ObservationBundle) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(b.frames.len() as u32);
    for f in &b.frames {
        let c = &f.camera;
        w.f64s(&[c.fx, c.fy, c.cx, c.cy]);
        w.u32(c.width);
        w.u32(c.height);
        w.f64s(c.world_to_camera.translation.vector.as_slice());
        w.f64s(c.world_to_camera.rotation.coords.as_slice());
        w.u32(f.mask.width);
        w.u32(f.mask.height);
        for &on in &f.mask.data {
            w.u8(on as u8);
        }
        match f.bbox {
            Some(bb) => {
                w.u8(1);
                for v in [bb.u0, bb.v0, bb.u1, bb.v1] {
                    w.u32(v);
                }
            }
            None => {
                w.u8(0);
                for _ in 0..4 {
                    w.u32(0);
                }
            }
        }
        points(&mut w, &f.surface_points);
        w.len(f.depth_pixels.len());
        for d in &f.depth_pixels {
            w.u32(d.u);
            w.u32(d.v);
            w.f64(d.depth);
            w.u8(match d.tag {
                DepthTag::Surface => 0,
                DepthTag::Background => 1,
            });
        }
    }
    points(&mut w, &b.fused_points);
    for list in [&b.metadata.empty_frames, &b.metadata.short_frames] {
        w.len(list.len());
        for &i in list.iter() {
            w.u64(i as u64);
        }
    }
    w.buf
}

fn points(w: &mut Writer, pts: &[Vec3]) {
    w.len(pts.len());
    for p in pts {
        w.f64s(p.as_slice());
    }
}

fn read_points(r: &mut Reader<'_>) -> ReadResult<Vec<Vec3>> {
    let n = r.len(24)?;
    (0..n)
        .map(|_| Ok(Vec3::new(r.f64()?, r.f64()?, r.f64()?)))
        .collect()
}

pub fn decode_bundle(data: &[u8]) -> ReadResult<ObservationBundle> {
    let mut r = Reader::new(data);
    header(&mut r, MAGIC, VERSION)?;
    let n_frames = r.u32()? as usize;
    let mut frames = Vec::with_capacity(n_frames.min(1024));
    for fi in 0..n_frames {
        let (fx, fy, cx, cy) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let (width, height) = (r.u32()?, r.u32()?);
        let t = Translation3::new(r.f64()?, r.f64()?, r.f64()?);
        let (i, j, k, qw) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        // stored verbatim so that a rewrite is byte-identical
        let q = UnitQuaternion::new_unchecked(Quaternion::new(qw, i, j, k));
        if !((q.norm() - 1.0).abs() < 1e-9) {
            return Err(format!("frame {fi}: rotation is not a unit quaternion"));
        }
        let camera = CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            world_to_camera: Isometry3::from_parts(t, q),
        };
        camera
            .validate()
            .map_err(|e| format!("frame {fi}: {e}"))?;
        let (mw, mh) = (r.u32()?, r.u32()?);
        let n = mw as usize * mh as usize;
        let data = r
            .take(n)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(format!("frame {fi}: mask byte {b} is not 0 or 1")),
            })
            .collect::<ReadResult<Vec<bool>>>()?;
        let mask = Mask {
            width: mw,
            height: mh,
            data,
        };
        let has_box = r.u8()?;
        let bb = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
        let bbox = match has_box {
            0 => None,
            1 => Some(BBox2 {
                u0: bb[0],
                v0: bb[1],
                u1: bb[2],
                v1: bb[3],
            }),
            _ => return Err(format!("frame {fi}: bad box flag {has_box}")),
        };
        let surface_points = read_points(&mut r)?;
        let nd = r.len(17)?;
        let mut depth_pixels = Vec::with_capacity(nd);
        for _ in 0..nd {
            let (u, v, depth) = (r.u32()?, r.u32()?, r.f64()?);
            let tag = match r.u8()? {
                0 => DepthTag::Surface,
                1 => DepthTag::Background,
                t => return Err(format!("frame {fi}: bad depth tag {t}")),
            };
            depth_pixels.push(DepthPixel { u, v, depth, tag });
        }
        frames.push(FrameObservation {
            camera,
            mask,
            bbox,
            surface_points,
            depth_pixels,
        });
    }
    let fused_points = read_points(&mut r)?;
    let mut lists = [Vec::new(), Vec::new()];
    for list in &mut lists {
        let n = r.len(8)?;
        for _ in 0..n {
            let i = r.u64()? as usize;
            if i >= n_frames {
                return Err(format!("metadata frame index {i} out of range"));
            }
            list.push(i);
        }
    }
    r.finish()?;
    let [empty_frames, short_frames] = lists;
    Ok(ObservationBundle {
        frames,
        fused_points,
        metadata: BundleMetadata {
            empty_frames,
            short_frames,
        },
    })
}

/// Human-readable summary written next to every `.nfob` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSidecar {
    pub format: String,
    pub version: u32,
    pub fused_points: usize,
    pub frames: Vec<FrameSummary>,
    pub metadata: BundleMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub width: u32,
    pub height: u32,
    pub mask_pixels: usize,
    pub bbox: Option<BBox2>,
    pub surface_points: usize,
    pub depth_pixels: usize,
}

pub fn sidecar(b: &ObservationBundle) -> BundleSidecar {
    BundleSidecar {
        format: "NFOB".into(),
        version: VERSION,
        fused_points: b.fused_points.len(),
        frames: b
            .frames
            .iter()
            .map(|f| FrameSummary {
                width: f.camera.width,
                height: f.camera.height,
                mask_pixels: f.mask.count(),
                bbox: f.bbox,
                surface_points: f.surface_points.len(),
                depth_pixels: f.depth_pixels.len(),
            })
            .collect(),
        metadata: b.metadata.clone(),
    }
}

/// Writes `path` and `path.json`.
pub fn write_bundle(path: &Path, b: &ObservationBundle) -> Result<()> {
    io::write(path, &encode_bundle(b))?;
    io::write_json(&io::sidecar_path(path), &sidecar(b))
}

pub fn read_bundle(path: &Path) -> Result<ObservationBundle> {
    let data = io::read(path)?;
    decode_bundle(&data).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nfsdf_core::render::{make_observation_bundle, orbit_cameras, NoiseConfig, PlacedShape};
    use nfsdf_core::shape::{make_shape, FamilyConfig};

    fn sample() -> ObservationBundle {
        let shape = make_shape(3, &FamilyConfig::default()).unwrap();
        let cams = orbit_cameras(2, 2.5, 1.0, 0.2, &Vec3::zeros(), 30.0, 24, 16).unwrap();
        let noise = NoiseConfig {
            point_sigma: 0.01,
            depth_sigma: 0.01,
            ..Default::default()
        };
        make_observation_bundle(&PlacedShape::canonical(shape), &cams, &noise, 20, 9).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let b = sample();
        assert!(b.frames.iter().any(|f| f
            .depth_pixels
            .iter()
            .any(|d| d.tag == DepthTag::Background)));
        let bytes = encode_bundle(&b);
        let back = decode_bundle(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(encode_bundle(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_bundle(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_bundle(&bad).unwrap_err().contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_bundle(&bad).unwrap_err().contains("version"));
        assert!(decode_bundle(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_bundle(&long).unwrap_err().contains("trailing"));
    }

    #[test]
    fn points_only_bundle_round_trips() {
        let b = nfsdf_core::render::points_only_bundle(vec![Vec3::new(1.0, -2.0, 0.5)]);
        assert_eq!(decode_bundle(&encode_bundle(&b)).unwrap(), b);
    }
}
