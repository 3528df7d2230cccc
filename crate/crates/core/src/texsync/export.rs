use std::fs;
use std::path::Path;

use image::{ImageBuffer, Rgba};
use serde_json::json;

use crate::error::{Error, Result};
use crate::guidance::LatentImage;

use super::{LatentTexture, ViewCorrespondence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngDepth {
    Eight,
    Sixteen,
}

fn channel(values: &[f64], c: usize) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => values[c.min(n - 1)],
    }
}

fn write_rgba(path: &Path, width: usize, height: usize, depth: PngDepth, px: impl Fn(usize, usize) -> ([f64; 3], bool)) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let (w, h) = (width as u32, height as u32);
    match depth {
        PngDepth::Eight => {
            let img = ImageBuffer::<Rgba<u8>, _>::from_fn(w, h, |x, y| {
                let (rgb, a) = px(x as usize, y as usize);
                let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                Rgba([q(rgb[0]), q(rgb[1]), q(rgb[2]), if a { 255 } else { 0 }])
            });
            img.save(path)?;
        }
        PngDepth::Sixteen => {
            let img = ImageBuffer::<Rgba<u16>, _>::from_fn(w, h, |x, y| {
                let (rgb, a) = px(x as usize, y as usize);
                let q = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
                Rgba([q(rgb[0]), q(rgb[1]), q(rgb[2]), if a { 65535 } else { 0 }])
            });
            img.save(path)?;
        }
    }
    Ok(())
}

/// Writes the first three channels as RGBA; alpha marks valid texels. Row 0
/// of the texture is v = 0, so it ends up at the bottom of the image.
/// Values are clamped to [0, 1].
pub fn save_texture_png(tex: &LatentTexture, path: &Path, depth: PngDepth) -> Result<()> {
    let n = tex.size;
    write_rgba(path, n, n, depth, |x, y| {
        let t = (n - 1 - y) * n + x;
        let v = tex.texel(t);
        ([channel(v, 0), channel(v, 1), channel(v, 2)], tex.valid[t])
    })
}

/// Writes a view latent as RGBA; `mask` (if given) sets alpha.
pub fn save_view_png(view: &LatentImage, mask: Option<&[bool]>, path: &Path, depth: PngDepth) -> Result<()> {
    let c = view.channels;
    write_rgba(path, view.width, view.height, depth, |x, y| {
        let i = y * view.width + x;
        let v = &view.data[i * c..(i + 1) * c];
        ([channel(v, 0), channel(v, 1), channel(v, 2)], mask.is_none_or(|m| m[i]))
    })
}

fn write_f64(dir: &Path, name: &str, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| Error::io(p, e))
}

fn write_i64(dir: &Path, name: &str, values: &[i64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| Error::io(p, e))
}

/// Dumps the correspondence as little-endian arrays plus `header.json`
/// describing their shapes. Missing entries use face -1 and NaN coordinates.
pub fn save_correspondence_dump(corr: &ViewCorrespondence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let nt = corr.texel_count();

    let mut texel_face = Vec::with_capacity(nt);
    let mut texel_geom = Vec::with_capacity(nt * 6);
    for s in &corr.texels {
        match s {
            Some(s) => {
                texel_face.push(s.face as i64);
                texel_geom.extend(s.point.iter().chain(s.normal.iter()));
            }
            None => {
                texel_face.push(-1);
                texel_geom.extend([f64::NAN; 6]);
            }
        }
    }

    let mut obs_index = Vec::new();
    let mut obs_values = Vec::new();
    for (t, obs) in corr.observations.iter().enumerate() {
        for o in obs {
            obs_index.extend([t as i64, o.view as i64]);
            obs_values.extend([o.screen[0], o.screen[1], o.depth, o.cos]);
        }
    }

    let mut pixel_face = Vec::new();
    let mut pixel_uv = Vec::new();
    for view in &corr.pixels {
        for p in view {
            match p {
                Some(p) => {
                    pixel_face.push(p.face as i64);
                    pixel_uv.extend(p.uv);
                }
                None => {
                    pixel_face.push(-1);
                    pixel_uv.extend([f64::NAN; 2]);
                }
            }
        }
    }

    write_i64(dir, "texel_face.i64", &texel_face)?;
    write_f64(dir, "texel_point_normal.f64", &texel_geom)?;
    write_i64(dir, "obs_texel_view.i64", &obs_index)?;
    write_f64(dir, "obs_screen_depth_cos.f64", &obs_values)?;
    write_i64(dir, "pixel_face.i64", &pixel_face)?;
    write_f64(dir, "pixel_uv.f64", &pixel_uv)?;

    let cameras: Vec<_> = corr
        .cameras
        .iter()
        .map(|c| {
            json!({
                "position": [c.position.x, c.position.y, c.position.z],
                "target": [c.target.x, c.target.y, c.target.z],
                "up": [c.up.x, c.up.y, c.up.z],
                "projection": c.projection,
                "width": c.width,
                "height": c.height,
            })
        })
        .collect();
    let n_obs = obs_index.len() / 2;
    let header = json!({
        "byte_order": "little",
        "texture_size": corr.texture_size,
        "depth_tolerance": corr.depth_tolerance,
        "cameras": cameras,
        "arrays": {
            "texel_face.i64": [nt],
            "texel_point_normal.f64": [nt, 6],
            "obs_texel_view.i64": [n_obs, 2],
            "obs_screen_depth_cos.f64": [n_obs, 4],
            "pixel_face.i64": [pixel_face.len()],
            "pixel_uv.f64": [pixel_face.len(), 2],
        },
    });
    let p = dir.join("header.json");
    fs::write(&p, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(p, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_png_roundtrip_and_flip() {
        let dir = tempfile::tempdir().unwrap();
        let mut tex = LatentTexture::empty(2, 3);
        tex.texel_mut(0).copy_from_slice(&[1.0, 0.0, 0.5]);
        tex.valid[0] = true;
        tex.texel_mut(3).copy_from_slice(&[2.0, -1.0, 0.0]);
        let path = dir.path().join("t.png");
        save_texture_png(&tex, &path, PngDepth::Eight).unwrap();
        let img = image::open(&path).unwrap().to_rgba8();
        assert_eq!(img.get_pixel(0, 1).0, [255, 0, 128, 255]);
        assert_eq!(img.get_pixel(1, 0).0, [255, 0, 0, 0]);

        save_texture_png(&tex, &path, PngDepth::Sixteen).unwrap();
        let img = image::open(&path).unwrap().to_rgba16();
        assert_eq!(img.get_pixel(0, 1).0[2], 32768);
    }
}
