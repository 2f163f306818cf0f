//! Import of RAVEN-style `.npz` puzzles.
//!
//! Expected layout: one `.npz` archive per puzzle holding `image` (uint8,
//! shape `(16, H, W)`: eight context panels then eight choices) and
//! `target` (integer scalar, 0..=7). Panels are area-resampled to the
//! requested size.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::rpm::Puzzle;

use super::DatasetError;

#[derive(Debug, Clone, PartialEq)]
struct NpyArray {
    descr: String,
    shape: Vec<usize>,
    data: Vec<u8>,
}

fn header_field<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let start = header.find(&format!("'{key}'"))? + key.len() + 2;
    let rest = header[start..].trim_start().strip_prefix(':')?.trim_start();
    Some(rest)
}

fn parse_npy(bytes: &[u8]) -> Result<NpyArray, String> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err("not an .npy array".into());
    }
    let (header_len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize, 12),
        v => return Err(format!("unsupported .npy version {v}")),
    };
    let header = bytes
        .get(start..start + header_len)
        .and_then(|h| std::str::from_utf8(h).ok())
        .ok_or("truncated .npy header")?;
    let descr = header_field(header, "descr")
        .and_then(|r| {
            let q = r.chars().next()?;
            let body = &r[1..];
            Some(body[..body.find(q)?].to_string())
        })
        .ok_or("missing descr")?;
    if header_field(header, "fortran_order").is_some_and(|r| r.starts_with("True")) {
        return Err("fortran-ordered arrays are not supported".into());
    }
    let shape_src = header_field(header, "shape").ok_or("missing shape")?;
    let close = shape_src.find(')').ok_or("malformed shape")?;
    let shape = shape_src[1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("bad dimension {s:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NpyArray { descr, shape, data: bytes[start + header_len..].to_vec() })
}

fn npy_integer_scalar(a: &NpyArray) -> Result<i64, String> {
    if a.shape.iter().product::<usize>() != 1 {
        return Err(format!("target must be a scalar, got shape {:?}", a.shape));
    }
    let d = &a.data;
    let need = |n: usize| if d.len() >= n { Ok(()) } else { Err("truncated target".to_string()) };
    Ok(match a.descr.as_str() {
        "|u1" => {
            need(1)?;
            d[0] as i64
        }
        "|i1" => {
            need(1)?;
            d[0] as i8 as i64
        }
        "<i2" | "<u2" => {
            need(2)?;
            let v = u16::from_le_bytes([d[0], d[1]]);
            if a.descr == "<i2" { v as i16 as i64 } else { v as i64 }
        }
        "<i4" | "<u4" => {
            need(4)?;
            let v = u32::from_le_bytes(d[..4].try_into().expect("4 bytes"));
            if a.descr == "<i4" { v as i32 as i64 } else { v as i64 }
        }
        "<i8" | "<u8" => {
            need(8)?;
            i64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
        }
        other => return Err(format!("unsupported target dtype {other}")),
    })
}

/// Area-average resampling of a `h x w` gray image to `out x out`.
/// Each output pixel is the coverage-weighted mean of the source pixels
/// under its footprint, so constant images stay constant.
pub fn resize_area(src: &[u8], h: usize, w: usize, out: usize) -> Vec<u8> {
    let weights = |n: usize| -> Vec<Vec<(usize, f64)>> {
        let scale = n as f64 / out as f64;
        (0..out)
            .map(|i| {
                let (a, b) = (i as f64 * scale, (i + 1) as f64 * scale);
                let mut v = Vec::new();
                let mut k = a.floor() as usize;
                while (k as f64) < b && k < n {
                    let overlap = (b.min(k as f64 + 1.0) - a.max(k as f64)).max(0.0);
                    if overlap > 0.0 {
                        v.push((k, overlap / scale));
                    }
                    k += 1;
                }
                v
            })
            .collect()
    };
    let (wy, wx) = (weights(h), weights(w));
    let mut dst = Vec::with_capacity(out * out);
    for row in &wy {
        for col in &wx {
            let mut acc = 0.0;
            for &(y, fy) in row {
                for &(x, fx) in col {
                    acc += fy * fx * src[y * w + x] as f64;
                }
            }
            dst.push(acc.round().clamp(0.0, 255.0) as u8);
        }
    }
    dst
}

fn read_entry(archive: &mut zip::ZipArchive<File>, name: &str) -> Result<NpyArray, String> {
    let with_ext = format!("{name}.npy");
    let key = [with_ext.as_str(), name]
        .into_iter()
        .find(|k| archive.index_for_name(k).is_some())
        .ok_or_else(|| format!("missing `{name}` array"))?
        .to_string();
    let mut entry = archive.by_name(&key).map_err(|e| format!("reading `{name}`: {e}"))?;
    let mut bytes = Vec::new();
    entry.read_to_end(&mut bytes).map_err(|e| format!("reading `{name}`: {e}"))?;
    parse_npy(&bytes).map_err(|e| format!("`{name}`: {e}"))
}

fn import_file(path: &Path, image_size: usize) -> Result<Puzzle, String> {
    if path.extension().and_then(|e| e.to_str()) != Some("npz") {
        return Err("not an .npz archive".into());
    }
    let file = File::open(path).map_err(|e| e.to_string())?;
    let mut archive = zip::ZipArchive::new(file).map_err(|e| format!("bad archive: {e}"))?;
    let image = read_entry(&mut archive, "image")?;
    let target = read_entry(&mut archive, "target")?;
    if image.descr != "|u1" {
        return Err(format!("image dtype {} (expected uint8)", image.descr));
    }
    let [depth, h, w] = image.shape[..] else {
        return Err(format!("image must be 3-D, got shape {:?}", image.shape));
    };
    if depth != 16 {
        return Err(format!("image stack has {depth} panels, expected 16"));
    }
    if h == 0 || w == 0 || image.data.len() < depth * h * w {
        return Err("image data shorter than its shape".into());
    }
    let answer = npy_integer_scalar(&target)?;
    if !(0..8).contains(&answer) {
        return Err(format!("target {answer} outside 0..=7"));
    }
    let panels: Vec<Vec<u8>> =
        (0..16).map(|i| resize_area(&image.data[i * h * w..(i + 1) * h * w], h, w, image_size)).collect();
    let mut panels = panels.into_iter();
    Ok(Puzzle {
        context: panels.by_ref().take(8).collect(),
        choices: panels.collect(),
        answer: answer as u8,
        image_size,
        provenance: None,
    })
}

/// Outcome for every file found by [`import_external`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImportReport {
    pub imported: Vec<String>,
    pub rejected: Vec<(String, String)>,
}

impl ImportReport {
    pub fn total(&self) -> usize {
        self.imported.len() + self.rejected.len()
    }
}

/// Imports every regular file of `dir` in file-name order. Bad files are
/// reported and skipped; the rest are returned in the same order.
pub fn import_external(dir: &Path, image_size: usize) -> Result<(Vec<Puzzle>, ImportReport), DatasetError> {
    if image_size == 0 {
        return Err(DatasetError::Invalid("image size must be positive".into()));
    }
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| DatasetError::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut puzzles = Vec::new();
    let mut report = ImportReport::default();
    for path in files {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match import_file(&path, image_size) {
            Ok(p) => {
                puzzles.push(p);
                report.imported.push(name);
            }
            Err(e) => report.rejected.push((name, e)),
        }
    }
    Ok((puzzles, report))
}
