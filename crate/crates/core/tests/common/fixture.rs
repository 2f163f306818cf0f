use std::io::Write;
use std::path::Path;

use zip::write::SimpleFileOptions;

/// Side of the fixture panels before resampling.
pub const FIXTURE_SIDE: usize = 160;

/// Answers of the three fixture records, in file-name order.
pub const FIXTURE_ANSWERS: [u8; 3] = [2, 5, 7];

/// Grey level of panel `i` in record `r`; constant panels survive area
/// resampling unchanged.
pub fn fixture_level(r: usize, i: usize) -> u8 {
    (r * 60 + i * 11) as u8
}

fn npy(descr: &str, shape: &str, data: &[u8]) -> Vec<u8> {
    let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
    while (10 + header.len() + 1) % 64 != 0 {
        header.push(' ');
    }
    header.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(data);
    out
}

/// Writes three RAVEN-style `.npz` records of 16 constant 160x160 panels.
pub fn write_raven_fixture(dir: &Path) {
    let plane = FIXTURE_SIDE * FIXTURE_SIDE;
    for (r, &answer) in FIXTURE_ANSWERS.iter().enumerate() {
        let image: Vec<u8> = (0..16).flat_map(|i| std::iter::repeat(fixture_level(r, i)).take(plane)).collect();
        let file = std::fs::File::create(dir.join(format!("puzzle_{r}.npz"))).unwrap();
        let mut zip = zip::ZipWriter::new(file);
        let opts = SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
        zip.start_file("image.npy", opts).unwrap();
        zip.write_all(&npy("|u1", &format!("(16, {FIXTURE_SIDE}, {FIXTURE_SIDE})"), &image)).unwrap();
        zip.start_file("target.npy", opts).unwrap();
        zip.write_all(&npy("<i8", "()", &(answer as i64).to_le_bytes())).unwrap();
        zip.finish().unwrap();
    }
}
