//! `RPMD` dataset files.
//!
//! ```text
//! header   "RPMD" | version u32 | count u64 | image_size u32 | config u8 | flags u8
//! record   answer u8 | 16 panels of image_size² u8 (context then choices)
//!          | provenance block (PROVENANCE_LEN bytes, only when flags bit 0)
//! ```
//! Integers are little-endian. Every record has the same length, so record
//! `i` starts at `HEADER_LEN + i * record_len`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::rpm::{
    ArithOp, Attribute, AttributeVector, Config, Provenance, Puzzle, Rule, RuleKind, RuleSet, SetOp, ShapeType,
};

use super::DatasetError;

pub const MAGIC: &[u8; 4] = b"RPMD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 1 + 1;
/// Config byte for data with no generator configuration (imports).
pub const CONFIG_EXTERNAL: u8 = 0xFF;
const FLAG_PROVENANCE: u8 = 1;
const RULE_SLOTS: usize = 4;
pub const PROVENANCE_LEN: usize = 1 + RULE_SLOTS * 4 + 9 * 5 + 8 * 5 + 8;
const NO_ATTRIBUTE: u8 = 0xFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub count: u64,
    pub image_size: u32,
    pub config: Option<Config>,
    pub has_provenance: bool,
}

impl DatasetHeader {
    pub fn record_len(&self) -> usize {
        1 + 16 * (self.image_size as usize).pow(2) + if self.has_provenance { PROVENANCE_LEN } else { 0 }
    }

    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(HEADER_LEN);
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&self.count.to_le_bytes());
        b.extend_from_slice(&self.image_size.to_le_bytes());
        b.push(self.config.map_or(CONFIG_EXTERNAL, Config::tag));
        b.push(if self.has_provenance { FLAG_PROVENANCE } else { 0 });
        b
    }

    fn decode(b: &[u8; HEADER_LEN]) -> Result<Self, DatasetError> {
        if &b[0..4] != MAGIC {
            return Err(DatasetError::BadMagic);
        }
        let version = u32::from_le_bytes(b[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(DatasetError::Version { found: version, expected: VERSION });
        }
        let count = u64::from_le_bytes(b[8..16].try_into().expect("8 bytes"));
        let image_size = u32::from_le_bytes(b[16..20].try_into().expect("4 bytes"));
        let config = match b[20] {
            CONFIG_EXTERNAL => None,
            t => Some(Config::from_tag(t).ok_or_else(|| DatasetError::Corrupt(format!("unknown config tag {t}")))?),
        };
        if b[21] & !FLAG_PROVENANCE != 0 {
            return Err(DatasetError::Corrupt(format!("unknown flags {:#x}", b[21])));
        }
        if image_size == 0 || image_size > 4096 {
            return Err(DatasetError::Corrupt(format!("implausible image size {image_size}")));
        }
        Ok(Self { count, image_size, config, has_provenance: b[21] & FLAG_PROVENANCE != 0 })
    }
}

fn header_for(puzzles: &[Puzzle]) -> Result<DatasetHeader, DatasetError> {
    let first = puzzles.first().ok_or_else(|| DatasetError::Invalid("cannot save an empty dataset".into()))?;
    let has_provenance = first.provenance.is_some();
    let config = first.provenance.as_ref().map(|p| p.rules.config);
    for (i, p) in puzzles.iter().enumerate() {
        p.validate_shape().map_err(|e| DatasetError::Invalid(format!("puzzle {i}: {e}")))?;
        if p.image_size != first.image_size {
            return Err(DatasetError::Invalid(format!("puzzle {i}: mixed image sizes")));
        }
        if p.provenance.is_some() != has_provenance || p.provenance.as_ref().map(|v| v.rules.config) != config {
            return Err(DatasetError::Invalid(format!("puzzle {i}: provenance/config differs from puzzle 0")));
        }
    }
    Ok(DatasetHeader { count: puzzles.len() as u64, image_size: first.image_size as u32, config, has_provenance })
}

fn encode_kind(kind: RuleKind) -> (u8, u8) {
    match kind {
        RuleKind::Constant => (0, 0),
        RuleKind::Progression(s) => (1, s as u8),
        RuleKind::Arithmetic(ArithOp::Plus) => (2, 0),
        RuleKind::Arithmetic(ArithOp::Minus) => (2, 1),
        RuleKind::DistributeThree => (3, 0),
        RuleKind::SetOp(SetOp::And) => (4, 0),
        RuleKind::SetOp(SetOp::Or) => (4, 1),
        RuleKind::SetOp(SetOp::Xor) => (4, 2),
    }
}

fn decode_kind(tag: u8, param: u8) -> Option<RuleKind> {
    Some(match (tag, param) {
        (0, 0) => RuleKind::Constant,
        (1, s) if [-2i8, -1, 1, 2].contains(&(s as i8)) => RuleKind::Progression(s as i8),
        (2, 0) => RuleKind::Arithmetic(ArithOp::Plus),
        (2, 1) => RuleKind::Arithmetic(ArithOp::Minus),
        (3, 0) => RuleKind::DistributeThree,
        (4, 0) => RuleKind::SetOp(SetOp::And),
        (4, 1) => RuleKind::SetOp(SetOp::Or),
        (4, 2) => RuleKind::SetOp(SetOp::Xor),
        _ => return None,
    })
}

fn encode_attrs(a: &AttributeVector, out: &mut Vec<u8>) {
    out.extend_from_slice(&[a.shape.index(), a.size, a.fill, a.count, a.positions]);
}

fn decode_attrs(b: &[u8], config: Config) -> Result<AttributeVector, DatasetError> {
    let shape = ShapeType::from_index(b[0]).ok_or_else(|| DatasetError::Corrupt(format!("shape {}", b[0])))?;
    let a = AttributeVector { shape, size: b[1], fill: b[2], count: b[3], positions: b[4] };
    if !a.is_valid(config) {
        return Err(DatasetError::Corrupt(format!("attribute vector out of range: {a:?}")));
    }
    Ok(a)
}

fn encode_provenance(p: &Provenance, out: &mut Vec<u8>) {
    out.push(p.rules.rules.len() as u8);
    for slot in 0..RULE_SLOTS {
        match p.rules.rules.get(slot) {
            Some(r) => {
                let (tag, param) = encode_kind(r.kind);
                out.extend_from_slice(&[r.attribute.tag(), tag, param, 0]);
            }
            None => out.extend_from_slice(&[0; 4]),
        }
    }
    for a in p.matrix.iter().chain(&p.choices) {
        encode_attrs(a, out);
    }
    out.extend(p.perturbed.iter().map(|a| a.map_or(NO_ATTRIBUTE, Attribute::tag)));
}

fn decode_provenance(b: &[u8], config: Config) -> Result<Provenance, DatasetError> {
    let n = b[0] as usize;
    if n == 0 || n > RULE_SLOTS {
        return Err(DatasetError::Corrupt(format!("rule count {n}")));
    }
    let mut rules = Vec::with_capacity(n);
    for slot in 0..n {
        let r = &b[1 + slot * 4..1 + slot * 4 + 4];
        let attribute = Attribute::from_tag(r[0]).ok_or_else(|| DatasetError::Corrupt(format!("attribute {}", r[0])))?;
        let kind = decode_kind(r[1], r[2]).ok_or_else(|| DatasetError::Corrupt(format!("rule kind {}/{}", r[1], r[2])))?;
        rules.push(Rule { attribute, kind });
    }
    let mut off = 1 + RULE_SLOTS * 4;
    let mut next = || {
        let a = decode_attrs(&b[off..off + 5], config);
        off += 5;
        a
    };
    let matrix: [AttributeVector; 9] = {
        let v = (0..9).map(|_| next()).collect::<Result<Vec<_>, _>>()?;
        v.try_into().expect("nine")
    };
    let choices: [AttributeVector; 8] = {
        let v = (0..8).map(|_| next()).collect::<Result<Vec<_>, _>>()?;
        v.try_into().expect("eight")
    };
    let tail = &b[PROVENANCE_LEN - 8..PROVENANCE_LEN];
    let mut perturbed = [None; 8];
    for (p, &t) in perturbed.iter_mut().zip(tail) {
        if t != NO_ATTRIBUTE {
            *p = Some(Attribute::from_tag(t).ok_or_else(|| DatasetError::Corrupt(format!("perturbed attribute {t}")))?);
        }
    }
    Ok(Provenance { rules: RuleSet { config, rules }, matrix, choices, perturbed })
}

/// Serialises `puzzles` to bytes.
pub fn to_bytes(puzzles: &[Puzzle]) -> Result<Vec<u8>, DatasetError> {
    let header = header_for(puzzles)?;
    let mut out = header.encode();
    out.reserve(header.record_len() * puzzles.len());
    for p in puzzles {
        out.push(p.answer);
        for im in p.context.iter().chain(&p.choices) {
            out.extend_from_slice(im);
        }
        if let Some(prov) = &p.provenance {
            encode_provenance(prov, &mut out);
        }
    }
    Ok(out)
}

pub fn save(puzzles: &[Puzzle], path: &Path) -> Result<(), DatasetError> {
    let bytes = to_bytes(puzzles)?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| DatasetError::io(path, e))?);
    w.write_all(&bytes).map_err(|e| DatasetError::io(path, e))?;
    w.flush().map_err(|e| DatasetError::io(path, e))
}

fn decode_record(header: &DatasetHeader, rec: &[u8]) -> Result<Puzzle, DatasetError> {
    let answer = rec[0];
    if answer > 7 {
        return Err(DatasetError::Corrupt(format!("answer byte {answer}")));
    }
    let s = header.image_size as usize;
    let panels: Vec<Vec<u8>> = (0..16).map(|i| rec[1 + i * s * s..1 + (i + 1) * s * s].to_vec()).collect();
    let provenance = if header.has_provenance {
        let config = header.config.ok_or_else(|| DatasetError::Corrupt("provenance without a config".into()))?;
        Some(decode_provenance(&rec[1 + 16 * s * s..], config)?)
    } else {
        None
    };
    let mut panels = panels.into_iter();
    Ok(Puzzle {
        context: panels.by_ref().take(8).collect(),
        choices: panels.collect(),
        answer,
        image_size: s,
        provenance,
    })
}

/// Parses a whole dataset held in memory.
pub fn from_bytes(bytes: &[u8]) -> Result<(DatasetHeader, Vec<Puzzle>), DatasetError> {
    if bytes.len() < HEADER_LEN {
        return Err(DatasetError::Truncated { expected: HEADER_LEN as u64, found: bytes.len() as u64 });
    }
    let header = DatasetHeader::decode(bytes[..HEADER_LEN].try_into().expect("header length"))?;
    let expected = HEADER_LEN as u64 + header.count * header.record_len() as u64;
    if (bytes.len() as u64) < expected {
        return Err(DatasetError::Truncated { expected, found: bytes.len() as u64 });
    }
    if (bytes.len() as u64) > expected {
        return Err(DatasetError::Corrupt(format!("{} trailing bytes", bytes.len() as u64 - expected)));
    }
    let puzzles = bytes[HEADER_LEN..]
        .chunks_exact(header.record_len())
        .map(|rec| decode_record(&header, rec))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((header, puzzles))
}

pub fn load(path: &Path) -> Result<Vec<Puzzle>, DatasetError> {
    let bytes = std::fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    from_bytes(&bytes).map(|(_, p)| p)
}

/// Reads the header and one record by seeking directly to it.
pub fn load_one(path: &Path, index: u64) -> Result<Puzzle, DatasetError> {
    let mut f = BufReader::new(File::open(path).map_err(|e| DatasetError::io(path, e))?);
    let mut hb = [0u8; HEADER_LEN];
    f.read_exact(&mut hb).map_err(|e| DatasetError::io(path, e))?;
    let header = DatasetHeader::decode(&hb)?;
    if index >= header.count {
        return Err(DatasetError::Invalid(format!("index {index} beyond {} records", header.count)));
    }
    let len = header.record_len();
    f.seek(SeekFrom::Start(HEADER_LEN as u64 + index * len as u64)).map_err(|e| DatasetError::io(path, e))?;
    let mut rec = vec![0u8; len];
    f.read_exact(&mut rec).map_err(|e| DatasetError::io(path, e))?;
    decode_record(&header, &rec)
}
