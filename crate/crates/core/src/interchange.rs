//! Binary descriptor interchange format.
//!
//! Little-endian layout:
//!
//! | bytes            | content                               |
//! |------------------|---------------------------------------|
//! | 4                | magic `PALD`                          |
//! | 4                | format version, `u32` = 1             |
//! | 4                | count, `u32`                          |
//! | 4                | dim, `u32`                            |
//! | 4 * count * dim  | `f32` values, row-major               |
//! | 4 + n (optional) | `u32` tag length, then UTF-8 tag bytes |
//!
//! The same layout carries distance and score matrix dumps, with one row per
//! query and the tag set to `distmatrix` / `scorematrix`.

use std::path::Path;

use crate::descriptor::{Descriptor, DescriptorSet};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PALD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Raw contents of an interchange file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub count: usize,
    pub dim: usize,
    pub values: Vec<f32>,
    pub tag: Option<String>,
}

pub fn encode(count: usize, dim: usize, values: &[f32], tag: Option<&str>) -> Result<Vec<u8>> {
    if values.len() != count * dim {
        return Err(Error::DimensionMismatch {
            expected: count * dim,
            found: values.len(),
        });
    }
    let to_u32 = |name: &'static str, v: usize| {
        u32::try_from(v).map_err(|_| Error::param(name, format!("{v} does not fit in u32")))
    };
    let mut out =
        Vec::with_capacity(HEADER_LEN + values.len() * 4 + tag.map_or(0, |t| 4 + t.len()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32("count", count)?.to_le_bytes());
    out.extend_from_slice(&to_u32("dim", dim)?.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(tag) = tag {
        out.extend_from_slice(&to_u32("source_tag", tag.len())?.to_le_bytes());
        out.extend_from_slice(tag.as_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode(bytes: &[u8]) -> Result<Table> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = read_u32(bytes, 8) as usize;
    let dim = read_u32(bytes, 12) as usize;
    let payload = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::LengthMismatch(format!("count {count} x dim {dim} overflows")))?;
    let payload_end = HEADER_LEN + payload;
    if bytes.len() < payload_end {
        return Err(Error::Truncated {
            expected: payload_end,
            found: bytes.len(),
        });
    }
    let values = bytes[HEADER_LEN..payload_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();

    let rest = &bytes[payload_end..];
    let tag = match rest.len() {
        0 => None,
        1..=3 => {
            return Err(Error::LengthMismatch(format!(
                "{} stray bytes after {count} x {dim} payload",
                rest.len()
            )))
        }
        _ => {
            let len = read_u32(rest, 0) as usize;
            if rest.len() - 4 != len {
                return Err(Error::LengthMismatch(format!(
                    "tag declares {len} bytes but {} follow the {count} x {dim} payload",
                    rest.len() - 4
                )));
            }
            let tag = std::str::from_utf8(&rest[4..])
                .map_err(|e| Error::LengthMismatch(format!("tag is not UTF-8: {e}")))?;
            Some(tag.to_owned())
        }
    };
    Ok(Table {
        count,
        dim,
        values,
        tag,
    })
}

pub fn write_table(
    path: &Path,
    count: usize,
    dim: usize,
    values: &[f32],
    tag: Option<&str>,
) -> Result<()> {
    let bytes = encode(count, dim, values, tag)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Table> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn encode_set(set: &DescriptorSet) -> Result<Vec<u8>> {
    let values: Vec<f32> = set
        .iter()
        .flat_map(|d| d.values().iter().map(|&v| v as f32))
        .collect();
    let tag = (!set.source_tag.is_empty()).then_some(set.source_tag.as_str());
    encode(set.len(), set.dim(), &values, tag)
}

pub fn decode_set(bytes: &[u8]) -> Result<DescriptorSet> {
    let table = decode(bytes)?;
    let mut set = DescriptorSet::new(table.tag.unwrap_or_default());
    if table.dim == 0 {
        if table.count > 0 {
            return Err(Error::LengthMismatch(format!(
                "{} descriptors of dim 0",
                table.count
            )));
        }
        return Ok(set);
    }
    for row in table.values.chunks_exact(table.dim) {
        set.push(Descriptor::from_f32(row)?)?;
    }
    Ok(set)
}

pub fn write_descriptor_file(set: &DescriptorSet, path: &Path) -> Result<()> {
    let bytes = encode_set(set)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_descriptor_file(path: &Path) -> Result<DescriptorSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_set(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set(count: usize, dim: usize) -> DescriptorSet {
        let descs = (0..count)
            .map(|i| {
                Descriptor::new(
                    (0..dim)
                        .map(|k| (i * dim + k) as f64 * 0.25 - 3.0)
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        DescriptorSet::from_descriptors(descs, "sad").unwrap()
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let bytes = encode(2, 1, &[1.0, -2.0], Some("ab")).unwrap();
        let expected: Vec<u8> = [
            b"PALD".to_vec(),
            vec![1, 0, 0, 0],
            vec![2, 0, 0, 0],
            vec![1, 0, 0, 0],
            1.0f32.to_le_bytes().to_vec(),
            (-2.0f32).to_le_bytes().to_vec(),
            vec![2, 0, 0, 0],
            b"ab".to_vec(),
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trip() {
        let set = sample_set(10, 7);
        let back = decode_set(&encode_set(&set).unwrap()).unwrap();
        assert_eq!(back.len(), 10);
        assert_eq!(back.dim(), 7);
        assert_eq!(back.source_tag, "sad");
        for (a, b) in set.iter().zip(back.iter()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn empty_set_round_trips() {
        let set = DescriptorSet::new("");
        let bytes = encode_set(&set).unwrap();
        assert_eq!(bytes.len(), 16);
        let back = decode_set(&bytes).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode_set(&sample_set(10, 3)).unwrap();
        // drop the tag and the last row
        bytes.truncate(16 + 9 * 3 * 4);
        assert!(matches!(decode(&bytes), Err(Error::Truncated { .. })));
        assert!(matches!(decode(&bytes[..10]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_set(&sample_set(1, 1)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn inconsistent_length() {
        let mut bytes = encode(1, 2, &[1.0, 2.0], None).unwrap();
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(decode(&bytes), Err(Error::LengthMismatch(_))));
        let mut bytes = encode(1, 2, &[1.0, 2.0], Some("tag")).unwrap();
        bytes.push(b'!');
        assert!(matches!(decode(&bytes), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = encode(0, 0, &[], None).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion(2))));
    }

    proptest! {
        #[test]
        fn table_round_trip_is_identity(
            count in 0usize..6,
            dim in 1usize..9,
            seed in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 64),
            tag in prop::option::of("[a-z]{0,12}"),
        ) {
            let values: Vec<f32> = (0..count * dim).map(|i| seed[i % seed.len()]).collect();
            let bytes = encode(count, dim, &values, tag.as_deref()).unwrap();
            let t = decode(&bytes).unwrap();
            prop_assert_eq!(t.count, count);
            prop_assert_eq!(t.dim, dim);
            prop_assert_eq!(t.tag, tag);
            let same = t.values.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
