//! Seed-set container formats.
//!
//! Binary layout (little endian):
//!
//! ```text
//! magic    8 bytes  "FSSEED\0\x01"
//! label    u32 length + UTF-8 bytes
//! polarity u8       1 = positive, 0 = negative
//! layers   u32
//! dims     u32
//! count    u32
//! values   count * layers * dims f32, member-major then row-major
//! ```
//!
//! The text variant holds one latent per line with layers separated by `|`,
//! preceded by `key=value` header lines. Both round-trip bit-exactly.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::latent::{LayeredLatent, Polarity, SeedSet};

pub const MAGIC: &[u8; 8] = b"FSSEED\0\x01";
const TEXT_HEADER: &str = "# fairsynth seed set v1";

pub fn write_binary<W: Write>(set: &SeedSet, mut w: W) -> Result<()> {
    let (layers, dims) = set.shape();
    w.write_all(MAGIC)?;
    let label = set.label().as_bytes();
    w.write_all(&u32_len(label.len())?.to_le_bytes())?;
    w.write_all(label)?;
    w.write_all(&[u8::from(set.polarity() == Polarity::Positive)])?;
    for v in [layers, dims, set.len()] {
        w.write_all(&u32_len(v)?.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(set.len() * layers * dims * 4);
    for m in set.members() {
        for v in m.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<SeedSet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a binary seed file".into()));
    }
    let label_len = read_u32(&mut r)? as usize;
    let mut label = vec![0u8; label_len];
    r.read_exact(&mut label)?;
    let label = String::from_utf8(label).map_err(|_| Error::Format("label is not UTF-8".into()))?;
    let mut pol = [0u8; 1];
    r.read_exact(&mut pol)?;
    let polarity = match pol[0] {
        1 => Polarity::Positive,
        0 => Polarity::Negative,
        p => return Err(Error::Format(format!("bad polarity byte {p}"))),
    };
    let layers = read_u32(&mut r)? as usize;
    let dims = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let per = layers
        .checked_mul(dims)
        .ok_or_else(|| Error::Format("latent shape overflows".into()))?;
    let mut members = Vec::with_capacity(count);
    let mut raw = vec![0u8; per * 4];
    for _ in 0..count {
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        members.push(LayeredLatent::from_vec(layers, dims, values)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after seed members".into()));
    }
    SeedSet::new(label, polarity, members)
}

pub fn write_text<W: Write>(set: &SeedSet, mut w: W) -> Result<()> {
    let (layers, dims) = set.shape();
    writeln!(w, "{TEXT_HEADER}")?;
    writeln!(w, "label={}", set.label())?;
    writeln!(w, "polarity={}", set.polarity())?;
    writeln!(w, "layers={layers}")?;
    writeln!(w, "dims={dims}")?;
    for m in set.members() {
        let line = (0..layers)
            .map(|r| m.layer(r).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join(" | ");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_text(src: &str) -> Result<SeedSet> {
    let mut label = None;
    let mut polarity = None;
    let mut layers = None;
    let mut dims = None;
    let mut members = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if members.is_empty() {
            if let Some((k, v)) = line.split_once('=') {
                match k.trim() {
                    "label" => label = Some(v.trim().to_string()),
                    "polarity" => polarity = Some(v.trim().parse::<Polarity>()?),
                    "layers" => layers = Some(parse_usize(v, line_no)?),
                    "dims" => dims = Some(parse_usize(v, line_no)?),
                    other => {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!("unknown header key `{other}`"),
                        })
                    }
                }
                continue;
            }
        }
        let (layers, dims) = match (layers, dims) {
            (Some(r), Some(k)) => (r, k),
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "latent record before layers/dims header".into(),
                })
            }
        };
        let rows: Vec<&str> = line.split('|').collect();
        if rows.len() != layers {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {layers} layers, found {}", rows.len()),
            });
        }
        let mut values = Vec::with_capacity(layers * dims);
        for row in rows {
            let before = values.len();
            for tok in row.split_whitespace() {
                let v: f32 = tok.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad value `{tok}`"),
                })?;
                values.push(v);
            }
            if values.len() - before != dims {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {dims} values per layer, found {}", values.len() - before),
                });
            }
        }
        members.push(LayeredLatent::from_vec(layers, dims, values).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?);
    }
    let label = label.ok_or_else(|| Error::Format("missing label header".into()))?;
    let polarity = polarity.ok_or_else(|| Error::Format("missing polarity header".into()))?;
    SeedSet::new(label, polarity, members)
}

/// Loads either format, chosen by the leading magic bytes.
pub fn load(path: &Path) -> Result<SeedSet> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        read_binary(bytes.as_slice())
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format(format!("{} is neither binary nor text seed file", path.display())))?;
        read_text(&text)
    }
}

pub fn to_binary_bytes(set: &SeedSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_binary(set, &mut out)?;
    Ok(out)
}

pub fn to_text_string(set: &SeedSet) -> Result<String> {
    let mut out = Vec::new();
    write_text(set, &mut out)?;
    String::from_utf8(out).map_err(|e| Error::Format(e.to_string()))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{n} exceeds u32 field")))
}

fn parse_usize(v: &str, line: usize) -> Result<usize> {
    v.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad integer `{}`", v.trim()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{sample_identity_seeds, LatentConfig};
    use proptest::prelude::*;

    fn bits(s: &SeedSet) -> Vec<u32> {
        s.members()
            .iter()
            .flat_map(|m| m.values().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn text_fixture_parses() {
        let src = "label=Bald\npolarity=negative\nlayers=2\ndims=2\n1 2 | 3 4\n-0.5 0 | 1e-3 7\n";
        let s = read_text(src).unwrap();
        assert_eq!(s.label(), "Bald");
        assert_eq!(s.polarity(), Polarity::Negative);
        assert_eq!(s.len(), 2);
        assert_eq!(s.members()[1].get(1, 0), 1e-3);
    }

    #[test]
    fn text_ragged_layer_reports_line() {
        let src = "label=x\npolarity=positive\nlayers=2\ndims=2\n1 2 | 3\n";
        match read_text(src) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_rejects_truncation_and_trailing() {
        let cfg = LatentConfig::new(2, 3, 1).unwrap();
        let s = sample_identity_seeds(2, &cfg).unwrap();
        let bytes = to_binary_bytes(&s).unwrap();
        assert!(read_binary(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(read_binary(longer.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn both_formats_round_trip_bit_exact(seed in any::<u64>(), r in 1usize..4, k in 1usize..6, n in 1usize..4) {
            let cfg = LatentConfig::new(r, k, seed).unwrap();
            let s = sample_identity_seeds(n, &cfg).unwrap();
            let b = read_binary(to_binary_bytes(&s).unwrap().as_slice()).unwrap();
            let t = read_text(&to_text_string(&s).unwrap()).unwrap();
            prop_assert_eq!(bits(&s), bits(&b));
            prop_assert_eq!(bits(&s), bits(&t));
            prop_assert_eq!(b.label(), s.label());
            prop_assert_eq!(t.shape(), s.shape());
        }
    }
}
