//! Adapter persistence and report formats.
//!
//! Adapter files are little-endian binary: magic `RDAD`, a u32 format
//! version, the variant byte (1|2|4), `d2`, a layer count, then per layer a
//! length-prefixed UTF-8 name followed by the `theta` and `alpha` arrays as
//! f32, and a trailing CRC32 over every preceding byte. Parameters are
//! stored in 32-bit precision; in-memory math stays 64-bit.
//!
//! Every CSV emitted or consumed here starts with a version comment such
//! as `# road-csv v1 bench`; readers reject unknown versions.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::analysis::{delta_d, delta_m, RepPair};
use crate::error::{Error, Result};
use crate::numeric::DenseVector;
use crate::road::{RoadAdapter, RoadVariant};
use crate::serving::BenchReport;
use crate::trainer::TrainTrace;

pub const ADAPTER_MAGIC: [u8; 4] = *b"RDAD";
pub const ADAPTER_FORMAT_VERSION: u32 = 1;
pub const CSV_FORMAT_VERSION: u32 = 1;

fn variant_byte(v: RoadVariant) -> u8 {
    match v {
        RoadVariant::Road1 => 1,
        RoadVariant::Road2 => 2,
        RoadVariant::Road4 => 4,
    }
}

fn variant_from_byte(b: u8) -> Option<RoadVariant> {
    match b {
        1 => Some(RoadVariant::Road1),
        2 => Some(RoadVariant::Road2),
        4 => Some(RoadVariant::Road4),
        _ => None,
    }
}

/// Serializes named per-layer adapters sharing one (variant, d2).
pub fn encode_adapter_file(layers: &[(String, RoadAdapter)]) -> Result<Vec<u8>> {
    let (_, first) = layers.first().ok_or_else(|| {
        Error::Precondition("adapter file requires at least one layer".into())
    })?;
    let (variant, d2) = (first.variant(), first.d2());
    for (name, a) in layers {
        if a.variant() != variant || a.d2() != d2 {
            return Err(Error::Precondition(format!(
                "layer `{name}` has ({}, {}), expected ({}, {})",
                a.variant().label(),
                a.d2(),
                variant.label(),
                d2
            )));
        }
        if a.theta().iter().chain(a.alpha()).any(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!(
                "layer `{name}` has non-finite parameters"
            )));
        }
    }

    let mut bytes = Vec::new();
    bytes.extend_from_slice(&ADAPTER_MAGIC);
    bytes.extend_from_slice(&ADAPTER_FORMAT_VERSION.to_le_bytes());
    bytes.push(variant_byte(variant));
    bytes.extend_from_slice(&(d2 as u32).to_le_bytes());
    bytes.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for (name, a) in layers {
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        for &t in a.theta() {
            bytes.extend_from_slice(&(t as f32).to_le_bytes());
        }
        for &v in a.alpha() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    Ok(bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptFile {
                field,
                reason: format!(
                    "needs {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn f32_array(&mut self, len: usize, field: &'static str) -> Result<Vec<f64>> {
        let raw = self.take(4 * len, field)?;
        let mut out = Vec::with_capacity(len);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::CorruptFile {
                    field,
                    reason: format!("non-finite value {v}"),
                });
            }
            out.push(v as f64);
        }
        Ok(out)
    }
}

/// Parses and validates an adapter file: magic, version, variant, shape
/// arithmetic, exact length and CRC.
pub fn decode_adapter_file(bytes: &[u8]) -> Result<Vec<(String, RoadAdapter)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != ADAPTER_MAGIC {
        return Err(Error::CorruptFile {
            field: "magic",
            reason: format!("expected RDAD, got {magic:02x?}"),
        });
    }
    let version = cur.u32("version")?;
    if version != ADAPTER_FORMAT_VERSION {
        return Err(Error::CorruptFile {
            field: "version",
            reason: format!("unsupported version {version}"),
        });
    }
    let vb = cur.take(1, "variant")?[0];
    let variant = variant_from_byte(vb).ok_or(Error::CorruptFile {
        field: "variant",
        reason: format!("unknown variant byte {vb}"),
    })?;
    let d2 = cur.u32("d2")? as usize;
    if d2 == 0 || !d2.is_multiple_of(2) {
        return Err(Error::CorruptFile {
            field: "d2",
            reason: format!("d2 must be even and positive, got {d2}"),
        });
    }
    let layer_count = cur.u32("layer_count")? as usize;
    if layer_count == 0 {
        return Err(Error::CorruptFile {
            field: "layer_count",
            reason: "file holds zero layers".into(),
        });
    }
    let plen = variant.param_len(d2);

    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let name_len = cur.u32("name_len")? as usize;
        let name_bytes = cur.take(name_len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|e| Error::CorruptFile {
                field: "name",
                reason: format!("invalid UTF-8: {e}"),
            })?
            .to_string();
        let theta = cur.f32_array(plen, "theta")?;
        let alpha = cur.f32_array(plen, "alpha")?;
        layers.push((name, RoadAdapter::with_params(variant, d2, theta, alpha)?));
    }

    let stored = cur.u32("crc32")?;
    if cur.pos != bytes.len() {
        return Err(Error::CorruptFile {
            field: "length",
            reason: format!("{} trailing bytes after crc", bytes.len() - cur.pos),
        });
    }
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if stored != computed {
        return Err(Error::CorruptFile {
            field: "crc32",
            reason: format!("stored {stored:08x}, computed {computed:08x}"),
        });
    }
    Ok(layers)
}

pub fn save_adapter_file(path: &Path, layers: &[(String, RoadAdapter)]) -> Result<()> {
    let bytes = encode_adapter_file(layers)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_adapter_file(path: &Path) -> Result<Vec<(String, RoadAdapter)>> {
    decode_adapter_file(&fs::read(path)?)
}

/// Single-adapter convenience: one layer named `name`.
pub fn save_adapter(path: &Path, name: &str, adapter: &RoadAdapter) -> Result<()> {
    save_adapter_file(path, &[(name.to_string(), adapter.clone())])
}

/// Loads the first layer of an adapter file.
pub fn load_adapter(path: &Path) -> Result<(String, RoadAdapter)> {
    let mut layers = load_adapter_file(path)?;
    Ok(layers.swap_remove(0))
}

/// `# road-csv v<N> <kind>` comment line every report starts with.
pub fn csv_header(kind: &str) -> String {
    format!("# road-csv v{CSV_FORMAT_VERSION} {kind}")
}

/// Validates a version comment against the expected report kind.
pub fn check_csv_header(line: &str, kind: &str) -> Result<()> {
    let rest = line
        .strip_prefix("# road-csv v")
        .ok_or_else(|| Error::Config(format!("missing version header, got `{line}`")))?;
    let mut parts = rest.split_whitespace();
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Config(format!("malformed version header `{line}`")))?;
    if version != CSV_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported csv version {version} (supported: {CSV_FORMAT_VERSION})"
        )));
    }
    let got_kind = parts.next().unwrap_or("");
    if got_kind != kind {
        return Err(Error::Config(format!(
            "expected a `{kind}` csv, got `{got_kind}`"
        )));
    }
    Ok(())
}

/// Writes bench rows in the fixed schema. `note` lands in the version
/// comment (mode, precision) without touching the row schema.
pub fn write_bench_csv(w: &mut impl Write, reports: &[BenchReport], note: &str) -> Result<()> {
    if note.is_empty() {
        writeln!(w, "{}", csv_header("bench"))?;
    } else {
        writeln!(w, "{} {note}", csv_header("bench"))?;
    }
    writeln!(w, "kernel,b,l,d1,d2,r,wall_ns,flops,tokens_per_second")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Training trace as line-oriented (epoch, loss) records.
pub fn write_trace_csv(w: &mut impl Write, trace: &TrainTrace) -> Result<()> {
    writeln!(w, "{}", csv_header("trace"))?;
    writeln!(w, "epoch,loss")?;
    for (epoch, loss) in trace.epoch_losses.iter().enumerate() {
        writeln!(w, "{epoch},{loss}")?;
    }
    Ok(())
}

/// Representation pairs in long form: one scalar per row, grouped by
/// (layer, token) and ordered by dim.
pub fn write_rep_pairs(
    w: &mut impl Write,
    rows: &[(u32, u32, &DenseVector, &DenseVector)],
) -> Result<()> {
    writeln!(w, "{}", csv_header("reppairs"))?;
    writeln!(w, "layer,token,dim,x0,x")?;
    for (layer, token, x0, x) in rows {
        for dim in 0..x0.len() {
            writeln!(w, "{layer},{token},{dim},{},{}", x0.get(dim), x.get(dim))?;
        }
    }
    Ok(())
}

/// Reads a rep-pair file back into per-layer pairs.
pub fn read_rep_pairs(reader: impl BufRead) -> Result<BTreeMap<u32, Vec<RepPair>>> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty rep-pair file".into()))??;
    check_csv_header(&header, "reppairs")?;
    let columns = lines
        .next()
        .ok_or_else(|| Error::Config("rep-pair file missing column row".into()))??;
    if columns.trim() != "layer,token,dim,x0,x" {
        return Err(Error::Config(format!(
            "unexpected rep-pair columns `{columns}`"
        )));
    }

    type Key = (u32, u32);
    let mut groups: BTreeMap<Key, Vec<(u32, f64, f64)>> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Config(format!(
                "rep-pair row {} has {} fields, expected 5",
                lineno + 3,
                fields.len()
            )));
        }
        let parse_err =
            |what: &str| Error::Config(format!("rep-pair row {}: bad {what}", lineno + 3));
        let layer: u32 = fields[0].parse().map_err(|_| parse_err("layer"))?;
        let token: u32 = fields[1].parse().map_err(|_| parse_err("token"))?;
        let dim: u32 = fields[2].parse().map_err(|_| parse_err("dim"))?;
        let x0: f64 = fields[3].parse().map_err(|_| parse_err("x0"))?;
        let x: f64 = fields[4].parse().map_err(|_| parse_err("x"))?;
        groups.entry((layer, token)).or_default().push((dim, x0, x));
    }

    let mut by_layer: BTreeMap<u32, Vec<RepPair>> = BTreeMap::new();
    for ((layer, token), mut entries) in groups {
        entries.sort_by_key(|e| e.0);
        for (expect, (dim, _, _)) in entries.iter().enumerate() {
            if *dim as usize != expect {
                return Err(Error::Config(format!(
                    "layer {layer} token {token}: dims are not contiguous from 0"
                )));
            }
        }
        let x0 = DenseVector::new(entries.iter().map(|e| e.1).collect());
        let x = DenseVector::new(entries.iter().map(|e| e.2).collect());
        by_layer
            .entry(layer)
            .or_default()
            .push(RepPair::new(x0, x)?);
    }
    Ok(by_layer)
}

/// Per-layer magnitude/angle change statistics: mean and quartiles.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DeltaStats {
    pub layer: u32,
    pub n: usize,
    pub dm_mean: f64,
    pub dm_q25: f64,
    pub dm_q50: f64,
    pub dm_q75: f64,
    pub dd_mean: f64,
    pub dd_q25: f64,
    pub dd_q50: f64,
    pub dd_q75: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Aggregates pairs per layer into `DeltaStats`.
pub fn delta_stats(pairs_by_layer: &BTreeMap<u32, Vec<RepPair>>) -> Result<Vec<DeltaStats>> {
    let mut out = Vec::with_capacity(pairs_by_layer.len());
    for (&layer, pairs) in pairs_by_layer {
        if pairs.is_empty() {
            continue;
        }
        let mut dms: Vec<f64> = pairs.iter().map(delta_m).collect();
        let mut dds: Vec<f64> = pairs.iter().map(delta_d).collect::<Result<Vec<f64>>>()?;
        dms.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        dds.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        out.push(DeltaStats {
            layer,
            n: pairs.len(),
            dm_mean: mean(&dms),
            dm_q25: quantile(&dms, 0.25),
            dm_q50: quantile(&dms, 0.5),
            dm_q75: quantile(&dms, 0.75),
            dd_mean: mean(&dds),
            dd_q25: quantile(&dds, 0.25),
            dd_q50: quantile(&dds, 0.5),
            dd_q75: quantile(&dds, 0.75),
        });
    }
    Ok(out)
}

pub fn write_delta_csv(w: &mut impl Write, stats: &[DeltaStats]) -> Result<()> {
    writeln!(w, "{}", csv_header("deltas"))?;
    writeln!(
        w,
        "layer,n,delta_m_mean,delta_m_q25,delta_m_q50,delta_m_q75,\
         delta_d_mean,delta_d_q25,delta_d_q50,delta_d_q75"
    )?;
    for s in stats {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            s.layer,
            s.n,
            s.dm_mean,
            s.dm_q25,
            s.dm_q50,
            s.dm_q75,
            s.dd_mean,
            s.dd_q25,
            s.dd_q50,
            s.dd_q75
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededRng;

    fn f32_representable_adapter(variant: RoadVariant, d2: usize, seed: u64) -> RoadAdapter {
        let mut rng = SeededRng::new(seed);
        let len = variant.param_len(d2);
        let theta: Vec<f64> = (0..len)
            .map(|_| rng.uniform(-3.0, 3.0) as f32 as f64)
            .collect();
        let alpha: Vec<f64> = (0..len)
            .map(|_| rng.uniform(0.5, 1.5) as f32 as f64)
            .collect();
        RoadAdapter::with_params(variant, d2, theta, alpha).unwrap()
    }

    #[test]
    fn identity_init_payload_layout() {
        let a = RoadAdapter::new(RoadVariant::Road1, 8).unwrap();
        let bytes = encode_adapter_file(&[("fc1".into(), a)]).unwrap();
        // Header: 4 magic + 4 version + 1 variant + 4 d2 + 4 count.
        assert_eq!(&bytes[..4], b"RDAD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 1);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 1);
        // Layer: name_len + "fc1" + 4 thetas + 4 alphas.
        assert_eq!(u32::from_le_bytes(bytes[17..21].try_into().unwrap()), 3);
        assert_eq!(&bytes[21..24], b"fc1");
        let payload = &bytes[24..24 + 32];
        for chunk in payload[..16].chunks_exact(4) {
            assert_eq!(f32::from_le_bytes(chunk.try_into().unwrap()), 0.0);
        }
        for chunk in payload[16..].chunks_exact(4) {
            assert_eq!(f32::from_le_bytes(chunk.try_into().unwrap()), 1.0);
        }
        assert_eq!(bytes.len(), 24 + 32 + 4);
    }

    #[test]
    fn road4_payload_length_arithmetic() {
        let a = RoadAdapter::new(RoadVariant::Road4, 8).unwrap();
        assert_eq!(a.theta().len(), 16);
        assert_eq!(a.alpha().len(), 16);
        let bytes = encode_adapter_file(&[("q_proj".into(), a)]).unwrap();
        let decoded = decode_adapter_file(&bytes).unwrap();
        assert_eq!(decoded[0].1.theta().len(), 16);
        assert_eq!(decoded[0].1.alpha().len(), 16);
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        for variant in [RoadVariant::Road1, RoadVariant::Road2, RoadVariant::Road4] {
            let a = f32_representable_adapter(variant, 6, 7);
            let bytes =
                encode_adapter_file(&[("l0".into(), a.clone()), ("l1".into(), a.clone())])
                    .unwrap();
            let decoded = decode_adapter_file(&bytes).unwrap();
            assert_eq!(decoded.len(), 2);
            assert_eq!(decoded[0].0, "l0");
            assert_eq!(decoded[0].1, a);
            assert_eq!(decoded[1].1, a);
        }
    }

    #[test]
    fn round_trip_quantizes_to_f32() {
        let mut rng = SeededRng::new(9);
        let a = RoadAdapter::random(RoadVariant::Road2, 10, &mut rng).unwrap();
        let bytes = encode_adapter_file(&[("x".into(), a.clone())]).unwrap();
        let b = &decode_adapter_file(&bytes).unwrap()[0].1;
        for (orig, loaded) in a.theta().iter().zip(b.theta()) {
            assert_eq!(*orig as f32 as f64, *loaded);
        }
    }

    #[test]
    fn save_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapter.rdad");
        let a = f32_representable_adapter(RoadVariant::Road1, 8, 11);
        save_adapter(&path, "fc1", &a).unwrap();
        let (name, loaded) = load_adapter(&path).unwrap();
        assert_eq!(name, "fc1");
        assert_eq!(loaded, a);
    }

    #[test]
    fn corrupt_fields_are_named() {
        let a = RoadAdapter::new(RoadVariant::Road1, 4).unwrap();
        let good = encode_adapter_file(&[("m".into(), a)]).unwrap();

        let truncated = &good[..good.len() - 6];
        assert!(matches!(
            decode_adapter_file(truncated),
            Err(Error::CorruptFile { .. })
        ));

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        match decode_adapter_file(&bad_magic) {
            Err(Error::CorruptFile { field: "magic", .. }) => {}
            other => panic!("{other:?}"),
        }

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        match decode_adapter_file(&bad_version) {
            Err(Error::CorruptFile {
                field: "version", ..
            }) => {}
            other => panic!("{other:?}"),
        }

        let mut bad_variant = good.clone();
        bad_variant[8] = 3;
        match decode_adapter_file(&bad_variant) {
            Err(Error::CorruptFile {
                field: "variant", ..
            }) => {}
            other => panic!("{other:?}"),
        }

        let mut bad_crc = good.clone();
        let crc_at = good.len() - 1;
        bad_crc[crc_at] ^= 0xff;
        match decode_adapter_file(&bad_crc) {
            Err(Error::CorruptFile { field: "crc32", .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let a = f32_representable_adapter(RoadVariant::Road1, 4, 13);
        let good = encode_adapter_file(&[("m".into(), a.clone())]).unwrap();
        for pos in 0..good.len() {
            for bit in 0..8 {
                let mut flipped = good.clone();
                flipped[pos] ^= 1 << bit;
                match decode_adapter_file(&flipped) {
                    Err(_) => {}
                    Ok(layers) => {
                        assert_eq!(
                            layers[0].1, a,
                            "byte {pos} bit {bit} silently changed the adapter"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn csv_headers_are_versioned_and_checked() {
        assert_eq!(csv_header("bench"), "# road-csv v1 bench");
        assert!(check_csv_header("# road-csv v1 bench", "bench").is_ok());
        assert!(check_csv_header("# road-csv v1 bench mode=decode", "bench").is_ok());
        assert!(check_csv_header("# road-csv v2 bench", "bench").is_err());
        assert!(check_csv_header("# road-csv v1 trace", "bench").is_err());
        assert!(check_csv_header("kernel,b,l", "bench").is_err());
    }

    #[test]
    fn rep_pairs_round_trip_and_stats() {
        let x0a = DenseVector::new(vec![3.0, 4.0]);
        let xa = DenseVector::new(vec![6.0, 8.0]);
        let x0b = DenseVector::new(vec![1.0, 0.0]);
        let xb = DenseVector::new(vec![0.0, 1.0]);
        let mut buf = Vec::new();
        write_rep_pairs(&mut buf, &[(5, 0, &x0a, &xa), (5, 1, &x0b, &xb)]).unwrap();

        let by_layer = read_rep_pairs(buf.as_slice()).unwrap();
        assert_eq!(by_layer.len(), 1);
        let pairs = &by_layer[&5];
        assert_eq!(pairs.len(), 2);

        let stats = delta_stats(&by_layer).unwrap();
        assert_eq!(stats.len(), 1);
        let s = &stats[0];
        assert_eq!(s.n, 2);
        // ΔM: doubling gives 1, rotating gives 0.
        assert!((s.dm_mean - 0.5).abs() < 1e-12);
        // ΔD: parallel gives 1, orthogonal gives 0.
        assert!((s.dd_mean - 0.5).abs() < 1e-12);

        let mut out = Vec::new();
        write_delta_csv(&mut out, &stats).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("# road-csv v1 deltas\n"));
        assert!(text.contains("\n5,2,0.5,"));
    }

    #[test]
    fn rep_pair_reader_rejects_unknown_version() {
        let text = "# road-csv v9 reppairs\nlayer,token,dim,x0,x\n";
        assert!(read_rep_pairs(text.as_bytes()).is_err());
    }

    #[test]
    fn trace_csv_lines() {
        let trace = TrainTrace {
            epoch_losses: vec![0.5, 0.25],
        };
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "# road-csv v1 trace\nepoch,loss\n0,0.5\n1,0.25\n");
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Any adapter survives a save/load cycle to exactly its f32
            /// quantization, under any layer name.
            #[test]
            fn round_trip_is_f32_quantization(
                half in 1usize..=8,
                vchoice in 0usize..3,
                name in "[a-z_][a-z0-9_.]{0,24}",
                seed in any::<u64>(),
            ) {
                let variant =
                    [RoadVariant::Road1, RoadVariant::Road2, RoadVariant::Road4][vchoice];
                let mut rng = SeededRng::new(seed);
                let a = RoadAdapter::random(variant, 2 * half, &mut rng).unwrap();
                let bytes = encode_adapter_file(&[(name.clone(), a.clone())]).unwrap();
                let decoded = decode_adapter_file(&bytes).unwrap();
                prop_assert_eq!(&decoded[0].0, &name);
                for (orig, got) in a.theta().iter().zip(decoded[0].1.theta()) {
                    prop_assert_eq!(*orig as f32 as f64, *got);
                }
                for (orig, got) in a.alpha().iter().zip(decoded[0].1.alpha()) {
                    prop_assert_eq!(*orig as f32 as f64, *got);
                }
            }
        }
    }
}
