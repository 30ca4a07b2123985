//! `ORLD` binary datasets, their JSON manifest sidecar, and CSV import.
//!
//! Binary layout, little-endian: magic `b"ORLD"`, version `u16`, `obs_dim`
//! `u32`, `act_dim` `u32`, count `u64`, then per transition the state, action,
//! reward and next state as `f64` followed by a one-byte terminal flag.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Manifest, OfflineDataset, Transition};
use crate::error::{Error, FormatError, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"ORLD";
pub const DATASET_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8;
const MAX_DIM: u32 = 1 << 16;

/// Sidecar location: `<path>.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn encode_dataset(dataset: &OfflineDataset) -> Vec<u8> {
    let record = 8 * (2 * dataset.obs_dim() + dataset.act_dim() + 1) + 1;
    let mut out = Vec::with_capacity(HEADER_LEN + record * dataset.len());
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.obs_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.act_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for t in dataset.transitions() {
        let values = t
            .state
            .iter()
            .chain(&t.action)
            .chain(std::iter::once(&t.reward))
            .chain(&t.next_state);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(t.terminal as u8);
    }
    out
}

/// Decodes the binary payload and attaches `manifest`, which must account
/// for every transition.
pub fn decode_dataset(bytes: &[u8], manifest: Manifest) -> std::result::Result<OfflineDataset, FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != DATASET_MAGIC {
        return Err(FormatError::BadMagic {
            expected: DATASET_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: DATASET_VERSION,
        });
    }
    let obs = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let act = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
    if obs == 0 || act == 0 || obs > MAX_DIM || act > MAX_DIM {
        return Err(FormatError::CorruptHeader(format!("dims obs={obs} act={act}")));
    }
    let (obs, act) = (obs as usize, act as usize);
    let record = (8 * (2 * obs + act + 1) + 1) as u64;
    let expected = count
        .checked_mul(record)
        .and_then(|p| p.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| FormatError::CorruptHeader(format!("count {count} overflows")))?;
    if (bytes.len() as u64) < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected {
        return Err(FormatError::CorruptHeader(format!(
            "{} trailing bytes after {count} transitions",
            bytes.len() as u64 - expected
        )));
    }
    if manifest.total() != count {
        return Err(FormatError::Manifest(format!(
            "manifest counts sum to {} but file holds {count} transitions",
            manifest.total()
        )));
    }
    let mut pos = HEADER_LEN;
    let next_f64 = |pos: &mut usize| {
        let v = f64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
        *pos += 8;
        v
    };
    let mut transitions = Vec::with_capacity(count as usize);
    for i in 0..count {
        let state = (0..obs).map(|_| next_f64(&mut pos)).collect();
        let action = (0..act).map(|_| next_f64(&mut pos)).collect();
        let reward = next_f64(&mut pos);
        let next_state = (0..obs).map(|_| next_f64(&mut pos)).collect();
        let terminal = match bytes[pos] {
            0 => false,
            1 => true,
            b => return Err(FormatError::CorruptHeader(format!("transition {i}: terminal flag {b}"))),
        };
        pos += 1;
        transitions.push(Transition {
            state,
            action,
            reward,
            next_state,
            terminal,
        });
    }
    OfflineDataset::new(obs, act, transitions, manifest).map_err(|e| FormatError::CorruptHeader(e.to_string()))
}

/// Writes the binary file and its manifest sidecar.
pub fn save_dataset(dataset: &OfflineDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(dataset)).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let json = serde_json::to_string_pretty(dataset.manifest()).map_err(|e| Error::json(&mpath, e))?;
    std::fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<OfflineDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&mpath, e))?;
    decode_dataset(&bytes, manifest).map_err(|e| Error::format(path, e))
}

fn csv_header(obs: usize, act: usize) -> Vec<String> {
    (0..obs)
        .map(|i| format!("s{i}"))
        .chain((0..act).map(|i| format!("a{i}")))
        .chain(std::iter::once("r".to_string()))
        .chain((0..obs).map(|i| format!("ns{i}")))
        .chain(std::iter::once("done".to_string()))
        .collect()
}

/// Exports with the header `s0..,a0..,r,ns0..,done`. Values use Rust's
/// shortest round-trip float formatting, so import is exact.
pub fn export_csv(dataset: &OfflineDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv_header(dataset.obs_dim(), dataset.act_dim()).join(",");
    out.push('\n');
    for t in dataset.transitions() {
        for v in t.state.iter().chain(&t.action).chain(std::iter::once(&t.reward)).chain(&t.next_state) {
            write!(out, "{v},").unwrap();
        }
        out.push_str(if t.terminal { "1\n" } else { "0\n" });
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Imports `(s, a, r, s', done)` rows; dims are inferred from the header.
pub fn import_csv(path: impl AsRef<Path>, env: &str, policy: &str, seed: u64) -> Result<OfflineDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let csv_err = |msg: String| Error::format(path, FormatError::Csv(msg));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| csv_err("missing header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let obs = cols.iter().filter(|c| c.starts_with('s')).count();
    let act = cols.iter().filter(|c| c.starts_with('a')).count();
    if obs == 0 || act == 0 || cols != csv_header(obs, act) {
        return Err(csv_err(format!(
            "header must be s0..s{{o-1}},a0..a{{k-1}},r,ns0..ns{{o-1}},done; got '{header}'"
        )));
    }
    let mut transitions = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(csv_err(format!(
                "line {}: expected {} fields, found {}",
                lineno + 1,
                cols.len(),
                fields.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| csv_err(format!("line {}: '{s}': {e}", lineno + 1)))
        };
        let values = fields[..fields.len() - 1]
            .iter()
            .map(|f| num(f))
            .collect::<Result<Vec<f64>>>()?;
        let terminal = match fields[fields.len() - 1].to_ascii_lowercase().as_str() {
            "1" | "true" | "1.0" => true,
            "0" | "false" | "0.0" => false,
            other => return Err(csv_err(format!("line {}: bad done flag '{other}'", lineno + 1))),
        };
        transitions.push(Transition {
            state: values[..obs].to_vec(),
            action: values[obs..obs + act].to_vec(),
            reward: values[obs + act],
            next_state: values[obs + act + 1..].to_vec(),
            terminal,
        });
    }
    let manifest = Manifest::single(env, policy, transitions.len() as u64, seed);
    OfflineDataset::new(obs, act, transitions, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::random_dataset;

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let d = random_dataset(100, 3, 2, "expert", 5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.orld");
        save_dataset(&d, &p).unwrap();
        assert!(manifest_path(&p).exists());
        let back = load_dataset(&p).unwrap();
        assert_eq!(back, d);
        assert_eq!(encode_dataset(&back), encode_dataset(&d));
    }

    #[test]
    fn each_corruption_has_its_own_error() {
        let d = random_dataset(4, 2, 1, "x", 1);
        let bytes = encode_dataset(&d);
        let m = d.manifest().clone();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"ORLW");
        assert!(matches!(decode_dataset(&bad, m.clone()), Err(FormatError::BadMagic { .. })));

        let mut bad = bytes.clone();
        bad[4..6].copy_from_slice(&2u16.to_le_bytes());
        assert!(matches!(
            decode_dataset(&bad, m.clone()),
            Err(FormatError::UnsupportedVersion { found: 2, .. })
        ));

        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() - 1], m.clone()),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(decode_dataset(&bytes[..10], m.clone()), Err(FormatError::Truncated { .. })));

        let mut bad = bytes.clone();
        bad[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_dataset(&bad, m.clone()), Err(FormatError::CorruptHeader(_))));

        let mut short = m.clone();
        short.sources[0].count = 3;
        assert!(matches!(decode_dataset(&bytes, short), Err(FormatError::Manifest(_))));
    }

    #[test]
    fn load_reports_path_and_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.orld");
        let d = random_dataset(2, 1, 1, "x", 1);
        save_dataset(&d, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'Z';
        std::fs::write(&p, bytes).unwrap();
        match load_dataset(&p) {
            Err(Error::Format { source: FormatError::BadMagic { .. }, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_import_matches_binary_load() {
        let d = random_dataset(37, 3, 2, "medium", 8);
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("d.orld");
        let csv = dir.path().join("d.csv");
        save_dataset(&d, &bin).unwrap();
        export_csv(&d, &csv).unwrap();
        let from_csv = import_csv(&csv, "test", "medium", 8).unwrap();
        let from_bin = load_dataset(&bin).unwrap();
        assert_eq!(from_csv, from_bin);
    }

    #[test]
    fn csv_rejects_bad_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "s0,a0,reward,ns0,done\n0,0,0,0,0\n").unwrap();
        assert!(import_csv(&p, "e", "p", 0).is_err());
        std::fs::write(&p, "s0,a0,r,ns0,done\n0,0,0,0\n").unwrap();
        assert!(import_csv(&p, "e", "p", 0).is_err());
        std::fs::write(&p, "s0,a0,r,ns0,done\n0,0.5,1,2,true\n").unwrap();
        let d = import_csv(&p, "e", "p", 0).unwrap();
        assert_eq!(d.len(), 1);
        assert!(d.transitions()[0].terminal);
    }
}
