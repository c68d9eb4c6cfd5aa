//! Distance functions over values.
//!
//! The default is the normalized compression distance
//!
//! ```text
//! NCD(x, y) = (C(xy) - min(C(x), C(y))) / max(C(x), C(y))
//! ```
//!
//! where `C` is the compressed length (zlib container by default) of the
//! canonical encoding. The joint term uses `min(C(xy), C(yx))` so the
//! distance is exactly symmetric, and byte-identical encodings short-circuit
//! to `0`.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use flate2::{Compress, Compression, FlushCompress, Status};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::values::{canonicalize, Value};

pub const DEFAULT_LEVEL: u32 = 9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistanceError {
    #[error("{distance} needs numeric operands, got {got}")]
    NotNumeric { distance: &'static str, got: String },
    #[error("euclidean distance needs equal-length sequences ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("unknown compressor `{0}` (expected deflate or zlib)")]
    UnknownCompressor(String),
    #[error("compression level {0} out of range 0..=9")]
    BadLevel(u32),
    #[error("unknown distance `{0}` (expected ncd, abs or euclidean)")]
    UnknownDistance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompressorKind {
    /// Raw deflate stream, no container.
    Deflate,
    /// Deflate with the 2-byte zlib header and adler32 trailer.
    Zlib,
}

impl fmt::Display for CompressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompressorKind::Deflate => "deflate",
            CompressorKind::Zlib => "zlib",
        })
    }
}

impl FromStr for CompressorKind {
    type Err = DistanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deflate" => Ok(CompressorKind::Deflate),
            "zlib" => Ok(CompressorKind::Zlib),
            other => Err(DistanceError::UnknownCompressor(other.to_string())),
        }
    }
}

/// A lossless compressor used as a stand-in for description length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Compressor {
    pub kind: CompressorKind,
    pub level: u32,
}

impl Default for Compressor {
    fn default() -> Self {
        Compressor {
            kind: CompressorKind::Zlib,
            level: DEFAULT_LEVEL,
        }
    }
}

impl fmt::Display for Compressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind, self.level)
    }
}

thread_local! {
    // One reusable stream per (kind, level); reset between calls.
    static STREAMS: RefCell<Vec<((CompressorKind, u32), Compress)>> = const { RefCell::new(Vec::new()) };
}

impl Compressor {
    pub fn new(kind: CompressorKind, level: u32) -> Result<Self, DistanceError> {
        if level > 9 {
            return Err(DistanceError::BadLevel(level));
        }
        Ok(Compressor { kind, level })
    }

    pub fn name(&self) -> String {
        self.kind.to_string()
    }

    /// Compressed length in bytes.
    pub fn compressed_len(&self, data: &[u8]) -> usize {
        self.stream_len(&[data])
    }

    /// Compressed length of `x` followed by `y`: the smaller of one plain
    /// stream and a stream flushed to a block boundary between the two parts.
    pub fn joint_len(&self, x: &[u8], y: &[u8]) -> usize {
        let mut joint = Vec::with_capacity(x.len() + y.len());
        joint.extend_from_slice(x);
        joint.extend_from_slice(y);
        self.stream_len(&[&joint]).min(self.stream_len(&[x, y]))
    }

    fn stream_len(&self, parts: &[&[u8]]) -> usize {
        STREAMS.with(|cell| {
            let mut streams = cell.borrow_mut();
            let key = (self.kind, self.level);
            let idx = match streams.iter().position(|(k, _)| *k == key) {
                Some(i) => i,
                None => {
                    let zlib = self.kind == CompressorKind::Zlib;
                    streams.push((key, Compress::new(Compression::new(self.level), zlib)));
                    streams.len() - 1
                }
            };
            let stream = &mut streams[idx].1;
            stream.reset();
            let total: usize = parts.iter().map(|p| p.len()).sum();
            let mut out = Vec::with_capacity(total + total / 8 + 64);
            let mut fed = 0usize;
            for (i, part) in parts.iter().enumerate() {
                let last = i + 1 == parts.len();
                let flush = if last {
                    FlushCompress::Finish
                } else {
                    FlushCompress::Partial
                };
                loop {
                    let consumed = stream.total_in() as usize - fed;
                    let before = out.len();
                    let status = stream
                        .compress_vec(&part[consumed..], &mut out, flush)
                        .expect("in-memory deflate cannot fail");
                    if status == Status::StreamEnd {
                        break;
                    }
                    let done = stream.total_in() as usize - fed == part.len();
                    if !last && done && out.len() < out.capacity() {
                        break;
                    }
                    if out.len() == before || out.len() == out.capacity() {
                        out.reserve(out.capacity().max(64));
                    }
                }
                fed += part.len();
            }
            stream.total_out() as usize
        })
    }

    /// Length of compressing nothing; a per-format constant.
    pub fn empty_len(&self) -> usize {
        self.compressed_len(&[])
    }
}

/// NCD over raw byte strings. Identical inputs give exactly `0`.
pub fn ncd_bytes(c: &Compressor, x: &[u8], y: &[u8]) -> f64 {
    if x == y {
        return 0.0;
    }
    let cx = c.compressed_len(x);
    let cy = c.compressed_len(y);
    ncd_with_lengths(c, x, y, cx, cy)
}

pub(crate) fn ncd_with_lengths(c: &Compressor, x: &[u8], y: &[u8], cx: usize, cy: usize) -> f64 {
    if x == y {
        return 0.0;
    }
    let cxy = c.joint_len(x, y);
    let cyx = c.joint_len(y, x);
    let lo = cx.min(cy) as f64;
    let hi = cx.max(cy) as f64;
    let num = cxy.min(cyx) as f64 - lo;
    (num / hi).max(0.0)
}

pub fn ncd(c: &Compressor, a: &Value, b: &Value) -> f64 {
    ncd_bytes(c, &canonicalize(a).bytes, &canonicalize(b).bytes)
}

fn numeric(distance: &'static str, v: &Value) -> Result<f64, DistanceError> {
    v.as_f64().ok_or_else(|| DistanceError::NotNumeric {
        distance,
        got: v.to_string(),
    })
}

pub fn abs_diff(a: &Value, b: &Value) -> Result<f64, DistanceError> {
    Ok((numeric("abs_diff", a)? - numeric("abs_diff", b)?).abs())
}

pub fn euclidean(a: &Value, b: &Value) -> Result<f64, DistanceError> {
    let (xs, ys) = match (a, b) {
        (Value::Seq(xs), Value::Seq(ys)) => (xs, ys),
        (Value::Seq(_), other) | (other, _) => {
            return Err(DistanceError::NotNumeric {
                distance: "euclidean",
                got: other.to_string(),
            })
        }
    };
    if xs.len() != ys.len() {
        return Err(DistanceError::LengthMismatch(xs.len(), ys.len()));
    }
    let mut sum = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let d = numeric("euclidean", x)? - numeric("euclidean", y)?;
        sum += d * d;
    }
    Ok(sum.sqrt())
}

/// A named, pure distance over values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistanceFn {
    Ncd(Compressor),
    AbsDiff,
    Euclidean,
}

impl DistanceFn {
    pub fn name(&self) -> String {
        match self {
            DistanceFn::Ncd(c) => format!("ncd[{c}]"),
            DistanceFn::AbsDiff => "abs_diff".into(),
            DistanceFn::Euclidean => "euclidean".into(),
        }
    }

    pub fn eval(&self, a: &Value, b: &Value) -> Result<f64, DistanceError> {
        match self {
            DistanceFn::Ncd(c) => Ok(ncd(c, a, b)),
            DistanceFn::AbsDiff => abs_diff(a, b),
            DistanceFn::Euclidean => euclidean(a, b),
        }
    }

    /// Parses `ncd`, `abs` / `abs_diff`, or `euclidean`; `ncd` uses `c`.
    pub fn parse(s: &str, c: Compressor) -> Result<Self, DistanceError> {
        match s {
            "ncd" => Ok(DistanceFn::Ncd(c)),
            "abs" | "abs_diff" => Ok(DistanceFn::AbsDiff),
            "euclid" | "euclidean" => Ok(DistanceFn::Euclidean),
            other => Err(DistanceError::UnknownDistance(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn r(x: f64) -> Value {
        Value::real(x).unwrap()
    }

    // Golden numbers for zlib-9, frozen from the first run of these tests.
    const GOLDEN_RUN_NCD: f64 = 0.2413793103448276;
    const GOLDEN_RANDOM_NCD: f64 = 1.0202821869488536;

    #[test]
    fn identity_is_zero() {
        let c = Compressor::default();
        for v in [r(1.5), Value::text("hello"), Value::error("E", "boom")] {
            assert_eq!(ncd(&c, &v, &v), 0.0);
        }
    }

    #[test]
    fn near_identical_runs_are_close() {
        let c = Compressor::default();
        let run = "a".repeat(1000);
        let mut changed = run.clone();
        changed.replace_range(999.., "b");
        let d = ncd(&c, &Value::text(run), &Value::text(changed));
        assert!(d < 0.3, "{d}");
        assert_eq!(d, GOLDEN_RUN_NCD);
    }

    #[test]
    fn random_bytes_are_far() {
        let c = Compressor::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<u8> = (0..1000).map(|_| rng.random()).collect();
        let y: Vec<u8> = (0..1000).map(|_| rng.random()).collect();
        let d = ncd(&c, &Value::Bytes(x.clone()), &Value::Bytes(y.clone()));
        assert!(d > 0.8, "{d}");
        assert_eq!(d, GOLDEN_RANDOM_NCD);
        assert!(ncd_bytes(&c, &x, &y) > 0.8);
    }

    #[test]
    fn compressor_is_deterministic() {
        let c = Compressor::default();
        let data = b"the quick brown fox jumps over the lazy dog".repeat(20);
        assert_eq!(c.compressed_len(&data), c.compressed_len(&data));
        assert!(c.compressed_len(&data) < data.len());
        let raw = Compressor::new(CompressorKind::Deflate, 9).unwrap();
        assert_eq!(c.compressed_len(&data), raw.compressed_len(&data) + 6);
        assert_eq!(raw.empty_len(), 2);
        assert_eq!(c.empty_len(), 8);
    }

    #[test]
    fn bad_level_and_name() {
        assert_eq!(
            Compressor::new(CompressorKind::Deflate, 10),
            Err(DistanceError::BadLevel(10))
        );
        assert!("lz4".parse::<CompressorKind>().is_err());
        assert_eq!("zlib".parse::<CompressorKind>(), Ok(CompressorKind::Zlib));
    }

    #[test]
    fn joint_len_is_no_worse_than_plain_concatenation() {
        let c = Compressor::default();
        let x: Vec<u8> = (0..500u32).map(|i| (i * 7919 % 251) as u8).collect();
        let y = b"aabbaabababbbaabab".repeat(20);
        let mut xy = x.clone();
        xy.extend_from_slice(&y);
        assert!(c.joint_len(&x, &y) <= c.compressed_len(&xy));
        assert!(c.joint_len(&x, &y) <= c.compressed_len(&x) + c.compressed_len(&y) + 8);
        assert!(ncd_bytes(&c, &x, &y) <= 1.1);
    }

    #[test]
    fn abs_diff_examples() {
        assert_eq!(abs_diff(&r(3.0), &r(1.0)), Ok(2.0));
        assert_eq!(abs_diff(&r(5.0), &r(5.0)), Ok(0.0));
        assert_eq!(abs_diff(&r(-2.0), &r(8.0)), Ok(10.0));
        assert_eq!(abs_diff(&Value::Integer(2), &r(0.5)), Ok(1.5));
        assert!(matches!(
            abs_diff(&Value::text("x"), &r(1.0)),
            Err(DistanceError::NotNumeric { .. })
        ));
    }

    #[test]
    fn euclidean_examples() {
        let v = |xs: &[f64]| Value::reals(xs).unwrap();
        assert_eq!(euclidean(&v(&[0.0, 0.0]), &v(&[3.0, 4.0])), Ok(5.0));
        assert_eq!(euclidean(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])), Ok(0.0));
        let d = euclidean(&v(&[1.0, 1.0]), &v(&[2.0, 2.0])).unwrap();
        assert!((d - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(
            euclidean(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(DistanceError::LengthMismatch(1, 2))
        );
        assert!(euclidean(&r(1.0), &v(&[1.0])).is_err());
    }

    fn short_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            (-100.0f64..100.0).prop_map(|x| Value::real(x).unwrap()),
            any::<i32>().prop_map(|i| Value::Integer(i as i64)),
            "[a-z ]{0,30}".prop_map(Value::Text),
            ("[A-Z][a-z]{2,10}", "[a-z ]{0,20}").prop_map(|(k, m)| Value::error(k, m)),
            proptest::collection::vec(-10.0f64..10.0, 0..4)
                .prop_map(|xs| Value::reals(&xs).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn ncd_is_symmetric_and_bounded(a in short_value(), b in short_value()) {
            let c = Compressor::default();
            let ab = ncd(&c, &a, &b);
            let ba = ncd(&c, &b, &a);
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!((0.0..=1.1).contains(&ab));
        }

        #[test]
        fn numeric_triangle_inequality(
            x in -1e3f64..1e3, y in -1e3f64..1e3, z in -1e3f64..1e3,
            p in proptest::collection::vec(-1e3f64..1e3, 3),
            q in proptest::collection::vec(-1e3f64..1e3, 3),
            s in proptest::collection::vec(-1e3f64..1e3, 3),
        ) {
            let (x, y, z) = (r(x), r(y), r(z));
            let xz = abs_diff(&x, &z).unwrap();
            prop_assert!(xz <= abs_diff(&x, &y).unwrap() + abs_diff(&y, &z).unwrap() + 1e-9);
            let (p, q, s) = (Value::reals(&p).unwrap(), Value::reals(&q).unwrap(), Value::reals(&s).unwrap());
            let ps = euclidean(&p, &s).unwrap();
            prop_assert!(ps <= euclidean(&p, &q).unwrap() + euclidean(&q, &s).unwrap() + 1e-9);
        }
    }
}
