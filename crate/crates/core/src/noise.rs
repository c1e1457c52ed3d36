//! Disturbance generators and CSV traces.
//!
//! All kinds are indexed by the time step `t = 1..=T` and multiplied by
//! `scale`:
//!
//! | kind            | every entry of `w_t`              |
//! |-----------------|-----------------------------------|
//! | `sin`           | `sin(8πt/T)`                      |
//! | `sin_amplitude` | `sin(8πt/T)·sin(6πt/T)`           |
//! | `constant`      | `1`                               |
//! | `uniform`       | i.i.d. uniform on `[0, 1)`        |
//! | `gaussian`      | i.i.d. standard normal            |
//! | `gaussian_walk` | `w_t ~ N(w_{t−1}, I)`, `w_0 = 0`  |
//!
//! With `per_entry_index` set, the deterministic kinds use the entry index
//! `i = 1..=m` in place of `t`, so each `w_t` is the same vector.
//!
//! Random kinds draw from `ChaCha20Rng::seed_from_u64(seed)`, row by row, so
//! a trace is reproducible bit for bit from `(seed, T, m)` on every platform.

use std::f64::consts::PI;
use std::fmt;
use std::io;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dac::fmt17;
use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Sin,
    SinAmplitude,
    Constant,
    Uniform,
    Gaussian,
    GaussianWalk,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] = [
        NoiseKind::Sin,
        NoiseKind::SinAmplitude,
        NoiseKind::Constant,
        NoiseKind::Uniform,
        NoiseKind::Gaussian,
        NoiseKind::GaussianWalk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Sin => "sin",
            NoiseKind::SinAmplitude => "sin_amplitude",
            NoiseKind::Constant => "constant",
            NoiseKind::Uniform => "uniform",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::GaussianWalk => "gaussian_walk",
        }
    }

    /// Whether `‖w_t‖∞ ≤ scale` holds for every draw.
    pub fn is_bounded(self) -> bool {
        !matches!(self, NoiseKind::Gaussian | NoiseKind::GaussianWalk)
    }

    pub fn is_random(self) -> bool {
        matches!(self, NoiseKind::Uniform | NoiseKind::Gaussian | NoiseKind::GaussianWalk)
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown noise kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "unit")]
    pub scale: f64,
    #[serde(default)]
    pub per_entry_index: bool,
}

fn unit() -> f64 {
    1.0
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind) -> Self {
        Self {
            kind,
            seed: 0,
            scale: 1.0,
            per_entry_index: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

pub fn generate(spec: &NoiseSpec, horizon: usize, m: usize) -> Result<Vec<Vector>> {
    if horizon == 0 || m == 0 {
        return Err(Error::invalid(format!(
            "noise needs T ≥ 1 and m ≥ 1, got T = {horizon}, m = {m}"
        )));
    }
    if !spec.scale.is_finite() {
        return Err(Error::invalid("noise scale must be finite"));
    }
    let big_t = horizon as f64;
    let profile = |s: f64| -> Option<f64> {
        match spec.kind {
            NoiseKind::Sin => Some((8.0 * PI * s / big_t).sin()),
            NoiseKind::SinAmplitude => Some((8.0 * PI * s / big_t).sin() * (6.0 * PI * s / big_t).sin()),
            NoiseKind::Constant => Some(1.0),
            _ => None,
        }
    };
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut walk = Vector::zeros(m);
    let out = (1..=horizon)
        .map(|t| {
            let w = match spec.kind {
                NoiseKind::Uniform => Vector::from_fn(m, |_, _| rng.random::<f64>()),
                NoiseKind::Gaussian => Vector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)),
                NoiseKind::GaussianWalk => {
                    walk += Vector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                    walk.clone()
                }
                _ if spec.per_entry_index => Vector::from_fn(m, |i, _| profile((i + 1) as f64).unwrap_or(0.0)),
                _ => Vector::repeat(m, profile(t as f64).unwrap_or(0.0)),
            };
            w * spec.scale
        })
        .collect();
    Ok(out)
}

/// Largest Euclidean norm in the trace.
pub fn max_norm(ws: &[Vector]) -> f64 {
    ws.iter().map(|w| w.norm()).fold(0.0, f64::max)
}

/// Writes `t,w_1,…,w_m` rows with 17 significant digits.
pub fn write_csv<W: io::Write>(out: W, ws: &[Vector]) -> Result<()> {
    let m = ws.first().map_or(0, |w| w.len());
    let mut wr = csv::Writer::from_writer(out);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=m).map(|i| format!("w_{i}")))
        .collect();
    wr.write_record(&header)?;
    for (idx, w) in ws.iter().enumerate() {
        if w.len() != m {
            return Err(Error::invalid("disturbance trace has mixed dimensions"));
        }
        let row: Vec<String> = std::iter::once((idx + 1).to_string())
            .chain(w.iter().map(|&x| fmt17(x)))
            .collect();
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_csv`]; `t` must run 1, 2, … in order.
pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<Vector>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let m = header.len().saturating_sub(1);
    let expected = std::iter::once("t".to_string()).chain((1..=m).map(|i| format!("w_{i}")));
    if m == 0 || !header.iter().map(str::trim).eq(expected) {
        return Err(Error::Parse(format!(
            "disturbance CSV header must be t,w_1,…,w_m; got {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (idx, rec) in rd.records().enumerate() {
        let rec = rec?;
        let t: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad time index {:?}", &rec[0])))?;
        if t != idx + 1 {
            return Err(Error::Parse(format!("expected t = {}, found {t}", idx + 1)));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad value {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(Vector::from_vec(vals));
    }
    if out.is_empty() {
        return Err(Error::Parse("disturbance CSV has no rows".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sin_vanishes_at_eighth() {
        let ws = generate(&NoiseSpec::new(NoiseKind::Sin), 800, 2).unwrap();
        assert!(ws[99].iter().all(|x| x.abs() < 1e-12));
        assert!((ws[49][0] - 1.0).abs() < 1e-12);
        assert_eq!(ws[0][0], ws[0][1]);
    }

    #[test]
    fn sin_amplitude_product() {
        let ws = generate(&NoiseSpec::new(NoiseKind::SinAmplitude), 100, 1).unwrap();
        let t = 7.0;
        let expect = (8.0 * PI * t / 100.0).sin() * (6.0 * PI * t / 100.0).sin();
        assert!((ws[6][0] - expect).abs() < 1e-15);
    }

    #[test]
    fn constant_is_ones() {
        let ws = generate(&NoiseSpec::new(NoiseKind::Constant).with_scale(0.5), 5, 3).unwrap();
        assert!(ws.iter().all(|w| w.iter().all(|&x| x == 0.5)));
    }

    #[test]
    fn per_entry_reading_is_constant_in_time() {
        let mut spec = NoiseSpec::new(NoiseKind::Sin);
        spec.per_entry_index = true;
        let ws = generate(&spec, 16, 3).unwrap();
        assert!(ws.iter().all(|w| w == &ws[0]));
        assert!((ws[0][1] - (16.0 * PI / 16.0).sin()).abs() < 1e-15);
    }

    #[test]
    fn seeded_kinds_are_reproducible() {
        for kind in [NoiseKind::Uniform, NoiseKind::Gaussian, NoiseKind::GaussianWalk] {
            let spec = NoiseSpec::new(kind).with_seed(42);
            assert_eq!(generate(&spec, 50, 2).unwrap(), generate(&spec, 50, 2).unwrap());
            assert_ne!(
                generate(&spec, 50, 2).unwrap(),
                generate(&spec.clone().with_seed(43), 50, 2).unwrap()
            );
        }
    }

    #[test]
    fn walk_increments_are_gaussian_draws() {
        let spec = NoiseSpec::new(NoiseKind::GaussianWalk).with_seed(9);
        let walk = generate(&spec, 30, 2).unwrap();
        let steps = generate(&NoiseSpec::new(NoiseKind::Gaussian).with_seed(9), 30, 2).unwrap();
        let mut acc = Vector::zeros(2);
        for (w, s) in walk.iter().zip(&steps) {
            acc += s;
            assert_eq!(w, &acc);
        }
    }

    #[test]
    fn bounded_kinds_stay_in_unit_box() {
        for kind in NoiseKind::ALL.into_iter().filter(|k| k.is_bounded()) {
            let ws = generate(&NoiseSpec::new(kind).with_seed(1), 500, 3).unwrap();
            assert!(ws.iter().all(|w| w.amax() <= 1.0), "{kind}");
        }
        let uni = generate(&NoiseSpec::new(NoiseKind::Uniform).with_seed(1), 500, 3).unwrap();
        assert!(uni.iter().flat_map(|w| w.iter()).all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in NoiseKind::ALL {
            assert_eq!(kind.name().parse::<NoiseKind>().unwrap(), kind);
        }
        assert!(matches!("pink".parse::<NoiseKind>(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_empty_shapes() {
        assert!(generate(&NoiseSpec::new(NoiseKind::Sin), 0, 2).is_err());
        assert!(generate(&NoiseSpec::new(NoiseKind::Sin), 2, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ws = generate(&NoiseSpec::new(NoiseKind::Gaussian).with_seed(5), 20, 3).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &ws).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,w_1,w_2,w_3\n1,"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), ws);
    }

    #[test]
    fn csv_rejects_bad_input() {
        assert!(matches!(read_csv("x,w_1\n1,0\n".as_bytes()), Err(Error::Parse(_))));
        assert!(matches!(read_csv("t,w_1\n2,0\n".as_bytes()), Err(Error::Parse(_))));
        assert!(matches!(read_csv("t,w_1\n1,abc\n".as_bytes()), Err(Error::Parse(_))));
        assert!(matches!(read_csv("t,w_1\n".as_bytes()), Err(Error::Parse(_))));
    }
}
