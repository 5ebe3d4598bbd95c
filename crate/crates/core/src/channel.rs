//! Synthetic short-reach channel: linear ISI, then a memoryless cubic
//! nonlinearity, then additive white Gaussian noise.
//!
//! Randomness comes from ChaCha20 (`rand_chacha` 0.9) seeded with the
//! configured 64-bit seed. Symbols are drawn from stream 0 and noise from
//! stream 1, so changing the SNR never changes the transmitted symbols.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::file_header;

const SYMBOL_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Minimum frame length in multiples of the channel's delay-line length.
pub const MIN_FRAME_LEN_FACTOR: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// ISI filter h_0..h_L applied to the symbol sequence.
    pub isi_taps: Vec<f64>,
    /// Quadratic coefficient of g(u) = u + a2 u^2 + a3 u^3.
    #[serde(default)]
    pub nl_a2: f64,
    /// Cubic coefficient of g(u).
    #[serde(default)]
    pub nl_a3: f64,
    /// Noiseless-output power over noise variance, in dB. `inf` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

/// Reference ISI filter of the calibrated channel.
pub const REFERENCE_ISI_TAPS: [f64; 3] = [0.9, 0.3, -0.1];
/// Reference SNR of the calibrated channel.
pub const REFERENCE_SNR_DB: f64 = 22.0;
/// Cubic coefficients swept in place of launch power, weakest first. The last
/// entry is the reference (strongest) point.
pub const REFERENCE_A3_SWEEP: [f64; 4] = [0.0, 0.05, 0.1, 0.15];

/// The calibrated reference channel at its strongest nonlinearity.
pub fn default_nonlinear_profile() -> ChannelConfig {
    ChannelConfig {
        isi_taps: REFERENCE_ISI_TAPS.to_vec(),
        nl_a2: 0.0,
        nl_a3: REFERENCE_A3_SWEEP[REFERENCE_A3_SWEEP.len() - 1],
        snr_db: REFERENCE_SNR_DB,
        seed: 0x5eed_0001,
    }
}

impl ChannelConfig {
    pub fn identity(snr_db: f64, seed: u64) -> Self {
        Self {
            isi_taps: vec![1.0],
            nl_a2: 0.0,
            nl_a3: 0.0,
            snr_db,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.isi_taps.first() {
            None => return Err(Error::invalid("isi_taps must not be empty")),
            Some(&0.0) => return Err(Error::invalid("isi_taps[0] must be nonzero")),
            _ => {}
        }
        if self.isi_taps.iter().any(|h| !h.is_finite()) {
            return Err(Error::invalid("isi_taps must be finite"));
        }
        if !self.nl_a2.is_finite() || !self.nl_a3.is_finite() {
            return Err(Error::invalid("nonlinearity coefficients must be finite"));
        }
        // +inf is the documented way to switch noise off.
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid(format!("snr_db must be finite or +inf, got {}", self.snr_db)));
        }
        Ok(())
    }

    #[inline]
    pub fn nonlinearity(&self, u: f64) -> f64 {
        u + self.nl_a2 * u * u + self.nl_a3 * u * u * u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub frame_id: usize,
    pub tx_symbols: Vec<f64>,
    /// Per-symbol m-bit labels, most significant bit is bit 0.
    pub tx_labels: Vec<u32>,
    pub rx_samples: Vec<f64>,
}

impl SymbolFrame {
    pub fn len(&self) -> usize {
        self.tx_symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tx_symbols.is_empty()
    }
}

/// Frames plus the quantities needed to audit the noise.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub frames: Vec<SymbolFrame>,
    /// Channel output before noise, frame by frame.
    pub noiseless: Vec<Vec<f64>>,
    pub signal_power: f64,
    pub noise_variance: f64,
}

impl Simulation {
    /// SNR measured from the realized noise, in dB.
    pub fn empirical_snr_db(&self) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (frame, clean) in self.frames.iter().zip(&self.noiseless) {
            for (r, c) in frame.rx_samples.iter().zip(clean) {
                acc += (r - c) * (r - c);
                n += 1;
            }
        }
        if acc == 0.0 {
            return f64::INFINITY;
        }
        10.0 * (self.signal_power / (acc / n as f64)).log10()
    }
}

pub fn generate_frames(
    constellation: &Constellation,
    cfg: &ChannelConfig,
    n_frames: usize,
    frame_len: usize,
) -> Result<Vec<SymbolFrame>> {
    Ok(simulate(constellation, cfg, n_frames, frame_len)?.frames)
}

/// Run the channel over `n_frames` consecutive frames of one continuous
/// transmission. A warm-up of `L` symbols precedes the first frame so every
/// received sample sees the full ISI memory.
pub fn simulate(
    constellation: &Constellation,
    cfg: &ChannelConfig,
    n_frames: usize,
    frame_len: usize,
) -> Result<Simulation> {
    cfg.validate()?;
    if n_frames < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 frames (one training, one evaluation), got {n_frames}"
        )));
    }
    let min_len = MIN_FRAME_LEN_FACTOR * cfg.isi_taps.len();
    if frame_len < min_len {
        return Err(Error::invalid(format!(
            "frame_len {frame_len} is below the minimum {min_len} for {} channel taps",
            cfg.isi_taps.len()
        )));
    }

    let memory = cfg.isi_taps.len() - 1;
    let total = n_frames * frame_len;

    let mut symbol_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    symbol_rng.set_stream(SYMBOL_STREAM);
    let picker = WeightedIndex::new(constellation.prior())
        .map_err(|e| Error::invalid(format!("prior cannot be sampled: {e}")))?;
    let indices: Vec<usize> = (0..memory + total)
        .map(|_| picker.sample(&mut symbol_rng))
        .collect();
    let symbols: Vec<f64> = indices.iter().map(|&k| constellation.points()[k]).collect();

    let clean: Vec<f64> = (memory..memory + total)
        .map(|k| {
            let u: f64 = cfg
                .isi_taps
                .iter()
                .enumerate()
                .map(|(j, h)| h * symbols[k - j])
                .sum();
            cfg.nonlinearity(u)
        })
        .collect();

    let signal_power = clean.iter().map(|v| v * v).sum::<f64>() / total as f64;
    let noise_variance = if cfg.snr_db == f64::INFINITY {
        0.0
    } else {
        signal_power / 10f64.powf(cfg.snr_db / 10.0)
    };
    let noise_std = noise_variance.sqrt();

    let mut noise_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(NOISE_STREAM);
    let rx: Vec<f64> = if noise_variance == 0.0 {
        clean.clone()
    } else {
        clean
            .iter()
            .map(|&c| {
                let n: f64 = StandardNormal.sample(&mut noise_rng);
                c + noise_std * n
            })
            .collect()
    };

    let mut frames = Vec::with_capacity(n_frames);
    let mut noiseless = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let span = f * frame_len..(f + 1) * frame_len;
        let sym_span = memory + span.start..memory + span.end;
        frames.push(SymbolFrame {
            frame_id: f,
            tx_symbols: symbols[sym_span.clone()].to_vec(),
            tx_labels: indices[sym_span]
                .iter()
                .map(|&k| constellation.labels()[k])
                .collect(),
            rx_samples: rx[span.clone()].to_vec(),
        });
        noiseless.push(clean[span].to_vec());
    }

    Ok(Simulation {
        frames,
        noiseless,
        signal_power,
        noise_variance,
    })
}

pub const FRAME_CSV_COLUMNS: [&str; 5] = ["frame_id", "index", "tx_symbol", "tx_bits_as_int", "rx_sample"];

/// Write frames as CSV with a leading `#` provenance line.
pub fn write_frames_csv(path: &Path, frames: &[SymbolFrame], seed: u64) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", file_header(seed)).map_err(io)?;
    writeln!(out, "{}", FRAME_CSV_COLUMNS.join(",")).map_err(io)?;
    for frame in frames {
        for k in 0..frame.len() {
            writeln!(
                out,
                "{},{},{:?},{},{:?}",
                frame.frame_id, k, frame.tx_symbols[k], frame.tx_labels[k], frame.rx_samples[k]
            )
            .map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Read frames written by [`write_frames_csv`] (or produced externally in the
/// same format). Rows must be grouped by frame and ordered by index.
pub fn read_frames_csv(path: &Path, constellation: &Constellation) -> Result<Vec<SymbolFrame>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .clone();
    let columns: Vec<&str> = headers.iter().collect();
    if columns != FRAME_CSV_COLUMNS {
        return Err(Error::parse(
            path,
            format!("expected columns {:?}, found {:?}", FRAME_CSV_COLUMNS, columns),
        ));
    }

    let mut frames: Vec<SymbolFrame> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |what: &str| Error::parse(path, format!("line {line}: invalid {what} {:?}", record));
        let frame_id: usize = field(0).parse().map_err(|_| bad("frame_id"))?;
        let index: usize = field(1).parse().map_err(|_| bad("index"))?;
        let tx: f64 = field(2).parse().map_err(|_| bad("tx_symbol"))?;
        let label: u32 = field(3).parse().map_err(|_| bad("tx_bits_as_int"))?;
        let rx: f64 = field(4).parse().map_err(|_| bad("rx_sample"))?;

        let point = constellation
            .index_of(tx)
            .ok_or_else(|| bad("tx_symbol (not a constellation point)"))?;
        if constellation.labels()[point] != label {
            return Err(bad("tx_bits_as_int (does not match the symbol's label)"));
        }
        if !rx.is_finite() {
            return Err(bad("rx_sample"));
        }

        let needs_new = frames.last().is_none_or(|f| f.frame_id != frame_id);
        if needs_new {
            if frames.iter().any(|f| f.frame_id == frame_id) {
                return Err(bad("frame_id (rows of a frame must be contiguous)"));
            }
            frames.push(SymbolFrame {
                frame_id,
                tx_symbols: Vec::new(),
                tx_labels: Vec::new(),
                rx_samples: Vec::new(),
            });
        }
        let frame = frames.last_mut().expect("frame pushed above");
        if index != frame.len() {
            return Err(bad("index (rows must be ordered 0, 1, 2, ...)"));
        }
        frame.tx_symbols.push(constellation.points()[point]);
        frame.tx_labels.push(label);
        frame.rx_samples.push(rx);
    }
    if frames.is_empty() {
        return Err(Error::parse(path, "no frames found"));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask8() -> Constellation {
        Constellation::make_ask(3).unwrap()
    }

    #[test]
    fn identity_channel_without_noise() {
        let cfg = ChannelConfig::identity(f64::INFINITY, 3);
        let frames = generate_frames(&ask8(), &cfg, 2, 100).unwrap();
        for f in &frames {
            assert_eq!(f.rx_samples, f.tx_symbols);
        }
    }

    #[test]
    fn same_seed_same_frames() {
        let cfg = default_nonlinear_profile();
        let a = generate_frames(&ask8(), &cfg, 3, 500).unwrap();
        let b = generate_frames(&ask8(), &cfg, 3, 500).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(a, generate_frames(&ask8(), &other, 3, 500).unwrap());
    }

    #[test]
    fn snr_change_keeps_symbols() {
        let c = ask8();
        let mut cfg = default_nonlinear_profile();
        let a = generate_frames(&c, &cfg, 2, 200).unwrap();
        cfg.snr_db = 5.0;
        let b = generate_frames(&c, &cfg, 2, 200).unwrap();
        assert_eq!(a[1].tx_symbols, b[1].tx_symbols);
    }

    #[test]
    fn preconditions() {
        let c = ask8();
        let cfg = default_nonlinear_profile();
        assert!(generate_frames(&c, &cfg, 1, 1000).is_err());
        assert!(generate_frames(&c, &cfg, 2, 29).is_err());
        assert!(generate_frames(&c, &cfg, 2, 30).is_ok());
        let mut bad = cfg.clone();
        bad.isi_taps = vec![0.0, 1.0];
        assert!(generate_frames(&c, &bad, 2, 100).is_err());
        bad.isi_taps = vec![];
        assert!(bad.validate().is_err());
        bad = cfg;
        bad.snr_db = f64::NAN;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn reference_profile_h0_nonzero() {
        let cfg = default_nonlinear_profile();
        assert!(cfg.isi_taps[0] != 0.0);
        for a3 in REFERENCE_A3_SWEEP {
            let cfg = ChannelConfig { nl_a3: a3, ..default_nonlinear_profile() };
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn labels_match_symbols() {
        let c = ask8();
        let frames = generate_frames(&c, &default_nonlinear_profile(), 2, 300).unwrap();
        for f in &frames {
            for (x, l) in f.tx_symbols.iter().zip(&f.tx_labels) {
                let k = c.index_of(*x).unwrap();
                assert_eq!(c.labels()[k], *l);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let c = ask8();
        let frames = generate_frames(&c, &default_nonlinear_profile(), 2, 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.csv");
        write_frames_csv(&path, &frames, 9).unwrap();
        let back = read_frames_csv(&path, &c).unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn csv_rejects_foreign_symbols() {
        let c = ask8();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "frame_id,index,tx_symbol,tx_bits_as_int,rx_sample\n0,0,0.3,1,0.2\n").unwrap();
        let err = read_frames_csv(&path, &c).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
