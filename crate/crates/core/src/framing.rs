//! Tapped-delay-line datasets and the train-on-first-frame protocol.

use crate::channel::SymbolFrame;
use crate::error::{Error, Result};

/// Supervised examples cut from one frame by a centered, symbol-spaced window.
#[derive(Debug, Clone, PartialEq)]
pub struct TapLineDataset {
    /// Row-major `len() x taps` window matrix.
    inputs: Vec<f64>,
    pub target_symbols: Vec<f64>,
    pub target_labels: Vec<u32>,
    taps: usize,
    /// Frame the examples were cut from.
    pub frame_id: usize,
    /// Position in the source frame of each example's target symbol.
    pub source_index: Vec<usize>,
}

impl TapLineDataset {
    pub fn len(&self) -> usize {
        self.target_symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_symbols.is_empty()
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn center(&self) -> usize {
        (self.taps - 1) / 2
    }

    pub fn input(&self, k: usize) -> &[f64] {
        &self.inputs[k * self.taps..(k + 1) * self.taps]
    }

    pub fn inputs_flat(&self) -> &[f64] {
        &self.inputs
    }

    /// Center-tap samples, i.e. the unequalized received signal aligned with
    /// the targets.
    pub fn center_samples(&self) -> Vec<f64> {
        let c = self.center();
        (0..self.len()).map(|k| self.input(k)[c]).collect()
    }
}

pub fn windowize(frame: &SymbolFrame, taps: usize) -> Result<TapLineDataset> {
    if taps == 0 || taps.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "tap count must be odd and positive, got {taps}"
        )));
    }
    let n = frame.len();
    if n < taps {
        return Err(Error::invalid(format!(
            "frame {} has {n} symbols, fewer than the {taps} taps",
            frame.frame_id
        )));
    }
    let center = (taps - 1) / 2;
    let count = n - taps + 1;
    let mut inputs = Vec::with_capacity(count * taps);
    for start in 0..count {
        inputs.extend_from_slice(&frame.rx_samples[start..start + taps]);
    }
    let targets = center..center + count;
    Ok(TapLineDataset {
        inputs,
        target_symbols: frame.tx_symbols[targets.clone()].to_vec(),
        target_labels: frame.tx_labels[targets.clone()].to_vec(),
        taps,
        frame_id: frame.frame_id,
        source_index: targets.collect(),
    })
}

/// The first frame trains; every later frame evaluates.
pub fn split_protocol(frames: &[SymbolFrame]) -> Result<(&SymbolFrame, &[SymbolFrame])> {
    match frames {
        [train, eval @ ..] if !eval.is_empty() => Ok((train, eval)),
        _ => Err(Error::invalid(format!(
            "need at least 2 frames for the train/evaluate split, got {}",
            frames.len()
        ))),
    }
}
