//! The ten instrumental layers of the track.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One instrumental or vocal strand of the track.
///
/// The declaration order is the round-robin presentation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Layer {
    #[serde(rename = "kick")]
    Kick,
    #[serde(rename = "snare")]
    Snare,
    #[serde(rename = "hi-hats")]
    HiHats,
    #[serde(rename = "clap")]
    Clap,
    #[serde(rename = "shaker")]
    Shaker,
    #[serde(rename = "sub-bass")]
    SubBass,
    #[serde(rename = "female-voice")]
    FemaleVoice,
    #[serde(rename = "bass")]
    Bass,
    #[serde(rename = "chords")]
    Chords,
    #[serde(rename = "male-voice")]
    MaleVoice,
}

pub const LAYER_COUNT: usize = 10;

impl Layer {
    /// All layers in round-robin order.
    pub const ALL: [Layer; LAYER_COUNT] = [
        Layer::Kick,
        Layer::Snare,
        Layer::HiHats,
        Layer::Clap,
        Layer::Shaker,
        Layer::SubBass,
        Layer::FemaleVoice,
        Layer::Bass,
        Layer::Chords,
        Layer::MaleVoice,
    ];

    /// Position in round-robin order, also used as a dense array index.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Layer> {
        Self::ALL.get(index).copied()
    }

    pub fn id(self) -> &'static str {
        match self {
            Layer::Kick => "kick",
            Layer::Snare => "snare",
            Layer::HiHats => "hi-hats",
            Layer::Clap => "clap",
            Layer::Shaker => "shaker",
            Layer::SubBass => "sub-bass",
            Layer::FemaleVoice => "female-voice",
            Layer::Bass => "bass",
            Layer::Chords => "chords",
            Layer::MaleVoice => "male-voice",
        }
    }

    /// Bass and chords are synthesized; every other layer plays a sample.
    pub fn is_synth(self) -> bool {
        matches!(self, Layer::Bass | Layer::Chords)
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown layer `{0}`")]
pub struct UnknownLayer(pub String);

impl FromStr for Layer {
    type Err = UnknownLayer;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Layer::ALL
            .iter()
            .copied()
            .find(|l| l.id() == s)
            .ok_or_else(|| UnknownLayer(s.to_string()))
    }
}

/// A fixed-size map from every layer to a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLayer<T>(pub [T; LAYER_COUNT]);

impl<T: Copy> PerLayer<T> {
    pub fn splat(value: T) -> Self {
        PerLayer([value; LAYER_COUNT])
    }
}

impl<T> PerLayer<T> {
    pub fn iter(&self) -> impl Iterator<Item = (Layer, &T)> {
        Layer::ALL.iter().copied().zip(self.0.iter())
    }
}

impl<T> std::ops::Index<Layer> for PerLayer<T> {
    type Output = T;

    fn index(&self, layer: Layer) -> &T {
        &self.0[layer.index()]
    }
}

impl<T> std::ops::IndexMut<Layer> for PerLayer<T> {
    fn index_mut(&mut self, layer: Layer) -> &mut T {
        &mut self.0[layer.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for layer in Layer::ALL {
            assert_eq!(layer.id().parse::<Layer>().unwrap(), layer);
            let json = serde_json::to_string(&layer).unwrap();
            assert_eq!(json, format!("\"{}\"", layer.id()));
        }
        assert!("subbass".parse::<Layer>().is_err());
    }

    #[test]
    fn index_matches_order() {
        for (i, layer) in Layer::ALL.iter().enumerate() {
            assert_eq!(layer.index(), i);
            assert_eq!(Layer::from_index(i), Some(*layer));
        }
        assert_eq!(Layer::from_index(LAYER_COUNT), None);
    }
}
