//! Sub-system presets A..E.
//!
//! - A: mean pooling, cross-entropy.
//! - B: A with the Jeffreys loss.
//! - C: two feature streams, mean pooling, cross-entropy.
//! - D: two streams, attention pooling, split head/pooling learning rates.
//! - E: D's configuration, meant to be trained on consensus-augmented labels.

use clap::ValueEnum;
use emofuse::losses::{JeffreysParams, LossKind};
use emofuse::pooling::PoolingKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "verbatim")]
pub enum Preset {
    A,
    B,
    C,
    D,
    E,
}

pub struct PresetDefaults {
    pub loss: LossKind,
    pub pooling: PoolingKind,
    pub streams: usize,
}

impl Preset {
    pub fn defaults(self) -> PresetDefaults {
        match self {
            Preset::A => PresetDefaults {
                loss: LossKind::Nll,
                pooling: PoolingKind::Mean,
                streams: 1,
            },
            Preset::B => PresetDefaults {
                loss: LossKind::Jeffreys(JeffreysParams::default()),
                pooling: PoolingKind::Mean,
                streams: 1,
            },
            Preset::C => PresetDefaults {
                loss: LossKind::Nll,
                pooling: PoolingKind::Mean,
                streams: 2,
            },
            Preset::D | Preset::E => PresetDefaults {
                loss: LossKind::Nll,
                pooling: PoolingKind::Attention,
                streams: 2,
            },
        }
    }
}
