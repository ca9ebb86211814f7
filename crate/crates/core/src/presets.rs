//! Named learning-rate presets.
//!
//! `table2-*` are the decaying schedules used for the linear comparisons,
//! `table3-*` the constant rates for the mean-subtracted ReLU network on
//! MNIST. Backprop ignores the Q rate.

use crate::types::{Nonlinearity, ScheduleSpec, TrainConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub bmvr: [ScheduleSpec; 3],
    pub backprop: [ScheduleSpec; 2],
    pub nonlinearity: Nonlinearity,
    /// Hidden width the rates were chosen for, if any.
    pub k: Option<usize>,
}

const fn decay(eta0: f64, t0: f64) -> ScheduleSpec {
    ScheduleSpec::decaying(eta0, t0)
}

const fn fixed(eta0: f64) -> ScheduleSpec {
    ScheduleSpec::constant(eta0)
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "table2-mnist",
        bmvr: [decay(0.01, 1e3), decay(0.01, 1e3), decay(0.003, 1e3)],
        backprop: [decay(0.02, 1e3), decay(0.02, 1e3)],
        nonlinearity: Nonlinearity::Linear,
        k: None,
    },
    Preset {
        name: "table2-fmnist",
        bmvr: [decay(0.013, 1e3), decay(0.013, 1e3), decay(0.005, 1e3)],
        backprop: [decay(0.018, 1e3), decay(0.018, 1e3)],
        nonlinearity: Nonlinearity::Linear,
        k: None,
    },
    Preset {
        name: "table2-cifar10",
        bmvr: [decay(0.01, 1.5e4), decay(0.002, 1.5e4), decay(0.002, 1.5e4)],
        backprop: [decay(0.0065, 1e4), decay(0.0065, 1e4)],
        nonlinearity: Nonlinearity::Linear,
        k: None,
    },
    Preset {
        name: "table2-cifar100",
        bmvr: [decay(0.025, 4e4), decay(0.001, 4e4), decay(0.002, 4e4)],
        backprop: [decay(0.0065, 1.1e4), decay(0.0065, 1.1e4)],
        nonlinearity: Nonlinearity::Linear,
        k: None,
    },
    Preset {
        name: "table3-k64",
        bmvr: [fixed(0.001), fixed(0.0002), fixed(0.001)],
        backprop: [fixed(0.4), fixed(0.4)],
        nonlinearity: Nonlinearity::MeanSubtractedRelu,
        k: Some(64),
    },
    Preset {
        name: "table3-k256",
        bmvr: [fixed(0.2), fixed(0.04), fixed(0.04)],
        backprop: [fixed(0.2), fixed(0.2)],
        nonlinearity: Nonlinearity::MeanSubtractedRelu,
        k: Some(256),
    },
    // No rates are published for k = 16; reuse the k = 64 ones.
    Preset {
        name: "table1-k16",
        bmvr: [fixed(0.001), fixed(0.0002), fixed(0.001)],
        backprop: [fixed(0.4), fixed(0.4)],
        nonlinearity: Nonlinearity::MeanSubtractedRelu,
        k: Some(16),
    },
    // Tuned for `synth_linear(20, 10, 4, 2000, 0.1, _)` with k = 4.
    Preset {
        name: "default-synth",
        bmvr: [decay(0.01, 400.0), decay(0.004, 400.0), decay(0.003, 400.0)],
        backprop: [decay(0.01, 400.0), decay(0.01, 400.0)],
        nonlinearity: Nonlinearity::Linear,
        k: Some(4),
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|p| p.name)
}

impl Preset {
    /// Writes the preset's schedules (for `config.variant`), nonlinearity and
    /// hidden width into `config`.
    pub fn apply(&self, config: &mut TrainConfig) {
        match config.variant {
            Variant::Bmvr | Variant::BmvrDecoupled => {
                config.eta_w1 = self.bmvr[0];
                config.eta_w2 = self.bmvr[1];
                config.eta_q = self.bmvr[2];
            }
            Variant::Backprop => {
                config.eta_w1 = self.backprop[0];
                config.eta_w2 = self.backprop[1];
                config.eta_q = fixed(0.0);
            }
        }
        config.nonlinearity = self.nonlinearity;
        config.tau = 1.0;
        if let Some(k) = self.k {
            config.k = k;
        }
    }
}
