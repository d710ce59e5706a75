//! ECG telemetry over an emulated cellular link: synthetic signal
//! generation, an MQTT 3.1.1 subset, a channel emulator, a small 1-D CNN,
//! log-based latency/corruption analysis and an experiment runner.

pub mod analysis;
pub mod clock;
pub mod ecg;
pub mod inference;
pub mod mqtt;
pub mod netem;
pub mod par;
pub mod runner;
pub mod transport;
