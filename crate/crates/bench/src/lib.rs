//! Shared fixtures for the benchmarks.

use polar_fading::construction::{construct, select_frozen};
use polar_fading::quantizer::quantize_fading_bpsk;
use polar_fading::{CsiMode, DiscreteBmsc, FadingChannelSpec, FadingKind, PolarCodeSpec, QuantizerParams, SelectionTarget};

pub fn rayleigh_5db() -> FadingChannelSpec {
    FadingChannelSpec::from_snr_db(FadingKind::Rayleigh, 5.0, 1.0, 0.0, CsiMode::ReceiverCsi).expect("valid channel")
}

pub fn quantized(q: usize) -> DiscreteBmsc {
    quantize_fading_bpsk(&rayleigh_5db(), QuantizerParams::new(q).expect("valid Q")).expect("quantizes")
}

/// Rate-1/2 code for the 5 dB Rayleigh channel.
pub fn half_rate_code(m: usize) -> PolarCodeSpec {
    let z = construct(&quantized(32), m, 32).expect("constructs");
    select_frozen(&z, SelectionTarget::Rate(0.5)).expect("selects")
}
