//! Counter-style random streams: every (seed, purpose, trace) triple gets its
//! own generator, so results do not depend on processing order or on the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct domains never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Heralding trigger times and LO scan offsets.
    Trigger,
    /// State quadrature, background and electronic noise of one trace.
    Synth,
    /// First kept sample of a decimated trace, per decimation factor.
    Decimate(u64),
    /// Free-standing draws in tests and tools.
    Aux(u64),
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Trigger => 0x5452_4947,
            Domain::Synth => 0x5359_4e54,
            Domain::Decimate(n) => 0x4445_4349_0000_0000 ^ n,
            Domain::Aux(k) => 0x4155_5800_0000_0000 ^ k,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, domain, id)`.
pub fn stream(seed: u64, domain: Domain, id: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed) ^ domain.tag());
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(id);
    rng
}
