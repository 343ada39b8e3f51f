//! Seeded random streams. Every consumer draws from its own named stream so
//! adding draws in one component never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Rng = ChaCha8Rng;

pub const ENV: &str = "env";
pub const ACTOR_NOISE: &str = "actor-noise";
pub const SAMPLER: &str = "buffer-sampler";
pub const INIT: &str = "init";
pub const AUGMENT: &str = "augment";
pub const PERTURB: &str = "perturb";
pub const EVAL: &str = "eval";

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Independent generator for `name` under the run seed.
pub fn stream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    rng
}

/// Text form `seedhex:stream:wordpos` used in checkpoint manifests.
pub fn encode_state(rng: &Rng) -> String {
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    format!("{seed}:{}:{}", rng.get_stream(), rng.get_word_pos())
}

pub fn decode_state(s: &str) -> Result<Rng> {
    let bad = || Error::Checkpoint(format!("malformed rng state `{s}`"));
    let mut parts = s.split(':');
    let (Some(hex), Some(stream), Some(pos), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(bad());
    };
    if hex.len() != 64 {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (i, byte) in seed.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream.parse().map_err(|_| bad())?);
    rng.set_word_pos(pos.parse().map_err(|_| bad())?);
    Ok(rng)
}
