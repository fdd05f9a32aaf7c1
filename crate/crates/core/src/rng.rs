//! Seeded random substreams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream keyed by
//! `(master seed, purpose, index)`. The purpose selects the key, the index
//! selects the ChaCha stream id, so streams never overlap and adding draws to
//! one device leaves every other device's sequence untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RandomStream = ChaCha8Rng;

/// What a stream is used for. The discriminant is mixed into the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Availability = 1,
    GradientNoise = 2,
    DeviceSampling = 3,
    Problem = 4,
    Study = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn substream(master: u64, purpose: Purpose, index: u64) -> RandomStream {
    let key = splitmix64(master ^ splitmix64(purpose as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// One stream per device for the given purpose.
pub fn device_streams(master: u64, purpose: Purpose, n: usize) -> Vec<RandomStream> {
    (0..n as u64)
        .map(|i| substream(master, purpose, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_sequence() {
        let mut a = substream(42, Purpose::Availability, 3);
        let mut b = substream(42, Purpose::Availability, 3);
        let va: Vec<u64> = (0..16).map(|_| a.random()).collect();
        let vb: Vec<u64> = (0..16).map(|_| b.random()).collect();
        assert_eq!(va, vb);
    }

    #[test]
    fn purposes_and_devices_are_distinct() {
        let mut base = substream(42, Purpose::Availability, 0);
        let mut other_dev = substream(42, Purpose::Availability, 1);
        let mut other_purpose = substream(42, Purpose::GradientNoise, 0);
        let x: u64 = base.random();
        assert_ne!(x, other_dev.random::<u64>());
        assert_ne!(x, other_purpose.random::<u64>());
    }
}
