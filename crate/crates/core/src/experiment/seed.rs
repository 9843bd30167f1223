//! Per-frame seed derivation.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over `bytes`, stable across platforms and toolchains.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seed of one frame of one scan point. Independent of evaluation order, so
/// points and frames can be simulated in any order or in parallel.
pub fn derive_seed(master: u64, stream: &str, point: u64, frame: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ fnv1a64(stream.as_bytes()));
    h = splitmix64(h ^ point);
    splitmix64(h ^ frame.rotate_left(32))
}
