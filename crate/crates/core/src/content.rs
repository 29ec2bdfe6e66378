//! Deterministic synthetic media content.
//!
//! Byte `i` of an object is a pure function of `(seed, i)`, so any range
//! can be generated without materialising the object, and two origins with
//! the same seed serve identical bytes.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn word(seed: u64, index: u64) -> [u8; 8] {
    splitmix64(seed ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93)).to_le_bytes()
}

/// Writes bytes `[offset, offset + out.len())` of the object into `out`.
pub fn fill(seed: u64, offset: u64, out: &mut [u8]) {
    let mut pos = offset;
    let mut i = 0;
    while i < out.len() {
        let w = word(seed, pos / 8);
        let within = (pos % 8) as usize;
        let n = (8 - within).min(out.len() - i);
        out[i..i + n].copy_from_slice(&w[within..within + n]);
        i += n;
        pos += n as u64;
    }
}

pub fn range(seed: u64, offset: u64, len: usize) -> Vec<u8> {
    let mut v = vec![0; len];
    fill(seed, offset, &mut v);
    v
}

/// The whole object. Intended for tests and small objects.
pub fn object(seed: u64, size: u64) -> Vec<u8> {
    range(seed, 0, size as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_agree_with_whole_object() {
        let whole = object(7, 1000);
        for (start, len) in [(0, 1000), (3, 5), (7, 9), (995, 5), (512, 0)] {
            assert_eq!(range(7, start, len), whole[start as usize..start as usize + len]);
        }
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(object(1, 64), object(2, 64));
        assert_eq!(object(1, 64), object(1, 64));
    }
}
