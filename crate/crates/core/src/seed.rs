//! Counter-based seed splitting. Each consumer of randomness gets its own
//! child stream derived from `(master, index)`, so adding a consumer never
//! shifts the draws seen by another.

/// One round of SplitMix64 finalization.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn child_seed(master: u64, index: u64) -> u64 {
    mix(master.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(mix(index.wrapping_add(1))))
}

/// Named child streams used by the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Topology = 0,
    Partition = 1,
    Problem = 2,
    StartPoint = 3,
}

pub fn stream_seed(master: u64, stream: Stream) -> u64 {
    child_seed(master, stream as u64)
}
