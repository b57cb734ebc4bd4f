const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Bucket id of `token` for categorical feature `feature_index`:
/// `FNV-1a-64("f:<index>:<token>") mod buckets`.
pub fn hash_feature(feature_index: usize, token: &str, buckets: u32) -> u32 {
    assert!(buckets >= 1, "bucket count must be positive");
    let key = format!("f:{feature_index}:{token}");
    (fnv1a64(key.as_bytes()) % u64::from(buckets)) as u32
}
