//! Runtime CPU feature dispatch for the hot kernels.

/// True when AVX2 and FMA are available on this CPU.
#[cfg(target_arch = "x86_64")]
#[inline]
pub fn available() -> bool {
    std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
}

#[cfg(not(target_arch = "x86_64"))]
#[inline]
pub fn available() -> bool {
    false
}
