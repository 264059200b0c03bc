//! Flush-to-zero for subnormal floats while a guard is alive.

#[cfg(target_arch = "x86_64")]
pub(crate) struct FlushDenormals(u32);

#[cfg(target_arch = "x86_64")]
impl FlushDenormals {
    const FTZ_DAZ: u32 = 0x8040;

    pub(crate) fn new() -> Self {
        let mut old = 0u32;
        // SAFETY: stmxcsr/ldmxcsr only read and write the SSE control register.
        unsafe {
            std::arch::asm!("stmxcsr [{}]", in(reg) &mut old, options(nostack));
            let new = old | Self::FTZ_DAZ;
            std::arch::asm!("ldmxcsr [{}]", in(reg) &new, options(nostack, readonly));
        }
        FlushDenormals(old)
    }
}

#[cfg(target_arch = "x86_64")]
impl Drop for FlushDenormals {
    fn drop(&mut self) {
        // SAFETY: restores the value saved in `new`.
        unsafe { std::arch::asm!("ldmxcsr [{}]", in(reg) &self.0, options(nostack, readonly)) };
    }
}

#[cfg(not(target_arch = "x86_64"))]
pub(crate) struct FlushDenormals;

#[cfg(not(target_arch = "x86_64"))]
impl FlushDenormals {
    pub(crate) fn new() -> Self {
        FlushDenormals
    }
}
