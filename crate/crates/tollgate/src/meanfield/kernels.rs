//! Hot inner loops of the ODE right-hand side and the RK4 update.
//!
//! Each kernel is compiled twice: a portable body, and the same body with AVX2 enabled,
//! chosen at run time. The arithmetic is identical in both, so results do not depend on
//! the machine.

/// Cells below this are flushed to zero, keeping them out of the slow subnormal range.
pub(super) const NEGLIGIBLE: f64 = 1e-200;

macro_rules! dispatch {
    ($(#[$meta:meta])* fn $name:ident($($arg:ident: $ty:ty),* $(,)?) $(-> $ret:ty)? $body:block) => {
        $(#[$meta])*
        pub(super) fn $name($($arg: $ty),*) $(-> $ret)? {
            #[inline(always)]
            fn body($($arg: $ty),*) $(-> $ret)? $body
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn wide($($arg: $ty),*) $(-> $ret)? {
                    body($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: `wide` only requires AVX2, which the running CPU supports.
                    return unsafe { wide($($arg),*) };
                }
            }
            body($($arg),*)
        }
    };
}

dispatch! {
    /// Decay, noise inflow and revision exchange for cells `1..` of one policy row.
    ///
    /// `below_mass` and `below_weighted` hold the mass and payoff-weighted mass of policies
    /// already visited in increasing payoff order, and are updated with this row.
    fn revision_row(dst: &mut [f64], row: &[f64], prev: &[f64], below_mass: &mut [f64], below_weighted: &mut [f64], coef: [f64; 4]) {
        let [wn, gain, fu, leave] = coef;
        let len = dst.len();
        let (row, prev) = (&row[..len], &prev[..len]);
        let (below_mass, below_weighted) = (&mut below_mass[..len], &mut below_weighted[..len]);
        for i in 0..len {
            dst[i] = wn * prev[i] + gain * (fu * below_mass[i] - below_weighted[i]) - leave * row[i];
            below_mass[i] += row[i];
            below_weighted[i] += fu * row[i];
        }
    }
}

dispatch! {
    /// One RK4 stage: `acc = base + w_acc * k` (or `acc += w_acc * k`), `stage = base + w_stage * k`.
    fn rk_stage(acc: &mut [f64], stage: &mut [f64], base: &[f64], k: &[f64], w_acc: f64, w_stage: f64, first: bool) {
        let len = acc.len();
        let (stage, base, k) = (&mut stage[..len], &base[..len], &k[..len]);
        if first {
            for i in 0..len {
                acc[i] = base[i] + w_acc * k[i];
                stage[i] = base[i] + w_stage * k[i];
            }
        } else {
            for i in 0..len {
                acc[i] += w_acc * k[i];
                stage[i] = base[i] + w_stage * k[i];
            }
        }
    }
}

dispatch! {
    /// Last RK4 stage: `acc += w * k`, then negatives and negligible values are set to zero.
    /// Returns the total clipped negative mass.
    fn rk_finish(acc: &mut [f64], k: &[f64], w: f64) -> f64 {
        const LANES: usize = 8;
        let k = &k[..acc.len()];
        let mut clipped = [0.0; LANES];
        let mut chunks = acc.chunks_exact_mut(LANES);
        let mut k_chunks = k.chunks_exact(LANES);
        for (a, d) in (&mut chunks).zip(&mut k_chunks) {
            for l in 0..LANES {
                let v = a[l] + w * d[l];
                clipped[l] += (-v).max(0.0);
                a[l] = if v < NEGLIGIBLE { 0.0 } else { v };
            }
        }
        let mut tail = 0.0;
        for (a, &d) in chunks.into_remainder().iter_mut().zip(k_chunks.remainder()) {
            let v = *a + w * d;
            tail += (-v).max(0.0);
            *a = if v < NEGLIGIBLE { 0.0 } else { v };
        }
        clipped.iter().sum::<f64>() + tail
    }
}

dispatch! {
    /// Sum with independent partial accumulators, so the adds do not form one serial chain.
    fn fast_sum(xs: &[f64]) -> f64 {
        const LANES: usize = 8;
        let mut acc = [0.0; LANES];
        let chunks = xs.chunks_exact(LANES);
        let tail: f64 = chunks.remainder().iter().sum();
        for chunk in chunks {
            for l in 0..LANES {
                acc[l] += chunk[l];
            }
        }
        acc.iter().sum::<f64>() + tail
    }
}
