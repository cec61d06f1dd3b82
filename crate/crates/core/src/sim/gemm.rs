/// Cycles for an `M x K` by `K x N` GEMM on a `P x P` output-stationary
/// bitserial systolic array.
///
/// The output is tiled into `ceil(M/P) * ceil(N/P)` tiles. Each tile streams
/// `K` operand pairs through a skewed array, needing `K + 2P - 2` beats to fill
/// and drain. A beat takes as many cycles as the wider operand has bits, since
/// both operands of a MAC must finish before the next pair enters.
pub fn gemm_cycles(m: u64, k: u64, n: u64, act_bits: u8, weight_bits: u8, p: u64) -> u64 {
    let beats = k + 2 * p - 2;
    m.div_ceil(p) * n.div_ceil(p) * beats * act_bits.max(weight_bits) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cycle-by-cycle model of one output-stationary tile. Row `r` of A enters
    /// from the left delayed by `r` beats, column `c` of B from the top delayed
    /// by `c` beats; PE `(r, c)` sees pair `k` at beat `k + r + c`. Returns the
    /// number of beats until every PE has consumed all `k` pairs, along with
    /// the computed product.
    fn systolic_tile(a: &[Vec<i64>], b: &[Vec<i64>], p: usize) -> (u64, Vec<Vec<i64>>) {
        let rows = a.len();
        let kk = b.len();
        let cols = b[0].len();
        let mut acc = vec![vec![0i64; p]; p];
        let mut done = vec![vec![0usize; p]; p];
        let mut beat = 0u64;
        loop {
            let mut all_done = true;
            for r in 0..p {
                for c in 0..p {
                    let k = beat as i64 - r as i64 - c as i64;
                    if k >= 0 && (k as usize) < kk {
                        let av = if r < rows { a[r][k as usize] } else { 0 };
                        let bv = if c < cols { b[k as usize][c] } else { 0 };
                        acc[r][c] += av * bv;
                        done[r][c] += 1;
                    }
                    if done[r][c] < kk {
                        all_done = false;
                    }
                }
            }
            beat += 1;
            if all_done {
                break;
            }
        }
        (beat, acc)
    }

    /// Full GEMM on the reference array, tile by tile; one beat costs
    /// `max(bits)` cycles.
    fn reference_cycles(
        m: usize,
        k: usize,
        n: usize,
        act_bits: u8,
        weight_bits: u8,
        p: usize,
    ) -> u64 {
        let a: Vec<Vec<i64>> = (0..m)
            .map(|i| (0..k).map(|j| (i * 7 + j * 3) as i64 % 5 - 2).collect())
            .collect();
        let b: Vec<Vec<i64>> = (0..k)
            .map(|i| (0..n).map(|j| (i * 2 + j * 5) as i64 % 7 - 3).collect())
            .collect();
        let mut total = 0;
        for tm in (0..m).step_by(p) {
            for tn in (0..n).step_by(p) {
                let at: Vec<Vec<i64>> = a[tm..(tm + p).min(m)].to_vec();
                let bt: Vec<Vec<i64>> = b
                    .iter()
                    .map(|row| row[tn..(tn + p).min(n)].to_vec())
                    .collect();
                let (beats, acc) = systolic_tile(&at, &bt, p);
                for (r, arow) in at.iter().enumerate() {
                    for c in 0..bt[0].len() {
                        let want: i64 = (0..k).map(|j| arow[j] * bt[j][c]).sum();
                        assert_eq!(acc[r][c], want);
                    }
                }
                total += beats * act_bits.max(weight_bits) as u64;
            }
        }
        total
    }

    #[test]
    fn square_example() {
        assert_eq!(gemm_cycles(4, 4, 4, 8, 8, 4), 80);
        assert_eq!(reference_cycles(4, 4, 4, 8, 8, 4), 80);
    }

    #[test]
    fn matches_reference_array() {
        for &(m, k, n, ba, bw, p) in &[
            (5, 3, 7, 8, 8, 4),
            (16, 24, 16, 4, 2, 4),
            (9, 1, 2, 1, 1, 3),
            (10, 6, 3, 3, 7, 2),
            (1, 1, 1, 5, 5, 1),
        ] {
            assert_eq!(
                gemm_cycles(m as u64, k as u64, n as u64, ba, bw, p as u64),
                reference_cycles(m, k, n, ba, bw, p),
                "{m}x{k}x{n} p={p}"
            );
        }
    }

    #[test]
    fn bit_scaling() {
        let full = gemm_cycles(100, 64, 64, 8, 8, 16);
        assert_eq!(gemm_cycles(100, 64, 64, 1, 1, 16) * 8, full);
        assert_eq!(gemm_cycles(100, 64, 64, 2, 8, 16), full);
        assert_eq!(gemm_cycles(100, 64, 64, 8, 2, 16), full);
    }
}
