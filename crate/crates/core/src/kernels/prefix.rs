use super::{check_finite, run_region, ExecMode, KernelError, Outcome};
use crate::archsim::{CoreGroup, SharedArray};
use crate::offload::static_chunk;

/// Elements per DMA tile.
const TILE: usize = 2048;

/// `omega[k] = Σ_{j≤k} div[j]·dp[j]`, accumulated left to right.
pub fn prefix_sum_reference(div: &[f64], dp: &[f64]) -> Result<Vec<f64>, KernelError> {
    if div.len() != dp.len() {
        return Err(KernelError::LengthMismatch(div.len(), dp.len()));
    }
    let mut acc = 0.0;
    Ok(div
        .iter()
        .zip(dp)
        .map(|(d, p)| {
            acc += d * p;
            acc
        })
        .collect())
}

/// Chunked vertical scan.
///
/// Each worker scans its contiguous chunk locally, sends the chunk total to
/// worker 0 by RMA, and receives back the carry of all preceding chunks,
/// which worker 0 accumulates in chunk order. Adding the carry changes the
/// association of the sums, so results agree with the serial scan to
/// rounding, and exactly when all partial sums are representable.
pub fn vertical_prefix_sum(
    group: &CoreGroup,
    div: &[f64],
    dp: &[f64],
    mode: ExecMode,
) -> Result<Outcome<Vec<f64>>, KernelError> {
    if div.len() != dp.len() {
        return Err(KernelError::LengthMismatch(div.len(), dp.len()));
    }
    check_finite(div, "div")?;
    check_finite(dp, "dp")?;
    let n = div.len();
    let div_a = SharedArray::from_f64(div);
    let dp_a = SharedArray::from_f64(dp);
    let omega = SharedArray::zeros(n);

    let stats = run_region(group, mode, |w| {
        let (id, workers) = (w.id(), w.n_workers());
        // Allocated first in every worker, so the slots sit at the same LDM
        // offset everywhere: slot j < workers holds chunk totals on worker 0,
        // slot `workers` receives the carry.
        let slots = w.view().ldm_alloc((workers + 1) * 8)?;
        let tile = w.view().ldm_alloc(3 * TILE * 8)?;
        let chunk = static_chunk(n, id, workers);

        let mut acc = 0.0;
        let mut start = chunk.start;
        while start < chunk.end {
            let len = TILE.min(chunk.end - start);
            w.view().dma_get_f64(&div_a, start, tile.offset(), len)?;
            w.view().dma_get_f64(&dp_a, start, tile.f64_offset(TILE), len)?;
            let data = w.view().f64s_mut(tile);
            let (inputs, out) = data.split_at_mut(2 * TILE);
            for k in 0..len {
                acc += inputs[k] * inputs[TILE + k];
                out[k] = acc;
            }
            w.view().dma_put_f64(tile.f64_offset(2 * TILE), &omega, start, len)?;
            start += len;
        }
        if workers == 1 {
            return Ok(());
        }

        let carry = if id == 0 {
            for src in 1..workers {
                w.rma_wait(src)?;
            }
            let s = w.view().f64s_mut(slots);
            s[0] = acc;
            let mut running = 0.0;
            for slot in &mut s[..workers] {
                let total = *slot;
                *slot = running;
                running += total;
            }
            for dst in 1..workers {
                let token = w.rma_put(dst, slots.f64_offset(dst), slots.f64_offset(workers), 8)?;
                w.rma_signal(token);
            }
            0.0
        } else {
            w.view().f64s_mut(slots)[0] = acc;
            let token = w.rma_put(0, slots.offset(), slots.f64_offset(id), 8)?;
            w.rma_signal(token);
            w.rma_wait(0)?;
            w.view().f64s(slots)[workers]
        };

        if id != 0 {
            let mut start = chunk.start;
            while start < chunk.end {
                let len = TILE.min(chunk.end - start);
                w.view().dma_get_f64(&omega, start, tile.offset(), len)?;
                for v in &mut w.view().f64s_mut(tile)[..len] {
                    *v += carry;
                }
                w.view().dma_put_f64(tile.offset(), &omega, start, len)?;
                start += len;
            }
        }
        Ok(())
    })?;
    Ok(Outcome { output: omega.to_vec(), stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archsim::{spawn_core_group, CoreGroupSpec};

    #[test]
    fn zeros_stay_zero() {
        let g = spawn_core_group(CoreGroupSpec::with_cpes(4)).unwrap();
        let out = vertical_prefix_sum(&g, &[0.0; 10], &[0.0; 10], ExecMode::MpeCpe).unwrap().output;
        assert_eq!(out, vec![0.0; 10]);
    }

    #[test]
    fn small_integer_scan() {
        let g = spawn_core_group(CoreGroupSpec::with_cpes(3)).unwrap();
        let out = vertical_prefix_sum(&g, &[1.0, 2.0, 3.0, 4.0], &[1.0; 4], ExecMode::MpeCpe).unwrap().output;
        assert_eq!(out, vec![1.0, 3.0, 6.0, 10.0]);
    }

    #[test]
    fn more_workers_than_levels() {
        let g = spawn_core_group(CoreGroupSpec::with_cpes(16)).unwrap();
        let div: Vec<f64> = (1..=5).map(f64::from).collect();
        let out = vertical_prefix_sum(&g, &div, &[2.0; 5], ExecMode::MpeCpe).unwrap().output;
        assert_eq!(out, vec![2.0, 6.0, 12.0, 20.0, 30.0]);
    }

    #[test]
    fn long_column_spans_several_tiles() {
        let g = spawn_core_group(CoreGroupSpec::with_cpes(2)).unwrap();
        let n = 3 * TILE + 17;
        let div: Vec<f64> = (0..n).map(|k| (k % 7) as f64).collect();
        let dp = vec![1.0; n];
        let par = vertical_prefix_sum(&g, &div, &dp, ExecMode::MpeCpe).unwrap().output;
        assert_eq!(par, prefix_sum_reference(&div, &dp).unwrap());
    }

    #[test]
    fn serial_mode_is_bitwise_the_reference() {
        let g = spawn_core_group(CoreGroupSpec::with_cpes(8)).unwrap();
        let div: Vec<f64> = (0..100).map(|k| (k as f64 * 0.37).sin()).collect();
        let dp: Vec<f64> = (0..100).map(|k| 1.0 + (k as f64).cos() * 0.1).collect();
        let ser = vertical_prefix_sum(&g, &div, &dp, ExecMode::Mpe).unwrap().output;
        let reference = prefix_sum_reference(&div, &dp).unwrap();
        assert!(ser.iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn length_mismatch() {
        let g = spawn_core_group(CoreGroupSpec::with_cpes(1)).unwrap();
        assert_eq!(
            vertical_prefix_sum(&g, &[1.0], &[], ExecMode::MpeCpe).unwrap_err(),
            KernelError::LengthMismatch(1, 0)
        );
    }
}
