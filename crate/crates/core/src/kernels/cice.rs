use super::pop::BlockField;
use super::{run_region, ExecMode, KernelError, Outcome};
use crate::archsim::{CoreGroup, SharedArray};
use crate::offload::LoopNest;

/// Subcycle time step and viscosity scale of the EVP proxy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvpParams {
    pub dte: f64,
    pub zeta0: f64,
}

impl Default for EvpParams {
    fn default() -> Self {
        EvpParams { dte: 0.05, zeta0: 1.0 }
    }
}

/// Blocks sit on a periodic ring along x: west is `m-1`, east is `m+1`.
fn ring_neighbors(m: usize, mxblk: usize) -> (usize, usize) {
    ((m + mxblk - 1) % mxblk, (m + 1) % mxblk)
}

/// One subcycle over block `m`. `west`/`east` are the neighboring blocks of
/// the previous iterate, supplying the x halo; y edges are zero-flux.
///
/// `u' = u + dte·(F + ζ0·|F|·∇²u)`: with zero forcing nothing moves.
#[allow(clippy::too_many_arguments)]
fn subcycle_block(
    own: &[f64],
    west: &[f64],
    east: &[f64],
    forcing: &[f64],
    out: &mut [f64],
    ny: usize,
    nx: usize,
    p: &EvpParams,
) {
    let slab = ny * nx;
    for s in (0..own.len()).step_by(slab) {
        for y in 0..ny {
            for x in 0..nx {
                let i = s + y * nx + x;
                let c = own[i];
                let w = if x > 0 { own[i - 1] } else { west[s + y * nx + nx - 1] };
                let e = if x + 1 < nx { own[i + 1] } else { east[s + y * nx] };
                let so = if y > 0 { own[i - nx] } else { c };
                let n = if y + 1 < ny { own[i + nx] } else { c };
                let lap = ((w + e) + (so + n)) - 4.0 * c;
                let f = forcing[i];
                out[i] = c + p.dte * (f + (p.zeta0 * f.abs()) * lap);
            }
        }
    }
}

fn validate(state: &BlockField, forcing: &BlockField, n_subcycles: usize) -> Result<(), KernelError> {
    state.validate()?;
    forcing.validate()?;
    if state.dims() != forcing.dims() {
        return Err(KernelError::Dims(format!("state {:?} vs forcing {:?}", state.dims(), forcing.dims())));
    }
    if n_subcycles == 0 {
        return Err(KernelError::Dims("n_subcycles must be at least 1".into()));
    }
    Ok(())
}

pub fn cice_evp_reference(
    state: &BlockField,
    forcing: &BlockField,
    n_subcycles: usize,
    params: &EvpParams,
) -> Result<BlockField, KernelError> {
    validate(state, forcing, n_subcycles)?;
    let bl = state.block_len();
    let mut cur = state.values.clone();
    let mut next = vec![0.0; cur.len()];
    for _ in 0..n_subcycles {
        for m in 0..state.mxblk {
            let (w, e) = ring_neighbors(m, state.mxblk);
            subcycle_block(
                &cur[m * bl..(m + 1) * bl],
                &cur[w * bl..(w + 1) * bl],
                &cur[e * bl..(e + 1) * bl],
                &forcing.values[m * bl..(m + 1) * bl],
                &mut next[m * bl..(m + 1) * bl],
                state.nyblk,
                state.nxblk,
                params,
            );
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(BlockField { values: cur, ..state.clone() })
}

/// EVP subcycling, parallel on `mxblk`. Subcycles alternate between two
/// shared buffers; the barrier between subcycles is the halo exchange point.
pub fn cice_evp_step(
    group: &CoreGroup,
    state: &BlockField,
    forcing: &BlockField,
    n_subcycles: usize,
    params: &EvpParams,
    mode: ExecMode,
) -> Result<Outcome<BlockField>, KernelError> {
    validate(state, forcing, n_subcycles)?;
    let nest = LoopNest::new([
        ("mxblk", state.mxblk),
        ("ncat", state.ncat),
        ("nlayer", state.nlayer),
        ("nyblk", state.nyblk),
        ("nxblk", state.nxblk),
    ])
    .parallel_on(&["mxblk"])?;
    let bufs = [SharedArray::from_f64(&state.values), SharedArray::zeros(state.values.len())];
    let force = SharedArray::from_f64(&forcing.values);
    let bl = state.block_len();
    let (mx, ny, nx) = (state.mxblk, state.nyblk, state.nxblk);
    let stats = run_region(group, mode, |w| {
        for step in 0..n_subcycles {
            let (src, dst) = (&bufs[step % 2], &bufs[(step + 1) % 2]);
            w.for_static(&nest, |idx, w| {
                let m = idx[0];
                let (west, east) = ring_neighbors(m, mx);
                let buf = w.view().ldm_alloc(5 * bl * 8)?;
                w.view().dma_get_f64(src, m * bl, buf.offset(), bl)?;
                w.view().dma_get_f64(src, west * bl, buf.f64_offset(bl), bl)?;
                w.view().dma_get_f64(src, east * bl, buf.f64_offset(2 * bl), bl)?;
                w.view().dma_get_f64(&force, m * bl, buf.f64_offset(3 * bl), bl)?;
                let data = w.view().f64s_mut(buf);
                let (inputs, out) = data.split_at_mut(4 * bl);
                subcycle_block(
                    &inputs[..bl],
                    &inputs[bl..2 * bl],
                    &inputs[2 * bl..3 * bl],
                    &inputs[3 * bl..],
                    out,
                    ny,
                    nx,
                    params,
                );
                w.view().dma_put_f64(buf.f64_offset(4 * bl), dst, m * bl, bl)?;
                w.view().ldm_free(buf)?;
                Ok(())
            })?;
            w.barrier()?;
        }
        Ok(())
    })?;
    let output = BlockField { values: bufs[n_subcycles % 2].to_vec(), ..state.clone() };
    Ok(Outcome { output, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archsim::{spawn_core_group, CoreGroupSpec};

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    fn standard_dims() -> BlockField {
        BlockField::zeros(32, 5, 8, 4, 4)
    }

    #[test]
    fn zero_subcycles_disallowed() {
        let s = standard_dims();
        assert!(matches!(cice_evp_reference(&s, &s, 0, &EvpParams::default()), Err(KernelError::Dims(_))));
    }

    #[test]
    fn zero_forcing_is_identity() {
        let g = spawn_core_group(CoreGroupSpec::default()).unwrap();
        let s = standard_dims().random(-1.0, 1.0, 3);
        let f = standard_dims();
        let out = cice_evp_step(&g, &s, &f, 1, &EvpParams::default(), ExecMode::MpeCpe).unwrap().output;
        assert_eq!(bits(&out.values), bits(&s.values));
    }

    #[test]
    fn thirty_two_blocks_on_64_workers() {
        let g = spawn_core_group(CoreGroupSpec::default()).unwrap();
        let s = standard_dims().random(-1.0, 1.0, 1);
        let f = standard_dims().random(-1.0, 1.0, 2);
        let out = cice_evp_step(&g, &s, &f, 3, &EvpParams::default(), ExecMode::MpeCpe).unwrap();
        assert_eq!(out.stats.active_workers(), 32);
        assert!(out.stats.items_per_worker()[..32].iter().all(|&n| n == 3));
    }

    #[test]
    fn long_subcycling_matches_serial() {
        let g = spawn_core_group(CoreGroupSpec::default()).unwrap();
        let s = standard_dims().random(-1.0, 1.0, 5);
        let f = standard_dims().random(-1.0, 1.0, 6);
        let p = EvpParams::default();
        let par = cice_evp_step(&g, &s, &f, 120, &p, ExecMode::MpeCpe).unwrap().output;
        let ser = cice_evp_step(&g, &s, &f, 120, &p, ExecMode::Mpe).unwrap().output;
        let reference = cice_evp_reference(&s, &f, 120, &p).unwrap();
        assert_eq!(bits(&par.values), bits(&ser.values));
        assert_eq!(bits(&par.values), bits(&reference.values));
        assert!(par.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mismatched_forcing_is_rejected() {
        let s = standard_dims();
        let f = BlockField::zeros(16, 5, 8, 4, 4);
        assert!(matches!(cice_evp_reference(&s, &f, 1, &EvpParams::default()), Err(KernelError::Dims(_))));
    }
}
