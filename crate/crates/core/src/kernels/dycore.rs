use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_finite, run_region, ExecMode, KernelError, Outcome};
use crate::archsim::{CoreGroup, SharedArray};
use crate::offload::{LoopNest, OffloadError, Worker};

pub const WEST: usize = 0;
pub const EAST: usize = 1;
pub const SOUTH: usize = 2;
pub const NORTH: usize = 3;

/// Spectral-element style field `[elem][level][i][j]`, with `np×np` points
/// per element; `i` runs south to north and `j` west to east.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementField {
    pub nelem: usize,
    pub pver: usize,
    pub np: usize,
    pub values: Vec<f64>,
    /// Neighbors in the order west, east, south, north.
    pub adjacency: Vec<[usize; 4]>,
}

/// `(nx, ny)` with `nx * ny == nelem`, as square as the factorization allows.
fn grid_shape(nelem: usize) -> (usize, usize) {
    let mut ny = (nelem as f64).sqrt() as usize;
    while ny > 1 && !nelem.is_multiple_of(ny) {
        ny -= 1;
    }
    let ny = ny.max(1);
    (nelem / ny, ny)
}

/// Neighbors of elements laid out on a doubly periodic `nx × ny` grid.
pub fn periodic_adjacency(nelem: usize) -> Vec<[usize; 4]> {
    let (nx, ny) = grid_shape(nelem);
    (0..nelem)
        .map(|e| {
            let (x, y) = (e % nx, e / nx);
            [y * nx + (x + nx - 1) % nx, y * nx + (x + 1) % nx, ((y + ny - 1) % ny) * nx + x, ((y + 1) % ny) * nx + x]
        })
        .collect()
}

impl ElementField {
    pub fn constant(nelem: usize, pver: usize, np: usize, value: f64) -> Self {
        ElementField {
            nelem,
            pver,
            np,
            values: vec![value; nelem * pver * np * np],
            adjacency: periodic_adjacency(nelem),
        }
    }

    pub fn random(nelem: usize, pver: usize, np: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Self::constant(nelem, pver, np, 0.0);
        f.values.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        f
    }

    pub fn slab(&self, elem: usize, level: usize) -> usize {
        (elem * self.pver + level) * self.np * self.np
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.np < 2 || self.nelem == 0 || self.pver == 0 {
            return Err(KernelError::Dims(format!(
                "nelem×pver×np = {}×{}×{} (np ≥ 2, others ≥ 1)",
                self.nelem, self.pver, self.np
            )));
        }
        let n = self.nelem * self.pver * self.np * self.np;
        if self.values.len() != n {
            return Err(KernelError::LengthMismatch(self.values.len(), n));
        }
        if self.adjacency.len() != self.nelem {
            return Err(KernelError::Adjacency(format!(
                "{} adjacency rows for {} elements",
                self.adjacency.len(),
                self.nelem
            )));
        }
        for (e, nbrs) in self.adjacency.iter().enumerate() {
            for (side, opposite) in [(WEST, EAST), (EAST, WEST), (SOUTH, NORTH), (NORTH, SOUTH)] {
                let n = nbrs[side];
                if n >= self.nelem || self.adjacency[n][opposite] != e {
                    return Err(KernelError::Adjacency(format!("element {e} side {side} -> {n} is not mutual")));
                }
            }
        }
        check_finite(&self.values, "element field")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DycoreParams {
    pub nu: f64,
    pub dt: f64,
}

impl Default for DycoreParams {
    fn default() -> Self {
        DycoreParams { nu: 0.5, dt: 0.2 }
    }
}

/// West/east edges become the mean with the facing neighbor edge.
fn exchange_x(own: &[f64], west: &[f64], east: &[f64], out: &mut [f64], np: usize) {
    out.copy_from_slice(own);
    for i in 0..np {
        let row = i * np;
        out[row] = (own[row] + west[row + np - 1]) * 0.5;
        out[row + np - 1] = (own[row + np - 1] + east[row]) * 0.5;
    }
}

/// South/north edges become the mean with the facing neighbor edge.
fn exchange_y(own: &[f64], south: &[f64], north: &[f64], out: &mut [f64], np: usize) {
    out.copy_from_slice(own);
    let top = (np - 1) * np;
    for j in 0..np {
        out[j] = (own[j] + south[top + j]) * 0.5;
        out[top + j] = (own[top + j] + north[j]) * 0.5;
    }
}

/// Five-point Laplacian relaxation inside one element; missing neighbors
/// at the element boundary mirror the center (zero flux).
fn relax(v: &[f64], out: &mut [f64], np: usize, coeff: f64) {
    for i in 0..np {
        for j in 0..np {
            let c = v[i * np + j];
            let w = if j > 0 { v[i * np + j - 1] } else { c };
            let e = if j + 1 < np { v[i * np + j + 1] } else { c };
            let s = if i > 0 { v[(i - 1) * np + j] } else { c };
            let n = if i + 1 < np { v[(i + 1) * np + j] } else { c };
            out[i * np + j] = c + coeff * (((w + e) + (s + n)) - 4.0 * c);
        }
    }
}

pub fn dycore_step_reference(f: &ElementField, params: &DycoreParams) -> Result<ElementField, KernelError> {
    f.validate()?;
    let np2 = f.np * f.np;
    let mut a = f.values.clone();
    let mut b = vec![0.0; a.len()];
    for e in 0..f.nelem {
        for k in 0..f.pver {
            let [w, ea, _, _] = f.adjacency[e];
            let (o, wo, eo) = (f.slab(e, k), f.slab(w, k), f.slab(ea, k));
            exchange_x(&a[o..o + np2], &a[wo..wo + np2], &a[eo..eo + np2], &mut b[o..o + np2], f.np);
        }
    }
    for e in 0..f.nelem {
        for k in 0..f.pver {
            let [_, _, s, n] = f.adjacency[e];
            let (o, so, no) = (f.slab(e, k), f.slab(s, k), f.slab(n, k));
            exchange_y(&b[o..o + np2], &b[so..so + np2], &b[no..no + np2], &mut a[o..o + np2], f.np);
        }
    }
    let coeff = params.nu * params.dt;
    for o in (0..a.len()).step_by(np2) {
        relax(&a[o..o + np2], &mut b[o..o + np2], f.np, coeff);
    }
    Ok(ElementField { values: b, ..f.clone() })
}

/// One dynamics step, parallel on `nelem × pver`: boundary exchange along x
/// then y, each followed by a flushing barrier, then the in-element update.
pub fn dycore_step(
    group: &CoreGroup,
    f: &ElementField,
    params: &DycoreParams,
    mode: ExecMode,
) -> Result<Outcome<ElementField>, KernelError> {
    f.validate()?;
    let np = f.np;
    let np2 = np * np;
    let nest = LoopNest::new([("nelem", f.nelem), ("pver", f.pver), ("np", np), ("np", np)])
        .parallel_on(&["nelem", "pver"])?;
    let a = SharedArray::from_f64(&f.values);
    let b = SharedArray::zeros(f.values.len());
    let coeff = params.nu * params.dt;

    type SlabOp = fn(&[f64], &[f64], &[f64], &mut [f64], usize);
    // Loads the element's slab and two facing neighbors, applies `op`, and
    // stores the result into `dst`.
    let stencil = |w: &mut Worker<'_>,
                   src: &SharedArray,
                   dst: &SharedArray,
                   idx: &[usize],
                   sides: [usize; 2],
                   op: SlabOp|
     -> Result<(), OffloadError> {
        let (e, k) = (idx[0], idx[1]);
        let buf = w.view().ldm_alloc(4 * np2 * 8)?;
        let own = f.slab(e, k);
        w.view().dma_get_f64(src, own, buf.offset(), np2)?;
        w.view().dma_get_f64(src, f.slab(f.adjacency[e][sides[0]], k), buf.f64_offset(np2), np2)?;
        w.view().dma_get_f64(src, f.slab(f.adjacency[e][sides[1]], k), buf.f64_offset(2 * np2), np2)?;
        let data = w.view().f64s_mut(buf);
        let (inputs, out) = data.split_at_mut(3 * np2);
        op(&inputs[..np2], &inputs[np2..2 * np2], &inputs[2 * np2..], out, np);
        w.view().dma_put_f64(buf.f64_offset(3 * np2), dst, own, np2)?;
        w.view().ldm_free(buf)?;
        Ok(())
    };

    let stats = run_region(group, mode, |w| {
        w.for_static(&nest, |idx, w| stencil(w, &a, &b, idx, [WEST, EAST], exchange_x))?;
        w.barrier()?;
        w.for_static(&nest, |idx, w| stencil(w, &b, &a, idx, [SOUTH, NORTH], exchange_y))?;
        w.barrier()?;
        w.for_static(&nest, |idx, w| {
            let buf = w.view().ldm_alloc(2 * np2 * 8)?;
            let own = f.slab(idx[0], idx[1]);
            w.view().dma_get_f64(&a, own, buf.offset(), np2)?;
            let (v, out) = w.view().f64s_mut(buf).split_at_mut(np2);
            relax(v, out, np, coeff);
            w.view().dma_put_f64(buf.f64_offset(np2), &b, own, np2)?;
            w.view().ldm_free(buf)?;
            Ok(())
        })
    })?;
    Ok(Outcome { output: ElementField { values: b.to_vec(), ..f.clone() }, stats })
}
