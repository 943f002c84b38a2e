use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_finite, run_nest, ExecMode, KernelError, Outcome};
use crate::archsim::{CoreGroup, SharedArray};
use crate::offload::LoopNest;

/// Physics state: independent columns grouped in chunks, stored
/// `[chunk][column][level]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedColumns {
    pub nchunks: usize,
    pub ncols: usize,
    pub pver: usize,
    pub t: Vec<f64>,
    pub q: Vec<f64>,
}

impl ChunkedColumns {
    pub fn filled(nchunks: usize, ncols: usize, pver: usize, t: f64, q: f64) -> Self {
        let n = nchunks * ncols * pver;
        ChunkedColumns { nchunks, ncols, pver, t: vec![t; n], q: vec![q; n] }
    }

    /// Temperatures in [200, 320) K and humidities in [0, 0.02).
    pub fn random(nchunks: usize, ncols: usize, pver: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = nchunks * ncols * pver;
        let t = (0..n).map(|_| rng.gen_range(200.0..320.0)).collect();
        let q = (0..n).map(|_| rng.gen_range(0.0..0.02)).collect();
        ChunkedColumns { nchunks, ncols, pver, t, q }
    }

    pub fn index(&self, chunk: usize, col: usize, level: usize) -> usize {
        (chunk * self.ncols + col) * self.pver + level
    }

    fn validate(&self) -> Result<(), KernelError> {
        if self.nchunks == 0 || self.ncols == 0 || self.pver == 0 {
            return Err(KernelError::Dims(format!(
                "nchunks×ncols×pver = {}×{}×{} must be positive",
                self.nchunks, self.ncols, self.pver
            )));
        }
        let n = self.nchunks * self.ncols * self.pver;
        if self.t.len() != n {
            return Err(KernelError::LengthMismatch(self.t.len(), n));
        }
        if self.q.len() != n {
            return Err(KernelError::LengthMismatch(self.q.len(), n));
        }
        check_finite(&self.t, "t")?;
        check_finite(&self.q, "q")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams {
    /// Relaxation rate toward the equilibrium profile.
    pub alpha: f64,
    /// Heating per squared humidity.
    pub beta: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams { alpha: 0.1, beta: 100.0 }
    }
}

/// Linear profile from 300 K at the top level to 250 K at the bottom.
pub fn equilibrium_temperature(level: usize, pver: usize) -> f64 {
    if pver < 2 {
        return 300.0;
    }
    300.0 - 50.0 * level as f64 / (pver - 1) as f64
}

#[inline]
fn relax(t: f64, q: f64, teq: f64, p: &PhysicsParams) -> f64 {
    (t + p.alpha * (teq - t)) + (p.beta * q) * q
}

pub fn physics_step_reference(c: &ChunkedColumns, params: &PhysicsParams) -> Result<ChunkedColumns, KernelError> {
    c.validate()?;
    let mut out = c.clone();
    for chunk in 0..c.nchunks {
        for col in 0..c.ncols {
            for k in 0..c.pver {
                let i = c.index(chunk, col, k);
                out.t[i] = relax(c.t[i], c.q[i], equilibrium_temperature(k, c.pver), params);
            }
        }
    }
    Ok(out)
}

/// Column physics, parallel on chunks.
pub fn physics_step(
    group: &CoreGroup,
    c: &ChunkedColumns,
    params: &PhysicsParams,
    mode: ExecMode,
) -> Result<Outcome<ChunkedColumns>, KernelError> {
    c.validate()?;
    let nest =
        LoopNest::new([("nchunks", c.nchunks), ("ncols", c.ncols), ("pver", c.pver)]).parallel_on(&["nchunks"])?;
    let t_in = SharedArray::from_f64(&c.t);
    let q_in = SharedArray::from_f64(&c.q);
    let t_out = SharedArray::zeros(c.t.len());
    let (ncols, pver) = (c.ncols, c.pver);
    let stats = run_nest(group, mode, &nest, |idx, w| {
        let chunk = idx[0];
        let buf = w.view().ldm_alloc(2 * pver * 8)?;
        for col in 0..ncols {
            let base = (chunk * ncols + col) * pver;
            w.view().dma_get_f64(&t_in, base, buf.offset(), pver)?;
            w.view().dma_get_f64(&q_in, base, buf.f64_offset(pver), pver)?;
            let (t, q) = w.view().f64s_mut(buf).split_at_mut(pver);
            for k in 0..pver {
                t[k] = relax(t[k], q[k], equilibrium_temperature(k, pver), params);
            }
            w.view().dma_put_f64(buf.offset(), &t_out, base, pver)?;
        }
        w.view().ldm_free(buf)?;
        Ok(())
    })?;
    let output = ChunkedColumns { t: t_out.to_vec(), ..c.clone() };
    Ok(Outcome { output, stats })
}
