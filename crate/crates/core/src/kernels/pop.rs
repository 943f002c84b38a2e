use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_finite, run_nest, ExecMode, KernelError, Outcome};
use crate::archsim::{CoreGroup, SharedArray};
use crate::offload::LoopNest;

/// Blocked ocean/ice field `[block][category][layer][y][x]`. Ocean fields
/// have a single category.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockField {
    pub mxblk: usize,
    pub ncat: usize,
    pub nlayer: usize,
    pub nyblk: usize,
    pub nxblk: usize,
    pub values: Vec<f64>,
}

impl BlockField {
    pub fn zeros(mxblk: usize, ncat: usize, nlayer: usize, nyblk: usize, nxblk: usize) -> Self {
        BlockField { mxblk, ncat, nlayer, nyblk, nxblk, values: vec![0.0; mxblk * ncat * nlayer * nyblk * nxblk] }
    }

    /// Ocean block field, `mxblk × nlayer × nyblk × nxblk`.
    pub fn ocean(mxblk: usize, nlayer: usize, nyblk: usize, nxblk: usize) -> Self {
        Self::zeros(mxblk, 1, nlayer, nyblk, nxblk)
    }

    pub fn random(mut self, lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.values.iter_mut().for_each(|v| *v = rng.gen_range(lo..hi));
        self
    }

    pub fn filled(mut self, value: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v = value);
        self
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.mxblk, self.ncat, self.nlayer, self.nyblk, self.nxblk]
    }

    pub fn index(&self, m: usize, c: usize, l: usize, y: usize, x: usize) -> usize {
        (((m * self.ncat + c) * self.nlayer + l) * self.nyblk + y) * self.nxblk + x
    }

    pub fn block_len(&self) -> usize {
        self.ncat * self.nlayer * self.nyblk * self.nxblk
    }

    pub(crate) fn validate(&self) -> Result<(), KernelError> {
        if self.dims().contains(&0) {
            return Err(KernelError::Dims(format!("block dims {:?} must be positive", self.dims())));
        }
        let n: usize = self.dims().iter().product();
        if self.values.len() != n {
            return Err(KernelError::LengthMismatch(self.values.len(), n));
        }
        check_finite(&self.values, "block field")
    }

    fn validate_ocean(&self) -> Result<(), KernelError> {
        self.validate()?;
        if self.ncat != 1 {
            return Err(KernelError::Dims(format!("ocean fields have one category, got {}", self.ncat)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VmixParams {
    /// Vertical diffusivity times dt over dz².
    pub kappa: f64,
}

impl Default for VmixParams {
    fn default() -> Self {
        VmixParams { kappa: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmixParams {
    pub kappa: f64,
}

impl Default for HmixParams {
    fn default() -> Self {
        HmixParams { kappa: 0.1 }
    }
}

/// Forward-sweep coefficients of the implicit diffusion matrix
/// `-κ x[k-1] + (1 + κ·neighbors(k)) x[k] - κ x[k+1]` with insulating ends.
/// The matrix is the same for every column, so it is factored once.
#[derive(Debug, Clone)]
struct Tridiagonal {
    lower: f64,
    upper_prime: Vec<f64>,
    pivot: Vec<f64>,
}

impl Tridiagonal {
    fn factor(n: usize, kappa: f64) -> Result<Self, KernelError> {
        let diag = |k: usize| {
            let neighbors = usize::from(k > 0) + usize::from(k + 1 < n);
            1.0 + kappa * neighbors as f64
        };
        let upper = -kappa;
        let mut upper_prime = vec![0.0; n];
        let mut pivot = vec![0.0; n];
        for k in 0..n {
            let p = if k == 0 { diag(0) } else { diag(k) - (-kappa) * upper_prime[k - 1] };
            if p == 0.0 || !p.is_finite() {
                return Err(KernelError::SingularTridiagonal(k));
            }
            pivot[k] = p;
            upper_prime[k] = if k + 1 < n { upper / p } else { 0.0 };
        }
        Ok(Tridiagonal { lower: -kappa, upper_prime, pivot })
    }

    /// Solves in place on a strided column.
    fn solve(&self, x: &mut [f64], offset: usize, stride: usize) {
        let n = self.pivot.len();
        let mut prev = 0.0;
        for k in 0..n {
            let i = offset + k * stride;
            let rhs = if k == 0 { x[i] } else { x[i] - self.lower * prev };
            prev = rhs / self.pivot[k];
            x[i] = prev;
        }
        for k in (0..n.saturating_sub(1)).rev() {
            let i = offset + k * stride;
            x[i] -= self.upper_prime[k] * x[i + stride];
        }
    }
}

pub fn pop_vmix_reference(b: &BlockField, params: &VmixParams) -> Result<BlockField, KernelError> {
    b.validate_ocean()?;
    let tri = Tridiagonal::factor(b.nlayer, params.kappa)?;
    let mut out = b.clone();
    let stride = b.nyblk * b.nxblk;
    for m in 0..b.mxblk {
        for y in 0..b.nyblk {
            for x in 0..b.nxblk {
                tri.solve(&mut out.values, b.index(m, 0, 0, y, x), stride);
            }
        }
    }
    Ok(out)
}

/// Implicit vertical mixing, parallel on `nyblk`: each work item gathers
/// one row of every layer and solves the `nxblk` columns it spans.
pub fn pop_vmix_step(
    group: &CoreGroup,
    b: &BlockField,
    params: &VmixParams,
    mode: ExecMode,
) -> Result<Outcome<BlockField>, KernelError> {
    b.validate_ocean()?;
    let tri = Tridiagonal::factor(b.nlayer, params.kappa)?;
    let nest = LoopNest::new([("mxblk", b.mxblk), ("nlayer", b.nlayer), ("nyblk", b.nyblk), ("nxblk", b.nxblk)])
        .parallel_on(&["nyblk"])?;
    let src = SharedArray::from_f64(&b.values);
    let dst = SharedArray::zeros(b.values.len());
    let (nl, nx) = (b.nlayer, b.nxblk);
    let stats = run_nest(group, mode, &nest, |idx, w| {
        let y = idx[0];
        let buf = w.view().ldm_alloc(nl * nx * 8)?;
        for m in 0..b.mxblk {
            for l in 0..nl {
                w.view().dma_get_f64(&src, b.index(m, 0, l, y, 0), buf.f64_offset(l * nx), nx)?;
            }
            let rows = w.view().f64s_mut(buf);
            for x in 0..nx {
                tri.solve(rows, x, nx);
            }
            for l in 0..nl {
                w.view().dma_put_f64(buf.f64_offset(l * nx), &dst, b.index(m, 0, l, y, 0), nx)?;
            }
        }
        w.view().ldm_free(buf)?;
        Ok(())
    })?;
    Ok(Outcome { output: BlockField { values: dst.to_vec(), ..b.clone() }, stats })
}

/// Five-point horizontal diffusion of one `ny × nx` slab with zero-flux
/// block edges.
fn diffuse_slab(v: &[f64], out: &mut [f64], ny: usize, nx: usize, kappa: f64) {
    for y in 0..ny {
        for x in 0..nx {
            let c = v[y * nx + x];
            let w = if x > 0 { v[y * nx + x - 1] } else { c };
            let e = if x + 1 < nx { v[y * nx + x + 1] } else { c };
            let s = if y > 0 { v[(y - 1) * nx + x] } else { c };
            let n = if y + 1 < ny { v[(y + 1) * nx + x] } else { c };
            out[y * nx + x] = c + kappa * (((w + e) + (s + n)) - 4.0 * c);
        }
    }
}

pub fn pop_hmix_reference(b: &BlockField, params: &HmixParams) -> Result<BlockField, KernelError> {
    b.validate_ocean()?;
    let mut out = b.clone();
    let slab = b.nyblk * b.nxblk;
    for o in (0..b.values.len()).step_by(slab) {
        diffuse_slab(&b.values[o..o + slab], &mut out.values[o..o + slab], b.nyblk, b.nxblk, params.kappa);
    }
    Ok(out)
}

/// Horizontal mixing, parallel on `nlayer`.
pub fn pop_hmix_step(
    group: &CoreGroup,
    b: &BlockField,
    params: &HmixParams,
    mode: ExecMode,
) -> Result<Outcome<BlockField>, KernelError> {
    b.validate_ocean()?;
    let nest = LoopNest::new([("mxblk", b.mxblk), ("nlayer", b.nlayer), ("nyblk", b.nyblk), ("nxblk", b.nxblk)])
        .parallel_on(&["nlayer"])?;
    let src = SharedArray::from_f64(&b.values);
    let dst = SharedArray::zeros(b.values.len());
    let (ny, nx) = (b.nyblk, b.nxblk);
    let slab = ny * nx;
    let stats = run_nest(group, mode, &nest, |idx, w| {
        let l = idx[0];
        let buf = w.view().ldm_alloc(2 * slab * 8)?;
        for m in 0..b.mxblk {
            let at = b.index(m, 0, l, 0, 0);
            w.view().dma_get_f64(&src, at, buf.offset(), slab)?;
            let (v, out) = w.view().f64s_mut(buf).split_at_mut(slab);
            diffuse_slab(v, out, ny, nx, params.kappa);
            w.view().dma_put_f64(buf.f64_offset(slab), &dst, at, slab)?;
        }
        w.view().ldm_free(buf)?;
        Ok(())
    })?;
    Ok(Outcome { output: BlockField { values: dst.to_vec(), ..b.clone() }, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archsim::{spawn_core_group, CoreGroupSpec};

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn tridiagonal_solve_matches_matrix() {
        let n = 6;
        let kappa = 0.7;
        let tri = Tridiagonal::factor(n, kappa).unwrap();
        let rhs: Vec<f64> = (0..n).map(|k| (k as f64 + 1.0).ln()).collect();
        let mut x = rhs.clone();
        tri.solve(&mut x, 0, 1);
        for k in 0..n {
            let neighbors = usize::from(k > 0) + usize::from(k + 1 < n);
            let mut row = (1.0 + kappa * neighbors as f64) * x[k];
            if k > 0 {
                row -= kappa * x[k - 1];
            }
            if k + 1 < n {
                row -= kappa * x[k + 1];
            }
            assert!((row - rhs[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        assert_eq!(Tridiagonal::factor(1, 0.3).unwrap().pivot, vec![1.0]);
        assert!(matches!(Tridiagonal::factor(2, -1.0), Err(KernelError::SingularTridiagonal(0))));
        let b = BlockField::ocean(1, 4, 2, 2).filled(1.0);
        assert!(pop_vmix_reference(&b, &VmixParams { kappa: -0.5 }).is_err());
    }

    #[test]
    fn constant_column_is_an_equilibrium() {
        let g = spawn_core_group(CoreGroupSpec::with_cpes(4)).unwrap();
        let b = BlockField::ocean(1, 60, 8, 10).filled(4.5);
        let out = pop_vmix_step(&g, &b, &VmixParams::default(), ExecMode::MpeCpe).unwrap().output;
        for v in &out.values {
            assert!((v - 4.5).abs() <= 4.0 * f64::EPSILON * 4.5, "{v}");
        }
        let out = pop_hmix_step(&g, &b, &HmixParams::default(), ExecMode::MpeCpe).unwrap().output;
        assert_eq!(bits(&out.values), bits(&b.values));
    }

    #[test]
    fn single_layer_hmix_is_the_2d_laplacian() {
        let b = BlockField::ocean(1, 1, 3, 3).random(0.0, 1.0, 4);
        let out = pop_hmix_reference(&b, &HmixParams { kappa: 0.25 }).unwrap();
        let v = &b.values;
        let center = v[4] + 0.25 * (((v[3] + v[5]) + (v[1] + v[7])) - 4.0 * v[4]);
        assert_eq!(out.values[4], center);
        let corner = v[0] + 0.25 * (((v[0] + v[1]) + (v[0] + v[3])) - 4.0 * v[0]);
        assert_eq!(out.values[0], corner);
    }

    #[test]
    fn standard_dims_match_serial_for_several_worker_counts() {
        let b = BlockField::ocean(1, 60, 56, 10).random(-2.0, 30.0, 9);
        let reference_v = pop_vmix_reference(&b, &VmixParams::default()).unwrap();
        let reference_h = pop_hmix_reference(&b, &HmixParams::default()).unwrap();
        for n in [1, 7, 64] {
            let g = spawn_core_group(CoreGroupSpec::with_cpes(n)).unwrap();
            let v = pop_vmix_step(&g, &b, &VmixParams::default(), ExecMode::MpeCpe).unwrap();
            let h = pop_hmix_step(&g, &b, &HmixParams::default(), ExecMode::MpeCpe).unwrap();
            assert_eq!(bits(&v.output.values), bits(&reference_v.values));
            assert_eq!(bits(&h.output.values), bits(&reference_h.values));
        }
    }

    #[test]
    fn ocean_fields_reject_categories() {
        let g = spawn_core_group(CoreGroupSpec::with_cpes(1)).unwrap();
        let b = BlockField::zeros(1, 2, 2, 2, 2);
        assert!(matches!(pop_hmix_step(&g, &b, &HmixParams::default(), ExecMode::Mpe), Err(KernelError::Dims(_))));
    }
}
