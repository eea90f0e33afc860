//! Linear k-space interpolation calibrated on the ACS.
//!
//! A lattice cell is anchored at a sampled base point `(pe0, pa0)`; its
//! targets are the `R_pe·R_pa − 1` entries `(pe0 + dpe, pa0 + dpa)` with
//! `0 ≤ dpe < R_pe`, `0 ≤ dpa < R_pa`. Sources are acquired neighbours of the
//! base on the (possibly sheared) lattice.

use num_complex::Complex64;

use crate::data::KspaceData;
use crate::error::{Error, Result};
use crate::linalg;
use crate::sampling::{AcsRegion, SamplingMask};
use crate::tensor::mirror_index;

/// Rows of source data pushed through one GEMM during interpolation.
const CHUNK_ROWS: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct GrappaKernel {
    pub accel: (usize, usize),
    /// CAIPI shear of the lattice the kernel was built for.
    pub shift: usize,
    /// `(k_read, k_pe, k_pa)` extents in acquired-sample units.
    pub taps: (usize, usize, usize),
    pub lambda: f64,
    pub n_coils: usize,
    /// Row-major `(n_sources · C) x (n_targets · C)`.
    weights: Vec<Complex64>,
}

impl GrappaKernel {
    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn n_sources(&self) -> usize {
        self.taps.0 * self.taps.1 * self.taps.2 * self.n_coils
    }

    pub fn n_targets(&self) -> usize {
        (self.accel.0 * self.accel.1 - 1) * self.n_coils
    }

    /// Rebuild a kernel from stored weights, checking dimensions.
    pub fn from_parts(
        accel: (usize, usize),
        shift: usize,
        taps: (usize, usize, usize),
        lambda: f64,
        n_coils: usize,
        weights: Vec<Complex64>,
    ) -> Result<Self> {
        let k = Self {
            accel,
            shift,
            taps,
            lambda,
            n_coils,
            weights: Vec::new(),
        };
        let expected = k.n_sources() * k.n_targets();
        if weights.len() != expected {
            return Err(Error::shape(format!("kernel has {} weights, expected {expected}", weights.len())));
        }
        if weights.iter().any(|w| !w.re.is_finite() || !w.im.is_finite()) {
            return Err(Error::NonFinite("kernel weights".into()));
        }
        Ok(Self { weights, ..k })
    }
}

struct Stencil {
    sources: Vec<[isize; 3]>,
    targets: Vec<[isize; 2]>,
}

fn centered_range(k: usize) -> std::ops::RangeInclusive<isize> {
    let k = k as isize;
    -((k - 1) / 2)..=k / 2
}

impl Stencil {
    fn new(accel: (usize, usize), shift: usize, taps: (usize, usize, usize)) -> Self {
        let (r_pe, r_pa) = (accel.0 as isize, accel.1 as isize);
        let mut sources = Vec::new();
        for dro in centered_range(taps.0) {
            for j in centered_range(taps.1) {
                for l in centered_range(taps.2) {
                    sources.push([dro, j * r_pe + l * shift as isize, l * r_pa]);
                }
            }
        }
        let mut targets = Vec::new();
        for dpe in 0..r_pe {
            for dpa in 0..r_pa {
                if dpe != 0 || dpa != 0 {
                    targets.push([dpe, dpa]);
                }
            }
        }
        Self { sources, targets }
    }

    /// Per-axis `(min, max)` offsets over sources and targets.
    fn footprint(&self) -> [(isize, isize); 3] {
        let mut f = [(0isize, 0isize); 3];
        for s in &self.sources {
            for a in 0..3 {
                f[a].0 = f[a].0.min(s[a]);
                f[a].1 = f[a].1.max(s[a]);
            }
        }
        for t in &self.targets {
            for a in 0..2 {
                f[a + 1].0 = f[a + 1].0.min(t[a]);
                f[a + 1].1 = f[a + 1].1.max(t[a]);
            }
        }
        f
    }
}

fn check_params(accel: (usize, usize), taps: (usize, usize, usize), lambda: f64) -> Result<()> {
    if accel.0 == 0 || accel.1 == 0 {
        return Err(Error::invalid("acceleration factors must be positive"));
    }
    if taps.0 == 0 || taps.1 == 0 || taps.2 == 0 {
        return Err(Error::invalid("kernel taps must be positive"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("Tikhonov weight {lambda} must be finite and >= 0")));
    }
    Ok(())
}

/// Calibrate on a fully sampled ACS block for a plain (unsheared) lattice.
pub fn calibrate(
    acs: &KspaceData,
    accel: (usize, usize),
    taps: (usize, usize, usize),
    lambda: f64,
) -> Result<GrappaKernel> {
    calibrate_sheared(acs, accel, 0, taps, lambda)
}

/// Calibration normal equations as `(A, B, rows)`; exposed for oracle tests.
pub fn calibration_system(
    acs: &KspaceData,
    accel: (usize, usize),
    shift: usize,
    taps: (usize, usize, usize),
) -> Result<(Vec<Complex64>, Vec<Complex64>, usize)> {
    let st = Stencil::new(accel, shift, taps);
    let [nro, npe, npa, nc] = acs.dims();
    let fp = st.footprint();
    let n = [nro as isize, npe as isize, npa as isize];
    let lo: Vec<isize> = (0..3).map(|a| -fp[a].0).collect();
    let hi: Vec<isize> = (0..3).map(|a| n[a] - fp[a].1).collect();
    if (0..3).any(|a| hi[a] <= lo[a]) {
        return Err(Error::AcsTooSmall(format!(
            "ACS {nro}x{npe}x{npa} cannot hold the kernel footprint"
        )));
    }
    let rows = (0..3).map(|a| (hi[a] - lo[a]) as usize).product::<usize>();
    let ns = st.sources.len() * nc;
    let nt = st.targets.len() * nc;
    let mut a_mat = Vec::with_capacity(rows * ns);
    let mut b_mat = Vec::with_capacity(rows * nt);
    let data = acs.tensor().data();
    let idx = |ro: isize, pe: isize, pa: isize| acs.index(ro as usize, pe as usize, pa as usize, 0);
    for ro in lo[0]..hi[0] {
        for pe in lo[1]..hi[1] {
            for pa in lo[2]..hi[2] {
                for s in &st.sources {
                    let i = idx(ro + s[0], pe + s[1], pa + s[2]);
                    a_mat.extend_from_slice(&data[i..i + nc]);
                }
                for t in &st.targets {
                    let i = idx(ro, pe + t[0], pa + t[1]);
                    b_mat.extend_from_slice(&data[i..i + nc]);
                }
            }
        }
    }
    Ok((a_mat, b_mat, rows))
}

/// Calibrate for a lattice sheared by `shift` phase lines per sampled partition.
pub fn calibrate_sheared(
    acs: &KspaceData,
    accel: (usize, usize),
    shift: usize,
    taps: (usize, usize, usize),
    lambda: f64,
) -> Result<GrappaKernel> {
    check_params(accel, taps, lambda)?;
    let nc = acs.n_coils();
    let (a_mat, b_mat, rows) = calibration_system(acs, accel, shift, taps)?;
    let ns = taps.0 * taps.1 * taps.2 * nc;
    let nt = (accel.0 * accel.1 - 1) * nc;
    if lambda == 0.0 && rows < ns {
        return Err(Error::Singular);
    }
    let gram = linalg::matmul_ah_b(&a_mat, rows, ns, &a_mat, ns);
    let rhs = linalg::matmul_ah_b(&a_mat, rows, ns, &b_mat, nt);
    let weights = linalg::solve_ridge(&gram, ns, &rhs, nt, lambda)?;
    GrappaKernel::from_parts(accel, shift, taps, lambda, nc, weights)
}

/// Fill every unsampled entry of each lattice cell from its sources.
///
/// Entries flagged as sampled in `mask` are copied through unchanged; sources
/// outside the grid read as zero.
pub fn interpolate(ksp: &KspaceData, mask: &SamplingMask, kernel: &GrappaKernel) -> Result<KspaceData> {
    let [nro, npe, npa, nc] = ksp.dims();
    if mask.n_pe() != npe || mask.n_pa() != npa {
        return Err(Error::shape("mask does not match the k-space grid"));
    }
    if nc != kernel.n_coils {
        return Err(Error::shape(format!("kernel built for {} coils, data has {nc}", kernel.n_coils)));
    }
    if mask.accel != kernel.accel || mask.shift != kernel.shift {
        return Err(Error::MethodMismatch(format!(
            "mask lattice {:?}/shift {} vs kernel {:?}/shift {}",
            mask.accel, mask.shift, kernel.accel, kernel.shift
        )));
    }
    let mut out = ksp.clone();
    if kernel.accel == (1, 1) {
        return Ok(out);
    }
    let st = Stencil::new(kernel.accel, kernel.shift, kernel.taps);
    let (r_pe, r_pa) = (kernel.accel.0 as isize, kernel.accel.1 as isize);
    let n = [nro as isize, npe as isize, npa as isize];

    // Lattice bases whose cell contains at least one missing in-grid entry.
    let mut bases = Vec::new();
    let mut pa0 = 0isize;
    while pa0 < n[2] {
        let off = (kernel.shift as isize * (pa0 / r_pa)).rem_euclid(r_pe);
        let mut pe0 = off - r_pe;
        while pe0 < n[1] {
            let missing = st.targets.iter().any(|t| {
                let (pe, pa) = (pe0 + t[0], pa0 + t[1]);
                (0..n[1]).contains(&pe) && (0..n[2]).contains(&pa) && !mask.is_sampled(pe as usize, pa as usize)
            });
            if missing {
                bases.push((pe0, pa0));
            }
            pe0 += r_pe;
        }
        pa0 += r_pa;
    }

    let ns = kernel.n_sources();
    let nt = kernel.n_targets();
    let src = ksp.tensor().data();
    let zero = Complex64::new(0.0, 0.0);
    let cells: Vec<(isize, isize, isize)> = (0..n[0])
        .flat_map(|ro| bases.iter().map(move |&(pe, pa)| (ro, pe, pa)))
        .collect();
    let mut rows = Vec::with_capacity(CHUNK_ROWS * ns);
    for chunk in cells.chunks(CHUNK_ROWS) {
        rows.clear();
        for &(ro, pe, pa) in chunk {
            for s in &st.sources {
                let (r, p, q) = (ro + s[0], pe + s[1], pa + s[2]);
                if (0..n[0]).contains(&r) && (0..n[1]).contains(&p) && (0..n[2]).contains(&q) {
                    let i = ksp.index(r as usize, p as usize, q as usize, 0);
                    rows.extend_from_slice(&src[i..i + nc]);
                } else {
                    rows.extend(std::iter::repeat_n(zero, nc));
                }
            }
        }
        let pred = linalg::matmul(&rows, chunk.len(), ns, &kernel.weights, nt);
        let dst = out.tensor_mut().data_mut();
        for (row, &(ro, pe, pa)) in chunk.iter().enumerate() {
            for (ti, t) in st.targets.iter().enumerate() {
                let (p, q) = (pe + t[0], pa + t[1]);
                if !(0..n[1]).contains(&p) || !(0..n[2]).contains(&q) || mask.is_sampled(p as usize, q as usize) {
                    continue;
                }
                let i = ((ro as usize * npe + p as usize) * npa + q as usize) * nc;
                let o = row * nt + ti * nc;
                dst[i..i + nc].copy_from_slice(&pred[o..o + nc]);
            }
        }
    }
    Ok(out)
}

/// Copy `acquired` into `recon` inside `bounds`, all readouts and coils.
pub fn acs_replace(recon: &KspaceData, acquired: &KspaceData, bounds: Option<&AcsRegion>) -> Result<KspaceData> {
    if recon.dims() != acquired.dims() {
        return Err(Error::shape("reconstruction and acquired data differ in shape"));
    }
    let mut out = recon.clone();
    let Some(b) = bounds else {
        return Ok(out);
    };
    let [nro, npe, npa, nc] = recon.dims();
    if b.pe.1 >= npe || b.pa.1 >= npa {
        return Err(Error::invalid("ACS bounds exceed the grid"));
    }
    let src = acquired.tensor().data();
    let dst = out.tensor_mut().data_mut();
    for ro in 0..nro {
        for pe in b.pe.0..=b.pe.1 {
            let i = ((ro * npe + pe) * npa + b.pa.0) * nc;
            let j = ((ro * npe + pe) * npa + b.pa.1 + 1) * nc;
            dst[i..j].copy_from_slice(&src[i..j]);
        }
    }
    Ok(out)
}

/// Append coils `C..2C` holding `conj(y_c(−k))`, mirrored about `floor(n/2)`.
pub fn make_virtual_coils(ksp: &KspaceData) -> KspaceData {
    let [nro, npe, npa, nc] = ksp.dims();
    let mut out = KspaceData::zeros([nro, npe, npa, 2 * nc], ksp.readout_oversample());
    let src = ksp.tensor().data();
    let dst = out.tensor_mut().data_mut();
    for ro in 0..nro {
        let mro = mirror_index(ro, nro);
        for pe in 0..npe {
            let mpe = mirror_index(pe, npe);
            for pa in 0..npa {
                let mpa = mirror_index(pa, npa);
                let o = ((ro * npe + pe) * npa + pa) * 2 * nc;
                let i = ((ro * npe + pe) * npa + pa) * nc;
                let m = ((mro * npe + mpe) * npa + mpa) * nc;
                dst[o..o + nc].copy_from_slice(&src[i..i + nc]);
                for c in 0..nc {
                    dst[o + nc + c] = src[m + c].conj();
                }
            }
        }
    }
    out
}

/// Index-reversed sampling pattern (the pattern seen by the virtual coils).
pub fn mirror_mask(mask: &SamplingMask) -> SamplingMask {
    let (npe, npa) = (mask.n_pe(), mask.n_pa());
    let mut out = mask.clone();
    for pe in 0..npe {
        for pa in 0..npa {
            out.set(pe, pa, mask.is_sampled(mirror_index(pe, npe), mirror_index(pa, npa)));
        }
    }
    out.acs = mask.acs.map(|a| AcsRegion {
        pe: (mirror_index(a.pe.1, npe), mirror_index(a.pe.0, npe)),
        pa: (mirror_index(a.pa.1, npa), mirror_index(a.pa.0, npa)),
        rate: a.rate,
    });
    out
}

/// Roll along one axis that moves the mirrored lattice back onto the
/// physical one, choosing the candidate that keeps most ACS overlap.
fn lattice_roll(n: usize, r: usize, lo: usize, hi: usize) -> Option<(isize, usize, usize)> {
    let c2 = 2 * (n / 2) as isize;
    let base = (-c2).rem_euclid(r as isize);
    let (lo, hi) = (lo as isize, hi as isize);
    [base, base - r as isize]
        .into_iter()
        .map(|s| (s, lo.max(c2 - hi + s), hi.min(c2 - lo + s)))
        .filter(|&(_, a, b)| a <= b)
        .max_by_key(|&(_, a, b)| b - a)
        .map(|(s, a, b)| (s, a as usize, b as usize))
}

fn roll_axes(ksp: &KspaceData, coils: std::ops::Range<usize>, s_pe: isize, s_pa: isize) -> KspaceData {
    let [nro, npe, npa, nc] = ksp.dims();
    let mut out = ksp.clone();
    let src = ksp.tensor().data();
    let dst = out.tensor_mut().data_mut();
    for ro in 0..nro {
        for pe in 0..npe {
            let spe = (pe as isize - s_pe).rem_euclid(npe as isize) as usize;
            for pa in 0..npa {
                let spa = (pa as isize - s_pa).rem_euclid(npa as isize) as usize;
                let o = ((ro * npe + pe) * npa + pa) * nc;
                let i = ((ro * npe + spe) * npa + spa) * nc;
                for c in coils.clone() {
                    dst[o + c] = src[i + c];
                }
            }
        }
    }
    out
}

/// GRAPPA with conjugate-symmetric virtual coils.
///
/// Virtual coils are rolled so their mirrored lattice coincides with the
/// physical one (a linear phase in image space); calibration uses the part of
/// the ACS acquired at both the physical and mirrored positions.
pub fn vc_grappa(
    ksp_under: &KspaceData,
    mask: &SamplingMask,
    taps: (usize, usize, usize),
    lambda: f64,
    replace_acs: bool,
) -> Result<KspaceData> {
    if mask.shift != 0 {
        return Err(Error::invalid("virtual coils require an unsheared lattice"));
    }
    let acs = mask.acs.ok_or_else(|| Error::AcsTooSmall("mask has no ACS block".into()))?;
    let [nro, npe, npa, nc] = ksp_under.dims();
    let (r_pe, r_pa) = mask.accel;
    let no_overlap = || Error::AcsTooSmall("mirrored ACS does not overlap the acquired ACS".into());
    let (s_pe, pe_lo, pe_hi) = lattice_roll(npe, r_pe, acs.pe.0, acs.pe.1).ok_or_else(no_overlap)?;
    let (s_pa, pa_lo, pa_hi) = lattice_roll(npa, r_pa, acs.pa.0, acs.pa.1).ok_or_else(no_overlap)?;
    let aug = roll_axes(&make_virtual_coils(ksp_under), nc..2 * nc, s_pe, s_pa);
    let block = aug.block([0, pe_lo, pa_lo], [nro, pe_hi - pe_lo + 1, pa_hi - pa_lo + 1]);
    let kernel = calibrate(&block, mask.accel, taps, lambda)?;
    let full = interpolate(&aug, &mask.without_acs(), &kernel)?;
    let mut out = KspaceData::zeros([nro, npe, npa, nc], ksp_under.readout_oversample());
    for c in 0..nc {
        out.set_coil(c, &full.coil(c));
    }
    if replace_acs {
        acs_replace(&out, ksp_under, Some(&acs))
    } else {
        Ok(out)
    }
}

/// Calibrate on the mask's ACS block and interpolate.
///
/// With `replace_acs` off, ACS entries off the lattice are re-estimated by the
/// kernel rather than kept (the input expected by the correction network).
pub fn grappa(
    ksp_under: &KspaceData,
    mask: &SamplingMask,
    taps: (usize, usize, usize),
    lambda: f64,
    replace_acs: bool,
) -> Result<KspaceData> {
    let acs = mask.acs.ok_or_else(|| Error::AcsTooSmall("mask has no ACS block".into()))?;
    let [nro, ..] = ksp_under.dims();
    let (e_pe, e_pa) = acs.extent();
    let block = ksp_under.block([0, acs.pe.0, acs.pa.0], [nro, e_pe, e_pa]);
    let kernel = calibrate_sheared(&block, mask.accel, mask.shift, taps, lambda)?;
    let lattice = mask.without_acs();
    let out = interpolate(ksp_under, &lattice, &kernel)?;
    if replace_acs {
        acs_replace(&out, ksp_under, Some(&acs))
    } else {
        Ok(out)
    }
}
