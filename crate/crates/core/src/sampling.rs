//! Cartesian undersampling patterns over the (phase, partition) plane.
//!
//! Lattices are anchored at index 0 and ACS blocks are centered at `n / 2`,
//! so the DC line always falls inside the ACS. Single-slice masks have a
//! partition extent of 1.

use crate::data::KspaceData;
use crate::error::{Error, Result};

/// Inclusive index block with the lattice rate at which it is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcsRegion {
    pub pe: (usize, usize),
    pub pa: (usize, usize),
    pub rate: (usize, usize),
}

impl AcsRegion {
    /// Centered block of `n_pe x n_pa` entries.
    pub fn centered(n_pe: usize, n_pa: usize, acs_pe: usize, acs_pa: usize, rate: (usize, usize)) -> Self {
        let lo_pe = n_pe / 2 - acs_pe / 2;
        let lo_pa = n_pa / 2 - acs_pa / 2;
        Self {
            pe: (lo_pe, lo_pe + acs_pe - 1),
            pa: (lo_pa, lo_pa + acs_pa - 1),
            rate,
        }
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.pe.1 - self.pe.0 + 1, self.pa.1 - self.pa.0 + 1)
    }

    pub fn contains(&self, pe: usize, pa: usize) -> bool {
        (self.pe.0..=self.pe.1).contains(&pe) && (self.pa.0..=self.pa.1).contains(&pa)
    }

    /// Block shrunk to its central `frac` portion per axis (at least one entry).
    pub fn central_fraction(&self, num: usize, den: usize) -> Self {
        let (e_pe, e_pa) = self.extent();
        let shrink = |lo: usize, e: usize| {
            let keep = (e * num / den).max(1);
            let lo = lo + e / 2 - keep / 2;
            (lo, lo + keep - 1)
        };
        Self {
            pe: shrink(self.pe.0, e_pe),
            pa: shrink(self.pa.0, e_pa),
            rate: self.rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    n_pe: usize,
    n_pa: usize,
    grid: Vec<bool>,
    pub acs: Option<AcsRegion>,
    /// Nominal lattice `(R_pe, R_pa)` outside the ACS.
    pub accel: (usize, usize),
    /// CAIPI phase offset per sampled partition; 0 for plain lattices.
    pub shift: usize,
    /// Exterior restricted to the inscribed ellipse.
    pub elliptical: bool,
}

impl SamplingMask {
    pub fn from_grid(n_pe: usize, n_pa: usize, grid: Vec<bool>, accel: (usize, usize)) -> Result<Self> {
        if n_pe == 0 || n_pa == 0 || grid.len() != n_pe * n_pa {
            return Err(Error::shape(format!(
                "mask grid of {} entries for {n_pe} x {n_pa}",
                grid.len()
            )));
        }
        if accel.0 == 0 || accel.1 == 0 {
            return Err(Error::invalid("acceleration factors must be positive"));
        }
        Ok(Self {
            n_pe,
            n_pa,
            grid,
            acs: None,
            accel,
            shift: 0,
            elliptical: false,
        })
    }

    pub fn full(n_pe: usize, n_pa: usize) -> Self {
        Self::from_grid(n_pe, n_pa, vec![true; n_pe * n_pa], (1, 1)).expect("valid dims")
    }

    pub fn n_pe(&self) -> usize {
        self.n_pe
    }

    pub fn n_pa(&self) -> usize {
        self.n_pa
    }

    pub fn grid(&self) -> &[bool] {
        &self.grid
    }

    #[inline]
    pub fn is_sampled(&self, pe: usize, pa: usize) -> bool {
        self.grid[pe * self.n_pa + pa]
    }

    pub fn set(&mut self, pe: usize, pa: usize, v: bool) {
        self.grid[pe * self.n_pa + pa] = v;
    }

    pub fn count(&self) -> usize {
        self.grid.iter().filter(|&&b| b).count()
    }

    /// Grid size over realized sample count; infinite for an empty mask.
    pub fn net_acceleration(&self) -> f64 {
        (self.n_pe * self.n_pa) as f64 / self.count() as f64
    }

    /// Lattice membership of the exterior pattern (ignores the ACS and ellipse).
    pub fn on_lattice(&self, pe: usize, pa: usize) -> bool {
        let (r_pe, r_pa) = self.accel;
        pa.is_multiple_of(r_pa) && pe % r_pe == (self.shift * (pa / r_pa)) % r_pe
    }

    fn in_ellipse(&self, pe: usize, pa: usize) -> bool {
        inside_ellipse(pe, pa, self.n_pe, self.n_pa)
    }

    /// The same pattern with the ACS block sampled only where the exterior
    /// lattice would sample it.
    pub fn without_acs(&self) -> Self {
        let mut out = self.clone();
        if let Some(acs) = self.acs {
            for pe in acs.pe.0..=acs.pe.1 {
                for pa in acs.pa.0..=acs.pa.1 {
                    let keep = self.on_lattice(pe, pa) && (!self.elliptical || self.in_ellipse(pe, pa));
                    out.set(pe, pa, keep);
                }
            }
        }
        out.acs = None;
        out
    }

    /// Pattern with every entry of `region` sampled, on top of this mask.
    pub fn with_full_block(&self, region: &AcsRegion) -> Self {
        let mut out = self.clone();
        for pe in region.pe.0..=region.pe.1 {
            for pa in region.pa.0..=region.pa.1 {
                out.set(pe, pa, true);
            }
        }
        out
    }

    /// Check that `acs_bounds` index only sampled entries at the ACS rate.
    pub fn validate_acs(&self) -> Result<()> {
        if let Some(acs) = self.acs {
            if acs.pe.1 >= self.n_pe || acs.pa.1 >= self.n_pa {
                return Err(Error::invalid("ACS bounds exceed the grid"));
            }
            for pe in acs.pe.0..=acs.pe.1 {
                for pa in acs.pa.0..=acs.pa.1 {
                    let expected = pe % acs.rate.0 == 0 && pa % acs.rate.1 == 0;
                    if expected && !self.is_sampled(pe, pa) {
                        return Err(Error::invalid(format!(
                            "ACS entry ({pe}, {pa}) is not sampled"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn inside_ellipse(pe: usize, pa: usize, n_pe: usize, n_pa: usize) -> bool {
    let r = |i: usize, n: usize| {
        if n == 1 {
            0.0
        } else {
            (i as f64 - (n / 2) as f64) / (n as f64 / 2.0)
        }
    };
    r(pe, n_pe).powi(2) + r(pa, n_pa).powi(2) <= 1.0
}

fn check_rate(n: usize, r: usize, what: &str) -> Result<()> {
    if r == 0 || r > n {
        return Err(Error::invalid(format!("{what} acceleration {r} outside 1..={n}")));
    }
    Ok(())
}

/// Every `r`-th phase line from index 0, plus a centered block of `n_acs` lines.
pub fn uniform_1d(n_pe: usize, r: usize, n_acs: usize) -> Result<SamplingMask> {
    uniform_2d(n_pe, 1, r, 1, n_acs, if n_acs > 0 { 1 } else { 0 })
}

/// Lattice sampling plus a centered fully sampled `acs_pe x acs_pa` block.
pub fn uniform_2d(
    n_pe: usize,
    n_pa: usize,
    r_pe: usize,
    r_pa: usize,
    acs_pe: usize,
    acs_pa: usize,
) -> Result<SamplingMask> {
    if n_pe == 0 || n_pa == 0 {
        return Err(Error::invalid("mask extents must be positive"));
    }
    check_rate(n_pe, r_pe, "phase")?;
    check_rate(n_pa, r_pa, "partition")?;
    if acs_pe > n_pe || acs_pa > n_pa {
        return Err(Error::invalid("ACS block larger than the grid"));
    }
    let mut m = SamplingMask::from_grid(n_pe, n_pa, vec![false; n_pe * n_pa], (r_pe, r_pa))?;
    for pe in (0..n_pe).step_by(r_pe) {
        for pa in (0..n_pa).step_by(r_pa) {
            m.set(pe, pa, true);
        }
    }
    if acs_pe > 0 && acs_pa > 0 {
        let acs = AcsRegion::centered(n_pe, n_pa, acs_pe, acs_pa, (1, 1));
        m = m.with_full_block(&acs);
        m.acs = Some(acs);
    }
    Ok(m)
}

/// Sheared lattice: sampled `(pe, pa)` satisfy `pa = 0 mod R_pa` and
/// `pe = shift * (pa / R_pa) mod R_pe`.
pub fn caipi_2d(n_pe: usize, n_pa: usize, r_pe: usize, r_pa: usize, shift: usize) -> Result<SamplingMask> {
    let mut m = uniform_2d(n_pe, n_pa, r_pe, r_pa, 0, 0)?;
    m.shift = shift;
    for pe in 0..n_pe {
        for pa in 0..n_pa {
            let s = m.on_lattice(pe, pa);
            m.set(pe, pa, s);
        }
    }
    Ok(m)
}

/// Clear entries outside the inscribed ellipse; the ACS block is exempt.
pub fn elliptical_filter(mask: &SamplingMask) -> SamplingMask {
    let mut out = mask.clone();
    for pe in 0..mask.n_pe {
        for pa in 0..mask.n_pa {
            let exempt = mask.acs.is_some_and(|a| a.contains(pe, pa));
            if !exempt && !inside_ellipse(pe, pa, mask.n_pe, mask.n_pa) {
                out.set(pe, pa, false);
            }
        }
    }
    out.elliptical = true;
    out
}

/// Centered ACS block sampled on the `r_acs` lattice; exterior on the `r_ext`
/// lattice, optionally restricted to the inscribed ellipse.
pub fn hybrid_mask(
    n_pe: usize,
    n_pa: usize,
    acs_pe: usize,
    acs_pa: usize,
    r_acs: (usize, usize),
    r_ext: (usize, usize),
    elliptical: bool,
) -> Result<SamplingMask> {
    check_rate(n_pe, r_acs.0, "ACS phase")?;
    check_rate(n_pa, r_acs.1, "ACS partition")?;
    let mut m = uniform_2d(n_pe, n_pa, r_ext.0, r_ext.1, 0, 0)?;
    if acs_pe > n_pe || acs_pa > n_pa {
        return Err(Error::invalid("ACS block larger than the grid"));
    }
    if acs_pe > 0 && acs_pa > 0 {
        let acs = AcsRegion::centered(n_pe, n_pa, acs_pe, acs_pa, r_acs);
        for pe in acs.pe.0..=acs.pe.1 {
            for pa in acs.pa.0..=acs.pa.1 {
                m.set(pe, pa, pe % r_acs.0 == 0 && pa % r_acs.1 == 0);
            }
        }
        m.acs = Some(acs);
    }
    if elliptical {
        m = elliptical_filter(&m);
    }
    Ok(m)
}

/// Zero every unsampled (phase, partition) location of every readout and coil.
pub fn apply_mask(ksp: &KspaceData, mask: &SamplingMask) -> Result<KspaceData> {
    let [nro, npe, npa, nc] = ksp.dims();
    if npe != mask.n_pe || npa != mask.n_pa {
        return Err(Error::shape(format!(
            "mask {}x{} vs k-space phase/partition {npe}x{npa}",
            mask.n_pe, mask.n_pa
        )));
    }
    let mut out = ksp.clone();
    let data = out.tensor_mut().data_mut();
    let plane = npe * npa * nc;
    for ro in 0..nro {
        for (g, &keep) in mask.grid.iter().enumerate() {
            if !keep {
                let base = ro * plane + g * nc;
                for v in &mut data[base..base + nc] {
                    *v = num_complex::Complex64::new(0.0, 0.0);
                }
            }
        }
    }
    Ok(out)
}
