//! Second-moment blocks of `(X, Y, A, W, Z)`, the only input of the fitters.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Auxiliary variable whose moments enter a penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aux {
    A,
    W,
    Z,
}

impl Aux {
    pub fn name(self) -> &'static str {
        match self {
            Aux::A => "A",
            Aux::W => "W",
            Aux::Z => "Z",
        }
    }
}

/// Moments of one auxiliary block `V` with `(X, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxBlock {
    /// `E[X V^T]`, `d_X x d_V`.
    pub sxv: DMatrix<f64>,
    /// `E[Y V]`, length `d_V`.
    pub syv: DVector<f64>,
    /// `E[V V^T]`.
    pub svv: DMatrix<f64>,
}

impl AuxBlock {
    pub fn dim(&self) -> usize {
        self.svv.nrows()
    }
}

/// Sample means recorded by centred moment computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Means {
    pub x: DVector<f64>,
    pub y: f64,
    pub a: Option<DVector<f64>>,
    pub w: Option<DVector<f64>>,
    pub z: Option<DVector<f64>>,
}

impl Means {
    pub fn of(&self, aux: Aux) -> Option<&DVector<f64>> {
        match aux {
            Aux::A => self.a.as_ref(),
            Aux::W => self.w.as_ref(),
            Aux::Z => self.z.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub sxx: DMatrix<f64>,
    pub sxy: DVector<f64>,
    pub syy: f64,
    pub anchor: Option<AuxBlock>,
    pub proxy_w: Option<AuxBlock>,
    pub proxy_z: Option<AuxBlock>,
    /// `E[A W^T]`, `d_A x d_W`.
    pub saw: Option<DMatrix<f64>>,
    /// `E[A Z^T]`, `d_A x d_Z`.
    pub saz: Option<DMatrix<f64>>,
    /// `E[Z W^T]`, `d_Z x d_W`.
    pub szw: Option<DMatrix<f64>>,
    /// Rows backing the moments; `0` for population moments.
    pub n: usize,
    /// Present iff the moments are centred.
    pub means: Option<Means>,
}

impl MomentSet {
    pub fn new(sxx: DMatrix<f64>, sxy: DVector<f64>, syy: f64, n: usize) -> Result<Self> {
        linalg::ensure_square(&sxx, "Sxx")?;
        linalg::ensure_len(&sxy, sxx.nrows(), "Sxy")?;
        Ok(MomentSet {
            sxx,
            sxy,
            syy,
            anchor: None,
            proxy_w: None,
            proxy_z: None,
            saw: None,
            saz: None,
            szw: None,
            n,
            means: None,
        })
    }

    pub fn d_x(&self) -> usize {
        self.sxx.nrows()
    }

    pub fn is_centered(&self) -> bool {
        self.means.is_some()
    }

    fn check_block(&self, block: &AuxBlock, name: &str) -> Result<()> {
        let d = block.svv.nrows();
        linalg::ensure_shape(&block.svv, d, d, &format!("S{name}{name}"))?;
        linalg::ensure_shape(&block.sxv, self.d_x(), d, &format!("Sx{name}"))?;
        linalg::ensure_len(&block.syv, d, &format!("Sy{name}"))
    }

    pub fn with_anchor(mut self, block: AuxBlock) -> Result<Self> {
        self.check_block(&block, "a")?;
        self.anchor = Some(block);
        Ok(self)
    }

    pub fn with_proxy_w(mut self, block: AuxBlock) -> Result<Self> {
        self.check_block(&block, "w")?;
        self.proxy_w = Some(block);
        Ok(self)
    }

    pub fn with_proxy_z(mut self, block: AuxBlock) -> Result<Self> {
        self.check_block(&block, "z")?;
        self.proxy_z = Some(block);
        Ok(self)
    }

    pub fn with_szw(mut self, szw: DMatrix<f64>) -> Result<Self> {
        let (w, z) = (self.block(Aux::W)?.dim(), self.block(Aux::Z)?.dim());
        linalg::ensure_shape(&szw, z, w, "Szw")?;
        self.szw = Some(szw);
        Ok(self)
    }

    pub fn has(&self, aux: Aux) -> bool {
        self.block_opt(aux).is_some()
    }

    fn block_opt(&self, aux: Aux) -> Option<&AuxBlock> {
        match aux {
            Aux::A => self.anchor.as_ref(),
            Aux::W => self.proxy_w.as_ref(),
            Aux::Z => self.proxy_z.as_ref(),
        }
    }

    pub fn block(&self, aux: Aux) -> Result<&AuxBlock> {
        self.block_opt(aux)
            .ok_or_else(|| Error::MissingBlock(format!("moments of {} are required", aux.name())))
    }

    pub fn szw_required(&self) -> Result<&DMatrix<f64>> {
        self.szw
            .as_ref()
            .ok_or_else(|| Error::MissingBlock("cross moment E[ZW^T] requires both W and Z".into()))
    }

    /// Same moments with the roles of `W` and `Z` exchanged.
    pub fn swap_proxies(&self) -> Result<Self> {
        let mut m = self.clone();
        m.proxy_w = self.proxy_z.clone();
        m.proxy_z = self.proxy_w.clone();
        m.saw = self.saz.clone();
        m.saz = self.saw.clone();
        m.szw = self.szw.as_ref().map(|s| s.transpose());
        if let Some(means) = &mut m.means {
            std::mem::swap(&mut means.w, &mut means.z);
        }
        Ok(m)
    }

    /// Moments with the auxiliary block `aux` copied into the `W` slot, so
    /// that single-proxy fitters can be run on any of `A`, `W`, `Z`.
    pub fn with_block_as_w(&self, aux: Aux) -> Result<Self> {
        let mut m = self.clone();
        m.proxy_w = Some(self.block(aux)?.clone());
        if let Some(means) = &mut m.means {
            means.w = self.means.as_ref().and_then(|mm| mm.of(aux).cloned());
        }
        Ok(m)
    }
}

/// Second moments of a dataset; divisor `n` in both modes.
///
/// With `centering` the column means are subtracted first and recorded in
/// [`MomentSet::means`] so that fitters can place them in the intercept.
pub fn moments_from_data(data: &Dataset, centering: bool) -> Result<MomentSet> {
    let n = data.n();
    if n == 0 {
        return Err(Error::Data("dataset has no rows".into()));
    }
    if centering && n < 2 {
        return Err(Error::Data("centred moments need at least two rows".into()));
    }
    let dx = data.x.ncols();
    let mut blocks: Vec<&DMatrix<f64>> = vec![&data.x];
    let y_col = DMatrix::from_column_slice(n, 1, data.y.as_slice());
    blocks.push(&y_col);
    let mut offsets = Vec::new();
    let mut offset = dx + 1;
    for block in [&data.a, &data.w, &data.z] {
        match block {
            Some(b) => {
                if b.nrows() != n {
                    return Err(Error::dim("auxiliary block rows", n, b.nrows()));
                }
                offsets.push(Some((offset, b.ncols())));
                offset += b.ncols();
                blocks.push(b);
            }
            None => offsets.push(None),
        }
    }
    let mut stacked = DMatrix::zeros(n, offset);
    let mut col = 0;
    for b in &blocks {
        stacked.columns_mut(col, b.ncols()).copy_from(*b);
        col += b.ncols();
    }

    let means = if centering {
        let mu = stacked.row_mean();
        for j in 0..offset {
            let m = mu[j];
            stacked.column_mut(j).add_scalar_mut(-m);
        }
        Some(mu.transpose())
    } else {
        None
    };
    let gram = linalg::symmetrize(&(stacked.transpose() * &stacked / n as f64));

    let iy = dx;
    let mut m = MomentSet::new(
        gram.view((0, 0), (dx, dx)).into_owned(),
        gram.view((0, iy), (dx, 1)).column(0).into_owned(),
        gram[(iy, iy)],
        n,
    )?;
    let block_at = |(o, d): (usize, usize)| AuxBlock {
        sxv: gram.view((0, o), (dx, d)).into_owned(),
        syv: gram.view((o, iy), (d, 1)).column(0).into_owned(),
        svv: gram.view((o, o), (d, d)).into_owned(),
    };
    let cross = |(o1, d1): (usize, usize), (o2, d2): (usize, usize)| {
        gram.view((o1, o2), (d1, d2)).into_owned()
    };
    let (oa, ow, oz) = (offsets[0], offsets[1], offsets[2]);
    if let Some(o) = oa {
        m = m.with_anchor(block_at(o))?;
    }
    if let Some(o) = ow {
        m = m.with_proxy_w(block_at(o))?;
    }
    if let Some(o) = oz {
        m = m.with_proxy_z(block_at(o))?;
    }
    if let (Some(a), Some(w)) = (oa, ow) {
        m.saw = Some(cross(a, w));
    }
    if let (Some(a), Some(z)) = (oa, oz) {
        m.saz = Some(cross(a, z));
    }
    if let (Some(w), Some(z)) = (ow, oz) {
        m.szw = Some(cross(z, w));
    }
    if let Some(mu) = means {
        let seg = |o: Option<(usize, usize)>| o.map(|(o, d)| mu.rows(o, d).into_owned());
        m.means = Some(Means {
            x: mu.rows(0, dx).into_owned(),
            y: mu[iy],
            a: seg(oa),
            w: seg(ow),
            z: seg(oz),
        });
    }
    Ok(m)
}
