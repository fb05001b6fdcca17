//! 19-cell hexagonal layout with three-sector macro sites, pico-BS and MS
//! drops, and the large-scale propagation model (path loss, sector antenna
//! pattern, log-normal shadowing, antenna gains).
//!
//! Cells are flat-topped hexagons. Cell 1 sits at the origin, cells 2–7 form
//! the inner ring and cells 8–19 the outer ring. Outer-ring cells with even
//! numbers lie between two inner-ring cells at distance `√3·ISD`; under
//! reuse 1/3 those are exactly the cells sharing cell 1's band.

use nalgebra::{Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NUM_CELLS: usize = 19;
pub const SECTORS_PER_SITE: usize = 3;

/// Sector boresights in degrees, counter-clockwise from the x axis.
pub const SECTOR_BORESIGHTS_DEG: [f64; SECTORS_PER_SITE] = [30.0, 150.0, 270.0];
/// One-based cell number: cell 1 is the center, 2-7 the first ring, 8-19 the second.
/// One-based cell number as drawn on the layout figure (cell 1 is the center).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId(pub usize);

impl CellId {
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(idx: usize) -> Self {
        CellId(idx + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Band {
    B1,
    B2,
    B3,
}

/// Frequency reuse pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Reuse {
    /// All cells share the whole band.
    #[serde(rename = "f1")]
    Full,
    /// Three bands, cell 1 co-band only with cells 8, 10, 12, 14, 16, 18.
    #[default]
    #[serde(rename = "f1_3")]
    Third,
}

/// Large-scale propagation parameters. Defaults follow the usual 3GPP
/// heterogeneous-network evaluation values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationParams {
    /// Macro path loss `a + b·log10(R[km])`.
    pub macro_pathloss: (f64, f64),
    /// Pico path loss `a + b·log10(R[m])`.
    pub pico_pathloss: (f64, f64),
    pub theta_3db_deg: f64,
    pub max_attenuation_db: f64,
    pub shadowing_macro_db: f64,
    pub shadowing_pico_db: f64,
    pub antenna_gain_macro_dbi: f64,
    pub antenna_gain_pico_dbi: f64,
    pub antenna_gain_ms_dbi: f64,
    pub noise_figure_macro_db: f64,
    pub noise_figure_pico_db: f64,
    pub noise_figure_ms_db: f64,
    pub tx_power_macro_dbm: f64,
    pub tx_power_pico_dbm: f64,
    pub tx_power_ms_dbm: f64,
    pub bandwidth_hz: f64,
    pub inter_site_distance_m: f64,
    pub min_distance_macro_m: f64,
    pub min_distance_pico_m: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            macro_pathloss: (128.1, 37.6),
            pico_pathloss: (38.0, 30.0),
            theta_3db_deg: 65.0,
            max_attenuation_db: 20.0,
            shadowing_macro_db: 10.0,
            shadowing_pico_db: 6.0,
            antenna_gain_macro_dbi: 15.0,
            antenna_gain_pico_dbi: 0.0,
            antenna_gain_ms_dbi: 0.0,
            noise_figure_macro_db: 5.0,
            noise_figure_pico_db: 6.0,
            noise_figure_ms_db: 9.0,
            tx_power_macro_dbm: 46.0,
            tx_power_pico_dbm: 24.0,
            tx_power_ms_dbm: 23.0,
            bandwidth_hz: 10e6,
            inter_site_distance_m: 500.0,
            min_distance_macro_m: 10.0,
            min_distance_pico_m: 1.0,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.macro_pathloss.0,
            self.macro_pathloss.1,
            self.pico_pathloss.0,
            self.pico_pathloss.1,
            self.theta_3db_deg,
            self.max_attenuation_db,
            self.shadowing_macro_db,
            self.shadowing_pico_db,
            self.antenna_gain_macro_dbi,
            self.antenna_gain_pico_dbi,
            self.antenna_gain_ms_dbi,
            self.noise_figure_macro_db,
            self.noise_figure_pico_db,
            self.noise_figure_ms_db,
            self.tx_power_macro_dbm,
            self.tx_power_pico_dbm,
            self.tx_power_ms_dbm,
            self.bandwidth_hz,
            self.inter_site_distance_m,
            self.min_distance_macro_m,
            self.min_distance_pico_m,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("propagation parameters must be finite".into()));
        }
        if self.inter_site_distance_m <= 0.0 {
            return Err(Error::Config(format!(
                "inter-site distance must be positive, got {}",
                self.inter_site_distance_m
            )));
        }
        if self.theta_3db_deg <= 0.0 {
            return Err(Error::Config("theta_3db must be positive".into()));
        }
        if self.shadowing_macro_db < 0.0 || self.shadowing_pico_db < 0.0 {
            return Err(Error::Config("shadowing deviations must be non-negative".into()));
        }
        if self.bandwidth_hz <= 0.0 {
            return Err(Error::Config("bandwidth must be positive".into()));
        }
        if self.min_distance_macro_m < 0.0 || self.min_distance_pico_m < 0.0 {
            return Err(Error::Config("minimum distances must be non-negative".into()));
        }
        // The minimum distances must leave room in a hexagon for a drop.
        let apothem = self.inter_site_distance_m / 2.0;
        if self.min_distance_macro_m >= apothem {
            return Err(Error::Config(
                "minimum macro distance exceeds the cell size".into(),
            ));
        }
        Ok(())
    }

    /// Hexagon circumradius (center to vertex).
    pub fn cell_radius_m(&self) -> f64 {
        self.inter_site_distance_m / 3f64.sqrt()
    }
}

/// Which path-loss and shadowing law a link follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkClass {
    Macro,
    Pico,
}

/// Radio node in the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    MacroSector { cell: CellId, sector: usize },
    Pico { cell: CellId, index: usize },
    Ms { cell: CellId, index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub inter_site_distance: f64,
    pub macro_sites: Vec<Point2<f64>>,
    pub sector_boresights: Vec<[f64; SECTORS_PER_SITE]>,
    pub pico_positions: Vec<Vec<Point2<f64>>>,
    pub ms_positions: Vec<Vec<Point2<f64>>>,
    pub reuse_band: Vec<Band>,
    /// Cells sharing cell 1's band, i.e. the inter-cluster interferers.
    pub interferer_set: Vec<CellId>,
}

/// Unit directions from a flat-topped cell center to its six neighbours.
fn neighbour_direction(j: usize) -> Vector2<f64> {
    let a = (30.0 + 60.0 * (j % 6) as f64).to_radians();
    Vector2::new(a.cos(), a.sin())
}

/// Axial-like lattice offsets of the 19 cells in ring order, in units of ISD.
fn cell_offsets() -> Vec<Vector2<f64>> {
    let mut out = Vec::with_capacity(NUM_CELLS);
    out.push(Vector2::zeros());
    for j in 0..6 {
        out.push(neighbour_direction(j));
    }
    for j in 0..6 {
        out.push(neighbour_direction(j) + neighbour_direction(j + 1));
        out.push(2.0 * neighbour_direction(j + 1));
    }
    out
}

/// Band of each cell under a three-colouring where co-band cells are `√3·ISD` apart.
fn band_assignment(reuse: Reuse) -> Vec<Band> {
    match reuse {
        Reuse::Full => vec![Band::B1; NUM_CELLS],
        Reuse::Third => {
            let mut bands = vec![Band::B1];
            for j in 0..6 {
                bands.push(if j % 2 == 0 { Band::B2 } else { Band::B3 });
            }
            for j in 0..6 {
                bands.push(Band::B1);
                // 2·d_{j+1} is co-band with inner-ring cell j+1 shifted by a
                // √3 lattice vector, i.e. the opposite colour of cell j+1.
                bands.push(if (j + 1) % 2 == 0 { Band::B3 } else { Band::B2 });
            }
            bands
        }
    }
}

/// True when `p` lies in the flat-topped hexagon of circumradius `r` centered at `c`.
pub fn in_hexagon(p: &Point2<f64>, c: &Point2<f64>, r: f64) -> bool {
    let d = p - c;
    let (x, y) = (d.x.abs(), d.y.abs());
    let s3 = 3f64.sqrt();
    y <= s3 / 2.0 * r + 1e-9 && s3 * x + y <= s3 * r + 1e-9
}

fn uniform_in_hexagon<R: Rng>(rng: &mut R, c: &Point2<f64>, r: f64) -> Point2<f64> {
    let h = 3f64.sqrt() / 2.0 * r;
    loop {
        let p = Point2::new(c.x + rng.random_range(-r..r), c.y + rng.random_range(-h..h));
        if in_hexagon(&p, c, r) {
            return p;
        }
    }
}

/// Drops `n` pico-BSs and `k` MSs uniformly in every one of the 19 cells.
///
/// MSs keep the configured minimum distance to every macro site and every
/// pico-BS; rejected positions are redrawn.
pub fn build_layout(
    seed: u64,
    k: usize,
    n: usize,
    reuse: Reuse,
    params: &PropagationParams,
) -> Result<Topology> {
    params.validate()?;
    if k == 0 {
        return Err(Error::Config("at least one MS per cell is required".into()));
    }
    let isd = params.inter_site_distance_m;
    let r = params.cell_radius_m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let macro_sites: Vec<Point2<f64>> =
        cell_offsets().into_iter().map(|o| Point2::from(o * isd)).collect();

    let pico_positions: Vec<Vec<Point2<f64>>> = macro_sites
        .iter()
        .map(|c| (0..n).map(|_| uniform_in_hexagon(&mut rng, c, r)).collect())
        .collect();

    let too_close = |p: &Point2<f64>| {
        macro_sites.iter().any(|s| (p - s).norm() < params.min_distance_macro_m)
            || pico_positions
                .iter()
                .flatten()
                .any(|q| (p - q).norm() < params.min_distance_pico_m)
    };
    let mut ms_positions = Vec::with_capacity(NUM_CELLS);
    for c in &macro_sites {
        let mut cell = Vec::with_capacity(k);
        while cell.len() < k {
            let p = uniform_in_hexagon(&mut rng, c, r);
            if !too_close(&p) {
                cell.push(p);
            }
        }
        ms_positions.push(cell);
    }

    let reuse_band = band_assignment(reuse);
    let interferer_set = (1..NUM_CELLS)
        .filter(|&i| reuse_band[i] == reuse_band[0])
        .map(CellId::from_index)
        .collect();

    Ok(Topology {
        inter_site_distance: isd,
        macro_sites,
        sector_boresights: vec![SECTOR_BORESIGHTS_DEG; NUM_CELLS],
        pico_positions,
        ms_positions,
        reuse_band,
        interferer_set,
    })
}

impl Topology {
    pub fn position(&self, node: Node) -> Result<Point2<f64>> {
        let cell_ok = |c: CellId| c.0 >= 1 && c.0 <= self.macro_sites.len();
        match node {
            Node::MacroSector { cell, sector } if cell_ok(cell) && sector < SECTORS_PER_SITE => {
                Ok(self.macro_sites[cell.index()])
            }
            Node::Pico { cell, index } if cell_ok(cell) => self.pico_positions[cell.index()]
                .get(index)
                .copied()
                .ok_or_else(|| Error::Domain(format!("no pico {index} in cell {}", cell.0))),
            Node::Ms { cell, index } if cell_ok(cell) => self.ms_positions[cell.index()]
                .get(index)
                .copied()
                .ok_or_else(|| Error::Domain(format!("no MS {index} in cell {}", cell.0))),
            other => Err(Error::Domain(format!("unknown node {other:?}"))),
        }
    }

    /// Sector of `cell`'s site whose boresight is closest to the direction of `p`.
    pub fn serving_sector(&self, cell: CellId, p: &Point2<f64>) -> usize {
        let site = self.macro_sites[cell.index()];
        let bearing = bearing_deg(&site, p);
        let bs = &self.sector_boresights[cell.index()];
        (0..SECTORS_PER_SITE)
            .min_by(|&a, &b| {
                wrap_deg(bearing - bs[a]).abs().total_cmp(&wrap_deg(bearing - bs[b]).abs())
            })
            .unwrap_or(0)
    }

    pub fn pico_count(&self) -> usize {
        self.pico_positions.first().map_or(0, Vec::len)
    }

    pub fn ms_count(&self) -> usize {
        self.ms_positions.first().map_or(0, Vec::len)
    }
}

fn bearing_deg(from: &Point2<f64>, to: &Point2<f64>) -> f64 {
    let d = to - from;
    d.y.atan2(d.x).to_degrees()
}

/// Wraps an angle to `[-180, 180]`.
pub fn wrap_deg(a: f64) -> f64 {
    if (-180.0..=180.0).contains(&a) {
        return a;
    }
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 && a > 0.0 {
        180.0
    } else {
        w
    }
}

pub fn pathloss_macro_db(params: &PropagationParams, distance_km: f64) -> Result<f64> {
    if !(distance_km > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance_km} km")));
    }
    Ok(params.macro_pathloss.0 + params.macro_pathloss.1 * distance_km.log10())
}

pub fn pathloss_pico_db(params: &PropagationParams, distance_m: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance_m} m")));
    }
    Ok(params.pico_pathloss.0 + params.pico_pathloss.1 * distance_m.log10())
}

/// Horizontal sector pattern `-min(12 (θ/θ3dB)², Am)` for an offset from boresight.
pub fn sector_gain_db(params: &PropagationParams, offset_deg: f64) -> f64 {
    let theta = wrap_deg(offset_deg);
    -(12.0 * (theta / params.theta_3db_deg).powi(2)).min(params.max_attenuation_db)
}

/// Zero-mean Gaussian shadowing in dB with the deviation of `class`.
pub fn shadowing_db<R: Rng + ?Sized>(class: LinkClass, params: &PropagationParams, rng: &mut R) -> f64 {
    let sd = match class {
        LinkClass::Macro => params.shadowing_macro_db,
        LinkClass::Pico => params.shadowing_pico_db,
    };
    let g: f64 = rng.sample(StandardNormal);
    sd * g
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// A link endpoint reduced to what the propagation model needs.
#[derive(Debug, Clone, Copy)]
pub struct Endpoint {
    pub position: Point2<f64>,
    pub kind: EndpointKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndpointKind {
    MacroSector { boresight_deg: f64 },
    Pico,
    Ms,
}

impl EndpointKind {
    fn antenna_gain_dbi(self, params: &PropagationParams) -> f64 {
        match self {
            EndpointKind::MacroSector { .. } => params.antenna_gain_macro_dbi,
            EndpointKind::Pico => params.antenna_gain_pico_dbi,
            EndpointKind::Ms => params.antenna_gain_ms_dbi,
        }
    }
}

impl Topology {
    pub fn endpoint(&self, node: Node) -> Result<Endpoint> {
        let position = self.position(node)?;
        let kind = match node {
            Node::MacroSector { cell, sector } => EndpointKind::MacroSector {
                boresight_deg: self.sector_boresights[cell.index()][sector],
            },
            Node::Pico { .. } => EndpointKind::Pico,
            Node::Ms { .. } => EndpointKind::Ms,
        };
        Ok(Endpoint { position, kind })
    }
}

/// Link class of a pair: macro if either end is a macro sector, pico otherwise.
pub fn link_class(a: &Endpoint, b: &Endpoint) -> LinkClass {
    let is_macro = |e: &Endpoint| matches!(e.kind, EndpointKind::MacroSector { .. });
    if is_macro(a) || is_macro(b) {
        LinkClass::Macro
    } else {
        LinkClass::Pico
    }
}

/// Large-scale gain in dB with a given shadowing value: antenna gains,
/// sector pattern of any macro end, minus path loss.
pub fn link_budget_db(
    a: &Endpoint,
    b: &Endpoint,
    params: &PropagationParams,
    shadow_db: f64,
) -> Result<f64> {
    let d = (b.position - a.position).norm();
    if d == 0.0 {
        return Err(Error::Domain("coincident link endpoints".into()));
    }
    let class = link_class(a, b);
    let pl = match class {
        LinkClass::Macro => pathloss_macro_db(params, d.max(params.min_distance_macro_m) / 1e3)?,
        LinkClass::Pico => pathloss_pico_db(params, d.max(params.min_distance_pico_m))?,
    };
    let mut pattern = 0.0;
    for (me, other) in [(a, b), (b, a)] {
        if let EndpointKind::MacroSector { boresight_deg } = me.kind {
            pattern += sector_gain_db(params, bearing_deg(&me.position, &other.position) - boresight_deg);
        }
    }
    Ok(-pl + shadow_db + pattern + a.kind.antenna_gain_dbi(params) + b.kind.antenna_gain_dbi(params))
}

/// Linear power gain of the link `tx → rx`, drawing its shadowing from `rng`.
pub fn link_gain_linear<R: Rng + ?Sized>(
    tx: Node,
    rx: Node,
    topology: &Topology,
    params: &PropagationParams,
    rng: &mut R,
) -> Result<f64> {
    let a = topology.endpoint(tx)?;
    let b = topology.endpoint(rx)?;
    let shadow = shadowing_db(link_class(&a, &b), params, rng);
    Ok(db_to_linear(link_budget_db(&a, &b, params, shadow)?))
}
