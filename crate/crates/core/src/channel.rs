//! Per-slot channel realizations for the cluster of cell 1.
//!
//! The cluster contains the three sector antennas of cell 1's site followed
//! by its pico-BSs, and the MSs dropped in cell 1. Large-scale gains are
//! fixed for a drop ([`LargeScale`]); small-scale Rayleigh fades and the
//! inter-cluster interference are redrawn every slot.
//!
//! Shadowing and interference fades are keyed by link identity, so the same
//! link sees the same draw whichever reuse pattern is active.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cellgeom::{
    self, db_to_linear, dbm_to_watts, CellId, LinkClass, Node, PropagationParams, Reuse, Topology,
    SECTORS_PER_SITE,
};
use crate::gaussinfo::CMatrix;
use crate::{Error, Result};

const CLUSTER_CELL: CellId = CellId(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsKind {
    Macro,
    Pico,
}

/// A node of the cluster under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterNode {
    Bs(usize),
    Ms(usize),
}

/// Channel state of one slot. `h_ul` maps MS symbols to BS observations
/// (`y = h_ul x + z`), `h_dl` maps BS signals to MS observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h_ul: CMatrix,
    pub h_dl: CMatrix,
    pub sigma2_z_ul: Vec<f64>,
    pub sigma2_z_dl: Vec<f64>,
    pub slot_index: u64,
    pub bs_kinds: Vec<BsKind>,
    /// Per-BS transmit power limits in watts.
    pub bs_max_power: Vec<f64>,
    /// Per-MS transmit power limits in watts.
    pub ms_max_power: Vec<f64>,
}

impl ChannelRealization {
    pub fn num_bs(&self) -> usize {
        self.h_ul.nrows()
    }

    pub fn num_ms(&self) -> usize {
        self.h_ul.ncols()
    }

    /// Checks the dimensions and noise variances for internal consistency.
    pub fn validate(&self) -> Result<()> {
        let (nb, nm) = (self.num_bs(), self.num_ms());
        if self.h_dl.nrows() != nm
            || self.h_dl.ncols() != nb
            || self.sigma2_z_ul.len() != nb
            || self.sigma2_z_dl.len() != nm
            || self.bs_kinds.len() != nb
            || self.bs_max_power.len() != nb
            || self.ms_max_power.len() != nm
        {
            return Err(Error::Domain("inconsistent channel realization dimensions".into()));
        }
        if self.sigma2_z_ul.iter().chain(&self.sigma2_z_dl).any(|v| !(*v > 0.0)) {
            return Err(Error::Domain("noise variances must be positive".into()));
        }
        Ok(())
    }
}

/// Thermal noise power in watts for a receiver noise figure.
pub fn thermal_noise_watts(noise_figure_db: f64, bandwidth_hz: f64) -> f64 {
    dbm_to_watts(-174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db)
}

/// Drop-level quantities: cluster gains and the mean received powers of all
/// potential inter-cluster interferers.
#[derive(Debug, Clone)]
pub struct LargeScale {
    pub bs_nodes: Vec<Node>,
    pub ms_nodes: Vec<Node>,
    pub bs_kinds: Vec<BsKind>,
    /// Linear power gains, `N_B × N_M`.
    pub gain: DMatrix<f64>,
    pub thermal_bs: Vec<f64>,
    pub thermal_ms: Vec<f64>,
    pub bs_max_power: Vec<f64>,
    pub ms_max_power: Vec<f64>,
    /// Per cluster MS: `(link key, mean received power)` of every co-band BS.
    pub dl_interference: Vec<Vec<(u64, f64)>>,
    /// Per interfering sector: candidate MSs, each with `(link key, mean
    /// received power)` at every cluster BS. One candidate is active per slot.
    pub ul_interference: Vec<UplinkInterferers>,
}

#[derive(Debug, Clone)]
pub struct UplinkInterferers {
    pub group_key: u64,
    pub candidates: Vec<Vec<(u64, f64)>>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a base key with further words into a new key.
pub fn mix_key(base: u64, words: &[u64]) -> u64 {
    words.iter().fold(splitmix64(base), |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

fn unit_open(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Pair of independent standard normals determined by `key`.
fn keyed_normals(key: u64) -> (f64, f64) {
    let a = splitmix64(key);
    let b = splitmix64(a);
    let (u1, u2) = (unit_open(a), unit_open(b));
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

/// `|h|²` of a unit-variance circularly-symmetric Gaussian fade keyed by `key`.
fn keyed_fade_power(key: u64) -> f64 {
    let (a, b) = keyed_normals(key);
    0.5 * (a * a + b * b)
}

fn node_code(node: Node) -> u64 {
    match node {
        Node::MacroSector { cell, sector } => (cell.0 as u64) << 16 | sector as u64,
        Node::Pico { cell, index } => (cell.0 as u64) << 16 | 1 << 12 | index as u64,
        Node::Ms { cell, index } => (cell.0 as u64) << 16 | 2 << 12 | index as u64,
    }
}

fn link_key(base: u64, bs: Node, ms: Node) -> u64 {
    mix_key(base, &[node_code(bs), node_code(ms)])
}

fn site_nodes(topology: &Topology, cell: CellId) -> Vec<Node> {
    let mut v: Vec<Node> =
        (0..SECTORS_PER_SITE).map(|sector| Node::MacroSector { cell, sector }).collect();
    v.extend((0..topology.pico_positions[cell.index()].len()).map(|index| Node::Pico { cell, index }));
    v
}

impl LargeScale {
    /// Evaluates path loss, antenna patterns and shadowing for every link
    /// the cluster needs. Shadowing is drawn once per link.
    pub fn compute<R: Rng + ?Sized>(
        topology: &Topology,
        params: &PropagationParams,
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        let shadow_base = rng.next_u64();
        let shadowed_gain = |bs: Node, ms: Node| -> Result<f64> {
            let a = topology.endpoint(bs)?;
            let b = topology.endpoint(ms)?;
            let sd = match cellgeom::link_class(&a, &b) {
                LinkClass::Macro => params.shadowing_macro_db,
                LinkClass::Pico => params.shadowing_pico_db,
            };
            let shadow = sd * keyed_normals(link_key(shadow_base, bs, ms)).0;
            Ok(db_to_linear(cellgeom::link_budget_db(&a, &b, params, shadow)?))
        };
        let tx_power = |node: Node| match node {
            Node::MacroSector { .. } => dbm_to_watts(params.tx_power_macro_dbm),
            Node::Pico { .. } => dbm_to_watts(params.tx_power_pico_dbm),
            Node::Ms { .. } => dbm_to_watts(params.tx_power_ms_dbm),
        };

        let bs_nodes = site_nodes(topology, CLUSTER_CELL);
        let ms_nodes: Vec<Node> = (0..topology.ms_positions[CLUSTER_CELL.index()].len())
            .map(|index| Node::Ms { cell: CLUSTER_CELL, index })
            .collect();
        let bs_kinds: Vec<BsKind> = bs_nodes
            .iter()
            .map(|n| if matches!(n, Node::MacroSector { .. }) { BsKind::Macro } else { BsKind::Pico })
            .collect();

        let mut gain = DMatrix::zeros(bs_nodes.len(), ms_nodes.len());
        for (i, &bs) in bs_nodes.iter().enumerate() {
            for (k, &ms) in ms_nodes.iter().enumerate() {
                gain[(i, k)] = shadowed_gain(bs, ms)?;
            }
        }

        let thermal_bs = bs_kinds
            .iter()
            .map(|k| {
                let nf = match k {
                    BsKind::Macro => params.noise_figure_macro_db,
                    BsKind::Pico => params.noise_figure_pico_db,
                };
                thermal_noise_watts(nf, params.bandwidth_hz)
            })
            .collect();
        let thermal_ms =
            vec![thermal_noise_watts(params.noise_figure_ms_db, params.bandwidth_hz); ms_nodes.len()];

        let mut dl_interference = vec![Vec::new(); ms_nodes.len()];
        let mut ul_interference = Vec::new();
        for &cell in &topology.interferer_set {
            let others = site_nodes(topology, cell);
            for (k, &ms) in ms_nodes.iter().enumerate() {
                for &bs in &others {
                    dl_interference[k].push((link_key(shadow_base ^ 0xD1, bs, ms), tx_power(bs) * shadowed_gain(bs, ms)?));
                }
            }
            for sector in 0..SECTORS_PER_SITE {
                let mut candidates = Vec::new();
                for (index, p) in topology.ms_positions[cell.index()].iter().enumerate() {
                    if topology.serving_sector(cell, p) != sector {
                        continue;
                    }
                    let ms = Node::Ms { cell, index };
                    let per_bs = bs_nodes
                        .iter()
                        .map(|&bs| Ok((link_key(shadow_base ^ 0x11, bs, ms), tx_power(ms) * shadowed_gain(bs, ms)?)))
                        .collect::<Result<Vec<_>>>()?;
                    candidates.push(per_bs);
                }
                ul_interference.push(UplinkInterferers {
                    group_key: node_code(Node::MacroSector { cell, sector }),
                    candidates,
                });
            }
        }

        Ok(Self {
            bs_max_power: bs_nodes.iter().map(|&n| tx_power(n)).collect(),
            ms_max_power: ms_nodes.iter().map(|&n| tx_power(n)).collect(),
            bs_nodes,
            ms_nodes,
            bs_kinds,
            gain,
            thermal_bs,
            thermal_ms,
            dl_interference,
            ul_interference,
        })
    }

    pub fn num_bs(&self) -> usize {
        self.bs_nodes.len()
    }

    pub fn num_ms(&self) -> usize {
        self.ms_nodes.len()
    }

    /// Thermal noise plus the faded received power of all co-band
    /// interferers at `node` for the slot identified by `slot_key`.
    pub fn noise_for_slot(&self, node: ClusterNode, slot_key: u64) -> Result<f64> {
        match node {
            ClusterNode::Ms(k) => {
                let thermal = *self
                    .thermal_ms
                    .get(k)
                    .ok_or_else(|| Error::Domain(format!("unknown cluster MS {k}")))?;
                let interference: f64 = self.dl_interference[k]
                    .iter()
                    .map(|&(key, p)| p * keyed_fade_power(mix_key(slot_key, &[key])))
                    .sum();
                Ok(thermal + interference)
            }
            ClusterNode::Bs(i) => {
                let thermal = *self
                    .thermal_bs
                    .get(i)
                    .ok_or_else(|| Error::Domain(format!("unknown cluster BS {i}")))?;
                let mut interference = 0.0;
                for group in &self.ul_interference {
                    if group.candidates.is_empty() {
                        continue;
                    }
                    let pick = mix_key(slot_key, &[group.group_key]) % group.candidates.len() as u64;
                    let (key, p) = group.candidates[pick as usize][i];
                    interference += p * keyed_fade_power(mix_key(slot_key, &[key]));
                }
                Ok(thermal + interference)
            }
        }
    }

    /// Effective noise variance (thermal plus inter-cluster interference
    /// treated as noise) at a cluster node, with fades drawn from `rng`.
    pub fn effective_noise_variance<R: Rng + ?Sized>(&self, node: ClusterNode, rng: &mut R) -> Result<f64> {
        let slot_key = rng.next_u64();
        self.noise_for_slot(node, slot_key)
    }
}

fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws the small-scale fading and interference of one slot.
pub fn realize_channel<R: Rng + ?Sized>(large: &LargeScale, slot: u64, rng: &mut R) -> Result<ChannelRealization> {
    let (nb, nm) = (large.num_bs(), large.num_ms());
    let h_ul = CMatrix::from_fn(nb, nm, |i, k| cn01(rng) * large.gain[(i, k)].sqrt());
    let h_dl = CMatrix::from_fn(nm, nb, |k, i| cn01(rng) * large.gain[(i, k)].sqrt());
    let slot_key = rng.next_u64();
    let sigma2_z_ul = (0..nb)
        .map(|i| large.noise_for_slot(ClusterNode::Bs(i), slot_key))
        .collect::<Result<Vec<_>>>()?;
    let sigma2_z_dl = (0..nm)
        .map(|k| large.noise_for_slot(ClusterNode::Ms(k), slot_key))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelRealization {
        h_ul,
        h_dl,
        sigma2_z_ul,
        sigma2_z_dl,
        slot_index: slot,
        bs_kinds: large.bs_kinds.clone(),
        bs_max_power: large.bs_max_power.clone(),
        ms_max_power: large.ms_max_power.clone(),
    })
}

/// Convenience wrapper: large-scale evaluation and one slot.
pub fn realize_slot<R: Rng + ?Sized>(
    topology: &Topology,
    params: &PropagationParams,
    slot: u64,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let large = LargeScale::compute(topology, params, rng)?;
    realize_channel(&large, slot, rng)
}

/// Synthetic realization without geometry: i.i.d. CN(0,1) fades, noise
/// variances uniform in [0.5, 1.5] and every power limit equal to `power`.
/// The first `min(3, n_bs)` BSs are macros. Used for unit studies and tests.
pub fn iid_realization<R: Rng + ?Sized>(rng: &mut R, n_bs: usize, n_ms: usize, power: f64) -> ChannelRealization {
    let h_ul = CMatrix::from_fn(n_bs, n_ms, |_, _| cn01(rng));
    let h_dl = CMatrix::from_fn(n_ms, n_bs, |_, _| cn01(rng));
    let sigma2_z_ul = (0..n_bs).map(|_| rng.random_range(0.5..1.5)).collect();
    let sigma2_z_dl = (0..n_ms).map(|_| rng.random_range(0.5..1.5)).collect();
    ChannelRealization {
        h_ul,
        h_dl,
        sigma2_z_ul,
        sigma2_z_dl,
        slot_index: 0,
        bs_kinds: (0..n_bs).map(|i| if i < 3 { BsKind::Macro } else { BsKind::Pico }).collect(),
        bs_max_power: vec![power; n_bs],
        ms_max_power: vec![power; n_ms],
    }
}

/// Reuse pattern shortcut used by tests and the harness.
pub fn topology_for(seed: u64, k: usize, n: usize, reuse: Reuse, params: &PropagationParams) -> Result<Topology> {
    cellgeom::build_layout(seed, k, n, reuse, params)
}
