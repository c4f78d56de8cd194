//! A fully specified network realization: geometry, clusters, pilots,
//! powers and the estimation statistics derived from them.

use rand::Rng;

use crate::channel::{build_estimation_stats, draw_channel, ChannelDraw, EstimationStats, SignalModel};
use crate::clustering::{build_selection, cap_ap_load, derive_plan, ClusterPlan};
use crate::config::{Powers, SimConfig};
use crate::error::{Error, Result};
use crate::netgeom::{generate_layout, NetworkLayout};
use crate::pilots::{assign_pilots, PilotPlan};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug)]
pub struct Deployment {
    pub layout: NetworkLayout,
    pub plan: ClusterPlan,
    pub pilots: PilotPlan,
    pub powers: Powers,
    pub antennas: usize,
    pub signal: SignalModel,
    pub stats: EstimationStats,
}

impl Deployment {
    pub fn new(
        layout: NetworkLayout,
        plan: ClusterPlan,
        pilots: PilotPlan,
        powers: Powers,
        antennas: usize,
        signal: SignalModel,
    ) -> Result<Deployment> {
        let (m, k) = layout.gains.shape();
        let consistent = plan.num_aps() == m
            && plan.num_ues() == k
            && plan.num_seus() == layout.num_seus()
            && pilots.pilot_of.len() == k
            && powers.ul.len() == k
            && powers.noise_ul.len() == plan.num_seus()
            && antennas > 0;
        if !consistent {
            return Err(Error::Config("deployment parts have inconsistent dimensions".into()));
        }
        let stats = build_estimation_stats(&layout, &plan, &pilots, &powers);
        Ok(Deployment { layout, plan, pilots, powers, antennas, signal, stats })
    }

    /// Builds the selection, cluster plan and pilot plan for an existing
    /// layout according to `cfg`.
    pub fn from_layout(cfg: &SimConfig, layout: NetworkLayout, seed: u64, signal: SignalModel) -> Result<Deployment> {
        let mut omega = build_selection(&layout.gains, cfg.selection_threshold_db);
        if let Some(cap) = cfg.max_ues_per_ap {
            omega = cap_ap_load(&omega, &layout.gains, cap);
        }
        let plan = derive_plan(&omega, &layout.ap_to_seu, layout.num_seus())?;
        let pilots = assign_pilots(
            cfg.num_ues,
            cfg.num_pilots,
            cfg.pilot_policy,
            &layout.ue_positions,
            &mut stream(seed, Stream::Pilots, 0),
        )?;
        let powers = cfg.powers().with_seu_count(layout.num_seus());
        Deployment::new(layout, plan, pilots, powers, cfg.antennas_per_ap, signal)
    }

    pub fn generate(cfg: &SimConfig, seed: u64, signal: SignalModel) -> Result<Deployment> {
        let layout = generate_layout(cfg, seed)?;
        Deployment::from_layout(cfg, layout, seed, signal)
    }

    pub fn num_ues(&self) -> usize {
        self.plan.num_ues()
    }

    pub fn num_seus(&self) -> usize {
        self.plan.num_seus()
    }

    /// Rows of the stacked per-SEU vectors (M_l N).
    pub fn seu_dim(&self, seu: usize) -> usize {
        self.plan.seu_members[seu].len() * self.antennas
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelDraw {
        draw_channel(&self.layout, &self.plan, &self.stats, &self.pilots, &self.powers, self.antennas, rng)
    }

    /// Same network with a different antenna count per AP.
    pub fn with_antennas(&self, antennas: usize) -> Deployment {
        Deployment { antennas, ..self.clone() }
    }

    /// Whether the received signal of UE `i` at AP `m` reaches the combiner.
    #[inline]
    pub(crate) fn link_visible(&self, m: usize, i: usize) -> bool {
        match self.signal {
            SignalModel::ServedLinks => self.plan.serves(m, i),
            SignalModel::FullChannel => true,
        }
    }
}
