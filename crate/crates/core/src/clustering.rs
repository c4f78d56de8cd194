//! AP selection matrix and the per-SEU / per-UE index sets derived from it.

use std::io::Write;

use nalgebra::DMatrix;

use crate::config::Threshold;
use crate::error::{Error, Result};

/// Strongest AP for UE `k`, lowest index on ties.
fn strongest_ap(gains: &DMatrix<f64>, k: usize) -> usize {
    let mut best = 0;
    for m in 1..gains.nrows() {
        if gains[(m, k)] > gains[(best, k)] {
            best = m;
        }
    }
    best
}

/// Selects, for each UE, every AP whose gain is within `threshold` dB of the
/// UE's strongest AP. The strongest AP is always selected.
pub fn build_selection(gains: &DMatrix<f64>, threshold: Threshold) -> DMatrix<bool> {
    let (m_count, k_count) = gains.shape();
    if threshold.is_all() {
        return DMatrix::from_element(m_count, k_count, true);
    }
    let ratio = 10f64.powf(-threshold.db() / 10.0);
    let mut omega = DMatrix::from_element(m_count, k_count, false);
    for k in 0..k_count {
        let best = strongest_ap(gains, k);
        let floor = gains[(best, k)] * ratio;
        for m in 0..m_count {
            omega[(m, k)] = gains[(m, k)] >= floor;
        }
        omega[(best, k)] = true;
    }
    omega
}

/// Limits every AP to its `max_ues` strongest selected UEs. A UE left with no
/// AP falls back to its strongest AP.
pub fn cap_ap_load(omega: &DMatrix<bool>, gains: &DMatrix<f64>, max_ues: usize) -> DMatrix<bool> {
    let (m_count, k_count) = omega.shape();
    let mut capped = omega.clone();
    for m in 0..m_count {
        let mut served: Vec<usize> = (0..k_count).filter(|&k| omega[(m, k)]).collect();
        if served.len() <= max_ues {
            continue;
        }
        served.sort_by(|&a, &b| gains[(m, b)].total_cmp(&gains[(m, a)]).then(a.cmp(&b)));
        for &k in &served[max_ues..] {
            capped[(m, k)] = false;
        }
    }
    for k in 0..k_count {
        if (0..m_count).all(|m| !capped[(m, k)]) {
            capped[(strongest_ap(gains, k), k)] = true;
        }
    }
    capped
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPlan {
    /// Global selection matrix, APs along rows.
    pub omega: DMatrix<bool>,
    pub ap_to_seu: Vec<usize>,
    /// Global AP indices under each SEU, increasing.
    pub seu_members: Vec<Vec<usize>>,
    /// Row slice of `omega` for each SEU (M_l x K).
    pub omega_per_seu: Vec<DMatrix<bool>>,
    /// UEs with at least one serving AP under each SEU (U_l).
    pub served_sets: Vec<Vec<usize>>,
    /// UEs whose AP cluster shares at least one AP with UE k (S_k, includes k).
    pub overlap_sets: Vec<Vec<usize>>,
    /// `lsfd_mask[k][l]` is true when no AP under SEU `l` serves UE `k`.
    pub lsfd_mask: Vec<Vec<bool>>,
}

pub fn derive_plan(omega: &DMatrix<bool>, ap_to_seu: &[usize], num_seus: usize) -> Result<ClusterPlan> {
    let (m_count, k_count) = omega.shape();
    assert_eq!(ap_to_seu.len(), m_count, "ap_to_seu length must equal the AP count");
    if let Some(ue) = (0..k_count).find(|&k| (0..m_count).all(|m| !omega[(m, k)])) {
        return Err(Error::EmptyCluster { ue });
    }

    let mut seu_members = vec![Vec::new(); num_seus];
    for (m, &l) in ap_to_seu.iter().enumerate() {
        seu_members[l].push(m);
    }

    let omega_per_seu: Vec<DMatrix<bool>> = seu_members
        .iter()
        .map(|members| DMatrix::from_fn(members.len(), k_count, |r, k| omega[(members[r], k)]))
        .collect();

    let served_sets: Vec<Vec<usize>> = omega_per_seu
        .iter()
        .map(|slice| (0..k_count).filter(|&k| slice.column(k).iter().any(|&s| s)).collect())
        .collect();

    let mut lsfd_mask = vec![vec![true; num_seus]; k_count];
    for (l, set) in served_sets.iter().enumerate() {
        for &k in set {
            lsfd_mask[k][l] = false;
        }
    }

    // Two UEs overlap when some AP serves both; walk each AP's served list.
    let mut overlap = vec![vec![false; k_count]; k_count];
    for m in 0..m_count {
        let served: Vec<usize> = (0..k_count).filter(|&k| omega[(m, k)]).collect();
        for &a in &served {
            for &b in &served {
                overlap[a][b] = true;
            }
        }
    }
    let overlap_sets = overlap
        .iter()
        .map(|row| (0..k_count).filter(|&i| row[i]).collect())
        .collect();

    Ok(ClusterPlan {
        omega: omega.clone(),
        ap_to_seu: ap_to_seu.to_vec(),
        seu_members,
        omega_per_seu,
        served_sets,
        overlap_sets,
        lsfd_mask,
    })
}

impl ClusterPlan {
    pub fn num_aps(&self) -> usize {
        self.omega.nrows()
    }

    pub fn num_ues(&self) -> usize {
        self.omega.ncols()
    }

    pub fn num_seus(&self) -> usize {
        self.seu_members.len()
    }

    #[inline]
    pub fn serves(&self, ap: usize, ue: usize) -> bool {
        self.omega[(ap, ue)]
    }

    pub fn serving_seus(&self, ue: usize) -> Vec<usize> {
        (0..self.num_seus()).filter(|&l| !self.lsfd_mask[ue][l]).collect()
    }

    /// K_l
    pub fn served_count(&self, seu: usize) -> usize {
        self.served_sets[seu].len()
    }

    /// One row per AP: `ap_index,seu_index,served_ues` with UEs joined by `;`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["ap_index", "seu_index", "served_ues"])?;
        for m in 0..self.num_aps() {
            let served: Vec<String> = (0..self.num_ues())
                .filter(|&k| self.omega[(m, k)])
                .map(|k| k.to_string())
                .collect();
            w.write_record([m.to_string(), self.ap_to_seu[m].to_string(), served.join(";")])?;
        }
        w.flush()?;
        Ok(())
    }
}
