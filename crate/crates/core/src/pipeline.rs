//! End-to-end identification: tag, partition, retag, refit, reduce.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::basis::BasisConfig;
use crate::data::{Dataset, WeightIndicator};
use crate::error::Result;
use crate::fit::{fit_region, FitContext};
use crate::model::{ModelCell, ModelMeta, PwnlModel};
use crate::partition::{partition, Partition, PartitionConfig, PartitionStatus};
use crate::reduce::{reduce, CandidateStrategy, MergeConfig, MergeOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifyConfig {
    pub sigma: f64,
    pub basis: BasisConfig,
    pub weights: WeightIndicator,
    pub nu: f64,
    pub kappa: usize,
    pub max_regions: usize,
    /// ∞-radius, in normalized regressor units, of the near-stationary set.
    pub r_stab: f64,
    /// Distance to an interior cell facet that counts as near-switch.
    pub r_sw: f64,
    /// Refit each cell after near-switch tagging.
    pub refit: bool,
    pub reduce: bool,
    pub merge_strategy: CandidateStrategy,
    pub n_iter_max: Option<usize>,
    pub max_candidates: usize,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        let merge = MergeConfig::default();
        let part = PartitionConfig::default();
        IdentifyConfig {
            sigma: part.sigma,
            basis: BasisConfig::default(),
            weights: WeightIndicator::default(),
            nu: part.nu,
            kappa: part.kappa,
            max_regions: part.max_regions,
            r_stab: 0.02,
            r_sw: 0.02,
            refit: true,
            reduce: true,
            merge_strategy: merge.candidate_strategy,
            n_iter_max: merge.n_iter_max,
            max_candidates: merge.max_candidates,
        }
    }
}

impl IdentifyConfig {
    pub fn partition_config(&self) -> PartitionConfig {
        PartitionConfig {
            sigma: self.sigma,
            nu: self.nu,
            kappa: self.kappa,
            max_regions: self.max_regions,
        }
    }

    pub fn merge_config(&self) -> MergeConfig {
        MergeConfig {
            n_iter_max: self.n_iter_max,
            candidate_strategy: self.merge_strategy,
            sigma: self.sigma,
            max_candidates: self.max_candidates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.partition_config().validate()?;
        self.merge_config().validate()
    }
}

#[derive(Debug, Clone)]
pub struct Identified {
    pub model: PwnlModel,
    pub partition: Partition,
    pub merge: Option<MergeOutcome>,
    /// The dataset with the tags used for the final fits.
    pub data: Dataset,
    pub r: usize,
    pub s: usize,
    pub max_gamma: f64,
    pub status: PartitionStatus,
    pub fit_seconds: f64,
}

impl Identified {
    pub fn converged(&self) -> bool {
        self.status == PartitionStatus::Converged
    }
}

/// Runs the identification pipeline on `ds` and assembles the model.
pub fn identify(ds: &Dataset, cfg: &IdentifyConfig) -> Result<Identified> {
    cfg.validate()?;
    let t0 = Instant::now();
    let ctx = FitContext::new(&cfg.basis, &cfg.weights);
    let tagged = ds.tag_neighborhoods(cfg.r_stab, 0.0, None);
    let mut part = partition(&tagged, &cfg.partition_config(), ctx)?;
    log::info!(
        "partition: {} regions, status {:?}, max gamma {:.4}",
        part.cells.len(),
        part.status,
        part.max_gamma()
    );

    let data = if part.cells.len() > 1 && cfg.r_sw > 0.0 {
        let retagged = tagged.tag_neighborhoods(cfg.r_stab, cfg.r_sw, Some(&part.rects()));
        if cfg.refit {
            refit_cells(&retagged, &mut part, cfg, ctx)?;
        }
        retagged
    } else {
        tagged
    };

    let merge = if cfg.reduce && part.cells.len() > 1 {
        Some(reduce(&part.cells, &part.submodels, &data, &cfg.merge_config(), ctx)?)
    } else {
        None
    };
    let (assignment, submodels, max_gamma) = match &merge {
        Some(m) => (m.assignment.clone(), m.submodels.clone(), m.max_gamma()),
        None => (
            part.cells.iter().map(|c| c.submodel_id).collect(),
            part.submodels.clone(),
            part.max_gamma(),
        ),
    };
    let cells = part
        .cells
        .iter()
        .zip(&assignment)
        .map(|(c, &id)| ModelCell {
            lo: c.rect.lo.clone(),
            hi: c.rect.hi.clone(),
            submodel: id,
        })
        .collect();
    let r = part.cells.len();
    let meta = ModelMeta {
        sigma: Some(cfg.sigma),
        r,
        s: 0,
        max_gamma: Some(max_gamma),
        created_by: format!("pwnl {}", env!("CARGO_PKG_VERSION")),
    };
    let model = PwnlModel::new(
        cfg.basis.clone(),
        *data.range(),
        data.scaler().clone(),
        cells,
        submodels,
        meta,
    )?;
    let s = model.complexity();
    log::info!("model: r = {r}, s = {s}, max gamma {max_gamma:.4}");
    Ok(Identified {
        model,
        status: part.status,
        partition: part,
        merge,
        data,
        r,
        s,
        max_gamma,
        fit_seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Refits every cell on the retagged data, keeping a refit only when it
/// stays within σ or does not worsen the cell's residual.
fn refit_cells(
    ds: &Dataset,
    part: &mut Partition,
    cfg: &IdentifyConfig,
    ctx: FitContext<'_>,
) -> Result<()> {
    use rayon::prelude::*;
    let refits: Vec<_> = part
        .cells
        .par_iter()
        .map(|c| fit_region(ds, &c.sample_idx, ctx.weights, ctx.cfg))
        .collect();
    for (i, refit) in refits.into_iter().enumerate() {
        let (sub, report) = refit?;
        let old = part.cells[i].report.gamma;
        if report.gamma <= cfg.sigma || report.gamma <= old {
            part.cells[i].report = report;
            part.submodels[i] = sub;
        } else {
            log::debug!("cell {i}: refit gamma {:.4} kept out (was {old:.4})", report.gamma);
        }
    }
    Ok(())
}
