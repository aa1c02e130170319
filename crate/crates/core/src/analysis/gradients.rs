use std::io::Write;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, NoisyLabelRecord, Split};
use crate::model::{LnSite, Model, SiteId};
use crate::numerics::{rng, Graph, Reduction};
use crate::{Error, Result};

const GRAD_BATCH: usize = 32;

/// Gradient norms at every LN input, one entry per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleNorms {
    pub sites: Vec<SiteId>,
    /// `norms[site][sample]`: L2 norm over the sample's full `T × d` slice.
    pub norms: Vec<Vec<f64>>,
    /// `positions[site][sample][t]`: L2 norm of row `t`.
    pub positions: Vec<Vec<Vec<f64>>>,
}

pub fn all_sites(num_layers: usize) -> Vec<SiteId> {
    (1..=num_layers)
        .flat_map(|layer| LnSite::BOTH.map(|site| SiteId { layer, site }))
        .collect()
}

/// Per-sample `‖∂L/∂(LN input)‖₂` under cross-entropy against `labels`.
///
/// Samples are batched under a summed loss. Attention mixes positions only
/// within a sample, so each sample's gradient rows equal its individual
/// gradient.
pub fn per_sample_ln_input_norms(
    model: &Model,
    seqs: &[&[u32]],
    labels: &[usize],
) -> Result<PerSampleNorms> {
    if seqs.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if seqs.len() != labels.len() {
        return Err(Error::shape(
            "ln_input_gradient_norms",
            format!("{} samples vs {} labels", seqs.len(), labels.len()),
        ));
    }
    let c = model.config();
    let t = c.seq_len;
    let sites = all_sites(c.num_layers);
    let mut norms = vec![Vec::with_capacity(seqs.len()); sites.len()];
    let mut positions = vec![Vec::with_capacity(seqs.len()); sites.len()];
    for (chunk, lab) in seqs.chunks(GRAD_BATCH).zip(labels.chunks(GRAD_BATCH)) {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let out = model.forward(&mut g, &bound, chunk)?;
        let loss = g.cross_entropy(out.logits, lab, Reduction::Sum)?;
        let grads = g.backward(loss)?;
        for (k, s) in sites.iter().enumerate() {
            let v = out.layers[s.layer - 1].ln_input(s.site);
            let gt = grads.wrt(&g, v)?;
            let d = gt.cols();
            for b in 0..chunk.len() {
                let mut total = 0.0;
                let mut per_pos = Vec::with_capacity(t);
                for row in gt.data()[b * t * d..(b + 1) * t * d].chunks(d) {
                    let sq: f64 = row.iter().map(|x| x * x).sum();
                    total += sq;
                    per_pos.push(sq.sqrt());
                }
                norms[k].push(total.sqrt());
                positions[k].push(per_pos);
            }
        }
    }
    Ok(PerSampleNorms {
        sites,
        norms,
        positions,
    })
}

/// Mean gradient norm per site over one population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationNorms {
    pub means: Vec<f64>,
    /// `per_position[site][t]`, averaged over samples.
    pub per_position: Vec<Vec<f64>>,
    pub n_samples: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn ln_input_gradient_norms(
    model: &Model,
    seqs: &[&[u32]],
    labels: &[usize],
) -> Result<PopulationNorms> {
    let ps = per_sample_ln_input_norms(model, seqs, labels)?;
    let t = model.config().seq_len;
    let per_position = ps
        .positions
        .iter()
        .map(|samples| {
            (0..t)
                .map(|p| samples.iter().map(|s| s[p]).sum::<f64>() / samples.len() as f64)
                .collect()
        })
        .collect();
    Ok(PopulationNorms {
        means: ps.norms.iter().map(|n| mean(n)).collect(),
        per_position,
        n_samples: seqs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientNormProfile {
    pub sites: Vec<SiteId>,
    pub learning: PopulationNorms,
    pub memorization: PopulationNorms,
}

pub const LEARNING_CAP: usize = 512;

/// Learning population: test samples with their (clean) labels, seeded
/// subsample when larger than `cap`. Memorization population: manifest
/// samples with their injected labels.
pub fn gradient_profile(
    model: &Model,
    data: &LabeledDataset,
    manifest: &[NoisyLabelRecord],
    cap: usize,
    seed: u64,
) -> Result<GradientNormProfile> {
    let mut test = data.indices(Split::Test);
    if test.len() > cap {
        let mut r = rng::stream(seed, "learning-population");
        let mut pick: Vec<usize> = sample_indices(&mut r, test.len(), cap).into_vec();
        pick.sort_unstable();
        test = pick.into_iter().map(|i| test[i]).collect();
    }
    let learn_seqs: Vec<&[u32]> = test.iter().map(|&i| &data.samples[i].tokens[..]).collect();
    let learn_labels: Vec<usize> = test.iter().map(|&i| data.samples[i].label).collect();
    let mem_seqs: Vec<&[u32]> = manifest
        .iter()
        .map(|r| &data.samples[r.sample_id].tokens[..])
        .collect();
    let mem_labels: Vec<usize> = manifest.iter().map(|r| r.noisy_label).collect();
    Ok(GradientNormProfile {
        sites: all_sites(model.config().num_layers),
        learning: ln_input_gradient_norms(model, &learn_seqs, &learn_labels)?,
        memorization: ln_input_gradient_norms(model, &mem_seqs, &mem_labels)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub passes: Vec<(SiteId, bool)>,
    pub pass_fraction: f64,
}

/// A site passes iff its learning mean is at least its memorization mean
/// minus `tolerance`.
pub fn dominance_check(learning: &[f64], memorization: &[f64], sites: &[SiteId], tolerance: f64) -> DominanceReport {
    let passes: Vec<(SiteId, bool)> = sites
        .iter()
        .zip(learning.iter().zip(memorization))
        .map(|(&s, (&l, &m))| (s, l >= m - tolerance))
        .collect();
    let ok = passes.iter().filter(|(_, p)| *p).count();
    DominanceReport {
        pass_fraction: ok as f64 / passes.len().max(1) as f64,
        passes,
    }
}

pub const DOMINANCE_TOLERANCE: f64 = 1e-9;

impl GradientNormProfile {
    pub fn dominance(&self, tolerance: f64) -> DominanceReport {
        dominance_check(
            &self.learning.means,
            &self.memorization.means,
            &self.sites,
            tolerance,
        )
    }

    pub fn ratios(&self) -> RatioProfile {
        ratio_profile(&self.learning.means, &self.memorization.means)
    }
}

/// Per-site `learn / mem`; `None` marks a zero memorization norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioProfile {
    pub ratios: Vec<Option<f64>>,
    /// Mean over finite entries, `None` if there are none.
    pub mean_finite: Option<f64>,
}

pub fn ratio_profile(learning: &[f64], memorization: &[f64]) -> RatioProfile {
    let ratios: Vec<Option<f64>> = learning
        .iter()
        .zip(memorization)
        .map(|(&l, &m)| (m > 0.0).then(|| l / m))
        .collect();
    let finite: Vec<f64> = ratios.iter().flatten().copied().collect();
    RatioProfile {
        mean_finite: (!finite.is_empty()).then(|| mean(&finite)),
        ratios,
    }
}

/// CSV with columns `layer,site,population,mean_norm,n_samples`.
pub fn write_gradient_csv(profile: &GradientNormProfile, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["layer", "site", "population", "mean_norm", "n_samples"])?;
    for (k, s) in profile.sites.iter().enumerate() {
        for (pop, p) in [("learning", &profile.learning), ("memorization", &profile.memorization)] {
            w.write_record([
                s.layer.to_string(),
                s.site.to_string(),
                pop.to_string(),
                format!("{:.12e}", p.means[k]),
                p.n_samples.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sites(n: usize) -> Vec<SiteId> {
        (1..=n)
            .map(|layer| SiteId {
                layer,
                site: LnSite::Ln1,
            })
            .collect()
    }

    #[test]
    fn dominance_comparisons() {
        let r = dominance_check(&[2.0, 1.0], &[1.0, 0.5], &sites(2), 1e-9);
        assert_eq!(r.pass_fraction, 1.0);
        let r = dominance_check(&[1.0], &[2.0], &sites(1), 1e-9);
        assert_eq!(r.pass_fraction, 0.0);
    }

    #[test]
    fn ratio_sentinel() {
        let r = ratio_profile(&[2.0, 4.0], &[1.0, 2.0]);
        assert_eq!(r.ratios, vec![Some(2.0), Some(2.0)]);
        let r = ratio_profile(&[2.0, 4.0], &[1.0, 0.0]);
        assert_eq!(r.ratios, vec![Some(2.0), None]);
        assert_eq!(r.mean_finite, Some(2.0));
    }
}
