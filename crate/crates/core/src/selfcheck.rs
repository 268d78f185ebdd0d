//! Finite-difference gradient suite over the graph ops, both training losses
//! and the two-pass cycle objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{synth_dataset, SynthConfig, TrainingSample};
use crate::error::{Error, Result};
use crate::model::Arch;
use crate::nn::{grad_check, op_suite, GradCheckOptions, GradCheckReport, Graph};
use crate::semi::loss_cycle;
use crate::train::{box_rows, consecutive_pairs, forward_loss, make_sample, LossWeights, TrainConfig};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const CYCLE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCase {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub checked: usize,
    /// Probes dropped because a mask or class decision flipped within ±h.
    pub skipped: usize,
    pub worst: String,
}

impl GradCase {
    fn new(name: impl Into<String>, r: GradCheckReport, tolerance: f64) -> Self {
        GradCase { name: name.into(), max_rel_err: r.max_rel_err, tolerance, checked: r.checked, skipped: r.skipped, worst: r.worst }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn tiny_samples(arch: Arch, seed: u64, n: usize) -> Result<(TrainConfig, Vec<TrainingSample>)> {
    let cfg = TrainConfig { arch, widths: "tiny".into(), points: 8, seed, ..Default::default() };
    let seqs = synth_dataset(&SynthConfig { frames: 3, ..SynthConfig::default() }, n.max(2), seed, "gc")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = consecutive_pairs(&seqs).iter().take(n).map(|p| make_sample(&seqs[p.seq], *p, &cfg, &mut rng)).collect();
    Ok((cfg, samples))
}

/// Runs every check; the caller decides what a failure means.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCase>> {
    let mut out: Vec<GradCase> =
        op_suite(seed)?.into_iter().map(|(n, r)| GradCase::new(format!("op:{n}"), r, OP_TOLERANCE)).collect();
    let opts = GradCheckOptions { max_coords: 3, ..Default::default() };
    for arch in [Arch::M2Track, Arch::Vanilla] {
        let (cfg, samples) = tiny_samples(arch, seed, 2)?;
        let model = cfg.new_model()?;
        let poses = box_rows(samples.iter().map(|s| s.input_box));
        let w = vec![1.0 / samples.len() as f64; samples.len()];
        let rep = grad_check(&model.store, &[poses], &opts, |g, v| {
            forward_loss(g, &model, &samples, v[0], &w, &LossWeights::default(), 8).expect("loss").0.total
        })?;
        out.push(GradCase::new(format!("loss:{}", arch.name()), rep, OP_TOLERANCE));
    }
    // Samples whose forward or backward mask comes out empty add nothing to
    // the cycle loss; probe a batch of two where both contribute. Batch
    // statistics couple the samples, so batches are judged as a whole.
    let (cfg, pool) = tiny_samples(Arch::M2Track, seed, 16)?;
    let model = cfg.new_model()?;
    let mut samples = None;
    for batch in pool.chunks_exact(2) {
        let mut g = Graph::new(&model.store, true);
        g.record_stats = false;
        if loss_cycle(&mut g, &model, batch, 8)?.used == 2 {
            samples = Some(batch.to_vec());
            break;
        }
    }
    let samples = samples.ok_or_else(|| Error::Contract("no batch with an active cycle loss".into()))?;
    let rep = grad_check(&model.store, &[], &opts, |g, _| loss_cycle(g, &model, &samples, 8).expect("cycle").mean)?;
    out.push(GradCase::new("cycle:m2track", rep, CYCLE_TOLERANCE));
    Ok(out)
}
