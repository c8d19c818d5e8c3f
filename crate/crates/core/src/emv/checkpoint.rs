//! Learner checkpoints in the flat key-value format. Floats are written in
//! shortest round-trip form, so save followed by load is bit-exact.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::learner::{EmvLearner, HamiltonianEstimate};
use super::params::{EmvConfig, MeanUpdate, PolicyParams, ValueParams};
use crate::error::{EmvError, Result};
use crate::kv::{fmt_f64, parse_f64, KvDoc};

const FORMAT: &str = "emv-checkpoint-1";

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "none".into())
}

fn parse_opt_f64(doc: &KvDoc, key: &str) -> Result<Option<f64>> {
    match doc.require(key)? {
        "none" => Ok(None),
        raw => parse_f64(raw, key).map(Some),
    }
}

pub fn config_to_kv(cfg: &EmvConfig, doc: &mut KvDoc, prefix: &str) {
    let k = |name: &str| format!("{prefix}{name}");
    doc.set_f64(&k("lambda"), cfg.lambda);
    doc.set_f64(&k("z"), cfg.z);
    doc.set_f64(&k("horizon"), cfg.horizon);
    doc.set_f64(&k("dt"), cfg.dt);
    doc.set(&k("episodes"), cfg.episodes.to_string());
    doc.set(&k("lagrange_period"), cfg.lagrange_period.to_string());
    doc.set_f64(&k("eta_theta"), cfg.eta_theta);
    doc.set_f64(&k("eta_phi"), cfg.eta_phi);
    doc.set_f64(&k("alpha_w"), cfg.alpha_w);
    doc.set(&k("leverage"), opt_f64(cfg.leverage));
    doc.set(&k("seed"), cfg.seed.to_string());
    doc.set(&k("mean_update"), cfg.mean_update.name());
    doc.set(&k("tie_phi3"), cfg.tie_phi3.to_string());
    doc.set(&k("divergence_bound"), opt_f64(cfg.divergence_bound));
    doc.set(&k("w0"), opt_f64(cfg.w0));
    doc.set_f64(&k("init_std"), cfg.init_std);
    doc.set(&k("warmup"), cfg.warmup.to_string());
}

pub fn config_from_kv(doc: &KvDoc, prefix: &str) -> Result<EmvConfig> {
    let k = |name: &str| format!("{prefix}{name}");
    let tie = match doc.require(&k("tie_phi3"))? {
        "true" => true,
        "false" => false,
        other => return Err(EmvError::Format(format!("tie_phi3: expected bool, got `{other}`"))),
    };
    let cfg = EmvConfig {
        lambda: doc.f64(&k("lambda"))?,
        z: doc.f64(&k("z"))?,
        horizon: doc.f64(&k("horizon"))?,
        dt: doc.f64(&k("dt"))?,
        episodes: doc.u64(&k("episodes"))?,
        lagrange_period: doc.u64(&k("lagrange_period"))?,
        eta_theta: doc.f64(&k("eta_theta"))?,
        eta_phi: doc.f64(&k("eta_phi"))?,
        alpha_w: doc.f64(&k("alpha_w"))?,
        leverage: parse_opt_f64(doc, &k("leverage"))?,
        seed: doc.u64(&k("seed"))?,
        mean_update: MeanUpdate::parse(doc.require(&k("mean_update"))?)?,
        tie_phi3: tie,
        divergence_bound: parse_opt_f64(doc, &k("divergence_bound"))?,
        w0: parse_opt_f64(doc, &k("w0"))?,
        init_std: doc.f64(&k("init_std"))?,
        warmup: doc.u64(&k("warmup"))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_kv(learner: &EmvLearner) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.set("format", FORMAT);
    doc.set("dim", learner.dim().to_string());
    config_to_kv(&learner.config, &mut doc, "config.");
    let th = &learner.theta;
    doc.set_f64("theta0", th.theta0);
    doc.set_f64("theta1", th.theta1);
    doc.set_f64("theta2", th.theta2);
    doc.set_f64("theta3", th.theta3);
    doc.set_f64s("phi1", learner.phi.phi1.as_slice());
    let l = learner.phi.phi2_chol();
    let row_major: Vec<f64> = (0..l.nrows())
        .flat_map(|i| (0..l.ncols()).map(move |j| l[(i, j)]))
        .collect();
    doc.set_f64s("phi2_chol", &row_major);
    doc.set_f64("phi3", learner.phi.phi3);
    doc.set_f64("w", learner.w);
    doc.set("episode", learner.episode.to_string());
    let est = learner.estimate();
    doc.set_f64s("state.recent", learner.pending_terminals());
    doc.set_f64s("state.suu", &est.suu);
    doc.set_f64s("state.sux", &est.sux);
    doc.set_f64s("state.sff", &est.sff);
    doc.set_f64s("state.sfy", &est.sfy);
    doc.set_f64s("state.reference", &est.reference);
    doc.set("state.count", est.count.to_string());
    doc
}

pub fn from_kv(doc: &KvDoc) -> Result<EmvLearner> {
    if doc.require("format")? != FORMAT {
        return Err(EmvError::Format(format!("expected format {FORMAT}")));
    }
    let d = doc.u64("dim")? as usize;
    let config = config_from_kv(doc, "config.")?;
    let theta = ValueParams::new(
        doc.f64("theta0")?,
        doc.f64("theta1")?,
        doc.f64("theta2")?,
        doc.f64("theta3")?,
    )?;
    let phi1 = doc.f64s("phi1")?;
    let l = doc.f64s("phi2_chol")?;
    if phi1.len() != d || l.len() != d * d {
        return Err(EmvError::Format("policy parameters do not match dim".into()));
    }
    let phi = PolicyParams::new(
        DVector::from_vec(phi1),
        DMatrix::from_row_slice(d, d, &l),
        doc.f64("phi3")?,
    )?;
    let estimate = HamiltonianEstimate::from_parts(
        d,
        doc.f64s("state.suu")?,
        doc.f64s("state.sux")?,
        doc.f64s("state.sff")?,
        doc.f64s("state.sfy")?,
        doc.f64s("state.reference")?,
        doc.u64("state.count")?,
    )?;
    Ok(EmvLearner {
        config,
        theta,
        phi,
        w: doc.f64("w")?,
        episode: doc.u64("episode")?,
        recent: doc.f64s("state.recent")?,
        estimate,
    })
}

pub fn save(learner: &EmvLearner, path: &Path) -> Result<()> {
    std::fs::write(path, to_kv(learner).render())?;
    Ok(())
}

pub fn load(path: &Path) -> Result<EmvLearner> {
    from_kv(&KvDoc::parse(&std::fs::read_to_string(path)?)?)
}
