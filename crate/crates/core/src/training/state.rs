// Resumable training state: parameters, both optimizers, and the step
// counter, packed into the shared checkpoint archive so a resumed run
// continues the exact optimizer trajectory.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::models::{Checkpoint, ModelConfig};
use crate::nn::Adam;
use crate::nn::Params;
use crate::training::TrainConfig;

/// Everything a training step mutates, plus the configs that define the
/// run. Batches are derived from (seed, step), not stored.
pub struct TrainState {
    pub params: Params,
    /// Drives the reconstruction phase (and is the sole optimizer of the
    /// baseline and pretraining regimes).
    pub opt_a: Adam,
    /// Drives the content encoder and speaker classifier.
    pub opt_b: Adam,
    pub step: u64,
    pub mcfg: ModelConfig,
    pub tcfg: TrainConfig,
}

impl TrainState {
    pub fn new(params: Params, mcfg: ModelConfig, tcfg: TrainConfig) -> Self {
        let opt_a = Adam::new(tcfg.lr_a, tcfg.beta1, tcfg.beta2, tcfg.eps);
        let opt_b = Adam::new(tcfg.lr_b, tcfg.beta1, tcfg.beta2, tcfg.eps);
        TrainState { params, opt_a, opt_b, step: 0, mcfg, tcfg }
    }
}

/// Packs the full state into a checkpoint of the given kind. `extra_meta`
/// must be a JSON object; its keys are merged alongside the run metadata.
pub fn state_to_checkpoint(
    state: &TrainState,
    kind: &str,
    extra_meta: serde_json::Value,
) -> Checkpoint {
    let mut meta = serde_json::json!({
        "step": state.step,
        "seed": state.tcfg.seed,
        "train_config": serde_json::to_value(&state.tcfg).expect("config serializes"),
        "opt_a_t": state.opt_a.step_count(),
        "opt_b_t": state.opt_b.step_count(),
    });
    if let (Some(dst), Some(src)) = (meta.as_object_mut(), extra_meta.as_object()) {
        for (k, v) in src {
            dst.insert(k.clone(), v.clone());
        }
    }
    let mut ckpt = Checkpoint::new(kind, state.mcfg.clone(), meta);
    ckpt.insert_params("model", &state.params);
    let (_, ma, va) = state.opt_a.state();
    ckpt.insert_map("opt_a.m", ma);
    ckpt.insert_map("opt_a.v", va);
    let (_, mb, vb) = state.opt_b.state();
    ckpt.insert_map("opt_b.m", mb);
    ckpt.insert_map("opt_b.v", vb);
    ckpt
}

/// Rebuilds training state from a checkpoint written by
/// [`state_to_checkpoint`].
pub fn state_from_checkpoint(ckpt: &Checkpoint) -> Result<TrainState> {
    let tcfg_value = ckpt
        .meta
        .get("train_config")
        .ok_or_else(|| Error::validation("checkpoint carries no training configuration"))?;
    let tcfg: TrainConfig = serde_json::from_value(tcfg_value.clone())?;
    let params = ckpt.extract_params("model");
    if params.is_empty() {
        return Err(Error::validation("checkpoint holds no model parameters"));
    }
    let mut state = TrainState::new(params, ckpt.config.clone(), tcfg);
    state.step = ckpt.meta_u64("step")?;
    state.opt_a.restore(
        ckpt.meta_u64("opt_a_t")?,
        ckpt.extract_map("opt_a.m"),
        ckpt.extract_map("opt_a.v"),
    );
    state.opt_b.restore(
        ckpt.meta_u64("opt_b_t")?,
        ckpt.extract_map("opt_b.m"),
        ckpt.extract_map("opt_b.v"),
    );
    Ok(state)
}

/// Loads pretrained style-encoder weights (a "ge2e" checkpoint) into the
/// given parameter set, replacing its fresh style-encoder init. The
/// checkpoint must agree on the mel/style geometry the encoder reads.
pub fn absorb_style_encoder(
    params: &mut Params,
    ckpt: &Checkpoint,
    mcfg: &ModelConfig,
) -> Result<()> {
    ckpt.require_kind(&["ge2e"])?;
    for (field, ours, theirs) in [
        ("n_mels", mcfg.n_mels, ckpt.config.n_mels),
        ("style_lstm", mcfg.style_lstm, ckpt.config.style_lstm),
        ("d_style", mcfg.d_style, ckpt.config.d_style),
    ] {
        if ours != theirs {
            return Err(Error::validation(format!(
                "style checkpoint was trained with {field} = {theirs}, this run uses {ours}"
            )));
        }
    }
    let style = ckpt.extract_params("model").subset(&["es"]);
    if style.is_empty() {
        return Err(Error::validation(
            "style checkpoint holds no style-encoder parameters",
        ));
    }
    params.absorb(&style);
    Ok(())
}

/// Collects gradients for every parameter whose name falls under one of
/// the prefixes, keyed by parameter name, ready for the optimizer.
/// Parameters the loss never touched contribute zeros.
pub fn collect_grads(
    grads: &crate::nn::Gradients,
    bound: &crate::nn::Bound,
    params: &Params,
    prefixes: &[&str],
) -> BTreeMap<String, crate::nn::Arr> {
    let mut out = BTreeMap::new();
    for name in params.names() {
        let hit = prefixes.iter().any(|p| name == p || name.starts_with(&format!("{p}.")));
        if hit {
            let g = grads.get_or_zeros(bound.v(name), params.get(name).shape());
            out.insert(name.clone(), g);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{load_checkpoint, save_checkpoint};
    use crate::nn::arr_from;

    fn small_state() -> TrainState {
        let mut params = Params::new();
        params.insert("te.w", arr_from(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        params.insert("ec.w", arr_from(&[3], vec![-1.0, 0.5, 2.0]));
        let mcfg = ModelConfig::default();
        let tcfg = TrainConfig { seed: 7, max_steps: 50, ..TrainConfig::default() };
        TrainState::new(params, mcfg, tcfg)
    }

    #[test]
    fn checkpoint_roundtrip_restores_optimizers_and_step() {
        let mut state = small_state();
        // Take two optimizer steps so both moment maps are non-trivial.
        for _ in 0..2 {
            let mut ga = BTreeMap::new();
            ga.insert("te.w".to_string(), arr_from(&[2, 2], vec![0.1, -0.2, 0.3, 0.4]));
            state.opt_a.step(&mut state.params, &ga);
            let mut gb = BTreeMap::new();
            gb.insert("ec.w".to_string(), arr_from(&[3], vec![0.5, 0.5, -0.5]));
            state.opt_b.step(&mut state.params, &gb);
            state.step += 1;
        }

        let dir = std::env::temp_dir().join(format!("tgavc-state-{}", std::process::id()));
        let path = dir.join("state.ckpt");
        let ckpt = state_to_checkpoint(&state, "tgavc", serde_json::json!({"note": "x"}));
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.meta["note"], "x");
        let restored = state_from_checkpoint(&loaded).unwrap();

        assert_eq!(restored.step, 2);
        assert_eq!(restored.tcfg, state.tcfg);
        assert!(restored.params.bit_identical(&state.params));
        assert_eq!(restored.opt_a.step_count(), 2);
        assert_eq!(restored.opt_b.step_count(), 2);

        // The restored optimizers continue exactly as the originals would.
        let mut ga = BTreeMap::new();
        ga.insert("te.w".to_string(), arr_from(&[2, 2], vec![-0.3, 0.1, 0.0, 0.2]));
        let mut a1 = state;
        let mut a2 = restored;
        a1.opt_a.step(&mut a1.params, &ga);
        a2.opt_a.step(&mut a2.params, &ga);
        assert!(a1.params.bit_identical(&a2.params));
    }

    #[test]
    fn missing_train_config_is_a_validation_error() {
        let state = small_state();
        let mut ckpt = state_to_checkpoint(&state, "tgavc", serde_json::json!({}));
        ckpt.meta.as_object_mut().unwrap().remove("train_config");
        let err = state_from_checkpoint(&ckpt).err().unwrap();
        assert!(err.is_validation());
    }

    #[test]
    fn collect_grads_respects_prefix_boundaries() {
        let mut params = Params::new();
        params.insert("dec.w", arr_from(&[1], vec![1.0]));
        params.insert("decoy.w", arr_from(&[1], vec![1.0]));
        let mut tape = crate::nn::Tape::new();
        let bound = params.bind(&mut tape, &["dec", "decoy"]);
        let loss = {
            let a = bound.v("dec.w");
            let b = bound.v("decoy.w");
            let s = tape.add(a, b);
            tape.sum_all(s)
        };
        let grads = tape.backward(loss);
        let map = collect_grads(&grads, &bound, &params, &["dec"]);
        assert_eq!(map.len(), 1, "prefix 'dec' must not capture 'decoy.w'");
        assert!(map.contains_key("dec.w"));
    }
}
