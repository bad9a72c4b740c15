//! Triple-stream attention network over `(u, v, m)` motion features.
//!
//! Each stream runs two conv blocks `Pool(Dropout(ReLU(BN(Conv))))`. Fusion
//! attention reweights the three streams after each block, an SE block
//! gates the magnitude stream, and a fully connected head maps the
//! concatenated streams to per-class logits.

mod config;
mod forward;
mod predict;
mod state;

pub use config::{ModelConfig, ParamCount};
pub use forward::{forward_graph, fusion_attention, se_block, AttentionTrace, ForwardOutput, Prediction};
pub use predict::{fuse_probabilities, predict_multilabel, threshold_labels, ClassProbs, DEFAULT_THRESHOLD};
pub use state::{ModelMeta, ModelState, MODEL_FORMAT, STREAMS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensorgrad::{gradcheck_steps, GradcheckReport, Mode, Tensor};

/// Small network used for finite-difference checks.
pub fn miniature_config() -> ModelConfig {
    ModelConfig {
        input_side: 16,
        c1: 4,
        c2: 8,
        se_reduction: 4,
        head_hidden: 16,
        p_conv: 0.0,
        p_head: 0.0,
        ..ModelConfig::default()
    }
}

/// Finite-difference check of every parameter gradient of the focal loss
/// over the whole network: 64-bit, eval-mode batch norm with randomized
/// running statistics and affine terms, dropout disabled, two random
/// samples. Each coordinate is tried with steps `eps`, `10 eps`,
/// `100 eps` and `eps / 10`.
pub fn model_gradcheck(config: &ModelConfig, seed: u64, eps: f64) -> Result<GradcheckReport> {
    let config = ModelConfig {
        p_conv: 0.0,
        p_head: 0.0,
        ..config.clone()
    };
    let mut state = ModelState::<f64>::build(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for (name, p) in state.names.iter().zip(state.params.iter_mut()) {
        if name.ends_with("gamma") {
            *p = Tensor::from_fn(p.shape(), |_| rng.random_range(0.5..1.5));
        } else if name.ends_with("beta") || name.ends_with("bias") || name.ends_with(".b1") || name.ends_with(".b2") {
            *p = Tensor::from_fn(p.shape(), |_| rng.random_range(-0.3..0.3));
        }
    }
    for s in &mut state.bn {
        let c = s.running_mean.numel();
        s.running_mean = Tensor::from_fn(&[c], |_| rng.random_range(-0.2..0.2));
        s.running_var = Tensor::from_fn(&[c], |_| rng.random_range(0.5..1.5));
    }
    let side = config.input_side;
    let input = Tensor::from_fn(&[2, 3, side, side], |_| rng.random_range(-1.0..1.0));
    let targets = Tensor::from_fn(&[2, config.classes], |_| f64::from(u8::from(rng.random_bool(0.5))));
    let mut bn = state.bn.clone();
    let (names, bn_names) = (state.names.clone(), state.bn_names.clone());
    gradcheck_steps(
        &state.params,
        |g, vars| {
            let x = g.input(input.clone())?;
            let out = forward_graph(&config, g, vars, &names, &mut bn, &bn_names, x, Mode::Eval, &mut rng)?;
            g.focal_loss(out.logits, &targets, 2.0)
        },
        &[eps, 10.0 * eps, 100.0 * eps, eps / 10.0],
    )
}
