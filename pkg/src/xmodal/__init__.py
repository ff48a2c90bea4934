"""Stochastic audio-to-video sequence modeling with cross-modal posterior
alignment, implemented over numpy with hand-verified gradients."""

from .errors import CheckpointError, ContractViolation, NumericalFailure
from .gaussians import (
    LOG_VAR_MAX,
    LOG_VAR_MIN,
    DiagonalGaussian,
    kl_divergence,
    log_density,
    reparameterized_sample,
)
from .model import (
    GenerationResult,
    LossReport,
    ModelConfig,
    ModelParams,
    PosteriorSequence,
    SkipStack,
    decode_frame,
    decoder_initial_state,
    default_enc_channels,
    elbo_loss,
    encode_audio,
    encode_frame,
    generate,
    init_model_params,
    run_posterior_chain,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .training import (
    GradCheckResult,
    TrainConfig,
    TrainReport,
    finite_difference_gradcheck,
    train,
    validation_kl,
)
from .synthdata import (
    Corpus,
    CorpusManifest,
    SceneState,
    SequenceRecord,
    face_region_masks,
    generate_corpus,
    lift_matrix,
    load_corpus,
    make_sequence,
    render_frame,
    synth_audio_features,
    synth_blink,
    synth_driver,
)
from .metrics import diversity_score, psnr, ssim
from .evaluate import EvalReport, evaluate_model

__version__ = "0.1.0"
