"""Diffusion-based co-speech gesture generation.

Pipeline: BVH motion and speech are turned into frame-aligned feature
matrices, an x0-predicting denoising diffusion model with cross-local
attention is trained on 150-frame clips, long sequences are sampled clip by
clip with seed handoff, and results are scored with Frechet gesture
distances.
"""

from .bvh import (
    BvhParseError,
    FkResult,
    Joint,
    MotionSequence,
    Skeleton,
    forward_kinematics,
    parse_bvh,
    write_bvh,
)
from .denoiser import (
    AblationLayout,
    Conditioning,
    DenoiserConfig,
    GestureDenoiser,
    apply_condition_masks,
    desk_scale,
    full_scale,
    timestep_embedding,
)
from .diffusion import NoiseSchedule, cosine_schedule, huber_loss, posterior_step, q_sample
from .fgd import (
    FgdReport,
    GaussianStats,
    MotionAutoencoder,
    fgd_report,
    fit_gaussian,
    frechet_distance,
    train_autoencoder,
)
from .motion_features import (
    GestureFeatureSeq,
    Standardizer,
    extract_motion_features,
    features_to_motion,
    fit_standardizer,
)
from .rotations import euler_to_rotmat, orthonormalize, rotmat_to_euler
from .sampling import GenerationRequest, GenerationResult, generate_long, guided_denoise, sample_clip
from .speech_features import (
    AudioFeatureSeq,
    TextFeatureSeq,
    Transcript,
    WordEmbeddingLexicon,
    align_to_frames,
    extract_audio_features,
    frame_align_text,
    parse_transcript_tsv,
    speaker_onehot,
)
from .training import (
    Session,
    TrainClip,
    TrainResult,
    TrainSettings,
    run_ablation,
    train,
    window_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
