//! Motion features for training-free video motion control, on a toy
//! feature network.
//!
//! The pipeline: synthesize latent videos ([`synth`]), featurize them
//! ([`network`]), find motion channels by PCA ([`analysis`]), extract or
//! synthesize motion features ([`moft`]), steer latents toward a reference
//! ([`guidance`]) and score the result ([`metrics`]).

pub mod analysis;
pub mod error;
pub mod guidance;
pub mod metrics;
pub mod moft;
pub mod network;
pub mod synth;
pub mod tensor;

pub use analysis::{
    calibrate_profile, fit_pca, probe_noise_robustness, rank_motion_channels, similarity_heatmap, similarity_map,
    ChannelEntry, Heatmap, MotionChannelProfile, PcaModel, ProbeReport,
};
pub use error::{MoftError, Result};
pub use guidance::{
    drag_loss, grad_drag_loss, grad_motion_loss, loss_schedule, masked_clip, motion_loss, run_guidance, DragSpec,
    GuidanceConfig, GuidanceOutcome, LossMode, StepLog,
};
pub use metrics::{
    average_tracklets, mean_distance, motion_fidelity, track, tracklet_corr, Tracklet, TrackletSet,
};
pub use moft::{content_removal, extract_moft, extract_reference_moft, synthesize_reference_moft, DirectionSchedule, Moft};
pub use network::{featurize, FeatureNet, FEATURE_CHANNELS};
pub use synth::{
    build_calibration_set, cardinal_patterns, generate_panning_video, generate_sprite_video, CalibrationSample,
    Displacement, MotionPattern, SceneSpec, SpriteSpec,
};
pub use tensor::{load_tensor, save_tensor, Dims4, FeatureTensor, LatentVideo, RegionMask, Tensor4};
