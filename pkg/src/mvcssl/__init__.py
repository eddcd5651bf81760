"""Desk-scale multi-variant consistency pre-training for speech encoders."""

from .audio import MultiChannelRecording, Waveform, read_wav, rms_power, write_wav
from .checkpoint import Checkpoint
from .model import (
    EncoderConfig,
    MaskConfig,
    MaskPlan,
    QuantizerConfig,
    SpeechEncoder,
    frame_count,
    make_model,
    sample_mask,
)
from .objectives import (
    LossConfig,
    Vocabulary,
    consistency_contrastive_loss,
    contrastive_loss,
    cosine_sim,
    ctc_loss,
    diversity_loss,
    greedy_ctc_decode,
)
from .pipelines import (
    PipelineConfig,
    build_replay_mixture,
    continual_pretrain,
    evaluate,
    finetune_ctc,
    pretrain,
    representation_consistency,
    supervised_transfer,
)
from .synthcorpus import (
    CorpusSpec,
    Manifest,
    NoisyMultichannel,
    generate_clean_corpus,
    generate_multichannel_corpus,
)
from .variants import (
    AugmentPolicy,
    VariantSet,
    augment,
    build_variant_set,
    convolve_rir,
    delay_and_sum,
    estimate_delay,
    mix_noise,
    pitch_shift,
)

__version__ = "0.1.0"
