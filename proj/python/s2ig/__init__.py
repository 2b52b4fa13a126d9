"""Speech-to-image generation: SEN and RDG training, generation and evaluation."""

from ._s2ig import (
    CompatibilityError,
    DivergenceError,
    Error,
    ProtocolError,
    ValidationError,
    average_precision,
    config_keys,
    default_config,
    discriminator_loss,
    distinctive_loss,
    evaluate,
    expected_random_average_precision,
    frechet_distance,
    generate,
    inception_score,
    kl_divergence,
    log_mel,
    make_dataset,
    matching_loss,
    relation_loss,
    retrieval_map,
    set_num_threads,
    set_quiet,
    train_backbone,
    train_rdg,
    train_sen,
)

__version__ = "0.1.0"
