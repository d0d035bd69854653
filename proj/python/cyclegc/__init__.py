"""Unpaired cross-modality image synthesis with a gradient-consistency loss.

The heavy lifting lives in the compiled extension; this package re-exports
its operations: phantom generation, intensity normalization, the similarity
metrics, the objective terms, the synthesis trainer, the two-channel
segmentation pipeline, and experiment orchestration.
"""

from cyclegc._core import (  # noqa: F401
    CLASS_NAMES,
    FormatError,
    InvalidDataError,
    __version__,
    adv_loss_discriminator,
    adv_loss_generator,
    cycle_loss,
    dice,
    gc_loss,
    generate_phantom,
    gradient_correlation,
    lr_at,
    mae,
    make_unpaired_split,
    mutual_information,
    ncc,
    normalize_ct,
    normalize_mr,
    psnr,
    report_figures,
    run_experiment,
    segment_mr,
    synthesize,
    total_loss,
    train_segmenter,
    train_synthesis,
)
