"""Implicit-neural-representation image compression with a
segmentation-driven structural regularizer."""

from .codec import (
    CodecBudget,
    CompressedContainer,
    compute_bpp,
    decompress,
    deserialize_container,
    deserialize_segnet,
    quantize_fp16,
    serialize_container,
    serialize_segnet,
    size_model_for_budget,
)
from .imageio import (
    CoordinateGrid,
    ImagePlane,
    MaskPlane,
    load_image,
    load_mask,
    make_coordinate_grid,
    save_image,
    save_mask,
    synth_phantom,
)
from .metrics import EvalReport, dice_score, psnr, ssim
from .nets import (
    ARCH_PEMLP,
    ARCH_SIREN,
    InrModel,
    SegNet,
    init_params,
    inr_forward,
    make_inr,
    make_segnet,
    pemlp_forward,
    positional_encode,
    siren_forward,
    unet_forward,
)
from .tensor import Tape, Tensor, backward_sweep, finite_difference_check, zero_grads
from .training import (
    AdamState,
    LossTrace,
    SegDataset,
    TrainConfig,
    adam_step,
    bce_loss,
    compress_loss,
    sinco_loss,
    soft_dice_loss,
    train_compress,
    train_segmenter,
)

__version__ = "0.1.0"
