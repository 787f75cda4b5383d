"""GP-supervised unpaired image translation, desk scale.

The package splits into the numeric core (linalg, kernels, gp_supervisor),
the differentiable networks (nets), the training loop (trainer), synthetic
data plus metrics (data_metrics), and the command-line front end (cli,
verify).
"""

from .data_metrics import DegradeSpec, Patch, degrade, make_clean, psnr, read_pgm, ssim, write_pgm
from .errors import DgpError
from .gp_supervisor import (
    FeatureBank,
    GpPosterior,
    bank_build,
    gp_condition,
    knn_select,
    pseudo_loss,
    pseudo_loss_grad,
)
from .kernels import KernelSpec, base_kernel, effective_kernel, gram
from .linalg import CholFactor, cholesky, logdet, solve_posdef
from .nets import AdamState, Discriminator, Generator, adam_step, load_checkpoint, save_checkpoint
from .trainer import (
    DeskData,
    LossBreakdown,
    TrainConfig,
    adversarial_losses,
    build_epoch_banks,
    identity_loss,
    lr_at,
    train_run,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CholFactor",
    "DegradeSpec",
    "DeskData",
    "DgpError",
    "Discriminator",
    "FeatureBank",
    "Generator",
    "GpPosterior",
    "KernelSpec",
    "LossBreakdown",
    "Patch",
    "TrainConfig",
    "adam_step",
    "adversarial_losses",
    "bank_build",
    "base_kernel",
    "build_epoch_banks",
    "cholesky",
    "degrade",
    "effective_kernel",
    "gp_condition",
    "gram",
    "identity_loss",
    "knn_select",
    "load_checkpoint",
    "logdet",
    "lr_at",
    "make_clean",
    "psnr",
    "pseudo_loss",
    "pseudo_loss_grad",
    "read_pgm",
    "save_checkpoint",
    "solve_posdef",
    "ssim",
    "train_run",
    "train_step",
    "write_pgm",
]
