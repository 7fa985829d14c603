"""Federated adversarial training on two-layer ReLU networks, plus the
numerical studies that probe why it converges."""

from .adversary import (
    AdversaryConfig,
    AdversaryMode,
    grid_oracle_worst_case,
    perturb,
    perturb_many,
    project_ball_manifold,
    sample_manifold,
    worst_case_loss,
)
from .core import RngStream, frobenius, norm_2_1, norm_2_inf, sample_gaussian, sample_uniform_sym
from .data import (
    ClientDataset,
    FederatedDataset,
    LabeledSet,
    PackingError,
    gen_gaussian_clusters,
    gen_separable_sphere,
    load_csv,
    save_csv,
    separability_stats,
)
from .federation import (
    FalConfig,
    GradientReport,
    RoundRecord,
    RunResult,
    client_update,
    fl_gradient,
    global_losses,
    run_fal,
    run_fedavg,
)
from .model import (
    InitAnchor,
    LossKind,
    NetParams,
    forward,
    forward_many,
    grad_hidden,
    init_params,
    loss_eval,
    loss_subgrad,
    pseudo_forward,
    pseudo_forward_many,
    pseudo_grad_hidden,
)
from .verification import (
    FiniteDiffReport,
    ScalingStudy,
    coupling_study,
    finite_diff_audit,
    fl_gap_study,
    min_adv_loss,
    uniform_approx_study,
)

__version__ = "0.1.0"
