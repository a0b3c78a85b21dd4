"""Staged multi-branch toy diffusion with attribute-wise detail injection."""

__version__ = "0.1.0"

from .denoiser import (  # noqa: F401
    CapturedAttention,
    ModelParams,
    Schedule,
    ddim_step,
    forward,
    init_params,
    sample_init,
)
from .masks import BinaryMask, SubjectMap, align_mask, binarize, subject_map  # noqa: F401
from .numerics import (  # noqa: F401
    SeededStream,
    seeded_gaussian,
    seeded_uniform,
    softmax_rows,
    token_embedding,
)
from .nurse import (  # noqa: F401
    LossReport,
    NurseConfig,
    align_loss,
    centroid,
    entropy_loss,
    fd_gradient,
    nurse_update,
    peak,
)
from .orchestrator import PipelineConfig, RunResult, alm, run  # noqa: F401
from .prompts import (  # noqa: F401
    PromptPlan,
    PromptTree,
    decompose,
    parse,
    plan_from_text,
    subject_span,
    tokenize,
)
