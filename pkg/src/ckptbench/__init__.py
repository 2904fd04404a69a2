"""Checkpoint/restore I/O benchmarking toolkit.

Modules: workload (deterministic content generation), layout (aggregation
strategies and alignment planning), engine (batched async I/O with a
blocking baseline), ckpt (checkpoint/restore pipelines with manifest and
verification), bench (multi-process orchestration, reports, CLI), profiles
(built-in model shapes).
"""

__version__ = "0.1.0"

from .workload import (  # noqa: F401
    ObjectKind,
    ObjectSpec,
    WorkloadSpec,
    ModelProfile,
    fill_buffer,
    generate_synthetic,
    generate_from_profile,
)
from .layout import (  # noqa: F401
    AggregationStrategy,
    StrategyKind,
    LayoutPlan,
    PlacementEntry,
    plan_layout,
    total_padded_bytes,
)
from .engine import (  # noqa: F401
    Backend,
    BufferPool,
    EngineConfig,
    IoEngine,
    IoOp,
    IoRequest,
    OpenMode,
)
from .ckpt import (  # noqa: F401
    AllocMode,
    EmulationMode,
    Manifest,
    checkpoint,
    restore,
    verify_checkpoint,
)
