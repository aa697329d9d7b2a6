# tcnn/reparam/__init__.py
"""Conv -> GPSA surgery and equivalence checks."""
from tcnn.reparam.surgery import (
    PaddedGpsa,
    conv_to_gpsa,
    head_centers,
    transform_last_stage,
    verify_equivalence,
)
