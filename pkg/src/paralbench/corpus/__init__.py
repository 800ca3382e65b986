from .build import DEFAULT_POLICIES, apply_policy, build_manifest, default_policy
from .manifest import (
    SPLITS,
    UNASSIGNED,
    ExcludedEntry,
    Manifest,
    Sample,
    SplitPolicy,
    VerificationReport,
    filter_min_class_count,
    split_by_group,
    split_random,
    verify_manifest,
)
