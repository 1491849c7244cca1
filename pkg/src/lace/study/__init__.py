"""Study harness: scripted-session replay and non-parametric statistics."""

from .replay import ReplayScript, SessionOutcome, bundled_scripts, load_script, run_script
from .stats import (
    AdviseExact,
    FriedmanResult,
    LikertTable,
    NoVariation,
    TestReport,
    WilcoxonResult,
    analyze,
    effect_size_r,
    friedman,
    kendalls_w,
    p_from_z,
    wilcoxon_signed_rank,
)

__all__ = [
    "AdviseExact",
    "FriedmanResult",
    "LikertTable",
    "NoVariation",
    "ReplayScript",
    "SessionOutcome",
    "TestReport",
    "WilcoxonResult",
    "analyze",
    "bundled_scripts",
    "effect_size_r",
    "friedman",
    "kendalls_w",
    "load_script",
    "p_from_z",
    "run_script",
    "wilcoxon_signed_rank",
]
