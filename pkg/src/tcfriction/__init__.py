"""Transaction-cost coding of O*NET task statements and occupation friction maps."""

__version__ = "0.1.0"

from .aggregate import (  # noqa: E402
    aggregate_all,
    category_shares,
    group_headline,
    join_scores,
    weighted_tci,
    weighted_tci_sd,
)
from .frictionmap import Quadrant, emit_summary_pack, quadrant_classify  # noqa: E402
from .ingest import (  # noqa: E402
    build_task_table,
    compute_frequency_weight,
    dedup_tasks,
    parse_task_ratings,
    parse_task_statements,
)
from .schema import CategoryCode, render_violations, validate_candidate  # noqa: E402
from .scorer import build_prompt, mock_backend, score_corpus, score_task  # noqa: E402
from .stats import bh_adjust, cliffs_delta, compare_groups, mann_whitney_u  # noqa: E402
