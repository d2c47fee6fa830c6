"""Reference-free preference optimization with likelihood anchoring,
stabilized rejected-token penalties and a dual hard/soft margin."""

from .estimator import SlimeAligner, check_pairs
from .objective import (
    BaselineHyperParams,
    LossBreakdown,
    SlimeHyperParams,
    chosen_loss,
    dpo_loss,
    dual_margin_loss,
    rejected_penalty,
    simpo_loss,
    slime_total,
)
from .prefdata import PreferencePair, TokenSequence, generate_synthetic, load_jsonl, save_jsonl, split_corpus
from .trainer import TrainConfig, compare_objectives, train

__version__ = "0.1.0"
