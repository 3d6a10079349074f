"""Multi-timescale LSTM forecasting of team behavior on synthetic search-and-rescue traces."""

__version__ = "0.1.0"

from .lstm import GroupSchedule, LstmParams, bptt, forward_sequence, mts_step, train, train_mapper  # noqa: E402,F401
from .predictor import map_labels, rollout, snap_categoricals  # noqa: E402,F401
