"""Optimized cost-per-click bidding: ROI-bounded bid adjustment under eCPM ranking."""

from .auction import AuctionOutcome, Placement, greedy_rank, gsp_price, rank, run_ocpc, str3_rank
from .bidopt import BidBounds, bid_bounds, sigma, str1_bid
from .calibration import CvrHistory, calibrate_cvr, expected_cvr, gap_curve, trimmed_mean
from .domain import AdCandidate, Campaign, PvRequest, Strategy, StrategyConfig, validate
from .metrics import aggregate, auc, compare, gauc
from .objectives import ObjectiveSpec, evaluate
from .simulator import Ledger, replay, replay_many

__version__ = "0.1.0"
