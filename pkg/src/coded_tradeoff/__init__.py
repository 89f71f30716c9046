"""Coded distributed matrix multiplication with stragglers.

MDS-coded storage, straggler-aware Map, greedy coded-multicast Shuffle and
exact Reduce decoding, plus closed-form latency-load tradeoffs and their
converse bound.
"""

from .analysis import (achievable_latency, achievable_load, appendix_gap_check, b_coefficient,
                       gap_report, lower_bound_load, threshold_s, tradeoff_curve)
from .codec import (SchemeParams, StoragePlan, build_storage_plan, reduce_decode,
                    server_storage_matrix, verify_decodability)
from .shuffle import (assign_reduce_tasks, build_needed_sets, finish_residual, measure_load,
                      run_coded_rounds, run_shuffle)
from .sim import SimConfig, SimReport, run_monte_carlo, run_single
from .stragglers import LatencyModel, expected_order_statistic, sample_latencies, select_fastest

__version__ = "0.1.0"
