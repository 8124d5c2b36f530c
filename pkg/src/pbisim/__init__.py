"""Probabilistic bisimulation minimisation for explicit-state MDPs and DTMCs."""

from .model import (DTMC, MDP, ModelError, ModelFormatError, SparseModel, accumulated_prob,
                    load_model, pre_states, read_model, write_model)
from .ordering import (CLI_ORDERINGS, STRATEGIES, CyclicModel, RefineConfig, RunStats,
                       SplitterSchedule, minimize, run_refinement)
from .partition import Partition, is_finer, partitions_equal
from .quotient import (QuotientModel, UnstablePartition, build_quotient, check_stability,
                       oracle_bisimulation)
from .reach import NotConverged, ReachQuery, ReachResult, gauss_seidel_reach, verify_quotient_reach
from .refine import (ProbTable, compute_signatures, hash_probability, initial_partition_bfs_layers,
                     initial_partition_two_block, refine_hash, refine_sort)

__version__ = "0.1.0"
