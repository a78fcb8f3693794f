"""Deterministic desk-scale simulator for model-poisoning attacks and defenses
in federated learning: clipped sparsified aggregation with error feedback, the
classic Byzantine-robust rules, device-level attacks, and certified-radius
bookkeeping for paired benign/poisoned runs."""

from .attacks import AttackSpec, RoundView
from .certify import DriftReport, RadiusParams, radius_closed_form, radius_recurrence
from .data import AuxiliarySet, DeviceDataset, PartitionSpec, build_auxiliary, make_blobs, partition
from .defenses import AggregatorSpec, ClipSpec
from .models import Batch, MLPOneHidden, SoftmaxLinear, make_oracle
from .numkit import CountSketch, SparseUpdate, l1_distance, l2_clip, sketch, top_k
from .schedules import Schedule
from .simulator import InjectionSpec, ProtocolConfig, RunRecord, Seeds, run, run_paired
from .sparsefed import RoundState, SparseFedSpec, fetchsgd_step, select_k, sparsefed_step

__all__ = [
    "AttackSpec", "RoundView", "DriftReport", "RadiusParams",
    "radius_closed_form", "radius_recurrence", "AuxiliarySet", "DeviceDataset",
    "PartitionSpec", "build_auxiliary", "make_blobs", "partition",
    "AggregatorSpec", "ClipSpec", "Batch", "MLPOneHidden", "SoftmaxLinear",
    "make_oracle", "CountSketch", "SparseUpdate", "l1_distance", "l2_clip",
    "sketch", "top_k", "Schedule", "InjectionSpec", "ProtocolConfig",
    "RunRecord", "Seeds", "run", "run_paired", "RoundState", "SparseFedSpec",
    "fetchsgd_step", "select_k", "sparsefed_step",
]
