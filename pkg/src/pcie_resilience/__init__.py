"""Cycle-level model of a three-layer serial link with fault injection,
error classification and on-the-fly recovery."""

from .errors import AerRegisters, ErrorEvent, ErrorKind, Layer, Severity, classify, expected_error_for
from .faults import FaultKind, FaultSpec, HorizonTooSmall, NoTargetInFlight, SplitMix64, gen_campaign
from .harness import CampaignConfig, CampaignReport, ConfigError, emit_trace, load_config, run_campaign
from .injector import FaultInjector, MutationRecord, apply_fault
from .link import LinkConfig, Simulator, TraceRecord
from .ltssm import LinkState, Ltssm, LtssmEvent, ltssm_step
from .packet import (
    DlFrame, Dllp, DllpKind, Malformed, Tlp, TlpKind, crc16, crc32, make_dllp, make_tlp,
    parse_tlp, serialize_tlp,
)
from .recovery import RecoveryController, RecoveryMode, Snapshot, compare_and_flag, handle_fatal

__all__ = [
    "AerRegisters", "CampaignConfig", "CampaignReport", "ConfigError", "DlFrame", "Dllp",
    "DllpKind", "ErrorEvent", "ErrorKind", "FaultInjector", "FaultKind", "FaultSpec",
    "HorizonTooSmall", "Layer", "LinkConfig", "LinkState", "Ltssm", "LtssmEvent", "Malformed",
    "MutationRecord", "NoTargetInFlight", "RecoveryController", "RecoveryMode", "Severity",
    "Simulator", "Snapshot", "SplitMix64", "Tlp", "TlpKind", "TraceRecord", "apply_fault",
    "classify", "compare_and_flag", "crc16", "crc32", "emit_trace", "expected_error_for",
    "gen_campaign", "handle_fatal", "load_config", "ltssm_step", "make_dllp", "make_tlp",
    "parse_tlp", "run_campaign", "serialize_tlp",
]
