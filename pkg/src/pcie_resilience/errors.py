"""Error taxonomy: (kind, layer, severity) classification and AER-style registers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from .faults import FaultKind


class ErrorKind(enum.Enum):
    RxError = "RxError"
    BadTlp = "BadTlp"
    BadDllp = "BadDllp"
    ReplayTimeout = "ReplayTimeout"
    CorruptedRxTlp = "CorruptedRxTlp"
    EcrcFailure = "EcrcFailure"
    UnsupportedRequest = "UnsupportedRequest"
    CompletionTimeout = "CompletionTimeout"
    CompleterAbort = "CompleterAbort"
    UnexpectedCompletion = "UnexpectedCompletion"
    TrainingError = "TrainingError"
    DllProtocolError = "DllProtocolError"
    ReceiverOverflow = "ReceiverOverflow"
    FlowControlProtocolError = "FlowControlProtocolError"
    MalformedTlp = "MalformedTlp"

    @property
    def bit(self) -> int:
        return 1 << _KIND_INDEX[self]


_KIND_INDEX = {k: i for i, k in enumerate(ErrorKind)}


class Layer(enum.Enum):
    TL = "TL"
    DL = "DL"
    PL = "PL"


class Severity(enum.Enum):
    Correctable = "Correctable"
    NonFatalUncorrectable = "NonFatalUncorrectable"
    FatalUncorrectable = "FatalUncorrectable"


_C, _N, _F = Severity.Correctable, Severity.NonFatalUncorrectable, Severity.FatalUncorrectable

# Layer and severity of every error kind.
_TABLE = {
    ErrorKind.RxError: (Layer.PL, _C),
    ErrorKind.BadTlp: (Layer.DL, _C),
    ErrorKind.BadDllp: (Layer.DL, _C),
    ErrorKind.ReplayTimeout: (Layer.DL, _C),
    ErrorKind.CorruptedRxTlp: (Layer.TL, _N),
    ErrorKind.EcrcFailure: (Layer.TL, _N),
    ErrorKind.UnsupportedRequest: (Layer.TL, _N),
    ErrorKind.CompletionTimeout: (Layer.TL, _N),
    ErrorKind.CompleterAbort: (Layer.TL, _N),
    ErrorKind.UnexpectedCompletion: (Layer.TL, _N),
    ErrorKind.TrainingError: (Layer.PL, _F),
    ErrorKind.DllProtocolError: (Layer.DL, _F),
    ErrorKind.ReceiverOverflow: (Layer.TL, _F),
    ErrorKind.FlowControlProtocolError: (Layer.TL, _F),
    ErrorKind.MalformedTlp: (Layer.TL, _F),
}

# Human-readable example names, used by the ``classify`` subcommand.
TABLE_NAMES = {
    ErrorKind.RxError: "RX error (host& target)",
    ErrorKind.BadTlp: "Bad TL packet",
    ErrorKind.BadDllp: "Bad DLL packet",
    ErrorKind.ReplayTimeout: "Time-out",
    ErrorKind.CorruptedRxTlp: "Corrupted RX TL packet",
    ErrorKind.EcrcFailure: "ECRC failure",
    ErrorKind.UnsupportedRequest: "Unsupported request",
    ErrorKind.CompletionTimeout: "Completion time-out",
    ErrorKind.CompleterAbort: "Completion Abort",
    ErrorKind.UnexpectedCompletion: "Unexpected Completion",
    ErrorKind.TrainingError: "Training error",
    ErrorKind.DllProtocolError: "DLL protocol error",
    ErrorKind.ReceiverOverflow: "RX overflow",
    ErrorKind.FlowControlProtocolError: "Flow control protocol error",
    ErrorKind.MalformedTlp: "Corrupted TL packet",
}


def classify(kind: ErrorKind) -> tuple[Layer, Severity]:
    return _TABLE[ErrorKind(kind)]


_EXPECTED = {
    FaultKind.FlipTlpPayloadBit: ErrorKind.BadTlp,
    FaultKind.FlipLcrcBit: ErrorKind.BadTlp,
    FaultKind.FlipSeqNum: ErrorKind.DllProtocolError,
    FaultKind.FlipDllpCrcBit: ErrorKind.BadDllp,
    FaultKind.DropAck: ErrorKind.ReplayTimeout,
    FaultKind.StallCompletion: ErrorKind.CompletionTimeout,
    FaultKind.ViolateCredit: ErrorKind.ReceiverOverflow,
    FaultKind.MalformHeader: ErrorKind.MalformedTlp,
    FaultKind.InjectUnexpectedCompletion: ErrorKind.UnexpectedCompletion,
    FaultKind.SendUnsupportedRequest: ErrorKind.UnsupportedRequest,
    FaultKind.ForceCompleterAbort: ErrorKind.CompleterAbort,
    FaultKind.FlipEcrcBit: ErrorKind.EcrcFailure,
    FaultKind.PlSymbolError: ErrorKind.RxError,
    FaultKind.BreakTraining: ErrorKind.TrainingError,
    FaultKind.SuppressReplayAck: ErrorKind.FlowControlProtocolError,
}


def expected_error_for(fault_kind: FaultKind) -> ErrorKind:
    return _EXPECTED[FaultKind(fault_kind)]


@dataclass
class ErrorEvent:
    """One detected anomaly.

    ``context`` carries what the recovery stage needs to repair the damage:
    the golden span of a lost write (``span``) and the original request to
    re-issue (``request``).  Layer and severity are derived from ``kind``.
    """

    kind: ErrorKind
    cycle: int
    seq_or_tag: int = 0
    attributed_fault: Optional[int] = None
    detail: str = ""
    context: dict[str, Any] = field(default_factory=dict)
    resolved_cycle: Optional[int] = None

    @property
    def layer(self) -> Layer:
        return _TABLE[self.kind][0]

    @property
    def severity(self) -> Severity:
        return _TABLE[self.kind][1]


@dataclass(frozen=True)
class AerRegisters:
    correctable_status: int = 0
    uncorrectable_status: int = 0
    first_error_kind: Optional[ErrorKind] = None
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "correctable_status": f"{self.correctable_status:#06x}",
            "uncorrectable_status": f"{self.uncorrectable_status:#06x}",
            "first_error_kind": self.first_error_kind.value if self.first_error_kind else None,
            "counts": {k.value: n for k, n in sorted(self.counts.items(), key=lambda kv: kv[0].value)},
        }


def aer_record(registers: AerRegisters, event: ErrorEvent) -> AerRegisters:
    counts = dict(registers.counts)
    counts[event.kind] = counts.get(event.kind, 0) + 1
    corr, uncorr = registers.correctable_status, registers.uncorrectable_status
    if event.severity is Severity.Correctable:
        corr |= event.kind.bit
    else:
        uncorr |= event.kind.bit
    return replace(
        registers,
        correctable_status=corr,
        uncorrectable_status=uncorr,
        first_error_kind=registers.first_error_kind or event.kind,
        counts=counts,
    )
