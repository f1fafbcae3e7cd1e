"""Campaign driver: config, background traffic, the run loop and reporting."""

from __future__ import annotations

import configparser
import json
import logging
import os
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, TextIO, Union

from .errors import Severity, expected_error_for
from .faults import MASK64, FaultKind, FaultSpec, HorizonTooSmall, SplitMix64, gen_campaign
from .injector import FaultInjector
from .link import GOLDEN_BASE, LinkConfig, LinkDown, NoFreeTag, Simulator, TraceRecord
from .ltssm import Ltssm
from .packet import TlpKind
from .recovery import RecoveryController, RecoveryMode

log = logging.getLogger(__name__)

SUBMIT_INTERVAL = 8
WRITE_PERCENT = 70
ECRC_PERCENT = 50
WRITE_BYTES = 64
READ_DW = 16
MAX_QUEUE = 16
DRAIN_LIMIT = 20_000


class ConfigError(ValueError):
    pass


@dataclass
class CampaignConfig:
    seed: int = 1
    mode: RecoveryMode = RecoveryMode.Proposed
    horizon_cycles: int = 10_000
    count_per_kind: int = 0
    snapshot_interval: int = 1
    retrain_cost: int = 40
    completion_timeout_cycles: int = 1024
    replay_timeout_cycles: int = 64
    trace_path: Optional[str] = None
    report_path: Optional[str] = None
    fault_kinds: Optional[list[FaultKind]] = None
    faults: list[FaultSpec] = field(default_factory=list)

    def __post_init__(self):
        try:
            self.mode = RecoveryMode(self.mode)
        except ValueError:
            raise ConfigError(f"mode must be proposed or baseline, not {self.mode!r}") from None
        for name in ("horizon_cycles", "snapshot_interval", "retrain_cost",
                     "completion_timeout_cycles", "replay_timeout_cycles"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.count_per_kind < 0:
            raise ConfigError("count_per_kind must not be negative")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must fit in 64 bits")

    def campaign(self) -> list[FaultSpec]:
        try:
            specs = gen_campaign(self.seed, self.count_per_kind, self.horizon_cycles,
                                 self.fault_kinds)
        except HorizonTooSmall as exc:
            raise ConfigError(str(exc)) from None
        base = len(specs)
        extra = [FaultSpec.build(base + i, f.cycle, f.kind, f.seed) for i, f in enumerate(self.faults)]
        return sorted(specs + extra, key=lambda s: (s.cycle, s.id))


_INT_KEYS = {"seed", "horizon_cycles", "count_per_kind", "snapshot_interval", "retrain_cost",
             "completion_timeout_cycles", "replay_timeout_cycles"}
_STR_KEYS = {"mode", "trace_path", "report_path"}


def _int(key: str, value: str) -> int:
    try:
        return int(value, 0)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _kind(value: str) -> FaultKind:
    try:
        return FaultKind(value.strip())
    except ValueError:
        raise ConfigError(f"unknown fault kind {value.strip()!r}") from None


def parse_fault(value: str) -> FaultSpec:
    """``kind,cycle,seed`` as written by FaultSpec.to_config."""
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"fault must be kind,cycle,seed: {value!r}")
    return FaultSpec.build(0, _int("cycle", parts[1]), _kind(parts[0]), _int("seed", parts[2]))


def parse_config(text: str, base_dir: Optional[Path] = None) -> CampaignConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    try:
        cp.read_string("[campaign]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    if cp.sections() != ["campaign"]:
        raise ConfigError("config is flat key=value lines; sections are not allowed")
    kw: dict = {}
    faults = []
    for key, value in cp["campaign"].items():
        if key in _INT_KEYS:
            kw[key] = _int(key, value)
        elif key in _STR_KEYS:
            kw[key] = value.strip()
        elif key == "fault_kinds":
            kw[key] = [_kind(v) for v in value.split(",") if v.strip()]
        elif key.startswith("fault."):
            faults.append((_int(key, key.split(".", 1)[1]), parse_fault(value)))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    kw["faults"] = [f for _, f in sorted(faults, key=lambda t: t[0])]
    for key in ("trace_path", "report_path"):
        if kw.get(key) and base_dir is not None and not os.path.isabs(kw[key]):
            kw[key] = str(base_dir / kw[key])
    try:
        return CampaignConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: Union[str, Path]) -> CampaignConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


class Traffic:
    """Seeded background load: one submit every SUBMIT_INTERVAL cycles.

    Writes extend the golden stream; reads target bytes already written.
    """

    def __init__(self, seed: int):
        self.rng = SplitMix64(seed ^ 0x5EED_7AFF_1C00_0000)

    def __call__(self, sim: Simulator) -> None:
        if sim.now % SUBMIT_INTERVAL or sim.link.ltssm is not Ltssm.L0:
            return
        if len(sim.requester.tx_queue) >= MAX_QUEUE:
            return
        rng = self.rng
        write = rng.chance(WRITE_PERCENT)
        ecrc = rng.chance(ECRC_PERCENT)
        written = len(sim.tracker.golden)
        try:
            if write or written < 4 * READ_DW:
                payload = b"".join(rng.next().to_bytes(8, "little") for _ in range(WRITE_BYTES // 8))
                sim.submit_write(payload, ecrc=ecrc)
            else:
                offset = 4 * rng.below((written - 4 * READ_DW) // 4 + 1)
                sim.tl_submit(TlpKind.MemRd, GOLDEN_BASE + offset, length_dw=READ_DW, ecrc=ecrc)
        except (NoFreeTag, LinkDown):
            pass


@dataclass
class KindCounts:
    injected: int = 0
    detected: int = 0
    classified_correctly: int = 0
    recovered: int = 0


@dataclass
class CampaignReport:
    seed: int
    mode: str
    total_cycles: int
    per_kind: dict[str, KindCounts]
    events_by_kind: dict[str, int]
    unattributed_events: int
    misclassified_events: int
    abandoned_faults: list[int]
    corrupted_bytes_delivered: int
    stream_matches_golden: bool
    bytes_delivered: int
    recovery_latencies: list[int]
    flag_to_corrected: list[int]
    link_down_cycles_total: int
    fatal_dispositions: list[dict]
    interrupts: int
    correctable_delays: list[int]
    stale_snapshots: int
    ltssm_left_l0: bool
    aer_final: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    def totals(self) -> KindCounts:
        t = KindCounts()
        for c in self.per_kind.values():
            for f in fields(KindCounts):
                setattr(t, f.name, getattr(t, f.name) + getattr(c, f.name))
        return t

    def violations(self) -> list[str]:
        """Invariant failures that make a campaign fail (exit code 1)."""
        out = []
        for name, c in self.per_kind.items():
            if c.detected != c.injected:
                out.append(f"{name}: {c.injected - c.detected} of {c.injected} faults undetected")
            if c.classified_correctly != c.injected:
                out.append(f"{name}: {c.injected - c.classified_correctly} faults misclassified")
        if self.unattributed_events:
            out.append(f"{self.unattributed_events} events not attributable to a fault")
        if self.misclassified_events:
            out.append(f"{self.misclassified_events} events of an unexpected kind")
        if self.abandoned_faults:
            out.append(f"{len(self.abandoned_faults)} faults never found a target")
        if self.mode == RecoveryMode.Proposed.value:
            if self.corrupted_bytes_delivered:
                out.append(f"{self.corrupted_bytes_delivered} corrupted bytes reached the consumer")
            if not self.stream_matches_golden:
                out.append("consumer stream differs from the golden stream")
        return out


def build_simulator(cfg: CampaignConfig) -> Simulator:
    link_cfg = LinkConfig(completion_timeout_cycles=cfg.completion_timeout_cycles,
                          replay_timeout_cycles=cfg.replay_timeout_cycles,
                          retrain_cost=cfg.retrain_cost)
    rc = RecoveryController(cfg.mode, cfg.snapshot_interval, cfg.retrain_cost)
    return Simulator(link_cfg, rc)


def simulate(cfg: CampaignConfig) -> tuple[Simulator, FaultInjector]:
    """Run traffic and the campaign to the horizon, then drain."""
    sim = build_simulator(cfg)
    injector = FaultInjector(cfg.campaign())
    traffic = Traffic(cfg.seed)

    def hook(s: Simulator) -> None:
        if s.now < cfg.horizon_cycles or not injector.done:
            traffic(s)
        injector(s)

    sim.fault_hook = hook
    while sim.now < cfg.horizon_cycles or not injector.done:
        if sim.now >= cfg.horizon_cycles + DRAIN_LIMIT:
            log.warning("%d faults still pending at cycle %d; abandoning them",
                        len(injector.pending), sim.now)
            injector.abandon_pending()
            break
        sim.tick()
    limit = sim.now + DRAIN_LIMIT
    while not sim.drained() and sim.now < limit:
        sim.tick()
    if not sim.drained():
        log.warning("simulation did not drain within %d cycles", DRAIN_LIMIT)
    return sim, injector


def build_report(cfg: CampaignConfig, sim: Simulator, injector: FaultInjector) -> CampaignReport:
    per_kind = {k.value: KindCounts() for k in (cfg.fault_kinds or list(FaultKind))}
    for spec, _ in injector.applied.values():
        c = per_kind.setdefault(spec.kind.value, KindCounts())
        evs = sim.fault_events.get(spec.id, [])
        want = expected_error_for(spec.kind)
        c.injected += 1
        c.detected += bool(evs)
        c.classified_correctly += bool(evs) and all(e.kind is want for e in evs)
        c.recovered += bool(evs) and all(e.resolved_cycle is not None for e in evs)
    for spec in injector.abandoned:
        per_kind.setdefault(spec.kind.value, KindCounts()).injected += 1

    kinds_of = {spec.id: spec.kind for spec, _ in injector.applied.values()}
    misclassified = sum(1 for e in sim.events if e.attributed_fault is not None
                        and e.kind is not expected_error_for(kinds_of[e.attributed_fault]))
    rc = sim.recovery
    tr = sim.tracker
    return CampaignReport(
        seed=cfg.seed,
        mode=cfg.mode.value,
        total_cycles=sim.now,
        per_kind=per_kind,
        events_by_kind=dict(sorted(Counter(e.kind.value for e in sim.events).items())),
        unattributed_events=sum(e.attributed_fault is None for e in sim.events),
        misclassified_events=misclassified,
        abandoned_faults=[s.id for s in injector.abandoned],
        corrupted_bytes_delivered=tr.corrupted_delivered,
        stream_matches_golden=tr.consumer_stream() == bytes(tr.golden),
        bytes_delivered=tr.cursor,
        recovery_latencies=[r.latency_cycles for r in rc.records],
        flag_to_corrected=[r.flag_to_corrected for r in rc.records],
        link_down_cycles_total=sim.link_down_cycles,
        fatal_dispositions=[{"kind": ev.kind.value, "cycle": ev.cycle,
                             "link_down_cycles": d.link_down_cycles, "recovered": d.recovered}
                            for ev, d in rc.dispositions],
        interrupts=len(rc.interrupts),
        correctable_delays=[e.resolved_cycle - e.cycle if e.resolved_cycle is not None else -1
                            for e in sim.events if e.severity is Severity.Correctable],
        stale_snapshots=len(rc.stale),
        ltssm_left_l0=any(r.ltssm != Ltssm.L0.value for r in sim.trace
                          if r.cycle > _first_l0(sim.trace)),
        aer_final=sim.aer.to_dict(),
    )


def _first_l0(trace: list[TraceRecord]) -> int:
    return next((r.cycle for r in trace if r.ltssm == Ltssm.L0.value), 0)


def emit_trace(records: Iterable[TraceRecord], dest: Union[str, Path, TextIO]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="ascii", newline="\n") as fh:
            emit_trace(records, fh)
        return
    for rec in records:
        dest.write(rec.line() + "\n")


def run_campaign(cfg: CampaignConfig) -> CampaignReport:
    sim, injector = simulate(cfg)
    report = build_report(cfg, sim, injector)
    if cfg.trace_path:
        emit_trace(sim.trace, cfg.trace_path)
    if cfg.report_path:
        Path(cfg.report_path).write_text(report.to_json())
    return report
