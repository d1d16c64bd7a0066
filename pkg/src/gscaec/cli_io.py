"""Run configuration parsing/emission and deterministic CSV output.

A run is fully determined by one INI-style document with the sections
[plant], [signals], [gsc], [policy], [schedule], [montecarlo], [design] and
[output].  The schema is strict: unknown sections or keys fail fast with
the offending name.  Emission is canonical, so parse -> emit -> parse is
the identity on the parsed configuration.
"""

import configparser
import io
from dataclasses import dataclass, field, fields as dc_fields
from typing import Optional, Tuple

import numpy as np

from .adaptive_engine import PolicySegment, StepPolicy, quasi_newton_matrix
from .design_search import DesignSpec
from .gsc_core import build_gsc, optimal_solutions
from .harness import Event, LearningCurve, PlantConfig, Scenario
from .signal_model import (
    FarEndModel,
    Interferer,
    NearEndModel,
    analytic_Rbb,
    build_modified_channel_matrix,
)


class ConfigError(Exception):
    """Invalid or unknown configuration content (CLI exit status 1)."""


# ---------------------------------------------------------------------------
# Typed sections


@dataclass(frozen=True)
class PlantSection:
    m: int = 2
    n_h: int = 128
    fs: float = 8000.0
    t_r60: float = 0.1
    oversample: int = 5
    mic_spacing: int = 1
    seed: int = 1
    per_run: bool = False


@dataclass(frozen=True)
class SignalsSection:
    far_end: str = "ar1"
    ar_pole: float = -0.9
    variance: float = 1.0
    source_path: str = ""
    noise_var: float = 0.01
    nonstat_eta: float = 0.0


@dataclass(frozen=True)
class GscSection:
    n_bf: int = 16
    n_f: int = 16
    n_aec: int = 128
    response: str = "allpass"
    custom_f: Tuple[float, ...] = ()
    presteer: Tuple[int, ...] = ()


@dataclass(frozen=True)
class PolicySection:
    mode: str = "split"
    mu_aec: float = 0.0
    mu_bf: float = 0.0
    trace_budget: float = 0.0
    aec_share: float = 0.5
    whitening_lambda: float = 0.0


@dataclass(frozen=True)
class ScheduleSection:
    segments: Tuple[Tuple[int, float, float], ...] = ()  # (at, mu_aec, mu_bf)
    events: Tuple[Tuple, ...] = ()  # normalized event tuples, see _parse_event


@dataclass(frozen=True)
class MonteCarloSection:
    runs: int = 100
    n_samples: int = 10000
    base_seed: int = 1
    smoothing_window: int = 101


@dataclass(frozen=True)
class DesignSection:
    target_jinf_db: float = -20.0
    target_at_db: float = -20.0
    at_n: int = 0
    at_seconds: float = 0.0
    m_values: Tuple[int, ...] = (2,)
    n_aec_min: int = 0
    n_aec_max: int = 0
    n_aec_step: int = 1
    budget_points: int = 20
    share_step: float = 0.02


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"


@dataclass(frozen=True)
class RunConfig:
    plant: PlantSection = field(default_factory=PlantSection)
    signals: SignalsSection = field(default_factory=SignalsSection)
    gsc: GscSection = field(default_factory=GscSection)
    policy: PolicySection = field(default_factory=PolicySection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    montecarlo: MonteCarloSection = field(default_factory=MonteCarloSection)
    design: Optional[DesignSection] = None
    output: OutputSection = field(default_factory=OutputSection)


_SECTION_TYPES = {
    "plant": PlantSection,
    "signals": SignalsSection,
    "gsc": GscSection,
    "policy": PolicySection,
    "montecarlo": MonteCarloSection,
    "design": DesignSection,
    "output": OutputSection,
}
_UNSIGNED_KEYS = {("plant", "seed"), ("montecarlo", "base_seed")}
_ENUMS = {
    ("signals", "far_end"): ("ar1", "white", "file"),
    ("gsc", "response"): ("allpass", "linear_phase", "custom"),
    ("policy", "mode"): ("split", "matrix", "whitening"),
}


def _convert(section, key, ftype, raw):
    raw = raw.strip()
    try:
        if ftype is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if ftype is int:
            value = int(raw)
            if (section, key) in _UNSIGNED_KEYS and value < 0:
                raise ValueError("must be unsigned")
            return value
        if ftype is float:
            return float(raw)
        if ftype is str:
            return raw
        if ftype == Tuple[float, ...]:
            return tuple(float(t) for t in raw.split(",") if t.strip()) if raw else ()
        if ftype == Tuple[int, ...]:
            return tuple(int(t) for t in raw.split(",") if t.strip()) if raw else ()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None
    raise ConfigError(f"[{section}] {key}: unsupported field type")


def _parse_section(name, items):
    cls = _SECTION_TYPES[name]
    known = {f.name: f.type for f in dc_fields(cls)}
    values = {}
    for key, raw in items:
        if key not in known:
            raise ConfigError(f"unknown key '{key}' in section [{name}]")
        ftype = known[key]
        # dataclass fields carry typing generics as-is
        values[key] = _convert(name, key, ftype, raw)
        if (name, key) in _ENUMS and values[key] not in _ENUMS[(name, key)]:
            raise ConfigError(
                f"[{name}] {key}: {values[key]!r} not one of {_ENUMS[(name, key)]}"
            )
    return cls(**values)


def _parse_kv_blob(section, entry, raw):
    out = {}
    for token in raw.split():
        if "=" not in token:
            raise ConfigError(f"[{section}] {entry}: bad token {token!r}")
        k, v = token.split("=", 1)
        out[k] = v
    return out


_EVENT_KEYS = {
    "dtalk_on": {"at", "kind", "power", "pole", "doa_delay"},
    "dtalk_off": {"at", "kind"},
    "plant_change": {"at", "kind", "seed"},
    "policy_change": {"at", "kind", "mu_aec", "mu_bf"},
}


def _parse_event(raw, entry):
    kv = _parse_kv_blob("schedule", entry, raw)
    kind = kv.get("kind")
    if kind not in _EVENT_KEYS:
        raise ConfigError(f"[schedule] {entry}: unknown event kind {kind!r}")
    extra = set(kv) - _EVENT_KEYS[kind]
    if extra or "at" not in kv:
        raise ConfigError(f"[schedule] {entry}: bad keys for {kind}: {sorted(extra)}")
    try:
        at = int(kv["at"])
        if kind == "dtalk_on":
            return ("dtalk_on", at, float(kv.get("power", "1.0")),
                    float(kv.get("pole", "0.0")), int(kv.get("doa_delay", "0")))
        if kind == "dtalk_off":
            return ("dtalk_off", at)
        if kind == "plant_change":
            return ("plant_change", at, int(kv["seed"]))
        return ("policy_change", at, float(kv["mu_aec"]), float(kv["mu_bf"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[schedule] {entry}: {exc}") from None


def _parse_schedule(items):
    segments, events = [], []
    for key, raw in items:
        parts = key.split(".")
        if len(parts) != 2 or parts[0] not in ("segment", "event") or not parts[1].isdigit():
            raise ConfigError(f"unknown key '{key}' in section [schedule]")
        idx = int(parts[1])
        if parts[0] == "segment":
            kv = _parse_kv_blob("schedule", key, raw)
            extra = set(kv) - {"at", "mu_aec", "mu_bf"}
            if extra or "at" not in kv:
                raise ConfigError(f"[schedule] {key}: bad segment keys {sorted(extra)}")
            try:
                segments.append((idx, (int(kv["at"]), float(kv["mu_aec"]), float(kv["mu_bf"]))))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"[schedule] {key}: {exc}") from None
        else:
            events.append((idx, _parse_event(raw, key)))
    segments.sort(key=lambda t: t[0])
    events.sort(key=lambda t: t[0])
    return ScheduleSection(
        segments=tuple(s for _, s in segments), events=tuple(e for _, e in events)
    )


def parse_config(text) -> RunConfig:
    """Parse an INI document into a RunConfig; strict about unknown names."""
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=(";", "#")
    )
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    known = set(_SECTION_TYPES) | {"schedule"}
    values = {}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")
        items = parser.items(section)
        if section == "schedule":
            values["schedule"] = _parse_schedule(items)
        else:
            values[section] = _parse_section(section, items)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _emit_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_emit_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _emit_event(ev):
    kind = ev[0]
    if kind == "dtalk_on":
        return f"at={ev[1]} kind=dtalk_on power={_emit_value(ev[2])} pole={_emit_value(ev[3])} doa_delay={ev[4]}"
    if kind == "dtalk_off":
        return f"at={ev[1]} kind=dtalk_off"
    if kind == "plant_change":
        return f"at={ev[1]} kind=plant_change seed={ev[2]}"
    return f"at={ev[1]} kind=policy_change mu_aec={_emit_value(ev[2])} mu_bf={_emit_value(ev[3])}"


def emit_config(cfg: RunConfig) -> str:
    """Canonical text form: fixed section/key order, full-precision floats."""
    out = io.StringIO()
    for name in ("plant", "signals", "gsc", "policy"):
        section = getattr(cfg, name)
        out.write(f"[{name}]\n")
        for f in dc_fields(section):
            out.write(f"{f.name} = {_emit_value(getattr(section, f.name))}\n")
        out.write("\n")
    if cfg.schedule.segments or cfg.schedule.events:
        out.write("[schedule]\n")
        for i, (at, mu_a, mu_b) in enumerate(cfg.schedule.segments, 1):
            out.write(
                f"segment.{i} = at={at} mu_aec={_emit_value(mu_a)} mu_bf={_emit_value(mu_b)}\n"
            )
        for i, ev in enumerate(cfg.schedule.events, 1):
            out.write(f"event.{i} = {_emit_event(ev)}\n")
        out.write("\n")
    out.write("[montecarlo]\n")
    for f in dc_fields(cfg.montecarlo):
        out.write(f"{f.name} = {_emit_value(getattr(cfg.montecarlo, f.name))}\n")
    out.write("\n")
    if cfg.design is not None:
        out.write("[design]\n")
        for f in dc_fields(cfg.design):
            out.write(f"{f.name} = {_emit_value(getattr(cfg.design, f.name))}\n")
        out.write("\n")
    out.write("[output]\n")
    out.write(f"dir = {cfg.output.dir}\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# Config -> domain objects


def far_end_from_config(cfg: RunConfig) -> FarEndModel:
    s = cfg.signals
    return FarEndModel(
        kind=s.far_end,
        a1=s.ar_pole if s.far_end == "ar1" else 0.0,
        sigma_u2=s.variance,
        source_path=s.source_path or None,
    )


def plant_from_config(cfg: RunConfig) -> PlantConfig:
    p = cfg.plant
    return PlantConfig(
        M=p.m, N_h=p.n_h, fs=p.fs, T_R60=p.t_r60, F=p.oversample,
        mic_spacing=p.mic_spacing, seed=p.seed, per_run=p.per_run,
    )


def _f_spec(cfg: RunConfig):
    if cfg.gsc.response == "custom":
        if not cfg.gsc.custom_f:
            raise ConfigError("[gsc] response=custom needs custom_f")
        return cfg.gsc.custom_f
    return cfg.gsc.response


def _analytic_stats(cfg: RunConfig):
    """Quiescent-segment statistics used to resolve derived policies."""
    plant = plant_from_config(cfg).build()
    calH = build_modified_channel_matrix(plant.H, cfg.gsc.n_bf)
    gsc = build_gsc(cfg.plant.m, cfg.gsc.n_bf, cfg.gsc.n_f, _f_spec(cfg), cfg.gsc.n_aec)
    R_bb = analytic_Rbb(
        far_end_from_config(cfg), calH, cfg.signals.noise_var,
        cfg.gsc.n_aec, cfg.gsc.n_bf, cfg.plant.m,
    )
    return gsc, optimal_solutions(R_bb, gsc)


def resolve_policy(cfg: RunConfig) -> StepPolicy:
    """Concrete step schedule from the [policy] and [schedule] sections.

    trace_budget and whitening modes are resolved against the analytic
    quiescent statistics of the configured plant (file far-end excluded).
    """
    pol = cfg.policy
    segments = []
    if pol.mode == "split":
        if pol.trace_budget > 0:
            gsc, stats = _analytic_stats(cfg)
            n_aec = cfg.gsc.n_aec
            tr_u = float(np.trace(stats.R_bloc[:n_aec, :n_aec]))
            tr_b = float(np.trace(stats.R_bloc[n_aec:, n_aec:]))
            if not 0.0 < pol.aec_share < 1.0:
                raise ConfigError("[policy] aec_share must be in (0, 1)")
            mu_aec = pol.aec_share * pol.trace_budget / tr_u
            mu_bf = (1.0 - pol.aec_share) * pol.trace_budget / tr_b
        else:
            mu_aec, mu_bf = pol.mu_aec, pol.mu_bf
        segments.append(PolicySegment(0, mu_aec, mu_bf))
    elif pol.mode == "whitening":
        if pol.whitening_lambda <= 0:
            raise ConfigError("[policy] mode=whitening needs whitening_lambda > 0")
        gsc, stats = _analytic_stats(cfg)
        m_matrix = quasi_newton_matrix(stats.R_bloc, pol.whitening_lambda)
        segments.append(PolicySegment(0, m_matrix=m_matrix))
    else:
        raise ConfigError("[policy] mode=matrix requires the library API")

    for at, mu_a, mu_b in cfg.schedule.segments:
        segments.append(PolicySegment(at, mu_a, mu_b))
    for ev in cfg.schedule.events:
        if ev[0] == "policy_change":
            segments.append(PolicySegment(ev[1], ev[2], ev[3]))
    segments.sort(key=lambda s: s.start_n)
    try:
        return StepPolicy(tuple(segments))
    except ValueError as exc:
        raise ConfigError(f"invalid schedule: {exc}") from None


def events_from_config(cfg: RunConfig) -> Tuple[Event, ...]:
    events = []
    for ev in cfg.schedule.events:
        if ev[0] == "dtalk_on":
            events.append(
                Event(at_n=ev[1], kind="dtalk_on",
                      interferer=Interferer(power=ev[2], a1=ev[3], doa_delay=ev[4]))
            )
        elif ev[0] == "dtalk_off":
            events.append(Event(at_n=ev[1], kind="dtalk_off"))
        elif ev[0] == "plant_change":
            events.append(Event(at_n=ev[1], kind="plant_change", plant_seed=ev[2]))
    return tuple(events)


def scenario_from_config(cfg: RunConfig, runs=None, seed=None) -> Scenario:
    try:
        return Scenario(
            plant=plant_from_config(cfg),
            far_end=far_end_from_config(cfg),
            near_end=NearEndModel(noise_var=cfg.signals.noise_var),
            n_bf=cfg.gsc.n_bf,
            n_f=cfg.gsc.n_f,
            n_aec=cfg.gsc.n_aec,
            f_spec=_f_spec(cfg),
            policy=resolve_policy(cfg),
            n_samples=cfg.montecarlo.n_samples,
            runs=cfg.montecarlo.runs if runs is None else runs,
            base_seed=cfg.montecarlo.base_seed if seed is None else seed,
            events=events_from_config(cfg),
            presteer=cfg.gsc.presteer,
            nonstat_eta=cfg.signals.nonstat_eta,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def design_spec_from_config(cfg: RunConfig) -> DesignSpec:
    if cfg.design is None:
        raise ConfigError("config has no [design] section")
    d = cfg.design
    if d.at_n > 0:
        at_n = d.at_n
    elif d.at_seconds > 0:
        at_n = int(round(d.at_seconds * cfg.plant.fs))
    else:
        raise ConfigError("[design] needs at_n or at_seconds")
    if d.n_aec_min < 1 or d.n_aec_max < d.n_aec_min:
        raise ConfigError("[design] needs 1 <= n_aec_min <= n_aec_max")
    n_aec_values = tuple(range(d.n_aec_min, d.n_aec_max + 1, max(d.n_aec_step, 1)))
    try:
        return DesignSpec(
            target_jinf_db=d.target_jinf_db,
            at_n=at_n,
            target_at_db=d.target_at_db,
            m_values=d.m_values,
            n_aec_values=n_aec_values,
            plant=plant_from_config(cfg),
            far_end=far_end_from_config(cfg),
            noise_var=cfg.signals.noise_var,
            n_bf=cfg.gsc.n_bf,
            n_f=cfg.gsc.n_f,
            f_spec=_f_spec(cfg),
            budgets=tuple(np.geomspace(2.0 / 300.0, 2.0 / 3.0, d.budget_points)),
            aec_shares=tuple(np.arange(0.01, 0.999, d.share_step)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# Deterministic CSV output


def fmt9(x) -> str:
    """Fixed 9-significant-digit decimal formatting (nan/inf spelled out)."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.9g}"


CURVE_HEADER = "n,J_mc,J_model,J_mc_dB,J_model_dB,warmup"


def write_curve_csv(curve: LearningCurve, path):
    """Emit a learning curve with the fixed header and LF line endings."""
    nan = float("nan")
    j_mc = curve.J_mc
    j_model = curve.J_model
    mc_db = curve.J_mc_dB
    model_db = curve.J_model_dB
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(CURVE_HEADER + "\n")
            for n in range(curve.n_samples):
                row = (
                    str(n),
                    fmt9(j_mc[n] if j_mc is not None else nan),
                    fmt9(j_model[n] if j_model is not None else nan),
                    fmt9(mc_db[n] if mc_db is not None else nan),
                    fmt9(model_db[n] if model_db is not None else nan),
                    "1" if n < curve.warmup else "0",
                )
                fh.write(",".join(row) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write curve CSV {path}: {exc}") from None


def read_curve_csv(path) -> LearningCurve:
    """Parse a curve CSV back (inverse of write_curve_csv at 9-digit precision)."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            header = fh.readline().strip()
            if header != CURVE_HEADER:
                raise ConfigError(f"{path}: unexpected header {header!r}")
            rows = [line.strip().split(",") for line in fh if line.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read curve CSV {path}: {exc}") from None
    j_mc = np.array([float(r[1]) for r in rows])
    j_model = np.array([float(r[2]) for r in rows])
    warm = np.array([int(r[5]) for r in rows])
    return LearningCurve(
        n_samples=len(rows),
        warmup=int(warm.sum()),
        J_mc=None if np.all(np.isnan(j_mc)) else j_mc,
        J_model=None if np.all(np.isnan(j_model)) else j_model,
    )


def write_design_csv(outcome, path):
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("m,n_aec,mu_aec,mu_bf,trace_budget,j_inf_db,j_at_db\n")
            for p in outcome.points:
                fh.write(
                    f"{p.m},{p.n_aec},{fmt9(p.mu_aec)},{fmt9(p.mu_bf)},"
                    f"{fmt9(p.trace_budget)},{fmt9(p.j_inf_db)},{fmt9(p.j_at_db)}\n"
                )
    except OSError as exc:
        raise ConfigError(f"cannot write design CSV {path}: {exc}") from None


def write_plant_csv(plant, path):
    """Plant dump: one row per tap, one column per microphone."""
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            for row in plant.H:
                fh.write(",".join(fmt9(v) for v in row) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write plant CSV {path}: {exc}") from None
