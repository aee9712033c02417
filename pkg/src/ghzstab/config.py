"""Scenario configuration.

Scenarios are flat ``key = value`` text files with dotted keys::

    qubits = 3
    omega = 0.3
    channel.1.kind = z          # z | x
    channel.1.pattern = z,1,z   # z-kind only: one sigma_z/identity letter per qubit
    channel.1.coeff = 1.0       # optional scalar multiplying the pattern
    channel.1.M = 1.1           # measurement strength
    channel.1.eta = 0.5         # efficiency in (0, 1]
    control.1 = 1,1,x + 1,x,x   # sum of Pauli words, optional "c *" coefficients
    target.k = 1
    target.sign = +
    feedback.variant = fidelity_power   # zero | fidelity_power | mixed_power | two_hamiltonian
    feedback.alpha = 10
    feedback.beta = 7
    rho0 = maximally_mixed      # or ghz:K,SIGN or file:PATH
    dt = 1e-3
    horizon = 30
    trajectories = 500
    seed = 2024
    stride = 50
    out = reduce.csv            # optional default output path

Comments start with ``#``; later duplicate keys are rejected.  Pauli words use
letters ``1 x y z`` separated by commas, one per qubit; terms are joined with
``+``/``-`` and may carry a leading ``coeff *``.  A ``file:`` initial state is
a text file with one row per line and complex entries like ``0.125+0j``.
"""

from __future__ import annotations

import importlib.resources
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import FeedbackLaw
from .model import PAULI_BY_NAME, MeasurementChannel, SystemModel, build_x_operator, build_z_operator
from .qmat import kron


class ConfigError(Exception):
    """Invalid scenario configuration."""


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip().strip('"').strip("'")
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value in {raw!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


_TERM_RE = re.compile(r"^(?:([+-]?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\s*\*\s*)?([1xyzXYZ,\s]+)$")


def parse_operator_expression(expr: str, n_qubits: int) -> np.ndarray:
    """Sum of Pauli words like ``2 * z,x,1 - y,z,x``."""
    text = expr.replace("-", "+-").strip()
    if text.startswith("+-"):
        text = text[1:]
    elif text.startswith("+"):
        text = text[1:]
    dim = 2**n_qubits
    total = np.zeros((dim, dim), dtype=np.complex128)
    for raw_term in text.split("+"):
        term = raw_term.strip()
        if not term:
            raise ConfigError(f"empty term in operator expression {expr!r}")
        sign = 1.0
        if term.startswith("-"):
            sign = -1.0
            term = term[1:].strip()
        m = _TERM_RE.match(term)
        if not m:
            raise ConfigError(f"cannot parse operator term {raw_term!r} in {expr!r}")
        coeff = float(m.group(1)) if m.group(1) else 1.0
        letters = [tok.strip().lower() for tok in m.group(2).split(",")]
        if len(letters) != n_qubits:
            raise ConfigError(
                f"term {raw_term!r} has {len(letters)} factors, expected {n_qubits}"
            )
        op = np.array([[1.0 + 0j]])
        for letter in letters:
            if letter not in PAULI_BY_NAME:
                raise ConfigError(f"unknown Pauli letter {letter!r} in {raw_term!r}")
            op = kron(op, PAULI_BY_NAME[letter])
        total += sign * coeff * op
    return total


_RHO0_GHZ_RE = re.compile(r"^ghz:\s*(\d+)\s*,\s*([+-])$")


@dataclass(frozen=True)
class ChannelSpec:
    kind: str
    pattern: tuple[str, ...] | None
    coeff: float
    strength: float
    efficiency: float


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully parsed scenario: model recipe plus run controls."""

    qubits: int
    omega: float
    channels: tuple[ChannelSpec, ...]
    controls: tuple[str, ...]
    target: tuple[int, int] | None
    feedback: FeedbackLaw
    rho0_spec: str
    dt: float
    horizon: float
    trajectories: int
    seed: int
    stride: int
    out: str | None = None
    source: str | None = field(default=None, compare=False)

    def build_model(self) -> SystemModel:
        channels = []
        for spec in self.channels:
            if spec.kind == "z":
                op = build_z_operator(self.qubits, spec.pattern, spec.coeff)
            else:
                op = spec.coeff * build_x_operator(self.qubits)
            channels.append(
                MeasurementChannel(op, spec.strength, spec.efficiency, spec.kind)
            )
        lz_total = sum(
            (c.operator for c in channels if c.kind == "z"),
            start=np.zeros((2**self.qubits,) * 2, dtype=np.complex128),
        )
        h0 = self.omega * lz_total
        controls = tuple(
            parse_operator_expression(expr, self.qubits) for expr in self.controls
        )
        return SystemModel(self.qubits, h0, tuple(channels), controls)

    def build_rho0(self, model: SystemModel) -> np.ndarray:
        from .dynamics import validate_density

        spec = self.rho0_spec.strip()
        if spec == "maximally_mixed":
            return np.eye(model.dim, dtype=np.complex128) / model.dim
        m = _RHO0_GHZ_RE.match(spec)
        if m:
            k = int(m.group(1))
            sign = 1 if m.group(2) == "+" else -1
            return model.basis().projector(k, sign)
        if spec.startswith("file:"):
            path = Path(spec[5:].strip())
            if self.source is not None and not path.is_absolute():
                path = Path(self.source).parent / path
            if not path.is_file():
                raise ConfigError(f"initial-state file not found: {path}")
            rows = []
            for line in path.read_text().splitlines():
                line = line.strip()
                if line:
                    rows.append([complex(tok) for tok in line.split()])
            rho = np.array(rows, dtype=np.complex128)
            if rho.shape != (model.dim, model.dim):
                raise ConfigError(
                    f"initial-state file has shape {rho.shape}, expected {(model.dim,) * 2}"
                )
            try:
                return validate_density(rho)
            except ValueError as exc:
                raise ConfigError(f"invalid initial state: {exc}") from exc
        raise ConfigError(f"unknown rho0 spec {spec!r}")


def _get(table: dict[str, str], key: str, cast, default=None):
    if key not in table:
        if default is not None:
            return default
        raise ConfigError(f"missing required key {key!r}")
    try:
        return cast(table[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {table[key]!r} ({exc})") from exc


def _positive(cast, name):
    def inner(text):
        v = cast(text)
        if v <= 0:
            raise ValueError(f"{name} must be positive")
        return v

    return inner


def scenario_from_table(table: dict[str, str], source: str | None = None) -> ScenarioConfig:
    table = dict(table)
    qubits = _get(table, "qubits", _positive(int, "qubits"))
    omega = _get(table, "omega", float, default=0.0)

    channel_ids = sorted(
        {int(m.group(1)) for key in table for m in [re.match(r"channel\.(\d+)\.", key)] if m}
    )
    if not channel_ids:
        raise ConfigError("no measurement channels configured")
    channels = []
    for cid in channel_ids:
        prefix = f"channel.{cid}."
        kind = _get(table, prefix + "kind", str, default="z").lower()
        if kind not in ("z", "x"):
            raise ConfigError(f"channel {cid}: kind must be z or x, got {kind!r}")
        pattern = None
        if kind == "z":
            raw = _get(table, prefix + "pattern", str)
            pattern = tuple(tok.strip().lower() for tok in raw.split(","))
        elif prefix + "pattern" in table:
            raise ConfigError(f"channel {cid}: x-type channels take no pattern")
        channels.append(
            ChannelSpec(
                kind=kind,
                pattern=pattern,
                coeff=_get(table, prefix + "coeff", float, default=1.0),
                strength=_get(table, prefix + "M", _positive(float, "M")),
                efficiency=_get(table, prefix + "eta", float),
            )
        )

    control_ids = sorted(
        {int(m.group(1)) for key in table for m in [re.match(r"control\.(\d+)$", key)] if m}
    )
    controls = tuple(table[f"control.{cid}"] for cid in control_ids)

    target = None
    if "target.k" in table:
        sign_text = _get(table, "target.sign", str)
        if sign_text not in ("+", "-"):
            raise ConfigError(f"target.sign must be + or -, got {sign_text!r}")
        target = (_get(table, "target.k", int), 1 if sign_text == "+" else -1)

    variant = _get(table, "feedback.variant", str, default="zero").lower()
    fb_kwargs = {}
    for name in ("alpha", "beta", "gamma", "delta", "eps1", "eps2"):
        key = f"feedback.{name}"
        if key in table:
            fb_kwargs[name] = float(table[key])
    try:
        if variant == "zero":
            feedback = FeedbackLaw.zero()
        else:
            if target is None:
                raise ConfigError(f"feedback {variant!r} requires a target")
            feedback = FeedbackLaw(variant=variant, target=target, **fb_kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid feedback law: {exc}") from exc

    dt = _get(table, "dt", _positive(float, "dt"))
    horizon = _get(table, "horizon", _positive(float, "horizon"))
    stride = _get(table, "stride", _positive(int, "stride"), default=1)
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ConfigError(f"horizon {horizon} is not an integer number of dt={dt} steps")
    if n_steps % stride:
        raise ConfigError(f"step count {n_steps} is not a multiple of stride {stride}")

    cfg = ScenarioConfig(
        qubits=qubits,
        omega=omega,
        channels=tuple(channels),
        controls=controls,
        target=target,
        feedback=feedback,
        rho0_spec=_get(table, "rho0", str, default="maximally_mixed"),
        dt=dt,
        horizon=horizon,
        trajectories=_get(table, "trajectories", _positive(int, "trajectories"), default=1),
        seed=_get(table, "seed", int, default=0),
        stride=stride,
        out=table.get("out"),
        source=source,
    )
    known = _known_keys(table)
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    return cfg


def _known_keys(table: dict[str, str]) -> set[str]:
    known = {
        "qubits", "omega", "rho0", "dt", "horizon", "trajectories", "seed", "stride", "out",
        "target.k", "target.sign", "feedback.variant",
    }
    known |= {f"feedback.{p}" for p in ("alpha", "beta", "gamma", "delta", "eps1", "eps2")}
    for key in table:
        if re.match(r"channel\.\d+\.(kind|pattern|coeff|M|eta)$", key):
            known.add(key)
        if re.match(r"control\.\d+$", key):
            known.add(key)
    return known


def builtin_scenario_path(name: str) -> Path | None:
    """Path of a packaged scenario file, e.g. ``scenario_a``; None if absent."""
    stem = name if name.endswith(".cfg") else name + ".cfg"
    ref = importlib.resources.files("ghzstab") / "scenarios" / stem
    try:
        with importlib.resources.as_file(ref) as concrete:
            return concrete if concrete.is_file() else None
    except FileNotFoundError:
        return None


def load_scenario(path_or_name: str | Path) -> ScenarioConfig:
    """Load a scenario from a path, falling back to the packaged scenarios."""
    path = Path(path_or_name)
    if not path.is_file():
        builtin = builtin_scenario_path(str(path_or_name))
        if builtin is None:
            raise ConfigError(f"scenario file not found: {path_or_name}")
        path = builtin
    table = parse_config_text(path.read_text())
    return scenario_from_table(table, source=str(path))
