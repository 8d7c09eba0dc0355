"""Arithmetic-intensity model and per-layer roofline classification.

For a grouped convolution with batch B, kernel k x k, field f x f, group
size G, N groups and stride s, the intensity in FLOPs per transferred
element is

    I = G k^2 B f^2 / (s (G k^2 + B f^2))

under the assumption that weights (k^2 G^2 N elements) and input
activations (B f^2 G N elements) are both always transferred; output
activations are not counted. N cancels. The numerator amortizes the stride
once (f^2/s), exactly as the closed form is stated; conversion to bytes
happens only through HardwareProfile.bytes_per_element.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .convs import ConvSpec
from .model import ConvDims, ModelConfig, model_plan

MONOTONIC_FIELDS = ("G", "k", "B", "f", "s", "N")


def _intensity(g: float, k: float, b: float, f: float, s: float) -> float:
    if min(g, k, b, f, s) <= 0:
        raise ValueError("all intensity factors must be positive")
    compute = g * k * k * b * f * f
    transfer = g * k * k + b * f * f
    return compute / (s * transfer)


def intensity(spec: ConvSpec) -> float:
    """FLOPs per transferred element for one convolution workload."""
    if spec.batch is None or spec.field is None:
        raise ValueError("spec must carry batch and field for intensity")
    return _intensity(
        spec.resolved_group_size, spec.kernel, spec.batch, spec.field, spec.stride
    )


def monotonicity_check(spec: ConvSpec, field: str) -> tuple[float, float]:
    """Evaluate I before and after incrementing one factor and assert the
    expected direction: increasing in G, k, B, f; decreasing in s; flat in N.

    Returns (before, after).
    """
    if spec.batch is None or spec.field is None:
        raise ValueError("spec must carry batch and field for intensity")
    if field not in MONOTONIC_FIELDS:
        raise ValueError(f"unknown field {field!r}; use one of {MONOTONIC_FIELDS}")
    factors = {
        "G": spec.resolved_group_size,
        "k": spec.kernel,
        "B": spec.batch,
        "f": spec.field,
        "s": spec.stride,
        "N": spec.groups,
    }
    before = _intensity(factors["G"], factors["k"], factors["B"], factors["f"], factors["s"])
    bumped = dict(factors)
    bumped[field] += 1
    after = _intensity(bumped["G"], bumped["k"], bumped["B"], bumped["f"], bumped["s"])
    if field == "N":
        ok = after == before
    elif field == "s":
        ok = after < before
    else:
        ok = after > before
    if not ok:
        raise AssertionError(f"monotonicity violated for {field}: {before} -> {after}")
    return before, after


@dataclass(frozen=True)
class HardwareProfile:
    peak_flops: float
    mem_bandwidth: float
    bytes_per_element: int

    def __post_init__(self):
        if self.peak_flops <= 0 or self.mem_bandwidth <= 0:
            raise ValueError("peak_flops and mem_bandwidth must be positive")
        if self.bytes_per_element not in (2, 4, 8):
            raise ValueError(f"bytes_per_element must be 2, 4 or 8, got {self.bytes_per_element}")

    @property
    def ridge_elements(self) -> float:
        """Intensity (FLOPs per element) above which a kernel is compute bound."""
        return self.peak_flops * self.bytes_per_element / self.mem_bandwidth

    @classmethod
    def from_json(cls, path) -> "HardwareProfile":
        with open(path) as fh:
            raw = json.load(fh)
        known = {"peak_flops", "mem_bandwidth", "bytes_per_element"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown hardware profile keys: {unknown}")
        missing = sorted(known - set(raw))
        if missing:
            raise ValueError(f"hardware profile missing keys: {missing}")
        return cls(
            peak_flops=float(raw["peak_flops"]),
            mem_bandwidth=float(raw["mem_bandwidth"]),
            bytes_per_element=int(raw["bytes_per_element"]),
        )


@dataclass(frozen=True)
class RooflineRow:
    layer: str
    G: int
    N: int
    k: int
    s: int
    f: int
    B: int
    flops: float
    elements: float
    intensity: float
    bound: str


@dataclass(frozen=True)
class IntensityReport:
    rows: tuple[RooflineRow, ...]
    ridge: float

    def to_csv(self) -> str:
        lines = ["layer,G,N,k,s,f,B,flops,elements,intensity,bound"]
        for r in self.rows:
            lines.append(
                f"{r.layer},{r.G},{r.N},{r.k},{r.s},{r.f},{r.B},"
                f"{r.flops},{r.elements},{r.intensity},{r.bound}"
            )
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        memory = sum(1 for r in self.rows if r.bound == "memory")
        return (
            f"{len(self.rows)} convolution layers, ridge {self.ridge:.3f} "
            f"FLOPs/element, {memory} memory-bound / {len(self.rows) - memory} compute-bound"
        )


def roofline(
    config: ModelConfig, hw: HardwareProfile, batch: int, resolution: int
) -> IntensityReport:
    """Classify every convolution in the model against the ridge point,
    using each layer's actual input field size."""
    if batch < 1:
        raise ValueError(f"batch must be positive, got {batch}")
    ridge = hw.ridge_elements
    rows = []
    for entry in model_plan(config, resolution):
        if not isinstance(entry, ConvDims):
            continue
        g = entry.group_size
        n = entry.in_channels // entry.group_size
        k, s, f = entry.kernel, entry.stride, entry.in_size
        flops = g * g * k * k * batch * f * f * n / s
        elements = k * k * g * g * n + batch * f * f * g * n
        i = _intensity(g, k, batch, f, s)
        rows.append(
            RooflineRow(
                layer=entry.name, G=g, N=n, k=k, s=s, f=f, B=batch,
                flops=flops, elements=float(elements), intensity=i,
                bound="compute" if i >= ridge else "memory",
            )
        )
    return IntensityReport(rows=tuple(rows), ridge=ridge)
