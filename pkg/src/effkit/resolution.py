"""Train/test resolution tools: congruence rule, parity profiles, and half
resolution selection.

A model with n stride-2 layers aliases differently depending on where odd
spatial extents appear during downsampling. Two resolutions place those odd
extents at the same depths exactly when they are congruent mod 2^n, so test
and fine-tune resolutions are chosen from the train resolution's congruence
class. n = 5 throughout this model family.

Half-resolution training targets about half the native pixel count. The six
canonical pairs are embedded as golden data since no single selection rule
reproduces them all; the heuristic used for other sizes picks the congruent
resolution whose pixel count is nearest to half, ties toward the smaller.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import ConvDims

N_DOWNSAMPLES = 5

#: native training resolution -> canonical half-resolution choice
HALF_RESOLUTIONS = {224: 160, 240: 176, 260: 192, 300: 204, 380: 252, 456: 328}


@dataclass(frozen=True)
class ResolutionPair:
    train_resolution: int
    test_resolution: int
    n_downsamples: int = N_DOWNSAMPLES

    def __post_init__(self):
        floor = 2**self.n_downsamples
        if self.train_resolution < floor or self.test_resolution < floor:
            raise ValueError(
                f"resolutions must be at least {floor} for {self.n_downsamples} downsamples"
            )


def congruent(train_r: int, test_r: int, n: int = N_DOWNSAMPLES) -> bool:
    """True when the two resolutions downsample with identical parity paths."""
    ResolutionPair(train_r, test_r, n)
    return (test_r - train_r) % (2**n) == 0


def parity_profile(resolution: int, n: int = N_DOWNSAMPLES) -> list[str]:
    """Parity ('even'/'odd') of the input extent at each stride-2 layer.

    Spatial extent halves as ceil(size/2) at every stride-2 layer and is
    preserved elsewhere, so the profile is read off the ceil-halving chain.
    """
    if resolution < 2**n:
        raise ValueError(f"resolution {resolution} below 2^{n}")
    out = []
    size = resolution
    for _ in range(n):
        out.append("even" if size % 2 == 0 else "odd")
        size = -(-size // 2)
    return out


def plan_parity_profile(plan) -> list[str]:
    """Parity profile read from an actual layer plan's stride-2 inputs."""
    return [
        "even" if entry.in_size % 2 == 0 else "odd"
        for entry in plan
        if isinstance(entry, ConvDims) and entry.stride == 2
    ]


def valid_test_resolutions(train_r: int, n: int = N_DOWNSAMPLES, max_r: int = 704) -> list[int]:
    """Ascending test/fine-tune resolutions congruent with ``train_r``,
    from ``train_r`` up to ``max_r``."""
    if train_r < 2**n:
        raise ValueError(f"train resolution {train_r} below 2^{n}")
    if max_r < train_r:
        raise ValueError(f"max resolution {max_r} below train resolution {train_r}")
    return list(range(train_r, max_r + 1, 2**n))


def half_resolution(native_r: int, n: int = N_DOWNSAMPLES) -> int:
    """Training resolution with about half the native pixel count, keeping
    the congruence class. Canonical sizes use the embedded table; other
    sizes minimize |r^2 - native^2/2| over the congruence class, preferring
    the smaller resolution on ties."""
    if native_r < 64:
        raise ValueError(f"native resolution must be at least 64, got {native_r}")
    if native_r in HALF_RESOLUTIONS:
        return HALF_RESOLUTIONS[native_r]
    step = 2**n
    target = native_r * native_r / 2.0
    best = None
    best_err = None
    r = 2**n + (native_r % step - 2**n % step) % step  # smallest congruent r >= 2^n
    while r <= native_r:
        err = abs(r * r - target)
        if best is None or err < best_err:
            best, best_err = r, err
        r += step
    return best
