"""Empirical mode decomposition and its improved complete ensemble variant.

Sifting primitives (extrema, spline envelopes, local mean, sift, plain EMD)
plus the noise-assisted ensemble decomposition built on top of them. The
ensemble average is a fixed-order sum over realizations so threaded and
serial runs produce identical bits.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import _kernels
from ._parallel import pmap

__all__ = [
    "IceemdanParams",
    "Decomposition",
    "NoiseBank",
    "find_extrema",
    "spline_envelope",
    "local_mean",
    "sift",
    "emd",
    "make_noise_bank",
    "iceemdan",
    "write_decomposition_csv",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IceemdanParams:
    """Ensemble decomposition settings.

    ``noise_ratio`` scales the added noise relative to the standard deviation
    of the signal (first stage) or of the current residue (later stages).
    """

    realizations: int = 90
    max_sift_iters: int = 1000
    noise_ratio: float = 0.3
    max_imfs: int = 10
    seed: int = 0
    sift_tolerance: float = 1e-8

    def __post_init__(self):
        if self.realizations < 1:
            raise ValueError(f"realizations must be >= 1, got {self.realizations}")
        if self.max_imfs < 1:
            raise ValueError(f"max_imfs must be >= 1, got {self.max_imfs}")
        if not self.noise_ratio > 0:
            raise ValueError(f"noise_ratio must be > 0, got {self.noise_ratio}")
        if self.max_sift_iters < 1:
            raise ValueError(f"max_sift_iters must be >= 1, got {self.max_sift_iters}")
        if not self.sift_tolerance > 0:
            raise ValueError(f"sift_tolerance must be > 0, got {self.sift_tolerance}")


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Ordered modes (fastest first) plus the final residue."""

    imfs: np.ndarray
    residue: np.ndarray
    input_length: int

    def __post_init__(self):
        imfs = np.asarray(self.imfs, dtype=np.float64).reshape(-1, self.input_length)
        residue = np.asarray(self.residue, dtype=np.float64)
        if residue.shape != (self.input_length,):
            raise ValueError("residue length differs from input length")
        object.__setattr__(self, "imfs", imfs)
        object.__setattr__(self, "residue", residue)

    @property
    def n_imfs(self) -> int:
        return self.imfs.shape[0]

    def subseries(self) -> list[np.ndarray]:
        return [*self.imfs, self.residue]

    def reconstruct(self) -> np.ndarray:
        out = self.residue.copy()
        for imf in self.imfs:
            out += imf
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, Decomposition):
            return NotImplemented
        return (
            self.input_length == other.input_length
            and np.array_equal(self.imfs, other.imfs)
            and np.array_equal(self.residue, other.residue)
        )


def find_extrema(signal) -> tuple[np.ndarray, np.ndarray]:
    """Indices of local maxima and minima.

    A flat run counts as one extremum, placed at its centre, when both
    neighbouring runs lie strictly on the same side. Runs touching either end
    of the signal are never extrema.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.size < 3:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
    starts = np.flatnonzero(np.r_[True, x[1:] != x[:-1]])
    if starts.size < 3:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
    ends = np.r_[starts[1:] - 1, x.size - 1]
    v = x[starts]
    left, mid, right = v[:-2], v[1:-1], v[2:]
    centers = (starts[1:-1] + ends[1:-1]) // 2
    maxima = centers[(mid > left) & (mid > right)]
    minima = centers[(mid < left) & (mid < right)]
    return maxima.astype(np.intp), minima.astype(np.intp)


def spline_envelope(signal, knot_indices) -> np.ndarray:
    """Natural cubic spline through ``signal`` at ``knot_indices``.

    Each end that is not already a knot gets the two nearest knots mirrored
    across it, which keeps the spline from flaring at the boundary.
    """
    x = np.asarray(signal, dtype=np.float64)
    k = np.unique(np.asarray(knot_indices, dtype=np.intp))
    if k.size < 2:
        raise ValueError(f"spline envelope needs at least 2 knots, got {k.size}")
    n = x.size
    pos = k.astype(np.float64)
    val = x[k]
    if k[0] > 0:
        lp = k[:2][::-1]
        pos = np.r_[-lp.astype(np.float64), pos]
        val = np.r_[x[lp], val]
    if k[-1] < n - 1:
        rp = k[-2:][::-1]
        pos = np.r_[pos, 2.0 * (n - 1) - rp]
        val = np.r_[val, x[rp]]
    spline = CubicSpline(pos, val, bc_type="natural")
    return spline(np.arange(n, dtype=np.float64))


def _has_oscillation(maxima, minima) -> bool:
    return maxima.size >= 2 and minima.size >= 2


def local_mean(signal) -> np.ndarray:
    """Mean of the upper and lower envelopes; a signal without enough extrema is its own mean."""
    x = np.ascontiguousarray(signal, dtype=np.float64)
    out = np.empty_like(x)
    _kernels.local_mean(x, out)
    return out


def sift(signal, params: IceemdanParams | None = None, trace: list | None = None) -> np.ndarray:
    """Extract one IMF by repeated local-mean subtraction.

    Stops after ``params.max_sift_iters`` passes or once the normalised
    squared change between passes drops below ``params.sift_tolerance``.
    A signal with fewer than two maxima or minima holds no oscillation, so
    its IMF is identically zero. If ``trace`` is given, the change of every
    pass is appended to it.
    """
    params = params or IceemdanParams()
    x = np.ascontiguousarray(signal, dtype=np.float64)
    if not _has_oscillation(*_kernels.extrema(x)):
        return np.zeros_like(x)
    changes = np.empty(params.max_sift_iters)
    h, passes = _kernels.sift(x, params.max_sift_iters, params.sift_tolerance, changes)
    if trace is not None:
        trace.extend(changes[:passes].tolist())
    return h


def emd(signal, max_imfs: int = 10, params: IceemdanParams | None = None) -> Decomposition:
    """Plain EMD: sift out modes until the remainder is monotonic or ``max_imfs`` is reached."""
    x = np.asarray(signal, dtype=np.float64)
    if x.size < 4:
        raise ValueError(f"EMD needs at least 4 samples, got {x.size}")
    residue = x.copy()
    imfs = []
    while len(imfs) < max_imfs and _has_oscillation(*_kernels.extrema(residue)):
        imf = sift(residue, params)
        if not np.any(imf):
            break
        imfs.append(imf)
        residue = residue - imf
    return Decomposition(np.array(imfs).reshape(len(imfs), x.size), residue, x.size)


@dataclass(frozen=True, eq=False)
class NoiseBank:
    """Standardised white-noise realizations and their EMD modes.

    ``modes[j, k]`` is the (k+1)-th EMD mode of realization ``j``; modes the
    noise EMD did not produce are zero.
    """

    noise: np.ndarray
    modes: np.ndarray

    @property
    def realizations(self) -> int:
        return self.noise.shape[0]


def _noise_modes(z, max_imfs, params):
    dec = emd(z, max_imfs, params)
    out = np.zeros((max_imfs, z.size))
    out[: dec.n_imfs] = dec.imfs
    return out


@lru_cache(maxsize=4)
def _cached_bank(seed, realizations, length, max_imfs, max_sift_iters, sift_tolerance):
    params = IceemdanParams(
        realizations=realizations,
        max_sift_iters=max_sift_iters,
        max_imfs=max_imfs,
        seed=seed,
        sift_tolerance=sift_tolerance,
    )
    streams = np.random.SeedSequence(seed).spawn(realizations)
    noise = np.empty((realizations, length))
    for j, ss in enumerate(streams):
        z = np.random.default_rng(ss).standard_normal(length)
        noise[j] = (z - z.mean()) / z.std()
    modes = np.stack(pmap(lambda z: _noise_modes(z, max_imfs, params), list(noise)))
    noise.flags.writeable = False
    modes.flags.writeable = False
    return NoiseBank(noise, modes)


def make_noise_bank(length: int, params: IceemdanParams) -> NoiseBank:
    """Noise realizations for a signal of ``length`` samples, cached per settings."""
    return _cached_bank(
        params.seed,
        params.realizations,
        int(length),
        params.max_imfs,
        params.max_sift_iters,
        params.sift_tolerance,
    )


def _ensemble_local_mean(base, alpha, bank, stage):
    parts = pmap(lambda j: local_mean(base + alpha * bank.modes[j, stage]), range(bank.realizations))
    acc = np.zeros_like(base)
    for p in parts:
        acc += p
    return acc / bank.realizations


def iceemdan(signal, params: IceemdanParams | None = None, bank: NoiseBank | None = None) -> Decomposition:
    """Noise-assisted decomposition into exactly ``params.max_imfs`` modes plus residue.

    Each stage averages the local mean of the current residue perturbed by
    the matching EMD mode of every noise realization; the mode is the drop
    from one residue to the next, so the sum of all modes and the final
    residue telescopes back to the input. Stages stop early once the residue
    is monotonic; the missing modes are then zero.
    """
    params = params or IceemdanParams()
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < 4:
        raise ValueError(f"ICEEMDAN needs a 1-D signal of at least 4 samples, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("ICEEMDAN input contains non-finite values")

    n_modes = params.max_imfs
    imfs = np.zeros((n_modes, x.size))
    if not _has_oscillation(*find_extrema(x)):
        return Decomposition(imfs, x.copy(), x.size)

    if bank is None:
        bank = make_noise_bank(x.size, params)
    elif bank.modes.shape[1] < n_modes or bank.noise.shape[1] != x.size:
        raise ValueError("noise bank does not cover this signal length or mode count")
    previous = x
    for k in range(n_modes):
        alpha = params.noise_ratio * float(np.std(previous))
        current = _ensemble_local_mean(previous, alpha, bank, k)
        imfs[k] = previous - current
        previous = current
        if not _has_oscillation(*_kernels.extrema(current)):
            logger.debug("residue monotonic after %d modes", k + 1)
            break
    return Decomposition(imfs, previous, x.size)


def write_decomposition_csv(dec: Decomposition, path) -> None:
    """Columns ``index, imf_1..imf_K, residue``; values written with ``repr`` precision."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", *(f"imf_{k + 1}" for k in range(dec.n_imfs)), "residue"])
        for i in range(dec.input_length):
            w.writerow([i, *(repr(float(v)) for v in dec.imfs[:, i]), repr(float(dec.residue[i]))])
