"""Quantized-LLR probability mass functions and their update kernels.

The grid has 2**n_bits + 1 bins at i*delta for i in [-2**(n_bits-1),
+2**(n_bits-1)], so LLR 0 falls exactly on a bin.  Mass leaving the range
[-l_max, l_max] accumulates at the boundary bins.
"""

from __future__ import annotations

import csv
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import ndtr

from .errors import GridMismatchError, InvalidInputError

MASS_TOLERANCE = 1e-9

# Direct convolution below this support-size product, FFT above.  Both agree
# to 1e-12 per bin, but the FFT path carries an absolute noise floor around
# 1e-16 per bin that corrupts deep-tail error masses (error floors reach
# 1e-17), so direct summation covers every grid up to n_bits = 10 and the
# transform only engages on larger grids.
_FFT_CROSSOVER = 1_200_000


def pairwise_llr(a, b):
    """Product-rule combination 2*atanh(tanh(a/2)*tanh(b/2)) of two LLRs.

    Evaluated in a log-domain form that never produces infinities and
    satisfies |result| <= min(|a|, |b|) exactly in floating point, with
    sign(result) = sign(a)*sign(b).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    am = np.abs(a)
    bm = np.abs(b)
    lo = np.minimum(am, bm)
    hi = np.maximum(am, bm)
    mag = lo + np.log1p(np.exp(-(lo + hi))) - np.log1p(np.exp(-(hi - lo)))
    return np.sign(a) * np.sign(b) * mag


class LlrGrid:
    """Uniform quantization grid for LLR values in [-l_max, l_max]."""

    def __init__(self, l_max: float = 50.0, n_bits: int = 10):
        if l_max <= 0:
            raise InvalidInputError(f"l_max must be positive, got {l_max}")
        if not 2 <= int(n_bits) <= 16:
            raise InvalidInputError(f"n_bits must be in [2, 16], got {n_bits}")
        self.l_max = float(l_max)
        self.n_bits = int(n_bits)
        self.half = 1 << (self.n_bits - 1)
        self.size = (1 << self.n_bits) + 1
        self.delta = 2.0 * self.l_max / (1 << self.n_bits)
        self.llr = (np.arange(self.size) - self.half) * self.delta
        self.llr.setflags(write=False)
        self._r_table = None

    def __repr__(self):
        return f"LlrGrid(l_max={self.l_max}, n_bits={self.n_bits})"

    def __eq__(self, other):
        return (
            isinstance(other, LlrGrid)
            and self.l_max == other.l_max
            and self.n_bits == other.n_bits
        )

    def __hash__(self):
        return hash((self.l_max, self.n_bits))

    def quantize(self, values):
        """Map LLR values to bin indices: nearest bin, ties toward zero,
        saturating at the boundary bins."""
        x = np.asarray(values, dtype=np.float64) / self.delta
        k = np.sign(x) * np.ceil(np.abs(x) - 0.5)
        k = np.clip(k, -self.half, self.half)
        return (k + self.half).astype(np.int64)

    @property
    def r_table(self):
        """Output bin index of the product-rule combination of every bin
        pair; built once per grid geometry and shared read-only."""
        if self._r_table is None:
            self._r_table = _build_r_table(self.l_max, self.n_bits)
        return self._r_table


@lru_cache(maxsize=8)
def _build_r_table(l_max: float, n_bits: int):
    grid = LlrGrid(l_max, n_bits)
    table = grid.quantize(pairwise_llr(grid.llr[:, None], grid.llr[None, :])).astype(
        np.int32
    )
    table.setflags(write=False)
    return table


class QuantizedPmf:
    """Probability mass function on an LlrGrid.  Values are immutable;
    operations return new instances."""

    __slots__ = ("grid", "mass")

    def __init__(self, grid: LlrGrid, mass, _validate: bool = True):
        mass = np.asarray(mass, dtype=np.float64)
        if mass.shape != (grid.size,):
            raise InvalidInputError(
                f"mass has shape {mass.shape}, grid needs ({grid.size},)"
            )
        if _validate:
            neg = mass < 0.0
            if neg.any():
                worst = mass[neg].min()
                if worst < -1e-12:
                    raise InvalidInputError(f"negative mass {worst}")
                mass = np.where(neg, 0.0, mass)
            total = mass.sum()
            if abs(total - 1.0) > MASS_TOLERANCE:
                raise InvalidInputError(f"total mass {total} differs from 1")
        if mass.flags.writeable:
            mass = mass.copy()
            mass.setflags(write=False)
        self.grid = grid
        self.mass = mass

    def total_mass(self) -> float:
        return float(self.mass.sum())

    def error_mass(self) -> float:
        """Probability of LLR <= 0; the zero bin counts fully as error."""
        return float(self.mass[: self.grid.half + 1].sum())

    def mean(self) -> float:
        return float(np.dot(self.grid.llr, self.mass))

    def variance(self) -> float:
        m = self.mean()
        return float(np.dot((self.grid.llr - m) ** 2, self.mass))

    def support(self) -> tuple[int, int]:
        """Half-open index range [lo, hi) of the nonzero bins."""
        nz = np.flatnonzero(self.mass)
        return int(nz[0]), int(nz[-1]) + 1

    def renormalized(self) -> "QuantizedPmf":
        """Rescale so the total is exactly one.

        Operations preserve mass to rounding error only, but an m-fold
        check combination raises the total to the m-th power, so a 1-ulp
        deficit compounds exponentially over iterations unless the
        per-iteration PMFs are renormalized.
        """
        return QuantizedPmf(self.grid, self.mass / self.mass.sum(), _validate=False)

    def write_csv(self, fileobj) -> None:
        writer = csv.writer(fileobj)
        writer.writerow(["llr", "mass"])
        for llr, mass in zip(self.grid.llr, self.mass):
            writer.writerow([format(llr, ".17g"), format(mass, ".17g")])


def unit_pmf(grid: LlrGrid, llr: float = 0.0) -> QuantizedPmf:
    """All mass at the bin closest to the given LLR."""
    mass = np.zeros(grid.size)
    mass[grid.quantize(llr)] = 1.0
    return QuantizedPmf(grid, mass, _validate=False)


def gaussian_llr_pmf(grid: LlrGrid, sigma: float) -> QuantizedPmf:
    """Channel LLR distribution N(2/sigma^2, 4/sigma^2) quantized onto the
    grid, with the out-of-range tails folded into the boundary bins."""
    if sigma <= 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    mean = 2.0 / (sigma * sigma)
    std = 2.0 / sigma
    inner_edges = (grid.llr[:-1] + grid.delta / 2.0 - mean) / std
    cdf = np.empty(grid.size + 1)
    cdf[0] = 0.0
    cdf[-1] = 1.0
    cdf[1:-1] = ndtr(inner_edges)
    return QuantizedPmf(grid, np.diff(cdf), _validate=False)


def _check_same_grid(p: QuantizedPmf, q: QuantizedPmf) -> None:
    if p.grid != q.grid:
        raise GridMismatchError(f"grid mismatch: {p.grid} vs {q.grid}")


def convolve(p: QuantizedPmf, q: QuantizedPmf) -> QuantizedPmf:
    """Distribution of the sum of two independent quantized LLRs; sums
    beyond the grid range saturate to the boundary bins."""
    _check_same_grid(p, q)
    grid = p.grid
    (ia, ib), (ja, jb) = p.support(), q.support()
    a = p.mass[ia:ib]
    b = q.mass[ja:jb]
    if len(a) * len(b) <= _FFT_CROSSOVER:
        full = np.convolve(a, b)
    else:
        full = fftconvolve(a, b)
        np.clip(full, 0.0, None, out=full)
    # Full-convolution index m corresponds to grid index ia + ja + m - half.
    start = ia + ja - grid.half
    length = len(full)
    out = np.zeros(grid.size)
    below = max(0, min(length, -start))
    above = max(0, min(length, start + length - grid.size))
    if below:
        out[0] += full[:below].sum()
    if above:
        out[-1] += full[length - above :].sum()
    if below < length - above:
        out[start + below : start + length - above] += full[below : length - above]
    return QuantizedPmf(grid, out, _validate=False)


def convolve_power(p: QuantizedPmf, m: int) -> QuantizedPmf:
    """m-fold self-convolution by repeated squaring; m = 0 gives the unit
    mass at LLR 0."""
    if m < 0:
        raise InvalidInputError(f"power must be non-negative, got {m}")
    result = None
    base = p
    while m:
        if m & 1:
            result = base if result is None else convolve(result, base)
        m >>= 1
        if m:
            base = convolve(base, base)
    return result if result is not None else unit_pmf(p.grid)


def convolve_powers(p: QuantizedPmf, exponents) -> dict[int, QuantizedPmf]:
    """Self-convolution powers for several exponents, sharing the binary
    power ladder."""
    wanted = sorted(set(int(e) for e in exponents))
    if wanted and wanted[0] < 0:
        raise InvalidInputError("powers must be non-negative")
    ladder = {1: p}
    top = 1
    out = {}
    for m in wanted:
        if m == 0:
            out[0] = unit_pmf(p.grid)
            continue
        while top * 2 <= m:
            ladder[top * 2] = convolve(ladder[top], ladder[top])
            top *= 2
        result = None
        bit = 1
        rem = m
        while rem:
            if rem & 1:
                result = ladder[bit] if result is None else convolve(result, ladder[bit])
            rem >>= 1
            bit <<= 1
        out[m] = result
    return out


def r_combine(p: QuantizedPmf, q: QuantizedPmf) -> QuantizedPmf:
    """PMF of the product-rule combination of two independent quantized
    LLRs, via the precomputed per-grid output-bin table."""
    _check_same_grid(p, q)
    grid = p.grid
    (ia, ib), (ja, jb) = p.support(), q.support()
    weights = np.multiply.outer(p.mass[ia:ib], q.mass[ja:jb])
    targets = grid.r_table[ia:ib, ja:jb]
    out = np.bincount(targets.ravel(), weights=weights.ravel(), minlength=grid.size)
    return QuantizedPmf(grid, out, _validate=False)


def r_power(p0: QuantizedPmf, p: QuantizedPmf, m: int) -> QuantizedPmf:
    """Left fold of r_combine over m copies of p seeded with p0: the
    check-to-variable message PMF of a degree-(m+1) check node whose
    channel observation has PMF p0."""
    if m < 1:
        raise InvalidInputError(f"r_power needs m >= 1, got {m}")
    acc = p0
    for _ in range(m):
        acc = r_combine(acc, p)
    return acc


def r_self_combine(p: QuantizedPmf, m: int) -> QuantizedPmf:
    """Product-rule combination of m independent copies of p, combined
    pairwise by repeated squaring.  m = 0 gives the empty-product identity
    (all mass at +l_max)."""
    if m < 0:
        raise InvalidInputError(f"copies must be non-negative, got {m}")
    if m == 0:
        return unit_pmf(p.grid, p.grid.l_max)
    result = None
    base = p
    while m:
        if m & 1:
            result = base if result is None else r_combine(result, base)
        m >>= 1
        if m:
            base = r_combine(base, base)
    return result


def r_self_combines(p: QuantizedPmf, counts) -> dict[int, QuantizedPmf]:
    """r_self_combine for several copy counts, sharing the squaring ladder."""
    wanted = sorted(set(int(c) for c in counts))
    if wanted and wanted[0] < 0:
        raise InvalidInputError("copy counts must be non-negative")
    ladder = {1: p}
    top = 1
    out = {}
    for m in wanted:
        if m == 0:
            out[0] = unit_pmf(p.grid, p.grid.l_max)
            continue
        while top * 2 <= m:
            ladder[top * 2] = r_combine(ladder[top], ladder[top])
            top *= 2
        result = None
        bit = 1
        rem = m
        while rem:
            if rem & 1:
                result = ladder[bit] if result is None else r_combine(result, ladder[bit])
            rem >>= 1
            bit <<= 1
        out[m] = result
    return out


def mix(pmfs, weights) -> QuantizedPmf:
    """Convex mixture of PMFs on one grid."""
    pmfs = list(pmfs)
    if not pmfs:
        raise InvalidInputError("empty mixture")
    grid = pmfs[0].grid
    mass = np.zeros(grid.size)
    for pmf, w in zip(pmfs, weights):
        if pmf.grid != grid:
            raise GridMismatchError("mixture components on different grids")
        mass += w * pmf.mass
    return QuantizedPmf(grid, mass, _validate=False)
