"""Orthogonal wavelet filter banks and the decimated multi-level transform.

Analysis extends each series symmetrically (half-sample mirror), correlates
with the decomposition pair, and keeps every second sample, so a length-L
input yields floor((L+S-1)/2) coefficients per branch. Synthesis zero-
interleaves, convolves with the reconstruction pair, sums the branches, and
trims back to the recorded forward length. With matched padding and trim the
round trip is exact to floating-point error, which is the property the test
suite leans on. Both directions are linear maps registered on the autodiff
tape, so gradients flow through decompose/reconstruct like any other op.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import ShapeError, Tensor

# Reconstruction low-pass taps; the other three filters of each bank follow
# from the quadrature-mirror relations in make_filter_bank. Values are the
# standard orthogonal tables, re-validated against the admissibility and
# orthogonality sums every time a bank is built.
_REC_LO = {
    "haar": [
        0.7071067811865476,
        0.7071067811865476,
    ],
    "sym3": [
        0.3326705529509569,
        0.8068915093133388,
        0.4598775021193313,
        -0.13501102001039084,
        -0.08544127388224149,
        0.035226291882100656,
    ],
    "db4": [
        0.23037781330885523,
        0.7148465705525415,
        0.6308807679295904,
        -0.02798376941698385,
        -0.18703481171888114,
        0.030841381835986965,
        0.032883011666982945,
        -0.010597401784997278,
    ],
    "coif3": [
        -0.003793512864491014,
        0.007782596427325418,
        0.023452696141836267,
        -0.0657719112818555,
        -0.06112339000267287,
        0.4051769024096169,
        0.7937772226256206,
        0.42848347637761874,
        -0.07179982161931202,
        -0.08230192710688598,
        0.03455502757306163,
        0.015880544863615904,
        -0.00900797613666158,
        -0.0025745176887502236,
        0.0011175187708906016,
        0.0004662169601128863,
        -7.098330313814125e-05,
        -3.459977283621256e-05,
    ],
}

SUPPORTED_BASES = tuple(sorted(_REC_LO))


class UnknownBasisError(ValueError):
    """Requested wavelet family is not in the coefficient tables."""


class DepthError(ValueError):
    """Decomposition depth infeasible for the given length and filter."""


class LengthMismatchError(ValueError):
    """Reconstruction target disagrees with the coefficient lengths."""


@dataclass(frozen=True)
class FilterBank:
    name: str
    h: np.ndarray  # decomposition high-pass
    g: np.ndarray  # decomposition low-pass
    h_rec: np.ndarray  # reconstruction high-pass
    g_rec: np.ndarray  # reconstruction low-pass
    S: int


def make_filter_bank(name):
    if name not in _REC_LO:
        raise UnknownBasisError(
            f"unknown wavelet basis {name!r}; supported bases: {', '.join(SUPPORTED_BASES)}"
        )
    g_rec = np.asarray(_REC_LO[name], dtype=np.float64)
    S = g_rec.size
    g = g_rec[::-1].copy()
    sign = np.where(np.arange(S) % 2 == 0, -1.0, 1.0)
    h_rec = sign * g_rec[::-1]
    h = h_rec[::-1].copy()
    fb = FilterBank(name=name, h=h, g=g, h_rec=h_rec, g_rec=g_rec, S=int(S))
    _check_bank(fb)
    return fb


def _check_bank(fb):
    for f in (fb.h, fb.g, fb.h_rec, fb.g_rec):
        if f.size != fb.S:
            raise ValueError(f"filter bank {fb.name}: inconsistent filter lengths")
    if abs(fb.g.sum() - np.sqrt(2.0)) > 1e-10:
        raise ValueError(f"filter bank {fb.name}: low-pass sum is not sqrt(2)")
    if abs(fb.h.sum()) > 1e-10:
        raise ValueError(f"filter bank {fb.name}: high-pass does not sum to zero")
    if abs((fb.g * fb.g).sum() - 1.0) > 1e-10 or abs((fb.h * fb.h).sum() - 1.0) > 1e-10:
        raise ValueError(f"filter bank {fb.name}: filters are not unit energy")


@dataclass(frozen=True)
class LengthSchedule:
    base_length: int
    per_level: tuple

    @property
    def levels(self):
        return len(self.per_level)


def length_schedule(base, S, J):
    """Coefficient lengths [L1..LJ] under L_j = floor((L_{j-1}+S-1)/2).

    Every length, the base included, must stay at or above max(2, S//2);
    below that the mirror extension would dominate the signal.
    """
    if J < 1:
        raise DepthError(f"decomposition depth must be at least 1, got {J}")
    floor_len = max(2, S // 2)
    if base < floor_len:
        raise DepthError(
            f"depth {J} too large: level 0 length {base} is below the minimum "
            f"{floor_len} for filter length {S}"
        )
    lengths = []
    cur = int(base)
    for j in range(1, J + 1):
        cur = (cur + S - 1) // 2
        if cur < floor_len:
            raise DepthError(
                f"depth {J} too large: level {j} length {cur} is below the minimum "
                f"{floor_len} for filter length {S}"
            )
        lengths.append(cur)
    return LengthSchedule(base_length=int(base), per_level=tuple(lengths))


@dataclass
class CoefficientPyramid:
    """One low-pass tail plus J high-pass components, finest level first."""

    high: list
    low: Tensor
    schedule: LengthSchedule
    basis: str

    def __post_init__(self):
        if len(self.high) != self.schedule.levels:
            raise LengthMismatchError(
                f"pyramid has {len(self.high)} high-pass components but the schedule "
                f"has {self.schedule.levels} levels"
            )
        for j, (t, want) in enumerate(zip(self.high, self.schedule.per_level), start=1):
            if t.shape[-1] != want:
                raise LengthMismatchError(
                    f"high-pass level {j} has length {t.shape[-1]}, schedule says {want}"
                )
        if self.low.shape[-1] != self.schedule.per_level[-1]:
            raise LengthMismatchError(
                f"low-pass has length {self.low.shape[-1]}, schedule says "
                f"{self.schedule.per_level[-1]}"
            )

    @property
    def components(self):
        return list(self.high) + [self.low]


def _sym_indices(L, width):
    # Half-sample symmetric extension: ...x1 x0 | x0 x1 ... x_{L-1} | x_{L-1}...
    m = np.arange(-width, L + width) % (2 * L)
    return np.where(m < L, m, 2 * L - 1 - m)


def dwt_step(signal, fb):
    """One analysis level: (high, low) coefficient pair, each floor((L+S-1)/2) long."""
    x = signal if isinstance(signal, Tensor) else Tensor(signal)
    L = x.shape[-1]
    if L < 2:
        raise ShapeError(f"analysis needs at least 2 samples per series, got {L}")
    S = fb.S
    width = S - 1
    idx = _sym_indices(L, width)
    ext = x.data[..., idx]
    L_out = (L + S - 1) // 2

    def branch(f):
        fr = f[::-1]
        acc = np.zeros(x.data.shape[:-1] + (L_out,))
        for j in range(S):
            acc += fr[j] * ext[..., 1 + j : j + 2 * L_out : 2]
        out = Tensor(acc, parents=(x,))

        def _backward(g):
            gext = np.zeros(x.data.shape[:-1] + (L + 2 * width,))
            for j in range(S):
                gext[..., 1 + j : j + 2 * L_out : 2] += fr[j] * g
            gx = np.zeros_like(x.data)
            np.add.at(np.moveaxis(gx, -1, 0), idx, np.moveaxis(gext, -1, 0))
            x._accumulate(gx)

        out._backward = _backward
        return out

    return branch(fb.h), branch(fb.g)


def idwt_step(high, low, fb, target_len):
    """One synthesis level; target_len must map back to the coefficient length."""
    high = high if isinstance(high, Tensor) else Tensor(high)
    low = low if isinstance(low, Tensor) else Tensor(low)
    L_c = high.shape[-1]
    if low.shape[-1] != L_c:
        raise ShapeError(
            f"high/low coefficient lengths disagree: {high.shape} vs {low.shape}"
        )
    S = fb.S
    if (target_len + S - 1) // 2 != L_c:
        raise LengthMismatchError(
            f"target length {target_len} is inconsistent with coefficient length "
            f"{L_c} for filter length {S}"
        )
    full = 2 * L_c + S - 2
    start = S - 2

    def synth(data, f):
        y = np.zeros(data.shape[:-1] + (full,))
        for j in range(S):
            y[..., j : j + 2 * L_c - 1 : 2] += f[j] * data
        return y

    acc = synth(high.data, fb.h_rec) + synth(low.data, fb.g_rec)
    out = Tensor(acc[..., start : start + target_len], parents=(high, low))

    def _backward(g):
        gfull = np.zeros(acc.shape)
        gfull[..., start : start + target_len] = g
        for coeff, f in ((high, fb.h_rec), (low, fb.g_rec)):
            gc = np.zeros_like(coeff.data)
            for j in range(S):
                gc += f[j] * gfull[..., j : j + 2 * L_c - 1 : 2]
            coeff._accumulate(gc)

    out._backward = _backward
    return out


def dwt(signal, fb, J):
    """Iterate analysis on the low-pass branch J times and collect the pyramid."""
    x = signal if isinstance(signal, Tensor) else Tensor(signal)
    schedule = length_schedule(x.shape[-1], fb.S, J)
    high = []
    cur = x
    for _ in range(J):
        h, cur = dwt_step(cur, fb)
        high.append(h)
    return CoefficientPyramid(high=high, low=cur, schedule=schedule, basis=fb.name)


def idwt(pyramid, fb, base_len):
    """Fold the pyramid back to a length base_len signal, coarsest level first."""
    expected = length_schedule(base_len, fb.S, pyramid.schedule.levels)
    if (
        expected.per_level != tuple(pyramid.schedule.per_level)
        or pyramid.schedule.base_length != base_len
    ):
        raise LengthMismatchError(
            f"pyramid schedule {tuple(pyramid.schedule.per_level)} (base "
            f"{pyramid.schedule.base_length}) does not match base length {base_len} "
            f"with filter length {fb.S}"
        )
    J = pyramid.schedule.levels
    cur = pyramid.low
    for j in range(J, 0, -1):
        target = pyramid.schedule.per_level[j - 2] if j >= 2 else base_len
        cur = idwt_step(pyramid.high[j - 1], cur, fb, target)
    return cur
