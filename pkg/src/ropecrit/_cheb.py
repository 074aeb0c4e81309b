"""Adaptive piecewise Chebyshev antiderivatives of smooth integrands."""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as C

_DEG = 28


def _fit(f, lo, hi, deg=_DEG):
    k = np.arange(deg + 1)
    x = np.cos(np.pi * (k + 0.5) / (deg + 1))
    vals = np.atleast_2d(f(0.5 * (hi - lo) * x + 0.5 * (hi + lo)))
    coef = np.array([C.chebfit(x, v, deg) for v in vals])
    return coef


class PiecewiseAntiderivative:
    """Antiderivatives F_m(x) = int_a^x f_m on [a, b] for a vector integrand.

    ``f`` maps an array of abscissae to an array of shape (m, len(x)). The
    interval is bisected until each piece's Chebyshev tail is negligible,
    which concentrates pieces near (near-)singular endpoints.
    """

    def __init__(self, f, a: float, b: float, tol: float = 1e-15, max_depth: int = 60):
        if not b > a:
            raise ValueError("empty interval")
        self.a, self.b = float(a), float(b)
        pieces = []
        stack = [(self.a, self.b, 0)]
        while stack:
            lo, hi, depth = stack.pop()
            coef = _fit(f, lo, hi)
            scale = np.max(np.abs(coef), axis=1) + 1e-300
            tail = np.max(np.abs(coef[:, -4:]), axis=1)
            width = hi - lo
            ok = np.all((tail <= tol * scale) | (tail * width <= 1e-18))
            if ok or depth >= max_depth:
                pieces.append((lo, hi, coef))
            else:
                mid = 0.5 * (lo + hi)
                stack.append((mid, hi, depth + 1))
                stack.append((lo, mid, depth + 1))
        pieces.sort(key=lambda p: p[0])
        self.breaks = np.array([p[0] for p in pieces] + [pieces[-1][1]])
        self._int = []
        offsets = []
        acc = np.zeros(pieces[0][2].shape[0])
        for lo, hi, coef in pieces:
            half = 0.5 * (hi - lo)
            ic = np.array([C.chebint(c, lbnd=-1) * half for c in coef])
            self._int.append(ic)
            offsets.append(acc.copy())
            acc = acc + np.array([C.chebval(1.0, c) for c in ic])
        self._offsets = np.array(offsets)
        self.total = acc
        self._coef = [p[2] for p in pieces]

    @property
    def npieces(self) -> int:
        return len(self._int)

    def __call__(self, x, rows: int | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        nrow = self.total.size if rows is None else rows
        flat = np.clip(x.ravel(), self.a, self.b)
        idx = np.clip(np.searchsorted(self.breaks, flat, side="right") - 1, 0, self.npieces - 1)
        out = np.empty((nrow, flat.size))
        for p in np.unique(idx):
            sel = idx == p
            lo, hi = self.breaks[p], self.breaks[p + 1]
            t = (2.0 * flat[sel] - lo - hi) / (hi - lo)
            for m, c in enumerate(self._int[p][:nrow]):
                out[m, sel] = self._offsets[p, m] + C.chebval(t, c)
        return out.reshape((nrow,) + x.shape)
