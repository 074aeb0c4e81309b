"""Strut-free critical arcs at sigma = 1: segments, circles, waves, helices and supercoils.

On a kinked arc (kappa = 1) without struts the tension solves
phi'' = 1 - phi + c^2 / phi^3 with torsion tau = c / phi^2, and the virtual
tangent V = (1 - phi) T - phi' N - (c / phi) B is constant. The quantity
(phi - 1)^2 + phi'^2 + c^2 / phi^2 = |V|^2 is conserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .balance import FunctionTension, KinkTension
from .curves import Arc, Component, Curve, EndpointConstraint, Helix, Line, Segment

DEFAULT_STEP = 1e-3


# ---------------------------------------------------------------------------
# the tension ODE


def supercoil_rhs(phi, dphi, c):
    return dphi, 1.0 - phi + c * c / phi ** 3


def energy(phi, dphi, c) -> np.ndarray:
    """(phi - 1)^2 + phi'^2 + c^2 / phi^2, equal to |V|^2."""
    phi, dphi = np.asarray(phi, dtype=float), np.asarray(dphi, dtype=float)
    return (phi - 1.0) ** 2 + dphi ** 2 + c * c / phi ** 2


def helix_tension(tau_h: float) -> tuple[float, float]:
    """(phi_c, c) of the round helix with curvature 1 and torsion tau_h: phi_c = 1 / (1 - tau_h^2)."""
    if not abs(tau_h) < 1:
        raise ValueError("a critical helix needs |tau_h| < 1")
    phi = 1.0 / (1.0 - tau_h * tau_h)
    return phi, phi * phi * tau_h


def equilibrium_phi(c: float) -> float:
    """The positive root of 1 - phi + c^2 / phi^3 (phi >= 1)."""
    if c == 0:
        return 1.0
    f = lambda p: 1.0 - p + c * c / p ** 3
    hi = 1.0 + abs(c) ** 0.5 + 1.0
    return brentq(f, 1.0, hi, xtol=1e-16, rtol=1e-15)


@dataclass(frozen=True)
class SupercoilState:
    phi: float
    dphi: float
    s: float
    c: float


@dataclass
class Trajectory:
    c: float
    step: float
    s: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    stopped: bool = False  # reached phi = 0 (possible only for c = 0)

    def state(self, i: int) -> SupercoilState:
        return SupercoilState(float(self.phi[i]), float(self.dphi[i]), float(self.s[i]), self.c)

    @property
    def energy(self) -> np.ndarray:
        return energy(self.phi, self.dphi, self.c)

    @property
    def torsion(self) -> np.ndarray:
        return self.c / self.phi ** 2

    def energy_drift(self) -> float:
        """Largest relative energy deviation from the start."""
        e = self.energy
        return float(np.max(np.abs(e - e[0])) / max(abs(e[0]), 1e-300))

    def periods(self) -> np.ndarray:
        """Arclengths of successive maxima of phi (phi' from + to -), by cubic interpolation."""
        d = self.dphi
        idx = np.nonzero((d[:-1] > 0) & (d[1:] <= 0))[0]
        out = []
        for i in idx:
            h = self.s[i + 1] - self.s[i]
            d0, d1 = d[i], d[i + 1]
            dd0 = supercoil_rhs(self.phi[i], d0, self.c)[1]
            dd1 = supercoil_rhs(self.phi[i + 1], d1, self.c)[1]

            def herm(u):
                h00, h10 = 2 * u ** 3 - 3 * u ** 2 + 1, u ** 3 - 2 * u ** 2 + u
                h01, h11 = -2 * u ** 3 + 3 * u ** 2, u ** 3 - u ** 2
                return h00 * d0 + h10 * h * dd0 + h01 * d1 + h11 * h * dd1

            u = 1.0 if d1 == 0 else brentq(herm, 0.0, 1.0, xtol=1e-15)
            out.append(self.s[i] + u * h)
        return np.array(out)

    def period(self) -> float:
        m = self.periods()
        if len(m) < 2:
            raise ValueError("trajectory shorter than one period")
        return float(m[1] - m[0])


def _rk4(y, h, f):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def supercoil_integrate(c: float, phi0: float, dphi0: float, length: float,
                        step: float = DEFAULT_STEP) -> Trajectory:
    """Fixed-step RK4 for phi'' = 1 - phi + c^2 / phi^3 over [0, length]."""
    if not phi0 > 0:
        raise ValueError("phi0 must be positive")
    if not step > 0 or not length >= 0:
        raise ValueError("step must be positive and length nonnegative")
    n = int(math.ceil(length / step - 1e-9))
    h = length / n if n else step
    f = lambda y: np.array(supercoil_rhs(y[0], y[1], c))
    ys = np.empty((n + 1, 2))
    ys[0] = (phi0, dphi0)
    stopped = False
    last = n
    for i in range(n):
        y = _rk4(ys[i], h, f)
        if not (y[0] > 0 and np.all(np.isfinite(y))):
            if c != 0:
                raise RuntimeError(f"phi left the positive axis at s = {(i + 1) * h:.6g}; step too large")
            stopped, last = True, i
            break
        ys[i + 1] = y
    s = h * np.arange(last + 1)
    return Trajectory(float(c), h, s, ys[: last + 1, 0].copy(), ys[: last + 1, 1].copy(), stopped)


# ---------------------------------------------------------------------------
# reconstruction


def _joint_rhs(c):
    """Right-hand side on rows (..., 14) of (phi, phi', x, T, N, B)."""

    def f(y):
        phi, dphi = y[..., 0:1], y[..., 1:2]
        T, N, B = y[..., 5:8], y[..., 8:11], y[..., 11:14]
        tau = c / phi ** 2
        return np.concatenate([dphi, 1.0 - phi + c * c / phi ** 3, T, N, -T + tau * B, -tau * N],
                              axis=-1)

    return f


class SupercoilSegment(Segment):
    """Unit-curvature arc with torsion c / phi^2, phi solving the tension ODE.

    The joint system (phi, phi', x, T, N, B) is stored at RK4 nodes; values in
    between come from one RK4 step of the exact local length from the node below.
    """

    def __init__(self, c: float, phi0: float, dphi0: float, length: float,
                 step: float = DEFAULT_STEP, origin=(0, 0, 0), frame0=None):
        if not phi0 > 0 or not length > 0:
            raise ValueError("need phi0 > 0 and positive length")
        self.c = float(c)
        self.length = float(length)
        n = int(math.ceil(length / step - 1e-9))
        self.h = self.length / n
        F = np.eye(3) if frame0 is None else np.asarray(frame0, dtype=float)
        y = np.concatenate([[phi0, dphi0], np.asarray(origin, dtype=float), F[0], F[1], F[2]])
        self._f = _joint_rhs(self.c)
        ys = np.empty((n + 1, 14))
        ys[0] = y
        for i in range(n):
            ys[i + 1] = _rk4(ys[i], self.h, self._f)
            if not ys[i + 1, 0] > 0:
                raise RuntimeError("phi left the positive axis")
        self.nodes = ys
        self.frame_drift = float(np.max(np.abs(np.einsum("nij,nkj->nik", ys[:, 5:14].reshape(-1, 3, 3),
                                                         ys[:, 5:14].reshape(-1, 3, 3)) - np.eye(3))))
        if self.frame_drift > 1e-8:
            raise RuntimeError(f"Frenet frame drifted by {self.frame_drift:.2e}")

    def _state(self, s):
        s = np.clip(np.atleast_1d(np.asarray(s, dtype=float)), 0.0, self.length)
        i = np.minimum((s / self.h).astype(int), len(self.nodes) - 1)
        d = s - i * self.h
        return _rk4(self.nodes[i], d[:, None], self._f)

    def frame(self, s):
        shape = np.shape(s)
        y = self._state(s)
        return (y[:, 2:5].reshape(shape + (3,)), y[:, 5:8].reshape(shape + (3,)),
                y[:, 8:11].reshape(shape + (3,)))

    def torsion(self, s):
        y = self._state(s)
        return (self.c / y[:, 0] ** 2).reshape(np.shape(s))

    def max_curvature(self):
        return 1.0

    def tension(self, s):
        y = self._state(s)
        return y[:, 0].reshape(np.shape(s)), y[:, 1].reshape(np.shape(s))

    def virtual_tangent(self, s):
        y = self._state(s)
        phi, dphi = y[:, :1], y[:, 1:2]
        return (1.0 - phi) * y[:, 5:8] - dphi * y[:, 8:11] - (self.c / phi) * y[:, 11:14]


@dataclass
class Reconstruction:
    curve: Curve
    segment: SupercoilSegment
    s: np.ndarray
    points: np.ndarray
    V: np.ndarray
    tau: np.ndarray

    def v_spread(self) -> float:
        return float(np.max(np.linalg.norm(self.V - self.V[0], axis=1)))


def reconstruct_supercoil(traj: Trajectory) -> Reconstruction:
    """Integrate T' = N, N' = -T + tau B, B' = -tau N with the trajectory's phi."""
    if np.any(traj.phi <= 0):
        raise ValueError("trajectory must keep phi > 0")
    seg = SupercoilSegment(traj.c, traj.phi[0], traj.dphi[0], float(traj.s[-1]), traj.step)
    curve = _fixed_tangent_curve([seg])
    y = seg.nodes
    V = seg.virtual_tangent(traj.s)
    return Reconstruction(curve, seg, traj.s.copy(), y[:, 2:5].copy(), V, traj.c / y[:, 0] ** 2)


def progress_defect(traj: Trajectory, rec: Reconstruction, i0: int, i1: int) -> tuple[float, float]:
    """(<q - p, V>, phi'(q) - phi'(p) - c^2 int phi^-3) between nodes i0 < i1."""
    from scipy.integrate import simpson

    lhs = float((rec.points[i1] - rec.points[i0]) @ rec.V[i0])
    sl = slice(i0, i1 + 1)
    rhs = float(traj.dphi[i1] - traj.dphi[i0]
                - traj.c ** 2 * simpson(traj.phi[sl] ** -3.0, x=traj.s[sl]))
    return lhs, rhs


# ---------------------------------------------------------------------------
# kinds and builders


class Kind(str, Enum):
    SEGMENT = "segment"
    CIRCLE = "circle"
    WAVE = "wave"
    SUPERCOIL = "supercoiled_helix"
    HELIX = "helix"
    NOT_CRITICAL = "not_strut_free_critical"


@dataclass(frozen=True)
class StrutFreeKind:
    kind: Kind
    V: tuple = (0.0, 0.0, 0.0)
    v_norm: float = 0.0
    tau_h: float = 0.0
    c: float = 0.0
    k: float = 1.0
    reason: str = ""
    extra: dict = field(default_factory=dict)

    @classmethod
    def segment(cls):
        return cls(Kind.SEGMENT)

    @classmethod
    def circle(cls, V=(0.0, 0.0, 0.0)):
        V = tuple(float(x) for x in np.resize(np.asarray(V, dtype=float), 3))
        n = float(np.linalg.norm(V))
        if n > 1:
            raise ValueError("circle needs |V| <= 1")
        if abs(V[2]) > 0:
            raise ValueError("circle V must lie in the circle's plane (z = 0)")
        return cls(Kind.CIRCLE, V, n)

    @classmethod
    def wave(cls, v_norm: float):
        if not v_norm > 1:
            raise ValueError("wave needs |V| > 1")
        return cls(Kind.WAVE, (float(v_norm), 0.0, 0.0), float(v_norm))

    @classmethod
    def wave_from_theta(cls, theta: float):
        if not math.pi < theta < 2 * math.pi:
            raise ValueError("wave turning angle must lie in (pi, 2 pi)")
        return cls.wave(1.0 / math.cos(math.pi - theta / 2))

    @classmethod
    def helix(cls, tau_h: float):
        helix_tension(tau_h)
        return cls(Kind.HELIX, tau_h=float(tau_h))

    @classmethod
    def supercoil(cls, c: float, k: float):
        if c == 0 or not k > 0:
            raise ValueError("supercoil needs c != 0 and k > 0")
        return cls(Kind.SUPERCOIL, c=float(c), k=float(k))

    @classmethod
    def not_critical(cls, reason: str):
        return cls(Kind.NOT_CRITICAL, reason=reason)

    @property
    def theta(self) -> float:
        """Turning angle of one wave arc, 2 pi - 2 arccos(1 / |V|)."""
        if self.kind is not Kind.WAVE:
            return math.nan
        return 2 * math.pi - 2 * math.acos(1.0 / self.v_norm)

    @property
    def embedded(self) -> bool:
        return self.kind is not Kind.WAVE or self.theta < 5 * math.pi / 3

    @property
    def phi_c(self) -> float:
        return equilibrium_phi(self.c)


def _fixed_tangent_curve(segs):
    p0, t0, _ = segs[0].start()
    p1, t1, _ = segs[-1].end()
    eps = [EndpointConstraint(p0, [], t0), EndpointConstraint(p1, [], t1)]
    return Curve([Component(segs, False, eps)])


def _frame_tension(curve: Curve, V):
    V = np.asarray(V, dtype=float)

    def fn(c, s):
        _, T, K = curve.frame(c, s)
        return np.maximum(1.0 - T @ V, 0.0), -(K @ V)

    return FunctionTension(fn)


def build_strutfree(kind: StrutFreeKind, extent: float | None = None) -> tuple[Curve, KinkTension]:
    """Curve at sigma = 1 and the tension certifying balance by kinks alone.

    ``extent``: segment length; circle arc angle (full circle if omitted);
    number of wave arcs; helix and supercoil arclength.
    """
    K = kind.kind
    if K is Kind.SEGMENT:
        L = 1.0 if extent is None else float(extent)
        curve = Curve([Component([Line((0, 0, 0), (L, 0, 0))])])
        return curve, KinkTension.zero()
    if K is Kind.CIRCLE:
        ang = 2 * math.pi if extent is None else float(extent)
        if ang >= 2 * math.pi - 1e-15:
            curve = Curve([Component([Arc((0, 0, 0), 1.0, (1, 0, 0), (0, 1, 0), 0.0, 2 * math.pi)],
                                     closed=True)])
        else:
            curve = _fixed_tangent_curve([Arc((0, 0, 0), 1.0, (1, 0, 0), (0, 1, 0), 0.0, ang)])
        return curve, _frame_tension(curve, kind.V)
    if K is Kind.WAVE:
        n = 4 if extent is None else int(extent)
        if n < 1:
            raise ValueError("wave needs at least one arc")
        al = math.acos(1.0 / kind.v_norm)
        segs, p = [], np.zeros(3)
        for j in range(n):
            if j % 2 == 0:  # counterclockwise, tangent angle alpha -> 2 pi - alpha
                a0, a1 = al - math.pi / 2, 1.5 * math.pi - al
            else:  # clockwise, tangent angle -alpha -> alpha - 2 pi
                a0, a1 = math.pi / 2 - al, al - 1.5 * math.pi
            ctr = p - np.array([math.cos(a0), math.sin(a0), 0.0])
            arc = Arc(ctr, 1.0, (1, 0, 0), (0, 1, 0), a0, a1)
            segs.append(arc)
            p = arc.end()[0]
        curve = Curve([Component(segs)])
        return curve, _frame_tension(curve, (kind.v_norm, 0.0, 0.0))
    if K is Kind.HELIX:
        phi, _ = helix_tension(kind.tau_h)
        r = 1.0 / (1.0 + kind.tau_h ** 2)
        b = kind.tau_h / (1.0 + kind.tau_h ** 2)
        L = 4 * math.pi if extent is None else float(extent)
        seg = Helix((0, 0, 0), r, b, 0.0, L / math.hypot(r, b))
        curve = _fixed_tangent_curve([seg])
        return curve, FunctionTension(lambda c, s: (np.full(np.shape(s), phi), np.zeros(np.shape(s))))
    if K is Kind.SUPERCOIL:
        phi0 = kind.k * kind.phi_c
        if extent is None:
            traj = supercoil_integrate(kind.c, phi0, 0.0, 60.0)
            extent = traj.period()
        seg = SupercoilSegment(kind.c, phi0, 0.0, float(extent))
        curve = _fixed_tangent_curve([seg])
        return curve, FunctionTension(lambda c, s: seg.tension(s))
    raise ValueError(f"cannot build {K.value}")


# ---------------------------------------------------------------------------
# classification


def classify_strutfree(curve: Curve, samples: int = 4001, tol: float = 1e-6) -> StrutFreeKind:
    """Decide which strut-free critical family a connected sigma = 1 curve belongs to."""
    if len(curve.components) != 1:
        return StrutFreeKind.not_critical("classification needs a connected curve")
    comp = curve.components[0]
    s = np.linspace(0.0, comp.length, samples)
    _, T, Kv = comp.frame(s)
    kap = np.linalg.norm(Kv, axis=1)
    if np.max(kap) > 1 + tol:
        return StrutFreeKind.not_critical("curvature exceeds 1 at sigma = 1 scale")
    if np.max(kap) <= tol:
        return StrutFreeKind.segment()
    if np.max(np.abs(kap - 1.0)) > tol:
        return StrutFreeKind.not_critical("curvature neither 0 nor 1 throughout")
    tau = comp.torsion(s)
    if np.max(np.abs(tau)) <= tol:
        return _classify_planar(comp, tol)
    if np.ptp(tau) <= tol:
        th = float(np.mean(tau))
        if abs(th) >= 1:
            return StrutFreeKind.not_critical("helix with |torsion| >= curvature")
        return StrutFreeKind.helix(th)
    if np.min(tau) * np.max(tau) <= 0:
        return StrutFreeKind.not_critical("torsion changes sign")
    return _classify_supercoil(s, tau, tol)


def _classify_planar(comp: Component, tol: float) -> StrutFreeKind:
    arcs = []
    for g in comp.segments:
        _, _, K = g.frame(np.array([0.0, 0.5 * g.length, g.length]))
        n = K[1] / np.linalg.norm(K[1])
        if arcs and np.linalg.norm(n - arcs[-1][1]) < 1e-6 and comp.closed is False:
            arcs[-1][0] += g.length
            continue
        arcs.append([g.length, n])
    if comp.closed or len(arcs) == 1:
        return StrutFreeKind.circle()
    th = np.array([a[0] for a in arcs])
    free_ends = [ep.free_tangent for ep in comp.endpoints]
    inner = th[(0 if free_ends[0] else 1): (len(th) if free_ends[1] else len(th) - 1)]
    ref = inner if len(inner) else th
    theta = float(np.max(ref))
    if np.ptp(ref) > 1e-6 * theta or np.any(th > theta + 1e-6):
        return StrutFreeKind.not_critical("arcs of unequal turning angle")
    if not theta > math.pi:
        return StrutFreeKind.not_critical("wave arcs must turn by more than pi")
    for (_, a), (_, b) in zip(arcs[:-1], arcs[1:]):
        if a @ b > -1 + 1e-6:
            return StrutFreeKind.not_critical("consecutive arcs must turn in opposite senses")
    return StrutFreeKind.wave_from_theta(theta)


def _classify_supercoil(s, tau, tol) -> StrutFreeKind:
    """phi = sqrt(c / tau) must solve phi'' = 1 - phi + c^2 / phi^3 for some c."""
    h = s[1] - s[0]
    sgn = 1.0 if tau[0] > 0 else -1.0

    def resid(logc):
        c = sgn * math.exp(logc)
        phi = np.sqrt(c / tau)
        dd = (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / h ** 2
        return float(np.max(np.abs(dd - (1 - phi[1:-1] + c * c / phi[1:-1] ** 3))))

    r = minimize_scalar(resid, bounds=(-12.0, 6.0), method="bounded",
                        options={"xatol": 1e-12})
    c = sgn * math.exp(r.x)
    if r.fun > max(1e-4, 1e3 * tol):
        return StrutFreeKind.not_critical("torsion profile solves no tension ODE")
    phi = np.sqrt(c / tau)
    k = float(phi[0] / equilibrium_phi(c))
    return StrutFreeKind(Kind.SUPERCOIL, c=c, k=k, extra={"ode_residual": r.fun})
