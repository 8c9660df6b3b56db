"""Closed-form solution oracles and the data-generation path.

Every family is built as an autodiff expression graph, so solution jets come
from the same derivative engine used for networks and can be cross-checked
against finite differences. Includes Miura images, residual verification on
grids, Latin-hypercube collocation sampling and noise injection.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import residuals as rs


@dataclass(frozen=True)
class Region:
    x_min: float
    x_max: float
    t_min: float
    t_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.t_min < self.t_max):
            raise ValueError("region bounds must satisfy min < max")


FAMILIES = ("sg_breather", "mkdv_bright", "kdv_complex_soliton", "mkdv_kink",
            "kdv_pedestal_soliton", "mkdv_one_soliton_dt",
            "mkdv_two_soliton_dt")

COMPLEX_FAMILIES = frozenset({"kdv_complex_soliton"})

# the PDE each family solves and the spatio-temporal region its experiments use
FAMILY_PDE = {
    "sg_breather": rs.PdeId("sine_gordon"),
    "mkdv_bright": rs.PdeId("focusing_mkdv"),
    "kdv_complex_soliton": rs.PdeId("kdv"),
    "mkdv_kink": rs.PdeId("defocusing_mkdv"),
    "kdv_pedestal_soliton": rs.PdeId("kdv"),
    "mkdv_one_soliton_dt": rs.PdeId("focusing_mkdv"),
    "mkdv_two_soliton_dt": rs.PdeId("focusing_mkdv"),
}

FAMILY_REGION = {
    "sg_breather": Region(-10, 10, -5, 5),
    "mkdv_bright": Region(-10, 10, -10, 10),
    "kdv_complex_soliton": Region(-10, 10, -10, 10),
    "mkdv_kink": Region(-3, 3, -3, 3),
    "kdv_pedestal_soliton": Region(-3, 3, -3, 3),
    "mkdv_one_soliton_dt": Region(-15, 15, -10, 40),
    "mkdv_two_soliton_dt": Region(-15, 15, -10, 40),
}


@dataclass(frozen=True)
class SolutionSpec:
    """A named closed-form solution with parameters."""

    family: str
    params: tuple[tuple[str, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(sorted(self.params)))
        p = self.p
        fam = self.family
        if fam not in FAMILIES:
            raise ValueError(f"unknown solution family {fam!r}")
        if fam == "sg_breather":
            if not 0.0 <= p["k"] < 1.0:
                raise ValueError("sg_breather requires 0 <= k < 1")
            if p["mu"] == 0.0:
                raise ValueError("sg_breather requires mu != 0")
        elif fam in ("mkdv_bright", "kdv_complex_soliton", "mkdv_kink",
                     "kdv_pedestal_soliton"):
            if p["k"] == 0.0:
                raise ValueError(f"{fam} requires k != 0")
        elif fam == "mkdv_one_soliton_dt":
            if p["lam1"] <= 0.0:
                raise ValueError("mkdv_one_soliton_dt requires lam1 > 0")
        elif fam == "mkdv_two_soliton_dt":
            if not p["lam2"] > p["lam1"] > 0.0:
                raise ValueError("mkdv_two_soliton_dt requires lam2 > lam1 > 0")

    @property
    def p(self) -> dict[str, float]:
        return dict(self.params)

    @property
    def is_complex(self) -> bool:
        return self.family in COMPLEX_FAMILIES


def _spec(family: str, **params) -> SolutionSpec:
    return SolutionSpec(family,
                        tuple(sorted((k, float(v)) for k, v in params.items())))


def sg_breather(k: float, mu: float, x0: float = 0.0) -> SolutionSpec:
    return _spec("sg_breather", k=k, mu=mu, x0=x0)


def mkdv_bright(k: float, x0: float = 0.0) -> SolutionSpec:
    return _spec("mkdv_bright", k=k, x0=x0)


def kdv_complex_soliton(k: float, x0: float = 0.0) -> SolutionSpec:
    return _spec("kdv_complex_soliton", k=k, x0=x0)


def mkdv_kink(k: float, x0: float = 0.0) -> SolutionSpec:
    return _spec("mkdv_kink", k=k, x0=x0)


def kdv_pedestal_soliton(k: float, x0: float = 0.0) -> SolutionSpec:
    return _spec("kdv_pedestal_soliton", k=k, x0=x0)


def mkdv_one_soliton_dt(lam1: float, alpha1: float) -> SolutionSpec:
    return _spec("mkdv_one_soliton_dt", lam1=lam1, alpha1=alpha1)


def mkdv_two_soliton_dt(lam1: float, lam2: float, alpha1: float,
                        alpha2: float) -> SolutionSpec:
    return _spec("mkdv_two_soliton_dt", lam1=lam1, lam2=lam2, alpha1=alpha1,
                 alpha2=alpha2)


_EXPR_CACHE: dict[SolutionSpec, tuple[ad.Expr, ...]] = {}


def field_exprs(spec: SolutionSpec) -> tuple[ad.Expr, ...]:
    """Expression graph(s) of the closed form: (re,) or (re, im)."""
    if spec in _EXPR_CACHE:
        return _EXPR_CACHE[spec]
    p = spec.p
    x, t = ad.x_input(), ad.t_input()
    fam = spec.family
    if fam == "sg_breather":
        k, mu, x0 = p["k"], p["mu"], p["x0"]
        r = 1.0 / math.sqrt(1.0 - k * k)
        X = r * (1.0 - k) * x - r * (1.0 + k) * t
        T = r * (1.0 - k) * x + r * (1.0 + k) * t - r * x0
        g = math.tan(mu) * ad.sin(math.cos(mu) * X) * ad.sech(math.sin(mu) * T)
        out = (4.0 * ad.atan(g),)
    elif fam == "mkdv_bright":
        k = p["k"]
        th = k * x - k ** 3 * t + p["x0"]
        out = (k * ad.sech(th),)
    elif fam == "kdv_complex_soliton":
        k = p["k"]
        th = k * x - k ** 3 * t + p["x0"]
        s = ad.sech(th)
        out = (k * k * s * s, -(k * k) * s * ad.tanh(th))
    elif fam == "mkdv_kink":
        k = p["k"]
        th = k * x + 2.0 * k ** 3 * t + p["x0"]
        out = (k * ad.tanh(th),)
    elif fam == "kdv_pedestal_soliton":
        k = p["k"]
        th = k * x + 2.0 * k ** 3 * t + p["x0"]
        s = ad.sech(th)
        out = (2.0 * k * k * s * s - k * k,)
    elif fam == "mkdv_one_soliton_dt":
        l1, a1 = p["lam1"], p["alpha1"]
        out = (2.0 * l1 * ad.sech(2.0 * l1 * x - 8.0 * l1 ** 3 * t + 2.0 * a1),)
    else:  # mkdv_two_soliton_dt
        l1, l2 = p["lam1"], p["lam2"]
        v1 = 2.0 * l1 * x - 8.0 * l1 ** 3 * t + 2.0 * p["alpha1"]
        v2 = 2.0 * l2 * x - 8.0 * l2 ** 3 * t + 2.0 * p["alpha2"]
        num = 2.0 * (l2 * l2 - l1 * l1) * (l2 * ad.cosh(v1) - l1 * ad.cosh(v2))
        den = ((l1 * l1 + l2 * l2) * ad.cosh(v1) * ad.cosh(v2)
               - 2.0 * l1 * l2 * (1.0 + ad.sinh(v1) * ad.sinh(v2)))
        out = (num / den,)
    _EXPR_CACHE[spec] = out
    return out


def abt_kink_expr(beta: float, delta: float = 0.0) -> ad.Expr:
    """The sine-Gordon auto-Backlund image of the vacuum: 4*atan(exp(-beta*x - t/beta + delta)).

    Satisfies u_xt = sin(u) and pairs exactly with u = 0 under the transform
    with coefficients (a, b, c, d) = (1, 2*beta, 1, 2/beta). Used by the
    exact-substitution wiring oracle for schemes whose auxiliary field has no
    closed form.
    """
    if beta == 0.0:
        raise ValueError("beta must be nonzero")
    x, t = ad.x_input(), ad.t_input()
    return 4.0 * ad.atan(ad.exp(-beta * x - t / beta + delta))


def solution_jets(spec: SolutionSpec, xs, ts):
    """(re_jet, im_jet) dicts of arrays over many points (im None if real)."""
    exprs = field_exprs(spec)
    re = ad.eval_jet_arrays(exprs[0], xs, ts)
    im = ad.eval_jet_arrays(exprs[1], xs, ts) if len(exprs) == 2 else None
    return re, im


def eval_solution(spec: SolutionSpec, point) -> ad.ComplexJet:
    """Value and all supported derivatives of the closed form at one point."""
    x, t = point
    re, im = solution_jets(spec, [x], [t])
    re_jet = ad.Jet({mi: float(v[0]) for mi, v in re.items()})
    if im is None:
        im_jet = ad.Jet({mi: 0.0 for mi in re})
    else:
        im_jet = ad.Jet({mi: float(v[0]) for mi, v in im.items()})
    return ad.ComplexJet(re_jet, im_jet)


def miura_image(u_jet, kind: str):
    """Image value of a real jet under the Miura transform.

    complex kind: v = i*u_x + u^2 -> (u^2, u_x); real kind: v = u_x - u^2
    -> (u_x - u^2, 0).
    """
    u0, ux = u_jet[(0, 0)], u_jet[(1, 0)]
    if kind == "complex":
        return u0 * u0, ux
    if kind == "real":
        return ux - u0 * u0, 0.0 * np.asarray(ux)
    raise ValueError(f"unknown Miura kind {kind!r}")


def region_grid(region: Region, resolution=(101, 101)):
    xs = np.linspace(region.x_min, region.x_max, resolution[0])
    ts = np.linspace(region.t_min, region.t_max, resolution[1])
    X, T = np.meshgrid(xs, ts, indexing="ij")
    return X.ravel(), T.ravel()


def max_residual(spec: SolutionSpec, pde: rs.PdeId, region: Region = None,
                 resolution=(101, 101)) -> float:
    """Maximum |PDE residual| of the closed form over a grid."""
    region = region if region is not None else FAMILY_REGION[spec.family]
    X, T = region_grid(region, resolution)
    re, im = solution_jets(spec, X, T)
    jet = rs.CJet(re, im) if im is not None else re
    r_re, r_im = rs.pde_residual(pde, jet, rs.EXACT_COEFFS.get(pde.tag))
    m = float(np.max(np.abs(r_re)))
    if np.ndim(r_im) or r_im:
        m = max(m, float(np.max(np.abs(r_im))))
    return m


def latin_hypercube(n: int, region: Region, seed: int) -> np.ndarray:
    """n points, one per equal stratum in each dimension; (n, 2) array."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pts = np.empty((n, 2))
    for d, (lo, hi) in enumerate(((region.x_min, region.x_max),
                                  (region.t_min, region.t_max))):
        strata = (rng.permutation(n) + rng.uniform(size=n)) / n
        pts[:, d] = lo + (hi - lo) * strata
    return pts


def add_noise(values: np.ndarray, level: float, seed: int) -> np.ndarray:
    """values + level * std(values) * N(0,1); level 0 is the identity."""
    if level < 0:
        raise ValueError("noise level must be >= 0")
    values = np.asarray(values, dtype=np.float64)
    if level == 0.0:
        return values.copy()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    rng = np.random.default_rng(seed)
    return values + level * sigma * rng.standard_normal(values.shape)


@dataclass
class SampleSet:
    """Collocation points plus (possibly noisy) field samples."""

    points: np.ndarray                      # (n, 2) columns x, t
    fields: dict[str, np.ndarray]           # (n,) real or (n, 2) re/im
    specs: dict[str, dict] = field(default_factory=dict)
    noise_level: float = 0.0
    seed: int = 0

    def save(self, csv_path, sidecar_path=None) -> None:
        names = sorted(self.fields)
        cols = ["x", "t"]
        for name in names:
            arr = self.fields[name]
            cols += [name] if arr.ndim == 1 else [f"{name}_re", f"{name}_im"]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for i in range(self.points.shape[0]):
                row = [repr(self.points[i, 0]), repr(self.points[i, 1])]
                for name in names:
                    arr = self.fields[name]
                    vals = [arr[i]] if arr.ndim == 1 else list(arr[i])
                    row += [repr(float(v)) for v in vals]
                w.writerow(row)
        sidecar = sidecar_path or str(csv_path) + ".json"
        with open(sidecar, "w") as fh:
            json.dump({"specs": self.specs, "noise_level": self.noise_level,
                       "seed": self.seed,
                       "n_points": int(self.points.shape[0])}, fh, indent=1)

    @classmethod
    def load(cls, csv_path, sidecar_path=None) -> "SampleSet":
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], np.array(rows[1:], dtype=np.float64)
        points = data[:, :2]
        fields: dict[str, np.ndarray] = {}
        i = 2
        while i < len(header):
            name = header[i]
            if name.endswith("_re"):
                fields[name[:-3]] = np.stack([data[:, i], data[:, i + 1]], 1)
                i += 2
            else:
                fields[name] = data[:, i]
                i += 1
        sidecar = sidecar_path or str(csv_path) + ".json"
        with open(sidecar) as fh:
            meta = json.load(fh)
        return cls(points, fields, meta["specs"], meta["noise_level"],
                   meta["seed"])


def sample_solution(spec: SolutionSpec, points: np.ndarray) -> np.ndarray:
    """Clean field samples at the given points; (n,) or (n, 2) for complex."""
    xs, ts = points[:, 0], points[:, 1]
    exprs = field_exprs(spec)
    vals = [ad.eval_values(e, xs, ts) for e in exprs]
    return vals[0] if len(vals) == 1 else np.stack(vals, axis=1)
