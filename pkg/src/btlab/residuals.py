"""Parameterized residuals for every equation and transform in scope.

Residual formulas are written once over jet entries and coefficient values;
they evaluate equally on floats, numpy arrays and autodiff expressions, so
the same code path serves numeric verification oracles and loss-graph
construction with trainable coefficient slots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import autodiff as ad

PDE_TAGS = ("sine_gordon", "gen_sine_gordon", "focusing_mkdv",
            "defocusing_mkdv", "kdv", "gen_mkdv")

GEN_MKDV_MONOMIALS = ("u2ux", "uxxx", "uuxx", "u4")

COEFF_NAMES = ("a", "b", "c", "d", "h", "f", "beta")

# exact coefficient values of generalized forms that reduce to fixed equations
EXACT_COEFFS = {"gen_sine_gordon": {"a": 1.0, "b": 0.0}}


@dataclass(frozen=True)
class PdeId:
    """Equation identity; gen_mkdv carries an explicit coefficient-to-monomial map."""

    tag: str
    term_map: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.tag not in PDE_TAGS:
            raise ValueError(f"unknown pde tag {self.tag!r}")
        if self.tag == "gen_mkdv":
            if not self.term_map:
                raise ValueError("gen_mkdv requires a term map")
            for name, mono in self.term_map:
                if mono not in GEN_MKDV_MONOMIALS:
                    raise ValueError(f"unknown monomial {mono!r}")
                if name not in COEFF_NAMES:
                    raise ValueError(f"unknown coefficient {name!r}")
        elif self.term_map:
            raise ValueError("term_map is only meaningful for gen_mkdv")


# term maps used by the two generalized-mKdV variants
TERMS_VIA_MIURA = (("a", "u2ux"), ("b", "uxxx"), ("c", "uuxx"), ("d", "u4"))
TERMS_DT_BTE = (("a", "u2ux"), ("b", "uxxx"), ("c", "u4"), ("d", "uuxx"))


@dataclass(frozen=True)
class Coeff:
    """One named equation/transform coefficient."""

    init: float
    fixed: bool
    target: float


@dataclass
class EquationParams:
    """Named trainable coefficients with free/fixed mask and exact targets."""

    coeffs: dict[str, Coeff] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.coeffs:
            if name not in COEFF_NAMES:
                raise ValueError(f"unknown coefficient name {name!r}")

    def free_names(self) -> list[str]:
        return [n for n, c in self.coeffs.items() if not c.fixed]

    def targets(self) -> dict[str, float]:
        return {n: c.target for n, c in self.coeffs.items()}

    def inits(self) -> dict[str, float]:
        return {n: c.init for n, c in self.coeffs.items()}


class CJet:
    """Plain (re, im) jet-mapping pair; mirrors ComplexJet for array jets."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        self.re = re
        self.im = im


def _split(jet):
    if hasattr(jet, "re"):
        return jet.re, jet.im
    return jet, None


def _gen_mkdv_monomial(jet, mono):
    u = jet[(0, 0)]
    if mono == "u2ux":
        return u * u * jet[(1, 0)]
    if mono == "uxxx":
        return jet[(3, 0)]
    if mono == "uuxx":
        return u * jet[(2, 0)]
    return u ** 4


def pde_residual(pde: PdeId, jet, params=None):
    """Residual of the equation at current coefficient values; (re, im) pair.

    Fixed equations ignore params. Real equations on real jets return 0.0 in
    the imaginary component; the KdV residual accepts complex jets.
    """
    re, im = _split(jet)
    tag = pde.tag
    if tag == "sine_gordon":
        return re[(1, 1)] - ad.sin(re[(0, 0)]), 0.0
    if tag == "gen_sine_gordon":
        u = re[(0, 0)]
        return (re[(1, 1)] - params["a"] * ad.sin(u)
                - params["b"] * ad.cos(u)), 0.0
    if tag == "focusing_mkdv":
        u = re[(0, 0)]
        return re[(0, 1)] + 6.0 * u * u * re[(1, 0)] + re[(3, 0)], 0.0
    if tag == "defocusing_mkdv":
        u = re[(0, 0)]
        return re[(0, 1)] - 6.0 * u * u * re[(1, 0)] + re[(3, 0)], 0.0
    if tag == "gen_mkdv":
        r = re[(0, 1)]
        for name, mono in pde.term_map:
            r = r + params[name] * _gen_mkdv_monomial(re, mono)
        return r, 0.0
    # kdv: v_t + 6 v v_x + v_xxx, complex-capable
    vr, vxr, vtr, vrxxx = re[(0, 0)], re[(1, 0)], re[(0, 1)], re[(3, 0)]
    if im is None:
        return vtr + 6.0 * vr * vxr + vrxxx, 0.0
    vi, vxi, vti, vixxx = im[(0, 0)], im[(1, 0)], im[(0, 1)], im[(3, 0)]
    r_re = vtr + 6.0 * (vr * vxr - vi * vxi) + vrxxx
    r_im = vti + 6.0 * (vr * vxi + vi * vxr) + vixxx
    return r_re, r_im


def _coeff(params, name, default=0.0):
    try:
        return params[name]
    except KeyError:
        return default


def abt_residual(jet_u, jet_up, params):
    """Both residuals of the generalized sine-Gordon auto-Backlund transform.

    r_x = u'_x - a u_x + b sin((u+u')/2) - h u u_x
    r_t = u'_t + c u_t - d sin((u-u')/2) + f u u_t
    """
    u, up = jet_u[(0, 0)], jet_up[(0, 0)]
    ux, ut = jet_u[(1, 0)], jet_u[(0, 1)]
    r_x = (jet_up[(1, 0)] - params["a"] * ux
           + params["b"] * ad.sin((u + up) * 0.5)
           - _coeff(params, "h") * u * ux)
    r_t = (jet_up[(0, 1)] + params["c"] * ut
           - params["d"] * ad.sin((u - up) * 0.5)
           + _coeff(params, "f") * u * ut)
    return r_x, r_t


def abt_exact_params(beta: float) -> dict[str, float]:
    """Coefficients at which the generalized transform is the known one."""
    if beta == 0.0:
        raise ValueError("beta must be nonzero")
    return {"a": 1.0, "b": 2.0 * beta, "c": 1.0, "d": 2.0 / beta,
            "h": 0.0, "f": 0.0}


def miura_residual(jet_u, v_value, params, kind: str):
    """Residual of the generalized Miura transform; (re, im) pair.

    complex kind: (Re v - b u^2 - c u u_x - d u_xx, Im v - a u_x)
    real kind:    (v - a u_x - b u^2 - c u u_x - d u_xx, 0)
    """
    v_re, v_im = v_value
    u, ux, uxx = jet_u[(0, 0)], jet_u[(1, 0)], jet_u[(2, 0)]
    c = _coeff(params, "c")
    d = _coeff(params, "d")
    if kind == "complex":
        r_re = v_re - params["b"] * u * u - c * u * ux - d * uxx
        r_im = v_im - params["a"] * ux
        return r_re, r_im
    if kind == "real":
        r = (v_re - params["a"] * ux - params["b"] * u * u
             - c * u * ux - d * uxx)
        return r, 0.0
    raise ValueError(f"unknown Miura kind {kind!r}")


def bt_explicit_image(u0_spec, lam2: float, alpha2: float):
    """Closed-form one-step transform image: one-soliton -> two-soliton."""
    from . import solutions

    if u0_spec.family != "mkdv_one_soliton_dt":
        raise ValueError("explicit transform starts from mkdv_one_soliton_dt")
    p = u0_spec.p
    if lam2 <= p["lam1"]:
        raise ValueError("requires lam2 > lam1")
    return solutions.mkdv_two_soliton_dt(p["lam1"], lam2, p["alpha1"], alpha2)
