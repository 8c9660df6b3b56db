"""Experiment assembly: schemes, losses, training runs and reported metrics.

A scheme wires networks, closed-form data, equation residuals and transform
residuals into one loss graph whose parts are tracked individually. Training
follows the two-phase schedule (Adam, then L-BFGS to stagnation). The
exact-substitution mode replaces networks by closed forms and coefficients by
their exact targets, which validates the residual wiring of every shipped
configuration without any training.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from . import network as nw
from . import optim
from . import residuals as rs
from . import solutions as sol

SCHEME_TAGS = ("bt_discovery", "equation_via_bt", "bte_explicit",
               "bte_implicit", "pinn_baseline")
TRANSFORMS = ("abt", "miura_complex", "miura_real")


class ConfigError(ValueError):
    """Inconsistent or invalid experiment configuration."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class SchemeId:
    tag: str
    fold: int | None = None

    def __post_init__(self):
        if self.tag not in SCHEME_TAGS:
            raise ConfigError(f"unknown scheme {self.tag!r}")
        if self.tag.startswith("bte_"):
            if self.fold not in (1, 2):
                raise ConfigError("bte schemes require fold 1 or 2")
            if self.tag == "bte_explicit" and self.fold != 1:
                raise ConfigError(
                    "bte_explicit supports fold 1 only (no closed-form "
                    "second transform image is available)")
        elif self.fold is not None:
            raise ConfigError("fold is only meaningful for bte schemes")


@dataclass(frozen=True)
class FieldCfg:
    """One scalar (or complex, two-output) field of an experiment."""

    name: str
    data: sol.SolutionSpec | None = None     # training-data source
    exact: sol.SolutionSpec | None = None    # report reference if no data
    equation: rs.PdeId | None = None
    oracle: tuple | None = None              # exact-substitution source

    @property
    def reference(self) -> sol.SolutionSpec | None:
        return self.data if self.data is not None else self.exact

    @property
    def is_complex(self) -> bool:
        ref = self.reference
        return ref.is_complex if ref is not None else False


@dataclass(frozen=True)
class NetworkCfg:
    hidden_layers: int
    width: int
    shared: bool = True


@dataclass(frozen=True)
class OptimCfg:
    adam_steps: int
    adam_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    adam_batch: int = 0          # 0 = full batch
    lbfgs_max_iters: int = 0
    lbfgs_memory: int = 10
    stag_atol: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    scheme: SchemeId
    fields: tuple[FieldCfg, ...]
    coeffs: tuple[tuple[str, rs.Coeff], ...]
    region: sol.Region
    n_points: int
    noise: float
    network: NetworkCfg
    optimizer: OptimCfg
    seed: int
    transform: str | None = None
    beta: float = 1.0
    products: tuple[tuple[str, str, float], ...] = ()

    def __post_init__(self):
        if self.transform is not None and self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r}")
        if self.n_points < 1:
            raise ConfigError("n_points must be >= 1")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ConfigError("field names must be unique")
        _validate_scheme(self)

    @property
    def params(self) -> rs.EquationParams:
        return rs.EquationParams(dict(self.coeffs))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        import dataclasses
        return dataclasses.replace(self, **kw)


def _validate_scheme(cfg: ExperimentConfig):
    tag = cfg.scheme.tag
    data_fields = [f for f in cfg.fields if f.data is not None]
    if tag == "bt_discovery":
        if cfg.transform is None:
            raise ConfigError("bt_discovery requires a transform")
        if not data_fields:
            raise ConfigError("bt_discovery requires at least one data field")
        if len(cfg.fields) != 2:
            raise ConfigError("bt_discovery couples exactly two fields")
    elif tag == "equation_via_bt":
        if cfg.transform is None:
            raise ConfigError("equation_via_bt requires a transform")
        if len(cfg.fields) != 2 or cfg.fields[1].data is None:
            raise ConfigError(
                "equation_via_bt needs (unknown field, data field)")
        if cfg.fields[0].data is not None:
            raise ConfigError(
                "equation_via_bt omits the data loss of the unknown field")
    elif tag == "bte_explicit":
        if len(cfg.fields) != 2 or any(f.data is None for f in cfg.fields):
            raise ConfigError("bte_explicit needs two data-bearing fields")
    elif tag == "bte_implicit":
        want = 1 + cfg.scheme.fold
        if len(cfg.fields) != want:
            raise ConfigError(f"bte_implicit fold {cfg.scheme.fold} needs "
                              f"{want} fields")
        if cfg.fields[0].data is None:
            raise ConfigError("bte_implicit needs data for the base field")
        if cfg.transform != "abt":
            raise ConfigError("bte_implicit uses the abt transform")
    elif tag == "pinn_baseline":
        if len(cfg.fields) != 1 or cfg.fields[0].data is None:
            raise ConfigError("pinn_baseline needs one data-bearing field")
    for f in cfg.fields:
        if f.equation is None:
            raise ConfigError(f"field {f.name!r} has no equation")


def _jetmap(expr: ad.Expr) -> dict:
    return {mi: ad.deriv(expr, mi) for mi in ad.SUPPORTED_INDICES}


def _msq(*components) -> ad.Expr:
    total = None
    for c in components:
        if isinstance(c, (int, float)) and c == 0.0:
            continue
        sq = c * c
        total = sq if total is None else total + sq
    return ad.mean(total)


def _oracle_exprs(fld: FieldCfg, beta: float) -> tuple[ad.Expr, ...]:
    orc = fld.oracle
    if orc is None:
        ref = fld.reference
        if ref is None:
            raise ConfigError(
                f"field {fld.name!r} has no closed form for exact substitution")
        return sol.field_exprs(ref)
    if orc[0] == "zero":
        return (ad.const(0.0),)
    if orc[0] == "abt_kink":
        return (sol.abt_kink_expr(orc[1], orc[2]),)
    if orc[0] == "solution":
        return sol.field_exprs(orc[1])
    raise ConfigError(f"unknown oracle source {orc!r}")


def _sample_from_exprs(exprs, xs, ts) -> np.ndarray:
    vals = [ad.eval_values(e, xs, ts) for e in exprs]
    return vals[0] if len(vals) == 1 else np.stack(vals, axis=1)


class Experiment:
    """A built experiment: loss graph, data, trainable parameter store."""

    def __init__(self, config: ExperimentConfig, substitute_exact=False):
        self.config = config
        self.substitute_exact = substitute_exact
        cfg = config
        seeds = np.random.SeedSequence(cfg.seed).generate_state(
            3 + 2 * len(cfg.fields))
        pts = sol.latin_hypercube(cfg.n_points, cfg.region, seeds[0])
        self.points = pts
        self.xs, self.ts = pts[:, 0].copy(), pts[:, 1].copy()
        self.store = ad.Params()
        self.nets: list[nw.Mlp] = []
        noise = 0.0 if substitute_exact else cfg.noise

        # field expressions: networks, or closed forms in oracle mode
        self.field_exprs: dict[str, tuple[ad.Expr, ...]] = {}
        widths = [2 if f.is_complex else 1 for f in cfg.fields]
        # normalize network inputs to [-1, 1] over the experiment region
        rg = cfg.region
        scale = ((2.0 / (rg.x_max - rg.x_min),
                  -(rg.x_max + rg.x_min) / (rg.x_max - rg.x_min)),
                 (2.0 / (rg.t_max - rg.t_min),
                  -(rg.t_max + rg.t_min) / (rg.t_max - rg.t_min)))
        if substitute_exact:
            for f in cfg.fields:
                self.field_exprs[f.name] = _oracle_exprs(f, cfg.beta)
        elif cfg.network.shared:
            spec = nw.MlpSpec(cfg.network.hidden_layers, cfg.network.width,
                              outputs=sum(widths), seed=int(seeds[1]))
            net = nw.mlp_new(spec, self.store, input_scale=scale)
            self.nets.append(net)
            at = 0
            for f, w in zip(cfg.fields, widths):
                self.field_exprs[f.name] = net.outputs[at:at + w]
                at += w
        else:
            for i, (f, w) in enumerate(zip(cfg.fields, widths)):
                spec = nw.MlpSpec(cfg.network.hidden_layers,
                                  cfg.network.width, outputs=w,
                                  seed=int(seeds[1]) + i)
                net = nw.mlp_new(spec, self.store, name=f"net_{f.name}",
                                 input_scale=scale)
                self.nets.append(net)
                self.field_exprs[f.name] = net.outputs

        # coefficient slots (free) or constants (fixed / oracle mode)
        params = cfg.params
        self.coeff_slots: dict[str, int] = {}
        self.coeff_exprs: dict[str, ad.Expr] = {}
        for name, c in cfg.coeffs:
            if substitute_exact or c.fixed:
                value = c.target if substitute_exact else c.init
                self.coeff_exprs[name] = ad.const(value)
            else:
                slot = self.store.add(f"coeff.{name}", c.init)
                self.coeff_slots[name] = slot
                self.coeff_exprs[name] = ad.param(self.store, slot)
        self.free_names = [n for n in params.free_names()]
        self.targets = params.targets()

        # training data (noise on data-bearing fields only, never coordinates)
        self.data: dict[str, np.ndarray] = {}
        data_exprs = {}
        if substitute_exact:
            data_exprs = {f.name: self.field_exprs[f.name]
                          for f in cfg.fields if f.data is not None}
        for i, f in enumerate(cfg.fields):
            if f.data is None:
                continue
            if substitute_exact:
                clean = _sample_from_exprs(data_exprs[f.name], self.xs, self.ts)
            else:
                clean = sol.sample_solution(f.data, pts)
            if clean.ndim == 1:
                noisy = sol.add_noise(clean, noise, int(seeds[3 + 2 * i]))
            else:
                noisy = np.stack(
                    [sol.add_noise(clean[:, j], noise,
                                   int(seeds[3 + 2 * i]) + j)
                     for j in range(clean.shape[1])], axis=1)
            self.data[f.name] = noisy

        self._assemble_loss()
        roots = [self.total] + [self.parts[k] for k in sorted(self.parts)]
        self.evaluator = ad.Evaluator(roots)
        self._field_eval: ad.Evaluator | None = None
        self._last_ws = None

    # -- loss assembly -----------------------------------------------------

    def _field_jets(self, name: str):
        exprs = self.field_exprs[name]
        re = _jetmap(exprs[0])
        im = _jetmap(exprs[1]) if len(exprs) == 2 else None
        return re, im

    def _data_part(self, f: FieldCfg) -> ad.Expr:
        exprs = self.field_exprs[f.name]
        vals = self.data[f.name]
        if len(exprs) == 1:
            return _msq(ad.deriv(exprs[0], (0, 0)) - ad.point_data(vals))
        return _msq(ad.deriv(exprs[0], (0, 0)) - ad.point_data(vals[:, 0]),
                    ad.deriv(exprs[1], (0, 0)) - ad.point_data(vals[:, 1]))

    def _equation_part(self, f: FieldCfg) -> ad.Expr:
        re, im = self._field_jets(f.name)
        jet = rs.CJet(re, im) if im is not None else re
        r_re, r_im = rs.pde_residual(f.equation, jet, self.coeff_exprs)
        return _msq(r_re, r_im)

    def _transform_parts(self) -> dict[str, ad.Expr]:
        cfg = self.config
        tag = cfg.scheme.tag
        parts: dict[str, ad.Expr] = {}
        if tag in ("bte_explicit", "pinn_baseline"):
            return parts
        if cfg.transform == "abt":
            if tag == "bt_discovery":
                u, _ = self._field_jets(cfg.fields[0].name)
                up, _ = self._field_jets(cfg.fields[1].name)
                rx, rt = rs.abt_residual(u, up, self.coeff_exprs)
                parts["bt_x"] = _msq(rx)
                parts["bt_t"] = _msq(rt)
            else:  # bte_implicit: fixed known transform, per fold
                exact = rs.abt_exact_params(cfg.beta)
                cexact = {k: ad.const(v) for k, v in exact.items()}
                for j in range(cfg.scheme.fold):
                    u, _ = self._field_jets(cfg.fields[j].name)
                    up, _ = self._field_jets(cfg.fields[j + 1].name)
                    rx, rt = rs.abt_residual(u, up, cexact)
                    parts[f"bt_x_{j + 1}"] = _msq(rx)
                    parts[f"bt_t_{j + 1}"] = _msq(rt)
            return parts
        # Miura transforms couple (u, v); free coefficients only in discovery
        kind = "complex" if cfg.transform == "miura_complex" else "real"
        uf, vf = cfg.fields
        u, _ = self._field_jets(uf.name)
        vre, vim = self._field_jets(vf.name)
        v_val = (vre[(0, 0)], vim[(0, 0)] if vim is not None else 0.0)
        if cfg.scheme.tag == "bt_discovery":
            coeffs = self.coeff_exprs
        else:
            coeffs = {"a": 1.0, "b": 1.0 if kind == "complex" else -1.0,
                      "c": 0.0, "d": 0.0}
        r_re, r_im = rs.miura_residual(u, v_val, coeffs, kind)
        parts["miura"] = _msq(r_re, r_im)
        return parts

    def _assemble_loss(self):
        cfg = self.config
        parts: dict[str, ad.Expr] = {}
        groups: dict[str, list[str]] = {}
        for f in cfg.fields:
            if f.data is not None:
                parts[f"data_{f.name}"] = self._data_part(f)
            parts[f"eq_{f.name}"] = self._equation_part(f)
        parts.update(self._transform_parts())

        tag = cfg.scheme.tag
        f0 = cfg.fields[0].name
        if tag == "bt_discovery":
            f1 = cfg.fields[1].name
            groups["TL_T"] = [k for k in parts if k.startswith(("bt_", "miura"))]
            groups["TL_F"] = [k for k in (f"data_{f0}", f"eq_{f0}") if k in parts]
            groups["TL_G"] = [k for k in (f"data_{f1}", f"eq_{f1}") if k in parts]
        elif tag == "equation_via_bt":
            f1 = cfg.fields[1].name
            groups["TL_T"] = ["miura"]
            groups["TL_F"] = [f"eq_{f0}"]
            groups["TL_G"] = [f"data_{f1}", f"eq_{f1}"]
        elif tag == "bte_explicit":
            groups["TL_u0"] = [f"data_{f0}"]
            groups["TL_BT"] = [f"data_{cfg.fields[1].name}"]
            groups["TL_F"] = [f"eq_{f.name}" for f in cfg.fields]
        elif tag == "bte_implicit":
            groups["TL_u0"] = [f"data_{f0}"]
            groups["TL_BT"] = [k for k in parts if k.startswith("bt_")]
            groups["TL_F"] = [f"eq_{f.name}" for f in cfg.fields]
        else:
            groups["TL_u0"] = [f"data_{f0}"]
            groups["TL_F"] = [f"eq_{f0}"]

        self.parts = parts
        self.groups = groups
        total = None
        for key in sorted(parts):
            total = parts[key] if total is None else total + parts[key]
        self.total = total

    # -- evaluation ----------------------------------------------------------

    def loss_and_grad(self, vec=None, sel=None):
        if vec is not None:
            self.store.values[:] = vec
        xs, ts = (self.xs, self.ts) if sel is None else (self.xs[sel],
                                                         self.ts[sel])
        val, grad, ws = ad.value_and_grad(self.evaluator, self.total, xs, ts,
                                          sel=sel)
        self._last_ws = ws
        return val, grad

    def part_values(self, vec=None) -> dict[str, float]:
        if vec is not None or self._last_ws is None:
            if vec is not None:
                self.store.values[:] = vec
            self._last_ws = self.evaluator.forward(self.xs, self.ts)
        ws = self._last_ws
        return {k: float(ws[e.id][0, 0, 0]) for k, e in self.parts.items()}

    def total_value(self) -> float:
        ws = self._last_ws or self.evaluator.forward(self.xs, self.ts)
        return float(ws[self.total.id][0, 0, 0])

    def coeff_values(self) -> dict[str, float]:
        out = {}
        for name, c in self.config.coeffs:
            if name in self.coeff_slots:
                out[name] = float(self.store.values[self.coeff_slots[name]])
            else:
                out[name] = c.target if self.substitute_exact else c.init
        return out

    def field_grid(self, name: str, xs, ts) -> np.ndarray:
        exprs = self.field_exprs[name]
        vals = [ad.eval_values(e, xs, ts) for e in exprs]
        return vals[0] if len(vals) == 1 else np.stack(vals, axis=1)


def build_experiment(config: ExperimentConfig,
                     substitute_exact: bool = False) -> Experiment:
    """Assemble the loss, data and parameter store for one experiment."""
    return Experiment(config, substitute_exact=substitute_exact)


def relative_l2_error(pred, exact) -> float:
    """||pred - exact||_2 / ||exact||_2 over equal-shaped grids."""
    pred = np.asarray(pred, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    if pred.shape != exact.shape:
        raise ValueError("grids must have equal shapes")
    denom = float(np.linalg.norm(exact))
    if denom == 0.0:
        raise ValueError("exact grid has zero norm")
    return float(np.linalg.norm(pred - exact) / denom)


@dataclass
class TrainReport:
    name: str
    seed: int
    scheme: str
    coefficients: dict              # name -> learned/target/error/fixed
    derived: dict                   # e.g. "b*d" -> value/target/error
    l2_errors: dict                 # field (or field_re/_im) -> rel L2
    loss_total: float
    loss_parts: dict
    loss_groups: dict
    wall_time_s: float
    n_trace_rows: int
    trace: list = dc_field(default_factory=list, repr=False)

    def max_free_error(self) -> float:
        errs = [v["error"] for v in self.coefficients.values()
                if not v["fixed"]]
        return max(errs) if errs else 0.0

    def to_dict(self) -> dict:
        return {"schema_version": 1, "name": self.name, "seed": self.seed,
                "scheme": self.scheme, "coefficients": self.coefficients,
                "derived": self.derived, "l2_errors": self.l2_errors,
                "loss": {"total": self.loss_total, "parts": self.loss_parts,
                         "groups": self.loss_groups},
                "wall_time_s": self.wall_time_s,
                "n_trace_rows": self.n_trace_rows}


def _trace_header(exp: Experiment) -> list[str]:
    return (["phase", "iteration", "loss"]
            + [f"loss_{k}" for k in sorted(exp.parts)]
            + [f"coeff_{n}" for n in exp.free_names])


def _trace_row(exp, phase, it, loss) -> list:
    parts = exp.part_values()
    coeffs = exp.coeff_values()
    return ([phase, it, loss] + [parts[k] for k in sorted(exp.parts)]
            + [coeffs[n] for n in exp.free_names])


def run_experiment(config: ExperimentConfig,
                   report_grid=(101, 101)) -> TrainReport:
    """Train one experiment to its schedule; deterministic per seed."""
    t0 = time.perf_counter()
    exp = build_experiment(config)
    ocfg = config.optimizer
    vec = exp.store.values.copy()
    trace: list[list] = []
    rng = np.random.default_rng(
        np.random.SeedSequence(config.seed).generate_state(3)[2])
    n = config.n_points
    batch = min(ocfg.adam_batch or n, n)

    state = optim.AdamState(lr=ocfg.adam_lr, beta1=ocfg.adam_beta1,
                            beta2=ocfg.adam_beta2, eps=ocfg.adam_eps)
    try:
        for it in range(ocfg.adam_steps):
            sel = None if batch >= n else rng.choice(n, batch, replace=False)
            f, g = exp.loss_and_grad(vec, sel=sel)
            trace.append(_trace_row(exp, "adam", it, f))
            vec = optim.adam_step(vec, g, state)
    except (ad.NonFiniteError, ArithmeticError) as err:
        raise DivergenceError(f"Adam diverged: {err}", trace) from err

    if ocfg.lbfgs_max_iters > 0:
        def loss_fn(v):
            f, g = exp.loss_and_grad(v)
            return f, g

        def cb(it, xv, fv, gv):
            trace.append(_trace_row(exp, "lbfgs", it, fv))

        try:
            res = optim.lbfgs_minimize(
                loss_fn, vec,
                optim.LbfgsOptions(memory=ocfg.lbfgs_memory,
                                   max_iters=ocfg.lbfgs_max_iters,
                                   stag_atol=ocfg.stag_atol),
                callback=cb)
        except (ad.NonFiniteError, ArithmeticError) as err:
            raise DivergenceError(f"L-BFGS diverged: {err}", trace) from err
        vec = res.x

    # final state and report
    exp.store.values[:] = vec
    final_loss, _ = exp.loss_and_grad(vec)
    parts = exp.part_values()
    if not np.isfinite(final_loss):
        raise DivergenceError("final loss non-finite", trace)
    groups = {g: float(sum(parts[k] for k in ks))
              for g, ks in exp.groups.items()}
    coeffs = exp.coeff_values()
    targets = exp.targets
    coeff_report = {}
    for name, c in config.coeffs:
        coeff_report[name] = {
            "learned": coeffs[name], "target": targets[name],
            "error": abs(coeffs[name] - targets[name]), "fixed": c.fixed}
    derived = {}
    for n1, n2, target in config.products:
        val = coeffs[n1] * coeffs[n2]
        derived[f"{n1}*{n2}"] = {"value": val, "target": target,
                                 "error": abs(val - target)}
    X, T = sol.region_grid(config.region, report_grid)
    l2 = {}
    for f in config.fields:
        ref = f.reference
        if ref is None:
            continue
        pred = exp.field_grid(f.name, X, T)
        exact = sol.sample_solution(ref, np.stack([X, T], axis=1))
        if pred.ndim == 1:
            l2[f.name] = relative_l2_error(pred, exact)
        else:
            l2[f"{f.name}_re"] = relative_l2_error(pred[:, 0], exact[:, 0])
            l2[f"{f.name}_im"] = relative_l2_error(pred[:, 1], exact[:, 1])
    report = TrainReport(
        name=config.name, seed=config.seed, scheme=config.scheme.tag,
        coefficients=coeff_report, derived=derived, l2_errors=l2,
        loss_total=float(final_loss),
        loss_parts={k: float(v) for k, v in parts.items()},
        loss_groups=groups, wall_time_s=time.perf_counter() - t0,
        n_trace_rows=len(trace), trace=trace)
    report.trace_header = _trace_header(exp)
    report.experiment = exp
    return report


def compare_schemes(config_a: ExperimentConfig, config_b: ExperimentConfig,
                    seeds) -> dict:
    """Per-seed max |coefficient error| for both schemes plus win fraction.

    Win fraction is for scheme A; exact ties count 0.5 each.
    """
    pa, pb = dict(config_a.coeffs), dict(config_b.coeffs)
    free_a = {n for n, c in pa.items() if not c.fixed}
    free_b = {n for n, c in pb.items() if not c.fixed}
    if free_a != free_b or any(pa[n].target != pb[n].target for n in free_a):
        raise ConfigError("configs do not target the same free coefficients")
    rows = []
    score = 0.0
    for s in seeds:
        ra = run_experiment(config_a.with_overrides(seed=int(s)))
        rb = run_experiment(config_b.with_overrides(seed=int(s)))
        ea, eb = ra.max_free_error(), rb.max_free_error()
        if ea < eb:
            winner, pts = config_a.name, 1.0
        elif eb < ea:
            winner, pts = config_b.name, 0.0
        else:
            winner, pts = "tie", 0.5
        score += pts
        rows.append({"seed": int(s), "error_a": ea, "error_b": eb,
                     "winner": winner})
    return {"a": config_a.name, "b": config_b.name, "rows": rows,
            "win_fraction_a": score / len(rows) if rows else 0.5}
