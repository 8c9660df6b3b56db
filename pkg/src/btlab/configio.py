"""Experiment config files: a strict, flat INI dialect.

Sections and keys are fixed per scheme; unknown sections or keys are errors
(experiment definitions are the scientific record, so typos must not pass
silently). Serialization is canonical — fixed section order, sorted keys,
full-precision floats — so parse -> serialize -> parse is idempotent and the
config hash is stable under key reordering in the source file.
"""

from __future__ import annotations

import configparser
import hashlib
from importlib import resources

from . import experiments as ex
from . import residuals as rs
from . import solutions as sol

_SECTIONS = ("experiment", "region", "sampling", "network", "optimizer",
             "fields", "equations", "coeffs", "report", "oracle")

_KEYS = {
    "experiment": {"name", "scheme", "fold", "transform", "beta"},
    "region": {"x_min", "x_max", "t_min", "t_max"},
    "sampling": {"points", "noise", "seed"},
    "network": {"hidden_layers", "width", "shared"},
    "optimizer": {"adam_steps", "adam_lr", "adam_beta1", "adam_beta2",
                  "adam_eps", "adam_batch", "lbfgs_max_iters", "lbfgs_memory",
                  "stag_atol"},
    "report": {"products"},
}

_FAMILY_PARAMS = {
    "sg_breather": ("k", "mu", "x0"),
    "mkdv_bright": ("k", "x0"),
    "kdv_complex_soliton": ("k", "x0"),
    "mkdv_kink": ("k", "x0"),
    "kdv_pedestal_soliton": ("k", "x0"),
    "mkdv_one_soliton_dt": ("lam1", "alpha1"),
    "mkdv_two_soliton_dt": ("lam1", "lam2", "alpha1", "alpha2"),
}


class ConfigParseError(ex.ConfigError):
    pass


def _tokens(value: str):
    head, kv = [], {}
    for tok in value.split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            kv[k] = v
        else:
            head.append(tok)
    return head, kv


def _floats(kv: dict, context: str) -> dict:
    out = {}
    for k, v in kv.items():
        try:
            out[k] = float(v)
        except ValueError as err:
            raise ConfigParseError(f"{context}: bad number {v!r} for {k}") from err
    return out


def _parse_solution(head, kv, context) -> sol.SolutionSpec:
    family = head[0]
    if family not in _FAMILY_PARAMS:
        raise ConfigParseError(f"{context}: unknown solution family {family!r}")
    params = _floats(kv, context)
    allowed = set(_FAMILY_PARAMS[family])
    unknown = set(params) - allowed
    if unknown:
        raise ConfigParseError(f"{context}: unknown parameters {sorted(unknown)}")
    try:
        return sol.SolutionSpec(family, tuple(sorted(params.items())))
    except ValueError as err:
        raise ConfigParseError(f"{context}: {err}") from err


def _parse_field(name, value, fields_so_far) -> ex.FieldCfg:
    head, kv = _tokens(value)
    ctx = f"field {name!r}"
    if not head:
        raise ConfigParseError(f"{ctx}: empty definition")
    role = head[0]
    if role == "free":
        exact = None
        if len(head) > 2 and head[1] == "exact":
            exact = _parse_solution(head[2:], kv, ctx)
        elif len(head) > 1:
            raise ConfigParseError(f"{ctx}: expected 'free [exact <family> ...]'")
        return ex.FieldCfg(name, data=None, exact=exact)
    if role == "data":
        if len(head) < 2:
            raise ConfigParseError(f"{ctx}: 'data' needs a solution family")
        if head[1] == "bt_image":
            of = kv.pop("of", None)
            lam2 = kv.pop("lam2", None)
            alpha2 = kv.pop("alpha2", None)
            if of is None or lam2 is None or alpha2 is None:
                raise ConfigParseError(
                    f"{ctx}: bt_image needs of=<field> lam2=... alpha2=...")
            src = {f.name: f for f in fields_so_far}.get(of)
            if src is None or src.data is None:
                raise ConfigParseError(f"{ctx}: bt_image source {of!r} not found")
            spec = rs.bt_explicit_image(src.data, float(lam2), float(alpha2))
            return ex.FieldCfg(name, data=spec)
        return ex.FieldCfg(name, data=_parse_solution(head[1:], kv, ctx))
    raise ConfigParseError(f"{ctx}: unknown role {role!r}")


def _parse_equation(name, value) -> rs.PdeId:
    head, kv = _tokens(value)
    tag = head[0]
    if tag == "gen_mkdv":
        terms = kv.pop("terms", None)
        if terms is None:
            raise ConfigParseError(f"equation for {name!r}: gen_mkdv needs terms=")
        tm = []
        for part in terms.split(","):
            cname, mono = part.split(":")
            tm.append((cname, mono))
        return rs.PdeId(tag, tuple(tm))
    if kv or len(head) > 1:
        raise ConfigParseError(f"equation for {name!r}: unexpected tokens")
    return rs.PdeId(tag)


def _parse_coeff(name, value) -> rs.Coeff:
    head, kv = _tokens(value)
    ctx = f"coefficient {name!r}"
    kind = head[0] if head else ""
    vals = _floats(kv, ctx)
    if kind == "free":
        unknown = set(vals) - {"init", "target"}
        if unknown:
            raise ConfigParseError(f"{ctx}: unknown keys {sorted(unknown)}")
        return rs.Coeff(init=vals.get("init", 1.0), fixed=False,
                        target=vals["target"])
    if kind == "fixed":
        unknown = set(vals) - {"value", "target"}
        if unknown:
            raise ConfigParseError(f"{ctx}: unknown keys {sorted(unknown)}")
        value = vals.get("value", 0.0)
        return rs.Coeff(init=value, fixed=True, target=vals.get("target", value))
    raise ConfigParseError(f"{ctx}: expected 'free' or 'fixed'")


def _parse_oracle(value):
    head, kv = _tokens(value)
    if head[0] == "zero":
        return ("zero",)
    if head[0] == "abt_kink":
        vals = _floats(kv, "oracle abt_kink")
        return ("abt_kink", vals.get("beta", 1.0), vals.get("delta", 0.0))
    return ("solution", _parse_solution(head, kv, "oracle"))


def _fmt_oracle(orc) -> str:
    if orc[0] == "zero":
        return "zero"
    if orc[0] == "abt_kink":
        return f"abt_kink beta={orc[1]!r} delta={orc[2]!r}"
    return _fmt_solution(orc[1])


def parse_config(text: str) -> ex.ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigParseError(f"malformed config: {err}") from err
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigParseError(f"unknown section [{section}]")
        if section in _KEYS:
            unknown = set(cp[section]) - _KEYS[section]
            if unknown:
                raise ConfigParseError(
                    f"unknown keys {sorted(unknown)} in [{section}]")
    for required in ("experiment", "region", "sampling", "network",
                     "optimizer", "fields", "equations", "coeffs"):
        if required not in cp:
            raise ConfigParseError(f"missing section [{required}]")

    e = cp["experiment"]
    scheme = ex.SchemeId(e.get("scheme"),
                         int(e["fold"]) if "fold" in e else None)
    fields: list[ex.FieldCfg] = []
    for name, value in cp["fields"].items():
        fields.append(_parse_field(name, value, fields))
    equations = {}
    for name, value in cp["equations"].items():
        equations[name] = _parse_equation(name, value)
    field_names = {f.name for f in fields}
    if set(equations) != field_names:
        raise ConfigParseError("equations must cover exactly the fields")
    oracle = {}
    if "oracle" in cp:
        for name, value in cp["oracle"].items():
            if name not in field_names:
                raise ConfigParseError(f"oracle for unknown field {name!r}")
            oracle[name] = _parse_oracle(value)
    import dataclasses
    fields = [dataclasses.replace(f, equation=equations[f.name],
                                  oracle=oracle.get(f.name))
              for f in fields]

    coeffs = tuple((name, _parse_coeff(name, value))
                   for name, value in cp["coeffs"].items())
    products = []
    if "report" in cp and "products" in cp["report"]:
        for part in cp["report"]["products"].split(","):
            expr, target = part.split("=")
            n1, n2 = expr.split("*")
            products.append((n1.strip(), n2.strip(), float(target)))

    r = cp["region"]
    s = cp["sampling"]
    n = cp["network"]
    o = cp["optimizer"]
    try:
        return ex.ExperimentConfig(
            name=e.get("name"),
            scheme=scheme,
            transform=e.get("transform", fallback=None),
            beta=float(e.get("beta", fallback="1.0")),
            fields=tuple(fields),
            coeffs=coeffs,
            region=sol.Region(float(r["x_min"]), float(r["x_max"]),
                              float(r["t_min"]), float(r["t_max"])),
            n_points=int(s["points"]),
            noise=float(s.get("noise", fallback="0.0")),
            seed=int(s["seed"]),
            network=ex.NetworkCfg(int(n["hidden_layers"]), int(n["width"]),
                                  n.get("shared", fallback="true").lower()
                                  == "true"),
            optimizer=ex.OptimCfg(
                adam_steps=int(o["adam_steps"]),
                adam_lr=float(o.get("adam_lr", fallback="1e-3")),
                adam_beta1=float(o.get("adam_beta1", fallback="0.9")),
                adam_beta2=float(o.get("adam_beta2", fallback="0.999")),
                adam_eps=float(o.get("adam_eps", fallback="1e-8")),
                adam_batch=int(o.get("adam_batch", fallback="0")),
                lbfgs_max_iters=int(o.get("lbfgs_max_iters", fallback="0")),
                lbfgs_memory=int(o.get("lbfgs_memory", fallback="10")),
                stag_atol=float(o.get("stag_atol", fallback="0.0"))),
            products=tuple(products),
        )
    except (KeyError, ValueError) as err:
        if isinstance(err, ex.ConfigError):
            raise
        raise ConfigParseError(f"invalid config: {err!r}") from err


def _fmt_solution(spec: sol.SolutionSpec) -> str:
    parts = [spec.family]
    parts += [f"{k}={v!r}" for k, v in sorted(spec.params)]
    return " ".join(parts)


def serialize_config(cfg: ex.ExperimentConfig) -> str:
    lines = ["[experiment]", f"name = {cfg.name}", f"scheme = {cfg.scheme.tag}"]
    if cfg.scheme.fold is not None:
        lines.append(f"fold = {cfg.scheme.fold}")
    if cfg.transform is not None:
        lines.append(f"transform = {cfg.transform}")
    lines.append(f"beta = {cfg.beta!r}")
    rg = cfg.region
    lines += ["", "[region]", f"x_min = {rg.x_min!r}", f"x_max = {rg.x_max!r}",
              f"t_min = {rg.t_min!r}", f"t_max = {rg.t_max!r}"]
    lines += ["", "[sampling]", f"points = {cfg.n_points}",
              f"noise = {cfg.noise!r}", f"seed = {cfg.seed}"]
    nw = cfg.network
    lines += ["", "[network]", f"hidden_layers = {nw.hidden_layers}",
              f"width = {nw.width}", f"shared = {str(nw.shared).lower()}"]
    o = cfg.optimizer
    lines += ["", "[optimizer]", f"adam_steps = {o.adam_steps}",
              f"adam_lr = {o.adam_lr!r}", f"adam_beta1 = {o.adam_beta1!r}",
              f"adam_beta2 = {o.adam_beta2!r}", f"adam_eps = {o.adam_eps!r}",
              f"adam_batch = {o.adam_batch}",
              f"lbfgs_max_iters = {o.lbfgs_max_iters}",
              f"lbfgs_memory = {o.lbfgs_memory}",
              f"stag_atol = {o.stag_atol!r}"]
    lines += ["", "[fields]"]
    for f in cfg.fields:
        if f.data is not None:
            lines.append(f"{f.name} = data {_fmt_solution(f.data)}")
        elif f.exact is not None:
            lines.append(f"{f.name} = free exact {_fmt_solution(f.exact)}")
        else:
            lines.append(f"{f.name} = free")
    lines += ["", "[equations]"]
    for f in cfg.fields:
        eq = f.equation
        if eq.tag == "gen_mkdv":
            terms = ",".join(f"{n}:{m}" for n, m in eq.term_map)
            lines.append(f"{f.name} = gen_mkdv terms={terms}")
        else:
            lines.append(f"{f.name} = {eq.tag}")
    lines += ["", "[coeffs]"]
    for name, c in cfg.coeffs:
        if c.fixed:
            lines.append(f"{name} = fixed value={c.init!r} target={c.target!r}")
        else:
            lines.append(f"{name} = free init={c.init!r} target={c.target!r}")
    if cfg.products:
        prods = ",".join(f"{a}*{b}={t!r}" for a, b, t in cfg.products)
        lines += ["", "[report]", f"products = {prods}"]
    orc_lines = [f"{f.name} = {_fmt_oracle(f.oracle)}" for f in cfg.fields
                 if f.oracle is not None]
    if orc_lines:
        lines += ["", "[oracle]"] + orc_lines
    return "\n".join(lines) + "\n"


def config_hash(cfg: ex.ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def shipped_names() -> list[str]:
    root = resources.files("btlab").joinpath("configs")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config(name_or_path) -> ex.ExperimentConfig:
    """Resolve a shipped config name, else read a filesystem path."""
    name = str(name_or_path)
    root = resources.files("btlab").joinpath("configs")
    packaged = root.joinpath(name + ".cfg")
    if not name.endswith(".cfg") and "/" not in name and packaged.is_file():
        return parse_config(packaged.read_text())
    with open(name) as fh:
        return parse_config(fh.read())
