"""Pipeline configuration: flat ``section.key = value`` text files.

Blank lines are ignored and ``#`` starts a comment (at line start or after
whitespace).  Keys without a section (``output_dir``, ``master_seed``) are
top-level.  Relative paths are resolved against the directory of the config
file.  Every error names the offending
line so a bad key can be fixed without guessing.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable

from .centrality import SolverConfig
from .epidemic import DEFAULT_TAUS, EpiParams
from .gbt import GbtParams
from .netgen import GenParams, GenParamsError, IntDist


class ConfigError(ValueError):
    pass


@dataclass
class Entry:
    value: str
    where: str


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int(text: str) -> int:
    return int(text.strip())


def _float(text: str) -> float:
    return float(text.strip())


def _str(text: str) -> str:
    return text.strip()


def _tau_policy(text: str) -> float | None:
    t = text.strip().lower()
    return None if t == "auto" else float(t)


_GEN_TYPES: dict[str, Callable] = {
    "n_students": _int,
    "two_parent_share": _float,
    "cohabit_share": _float,
    "employment_rate": _float,
    "multi_job_share": _float,
    "work_degree_cap": _int,
    "with_adults": _bool,
    "bridge": _bool,
    "school_year_size": IntDist.parse,
    "children_per_family": IntDist.parse,
    "household_size": IntDist.parse,
    "workplace_size": IntDist.parse,
    "insiders_per_workplace": IntDist.parse,
}

# key -> (converter, attribute name in the owning object)
SCHEMA: dict[str, tuple[Callable, str]] = {
    "output_dir": (_str, "output_dir"),
    "master_seed": (_int, "master_seed"),
    "network.edges_dir": (_str, "edges_dir"),
    **{f"network.{k}": (conv, k) for k, conv in _GEN_TYPES.items()},
    "centrality.tolerance": (_float, "tolerance"),
    "centrality.max_iter": (_int, "max_iterations"),
    "centrality.r": (_float, "r"),
    "centrality.coupling_weight": (_float, "coupling_weight"),
    "centrality.dangling": (_str, "dangling"),
    "epidemic.shape": (_float, "weibull_shape"),
    "epidemic.scale": (_float, "weibull_scale"),
    "epidemic.n_seeds": (_int, "n_seeds"),
    "epidemic.max_weeks": (_int, "max_weeks"),
    "epidemic.k": (_int, "k"),
    "eval.grid": (_str, "grid"),
    "eval.tau": (_tau_policy, "tau"),
    "eval.events": (_str, "events"),
    "gbt.n_trees": (_int, "n_trees"),
    "gbt.min_node_size": (_int, "min_node_size"),
    "gbt.max_depth": (_int, "max_depth"),
    "gbt.learning_rate": (_float, "learning_rate"),
    "gbt.min_loss_reduction": (_float, "min_loss_reduction"),
    "gbt.feature_subsample": (_float, "feature_subsample"),
    "gbt.row_subsample": (_float, "row_subsample"),
    "gbt.include_censored": (_bool, "include_censored"),
    "gbt.train_share": (_float, "train_share"),
}


@dataclass
class PipelineConfig:
    gen: GenParams = field(default_factory=GenParams)
    edges_dir: Path | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    epidemic: EpiParams = field(default_factory=EpiParams)
    k: int = 100
    grid: Path | None = None
    tau: float | None = None
    events: Path | None = None
    gbt: GbtParams = field(default_factory=GbtParams)
    include_censored: bool = False
    train_share: float = 0.1
    output_dir: Path = Path("results")
    master_seed: int = 0

    def canonical(self) -> str:
        """Stable text form of every setting that can influence an artifact.

        The output directory is left out: moving a run does not change it.
        """
        lines = [f"master_seed = {self.master_seed}"]
        for f in fields(self.gen):
            if f.name != "rng_seed":
                lines.append(f"network.{f.name} = {getattr(self.gen, f.name)}")
        lines.append(f"network.edges_dir = {self.edges_dir or ''}")
        for f in fields(self.solver):
            lines.append(f"centrality.{f.name} = {getattr(self.solver, f.name)!r}")
        for layer, tau in sorted(self.epidemic.tau_by_layer.items()):
            lines.append(f"epidemic.tau.{layer} = {tau!r}")
        for name in ("weibull_shape", "weibull_scale", "n_seeds", "max_weeks"):
            lines.append(f"epidemic.{name} = {getattr(self.epidemic, name)!r}")
        lines.append(f"epidemic.k = {self.k}")
        grid_text = self.grid.read_bytes() if self.grid and self.grid.exists() else b""
        lines.append(f"eval.grid = {hashlib.sha256(grid_text).hexdigest() if self.grid else ''}")
        lines.append(f"eval.tau = {self.tau!r}")
        lines.append(f"eval.events = {self.events or ''}")
        for f in fields(self.gbt):
            if f.name != "rng_seed":
                lines.append(f"gbt.{f.name} = {getattr(self.gbt, f.name)!r}")
        lines.append(f"gbt.include_censored = {self.include_censored}")
        lines.append(f"gbt.train_share = {self.train_share!r}")
        return "\n".join(lines) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


_INLINE_COMMENT = re.compile(r"(^|\s)#.*$")


def parse_lines(lines: Iterable[str], source: str) -> dict[str, Entry]:
    entries: dict[str, Entry] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = _INLINE_COMMENT.sub("", raw).strip()
        if not line or line.startswith("#"):
            continue
        where = f"{source}:{lineno}"
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{where}: expected 'section.key = value', got {raw.rstrip()!r}")
        if key in entries:
            raise ConfigError(f"{where}: duplicate key {key!r} (first set at {entries[key].where})")
        entries[key] = Entry(value.strip(), where)
    return entries


def parse_overrides(items: Iterable[str]) -> dict[str, Entry]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        out[key.strip()] = Entry(value.strip(), f"--set {key.strip()}")
    return out


def _convert(key: str, entry: Entry):
    if key.startswith("epidemic.tau."):
        conv = _float
    elif key in SCHEMA:
        conv = SCHEMA[key][0]
    else:
        raise ConfigError(f"{entry.where}: unknown key {key!r}")
    try:
        return conv(entry.value)
    except (ValueError, GenParamsError) as exc:
        raise ConfigError(f"{entry.where}: {key}: {exc}") from None


def build_config(entries: dict[str, Entry], base_dir: Path = Path(".")) -> PipelineConfig:
    values = {key: _convert(key, e) for key, e in entries.items()}

    def where(prefix: str, message: str = "") -> str:
        spots = [(k, e.where) for k, e in entries.items() if k.startswith(prefix)]
        # prefer the line whose setting the validation message names
        named = [w for k, w in spots if k in SCHEMA and SCHEMA[k][1] in message]
        if named:
            return named[0]
        return spots[0][1] if spots else "defaults"

    def path(key: str) -> Path | None:
        v = values.get(key)
        if not v:
            return None
        p = Path(v)
        # command-line overrides are relative to the working directory
        root = Path(".") if entries[key].where.startswith("--") else base_dir
        return p if p.is_absolute() else root / p

    def section(prefix: str, cls, mapping: dict):
        try:
            return cls(**mapping)
        except (ValueError, GenParamsError) as exc:
            raise ConfigError(f"{where(prefix, str(exc))}: {prefix.rstrip('.')}: {exc}") from None

    gen_kwargs = {SCHEMA[k][1]: v for k, v in values.items() if k.startswith("network.") and k != "network.edges_dir"}
    solver_kwargs = {SCHEMA[k][1]: v for k, v in values.items() if k.startswith("centrality.")}
    taus = dict(DEFAULT_TAUS)
    taus.update({k[len("epidemic.tau."):]: v for k, v in values.items() if k.startswith("epidemic.tau.")})
    epi_kwargs = {
        SCHEMA[k][1]: v for k, v in values.items()
        if k.startswith("epidemic.") and not k.startswith("epidemic.tau.") and k != "epidemic.k"
    }
    gbt_kwargs = {
        SCHEMA[k][1]: v for k, v in values.items()
        if k.startswith("gbt.") and k not in ("gbt.include_censored", "gbt.train_share")
    }

    cfg = PipelineConfig(
        gen=section("network.", GenParams, gen_kwargs),
        edges_dir=path("network.edges_dir"),
        solver=section("centrality.", SolverConfig, solver_kwargs),
        epidemic=section("epidemic.", EpiParams, {"tau_by_layer": taus, **epi_kwargs}),
        k=values.get("epidemic.k", 100),
        grid=path("eval.grid"),
        tau=values.get("eval.tau"),
        events=path("eval.events"),
        gbt=section("gbt.", GbtParams, gbt_kwargs),
        include_censored=values.get("gbt.include_censored", False),
        train_share=values.get("gbt.train_share", 0.1),
        output_dir=path("output_dir") or Path("results"),
        master_seed=values.get("master_seed", 0),
    )
    if cfg.k < 1:
        raise ConfigError(f"{entries['epidemic.k'].where}: epidemic.k must be >= 1")
    if not 0.0 < cfg.train_share < 1.0:
        raise ConfigError(f"{entries['gbt.train_share'].where}: gbt.train_share must lie in (0, 1)")
    if cfg.master_seed < 0 or cfg.master_seed >= 2**64:
        raise ConfigError(f"{entries['master_seed'].where}: master_seed must be an unsigned 64-bit integer")
    return cfg


def load_config(
    path: Path | None = None,
    overrides: Iterable[str] = (),
    seed: int | None = None,
    output_dir: Path | None = None,
) -> PipelineConfig:
    """Read a config file (optional), apply ``--set`` overrides, then flags."""
    entries: dict[str, Entry] = {}
    base_dir = Path(".")
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        entries = parse_lines(text.splitlines(), str(path))
        base_dir = path.parent
    entries.update(parse_overrides(overrides))
    if seed is not None:
        entries["master_seed"] = Entry(str(seed), "--seed")
    cfg = build_config(entries, base_dir)
    if output_dir is not None:
        cfg.output_dir = Path(output_dir)
    return cfg
