"""TOML run configuration: parsing, range validation and canonical hashing.

Every numeric field is checked before any sampling starts. Problems are
reported as :class:`ConfigError` with the dotted key path, and TOML syntax
errors carry the line and column from the parser.
"""

from dataclasses import dataclass
import hashlib
import json
import math
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, LevyFieldError
from .experiments import StudyConfig
from .field import TransformSpec
from .matern import MaternKernel
from .measure import JumpMeasure, LevyTriplet
from .noise import Box

REFERENCE_CONFIG = os.path.join(os.path.dirname(__file__), "data", "reference.toml")

_SECTIONS = {"seed", "samples", "workers", "output", "domain", "kernel", "noise", "transform",
             "problem", "moments", "tails", "cutoff", "truncation", "mercer", "sample"}


class _Table:
    """A TOML table with its dotted path, tracking which keys were read."""

    def __init__(self, data, path, allowed=None):
        if not isinstance(data, dict):
            raise ConfigError(f"{path or 'config'}: expected a table")
        self.data = data
        self.path = path
        if allowed is not None:
            unknown = sorted(set(data) - set(allowed))
            if unknown:
                raise ConfigError(f"{self.key(unknown[0])}: unknown key")

    def key(self, name):
        return f"{self.path}.{name}" if self.path else name

    def has(self, name):
        return name in self.data

    def table(self, name, allowed=None):
        return _Table(self.data.get(name, {}), self.key(name), allowed)

    def number(self, name, default=None, *, lo=None, hi=None, lo_open=False, integer=False):
        if name not in self.data:
            if default is None:
                raise ConfigError(f"{self.key(name)}: required")
            return default
        return _check_number(self.data[name], self.key(name), lo, hi, lo_open, integer)

    def optional(self, name, **kwargs):
        if name not in self.data:
            return None
        return self.number(name, **kwargs)

    def numbers(self, name, default=None, *, length=None, sweep=False, **kwargs):
        if name not in self.data:
            if default is None:
                raise ConfigError(f"{self.key(name)}: required")
            return default
        raw = self.data[name]
        if not isinstance(raw, list):
            raise ConfigError(f"{self.key(name)}: expected an array")
        vals = tuple(_check_number(v, f"{self.key(name)}[{i}]", kwargs.get("lo"), kwargs.get("hi"),
                                   kwargs.get("lo_open", False), kwargs.get("integer", False))
                     for i, v in enumerate(raw))
        if length is not None and len(vals) != length:
            raise ConfigError(f"{self.key(name)}: expected {length} entries, got {len(vals)}")
        if sweep:
            if not vals:
                raise ConfigError(f"{self.key(name)}: sweep must be non-empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigError(f"{self.key(name)}: sweep must be strictly increasing")
        return vals

    def string(self, name, default=None, choices=None):
        if name not in self.data:
            if default is None:
                raise ConfigError(f"{self.key(name)}: required")
            return default
        val = self.data[name]
        if not isinstance(val, str):
            raise ConfigError(f"{self.key(name)}: expected a string")
        if choices is not None and val not in choices:
            raise ConfigError(f"{self.key(name)}: {val!r} is not one of {sorted(choices)}")
        return val


def _check_number(val, key, lo, hi, lo_open, integer):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {val!r}")
    if integer and not isinstance(val, int):
        raise ConfigError(f"{key}: expected an integer, got {val!r}")
    if not math.isfinite(val):
        raise ConfigError(f"{key}: must be finite")
    if lo is not None and (val <= lo if lo_open else val < lo):
        raise ConfigError(f"{key}: {val} must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and val > hi:
        raise ConfigError(f"{key}: {val} must be <= {hi}")
    return int(val) if integer else float(val)


def _jump_measure(tab):
    kind = tab.string("kind", "none", {"none", "dirac", "discrete", "gamma", "bigamma"})
    if kind == "none":
        return JumpMeasure.null()
    if kind == "dirac":
        loc = tab.number("location", 1.0)
        if loc == 0:
            raise ConfigError(f"{tab.key('location')}: must be non-zero")
        return JumpMeasure.dirac(loc, tab.number("mass", 1.0, lo=0, lo_open=True))
    if kind == "discrete":
        locs = tab.numbers("locations")
        masses = tab.numbers("masses", lo=0, lo_open=True)
        if not locs or len(locs) != len(masses):
            raise ConfigError(f"{tab.key('masses')}: needs one mass per location")
        if any(s == 0 for s in locs):
            raise ConfigError(f"{tab.key('locations')}: atoms must be non-zero")
        return JumpMeasure.discrete(locs, masses)
    v = tab.number("intensity", lo=0, lo_open=True)
    w = tab.number("decay", lo=0, lo_open=True)
    return JumpMeasure.gamma(v, w) if kind == "gamma" else JumpMeasure.bigamma(v, w)


def parse_triplet(tab):
    """Build a triplet from a ``[noise]``-shaped table.

    ``drift`` is the drift added to the uncompensated jumps (``b`` becomes
    ``drift`` plus the small-jump compensator); ``b`` sets the triplet
    component directly. At most one of them may appear.
    """
    jumps = _jump_measure(tab.table("jumps", {"kind", "location", "mass", "locations", "masses",
                                               "intensity", "decay"}))
    sigma2 = tab.number("sigma2", 0.0, lo=0)
    if tab.has("drift") and tab.has("b"):
        raise ConfigError(f"{tab.key('b')}: give either drift or b, not both")
    if tab.has("b"):
        return LevyTriplet(tab.number("b"), sigma2, jumps)
    return LevyTriplet.from_jumps(jumps, sigma2, tab.number("drift", 0.0))


def _transform(tab):
    kind = tab.string("kind", "exp", {"exp", "smoothed_step", "tempered_exp"})
    if kind == "exp":
        return TransformSpec.exp()
    if kind == "smoothed_step":
        low = tab.number("low", lo=0, lo_open=True)
        high = tab.number("high", lo=0, lo_open=True)
        if high <= low:
            raise ConfigError(f"{tab.key('high')}: must exceed low")
        return TransformSpec.smoothed_step(low, high, tab.number("width", lo=0, lo_open=True))
    return TransformSpec.tempered_exp(tab.number("h", lo=0, hi=1, lo_open=True),
                                      tab.number("rho", lo=0, lo_open=True))


@dataclass(frozen=True)
class RunConfig:
    """A validated run description.

    ``study`` drives the studies; ``sample_noises`` lists the named triplets
    of the sample subcommand; ``canonical`` is the parsed TOML used for the
    manifest hash.
    """

    study: StudyConfig
    output: str
    sample_noises: tuple
    mercer_nodes: tuple
    mercer_window: tuple
    mercer_padding: float
    canonical: dict

    @property
    def config_hash(self):
        return config_hash(self.canonical)


def config_hash(data):
    """SHA-256 of the sorted, compact JSON form.

    ``workers`` and ``output`` do not change results and are left out, so
    the hash is the same on every machine.
    """
    data = {k: v for k, v in data.items() if k not in ("workers", "output")}
    text = json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(text.encode("ascii")).hexdigest()


def loads(text, path="<config>"):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(data)


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return loads(text, path)


def from_dict(data):
    root = _Table(data, "", _SECTIONS)
    try:
        return _build(root, data)
    except ConfigError:
        raise
    except LevyFieldError as exc:
        raise ConfigError(str(exc)) from None


def _build(root, data):
    dom = root.table("domain", {"lower", "upper", "mesh_cells", "noise_spacing", "dirichlet"})
    lower = dom.numbers("lower", (0.0,))
    upper = dom.numbers("upper", (1.0,), length=len(lower))
    if len(lower) not in (1, 2):
        raise ConfigError(f"{dom.key('lower')}: dimension must be 1 or 2")
    if any(b <= a for a, b in zip(lower, upper)):
        raise ConfigError(f"{dom.key('upper')}: must exceed lower on every axis")
    d = len(lower)
    cells = dom.numbers("mesh_cells", (32,) * d, length=d, lo=1, hi=4096, integer=True)
    spacing = dom.optional("noise_spacing", lo=0, lo_open=True)
    dirichlet = None
    if dom.has("dirichlet"):
        raw = dom.data["dirichlet"]
        sides = ("left", "right") if d == 1 else ("left", "right", "bottom", "top")
        if not isinstance(raw, list) or not raw or any(s not in sides for s in raw):
            raise ConfigError(f"{dom.key('dirichlet')}: expected a non-empty list from {sides}")
        dirichlet = tuple(raw)

    ker = root.table("kernel", {"alpha", "m"})
    alpha = ker.number("alpha", lo=0, lo_open=True)
    m = ker.number("m", 1.0, lo=0, lo_open=True)
    if 2 * alpha <= d:
        raise ConfigError(f"{ker.key('alpha')}: need 2 alpha > d = {d}")
    kernel = MaternKernel(alpha, m, d)

    noise = root.table("noise", {"sigma2", "drift", "b", "jumps", "drift_tolerance", "padding"})
    triplet = parse_triplet(noise)

    prob = root.table("problem", {"source", "dirichlet_value", "neumann_flux"})
    mom = root.table("moments", {"orders", "beta", "tau", "apriori_constant", "bootstrap"})
    tails = root.table("tails", {"thresholds", "talagrand_K", "eta"})
    cut = root.table("cutoff", {"paddings", "reference_padding"})
    trunc = root.table("truncation", {"n_terms", "padding"})
    merc = root.table("mercer", {"nodes", "window", "padding"})

    beta = mom.optional("beta", lo=0, lo_open=True)
    if beta is not None and beta >= triplet.nu.exp_beta_limit:
        raise ConfigError(f"{mom.key('beta')}: must be below the jump decay rate "
                          f"{triplet.nu.exp_beta_limit}")
    eta = tails.number("eta", 0.5, lo=0, hi=1, lo_open=True)
    if eta >= 2 * alpha - d:
        raise ConfigError(f"{tails.key('eta')}: need eta < 2 alpha - d")

    try:
        study = StudyConfig(
            triplet=triplet,
            kernel=kernel,
            transform=_transform(root.table("transform", {"kind", "low", "high", "width", "h", "rho"})),
            domain=Box(lower, upper),
            mesh_cells=cells,
            noise_spacing=spacing,
            source=prob.number("source", 1.0),
            dirichlet_value=prob.number("dirichlet_value", 0.0),
            neumann_flux=prob.number("neumann_flux", 0.0),
            dirichlet=dirichlet,
            samples=root.number("samples", 100, lo=2, integer=True),
            seed=root.number("seed", 0, lo=0, integer=True),
            workers=root.number("workers", 1, lo=1, hi=1024, integer=True),
            drift_tolerance=noise.number("drift_tolerance", 1e-3, lo=0, hi=1, lo_open=True),
            padding=noise.optional("padding", lo=0),
            orders=mom.numbers("orders", (1, 2), sweep=True, lo=1, hi=8, integer=True),
            beta=beta,
            tau=mom.number("tau", 0.5, lo=0, hi=1 - 1e-12, lo_open=True),
            talagrand_K=tails.number("talagrand_K", 1.0, lo=0, lo_open=True),
            eta=eta,
            apriori_constant=mom.optional("apriori_constant", lo=0, lo_open=True),
            thresholds=tails.numbers("thresholds", (), sweep=tails.has("thresholds"),
                                     lo=0, lo_open=True),
            paddings=cut.numbers("paddings", (), sweep=cut.has("paddings"), lo=0),
            reference_padding=cut.optional("reference_padding", lo=0, lo_open=True),
            n_terms=trunc.numbers("n_terms", (), sweep=trunc.has("n_terms"), lo=1, integer=True),
            kl_padding=trunc.optional("padding", lo=0),
            bootstrap=mom.number("bootstrap", 1000, lo=10, integer=True),
        )
    except ConfigError:
        raise
    except LevyFieldError as exc:
        raise ConfigError(str(exc)) from None

    nodes = merc.numbers("nodes", (256,) if d == 1 else (32, 32), length=d, lo=2, hi=4096,
                         integer=True)
    window = merc.numbers("window", (5, 50), length=2, lo=1, integer=True)
    if window[1] <= window[0]:
        raise ConfigError(f"{merc.key('window')}: upper index must exceed lower")
    mercer_padding = merc.number("padding", 1.0, lo=0)

    sample = root.table("sample", {"noise"})
    noises = []
    raw = sample.data.get("noise", [])
    if not isinstance(raw, list):
        raise ConfigError(f"{sample.key('noise')}: expected an array of tables")
    for i, entry in enumerate(raw):
        tab = _Table(entry, f"sample.noise[{i}]", {"name", "sigma2", "drift", "b", "jumps"})
        name = tab.string("name")
        if any(name == n for n, _ in noises):
            raise ConfigError(f"{tab.key('name')}: duplicate name {name!r}")
        noises.append((name, parse_triplet(tab)))
    if not noises:
        noises.append(("noise", triplet))

    output = root.string("output", "levyfield-out")
    return RunConfig(study, output, tuple(noises), nodes, window, mercer_padding, data)
