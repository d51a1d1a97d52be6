"""Monte Carlo study of subspace recovery under heavy-tailed contamination.

Each replicate draws a population with fixed signal eigenvalues
``1 + sqrt(p/n) + p^{1/(1+j)}``, uniform noise eigenvalues and a Haar
eigenbasis, samples ``n`` rows from ``(1-pi) N(0, Sigma) + pi t_df(0,
sigma_out^2 I)``, fits every requested method and records the similarity
``s_q`` between the leading-``q`` fitted basis and the true signal basis.

Every replicate owns an RNG substream keyed by ``(seed, replicate)``, so the
output does not depend on how replicates are scheduled across threads.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .aggregate import fit_phi_pca, fit_ppca, make_partition
from .exceptions import ConfigError, ParameterError, PhiPCAError
from .linalg import principal_singulars
from .perturbation import PopulationModel, gaussian_asym_cov
from .phi import AM, GM, HM

__all__ = [
    "SimConfig",
    "SimilarityCurve",
    "ExperimentResult",
    "MethodSpec",
    "parse_method",
    "signal_eigenvalues",
    "haar_orthogonal",
    "make_population",
    "sample_mixture",
    "multivariate_t",
    "s_q_curve",
    "fit_method",
    "run_experiment",
    "efficiency_invariance_check",
    "DEFAULT_METHODS",
]

DEFAULT_METHODS = ("HM", "GM", "AM", "GM2", "PPCA", "PCA", "optPCA")

_METHOD_RE = re.compile(r"^(HM|GM|AM)(?:\((\d+)\))?$")


@dataclass(frozen=True)
class MethodSpec:
    """A named estimator: ``kind`` in {HM, GM, AM, PPCA, PCA, optPCA}."""

    name: str
    kind: str
    m: Optional[int] = None


def parse_method(name: str, default_m: Optional[int] = None) -> MethodSpec:
    """Parse ``HM``, ``GM(44)``, ``GM2``, ``PPCA``, ``PCA`` or ``optPCA``."""
    token = name.strip()
    if token == "GM2":
        return MethodSpec(name=token, kind="GM", m=2)
    if token in ("PPCA", "PCA", "optPCA"):
        return MethodSpec(name=token, kind=token, m=2 if token == "PPCA" else 1)
    match = _METHOD_RE.match(token)
    if not match:
        raise ConfigError(f"unknown method {name!r}")
    m = int(match.group(2)) if match.group(2) else default_m
    return MethodSpec(name=token, kind=match.group(1), m=m)


@dataclass
class SimConfig:
    """Description of one simulation study; keys mirror the JSON config file."""

    n: int = 400
    p: int = 200
    r: int = 10
    pi: float = 0.05
    sigma_out: float = 1.0
    replicates: int = 20
    q_max: int = 50
    methods: Sequence[str] = DEFAULT_METHODS
    seed: int = 0
    m: Optional[int] = None
    df: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if not 1 <= self.r < self.p:
            raise ConfigError(f"need 1 <= r < p, got r={self.r}, p={self.p}")
        if not self.r <= self.q_max <= self.p:
            raise ConfigError(f"need r <= q_max <= p, got q_max={self.q_max}")
        if not 0 <= self.pi < 1:
            raise ConfigError(f"pi must lie in [0, 1), got {self.pi}")
        if not self.sigma_out > 0:
            raise ConfigError("sigma_out must be positive")
        if self.replicates < 1:
            raise ConfigError("replicates must be positive")
        if self.n < 4:
            raise ConfigError("n must be at least 4")
        for name in self.methods:
            parse_method(name)

    @property
    def partitions(self) -> int:
        return self.m if self.m is not None else math.isqrt(self.n)

    def method_specs(self) -> list:
        return [parse_method(name, self.partitions) for name in self.methods]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown SimConfig keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SimilarityCurve:
    """Mean and standard error of ``s_q`` for one method."""

    method: str
    qs: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    replicates: int

    def at(self, q: int) -> float:
        return float(self.mean[int(np.flatnonzero(self.qs == q)[0])])


@dataclass
class ExperimentResult:
    config: SimConfig
    curves: dict
    raw: np.ndarray = field(repr=False)  # shape (replicates, methods, len(qs))
    failures: dict = field(default_factory=dict)


def signal_eigenvalues(p: int, n: int, r: int) -> np.ndarray:
    j = np.arange(1, r + 1)
    return 1.0 + math.sqrt(p / n) + np.power(float(p), 1.0 / (1.0 + j))


def haar_orthogonal(p: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix via sign-corrected QR."""
    Q, R = np.linalg.qr(rng.standard_normal((p, p)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def make_population(p: int, n: int, r: int, seed) -> PopulationModel:
    """Random population covariance for the study.

    Noise eigenvalues are ``U(0.5, 1.5)`` draws sorted in descending order.
    """
    if not 1 <= r < p:
        raise ParameterError(f"need 1 <= r < p, got r={r}, p={p}")
    rng = np.random.default_rng(seed)
    noise = np.sort(rng.uniform(0.5, 1.5, size=p - r))[::-1]
    lam = np.concatenate([signal_eigenvalues(p, n, r), noise])
    G = haar_orthogonal(p, rng)
    return PopulationModel(sigma=(G * lam) @ G.T, r=r)


def sample_mixture(
    model: PopulationModel,
    n: int,
    pi: float,
    sigma_out: float,
    seed,
    df: int = 1,
) -> np.ndarray:
    """``n`` rows from ``(1-pi) N(0, Sigma) + pi t_df(0, sigma_out^2 I)``.

    The t rows are ``z * sqrt(df / w) * sigma_out`` with ``z ~ N(0, I)`` and
    ``w ~ chi^2_df``.
    """
    rng = np.random.default_rng(seed)
    p = model.p
    outlier = rng.random(n) < pi
    root = model.eigenvectors * np.sqrt(model.eigenvalues)
    X = rng.standard_normal((n, p)) @ root.T
    k = int(outlier.sum())
    if k:
        X[outlier] = multivariate_t(rng, k, p, df, sigma_out)
    return X


def multivariate_t(rng: np.random.Generator, size: int, p: int, df: float, scale: float) -> np.ndarray:
    """``size`` draws of ``t_df(0, scale^2 I_p)`` as ``z * scale * sqrt(df / w)``."""
    if df <= 0:
        raise ParameterError(f"degrees of freedom must be positive, got {df}")
    z = rng.standard_normal((size, p))
    w = rng.chisquare(df, size=size)
    return z * (np.sqrt(df / w) * scale)[:, None]


def s_q_curve(fitted_basis, Gr, q_values: Optional[Sequence[int]] = None) -> np.ndarray:
    """``s_q`` = mean of the ``r`` principal singular values of ``B_q^T Gr``.

    Returns one value per ``q`` in ``q_values`` (default ``r..q_max``).
    """
    B = np.asarray(fitted_basis, dtype=float)
    Gr = np.asarray(Gr, dtype=float)
    r = Gr.shape[1]
    q_max = B.shape[1]
    if q_max < r:
        raise ParameterError(f"q_max={q_max} is smaller than r={r}")
    qs = range(r, q_max + 1) if q_values is None else q_values
    return np.array([principal_singulars(B[:, :q], Gr).mean() for q in qs])


def fit_method(spec: MethodSpec, X, partition_seed) -> np.ndarray:
    """Eigenvectors (descending) produced by ``spec`` on ``X``."""
    if spec.kind in ("PCA", "optPCA"):
        return fit_phi_pca(X, 1, AM, ridge_eps=0.0).eigenvectors
    if spec.kind == "PPCA":
        return fit_ppca(X, seed=partition_seed).eigenvectors
    phi = {"HM": HM, "GM": GM, "AM": AM}[spec.kind]
    if spec.m is None:
        raise ConfigError(f"method {spec.name} needs a partition count")
    plan = make_partition(X.shape[0], spec.m, partition_seed)
    return fit_phi_pca(X, spec.m, phi, plan=plan).eigenvectors


def _replicate_streams(seed: int, rep: int):
    ss = np.random.SeedSequence([int(seed), int(rep)])
    pop, contaminated, clean, part = ss.spawn(4)
    return pop, contaminated, clean, int(part.generate_state(1, dtype=np.uint64)[0])


def _run_replicate(config: SimConfig, specs, rep: int):
    pop_ss, cont_ss, clean_ss, part_seed = _replicate_streams(config.seed, rep)
    model = make_population(config.p, config.n, config.r, pop_ss)
    Gr = model.decomp.leading(config.r)
    X = sample_mixture(model, config.n, config.pi, config.sigma_out, cont_ss, df=config.df)
    X_clean = None
    rows, fails = [], []
    for spec in specs:
        if spec.kind == "optPCA":
            if X_clean is None:
                X_clean = sample_mixture(model, config.n, 0.0, config.sigma_out, clean_ss, df=config.df)
            data = X_clean
        else:
            data = X
        try:
            basis = fit_method(spec, data, part_seed)[:, : config.q_max]
            rows.append(s_q_curve(basis, Gr))
        except PhiPCAError as exc:
            fails.append((spec.name, str(exc)))
            rows.append(np.full(config.q_max - config.r + 1, np.nan))
    return np.vstack(rows), fails


def run_experiment(config: SimConfig, threads: int = 1) -> ExperimentResult:
    """Run every replicate and average the ``s_q`` curves per method."""
    specs = config.method_specs()
    reps = range(config.replicates)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(lambda rep: _run_replicate(config, specs, rep), reps))
    else:
        outputs = [_run_replicate(config, specs, rep) for rep in reps]
    raw = np.stack([out[0] for out in outputs])
    failures = {}
    for _, fails in outputs:
        for name, msg in fails:
            failures.setdefault(name, []).append(msg)
    qs = np.arange(config.r, config.q_max + 1)
    curves = {}
    for i, spec in enumerate(specs):
        vals = raw[:, i, :]
        ok = ~np.isnan(vals[:, 0])
        kept = vals[ok]
        count = kept.shape[0]
        mean = kept.mean(axis=0) if count else np.full(qs.shape, np.nan)
        stderr = kept.std(axis=0, ddof=1) / math.sqrt(count) if count > 1 else np.zeros(qs.shape)
        curves[spec.name] = SimilarityCurve(spec.name, qs, mean, stderr, count)
    return ExperimentResult(config=config, curves=curves, raw=raw, failures=failures)


def efficiency_invariance_check(
    p: int = 5,
    n: int = 2000,
    replicates: int = 500,
    method_grid: Sequence[str] = ("PCA", "AM(44)", "GM(44)", "HM(44)", "GM(2)", "PPCA"),
    eigenvalues: Optional[Sequence[float]] = None,
    seed: int = 0,
    threads: int = 1,
) -> dict:
    """Monte Carlo variance of ``sqrt(n)(lam_hat_1 - lam_1)`` on clean Gaussian data.

    All methods see the same sample in every replicate.  Returns a dict with
    the population, per-method variances, their ratio to the Gaussian value
    ``2 lam_1^2`` and every pairwise variance ratio.
    """
    lam = np.asarray(np.linspace(4.0, 0.5, p) if eigenvalues is None else eigenvalues, dtype=float)
    if lam.shape != (p,):
        raise ParameterError("eigenvalues must have length p")
    root_ss = np.random.SeedSequence(int(seed))
    basis = haar_orthogonal(p, np.random.default_rng(root_ss.spawn(1)[0]))
    model = PopulationModel(sigma=(basis * lam) @ basis.T, r=1)
    lam1 = model.eigenvalues[0]
    V = gaussian_asym_cov(model)
    target = float(V[0, 0])
    specs = [parse_method(name) for name in method_grid]

    def one(rep):
        _, cont_ss, _, part_seed = _replicate_streams(seed, rep)
        X = sample_mixture(model, n, 0.0, 1.0, cont_ss)
        out = []
        for spec in specs:
            if spec.kind in ("PCA", "optPCA"):
                val = fit_phi_pca(X, 1, AM, ridge_eps=0.0).eigenvalues[0]
            elif spec.kind == "PPCA":
                val = fit_ppca(X, seed=part_seed).eigenvalues[0]
            else:
                phi = {"HM": HM, "GM": GM, "AM": AM}[spec.kind]
                plan = make_partition(n, spec.m, part_seed)
                val = fit_phi_pca(X, spec.m, phi, plan=plan).eigenvalues[0]
            out.append(math.sqrt(n) * (val - lam1))
        return out

    reps = range(replicates)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            draws = np.array(list(pool.map(one, reps)))
    else:
        draws = np.array([one(rep) for rep in reps])
    variances = draws.var(axis=0, ddof=1)
    names = [spec.name for spec in specs]
    pairwise = {
        (a, b): float(variances[i] / variances[j])
        for i, a in enumerate(names)
        for j, b in enumerate(names)
        if i < j
    }
    return {
        "lambda_1": float(lam1),
        "gaussian_avar": target,
        "variance": dict(zip(names, map(float, variances))),
        "ratio_to_gaussian": dict(zip(names, map(float, variances / target))),
        "pairwise": pairwise,
    }
