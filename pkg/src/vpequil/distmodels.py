"""Distribution-function families and their kernel-integral reductions.

A model is the pair (l, phi): an anisotropy exponent l > -1 and an energy
profile phi(E) that vanishes for E <= 0.  Everything macroscopic reduces to
one-dimensional kernel integrals

    g_m(omega) = int_0^omega phi(E) (omega - E)^m dE,      m > -1,

through which the mass density, the radial pressure, and the local
polytropic index are computed.  After the substitution x = E/omega both
endpoint singularities of the integrand are algebraic with exponents known
from model metadata (x^k at 0 from the low-energy behaviour of phi, and
(1-x)^m at 1), so g_m is evaluated with singularity-adapted Gaussian rules;
derivatives use exact reduction identities, never finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator
from scipy.special import gammainc, gammaln

from ._quadrature import QuadratureError, integrate_weighted

DEFAULT_QUAD_TOL = 1e-10
_OMEGA_MIN = 1e-300   # below this the index n(omega) is refused, not extrapolated


class ModelError(ValueError):
    """Invalid model construction or parameters."""


class EvaluationError(RuntimeError):
    """A numerical evaluation could not reach the requested accuracy."""


# --------------------------------------------------------------- families

@dataclass(frozen=True, eq=False)
class Polytrope:
    """Power-law profile phi(E) = phi_minus * E^(n - 3/2) for E > 0."""

    n: float
    phi_minus: float = 1.0

    def validate(self):
        if not self.n > 0.5:
            raise ModelError(f"polytrope exponent n must exceed 1/2, got {self.n}")
        if not self.phi_minus > 0:
            raise ModelError("polytrope amplitude phi_minus must be positive")

    def default_regularity(self):
        k = self.n - 1.5
        return Regularity(k=k, k_prime=self.n - 2.5,
                          holder_index=min(1.0, self.n - 0.5))

    def phi(self, e):
        e = np.asarray(e, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.where(e > 0.0,
                           self.phi_minus * np.power(np.maximum(e, _OMEGA_MIN),
                                                     self.n - 1.5),
                           0.0)
        return out

    def phi_reduced(self, e):
        # phi(E)/E^k is the constant amplitude
        return np.full_like(np.asarray(e, dtype=float), self.phi_minus)


@dataclass(frozen=True, eq=False)
class TruncatedExponential:
    """phi_p(E) = e^E - sum_{j<=p} E^j/j!  (p=0: King-type; p=1: Wilson).

    Evaluated as e^E * P(p+1, E) with the regularized lower incomplete gamma
    function, which is exact and free of the catastrophic cancellation the
    literal difference suffers at small E.
    """

    p: int

    def validate(self):
        if self.p < 0 or int(self.p) != self.p:
            raise ModelError(f"truncation order p must be a non-negative integer, got {self.p}")

    def default_regularity(self):
        return Regularity(k=self.p + 1.0, k_prime=float(self.p), holder_index=1.0)

    def phi(self, e):
        e = np.asarray(e, dtype=float)
        return np.where(e > 0.0, np.exp(e) * gammainc(self.p + 1, np.maximum(e, 0.0)), 0.0)

    def phi_reduced(self, e):
        """phi(E)/E^(p+1), stable down to E = 0 (limit 1/(p+1)!)."""
        e = np.asarray(e, dtype=float)
        out = np.empty_like(e)
        small = e < 0.1
        es = e[small]
        term = np.full_like(es, 1.0 / math.factorial(self.p + 1))
        acc = np.zeros_like(es)
        for i in range(30):   # next-term ratio <= 0.1/(p+2): converges fast
            acc += term
            term = term * es / (self.p + 2 + i)
        out[small] = acc
        eb = e[~small]
        out[~small] = np.exp(eb) * gammainc(self.p + 1, eb) / eb ** (self.p + 1)
        return out


@dataclass(frozen=True, eq=False)
class Tabulated:
    """phi given as (E, phi) samples, interpolated monotone piecewise-cubic.

    The low-energy exponent k is user-declared metadata (through the model's
    Regularity record), never inferred from the data.  Queries beyond the
    grid raise instead of extrapolating; values are clamped at zero.
    """

    energies: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if e.ndim != 1 or e.shape != v.shape or e.size < 4:
            raise ModelError("tabulated family needs matching 1-d grids with >= 4 samples")
        if not np.all(np.diff(e) > 0):
            raise ModelError("tabulated energy grid must be strictly increasing")
        if np.any(v < 0):
            raise ModelError("tabulated phi samples must be non-negative")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_interp", PchipInterpolator(e, v, extrapolate=False))

    def validate(self):
        pass

    def default_regularity(self):
        return None   # k is declarative: the caller must supply it

    def phi(self, e):
        e = np.asarray(e, dtype=float)
        hi = float(self.energies[-1])
        if np.any(e > hi):
            raise EvaluationError(
                f"tabulated phi queried at E={float(np.max(e)):g} beyond grid end {hi:g}")
        lo = float(self.energies[0])
        if lo > 0.0 and np.any((e > 0.0) & (e < lo)):
            raise EvaluationError("tabulated phi queried below the grid start")
        out = np.where(e > 0.0, self._interp(np.clip(e, lo, hi)), 0.0)
        return np.maximum(np.nan_to_num(out, nan=0.0), 0.0)

    def phi_reduced(self, e):
        raise NotImplementedError   # handled by the model via declared k


@dataclass(frozen=True)
class Regularity:
    """Low-energy behaviour metadata: phi ~ E^k, phi' ~ E^k', Hölder index of E*phi."""

    k: float
    k_prime: float
    holder_index: float | None = None

    def __post_init__(self):
        if not self.k > -1.0:
            raise ModelError(f"low-energy exponent k must exceed -1, got {self.k}")
        if not self.k_prime > -2.0:
            raise ModelError(f"derivative exponent k' must exceed -2, got {self.k_prime}")


@dataclass(frozen=True, eq=False)
class DistributionModel:
    """The pair (l, phi) with regularity metadata; immutable once built."""

    l: float
    family: Polytrope | TruncatedExponential | Tabulated
    regularity: Regularity | None = None

    def __post_init__(self):
        if not self.l > -1.0:
            raise ModelError(f"anisotropy exponent l must exceed -1, got {self.l}")
        self.family.validate()
        if self.regularity is None:
            reg = self.family.default_regularity()
            if reg is None:
                raise ModelError("tabulated models require an explicit Regularity record "
                                 "(the low-energy exponent k is declared, not inferred)")
            object.__setattr__(self, "regularity", reg)
        if self.l < -0.5:
            h = self.regularity.holder_index
            if h is None:
                raise ModelError("models with l < -1/2 require a Hölder index for E*phi(E)")
            if not h > -self.l - 0.5:
                raise ModelError(
                    f"Hölder index {h:g} insufficient: needs > {-self.l - 0.5:g} for l={self.l:g}")
        object.__setattr__(self, "_prefactor", density_prefactor(self.l))

    def phi_reduced(self, e):
        """phi(E) / E^k with the declared exponent k."""
        fam = self.family
        if isinstance(fam, Tabulated):
            e = np.asarray(e, dtype=float)
            k = self.regularity.k
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(e > 0.0, fam.phi(e) / np.power(np.maximum(e, _OMEGA_MIN), k), 0.0)
            return out
        return fam.phi_reduced(e)


def polytrope(n, l=0.0, phi_minus=1.0) -> DistributionModel:
    return DistributionModel(l=float(l), family=Polytrope(n=float(n), phi_minus=float(phi_minus)))


def truncated_exponential(p, l=0.0) -> DistributionModel:
    return DistributionModel(l=float(l), family=TruncatedExponential(p=int(p)))


def king_model(l=0.0) -> DistributionModel:
    """Lowered-exponential profile with linear low-energy behaviour."""
    return truncated_exponential(0, l=l)


def wilson_model(l=0.0) -> DistributionModel:
    """Lowered-exponential profile with quadratic low-energy behaviour."""
    return truncated_exponential(1, l=l)


def tabulated_model(energies, values, l=0.0, k=None, k_prime=None,
                    holder_index=None) -> DistributionModel:
    if k is None:
        raise ModelError("tabulated models require the declared low-energy exponent k")
    kp = k_prime if k_prime is not None else k - 1.0
    return DistributionModel(l=float(l), family=Tabulated(np.asarray(energies), np.asarray(values)),
                             regularity=Regularity(k=float(k), k_prime=float(kp),
                                                   holder_index=holder_index))


def load_tabulated(path, l=0.0, k=None, k_prime=None, holder_index=None) -> DistributionModel:
    """Build a tabulated model from a two-column (E, phi) CSV file."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] != 2:
        raise ModelError(f"expected two columns (E, phi) in {path}, got {data.shape[1]}")
    return tabulated_model(data[:, 0], data[:, 1], l=l, k=k, k_prime=k_prime,
                           holder_index=holder_index)


# ----------------------------------------------------------- evaluations

@dataclass
class GEvaluation:
    """One kernel-integral evaluation with its certified relative error."""

    m: float
    omega: float
    value: float
    derivative: float | None = None
    estimated_error: float = 0.0


def eval_phi(model: DistributionModel, energy):
    """phi(E); exactly 0 for E <= 0.  Vectorized over `energy`."""
    out = model.family.phi(energy)
    if np.isscalar(energy) or np.ndim(energy) == 0:
        return float(out)
    return out


def _closed_form_g(fam: Polytrope, m, omega):
    # int_0^omega E^(n-3/2) (omega-E)^m dE = omega^(n+m-1/2) B(n-1/2, m+1)
    n = fam.n
    return fam.phi_minus * omega ** (n + m - 0.5) * math.exp(
        gammaln(n - 0.5) + gammaln(m + 1.0) - gammaln(n + m + 0.5))


def eval_g_quadrature(model: DistributionModel, m, omega,
                      rel_tol=DEFAULT_QUAD_TOL) -> GEvaluation:
    """g_m(omega) by singularity-adapted quadrature (no closed-form shortcut)."""
    _check_gm_args(m, omega)
    if omega == 0.0:
        return GEvaluation(m=m, omega=omega, value=0.0, estimated_error=0.0)
    k = model.regularity.k
    try:
        raw, err = integrate_weighted(lambda x: model.phi_reduced(omega * x),
                                      m, k, rel_tol=rel_tol)
    except QuadratureError as exc:
        raise EvaluationError(f"g_{m:g}({omega:g}) quadrature failed: {exc}") from exc
    scale = omega ** (m + 1.0 + k)
    value = scale * raw
    if not math.isfinite(value):
        raise EvaluationError(f"g_{m:g}({omega:g}) overflowed")
    rel = err / max(abs(raw), np.finfo(float).tiny)
    return GEvaluation(m=m, omega=omega, value=value, estimated_error=rel)


def eval_g(model: DistributionModel, m, omega, rel_tol=DEFAULT_QUAD_TOL) -> GEvaluation:
    """Kernel integral g_m(omega) = int_0^omega phi(E)(omega-E)^m dE.

    Polytrope families short-circuit to the Beta-function closed form; other
    families go through the weighted quadrature with certified error.
    """
    _check_gm_args(m, omega)
    if omega == 0.0:
        return GEvaluation(m=m, omega=omega, value=0.0, estimated_error=0.0)
    if isinstance(model.family, Polytrope):
        value = _closed_form_g(model.family, m, omega)
        return GEvaluation(m=m, omega=omega, value=value,
                           estimated_error=4 * np.finfo(float).eps)
    return eval_g_quadrature(model, m, omega, rel_tol=rel_tol)


def _check_gm_args(m, omega):
    if not m > -1.0:
        raise ValueError(f"kernel exponent m must exceed -1, got {m}")
    if omega < 0.0:
        raise ValueError(f"omega must be non-negative, got {omega}")


def eval_dg(model: DistributionModel, m, omega, rel_tol=DEFAULT_QUAD_TOL) -> float:
    """d g_m/d omega via the exact reduction identity for the sign of m.

    m > 0 lowers the exponent (m * g_{m-1}); m = 0 returns phi(omega); for
    -1 < m < 0 the difference-quotient identity is integrated against the
    (1-x)^m endpoint weight, which requires Hölder metadata on E*phi(E).
    """
    _check_gm_args(m, omega)
    if omega <= 0.0:
        raise ValueError("derivative requires omega > 0")
    if m > 0.0:
        return m * eval_g(model, m - 1.0, omega, rel_tol=rel_tol).value
    if m == 0.0:
        return float(eval_phi(model, omega))
    holder = model.regularity.holder_index
    if holder is None or not holder > -m:
        raise EvaluationError(
            f"derivative of g_{m:g} needs a Hölder index above {-m:g}; "
            f"model declares {holder}")
    phi_w = float(eval_phi(model, omega))
    k = model.regularity.k
    try:
        # [0, 1/2]: phi(omega*x)(1-x)^(m-1) keeps only the x^k endpoint weight
        inner_a, _ = integrate_weighted(
            lambda t: model.phi_reduced(omega * t / 2.0) * (1.0 - t / 2.0) ** (m - 1.0),
            0.0, k, rel_tol=rel_tol)
        piece_a = phi_w * (1.0 - 2.0 ** (-m)) / m - 0.5 ** (k + 1.0) * omega ** k * inner_a
        # [1/2, 1]: difference quotient against the (1-x)^m weight
        def diff_quot(t):
            x = 0.5 * (1.0 + t)
            return (phi_w - model.family.phi(omega * x)) / (1.0 - x)
        inner_b, _ = integrate_weighted(diff_quot, m, 0.0, rel_tol=rel_tol)
        piece_b = 0.5 ** (m + 1.0) * inner_b
    except QuadratureError as exc:
        raise EvaluationError(f"dg_{m:g}({omega:g}) quadrature failed: {exc}") from exc
    return omega ** m * phi_w - m * omega ** m * (piece_a + piece_b)


def eval_n(model: DistributionModel, omega, rel_tol=DEFAULT_QUAD_TOL) -> float:
    """Local polytropic index n(omega) = -l + omega * g'/g at m = l + 1/2."""
    if omega < _OMEGA_MIN:
        raise EvaluationError(f"index n(omega) refused below omega={_OMEGA_MIN:g}")
    m = model.l + 0.5
    g = eval_g(model, m, omega, rel_tol=rel_tol)
    if not g.value > _OMEGA_MIN:
        raise EvaluationError(f"index undefined: g_{m:g}({omega:g}) at or below the floor")
    dg = eval_dg(model, m, omega, rel_tol=rel_tol)
    return -model.l + omega * dg / g.value


def density_prefactor(l) -> float:
    """Angular-integration constant 2^(l+3/2) pi^(3/2) Gamma(l+1)/Gamma(l+3/2)."""
    return 2.0 ** (l + 1.5) * math.pi ** 1.5 * math.exp(gammaln(l + 1.0) - gammaln(l + 1.5))


def density(model: DistributionModel, r, omega, rel_tol=DEFAULT_QUAD_TOL) -> float:
    """Mass density rho(r, omega) = C_l r^(2l) g_{l+1/2}(omega)."""
    if r <= 0.0:
        raise ValueError("density requires r > 0")
    g = eval_g(model, model.l + 0.5, omega, rel_tol=rel_tol)
    return model._prefactor * r ** (2.0 * model.l) * g.value


def radial_pressure(model: DistributionModel, r, omega, rel_tol=DEFAULT_QUAD_TOL) -> float:
    """Radial pressure p(r, omega) = C_l r^(2l) g_{l+3/2}(omega)/(l + 3/2)."""
    if r <= 0.0:
        raise ValueError("pressure requires r > 0")
    g = eval_g(model, model.l + 1.5, omega, rel_tol=rel_tol)
    return model._prefactor * r ** (2.0 * model.l) * g.value / (model.l + 1.5)


def density_bruteforce(model: DistributionModel, r, omega) -> float:
    """Mass density by direct 2-d integration over (E, L^2) — test oracle.

    Integrates phi(E) L^(2l) / |v_r| over the support with
    |v_r| = sqrt(2(omega-E) - L^2/r^2), using nested QUADPACK rules (the
    inner one with the exact algebraic endpoint weights), deliberately
    independent of the Gauss-Jacobi reduction path.
    """
    if r <= 0.0 or omega <= 0.0:
        raise ValueError("brute-force density requires r > 0 and omega > 0")
    l = model.l

    def inner(e):
        l2max = 2.0 * r * r * (omega - e)
        if l2max <= 0.0:
            return 0.0
        # int_0^l2max (L2)^l (l2max - L2)^(-1/2) dL2, weights handled by QAWS
        val, _ = integrate.quad(lambda _: 1.0, 0.0, l2max,
                                weight="alg", wvar=(l, -0.5))
        return val * r

    outer, _ = integrate.quad(lambda e: float(eval_phi(model, e)) * inner(e),
                              0.0, omega, epsabs=1e-300, epsrel=1e-9, limit=400)
    return 2.0 * math.pi / (r * r) * outer
