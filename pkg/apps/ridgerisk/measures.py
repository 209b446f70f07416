"""Limiting spectral measures and their Stieltjes transforms.

A measure is either a finite set of atoms or the Szegő pushforward of the uniform
measure on [0, 2π) under |f(θ)|², f(θ) = Σ_k ω_k e^{ikθ}. Both reduce to a weighted
point set: the atoms themselves, or the periodic trapezoid grid, which converges
spectrally for these smooth periodic integrands. Transforms use the convention
m(z) = ∫ 1/(z + x) dμ(x) and are only defined for z > 0.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence, Tuple

import numpy as np
from config import DEFAULT_QUADRATURE_POINTS
from errors import EmptySpectrum, InvalidMeasure, NonPositiveArgument
from utils import parse_number, parse_number_list

logger = logging.getLogger(__name__)

ATOMS = "atoms"
SZEGO = "szego"
MEASURE_KINDS = (ATOMS, SZEGO)

WEIGHT_TOLERANCE = 1e-12
SPEC_WEIGHT_TOLERANCE = 1e-6
MERGE_TOLERANCE = 1e-12
CLAMP_TOLERANCE = 1e-10
MIN_QUADRATURE_POINTS = 64


@dataclass(frozen=True)
class SpectralMeasure:
    """A probability measure on [0, ∞), immutable once built.

    Use the constructors ``from_atoms``, ``szego`` and ``identity`` rather than
    filling fields by hand; they normalize and merge before validation runs.
    """

    kind: str
    atoms: Tuple[Tuple[float, float], ...] = ()
    filter_coeffs: Tuple[float, ...] = ()
    quadrature_points: int = DEFAULT_QUADRATURE_POINTS

    def __post_init__(self):
        if self.kind == ATOMS:
            self._validate_atoms()
        elif self.kind == SZEGO:
            self._validate_szego()
        else:
            raise InvalidMeasure(f"unknown measure kind: {self.kind}", kind=self.kind)

    def _validate_atoms(self):
        if not self.atoms:
            raise InvalidMeasure("atoms measure needs at least one atom")
        values = np.array([value for value, _ in self.atoms], dtype=float)
        weights = np.array([weight for _, weight in self.atoms], dtype=float)
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(weights))):
            raise InvalidMeasure("atom values and weights must be finite")
        if np.any(values < 0):
            raise InvalidMeasure("atom values must be nonnegative", values=values.tolist())
        if np.any(weights <= 0):
            raise InvalidMeasure("atom weights must be positive", weights=weights.tolist())
        total = math.fsum(weights.tolist())
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise InvalidMeasure(f"atom weights sum to {total!r}, not 1", total=total)

    def _validate_szego(self):
        coeffs = np.asarray(self.filter_coeffs, dtype=float)
        if coeffs.size == 0 or not np.all(np.isfinite(coeffs)):
            raise InvalidMeasure("szego measure needs finite filter coefficients")
        if not np.any(coeffs != 0):
            raise InvalidMeasure("szego filter coefficients are all zero")
        n = self.quadrature_points
        if not isinstance(n, (int, np.integer)) or n < MIN_QUADRATURE_POINTS or n % 2:
            raise InvalidMeasure(
                f"quadrature_points must be an even integer >= {MIN_QUADRATURE_POINTS}",
                quadrature_points=n,
            )

    @classmethod
    def from_atoms(cls, pairs: Iterable[Tuple[float, float]]):
        """Build an atoms measure from (value, weight) pairs, merging near-equal values."""
        pairs = list(pairs)
        if not pairs:
            raise InvalidMeasure("atoms measure needs at least one atom")
        values = np.array([float(value) for value, _ in pairs])
        weights = np.array([float(weight) for _, weight in pairs])
        if not (np.all(np.isfinite(weights)) and np.all(weights > 0)):
            raise InvalidMeasure("atom weights must be positive and finite", weights=weights.tolist())
        return cls(kind=ATOMS, atoms=_merge_atoms(values, weights))

    @classmethod
    def szego(cls, coeffs: Sequence[float], quadrature_points: int = DEFAULT_QUADRATURE_POINTS):
        return cls(
            kind=SZEGO,
            filter_coeffs=tuple(float(c) for c in coeffs),
            quadrature_points=int(quadrature_points),
        )

    @classmethod
    def identity(cls):
        return cls(kind=ATOMS, atoms=((1.0, 1.0),))

    @cached_property
    def support(self) -> np.ndarray:
        """Evaluation points: atom values, or |f|² on the quadrature grid."""
        if self.kind == ATOMS:
            return np.array([value for value, _ in self.atoms], dtype=float)
        theta = 2.0 * np.pi * np.arange(self.quadrature_points) / self.quadrature_points
        k = np.arange(len(self.filter_coeffs))
        symbol = np.exp(1j * np.outer(theta, k)) @ np.asarray(self.filter_coeffs, dtype=float)
        return np.abs(symbol) ** 2

    @cached_property
    def weights(self) -> np.ndarray:
        if self.kind == ATOMS:
            return np.array([weight for _, weight in self.atoms], dtype=float)
        return np.full(self.quadrature_points, 1.0 / self.quadrature_points)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.support)

    def transform(self, z, power: int = 1):
        """Σ_j w_j / (z + x_j)^power for positive z (scalar or array); no argument checks."""
        z = np.asarray(z, dtype=float)
        values = self.weights / (z[..., None] + self.support) ** power
        return values.sum(axis=-1)

    def is_identity(self, tol: float = WEIGHT_TOLERANCE) -> bool:
        """True when the measure is δ_1 to within tol (any representation)."""
        return bool(np.all(np.abs(self.support - 1.0) <= tol))

    def is_close(self, other: "SpectralMeasure", tol: float = 1e-12) -> bool:
        if self.kind != other.kind:
            return False
        if self.kind == SZEGO:
            return self.quadrature_points == other.quadrature_points and np.allclose(
                self.filter_coeffs, other.filter_coeffs, rtol=0, atol=tol
            )
        if len(self.atoms) != len(other.atoms):
            return False
        mine = np.asarray(self.atoms, dtype=float)
        theirs = np.asarray(other.atoms, dtype=float)
        return bool(np.allclose(mine, theirs, rtol=tol, atol=tol))

    def to_spec(self) -> str:
        """Measure-spec text that ``parse_measure`` reads back into this measure."""
        if self.kind == SZEGO:
            coeffs = ",".join(repr(float(c)) for c in self.filter_coeffs)
            return f"szego:{coeffs}@{self.quadrature_points}"
        if self.atoms == ((1.0, 1.0),):
            return "identity"
        return "atoms:" + ",".join(f"{float(w)!r}:{float(v)!r}" for v, w in self.atoms)

    def to_dict(self):
        data = {"kind": self.kind, "spec": self.to_spec()}
        if self.kind == ATOMS:
            data["atoms"] = [{"value": v, "weight": w} for v, w in self.atoms]
        else:
            data["filter_coeffs"] = list(self.filter_coeffs)
            data["quadrature_points"] = self.quadrature_points
        return data

    def __repr__(self):
        if self.kind == ATOMS and len(self.atoms) > 6:
            return f"<SpectralMeasure atoms x{len(self.atoms)}>"
        return f"<SpectralMeasure {self.to_spec()}>"


def _merge_atoms(values: np.ndarray, weights: np.ndarray) -> Tuple[Tuple[float, float], ...]:
    """Sort atoms and merge values closer than MERGE_TOLERANCE, summing their weights."""
    order = np.argsort(values, kind="stable")
    values = values[order]
    weights = weights[order]
    breaks = np.diff(values) > MERGE_TOLERANCE
    group = np.concatenate(([0], np.cumsum(breaks)))
    merged_weights = np.bincount(group, weights=weights)
    merged_values = np.bincount(group, weights=values * weights) / merged_weights
    # A group of one keeps its exact value rather than a weighted average of itself.
    counts = np.bincount(group)
    singles = counts == 1
    merged_values[singles] = values[np.searchsorted(group, np.flatnonzero(singles))]
    return tuple((float(v), float(w)) for v, w in zip(merged_values, merged_weights))


def _check_z(z):
    z_arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z_arr)) or np.any(z_arr <= 0):
        raise NonPositiveArgument("Stieltjes transforms are only defined for z > 0", z=np.ravel(z_arr).tolist()[:8])
    return z_arr


def _check_gamma(gamma):
    if not (math.isfinite(gamma) and gamma > 0):
        raise NonPositiveArgument("gamma must be positive", gamma=gamma)


def _scalar_or_array(result, z):
    return float(result) if np.ndim(z) == 0 else result


def stieltjes(measure: SpectralMeasure, z):
    """m(z) = ∫ 1/(z + x) dμ(x), z > 0."""
    z_arr = _check_z(z)
    return _scalar_or_array(measure.transform(z_arr, power=1), z)


def stieltjes_derivative(measure: SpectralMeasure, z):
    """m'(z) = -∫ 1/(z + x)² dμ(x), z > 0; strictly negative."""
    z_arr = _check_z(z)
    return _scalar_or_array(-measure.transform(z_arr, power=2), z)


def mtilde_b(measure: SpectralMeasure, gamma: float, kappa):
    """m̃_B(κ) = γκ(1 - κ m_B(κ)); positive for κ > 0 since κ m_B(κ) ∈ (0, 1)."""
    _check_gamma(gamma)
    kappa_arr = _check_z(kappa)
    result = gamma * kappa_arr * (1.0 - kappa_arr * measure.transform(kappa_arr))
    return _scalar_or_array(result, kappa)


def mtilde_b_derivative(measure: SpectralMeasure, gamma: float, kappa):
    """m̃_B'(κ) = γ - 2γκ m_B(κ) - γκ² m_B'(κ)."""
    _check_gamma(gamma)
    kappa_arr = _check_z(kappa)
    m = measure.transform(kappa_arr, power=1)
    dm = -measure.transform(kappa_arr, power=2)
    result = gamma - 2.0 * gamma * kappa_arr * m - gamma * kappa_arr**2 * dm
    return _scalar_or_array(result, kappa)


def empirical_measure(eigenvalues: Sequence[float]) -> SpectralMeasure:
    """(1/n) Σ δ_{λ_i} with equal weights; tiny negative eigenvalues are clamped to 0."""
    values = np.asarray(eigenvalues, dtype=float).ravel()
    if values.size == 0:
        raise EmptySpectrum("cannot build a measure from an empty spectrum")
    if not np.all(np.isfinite(values)):
        raise InvalidMeasure("eigenvalues must be finite")
    if np.any(values < -CLAMP_TOLERANCE):
        raise InvalidMeasure("eigenvalues must be nonnegative", minimum=float(values.min()))
    values = np.clip(values, 0.0, None)
    weights = np.full(values.size, 1.0 / values.size)
    merged = _merge_atoms(values, weights)
    total = math.fsum(w for _, w in merged)
    merged = tuple((v, w / total) for v, w in merged)
    return SpectralMeasure(kind=ATOMS, atoms=merged)


def parse_measure(spec: str) -> SpectralMeasure:
    """
    Parse a measure spec.

    Grammar:
        identity                 δ_1
        atoms:w1:v1,w2:v2,...    weights (decimals or fractions) renormalized when
                                 they sum to 1 within 1e-6
        szego:w0,...,wq[@N]      Szegő pushforward, N quadrature points (default 4096)
        file:PATH                one eigenvalue per line, equal weights
    """
    if spec is None or not spec.strip():
        raise InvalidMeasure("empty measure spec")
    text = spec.strip()
    head, _, body = text.partition(":")
    head = head.lower()

    if head == "identity" and not body:
        return SpectralMeasure.identity()

    if head == "atoms":
        return _parse_atoms(body, spec)

    if head == "szego":
        coeff_text, _, points_text = body.partition("@")
        try:
            coeffs = parse_number_list(coeff_text)
            points = int(points_text) if points_text else DEFAULT_QUADRATURE_POINTS
        except ValueError as e:
            raise InvalidMeasure(f"bad szego spec {spec!r}: {e}", spec=spec)
        return SpectralMeasure.szego(coeffs, points)

    if head == "file":
        return _read_spectrum_file(body, spec)

    raise InvalidMeasure(f"unknown measure spec: {spec!r}", spec=spec)


def _parse_atoms(body, spec):
    pairs = []
    for item in body.split(","):
        parts = item.split(":")
        if len(parts) != 2:
            raise InvalidMeasure(f"atom {item!r} is not weight:value", spec=spec)
        try:
            weight, value = parse_number(parts[0]), parse_number(parts[1])
        except ValueError as e:
            raise InvalidMeasure(f"bad atom {item!r}: {e}", spec=spec)
        pairs.append((value, weight))

    total = math.fsum(weight for _, weight in pairs)
    if abs(total - 1.0) > SPEC_WEIGHT_TOLERANCE:
        raise InvalidMeasure(f"atom weights sum to {total!r}, expected 1", spec=spec)
    if total != 1.0:
        pairs = [(value, weight / total) for value, weight in pairs]
    return SpectralMeasure.from_atoms(pairs)


def _read_spectrum_file(path, spec):
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise InvalidMeasure(f"cannot read spectrum file {path!r}: {e}", spec=spec)

    values = []
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            values.append(parse_number(stripped))
        except ValueError as e:
            raise InvalidMeasure(f"{path}:{line_no}: {e}", spec=spec)

    logger.debug("Read %d eigenvalues from %s", len(values), path)
    return empirical_measure(values)
