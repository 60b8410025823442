"""Point-wise material law: elasticity, strain-energy splits, fatigue.

Units
-----
User-facing material parameters use E in GPa, G_c in kJ/m^2 and lengths
in mm.  Internally every stress and energy density is in MPa (= N/mm^2 =
mJ/mm^3), so ``E`` is multiplied by 1000 and ``G_c`` is used as-is
(1 kJ/m^2 = 1 N/mm).  All functions below that take a
:class:`MaterialParams` return MPa.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

GPA_TO_MPA = 1000.0


class ConstitutiveError(ValueError):
    """Raised for inadmissible material parameters."""


class SplitKind(str, Enum):
    """Strain-energy decomposition used for the crack driving force."""

    ISOTROPIC = "iso"
    VOLDEV = "voldev"
    SPECTRAL = "spectral"
    NOTENSION = "notension"

    @classmethod
    def parse(cls, value: "SplitKind | str") -> "SplitKind":
        if isinstance(value, cls):
            return value
        aliases = {
            "isotropic": cls.ISOTROPIC,
            "none": cls.ISOTROPIC,
            "vol-dev": cls.VOLDEV,
            "amor": cls.VOLDEV,
            "miehe": cls.SPECTRAL,
            "no-tension": cls.NOTENSION,
            "freddi": cls.NOTENSION,
        }
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConstitutiveError(f"unknown split {value!r}; expected one of {names}") from None


_INCOMPRESSIBLE = 1e-8


def lame_constants(E: float, nu: float) -> tuple[float, float, float]:
    """Return ``(lambda, mu, K)`` for isotropic elasticity.

    The constants are the 3D ones (plane strain keeps them unchanged) and
    carry the units of ``E``.
    """
    if not E > 0:
        raise ConstitutiveError(f"Young's modulus must be positive, got {E}")
    if abs(1.0 - 2.0 * nu) <= _INCOMPRESSIBLE:
        raise ConstitutiveError(f"nu = {nu} is (nearly) incompressible; lambda and K are unbounded")
    if not -1.0 < nu < 0.5:
        raise ConstitutiveError(f"Poisson's ratio must lie in (-1, 0.5), got {nu}")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu, lam + 2.0 * mu / 3.0


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic elastic, phase-field and fatigue parameters.

    Parameters
    ----------
    E : float
        Young's modulus [GPa].
    nu : float
        Poisson's ratio.
    Gc : float
        Critical energy release rate [kJ/m^2 = N/mm].
    ell : float
        Phase-field length scale [mm].
    alpha_T : float, optional
        Fatigue threshold [MPa].  Defaults to ``Gc / (12 ell)``.
    """

    E: float
    nu: float
    Gc: float
    ell: float
    alpha_T: float | None = None
    lam: float = field(init=False, repr=False)
    mu: float = field(init=False, repr=False)
    K: float = field(init=False, repr=False)

    def __post_init__(self):
        lam, mu, K = lame_constants(self.E * GPA_TO_MPA, self.nu)
        if not self.Gc > 0:
            raise ConstitutiveError(f"Gc must be positive, got {self.Gc}")
        if not self.ell > 0:
            raise ConstitutiveError(f"ell must be positive, got {self.ell}")
        if self.alpha_T is None:
            object.__setattr__(self, "alpha_T", self.Gc / (12.0 * self.ell))
        elif not self.alpha_T > 0:
            raise ConstitutiveError(f"alpha_T must be positive, got {self.alpha_T}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "K", K)

    @property
    def E_mpa(self) -> float:
        return self.E * GPA_TO_MPA

    def plane_strain_matrix(self) -> np.ndarray:
        """Voigt stiffness ``D`` for ``[exx, eyy, gxy] -> [sxx, syy, sxy]`` (MPa)."""
        lam, mu = self.lam, self.mu
        return np.array(
            [
                [lam + 2 * mu, lam, 0.0],
                [lam, lam + 2 * mu, 0.0],
                [0.0, 0.0, mu],
            ]
        )


@dataclass
class QuadraturePointState:
    """Per-integration-point history, arrays of shape ``(n_elements, n_qp)``.

    ``alpha`` is the accumulated fatigue variable, ``history`` the running
    maximum of the active energy and ``psi_prev`` the active energy at the
    last committed increment.
    """

    alpha: np.ndarray
    history: np.ndarray
    psi_prev: np.ndarray

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> "QuadraturePointState":
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape))

    def copy(self) -> "QuadraturePointState":
        return QuadraturePointState(self.alpha.copy(), self.history.copy(), self.psi_prev.copy())


# ---------------------------------------------------------------------------
# Spectral decomposition
# ---------------------------------------------------------------------------


def _plane_principal(exx, eyy, exy):
    """Closed-form in-plane eigenpairs; returns (e_max, e_min, theta)."""
    centre = 0.5 * (exx + eyy)
    radius = np.hypot(0.5 * (exx - eyy), exy)
    theta = 0.5 * np.arctan2(2.0 * exy, exx - eyy)
    return centre + radius, centre - radius, theta


def principal_strains_plane(exx, eyy, exy) -> np.ndarray:
    """Sorted principal strains ``(..., 3)`` of a plane-strain tensor (ezz = 0).

    ``exy`` is the tensorial shear component (half the engineering shear).
    """
    e_max, e_min, _ = _plane_principal(np.asarray(exx, float), np.asarray(eyy, float), np.asarray(exy, float))
    zero = np.zeros_like(e_max)
    e1 = np.maximum(e_max, zero)
    e3 = np.minimum(e_min, zero)
    e2 = np.where(e_max < 0.0, e_max, np.where(e_min > 0.0, e_min, zero))
    return np.stack([e1, e2, e3], axis=-1)


def spectral_decompose(eps) -> tuple[np.ndarray, np.ndarray]:
    """Principal values (descending) and directions of symmetric 3x3 tensors.

    Parameters
    ----------
    eps : array_like, shape (..., 3, 3)

    Returns
    -------
    values : ndarray, shape (..., 3)
        ``e1 >= e2 >= e3``.
    vectors : ndarray, shape (..., 3, 3)
        ``vectors[..., :, I]`` is the direction of ``values[..., I]``.

    Tensors with vanishing out-of-plane shear use the closed-form in-plane
    solution plus the ``zz`` value; ties keep the order (in-plane major,
    in-plane minor, out-of-plane).  General tensors fall back to ``eigh``
    with the largest component of each direction made positive.
    """
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) tensors, got shape {eps.shape}")

    if np.all(eps[..., 0, 2] == 0.0) and np.all(eps[..., 1, 2] == 0.0):
        e_max, e_min, theta = _plane_principal(eps[..., 0, 0], eps[..., 1, 1], 0.5 * (eps[..., 0, 1] + eps[..., 1, 0]))
        c, s = np.cos(theta), np.sin(theta)
        zero, one = np.zeros_like(c), np.ones_like(c)
        vals = np.stack([e_max, e_min, eps[..., 2, 2]], axis=-1)
        vecs = np.stack(
            [
                np.stack([c, s, zero], axis=-1),
                np.stack([-s, c, zero], axis=-1),
                np.stack([zero, zero, one], axis=-1),
            ],
            axis=-1,
        )
    else:
        sym = 0.5 * (eps + np.swapaxes(eps, -1, -2))
        vals, vecs = np.linalg.eigh(sym)
        vals, vecs = vals[..., ::-1], vecs[..., ::-1]
        idx = np.argmax(np.abs(vecs), axis=-2)[..., None, :]
        sign = np.sign(np.take_along_axis(vecs, idx, axis=-2))
        vecs = vecs * np.where(sign == 0, 1.0, sign)

    order = np.argsort(-vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    vecs = np.take_along_axis(vecs, order[..., None, :], axis=-1)
    return vals, vecs


# ---------------------------------------------------------------------------
# Energy splits
# ---------------------------------------------------------------------------


def _pos(x):
    return np.maximum(x, 0.0)


def _neg(x):
    return np.minimum(x, 0.0)


def split_energy_principal(principal, params: MaterialParams, kind: SplitKind | str):
    """Active/passive undegraded energy from sorted principal strains.

    ``principal`` has shape ``(..., 3)`` with ``e1 >= e2 >= e3``.
    Returns ``(psi_plus, psi_minus)`` in MPa.
    """
    kind = SplitKind.parse(kind)
    p = np.asarray(principal, dtype=float)
    e1, e2, e3 = p[..., 0], p[..., 1], p[..., 2]
    lam, mu, K = params.lam, params.mu, params.K
    tr = e1 + e2 + e3
    sq = e1 * e1 + e2 * e2 + e3 * e3
    psi0 = 0.5 * lam * tr * tr + mu * sq

    if kind is SplitKind.ISOTROPIC:
        return psi0, np.zeros_like(psi0)

    if kind is SplitKind.VOLDEV:
        dev = sq - tr * tr / 3.0
        plus = 0.5 * K * _pos(tr) ** 2 + mu * dev
        minus = 0.5 * K * _neg(tr) ** 2
        return plus, minus

    if kind is SplitKind.SPECTRAL:
        plus = 0.5 * lam * _pos(tr) ** 2 + mu * (_pos(e1) ** 2 + _pos(e2) ** 2 + _pos(e3) ** 2)
        minus = 0.5 * lam * _neg(tr) ** 2 + mu * (_neg(e1) ** 2 + _neg(e2) ** 2 + _neg(e3) ** 2)
        return plus, minus

    return _no_tension(e1, e2, e3, psi0, params)


def _no_tension(e1, e2, e3, psi0, params: MaterialParams):
    E, nu, lam, mu = params.E_mpa, params.nu, params.lam, params.mu
    b1 = e3 > 0.0
    b2 = ~b1 & (e2 + nu * e3 > 0.0)
    b3 = ~b1 & ~b2 & ((1.0 - nu) * e1 + nu * (e2 + e3) > 0.0)
    b4 = ~(b1 | b2 | b3)

    plus = np.zeros_like(psi0)
    minus = np.zeros_like(psi0)

    plus = np.where(b1, psi0, plus)

    p2 = 0.5 * lam * (e1 + e2 + 2 * nu * e3) ** 2 + mu * ((e1 + nu * e3) ** 2 + (e2 + nu * e3) ** 2)
    plus = np.where(b2, p2, plus)
    minus = np.where(b2, 0.5 * E * e3 * e3, minus)

    # lam / (2 nu (1 - nu)), written so that nu = 0 stays finite
    c3 = E / (2.0 * (1.0 + nu) * (1.0 - 2.0 * nu) * (1.0 - nu))
    p3 = c3 * ((1.0 - nu) * e1 + nu * (e2 + e3)) ** 2
    m3 = E / (2.0 * (1.0 - nu * nu)) * (e2 * e2 + e3 * e3 + 2 * nu * e2 * e3)
    plus = np.where(b3, p3, plus)
    minus = np.where(b3, m3, minus)

    minus = np.where(b4, psi0, minus)
    return plus, minus


def split_energy(eps, params: MaterialParams, kind: SplitKind | str = SplitKind.NOTENSION):
    """Active and passive undegraded energy of strain tensors ``(..., 3, 3)``."""
    values, _ = spectral_decompose(eps)
    return split_energy_principal(values, params, kind)


def active_energy_plane(strain, params: MaterialParams, kind: SplitKind | str) -> np.ndarray:
    """Active energy for plane-strain Voigt strains ``[exx, eyy, gxy]`` (``(..., 3)``)."""
    strain = np.asarray(strain, dtype=float)
    principal = principal_strains_plane(strain[..., 0], strain[..., 1], 0.5 * strain[..., 2])
    plus, _ = split_energy_principal(principal, params, kind)
    return plus


def elastic_energy(eps, params: MaterialParams) -> np.ndarray:
    """Undegraded energy ``0.5 eps : C0 : eps`` of ``(..., 3, 3)`` tensors."""
    eps = np.asarray(eps, dtype=float)
    tr = np.trace(eps, axis1=-2, axis2=-1)
    return 0.5 * params.lam * tr * tr + params.mu * np.einsum("...ij,...ij->...", eps, eps)


def undegraded_stress(eps, params: MaterialParams) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    tr = np.trace(eps, axis1=-2, axis2=-1)
    return params.lam * tr[..., None, None] * np.eye(3) + 2.0 * params.mu * eps


def degraded_stress(eps, phi, params: MaterialParams) -> np.ndarray:
    """``(1 - phi)^2 C0 : eps``; the stiffness is degraded isotropically for every split."""
    phi = np.asarray(phi, dtype=float)
    g = (1.0 - phi) ** 2
    return g[..., None, None] * undegraded_stress(eps, params)


# ---------------------------------------------------------------------------
# Fatigue
# ---------------------------------------------------------------------------


def fatigue_degradation(alpha, alpha_T: float):
    """Asymptotic toughness degradation ``f(alpha)``.

    Equal to one up to the threshold, ``(2 alpha_T / (alpha + alpha_T))^2``
    beyond it.  Continuous and non-increasing, with values in ``(0, 1]``.
    """
    alpha = np.asarray(alpha, dtype=float)
    f = (2.0 * alpha_T / (alpha + alpha_T)) ** 2
    return np.where(alpha <= alpha_T, 1.0, f)


def accumulate_resolved(alpha_n, psi_prev, psi_now):
    """Add the positive part of the active-energy increment."""
    return np.asarray(alpha_n) + np.maximum(np.asarray(psi_now) - np.asarray(psi_prev), 0.0)


def accumulate_cla(alpha_n, psi_plus, n_cycles: float = 1.0, R: float = 0.0):
    """Constant-load accumulation over ``n_cycles`` cycles per increment.

    For ``R > 0`` only the fraction ``1 - R^2`` of the peak energy is
    cycled; ``R <= 0`` contributes the full peak energy.
    """
    if not n_cycles > 0:
        raise ValueError(f"cycles per increment must be positive, got {n_cycles}")
    if R < -1.0:
        raise ValueError(f"load ratio must be >= -1, got {R}")
    factor = 1.0 - R * R if R > 0 else 1.0
    return np.asarray(alpha_n) + n_cycles * np.asarray(psi_plus) * factor


def update_history(history, psi_plus):
    return np.maximum(history, psi_plus)
