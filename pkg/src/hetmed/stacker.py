"""Modified-covariate reparameterization: stacked per-arm design and penalty.

The interaction model ``R = phi0'S + phi1'S T + eps`` is refit as two
per-arm regressions with slopes ``phi_(1) = phi0 + phi1`` (intervention)
and ``phi_(-1) = phi0 - phi1`` (control), stacked block-diagonally.  The
penalty matrix pairs coordinates across arms so that an L1 penalty on
``D phi`` shrinks main effects and interactions jointly, leaving the two
intercepts free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_model import Dataset, ThetaParams, _frozen
from .errors import InvalidConfig, InvalidDimension, LengthMismatch

MEDIATOR = "mediator"
OUTCOME = "outcome"


@dataclass(frozen=True)
class StackedDesign:
    """Stacked two-arm regression problem.

    ``r_tilde`` holds the response with intervention rows first,
    ``s_tilde`` is the n x 2q block-diagonal design, ``d`` the
    2(q-1) x 2q penalty matrix, and ``arm_index[k]`` the original row id
    of stacked row k.
    """

    r_tilde: np.ndarray
    s_tilde: np.ndarray
    d: np.ndarray
    q: int
    arm_index: np.ndarray
    n1: int

    def __post_init__(self):
        object.__setattr__(self, "r_tilde", _frozen(self.r_tilde))
        object.__setattr__(self, "s_tilde", _frozen(self.s_tilde))
        object.__setattr__(self, "d", _frozen(self.d))
        arm = np.array(self.arm_index, dtype=int, copy=True)
        arm.setflags(write=False)
        object.__setattr__(self, "arm_index", arm)

    @property
    def n(self) -> int:
        return self.r_tilde.shape[0]


@dataclass(frozen=True)
class PhiPair:
    """Main-effect block phi0 and treatment-interaction block phi1."""

    phi0: np.ndarray
    phi1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi0", _frozen(self.phi0))
        object.__setattr__(self, "phi1", _frozen(self.phi1))
        if self.phi0.shape != self.phi1.shape:
            raise LengthMismatch("phi0 and phi1 must have equal length")


def build_penalty(q: int) -> np.ndarray:
    """Penalty matrix pairing non-intercept coordinates across arms.

    Row j of the top (q-1)-row block reads coordinate j+1 of the
    intervention slope plus the same coordinate of the control slope
    (twice the main effect); the bottom block reads the difference (twice
    the interaction).  The two intercepts span the null space.
    """
    if q < 2:
        raise InvalidDimension(f"penalty needs q >= 2, got {q}")
    eye = np.eye(q - 1)
    zero = np.zeros((q - 1, 1))
    top = np.hstack([zero, eye, zero, eye])
    bottom = np.hstack([zero, eye, zero, -eye])
    return np.vstack([top, bottom])


def is_paired_penalty(d_matrix: np.ndarray, q: int) -> bool:
    """True when ``d_matrix`` equals :func:`build_penalty`(q) exactly."""
    if q < 2 or d_matrix.shape != (2 * (q - 1), 2 * q):
        return False
    return np.array_equal(d_matrix, build_penalty(q))


def stack_model(d: Dataset, which: str) -> StackedDesign:
    """Build the stacked design for the mediator or outcome model.

    The mediator model regresses M on S = Z (q = p); the outcome model
    regresses Y on S = [Z, M] (q = p + 1) with the mediator as the last
    column so that its coefficients are the final coordinate of each phi
    block.  Original dataset order is preserved within each arm.
    """
    if which == MEDIATOR:
        s = d.z
        r = d.m
    elif which == OUTCOME:
        s = np.column_stack([d.z, d.m])
        r = d.y
    else:
        raise InvalidConfig(f"which must be {MEDIATOR!r} or {OUTCOME!r}, got {which!r}")

    q = s.shape[1]
    idx1 = np.flatnonzero(d.t == 1.0)
    idx0 = np.flatnonzero(d.t == -1.0)
    n1 = idx1.size
    n = d.n

    s_tilde = np.zeros((n, 2 * q))
    s_tilde[:n1, :q] = s[idx1]
    s_tilde[n1:, q:] = s[idx0]
    r_tilde = np.concatenate([r[idx1], r[idx0]])
    arm_index = np.concatenate([idx1, idx0])

    # Intercept-only models have nothing to penalize: empty row block.
    penalty = build_penalty(q) if q >= 2 else np.zeros((0, 2))
    return StackedDesign(
        r_tilde=r_tilde,
        s_tilde=s_tilde,
        d=penalty,
        q=q,
        arm_index=arm_index,
        n1=n1,
    )


def split_phi(phi: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Split a stacked coefficient vector into (intervention, control) slopes."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (2 * q,):
        raise LengthMismatch(f"expected a length-{2 * q} stacked vector, got {phi.shape}")
    return phi[:q], phi[q:]


def recover_phi(phi_case: np.ndarray, phi_ctrl: np.ndarray) -> PhiPair:
    """Recover main and interaction blocks from the per-arm slopes."""
    phi_case = np.asarray(phi_case, dtype=float)
    phi_ctrl = np.asarray(phi_ctrl, dtype=float)
    if phi_case.shape != phi_ctrl.shape or phi_case.ndim != 1:
        raise LengthMismatch("per-arm coefficient vectors must be 1-d of equal length")
    return PhiPair(phi0=(phi_case + phi_ctrl) / 2.0, phi1=(phi_case - phi_ctrl) / 2.0)


def phi_pair_from_stacked(phi: np.ndarray, q: int) -> PhiPair:
    case, ctrl = split_phi(phi, q)
    return recover_phi(case, ctrl)


def theta_from_fits(phi_mediator: PhiPair, phi_outcome: PhiPair) -> ThetaParams:
    """Assemble structural coefficients from the two fitted models.

    The outcome model's mediator coefficients sit in the last coordinate of
    each phi block (the mediator is the last column of its S).
    """
    p = phi_mediator.phi0.shape[0]
    if phi_outcome.phi0.shape[0] != p + 1:
        raise LengthMismatch(
            f"outcome blocks must have length p+1={p + 1}, got {phi_outcome.phi0.shape[0]}"
        )
    return ThetaParams(
        alpha0=phi_mediator.phi0,
        alpha1=phi_mediator.phi1,
        gamma0=phi_outcome.phi0[:p],
        gamma1=phi_outcome.phi1[:p],
        beta0=float(phi_outcome.phi0[p]),
        beta1=float(phi_outcome.phi1[p]),
    )
