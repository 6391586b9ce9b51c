"""Catalog of scalar activations with analytic metadata, plus label transforms."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import erf as _erf, expit as _expit

from .hermite import eval_scaled_hermite


@dataclass(frozen=True)
class ActivationSpec:
    """A named scalar function z -> sigma(z).

    derivative is a callable when analytic, or None (consumers fall back to
    central differences).  parity is one of 'odd', 'even', 'none'.
    pure_hermite_degree is set when the function IS a probabilists' Hermite
    polynomial of unit variance, enabling closed-form coefficients.
    """

    name: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    derivative: Optional[Callable[[np.ndarray], np.ndarray]]
    parity: str = "none"
    pure_hermite_degree: Optional[int] = None

    def __post_init__(self):
        if self.parity not in ("odd", "even", "none"):
            raise ValueError("parity must be 'odd', 'even' or 'none'")


@dataclass(frozen=True)
class LabelTransform:
    """Pointwise transform applied to teacher outputs: identity or square."""

    kind: str = "identity"

    def __post_init__(self):
        if self.kind not in ("identity", "square"):
            raise ValueError("kind must be 'identity' or 'square'")

    def apply(self, y):
        if self.kind == "square":
            return y * y
        return y


_HERMITE_NAME = re.compile(r"^hermite\((\d+)\)$|^hermite(\d+)$")


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_prime(z):
    # subgradient at 0 fixed to 0.5
    z = np.asarray(z, dtype=float)
    return np.where(z > 0, 1.0, 0.0) + 0.5 * (z == 0)


def _sigmoid_prime(z):
    s = _expit(z)
    return s * (1.0 - s)


def builtin(name: str) -> ActivationSpec:
    """Look up a builtin activation by name.

    Known names: linear, erf, relu, sigmoid, and hermite(k) (alias
    hermiteK, e.g. hermite3) for integer k >= 1.

    Raises
    ------
    KeyError
        For unknown names.
    """
    if name == "linear":
        # identically He_1, so the closed-form coefficient path applies
        return ActivationSpec(
            name="linear",
            evaluate=lambda z: np.asarray(z, dtype=float),
            derivative=lambda z: np.ones_like(np.asarray(z, dtype=float)),
            parity="odd",
            pure_hermite_degree=1,
        )
    if name == "erf":
        return ActivationSpec(
            name="erf",
            evaluate=lambda z: _erf(z),
            derivative=lambda z: 2.0 / np.sqrt(np.pi) * np.exp(-np.asarray(z, float) ** 2),
            parity="odd",
        )
    if name == "relu":
        return ActivationSpec(name="relu", evaluate=_relu, derivative=_relu_prime, parity="none")
    if name == "sigmoid":
        return ActivationSpec(
            name="sigmoid", evaluate=lambda z: _expit(z), derivative=_sigmoid_prime, parity="none"
        )
    m = _HERMITE_NAME.match(name)
    if m:
        k = int(m.group(1) or m.group(2))
        if k < 1:
            raise KeyError(f"hermite degree must be >= 1, got {name!r}")
        return ActivationSpec(
            name=name,
            evaluate=lambda z, k=k: eval_scaled_hermite(k, 1.0, z),
            derivative=lambda z, k=k: k * eval_scaled_hermite(k - 1, 1.0, z),
            parity="odd" if k % 2 else "even",
            pure_hermite_degree=k,
        )
    raise KeyError(f"unknown activation {name!r}")


def transform_teacher(spec: ActivationSpec, t: LabelTransform) -> ActivationSpec:
    """Compose a label transform with an activation, fixing up metadata."""
    if t.kind == "identity":
        return spec
    ev = spec.evaluate
    dv = spec.derivative
    sq_deriv = None
    if callable(dv):
        sq_deriv = lambda z: 2.0 * ev(z) * dv(z)
    return ActivationSpec(
        name=f"square({spec.name})",
        evaluate=lambda z: ev(z) ** 2,
        derivative=sq_deriv,
        # squaring an odd or even function gives an even one; unknown stays unknown
        parity="even" if spec.parity in ("odd", "even") else "none",
        pure_hermite_degree=None,
    )
