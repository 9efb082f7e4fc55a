"""Diagnostic quantities: the log-Frobenius conditioning penalty and its
gradient, per-layer condition numbers, empirical local Lipschitz estimates,
robustness radii, and the Lipschitz/condition-number inequality check.

All operations are read-only on the network and take explicit seeds where
sampling is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .network import Network, backward, forward
from .tensor_ops import (
    INFINITE,
    as_tensor,
    frobenius_norm_sq,
    rank_tolerance,
    spectral_norm,
    svd,
)

_erf = np.vectorize(math.erf)


def _normal_cdf(z):
    return 0.5 * (1.0 + _erf(z / np.sqrt(2.0)))


# ------------------------------------------------------------ L_CC


def condition_constraint_loss(net: Network, tau: float) -> float:
    """Sum over parameterized layers of log(tau + ||W masked||_F^2).

    The log makes the penalty scale-aware: multiplying a layer by mu and the
    next by 1/mu (which leaves the network function unchanged) cannot game
    it the way a plain norm penalty can.
    """
    if tau <= 0.0:
        raise ValidationError(f"smoothing factor must be positive, got {tau}")
    total = 0.0
    for li in net.parameterized_indices():
        total += math.log(tau + frobenius_norm_sq(net.layers[li].effective_weight()))
    return total


def condition_constraint_grad(net: Network, tau: float) -> dict:
    """Analytic gradient of the conditioning penalty per layer.

    d/dW log(tau + ||W||_F^2) = 2 W / (tau + ||W||_F^2), with masked entries
    zeroed since they are not free parameters.
    """
    if tau <= 0.0:
        raise ValidationError(f"smoothing factor must be positive, got {tau}")
    grads = {}
    for li in net.parameterized_indices():
        weff = net.layers[li].effective_weight()
        grads[li] = (2.0 / (tau + frobenius_norm_sq(weff))) * weff
    return grads


# ------------------------------------------------------------ condition report


@dataclass
class LayerCondition:
    layer: int
    kind: str
    sigma_max: float
    sigma_min: float
    kappa: float
    rank: int


@dataclass
class ConditionReport:
    """Per-layer spectra on effective weights; kappa_max is the model summary."""

    layers: list
    kappa_max: float
    epoch: int | None = None


def condition_report(net: Network, epoch=None) -> ConditionReport:
    rows = []
    kmax = 0.0
    for li in net.parameterized_indices():
        m = net.layers[li].effective_weight()
        s = svd(m).singular_values
        smax = float(s[0])
        smin = float(s[-1])
        tol = rank_tolerance(m.shape, smax)
        rank = int((s > tol).sum())
        if smax == 0.0 or smin <= tol:
            kappa = INFINITE
        else:
            kappa = smax / smin
        rows.append(
            LayerCondition(
                layer=li, kind=net.layers[li].kind,
                sigma_max=smax, sigma_min=smin, kappa=kappa, rank=rank,
            )
        )
        kmax = max(kmax, kappa)
    return ConditionReport(layers=rows, kappa_max=kmax, epoch=epoch)


# ------------------------------------------------------------ Lipschitz


@dataclass
class LipschitzEstimate:
    """Lower-bound estimate of a local Lipschitz constant.

    value is the max difference quotient over `samples` random points in the
    dual ball of radius `radius` around `center`, together with the
    gradient-norm candidate at the center.
    """

    value: float
    q: int
    samples: int
    radius: float
    center: np.ndarray


def _margin_fn_setup(net, x, k):
    x = as_tensor(x)
    if x.shape == tuple(net.input_shape):
        xb = x[None]
    else:
        raise ValidationError(
            f"expected a single input of shape {tuple(net.input_shape)}, "
            f"got {x.shape}"
        )
    logits, cache = forward(net, xb)
    yhat = int(np.argmax(logits[0]))
    if not 0 <= k < net.class_count:
        raise ValidationError(f"class index {k} outside [0, {net.class_count})")
    if yhat == k:
        raise ValidationError(
            f"comparison class {k} equals the predicted class; margin is degenerate"
        )
    return x, xb, logits, cache, yhat


def local_lipschitz_estimate(
    net: Network, x, k: int, r: float, q: int, n: int, seed: int
) -> LipschitzEstimate:
    """Sampled lower bound on the local Lipschitz constant of g_yhat - g_k.

    Draws n points in the ball B_p(x, r) with p dual to q (q=1 pairs with
    the sup-norm ball, q=2 with the Euclidean ball), takes the largest
    difference quotient, and adds ||grad h(x)||_q as a candidate.  One
    normal draw of shape (n, d+1) feeds everything, so sample sets nest as
    n grows with a fixed seed.
    """
    if n < 1:
        raise ValidationError(f"sample count must be at least 1, got {n}")
    if r <= 0.0:
        raise ValidationError(f"radius must be positive, got {r}")
    if q not in (1, 2):
        raise ValidationError(f"norm index must be 1 or 2, got {q}")
    x, xb, logits, cache, yhat = _margin_fn_setup(net, x, k)
    h0 = logits[0, yhat] - logits[0, k]
    d = x.size
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n, d + 1))
    if q == 1:
        deltas = r * (2.0 * _normal_cdf(raw[:, :d]) - 1.0)
        norms = np.abs(deltas).max(axis=1)
    else:
        dirs = raw[:, :d]
        lens = np.linalg.norm(dirs, axis=1)
        lens[lens == 0.0] = 1.0
        radii = r * _normal_cdf(raw[:, d]) ** (1.0 / d)
        deltas = (dirs / lens[:, None]) * radii[:, None]
        norms = radii
    pts = (x.reshape(1, -1) + deltas).reshape((n,) + tuple(net.input_shape))
    plog, _ = forward(net, pts)
    hvals = plog[:, yhat] - plog[:, k]
    safe = norms > 0.0
    best = 0.0
    if safe.any():
        best = float((np.abs(hvals - h0)[safe] / norms[safe]).max())
    gl = np.zeros((1, net.class_count))
    gl[0, yhat] = 1.0
    gl[0, k] = -1.0
    g = backward(net, cache, gl).input.ravel()
    gnorm = float(np.abs(g).sum()) if q == 1 else float(np.sqrt(g @ g))
    return LipschitzEstimate(
        value=max(best, gnorm), q=q, samples=n, radius=r, center=x.copy()
    )


def robustness_radius(net: Network, x, r: float, q: int, n: int, seed: int) -> float:
    """min over k != yhat of margin_k / Lhat_k, capped at r.

    Because the Lipschitz estimate is a lower bound on the true constant,
    the returned radius is a diagnostic upper-bound flavor of the certified
    quantity, not a certificate.
    """
    x = as_tensor(x)
    logits, _ = forward(net, x[None])
    yhat = int(np.argmax(logits[0]))
    gamma = float(r)
    for k in range(net.class_count):
        if k == yhat:
            continue
        est = local_lipschitz_estimate(net, x, k, r, q, n, seed)
        margin = float(logits[0, yhat] - logits[0, k])
        cand = INFINITE if est.value == 0.0 else margin / est.value
        gamma = min(gamma, cand)
    return gamma


# ------------------------------------------------------------ inequality check


def _holder_inf_norm(layer) -> float:
    # worst-case sup-norm amplification: max l1 norm over incoming weights
    w = np.abs(layer.effective_weight())
    if layer.kind == "linear":
        return float(w.sum(axis=0).max())
    return float(w.sum(axis=1).max())


def check_eq7(net: Network, x, k: int, r: float, q: int, n: int, seed: int) -> dict:
    """Check Lhat / (2 sigma_max) <= kappa on every parameterized layer.

    Also logs the layer-product constants that bound the network Lipschitz
    constant (c1 from sup-norm propagation, c2 from Frobenius products) so
    the report can be compared across pruning levels.
    """
    est = local_lipschitz_estimate(net, x, k, r, q, n, seed)
    _, _, logits, _, yhat = _margin_fn_setup(net, x, k)
    rows = []
    all_hold = True
    for li in net.parameterized_indices():
        m = net.layers[li].effective_weight()
        smax = spectral_norm(m)
        s = svd(m).singular_values
        tol = rank_tolerance(m.shape, float(s[0]))
        kappa = INFINITE if s[0] == 0.0 or s[-1] <= tol else float(s[0] / s[-1])
        lhs = INFINITE if smax == 0.0 else est.value / (2.0 * smax)
        holds = bool(lhs <= kappa)
        all_hold = all_hold and holds
        rows.append(
            {"layer": li, "lhs": lhs, "kappa": kappa, "sigma_max": smax,
             "holds": holds}
        )
    pis = net.parameterized_indices()
    last = net.layers[pis[-1]]
    if last.kind == "linear":
        wdiff = last.effective_weight()[:, yhat] - last.effective_weight()[:, k]
        c1 = float(np.abs(wdiff).sum())
        c2 = float(np.sqrt(wdiff @ wdiff))
    else:
        c1 = c2 = INFINITE
    for li in pis[:-1]:
        c1 *= _holder_inf_norm(net.layers[li])
        c2 *= math.sqrt(frobenius_norm_sq(net.layers[li].effective_weight()))
    return {
        "lipschitz": est.value,
        "yhat": yhat,
        "k": k,
        "layers": rows,
        "c1": c1,
        "c2": c2,
        "holds": all_hold,
    }
