"""Finite-difference verification of reverse-mode gradients.

``finite_diff_check`` is the independent oracle used throughout the test
suite: it compares the tape's gradient against central differences,
element by element, and reports the worst relative error. The named
component registry at the bottom backs the ``gradcheck`` CLI command.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import NumericError


@dataclass
class GradCheckReport:
    name: str
    n_elements: int
    max_rel_err: float
    worst_index: tuple
    eps: float
    tol: float

    @property
    def passed(self):
        return self.max_rel_err <= self.tol

    def summary(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"[{verdict}] {self.name}: max rel err {self.max_rel_err:.3e} "
            f"over {self.n_elements} elements (eps={self.eps:g}, tol={self.tol:g})"
        )


def finite_diff_check(f, x, eps=1e-5, tol=1e-4, name="gradcheck"):
    """Compare autodiff gradient of scalar ``f`` at ``x`` with central differences.

    ``x`` is an array or Tensor; ``f`` maps a Tensor to a scalar Tensor and
    must be evaluable repeatedly (the forward pass is re-run per element).
    Relative error is measured against max(1, |g_auto|, |g_fd|), so tiny
    gradients are judged on absolute error.
    """
    base = x.data.copy() if isinstance(x, tt.Tensor) else np.asarray(x, dtype=tt.get_dtype())
    leaf = tt.parameter(base.copy())
    out = f(leaf)
    if not np.all(np.isfinite(out.data)):
        raise NumericError(f"{name}: non-finite function value at base point")
    g_auto = tt.gradient(out, [leaf])[0]

    g_fd = np.zeros_like(base)
    flat = g_fd.reshape(-1)
    for i in range(base.size):
        bumped = base.copy().reshape(-1)
        bumped[i] += eps
        hi = f(tt.constant(bumped.reshape(base.shape))).item()
        bumped[i] -= 2 * eps
        lo = f(tt.constant(bumped.reshape(base.shape))).item()
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"{name}: non-finite function value during perturbation")
        flat[i] = (hi - lo) / (2.0 * eps)

    scale = np.maximum(1.0, np.maximum(np.abs(g_auto), np.abs(g_fd)))
    rel = np.abs(g_auto - g_fd) / scale
    worst = np.unravel_index(int(np.argmax(rel)), base.shape) if base.size else ()
    return GradCheckReport(
        name=name,
        n_elements=int(base.size),
        max_rel_err=float(rel.max()) if base.size else 0.0,
        worst_index=worst,
        eps=eps,
        tol=tol,
    )


# ---------------------------------------------------------------------------
# named components for the CLI


def _wrong_grad_square(x):
    # Deliberately broken backward rule; used as the checker's negative control.
    out = tt._result(x.data * x.data, "bad_square", (x,), lambda g: (g * x.data,))
    return tt.tsum(out)


def _op_cases(rng):
    a = rng.normal(size=(4, 5))
    b = rng.normal(size=(4, 5))
    m = rng.normal(size=(5, 3))
    cases = {
        "add": (lambda x: tt.tsum(tt.add(x, tt.constant(b))), a),
        "sub": (lambda x: tt.tsum(tt.sub(x, tt.constant(b))), a),
        "mul": (lambda x: tt.tsum(tt.mul(x, tt.constant(b))), a),
        "div": (lambda x: tt.tsum(tt.div(x, tt.constant(np.abs(b) + 0.5))), a),
        "scalar-mul": (lambda x: tt.tsum(tt.mul(x, 2.5)), a),
        "matmul": (lambda x: tt.tsum(tt.matmul(x, tt.constant(m))), a),
        "transpose": (lambda x: tt.tsum(tt.mul(tt.transpose(x), tt.constant(b.T.copy()))), a),
        "concat": (lambda x: tt.tsum(tt.mul(tt.concat([x, tt.constant(b)], 1), 1.5)), a),
        "slice": (lambda x: tt.tsum(x[1:3, ::2]), a),
        "sum-axis": (lambda x: tt.tsum(tt.mul(tt.tsum(x, 0), 3.0)), a),
        "mean-axis": (lambda x: tt.tsum(tt.mul(tt.tmean(x, 1), 2.0)), a),
        "expand": (lambda x: tt.tsum(tt.mul(tt.expand(tt.tsum(x, 1, keepdims=True), 1, 4), 0.7)), a),
        "softmax": (lambda x: tt.tsum(tt.mul(tt.softmax(x, 1), tt.constant(b))), a),
        "sigmoid": (lambda x: tt.tsum(tt.sigmoid(x)), a),
        "relu": (lambda x: tt.tsum(tt.relu(x)), a + 0.1),
        "exp": (lambda x: tt.tsum(tt.exp(x)), a),
        "log": (lambda x: tt.tsum(tt.log(x)), np.abs(a) + 0.5),
        "abs": (lambda x: tt.tsum(tt.absval(x)), a + 0.1),
        "powf": (lambda x: tt.tsum(tt.powf(x, 1.7)), np.abs(a) + 0.5),
        "clip": (lambda x: tt.tsum(tt.clip(x, -0.5, 0.5)), a),
        "layer_norm": (lambda x: tt.tsum(tt.mul(tt.layer_norm(x, 0), tt.constant(b))), a),
        "l2_norm": (lambda x: tt.tsum(tt.l2_norm(x, 0)), a),
        "l1_norm": (lambda x: tt.tsum(tt.l1_norm(x, 1)), a + 0.1),
        "cosine": (lambda x: tt.tsum(tt.cosine_similarity(x, tt.constant(b), 0)), a),
    }
    return cases


def run_op_suite(seed=0, eps=1e-5, tol=1e-4):
    """Gradient-check every primitive op on randomized inputs."""
    from .util import seeded_rng

    rng = seeded_rng(seed, "gradcheck-ops")
    reports = []
    for opname, (f, x) in _op_cases(rng).items():
        reports.append(finite_diff_check(f, x, eps=eps, tol=tol, name=f"op:{opname}"))
    return reports


def run_component(component, seed=0, eps=1e-5, tol=1e-4):
    """Run the finite-difference suite for a named op set or loss.

    Loss components check the gradient through the full network forward
    pass, with the assignment permutation frozen during perturbation.
    ``negative-control`` intentionally fails and exists to prove the
    checker can catch a wrong backward rule.
    """
    if component == "ops":
        return run_op_suite(seed, eps, tol)
    if component == "negative-control":
        from .util import seeded_rng

        x = seeded_rng(seed, "gradcheck-neg").normal(size=(3, 3))
        return [finite_diff_check(_wrong_grad_square, x, eps=eps, tol=tol, name="negative-control")]
    from .losses import loss_gradcheck_case

    loss_names = ("loss_diar", "loss_ext", "loss_dis", "loss_ort", "loss_spa", "loss_total")
    if component == "losses":
        return [
            finite_diff_check(*loss_gradcheck_case(n, seed), eps=eps, tol=tol, name=n)
            for n in loss_names
        ]
    if component in loss_names:
        f, x = loss_gradcheck_case(component, seed)
        return [finite_diff_check(f, x, eps=eps, tol=tol, name=component)]
    if component == "all":
        return run_component("ops", seed, eps, tol) + run_component("losses", seed, eps, tol)
    from .errors import DataError

    raise DataError(
        f"unknown gradcheck component {component!r}; choose from: ops, losses, "
        + ", ".join(loss_names)
        + ", all, negative-control"
    )
