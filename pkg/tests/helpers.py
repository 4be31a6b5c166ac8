"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from crossreg import autodiff as ad


def finite_difference(loss_fn, param, step=1e-5):
    """Central finite differences of a scalar loss w.r.t. one parameter tensor."""
    fd = np.zeros_like(param.data)
    flat = param.data.ravel()
    fd_flat = fd.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = loss_fn().item()
        flat[i] = orig - step
        lo = loss_fn().item()
        flat[i] = orig
        fd_flat[i] = (hi - lo) / (2.0 * step)
    return fd


def gradcheck(loss_fn, params, step=1e-5, tol=1e-4):
    """Assert analytic grads of ``loss_fn`` match central differences.

    ``loss_fn`` must rebuild the graph from ``params`` on every call.
    Relative error uses max(|a|, |b|, 1e-6) as denominator.
    """
    ad.zero_grads(params)
    loss = loss_fn()
    ad.backward(loss)
    for p in params:
        assert p.grad is not None, "gradcheck: parameter missing grad"
        fd = finite_difference(loss_fn, p, step=step)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(p.grad)), 1e-6)
        rel = np.abs(fd - p.grad) / denom
        assert rel.max() < tol, f"gradient mismatch: rel err {rel.max():.3e}"
    ad.zero_grads(params)


def random_rotation(rng):
    """Uniform-ish random rotation matrix from QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q
