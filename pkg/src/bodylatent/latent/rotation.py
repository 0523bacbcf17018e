"""Axis-angle rotations (Rodrigues formula) and their derivatives, batched over leading axes."""
import numpy as np

_SMALL = 1e-6


def skew(w):
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def rodrigues(theta):
    """Rotation matrices ``(..., 3, 3)`` from axis-angle vectors ``(..., 3)``.

    Exactly the identity for a zero vector.
    """
    theta = np.asarray(theta, dtype=np.float64)
    t2 = (theta**2).sum(-1)
    t = np.sqrt(t2)
    small = t < _SMALL
    safe = np.where(small, 1.0, t)
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / np.where(small, 1.0, t2))
    k = skew(theta)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def rodrigues_vjp(theta, R, g):
    """Pull back a matrix cotangent ``g`` (``dL/dR``) to ``dL/dtheta``.

    Uses dR/dtheta_i = (theta_i [theta]x + [theta x (I - R) e_i]x) R / |theta|^2, and the
    first-order expansion [e_i]x + ([e_i]x[theta]x + [theta]x[e_i]x) / 2 near zero.
    """
    theta = np.asarray(theta, dtype=np.float64)
    t2 = (theta**2).sum(-1)
    small = t2 < _SMALL**2
    out = np.zeros(theta.shape)
    eye = np.eye(3)
    k = skew(theta)
    for i in range(3):
        e = eye[i]
        ei = skew(np.broadcast_to(e, theta.shape))
        # (I - R) e_i is the i-th column of (I - R)
        col = (eye - R)[..., :, i]
        big = (theta[..., i, None, None] * k + skew(np.cross(theta, col))) @ R
        big = big / np.where(small, 1.0, t2)[..., None, None]
        near = ei + 0.5 * (ei @ k + k @ ei)
        d = np.where(small[..., None, None], near, big)
        out[..., i] = (d * g).sum((-1, -2))
    return out


def wrap_angle(x):
    """Map each entry to [-pi, pi]."""
    x = np.asarray(x, dtype=np.float64)
    wrapped = np.remainder(x + np.pi, 2.0 * np.pi) - np.pi
    # entries already in range pass through bit-exactly
    return np.where(np.abs(x) <= np.pi, x, wrapped)
