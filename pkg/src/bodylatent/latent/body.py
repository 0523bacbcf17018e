"""Procedural articulated body: capsule limbs on a 16-joint skeleton, posed by forward
kinematics and linear blend skinning, with bone length/thickness multipliers as shape."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import Decoder
from .rotation import rodrigues, rodrigues_vjp

# name, parent, rest offset from parent (m), length group in the shape vector
JOINTS = [
    ("pelvis", -1, (0.0, 0.95, 0.0), None),
    ("chest", 0, (0.0, 0.30, 0.0), 2),
    ("neck", 1, (0.0, 0.22, 0.0), 2),
    ("head", 2, (0.0, 0.10, 0.0), 8),
    ("l_shoulder", 1, (0.18, 0.17, 0.0), 9),
    ("l_elbow", 4, (0.28, 0.0, 0.0), 4),
    ("l_wrist", 5, (0.25, 0.0, 0.0), 4),
    ("r_shoulder", 1, (-0.18, 0.17, 0.0), 9),
    ("r_elbow", 7, (-0.28, 0.0, 0.0), 4),
    ("r_wrist", 8, (-0.25, 0.0, 0.0), 4),
    ("l_hip", 0, (0.10, -0.05, 0.0), 9),
    ("l_knee", 10, (0.0, -0.42, 0.0), 6),
    ("l_ankle", 11, (0.0, -0.40, 0.0), 6),
    ("r_hip", 0, (-0.10, -0.05, 0.0), 9),
    ("r_knee", 13, (0.0, -0.42, 0.0), 6),
    ("r_ankle", 14, (0.0, -0.40, 0.0), 6),
]

# owner joint, from joint, to joint (or None for a free end), free-end offset and its
# length group, cross-section radii, thickness group, blend with neighbouring joints
SEGMENTS = [
    (0, 0, 1, None, None, (0.14, 0.10), 3, True),
    (1, 1, 2, None, None, (0.16, 0.10), 3, True),
    (2, 2, 3, None, None, (0.05, 0.05), 8, True),
    (3, 3, None, (0.0, 0.20, 0.0), 8, (0.08, 0.095), 8, True),
    (1, 4, 7, None, None, (0.06, 0.06), 3, False),
    (4, 4, 5, None, None, (0.055, 0.045), 5, True),
    (5, 5, 6, None, None, (0.045, 0.035), 5, True),
    (6, 6, None, (0.16, 0.0, 0.0), 4, (0.02, 0.045), 5, True),
    (7, 7, 8, None, None, (0.055, 0.045), 5, True),
    (8, 8, 9, None, None, (0.045, 0.035), 5, True),
    (9, 9, None, (-0.16, 0.0, 0.0), 4, (0.02, 0.045), 5, True),
    (0, 10, 13, None, None, (0.09, 0.09), 3, False),
    (10, 10, 11, None, None, (0.075, 0.07), 7, True),
    (11, 11, 12, None, None, (0.055, 0.05), 7, True),
    (12, 12, None, (0.0, -0.05, 0.17), 6, (0.04, 0.035), 7, True),
    (13, 13, 14, None, None, (0.075, 0.07), 7, True),
    (14, 14, 15, None, None, (0.055, 0.05), 7, True),
    (15, 15, None, (0.0, -0.05, 0.17), 6, (0.04, 0.035), 7, True),
]

N_JOINTS = len(JOINTS)
D_SHAPE = 10
SHAPE_NAMES = (
    "height", "thickness", "torso_length", "torso_thickness", "arm_length",
    "arm_thickness", "leg_length", "leg_thickness", "head_size", "width",
)
RESOLUTIONS = {"fine": (10, 8), "coarse": (6, 2)}


def _mult(shape, group):
    """Global and group multipliers averaged: exactly 1 at unit shape, linear in shape."""
    if group is None:
        return 1.0
    return 0.5 * shape[0] + 0.5 * shape[group]


def _thick(shape, group):
    return 0.5 * shape[1] + 0.5 * shape[group]


def _smooth(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _frame(axis):
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(ref, axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


@dataclass(frozen=True)
class _Layout:
    seg: np.ndarray  # per-vertex segment index
    t: np.ndarray  # per-vertex axial parameter in [0, 1]
    local: np.ndarray  # per-vertex offset in rest-frame coordinates, scaled by thickness
    faces: np.ndarray


def _segment_ends(shape, joints, s):
    owner, a, b, end_off, end_group = s[:5]
    start = joints[a]
    stop = joints[b] if b is not None else joints[a] + np.asarray(end_off) * _mult(shape, end_group)
    return start, stop


def _layout(n_around, n_rings) -> _Layout:
    unit = np.ones(D_SHAPE)
    joints = _rest_joints(unit)
    seg_idx, ts, local, faces = [], [], [], []
    base = 0
    phi = 2.0 * np.pi * np.arange(n_around) / n_around
    for si, s in enumerate(SEGMENTS):
        start, stop = _segment_ends(unit, joints, s)
        axis = (stop - start) / np.linalg.norm(stop - start)
        e1, e2 = _frame(axis)
        r1, r2 = s[5]
        cap = 0.8 * 0.5 * (r1 + r2)
        ring = r1 * np.cos(phi)[:, None] * e1 + r2 * np.sin(phi)[:, None] * e2
        for t in np.linspace(0.0, 1.0, n_rings):
            seg_idx += [si] * n_around
            ts += [t] * n_around
            local.append(ring)
        seg_idx += [si, si]
        ts += [0.0, 1.0]
        local.append(np.stack([-cap * axis, cap * axis]))
        south = base + n_rings * n_around
        north = south + 1
        for r in range(n_rings - 1):
            for k in range(n_around):
                a0 = base + r * n_around + k
                a1 = base + r * n_around + (k + 1) % n_around
                b0 = a0 + n_around
                b1 = a1 + n_around
                faces += [(a0, a1, b1), (a0, b1, b0)]
        last = base + (n_rings - 1) * n_around
        for k in range(n_around):
            k1 = (k + 1) % n_around
            faces.append((south, base + k1, base + k))
            faces.append((north, last + k, last + k1))
        base = north + 1
    return _Layout(
        np.array(seg_idx), np.array(ts), np.concatenate(local), np.array(faces, dtype=np.int64)
    )


def _rest_joints(shape):
    pos = np.zeros((N_JOINTS, 3))
    for j, (_, parent, offset, group) in enumerate(JOINTS):
        off = np.asarray(offset, dtype=np.float64) * _mult(shape, group)
        pos[j] = off if parent < 0 else pos[parent] + off
    return pos


def _rest_vertices(shape, layout: _Layout):
    joints = _rest_joints(shape)
    out = np.empty((len(layout.t), 3))
    for si, s in enumerate(SEGMENTS):
        m = layout.seg == si
        start, stop = _segment_ends(shape, joints, s)
        t = layout.t[m][:, None]
        out[m] = (1.0 - t) * start + t * stop + _thick(shape, s[6]) * layout.local[m]
    return joints, out


def _skin_weights(layout: _Layout) -> np.ndarray:
    parents = [j[1] for j in JOINTS]
    w = np.zeros((len(layout.t), N_JOINTS))
    for si, s in enumerate(SEGMENTS):
        owner, a, b, blend = s[0], s[1], s[2], s[7]
        m = np.flatnonzero(layout.seg == si)
        t = layout.t[m]
        w_next = np.zeros_like(t)
        w_prev = np.zeros_like(t)
        if blend and b is not None and parents[b] == owner:
            w_next = 0.5 * _smooth((t - 0.75) / 0.25)
            w[m, b] += w_next
        if blend and a == owner and parents[owner] >= 0:
            w_prev = 0.5 * _smooth((0.25 - t) / 0.25)
            w[m, parents[owner]] += w_prev
        w[m, owner] += 1.0 - w_next - w_prev
    return w


class SkinnedBody(Decoder):
    """Articulated body decoder; codes are ``[pose (3 per joint), shape multipliers]``.

    Rest geometry is affine in the shape vector, stored as a constant part plus one basis
    column per shape coordinate, so zero pose with unit shape reproduces the template exactly.
    """

    def __init__(self, parents, joints_c, joints_basis, verts_c, verts_basis, weights, faces):
        self.parents = np.asarray(parents, dtype=np.int64)
        self.joints_c = np.asarray(joints_c, dtype=np.float64)
        self.joints_basis = np.asarray(joints_basis, dtype=np.float64)
        self.verts_c = np.asarray(verts_c, dtype=np.float64)
        self.verts_basis = np.asarray(verts_basis, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        self.n_joints = len(self.parents)
        if np.any(self.parents[1:] >= np.arange(1, self.n_joints)) or self.parents[0] != -1:
            raise ValueError("joints must be topologically ordered with the root first")
        self.d_pose = 3 * self.n_joints
        self.latent_dim = self.d_pose + self.verts_basis.shape[2]

    @property
    def n_vertices(self) -> int:
        return len(self.verts_c)

    @property
    def rest_code(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.d_pose), np.ones(self.d_shape)])

    def rest_geometry(self, shape):
        shape = np.atleast_2d(shape)
        b = len(shape)
        joints = self.joints_c + (self.joints_basis.reshape(-1, self.d_shape) @ shape.T).T.reshape(b, -1, 3)
        verts = self.verts_c + (self.verts_basis.reshape(-1, self.d_shape) @ shape.T).T.reshape(b, -1, 3)
        return joints, verts

    def _kinematics(self, codes):
        b = len(codes)
        theta = codes[:, : self.d_pose].reshape(b, self.n_joints, 3)
        rot = rodrigues(theta)
        joints, verts = self.rest_geometry(codes[:, self.d_pose :])
        eye = np.eye(3)
        rw = np.empty_like(rot)
        disp = np.zeros((b, self.n_joints, 3))
        rw[:, 0] = rot[:, 0]
        for k in range(1, self.n_joints):
            p = self.parents[k]
            rw[:, k] = rw[:, p] @ rot[:, k]
            bone = joints[:, k] - joints[:, p]
            disp[:, k] = disp[:, p] + np.einsum("bij,bj->bi", rw[:, p] - eye, bone)
        return theta, rot, rw, disp, joints, verts

    def _blend(self, rw, disp, joints):
        m = rw - np.eye(3)
        t = disp - np.einsum("bkij,bkj->bki", m, joints)
        b = len(rw)
        a_v = (self.weights @ m.reshape(b, self.n_joints, 9)).reshape(b, -1, 3, 3)
        b_v = self.weights @ t
        return m, a_v, b_v

    def decode_batch(self, codes):
        codes = self._check_codes(codes)
        _, _, rw, disp, joints, verts = self._kinematics(codes)
        _, a_v, b_v = self._blend(rw, disp, joints)
        return verts + (a_v @ verts[..., None])[..., 0] + b_v

    def vjp_batch(self, codes, cotangents):
        codes = self._check_codes(codes)
        g = self._check_cotangents(codes, cotangents)
        theta, rot, rw, disp, joints, verts = self._kinematics(codes)
        m, a_v, _ = self._blend(rw, disp, joints)
        b = len(codes)
        w = self.weights
        outer = (g[..., :, None] * verts[..., None, :]).reshape(b, -1, 9)
        d_m = (w.T @ outer).reshape(b, self.n_joints, 3, 3)
        d_t = w.T @ g
        # t_k = D_k - M_k J_k
        d_disp = d_t.copy()
        d_m -= np.einsum("bki,bkj->bkij", d_t, joints)
        d_joints = -np.einsum("bkji,bkj->bki", m, d_t)
        d_verts = g + (np.swapaxes(a_v, -1, -2) @ g[..., None])[..., 0]
        d_rw = d_m
        d_rot = np.empty_like(rot)
        eye = np.eye(3)
        for k in range(self.n_joints - 1, 0, -1):
            p = self.parents[k]
            d_rot[:, k] = np.swapaxes(rw[:, p], 1, 2) @ d_rw[:, k]
            bone = joints[:, k] - joints[:, p]
            d_rw[:, p] += d_rw[:, k] @ np.swapaxes(rot[:, k], 1, 2)
            d_rw[:, p] += np.einsum("bi,bj->bij", d_disp[:, k], bone)
            d_disp[:, p] += d_disp[:, k]
            pulled = np.einsum("bji,bj->bi", rw[:, p] - eye, d_disp[:, k])
            d_joints[:, k] += pulled
            d_joints[:, p] -= pulled
        d_rot[:, 0] = d_rw[:, 0]
        d_theta = rodrigues_vjp(theta, rot, d_rot).reshape(b, -1)
        d_shape = d_verts.reshape(b, -1) @ self.verts_basis.reshape(-1, self.d_shape)
        d_shape += d_joints.reshape(b, -1) @ self.joints_basis.reshape(-1, self.d_shape)
        return np.concatenate([d_theta, d_shape], axis=1)

    def to_arrays(self) -> dict:
        return {
            "parents": self.parents.astype(np.float64),
            "joints_c": self.joints_c,
            "joints_basis": self.joints_basis,
            "verts_c": self.verts_c,
            "verts_basis": self.verts_basis,
            "weights": self.weights,
            "faces": self.faces.astype(np.float64),
        }

    @classmethod
    def from_arrays(cls, arrays: dict) -> "SkinnedBody":
        return cls(
            arrays["parents"].astype(np.int64), arrays["joints_c"], arrays["joints_basis"],
            arrays["verts_c"], arrays["verts_basis"], arrays["weights"], arrays["faces"].astype(np.int64),
        )


def build_body(resolution: str = "fine", n_around: int | None = None, n_rings: int | None = None) -> SkinnedBody:
    """Construct the synthetic body, ~1.5k vertices at ``fine`` and ~250 at ``coarse``."""
    da, dr = RESOLUTIONS[resolution]
    layout = _layout(n_around or da, n_rings or dr)
    zero = np.zeros(D_SHAPE)
    j0, v0 = _rest_vertices(zero, layout)
    jb = np.empty(j0.shape + (D_SHAPE,))
    vb = np.empty(v0.shape + (D_SHAPE,))
    for k in range(D_SHAPE):
        e = np.zeros(D_SHAPE)
        e[k] = 1.0
        jk, vk = _rest_vertices(e, layout)
        jb[..., k] = jk - j0
        vb[..., k] = vk - v0
    parents = [j[1] for j in JOINTS]
    return SkinnedBody(parents, j0, jb, v0, vb, _skin_weights(layout), layout.faces)
