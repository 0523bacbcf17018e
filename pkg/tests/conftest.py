import numpy as np
import pytest

from bodylatent.latent.affine import fit_affine
from bodylatent.latent.body import build_body
from bodylatent.latent.dataset import random_codes
from bodylatent.mesh import TriMesh


def random_soup(rng, n_faces=50, n_verts=30, scale=1.0):
    """Random triangles over a shared vertex pool, no repeated index within a face."""
    v = rng.normal(size=(n_verts, 3)) * scale
    f = np.stack([rng.choice(n_verts, 3, replace=False) for _ in range(n_faces)])
    return TriMesh(v, f)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


@pytest.fixture(scope="session")
def coarse_body():
    return build_body("coarse")


@pytest.fixture(scope="session")
def fine_body():
    return build_body("fine")


@pytest.fixture(scope="session")
def small_G(coarse_body):
    codes = random_codes(coarse_body, 60, 3)
    G, _ = fit_affine([coarse_body.decode(c) for c in codes], 12)
    return G


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion: str, part: str, ok: bool, detail: str):
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE, key=lambda c: (len(c), c)):
        parts = ACCEPTANCE[crit]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{p} {'ok' if ok else 'FAILED'}: {d}" for p, ok, d in parts)
        terminalreporter.write_line(f"criterion {crit}: {verdict}  [{detail}]")
