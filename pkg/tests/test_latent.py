import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bodylatent import container
from bodylatent.latent import (
    AffineDecoder,
    DecoderError,
    LatentCode,
    MotionError,
    MotionStyle,
    PoseSequence,
    decode,
    fit_affine,
    generate_motion,
    make_dataset,
    sample_body,
    vjp,
)
from bodylatent.latent.dataset import make_sequences, random_codes, split_sequences
from bodylatent.latent.motion import MOTION_KINDS, max_speed_bound
from bodylatent.latent.rotation import rodrigues, rodrigues_vjp
from bodylatent.mesh import CorruptionSpec, TriMesh, tetrahedron

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def fd_jacobian_t(dec, v, w, h=1e-6):
    out = np.zeros(len(v))
    for k in range(len(v)):
        vp, vm = v.copy(), v.copy()
        vp[k] += h
        vm[k] -= h
        out[k] = np.sum((dec.decode_batch(vp[None])[0] - dec.decode_batch(vm[None])[0]) * w) / (2 * h)
    return out


def test_latent_code_wraps_and_validates():
    c = LatentCode([4.0, -0.5, np.pi], [1.0])
    assert c.pose[0] == pytest.approx(4.0 - 2 * np.pi)
    assert c.pose[1] == -0.5 and c.pose[2] == np.pi
    with pytest.raises(DecoderError):
        LatentCode([np.nan], [1.0])
    v = np.arange(5.0) / 10
    assert LatentCode.from_vector(v, 2) == LatentCode(v[:2], v[2:])


def test_rest_pose_reproduces_template(fine_body):
    body = fine_body
    t = decode(body, body.rest_code)
    _, rest = body.rest_geometry(np.ones(body.d_shape))
    assert t.vertices.tobytes() == rest[0].tobytes()
    np.testing.assert_array_equal(t.faces, body.faces)


def test_body_dimensions(fine_body, coarse_body):
    assert (fine_body.d_pose, fine_body.d_shape, fine_body.latent_dim) == (48, 10, 58)
    assert 1000 < fine_body.n_vertices < 2000 and 2000 < len(fine_body.faces) < 4000
    assert coarse_body.n_vertices < fine_body.n_vertices


def test_skin_weights_partition_of_unity(fine_body):
    w = fine_body.weights
    assert w.min() >= 0.0
    np.testing.assert_allclose(w.sum(1), 1.0, atol=1e-15)


def test_single_joint_rotation_closed_form(fine_body):
    body = fine_body
    joints, rest = body.rest_geometry(np.ones(body.d_shape))
    joints, rest = joints[0], rest[0]
    for k, around in ((6, 6), (5, 6)):
        # rotating joint k moves the vertices hanging off joint ``around`` rigidly about joint k
        code = body.rest_code.copy()
        code[3 * k + 2] = np.pi / 2
        out = body.decode(code).vertices
        mask = body.weights[:, around] == 1.0
        expected = joints[k] + (rest[mask] - joints[k]) @ RZ90.T
        np.testing.assert_allclose(out[mask], expected, atol=1e-12)


def test_decode_dimension_errors(coarse_body, small_G):
    with pytest.raises(DecoderError):
        coarse_body.decode(np.zeros(5))
    with pytest.raises(DecoderError):
        coarse_body.vjp(coarse_body.rest_code, np.zeros((3, 3)))
    with pytest.raises(DecoderError):
        small_G.decode_batch(np.zeros((2, small_G.latent_dim + 1)))


def test_body_vjp_finite_difference(coarse_body, fine_body):
    rng = np.random.default_rng(0)
    codes = random_codes(coarse_body, 20, 5)
    for body, cs in ((coarse_body, codes), (fine_body, codes[:2])):
        for v in cs:
            v = v + rng.normal(scale=0.05, size=v.shape)
            w = rng.normal(size=(body.n_vertices, 3))
            g = vjp(body, v, w)
            fd = fd_jacobian_t(body, v, w)
            assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4


def test_body_vjp_batch_matches_single(coarse_body):
    rng = np.random.default_rng(1)
    V = random_codes(coarse_body, 4, 2)
    W = rng.normal(size=(4, coarse_body.n_vertices, 3))
    batch = coarse_body.vjp_batch(V, W)
    for i in range(4):
        np.testing.assert_allclose(batch[i], coarse_body.vjp(V[i], W[i]), rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(coarse_body.vjp(V[0], np.zeros_like(W[0])), 0.0)


def test_rodrigues_vjp_near_zero():
    rng = np.random.default_rng(2)
    for theta in (np.zeros(3), np.array([1e-8, -2e-8, 0.0]), rng.normal(size=3)):
        g = rng.normal(size=(3, 3))
        got = rodrigues_vjp(theta, rodrigues(theta), g)
        h = 1e-6
        fd = np.array([
            np.sum((rodrigues(theta + h * e) - rodrigues(theta - h * e)) * g) / (2 * h) for e in np.eye(3)
        ])
        np.testing.assert_allclose(got, fd, rtol=1e-6, atol=1e-8)
    np.testing.assert_array_equal(rodrigues(np.zeros(3)), np.eye(3))


def test_affine_decoder_basics(small_G):
    G = small_G
    np.testing.assert_array_equal(G.decode(np.zeros(G.latent_dim)).vertices, G.mean.reshape(-1, 3))
    np.testing.assert_allclose(G.basis.T @ G.basis, np.eye(G.latent_dim), atol=1e-8)
    for k in (0, 5):
        e = G.vjp(np.zeros(G.latent_dim), G.basis[:, k].reshape(-1, 3))
        np.testing.assert_allclose(e, np.eye(G.latent_dim)[k], atol=1e-12)
    rng = np.random.default_rng(3)
    v = rng.normal(size=G.latent_dim)
    w = rng.normal(size=(G.n_vertices, 3))
    assert np.linalg.norm(G.vjp(v, w) - fd_jacobian_t(G, v, w)) / np.linalg.norm(G.vjp(v, w)) < 1e-4


def test_fit_affine_rank_one():
    t = tetrahedron()
    rng = np.random.default_rng(4)
    u = rng.normal(size=12)
    u /= np.linalg.norm(u)
    meshes = [t.with_vertices(t.vertices + (a * u).reshape(4, 3)) for a in rng.normal(size=20)]
    dec, ev = fit_affine(meshes, 1)
    assert abs(abs(dec.basis[:, 0] @ u) - 1.0) < 1e-10
    assert ev[0] == pytest.approx(1.0, abs=1e-10)


def test_fit_affine_error_non_increasing_and_full_rank():
    t = tetrahedron()
    rng = np.random.default_rng(5)
    meshes = [t.with_vertices(t.vertices + rng.normal(scale=0.1, size=(4, 3))) for _ in range(25)]
    X = np.stack([m.vertices.reshape(-1) for m in meshes])
    errs = []
    for m in range(1, 13):
        dec, _ = fit_affine(meshes, m)
        Z = (X - dec.mean) @ dec.basis
        errs.append(np.sum((dec.decode_batch(Z).reshape(len(X), -1) - X) ** 2))
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-8


def test_fit_affine_gram_path_and_errors(coarse_body):
    codes = random_codes(coarse_body, 30, 1)
    meshes = [coarse_body.decode(c) for c in codes]
    dec, ev = fit_affine(meshes, 10)
    assert dec.latent_dim == 10 and np.all(np.diff(ev) <= 0)
    np.testing.assert_allclose(dec.basis.T @ dec.basis, np.eye(10), atol=1e-8)
    with pytest.raises(DecoderError, match="insufficient"):
        fit_affine(meshes[:10], 10)
    with pytest.raises(DecoderError):
        fit_affine(meshes[:5] + [tetrahedron()], 2)


def test_decoder_container_round_trip(tmp_path, coarse_body, small_G):
    for dec in (coarse_body, small_G):
        container.save_decoder(dec, tmp_path / "d.bin")
        back = container.load_decoder(tmp_path / "d.bin")
        v = random_codes(coarse_body, 1, 0)[0] if dec is coarse_body else np.ones(dec.latent_dim)
        assert back.decode(v).vertices.tobytes() == dec.decode(v).vertices.tobytes()


# --- motions -----------------------------------------------------------------------


def test_zero_amplitude_constant():
    seq = generate_motion(MotionStyle("wave", 20, seed=3, amplitude=0.0))
    assert np.all(seq.codes == seq.codes[0])


def test_motion_deterministic():
    a = generate_motion(MotionStyle("squat", 40, seed=9))
    b = generate_motion(MotionStyle("squat", 40, seed=9))
    assert a.codes.tobytes() == b.codes.tobytes()
    assert not np.array_equal(a.codes, generate_motion(MotionStyle("squat", 40, seed=10)).codes)


def chord_deviation(codes):
    t = np.linspace(0, 1, len(codes))[:, None]
    chord = codes[0] + t * (codes[-1] - codes[0])
    return np.linalg.norm(codes - chord, axis=1).max()


def test_swing_deviates_from_chord():
    assert chord_deviation(generate_motion(MotionStyle("swing", 30, seed=0)).codes) > 0.1


@pytest.mark.parametrize("kind", MOTION_KINDS)
def test_every_style_curved(kind):
    for seed in range(5):
        assert chord_deviation(generate_motion(MotionStyle(kind, 30, seed=seed)).codes) > 0.0


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(MOTION_KINDS), st.integers(0, 2**31))
def test_frame_steps_bounded(kind, seed):
    style = MotionStyle(kind, 60, seed=seed)
    steps = np.abs(np.diff(generate_motion(style).codes, axis=0))
    assert steps.max() <= max_speed_bound(style) / style.frame_rate + 1e-12


def test_motion_errors():
    with pytest.raises(MotionError):
        generate_motion(MotionStyle("moonwalk"))
    with pytest.raises(MotionError):
        generate_motion(MotionStyle("swing", 2))
    with pytest.raises(MotionError):
        PoseSequence(np.zeros((1, 3)))


def test_sample_body_ranges():
    for seed in range(20):
        c = sample_body(seed)
        assert c.shape.min() >= 0.7 and c.shape.max() <= 1.3
        assert np.abs(c.pose).max() <= np.pi
        assert len(c.pose) == 48 and len(c.shape) == 10
    assert sample_body(4) == sample_body(4)


# --- datasets ----------------------------------------------------------------------


def test_split_exact():
    for n in (1, 7, 10, 33):
        mask = split_sequences(n, np.random.default_rng(n))
        assert mask.sum() == round(0.8 * n)


def test_dataset_split_and_scan(fine_body):
    data = make_dataset(100, CorruptionSpec(), seed=1, decoder=fine_body, subdivide_frac=0.0)
    splits = [s.split for s in data]
    assert splits.count("train") == 80 and splits.count("test") == 20
    by_seq = {}
    for s in data:
        by_seq.setdefault(s.sequence, set()).add(s.split)
    assert all(len(v) == 1 for v in by_seq.values())
    for s in data:
        assert s.raw.vertices.tobytes() == s.registered.vertices.tobytes()
        m = s.registered
        assert isinstance(m, TriMesh) and np.all(np.isfinite(m.vertices)) and m.faces.max() < m.n_vertices
        assert m.edge_lengths().max() < 0.5 * m.bbox_diag


def test_dataset_raw_variants(coarse_body):
    spec = CorruptionSpec(1, 0.05, 0.001, 0.02)
    a = make_dataset(12, spec, seed=2, decoder=coarse_body, subdivide_frac=0.5)
    b = make_dataset(12, spec, seed=2, decoder=coarse_body, subdivide_frac=0.5)
    assert all(x.raw.vertices.tobytes() == y.raw.vertices.tobytes() for x, y in zip(a, b))
    assert all(x.raw.n_faces != x.registered.n_faces for x in a)
    with pytest.raises(ValueError):
        make_dataset(0)


def test_make_sequences_deterministic():
    a = make_sequences(4, 3, duration=20)
    b = make_sequences(4, 3, duration=20)
    assert [s.kind for s in a] == list(MOTION_KINDS) + [MOTION_KINDS[0]]
    assert all(x.poses.codes.tobytes() == y.poses.codes.tobytes() for x, y in zip(a, b))
