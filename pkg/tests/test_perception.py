import numpy as np
import pytest
import torch

from admdp.perception import (EmptyCropError, FiLM, GraphEncoder, ImageEncoder, PointCloudEncoder,
                              TactileEncoder, build_tcp_graph, graph_log_bias, preprocess_pointcloud,
                              smooth_leaky_relu, tactile_dynamics, tactile_dynamics_torch)

F64 = torch.float64
BOX = (np.array([-1.0, -1.0, 0.0]), np.array([1.0, 1.0, 1.0]))


def test_crop_drops_outside_points(rng):
    inside = np.column_stack([rng.uniform(-0.9, 0.9, (50, 2)), rng.uniform(0.1, 0.9, 50), rng.random((50, 3))])
    outside = inside.copy()
    outside[:, 2] = 2.0
    out = preprocess_pointcloud(np.vstack([inside, outside]), BOX, 40, rng)
    assert out.shape == (40, 6)
    assert (out[:, 2] <= 1.0).all()


def test_crop_samples_with_replacement_when_short(rng):
    pts = np.column_stack([rng.uniform(-0.5, 0.5, (100, 3)) + [0, 0, 0.5], rng.random((100, 3))])
    out = preprocess_pointcloud(pts, BOX, 256, rng)
    assert out.shape == (256, 6)
    rows = {tuple(r) for r in pts}
    assert all(tuple(r) in rows for r in out)


def test_crop_empty_raises(rng):
    with pytest.raises(EmptyCropError):
        preprocess_pointcloud(np.full((5, 6), 5.0), BOX, 8, rng)


def test_image_encoder_zero_image_is_deterministic():
    enc = ImageEncoder(16).double()
    z = torch.zeros(1, 12, 12, 3, dtype=F64)
    a, b = enc(z), enc(z)
    assert a.shape == (1, 16) and torch.isfinite(a).all()
    assert torch.equal(a, b)


def test_pointcloud_permutation_invariance_exact(rng):
    enc = PointCloudEncoder(16, 16).double()
    pc = torch.as_tensor(rng.standard_normal((2, 50, 6)))
    perm = torch.as_tensor(rng.permutation(50))
    assert torch.equal(enc(pc), enc(pc[:, perm]))


def test_film_matches_direct_evaluation(rng):
    film = FiLM(5, 7).double()
    x, c = torch.as_tensor(rng.standard_normal((3, 7))), torch.as_tensor(rng.standard_normal((3, 5)))
    g = c @ film.gamma.weight.T + film.gamma.bias
    b = c @ film.beta.weight.T + film.beta.bias
    torch.testing.assert_close(film(x, c), g * x + b, rtol=0, atol=1e-12)


def test_tactile_dynamics_single_corner_taxel():
    frame = np.zeros((2, 4, 4))
    frame[1, 0, 0] = 2.0
    resultant, differential, centroids = tactile_dynamics(frame)
    assert resultant == 2.0
    assert differential == -2.0
    np.testing.assert_array_equal(centroids[1], [-1.0, -1.0])
    np.testing.assert_array_equal(centroids[0], [0.0, 0.0])


def test_tactile_dynamics_torch_matches_numpy(rng):
    t = rng.uniform(0, 2, (4, 2, 4, 4))
    t[0] = 0.0
    out = tactile_dynamics_torch(torch.as_tensor(t)).numpy()
    for i in range(4):
        r, d, c = tactile_dynamics(t[i])
        np.testing.assert_allclose(out[i], [r, d, *c[0], *c[1]], atol=1e-12)


def test_tactile_encoder_zero_frame():
    enc = TactileEncoder(16, hidden=16).double()
    z = torch.zeros(1, 2, 4, 4, dtype=F64)
    assert torch.equal(tactile_dynamics_torch(z), torch.zeros(1, 6, dtype=F64))
    assert torch.equal(enc(z), enc(z)) and torch.isfinite(enc(z)).all()


def test_tactile_log_scaling_is_nonlinear_and_monotone():
    t = torch.full((1, 2, 4, 4), 0.5, dtype=F64)
    a, b = torch.log1p(t), torch.log1p(3 * t)
    assert (b > a).all()
    assert not torch.allclose(b, 3 * a)
    enc = TactileEncoder(16, hidden=16).double()
    assert not torch.allclose(enc(t), enc(3 * t))


def test_graph_edge_weights():
    g = build_tcp_graph([[0, 0, 0], [0.3, 0.4, 0]], 0)
    assert g.edge_weights[0, 1] == pytest.approx(1 / (0.5 + 1e-6))
    assert g.edge_weights[0, 0] == 0.0
    np.testing.assert_array_equal(g.ego_flags, [1.0, 0.0])
    with pytest.raises(IndexError):
        build_tcp_graph([[0, 0, 0]], 1)


def test_graph_log_bias_matches_edge_weights(rng):
    pos = rng.uniform(-0.3, 0.3, (3, 3))
    lb = graph_log_bias(torch.as_tensor(pos)[None])[0].numpy()
    w = build_tcp_graph(pos, 0).edge_weights
    off = ~np.eye(3, dtype=bool)
    np.testing.assert_allclose(lb[off], np.log(w[off]), atol=1e-12)
    assert (np.diag(lb) == 0).all()


def test_graph_single_node_is_finite():
    enc = GraphEncoder(8, hidden=8).double()
    out = enc(torch.zeros(1, 1, 3, dtype=F64), torch.zeros(1, dtype=torch.long))
    assert torch.isfinite(out).all()


@pytest.mark.parametrize("n", [2, 3, 5])
def test_graph_non_ego_permutation_invariance(n, rng):
    enc = GraphEncoder(8, hidden=8).double()
    for _ in range(20):
        pos = rng.uniform(-0.3, 0.3, (n, 3))
        ego = int(rng.integers(n))
        others = [i for i in range(n) if i != ego]
        perm = list(rng.permutation(others))
        order = perm[:]
        order.insert(ego, ego)          # keep ego at its slot, shuffle the rest
        a = enc(torch.as_tensor(pos)[None], torch.tensor([ego]))
        b = enc(torch.as_tensor(pos[order])[None], torch.tensor([ego]))
        assert (a - b).abs().max().item() < 1e-10


def test_smooth_leaky_relu_limits():
    x = torch.tensor([-40.0, 40.0], dtype=F64)
    np.testing.assert_allclose(smooth_leaky_relu(x).numpy(), [0.2 * -40.0, 40.0], atol=1e-12)


def test_ego_cloud_is_relative_to_own_tcp(rng):
    from admdp.policy import AdmDpNet
    cloud = torch.as_tensor(rng.standard_normal((2, 5, 6)))
    q = torch.as_tensor(rng.standard_normal((2, 5)))
    out = AdmDpNet.ego_cloud({"cloud": cloud, "q": q})
    np.testing.assert_allclose(out[..., :3], cloud[..., :3] - q[:, None, :3])
    np.testing.assert_array_equal(out[..., 3:], cloud[..., 3:])
