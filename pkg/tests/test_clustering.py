import math
import pytest
import numpy as np
from divdr.clustering import (
    CenterRegistry,
    alignment,
    assign,
    center_shift,
    diversity_report,
    gate_variance,
    inter_cluster_distance,
    intra_cluster_distance,
    kmeans_fit,
    lloyd,
    nearest_center,
)
from divdr.clustering.export import (
    export_aspace,
    pca_project,
    read_aspace,
    sidecar_path,
    write_centers,
)
from divdr.clustering.kmeans import kmeanspp_init
from divdr.lattice import Edge
from divdr.util import read_json


def _registry(*centers):
    return CenterRegistry(centers=np.array(centers, dtype=float), initialized=True)


def test_nearest_center_examples():
    assert nearest_center(np.array([0.0, 0.0]), _registry([1.0, 0.0], [0.0, 2.0])) == (0, 1.0)
    assert nearest_center(np.array([0.0, 0.0]), _registry([1.0, 0.0], [-1.0, 0.0]))[0] == 0
    index, distance = nearest_center(np.array([5.0, 5.0]), _registry([0.0, 0.0], [4.0, 4.0], [10.0, 0.0]))
    assert index == 1
    assert distance == pytest.approx(math.sqrt(2))


def test_nearest_center_rejections():
    with pytest.raises(ValueError, match="not initialized"):
        nearest_center(np.zeros(2), CenterRegistry())
    with pytest.raises(ValueError, match="dimension"):
        nearest_center(np.zeros(3), _registry([0.0, 0.0], [1.0, 1.0]))


def test_assign_matches_nearest_center(rng):
    registry = _registry(*rng.uniform(size=(3, 4)))
    points = rng.uniform(size=(20, 4))
    assignment = assign(points, registry)
    for point, index, distance in zip(points, assignment.index, assignment.distance):
        expected = nearest_center(point, registry)
        assert (index, distance) == pytest.approx(expected)
    assert sum(assignment.sizes(3)) == 20


def test_kmeans_examples():
    registry = kmeans_fit(np.array([0.0, 1.0, 10.0, 11.0]), K=2, seed=0, step=7)
    assert sorted(registry.centers[:, 0]) == [0.5, 10.5]
    assert registry.initialized
    assert registry.last_update_step == 7
    assert registry.inertia == pytest.approx(1.0)

    points = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 8.0]])
    np.testing.assert_allclose(kmeans_fit(points, K=1, seed=0).centers, [[2.0, 4.0]])
    full = kmeans_fit(points, K=3, seed=1)
    assert full.inertia == 0.0
    assert sorted(map(tuple, full.centers)) == sorted(map(tuple, points))


def test_kmeans_rejections():
    with pytest.raises(ValueError, match="cannot form"):
        kmeans_fit(np.zeros((2, 3)), K=3, seed=0)
    with pytest.raises(ValueError, match="distinct"):
        kmeans_fit(np.zeros((4, 3)), K=2, seed=0)
    with pytest.raises(ValueError, match="positive"):
        kmeans_fit(np.zeros((4, 3)), K=0, seed=0)


def test_kmeans_is_seeded():
    points = np.random.default_rng(2).uniform(size=(40, 5))
    first = kmeans_fit(points, K=3, seed=9)
    second = kmeans_fit(points, K=3, seed=9)
    assert first.digest() == second.digest()


def test_lloyd_objective_never_increases():
    rng = np.random.default_rng(21)
    for _ in range(100):
        count, dim, K = int(rng.integers(6, 40)), int(rng.integers(1, 6)), int(rng.integers(2, 5))
        points = rng.normal(size=(count, dim))
        result = lloyd(points, kmeanspp_init(points, K, rng))
        assert all(b <= a + 1e-9 * max(1.0, a) for a, b in zip(result.objectives, result.objectives[1:]))
        assert result.labels.shape == (count,)


def test_center_shift():
    previous = _registry([0.0, 0.0], [5.0, 0.0])
    current = _registry([0.0, 1.0], [5.0, 0.0])
    assert center_shift(previous, current) == pytest.approx(0.5)
    assert center_shift(CenterRegistry(), current) is None


def test_inter_cluster_distance_examples():
    assert inter_cluster_distance(_registry([0.0, 0.0], [3.0, 0.0])) == 3.0
    triangle = _registry([0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2])
    assert inter_cluster_distance(triangle) == pytest.approx(1.0)
    assert inter_cluster_distance(_registry([0.0, 0.0], [3.0, 0.0], [0.0, 4.0])) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        inter_cluster_distance(_registry([0.0, 0.0]))


def test_inter_cluster_distance_ignores_translation(rng):
    for _ in range(20):
        centers = rng.normal(size=(4, 5))
        shift = rng.normal(scale=10.0, size=5)
        moved = inter_cluster_distance(_registry(*(centers + shift)))
        assert moved == pytest.approx(inter_cluster_distance(_registry(*centers)), rel=1e-9)


def test_each_center_is_its_own_nearest(rng):
    for _ in range(50):
        centers = rng.normal(size=(int(rng.integers(2, 7)), 3))
        registry = _registry(*centers)
        for index, center in enumerate(centers):
            assert nearest_center(center, registry) == (index, 0.0)


def test_intra_cluster_distance_examples():
    assert intra_cluster_distance(np.array([[0.0, 0.0], [2.0, 0.0]]), [0, 0]) == 2.0
    assert intra_cluster_distance(np.array([[0.0], [1.0], [7.0]]), [0, 1, 2]) == 0.0
    points = np.array([[0.0], [2.0], [0.0], [1.0], [2.0]])
    assert intra_cluster_distance(points, [0, 0, 1, 1, 1]) == pytest.approx(5 / 3)


def test_gate_variance_examples():
    assert gate_variance(np.ones((5, 3))) == 0.0
    assert gate_variance(np.array([[0.0], [1.0]])) == pytest.approx(math.sqrt(0.5))
    spread = np.array([[0.0, 0.0], [0.2 * math.sqrt(2), 0.4 * math.sqrt(2)]])
    assert gate_variance(spread) == pytest.approx(0.3)
    with pytest.raises(ValueError, match="2 samples"):
        gate_variance(np.ones((1, 3)))


def test_alignment_examples():
    labels = np.array([0, 1, 1, 0, 1])
    assert alignment(labels, labels, K=2) == 1.0
    assert alignment(1 - labels, labels, K=2) == 1.0
    assert alignment([0, 1, 1, 1], [0, 0, 1, 1], K=2) == 0.75
    with pytest.raises(ValueError, match="exceeds"):
        alignment([0], [0], K=7)
    with pytest.raises(ValueError):
        alignment([0, 2], [0, 1], K=2)


@pytest.mark.parametrize("K", [3, 4, 5, 6])
def test_alignment_ignores_cluster_relabeling(rng, K):
    truth = rng.integers(0, K, size=60)
    clusters = np.where(rng.uniform(size=60) < 0.7, truth, rng.integers(0, K, size=60))
    score = alignment(clusters, truth, K)
    assert score >= 0.5
    for _ in range(5):
        relabel = rng.permutation(K)
        assert alignment(relabel[clusters], truth, K) == score


def test_diversity_report(rng):
    points = np.vstack([rng.normal(0.0, 0.01, size=(5, 3)), rng.normal(1.0, 0.01, size=(5, 3))])
    registry = kmeans_fit(points, K=2, seed=0)
    report = diversity_report(points, registry)
    assert report.inter == pytest.approx(math.sqrt(3), rel=0.05)
    assert report.intra < 0.1
    assert sorted(report.per_cluster_sizes) == [5, 5]
    assert report.gate_variance > 0.4


def test_registry_payload_round_trip(rng):
    registry = kmeans_fit(rng.uniform(size=(10, 4)), K=3, seed=0, step=50)
    restored = CenterRegistry.from_payload(registry.to_payload())
    assert restored.digest() == registry.digest()
    assert restored.last_update_step == 50
    assert restored.initialized


def test_registry_rejects_non_finite_centers():
    with pytest.raises(ValueError):
        _registry([np.inf, 0.0])


def test_pca_of_centered_plane_is_a_rotation(rng):
    points = rng.normal(size=(30, 2))
    points -= points.mean(axis=0)
    projection = pca_project(points)
    np.testing.assert_allclose(np.linalg.norm(projection, axis=1), np.linalg.norm(points, axis=1), atol=1e-10)
    np.testing.assert_allclose(projection.T @ projection, np.diag(np.diag(projection.T @ projection)), atol=1e-9)


def test_pca_pads_missing_axes():
    projection = pca_project(np.array([[0.0], [1.0], [3.0]]))
    assert projection.shape == (3, 2)
    np.testing.assert_array_equal(projection[:, 1], 0.0)
    with pytest.raises(ValueError):
        pca_project(np.ones((1, 3)))


def test_aspace_export_round_trip(tmp_path, rng):
    edges = [Edge(0, 0, "keep"), Edge(0, 0, "down"), Edge(0, 1, "up")]
    values = rng.uniform(size=(6, 3))
    path = str(tmp_path / "aspace_val_x.csv")
    export_aspace(path, values, range(6), [0, 1, 0, 1, 1, 0], edges, true_subset=[0, 0, 0, 1, 1, 1])
    table = read_aspace(path)
    assert table.values.tobytes() == values.tobytes()
    np.testing.assert_array_equal(table.true_subset, [0, 0, 0, 1, 1, 1])
    np.testing.assert_array_equal(table.assigned, [0, 1, 0, 1, 1, 0])
    sidecar = read_json(sidecar_path(path))
    assert sidecar["dimension"] == 3
    assert sidecar["edges"][2] == {"column": "g_2", "layer": 0, "scale": 1, "direction": "up"}

    unlabeled = str(tmp_path / "aspace_val_s.csv")
    export_aspace(unlabeled, values, range(6), [0] * 6, edges)
    assert read_aspace(unlabeled).true_subset is None

    with pytest.raises(ValueError, match="edges"):
        export_aspace(path, values, range(6), [0] * 6, edges[:2])


def test_write_centers(tmp_path):
    path = tmp_path / "centers.csv"
    write_centers(str(path), _registry([0.0, 0.5], [1.0, 0.25]))
    assert path.read_text().splitlines() == ["cluster,g_0,g_1", "0,0.0,0.5", "1,1.0,0.25"]
