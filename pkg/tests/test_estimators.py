import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from trajembed.data import SyntheticConfig, Trajectory, generate_synthetic
from trajembed.estimators import (
    TrajectoryEmbedder, TrajectoryTaskEstimator, check_network, check_trajectories, split_trajectories,
)


@pytest.fixture(scope="module")
def corpus():
    ds, net = generate_synthetic(SyntheticConfig(width=6, height=6, n_trajectories=50, n_zones=4, n_drivers=3), seed=4)
    return list(ds), net


def test_check_trajectories_errors(corpus):
    trajs, _ = corpus
    assert check_trajectories(trajs[:3]) == trajs[:3]
    with pytest.raises(TypeError):
        check_trajectories(trajs[0])
    with pytest.raises(TypeError):
        check_trajectories([trajs[0], "x"])
    with pytest.raises(TypeError):
        check_trajectories(5)
    with pytest.raises(ValueError):
        check_trajectories([])
    with pytest.raises(ValueError):
        check_trajectories(trajs[:1], min_points=len(trajs[0]) + 1)


def test_check_network(corpus):
    _, net = corpus
    assert check_network(None, "t2vec") is None
    assert check_network(net, "START") is net
    with pytest.raises(ValueError, match="road_network"):
        check_network(None, "START")
    with pytest.raises(TypeError):
        check_network({"nodes": []}, "t2vec")


def test_embedder_clone_and_params():
    est = TrajectoryEmbedder(method="DTC", dim=8, epochs=1)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin is not est


def test_embedder_fit_transform(corpus):
    trajs, net = corpus
    est = TrajectoryEmbedder(method="TrajCL", dim=8, epochs=1, batch_size=16, max_batches=2)
    with pytest.raises(NotFittedError):
        est.transform(trajs)
    emb = est.fit(trajs).transform(trajs[:7])
    assert emb.shape == (7, 8) and np.all(np.isfinite(emb))
    assert len(est.history_) == 1
    np.testing.assert_array_equal(est.fit_transform(trajs)[:7], emb)


def test_segment_method_without_network_raises(corpus):
    trajs, _ = corpus
    with pytest.raises(ValueError, match="road_network"):
        TrajectoryEmbedder(method="PreCLN", dim=8, epochs=0).fit(trajs)


def test_task_estimator_classification(corpus):
    trajs, net = corpus
    est = TrajectoryTaskEstimator(task="classification", dim=8, pretrain_epochs=1, finetune_epochs=2,
                                  batch_size=16)
    est.fit(trajs)
    pred = est.predict(trajs[:5])
    assert pred.shape == (5,)
    assert 0.0 <= est.score(trajs) <= 1.0


def test_task_estimator_eta_and_destination(corpus):
    trajs, net = corpus
    eta = TrajectoryTaskEstimator(task="eta", strategy="no-pretrain", dim=8, finetune_epochs=2, batch_size=16)
    eta.fit(trajs)
    assert eta.score(trajs) <= 0.0
    dest = TrajectoryTaskEstimator(task="destination", road_network=net, strategy="no-finetune", dim=8,
                                   pretrain_epochs=1, finetune_epochs=1, batch_size=16)
    assert 0.0 <= dest.fit(trajs).score(trajs) <= 1.0


def test_task_estimator_validation(corpus):
    trajs, _ = corpus
    with pytest.raises(ValueError):
        TrajectoryTaskEstimator(eval_fraction=1.5).fit(trajs)
    with pytest.raises(ValueError):
        TrajectoryTaskEstimator(strategy="partial").fit(trajs)


def test_split_trajectories_sizes(corpus):
    trajs, _ = corpus
    train, valid, test = split_trajectories(trajs)
    assert (len(train), len(valid), len(test)) == (40, 5, 5)
    assert max(t.start_time for t in train) <= min(t.start_time for t in valid)


def test_single_trajectory_type():
    t = Trajectory("x", np.array([0.0, 1e-3]), np.array([0.0, 0.0]), np.array([0.0, 15.0]))
    assert check_trajectories((t,)) == [t]
