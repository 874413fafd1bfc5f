import pytest

from gradsuite import CONFIGS, GROUPS, TOLERANCE, all_cases, worst_error


@pytest.mark.parametrize("group,name,case", all_cases(), ids=[f"{g}-{n}" for g, n, _ in all_cases()])
def test_gradient_matches_central_differences(group, name, case):
    assert worst_error(case, name) <= TOLERANCE


def test_every_component_family_is_covered():
    assert {"relu", "logdet", "softmax", "conv2d", "max_pool2d", "gather_rows"} <= set(GROUPS["primitive"])
    assert {"fc", "index", "fourier", "word2vec"} <= set(GROUPS["embedder"])
    assert {"rnn_vanilla", "rnn_lstm", "rnn_gru", "transformer_encoder", "transformer_decoder", "cnn_encoder",
            "cnn_decoder", "ode_encoder", "cde_encoder", "variational", "planar_flows"} <= set(GROUPS["codec"])
    assert {"mse", "mae", "cross_entropy", "distance", "infonce", "mec", "l1", "l2", "kl"} <= set(GROUPS["loss"])
    assert CONFIGS >= 20


def test_registered_primitives_all_checked():
    from trajembed.numerics.ops import PRIMITIVES
    assert set(PRIMITIVES) <= set(GROUPS["primitive"])

