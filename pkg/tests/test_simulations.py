import numpy as np
import pytest

from hyprec.errors import ConfigError
from hyprec.simulations import SCENARIOS, build_scenario, run_simulation


def test_scenario_graphs():
    s1, s2, s3 = (build_scenario(n) for n in SCENARIOS)
    assert s1.dataset.user_ids == list("ABCD") and s1.dataset.item_ids == list("1234")
    assert [sorted(t.tolist()) for t in s1.dataset.train] == [[0, 1], [0, 1], [2, 3], [2, 3]]
    assert s2.dataset.n_users == 6 and s2.dataset.n_items == 6
    assert s3.dataset.item_ids[-1] == "7"
    assert s3.item_groups.tolist() == [0, 0, 1, 1, 2, 2, -1]
    # item 7 is bought by everybody
    assert all(6 in t for t in s3.dataset.train)
    with pytest.raises(ConfigError):
        build_scenario("sim4")


@pytest.mark.parametrize("name", SCENARIOS)
def test_structure_over_seeds(name):
    passed = 0
    for seed in range(5):
        _, model, report = run_simulation(name, seed)
        model.embeddings.check()
        passed += report.passed
        if name == "sim3":
            assert report.shared_central is not None
        else:
            assert report.shared_central is None
    assert passed >= 4


def test_windowed_loss_non_increasing():
    # each epoch has only 8 to 18 triplets, so single-epoch means are noisy;
    # 10-epoch windows after epoch 3 must not rise by more than 5%
    for name in SCENARIOS:
        for seed in range(3):
            _, model, _ = run_simulation(name, seed)
            losses = np.array([e.mean_loss for e in model.training_log])[3:]
            windows = losses[: losses.size // 10 * 10].reshape(-1, 10).mean(axis=1)
            assert np.all(windows[1:] <= windows[:-1] * 1.05), (name, seed, windows)


def test_report_lines():
    _, _, report = run_simulation("sim3", 0, epochs=50)
    lines = report.lines()
    assert lines[0] == "scenario=sim3 seed=0"
    assert any(line.startswith("item7_poincare_radius=") for line in lines)
    assert lines[-1] in ("result=pass", "result=fail")
