import json

import numpy as np
import pytest

from hjbvi.dataset import DatasetFormatError, generate_dataset, load_dataset, save_dataset
from hjbvi.diffusion import ou_spec


@pytest.fixture(scope="module")
def small(ou, ou_reward):
    return generate_dataset(ou, ou_reward, 40, 3, 0.01, 7, alpha=1.0)


class TestGenerate:
    def test_shapes(self, small):
        assert (small.n, small.K, small.dim) == (40, 3, 1)
        assert small.x_obs.shape == (40, 3, 1)
        assert small.R.shape == (40, 3)

    def test_times_sorted_and_on_grid(self, small):
        assert np.all(np.diff(small.t_obs, axis=1) >= 0)
        np.testing.assert_allclose(small.t_obs * 100, np.rint(small.t_obs * 100), atol=1e-9)
        assert small.t_obs.min() >= 0 and small.t_obs.max() <= 1.0

    def test_terminal_is_exact(self, small):
        np.testing.assert_allclose(small.Y, 0.5 * small.xT[:, 0])

    def test_deterministic(self, ou, ou_reward, small):
        again = generate_dataset(ou, ou_reward, 40, 3, 0.01, 7, alpha=1.0)
        assert again.equals(small)

    def test_no_snapshots(self, ou, ou_reward):
        ds = generate_dataset(ou, ou_reward, 5, 0, 0.1, 0)
        assert ds.K == 0 and ds.R.shape == (5, 0)

    def test_records_view(self, small):
        rec = small.records[0]
        assert len(rec.obs) == 3
        assert rec.Y == small.Y[0]

    def test_rejects_unnormalized(self, ou):
        from hjbvi.rewards import ConstantReward, LinearTerminal, RewardSpec
        with pytest.raises(ValueError, match="normalized"):
            generate_dataset(ou, RewardSpec(ConstantReward(0.0), LinearTerminal(0.0)), 5, 1, 0.1, 0)


class TestFile:
    def test_roundtrip_bit_exact(self, small, tmp_path):
        path = tmp_path / "d.jsonl"
        save_dataset(small, path)
        assert load_dataset(path).equals(small)

    def test_header_first_line(self, small, tmp_path):
        path = tmp_path / "d.jsonl"
        save_dataset(small, path)
        header = json.loads(path.read_text().splitlines()[0])
        assert header["schema_version"] == 1 and header["n"] == 40 and header["K"] == 3

    def test_truncated_file(self, small, tmp_path):
        path = tmp_path / "d.jsonl"
        save_dataset(small, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(DatasetFormatError, match="truncated at record index 38"):
            load_dataset(path)

    def test_schema_mismatch(self, small, tmp_path):
        path = tmp_path / "d.jsonl"
        save_dataset(small, path)
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["schema_version"] = 99
        path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
        with pytest.raises(DatasetFormatError, match="schema_version"):
            load_dataset(path)

    def test_digest_mismatch(self, small, tmp_path, ou_reward):
        path = tmp_path / "d.jsonl"
        save_dataset(small, path)
        with pytest.raises(DatasetFormatError, match="diffusion_digest"):
            load_dataset(path, diffusion=ou_spec(2.0, 2.0, 1.0, init_var=1.0))
        assert load_dataset(path, reward=ou_reward).n == 40


def test_subset(small):
    sub = small.subset(10)
    assert sub.n == 10
    np.testing.assert_array_equal(sub.Y, small.Y[:10])


def test_roundtrip_without_snapshots(ou, ou_reward, tmp_path):
    ds = generate_dataset(ou, ou_reward, 6, 0, 0.1, 2)
    save_dataset(ds, tmp_path / "d.jsonl")
    assert load_dataset(tmp_path / "d.jsonl").equals(ds)
