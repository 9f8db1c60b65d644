import numpy as np
import pytest

from cofitune.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from cofitune.model import param_ids
from helpers import TINY, tiny_params


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_round_trip_is_bit_exact(tmp_path, dtype):
    p = tiny_params(3, dtype)
    path = save_checkpoint(p, tmp_path / "sub" / "m.coft")
    q = load_checkpoint(path)
    assert q.config == TINY
    for pid in param_ids(TINY):
        assert q[pid].dtype == p[pid].dtype
        assert q[pid].tobytes() == p[pid].tobytes()
    assert path.read_bytes().startswith(MAGIC)


def test_rejects_foreign_files(tmp_path):
    bad = tmp_path / "x.coft"
    bad.write_bytes(b"hello")
    with pytest.raises(ValueError):
        load_checkpoint(bad)
