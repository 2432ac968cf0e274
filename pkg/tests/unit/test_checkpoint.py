import io
import struct

import numpy as np
import pytest

from stockbot import checkpoint
from stockbot.errors import FormatError, InputNotFoundError
from stockbot.models import MODEL_KINDS, ModelKind, ModelSpec, build, forward


def tiny(kind=ModelKind.LSTM):
    return ModelSpec(kind=kind, past_history=6, hidden=8, ff_dim=8, heads=2, encoder_layers=1, lstm_layers=1)


class TestCheckpoint:

    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_restores_every_tensor_exactly(self, kind):
        state = build(tiny(kind))
        restored, _ = checkpoint.loads(checkpoint.dumps(state))
        assert restored.spec == state.spec
        assert list(restored.parameters) == list(state.parameters)
        for name, t in state.parameters.items():
            np.testing.assert_array_equal(restored.parameters[name].data, t.data)
        X = np.random.default_rng(0).standard_normal((2, 6, 1))
        np.testing.assert_array_equal(forward(restored, X).data, forward(state, X).data)

    def test_metadata_and_step_count_survive(self):
        state = build(tiny())
        state.step_count = 42
        meta = {"ticker": "AAPL", "norm": {"mean": 1.5, "std": 0.25, "source_range": [0, 10]}}
        restored, got = checkpoint.loads(checkpoint.dumps(state, meta))
        assert restored.step_count == 42
        assert got == meta

    def test_bytes_are_deterministic(self):
        assert checkpoint.dumps(build(tiny())) == checkpoint.dumps(build(tiny()))

    def test_layout_starts_with_magic_and_version(self):
        data = checkpoint.dumps(build(tiny()))
        assert data[:4] == b"STKB"
        version, header_len = struct.unpack("<HI", data[4:10])
        assert version == checkpoint.VERSION
        assert data[10:10 + header_len].startswith(b"{")

    def test_bad_magic(self):
        data = checkpoint.dumps(build(tiny()))
        with pytest.raises(FormatError, match="magic"):
            checkpoint.loads(b"XXXX" + data[4:])

    def test_unknown_version(self):
        data = bytearray(checkpoint.dumps(build(tiny())))
        data[4:6] = struct.pack("<H", 99)
        with pytest.raises(FormatError, match="version"):
            checkpoint.loads(bytes(data))

    def test_truncated(self):
        data = checkpoint.dumps(build(tiny()))
        with pytest.raises(FormatError, match="truncated"):
            checkpoint.loads(data[:-3])

    def test_trailing_bytes(self):
        data = checkpoint.dumps(build(tiny()))
        with pytest.raises(FormatError, match="trailing"):
            checkpoint.loads(data + b"\x00")

    def test_stream_api(self):
        buf = io.BytesIO()
        checkpoint.dump(build(tiny()), buf, {"k": 1})
        buf.seek(0)
        _, meta = checkpoint.load(buf)
        assert meta == {"k": 1}

    def test_save_and_load_file(self, tmp_path):
        path = checkpoint.save_checkpoint(tmp_path / "run" / "checkpoint.stkb", build(tiny()), {"a": 1})
        assert path.exists()
        assert not [p for p in path.parent.iterdir() if p != path]
        state, meta = checkpoint.load_checkpoint(path)
        assert meta == {"a": 1}
        assert state.spec.kind is ModelKind.LSTM

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputNotFoundError):
            checkpoint.load_checkpoint(tmp_path / "nope.stkb")
