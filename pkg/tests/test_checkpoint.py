"""
Pruebas del formato binario de checkpoints
"""

import json
import struct

import numpy as np
import pytest

from src.checkpoint import PAYLOAD_DTYPE, load_checkpoint, save_checkpoint
from src.config import CHECKPOINT_MAGIC
from src.exceptions import CheckpointError


@pytest.fixture
def tensors(rng):
    return {
        'patch_embed.proj.weight': rng.standard_normal((4, 3, 2, 2)).astype(np.float32),
        'norm.gamma': np.ones(4, dtype=np.float32),
        'scalar': np.array(3.5, dtype=np.float32),
        'optim.m.norm.gamma': rng.standard_normal(4).astype(np.float32),
    }


class TestRoundTrip:
    """Escritura y lectura exactas"""

    def test_bit_exact(self, tmp_path, tensors):
        path = save_checkpoint(tmp_path / 'a.eivt', tensors, step=12, config={'k': 1}, optim_step=12)
        ckpt = load_checkpoint(path)
        assert ckpt.step == 12 and ckpt.optim_step == 12
        assert ckpt.config == {'k': 1}
        assert list(ckpt.tensors) == list(tensors)
        for name, array in tensors.items():
            assert ckpt.tensors[name].dtype == PAYLOAD_DTYPE
            assert ckpt.tensors[name].shape == array.shape
            assert ckpt.tensors[name].tobytes() == array.tobytes()

    def test_split_model_and_optimizer_state(self, tmp_path, tensors):
        ckpt = load_checkpoint(save_checkpoint(tmp_path / 'b.eivt', tensors, step=0))
        assert set(ckpt.optim_state()) == {'optim.m.norm.gamma'}
        assert 'optim.m.norm.gamma' not in ckpt.model_state()

    def test_float64_stored_as_float32(self, tmp_path):
        value = np.array([1.0 + 1e-12])
        ckpt = load_checkpoint(save_checkpoint(tmp_path / 'c.eivt', {'x': value}, step=0))
        assert ckpt.tensors['x'][0] == np.float32(1.0)

    def test_layout(self, tmp_path, tensors):
        raw = save_checkpoint(tmp_path / 'd.eivt', tensors, step=3).read_bytes()
        assert raw[:8] == CHECKPOINT_MAGIC
        version, header_len = struct.unpack('<II', raw[8:16])
        header = json.loads(raw[16:16 + header_len])
        assert version == 1
        assert header['step'] == 3
        assert [t['name'] for t in header['tensors']] == list(tensors)


class TestCorruption:
    """Archivos inválidos"""

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / 'nope.eivt')

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'bad.eivt'
        path.write_bytes(b'NOTACKPT' + b'\x00' * 32)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path, tensors):
        path = save_checkpoint(tmp_path / 'e.eivt', tensors, step=0)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_header(self, tmp_path, tensors):
        path = save_checkpoint(tmp_path / 'f.eivt', tensors, step=0)
        path.write_bytes(path.read_bytes()[:30])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_unknown_version(self, tmp_path, tensors):
        path = save_checkpoint(tmp_path / 'g.eivt', tensors, step=0)
        raw = bytearray(path.read_bytes())
        raw[8:12] = struct.pack('<I', 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_duplicate_names(self, tmp_path):
        header = json.dumps({
            'step': 0, 'optim_step': 0, 'config': {},
            'tensors': [{'name': 'w', 'shape': [1], 'offset': 0},
                        {'name': 'w', 'shape': [1], 'offset': 4}],
        }).encode('utf-8')
        path = tmp_path / 'dup.eivt'
        path.write_bytes(CHECKPOINT_MAGIC + struct.pack('<II', 1, len(header)) + header
                         + np.zeros(2, dtype=PAYLOAD_DTYPE).tobytes())
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    @pytest.mark.parametrize("header_obj", [
        {'step': 0, 'optim_step': 0, 'config': {}},
        {'optim_step': 0, 'config': {}, 'tensors': []},
        {'step': 0, 'tensors': [{'name': 'w', 'offset': 0}]},
        [1, 2, 3],
    ])
    def test_incomplete_header(self, tmp_path, header_obj):
        header = json.dumps(header_obj).encode('utf-8')
        path = tmp_path / 'incompleto.eivt'
        path.write_bytes(CHECKPOINT_MAGIC + struct.pack('<II', 1, len(header)) + header
                         + np.zeros(1, dtype=PAYLOAD_DTYPE).tobytes())
        with pytest.raises(CheckpointError, match="header incompleto"):
            load_checkpoint(path)
