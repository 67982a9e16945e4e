import numpy as np
import pytest

from groundcap.util.container import (
    HEADER, MAGIC, FeatureContainer, flatten_tensors, unflatten_tensor,
)


class TestFeatureContainer:
    def test_empty_container_is_header_count_and_trailer(self):
        data = FeatureContainer().to_bytes()
        assert len(data) == 24
        assert data[:4] == MAGIC
        assert len(FeatureContainer.from_bytes(data)) == 0

    def test_written_values_read_back_bit_identical(self, tmp_path, rng):
        values = rng.normal(size=(100, 64)).astype(np.float32)
        container = FeatureContainer({'vid0/desc': values[:60], 'vid1/desc': values[60:]})
        path = str(tmp_path / 'features.gcap')
        container.write(path)
        read = FeatureContainer.read(path)
        assert list(read) == ['vid0/desc', 'vid1/desc']
        assert read['vid0/desc'].tobytes() == values[:60].tobytes()
        assert read['vid1/desc'].tobytes() == values[60:].tobytes()
        assert read.to_bytes() == container.to_bytes()

    def test_bad_magic(self):
        data = bytearray(FeatureContainer({'a': np.ones((2, 3))}).to_bytes())
        data[:4] = b'NOPE'
        with pytest.raises(ValueError, match='bad magic'):
            FeatureContainer.from_bytes(bytes(data))

    def test_truncated_payload_names_the_tensor(self):
        container = FeatureContainer({'short': np.ones((2, 4)), 'long': np.ones((3, 4))})
        data = container.to_bytes()
        payload_end = HEADER.size + 5 * 4 * 4
        damaged = data[:payload_end - 2 * 4 * 4] + data[payload_end:]
        with pytest.raises(ValueError, match="'long'"):
            FeatureContainer.from_bytes(damaged)

    def test_cut_file(self):
        data = FeatureContainer({'a': np.ones((2, 3))}).to_bytes()
        with pytest.raises(ValueError):
            FeatureContainer.from_bytes(data[:-3])
        with pytest.raises(ValueError):
            FeatureContainer.from_bytes(data[:10])

    def test_column_mismatch(self):
        container = FeatureContainer({'a': np.ones((2, 3))})
        with pytest.raises(ValueError):
            container['b'] = np.ones((2, 4))

    def test_missing_tensor(self):
        with pytest.raises(ValueError, match='nothing'):
            FeatureContainer()['nothing']

    def test_prefix_lookup(self):
        container = FeatureContainer({'svo/v1': [1.0, 2.0], 'svo/v2': [3.0, 4.0],
                                      'cls/v1': [5.0, 6.0]})
        assert sorted(container.with_prefix('svo/')) == ['v1', 'v2']


def test_flattened_tensors_keep_their_shape():
    tensors = {'W': np.arange(6.0).reshape(2, 3), 'b': np.arange(4.0)}
    container = FeatureContainer.from_bytes(flatten_tensors(tensors).to_bytes())
    np.testing.assert_array_equal(unflatten_tensor(container, 'W', (2, 3)), tensors['W'])
    with pytest.raises(ValueError):
        unflatten_tensor(container, 'b', (2, 3))
