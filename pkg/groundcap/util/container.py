"""
Binary feature container.

Layout (all integers little-endian u32, all floats little-endian float32):

    header    b'GCAP' | version | rows | cols                    16 bytes
    payload   rows x cols floats, row-major
    index     count, then per tensor: name length | name | row offset | rows
    trailer   byte length of the index

Named tensors are row ranges of the shared payload, so they all have
`cols` columns. Tensors of differing widths are stored flattened into a
single column (see `flatten_tensors`).
"""
import logging
import struct
from collections import OrderedDict

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b'GCAP'
VERSION = 1
HEADER = struct.Struct('<4sIII')
U32 = struct.Struct('<I')
FLOAT = np.dtype('<f4')


class FeatureContainer:
    """ Ordered mapping of tensor name -> (rows x cols) float32 matrix. """

    def __init__(self, tensors=None, cols=None):
        self.tensors = OrderedDict()
        self.cols = cols
        for name, value in (tensors or {}).items():
            self[name] = value

    def __setitem__(self, name, value):
        value = np.asarray(value, dtype=FLOAT)
        if value.ndim == 1:
            value = value.reshape(1, -1) if self.cols != 1 else value.reshape(-1, 1)
        if value.ndim != 2:
            raise ValueError('Tensor {!r} must be 2-D, got shape {}.'.format(name, value.shape))
        if self.cols is None:
            self.cols = value.shape[1]
        elif value.shape[1] != self.cols and value.shape[0] > 0:
            raise ValueError('Tensor {!r} has {} columns, container holds {}.'
                             .format(name, value.shape[1], self.cols))
        self.tensors[name] = value.reshape(-1, self.cols)

    def __getitem__(self, name):
        try:
            return self.tensors[name]
        except KeyError:
            raise ValueError('Container has no tensor named {!r}.'.format(name))

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def with_prefix(self, prefix):
        """ {suffix: tensor} for every tensor named prefix + suffix. """
        return {name[len(prefix):]: value for name, value in self.tensors.items()
                if name.startswith(prefix)}

    @property
    def rows(self):
        return sum(value.shape[0] for value in self.tensors.values())

    def to_bytes(self):
        cols = self.cols or 0
        parts = [HEADER.pack(MAGIC, VERSION, self.rows, cols)]
        index = [U32.pack(len(self.tensors))]
        offset = 0
        for name, value in self.tensors.items():
            parts.append(value.astype(FLOAT, copy=False).tobytes())
            encoded = name.encode('utf-8')
            index.append(U32.pack(len(encoded)) + encoded + U32.pack(offset) + U32.pack(value.shape[0]))
            offset += value.shape[0]
        index = b''.join(index)
        return b''.join(parts) + index + U32.pack(len(index))

    def write(self, path):
        with open(path, 'wb') as f:
            f.write(self.to_bytes())
        log.debug('Wrote %d tensors (%d rows) to %s.', len(self), self.rows, path)

    @classmethod
    def from_bytes(cls, data, source='<bytes>'):
        if len(data) < HEADER.size + 2 * U32.size:
            raise ValueError('{}: file too short to be a feature container.'.format(source))
        magic, version, rows, cols = HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise ValueError('{}: bad magic {!r}, expected {!r}.'.format(source, magic, MAGIC))
        if version != VERSION:
            raise ValueError('{}: unsupported container version {}.'.format(source, version))

        (index_length,) = U32.unpack_from(data, len(data) - U32.size)
        index_start = len(data) - U32.size - index_length
        if index_start < HEADER.size:
            raise ValueError('{}: index length {} exceeds the file.'.format(source, index_length))
        entries = _read_index(data[index_start:len(data) - U32.size], source)

        row_bytes = cols * FLOAT.itemsize
        present_rows = (index_start - HEADER.size) // row_bytes if row_bytes else rows
        for name, offset, count in entries:
            if offset + count > rows:
                raise ValueError('{}: tensor {!r} rows [{}, {}) exceed the declared {} rows.'
                                 .format(source, name, offset, offset + count, rows))
            if offset + count > present_rows:
                raise ValueError('{}: truncated payload, tensor {!r} needs rows [{}, {}) but '
                                 'only {} rows are present.'
                                 .format(source, name, offset, offset + count, present_rows))
        if index_start - HEADER.size != rows * row_bytes:
            raise ValueError('{}: payload holds {} bytes, header declares {}.'
                             .format(source, index_start - HEADER.size, rows * row_bytes))

        payload = np.frombuffer(data, dtype=FLOAT, count=rows * cols, offset=HEADER.size)
        payload = payload.reshape(rows, cols)
        container = cls(cols=cols if entries else None)
        previous_end = 0
        for name, offset, count in sorted(entries, key=lambda e: e[1]):
            if offset < previous_end:
                raise ValueError('{}: tensor {!r} overlaps another tensor.'.format(source, name))
            previous_end = offset + count
        for name, offset, count in entries:
            container.tensors[name] = payload[offset:offset + count].copy()
        return container

    @classmethod
    def read(cls, path):
        with open(path, 'rb') as f:
            return cls.from_bytes(f.read(), source=path)


def _read_index(data, source):
    (count,) = U32.unpack_from(data, 0)
    position = U32.size
    entries = []
    try:
        for _ in range(count):
            (length,) = U32.unpack_from(data, position)
            position += U32.size
            name = data[position:position + length].decode('utf-8')
            position += length
            offset, rows = struct.unpack_from('<II', data, position)
            position += 2 * U32.size
            entries.append((name, offset, rows))
    except (struct.error, UnicodeDecodeError) as e:
        raise ValueError('{}: corrupt tensor index ({}).'.format(source, e))
    if position != len(data):
        raise ValueError('{}: tensor index has {} trailing bytes.'
                         .format(source, len(data) - position))
    return entries


def flatten_tensors(tensors):
    """ Stores arbitrarily shaped arrays as single-column row ranges. """
    container = FeatureContainer(cols=1)
    for name, value in tensors.items():
        container[name] = np.asarray(value).reshape(-1, 1)
    return container


def unflatten_tensor(container, name, shape):
    flat = container[name].reshape(-1)
    if flat.size != int(np.prod(shape)):
        raise ValueError('Tensor {!r} holds {} values, expected shape {}.'
                         .format(name, flat.size, tuple(shape)))
    return flat.reshape(shape)
