"""
Checkpoint Format
One file per checkpoint:

    b'FWCKPT01' | u32 LE format version | u32 LE header length | header JSON | payloads

The header is UTF-8 JSON with sorted keys. It holds the architecture tag,
the config snapshot, vocabulary size and digest, optimizer hyperparameters
and step, and an ordered list of entries (name, kind, shape, dtype). The
payloads follow in entry order as raw little-endian arrays. Encoding the
same checkpoint twice gives the same bytes.

Usage:
    from engine.checkpoint import Checkpoint

    Checkpoint(arch='film', config=cfg, vocab={...}, params=arrays).save(path)
    ckpt = Checkpoint.load(path)
"""

import os
import json
import struct
import logging
from dataclasses import dataclass, field

import numpy as np

from errors import CorruptRecord

logger = logging.getLogger(__name__)

MAGIC = b'FWCKPT01'
FORMAT_VERSION = 1

_KINDS = ('param', 'buffer', 'adam_m', 'adam_v')
_DTYPES = {'float32': '<f4', 'float64': '<f8'}


@dataclass
class Checkpoint:
    arch: str
    config: dict
    vocab: dict
    params: dict
    buffers: dict = field(default_factory=dict)
    optimizer: dict = None
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    # ── Encoding ──

    def _entries(self):
        groups = (('param', self.params), ('buffer', self.buffers),
                  ('adam_m', self.adam_m), ('adam_v', self.adam_v))
        for kind, arrays in groups:
            for name in sorted(arrays):
                yield name, kind, np.asarray(arrays[name])

    def to_bytes(self):
        entries = []
        payloads = []
        for name, kind, array in self._entries():
            dtype = str(array.dtype)
            if dtype not in _DTYPES:
                raise CorruptRecord(f"unsupported dtype {dtype} for {kind} {name}")
            entries.append({'name': name, 'kind': kind, 'shape': list(array.shape), 'dtype': dtype})
            payloads.append(np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes())

        header = {
            'arch': self.arch,
            'config': self.config,
            'vocab': self.vocab,
            'optimizer': self.optimizer,
            'meta': self.meta,
            'entries': entries,
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
        return b''.join([MAGIC, struct.pack('<II', FORMAT_VERSION, len(header_bytes)), header_bytes]
                        + payloads)

    @classmethod
    def from_bytes(cls, blob):
        if blob[:len(MAGIC)] != MAGIC:
            raise CorruptRecord('not a checkpoint file (bad magic)')
        offset = len(MAGIC)
        try:
            version, header_len = struct.unpack_from('<II', blob, offset)
        except struct.error:
            raise CorruptRecord('truncated checkpoint header')
        if version != FORMAT_VERSION:
            raise CorruptRecord(f"unsupported checkpoint version {version}")
        offset += 8
        try:
            header = json.loads(blob[offset:offset + header_len].decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CorruptRecord(f"unreadable checkpoint header ({e})")
        offset += header_len

        groups = {kind: {} for kind in _KINDS}
        for entry in header['entries']:
            dtype = np.dtype(_DTYPES[entry['dtype']])
            count = int(np.prod(entry['shape'], dtype=np.int64))
            nbytes = count * dtype.itemsize
            if offset + nbytes > len(blob):
                raise CorruptRecord(f"truncated payload for {entry['kind']} {entry['name']}")
            array = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
            groups[entry['kind']][entry['name']] = array.reshape(entry['shape']).astype(entry['dtype'])
            offset += nbytes
        if offset != len(blob):
            raise CorruptRecord(f"{len(blob) - offset} trailing bytes after payloads")

        return cls(arch=header['arch'], config=header['config'], vocab=header['vocab'],
                   params=groups['param'], buffers=groups['buffer'], optimizer=header['optimizer'],
                   adam_m=groups['adam_m'], adam_v=groups['adam_v'], meta=header.get('meta', {}))

    # ── Files ──

    def save(self, path):
        blob = self.to_bytes()
        tmp = f"{path}.tmp"
        with open(tmp, 'wb') as f:
            f.write(blob)
        os.replace(tmp, path)
        logger.info(f"Checkpoint: wrote {path} ({len(self.params)} params, {len(blob):,} bytes)")
        return path

    @classmethod
    def load(cls, path):
        with open(path, 'rb') as f:
            blob = f.read()
        try:
            return cls.from_bytes(blob)
        except KeyError as e:
            raise CorruptRecord(f"{path}: checkpoint header missing {e}")
