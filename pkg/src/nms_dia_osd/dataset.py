"""NMS-failure trajectory datasets and their binary container.

File layout (all little-endian)::

    magic     8 bytes   b"NDOTRAJ1"
    id_len    u32, then id_len bytes of UTF-8 code id
    n, t      u32, u32
    snr_db    f64
    count     u64
    records   count x { frame u64, trajectory n*(t+1) f32 row-major,
                        truth ceil(n/8) bytes, bits little-endian }
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"NDOTRAJ1"


class DatasetFormatError(ValueError):
    pass


@dataclass(eq=False)
class TrajectoryDataset:
    """Stacked failures: ``trajectories`` is ``(F, n, T+1)``, ``truth`` ``(F, n)``."""

    trajectories: np.ndarray
    truth: np.ndarray
    snr_db: float
    code_id: str
    frame_index: np.ndarray | None = None

    def __post_init__(self):
        self.trajectories = np.asarray(self.trajectories, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.uint8)
        if self.trajectories.ndim != 3 or self.truth.shape != self.trajectories.shape[:2]:
            raise ValueError("trajectories must be (F, n, T+1) with truth (F, n)")
        if self.frame_index is None:
            self.frame_index = np.arange(len(self.truth), dtype=np.int64)
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)

    def __len__(self):
        return self.truth.shape[0]

    @property
    def n(self):
        return self.truth.shape[1]

    @property
    def t(self):
        return self.trajectories.shape[2] - 1

    @property
    def received(self):
        return self.trajectories[:, :, 0]

    @property
    def final_app(self):
        return self.trajectories[:, :, -1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return TrajectoryDataset(self.trajectories[idx], self.truth[idx], self.snr_db, self.code_id,
                                 self.frame_index[idx])

    @classmethod
    def empty(cls, n, t, snr_db, code_id):
        return cls(np.zeros((0, n, t + 1)), np.zeros((0, n), dtype=np.uint8), snr_db, code_id)

    def to_bytes(self):
        cid = self.code_id.encode()
        parts = [MAGIC, struct.pack("<I", len(cid)), cid,
                 struct.pack("<IIdQ", self.n, self.t, float(self.snr_db), len(self))]
        traj = self.trajectories.astype("<f4")
        truth = np.packbits(self.truth, axis=1, bitorder="little")
        for i in range(len(self)):
            parts += [struct.pack("<Q", int(self.frame_index[i])), traj[i].tobytes(), truth[i].tobytes()]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data):
        if data[:8] != MAGIC:
            raise DatasetFormatError("bad magic header")
        pos = 8
        (id_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        code_id = data[pos:pos + id_len].decode()
        pos += id_len
        n, t, snr, count = struct.unpack_from("<IIdQ", data, pos)
        pos += struct.calcsize("<IIdQ")
        tbytes, bbytes = 4 * n * (t + 1), (n + 7) // 8
        rec = 8 + tbytes + bbytes
        if len(data) - pos != count * rec:
            raise DatasetFormatError(f"expected {count} records of {rec} bytes")
        raw = np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(count, rec)
        frames = raw[:, :8].copy().view("<u8").reshape(-1).astype(np.int64)
        traj = raw[:, 8:8 + tbytes].copy().view("<f4").reshape(count, n, t + 1)
        truth = np.unpackbits(raw[:, 8 + tbytes:], axis=1, count=n, bitorder="little")
        return cls(traj.astype(np.float64), truth, snr, code_id, frames)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def concat(datasets):
    datasets = list(datasets)
    if not datasets:
        raise ValueError("nothing to concatenate")
    first = datasets[0]
    return TrajectoryDataset(np.concatenate([d.trajectories for d in datasets]),
                             np.concatenate([d.truth for d in datasets]), first.snr_db, first.code_id,
                             np.concatenate([d.frame_index for d in datasets]))
